import json
import logging
from pathlib import Path

from rest_framework import serializers as drf_serializers

from episodes.container import load_tensor, write_tensor
from episodes.exceptions import ConfigError, TensorIOError

from .models import PrototypeSet
from .serializers import PrototypeManifestSerializer

logger = logging.getLogger(__name__)

MANIFEST_NAME = 'prototypes.json'


def save_prototypes(prototype_sets, directory) -> Path:
    """Write each set as ``<origin>.hptn`` and list them in ``prototypes.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for prototype_set in prototype_sets:
        name = f'{prototype_set.origin}.hptn'
        write_tensor(directory / name, prototype_set.prototypes)
        entries.append({
            'origin': prototype_set.origin,
            'n_per_unit': prototype_set.n_per_unit,
            'duplicated': prototype_set.duplicated,
            'file': name,
        })
    path = directory / MANIFEST_NAME
    try:
        path.write_text(json.dumps({'version': 1, 'sets': entries}, indent=2))
    except OSError as exc:
        raise TensorIOError(path, f"write failed: {exc.strerror or exc}") from exc
    logger.debug("Saved %d prototype sets to %s", len(entries), directory)
    return path


def load_prototypes(directory) -> dict:
    """Prototype sets keyed by origin."""
    directory = Path(directory)
    path = directory / MANIFEST_NAME
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise TensorIOError(path, f"read failed: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc

    serializer = PrototypeManifestSerializer(data=raw.get('sets', []), many=True)
    try:
        serializer.is_valid(raise_exception=True)
    except drf_serializers.ValidationError as exc:
        raise ConfigError(f"{path}: {exc.detail}") from exc
    return {
        entry['origin']: PrototypeSet(
            load_tensor(directory / entry['file'], kind='array'),
            origin=entry['origin'],
            n_per_unit=entry['n_per_unit'],
            duplicated=entry['duplicated'],
        )
        for entry in serializer.validated_data
    }
