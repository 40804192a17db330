import json
import logging
from pathlib import Path

from rest_framework import serializers as drf_serializers

from .container import load_tensor, write_tensor
from .exceptions import ConfigError, TensorIOError
from .models import Episode, FeatureStack, QueryItem, SupportItem
from .serializers import EpisodeManifestSerializer

logger = logging.getLogger(__name__)

MANIFEST_NAME = 'episode.json'


def _filename(role: str) -> str:
    return role.replace('[', '_').replace(']', '').replace('.', '_') + '.hptn'


def save_episode(episode: Episode, directory) -> Path:
    """Write every member tensor plus ``episode.json`` into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    tensors = {}

    def put(role, tensor):
        name = _filename(role)
        write_tensor(directory / name, tensor)
        tensors[role] = name

    for index, item in enumerate(episode.support):
        put(f'support[{index}].features.l3', item.features.l3)
        put(f'support[{index}].features.l4', item.features.l4)
        put(f'support[{index}].mask', item.mask)
    for index, item in enumerate(episode.query):
        put(f'query[{index}].features.l3', item.features.l3)
        put(f'query[{index}].features.l4', item.features.l4)
        if item.mask is not None:
            put(f'query[{index}].mask', item.mask)

    manifest = {
        'version': 1,
        'class_id': episode.class_id,
        'seed': int(episode.seed),
        'tensors': tensors,
    }
    path = directory / MANIFEST_NAME
    try:
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    except OSError as exc:
        raise TensorIOError(path, f"write failed: {exc.strerror or exc}") from exc
    logger.info("Saved episode %s (K=%d, T=%d) to %s",
                episode.class_id, episode.k_shots, episode.t_frames, directory)
    return path


def load_episode(directory) -> Episode:
    directory = Path(directory)
    path = directory / MANIFEST_NAME
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise TensorIOError(path, f"read failed: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc

    serializer = EpisodeManifestSerializer(data=raw)
    try:
        serializer.is_valid(raise_exception=True)
    except drf_serializers.ValidationError as exc:
        raise ConfigError(f"{path}: {exc.detail}") from exc
    manifest = serializer.validated_data
    roles = manifest['tensors']

    def stack(group, index):
        return FeatureStack(
            l3=load_tensor(directory / roles[f'{group}[{index}].features.l3'], kind='feature_map', level='l3'),
            l4=load_tensor(directory / roles[f'{group}[{index}].features.l4'], kind='feature_map', level='l4'),
        )

    def count(group):
        return len({role.split('.')[0] for role in roles if role.startswith(group)})

    support = [
        SupportItem(features=stack('support', index),
                    mask=load_tensor(directory / roles[f'support[{index}].mask'], kind='mask'))
        for index in range(count('support'))
    ]
    query = []
    for index in range(count('query')):
        mask_role = f'query[{index}].mask'
        mask = load_tensor(directory / roles[mask_role], kind='mask') if mask_role in roles else None
        query.append(QueryItem(features=stack('query', index), mask=mask))

    return Episode(support=support, query=query, class_id=manifest['class_id'], seed=manifest['seed'])
