import json
from pathlib import Path

from django.conf import settings
from rest_framework import serializers

from episodes.exceptions import TensorIOError
from episodes.models import U64_MAX
from prototypes.graph_attention import VALUE_FROM
from segmentation.training import DEFAULT_LR, MIN_LOSS_REDUCTION

from .exceptions import RunConfigError
from .models import RunConfig


class RunConfigSerializer(serializers.Serializer):
    k_shots = serializers.IntegerField(min_value=1, default=5)
    t_frames = serializers.IntegerField(min_value=1, default=5)
    n_prototypes = serializers.IntegerField(min_value=1, default=5)
    channels = serializers.IntegerField(min_value=1, default=256)
    in_channels = serializers.IntegerField(min_value=1, default=256)
    lambda_self = serializers.FloatField(min_value=0.0, default=0.8)
    lambda_co = serializers.FloatField(min_value=0.0, default=0.2)
    lambda_ce = serializers.FloatField(min_value=0.0, default=5.0)
    lambda_iou = serializers.FloatField(min_value=0.0, default=1.0)
    lambda_proto = serializers.FloatField(min_value=0.0, default=1.0)
    tau_fg = serializers.FloatField(min_value=0.0, max_value=1.0, default=0.5)
    seed = serializers.IntegerField(min_value=0, max_value=U64_MAX, default=lambda: settings.HPAN_SEED)
    l3_height = serializers.IntegerField(min_value=1, default=16)
    l3_width = serializers.IntegerField(min_value=1, default=28)
    image_height = serializers.IntegerField(min_value=1, default=32)
    image_width = serializers.IntegerField(min_value=1, default=56)
    blob_radius = serializers.IntegerField(min_value=1, default=6)
    separation = serializers.FloatField(min_value=0.0, default=10.0)
    noise = serializers.FloatField(min_value=0.0, default=1.0)
    use_pgam = serializers.BooleanField(default=True)
    use_self_attention = serializers.BooleanField(default=True)
    share_attention = serializers.BooleanField(default=False)
    baseline = serializers.BooleanField(default=False, write_only=True)
    value_from = serializers.ChoiceField(choices=VALUE_FROM, default='source')
    kmeans_restarts = serializers.IntegerField(min_value=1, default=10)
    steps = serializers.IntegerField(min_value=1, default=200)
    lr = serializers.FloatField(min_value=0.0, default=DEFAULT_LR)
    max_grad_norm = serializers.FloatField(min_value=0.0, allow_null=True, default=None)
    min_loss_reduction = serializers.FloatField(max_value=1.0, default=MIN_LOSS_REDUCTION)
    n_episodes = serializers.IntegerField(min_value=1, default=1)
    episode_dir = serializers.CharField(allow_null=True, default=None)
    output_dir = serializers.CharField(default=lambda: str(settings.HPAN_OUTPUT_DIR))

    def validate_episode_dir(self, value):
        if value is not None and not Path(value).is_dir():
            raise serializers.ValidationError(f"Episode directory {value} does not exist")
        return value

    def validate(self, attrs):
        if attrs.pop('baseline', False):
            attrs['use_pgam'] = False
            attrs['use_self_attention'] = False
        if attrs['image_height'] < attrs['l3_height'] or attrs['image_width'] < attrs['l3_width']:
            raise serializers.ValidationError("The image grid must be at least as large as the l3 grid")
        if attrs['n_prototypes'] * attrs['k_shots'] < 2:
            raise serializers.ValidationError("The prototype loss needs N_p * K >= 2")
        return attrs

    def create(self, validated_data):
        return RunConfig(**validated_data)


def read_config_file(path) -> dict:
    """A flat JSON object whose keys are RunConfig field names."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise TensorIOError(path, f"read failed: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise RunConfigError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise RunConfigError(f"{path} must hold a flat JSON object")
    unknown = sorted(set(data) - set(RunConfigSerializer().fields))
    if unknown:
        raise RunConfigError(f"Unknown config keys in {path}: {', '.join(unknown)}")
    return data


def load_run_config(path=None, **overrides) -> RunConfig:
    """File values first, then every override that is not None."""
    data = read_config_file(path) if path is not None else {}
    data.update({key: value for key, value in overrides.items() if value is not None})
    serializer = RunConfigSerializer(data=data)
    serializer.is_valid(raise_exception=True)
    return serializer.save()
