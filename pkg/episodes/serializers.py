import re

from rest_framework import serializers

from .models import U64_MAX, SynthConfig

ROLE_PATTERN = re.compile(r'^(support|query)\[(\d+)\]\.(features\.l3|features\.l4|mask)$')


class SynthConfigSerializer(serializers.Serializer):
    k_shots = serializers.IntegerField(min_value=1, default=5)
    t_frames = serializers.IntegerField(min_value=1, default=5)
    channels = serializers.IntegerField(min_value=1, default=256)
    l3_height = serializers.IntegerField(min_value=1, default=16)
    l3_width = serializers.IntegerField(min_value=1, default=28)
    image_height = serializers.IntegerField(min_value=1, default=32)
    image_width = serializers.IntegerField(min_value=1, default=56)
    n_blobs = serializers.IntegerField(min_value=1, default=1)
    blob_radius = serializers.IntegerField(min_value=1, default=6)
    separation = serializers.FloatField(min_value=0.0, default=10.0)
    noise = serializers.FloatField(min_value=0.0, default=1.0)
    n_distractors = serializers.IntegerField(min_value=1, default=3)
    motion = serializers.FloatField(default=1.0)
    class_id = serializers.CharField(max_length=200, default='synthetic')

    def validate(self, attrs):
        if attrs['image_height'] < attrs['l3_height'] or attrs['image_width'] < attrs['l3_width']:
            raise serializers.ValidationError("The image grid must be at least as large as the l3 grid")
        diameter = 2 * attrs['blob_radius'] + 1
        if diameter > min(attrs['image_height'], attrs['image_width']):
            raise serializers.ValidationError({'blob_radius': "Blob larger than the image grid"})
        return attrs

    def create(self, validated_data):
        return SynthConfig(**validated_data)


class EpisodeManifestSerializer(serializers.Serializer):
    """Validates ``episode.json``: member tensor files by role, class id and seed."""

    version = serializers.IntegerField(default=1)
    class_id = serializers.CharField(max_length=200)
    seed = serializers.IntegerField(min_value=0, max_value=U64_MAX)
    tensors = serializers.DictField(child=serializers.CharField(max_length=255))

    def validate_version(self, value):
        if value != 1:
            raise serializers.ValidationError(f"Unsupported manifest version {value}")
        return value

    def validate_tensors(self, value):
        for role, filename in value.items():
            if not ROLE_PATTERN.match(role):
                raise serializers.ValidationError(f"Unknown tensor role {role!r}")
            if '/' in filename or '\\' in filename or filename.startswith('.'):
                raise serializers.ValidationError(f"Tensor file {filename!r} must sit inside the episode directory")
        return value

    def validate(self, attrs):
        roles = attrs['tensors']
        for group in ('support', 'query'):
            indices = sorted({int(ROLE_PATTERN.match(role).group(2))
                              for role in roles if role.startswith(group)})
            if not indices:
                raise serializers.ValidationError(f"The manifest lists no {group} tensors")
            if indices != list(range(len(indices))):
                raise serializers.ValidationError(f"{group} indices must run 0..{len(indices) - 1}")
            required = ('features.l3', 'features.l4', 'mask') if group == 'support' else ('features.l3', 'features.l4')
            for index in indices:
                for member in required:
                    if f'{group}[{index}].{member}' not in roles:
                        raise serializers.ValidationError(f"Missing role {group}[{index}].{member}")
        return attrs

