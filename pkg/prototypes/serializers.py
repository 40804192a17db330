from rest_framework import serializers

from .models import ORIGINS


class PrototypeManifestSerializer(serializers.Serializer):
    """Manifest entry of one stored prototype set: tensor file plus its origin tag."""

    origin = serializers.ChoiceField(choices=ORIGINS)
    n_per_unit = serializers.IntegerField(min_value=1)
    duplicated = serializers.BooleanField(default=False)
    file = serializers.CharField(max_length=255)

    def validate_file(self, value):
        if '/' in value or '\\' in value or value.startswith('.'):
            raise serializers.ValidationError(f"Tensor file {value!r} must sit inside the output directory")
        return value
