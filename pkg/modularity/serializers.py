from rest_framework import serializers

from kanscope.conf import kan_settings, read_config_file
from .functions import TestConfig


class TestConfigSerializer(serializers.Serializer):
    """Serializer for modularity test settings."""

    num_probe_points = serializers.IntegerField(min_value=1, required=False)
    fd_step = serializers.FloatField(required=False)
    threshold = serializers.FloatField(required=False)
    seed = serializers.IntegerField(default=0)

    def validate_fd_step(self, value):
        if not value > 0:
            raise serializers.ValidationError('Finite-difference step must be positive')
        return value

    def validate_threshold(self, value):
        if not 0 < value < 1:
            raise serializers.ValidationError('Threshold must lie strictly between 0 and 1')
        return value

    def create(self, validated_data):
        data = dict(validated_data)
        data.setdefault('num_probe_points', kan_settings.PROBE_POINTS)
        data.setdefault('fd_step', kan_settings.FD_STEP)
        data.setdefault('threshold', kan_settings.MODULARITY_THRESHOLD)
        return TestConfig(**data)


def load_test_config(path=None, **overrides):
    """Validated ``TestConfig`` from an optional config file plus overrides."""
    data = {key.lower(): value for key, value in read_config_file(path).items()} if path else {}
    data.update({key: value for key, value in overrides.items() if value is not None})
    serializer = TestConfigSerializer(data=data)
    serializer.is_valid(raise_exception=True)
    return serializer.save()
