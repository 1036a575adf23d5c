from rest_framework import serializers

from kanscope.conf import kan_settings, read_config_file
from .optimizers import OPTIMIZERS
from .trainer import TrainConfig


class IntegerListField(serializers.Field):
    """Comma-separated integers, e.g. ``20,50,100``; empty means none."""

    def to_internal_value(self, data):
        if isinstance(data, (list, tuple)):
            items = data
        else:
            items = [part for part in str(data).split(',') if part.strip()]
        try:
            return [int(item) for item in items]
        except (TypeError, ValueError):
            raise serializers.ValidationError('Expected a comma-separated list of integers')

    def to_representation(self, value):
        return ','.join(str(v) for v in value)


class TrainConfigSerializer(serializers.Serializer):
    """Serializer for training run configuration."""

    steps = serializers.IntegerField(min_value=0, default=100)
    optimizer = serializers.ChoiceField(choices=sorted(OPTIMIZERS), default='adam')
    learning_rate = serializers.FloatField(min_value=0.0, required=False)
    lambda_l1 = serializers.FloatField(min_value=0.0, default=0.0)
    lambda_entropy = serializers.FloatField(min_value=0.0, default=0.0)
    grid_update_steps = IntegerListField(required=False)
    batch_size = serializers.IntegerField(min_value=1, required=False, allow_null=True)
    seed = serializers.IntegerField(default=0)
    history_size = serializers.IntegerField(min_value=1, default=10)

    def validate_grid_update_steps(self, value):
        if any(step < 0 for step in value):
            raise serializers.ValidationError('Grid update steps must be nonnegative')
        return value

    def create(self, validated_data):
        data = dict(validated_data)
        data.setdefault('learning_rate', kan_settings.LEARNING_RATE)
        return TrainConfig(**data)


def load_train_config(path=None, **overrides):
    """Validated ``TrainConfig`` from an optional config file plus overrides."""
    data = {key.lower(): value for key, value in read_config_file(path).items()} if path else {}
    data.update({key: value for key, value in overrides.items() if value is not None})
    serializer = TrainConfigSerializer(data=data)
    serializer.is_valid(raise_exception=True)
    return serializer.save()
