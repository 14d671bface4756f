"""
Validation of the `recon` config section.
"""

from rest_framework import serializers

from cascade.configs import OPTIMIZER_CHOICES

from .configs import ReconConfig


class ReconConfigSerializer(serializers.Serializer):
    spec_dim = serializers.IntegerField(min_value=1, default=129)
    hidden_layers = serializers.IntegerField(min_value=0, default=2)
    hidden_units = serializers.IntegerField(min_value=1, default=256)
    epochs = serializers.IntegerField(min_value=0, default=20)
    batch_frames = serializers.IntegerField(min_value=1, default=256)
    lr = serializers.FloatField(min_value=0.0, default=1e-3)
    lr_decay = serializers.FloatField(min_value=0.0, max_value=1.0, default=0.95)
    optimizer = serializers.ChoiceField(choices=OPTIMIZER_CHOICES, default="adam")
    momentum = serializers.FloatField(min_value=0.0, max_value=1.0, default=0.9)
    seed = serializers.IntegerField(min_value=0, default=0)
    max_frames_per_epoch = serializers.IntegerField(min_value=0, default=0)
    griffin_lim_iterations = serializers.IntegerField(min_value=1, default=50)
    resynthesis_utterances = serializers.IntegerField(min_value=0, default=2)

    def create(self, validated_data):
        return ReconConfig(**validated_data)
