"""
Validation of the `stages` config section.
"""

from rest_framework import serializers

from networks.configs import COND_LING, COND_SPK

from .configs import (
    OPTIMIZER_CHOICES,
    STAGE_CHOICES,
    STAGE_PHONE,
    STAGE_SPEAKER,
    StageConfig,
)


class StageConfigSerializer(serializers.Serializer):
    """
    Serializer for `StageConfig`.

    Methods:
        validate: Conditioning rules per stage; the phone stage takes none
            and the speaker stage can only be conditioned on "ling".
        create: Returns a frozen `StageConfig`.
    """
    stage = serializers.ChoiceField(choices=STAGE_CHOICES)
    conditioning = serializers.ListField(
        child=serializers.ChoiceField(choices=[(COND_LING, COND_LING), (COND_SPK, COND_SPK)]),
        default=list,
    )
    epochs = serializers.IntegerField(min_value=0, default=8)
    batch_frames = serializers.IntegerField(min_value=1, default=256)
    lr = serializers.FloatField(min_value=0.0, default=1e-3)
    lr_decay = serializers.FloatField(min_value=0.0, max_value=1.0, default=0.9)
    optimizer = serializers.ChoiceField(choices=OPTIMIZER_CHOICES, default="adam")
    momentum = serializers.FloatField(min_value=0.0, max_value=1.0, default=0.9)
    seed = serializers.IntegerField(min_value=0, default=0)
    max_frames_per_epoch = serializers.IntegerField(min_value=0, default=0)
    upstream = serializers.DictField(child=serializers.CharField(), default=dict)

    def validate_conditioning(self, value):
        if len(set(value)) != len(value):
            raise serializers.ValidationError("Duplicate conditioning factor.")
        return tuple(c for c in (COND_LING, COND_SPK) if c in value)

    def validate(self, attrs):
        if attrs["stage"] == STAGE_PHONE and attrs["conditioning"]:
            raise serializers.ValidationError(
                {"conditioning": "The phone stage takes no conditional input."}
            )
        if attrs["stage"] == STAGE_SPEAKER and COND_SPK in attrs["conditioning"]:
            raise serializers.ValidationError(
                {"conditioning": "The speaker stage cannot condition on itself."}
            )
        return attrs

    def create(self, validated_data):
        return StageConfig(**validated_data)
