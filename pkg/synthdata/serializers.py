"""
Validation of the `synth` and `protocol` config sections.
"""

from rest_framework import serializers

from .specs import ProtocolConfig, SynthSpec


def _range_field(default):
    return serializers.ListField(
        child=serializers.IntegerField(min_value=1), min_length=2, max_length=2,
        default=list(default),
    )


class SynthSpecSerializer(serializers.Serializer):
    """
    Serializer for `SynthSpec`.

    Every count is at least 2 except `utterances_per_speaker` (at least 1);
    the two ranges must be ordered.
    """
    n_phones = serializers.IntegerField(min_value=2, default=20)
    n_speakers = serializers.IntegerField(min_value=2, default=16)
    n_emotions = serializers.IntegerField(min_value=2, default=4)
    utterances_per_speaker = serializers.IntegerField(min_value=1, default=24)
    phones_per_utterance = _range_field((8, 14))
    phone_duration_frames = _range_field((6, 14))
    sample_rate = serializers.IntegerField(min_value=1, default=8000)
    seed = serializers.IntegerField(min_value=0, default=0)
    n_eval_speakers = serializers.IntegerField(min_value=2, default=16)
    eval_utterances_per_speaker = serializers.IntegerField(min_value=1, default=40)
    noise_db = serializers.FloatField(max_value=0.0, default=-40.0)

    def _ordered(self, value):
        if value[0] > value[1]:
            raise serializers.ValidationError("Range minimum exceeds its maximum.")
        return tuple(value)

    def validate_phones_per_utterance(self, value):
        return self._ordered(value)

    def validate_phone_duration_frames(self, value):
        return self._ordered(value)

    def create(self, validated_data):
        return SynthSpec(**validated_data)


class ProtocolSerializer(serializers.Serializer):
    enroll_seconds = serializers.FloatField(min_value=0.01, default=30.0)
    test_frames = serializers.ListField(
        child=serializers.IntegerField(min_value=1), min_length=1, default=[20, 50, 100]
    )
    tests_per_speaker = serializers.IntegerField(min_value=1, default=20)
    seed = serializers.IntegerField(min_value=0, default=0)

    def validate_test_frames(self, value):
        if len(set(value)) != len(value):
            raise serializers.ValidationError("Test lengths must be distinct.")
        return tuple(value)

    def create(self, validated_data):
        return ProtocolConfig(**validated_data)
