"""
Validation of the `frames` section of an experiment config.
"""

from rest_framework import serializers

from .containers import WINDOW_CHOICES, WINDOW_HAMMING, FrameConfig


class FrameConfigSerializer(serializers.Serializer):
    """
    Serializer for `FrameConfig`.

    Fields:
        sample_rate_hz (int), frame_length_samples (int),
        frame_shift_samples (int), fft_size (int), n_mels (int),
        window (str), log_floor (float)

    Methods:
        validate_fft_size: Power of two.
        validate: Shift within frame, FFT covers the frame, mels fit the bins.
        create: Returns a frozen `FrameConfig`.
    """
    sample_rate_hz = serializers.IntegerField(min_value=1, default=8000)
    frame_length_samples = serializers.IntegerField(min_value=1, default=200)
    frame_shift_samples = serializers.IntegerField(min_value=1, default=80)
    fft_size = serializers.IntegerField(min_value=1, default=256)
    n_mels = serializers.IntegerField(min_value=1, default=40)
    window = serializers.ChoiceField(choices=WINDOW_CHOICES, default=WINDOW_HAMMING)
    log_floor = serializers.FloatField(default=1e-10)

    def validate_fft_size(self, value):
        if value & (value - 1):
            raise serializers.ValidationError("Must be a power of two.")
        return value

    def validate_log_floor(self, value):
        if not value > 0.0:
            raise serializers.ValidationError("Must be positive.")
        return value

    def validate(self, attrs):
        if attrs["frame_shift_samples"] > attrs["frame_length_samples"]:
            raise serializers.ValidationError(
                {"frame_shift_samples": "Shift cannot exceed the frame length."}
            )
        if attrs["fft_size"] < attrs["frame_length_samples"]:
            raise serializers.ValidationError(
                {"fft_size": "FFT size must be at least the frame length."}
            )
        if attrs["n_mels"] > attrs["fft_size"] // 2 + 1:
            raise serializers.ValidationError(
                {"n_mels": "More mel filters than FFT bins."}
            )
        return attrs

    def create(self, validated_data):
        return FrameConfig(**validated_data)
