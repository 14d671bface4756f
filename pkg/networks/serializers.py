"""
Validation of the `phone_net`, `ctdnn` and `aer_net` config sections.

Input widths and class counts (`fbank_dim`, `ling_dim`, `n_speakers`, ...)
are normally filled in from the corpus by the pipeline, but may be given
explicitly.
"""

from rest_framework import serializers

from .configs import SPLICE_OFFSETS, AerNetConfig, CtdnnConfig, PhoneNetConfig


def _offsets_field(default):
    return serializers.ListField(
        child=serializers.IntegerField(), min_length=1, default=list(default)
    )


def _pair_field(default):
    return serializers.ListField(
        child=serializers.IntegerField(min_value=1), min_length=2, max_length=2,
        default=list(default),
    )


def _check_increasing(value):
    if any(b <= a for a, b in zip(value, value[1:])):
        raise serializers.ValidationError("Offsets must be strictly increasing.")
    return tuple(value)


class PhoneNetConfigSerializer(serializers.Serializer):
    """
    Serializer for `PhoneNetConfig`.

    Methods:
        validate_context_offsets: Strictly increasing.
        create: Returns a frozen `PhoneNetConfig`.
    """
    n_phones = serializers.IntegerField(min_value=2, default=20)
    fbank_dim = serializers.IntegerField(min_value=1, default=40)
    hidden_layers = serializers.IntegerField(min_value=1, default=4)
    hidden_units = serializers.IntegerField(min_value=1, default=128)
    context_offsets = _offsets_field(SPLICE_OFFSETS)

    def validate_context_offsets(self, value):
        return _check_increasing(value)

    def create(self, validated_data):
        return PhoneNetConfig(**validated_data)


class CtdnnConfigSerializer(serializers.Serializer):
    """
    Serializer for `CtdnnConfig`.

    Only field-level rules live here; whether the geometry reaches the
    requested context is checked by `build_ctdnn`, which knows the input
    width.
    """
    fbank_dim = serializers.IntegerField(min_value=1, default=40)
    ling_dim = serializers.IntegerField(min_value=0, default=0)
    feature_dim = serializers.IntegerField(min_value=1, default=40)
    n_speakers = serializers.IntegerField(min_value=2, default=16)
    conv1_channels = serializers.IntegerField(min_value=1, default=8)
    conv1_kernel = _pair_field((5, 5))
    conv2_channels = serializers.IntegerField(min_value=1, default=16)
    conv2_kernel = _pair_field((4, 3))
    pool_freq = serializers.IntegerField(min_value=1, default=2)
    td1_offsets = _offsets_field((-4, -2, 0, 2, 4))
    td2_offsets = _offsets_field((-2, 0, 2))
    td_units = serializers.IntegerField(min_value=1, default=200)
    pnorm_group = serializers.IntegerField(min_value=1, default=2)
    effective_context_frames = serializers.IntegerField(min_value=1, default=20)

    def validate_td1_offsets(self, value):
        return _check_increasing(value)

    def validate_td2_offsets(self, value):
        return _check_increasing(value)

    def validate(self, attrs):
        if attrs["td_units"] % attrs["pnorm_group"]:
            raise serializers.ValidationError(
                {"pnorm_group": "td_units must be divisible by the p-norm group size."}
            )
        attrs["conv1_kernel"] = tuple(attrs["conv1_kernel"])
        attrs["conv2_kernel"] = tuple(attrs["conv2_kernel"])
        return attrs

    def create(self, validated_data):
        return CtdnnConfig(**validated_data)


class AerNetConfigSerializer(serializers.Serializer):
    """
    Serializer for `AerNetConfig`.

    Methods:
        validate: hidden_units must split evenly into pnorm_out groups.
        create: Returns a frozen `AerNetConfig`.
    """
    n_emotions = serializers.IntegerField(min_value=2, default=4)
    fbank_dim = serializers.IntegerField(min_value=1, default=40)
    ling_dim = serializers.IntegerField(min_value=0, default=0)
    spk_dim = serializers.IntegerField(min_value=0, default=0)
    hidden_layers = serializers.IntegerField(min_value=1, default=6)
    hidden_units = serializers.IntegerField(min_value=1, default=200)
    pnorm_out = serializers.IntegerField(min_value=1, default=40)
    context_offsets = _offsets_field(SPLICE_OFFSETS)

    def validate_context_offsets(self, value):
        return _check_increasing(value)

    def validate(self, attrs):
        if attrs["hidden_units"] % attrs["pnorm_out"]:
            raise serializers.ValidationError(
                {"pnorm_out": "hidden_units must be divisible by pnorm_out."}
            )
        return attrs

    def create(self, validated_data):
        return AerNetConfig(**validated_data)
