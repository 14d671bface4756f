"""
Configuration dataclasses of the phone, CT-DNN speaker and AER networks.

Defaults are desk scale; `PAPER_SCALE` lists the overrides that restore the
published layer sizes.
"""

from dataclasses import dataclass

MODEL_PHONE = "phone"
MODEL_CTDNN = "ctdnn"
MODEL_AER = "aer"
MODEL_RECON = "recon"

COND_LING = "ling"
COND_SPK = "spk"

SPLICE_OFFSETS = (-4, -3, -2, -1, 0, 1, 2, 3, 4)

PAPER_SCALE = {
    "phone_net": {"hidden_units": 1024},
    "ctdnn": {"conv1_channels": 32, "conv2_channels": 64},
}


def conditioning_label(conditioning):
    """("ling", "spk") -> "ling+spk"; () -> "none"."""
    ordered = [c for c in (COND_LING, COND_SPK) if c in conditioning]
    return "+".join(ordered) if ordered else "none"


def parse_conditioning(label):
    if not label or label == "none":
        return ()
    return tuple(c for c in (COND_LING, COND_SPK) if c in label.split("+"))


@dataclass(frozen=True)
class PhoneNetConfig:
    """
    Frame-level phone classifier on spliced fbank frames.

    Attributes:
        n_phones (int): Output classes, at least 2.
        fbank_dim (int): Input width per frame.
        hidden_layers (int): Dense+relu layers.
        hidden_units (int): Units per hidden layer.
        context_offsets (tuple[int]): Splice offsets, strictly increasing.
    """

    n_phones: int = 20
    fbank_dim: int = 40
    hidden_layers: int = 4
    hidden_units: int = 128
    context_offsets: tuple = SPLICE_OFFSETS


@dataclass(frozen=True)
class CtdnnConfig:
    """
    Convolutional time-delay speaker network.

    One output frame sees `effective_context_frames` input frames:
    1 + (conv1_kernel[0] - 1) + (conv2_kernel[0] - 1) + span(td1) + span(td2).
    Pooling acts on frequency only so the time geometry stays frame-exact.

    Attributes:
        fbank_dim (int): Raw feature width per frame.
        ling_dim (int): Width of the phone posterior input, 0 for the IDF system.
        feature_dim (int): Width of the speaker feature layer.
        n_speakers (int): Training speakers.
    """

    fbank_dim: int = 40
    ling_dim: int = 0
    feature_dim: int = 40
    n_speakers: int = 16
    conv1_channels: int = 8
    conv1_kernel: tuple = (5, 5)
    conv2_channels: int = 16
    conv2_kernel: tuple = (4, 3)
    pool_freq: int = 2
    td1_offsets: tuple = (-4, -2, 0, 2, 4)
    td2_offsets: tuple = (-2, 0, 2)
    td_units: int = 200
    pnorm_group: int = 2
    effective_context_frames: int = 20

    @property
    def input_dim_per_frame(self):
        return self.fbank_dim + self.ling_dim


@dataclass(frozen=True)
class AerNetConfig:
    """
    Emotion classifier; each hidden dense layer is reduced by a p-norm layer
    and the last p-norm output is the emotion factor.

    Attributes:
        ling_dim (int): Phone posterior width, 0 when not conditioned on q.
        spk_dim (int): Speaker feature width, 0 when not conditioned on s.
    """

    n_emotions: int = 4
    fbank_dim: int = 40
    ling_dim: int = 0
    spk_dim: int = 0
    hidden_layers: int = 6
    hidden_units: int = 200
    pnorm_out: int = 40
    context_offsets: tuple = SPLICE_OFFSETS

    @property
    def conditioning(self):
        return tuple(
            name for name, dim in ((COND_LING, self.ling_dim), (COND_SPK, self.spk_dim)) if dim
        )

    @property
    def input_dim(self):
        return self.fbank_dim + self.ling_dim + self.spk_dim

    @property
    def pnorm_group(self):
        return self.hidden_units // self.pnorm_out
