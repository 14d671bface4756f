from dataclasses import dataclass


@dataclass(frozen=True)
class ReconConfig:
    """
    Spectrum reconstructor settings.

    Attributes:
        spec_dim (int): Log-power spectrum width, fft_size / 2 + 1.
        hidden_layers (int): Dense+relu layers per subnetwork; 0 leaves a
            single affine map.
        hidden_units (int): Units per hidden layer.
        lr_decay (float): Learning-rate factor per epoch.
        griffin_lim_iterations (int): Iterations used by resynthesis.
        resynthesis_utterances (int): Eval utterances rendered to audio.
    """

    spec_dim: int = 129
    hidden_layers: int = 2
    hidden_units: int = 256
    epochs: int = 20
    batch_frames: int = 256
    lr: float = 1e-3
    lr_decay: float = 0.95
    optimizer: str = "adam"
    momentum: float = 0.9
    seed: int = 0
    max_frames_per_epoch: int = 0
    griffin_lim_iterations: int = 50
    resynthesis_utterances: int = 2
