"""
Value types passed between the front-end and the rest of the toolkit.

All containers are frozen dataclasses so configs can key caches and so
nothing downstream mutates a shared waveform by accident.
"""

from dataclasses import dataclass, field

import numpy as np

from core.exceptions import ConfigError

WINDOW_HAMMING = "hamming"
WINDOW_HANN = "hann"
WINDOW_RECTANGULAR = "rectangular"
WINDOW_CHOICES = [
    (WINDOW_HAMMING, "hamming"),
    (WINDOW_HANN, "hann"),
    (WINDOW_RECTANGULAR, "rectangular"),
]


@dataclass(frozen=True)
class FrameConfig:
    """
    Framing and filterbank parameters.

    Attributes:
        sample_rate_hz (int): Expected sample rate of every waveform.
        frame_length_samples (int): Analysis window length.
        frame_shift_samples (int): Hop between consecutive frames.
        fft_size (int): Power of two, at least the frame length.
        n_mels (int): Number of triangular mel filters.
        window (str): One of "hamming", "hann", "rectangular".
        log_floor (float): Power floor applied before the logarithm.

    Example:
        FrameConfig()  # 8 kHz, 25 ms / 10 ms, 256-point FFT, 40 mels
    """

    sample_rate_hz: int = 8000
    frame_length_samples: int = 200
    frame_shift_samples: int = 80
    fft_size: int = 256
    n_mels: int = 40
    window: str = WINDOW_HAMMING
    log_floor: float = 1e-10

    def __post_init__(self):
        if min(self.frame_length_samples, self.frame_shift_samples, self.sample_rate_hz) < 1:
            raise ConfigError("config error: sample rate, frame length and shift must be positive")
        if self.frame_shift_samples > self.frame_length_samples:
            raise ConfigError(
                f"config error: frame shift {self.frame_shift_samples} exceeds "
                f"frame length {self.frame_length_samples}"
            )
        if self.fft_size < self.frame_length_samples or self.fft_size & (self.fft_size - 1):
            raise ConfigError(
                f"config error: fft_size {self.fft_size} must be a power of two "
                f"of at least {self.frame_length_samples}"
            )

    @property
    def n_bins(self):
        return self.fft_size // 2 + 1

    def n_frames(self, n_samples):
        """Frame count for a waveform of `n_samples` (0 when shorter than a frame)."""
        if n_samples < self.frame_length_samples:
            return 0
        return (n_samples - self.frame_length_samples) // self.frame_shift_samples + 1

    def n_samples(self, n_frames):
        """Shortest waveform length that yields exactly `n_frames` frames."""
        return (n_frames - 1) * self.frame_shift_samples + self.frame_length_samples


@dataclass(frozen=True, eq=False)
class Waveform:
    """
    Mono waveform as float64 samples in [-1, 1) plus its sample rate.
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=np.float64))

    def __len__(self):
        return int(self.samples.shape[0])

    def scaled(self, factor):
        return Waveform(self.samples * factor, self.sample_rate)


@dataclass(frozen=True, eq=False)
class Spectrogram:
    """
    Log-power spectrogram [n_frames x (fft_size/2 + 1)] with its config.
    """

    frames: np.ndarray
    config: FrameConfig = field(default_factory=FrameConfig)

    @property
    def n_frames(self):
        return int(self.frames.shape[0])


@dataclass(frozen=True, eq=False)
class FbankSequence:
    """
    Log-mel filterbank energies [n_frames x n_mels] with their config.
    """

    frames: np.ndarray
    config: FrameConfig = field(default_factory=FrameConfig)

    @property
    def n_frames(self):
        return int(self.frames.shape[0])
