"""
Griffin-Lim resynthesis from a log-power spectrogram.

Uses the same framing as the front-end (no centering), so the inverse is the
least-squares overlap-add estimate: sum_t w * irfft(X_t) / sum_t w^2.
"""

import logging

import numpy as np

from core.exceptions import DimensionError, IterationError
from .containers import Waveform
from .frontend import analysis_window

logger = logging.getLogger(__name__)

_WINDOW_SUM_FLOOR = 1e-8


def _analysis(samples, config):
    window = analysis_window(config.window, config.frame_length_samples)
    n_frames = config.n_frames(samples.shape[0])
    starts = np.arange(n_frames) * config.frame_shift_samples
    index = starts[:, None] + np.arange(config.frame_length_samples)[None, :]
    return np.fft.rfft(samples[index] * window, n=config.fft_size, axis=1)


def istft(spectrum, config):
    """
    Least-squares inverse of the front-end STFT.

    Args:
        spectrum (np.ndarray): complex [n_frames x (fft_size/2 + 1)].
        config (FrameConfig): Framing used to produce the spectrum.

    Returns:
        np.ndarray: float64 samples, length (n_frames - 1) * shift + frame_length.
    """
    length = config.frame_length_samples
    shift = config.frame_shift_samples
    window = analysis_window(config.window, length)
    frames = np.fft.irfft(spectrum, n=config.fft_size, axis=1)[:, :length] * window
    n_samples = config.n_samples(spectrum.shape[0])
    signal = np.zeros(n_samples)
    weight = np.zeros(n_samples)
    for t, frame in enumerate(frames):
        start = t * shift
        signal[start:start + length] += frame
        weight[start:start + length] += window**2
    return signal / np.maximum(weight, _WINDOW_SUM_FLOOR)


def _two_sided_norm(one_sided):
    # Interior bins stand for a conjugate pair; DC and Nyquist appear once.
    weights = np.full(one_sided.shape[-1], 2.0)
    weights[0] = 1.0
    weights[-1] = 1.0
    return float(np.sqrt(np.sum(weights * np.abs(one_sided) ** 2)))


def spectral_convergence(magnitude, estimate):
    """
    || |estimate| - magnitude || / || magnitude ||, measured over the full
    (two-sided) spectrum so that Griffin-Lim projections never increase it.
    """
    denom = _two_sided_norm(magnitude)
    if denom == 0.0:
        return 0.0
    return _two_sided_norm(np.abs(estimate) - magnitude) / denom


def griffin_lim_with_history(spec, iterations, seed):
    """
    Run Griffin-Lim and return the waveform with the per-iteration spectral
    convergence error.

    Args:
        spec (Spectrogram): Log-power spectrogram to invert.
        iterations (int): Number of projection rounds, at least one.
        seed (int): Seed of the uniform random initial phase.

    Raises:
        IterationError: `iterations` is below one.
        DimensionError: The spectrogram is not [n_frames x fft_size / 2 + 1].

    Returns:
        tuple[Waveform, list[float]]
    """
    if iterations < 1:
        raise IterationError()
    config = spec.config
    if np.ndim(spec.frames) != 2 or np.shape(spec.frames)[1] != config.n_bins:
        raise DimensionError(
            f"dimension error: spectrogram shape {np.shape(spec.frames)}, expected {config.n_bins} bins"
        )
    magnitude = np.exp(0.5 * spec.frames)
    rng = np.random.default_rng(seed)
    phase = rng.uniform(-np.pi, np.pi, size=magnitude.shape)
    estimate = magnitude * np.exp(1j * phase)
    history = []
    samples = istft(estimate, config)
    for _ in range(iterations):
        rebuilt = _analysis(samples, config)
        history.append(spectral_convergence(magnitude, rebuilt))
        estimate = magnitude * np.exp(1j * np.angle(rebuilt))
        samples = istft(estimate, config)
    logger.debug("griffin-lim: %d iterations, final error %.6f", iterations, history[-1])
    return Waveform(samples, config.sample_rate_hz), history


def griffin_lim(spec, iterations, seed):
    """
    Resynthesize a waveform from a log-power spectrogram (phase from seed).
    """
    waveform, _ = griffin_lim_with_history(spec, iterations, seed)
    return waveform
