"""
Framing, STFT, log-power spectra and log-mel filterbank features.

Frame t covers samples [t * shift, t * shift + frame_length). Each frame is
windowed, zero-padded to `fft_size` and transformed with a one-sided FFT.
No pre-emphasis and no mean normalization are applied.
"""

from functools import lru_cache

import librosa
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from core.exceptions import (
    ConfigMismatchError,
    FilterbankDegenerateError,
    SignalTooShortError,
    ZeroVectorError,
)
from .containers import (
    WINDOW_HAMMING,
    WINDOW_HANN,
    WINDOW_RECTANGULAR,
    FbankSequence,
    Spectrogram,
)


@lru_cache(maxsize=16)
def analysis_window(kind, length):
    """
    Return the (read-only) analysis window of the given kind and length.
    """
    if kind == WINDOW_HAMMING:
        window = np.hamming(length)
    elif kind == WINDOW_HANN:
        window = np.hanning(length)
    elif kind == WINDOW_RECTANGULAR:
        window = np.ones(length)
    else:
        raise ConfigMismatchError(f"unknown window '{kind}'")
    window = window.astype(np.float64)
    window.flags.writeable = False
    return window


def _check_waveform(waveform, config):
    if waveform.sample_rate != config.sample_rate_hz:
        raise ConfigMismatchError(
            f"config mismatch: waveform at {waveform.sample_rate} Hz, "
            f"config expects {config.sample_rate_hz} Hz"
        )
    if len(waveform) < config.frame_length_samples:
        raise SignalTooShortError(
            f"signal too short: {len(waveform)} samples < one frame "
            f"({config.frame_length_samples})"
        )


def frame_signal(waveform, config):
    """
    Cut a waveform into windowed frames.

    Args:
        waveform (Waveform): Input signal.
        config (FrameConfig): Framing parameters.

    Raises:
        ConfigMismatchError: Sample rate differs from the config.
        SignalTooShortError: Fewer samples than one frame.

    Returns:
        np.ndarray: [n_frames x frame_length] windowed frames.
    """
    _check_waveform(waveform, config)
    frames = sliding_window_view(waveform.samples, config.frame_length_samples)
    frames = frames[:: config.frame_shift_samples]
    return frames * analysis_window(config.window, config.frame_length_samples)


def stft(waveform, config):
    """
    One-sided short-time Fourier transform.

    Returns:
        np.ndarray: complex [n_frames x (fft_size/2 + 1)] spectrum.
    """
    return np.fft.rfft(frame_signal(waveform, config), n=config.fft_size, axis=1)


def power_spectrum(waveform, config):
    spectrum = stft(waveform, config)
    return spectrum.real**2 + spectrum.imag**2


def log_power_spectrogram(waveform, config):
    """
    ln(max(|X|^2, log_floor)) per frame and bin.
    """
    power = power_spectrum(waveform, config)
    return Spectrogram(np.log(np.maximum(power, config.log_floor)), config)


@lru_cache(maxsize=16)
def mel_filterbank_matrix(config):
    """
    Triangular mel filters (HTK mel scale, unnormalized) between 0 Hz and Nyquist.

    Adjacent triangles overlap so that, between the first and last filter
    centers, the weights at any FFT bin sum to one.

    Raises:
        FilterbankDegenerateError: Some filter has no positive weight at the
            configured FFT resolution.

    Returns:
        np.ndarray: read-only [n_mels x (fft_size/2 + 1)] matrix.
    """
    if config.n_mels > config.n_bins:
        raise FilterbankDegenerateError(
            f"filterbank degenerate: {config.n_mels} mels > {config.n_bins} bins"
        )
    weights = librosa.filters.mel(
        sr=config.sample_rate_hz,
        n_fft=config.fft_size,
        n_mels=config.n_mels,
        fmin=0.0,
        fmax=config.sample_rate_hz / 2.0,
        htk=True,
        norm=None,
        dtype=np.float64,
    )
    empty = np.flatnonzero(weights.sum(axis=1) <= 0.0)
    if empty.size:
        raise FilterbankDegenerateError(
            f"filterbank degenerate: filters {empty.tolist()} have zero support"
        )
    weights.flags.writeable = False
    return weights


def mel_center_frequencies(config):
    """Center frequency (Hz) of every filter, strictly increasing."""
    edges = librosa.mel_frequencies(
        n_mels=config.n_mels + 2,
        fmin=0.0,
        fmax=config.sample_rate_hz / 2.0,
        htk=True,
    )
    return edges[1:-1]


def fbank(waveform, config):
    """
    ln(max(filterbank . power_spectrum, log_floor)) per frame.
    """
    power = power_spectrum(waveform, config)
    energies = power @ mel_filterbank_matrix(config).T
    return FbankSequence(np.log(np.maximum(energies, config.log_floor)), config)


def length_normalize(v):
    """
    Scale a vector (or each row of a matrix) to unit Euclidean norm.

    Raises:
        ZeroVectorError: A vector (row) has zero norm.
    """
    v = np.asarray(v, dtype=np.float64)
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(norms == 0.0):
        raise ZeroVectorError()
    return v / norms
