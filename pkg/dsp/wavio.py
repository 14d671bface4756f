"""
WAV input/output: PCM 16-bit little-endian mono at the configured rate only.
"""

import logging

import numpy as np
from scipy.io import wavfile

from core.exceptions import AudioFormatError, WriteError
from .containers import Waveform

logger = logging.getLogger(__name__)

PCM_SCALE = 32768.0


def read_wav(path, expected_rate=8000):
    """
    Read a 16-bit PCM mono WAV file.

    Args:
        path (str | Path): File to read.
        expected_rate (int): Required sample rate in Hz.

    Raises:
        AudioFormatError: Not 16-bit PCM, not mono, or wrong sample rate.

    Returns:
        Waveform: Samples scaled to [-1, 1).
    """
    try:
        rate, data = wavfile.read(str(path))
    except (OSError, ValueError) as exc:
        raise AudioFormatError(f"cannot read WAV '{path}': {exc}") from exc
    if data.dtype != np.int16:
        raise AudioFormatError(f"'{path}': expected 16-bit PCM, found {data.dtype}")
    if data.ndim != 1:
        raise AudioFormatError(f"'{path}': expected mono, found {data.shape[1]} channels")
    if rate != expected_rate:
        raise AudioFormatError(f"'{path}': expected {expected_rate} Hz, found {rate} Hz")
    return Waveform(data.astype(np.float64) / PCM_SCALE, rate)


def to_pcm16(samples):
    """Quantize float samples to int16 with clipping."""
    scaled = np.round(np.asarray(samples, dtype=np.float64) * PCM_SCALE)
    return np.clip(scaled, -32768, 32767).astype("<i2")


def write_wav(path, waveform):
    """
    Write a waveform as 16-bit PCM mono.

    Raises:
        WriteError: The file cannot be written.
    """
    try:
        wavfile.write(str(path), waveform.sample_rate, to_pcm16(waveform.samples))
    except OSError as exc:
        raise WriteError(f"write error: {path}: {exc}") from exc
    logger.debug("wrote %s (%d samples)", path, len(waveform))
