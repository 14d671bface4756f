"""
Audio resynthesis from factors: factorize, predict the log spectrum frame by
frame, then recover a waveform with Griffin-Lim.
"""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from core.exceptions import WriteError
from dsp.containers import FrameConfig, Spectrogram, Waveform
from dsp.frontend import fbank, log_power_spectrogram
from dsp.vocoder import griffin_lim
from dsp.wavio import write_wav

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Resynthesis:
    """
    Attributes:
        waveform (Waveform): Griffin-Lim rendering of `reconstructed`.
        original (np.ndarray): [T'' x spec_dim] input log spectrum, aligned.
        reconstructed (np.ndarray): [T'' x spec_dim] predicted log spectrum.
        start_frame (int): Input frame of row 0.
    """

    waveform: Waveform
    original: np.ndarray
    reconstructed: np.ndarray
    start_frame: int

    @property
    def mean_square_error(self):
        return float(np.mean(np.sum((self.reconstructed - self.original) ** 2, axis=1)))


def resynthesize(waveform, cascade, model, iterations=50, seed=0, frame_config=None):
    """
    Rebuild an utterance from its factors.

    Args:
        waveform (Waveform): Input audio.
        cascade (Cascade): Phone, speaker and AER networks.
        model (Reconstructor): Trained reconstructor.
        iterations (int): Griffin-Lim iterations.

    Returns:
        Resynthesis: Audio covering the T'' aligned frames plus the paired
        original and reconstructed log spectra.
    """
    frame_config = frame_config or FrameConfig()
    factors = cascade.factorize_frames(fbank(waveform, frame_config))
    reconstructed = model.predict(factors.q, factors.s, factors.e)
    start = factors.start_frame
    original = log_power_spectrogram(waveform, frame_config).frames[start:start + len(factors)]
    audio = griffin_lim(Spectrogram(reconstructed, frame_config), iterations, seed)
    return Resynthesis(audio, original, reconstructed, start)


def write_resynthesis(result, directory, utt_id):
    """
    Write `{utt_id}.wav` plus `{utt_id}.original.txt` and
    `{utt_id}.reconstructed.txt` log-spectrum matrices for plotting.

    Returns:
        list[Path]: The written files.
    """
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
        paths = [directory / f"{utt_id}.wav"]
        write_wav(paths[0], result.waveform)
        for name in ("original", "reconstructed"):
            path = directory / f"{utt_id}.{name}.txt"
            np.savetxt(path, getattr(result, name), fmt="%.6f")
            paths.append(path)
    except OSError as exc:
        raise WriteError(f"write error: {directory}: {exc}") from exc
    logger.info("Resynthesized %s into %s", utt_id, directory)
    return paths
