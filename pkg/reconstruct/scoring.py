"""
Reconstruction error against held-out spectra, next to a mean-spectrum
baseline predictor.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from cascade.factors import DEFAULT_ALIGN_CONTEXT
from core.exceptions import NoDataError

from .training import aligned_pair, split_factors

logger = logging.getLogger(__name__)


@dataclass
class ReconstructionReport:
    """
    Attributes:
        mean_frame_square_error (float): Mean over all frames of the squared
            Euclidean log-spectral error.
        baseline_square_error (float | None): The same for the baseline.
        per_utterance (dict[str, dict]): utt id -> {"frames",
            "mean_square_error", "baseline_square_error"}.
    """

    mean_frame_square_error: float
    n_frames: int
    baseline_square_error: float = None
    per_utterance: dict = field(default_factory=dict)

    @property
    def beats_baseline_everywhere(self):
        return all(
            u["mean_square_error"] < u["baseline_square_error"]
            for u in self.per_utterance.values()
            if u.get("baseline_square_error") is not None
        )

    def to_dict(self):
        return {
            "mean_frame_square_error": self.mean_frame_square_error,
            "n_frames": self.n_frames,
            "baseline_square_error": self.baseline_square_error,
            "per_utterance": self.per_utterance,
        }


def mean_spectrum(factor_archive, spec_archive, utt_ids, context=DEFAULT_ALIGN_CONTEXT):
    """Mean aligned log spectrum over `utt_ids`, the baseline predictor."""
    if not utt_ids:
        raise NoDataError("no data: no utterances for the mean spectrum")
    total, count = None, 0
    for utt_id in sorted(utt_ids):
        _, spectrum = aligned_pair(factor_archive, spec_archive, utt_id, context)
        total = spectrum.sum(axis=0) if total is None else total + spectrum.sum(axis=0)
        count += spectrum.shape[0]
    return total / count


def evaluate_reconstruction(model, factor_archive, spec_archive, utt_ids,
                            context=DEFAULT_ALIGN_CONTEXT, baseline=None):
    """
    Mean frame square error of `model` over `utt_ids`.

    Utterances are visited in sorted order so the result does not depend on
    the order of `utt_ids`.

    Args:
        model (Reconstructor): Trained reconstructor.
        baseline (np.ndarray | None): [spec_dim] constant predictor scored
            alongside the model.

    Raises:
        NoDataError: No utterances or no frames.
        AlignmentError: Misaligned archives.
    """
    dims = model.input_dims
    per_utterance = {}
    total, baseline_total, frames = 0.0, 0.0, 0
    for utt_id in sorted(set(utt_ids)):
        factors, spectrum = aligned_pair(factor_archive, spec_archive, utt_id, context)
        if not factors.shape[0]:
            continue
        error = np.sum((model.predict(*split_factors(factors, dims)) - spectrum) ** 2, axis=1)
        entry = {"frames": int(error.shape[0]), "mean_square_error": float(error.mean())}
        total += float(error.sum())
        frames += error.shape[0]
        if baseline is not None:
            baseline_error = np.sum((spectrum - baseline) ** 2, axis=1)
            entry["baseline_square_error"] = float(baseline_error.mean())
            baseline_total += float(baseline_error.sum())
        per_utterance[utt_id] = entry
    if frames == 0:
        raise NoDataError("no data")
    report = ReconstructionReport(
        mean_frame_square_error=total / frames,
        n_frames=frames,
        baseline_square_error=baseline_total / frames if baseline is not None else None,
        per_utterance=per_utterance,
    )
    logger.info("Reconstruction error %.4f over %d frames (baseline %s)",
                report.mean_frame_square_error, frames, report.baseline_square_error)
    return report
