"""
Finite-difference verification of backpropagated gradients.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from core.exceptions import DimensionError
from .functional import softmax_cross_entropy

logger = logging.getLogger(__name__)

REL_ERROR_FLOOR = 1e-5


def relative_error(analytic, numeric):
    """|a - n| / max(|a|, |n|, 1e-5), elementwise."""
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), REL_ERROR_FLOOR)
    return np.abs(analytic - numeric) / scale


@dataclass
class GradCheckReport:
    """
    Outcome of a gradient check.

    Attributes:
        max_rel_error (float): Largest elementwise relative error seen.
        offending_parameter (str | None): "<layer>.<name>[index]" of that error
            when it exceeds the tolerance.
        n_checked (int): Parameter entries compared.
        n_skipped (int): Entries whose perturbation crossed a relu or pool
            boundary and so has no meaningful central difference.
        per_tensor (dict[str, float]): Largest error per parameter tensor.
    """

    tolerance: float
    max_rel_error: float = 0.0
    offending_parameter: str | None = None
    n_checked: int = 0
    n_skipped: int = 0
    per_tensor: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.max_rel_error < self.tolerance

    @property
    def empty(self):
        return self.n_checked == 0 and self.n_skipped == 0


def _entries(array, max_per_tensor, rng):
    if max_per_tensor is None or array.size <= max_per_tensor:
        return range(array.size)
    return np.sort(rng.choice(array.size, size=max_per_tensor, replace=False))


def compare_gradients(evaluate, named_params, analytic, h=1e-5, tolerance=1e-4,
                      max_per_tensor=None, seed=0):
    """
    Compare analytic gradients with central differences.

    Args:
        evaluate (callable): Returns (loss, pattern) at the current parameter
            values; `pattern` identifies the active linear region.
        named_params (list[tuple[str, np.ndarray]]): Arrays perturbed in place.
        analytic (list[np.ndarray]): Gradients in the same order.
        max_per_tensor (int | None): Seeded random subset size per tensor.

    Returns:
        GradCheckReport
    """
    report = GradCheckReport(tolerance=tolerance)
    if max_per_tensor == 0:
        return report
    rng = np.random.default_rng(seed)
    _, base_pattern = evaluate()
    for (name, array), grad in zip(named_params, analytic):
        flat = array.reshape(-1)
        flat_grad = np.asarray(grad).reshape(-1)
        worst = 0.0
        for index in _entries(array, max_per_tensor, rng):
            original = flat[index]
            flat[index] = original + h
            loss_plus, pattern_plus = evaluate()
            flat[index] = original - h
            loss_minus, pattern_minus = evaluate()
            flat[index] = original
            if pattern_plus != base_pattern or pattern_minus != base_pattern:
                report.n_skipped += 1
                continue
            numeric = (loss_plus - loss_minus) / (2.0 * h)
            error = float(relative_error(flat_grad[index], numeric))
            report.n_checked += 1
            worst = max(worst, error)
            if error > report.max_rel_error:
                report.max_rel_error = error
                if error >= tolerance:
                    report.offending_parameter = f"{name}[{int(index)}]"
        report.per_tensor[name] = worst
    if not report.passed:
        logger.warning("Gradient check failed at %s (rel. error %.3g)",
                       report.offending_parameter, report.max_rel_error)
    return report


def grad_check(network, x, label, h=1e-5, tolerance=1e-4, max_per_tensor=None, seed=0):
    """
    Check `network` backprop against central differences of the
    cross-entropy between its logits and `label`.

    `label` is one class index for every output row, or one per row.
    """
    if network.n_parameters() == 0:
        raise DimensionError("dimension error: network has no parameters")
    x = np.asarray(x, dtype=np.float64)

    def loss_and_grad():
        logits = network.logits(x, keep_cache=True)
        flat = logits.reshape(-1, logits.shape[-1])
        labels = np.asarray(label)
        labels = np.full(flat.shape[0], int(labels)) if labels.ndim == 0 else labels.reshape(-1)
        loss, grad = softmax_cross_entropy(flat, labels)
        return loss, grad.reshape(logits.shape)

    def evaluate():
        loss, _ = loss_and_grad()
        return loss, network.activation_pattern()

    _, grad = loss_and_grad()
    network.backward(grad)
    analytic = [g.copy() for g in network.gradient_arrays()]
    report = compare_gradients(evaluate, network.named_parameters(), analytic, h, tolerance,
                               max_per_tensor, seed)
    network.clear_cache()
    return report
