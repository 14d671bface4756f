"""
Scoring and summary metrics for speaker identification and emotion
recognition.
"""

import logging
from dataclasses import dataclass

import numpy as np

from core.exceptions import LabelError, NoDataError, ProtocolError, ZeroVectorError

logger = logging.getLogger(__name__)

LEVEL_FRAME = "frame"
LEVEL_UTTERANCE = "utterance"
LEVEL_CHOICES = [(LEVEL_FRAME, "frame"), (LEVEL_UTTERANCE, "utterance")]


def cosine_score(a, b):
    """
    a . b / (|a| |b|)

    Raises:
        ZeroVectorError: Either vector is zero.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    norm_a, norm_b = np.linalg.norm(a), np.linalg.norm(b)
    if norm_a == 0.0 or norm_b == 0.0:
        raise ZeroVectorError("cannot score zero vector")
    return float(np.clip(a @ b / (norm_a * norm_b), -1.0, 1.0))


@dataclass(frozen=True)
class TrialResult:
    condition: str
    n_trials: int
    n_correct: int

    @property
    def idr_percent(self):
        return 100.0 * self.n_correct / self.n_trials

    def to_dict(self):
        return {
            "condition": self.condition,
            "n_trials": self.n_trials,
            "n_correct": self.n_correct,
            "idr_percent": round(self.idr_percent, 4),
        }


def _unit_rows(matrix):
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ZeroVectorError("cannot score zero vector")
    return matrix / norms


def identify(enrolled, vectors):
    """
    Nearest enrolled speaker by cosine score for each row of `vectors`.

    Ties go to the lexicographically smallest speaker id.
    """
    speakers = sorted(enrolled)
    enroll = _unit_rows(np.stack([np.asarray(enrolled[s], dtype=np.float64) for s in speakers]))
    scores = _unit_rows(np.atleast_2d(np.asarray(vectors, dtype=np.float64))) @ enroll.T
    return [speakers[i] for i in np.argmax(scores, axis=1)]


def top1_identification(enrolled, trials, condition):
    """
    Top-1 identification rate of a set of trials.

    Args:
        enrolled (dict[str, np.ndarray]): Speaker id -> enrollment d-vector.
        trials (list[tuple[np.ndarray, str]]): (test d-vector, true speaker).
        condition (str): Label such as "C(30-20f)".

    Raises:
        ProtocolError: Fewer than two enrolled speakers, no trials, or a
            trial of a speaker that is not enrolled.
    """
    if len(enrolled) < 2:
        raise ProtocolError(f"protocol error: {len(enrolled)} enrolled speakers, at least 2 needed")
    if not trials:
        raise ProtocolError(f"protocol error: condition {condition} has no trials")
    unknown = sorted({speaker for _, speaker in trials} - set(enrolled))
    if unknown:
        raise ProtocolError(f"protocol error: trials of unenrolled speakers {unknown}")
    predicted = identify(enrolled, [vector for vector, _ in trials])
    correct = sum(p == speaker for p, (_, speaker) in zip(predicted, trials))
    return TrialResult(condition, len(trials), int(correct))


@dataclass(frozen=True, eq=False)
class EmotionReport:
    """
    Attributes:
        confusion (np.ndarray): [K x K] counts, rows are true classes.
        level (str): "frame" or "utterance".
    """

    confusion: np.ndarray
    level: str

    @property
    def total(self):
        return int(self.confusion.sum())

    @property
    def acc_percent(self):
        return 100.0 * float(np.trace(self.confusion)) / self.total

    @property
    def map_percent(self):
        """Macro average of per-class accuracy over classes that occur."""
        rows = self.confusion.sum(axis=1)
        present = rows > 0
        recall = np.diag(self.confusion)[present] / rows[present]
        return 100.0 * float(recall.mean())

    def to_dict(self):
        return {
            "level": self.level,
            "total": self.total,
            "acc_percent": round(self.acc_percent, 4),
            "map_percent": round(self.map_percent, 4),
            "confusion": self.confusion.tolist(),
        }


def confusion_matrix(truth, predicted, n_classes):
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (truth, predicted), 1)
    return confusion


def emotion_metrics(posteriors, labels, level=LEVEL_FRAME, utterances=None):
    """
    Confusion matrix, ACC and MAP of emotion posteriors.

    Args:
        posteriors (np.ndarray): [N x K] per-frame posteriors.
        labels (np.ndarray): [N] true class per frame.
        level (str): "frame" scores every frame; "utterance" averages the
            posteriors of each utterance before the argmax.
        utterances (list[str] | None): Utterance id per frame, required at
            utterance level.

    Raises:
        LabelError: A label is outside [0, K), or an utterance mixes labels.
        NoDataError: No frames.
    """
    posteriors = np.asarray(posteriors, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if posteriors.ndim != 2 or posteriors.shape[0] == 0:
        raise NoDataError("no data: no posteriors to score")
    n_classes = posteriors.shape[1]
    if labels.shape != (posteriors.shape[0],):
        raise LabelError(f"label error: {labels.shape[0]} labels for {posteriors.shape[0]} frames")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise LabelError(f"label error: labels must lie in [0, {n_classes})")

    if level == LEVEL_UTTERANCE:
        if utterances is None:
            raise LabelError("label error: utterance-level scoring needs utterance ids")
        utterances = np.asarray(utterances)
        ids, inverse = np.unique(utterances, return_inverse=True)
        sums = np.zeros((len(ids), n_classes))
        np.add.at(sums, inverse, posteriors)
        posteriors = sums / np.bincount(inverse)[:, None]
        first = np.full(len(ids), -1)
        first[inverse[::-1]] = labels[::-1]
        if np.any(first[inverse] != labels):
            raise LabelError("label error: an utterance carries more than one label")
        labels = first
    elif level != LEVEL_FRAME:
        raise LabelError(f"label error: unknown level '{level}'")

    report = EmotionReport(confusion_matrix(labels, np.argmax(posteriors, axis=1), n_classes), level)
    empty = np.flatnonzero(report.confusion.sum(axis=1) == 0)
    if empty.size:
        logger.warning("MAP at %s level excludes empty classes %s", level, empty.tolist())
    return report
