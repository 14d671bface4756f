"""
Mini-batch training of one network on a `WindowDataset`, with a JSON-lines
training log.
"""

import json
import logging
import math
from pathlib import Path

import numpy as np
from django.conf import settings
from tqdm import tqdm

from core.exceptions import NumericError, WriteError
from core.seeds import derive_seed
from nncore.functional import softmax_cross_entropy
from nncore.optim import make_optimizer

logger = logging.getLogger(__name__)

SPLIT_TRAIN = "train"
SPLIT_DEV = "dev"
EVAL_BATCH = 512


class TrainingLog:
    """
    Line-delimited training records.

    Every record carries the fixed `context` fields (stage, system,
    config_hash, version) plus epoch, split, loss and frames, and the frame
    accuracy for classifiers. Records are kept in memory and appended to `path`
    when one is given.
    """

    def __init__(self, path=None, context=None):
        self.path = Path(path) if path else None
        self.context = dict(context or {})
        self.records = []
        if self.path:
            try:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                self.path.write_text("", encoding="utf-8")
            except OSError as exc:
                raise WriteError(f"write error: {self.path}: {exc}") from exc

    def write(self, epoch, split, loss, frames, accuracy=None):
        record = {
            **self.context,
            "epoch": epoch,
            "split": split,
            "loss": round(float(loss), 6),
            "frames": int(frames),
        }
        if accuracy is not None:
            record["accuracy"] = round(float(accuracy), 6)
        self.records.append(record)
        if self.path:
            try:
                with self.path.open("a", encoding="utf-8") as handle:
                    handle.write(json.dumps(record, sort_keys=True) + "\n")
            except OSError as exc:
                raise WriteError(f"write error: {self.path}: {exc}") from exc
        return record

    def losses(self, split):
        return [r["loss"] for r in self.records if r["split"] == split]

    @staticmethod
    def read(path):
        with Path(path).open(encoding="utf-8") as handle:
            return [json.loads(line) for line in handle if line.strip()]


def _flat_logits(logits):
    return logits.reshape(-1, logits.shape[-1])


def check_finite(loss, epoch):
    if not math.isfinite(loss):
        raise NumericError(f"non-finite value encountered: loss {loss} in epoch {epoch}")


def evaluate(network, dataset, batch_size=EVAL_BATCH):
    """
    Mean cross-entropy and frame accuracy over a whole dataset.

    Returns:
        tuple: (loss, accuracy)
    """
    total_loss, correct = 0.0, 0
    n = len(dataset)
    for start in range(0, n, batch_size):
        indices = np.arange(start, min(start + batch_size, n))
        inputs, labels = dataset.batch(indices)
        logits = _flat_logits(network.logits(inputs))
        loss, _ = softmax_cross_entropy(logits, labels)
        total_loss += loss * len(indices)
        correct += int(np.sum(np.argmax(logits, axis=1) == labels))
    return total_loss / n, correct / n


def fit(network, train_set, dev_set, cfg, log, desc="train"):
    """
    Train `network` in place on shuffled frame batches.

    An epoch-0 record holds the loss before any update. Each later epoch
    draws a fresh permutation from a seed derived from `cfg.seed`, updates
    with the configured optimizer, logs train and dev loss, then decays
    the learning rate.

    Args:
        network (Network): Network to train; its softmax layer is skipped.
        train_set (WindowDataset): Training windows.
        dev_set (WindowDataset | None): Held-out windows.
        cfg (StageConfig): Epochs, batch size, optimizer and schedule.
        log (TrainingLog): Receives one record per epoch and split.

    Raises:
        NumericError: A batch loss is not finite.
    """
    optimizer = make_optimizer(cfg.optimizer, cfg.lr, cfg.momentum)
    rng = np.random.default_rng(derive_seed(cfg.seed, "shuffle"))

    def report(epoch, train_metrics):
        log.write(epoch, SPLIT_TRAIN, train_metrics[0], len(train_set), train_metrics[1])
        if dev_set is not None:
            dev_loss, dev_acc = evaluate(network, dev_set)
            check_finite(dev_loss, epoch)
            log.write(epoch, SPLIT_DEV, dev_loss, len(dev_set), dev_acc)
        logger.info("%s epoch %d: train loss %.4f acc %.3f", desc, epoch, *train_metrics)

    initial = evaluate(network, train_set)
    check_finite(initial[0], 0)
    report(0, initial)

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_set))
        if cfg.max_frames_per_epoch:
            order = order[:cfg.max_frames_per_epoch]
        total_loss, correct = 0.0, 0
        batches = range(0, len(order), cfg.batch_frames)
        for start in tqdm(batches, desc=f"{desc} {epoch}/{cfg.epochs}", leave=False,
                          disable=not settings.CDF["SHOW_PROGRESS"]):
            indices = order[start:start + cfg.batch_frames]
            inputs, labels = train_set.batch(indices)
            logits = network.logits(inputs, keep_cache=True)
            loss, grad = softmax_cross_entropy(_flat_logits(logits), labels)
            check_finite(loss, epoch)
            network.backward(grad.reshape(logits.shape))
            optimizer.step([network])
            total_loss += loss * len(indices)
            correct += int(np.sum(np.argmax(_flat_logits(logits), axis=1) == labels))
        network.clear_cache()
        report(epoch, (total_loss / len(order), correct / len(order)))
        optimizer.lr *= cfg.lr_decay
    return network
