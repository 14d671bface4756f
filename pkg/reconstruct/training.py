"""
Training of the spectrum reconstructor on factor and spectrum archives.

A factor record holds [q; s; e] rows for the T'' aligned frames of an
utterance, a spectrum record holds all T frames; the two align when
T - T'' equals the cascade context minus one, factor row j matching
spectrum row j + (context - 1) // 2.
"""

import copy
import logging

import numpy as np
from django.conf import settings
from tqdm import tqdm

from cascade.factors import DEFAULT_ALIGN_CONTEXT
from cascade.training import SPLIT_DEV, SPLIT_TRAIN, TrainingLog, check_finite
from core.exceptions import AlignmentError, ConfigMismatchError, NoDataError
from core.seeds import derive_seed
from nncore.optim import make_optimizer

from .model import Reconstructor, square_error

logger = logging.getLogger(__name__)

EVAL_BATCH = 1024
# Largest accepted ratio between consecutive epoch training losses.
STABILITY_MARGIN = 1.05
MAX_HALVINGS = 30


def _restore(model, snapshot):
    for branch, arrays in zip(model.branches, snapshot):
        branch.assign_parameters([a.copy() for a in arrays])


def split_factors(rows, dims):
    """[q | s | e] column blocks of stacked factor rows."""
    q_dim, s_dim, e_dim = dims
    if rows.shape[-1] != q_dim + s_dim + e_dim:
        raise AlignmentError(
            f"alignment error: factor width {rows.shape[-1]} != {q_dim}+{s_dim}+{e_dim}"
        )
    return rows[..., :q_dim], rows[..., q_dim:q_dim + s_dim], rows[..., q_dim + s_dim:]


def aligned_pair(factor_archive, spec_archive, utt_id, context=DEFAULT_ALIGN_CONTEXT):
    """
    Factor rows and the spectrum rows of the same frames.

    Raises:
        AlignmentError: A record is missing on one side, or the frame counts
            do not differ by context - 1.
    """
    for archive in (factor_archive, spec_archive):
        if not archive.exists(utt_id):
            raise AlignmentError(f"alignment error: {utt_id} has no {archive.name} record")
    factors = factor_archive.read(utt_id)
    spectrum = spec_archive.read(utt_id)
    if spectrum.shape[0] - factors.shape[0] != context - 1:
        raise AlignmentError(
            f"alignment error: {utt_id} has {factors.shape[0]} factor frames for "
            f"{spectrum.shape[0]} spectrum frames (context {context})"
        )
    offset = (context - 1) // 2
    return factors, spectrum[offset:offset + factors.shape[0]]


def stack_pairs(factor_archive, spec_archive, utt_ids, context=DEFAULT_ALIGN_CONTEXT):
    if not utt_ids:
        raise NoDataError("no data: no utterances given")
    pairs = [aligned_pair(factor_archive, spec_archive, u, context) for u in utt_ids]
    return np.concatenate([f for f, _ in pairs]), np.concatenate([x for _, x in pairs])


def batched_loss(model, factors, targets, dims, batch_size=EVAL_BATCH):
    total = 0.0
    for start in range(0, factors.shape[0], batch_size):
        q, s, e = split_factors(factors[start:start + batch_size], dims)
        diff = model.predict(q, s, e) - targets[start:start + batch_size]
        total += float(np.sum(diff**2))
    return total / factors.shape[0]


def train_reconstructor(factor_archive, spec_archive, train_ids, dev_ids, cfg, dims,
                        context=DEFAULT_ALIGN_CONTEXT, log_path=None, metadata=None):
    """
    Fit f, g and h by least squares on aligned (factor, log spectrum) frames.

    Factors come from a frozen cascade; only the reconstructor learns.
    Losses are the mean over frames of the squared Euclidean error, logged
    per epoch for train and dev with an epoch-0 record before any update.
    The train loss of an epoch is measured on every training frame after its
    updates. An epoch whose loss is more than 5% above the previous one is
    undone and rerun on the same frame order at half the learning rate.

    Args:
        dims (tuple[int, int, int]): Widths of q, s and e.

    Returns:
        tuple: (Reconstructor, TrainingLog)

    Raises:
        AlignmentError: Misaligned archives.
        ConfigMismatchError: Spectrum width differs from `cfg.spec_dim`.
        NumericError: Non-finite loss.
    """
    train_x, train_y = stack_pairs(factor_archive, spec_archive, train_ids, context)
    dev = stack_pairs(factor_archive, spec_archive, dev_ids, context) if dev_ids else None
    if train_y.shape[1] != cfg.spec_dim:
        raise ConfigMismatchError(
            f"config mismatch: spectra have {train_y.shape[1]} bins, spec_dim is {cfg.spec_dim}"
        )
    split_factors(train_x, dims)

    model = Reconstructor.build(*dims, cfg=cfg, seed=derive_seed(cfg.seed, "init"))
    metadata = dict(metadata or {})
    log = TrainingLog(log_path, {"stage": "recon", "system": "recon", **metadata})
    optimizer = make_optimizer(cfg.optimizer, cfg.lr, cfg.momentum)
    rng = np.random.default_rng(derive_seed(cfg.seed, "shuffle"))
    n = train_x.shape[0]

    def report(epoch, train_loss):
        check_finite(train_loss, epoch)
        log.write(epoch, SPLIT_TRAIN, train_loss, n)
        if dev is not None:
            dev_loss = batched_loss(model, *dev, dims)
            check_finite(dev_loss, epoch)
            log.write(epoch, SPLIT_DEV, dev_loss, dev[0].shape[0])
        logger.info("recon epoch %d: train loss %.4f", epoch, train_loss)

    def run_epoch(epoch, order):
        for start in tqdm(range(0, len(order), cfg.batch_frames), desc=f"recon {epoch}/{cfg.epochs}",
                          leave=False, disable=not settings.CDF["SHOW_PROGRESS"]):
            indices = order[start:start + cfg.batch_frames]
            q, s, e = split_factors(train_x[indices], dims)
            loss, grad = square_error(model.predict(q, s, e, keep_cache=True), train_y[indices])
            check_finite(loss, epoch)
            model.backward(grad)
            optimizer.step(model.branches)
        model.clear_cache()
        return batched_loss(model, train_x, train_y, dims)

    previous = batched_loss(model, train_x, train_y, dims)
    report(0, previous)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        if cfg.max_frames_per_epoch:
            order = order[:cfg.max_frames_per_epoch]
        snapshot = [[p.copy() for p in branch.parameter_arrays()] for branch in model.branches]
        optimizer_snapshot = copy.deepcopy(optimizer)
        for _ in range(MAX_HALVINGS):
            train_loss = run_epoch(epoch, order)
            if train_loss <= STABILITY_MARGIN * previous:
                break
            lr = optimizer.lr * 0.5
            logger.warning("recon epoch %d: training loss rose from %.4f to %.4f, "
                           "retrying with lr %g", epoch, previous, train_loss, lr)
            _restore(model, snapshot)
            optimizer = copy.deepcopy(optimizer_snapshot)
            optimizer.lr = lr
        else:
            logger.warning("recon epoch %d: no stable step after %d halvings, parameters kept",
                           epoch, MAX_HALVINGS)
            _restore(model, snapshot)
            optimizer = copy.deepcopy(optimizer_snapshot)
            train_loss = previous
        report(epoch, train_loss)
        previous = train_loss
        optimizer.lr *= cfg.lr_decay

    model.metadata.update({
        key: str(value) for key, value in {
            **metadata,
            "epochs": cfg.epochs,
            "train_frames": n,
            "training_seed": cfg.seed,
            "context": context,
        }.items()
    })
    return model, log
