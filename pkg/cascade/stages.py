"""
Training of the three cascade stages.

The phone stage learns q from fbank; the speaker stage learns a CT-DNN on
fbank (IDF) or [fbank; q] (CDF); the emotion stage learns the AER net on
[fbank; q; s] restricted to the requested conditioning factors.
"""

import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np
from django.conf import settings

from core.exceptions import CascadeOrderError, LabelError
from core.seeds import derive_seed
from networks.builders import build_aer_net, build_ctdnn, build_phone_net
from networks.configs import COND_LING, COND_SPK, conditioning_label
from networks.inference import meta_int
from nncore.checkpoint import load_checkpoint
from synthdata.specs import SPLIT_DEV, SPLIT_TRAIN

from .configs import (
    STAGE_EMOTION,
    STAGE_PHONE,
    STAGE_SPEAKER,
    UPSTREAM_PHONE,
    UPSTREAM_SPEAKER,
    system_name,
)
from .datasets import WindowDataset
from .factors import ALIGN_CONTEXT_KEY, Cascade
from .training import TrainingLog, fit

logger = logging.getLogger(__name__)


def corpus_hash(manifest):
    return hashlib.sha256(manifest.to_lines().encode("utf-8")).hexdigest()


def load_upstream(cfg, align_context=None):
    """
    Load the upstream checkpoints a stage config asks for.

    `align_context` fixes the factor alignment of an emotion stage that has
    no speaker net to take it from.

    Raises:
        CascadeOrderError: A conditioning factor's checkpoint is not given
            or does not exist.
    """
    required = set()
    if COND_LING in cfg.conditioning:
        required.add(UPSTREAM_PHONE)
    if COND_SPK in cfg.conditioning:
        required.add(UPSTREAM_SPEAKER)
    loaded = {}
    for key in (UPSTREAM_PHONE, UPSTREAM_SPEAKER):
        path = cfg.upstream.get(key)
        if path and Path(path).is_file():
            loaded[key] = load_checkpoint(path)
        elif key in required:
            raise CascadeOrderError(
                f"cascade order violation: the {cfg.stage} stage conditioned on "
                f"'{conditioning_label(cfg.conditioning)}' needs a {key} checkpoint"
                + (f" at {path}" if path else "")
            )
    phone_net = loaded.get(UPSTREAM_PHONE)
    speaker_net = loaded.get(UPSTREAM_SPEAKER) if COND_SPK in cfg.conditioning else None
    if cfg.stage == STAGE_SPEAKER:
        return Cascade(phone_net if COND_LING in cfg.conditioning else None)
    return Cascade(phone_net, speaker_net, align_context=align_context)


def _label_map(values, what):
    if not values:
        raise LabelError(f"label error: the train split has no {what} labels")
    return {value: index for index, value in enumerate(values)}


def _lookup(mapping, value, what, utt_id):
    try:
        return mapping[value]
    except KeyError:
        raise LabelError(f"label error: {what} '{value}' of {utt_id} is absent from the train split") from None


def _check_range(labels, n_outputs, what, utt_id):
    if labels.size and (labels.min() < 0 or labels.max() >= n_outputs):
        raise LabelError(
            f"label error: {utt_id} has {what} {int(labels.max())} outside a {n_outputs}-class output"
        )


def _map_records(records, job):
    workers = settings.CDF["FEATURE_WORKERS"]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(job, records))


class _StageData:
    """Per-stage network construction and per-utterance inputs and labels."""

    def __init__(self, cfg, manifest, fbank_archive, network_config, cascade):
        self.cfg = cfg
        self.manifest = manifest
        self.fbank_archive = fbank_archive
        self.cascade = cascade
        self.fbank_dim = fbank_archive.read(manifest.split(SPLIT_TRAIN)[0].utt_id).shape[1]
        self.network_config = network_config

    def build(self, seed):
        raise NotImplementedError

    def example(self, record):
        raise NotImplementedError

    def dataset(self, sequences, labels):
        raise NotImplementedError


class _PhoneData(_StageData):

    def build(self, seed):
        self.network_config = replace(self.network_config, fbank_dim=self.fbank_dim)
        self.network = build_phone_net(self.network_config, seed)
        return self.network

    def example(self, record):
        labels = record.phone_labels()
        _check_range(labels, self.network_config.n_phones, "phone", record.utt_id)
        return self.fbank_archive.read(record.utt_id), labels

    def dataset(self, sequences, labels):
        return WindowDataset(sequences, labels, context=meta_int(self.network, "context"),
                             left=meta_int(self.network, "left"), right=meta_int(self.network, "right"))


class _SpeakerData(_StageData):

    def build(self, seed):
        self.speakers = _label_map(self.manifest.speakers(SPLIT_TRAIN), "speaker")
        ling_dim = meta_int(self.cascade.phone_net, "n_outputs") if self.cascade.phone_net else 0
        self.network_config = replace(self.network_config, fbank_dim=self.fbank_dim,
                                      ling_dim=ling_dim, n_speakers=len(self.speakers))
        self.network = build_ctdnn(self.network_config, seed)
        return self.network

    def example(self, record):
        frames = self.fbank_archive.read(record.utt_id)
        if self.cascade.phone_net is not None:
            frames = np.hstack([frames, self.cascade.q(frames)])
        label = _lookup(self.speakers, record.speaker_id, "speaker", record.utt_id)
        return frames, np.full(frames.shape[0], label)

    def dataset(self, sequences, labels):
        return WindowDataset(sequences, labels, context=meta_int(self.network, "context"),
                             channel=True)


class _EmotionData(_StageData):

    def build(self, seed):
        cascade = self.cascade
        ling_dim = meta_int(cascade.phone_net, "n_outputs") if COND_LING in self.cfg.conditioning else 0
        spk_dim = meta_int(cascade.speaker_net, "feature_dim") if COND_SPK in self.cfg.conditioning else 0
        self.network_config = replace(self.network_config, fbank_dim=self.fbank_dim,
                                      ling_dim=ling_dim, spk_dim=spk_dim)
        self.network = build_aer_net(self.network_config, seed)
        self.network.metadata[ALIGN_CONTEXT_KEY] = str(cascade.context)
        cascade.aer_net = self.network
        return self.network

    def example(self, record):
        inputs = self.cascade.emotion_inputs(self.fbank_archive.read(record.utt_id))
        labels = np.full(inputs.shape[0], record.emotion_id)
        _check_range(labels, self.network_config.n_emotions, "emotion", record.utt_id)
        return inputs, labels

    def dataset(self, sequences, labels):
        return WindowDataset(sequences, labels, context=meta_int(self.network, "context"),
                             left=meta_int(self.network, "left"), right=meta_int(self.network, "right"))


STAGE_DATA = {
    STAGE_PHONE: _PhoneData,
    STAGE_SPEAKER: _SpeakerData,
    STAGE_EMOTION: _EmotionData,
}


def train_stage(cfg, manifest, fbank_archive, network_config, log_path=None, metadata=None,
                align_context=None):
    """
    Train one cascade stage on the manifest's train split.

    Args:
        cfg (StageConfig): Stage, conditioning, schedule and upstream paths.
        manifest (CorpusManifest): Corpus with train and (optionally) dev splits.
        fbank_archive (FeatureArchive): Fbank records of every utterance.
        network_config: `PhoneNetConfig`, `CtdnnConfig` or `AerNetConfig`;
            input and output widths are filled in from the data.
        log_path (Path | None): JSON-lines training log destination.
        metadata (dict | None): Extra checkpoint and log fields, such as
            config_hash and version.
        align_context (int | None): Frame context the emotion stage aligns its
            inputs to when it is not conditioned on s; recorded in the AER
            checkpoint.

    Returns:
        tuple: (Network, TrainingLog)

    Raises:
        CascadeOrderError: An upstream checkpoint for a conditioning factor
            is missing.
        LabelError: A label is outside the network's classes or absent from
            the train split.
    """
    cascade = load_upstream(cfg, align_context)
    train_records = manifest.split(SPLIT_TRAIN)
    if not train_records:
        raise LabelError("label error: the manifest has no train split")
    data = STAGE_DATA[cfg.stage](cfg, manifest, fbank_archive, network_config, cascade)
    network = data.build(derive_seed(cfg.seed, "init"))
    system = system_name(cfg.stage, cfg.conditioning)
    metadata = dict(metadata or {})
    log = TrainingLog(log_path, {"stage": cfg.stage, "system": system, **metadata})

    train = list(zip(*_map_records(train_records, data.example)))
    train_set = data.dataset(*train)
    dev_records = manifest.split(SPLIT_DEV)
    dev_set = data.dataset(*zip(*_map_records(dev_records, data.example))) if dev_records else None
    missing = meta_int(network, "n_outputs") - train_set.n_classes_seen
    if missing > 0:
        logger.warning("%s: %d output classes have no training frames", system, missing)
    logger.info("Training %s (%s): %d train windows, %d dev windows, %d parameters",
                cfg.stage, system, len(train_set), len(dev_set) if dev_set else 0,
                network.n_parameters())

    fit(network, train_set, dev_set, cfg, log, desc=f"{cfg.stage}:{system}")
    network.metadata.update({
        key: str(value) for key, value in {
            **metadata,
            "stage": cfg.stage,
            "system": system,
            "epochs": cfg.epochs,
            "train_frames": len(train_set),
            "training_seed": cfg.seed,
            "corpus_hash": corpus_hash(manifest),
        }.items()
    })
    return network, log
