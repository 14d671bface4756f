"""
Factor inference through a trained cascade.

The phone net yields q on every frame; the CT-DNN yields s on the
T'' = T - context + 1 frames with full context, row j belonging to frame
j + left; the AER net yields e. Every factor sequence is trimmed to those
T'' frames so q, s and e share time indices.
"""

import logging
from dataclasses import dataclass

import numpy as np

from core.exceptions import CascadeMismatchError, CascadeOrderError, NoFramesError
from dsp.containers import FrameConfig
from dsp.frontend import fbank, length_normalize
from networks.configs import COND_LING, COND_SPK, MODEL_AER, MODEL_CTDNN, MODEL_PHONE, parse_conditioning
from networks.inference import (
    emotion_outputs,
    meta_int,
    phone_posteriors,
    require_kind,
    speaker_features,
)

logger = logging.getLogger(__name__)

# Alignment when neither a CT-DNN nor an AER checkpoint fixes it.
DEFAULT_ALIGN_CONTEXT = 20
ALIGN_CONTEXT_KEY = "align_context"


@dataclass(frozen=True, eq=False)
class FactorFrame:
    q: np.ndarray
    s: np.ndarray
    e: np.ndarray


@dataclass(frozen=True, eq=False)
class FactorSequence:
    """
    Aligned factors of one utterance.

    Attributes:
        q (np.ndarray): [T'' x n_phones] phone posteriors.
        s (np.ndarray): [T'' x feature_dim] unit-norm speaker features.
        e (np.ndarray): [T'' x factor_dim] emotion factors.
        emotion_posteriors (np.ndarray): [T'' x n_emotions].
        start_frame (int): Input frame of row 0.
    """

    q: np.ndarray
    s: np.ndarray
    e: np.ndarray
    emotion_posteriors: np.ndarray
    start_frame: int

    def __len__(self):
        return int(self.q.shape[0])

    def __iter__(self):
        for q, s, e in zip(self.q, self.s, self.e):
            yield FactorFrame(q, s, e)

    def __getitem__(self, index):
        return FactorFrame(self.q[index], self.s[index], self.e[index])

    def stacked(self):
        """[T'' x (n_phones + feature_dim + factor_dim)] rows [q; s; e]."""
        return np.hstack([self.q, self.s, self.e])


def _require_match(actual, expected, what):
    if actual != expected:
        raise CascadeMismatchError(f"cascade mismatch: {what} is {actual}, expected {expected}")


class Cascade:
    """
    A consistent set of phone, speaker and emotion checkpoints.

    Any network may be absent as long as nothing that is present needs it.
    Construction checks that each conditioned network's input widths match
    the networks that feed it.

    Factors are aligned to the speaker net's context. Without a speaker net
    the context comes from `align_context`, then from the AER checkpoint's
    recorded alignment, then from `DEFAULT_ALIGN_CONTEXT`.

    Raises:
        CascadeOrderError: A present network is conditioned on a factor whose
            network is absent.
        CascadeMismatchError: Widths of consecutive networks disagree.
    """

    def __init__(self, phone_net=None, speaker_net=None, aer_net=None, align_context=None):
        self.phone_net = phone_net
        self.speaker_net = speaker_net
        self.aer_net = aer_net
        if phone_net is not None:
            require_kind(phone_net, MODEL_PHONE)
        if speaker_net is not None:
            require_kind(speaker_net, MODEL_CTDNN)
            self._check_conditioned(speaker_net, "speaker net")
        if aer_net is not None:
            require_kind(aer_net, MODEL_AER)
            self._check_conditioned(aer_net, "AER net")
            if COND_SPK in self.conditioning(aer_net):
                if speaker_net is None:
                    raise CascadeOrderError(
                        "cascade order violation: the AER net is conditioned on s but no speaker checkpoint is given"
                    )
                _require_match(meta_int(aer_net, "spk_dim"), meta_int(speaker_net, "feature_dim"),
                               "AER speaker-factor width")
        recorded = aer_net.metadata.get(ALIGN_CONTEXT_KEY) if aer_net is not None else None
        self.align_context = int(align_context or recorded or DEFAULT_ALIGN_CONTEXT)
        if speaker_net is not None:
            if recorded is not None:
                _require_match(int(recorded), meta_int(speaker_net, "context"), "AER alignment context")
            if align_context is not None:
                _require_match(int(align_context), meta_int(speaker_net, "context"), "alignment context")

    @staticmethod
    def conditioning(network):
        return parse_conditioning(network.metadata.get("conditioning", "none"))

    def _check_conditioned(self, network, name):
        if self.phone_net is not None:
            _require_match(meta_int(network, "fbank_dim"), meta_int(self.phone_net, "input_dim"),
                           f"{name} fbank width")
        if COND_LING not in self.conditioning(network):
            return
        if self.phone_net is None:
            raise CascadeOrderError(
                f"cascade order violation: the {name} is conditioned on q but no phone checkpoint is given"
            )
        _require_match(meta_int(network, "ling_dim"), meta_int(self.phone_net, "n_outputs"),
                       f"{name} phone-posterior width")

    @property
    def context(self):
        if self.speaker_net is not None:
            return meta_int(self.speaker_net, "context")
        return self.align_context

    @property
    def offset(self):
        if self.speaker_net is not None:
            return meta_int(self.speaker_net, "left")
        return (self.align_context - 1) // 2

    def aligned_length(self, n_frames):
        return n_frames - self.context + 1

    def q(self, frames):
        return phone_posteriors(self.phone_net, frames)

    def s(self, frames, q=None):
        """
        Speaker features for the aligned frames, fed [fbank; q] when the
        speaker net is conditioned on q.
        """
        if COND_LING in self.conditioning(self.speaker_net):
            q = self.q(frames) if q is None else q
            frames = np.hstack([frames, q])
        return speaker_features(self.speaker_net, frames)

    def emotion_inputs(self, frames, q=None, s=None):
        """
        [T'' x (fbank + ling + spk)] AER input rows for the aligned frames.
        """
        conditioning = self.conditioning(self.aer_net)
        n_aligned = self.aligned_length(frames.shape[0])
        if n_aligned <= 0:
            raise NoFramesError(
                f"no frames: {frames.shape[0]} frames leave nothing after a {self.context}-frame alignment"
            )
        aligned = slice(self.offset, self.offset + n_aligned)
        columns = [frames[aligned]]
        needs_q = COND_LING in conditioning or (
            COND_SPK in conditioning and COND_LING in self.conditioning(self.speaker_net)
        )
        if needs_q:
            q = self.q(frames) if q is None else q
        if COND_LING in conditioning:
            columns.append(q[aligned])
        if COND_SPK in conditioning:
            columns.append(self.s(frames, q) if s is None else s)
        return np.hstack(columns)

    def factorize_frames(self, frames):
        """
        Factor sequence of an fbank matrix.

        Raises:
            CascadeOrderError: Any of the three networks is missing.
            UtteranceTooShortError: Fewer frames than the CT-DNN context.
        """
        if self.phone_net is None or self.speaker_net is None or self.aer_net is None:
            raise CascadeOrderError(
                "cascade order violation: factorization needs phone, speaker and AER checkpoints"
            )
        frames = np.asarray(getattr(frames, "frames", frames), dtype=np.float64)
        q = self.q(frames)
        s = self.s(frames, q)
        posteriors, e = emotion_outputs(self.aer_net, self.emotion_inputs(frames, q, s))
        aligned = slice(self.offset, self.offset + s.shape[0])
        return FactorSequence(q=q[aligned], s=s, e=e, emotion_posteriors=posteriors,
                              start_frame=self.offset)


def factorize(waveform, phone_net, speaker_net, aer_net, frame_config=None):
    """
    Factorize one utterance into aligned (q, s, e) frames.

    Args:
        waveform (Waveform): Input audio.
        phone_net, speaker_net, aer_net (Network): A consistent cascade.

    Returns:
        FactorSequence: T'' = T - context + 1 frames.

    Raises:
        CascadeMismatchError: Checkpoint widths do not chain.
    """
    cascade = Cascade(phone_net, speaker_net, aer_net)
    return cascade.factorize_frames(fbank(waveform, frame_config or FrameConfig()))


def utterance_dvector(frame_features, renormalize=True):
    """
    Mean of frame-level speaker features, length-normalized unless
    `renormalize` is false.

    Raises:
        NoFramesError: No frames.
    """
    frame_features = np.asarray(frame_features, dtype=np.float64)
    if frame_features.ndim != 2 or frame_features.shape[0] == 0:
        raise NoFramesError("no frames")
    mean = frame_features.mean(axis=0)
    return length_normalize(mean) if renormalize else mean
