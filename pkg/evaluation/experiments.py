"""
Speaker identification and emotion recognition experiments on a trained
cascade.
"""

import logging

import numpy as np
from django.conf import settings
from tqdm import tqdm

from cascade.factors import Cascade, utterance_dvector
from core.exceptions import CascadeMismatchError, ProtocolError
from networks.configs import COND_LING
from networks.inference import emotion_outputs

from .metrics import LEVEL_FRAME, LEVEL_UTTERANCE, emotion_metrics, top1_identification

logger = logging.getLogger(__name__)

SYSTEM_IDF = "idf"
SYSTEM_CDF = "cdf"
SYSTEM_CHOICES = [(SYSTEM_IDF, "idf"), (SYSTEM_CDF, "cdf")]


def _speaker_cascade(system, speaker_net, phone_net):
    cascade = Cascade(phone_net if system == SYSTEM_CDF else None, speaker_net)
    conditioned = COND_LING in cascade.conditioning(speaker_net)
    if conditioned != (system == SYSTEM_CDF):
        raise CascadeMismatchError(
            f"cascade mismatch: a '{speaker_net.metadata.get('conditioning')}' speaker net "
            f"cannot run the {system} system"
        )
    return cascade


def run_sre_experiment(manifest, protocol, system, speaker_net, fbank_archive, phone_net=None,
                       renormalize=True):
    """
    Top-1 identification per protocol condition.

    Each enrollment d-vector averages the frame features of all enrollment
    utterances of a speaker; each test d-vector averages the frame features
    of one test segment, with the segment run through the cascade on its
    own (q included).

    Args:
        system (str): "idf" (fbank only) or "cdf" (fbank and q).
        phone_net (Network | None): Required by the CDF system.

    Returns:
        list[TrialResult]: One per condition, in protocol order.

    Raises:
        CascadeMismatchError: The speaker net's conditioning does not match
            `system`.
        ProtocolError: A protocol utterance is missing from the manifest.
    """
    cascade = _speaker_cascade(system, speaker_net, phone_net)
    needed = [u for pool in protocol.enrollment.values() for u in pool]
    for utt_id in needed + [t.utt_id for t in protocol.tests]:
        if utt_id not in manifest:
            raise ProtocolError(f"protocol error: {utt_id} is not in the manifest")

    hide = not settings.CDF["SHOW_PROGRESS"]
    enrolled = {}
    for speaker in tqdm(protocol.speakers, desc=f"enroll {system}", disable=hide):
        features = [cascade.s(fbank_archive.read(u)) for u in protocol.enrollment[speaker]]
        enrolled[speaker] = utterance_dvector(np.concatenate(features), renormalize)

    results = []
    cache = {}
    for condition in protocol.conditions:
        trials = []
        for segment in tqdm(protocol.tests_for(condition), desc=f"{condition} {system}", disable=hide):
            if segment.utt_id not in cache:
                cache[segment.utt_id] = fbank_archive.read(segment.utt_id)
            frames = cache[segment.utt_id][segment.start_frame:segment.end_frame]
            trials.append((utterance_dvector(cascade.s(frames), renormalize), segment.speaker_id))
        result = top1_identification(enrolled, trials, condition)
        logger.info("%s %s: %d/%d correct, IDR %.2f%%", system, condition,
                    result.n_correct, result.n_trials, result.idr_percent)
        results.append(result)
    return results


def emotion_posteriors(cascade, records, fbank_archive):
    """
    Frame posteriors of the cascade's AER net over `records`.

    Returns:
        tuple: (posteriors [N x K], labels [N], utterance id per frame)
    """
    posteriors, labels, utterances = [], [], []
    for record in tqdm(records, desc="aer", disable=not settings.CDF["SHOW_PROGRESS"]):
        inputs = cascade.emotion_inputs(fbank_archive.read(record.utt_id))
        frame_posteriors, _ = emotion_outputs(cascade.aer_net, inputs)
        posteriors.append(frame_posteriors)
        labels.append(np.full(frame_posteriors.shape[0], record.emotion_id))
        utterances.extend([record.utt_id] * frame_posteriors.shape[0])
    return np.concatenate(posteriors), np.concatenate(labels), utterances


def run_aer_experiment(cascade, records, fbank_archive):
    """
    Frame- and utterance-level emotion reports of one AER system.

    Returns:
        dict[str, EmotionReport]: Keyed "frame" and "utterance".
    """
    posteriors, labels, utterances = emotion_posteriors(cascade, records, fbank_archive)
    return {
        LEVEL_FRAME: emotion_metrics(posteriors, labels, LEVEL_FRAME),
        LEVEL_UTTERANCE: emotion_metrics(posteriors, labels, LEVEL_UTTERANCE, utterances),
    }
