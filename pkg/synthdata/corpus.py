"""
Corpus generation: speakers, emotions and splits, rendered to WAV files.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from django.conf import settings
from tqdm import tqdm

from core.exceptions import WriteError
from core.seeds import derive_seed
from dsp.containers import FrameConfig, Waveform
from dsp.wavio import write_wav

from .manifest import CorpusManifest, UtteranceRecord
from .specs import SPLIT_DEV, SPLIT_EVAL, SPLIT_TRAIN
from .synthesis import (
    draw_segments,
    emotion_profiles,
    phone_profiles,
    speaker_profiles,
    synthesize,
)

logger = logging.getLogger(__name__)


def speaker_name(index):
    return f"spk{index:02d}"


def block_split(utterance_index, spec):
    """
    Split of a training speaker's utterance: emotions cycle within blocks,
    the last block goes to eval and the one before to dev when there are at
    least three blocks.
    """
    n_blocks = -(-spec.utterances_per_speaker // spec.n_emotions)
    block = utterance_index // spec.n_emotions
    if n_blocks >= 3 and block == n_blocks - 1:
        return SPLIT_EVAL
    if n_blocks >= 3 and block == n_blocks - 2:
        return SPLIT_DEV
    return SPLIT_TRAIN


def plan_corpus(spec):
    """[(utt_id, speaker_index, emotion_id, split)] in manifest order."""
    plan = []
    for index in range(spec.total_speakers):
        eval_only = index >= spec.n_speakers
        count = spec.eval_utterances_per_speaker if eval_only else spec.utterances_per_speaker
        for u in range(count):
            split = SPLIT_EVAL if eval_only else block_split(u, spec)
            plan.append((f"{speaker_name(index)}_u{u:03d}", index, u % spec.n_emotions, split))
    return plan


def render_utterance(spec, utt_id, speaker, emotion, profiles, frame_config):
    """Deterministic in (spec.seed, utt_id) alone."""
    rng = np.random.default_rng(derive_seed(spec.seed, utt_id))
    segments = draw_segments(spec, rng)
    samples = synthesize(segments, speaker, emotion, profiles, frame_config, spec.noise_db, rng)
    return segments, Waveform(samples, spec.sample_rate)


def generate_corpus(spec, root, frame_config=None, workers=None):
    """
    Render every utterance of `spec` under `root` and write the manifest.

    Args:
        spec (SynthSpec): Corpus description.
        root (str | Path): Output directory; WAVs go to root/wav/.
        frame_config (FrameConfig): Frame-to-sample mapping.
        workers (int | None): Thread count, defaults to CDF["FEATURE_WORKERS"].

    Raises:
        WriteError: The directory or a file cannot be written.

    Returns:
        CorpusManifest
    """
    root = Path(root)
    frame_config = frame_config or FrameConfig(sample_rate_hz=spec.sample_rate)
    workers = workers or settings.CDF["FEATURE_WORKERS"]
    try:
        (root / "wav").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise WriteError(f"write error: {root}: {exc}") from exc

    speakers = speaker_profiles(spec)
    emotions = emotion_profiles(spec)
    phones = phone_profiles(spec)
    plan = plan_corpus(spec)

    def job(entry):
        utt_id, speaker_index, emotion_id, split = entry
        segments, waveform = render_utterance(
            spec, utt_id, speakers[speaker_index], emotions[emotion_id], phones, frame_config
        )
        wav_path = f"wav/{utt_id}.wav"
        write_wav(root / wav_path, waveform)
        return UtteranceRecord(
            utt_id=utt_id,
            wav_path=wav_path,
            speaker_id=speaker_name(speaker_index),
            emotion_id=emotion_id,
            split=split,
            n_frames=segments[-1][2],
            phone_segments=segments,
        )

    with ThreadPoolExecutor(max_workers=workers) as pool:
        records = list(tqdm(pool.map(job, plan), total=len(plan), desc="synth-data",
                            disable=not settings.CDF["SHOW_PROGRESS"]))
    manifest = CorpusManifest(records, root)
    manifest.write()
    logger.info("Generated %d utterances (%d speakers, %d emotions) in %s",
                len(records), spec.total_speakers, spec.n_emotions, root)
    return manifest
