"""
Configuration of the synthetic corpus and of the speaker-recognition protocol.
"""

from dataclasses import dataclass

SPLIT_TRAIN = "train"
SPLIT_DEV = "dev"
SPLIT_EVAL = "eval"
SPLITS = (SPLIT_TRAIN, SPLIT_DEV, SPLIT_EVAL)


@dataclass(frozen=True)
class SynthSpec:
    """
    Size and randomness of a synthetic corpus.

    Training speakers record `utterances_per_speaker` utterances each, cycled
    through the emotions and split into train/dev/eval by whole emotion
    blocks. Eval-only speakers appear in the eval split alone and feed the
    speaker-recognition protocol.

    Attributes:
        phones_per_utterance (tuple[int, int]): Inclusive range.
        phone_duration_frames (tuple[int, int]): Inclusive range, in frames.
        noise_db (float): Additive noise level relative to the signal RMS.
    """

    n_phones: int = 20
    n_speakers: int = 16
    n_emotions: int = 4
    utterances_per_speaker: int = 24
    phones_per_utterance: tuple = (8, 14)
    phone_duration_frames: tuple = (6, 14)
    sample_rate: int = 8000
    seed: int = 0
    n_eval_speakers: int = 16
    eval_utterances_per_speaker: int = 40
    noise_db: float = -40.0

    @property
    def total_speakers(self):
        return self.n_speakers + self.n_eval_speakers


@dataclass(frozen=True)
class ProtocolConfig:
    """
    Enrollment/test layout of the speaker-recognition trials.

    Attributes:
        enroll_seconds (float): Enrollment audio per speaker.
        test_frames (tuple[int]): One test condition per length.
        tests_per_speaker (int): Upper bound on test segments per condition.
    """

    enroll_seconds: float = 30.0
    test_frames: tuple = (20, 50, 100)
    tests_per_speaker: int = 20
    seed: int = 0
