"""
Speaker-recognition trial layout: per speaker an enrollment pool of whole
utterances and, for every requested length, disjoint test segments cut from
the remaining utterances.
"""

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from core.exceptions import ArchiveFormatError, ProtocolInfeasibleError, WriteError
from core.seeds import derive_seed
from dsp.containers import FrameConfig


def condition_label(enroll_seconds, n_frames):
    """C(30-20f): 30 s enrollment, 20-frame tests."""
    return f"C({enroll_seconds:g}-{n_frames}f)"


@dataclass(frozen=True)
class TrialSegment:
    condition: str
    speaker_id: str
    utt_id: str
    start_frame: int
    n_frames: int

    @property
    def end_frame(self):
        return self.start_frame + self.n_frames


@dataclass
class SreProtocol:
    """
    Attributes:
        enrollment (dict[str, list[str]]): Speaker id -> enrollment utt ids.
        tests (list[TrialSegment]): Grouped by condition, then speaker.
    """

    enroll_seconds: float
    test_frames: tuple
    speakers: list
    enrollment: dict
    tests: list = field(default_factory=list)

    @property
    def conditions(self):
        return [condition_label(self.enroll_seconds, n) for n in self.test_frames]

    def tests_for(self, condition):
        return [t for t in self.tests if t.condition == condition]

    def to_dict(self):
        return {
            "enroll_seconds": self.enroll_seconds,
            "test_frames": list(self.test_frames),
            "speakers": list(self.speakers),
            "enrollment": self.enrollment,
            "tests": [asdict(t) for t in self.tests],
        }

    @classmethod
    def from_dict(cls, data):
        try:
            return cls(
                enroll_seconds=float(data["enroll_seconds"]),
                test_frames=tuple(int(n) for n in data["test_frames"]),
                speakers=list(data["speakers"]),
                enrollment={k: list(v) for k, v in data["enrollment"].items()},
                tests=[TrialSegment(**t) for t in data["tests"]],
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ArchiveFormatError(f"malformed protocol: {exc}") from exc

    def write(self, path):
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(json.dumps(self.to_dict(), indent=1), encoding="utf-8")
        except OSError as exc:
            raise WriteError(f"write error: {path}: {exc}") from exc
        return path

    @classmethod
    def read(cls, path):
        path = Path(path)
        if not path.is_file():
            raise ArchiveFormatError(f"missing protocol {path}")
        return cls.from_dict(json.loads(path.read_text(encoding="utf-8")))


def make_sre_protocol(manifest, enroll_seconds=30.0, test_frames_list=(20, 50, 100),
                      seed=0, tests_per_speaker=20, frame_config=None):
    """
    Build enrollment pools and test segments for the SRE speakers.

    Enrollment takes whole utterances in a seeded order until their frames
    reach `enroll_seconds`; tests are consecutive non-overlapping cuts of the
    utterances left over, so enrollment and test audio never overlap.

    Raises:
        ProtocolInfeasibleError: Fewer than two SRE speakers, or a speaker
            without enough audio for enrollment or for some test length.
    """
    frame_config = frame_config or FrameConfig()
    frames_per_second = frame_config.sample_rate_hz / frame_config.frame_shift_samples
    enroll_frames = int(round(enroll_seconds * frames_per_second))
    speakers = manifest.sre_speakers()
    if len(speakers) < 2:
        raise ProtocolInfeasibleError(
            f"protocol infeasible: {len(speakers)} eval speakers outside the train split"
        )

    enrollment = {}
    tests = []
    leftovers = {}
    for speaker in speakers:
        records = sorted(manifest.split("eval", speakers={speaker}), key=lambda r: r.utt_id)
        order = np.random.default_rng(derive_seed(seed, f"sre:{speaker}")).permutation(len(records))
        pool, total = [], 0
        remaining = [records[i] for i in order]
        while remaining and total < enroll_frames:
            record = remaining.pop(0)
            pool.append(record.utt_id)
            total += record.n_frames
        if total < enroll_frames or not remaining:
            raise ProtocolInfeasibleError(
                f"protocol infeasible: {speaker} has {total} enrollment frames of "
                f"{enroll_frames} and {len(remaining)} utterances for testing"
            )
        enrollment[speaker] = pool
        leftovers[speaker] = sorted(remaining, key=lambda r: r.utt_id)

    for n_frames in test_frames_list:
        condition = condition_label(enroll_seconds, n_frames)
        for speaker in speakers:
            cut = []
            for record in leftovers[speaker]:
                for start in range(0, record.n_frames - n_frames + 1, n_frames):
                    if len(cut) == tests_per_speaker:
                        break
                    cut.append(TrialSegment(condition, speaker, record.utt_id, start, n_frames))
            if not cut:
                raise ProtocolInfeasibleError(
                    f"protocol infeasible: {speaker} has no utterance of {n_frames} frames left for testing"
                )
            tests.extend(cut)

    return SreProtocol(
        enroll_seconds=float(enroll_seconds),
        test_frames=tuple(test_frames_list),
        speakers=speakers,
        enrollment=enrollment,
        tests=tests,
    )
