"""
Corpus manifest: one JSON object per line, UTF-8, fields in this order:

    utt_id, wav_path, speaker_id, emotion_id, split, n_frames, phone_segments

`wav_path` is relative to the manifest's directory and `phone_segments` is a
list of [phone_id, start_frame, end_frame] tiling [0, n_frames).
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from core.exceptions import ArchiveFormatError, WriteError
from .specs import SPLIT_EVAL, SPLIT_TRAIN, SPLITS

MANIFEST_NAME = "manifest.jsonl"


@dataclass(frozen=True)
class UtteranceRecord:
    utt_id: str
    wav_path: str
    speaker_id: str
    emotion_id: int
    split: str
    n_frames: int
    phone_segments: tuple

    def __post_init__(self):
        object.__setattr__(
            self, "phone_segments", tuple(tuple(int(v) for v in s) for s in self.phone_segments)
        )

    def validate(self):
        if self.split not in SPLITS:
            raise ArchiveFormatError(f"{self.utt_id}: unknown split '{self.split}'")
        position = 0
        for phone_id, start, end in self.phone_segments:
            if start != position or end <= start:
                raise ArchiveFormatError(
                    f"{self.utt_id}: phone segments must tile the utterance without gaps"
                )
            position = end
        if position != self.n_frames:
            raise ArchiveFormatError(
                f"{self.utt_id}: segments cover {position} of {self.n_frames} frames"
            )

    def phone_labels(self):
        """Per-frame phone ids, length n_frames."""
        labels = np.empty(self.n_frames, dtype=np.int64)
        for phone_id, start, end in self.phone_segments:
            labels[start:end] = phone_id
        return labels

    def to_dict(self):
        return {
            "utt_id": self.utt_id,
            "wav_path": self.wav_path,
            "speaker_id": self.speaker_id,
            "emotion_id": self.emotion_id,
            "split": self.split,
            "n_frames": self.n_frames,
            "phone_segments": [list(s) for s in self.phone_segments],
        }


class CorpusManifest:
    """
    Ordered utterance records of one corpus.

    Attributes:
        root (Path): Directory the relative WAV paths resolve against.
        records (list[UtteranceRecord]): In generation order.

    Example:
        manifest = CorpusManifest.read(workspace / "corpus" / "manifest.jsonl")
        train = manifest.split("train")
    """

    def __init__(self, records, root="."):
        self.records = list(records)
        self.root = Path(root)
        self._by_id = {r.utt_id: r for r in self.records}
        if len(self._by_id) != len(self.records):
            raise ArchiveFormatError("duplicate utterance ids in manifest")

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, utt_id):
        return self._by_id[utt_id]

    def __contains__(self, utt_id):
        return utt_id in self._by_id

    def split(self, name, speakers=None):
        return [
            r for r in self.records
            if r.split == name and (speakers is None or r.speaker_id in speakers)
        ]

    def speakers(self, split=None):
        return sorted({r.speaker_id for r in self.records if split is None or r.split == split})

    def emotions(self):
        return sorted({r.emotion_id for r in self.records})

    def sre_speakers(self):
        """Eval-split speakers that never appear in the train split."""
        train = set(self.speakers(SPLIT_TRAIN))
        return [s for s in self.speakers(SPLIT_EVAL) if s not in train]

    def wav_path(self, record):
        return self.root / record.wav_path

    def to_lines(self):
        return "".join(json.dumps(r.to_dict(), ensure_ascii=False) + "\n" for r in self.records)

    def write(self, path=None):
        path = Path(path) if path else self.root / MANIFEST_NAME
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(self.to_lines(), encoding="utf-8")
        except OSError as exc:
            raise WriteError(f"write error: {path}: {exc}") from exc
        return path

    @classmethod
    def from_lines(cls, text, root="."):
        records = []
        for number, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                record = UtteranceRecord(**json.loads(line))
            except (TypeError, ValueError) as exc:
                raise ArchiveFormatError(f"manifest line {number}: {exc}") from exc
            record.validate()
            records.append(record)
        return cls(records, root)

    @classmethod
    def read(cls, path):
        path = Path(path)
        if not path.is_file():
            raise ArchiveFormatError(f"missing manifest {path}")
        return cls.from_lines(path.read_text(encoding="utf-8"), root=path.parent)
