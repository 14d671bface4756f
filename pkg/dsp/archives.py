"""
"CDFF" feature records and per-utterance archive directories.

Record layout (little-endian):
    4 bytes   magic b"CDFF"
    u32       n_frames
    u32       dim
    f32 * n_frames * dim, row-major
"""

import struct
from pathlib import Path

import numpy as np

from core.exceptions import ArchiveFormatError, WriteError

MAGIC = b"CDFF"
_HEADER = struct.Struct("<4sII")


def encode_record(matrix):
    matrix = np.asarray(matrix)
    if matrix.ndim != 2:
        raise ArchiveFormatError(f"expected a matrix, got shape {matrix.shape}")
    n_frames, dim = matrix.shape
    body = np.ascontiguousarray(matrix, dtype="<f4").tobytes()
    return _HEADER.pack(MAGIC, n_frames, dim) + body


def decode_record(blob):
    """
    Parse one record; returns a float64 matrix.

    Raises:
        ArchiveFormatError: Bad magic or truncated payload.
    """
    if len(blob) < _HEADER.size:
        raise ArchiveFormatError("truncated record header")
    magic, n_frames, dim = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise ArchiveFormatError(f"bad magic {magic!r}")
    expected = _HEADER.size + 4 * n_frames * dim
    if len(blob) != expected:
        raise ArchiveFormatError(f"record size {len(blob)} != {expected}")
    values = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size)
    return values.reshape(n_frames, dim).astype(np.float64)


def write_record(path, matrix):
    try:
        Path(path).write_bytes(encode_record(matrix))
    except OSError as exc:
        raise WriteError(f"write error: {path}: {exc}") from exc


def read_record(path):
    return decode_record(Path(path).read_bytes())


class FeatureArchive:
    """
    A directory holding one "CDFF" record per utterance.

    Attributes:
        root (Path): Archive directory.
        suffix (str): File suffix, e.g. ".fbank.cdff".

    Example:
        archive = FeatureArchive(workspace / "features", "fbank")
        archive.write("spk00_u000", frames)
        frames = archive.read("spk00_u000")
    """

    def __init__(self, root, name):
        self.root = Path(root)
        self.name = name
        self.suffix = f".{name}.cdff"

    def path_for(self, utt_id):
        return self.root / f"{utt_id}{self.suffix}"

    def exists(self, utt_id):
        return self.path_for(utt_id).is_file()

    def write(self, utt_id, matrix):
        self.root.mkdir(parents=True, exist_ok=True)
        path = self.path_for(utt_id)
        write_record(path, matrix)
        return path

    def read(self, utt_id):
        path = self.path_for(utt_id)
        if not path.is_file():
            raise ArchiveFormatError(f"missing record {path}")
        return read_record(path)

    def utt_ids(self):
        return sorted(p.name[: -len(self.suffix)] for p in self.root.glob(f"*{self.suffix}"))
