"""
"CDN1" network checkpoints.

A `Network` (layer specs, parameters, metadata) is the in-memory checkpoint;
this module converts it to and from bytes. Layout, all little-endian:

    4 bytes   magic b"CDN1"
    u32       n_layers
    per layer:
        u32       kind tag
        ...       hyperparameters (u32 values; timedelay offsets as u32 count
                  plus i32 values; pnorm p as f64)
        u32       parameter value count
        f64 * n   parameters of the layer, concatenated in declaration order
    u32       n_metadata pairs, sorted by key
    per pair:  u32 key length, key UTF-8, u32 value length, value UTF-8
"""

import struct
from pathlib import Path

import numpy as np

from core.exceptions import CheckpointFormatError, WriteError
from .layers import LayerSpec
from .network import Network

MAGIC = b"CDN1"

KIND_TAGS = {
    "dense": 1,
    "conv2d": 2,
    "maxpool2d": 3,
    "timedelay": 4,
    "pnorm": 5,
    "relu": 6,
    "softmax": 7,
    "crop": 8,
}
TAG_KINDS = {tag: kind for kind, tag in KIND_TAGS.items()}

# u32 hyperparameters in wire order; timedelay and pnorm are special-cased.
_U32_FIELDS = {
    "dense": ("in_dim", "out_dim"),
    "conv2d": ("in_channels", "out_channels", "kernel_h", "kernel_w", "stride"),
    "maxpool2d": ("pool_h", "pool_w"),
    "crop": ("left", "right"),
    "relu": (),
    "softmax": (),
}

_U32 = struct.Struct("<I")
_I32 = struct.Struct("<i")
_F64 = struct.Struct("<d")


def _encode_hyper(spec):
    hyper = spec.hyper
    if spec.kind == "timedelay":
        offsets = hyper["offsets"]
        parts = [_U32.pack(len(offsets))]
        parts += [_I32.pack(o) for o in offsets]
        parts.append(_U32.pack(hyper["in_dim"]))
        return b"".join(parts)
    if spec.kind == "pnorm":
        return (_U32.pack(hyper["in_dim"]) + _U32.pack(hyper["group_size"])
                + _F64.pack(hyper.get("p", 2.0)))
    return b"".join(_U32.pack(hyper[name]) for name in _U32_FIELDS[spec.kind])


def _encode_text(text):
    raw = text.encode("utf-8")
    return _U32.pack(len(raw)) + raw


def dumps(network):
    """Serialize a network to "CDN1" bytes."""
    parts = [MAGIC, _U32.pack(len(network.layers))]
    for layer in network.layers:
        spec = layer.spec()
        parts.append(_U32.pack(KIND_TAGS[spec.kind]))
        parts.append(_encode_hyper(spec))
        values = [np.ascontiguousarray(layer.params[name], dtype="<f8").ravel()
                  for name in layer.param_names]
        blob = np.concatenate(values) if values else np.zeros(0, dtype="<f8")
        parts.append(_U32.pack(blob.size))
        parts.append(blob.tobytes())
    metadata = sorted(network.metadata.items())
    parts.append(_U32.pack(len(metadata)))
    for key, value in metadata:
        parts.append(_encode_text(key))
        parts.append(_encode_text(value))
    return b"".join(parts)


class _Reader:

    def __init__(self, blob):
        self.blob = blob
        self.offset = 0

    def take(self, size):
        end = self.offset + size
        if end > len(self.blob):
            raise CheckpointFormatError("truncated checkpoint")
        chunk = self.blob[self.offset:end]
        self.offset = end
        return chunk

    def unpack(self, fmt):
        return fmt.unpack(self.take(fmt.size))[0]

    def text(self):
        try:
            return self.take(self.unpack(_U32)).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointFormatError(f"invalid metadata text: {exc}") from exc


def _decode_spec(reader):
    tag = reader.unpack(_U32)
    if tag not in TAG_KINDS:
        raise CheckpointFormatError(f"unknown layer tag {tag}")
    kind = TAG_KINDS[tag]
    if kind == "timedelay":
        count = reader.unpack(_U32)
        offsets = tuple(reader.unpack(_I32) for _ in range(count))
        return LayerSpec(kind, {"offsets": offsets, "in_dim": reader.unpack(_U32)})
    if kind == "pnorm":
        in_dim = reader.unpack(_U32)
        group_size = reader.unpack(_U32)
        return LayerSpec(kind, {"in_dim": in_dim, "group_size": group_size, "p": reader.unpack(_F64)})
    return LayerSpec(kind, {name: reader.unpack(_U32) for name in _U32_FIELDS[kind]})


def loads(blob):
    """
    Parse "CDN1" bytes into a `Network`.

    Raises:
        CheckpointFormatError: Bad magic, truncation, trailing bytes, an
            unknown layer tag, or a parameter count that does not match the
            layer spec.
    """
    reader = _Reader(bytes(blob))
    if reader.take(len(MAGIC)) != MAGIC:
        raise CheckpointFormatError("bad checkpoint magic")
    layers = []
    for index in range(reader.unpack(_U32)):
        spec = _decode_spec(reader)
        try:
            layer = spec.build()
        except ValueError as exc:
            raise CheckpointFormatError(f"layer {index}: {exc}") from exc
        shapes = layer.param_shapes()
        expected = int(sum(np.prod(shapes[name]) for name in layer.param_names))
        count = reader.unpack(_U32)
        if count != expected:
            raise CheckpointFormatError(
                f"layer {index} ({spec.kind}) has {count} parameter values, expected {expected}"
            )
        values = np.frombuffer(reader.take(8 * count), dtype="<f8").astype(np.float64)
        offset = 0
        for name in layer.param_names:
            size = int(np.prod(shapes[name]))
            layer.params[name] = values[offset:offset + size].reshape(shapes[name]).copy()
            offset += size
        layers.append(layer)
    metadata = {}
    for _ in range(reader.unpack(_U32)):
        key = reader.text()
        metadata[key] = reader.text()
    if reader.offset != len(reader.blob):
        raise CheckpointFormatError("trailing bytes after checkpoint metadata")
    return Network(layers, metadata)


def save_checkpoint(network, path):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(dumps(network))
    except OSError as exc:
        raise WriteError(f"write error: {path}: {exc}") from exc
    return path


def load_checkpoint(path):
    path = Path(path)
    if not path.is_file():
        raise CheckpointFormatError(f"missing checkpoint {path}")
    return loads(path.read_bytes())


