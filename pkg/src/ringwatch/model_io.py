"""Binary model file format: round-trips a Network bit-for-bit.

Layout (all integers little-endian):
    magic            6 bytes  "RWNET1"
    format version   u16
    input_dim        u32
    n_hidden         u32, then u32 per hidden layer
    embed_dim        u32
    tau              f64
    seed             u64 (stored unsigned)
    vocabulary       u32 count, then per digraph: u32 byte length + UTF-8
    norm stats       u32 dim, f64[dim] means, f64[dim] stds
    layers           u32 count, then per layer, twice (weights then bias):
                     u32 rows, u32 cols, f64[rows*cols] row-major
"""

from __future__ import annotations

import struct

import numpy as np

from ringwatch.errors import BadMagic, ShapeMismatch, TruncatedFile, VersionMismatch
from ringwatch.features import VOCAB_SIZE, DigraphVocabulary, NormStats
from ringwatch.network import Network, NetworkConfig

MAGIC = b"RWNET1"
FORMAT_VERSION = 1
_EMPTY_SLOTS = ("",) * VOCAB_SIZE


class _Reader:
    def __init__(self, data: bytes) -> None:
        self._data = data
        self._pos = 0

    def take(self, n: int) -> bytes:
        if self._pos + n > len(self._data):
            raise TruncatedFile(
                f"need {n} bytes at offset {self._pos}, have {len(self._data) - self._pos}")
        out = self._data[self._pos:self._pos + n]
        self._pos += n
        return out

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self.take(8))[0]

    def f64_array(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * count), dtype="<f8").copy()

    @property
    def exhausted(self) -> bool:
        return self._pos == len(self._data)


def _pack_array(array: np.ndarray) -> bytes:
    if array.ndim == 1:
        rows, cols = 1, array.shape[0]
    else:
        rows, cols = array.shape
    return struct.pack("<II", rows, cols) + np.ascontiguousarray(
        array, dtype="<f8").tobytes()


def save_model(net: Network) -> bytes:
    """Serialize a network (with vocabulary and norm stats) to bytes."""
    cfg = net.config
    parts = [MAGIC, struct.pack("<H", FORMAT_VERSION)]
    parts.append(struct.pack("<II", cfg.input_dim, len(cfg.hidden_dims)))
    parts.append(struct.pack(f"<{len(cfg.hidden_dims)}I", *cfg.hidden_dims))
    parts.append(struct.pack("<I", cfg.embed_dim))
    parts.append(struct.pack("<d", net.tau))
    parts.append(struct.pack("<Q", cfg.seed & 0xFFFFFFFFFFFFFFFF))
    parts.append(struct.pack("<I", len(net.vocab.digraphs)))
    for name in net.vocab.digraphs:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
    stats = net.norm_stats
    if stats is None:
        raise ShapeMismatch("network has no norm stats to persist")
    parts.append(struct.pack("<I", stats.dim))
    parts.append(np.ascontiguousarray(stats.mean, dtype="<f8").tobytes())
    parts.append(np.ascontiguousarray(stats.std, dtype="<f8").tobytes())
    parts.append(struct.pack("<I", len(net.weights)))
    for w, b in zip(net.weights, net.biases):
        parts.append(_pack_array(w))
        parts.append(_pack_array(b))
    return b"".join(parts)


def load_model(data: bytes) -> Network:
    """Parse model bytes back into a Network; inverse of save_model."""
    reader = _Reader(data)
    if reader.take(len(MAGIC)) != MAGIC:
        raise BadMagic("not a ringwatch model file")
    version = reader.u16()
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"format version {version}, supported {FORMAT_VERSION}")

    input_dim = reader.u32()
    n_hidden = reader.u32()
    hidden = tuple(reader.u32() for _ in range(n_hidden))
    embed_dim = reader.u32()
    tau = reader.f64()
    seed = reader.u64()
    config = NetworkConfig(input_dim=input_dim, hidden_dims=hidden,
                           embed_dim=embed_dim, seed=seed)

    vocab_len = reader.u32()
    if vocab_len != len(_EMPTY_SLOTS):
        raise ShapeMismatch(f"vocabulary has {vocab_len} slots")
    digraphs = []
    for _ in range(vocab_len):
        raw_len = reader.u32()
        digraphs.append(reader.take(raw_len).decode("utf-8"))
    vocab = DigraphVocabulary(digraphs=tuple(digraphs))

    stats_dim = reader.u32()
    if stats_dim != input_dim:
        raise ShapeMismatch(f"norm stats dim {stats_dim} vs input_dim {input_dim}")
    stats = NormStats(mean=reader.f64_array(stats_dim), std=reader.f64_array(stats_dim))

    n_layers = reader.u32()
    expected_dims = config.layer_dims
    if n_layers != len(expected_dims) - 1:
        raise ShapeMismatch(f"{n_layers} layers, config implies {len(expected_dims) - 1}")
    weights: list[np.ndarray] = []
    biases: list[np.ndarray] = []
    for i in range(n_layers):
        rows, cols = reader.u32(), reader.u32()
        if (rows, cols) != (expected_dims[i], expected_dims[i + 1]):
            raise ShapeMismatch(
                f"layer {i} weights {rows}x{cols}, "
                f"expected {expected_dims[i]}x{expected_dims[i + 1]}")
        weights.append(reader.f64_array(rows * cols).reshape(rows, cols))
        b_rows, b_cols = reader.u32(), reader.u32()
        if (b_rows, b_cols) != (1, expected_dims[i + 1]):
            raise ShapeMismatch(f"layer {i} bias {b_rows}x{b_cols}")
        biases.append(reader.f64_array(b_cols))
    if not reader.exhausted:
        raise ShapeMismatch("trailing bytes after declared payload")
    return Network(config=config, weights=weights, biases=biases,
                   vocab=vocab, norm_stats=stats, tau=tau)
