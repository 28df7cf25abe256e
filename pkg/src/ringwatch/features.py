"""Fixed-length keystroke and mouse feature vectors plus normalization stats.

Keystroke vector (112 dims):
    [0:4]    dwell-time stats (mean, std, median, IQR), ms
    [4:8]    down-down flight-time stats, ms
    [8:28]   20-bin log-spaced dwell histogram, 10 ms - 1 s
    [28:48]  20-bin log-spaced flight histogram, 10 ms - 2 s
    [48:80]  mean down-down latency per vocabulary digraph, ms
    [80:112] per-digraph presence flags (1 iff seen >= N_MIN times)

Mouse vector (68 dims):
    [0:20]   stats (mean, std, median, IQR) for speed px/s, acceleration
             px/s^2, curvature rad/px, pause duration ms, click hold ms
    [20:36]  16-bin log-spaced speed histogram
    [36:52]  16-bin direction histogram over [-pi, pi)
    [52:68]  16-bin log-spaced curvature histogram

All features are computed from event deltas, so keystroke features are
invariant to uniform time translation and mouse features to uniform
screen translation. Extraction is deterministic and pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ringwatch.errors import (
    DimensionMismatch,
    EmptyCorpus,
    InsufficientKeystrokeData,
    InsufficientMouseData,
    TooFewSamples,
)
from ringwatch.session import (
    DEFAULT_POLICY,
    KeyEvent,
    SessionRecord,
    ValidationPolicy,
    match_key_events,
    validate_session,
)

KEYSTROKE_DIM = 112
MOUSE_DIM = 68
COMBINED_DIM = KEYSTROKE_DIM + MOUSE_DIM

VOCAB_SIZE = 32
N_MIN = 3  # occurrences before a digraph slot counts as present

CLIP_MS = (1.0, 5000.0)  # dwell/flight/latency samples clipped to this range
PAUSE_MS = 500.0  # gap between moves counted as a pause

DIGRAPH_SEP = "→"  # arrow in digraph names, e.g. "KeyT→KeyH"

EPS_STD = 1e-6

_DWELL_EDGES = np.geomspace(10.0, 1000.0, 21)
_FLIGHT_EDGES = np.geomspace(10.0, 2000.0, 21)
_SPEED_EDGES = np.geomspace(10.0, 10000.0, 17)
_DIRECTION_EDGES = np.linspace(-math.pi, math.pi, 17)
_CURVATURE_EDGES = np.geomspace(1e-3, 10.0, 17)


@dataclass(frozen=True)
class KeystrokeFeatures:
    vector: np.ndarray  # KEYSTROKE_DIM values


@dataclass(frozen=True)
class MouseFeatures:
    vector: np.ndarray  # MOUSE_DIM values


@dataclass(frozen=True)
class DigraphVocabulary:
    """Fixed 32-slot digraph list; unused slots hold empty strings."""

    digraphs: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.digraphs) != VOCAB_SIZE:
            raise DimensionMismatch(
                f"vocabulary needs {VOCAB_SIZE} slots, got {len(self.digraphs)}")


@dataclass(frozen=True)
class NormStats:
    """Per-dimension mean/std of the training split; std clamped to EPS_STD."""

    mean: np.ndarray
    std: np.ndarray

    @property
    def dim(self) -> int:
        return int(self.mean.shape[0])


def digraph_name(first_code: str, second_code: str) -> str:
    return f"{first_code}{DIGRAPH_SEP}{second_code}"


def _clip(samples: np.ndarray) -> np.ndarray:
    return np.clip(samples, CLIP_MS[0], CLIP_MS[1])


def _stats4(samples: np.ndarray) -> np.ndarray:
    """mean, population std, median, IQR; zeros for an empty channel."""
    if samples.size == 0:
        return np.zeros(4)
    q25, q50, q75 = np.percentile(samples, [25.0, 50.0, 75.0])
    return np.array([samples.mean(), samples.std(), q50, q75 - q25])


def _histogram(samples: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Normalized histogram; out-of-range samples clamp into the edge bins."""
    nbins = len(edges) - 1
    if samples.size == 0:
        return np.zeros(nbins)
    idx = np.searchsorted(edges, samples, side="right") - 1
    idx = np.clip(idx, 0, nbins - 1)
    counts = np.bincount(idx, minlength=nbins).astype(float)
    return counts / counts.sum()


def keystroke_timings(record: SessionRecord,
                      ) -> tuple[np.ndarray, np.ndarray, list[tuple[str, float]]]:
    """Dwell samples, flight samples, and (digraph, latency) samples, clipped.

    Only matched key pairs contribute; dropped events are excluded.
    """
    pairs, _ = match_key_events(record.key_events)
    dwells = _clip(np.array([up.t_ms - down.t_ms for down, up in pairs], dtype=float))
    downs: list[KeyEvent] = [down for down, _ in pairs]
    flights = np.zeros(0)
    digraphs: list[tuple[str, float]] = []
    if len(downs) >= 2:
        raw = np.array([b.t_ms - a.t_ms for a, b in zip(downs, downs[1:])], dtype=float)
        flights = _clip(raw)
        digraphs = [
            (digraph_name(a.code, b.code), float(lat))
            for (a, b), lat in zip(zip(downs, downs[1:]), flights)
        ]
    return dwells, flights, digraphs


def build_digraph_vocab(corpus: list[SessionRecord],
                        policy: ValidationPolicy = DEFAULT_POLICY) -> DigraphVocabulary:
    """Pick the 32 most frequent digraphs across usable keystroke sessions.

    Ties at the cut are broken lexicographically; missing slots are
    padded with empty strings and always extract as absent.
    """
    counts: dict[str, int] = {}
    usable = 0
    for record in corpus:
        if not validate_session(record, policy).usable_for_keystroke:
            continue
        usable += 1
        _, _, digraphs = keystroke_timings(record)
        for name, _ in digraphs:
            counts[name] = counts.get(name, 0) + 1
    if usable == 0:
        raise EmptyCorpus("no usable keystroke sessions")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    names = [name for name, _ in ranked[:VOCAB_SIZE]]
    names += [""] * (VOCAB_SIZE - len(names))
    return DigraphVocabulary(digraphs=tuple(names))


def extract_keystroke_features(record: SessionRecord,
                               vocab: DigraphVocabulary,
                               policy: ValidationPolicy = DEFAULT_POLICY,
                               ) -> KeystrokeFeatures:
    if not validate_session(record, policy).usable_for_keystroke:
        raise InsufficientKeystrokeData(record.session_id)
    dwells, flights, digraphs = keystroke_timings(record)

    by_digraph: dict[str, list[float]] = {}
    for name, latency in digraphs:
        by_digraph.setdefault(name, []).append(latency)

    latencies = np.zeros(VOCAB_SIZE)
    flags = np.zeros(VOCAB_SIZE)
    for i, name in enumerate(vocab.digraphs):
        samples = by_digraph.get(name, []) if name else []
        if len(samples) >= N_MIN:
            latencies[i] = float(np.mean(samples))
            flags[i] = 1.0

    vector = np.concatenate([
        _stats4(dwells),
        _stats4(flights),
        _histogram(dwells, _DWELL_EDGES),
        _histogram(flights, _FLIGHT_EDGES),
        latencies,
        flags,
    ])
    return KeystrokeFeatures(vector=vector)


def _mouse_channels(record: SessionRecord,
                    ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray,
                               np.ndarray, np.ndarray]:
    """speed, acceleration, curvature, pause, click-hold, direction samples."""
    moves = [e for e in record.mouse_events if e.kind == "move"]

    speeds: list[float] = []
    speed_dts: list[float] = []
    pauses: list[float] = []
    directed: list[tuple[float, float]] = []  # (direction, segment length)
    for a, b in zip(moves, moves[1:]):
        dt = float(b.t_ms - a.t_ms)
        dx = float(b.x - a.x)
        dy = float(b.y - a.y)
        dist = math.hypot(dx, dy)
        if dt > 0:
            speeds.append(dist / dt * 1000.0)
            speed_dts.append(dt)
        if dt > PAUSE_MS:
            pauses.append(dt)
        if dist > 0:
            directed.append((math.atan2(dy, dx), dist))

    accels = [
        (s2 - s1) / (dt2 / 1000.0)
        for (s1, s2), dt2 in zip(zip(speeds, speeds[1:]), speed_dts[1:])
    ]
    curvatures = [
        abs(_wrap_angle(d2 - d1)) / length2
        for (d1, _), (d2, length2) in zip(directed, directed[1:])
    ]

    holds: list[float] = []
    open_down: dict[str, int] = {}
    for e in record.mouse_events:
        if e.kind == "button_down":
            open_down[e.button or ""] = e.t_ms
        elif e.kind == "button_up":
            down_t = open_down.pop(e.button or "", None)
            if down_t is not None:
                holds.append(float(e.t_ms - down_t))

    directions = np.array([d for d, _ in directed])
    return (np.array(speeds), np.array(accels), np.array(curvatures),
            np.array(pauses), np.array(holds), directions)


def _wrap_angle(angle: float) -> float:
    return (angle + math.pi) % (2.0 * math.pi) - math.pi


def extract_mouse_features(record: SessionRecord,
                           policy: ValidationPolicy = DEFAULT_POLICY) -> MouseFeatures:
    if not validate_session(record, policy).usable_for_mouse:
        raise InsufficientMouseData(record.session_id)
    speeds, accels, curvatures, pauses, holds, directions = _mouse_channels(record)
    vector = np.concatenate([
        _stats4(speeds),
        _stats4(accels),
        _stats4(curvatures),
        _stats4(pauses),
        _stats4(holds),
        _histogram(speeds, _SPEED_EDGES),
        _histogram(directions, _DIRECTION_EDGES),
        _histogram(curvatures, _CURVATURE_EDGES),
    ])
    return MouseFeatures(vector=vector)


def combined_vector(record: SessionRecord,
                    vocab: DigraphVocabulary,
                    policy: ValidationPolicy = DEFAULT_POLICY) -> np.ndarray:
    """Concatenated keystroke + mouse vector (COMBINED_DIM values)."""
    return np.concatenate([
        extract_keystroke_features(record, vocab, policy).vector,
        extract_mouse_features(record, policy).vector,
    ])


def fit_norm_stats(vectors: list[np.ndarray]) -> NormStats:
    """Per-dimension mean and population std over training vectors."""
    if len(vectors) < 2:
        raise TooFewSamples(f"need >= 2 vectors, got {len(vectors)}")
    dims = {v.shape for v in vectors}
    if len(dims) != 1:
        raise DimensionMismatch(f"mixed dimensions: {sorted(dims)}")
    stacked = np.stack(vectors)
    mean = stacked.mean(axis=0)
    std = np.maximum(stacked.std(axis=0), EPS_STD)
    return NormStats(mean=mean, std=std)


def normalize(vector: np.ndarray, stats: NormStats) -> np.ndarray:
    if vector.shape != stats.mean.shape:
        raise DimensionMismatch(
            f"vector dim {vector.shape} vs stats dim {stats.mean.shape}")
    return (vector - stats.mean) / stats.std


def denormalize(vector: np.ndarray, stats: NormStats) -> np.ndarray:
    if vector.shape != stats.mean.shape:
        raise DimensionMismatch(
            f"vector dim {vector.shape} vs stats dim {stats.mean.shape}")
    return vector * stats.std + stats.mean
