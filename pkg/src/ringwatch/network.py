"""Feed-forward embedding networks trained with a distance-based n-pair loss.

One network per input configuration (keystroke 112, mouse 68, combined
180). The objective contrasts each anchor's own positive against the
other users' positives in the batch using squared L2 distances:

    L = (1/B) * sum_i log(1 + sum_{j != i} exp(d2(a_i, p_i) - d2(a_i, p_j)))

Everything is plain numpy with analytic gradients and an adaptive-moment
update; training is single-threaded and bit-deterministic given seeds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ringwatch.errors import (
    BatchTooSmall,
    DimensionMismatch,
    DivergedLoss,
    InsufficientUsers,
    NonFiniteInput,
)
from ringwatch.features import (
    COMBINED_DIM,
    KEYSTROKE_DIM,
    MOUSE_DIM,
    VOCAB_SIZE,
    DigraphVocabulary,
    NormStats,
    build_digraph_vocab,
    combined_vector,
    extract_keystroke_features,
    extract_mouse_features,
    fit_norm_stats,
    normalize,
)
from ringwatch.session import DEFAULT_POLICY, SessionRecord, ValidationPolicy, validate_session

DEFAULT_TAU = 10.0

VARIANT_BY_DIM = {KEYSTROKE_DIM: "keystroke", MOUSE_DIM: "mouse", COMBINED_DIM: "combined"}

_EMPTY_VOCAB = DigraphVocabulary(digraphs=("",) * VOCAB_SIZE)


@dataclass(frozen=True)
class NetworkConfig:
    input_dim: int  # 112, 68 or 180 for session features; rectifier throughout
    hidden_dims: tuple[int, ...] = (128, 64)
    embed_dim: int = 32
    seed: int = 0

    def __post_init__(self) -> None:
        if any(d <= 0 for d in (self.input_dim, *self.hidden_dims, self.embed_dim)):
            raise DimensionMismatch("layer dims must be positive")

    @property
    def variant(self) -> str:
        if self.input_dim not in VARIANT_BY_DIM:
            raise DimensionMismatch(
                f"input_dim {self.input_dim} maps to no feature configuration")
        return VARIANT_BY_DIM[self.input_dim]

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_dims, self.embed_dim)


@dataclass(frozen=True)
class TrainConfig:
    batch_users: int = 32  # anchors per batch; one positive each
    epochs: int = 100
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # train-time jitter, in units of the pooled within-user std per dim;
    # without it the network memorizes training users and embeds unseen
    # users' sessions too loosely for gallery retrieval
    input_jitter: float = 2.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.batch_users < 2:
            raise BatchTooSmall("n-pair loss needs at least 2 users per batch")


@dataclass
class Network:
    config: NetworkConfig
    weights: list[np.ndarray]  # per layer, shape (fan_in, fan_out)
    biases: list[np.ndarray]
    vocab: DigraphVocabulary = _EMPTY_VOCAB
    norm_stats: NormStats | None = None
    tau: float = DEFAULT_TAU


def init_network(config: NetworkConfig) -> Network:
    """Glorot-uniform weights from a seeded generator; zero biases."""
    rng = np.random.default_rng(config.seed)
    dims = config.layer_dims
    weights: list[np.ndarray] = []
    biases: list[np.ndarray] = []
    for fan_in, fan_out in zip(dims, dims[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    stats = NormStats(mean=np.zeros(config.input_dim), std=np.ones(config.input_dim))
    return Network(config=config, weights=weights, biases=biases, norm_stats=stats)


def _forward_batch(net: Network, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Batch forward pass; returns embeddings and per-layer inputs for backprop."""
    inputs: list[np.ndarray] = []
    a = x
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        inputs.append(a)
        z = a @ w + b
        a = z if i == last else np.maximum(z, 0.0)
    return a, inputs


def forward(net: Network, x: np.ndarray) -> np.ndarray:
    """Embed one already-normalized feature vector."""
    x = np.asarray(x, dtype=float)
    if x.shape != (net.config.input_dim,):
        raise DimensionMismatch(f"expected ({net.config.input_dim},), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteInput("input vector contains NaN or infinity")
    embedding, _ = _forward_batch(net, x[None, :])
    return embedding[0]


def _backward_batch(net: Network, inputs: list[np.ndarray],
                    grad_out: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Gradients of a scalar loss w.r.t. every weight matrix and bias."""
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(net.weights)  # type: ignore
    delta = grad_out
    for i in range(len(net.weights) - 1, -1, -1):
        a_in = inputs[i]
        grads[i] = (a_in.T @ delta, delta.sum(axis=0))
        if i > 0:
            # a_in is already rectified output of layer i-1: its sign gates the gradient
            delta = (delta @ net.weights[i].T) * (a_in > 0.0)
    return grads


def npair_loss(anchors: np.ndarray,
               positives: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss and analytic gradients w.r.t. anchor and positive embeddings.

    Row i of both arrays comes from the same user; rows j != i act as
    negatives for anchor i. The exp arguments are stabilized by
    max-subtraction inside the log-sum, so the loss stays finite for
    squared distances up to at least 1e6.
    """
    anchors = np.asarray(anchors, dtype=float)
    positives = np.asarray(positives, dtype=float)
    b = anchors.shape[0]
    if b < 2:
        raise BatchTooSmall(f"batch of {b} users, need >= 2")
    if anchors.shape != positives.shape:
        raise DimensionMismatch(f"{anchors.shape} vs {positives.shape}")

    diff_all = anchors[:, None, :] - positives[None, :, :]  # (B, B, D)
    d2 = np.einsum("ijk,ijk->ij", diff_all, diff_all)  # d2[i, j] = ||a_i - p_j||^2
    d_own = np.diagonal(d2)

    z = d_own[:, None] - d2  # logit for (anchor i, negative j); diagonal is 0
    off_diag = ~np.eye(b, dtype=bool)
    z_masked = np.where(off_diag, z, -np.inf)
    m = np.maximum(0.0, z_masked.max(axis=1))
    expz = np.where(off_diag, np.exp(z - m[:, None]), 0.0)
    denom = np.exp(-m) + expz.sum(axis=1)
    loss = float(np.mean(m + np.log(denom)))

    sigma = expz / denom[:, None]  # (B, B), zero diagonal
    row_sum = sigma.sum(axis=1)
    col_sum = sigma.sum(axis=0)
    grad_anchors = (2.0 / b) * (sigma @ positives - row_sum[:, None] * positives)
    grad_positives = (2.0 / b) * (
        -row_sum[:, None] * (anchors - positives)
        + sigma.T @ anchors
        - col_sum[:, None] * positives
    )
    return loss, grad_anchors, grad_positives


def embed_similarity(e1: np.ndarray, e2: np.ndarray, tau: float = DEFAULT_TAU) -> float:
    """exp(-||e1 - e2||^2 / tau): monotone in distance, range (0, 1]."""
    e1 = np.asarray(e1, dtype=float)
    e2 = np.asarray(e2, dtype=float)
    if e1.shape != e2.shape:
        raise DimensionMismatch(f"{e1.shape} vs {e2.shape}")
    d = e1 - e2
    return float(np.exp(-float(d @ d) / tau))


def session_usable(record: SessionRecord, variant: str,
                   policy: ValidationPolicy = DEFAULT_POLICY) -> bool:
    outcome = validate_session(record, policy)
    if variant == "keystroke":
        return outcome.usable_for_keystroke
    if variant == "mouse":
        return outcome.usable_for_mouse
    return outcome.usable_for_keystroke and outcome.usable_for_mouse


def session_vector(net: Network, record: SessionRecord,
                   policy: ValidationPolicy = DEFAULT_POLICY) -> np.ndarray:
    """Raw (unnormalized) feature vector for this network's input configuration."""
    variant = net.config.variant
    if variant == "keystroke":
        return extract_keystroke_features(record, net.vocab, policy).vector
    if variant == "mouse":
        return extract_mouse_features(record, policy).vector
    return combined_vector(record, net.vocab, policy)


def embed_session(net: Network, record: SessionRecord,
                  policy: ValidationPolicy = DEFAULT_POLICY) -> np.ndarray:
    """Feature-extract, normalize with the attached stats, and embed."""
    if net.norm_stats is None:
        raise NonFiniteInput("network has no normalization stats attached")
    return forward(net, normalize(session_vector(net, record, policy), net.norm_stats))


class _Adam:
    """Adaptive-moment update over the flat list of (weight, bias) arrays."""

    def __init__(self, net: Network, cfg: TrainConfig) -> None:
        self.cfg = cfg
        params = [*net.weights, *net.biases]
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, net: Network, grads: list[tuple[np.ndarray, np.ndarray]]) -> None:
        self.t += 1
        cfg = self.cfg
        flat_params = [*net.weights, *net.biases]
        flat_grads = [g for g, _ in grads] + [g for _, g in grads]
        correction1 = 1.0 - cfg.beta1 ** self.t
        correction2 = 1.0 - cfg.beta2 ** self.t
        for p, g, m, v in zip(flat_params, flat_grads, self.m, self.v):
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * (g * g)
            p -= cfg.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + cfg.eps)


def train(corpus: list[SessionRecord],
          net_cfg: NetworkConfig,
          train_cfg: TrainConfig,
          policy: ValidationPolicy = DEFAULT_POLICY,
          batch_sampler=None) -> tuple[Network, list[float]]:
    """Train an embedding network on the corpus; returns (network, epoch losses).

    Builds the digraph vocabulary and normalization stats from the corpus,
    then runs epochs of batches sampled as (B distinct users x 2 sessions).
    `batch_sampler(rng)` may override batch selection; it must return two
    session lists (anchors, positives) aligned by user.

    Deterministic: identical corpus, configs and seeds give bit-identical
    weights. Steps per epoch = eligible users // batch size (min 1).
    """
    from ringwatch.pairs import batch_from_user_map

    variant = net_cfg.variant
    usable = [s for s in corpus if session_usable(s, variant, policy)]
    vocab = _EMPTY_VOCAB
    if variant in ("keystroke", "combined"):
        vocab = build_digraph_vocab(usable, policy)

    net = init_network(net_cfg)
    net.vocab = vocab

    features: dict[str, np.ndarray] = {}
    by_user: dict[str, list[SessionRecord]] = {}
    for record in usable:
        features[record.session_id] = session_vector(net, record, policy)
        by_user.setdefault(record.user_id, []).append(record)
    eligible = {u: ss for u, ss in by_user.items() if len(ss) >= 2}
    if len(eligible) < train_cfg.batch_users:
        raise InsufficientUsers(
            f"{len(eligible)} users with >= 2 usable sessions, "
            f"need {train_cfg.batch_users}")

    net.norm_stats = fit_norm_stats([features[s.session_id]
                                     for ss in eligible.values() for s in ss])
    normalized = {sid: normalize(vec, net.norm_stats) for sid, vec in features.items()}

    # pooled within-user residual std per dim, the jitter scale
    residuals = []
    for sessions_of_user in eligible.values():
        x = np.stack([normalized[s.session_id] for s in sessions_of_user])
        residuals.append(x - x.mean(axis=0))
    within_std = np.concatenate(residuals).std(axis=0)

    if batch_sampler is None:
        def batch_sampler(stream):
            return batch_from_user_map(eligible, train_cfg.batch_users, stream)

    rng = np.random.default_rng(train_cfg.seed)
    optimizer = _Adam(net, train_cfg)
    steps_per_epoch = max(1, len(eligible) // train_cfg.batch_users)
    jitter = train_cfg.input_jitter * within_std
    history: list[float] = []
    for epoch in range(train_cfg.epochs):
        epoch_losses = []
        for _ in range(steps_per_epoch):
            anchor_sessions, positive_sessions = batch_sampler(rng)
            xa = np.stack([normalized[s.session_id] for s in anchor_sessions])
            xp = np.stack([normalized[s.session_id] for s in positive_sessions])
            if train_cfg.input_jitter > 0.0:
                xa = xa + jitter * rng.standard_normal(xa.shape)
                xp = xp + jitter * rng.standard_normal(xp.shape)
            ea, cache_a = _forward_batch(net, xa)
            ep, cache_p = _forward_batch(net, xp)
            loss, grad_ea, grad_ep = npair_loss(ea, ep)
            if not math.isfinite(loss):
                raise DivergedLoss(f"non-finite loss at epoch {epoch}")
            grads_a = _backward_batch(net, cache_a, grad_ea)
            grads_p = _backward_batch(net, cache_p, grad_ep)
            grads = [(ga + gp, ba + bp)
                     for (ga, ba), (gp, bp) in zip(grads_a, grads_p)]
            optimizer.step(net, grads)
            epoch_losses.append(loss)
        history.append(float(np.mean(epoch_losses)))
    return net, history
