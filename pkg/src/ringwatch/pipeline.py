"""End-to-end pipeline stages: simulate, train, calibrate, eval, audit.

Each stage reads artifacts from earlier stages, verifies their digests
against the upstream manifests, writes its own outputs plus one
manifest, and is deterministic given its seeds: reruns produce
bit-identical artifacts. On failure, a stage removes whatever partial
outputs it created.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from ringwatch import __version__
from ringwatch.baseline import digraph_samples, similarity_from_samples
from ringwatch.errors import (
    ConfigError,
    ConfigInfeasible,
    InsufficientKeystrokeData,
    InsufficientOverlap,
    RingwatchError,
    StageFailure,
)
from ringwatch.evaluation import (
    EvaluationReport,
    FairnessReport,
    ScoredPair,
    Threshold,
    calibrate_threshold,
    evaluate,
    fairness_audit,
)
from ringwatch.features import COMBINED_DIM, KEYSTROKE_DIM, MOUSE_DIM
from ringwatch.model_io import load_model, save_model
from ringwatch.network import (
    Network,
    NetworkConfig,
    TrainConfig,
    embed_session,
    embed_similarity,
    session_usable,
    train,
)
from ringwatch.pairs import (
    CorpusSplit,
    SessionPair,
    eligible_negative_pairs,
    eligible_positive_pairs,
    pairs_to_jsonl,
    sample_negative_pairs,
    sample_positive_pairs,
    split_users,
)
from ringwatch.session import (
    DEFAULT_POLICY,
    SessionRecord,
    sessions_from_jsonl,
    sessions_to_jsonl,
)
from ringwatch.simulate import GeneratorConfig, gen_ring_corpus

MANIFEST_SCHEMA = "ringwatch/manifest/v1"

BASELINE_METHOD = "keystroke"
DEEP_METHODS = {
    "deep-keystroke": ("keystroke", KEYSTROKE_DIM, "model-keystroke.rwnet"),
    "deep-mouse": ("mouse", MOUSE_DIM, "model-mouse.rwnet"),
    "deep-keystroke+mouse": ("combined", COMBINED_DIM, "model-combined.rwnet"),
}
ALL_METHODS = (BASELINE_METHOD, *DEEP_METHODS)
DEFAULT_METHOD = "deep-keystroke+mouse"
DEFAULT_PAIR_TARGET = 6000


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


class ArtifactWriter:
    """Tracks files a stage creates so a failed stage can clean up."""

    def __init__(self, out_dir: Path) -> None:
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.written: list[Path] = []

    def write_text(self, name: str, text: str) -> Path:
        path = self.out_dir / name
        path.write_text(text, encoding="utf-8")
        self.written.append(path)
        return path

    def write_bytes(self, name: str, data: bytes) -> Path:
        path = self.out_dir / name
        path.write_bytes(data)
        self.written.append(path)
        return path

    def write_json(self, name: str, payload: dict) -> Path:
        return self.write_text(name, json.dumps(payload, indent=2, sort_keys=True) + "\n")

    def cleanup(self) -> None:
        for path in self.written:
            path.unlink(missing_ok=True)


def _stage(fn):
    """Run a stage body; remove partial outputs and re-raise on failure."""
    def wrapper(out_dir, *args, **kwargs):
        writer = ArtifactWriter(Path(out_dir))
        started = time.monotonic()
        try:
            return fn(writer, started, *args, **kwargs)
        except ConfigError:
            writer.cleanup()
            raise
        except ConfigInfeasible as exc:
            writer.cleanup()
            raise ConfigError(str(exc)) from exc
        except RingwatchError as exc:
            writer.cleanup()
            raise StageFailure(str(exc)) from exc
        except Exception as exc:
            writer.cleanup()
            raise StageFailure(f"{type(exc).__name__}: {exc}") from exc
    return wrapper


def _write_manifest(writer: ArtifactWriter, stage: str, config: dict, seeds: dict,
                    inputs: dict[str, str], started: float) -> Path:
    outputs = {p.name: sha256_file(p) for p in writer.written}
    manifest = {
        "schema_version": MANIFEST_SCHEMA,
        "stage": stage,
        "config": config,
        "seeds": seeds,
        "inputs": inputs,
        "outputs": outputs,
        "tool_version": __version__,
        "duration_s": round(time.monotonic() - started, 3),
    }
    return writer.write_json(f"{stage}.manifest.json", manifest)


def verify_inputs(paths: list[Path]) -> dict[str, str]:
    """Digest consumed files; detect tampering via upstream manifests.

    If a manifest in the same directory declares the file as an output,
    the stored digest must match the bytes on disk.
    """
    digests: dict[str, str] = {}
    for path in paths:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"missing input: {path}")
        digest = sha256_file(path)
        digests[str(path)] = digest
        for manifest_path in sorted(path.parent.glob("*.manifest.json")):
            declared = json.loads(manifest_path.read_text(encoding="utf-8"))
            expected = declared.get("outputs", {}).get(path.name)
            if expected is not None and expected != digest:
                raise ConfigError(
                    f"{path} does not match digest recorded in {manifest_path.name}; "
                    "upstream artifact was modified")
    return digests


# --- scorers -----------------------------------------------------------------


class BaselineScorer:
    """t-test similarity with per-session digraph sample caching."""

    name = BASELINE_METHOD

    def __init__(self, policy=DEFAULT_POLICY) -> None:
        self.policy = policy
        self._cache: dict[str, dict[str, list[float]] | None] = {}

    def _samples(self, record: SessionRecord):
        if record.session_id not in self._cache:
            try:
                self._cache[record.session_id] = digraph_samples(record, self.policy)
            except InsufficientKeystrokeData:
                self._cache[record.session_id] = None
        return self._cache[record.session_id]

    def score(self, a: SessionRecord, b: SessionRecord) -> float | None:
        sa, sb = self._samples(a), self._samples(b)
        if sa is None or sb is None:
            return None
        try:
            return similarity_from_samples(sa, sb)
        except InsufficientOverlap:
            return None


class EmbeddingScorer:
    """Deep-model similarity with per-session embedding caching."""

    def __init__(self, name: str, net: Network, policy=DEFAULT_POLICY) -> None:
        self.name = name
        self.net = net
        self.policy = policy
        self._cache: dict[str, np.ndarray | None] = {}

    def _embedding(self, record: SessionRecord):
        if record.session_id not in self._cache:
            if session_usable(record, self.net.config.variant, self.policy):
                self._cache[record.session_id] = embed_session(
                    self.net, record, self.policy)
            else:
                self._cache[record.session_id] = None
        return self._cache[record.session_id]

    def score(self, a: SessionRecord, b: SessionRecord) -> float | None:
        ea, eb = self._embedding(a), self._embedding(b)
        if ea is None or eb is None:
            return None
        return embed_similarity(ea, eb, self.net.tau)


def score_pairs(scorer, pairs: list[SessionPair],
                by_id: dict[str, SessionRecord]) -> list[ScoredPair]:
    """Score each pair; unscorable pairs are excluded, not zeroed."""
    out: list[ScoredPair] = []
    for pair in pairs:
        score = scorer.score(by_id[pair.session_a], by_id[pair.session_b])
        if score is not None:
            out.append(ScoredPair(pair=pair, score=score))
    return out


# --- stage bodies -----------------------------------------------------------


@_stage
def simulate_stage(writer: ArtifactWriter, started: float,
                   cfg: GeneratorConfig) -> dict:
    """Generate a corpus (and scenario ground truth) into out_dir."""
    sessions, scenario = gen_ring_corpus(cfg)
    writer.write_text("sessions.jsonl", sessions_to_jsonl(sessions))
    writer.write_json("scenario.json", scenario.to_dict())
    _write_manifest(writer, "simulate", dict(vars(cfg)), {"seed": cfg.seed}, {}, started)
    return {"sessions": len(sessions), "out_dir": str(writer.out_dir)}


def load_corpus(data_dir: Path) -> list[SessionRecord]:
    path = Path(data_dir) / "sessions.jsonl"
    if not path.exists():
        raise ConfigError(f"no corpus at {path}")
    return sessions_from_jsonl(path.read_text(encoding="utf-8"))


def _split_sessions(sessions: list[SessionRecord],
                    split: CorpusSplit) -> dict[str, list[SessionRecord]]:
    member = {u: "train" for u in split.train}
    member.update({u: "validation" for u in split.validation})
    member.update({u: "test" for u in split.test})
    out: dict[str, list[SessionRecord]] = {"train": [], "validation": [], "test": []}
    for record in sessions:
        part = member.get(record.user_id)
        if part is not None:
            out[part].append(record)
    return out


@_stage
def train_stage(writer: ArtifactWriter, started: float, data_dir: Path,
                seed: int = 0, epochs: int = 100, batch_users: int = 32) -> dict:
    """Split users 6:2:2 and train the three embedding variants."""
    data_dir = Path(data_dir)
    inputs = verify_inputs([data_dir / "sessions.jsonl"])
    sessions = load_corpus(data_dir)
    split = split_users(sorted({s.user_id for s in sessions}), seed=seed)
    parts = _split_sessions(sessions, split)
    writer.write_json("split.json", split.to_dict())

    losses: dict[str, list[float]] = {}
    for i, (method, (variant, input_dim, filename)) in enumerate(DEEP_METHODS.items()):
        net_cfg = NetworkConfig(input_dim=input_dim, seed=seed + 10 + i)
        train_cfg = TrainConfig(batch_users=batch_users, epochs=epochs,
                                seed=seed + 100 + i)
        net, history = train(parts["train"], net_cfg, train_cfg)
        writer.write_bytes(filename, save_model(net))
        losses[method] = [round(loss, 6) for loss in history]
    writer.write_json("training-log.json", losses)
    _write_manifest(writer, "train",
                    {"epochs": epochs, "batch_users": batch_users},
                    {"seed": seed}, inputs, started)
    return {"out_dir": str(writer.out_dir), "losses": losses}


def load_models(model_dir: Path) -> dict[str, Network]:
    model_dir = Path(model_dir)
    nets: dict[str, Network] = {}
    for method, (_, input_dim, filename) in DEEP_METHODS.items():
        path = model_dir / filename
        if not path.exists():
            raise ConfigError(f"missing model file: {path}")
        net = load_model(path.read_bytes())
        if net.config.input_dim != input_dim:
            raise ConfigError(
                f"{path} has input_dim {net.config.input_dim}, expected {input_dim}")
        nets[method] = net
    return nets


def _load_split(model_dir: Path) -> CorpusSplit:
    path = Path(model_dir) / "split.json"
    if not path.exists():
        raise ConfigError(f"missing split file: {path}")
    return CorpusSplit.from_dict(json.loads(path.read_text(encoding="utf-8")))


def _scorers(methods: tuple[str, ...], nets: dict[str, Network]) -> list:
    scorers = []
    for method in methods:
        if method == BASELINE_METHOD:
            scorers.append(BaselineScorer())
        elif method in nets:
            scorers.append(EmbeddingScorer(method, nets[method]))
        else:
            raise ConfigError(f"unknown method {method!r}")
    return scorers


def _sample_split_pairs(sessions: list[SessionRecord], n_target: int,
                        seed: int) -> tuple[list[SessionPair], list[SessionPair]]:
    """Positive and negative pairs for one split, capped at the distinct pool."""
    n_pos_pool = len(eligible_positive_pairs(sessions))
    n_neg_pool = len(eligible_negative_pairs(sessions))
    positives = sample_positive_pairs(sessions, min(n_target, n_pos_pool), seed=seed)
    negatives = sample_negative_pairs(sessions, min(n_target, n_neg_pool), seed=seed + 1)
    return positives, negatives


def decision_flag_threshold(net: Network, sessions: list[SessionRecord],
                            probe_users: set[str], fpr_target: float = 0.01,
                            method: str = "") -> Threshold:
    """Calibrate the service's flag threshold on session-level decisions.

    Replays the sessions in arrival order; each probe session's decision
    score is its best similarity against all prior cross-user sessions,
    exactly what the service compares to its threshold. A pair-level
    threshold cannot bound the per-session flag rate (hundreds of
    comparisons per enrollment), so the flag cut is calibrated on these
    max scores instead. Probes are restricted to held-out users: users
    seen in training embed atypically tightly and would bias the cut low.
    """
    ordered = sorted(sessions, key=lambda s: (s.started_at_ms, s.session_id))
    variant = net.config.variant
    emb_rows = np.zeros((len(ordered), net.config.embed_dim))
    have = np.zeros(len(ordered), dtype=bool)
    users = np.array([s.user_id for s in ordered])
    scores: list[float] = []
    for i, record in enumerate(ordered):
        if not session_usable(record, variant):
            continue
        emb = embed_session(net, record)
        if record.user_id in probe_users:
            prior = have[:i] & (users[:i] != record.user_id)
            if prior.any():
                d2 = ((emb_rows[:i][prior] - emb) ** 2).sum(axis=1)
                scores.append(float(np.exp(-d2.min() / net.tau)))
        emb_rows[i] = emb
        have[i] = True
    return calibrate_threshold(scores, fpr_target=fpr_target,
                               calibrated_on="decision-replay", method=method)


@_stage
def calibrate_stage(writer: ArtifactWriter, started: float, data_dir: Path,
                    model_dir: Path, fpr_target: float = 0.01, seed: int = 0,
                    n_pairs: int = DEFAULT_PAIR_TARGET,
                    methods: tuple[str, ...] = ALL_METHODS) -> dict:
    """Calibrate pair-level thresholds (evaluation) and flag thresholds
    (online decisions) at the FPR target, on the validation split."""
    data_dir, model_dir = Path(data_dir), Path(model_dir)
    inputs = verify_inputs([data_dir / "sessions.jsonl", model_dir / "split.json"]
                           + [model_dir / f for (_, _, f) in DEEP_METHODS.values()])
    sessions = load_corpus(data_dir)
    nets = load_models(model_dir)
    split = _load_split(model_dir)
    parts = _split_sessions(sessions, split)
    by_id = {s.session_id: s for s in sessions}

    positives, negatives = _sample_split_pairs(parts["validation"], n_pairs,
                                               seed=seed + 500)
    writer.write_text("validation-pairs.jsonl", pairs_to_jsonl(positives + negatives))

    pair_thresholds: dict[str, Threshold] = {}
    for scorer in _scorers(methods, nets):
        scored_neg = score_pairs(scorer, negatives, by_id)
        pair_thresholds[scorer.name] = calibrate_threshold(
            [sp.score for sp in scored_neg], fpr_target=fpr_target,
            calibrated_on="validation", method=scorer.name)

    probe_users = set(split.validation)
    replay_sessions = parts["train"] + parts["validation"]
    flag_thresholds = {
        method: decision_flag_threshold(nets[method], replay_sessions, probe_users,
                                        fpr_target=fpr_target, method=method)
        for method in methods if method in nets
    }
    writer.write_json("thresholds.json", {
        "pair_thresholds": {n: t.to_dict() for n, t in pair_thresholds.items()},
        "flag_thresholds": {n: t.to_dict() for n, t in flag_thresholds.items()},
    })
    _write_manifest(writer, "calibrate",
                    {"fpr_target": fpr_target, "n_pairs": n_pairs,
                     "methods": list(methods)},
                    {"seed": seed}, inputs, started)
    return {"thresholds": {n: t.value for n, t in pair_thresholds.items()},
            "flag_thresholds": {n: t.value for n, t in flag_thresholds.items()}}


def load_thresholds(path: Path) -> dict[str, Threshold]:
    """Pair-level thresholds (the evaluation protocol)."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"missing thresholds file: {path}")
    raw = json.loads(path.read_text(encoding="utf-8"))
    return {name: Threshold.from_dict(data)
            for name, data in raw.get("pair_thresholds", {}).items()}


def load_flag_thresholds(path: Path) -> dict[str, Threshold]:
    """Session-decision thresholds the service flags with."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"missing thresholds file: {path}")
    raw = json.loads(path.read_text(encoding="utf-8"))
    return {name: Threshold.from_dict(data)
            for name, data in raw.get("flag_thresholds", {}).items()}


@_stage
def eval_stage(writer: ArtifactWriter, started: float, data_dir: Path,
               model_dir: Path, thresholds_file: Path, seed: int = 0,
               n_pairs: int = DEFAULT_PAIR_TARGET,
               methods: tuple[str, ...] = ALL_METHODS) -> dict:
    """Score test pairs per method and report AUROC/FPR/FNR."""
    data_dir, model_dir = Path(data_dir), Path(model_dir)
    inputs = verify_inputs([data_dir / "sessions.jsonl", model_dir / "split.json",
                            Path(thresholds_file)]
                           + [model_dir / f for (_, _, f) in DEEP_METHODS.values()])
    sessions = load_corpus(data_dir)
    nets = load_models(model_dir)
    thresholds = load_thresholds(thresholds_file)
    split = _load_split(model_dir)
    test_sessions = _split_sessions(sessions, split)["test"]
    by_id = {s.session_id: s for s in sessions}

    positives, negatives = _sample_split_pairs(test_sessions, n_pairs, seed=seed + 900)
    writer.write_text("test-pairs.jsonl", pairs_to_jsonl(positives + negatives))

    reports: list[EvaluationReport] = []
    for scorer in _scorers(methods, nets):
        if scorer.name not in thresholds:
            raise ConfigError(f"no calibrated threshold for {scorer.name!r}")
        scored = score_pairs(scorer, positives + negatives, by_id)
        reports.append(evaluate(scored, thresholds[scorer.name], method=scorer.name))
    writer.write_json("report.json", {"reports": [r.to_dict() for r in reports]})
    header = f"{'method':<24} {'AUROC':>8} {'FPR':>8} {'FNR':>8}"
    writer.write_text("report.txt",
                      "\n".join([header] + [r.text_row() for r in reports]) + "\n")
    _write_manifest(writer, "eval", {"n_pairs": n_pairs, "methods": list(methods)},
                    {"seed": seed}, inputs, started)
    return {"reports": [r.to_dict() for r in reports]}


@_stage
def audit_stage(writer: ArtifactWriter, started: float, data_dir: Path,
                model_dir: Path, thresholds_file: Path, seed: int = 0,
                n_pairs: int = DEFAULT_PAIR_TARGET,
                method: str = DEFAULT_METHOD,
                group_by: tuple[str, ...] = ("gender", "age_band", "region")) -> dict:
    """Per-group TNR fairness audit over negative test pairs."""
    data_dir, model_dir = Path(data_dir), Path(model_dir)
    inputs = verify_inputs([data_dir / "sessions.jsonl", model_dir / "split.json",
                            Path(thresholds_file)]
                           + [model_dir / f for (_, _, f) in DEEP_METHODS.values()])
    sessions = load_corpus(data_dir)
    nets = load_models(model_dir)
    thresholds = load_thresholds(thresholds_file)
    if method not in thresholds:
        raise ConfigError(f"no calibrated threshold for {method!r}")
    split = _load_split(model_dir)
    test_sessions = _split_sessions(sessions, split)["test"]
    by_id = {s.session_id: s for s in sessions}

    _, negatives = _sample_split_pairs(test_sessions, n_pairs, seed=seed + 900)
    scorer = _scorers((method,), nets)[0]
    scored = score_pairs(scorer, negatives, by_id)
    report: FairnessReport = fairness_audit(scored, thresholds[method],
                                            group_by=group_by, method=method)
    writer.write_json("fairness.json", report.to_dict())
    writer.write_text("fairness.txt", report.to_text())
    _write_manifest(writer, "audit",
                    {"method": method, "group_by": list(group_by),
                     "n_pairs": n_pairs},
                    {"seed": seed}, inputs, started)
    return {"report": report.to_dict()}


def default_simulate_config(seed: int = 0, **overrides) -> GeneratorConfig:
    return replace(GeneratorConfig(seed=seed), **overrides)
