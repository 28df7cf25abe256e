"""User-level corpus splits and positive/negative session-pair sampling.

Positive pairs are two sessions of the same user. Negative pairs are two
sessions of different users who either share keyboard and mouse kind or
sit in the same region: the hard negatives a ring detector must survive.
All sampling is deterministic given a seed.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from ringwatch.errors import InsufficientUsers, NoEligiblePairs, NoEligibleUsers, TooFewUsers
from ringwatch.session import DEFAULT_POLICY, SessionRecord, ValidationPolicy, validate_session

GROUP_AXES = ("gender", "age_band", "region")


@dataclass(frozen=True)
class CorpusSplit:
    train: tuple[str, ...]
    validation: tuple[str, ...]
    test: tuple[str, ...]

    def to_dict(self) -> dict:
        return {"train": list(self.train), "validation": list(self.validation),
                "test": list(self.test)}

    @classmethod
    def from_dict(cls, data: dict) -> "CorpusSplit":
        return cls(train=tuple(data["train"]), validation=tuple(data["validation"]),
                   test=tuple(data["test"]))


@dataclass(frozen=True)
class SessionPair:
    session_a: str
    session_b: str
    label: str  # positive | negative
    user_a: str
    user_b: str
    # per demographic axis, the tags of both users
    groups: dict[str, tuple[str, str]] = field(default_factory=dict)


def split_users(users: list[str], ratios: tuple[float, float, float] = (0.6, 0.2, 0.2),
                seed: int = 0) -> CorpusSplit:
    """Shuffle users deterministically and split ~6:2:2 at the user level.

    Validation/test sizes round to nearest; the remainder goes to train,
    so 11 users split 7/2/2.
    """
    unique = sorted(set(users))
    n = len(unique)
    if n < 5:
        raise TooFewUsers(f"{n} users, need >= 5")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {ratios}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    shuffled = [unique[i] for i in order]
    n_val = int(n * ratios[1] + 0.5)
    n_test = int(n * ratios[2] + 0.5)
    n_train = n - n_val - n_test
    return CorpusSplit(
        train=tuple(sorted(shuffled[:n_train])),
        validation=tuple(sorted(shuffled[n_train:n_train + n_val])),
        test=tuple(sorted(shuffled[n_train + n_val:])),
    )


def _group_tags(a: SessionRecord, b: SessionRecord) -> dict[str, tuple[str, str]]:
    return {
        "gender": (a.demographics.gender, b.demographics.gender),
        "age_band": (a.demographics.age_band, b.demographics.age_band),
        "region": (a.device.region, b.device.region),
    }


def _make_pair(a: SessionRecord, b: SessionRecord, label: str) -> SessionPair:
    return SessionPair(session_a=a.session_id, session_b=b.session_id, label=label,
                       user_a=a.user_id, user_b=b.user_id, groups=_group_tags(a, b))


def _fully_usable(record: SessionRecord, policy: ValidationPolicy) -> bool:
    outcome = validate_session(record, policy)
    return outcome.usable_for_keystroke and outcome.usable_for_mouse


def _take(pool_size: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """n indices into the pool: without replacement first, then with."""
    order = rng.permutation(pool_size)
    if n <= pool_size:
        return order[:n]
    extra = rng.integers(0, pool_size, size=n - pool_size)
    return np.concatenate([order, extra])


def eligible_positive_pairs(sessions: list[SessionRecord],
                            policy: ValidationPolicy = DEFAULT_POLICY,
                            ) -> list[tuple[SessionRecord, SessionRecord]]:
    by_user: dict[str, list[SessionRecord]] = {}
    for record in sorted(sessions, key=lambda s: s.session_id):
        if _fully_usable(record, policy):
            by_user.setdefault(record.user_id, []).append(record)
    pool: list[tuple[SessionRecord, SessionRecord]] = []
    for user in sorted(by_user):
        pool.extend(itertools.combinations(by_user[user], 2))
    return pool


def sample_positive_pairs(sessions: list[SessionRecord], n: int, seed: int = 0,
                          policy: ValidationPolicy = DEFAULT_POLICY) -> list[SessionPair]:
    """n same-user pairs, uniform over all (user, session pair) combinations."""
    pool = eligible_positive_pairs(sessions, policy)
    if not pool:
        raise NoEligibleUsers("no user has two usable sessions")
    rng = np.random.default_rng(seed)
    return [_make_pair(*pool[i], "positive") for i in _take(len(pool), n, rng)]


def negative_constraint(a: SessionRecord, b: SessionRecord) -> bool:
    """Same keyboard layout and mouse kind, or same region."""
    return ((a.device.keyboard_layout == b.device.keyboard_layout
             and a.device.mouse_kind == b.device.mouse_kind)
            or a.device.region == b.device.region)


def eligible_negative_pairs(sessions: list[SessionRecord],
                            policy: ValidationPolicy = DEFAULT_POLICY,
                            ) -> list[tuple[SessionRecord, SessionRecord]]:
    usable = [s for s in sorted(sessions, key=lambda s: s.session_id)
              if _fully_usable(s, policy)]
    return [(a, b) for a, b in itertools.combinations(usable, 2)
            if a.user_id != b.user_id and negative_constraint(a, b)]


def sample_negative_pairs(sessions: list[SessionRecord], n: int, seed: int = 0,
                          policy: ValidationPolicy = DEFAULT_POLICY) -> list[SessionPair]:
    """n cross-user pairs satisfying the device-or-region constraint."""
    pool = eligible_negative_pairs(sessions, policy)
    if not pool:
        raise NoEligiblePairs("no cross-user pair satisfies the constraint")
    rng = np.random.default_rng(seed)
    return [_make_pair(*pool[i], "negative") for i in _take(len(pool), n, rng)]


def batch_from_user_map(by_user: dict[str, list[SessionRecord]], batch_users: int,
                        rng: np.random.Generator,
                        ) -> tuple[list[SessionRecord], list[SessionRecord]]:
    """Draw a batch from a prefiltered user -> usable sessions map."""
    users = sorted(u for u, ss in by_user.items() if len(ss) >= 2)
    if len(users) < batch_users:
        raise InsufficientUsers(f"{len(users)} eligible users, need {batch_users}")
    anchors: list[SessionRecord] = []
    positives: list[SessionRecord] = []
    for ui in rng.choice(len(users), size=batch_users, replace=False):
        candidates = by_user[users[ui]]
        i, j = rng.choice(len(candidates), size=2, replace=False)
        anchors.append(candidates[i])
        positives.append(candidates[j])
    return anchors, positives


def sample_training_batch(sessions: list[SessionRecord], batch_users: int,
                          rng: int | np.random.Generator,
                          policy: ValidationPolicy = DEFAULT_POLICY,
                          ) -> tuple[list[SessionRecord], list[SessionRecord]]:
    """B distinct users, two distinct sessions each: (anchors, positives).

    Accepts a Generator so a training loop can draw successive batches
    from one deterministic stream.
    """
    rng = np.random.default_rng(rng)
    by_user: dict[str, list[SessionRecord]] = {}
    for record in sorted(sessions, key=lambda s: s.session_id):
        if _fully_usable(record, policy):
            by_user.setdefault(record.user_id, []).append(record)
    return batch_from_user_map(by_user, batch_users, rng)


def pairs_to_jsonl(pairs: list[SessionPair]) -> str:
    """Audit-friendly record of sampled pairs, one JSON object per line."""
    lines = [json.dumps({"session_a": p.session_a, "session_b": p.session_b,
                         "label": p.label}, separators=(",", ":"))
             for p in pairs]
    return "\n".join(lines) + "\n" if lines else ""


def pairs_from_jsonl(text: str, sessions_by_id: dict[str, SessionRecord],
                     ) -> list[SessionPair]:
    pairs = []
    for line in text.splitlines():
        if not line.strip():
            continue
        raw = json.loads(line)
        a = sessions_by_id[raw["session_a"]]
        b = sessions_by_id[raw["session_b"]]
        pairs.append(_make_pair(a, b, raw["label"]))
    return pairs
