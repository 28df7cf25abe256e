"""Synthetic corpus generator: typist/mouse profiles, sessions, ring scenarios.

Every timing quantity is lognormal: log(value) = log(base) + user offset
+ session offset + per-sample noise. User offsets are drawn with spread
`separation x` the corresponding within-user spread, so the separation
knob directly scales how distinguishable users are. Ring operators are
fresh profiles whose sessions are emitted under several claimed
identities; the ground truth map is returned alongside the corpus.

Determinism: all draws run through numpy Generators seeded from
(config seed, stream tag, index) tuples, so any part of a corpus can be
regenerated independently and bit-identically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ringwatch.errors import ConfigInfeasible
from ringwatch.features import digraph_name
from ringwatch.session import (
    Demographics,
    DeviceContext,
    KeyEvent,
    MouseEvent,
    SessionRecord,
)

# population priors: base levels and log-space spreads per channel.
# "user" sigmas are multiplied by the separation knob at profile draw time;
# "session" and "sample" sigmas are within-user variation.
BASE_LATENCY_MS = 145.0
DIGRAPH_BASE_SIGMA = 0.22  # population-level structure across digraphs
TEMPO_USER_SIGMA = 0.18
LATENCY_USER_SIGMA = 0.14
LATENCY_SESSION_SIGMA = 0.008
LATENCY_SAMPLE_SIGMA = 0.14

BASE_DWELL_MS = 92.0
DWELL_USER_SIGMA = 0.18
DWELL_CODE_SIGMA = 0.16  # per-user, per-key-code dwell preference
DWELL_SESSION_SIGMA = 0.008
DWELL_SAMPLE_SIGMA = 0.12

BASE_SPEED_PX_S = 640.0
SPEED_USER_SIGMA = 0.20
SPEED_SESSION_SIGMA = 0.05
SPEED_SAMPLE_SIGMA = 0.35
SPEED_SPREAD_USER_SIGMA = 0.08  # users differ in speed variability too

BASE_TURN_RAD = 0.75  # heading change per segment
TURN_USER_SIGMA = 0.22
TURN_SESSION_SIGMA = 0.05

DIRECTION_PULL_SIGMA = 0.15  # per-user drift toward a preferred heading

BASE_PAUSE_RATE = 0.06
PAUSE_RATE_USER_SIGMA = 0.22
PAUSE_RATE_SESSION_SIGMA = 0.05
BASE_PAUSE_MS = 950.0
PAUSE_USER_SIGMA = 0.16
PAUSE_SESSION_SIGMA = 0.04
PAUSE_SAMPLE_SIGMA = 0.45

BASE_HOLD_MS = 110.0
HOLD_USER_SIGMA = 0.14
HOLD_SESSION_SIGMA = 0.03
HOLD_SAMPLE_SIGMA = 0.18

BASE_STEP_PX = 26.0
STEP_USER_SIGMA = 0.15
STEP_SAMPLE_SIGMA = 0.55

GLITCH_RATE = 0.0008  # rare wild samples so every histogram bin sees data

SCREEN_W = 1919
SCREEN_H = 1079

BASE_EPOCH_MS = 1_760_000_000_000

GENDER_DIST = {"female": 0.497, "male": 0.5, "others": 0.003}
AGE_DIST = {"0-14": 0.03, "15-20": 0.42, "21-25": 0.28, "26-30": 0.12,
            "31-35": 0.07, "36-40": 0.04, "41+": 0.04}
KEYBOARD_DIST = {"qwerty-us": 0.5, "qwerty-intl": 0.3, "azerty": 0.2}
MOUSE_DIST = {"optical": 0.6, "trackpad": 0.3, "trackball": 0.1}
REGION_DIST = {"na": 0.3, "eu": 0.25, "asia": 0.25, "latam": 0.2}

PHRASES = (
    "the quick brown fox jumps over the lazy dog",
    "pack my box with five dozen liquor jugs",
    "how vexingly quick daft zebras jump",
    "sphinx of black quartz judge my vow",
    "the five boxing wizards jump quickly",
    "bright vixens jump dozy fowl quack",
)

# seed-stream tags so every draw family is independent of corpus layout
_TAG_PROFILE = 1
_TAG_OPERATOR = 2
_TAG_IDENTITY = 3
_TAG_SESSION = 4
_TAG_SCHEDULE = 5


def _char_code(ch: str) -> str:
    return "Space" if ch == " " else f"Key{ch.upper()}"


def _phrase_digraphs() -> tuple[str, ...]:
    names: set[str] = set()
    firsts, lasts = [], []
    for phrase in PHRASES:
        codes = [_char_code(c) for c in phrase]
        names.update(digraph_name(a, b) for a, b in zip(codes, codes[1:]))
        firsts.append(codes[0])
        lasts.append(codes[-1])
    # phrases get joined by a single space, so boundary digraphs occur too
    for last in lasts:
        names.add(digraph_name(last, "Space"))
    for first in firsts:
        names.add(digraph_name("Space", first))
    return tuple(sorted(names))

PHRASE_DIGRAPHS = _phrase_digraphs()
PHRASE_CODES = tuple(sorted({_char_code(c) for p in PHRASES for c in p}))

_digraph_base_cache: dict[str, float] = {}


def digraph_base_latency(name: str) -> float:
    """Population base latency for a digraph; fixed across corpora and seeds."""
    base = _digraph_base_cache.get(name)
    if base is None:
        digest = np.frombuffer(name.encode("utf-8").ljust(8, b"\0")[:8], dtype="<u8")[0]
        z = np.random.default_rng(digest).standard_normal()
        base = BASE_LATENCY_MS * math.exp(DIGRAPH_BASE_SIGMA * z)
        _digraph_base_cache[name] = base
    return base


@dataclass(frozen=True)
class TypistProfile:
    """Hidden per-person behavioral parameters (log-space offsets)."""

    tempo: float
    digraph_offsets: dict[str, float]
    dwell_offset: float
    dwell_code_offsets: dict[str, float]
    speed_offset: float
    speed_spread: float  # log-multiplier on per-sample speed sigma
    turn_offset: float
    pause_rate_offset: float
    pause_duration_offset: float
    hold_offset: float
    step_offset: float
    direction_pref: float  # preferred pointer heading, radians
    direction_pull: float  # mean-reversion strength toward it (0 = none)
    device: DeviceContext
    demographics: Demographics

    def digraph_log_mean(self, name: str) -> float:
        return (math.log(digraph_base_latency(name)) + self.tempo
                + self.digraph_offsets.get(name, 0.0))

    def digraph_latency_mean(self, name: str) -> float:
        """Expected generated latency (lognormal mean across sessions)."""
        var = LATENCY_SESSION_SIGMA ** 2 + LATENCY_SAMPLE_SIGMA ** 2
        return math.exp(self.digraph_log_mean(name) + 0.5 * var)


@dataclass(frozen=True)
class RingScenario:
    operators: tuple[TypistProfile, ...]
    identity_map: dict[str, tuple[str, ...]]  # operator id -> controlled user ids
    honest_users: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "schema": "ringwatch/scenario/v1",
            "operators": sorted(self.identity_map),
            "identity_map": {op: list(uids) for op, uids in sorted(self.identity_map.items())},
            "honest_users": list(self.honest_users),
        }


@dataclass(frozen=True)
class GeneratorConfig:
    n_users: int = 500
    sessions_per_user: int = 3
    separation: float = 1.5
    n_rings: int = 0
    ring_size: int = 2
    seed: int = 0
    duration_target_ms: int = 180_000
    gender_dist: dict[str, float] = field(default_factory=lambda: dict(GENDER_DIST))
    age_dist: dict[str, float] = field(default_factory=lambda: dict(AGE_DIST))
    keyboard_dist: dict[str, float] = field(default_factory=lambda: dict(KEYBOARD_DIST))
    mouse_dist: dict[str, float] = field(default_factory=lambda: dict(MOUSE_DIST))
    region_dist: dict[str, float] = field(default_factory=lambda: dict(REGION_DIST))

    def __post_init__(self) -> None:
        if self.n_users < 1 or self.sessions_per_user < 1:
            raise ConfigInfeasible("need at least one user and one session per user")
        if self.separation < 0:
            raise ConfigInfeasible("separation must be >= 0")
        if self.ring_size < 2:
            raise ConfigInfeasible("ring_size must be >= 2")
        if self.n_rings < 0:
            raise ConfigInfeasible("n_rings must be >= 0")


def _rng(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, *tags]))


def _choice(rng: np.random.Generator, dist: dict[str, float]) -> str:
    keys = sorted(dist)
    probs = np.array([dist[k] for k in keys], dtype=float)
    probs = probs / probs.sum()
    return keys[int(rng.choice(len(keys), p=probs))]


def _draw_context(rng: np.random.Generator, cfg: GeneratorConfig,
                  ) -> tuple[DeviceContext, Demographics]:
    device = DeviceContext(
        keyboard_layout=_choice(rng, cfg.keyboard_dist),
        mouse_kind=_choice(rng, cfg.mouse_dist),
        region=_choice(rng, cfg.region_dist),
    )
    demographics = Demographics(
        gender=_choice(rng, cfg.gender_dist),
        age_band=_choice(rng, cfg.age_dist),
    )
    return device, demographics


def _draw_profile(rng: np.random.Generator, cfg: GeneratorConfig) -> TypistProfile:
    sep = cfg.separation
    device, demographics = _draw_context(rng, cfg)
    tempo = sep * TEMPO_USER_SIGMA * rng.standard_normal()
    dwell = sep * DWELL_USER_SIGMA * rng.standard_normal()
    speed = sep * SPEED_USER_SIGMA * rng.standard_normal()
    speed_spread = sep * SPEED_SPREAD_USER_SIGMA * rng.standard_normal()
    turn = sep * TURN_USER_SIGMA * rng.standard_normal()
    pause_rate = sep * PAUSE_RATE_USER_SIGMA * rng.standard_normal()
    pause_dur = sep * PAUSE_USER_SIGMA * rng.standard_normal()
    hold = sep * HOLD_USER_SIGMA * rng.standard_normal()
    step = sep * STEP_USER_SIGMA * rng.standard_normal()
    direction_pref = float(rng.uniform(-math.pi, math.pi))
    direction_pull = float(sep * DIRECTION_PULL_SIGMA * abs(rng.standard_normal()))
    offsets = sep * LATENCY_USER_SIGMA * rng.standard_normal(len(PHRASE_DIGRAPHS))
    code_offsets = sep * DWELL_CODE_SIGMA * rng.standard_normal(len(PHRASE_CODES))
    return TypistProfile(
        tempo=float(tempo),
        digraph_offsets={name: float(z) for name, z in zip(PHRASE_DIGRAPHS, offsets)},
        dwell_offset=float(dwell),
        dwell_code_offsets={c: float(z) for c, z in zip(PHRASE_CODES, code_offsets)},
        speed_offset=float(speed),
        speed_spread=float(speed_spread),
        turn_offset=float(turn),
        pause_rate_offset=float(pause_rate),
        pause_duration_offset=float(pause_dur),
        hold_offset=float(hold),
        step_offset=float(step),
        direction_pref=direction_pref,
        direction_pull=direction_pull,
        device=device,
        demographics=demographics,
    )


def gen_population(cfg: GeneratorConfig) -> list[TypistProfile]:
    """Honest-user profiles; deterministic per (seed, user index)."""
    return [_draw_profile(_rng(cfg.seed, _TAG_PROFILE, i), cfg)
            for i in range(cfg.n_users)]


def _gen_key_events(profile: TypistProfile, rng: np.random.Generator,
                    n_keys: int) -> list[KeyEvent]:
    lat_sess = LATENCY_SESSION_SIGMA * rng.standard_normal()
    dwell_sess = DWELL_SESSION_SIGMA * rng.standard_normal()

    codes: list[str] = []
    while len(codes) < n_keys:
        for pi in rng.permutation(len(PHRASES)):
            if codes:
                codes.append("Space")
            codes.extend(_char_code(c) for c in PHRASES[pi])
            if len(codes) >= n_keys:
                break
    codes = codes[:n_keys]

    dwell_z = rng.standard_normal(n_keys)
    lat_z = rng.standard_normal(n_keys - 1)
    code_offsets = np.array([profile.dwell_code_offsets.get(c, 0.0) for c in codes])
    dwells = BASE_DWELL_MS * np.exp(
        profile.dwell_offset + code_offsets + dwell_sess + DWELL_SAMPLE_SIGMA * dwell_z)
    log_means = np.array([
        profile.digraph_log_mean(digraph_name(a, b))
        for a, b in zip(codes, codes[1:])
    ])
    lats = np.exp(log_means + lat_sess + LATENCY_SAMPLE_SIGMA * lat_z)
    # capture glitches: rare wild samples, as in real event streams
    dwell_glitch = rng.random(n_keys) < GLITCH_RATE
    dwells[dwell_glitch] = np.exp(rng.uniform(np.log(10.0), np.log(1000.0),
                                              int(dwell_glitch.sum())))
    lat_glitch = rng.random(n_keys - 1) < GLITCH_RATE
    lats[lat_glitch] = np.exp(rng.uniform(np.log(10.0), np.log(2000.0),
                                          int(lat_glitch.sum())))
    # a repeated code must be released before it goes down again
    same = np.array([a == b for a, b in zip(codes, codes[1:])])
    lats[same] = np.maximum(lats[same], dwells[:-1][same] + 2.0)

    downs = 400.0 + np.concatenate([[0.0], np.cumsum(lats)])
    ups = downs + dwells
    events = [KeyEvent(t_ms=int(round(t)), kind="key_down", code=c)
              for t, c in zip(downs, codes)]
    events += [KeyEvent(t_ms=int(round(t)), kind="key_up", code=c)
               for t, c in zip(ups, codes)]
    events.sort(key=lambda e: e.t_ms)
    return events


def _fold(values: np.ndarray, limit: int) -> np.ndarray:
    """Reflect values into [0, limit] (triangular fold)."""
    period = 2.0 * limit
    r = np.mod(values, period)
    return np.where(r <= limit, r, period - r)


def _gen_mouse_events(profile: TypistProfile, rng: np.random.Generator,
                      n_moves: int) -> list[MouseEvent]:
    speed_sess = SPEED_SESSION_SIGMA * rng.standard_normal()
    turn_sess = TURN_SESSION_SIGMA * rng.standard_normal()
    pause_rate_sess = PAUSE_RATE_SESSION_SIGMA * rng.standard_normal()
    pause_sess = PAUSE_SESSION_SIGMA * rng.standard_normal()
    hold_sess = HOLD_SESSION_SIGMA * rng.standard_normal()

    n_seg = n_moves - 1
    lengths = BASE_STEP_PX * np.exp(
        profile.step_offset + STEP_SAMPLE_SIGMA * rng.standard_normal(n_seg))
    length_glitch = rng.random(n_seg) < GLITCH_RATE
    lengths[length_glitch] = np.exp(rng.uniform(np.log(1.5), np.log(500.0),
                                                int(length_glitch.sum())))
    speed_sigma = SPEED_SAMPLE_SIGMA * math.exp(profile.speed_spread)
    speeds = BASE_SPEED_PX_S * np.exp(
        profile.speed_offset + speed_sess + speed_sigma * rng.standard_normal(n_seg))
    speed_glitch = rng.random(n_seg) < GLITCH_RATE
    speeds[speed_glitch] = np.exp(rng.uniform(np.log(15.0), np.log(9000.0),
                                              int(speed_glitch.sum())))
    turn_scale = BASE_TURN_RAD * math.exp(profile.turn_offset + turn_sess)
    turns = turn_scale * rng.standard_normal(n_seg - 1)
    turn_glitch = rng.random(n_seg - 1) < GLITCH_RATE
    turns[turn_glitch] = rng.uniform(-math.pi, math.pi, int(turn_glitch.sum()))
    headings = np.empty(n_seg)
    headings[0] = rng.uniform(-math.pi, math.pi)
    pull, pref = profile.direction_pull, profile.direction_pref
    for i in range(1, n_seg):
        # heading drifts toward the user's preferred axis, then wanders
        reversion = pull * math.remainder(pref - headings[i - 1], 2.0 * math.pi)
        headings[i] = headings[i - 1] + reversion + turns[i - 1]

    dts = np.maximum(lengths / speeds * 1000.0, 4.0)
    pause_rate = float(np.clip(
        BASE_PAUSE_RATE * math.exp(profile.pause_rate_offset + pause_rate_sess),
        0.01, 0.35))
    pause_mask = rng.random(n_seg) < pause_rate
    pause_durations = BASE_PAUSE_MS * np.exp(
        profile.pause_duration_offset + pause_sess
        + PAUSE_SAMPLE_SIGMA * rng.standard_normal(n_seg))
    dts = dts + pause_mask * pause_durations

    times = 600 + np.concatenate([[0], np.cumsum(np.maximum(np.round(dts), 1.0))])
    xs = 960.0 + np.concatenate([[0.0], np.cumsum(lengths * np.cos(headings))])
    ys = 540.0 + np.concatenate([[0.0], np.cumsum(lengths * np.sin(headings))])
    xs = np.round(_fold(xs, SCREEN_W)).astype(int)
    ys = np.round(_fold(ys, SCREEN_H)).astype(int)

    events = [MouseEvent(t_ms=int(t), kind="move", x=int(x), y=int(y))
              for t, x, y in zip(times, xs, ys)]

    n_clicks = max(1, n_moves // 60)
    anchor_idx = np.sort(rng.choice(n_moves, size=n_clicks, replace=False))
    holds = BASE_HOLD_MS * np.exp(
        profile.hold_offset + hold_sess + HOLD_SAMPLE_SIGMA * rng.standard_normal(n_clicks))
    buttons = np.where(rng.random(n_clicks) < 0.9, "left", "right")
    last_up = -1
    for idx, hold, button in zip(anchor_idx, holds, buttons):
        down_t = int(times[idx]) + 2
        up_t = down_t + max(20, int(round(hold)))
        if down_t <= last_up:  # keep clicks non-overlapping for clean matching
            continue
        move = events[idx]
        events.append(MouseEvent(t_ms=down_t, kind="button_down",
                                 x=move.x, y=move.y, button=str(button)))
        events.append(MouseEvent(t_ms=up_t, kind="button_up",
                                 x=move.x, y=move.y, button=str(button)))
        last_up = up_t
    events.sort(key=lambda e: e.t_ms)
    return events


def gen_session(profile: TypistProfile, session_seed,
                duration_target_ms: int = 180_000, *,
                session_id: str = "session", user_id: str = "user",
                started_at_ms: int = BASE_EPOCH_MS) -> SessionRecord:
    """Realize one session from a profile; bit-identical given the same seed."""
    rng = np.random.default_rng(session_seed)
    # activity volume varies per session: typing heavily, pointing lightly,
    # and vice versa; short-typing sessions are where mouse evidence matters
    key_volume = float(np.clip(np.exp(0.8 * rng.standard_normal()), 0.22, 2.2))
    move_volume = float(np.clip(np.exp(0.25 * rng.standard_normal()), 0.75, 1.9))
    n_keys = max(460, int(duration_target_ms // 160 * key_volume))
    n_moves = max(160, int(duration_target_ms // 110 * move_volume))
    key_events = _gen_key_events(profile, rng, n_keys)
    mouse_events = _gen_mouse_events(profile, rng, n_moves)
    return SessionRecord(
        session_id=session_id,
        user_id=user_id,
        started_at_ms=started_at_ms,
        device=profile.device,
        demographics=profile.demographics,
        key_events=tuple(key_events),
        mouse_events=tuple(mouse_events),
    )


def gen_ring_corpus(cfg: GeneratorConfig) -> tuple[list[SessionRecord], RingScenario]:
    """Full corpus plus ground truth: honest users and ring-operated identities.

    Each ring couples one fresh operator profile (the hidden cheater) to
    ring_size claimed identities with their own devices and demographics.
    Sessions are shuffled into a random arrival order via started_at_ms.
    """
    n_ring_users = cfg.n_rings * cfg.ring_size
    if n_ring_users > cfg.n_users:
        raise ConfigInfeasible(
            f"{cfg.n_rings} rings x {cfg.ring_size} identities exceed {cfg.n_users} users")
    n_honest = cfg.n_users - n_ring_users

    honest_profiles = [_draw_profile(_rng(cfg.seed, _TAG_PROFILE, i), cfg)
                       for i in range(n_honest)]
    user_ids = [f"u{i:05d}" for i in range(cfg.n_users)]
    honest_users = tuple(user_ids[:n_honest])

    operators: list[TypistProfile] = []
    identity_map: dict[str, tuple[str, ...]] = {}
    profile_by_user: dict[str, TypistProfile] = {
        uid: prof for uid, prof in zip(user_ids, honest_profiles)}
    for r in range(cfg.n_rings):
        operator = _draw_profile(_rng(cfg.seed, _TAG_OPERATOR, r), cfg)
        operators.append(operator)
        controlled = []
        for k in range(cfg.ring_size):
            identity_index = n_honest + r * cfg.ring_size + k
            uid = user_ids[identity_index]
            device, demographics = _draw_context(
                _rng(cfg.seed, _TAG_IDENTITY, identity_index), cfg)
            profile_by_user[uid] = replace(operator, device=device,
                                           demographics=demographics)
            controlled.append(uid)
        identity_map[f"op{r:03d}"] = tuple(controlled)

    n_sessions = cfg.n_users * cfg.sessions_per_user
    schedule_rng = _rng(cfg.seed, _TAG_SCHEDULE)
    offsets = np.sort(schedule_rng.choice(n_sessions * 120_000, size=n_sessions,
                                          replace=False))
    order = schedule_rng.permutation(n_sessions)

    sessions: list[SessionRecord] = []
    slot = 0
    for i, uid in enumerate(user_ids):
        for j in range(cfg.sessions_per_user):
            started = BASE_EPOCH_MS + int(offsets[order[slot]])
            slot += 1
            sessions.append(gen_session(
                profile_by_user[uid],
                np.random.SeedSequence([cfg.seed & 0xFFFFFFFF, _TAG_SESSION, i, j]),
                cfg.duration_target_ms,
                session_id=f"{uid}-s{j}",
                user_id=uid,
                started_at_ms=started,
            ))
    scenario = RingScenario(operators=tuple(operators), identity_map=identity_map,
                            honest_users=honest_users)
    return sessions, scenario


def gen_corpus(cfg: GeneratorConfig) -> list[SessionRecord]:
    """Honest-only corpus (no rings)."""
    sessions, _ = gen_ring_corpus(replace(cfg, n_rings=0))
    return sessions
