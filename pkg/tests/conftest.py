import numpy as np
import pytest

from ringwatch.session import (
    Demographics,
    DeviceContext,
    KeyEvent,
    MouseEvent,
    SessionRecord,
)
from ringwatch.simulate import GeneratorConfig, gen_corpus

DEVICE = DeviceContext(keyboard_layout="qwerty-us", mouse_kind="optical", region="eu")
DEMO = Demographics(gender="female", age_band="21-25")


def make_record(key_events=(), mouse_events=(), session_id="s1", user_id="u1",
                device=DEVICE, demographics=DEMO, started_at_ms=1_000):
    return SessionRecord(
        session_id=session_id,
        user_id=user_id,
        started_at_ms=started_at_ms,
        device=device,
        demographics=demographics,
        key_events=tuple(key_events),
        mouse_events=tuple(mouse_events),
    )


def typed_keys(codes, t0=0, dwell=80, gap=150):
    """Strictly sequential presses: down/up per code, `gap` between downs."""
    events = []
    t = t0
    for code in codes:
        events.append(KeyEvent(t_ms=t, kind="key_down", code=code))
        events.append(KeyEvent(t_ms=t + dwell, kind="key_up", code=code))
        t += gap
    return sorted(events, key=lambda e: e.t_ms)


def moved_mouse(points, t0=0, dt=50):
    return [MouseEvent(t_ms=t0 + i * dt, kind="move", x=x, y=y)
            for i, (x, y) in enumerate(points)]


@pytest.fixture(scope="session")
def small_corpus():
    """24 users x 3 short sessions; shared by sampling/service tests."""
    cfg = GeneratorConfig(n_users=24, sessions_per_user=3, separation=1.5,
                          seed=42, duration_target_ms=30_000)
    return gen_corpus(cfg)


@pytest.fixture()
def rng():
    return np.random.default_rng(20240801)


@pytest.fixture(scope="session")
def tiny_model(small_corpus):
    """Quickly trained combined-variant network for service/API tests."""
    from ringwatch.network import NetworkConfig, TrainConfig, train

    net, _ = train(small_corpus, NetworkConfig(input_dim=180, seed=4),
                   TrainConfig(batch_users=8, epochs=8, seed=4))
    return net
