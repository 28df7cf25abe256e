"""Session data model: event types, v1 document parsing, validation.

All types are immutable after construction and safe to share across
threads. Parsing and validation are pure functions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from ringwatch.errors import MalformedDocument, NegativeTimestamp, UnknownEventKind

SCHEMA_V1 = "ringwatch/session/v1"

KEY_EVENT_KINDS = ("key_down", "key_up")
MOUSE_EVENT_KINDS = ("move", "button_down", "button_up")
MOUSE_BUTTONS = ("left", "right", "middle")

GENDERS = ("female", "male", "others", "unknown")
AGE_BANDS = ("0-14", "15-20", "21-25", "26-30", "31-35", "36-40", "41+", "unknown")


@dataclass(frozen=True, slots=True)
class KeyEvent:
    t_ms: int
    kind: str  # key_down | key_up
    code: str  # physical key identifier, e.g. "KeyA"


@dataclass(frozen=True, slots=True)
class MouseEvent:
    t_ms: int
    kind: str  # move | button_down | button_up
    x: int
    y: int
    button: str | None = None  # present iff kind != move


@dataclass(frozen=True, slots=True)
class DeviceContext:
    keyboard_layout: str
    mouse_kind: str
    region: str


@dataclass(frozen=True, slots=True)
class Demographics:
    gender: str = "unknown"
    age_band: str = "unknown"


@dataclass(frozen=True, slots=True)
class SessionRecord:
    session_id: str
    user_id: str
    started_at_ms: int
    device: DeviceContext
    demographics: Demographics
    key_events: tuple[KeyEvent, ...]
    mouse_events: tuple[MouseEvent, ...]


@dataclass(frozen=True, slots=True)
class ValidationPolicy:
    min_keystrokes: int = 50  # matched down/up pairs
    min_mouse_moves: int = 100


DEFAULT_POLICY = ValidationPolicy()


@dataclass(frozen=True, slots=True)
class ValidationOutcome:
    usable_for_keystroke: bool
    usable_for_mouse: bool
    dropped_key_events: int
    matched_key_pairs: int
    mouse_move_count: int


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise MalformedDocument(message)


def _get_str(obj: dict, key: str, context: str) -> str:
    value = obj.get(key)
    _require(isinstance(value, str) and value != "", f"{context}: missing or empty '{key}'")
    return value


def _get_int(obj: dict, key: str, context: str) -> int:
    value = obj.get(key)
    _require(isinstance(value, int) and not isinstance(value, bool),
             f"{context}: '{key}' must be an integer")
    return value


def _parse_event(raw: object, index: int) -> KeyEvent | MouseEvent:
    _require(isinstance(raw, dict), f"event {index}: not an object")
    assert isinstance(raw, dict)
    t = _get_int(raw, "t", f"event {index}")
    if t < 0:
        raise NegativeTimestamp(f"event {index}: t={t}")
    kind = _get_str(raw, "kind", f"event {index}")
    if kind in KEY_EVENT_KINDS:
        code = _get_str(raw, "code", f"event {index}")
        return KeyEvent(t_ms=t, kind=kind, code=code)
    if kind in MOUSE_EVENT_KINDS:
        x = _get_int(raw, "x", f"event {index}")
        y = _get_int(raw, "y", f"event {index}")
        _require(x >= 0 and y >= 0, f"event {index}: negative coordinates")
        button = raw.get("button")
        if kind == "move":
            _require(button is None, f"event {index}: move events carry no button")
        else:
            _require(button in MOUSE_BUTTONS, f"event {index}: bad button {button!r}")
        return MouseEvent(t_ms=t, kind=kind, x=x, y=y, button=button)
    raise UnknownEventKind(f"event {index}: kind={kind!r}")


def parse_session(document: bytes | str) -> SessionRecord:
    """Parse one v1 session document into a SessionRecord.

    Events are stably sorted by timestamp, so out-of-order input yields
    the same multiset of events ordered by (t_ms, input position).
    Unknown top-level fields are ignored; unknown event kinds are an error.
    """
    if isinstance(document, bytes):
        try:
            document = document.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedDocument(f"not UTF-8: {exc}") from exc
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise MalformedDocument(f"invalid JSON: {exc}") from exc
    _require(isinstance(doc, dict), "document is not an object")

    schema = doc.get("schema")
    _require(schema == SCHEMA_V1, f"unsupported schema {schema!r}")
    session_id = _get_str(doc, "session_id", "document")
    user_id = _get_str(doc, "user_id", "document")
    started_at_ms = _get_int(doc, "started_at_ms", "document")

    device_raw = doc.get("device")
    _require(isinstance(device_raw, dict), "missing 'device'")
    device = DeviceContext(
        keyboard_layout=_get_str(device_raw, "keyboard_layout", "device"),
        mouse_kind=_get_str(device_raw, "mouse_kind", "device"),
        region=_get_str(device_raw, "region", "device"),
    )

    demo_raw = doc.get("demographics")
    _require(isinstance(demo_raw, dict), "missing 'demographics'")
    gender = demo_raw.get("gender") or "unknown"
    age_band = demo_raw.get("age_band") or "unknown"
    _require(gender in GENDERS, f"demographics: bad gender {gender!r}")
    _require(age_band in AGE_BANDS, f"demographics: bad age_band {age_band!r}")
    demographics = Demographics(gender=gender, age_band=age_band)

    events_raw = doc.get("events")
    _require(isinstance(events_raw, list), "missing 'events'")
    key_events: list[KeyEvent] = []
    mouse_events: list[MouseEvent] = []
    for i, raw in enumerate(events_raw):
        event = _parse_event(raw, i)
        if isinstance(event, KeyEvent):
            key_events.append(event)
        else:
            mouse_events.append(event)

    # sorted() is stable: ties keep input order.
    key_events.sort(key=lambda e: e.t_ms)
    mouse_events.sort(key=lambda e: e.t_ms)
    return SessionRecord(
        session_id=session_id,
        user_id=user_id,
        started_at_ms=started_at_ms,
        device=device,
        demographics=demographics,
        key_events=tuple(key_events),
        mouse_events=tuple(mouse_events),
    )


def _event_to_dict(event: KeyEvent | MouseEvent) -> dict:
    if isinstance(event, KeyEvent):
        return {"t": event.t_ms, "kind": event.kind, "code": event.code}
    out: dict = {"t": event.t_ms, "kind": event.kind, "x": event.x, "y": event.y}
    if event.button is not None:
        out["button"] = event.button
    return out


def serialize_session(record: SessionRecord) -> str:
    """Render a SessionRecord as a canonical v1 document (stable bytes).

    parse_session(serialize_session(r)) == r for any valid record.
    """
    merged: list[dict] = []
    ki, mi = 0, 0
    keys, mice = record.key_events, record.mouse_events
    while ki < len(keys) or mi < len(mice):
        if mi >= len(mice) or (ki < len(keys) and keys[ki].t_ms <= mice[mi].t_ms):
            merged.append(_event_to_dict(keys[ki]))
            ki += 1
        else:
            merged.append(_event_to_dict(mice[mi]))
            mi += 1
    doc = {
        "schema": SCHEMA_V1,
        "session_id": record.session_id,
        "user_id": record.user_id,
        "started_at_ms": record.started_at_ms,
        "device": {
            "keyboard_layout": record.device.keyboard_layout,
            "mouse_kind": record.device.mouse_kind,
            "region": record.device.region,
        },
        "demographics": {
            "gender": record.demographics.gender,
            "age_band": record.demographics.age_band,
        },
        "events": merged,
    }
    return json.dumps(doc, separators=(",", ":"), ensure_ascii=False)


def match_key_events(events: tuple[KeyEvent, ...] | list[KeyEvent],
                     ) -> tuple[list[tuple[KeyEvent, KeyEvent]], int]:
    """Pair key_down/key_up events per key code; return (pairs, dropped count).

    A key press is the first key_down of a code followed by that code's next
    key_up. Repeated key_down without an intervening key_up (auto-repeat or
    capture glitches) is dropped, as are orphan key_up events and downs left
    open at session end. Dropped events never feed timing features.
    """
    open_down: dict[str, KeyEvent] = {}
    pairs: list[tuple[KeyEvent, KeyEvent]] = []
    dropped = 0
    for event in events:
        if event.kind == "key_down":
            if event.code in open_down:
                dropped += 1
            else:
                open_down[event.code] = event
        else:
            down = open_down.pop(event.code, None)
            if down is None:
                dropped += 1
            else:
                pairs.append((down, event))
    dropped += len(open_down)
    pairs.sort(key=lambda p: p[0].t_ms)
    return pairs, dropped


def validate_session(record: SessionRecord,
                     policy: ValidationPolicy = DEFAULT_POLICY) -> ValidationOutcome:
    """Check a parsed session against the usability policy. Never raises."""
    pairs, dropped = match_key_events(record.key_events)
    moves = sum(1 for e in record.mouse_events if e.kind == "move")
    return ValidationOutcome(
        usable_for_keystroke=len(pairs) >= policy.min_keystrokes,
        usable_for_mouse=moves >= policy.min_mouse_moves,
        dropped_key_events=dropped,
        matched_key_pairs=len(pairs),
        mouse_move_count=moves,
    )


def sessions_to_jsonl(records: list[SessionRecord]) -> str:
    """Newline-delimited corpus: one v1 document per line."""
    return "".join(serialize_session(r) + "\n" for r in records)


def sessions_from_jsonl(text: str) -> list[SessionRecord]:
    return [parse_session(line) for line in text.splitlines() if line.strip()]
