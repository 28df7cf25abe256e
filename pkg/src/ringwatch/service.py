"""Online detection service: session gallery, flagging, review queue.

Each incoming session is embedded and compared against every prior
session claimed by a different user; similarities at or above the
calibrated threshold create a pending flag for proctor review. State is
persisted as an append-only event log plus periodic snapshots, so a
restarted service replays to exactly the gallery and queue it had.

Enrollments are serialized through one lock (single-writer), so flag
outcomes are deterministic given arrival order; reads may run
concurrently.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ringwatch.errors import (
    AlreadyReviewed,
    DuplicateSessionId,
    ModelNotLoaded,
    UnknownFlag,
    UnknownSession,
    UnusableSession,
)
from ringwatch.network import Network, embed_session, embed_similarity, session_usable
from ringwatch.session import DEFAULT_POLICY, SessionRecord, ValidationPolicy, validate_session

VERDICTS = ("confirmed", "cleared")


@dataclass(frozen=True)
class GalleryEntry:
    session_id: str
    user_id: str
    started_at_ms: int
    keyboard_layout: str
    mouse_kind: str
    region: str
    gender: str
    age_band: str
    thumbnail_ref: str
    usable_for_keystroke: bool
    usable_for_mouse: bool
    seq: int  # enrollment order
    embedding: tuple[float, ...] | None  # None for metadata-only entries

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "user_id": self.user_id,
            "started_at_ms": self.started_at_ms,
            "keyboard_layout": self.keyboard_layout,
            "mouse_kind": self.mouse_kind,
            "region": self.region,
            "gender": self.gender,
            "age_band": self.age_band,
            "thumbnail_ref": self.thumbnail_ref,
            "usable_for_keystroke": self.usable_for_keystroke,
            "usable_for_mouse": self.usable_for_mouse,
            "seq": self.seq,
            "embedding": list(self.embedding) if self.embedding is not None else None,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GalleryEntry":
        embedding = data.get("embedding")
        return cls(
            session_id=data["session_id"],
            user_id=data["user_id"],
            started_at_ms=data["started_at_ms"],
            keyboard_layout=data["keyboard_layout"],
            mouse_kind=data["mouse_kind"],
            region=data["region"],
            gender=data["gender"],
            age_band=data["age_band"],
            thumbnail_ref=data["thumbnail_ref"],
            usable_for_keystroke=data["usable_for_keystroke"],
            usable_for_mouse=data["usable_for_mouse"],
            seq=data["seq"],
            embedding=tuple(embedding) if embedding is not None else None,
        )


@dataclass(frozen=True)
class MatchCandidate:
    session_id: str
    user_id: str
    similarity: float
    rank: int

    def to_dict(self) -> dict:
        return {"session_id": self.session_id, "user_id": self.user_id,
                "similarity": self.similarity, "rank": self.rank}

    @classmethod
    def from_dict(cls, data: dict) -> "MatchCandidate":
        return cls(session_id=data["session_id"], user_id=data["user_id"],
                   similarity=data["similarity"], rank=data["rank"])


@dataclass
class FlagRecord:
    session_id: str
    matches: tuple[MatchCandidate, ...]
    created_seq: int
    created_at_ms: int
    status: str = "pending"  # pending -> confirmed | cleared
    note: str = ""

    @property
    def top_similarity(self) -> float:
        return self.matches[0].similarity

    def to_dict(self) -> dict:
        return {"session_id": self.session_id,
                "matches": [m.to_dict() for m in self.matches],
                "created_seq": self.created_seq,
                "created_at_ms": self.created_at_ms,
                "status": self.status, "note": self.note}

    @classmethod
    def from_dict(cls, data: dict) -> "FlagRecord":
        return cls(session_id=data["session_id"],
                   matches=tuple(MatchCandidate.from_dict(m) for m in data["matches"]),
                   created_seq=data["created_seq"],
                   created_at_ms=data["created_at_ms"],
                   status=data["status"], note=data["note"])


@dataclass(frozen=True)
class EnrollResult:
    session_id: str
    flag: FlagRecord | None
    usable: bool
    note: str


def _rank_candidates(scored: list[tuple[float, GalleryEntry]]) -> list[MatchCandidate]:
    scored.sort(key=lambda se: (-se[0], se[1].started_at_ms, se[1].session_id))
    return [MatchCandidate(session_id=e.session_id, user_id=e.user_id,
                           similarity=s, rank=i + 1)
            for i, (s, e) in enumerate(scored)]


class DetectorService:
    """Gallery plus flag queue behind a single-writer lock."""

    def __init__(self, model: Network | None, threshold: float | None,
                 store_dir: str | Path | None = None,
                 history_window: int | None = None,
                 snapshot_every: int = 512,
                 policy: ValidationPolicy = DEFAULT_POLICY) -> None:
        self.model = model
        self.threshold = threshold
        self.history_window = history_window
        self.snapshot_every = snapshot_every
        self.policy = policy
        self._lock = threading.RLock()
        self._entries: dict[str, GalleryEntry] = {}
        self._flags: dict[str, FlagRecord] = {}
        self._seq = 0
        self._events_since_snapshot = 0
        self._store_dir = Path(store_dir) if store_dir is not None else None
        self._log_handle = None
        if self._store_dir is not None:
            self._store_dir.mkdir(parents=True, exist_ok=True)
            self._load_store()
            self._log_handle = open(self._log_path, "a", encoding="utf-8")

    # -- persistence ------------------------------------------------------

    @property
    def _log_path(self) -> Path:
        assert self._store_dir is not None
        return self._store_dir / "log.jsonl"

    @property
    def _snapshot_path(self) -> Path:
        assert self._store_dir is not None
        return self._store_dir / "snapshot.json"

    def _load_store(self) -> None:
        if self._snapshot_path.exists():
            snapshot = json.loads(self._snapshot_path.read_text(encoding="utf-8"))
            self._seq = snapshot["seq"]
            for raw in snapshot["entries"]:
                entry = GalleryEntry.from_dict(raw)
                self._entries[entry.session_id] = entry
            for raw in snapshot["flags"]:
                flag = FlagRecord.from_dict(raw)
                self._flags[flag.session_id] = flag
        if self._log_path.exists():
            with open(self._log_path, encoding="utf-8") as handle:
                for line in handle:
                    if line.strip():
                        self._apply_event(json.loads(line))

    def _apply_event(self, event: dict) -> None:
        kind = event["type"]
        if kind == "enroll":
            entry = GalleryEntry.from_dict(event["entry"])
            self._entries[entry.session_id] = entry
            self._seq = max(self._seq, entry.seq + 1)
        elif kind == "flag":
            flag = FlagRecord.from_dict(event["flag"])
            self._flags[flag.session_id] = flag
        elif kind == "review":
            flag = self._flags[event["session_id"]]
            flag.status = event["verdict"]
            flag.note = event["note"]

    def _append_event(self, event: dict) -> None:
        if self._log_handle is None:
            return
        self._log_handle.write(json.dumps(event, separators=(",", ":")) + "\n")
        self._log_handle.flush()
        os.fsync(self._log_handle.fileno())
        self._events_since_snapshot += 1
        if self._events_since_snapshot >= self.snapshot_every:
            self.snapshot()

    def state_dict(self) -> dict:
        """Canonical full state; used for snapshots and store comparison."""
        with self._lock:
            return {
                "seq": self._seq,
                "entries": [e.to_dict() for e in self._entries.values()],
                "flags": [f.to_dict() for f in self._flags.values()],
            }

    def state_bytes(self) -> bytes:
        return json.dumps(self.state_dict(), sort_keys=True,
                          separators=(",", ":")).encode("utf-8")

    def snapshot(self) -> None:
        """Write a snapshot and truncate the log."""
        if self._store_dir is None:
            return
        with self._lock:
            tmp = self._snapshot_path.with_suffix(".tmp")
            tmp.write_text(json.dumps(self.state_dict(), separators=(",", ":")),
                           encoding="utf-8")
            tmp.replace(self._snapshot_path)
            if self._log_handle is not None:
                self._log_handle.close()
            self._log_handle = open(self._log_path, "w", encoding="utf-8")
            self._events_since_snapshot = 0

    def close(self) -> None:
        if self._store_dir is not None:
            self.snapshot()
            if self._log_handle is not None:
                self._log_handle.close()
                self._log_handle = None

    # -- operations ---------------------------------------------------------

    def enroll_session(self, record: SessionRecord) -> EnrollResult:
        """Embed, scan the gallery, and flag if any cross-user similarity
        reaches the threshold. Sessions unusable for the loaded model are
        kept as metadata-only entries and never matched."""
        if self.model is None or self.threshold is None:
            raise ModelNotLoaded("service needs a model and a threshold")
        with self._lock:
            if record.session_id in self._entries:
                raise DuplicateSessionId(record.session_id)
            outcome = validate_session(record, self.policy)
            usable = session_usable(record, self.model.config.variant, self.policy)
            embedding = None
            if usable:
                embedding = tuple(float(v) for v in
                                  embed_session(self.model, record, self.policy))
            entry = GalleryEntry(
                session_id=record.session_id,
                user_id=record.user_id,
                started_at_ms=record.started_at_ms,
                keyboard_layout=record.device.keyboard_layout,
                mouse_kind=record.device.mouse_kind,
                region=record.device.region,
                gender=record.demographics.gender,
                age_band=record.demographics.age_band,
                thumbnail_ref=f"thumbs/{record.session_id}.jpg",
                usable_for_keystroke=outcome.usable_for_keystroke,
                usable_for_mouse=outcome.usable_for_mouse,
                seq=self._seq,
                embedding=embedding,
            )
            flag = None
            if embedding is not None:
                incoming = np.asarray(embedding)
                scored = [
                    (embed_similarity(incoming, np.asarray(prior.embedding),
                                      self.model.tau), prior)
                    for prior in self._candidate_entries(record.user_id)
                ]
                hits = [(s, e) for s, e in scored if s >= self.threshold]
                if hits:
                    flag = FlagRecord(
                        session_id=record.session_id,
                        matches=tuple(_rank_candidates(hits)),
                        created_seq=entry.seq,
                        created_at_ms=record.started_at_ms,
                    )
            self._entries[record.session_id] = entry
            self._seq += 1
            self._append_event({"type": "enroll", "entry": entry.to_dict()})
            if flag is not None:
                self._flags[record.session_id] = flag
                self._append_event({"type": "flag", "flag": flag.to_dict()})
            note = "" if usable else "metadata-only: insufficient data for matching"
            return EnrollResult(session_id=record.session_id, flag=flag,
                                usable=usable, note=note)

    def _candidate_entries(self, exclude_user: str) -> list[GalleryEntry]:
        entries = [e for e in self._entries.values()
                   if e.embedding is not None and e.user_id != exclude_user]
        if self.history_window is not None and len(entries) > self.history_window:
            entries = sorted(entries, key=lambda e: e.seq)[-self.history_window:]
        return entries

    def find_related(self, session_id: str, top_k: int = 8) -> list[MatchCandidate]:
        """Top-k cross-user candidates regardless of threshold, rank order."""
        with self._lock:
            entry = self._entries.get(session_id)
            if entry is None:
                raise UnknownSession(session_id)
            if entry.embedding is None:
                raise UnusableSession(session_id)
            if self.model is None:
                raise ModelNotLoaded("no model loaded")
            query = np.asarray(entry.embedding)
            scored = [
                (embed_similarity(query, np.asarray(other.embedding), self.model.tau),
                 other)
                for other in self._entries.values()
                if other.embedding is not None and other.user_id != entry.user_id
            ]
            return _rank_candidates(scored)[:top_k]

    def record_review(self, session_id: str, verdict: str, note: str = "") -> FlagRecord:
        if verdict not in VERDICTS:
            raise ValueError(f"verdict must be one of {VERDICTS}, got {verdict!r}")
        with self._lock:
            flag = self._flags.get(session_id)
            if flag is None:
                raise UnknownFlag(session_id)
            if flag.status != "pending":
                raise AlreadyReviewed(f"{session_id} already {flag.status}")
            flag.status = verdict
            flag.note = note
            self._append_event({"type": "review", "session_id": session_id,
                                "verdict": verdict, "note": note})
            return flag

    def pending_queue(self, limit: int | None = None) -> list[FlagRecord]:
        """Pending flags, most suspicious first, then oldest first."""
        with self._lock:
            pending = [f for f in self._flags.values() if f.status == "pending"]
            pending.sort(key=lambda f: (-f.top_similarity, f.created_seq))
            return pending[:limit] if limit is not None else pending

    def get_entry(self, session_id: str) -> GalleryEntry:
        with self._lock:
            entry = self._entries.get(session_id)
            if entry is None:
                raise UnknownSession(session_id)
            return entry

    def get_flag(self, session_id: str) -> FlagRecord:
        with self._lock:
            flag = self._flags.get(session_id)
            if flag is None:
                raise UnknownFlag(session_id)
            return flag

    def find_flag(self, session_id: str) -> FlagRecord | None:
        with self._lock:
            return self._flags.get(session_id)

    @property
    def gallery_size(self) -> int:
        with self._lock:
            return len(self._entries)

    def backfill_audit(self) -> list[dict]:
        """Brute-force pairwise scan of the whole gallery (audit tool)."""
        if self.model is None or self.threshold is None:
            raise ModelNotLoaded("service needs a model and a threshold")
        with self._lock:
            entries = [e for e in self._entries.values() if e.embedding is not None]
            hits = []
            for i, a in enumerate(entries):
                va = np.asarray(a.embedding)
                for b in entries[i + 1:]:
                    if a.user_id == b.user_id:
                        continue
                    sim = embed_similarity(va, np.asarray(b.embedding), self.model.tau)
                    if sim >= self.threshold:
                        hits.append({"session_a": a.session_id, "session_b": b.session_id,
                                     "user_a": a.user_id, "user_b": b.user_id,
                                     "similarity": sim})
            hits.sort(key=lambda h: (-h["similarity"], h["session_a"], h["session_b"]))
            return hits
