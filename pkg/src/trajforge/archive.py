"""Run persistence: JSON-lines event log, content-addressed candidate store,
hashed checkpoints and export of the best heuristic.

Layout of one run::

    runs/<run_id>/
        events.jsonl
        windows.txt        # training windows the candidates were scored on
        checkpoints/gen_0003.json
        candidates/<sha256>.py
        export/
"""
from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

from .errors import TrajforgeError
from .runtime import Candidate

EVENT_KINDS = (
    "init",
    "llm_request",
    "llm_response",
    "candidate_evaluated",
    "generation_summary",
    "checkpoint",
    "export",
)
# keys whose values depend on the wall clock; excluded when comparing logs
TIMING_KEYS = ("ts", "timing")


class CorruptCheckpoint(TrajforgeError):
    pass


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


# -- state containers -------------------------------------------------------------

@dataclass(frozen=True)
class ArchiveEntry:
    candidate_id: str
    objective_j: float
    generation: int


@dataclass
class EliteArchive:
    """Append-only record of every candidate that reached the elite tier."""

    entries: list[ArchiveEntry] = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def __contains__(self, candidate_id: str) -> bool:
        return any(e.candidate_id == candidate_id for e in self.entries)

    def add(self, candidate: Candidate, generation: int) -> bool:
        if not candidate.ok:
            raise ValueError("only successfully evaluated candidates can be archived")
        if candidate.id in self:
            return False
        self.entries.append(ArchiveEntry(candidate.id, float(candidate.objective_j), generation))
        return True

    def to_list(self) -> list:
        return [[e.candidate_id, e.objective_j, e.generation] for e in self.entries]

    @classmethod
    def from_list(cls, rows) -> "EliteArchive":
        return cls([ArchiveEntry(str(i), float(j), int(g)) for i, j, g in rows])


@dataclass
class ReflectionStore:
    short_term: dict[tuple[str, str], str] = field(default_factory=dict)
    long_term: list[str] = field(default_factory=list)

    @property
    def long_term_text(self) -> str:
        return "\n".join(self.long_term)

    def to_dict(self) -> dict:
        return {
            "short_term": [[w, b, t] for (w, b), t in self.short_term.items()],
            "long_term": list(self.long_term),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReflectionStore":
        return cls({(w, b): t for w, b, t in d["short_term"]}, list(d["long_term"]))


@dataclass
class RunState:
    config: dict
    generation: int = 0
    candidates: dict[str, Candidate] = field(default_factory=dict)
    population: list[str] = field(default_factory=list)
    archive: EliteArchive = field(default_factory=EliteArchive)
    reflections: ReflectionStore = field(default_factory=ReflectionStore)
    rng_state: dict = field(default_factory=dict)
    event_seq: int = 0
    evaluations: int = 0
    best_history: list[float] = field(default_factory=list)

    def members(self) -> list[Candidate]:
        return [self.candidates[i] for i in self.population]

    def best(self) -> Candidate | None:
        ok = [c for c in self.members() if c.ok]
        if not ok:
            return None
        return min(ok, key=lambda c: c.objective_j)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "generation": self.generation,
            "candidates": [c.to_dict() for c in self.candidates.values()],
            "population": list(self.population),
            "archive": self.archive.to_list(),
            "reflections": self.reflections.to_dict(),
            "rng_state": self.rng_state,
            "event_seq": self.event_seq,
            "evaluations": self.evaluations,
            "best_history": list(self.best_history),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunState":
        cands = [Candidate.from_dict(c) for c in d["candidates"]]
        return cls(
            config=d["config"],
            generation=int(d["generation"]),
            candidates={c.id: c for c in cands},
            population=list(d["population"]),
            archive=EliteArchive.from_list(d["archive"]),
            reflections=ReflectionStore.from_dict(d["reflections"]),
            rng_state=d["rng_state"],
            event_seq=int(d["event_seq"]),
            evaluations=int(d["evaluations"]),
            best_history=[float(x) for x in d["best_history"]],
        )


# -- event log ----------------------------------------------------------------------

def read_events(path) -> list[dict]:
    """Parse a log, ignoring a torn final line left by an interrupted write."""
    events = []
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        return events
    lines = text.split("\n")
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            events.append(json.loads(line))
        except json.JSONDecodeError:
            if i == len(lines) - 1:
                break
            raise
    return events


class EventLog:
    """Append-only JSON-lines log, one record per event, fsynced on append."""

    def __init__(self, path, truncate_to_seq: int | None = None, clock=time.time):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._clock = clock
        events = read_events(self.path)
        if truncate_to_seq is not None:
            events = [e for e in events if e["seq"] <= truncate_to_seq]
        # rewrite so a torn tail or discarded suffix does not linger
        if self.path.exists():
            with open(self.path, "w", encoding="utf-8") as fh:
                for e in events:
                    fh.write(canonical_json(e) + "\n")
        self.seq = events[-1]["seq"] if events else 0
        self._fh = open(self.path, "a", encoding="utf-8")

    def append(self, kind: str, payload: dict) -> int:
        if kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {kind!r}")
        self.seq += 1
        record = {"seq": self.seq, "ts": round(self._clock(), 6), "kind": kind, "payload": payload}
        self._fh.write(canonical_json(record) + "\n")
        self._fh.flush()
        os.fsync(self._fh.fileno())
        return self.seq

    def close(self):
        if not self._fh.closed:
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def append_event(log: EventLog, kind: str, payload: dict) -> int:
    return log.append(kind, payload)


def strip_timing(obj):
    """Drop wall-clock fields recursively, for comparing runs."""
    if isinstance(obj, dict):
        return {k: strip_timing(v) for k, v in obj.items() if k not in TIMING_KEYS}
    if isinstance(obj, list):
        return [strip_timing(v) for v in obj]
    return obj


def iter_kind(events, kind: str) -> Iterator[dict]:
    return (e for e in events if e["kind"] == kind)


# -- candidate store ------------------------------------------------------------------

class CandidateStore:
    """Sources keyed by their SHA-256; identical text is stored once."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def put(self, source: str) -> str:
        digest = sha256_text(source)
        path = self.root / f"{digest}.py"
        if not path.exists():
            tmp = path.with_suffix(".tmp")
            tmp.write_text(source, encoding="utf-8")
            os.replace(tmp, path)
        return digest

    def get(self, digest: str) -> str:
        return (self.root / f"{digest}.py").read_text(encoding="utf-8")

    def __len__(self):
        return sum(1 for _ in self.root.glob("*.py"))


# -- checkpoints --------------------------------------------------------------------------

def checkpoint(state: RunState, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    body = state.to_dict()
    record = {"format": 1, "sha256": sha256_text(canonical_json(body)), "state": body}
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(canonical_json(record), encoding="utf-8")
    os.replace(tmp, path)
    return path


def restore(path) -> RunState:
    try:
        record = json.loads(Path(path).read_text(encoding="utf-8"))
        body = record["state"]
        expected = record["sha256"]
    except (json.JSONDecodeError, KeyError, TypeError, UnicodeDecodeError) as exc:
        raise CorruptCheckpoint(f"{path}: unreadable checkpoint ({exc})") from None
    if sha256_text(canonical_json(body)) != expected:
        raise CorruptCheckpoint(f"{path}: hash mismatch")
    return RunState.from_dict(body)


def latest_checkpoint(run_dir) -> Path | None:
    found = sorted((Path(run_dir) / "checkpoints").glob("gen_*.json"))
    return found[-1] if found else None


# -- export -------------------------------------------------------------------------------

def lineage_chain(state: RunState, candidate_id: str) -> list[str]:
    """Follow the better parent (last listed) back to a parentless candidate."""
    chain = [candidate_id]
    seen = {candidate_id}
    current = state.candidates[candidate_id]
    while current.parent_ids:
        parent = current.parent_ids[-1]
        if parent in seen or parent not in state.candidates:
            break
        chain.append(parent)
        seen.add(parent)
        current = state.candidates[parent]
    return chain


def export_best(state: RunState, out_dir, held_out_report: dict | None = None) -> dict:
    best = state.best()
    if best is None:
        raise TrajforgeError("no successfully evaluated candidate to export")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    source_file = out / "heuristic.py"
    source_file.write_text(best.source, encoding="utf-8")
    manifest = {
        "candidate_id": best.id,
        "generation": best.generation,
        "objective_j": best.objective_j,
        "source_file": source_file.name,
        "source_sha256": sha256_text(best.source),
        "config_fingerprint": sha256_text(canonical_json(state.config)),
        "held_out": held_out_report,
        "lineage": [
            {
                "id": cid,
                "generation": state.candidates[cid].generation,
                "operator": state.candidates[cid].operator,
                "parent_ids": list(state.candidates[cid].parent_ids),
                "objective_j": state.candidates[cid].objective_j,
            }
            for cid in lineage_chain(state, best.id)
        ],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest
