"""Track-file ingestion and fixed-length observation/prediction windows.

Raw files hold one observation per line, four whitespace-separated numbers
(frame, agent, x, y by default). A scene is one file. Windows slide over the
scene's sorted list of distinct frame ids; an agent belongs to a window only
if it is observed in every one of the ``t_obs + t_pred`` frames.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import NonFiniteValue, TrajforgeError

T_OBS = 8
T_PRED = 12
FRAME_STEP_SECONDS = 0.4

BENCHMARK_DATASETS = ("eth", "hotel", "univ", "zara1", "zara2")
DEFAULT_COLUMN_ORDER = ("frame", "agent", "x", "y")


class MalformedLine(TrajforgeError, ValueError):
    def __init__(self, line_no: int, text: str = ""):
        super().__init__(f"malformed line {line_no}: {text!r}")
        self.line_no = line_no


class DuplicateObservation(TrajforgeError, ValueError):
    def __init__(self, frame: int, agent: int):
        super().__init__(f"duplicate observation for frame {frame}, agent {agent}")
        self.frame = frame
        self.agent = agent


class UnknownDataset(TrajforgeError, KeyError):
    pass


@dataclass(frozen=True, order=True)
class RawTrackRow:
    frame_id: int
    agent_id: int
    x: float
    y: float


@dataclass
class TrajectoryWindow:
    scene_id: str
    start_frame: int
    obs: np.ndarray  # [A, t_obs, 2]
    future: np.ndarray  # [A, t_pred, 2]
    agent_ids: list[int] = field(default_factory=list)

    @property
    def num_agents(self) -> int:
        return self.obs.shape[0]

    def __eq__(self, other):
        if not isinstance(other, TrajectoryWindow):
            return NotImplemented
        return (
            self.scene_id == other.scene_id
            and self.start_frame == other.start_frame
            and self.agent_ids == other.agent_ids
            and np.array_equal(self.obs, other.obs)
            and np.array_equal(self.future, other.future)
        )


@dataclass(frozen=True)
class SplitSpec:
    held_out: str
    train_sets: tuple[str, ...]


def _as_int(token: str) -> int:
    value = float(token)
    if not math.isfinite(value):
        raise NonFiniteValue(f"non-finite id {token!r}")
    if value != int(value):
        raise ValueError(token)
    return int(value)


def parse_track_file(path, column_order: Sequence[str] = DEFAULT_COLUMN_ORDER) -> list[RawTrackRow]:
    """Read a whitespace-separated track file into rows sorted by (frame, agent)."""
    order = tuple(column_order)
    if sorted(order) != sorted(DEFAULT_COLUMN_ORDER):
        raise ValueError(f"column_order must be a permutation of {DEFAULT_COLUMN_ORDER}, got {order}")
    idx = {name: order.index(name) for name in DEFAULT_COLUMN_ORDER}

    rows: list[RawTrackRow] = []
    seen: set[tuple[int, int]] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise MalformedLine(line_no, line.rstrip("\n"))
            try:
                x = float(parts[idx["x"]])
                y = float(parts[idx["y"]])
            except ValueError:
                raise MalformedLine(line_no, line.rstrip("\n")) from None
            if not (math.isfinite(x) and math.isfinite(y)):
                raise NonFiniteValue(f"line {line_no}: {line.strip()!r}")
            try:
                frame = _as_int(parts[idx["frame"]])
                agent = _as_int(parts[idx["agent"]])
            except NonFiniteValue:
                raise NonFiniteValue(f"line {line_no}: {line.strip()!r}") from None
            except ValueError:
                raise MalformedLine(line_no, line.rstrip("\n")) from None
            key = (frame, agent)
            if key in seen:
                raise DuplicateObservation(frame, agent)
            seen.add(key)
            rows.append(RawTrackRow(frame, agent, x, y))
    rows.sort(key=lambda r: (r.frame_id, r.agent_id))
    return rows


def build_windows(
    rows: Sequence[RawTrackRow],
    scene_id: str = "scene",
    t_obs: int = T_OBS,
    t_pred: int = T_PRED,
    stride: int | None = None,
) -> list[TrajectoryWindow]:
    if stride is None:
        stride = t_obs + t_pred
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if any(ch.isspace() for ch in scene_id) or not scene_id:
        raise ValueError(f"scene_id must be a non-empty token, got {scene_id!r}")
    seq_len = t_obs + t_pred

    frames = sorted({r.frame_id for r in rows})
    frame_pos = {f: i for i, f in enumerate(frames)}
    # positions[agent] -> {frame index: (x, y)}
    positions: dict[int, dict[int, tuple[float, float]]] = {}
    for r in rows:
        positions.setdefault(r.agent_id, {})[frame_pos[r.frame_id]] = (r.x, r.y)

    spans = {}
    for agent, track in positions.items():
        spans[agent] = (min(track), max(track))

    windows = []
    for start in range(0, len(frames) - seq_len + 1, stride):
        stop = start + seq_len
        members = []
        for agent in sorted(positions):
            lo, hi = spans[agent]
            if lo > start or hi < stop - 1:
                continue
            track = positions[agent]
            if all(i in track for i in range(start, stop)):
                members.append(agent)
        if not members:
            continue
        data = np.array(
            [[positions[a][i] for i in range(start, stop)] for a in members], dtype=float
        )
        windows.append(
            TrajectoryWindow(
                scene_id=scene_id,
                start_frame=frames[start],
                obs=data[:, :t_obs].copy(),
                future=data[:, t_obs:].copy(),
                agent_ids=members,
            )
        )
    return windows


def leave_one_out(datasets: Iterable[str], held_out: str) -> SplitSpec:
    names = list(datasets)
    if held_out not in names:
        raise UnknownDataset(held_out)
    return SplitSpec(held_out=held_out, train_sets=tuple(n for n in names if n != held_out))


# -- on-disk benchmark layout -------------------------------------------------

def dataset_files(root, name: str) -> list[Path]:
    """Track files for dataset ``name`` under ``root/name``.

    When a ``test`` subdirectory exists only its files are used, which matches
    the common pre-split ETH-UCY distribution.
    """
    base = Path(root) / name
    if not base.is_dir():
        raise UnknownDataset(name)
    test_dir = base / "test"
    search = test_dir if test_dir.is_dir() else base
    return sorted(p for p in search.rglob("*.txt") if p.is_file())


def load_dataset(
    root,
    name: str,
    stride: int | None = None,
    column_order: Sequence[str] = DEFAULT_COLUMN_ORDER,
    t_obs: int = T_OBS,
    t_pred: int = T_PRED,
) -> list[TrajectoryWindow]:
    windows = []
    for path in dataset_files(root, name):
        rows = parse_track_file(path, column_order)
        windows.extend(build_windows(rows, f"{name}/{path.stem}", t_obs, t_pred, stride))
    return windows


def load_split(root, split: SplitSpec, train_stride=1, test_stride=None, column_order=DEFAULT_COLUMN_ORDER):
    """Returns (train_windows, test_windows) for a leave-one-out split."""
    train = []
    for name in split.train_sets:
        train.extend(load_dataset(root, name, train_stride, column_order))
    test = load_dataset(root, split.held_out, test_stride, column_order)
    return train, test


# -- window text format ---------------------------------------------------------
# WINDOW <scene> <start_frame> <A>
# then, per agent, t_obs + t_pred lines "x y" (observed frames first).

def dumps_windows(windows: Sequence[TrajectoryWindow]) -> str:
    out = []
    for w in windows:
        out.append(f"WINDOW {w.scene_id} {w.start_frame} {w.num_agents}")
        full = np.concatenate([w.obs, w.future], axis=1)
        for agent in full:
            out.extend(f"{x!r} {y!r}" for x, y in agent.tolist())
    return "\n".join(out) + ("\n" if out else "")


def loads_windows(text: str, t_obs: int = T_OBS, t_pred: int = T_PRED) -> list[TrajectoryWindow]:
    lines = text.splitlines()
    seq_len = t_obs + t_pred
    windows = []
    i = 0
    while i < len(lines):
        head = lines[i].split()
        if not head:
            i += 1
            continue
        if len(head) != 4 or head[0] != "WINDOW":
            raise MalformedLine(i + 1, lines[i])
        scene, start, count = head[1], int(head[2]), int(head[3])
        block = lines[i + 1 : i + 1 + count * seq_len]
        if len(block) != count * seq_len:
            raise MalformedLine(i + 1, "truncated window block")
        data = np.array([ln.split() for ln in block], dtype=float).reshape(count, seq_len, 2)
        windows.append(
            TrajectoryWindow(scene, start, data[:, :t_obs].copy(), data[:, t_obs:].copy(), list(range(count)))
        )
        i += 1 + count * seq_len
    return windows


def write_track_file(path, rows: Iterable[RawTrackRow]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in rows:
            fh.write(f"{r.frame_id} {r.agent_id} {r.x:.6f} {r.y:.6f}\n")
