"""Out-of-process execution of candidate heuristics.

The engine talks to a candidate over a plain-text protocol (version 1):

request::

    TRAJEVO 1 <num_windows>
    W <A> <t_obs> <t_pred> <K>          # once per window
    x y                                 # A * t_obs lines, agent-major

response::

    P <A>                               # once per window, in request order
    x y                                 # K * A * t_pred lines: sample, agent, time

A harness shim per interpreter profile adapts the protocol to the
``predict_trajectory(trajectory) -> [K, A, t_pred, 2]`` entry point, so
candidate code never sees the protocol.
"""
from __future__ import annotations

import enum
import os
import signal
import subprocess
import sys
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .datasets import TrajectoryWindow
from .errors import TrajforgeError
from .metrics import K_SAMPLES, SflHistogram, score_windows, sfl_histogram

PROTOCOL_MAGIC = "TRAJEVO"
PROTOCOL_VERSION = 1
STDERR_TAIL_BYTES = 4096


class Status(str, enum.Enum):
    UNTESTED = "untested"
    OK = "ok"
    CRASH = "crash"
    TIMEOUT = "timeout"
    INVALID_OUTPUT = "invalid_output"


class InvalidOutput(TrajforgeError, ValueError):
    REASONS = ("truncated", "wrong_count", "non_finite", "parse_error")

    def __init__(self, reason: str, detail: str = ""):
        assert reason in self.REASONS, reason
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason
        self.detail = detail


@dataclass
class Candidate:
    id: str
    source: str
    runtime_label: str = "python"
    generation: int = 0
    parent_ids: list[str] = field(default_factory=list)
    status: Status = Status.UNTESTED
    objective_j: float | None = None
    sfl: SflHistogram | None = None
    operator: str = "init"
    min_ade: float | None = None
    min_fde: float | None = None
    error: str = ""

    def __post_init__(self):
        self.status = Status(self.status)
        if len(self.parent_ids) > 2:
            raise ValueError("a candidate has at most two parents")

    @property
    def ok(self) -> bool:
        return self.status is Status.OK

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "source": self.source,
            "runtime_label": self.runtime_label,
            "generation": self.generation,
            "parent_ids": list(self.parent_ids),
            "status": self.status.value,
            "objective_j": self.objective_j,
            "sfl": self.sfl.to_dict() if self.sfl else None,
            "operator": self.operator,
            "min_ade": self.min_ade,
            "min_fde": self.min_fde,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Candidate":
        d = dict(d)
        if d.get("sfl") is not None:
            d["sfl"] = SflHistogram.from_dict(d["sfl"])
        return cls(**d)


@dataclass(frozen=True)
class ExecLimits:
    wall_timeout: float = 60.0
    max_output_bytes: int = 256 * 1024 * 1024
    batch_size: int = 1_000_000  # windows per process; the default covers a whole split
    max_memory_bytes: int | None = 4 * 1024**3

    def __post_init__(self):
        if self.wall_timeout <= 0 or self.max_output_bytes <= 0 or self.batch_size <= 0:
            raise ValueError("execution limits must be positive")


@dataclass(frozen=True)
class InterpreterProfile:
    name: str
    command: tuple[str, ...]
    shim: str
    source_suffix: str = ".py"

    def argv(self, shim_path: str, source_path: str) -> list[str]:
        return [
            part.format(python=sys.executable, shim=shim_path, source=source_path) for part in self.command
        ]


DEFAULT_PROFILES = {
    "python": InterpreterProfile("python", ("{python}", "-I", "{shim}", "{source}"), "python_shim.py"),
}


@dataclass
class ExecResult:
    status: Status
    predictions: list[np.ndarray] | None = None
    stderr_tail: str = ""
    reason: str = ""
    elapsed: float = 0.0


# -- wire format -----------------------------------------------------------------

def frame_request(windows: Sequence[TrajectoryWindow], k: int = K_SAMPLES) -> str:
    out = [f"{PROTOCOL_MAGIC} {PROTOCOL_VERSION} {len(windows)}"]
    for w in windows:
        a, t_obs = w.obs.shape[0], w.obs.shape[1]
        out.append(f"W {a} {t_obs} {w.future.shape[1]} {k}")
        out.extend(f"{x:.9f} {y:.9f}" for x, y in w.obs.reshape(-1, 2).tolist())
    return "\n".join(out) + "\n"


def _looks_numeric(token: str) -> bool:
    try:
        float(token)
    except ValueError:
        return False
    return True


def parse_response(text: str, windows: Sequence[TrajectoryWindow], k: int = K_SAMPLES) -> list[np.ndarray]:
    if text and not text.endswith("\n"):
        raise InvalidOutput("truncated", "output ends mid-line")
    lines = text.split("\n")[:-1] if text else []
    results = []
    pos = 0
    for wi, w in enumerate(windows):
        if pos >= len(lines):
            raise InvalidOutput("truncated", f"{len(results)} of {len(windows)} blocks present")
        head = lines[pos].split()
        if len(head) != 2 or head[0] != "P":
            if head and all(_looks_numeric(t) for t in head):
                raise InvalidOutput("wrong_count", f"data line where block {wi} header expected")
            raise InvalidOutput("parse_error", f"bad block header {lines[pos]!r}")
        try:
            agents = int(head[1])
        except ValueError:
            raise InvalidOutput("parse_error", f"bad agent count {head[1]!r}") from None
        a, t_pred = w.future.shape[0], w.future.shape[1]
        if agents != a:
            raise InvalidOutput("wrong_count", f"block {wi} declares {agents} agents, window has {a}")
        n = k * a * t_pred
        block = lines[pos + 1 : pos + 1 + n]
        if len(block) != n:
            raise InvalidOutput("wrong_count", f"block {wi}: expected {n} lines")
        try:
            if not all(len(r) == 2 for r in map(str.split, block)):
                raise ValueError("every line must hold two numbers")
            arr = np.array(" ".join(block).split(), dtype=float)
        except ValueError as exc:
            if any(ln.startswith("P ") for ln in block):
                raise InvalidOutput("wrong_count", f"block {wi} is shorter than {n} lines") from None
            raise InvalidOutput("parse_error", f"block {wi}: {exc}") from None
        if not np.isfinite(arr).all():
            raise InvalidOutput("non_finite", f"block {wi}")
        results.append(arr.reshape(k, a, t_pred, 2))
        pos += 1 + n
    if any(ln.strip() for ln in lines[pos:]):
        raise InvalidOutput("wrong_count", "trailing data after the last block")
    return results


# -- process execution ----------------------------------------------------------------

@dataclass
class _ProcOutcome:
    stdout: bytes
    stderr_tail: bytes
    returncode: int | None
    timed_out: bool
    overflow: bool
    elapsed: float


def _kill_group(proc: subprocess.Popen) -> None:
    try:
        os.killpg(proc.pid, signal.SIGKILL)
    except (ProcessLookupError, PermissionError):
        pass


def _run_process(argv: list[str], payload: bytes, limits: ExecLimits, env: dict, cwd: str) -> _ProcOutcome:
    start = time.monotonic()
    proc = subprocess.Popen(
        argv,
        stdin=subprocess.PIPE,
        stdout=subprocess.PIPE,
        stderr=subprocess.PIPE,
        cwd=cwd,
        env=env,
        start_new_session=True,
    )
    out = bytearray()
    err = bytearray()
    overflow = threading.Event()
    received = [0]  # stdout + stderr bytes, checked against the output cap
    lock = threading.Lock()

    def count(n):
        with lock:
            received[0] += n
            if received[0] > limits.max_output_bytes:
                overflow.set()
                _kill_group(proc)
                return False
        return True

    def feed():
        try:
            proc.stdin.write(payload)
        except (BrokenPipeError, OSError):
            pass
        finally:
            try:
                proc.stdin.close()
            except OSError:
                pass

    def drain_out():
        while True:
            chunk = proc.stdout.read1(1 << 16)
            if not chunk:
                return
            out.extend(chunk)
            if not count(len(chunk)):
                return

    def drain_err():
        while True:
            chunk = proc.stderr.read1(1 << 16)
            if not chunk:
                return
            err.extend(chunk)
            if len(err) > STDERR_TAIL_BYTES:
                del err[: len(err) - STDERR_TAIL_BYTES]
            if not count(len(chunk)):
                return

    threads = [threading.Thread(target=f, daemon=True) for f in (feed, drain_out, drain_err)]
    for t in threads:
        t.start()
    timed_out = False
    try:
        proc.wait(timeout=limits.wall_timeout)
    except subprocess.TimeoutExpired:
        timed_out = True
    # also reaps grandchildren left behind by a normal exit
    _kill_group(proc)
    proc.wait()
    deadline = time.monotonic() + min(limits.wall_timeout, 5.0)
    for t in threads:
        t.join(timeout=max(0.0, deadline - time.monotonic()))
    for stream in (proc.stdout, proc.stderr):
        try:
            stream.close()
        except OSError:
            pass
    return _ProcOutcome(
        stdout=bytes(out),
        stderr_tail=bytes(err[-STDERR_TAIL_BYTES:]),
        returncode=proc.returncode,
        timed_out=timed_out and not overflow.is_set(),
        overflow=overflow.is_set(),
        elapsed=time.monotonic() - start,
    )


def _shim_file(name: str, workdir: Path) -> Path:
    target = workdir / name
    data = resources.files("trajforge").joinpath("assets").joinpath("shims").joinpath(name).read_bytes()
    target.write_bytes(data)
    return target


def execute(
    candidate: Candidate,
    windows: Sequence[TrajectoryWindow],
    limits: ExecLimits = ExecLimits(),
    profiles: dict[str, InterpreterProfile] | None = None,
    seed: int = 0,
) -> ExecResult:
    """Run ``candidate`` over ``windows``; failures become statuses, never exceptions."""
    profiles = DEFAULT_PROFILES if profiles is None else profiles
    start = time.monotonic()
    profile = profiles.get(candidate.runtime_label)
    if profile is None:
        return ExecResult(Status.CRASH, reason=f"no interpreter profile {candidate.runtime_label!r}")
    predictions: list[np.ndarray] = []
    stderr_tail = ""
    with tempfile.TemporaryDirectory(prefix="trajforge-") as tmp:
        workdir = Path(tmp)
        source_path = workdir / f"candidate{profile.source_suffix}"
        source_path.write_text(candidate.source, encoding="utf-8")
        shim_path = _shim_file(profile.shim, workdir)
        argv = profile.argv(str(shim_path), str(source_path))
        for lo in range(0, max(len(windows), 1), limits.batch_size):
            batch = list(windows[lo : lo + limits.batch_size])
            env = {
                "PATH": os.environ.get("PATH", "/usr/bin:/bin"),
                "TRAJFORGE_SEED": str(seed + lo),
                "OMP_NUM_THREADS": "1",
                "OPENBLAS_NUM_THREADS": "1",
                "MKL_NUM_THREADS": "1",
            }
            if limits.max_memory_bytes:
                env["TRAJFORGE_MEM_LIMIT"] = str(limits.max_memory_bytes)
            outcome = _run_process(argv, frame_request(batch).encode(), limits, env, tmp)
            stderr_tail = outcome.stderr_tail.decode("utf-8", "replace")
            elapsed = time.monotonic() - start
            if outcome.timed_out:
                return ExecResult(Status.TIMEOUT, stderr_tail=stderr_tail, reason="wall timeout", elapsed=elapsed)
            if outcome.overflow:
                return ExecResult(Status.INVALID_OUTPUT, stderr_tail=stderr_tail, reason="output_limit", elapsed=elapsed)
            if outcome.returncode != 0:
                return ExecResult(Status.CRASH, stderr_tail=stderr_tail, reason=f"exit code {outcome.returncode}", elapsed=elapsed)
            try:
                predictions.extend(parse_response(outcome.stdout.decode("utf-8", "replace"), batch))
            except InvalidOutput as exc:
                return ExecResult(Status.INVALID_OUTPUT, stderr_tail=stderr_tail, reason=exc.reason, elapsed=elapsed)
    return ExecResult(Status.OK, predictions, stderr_tail, elapsed=time.monotonic() - start)


def evaluate_candidate(
    candidate: Candidate,
    windows: Sequence[TrajectoryWindow],
    limits: ExecLimits = ExecLimits(),
    profiles: dict[str, InterpreterProfile] | None = None,
    seed: int = 0,
) -> Candidate:
    """Execute and score ``candidate`` in place; returns it for chaining."""
    result = execute(candidate, windows, limits, profiles, seed)
    candidate.status = result.status
    if result.status is Status.OK:
        report = score_windows(result.predictions, [w.future for w in windows])
        candidate.objective_j = report.objective_j
        candidate.min_ade = report.min_ade
        candidate.min_fde = report.min_fde
        candidate.sfl = sfl_histogram(report.per_agent_best_k)
        candidate.error = ""
    else:
        candidate.objective_j = None
        candidate.min_ade = candidate.min_fde = None
        candidate.sfl = None
        candidate.error = (result.reason + "\n" + result.stderr_tail).strip()
    return candidate


def evaluate_many(candidates, windows, limits=ExecLimits(), profiles=None, seed=0, workers: int = 4):
    """Evaluate candidates concurrently; results come back in input order."""
    candidates = list(candidates)
    if workers <= 1 or len(candidates) <= 1:
        return [evaluate_candidate(c, windows, limits, profiles, seed) for c in candidates]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda c: evaluate_candidate(c, windows, limits, profiles, seed), candidates))
