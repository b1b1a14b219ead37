"""Deterministic synthetic crowd scenes in the ETH-UCY track-file format.

Agents walk at pedestrian speed with slowly drifting heading and speed, so
constant velocity is a reasonable but imperfect predictor. Used by the tests
and demos, and as a stand-in when the real benchmark files are absent.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .datasets import BENCHMARK_DATASETS, FRAME_STEP_SECONDS, RawTrackRow, write_track_file

FRAME_ID_STEP = 10  # raw ETH-UCY files tick frame ids by 10


def generate_scene(
    seed: int,
    num_agents: int = 24,
    num_frames: int = 120,
    min_life: int = 20,
    max_life: int = 60,
    speed_mean: float = 1.3,
    turn_std: float = 0.08,
    jitter: float = 0.02,
) -> list[RawTrackRow]:
    """Return track rows for one scene; the same seed gives the same rows."""
    rng = np.random.default_rng(seed)
    rows = []
    for agent in range(num_agents):
        life = int(rng.integers(min_life, max_life + 1))
        life = min(life, num_frames)
        start = int(rng.integers(0, num_frames - life + 1))
        pos = rng.uniform(-8.0, 8.0, size=2)
        heading = rng.uniform(-np.pi, np.pi)
        speed = max(0.2, rng.normal(speed_mean, 0.25)) * FRAME_STEP_SECONDS
        turn = 0.0
        for t in range(life):
            frame = (start + t) * FRAME_ID_STEP
            noisy = pos + rng.normal(0.0, jitter, size=2)
            rows.append(RawTrackRow(frame, agent, float(noisy[0]), float(noisy[1])))
            # heading follows a mean-reverting turn rate; speed drifts a little
            turn = 0.8 * turn + rng.normal(0.0, turn_std)
            heading += turn
            speed = max(0.05, speed * (1.0 + rng.normal(0.0, 0.04)))
            pos = pos + speed * np.array([np.cos(heading), np.sin(heading)])
    rows.sort(key=lambda r: (r.frame_id, r.agent_id))
    return rows


def write_synthetic_benchmark(root, seed: int = 0, datasets=BENCHMARK_DATASETS, **scene_kwargs) -> Path:
    """Write one scene file per dataset under ``root/<name>/``."""
    root = Path(root)
    for i, name in enumerate(datasets):
        (root / name).mkdir(parents=True, exist_ok=True)
        write_track_file(root / name / f"{name}_synthetic.txt", generate_scene(seed * 1000 + i, **scene_kwargs))
    return root
