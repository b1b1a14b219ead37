"""Classical kinematic baselines.

Every predictor maps an observed history ``[A, T_obs, 2]`` (or a
``TrajectoryWindow``) to a prediction set ``[K, A, T_pred, 2]``. Time is in
frames: one step of the predicted future is one observation interval.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .datasets import T_PRED, TrajectoryWindow
from .errors import TrajforgeError
from .metrics import K_SAMPLES, ScoreReport, score_windows


class TooShortHistory(TrajforgeError, ValueError):
    pass


@dataclass(frozen=True)
class BaselineParams:
    cvm_s_angle_std: float = float(np.deg2rad(25.0))
    cvm_s_speed_std: float = 0.0
    sf_repulsion_strength: float = 0.05
    sf_interaction_radius: float = 2.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.cvm_s_angle_std < 0 or self.cvm_s_speed_std < 0:
            raise ValueError("noise standard deviations must be >= 0")
        if self.sf_interaction_radius <= 0:
            raise ValueError("interaction radius must be > 0")


def _obs(window_or_obs, min_len: int) -> np.ndarray:
    obs = window_or_obs.obs if isinstance(window_or_obs, TrajectoryWindow) else window_or_obs
    obs = np.asarray(obs, dtype=float)
    if obs.ndim != 3 or obs.shape[-1] != 2:
        raise ValueError(f"expected history of shape [A, T, 2], got {obs.shape}")
    if obs.shape[1] < min_len:
        raise TooShortHistory(f"need at least {min_len} observed frames, got {obs.shape[1]}")
    return obs


def _tile(pred: np.ndarray, k: int) -> np.ndarray:
    return np.repeat(pred[None], k, axis=0)


def _extrapolate(last: np.ndarray, velocity: np.ndarray, horizon: int) -> np.ndarray:
    # last, velocity: [..., 2] -> [..., horizon, 2]
    steps = np.arange(1, horizon + 1, dtype=float)[:, None]
    return last[..., None, :] + velocity[..., None, :] * steps


def cvm(window, horizon: int = T_PRED, k: int = K_SAMPLES) -> np.ndarray:
    obs = _obs(window, 2)
    velocity = obs[:, -1] - obs[:, -2]
    return _tile(_extrapolate(obs[:, -1], velocity, horizon), k)


def _rotate(vec: np.ndarray, angle: np.ndarray) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    x, y = vec[..., 0], vec[..., 1]
    return np.stack([c * x - s * y, s * x + c * y], axis=-1)


def cvm_s(window, params: BaselineParams = BaselineParams(), rng=None, horizon: int = T_PRED, k: int = K_SAMPLES):
    """Constant velocity with per-sample Gaussian heading noise.

    Sample 0 is noise-free; samples 1..K-1 rotate each agent's last velocity by
    an angle drawn once per (sample, agent).
    """
    obs = _obs(window, 2)
    if rng is None:
        rng = np.random.default_rng(params.rng_seed)
    num_agents = obs.shape[0]
    velocity = obs[:, -1] - obs[:, -2]
    angles = rng.normal(0.0, 1.0, size=(k, num_agents)) * params.cvm_s_angle_std
    scales = 1.0 + rng.normal(0.0, 1.0, size=(k, num_agents)) * params.cvm_s_speed_std
    angles[0] = 0.0
    scales[0] = 1.0
    sampled = _rotate(np.broadcast_to(velocity, (k, num_agents, 2)), angles) * scales[..., None]
    return _extrapolate(np.broadcast_to(obs[:, -1], (k, num_agents, 2)), sampled, horizon)


def constant_acc(window, horizon: int = T_PRED, k: int = K_SAMPLES) -> np.ndarray:
    obs = _obs(window, 3)
    v_last = obs[:, -1] - obs[:, -2]
    accel = v_last - (obs[:, -2] - obs[:, -3])
    t = np.arange(1, horizon + 1, dtype=float)[:, None]
    # v_t = v_last + t a  =>  p_t = p_last + t v_last + t (t + 1) / 2 a
    pred = obs[:, -1, None, :] + t * v_last[:, None, :] + (t * (t + 1) / 2.0) * accel[:, None, :]
    return _tile(pred, k)


def ctrv(window, horizon: int = T_PRED, k: int = K_SAMPLES) -> np.ndarray:
    """Constant turn rate and speed, integrated one frame at a time."""
    obs = _obs(window, 3)
    v_last = obs[:, -1] - obs[:, -2]
    v_prev = obs[:, -2] - obs[:, -3]
    speed = np.linalg.norm(v_last, axis=-1)
    moving = speed > 0
    prev_moving = np.linalg.norm(v_prev, axis=-1) > 0

    heading = np.arctan2(v_last[:, 1], v_last[:, 0])
    prev_heading = np.arctan2(v_prev[:, 1], v_prev[:, 0])
    omega = np.where(moving & prev_moving, np.angle(np.exp(1j * (heading - prev_heading))), 0.0)

    straight = omega == 0
    pred = np.empty((obs.shape[0], horizon, 2))
    pos = obs[:, -1].copy()
    for step in range(1, horizon + 1):
        h = heading + step * omega
        delta = np.stack([speed * np.cos(h), speed * np.sin(h)], axis=-1)
        # straight-line agents reuse the observed velocity to avoid trig round-off
        delta[straight] = v_last[straight]
        delta[~moving] = 0.0
        pos = pos + delta
        pred[:, step - 1] = pos
    return _tile(pred, k)


def linreg(window, horizon: int = T_PRED, k: int = K_SAMPLES) -> np.ndarray:
    """Per-coordinate least squares of position against frame index."""
    obs = _obs(window, 2)
    t_obs = obs.shape[1]
    t = np.arange(t_obs, dtype=float)
    design = np.stack([np.ones_like(t), t], axis=1)
    # one solve for every agent/coordinate column
    targets = obs.transpose(1, 0, 2).reshape(t_obs, -1)
    coef, *_ = np.linalg.lstsq(design, targets, rcond=None)
    future_t = np.arange(t_obs, t_obs + horizon, dtype=float)
    future = np.stack([np.ones_like(future_t), future_t], axis=1) @ coef
    pred = future.reshape(horizon, obs.shape[0], 2).transpose(1, 0, 2)
    return _tile(pred, k)


def repulsion(positions: np.ndarray, strength: float, radius: float, eps: float = 1e-6) -> np.ndarray:
    """Net pairwise repulsion ``dir / (d + eps) * strength * exp(-d)`` within ``radius``."""
    diff = positions[:, None, :] - positions[None, :, :]
    dist = np.linalg.norm(diff, axis=-1)
    mask = (dist < radius) & ~np.eye(len(positions), dtype=bool)
    mag = np.where(mask, strength * np.exp(-dist) / (dist + eps), 0.0)
    return (diff * mag[..., None]).sum(axis=1)


def social_force(window, params: BaselineParams = BaselineParams(), rng=None, horizon: int = T_PRED, k: int = K_SAMPLES):
    """Constant-velocity drive plus pairwise repulsion between agents.

    Each step the agent moves with its observed velocity plus the repulsion
    evaluated at the current predicted positions. Without ``rng`` all K
    samples coincide; with ``rng`` samples 1..K-1 perturb the driving
    heading like :func:`cvm_s`.
    """
    obs = _obs(window, 2)
    num_agents = obs.shape[0]
    drive = np.broadcast_to(obs[:, -1] - obs[:, -2], (k, num_agents, 2)).copy()
    if rng is not None:
        angles = rng.normal(0.0, 1.0, size=(k, num_agents)) * params.cvm_s_angle_std
        angles[0] = 0.0
        drive = _rotate(drive, angles)
    out = np.empty((k, num_agents, horizon, 2))
    for s in range(k):
        pos = obs[:, -1].copy()
        for step in range(horizon):
            pos = pos + drive[s] + repulsion(pos, params.sf_repulsion_strength, params.sf_interaction_radius)
            out[s, :, step] = pos
        if rng is None:
            out[1:] = out[0]
            break
    return out


Predictor = Callable[..., np.ndarray]

# Table order used by reports.
BASELINES: dict[str, str] = {
    "SocialForce": "social_force",
    "LinReg": "linreg",
    "ConstantAcc": "constant_acc",
    "CVM": "cvm",
    "CVM-S": "cvm_s",
    "CTRV": "ctrv",
}
STOCHASTIC = {"CVM-S"}


def predict(name: str, window, params: BaselineParams = BaselineParams(), rng=None) -> np.ndarray:
    fn = globals()[BASELINES[name]]
    if name == "CVM-S":
        return fn(window, params, rng)
    if name == "SocialForce":
        return fn(window, params)
    return fn(window)


def evaluate_baseline(name: str, windows, params: BaselineParams = BaselineParams(), seed: int | None = None) -> ScoreReport:
    rng = np.random.default_rng(params.rng_seed if seed is None else seed)
    preds = [predict(name, w, params, rng) for w in windows]
    return score_windows(preds, [w.future for w in windows])
