"""Kalman smoothing of the hand centroid and mapping to screen space.

State is ``[px, py, vx, vy]`` in camera pixels and pixels/frame; the
measurement is the palm center ``[px, py]``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np


class TrackingError(ValueError):
    pass


@dataclass(frozen=True)
class KalmanModel:
    A: np.ndarray
    B: np.ndarray
    H: np.ndarray
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        n = self.A.shape[0]
        m = self.H.shape[0]
        if self.A.shape != (n, n) or self.Q.shape != (n, n):
            raise TrackingError("A and Q must be square with the state dimension")
        if self.H.shape[1] != n or self.R.shape != (m, m):
            raise TrackingError("H must be m x n and R m x m")
        if self.B.shape[0] != n:
            raise TrackingError("B must have one row per state element")
        for name in ("Q", "R"):
            M = getattr(self, name)
            if not np.allclose(M, M.T):
                raise TrackingError(f"{name} must be symmetric")
            if np.linalg.eigvalsh(M).min() < -1e-9:
                raise TrackingError(f"{name} must be positive semidefinite")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.H.shape[0]


def constant_velocity_model(dt: float = 1.0, q: float = 0.05, r: float = 4.0) -> KalmanModel:
    """White-acceleration constant-velocity model, ``Q = q G Gᵀ``."""
    A = np.array([[1, 0, dt, 0], [0, 1, 0, dt], [0, 0, 1, 0], [0, 0, 0, 1]], dtype=float)
    G = np.array([[dt * dt / 2, 0], [0, dt * dt / 2], [dt, 0], [0, dt]])
    H = np.array([[1, 0, 0, 0], [0, 1, 0, 0]], dtype=float)
    return KalmanModel(A=A, B=np.zeros((4, 1)), H=H, Q=q * G @ G.T, R=r * np.eye(2))


@dataclass(frozen=True)
class KalmanState:
    x: np.ndarray
    P: np.ndarray
    u: np.ndarray | None = None
    t: int = 0
    coasting: bool = False
    missed: int = 0


def kf_predict(state: KalmanState, model: KalmanModel) -> KalmanState:
    x, P = state.x, state.P
    if x.shape != (model.n,) or P.shape != (model.n, model.n):
        raise TrackingError(f"state dims {x.shape}/{P.shape} do not match model n={model.n}")
    x = model.A @ x
    if state.u is not None:
        x = x + model.B @ state.u
    P = model.A @ P @ model.A.T + model.Q
    return replace(state, x=x, P=P, t=state.t + 1)


def kf_update(state: KalmanState, model: KalmanModel, z, joseph: bool = True) -> KalmanState:
    """Measurement update. ``joseph`` uses the Joseph form for the covariance."""
    z = np.asarray(z, dtype=float)
    if z.shape != (model.m,):
        raise TrackingError(f"measurement has shape {z.shape}, expected ({model.m},)")
    if not np.isfinite(z).all():
        raise TrackingError(f"non-finite measurement {z.tolist()}")
    H, R = model.H, model.R
    x, P = state.x, state.P
    S = H @ P @ H.T + R
    if not np.isfinite(S).all() or np.linalg.cond(S) > 1e14:
        raise TrackingError("innovation covariance is singular; inflate R")
    K = np.linalg.solve(S.T, H @ P.T).T
    x = x + K @ (z - H @ x)
    I_KH = np.eye(model.n) - K @ H
    if joseph:
        P = I_KH @ P @ I_KH.T + K @ R @ K.T
    else:
        P = I_KH @ P
    P = (P + P.T) / 2
    return replace(state, x=x, P=P)


def init_state(z, p0: float = 100.0, n: int = 4) -> KalmanState:
    z = np.asarray(z, dtype=float)
    if not np.isfinite(z).all():
        raise TrackingError(f"non-finite measurement {z.tolist()}")
    x = np.zeros(n)
    x[:2] = z
    return KalmanState(x=x, P=np.eye(n) * p0)


class Tracker:
    """Frame-by-frame filter; ``None`` measurements are missing detections.

    Missing frames coast on the prediction; after ``max_coast`` misses in a row
    the next detection reinitialises the filter.
    """

    def __init__(self, model: KalmanModel | None = None, p0: float = 100.0, max_coast: int = 10):
        self.model = model or constant_velocity_model()
        self.p0 = p0
        self.max_coast = max_coast
        self.state: KalmanState | None = None

    def step(self, c, t: int) -> KalmanState | None:
        """Consume the measurement for frame ``t``; returns None until the first detection."""
        model = self.model
        state = self.state
        if state is None:
            if c is None:
                return None
            state = replace(init_state(c, self.p0, model.n), t=t)
        else:
            state = kf_predict(state, model)
            if c is None:
                state = replace(state, coasting=True, missed=state.missed + 1)
            elif state.missed >= self.max_coast:
                state = replace(init_state(c, self.p0, model.n), t=t)
            else:
                state = replace(kf_update(state, model, c), coasting=False, missed=0)
        self.state = state
        return state


def track_sequence(centroids, model: KalmanModel | None = None, p0: float = 100.0,
                   max_coast: int = 10) -> list[KalmanState]:
    """Filter a centroid stream; ``None`` entries are missing detections.

    Frames before the first detection have no state and are skipped, so the
    output starts at the first available centroid.
    """
    tracker = Tracker(model, p0, max_coast)
    states = []
    for i, c in enumerate(centroids):
        state = tracker.step(c, i)
        if state is not None:
            states.append(state)
    if not states:
        raise TrackingError("no centroid in the sequence; cannot initialise the filter")
    return states


@dataclass(frozen=True)
class CursorSample:
    raw: tuple | None
    smoothed: tuple
    frame_index: int
    t_ms: float = 0.0


def map_to_screen(state: KalmanState, cam_dims, screen_dims, clamp: bool = True,
                  raw=None, t_ms: float = 0.0) -> CursorSample:
    """Scale camera ``(x, y)`` to screen pixels, mirrored horizontally.

    ``cam_dims`` and ``screen_dims`` are ``(width, height)``. The camera's
    ``[0, w-1]`` range spans the screen's ``[0, W-1]``.
    """
    cw, ch = cam_dims
    sw, sh = screen_dims
    if min(cw, ch, sw, sh) <= 0:
        raise TrackingError("dimensions must be positive")
    px, py = float(state.x[0]), float(state.x[1])
    sx = (cw - 1 - px) * (sw - 1) / max(cw - 1, 1)
    sy = py * (sh - 1) / max(ch - 1, 1)
    if clamp:
        sx = min(max(sx, 0.0), sw - 1.0)
        sy = min(max(sy, 0.0), sh - 1.0)
    return CursorSample(raw=None if raw is None else tuple(raw), smoothed=(sx, sy),
                        frame_index=state.t, t_ms=t_ms)


@dataclass
class SmoothnessReport:
    rms_jitter: float
    max_jump: float
    path_length: float


def smoothness_report(raw, smoothed) -> tuple[SmoothnessReport, SmoothnessReport]:
    """Step-size statistics for a raw and a smoothed 2-D path.

    ``rms_jitter`` is the RMS deviation of the per-frame step length from its
    mean; ``max_jump`` the largest step; ``path_length`` the summed steps.
    """
    raw = np.asarray(raw, dtype=float)
    smoothed = np.asarray(smoothed, dtype=float)
    if raw.shape != smoothed.shape:
        raise TrackingError("raw and smoothed paths must have equal length")
    if len(raw) < 2:
        raise TrackingError("need at least two samples")
    return _report(raw), _report(smoothed)


def _report(path: np.ndarray) -> SmoothnessReport:
    steps = np.linalg.norm(np.diff(path, axis=0), axis=1)
    jitter = math.sqrt(float(np.mean((steps - steps.mean()) ** 2)))
    return SmoothnessReport(rms_jitter=jitter, max_jump=float(steps.max()),
                            path_length=float(steps.sum()))


def simulate_track(n: int, sigma: float, rng: np.random.Generator, start=(320.0, 240.0),
                   velocity=None, dropout: float = 0.0):
    """Constant-velocity ground truth plus Gaussian measurement noise."""
    if velocity is None:
        velocity = rng.uniform(-4, 4, size=2)
    t = np.arange(n)[:, None]
    truth = np.asarray(start, dtype=float) + t * np.asarray(velocity, dtype=float)
    meas = truth + rng.normal(0.0, sigma, size=truth.shape)
    centroids = [tuple(m) for m in meas]
    if dropout:
        keep = rng.random(n) >= dropout
        keep[0] = True
        centroids = [c if k else None for c, k in zip(centroids, keep)]
    return truth, centroids


@dataclass
class TraceWriter:
    """JSONL cursor trace: one ``{frame, t_ms, raw, smoothed, coasting}`` object per line."""

    lines: list = field(default_factory=list)

    def add(self, sample: CursorSample, coasting: bool) -> None:
        rec = {
            "frame": sample.frame_index,
            "t_ms": round(sample.t_ms, 3),
            "raw": None if sample.raw is None else [round(v, 4) for v in sample.raw],
            "smoothed": [round(v, 4) for v in sample.smoothed],
            "coasting": bool(coasting),
        }
        self.lines.append(json.dumps(rec))

    def text(self) -> str:
        return "".join(line + "\n" for line in self.lines)
