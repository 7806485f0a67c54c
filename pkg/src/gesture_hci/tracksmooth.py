"""Constant-velocity Kalman smoothing of the tracked hand point and the
camera-to-screen cursor mapping."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

# state (x, y, dx, dy); dt = one frame
F = np.array([[1.0, 0.0, 1.0, 0.0],
              [0.0, 1.0, 0.0, 1.0],
              [0.0, 0.0, 1.0, 0.0],
              [0.0, 0.0, 0.0, 1.0]])
H = np.array([[1.0, 0.0, 0.0, 0.0],
              [0.0, 1.0, 0.0, 0.0]])

# Frames for a unit step to reach 90 % under KalmanConfig() defaults,
# starting from a converged stationary track (see step_response_frames).
STEP_RESPONSE_FRAMES = 3


class FilterDivergence(RuntimeError):
    pass


@dataclass
class KalmanConfig:
    q_pos: float = 1e-2
    q_vel: float = 1e-1
    r: float = 4.0
    p0: float = 100.0
    max_coast: int = 5

    def Q(self):
        return np.diag([self.q_pos, self.q_pos, self.q_vel, self.q_vel])

    def R(self):
        return np.diag([self.r, self.r])


@dataclass(frozen=True)
class KalmanState:
    x: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    F: np.ndarray = field(default_factory=lambda: F.copy())
    H: np.ndarray = field(default_factory=lambda: H.copy())

    @classmethod
    def initial(cls, point, cfg: KalmanConfig | None = None) -> "KalmanState":
        cfg = cfg or KalmanConfig()
        x = np.array([float(point[0]), float(point[1]), 0.0, 0.0])
        return cls(x=x, P=cfg.p0 * np.eye(4), Q=cfg.Q(), R=cfg.R())

    @property
    def position(self) -> tuple:
        return float(self.x[0]), float(self.x[1])


def predict(state: KalmanState) -> KalmanState:
    x = state.F @ state.x
    P = state.F @ state.P @ state.F.T + state.Q
    return replace(state, x=x, P=P)


def _inv2(S: np.ndarray) -> np.ndarray:
    a, b, c, d = S[0, 0], S[0, 1], S[1, 0], S[1, 1]
    det = a * d - b * c
    if not abs(det) >= 1e-12:
        raise FilterDivergence(f"innovation covariance is singular (det={det})")
    return np.array([[d, -b], [-c, a]]) / det


def update(state: KalmanState, z) -> KalmanState:
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (2,) or not np.all(np.isfinite(z)):
        raise ValueError(f"measurement must be a finite 2-vector, got {z!r}")
    Hm, P = state.H, state.P
    y = z - Hm @ state.x
    S = Hm @ P @ Hm.T + state.R
    K = P @ Hm.T @ _inv2(S)
    x = state.x + K @ y
    P = (np.eye(4) - K @ Hm) @ P
    P = 0.5 * (P + P.T)
    return replace(state, x=x, P=P)


class PointTracker:
    """Sequential filter with coasting over dropped detections."""

    def __init__(self, cfg: KalmanConfig | None = None):
        self.cfg = cfg or KalmanConfig()
        self.state: KalmanState | None = None
        self.coasted = 0

    def reset(self):
        self.state = None
        self.coasted = 0

    def step(self, z):
        """Feed one frame's measurement (or None); returns the filtered
        point, or None while no track exists."""
        if z is None:
            if self.state is None:
                return None
            if self.coasted >= self.cfg.max_coast:
                self.reset()
                return None
            self.coasted += 1
            self.state = predict(self.state)
            return self.state.position
        if self.state is None:
            self.state = KalmanState.initial(z, self.cfg)
            self.coasted = 0
            return self.state.position
        try:
            self.state = update(predict(self.state), z)
        except FilterDivergence:
            self.state = KalmanState.initial(z, self.cfg)
        self.coasted = 0
        return self.state.position


def smooth_track(measurements, cfg: KalmanConfig | None = None) -> list:
    """Filtered positions for a sequence of points (None = missed frame)."""
    tracker = PointTracker(cfg)
    return [tracker.step(z) for z in measurements]


def step_response_frames(cfg: KalmanConfig | None = None, step: float = 100.0,
                         settle: int = 200, level: float = 0.9) -> int:
    """Frames after a position step until the output first covers `level`
    of it, starting from a track settled at the origin."""
    tracker = PointTracker(cfg)
    for _ in range(settle):
        tracker.step((0.0, 0.0))
    for k in range(1, 1000):
        x, _ = tracker.step((step, 0.0))
        if x >= level * step:
            return k
    raise RuntimeError("step response never reached the target level")


@dataclass
class ScreenMap:
    region: tuple = (0.0, 0.0, 640.0, 480.0)   # x, y, w, h in camera pixels
    screen: tuple = (1920, 1080)
    gain: float = 1.0

    def __post_init__(self):
        if self.region[2] <= 0 or self.region[3] <= 0:
            raise ValueError("active region must have positive size")
        if not self.gain > 0:
            raise ValueError("gain must be positive")


def _round_half_away(v: float) -> int:
    return int(math.copysign(math.floor(abs(v) + 0.5), v))


def map_to_screen_real(point, smap: ScreenMap) -> tuple:
    rx, ry, rw, rh = smap.region
    sw, sh = smap.screen
    cx, cy = rx + rw / 2.0, ry + rh / 2.0
    u = 0.5 + smap.gain * (float(point[0]) - cx) / rw
    v = 0.5 + smap.gain * (float(point[1]) - cy) / rh
    x = min(max(u * sw, 0.0), sw - 1.0)
    y = min(max(v * sh, 0.0), sh - 1.0)
    return x, y


def map_to_screen(point, smap: ScreenMap) -> tuple:
    """Affine map of the active camera region onto the screen (scaled by
    gain about the region centre), clamped and rounded half away from 0."""
    x, y = map_to_screen_real(point, smap)
    return _round_half_away(x), _round_half_away(y)


def write_track_csv(path, raw, filtered, smap: ScreenMap) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["frame", "raw_x", "raw_y", "filt_x", "filt_y", "screen_x", "screen_y"])
        for i, (z, p) in enumerate(zip(raw, filtered)):
            if p is None:
                w.writerow([i, *(z if z is not None else ("", "")), "", "", "", ""])
                continue
            sx, sy = map_to_screen(p, smap)
            w.writerow([i, *(z if z is not None else ("", "")),
                        f"{p[0]:.4f}", f"{p[1]:.4f}", sx, sy])
