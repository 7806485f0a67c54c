"""Synthetic hand silhouettes: a palm disk with fanned capsule fingers and
a forearm, optionally with a slot cut into one side of the palm.

Samples are rendered as noisy grayscale frames and pushed through the same
preprocessing and geometry chain as live frames, so the classifier sees
canvases drawn from the pipeline's own distribution.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import netpbm
from .cnn import LabeledDataset
from .handgeom import HandGeomConfig, observe_hand
from .imgproc import PreprocessConfig, preprocess

FINGER_SPACING = 30.0
FINGER_REACH = 2.6      # fingertip distance from palm centre, in palm radii
FINGER_HALF_WIDTH = 0.2
ARM_HALF_WIDTH = 0.6


@dataclass(frozen=True)
class HandShape:
    name: str
    fingers: int
    notch: str | None = None


SHAPES = (
    HandShape("Fist", 0),
    HandShape("One", 1),
    HandShape("V", 2),
    HandShape("W", 3),
    HandShape("Four", 4),
    HandShape("Palm", 5),
    HandShape("Notch-Left", 4, "left"),
    HandShape("Notch-Right", 4, "right"),
)
SHAPE_BY_NAME = {s.name: s for s in SHAPES}


def _capsule(u, v, u0, v0, u1, v1, half_width):
    du, dv = u1 - u0, v1 - v0
    t = np.clip(((u - u0) * du + (v - v0) * dv) / (du * du + dv * dv), 0.0, 1.0)
    return (u - u0 - t * du) ** 2 + (v - v0 - t * dv) ** 2 <= half_width ** 2


def render_silhouette(shape: HandShape | str, width: int, height: int, center,
                      radius: float, angle: float = 0.0, arm: bool = True) -> np.ndarray:
    """Binary silhouette; `angle` rotates the whole hand (degrees, clockwise
    on screen). u runs right and v runs up in the hand's own frame."""
    if isinstance(shape, str):
        shape = SHAPE_BY_NAME[shape]
    cx, cy = center
    dx = (np.arange(width, dtype=np.float32) - np.float32(cx))[None, :] / radius
    dy = (np.arange(height, dtype=np.float32) - np.float32(cy))[:, None] / radius
    th = math.radians(angle)
    c, s = np.float32(math.cos(th)), np.float32(math.sin(th))
    u = dx * c + dy * s
    v = dx * s - dy * c
    mask = u * u + v * v <= 1.0
    reach = (FINGER_REACH + FINGER_HALF_WIDTH) * radius + 1
    win = (slice(max(0, int(cy - reach)), max(0, int(cy + reach) + 1)),
           slice(max(0, int(cx - reach)), max(0, int(cx + reach) + 1)))
    uw, vw = u[win], v[win]
    k = shape.fingers
    for i in range(k):
        a = math.radians((i - (k - 1) / 2.0) * FINGER_SPACING)
        mask[win] |= _capsule(uw, vw, 0.3 * math.sin(a), 0.3 * math.cos(a),
                              FINGER_REACH * math.sin(a), FINGER_REACH * math.cos(a),
                              FINGER_HALF_WIDTH)
    if arm:
        reach = (width + height) / radius
        mask |= (np.abs(u) <= ARM_HALF_WIDTH) & (v <= 0) & (v >= -reach)
    if shape.notch:
        side = -1.0 if shape.notch == "left" else 1.0
        mask &= ~((u * side >= 0.5) & (np.abs(v) <= 0.2))
    return mask


def render_frame(mask: np.ndarray, rng: np.random.Generator | None = None,
                 fg: int = 190, bg: int = 40, noise: float = 8.0,
                 color: bool = False) -> np.ndarray:
    """Grayscale (or RGB skin-on-blue) frame with optional Gaussian noise."""
    if color:
        img = np.empty(mask.shape + (3,), dtype=np.float64)
        img[:] = (40, 60, 110)
        img[mask] = (205, 150, 120)
    else:
        img = np.where(mask, float(fg), float(bg))
    if rng is not None and noise > 0:
        img = img + noise * rng.standard_normal(img.shape, dtype=np.float32)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


@dataclass
class Jitter:
    position: float = 4.0
    scale: float = 0.10
    rotation: float = 10.0


def sample_canvas(shape: HandShape | str, rng: np.random.Generator, jitter: Jitter | None,
                  size: int = 128, radius: float = 19.0,
                  pre: PreprocessConfig | None = None,
                  geom: HandGeomConfig | None = None) -> np.ndarray:
    j = jitter or Jitter(0.0, 0.0, 0.0)
    dx, dy = rng.uniform(-j.position, j.position, 2) if j.position else (0.0, 0.0)
    s = 1.0 + (rng.uniform(-j.scale, j.scale) if j.scale else 0.0)
    rot = rng.uniform(-j.rotation, j.rotation) if j.rotation else 0.0
    center = (size / 2.0 + dx, size * 0.55 + dy)
    mask = render_silhouette(shape, size, size, center, radius * s, rot)
    frame = render_frame(mask, rng)
    obs = observe_hand(preprocess(frame, pre), geom or HandGeomConfig(min_area=200))
    if obs is None:
        raise RuntimeError(f"synthetic {shape} sample produced no hand")
    return obs.canvas


def synth_dataset(classes: int = 8, per_class: int = 300, seed: int = 0,
                  jitter: Jitter | None = None, **kwargs) -> LabeledDataset:
    if not 2 <= classes <= len(SHAPES):
        raise ValueError(f"classes must be in 2..{len(SHAPES)}")
    jitter = jitter if jitter is not None else Jitter()
    masks, labels = [], []
    for c, shape in enumerate(SHAPES[:classes]):
        for i in range(per_class):
            rng = np.random.default_rng([seed, c, i])
            masks.append(sample_canvas(shape, rng, jitter, **kwargs))
            labels.append(c)
    return LabeledDataset(np.array(masks).reshape(-1, 64, 64), np.array(labels),
                          [s.name for s in SHAPES[:classes]])


MANIFEST = "manifest.txt"


class DatasetError(ValueError):
    """Dataset directory disagrees with its manifest."""


def write_dataset(ds: LabeledDataset, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / MANIFEST).write_text("".join(n + "\n" for n in ds.class_names))
    counters = {}
    for mask, label in zip(ds.masks, ds.labels):
        name = ds.class_names[label]
        k = counters.get(name, 0)
        counters[name] = k + 1
        d = out / name
        d.mkdir(exist_ok=True)
        netpbm.write(d / f"{k:05d}.pgm", mask)


def read_dataset(path) -> LabeledDataset:
    root = Path(path)
    manifest = root / MANIFEST
    if not manifest.is_file():
        raise FileNotFoundError(f"no {MANIFEST} in {root}")
    names = [ln.strip() for ln in manifest.read_text().splitlines() if ln.strip()]
    masks, labels = [], []
    for c, name in enumerate(names):
        d = root / name
        if not d.is_dir():
            raise DatasetError(f"manifest lists {name!r} but {d} is missing")
        for f in sorted(os.listdir(d)):
            if not f.endswith(".pgm"):
                continue
            img = netpbm.read(d / f)
            if img.shape != (64, 64):
                raise DatasetError(f"{d / f}: expected 64x64, got {img.shape}")
            masks.append(img > 127)
            labels.append(c)
    if not masks:
        raise DatasetError(f"no samples under {root}")
    extra = sorted(p.name for p in root.iterdir() if p.is_dir() and p.name not in names)
    if extra:
        raise DatasetError(f"class directories missing from manifest: {', '.join(extra)}")
    return LabeledDataset(np.array(masks, dtype=bool).reshape(-1, 64, 64),
                          np.array(labels, dtype=np.int64), names)


def render_sequence(script, width: int = 640, height: int = 480, radius: float = 24.0,
                    seed: int = 0, color: bool = False) -> list:
    """Frames for a script of (shape name or None, (cx, cy)[, angle]) steps."""
    rng = np.random.default_rng(seed)
    frames = []
    for step in script:
        name, center = step[0], step[1]
        angle = step[2] if len(step) > 2 else 0.0
        if name is None:
            mask = np.zeros((height, width), dtype=bool)
        else:
            mask = render_silhouette(name, width, height, center, radius, angle)
        frames.append(render_frame(mask, rng, color=color))
    return frames


def write_frames(frames, out_dir) -> list:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, f in enumerate(frames, 1):
        p = out / f"frame_{i:06d}.{'ppm' if f.ndim == 3 else 'pgm'}"
        netpbm.write(p, f)
        paths.append(p)
    return paths


def transition_script(first: str, second: str, n_first: int = 40, n_second: int = 40,
                      transients=("Four", "W", "V"), center=(320, 300)) -> list:
    """Hold `first`, pass through a few transient shapes, hold `second`."""
    names = [first] * n_first + list(transients) + [second] * n_second
    return [(n, center) for n in names]


def sweep_script(name: str, n: int = 60, start=(200, 300), end=(440, 300)) -> list:
    """`name` moving in a straight line from start to end."""
    out = []
    for i in range(n):
        t = i / max(1, n - 1)
        out.append((name, (start[0] + t * (end[0] - start[0]),
                           start[1] + t * (end[1] - start[1]))))
    return out
