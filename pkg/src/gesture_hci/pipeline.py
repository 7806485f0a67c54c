"""Per-frame loop: preprocess -> hand geometry -> classify -> track ->
respond, plus configuration loading and colour/background calibration."""
from __future__ import annotations

import logging
import math
import re
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import netpbm
from .cnn import CnnModel, forward
from .handgeom import HandGeomConfig, observe_hand
from .imgproc import (BackgroundModel, ColorRange, PreprocessConfig, preprocess, rgb_to_hsv,
                      to_gray)
from .responder import NO_HAND, Bindings, CommandEvent, Responder, ResponderConfig
from .tracksmooth import KalmanConfig, PointTracker, ScreenMap, map_to_screen

log = logging.getLogger(__name__)

FRAME_RE = re.compile(r"^frame_\d+\.(pgm|ppm)$")


class ConfigError(ValueError):
    pass


class ConfigMismatch(ConfigError):
    """Model and bindings disagree about gesture classes."""


def parse_flat_config(text: str) -> dict:
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {n}: expected key=value, got {raw!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


@dataclass
class PipelineConfig:
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    geometry: HandGeomConfig = field(default_factory=HandGeomConfig)
    kalman: KalmanConfig = field(default_factory=KalmanConfig)
    responder: ResponderConfig = field(default_factory=ResponderConfig)
    screen: ScreenMap = field(default_factory=ScreenMap)
    model_path: str | None = None
    bindings_path: str | None = None
    fps: float = 30.0

    def __post_init__(self):
        if not self.fps > 0:
            raise ConfigError("fps must be positive")

    @classmethod
    def from_mapping(cls, kv: dict, base_dir=".") -> "PipelineConfig":
        base = Path(base_dir)
        kv = dict(kv)

        def take(key, conv, default):
            if key not in kv:
                return default
            raw = kv.pop(key)
            try:
                return conv(raw)
            except ValueError as exc:
                raise ConfigError(f"{key}: bad value {raw!r}") from exc

        def path(p):
            return str((base / p) if not Path(p).is_absolute() else Path(p))

        pre_d = PreprocessConfig()
        thr = take("preprocess.threshold", str, "otsu")
        if thr != "otsu" and not thr.isdigit():
            raise ConfigError(f"preprocess.threshold: bad value {thr!r}")
        pre = PreprocessConfig(
            sigma=take("preprocess.sigma", float, pre_d.sigma),
            blur_radius=take("preprocess.blur_radius", int, pre_d.blur_radius),
            threshold=thr if thr == "otsu" else int(thr),
            open_radius=take("preprocess.open_radius", int, pre_d.open_radius),
            close_radius=take("preprocess.close_radius", int, pre_d.close_radius),
            min_contrast=take("preprocess.min_contrast", float, pre_d.min_contrast),
        )
        ref = take("background.reference", path, None)
        if ref is not None:
            if not Path(ref).is_file():
                raise ConfigError(f"background reference {ref} does not exist")
            pre.background = BackgroundModel(netpbm.read(ref),
                                             take("background.diff_threshold", int, 30))
        if any(k.startswith("color.") for k in kv):
            d = ColorRange()
            pre.color = ColorRange(*(take(f"color.{k}", float, getattr(d, k))
                                     for k in ("h_lo", "h_hi", "s_lo", "s_hi", "v_lo", "v_hi")))
        gd = HandGeomConfig()
        geom = HandGeomConfig(**{k: take(f"geometry.{k}", type(getattr(gd, k)), getattr(gd, k))
                                 for k in gd.__dataclass_fields__})
        kd = KalmanConfig()
        kal = KalmanConfig(**{k: take(f"kalman.{k}", type(getattr(kd, k)), getattr(kd, k))
                              for k in kd.__dataclass_fields__})
        rd = ResponderConfig()
        resp = ResponderConfig(window=take("responder.window", int, rd.window),
                               tau=take("responder.tau", float, rd.tau))
        sd = ScreenMap()
        region = take("screen.region", lambda s: tuple(float(v) for v in s.split(",")), sd.region)
        if len(region) != 4:
            raise ConfigError("screen.region needs x,y,w,h")
        screen = ScreenMap(region=region,
                           screen=(take("screen.width", int, sd.screen[0]),
                                   take("screen.height", int, sd.screen[1])),
                           gain=take("screen.gain", float, sd.gain))
        cfg = cls(preprocess=pre, geometry=geom, kalman=kal, responder=resp, screen=screen,
                  model_path=take("model.path", path, None),
                  bindings_path=take("bindings.path", path, None),
                  fps=take("pipeline.fps", float, 30.0))
        if kv:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(kv))}")
        return cfg

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        p = Path(path)
        return cls.from_mapping(parse_flat_config(p.read_text()), p.parent)


@dataclass
class FrameEvent:
    frame: int
    gesture: str
    confidence: float
    raw: tuple | None
    filtered: tuple | None
    screen: tuple | None
    events: list = field(default_factory=list)
    latency_ms: float = 0.0

    def to_json(self) -> dict:
        return {
            "frame": self.frame,
            "gesture": self.gesture,
            "confidence": round(self.confidence, 6),
            "raw": list(self.raw) if self.raw else None,
            "filtered": [round(v, 4) for v in self.filtered] if self.filtered else None,
            "screen": list(self.screen) if self.screen else None,
            "events": [e.type + ":" + e.command for e in self.events],
        }

    def records(self) -> list:
        """Event-log records, fixed field order."""
        cursor = {"x": self.screen[0], "y": self.screen[1]} if self.screen else None
        return [{
            "frame": self.frame,
            "type": e.type,
            "command": e.command,
            "gesture": e.gesture,
            "confidence": round(e.confidence, 6),
            "cursor": cursor,
        } for e in self.events]


def check_bindings(model: CnnModel, bindings: Bindings) -> None:
    unknown = sorted(set(bindings) - set(model.class_names))
    if unknown:
        raise ConfigMismatch(
            f"bindings name gestures the model does not know: {', '.join(unknown)} "
            f"(model classes: {', '.join(model.class_names)})")


def iter_frame_dir(path):
    """(index, frame) pairs from frame_NNNNNN.pgm/ppm files in lexical
    order; unreadable files are logged and skipped."""
    root = Path(path)
    if not root.is_dir():
        raise FileNotFoundError(f"frame directory {root} not found")
    names = sorted(n.name for n in root.iterdir() if FRAME_RE.match(n.name))
    for i, name in enumerate(names):
        try:
            yield i, netpbm.read(root / name)
        except (OSError, ValueError) as exc:
            log.warning("skipping unreadable frame %s: %s", name, exc)


def run_pipeline(frames, model: CnnModel, bindings: Bindings, cfg: PipelineConfig | None = None):
    """Yield one FrameEvent per readable frame. `frames` yields
    (index, frame) pairs or bare frames."""
    cfg = cfg or PipelineConfig()
    check_bindings(model, bindings)
    tracker = PointTracker(cfg.kalman)
    responder = Responder(bindings, cfg.responder)
    for i, item in enumerate(frames):
        idx, frame = item if isinstance(item, tuple) else (i, item)
        t0 = time.perf_counter()
        obs = observe_hand(preprocess(frame, cfg.preprocess), cfg.geometry)
        if obs is None:
            gesture, conf, raw = NO_HAND, 0.0, None
        else:
            scores = forward(model, obs.canvas)
            gesture, conf, raw = model.class_names[scores.label], scores.confidence, obs.tracked_point
        latency = (time.perf_counter() - t0) * 1000.0
        filtered = tracker.step(raw)
        screen = map_to_screen(filtered, cfg.screen) if filtered is not None else None
        events = responder.step(gesture)
        yield FrameEvent(idx, gesture, conf, raw, filtered, screen, events, latency)


def _hue_arc(hues: np.ndarray):
    """Smallest arc [lo, hi] (wrapping if lo > hi) covering all hues."""
    h = np.unique(np.round(hues.astype(np.float64), 6) % 360.0)
    if len(h) == 1:
        return float(h[0]), float(h[0])
    gaps = np.diff(np.append(h, h[0] + 360.0))
    k = int(np.argmax(gaps))
    if k == len(h) - 1:
        return float(h[0]), float(h[-1])
    return float(h[k + 1]), float(h[k])


def calibrate_range(frame: np.ndarray, patch, h_margin: float = 10.0,
                    s_margin: float = 40.0, v_margin: float = 40.0) -> ColorRange:
    """Wrap-aware HSV box around a patch (x, y, w, h), padded by margins."""
    x, y, w, h = patch
    if w * h < 4 or w < 1 or h < 1:
        raise ValueError("calibration patch must cover at least 4 pixels")
    H, W = frame.shape[:2]
    if x < 0 or y < 0 or x + w > W or y + h > H:
        raise ValueError("calibration patch lies outside the frame")
    hsv = rgb_to_hsv(frame[y:y + h, x:x + w]).reshape(-1, 3)
    lo, hi = _hue_arc(hsv[:, 0])
    span = (hi - lo) % 360.0
    if span + 2 * h_margin >= 360.0:
        h_lo, h_hi = 0.0, 360.0
    else:
        h_lo, h_hi = (lo - h_margin) % 360.0, (hi + h_margin) % 360.0
    return ColorRange(
        h_lo=h_lo, h_hi=h_hi,
        s_lo=max(0.0, float(hsv[:, 1].min()) - s_margin),
        s_hi=min(255.0, float(hsv[:, 1].max()) + s_margin),
        v_lo=max(0.0, float(hsv[:, 2].min()) - v_margin),
        v_hi=min(255.0, float(hsv[:, 2].max()) + v_margin),
    )


def calibrate(frame_path, patch, out_path, hand_path=None, diff_threshold: int = 30,
              **margins) -> dict:
    """Write a config fragment holding a background reference and a colour
    range.

    `frame_path` is the background reference (stored as <out>.ref.pgm next
    to the fragment). The colour patch is sampled from `hand_path` when
    given, else from the reference frame itself.
    """
    reference = netpbm.read(frame_path)
    sample = netpbm.read(hand_path) if hand_path else reference
    if sample.ndim != 3:
        raise ValueError("colour calibration needs a colour (P6) frame")
    if sample.shape[:2] != reference.shape[:2]:
        raise ValueError("hand frame and reference frame differ in size")
    rng = calibrate_range(sample, patch, **margins)
    out = Path(out_path)
    ref = out.with_suffix(".ref.pgm")
    netpbm.write(ref, to_gray(reference))
    fragment = {
        "background.reference": ref.name,
        "background.diff_threshold": str(diff_threshold),
        **{f"color.{k}": _fmt(getattr(rng, k))
           for k in ("h_lo", "h_hi", "s_lo", "s_hi", "v_lo", "v_hi")},
    }
    out.write_text("".join(f"{k}={v}\n" for k, v in fragment.items()))
    return fragment


def _fmt(v: float) -> str:
    return repr(float(v)) if not math.isclose(v, round(v)) else str(int(round(v)))
