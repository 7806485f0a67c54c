"""Frame preprocessing: background subtraction, colour filtering, blur,
thresholding and binary morphology.

Frames are uint8 arrays of shape (h, w) or (h, w, 3) in RGB order; binary
masks are bool arrays of shape (h, w) with True marking foreground.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

HUE_PERIOD = 360.0


def check_frame(frame: np.ndarray) -> np.ndarray:
    frame = np.asarray(frame)
    if frame.dtype != np.uint8:
        raise ValueError(f"frame must be uint8, got {frame.dtype}")
    if frame.ndim == 3 and frame.shape[2] not in (1, 3):
        raise ValueError(f"frame must have 1 or 3 channels, got {frame.shape[2]}")
    if frame.ndim == 3 and frame.shape[2] == 1:
        frame = frame[:, :, 0]
    if frame.ndim not in (2, 3) or frame.shape[0] < 1 or frame.shape[1] < 1:
        raise ValueError(f"bad frame shape {frame.shape}")
    return frame


def to_gray(frame: np.ndarray) -> np.ndarray:
    frame = check_frame(frame)
    if frame.ndim == 2:
        return frame
    rgb = frame.astype(np.int32)
    y = (299 * rgb[..., 0] + 587 * rgb[..., 1] + 114 * rgb[..., 2] + 500) // 1000
    return y.astype(np.uint8)


def rgb_to_hsv(frame: np.ndarray) -> np.ndarray:
    """Hexcone RGB -> HSV.

    Returns float array (h, w, 3): hue in degrees [0, 360), saturation and
    value quantised to integers in 0..255. Achromatic pixels get hue 0.
    """
    frame = check_frame(frame)
    if frame.ndim != 3:
        raise ValueError("colour conversion needs a 3-channel frame")
    rgb = frame.astype(np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    vmax = rgb.max(axis=2)
    vmin = rgb.min(axis=2)
    delta = vmax - vmin
    safe = np.where(delta > 0, delta, 1.0)
    hue = np.zeros_like(vmax)
    rmax = (delta > 0) & (vmax == r)
    gmax = (delta > 0) & (vmax == g) & ~rmax
    bmax = (delta > 0) & ~rmax & ~gmax
    hue[rmax] = (60.0 * (g - b) / safe)[rmax] % HUE_PERIOD
    hue[gmax] = (60.0 * (b - r) / safe + 120.0)[gmax]
    hue[bmax] = (60.0 * (r - g) / safe + 240.0)[bmax]
    sat = np.where(vmax > 0, np.rint(255.0 * delta / np.where(vmax > 0, vmax, 1.0)), 0.0)
    return np.stack([hue % HUE_PERIOD, sat, vmax], axis=2)


@dataclass(frozen=True)
class ColorRange:
    """HSV box. Hue bounds are degrees; if h_lo > h_hi the hue interval
    wraps through 0."""

    h_lo: float = 0.0
    h_hi: float = 360.0
    s_lo: float = 0.0
    s_hi: float = 255.0
    v_lo: float = 0.0
    v_hi: float = 255.0

    def contains(self, hsv: np.ndarray) -> np.ndarray:
        h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
        if self.h_lo <= self.h_hi:
            h_ok = (h >= self.h_lo) & (h <= self.h_hi)
        else:
            h_ok = (h >= self.h_lo) | (h <= self.h_hi)
        return (h_ok & (s >= self.s_lo) & (s <= self.s_hi)
                & (v >= self.v_lo) & (v <= self.v_hi))


@dataclass(frozen=True)
class BackgroundModel:
    reference: np.ndarray
    diff_threshold: int = 30

    def __post_init__(self):
        ref = to_gray(self.reference)
        object.__setattr__(self, "reference", ref)


def subtract_background(frame: np.ndarray, model: BackgroundModel) -> np.ndarray:
    gray = to_gray(frame)
    if gray.shape != model.reference.shape:
        raise ValueError(
            f"frame {gray.shape} does not match background {model.reference.shape}")
    diff = np.abs(gray.astype(np.int16) - model.reference.astype(np.int16))
    return diff > model.diff_threshold


def color_filter(frame: np.ndarray, color_range: ColorRange) -> np.ndarray:
    frame = check_frame(frame)
    if frame.ndim != 3:
        raise ValueError("colour filtering needs a 3-channel frame")
    return color_range.contains(rgb_to_hsv(frame))


def gaussian_kernel(sigma: float, radius: int) -> np.ndarray:
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if radius < 1:
        raise ValueError("radius must be >= 1")
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(frame: np.ndarray, sigma: float = 2.0, radius: int = 2) -> np.ndarray:
    """Separable Gaussian blur with edge replication at the borders."""
    frame = check_frame(frame)
    k = gaussian_kernel(sigma, radius)
    out = ndimage.correlate1d(frame.astype(np.float64), k, axis=0, mode="nearest")
    out = ndimage.correlate1d(out, k, axis=1, mode="nearest")
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def otsu_threshold(gray: np.ndarray) -> int:
    """Threshold t maximising between-class variance for the split
    {<= t} / {> t}; smallest t wins ties.

    Compared exactly on integers: for class sizes n0, n1 and intensity sums
    s0, s1 the between-class variance is proportional to
    (n1*s0 - n0*s1)**2 / (n0*n1); empty classes score zero.
    """
    hist = np.bincount(np.asarray(gray, dtype=np.uint8).ravel(), minlength=256)
    counts = np.cumsum(hist)
    sums = np.cumsum(hist * np.arange(256, dtype=np.int64))
    n, total = int(counts[-1]), int(sums[-1])
    n0 = counts.astype(np.float64)
    n1 = n - n0
    with np.errstate(divide="ignore", invalid="ignore"):
        score = (n1 * sums - n0 * (total - sums)) ** 2 / (n0 * n1)
    score[(counts == 0) | (counts == n)] = 0.0
    top = float(score.max())
    if top == 0.0:
        return 0
    # float screening, then exact integer comparison among near-ties
    best_t, best_num, best_den = 0, 0, 1
    for t in np.flatnonzero(score >= top * (1 - 1e-9)):
        a0, s0 = int(counts[t]), int(sums[t])
        a1, s1 = n - a0, total - s0
        num, den = (a1 * s0 - a0 * s1) ** 2, a0 * a1
        if num * best_den > best_num * den:
            best_t, best_num, best_den = int(t), num, den
    return best_t


def threshold(frame: np.ndarray, mode: str | int = "otsu") -> np.ndarray:
    """Foreground iff intensity > t, with t fixed (int) or chosen by Otsu."""
    frame = check_frame(frame)
    if frame.ndim != 2:
        raise ValueError("thresholding needs a grayscale frame")
    if mode == "otsu":
        t = otsu_threshold(frame)
    elif isinstance(mode, (int, np.integer)) and not isinstance(mode, bool):
        t = int(mode)
    else:
        raise ValueError(f"unknown threshold mode {mode!r}")
    return frame > t


def _square_filter(mask, r, filt):
    # separable square window; constant 0 outside the image = background
    out = np.asarray(mask, dtype=bool).view(np.uint8)
    for axis in (0, 1):
        out = filt(out, 2 * r + 1, axis=axis, mode="constant", cval=0)
    return out.view(bool)


def dilate(mask: np.ndarray, r: int) -> np.ndarray:
    return _square_filter(mask, r, ndimage.maximum_filter1d)


def erode(mask: np.ndarray, r: int) -> np.ndarray:
    return _square_filter(mask, r, ndimage.minimum_filter1d)


def morphology(mask: np.ndarray, op: str, kernel_radius: int = 1) -> np.ndarray:
    """Opening or closing with a (2r+1) x (2r+1) square."""
    if kernel_radius < 1:
        raise ValueError("kernel_radius must be >= 1")
    if op == "open":
        return dilate(erode(mask, kernel_radius), kernel_radius)
    if op == "close":
        return erode(dilate(mask, kernel_radius), kernel_radius)
    raise ValueError(f"unknown morphology op {op!r}")


@dataclass
class PreprocessConfig:
    sigma: float = 2.0
    blur_radius: int = 2
    threshold: str | int = "otsu"
    open_radius: int = 1
    close_radius: int = 2
    # Otsu splits even featureless frames; below this gap between the two
    # class means the frame is taken as empty
    min_contrast: float = 40.0
    background: BackgroundModel | None = None
    color: ColorRange | None = None


def preprocess(frame: np.ndarray, cfg: PreprocessConfig | None = None) -> np.ndarray:
    """Full chain: [background AND colour] -> blur -> threshold -> open -> close."""
    cfg = cfg or PreprocessConfig()
    frame = check_frame(frame)
    gate = None
    if cfg.background is not None:
        gate = subtract_background(frame, cfg.background)
    if cfg.color is not None:
        cmask = color_filter(frame, cfg.color)
        gate = cmask if gate is None else gate & cmask
    if gate is not None:
        gray = gate.astype(np.uint8) * 255
    else:
        gray = to_gray(frame)
    blurred = gaussian_blur(gray, cfg.sigma, cfg.blur_radius)
    mask = threshold(blurred, cfg.threshold)
    if cfg.threshold == "otsu" and cfg.min_contrast > 0:
        fg = mask.sum()
        if fg == 0 or fg == mask.size or (
                blurred[mask].mean() - blurred[~mask].mean() < cfg.min_contrast):
            return np.zeros_like(mask)
    if cfg.open_radius:
        mask = morphology(mask, "open", cfg.open_radius)
    if cfg.close_radius:
        mask = morphology(mask, "close", cfg.close_radius)
    return mask
