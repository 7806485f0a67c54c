"""Hand geometry: contours, hull, convexity defects, polygon simplification,
distance transform, palm centre/radius, wrist crop and canvas normalisation.

Points are (x, y) integer pairs with x = column and y = row. Contours and
hulls are oriented so their shoelace area in (x, y) is positive.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from ._jit import njit

EIGHT = np.ones((3, 3), dtype=bool)

# clockwise on screen (rows grow downward), starting east
_DR = np.array([0, 1, 1, 1, 0, -1, -1, -1], dtype=np.int64)
_DC = np.array([1, 1, 0, -1, -1, -1, 0, 1], dtype=np.int64)


@dataclass(frozen=True)
class Contour:
    points: np.ndarray  # (n, 2) int, (x, y)
    area: float

    def __len__(self):
        return len(self.points)

    def bbox(self):
        x0, y0 = self.points.min(axis=0)
        x1, y1 = self.points.max(axis=0)
        return int(x0), int(y0), int(x1), int(y1)


@dataclass(frozen=True)
class ConvexityDefect:
    start: tuple
    end: tuple
    far: tuple
    depth: float


@dataclass
class HandGeomConfig:
    min_area: float = 1000.0
    rdp_epsilon_frac: float = 0.02
    min_depth_frac: float = 0.3
    max_angle: float = 90.0
    merge_radius: float = 10.0
    wrist_factor: float = 1.5
    canvas_side: int = 64


@dataclass
class HandObservation:
    center: tuple
    palm_radius: float
    fingertips: list
    tracked_point: tuple
    canvas: np.ndarray = field(repr=False)
    polygon: np.ndarray = field(repr=False)
    defects: list = field(default_factory=list, repr=False)
    area: float = 0.0

    def to_json(self) -> dict:
        return {
            "center": list(self.center),
            "palm_radius": round(float(self.palm_radius), 6),
            "fingertips": [list(p) for p in self.fingertips],
            "tracked_point": list(self.tracked_point),
            "area": float(self.area),
            "canvas": ["".join("1" if v else "0" for v in row) for row in self.canvas],
        }


def signed_area(points: np.ndarray) -> float:
    p = np.asarray(points, dtype=np.float64)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def perimeter(points: np.ndarray, closed: bool = True) -> float:
    p = np.asarray(points, dtype=np.float64)
    seg = np.diff(np.vstack([p, p[:1]]) if closed else p, axis=0)
    return float(np.hypot(seg[:, 0], seg[:, 1]).sum())


@njit(cache=True)
def _trace_outer(img, r0, c0, dr, dc):
    """Border following (Suzuki & Abe outer-border step) on a padded 0/1
    image, from the raster-first pixel (r0, c0) whose west neighbour is 0.
    Returns an (n, 2) array of (row, col)."""
    cap = 4 * int(img.sum()) + 8
    out = np.empty((cap, 2), dtype=np.int64)
    # clockwise search from the west neighbour (direction 4)
    d_first = -1
    for k in range(8):
        d = (4 + k) % 8
        if img[r0 + dr[d], c0 + dc[d]]:
            d_first = d
            break
    if d_first < 0:
        out[0, 0] = r0
        out[0, 1] = c0
        return out[:1]
    r1, c1 = r0 + dr[d_first], c0 + dc[d_first]
    cr, cc = r0, c0
    # direction from the current pixel back to the previous one
    d_prev = d_first
    n = 0
    while True:
        nr, nc, d_next = cr, cc, -1
        for k in range(1, 9):
            d = (d_prev - k) % 8
            if img[cr + dr[d], cc + dc[d]]:
                nr, nc, d_next = cr + dr[d], cc + dc[d], d
                break
        out[n, 0] = cr
        out[n, 1] = cc
        n += 1
        if nr == r0 and nc == c0 and cr == r1 and cc == c1:
            break
        cr, cc = nr, nc
        d_prev = (d_next + 4) % 8
    return out[:n]


def trace_contours(mask: np.ndarray) -> list[Contour]:
    """Outer boundary of every 8-connected foreground component, largest
    shoelace area first."""
    mask = np.asarray(mask, dtype=bool)
    labels, n = ndimage.label(mask, structure=EIGHT)
    contours = []
    for k, sl in enumerate(ndimage.find_objects(labels), start=1):
        if sl is None:
            continue
        sub = labels[sl] == k
        padded = np.pad(sub, 1).astype(np.uint8)
        rows = np.flatnonzero(padded.any(axis=1))
        r0 = int(rows[0])
        c0 = int(np.flatnonzero(padded[r0])[0])
        rc = _trace_outer(padded, r0, c0, _DR, _DC)
        oy, ox = sl[0].start - 1, sl[1].start - 1
        pts = np.column_stack([rc[:, 1] + ox, rc[:, 0] + oy])
        a = signed_area(pts)
        if a < 0:
            pts = np.vstack([pts[:1], pts[:0:-1]])
            a = -a
        contours.append(Contour(points=pts, area=a))
    contours.sort(key=lambda c: -c.area)
    return contours


def component_mask(mask: np.ndarray, contour: Contour) -> np.ndarray:
    """Foreground component whose outer border is `contour`."""
    labels, _ = ndimage.label(np.asarray(mask, dtype=bool), structure=EIGHT)
    x, y = contour.points[0]
    k = labels[y, x]
    if k == 0:
        raise ValueError("contour does not lie on the mask")
    return labels == k


def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Monotone-chain hull, counterclockwise, collinear points dropped."""
    pts = sorted(set(map(tuple, np.asarray(points).tolist())))
    if len(pts) < 3:
        raise ValueError("convex hull needs at least 3 distinct points")
    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = lower[:-1] + upper[:-1]
    if len(hull) < 3:
        raise ValueError("degenerate (collinear) point set")
    return np.array(hull, dtype=np.asarray(points).dtype)


def point_line_distance(p, a, b) -> float:
    ax, ay = float(a[0]), float(a[1])
    dx, dy = float(b[0]) - ax, float(b[1]) - ay
    norm = math.hypot(dx, dy)
    if norm == 0:
        return math.hypot(float(p[0]) - ax, float(p[1]) - ay)
    return abs(dx * (float(p[1]) - ay) - dy * (float(p[0]) - ax)) / norm


def convexity_defects(contour: np.ndarray, hull: np.ndarray) -> list[ConvexityDefect]:
    """One defect per hull edge whose subtended contour arc dips inward."""
    pts = np.asarray(contour)
    if isinstance(contour, Contour):
        pts = contour.points
    n = len(pts)
    first_index = {}
    for i, p in enumerate(map(tuple, pts.tolist())):
        first_index.setdefault(p, i)
    idx = sorted(first_index[tuple(h)] for h in np.asarray(hull).tolist())
    defects = []
    for a, b in zip(idx, idx[1:] + idx[:1]):
        span = (b - a) % n
        if span <= 1:
            continue
        start, end = pts[a], pts[b]
        best, best_d = None, 0.0
        for k in range(1, span):
            p = pts[(a + k) % n]
            d = point_line_distance(p, start, end)
            if d > best_d:
                best, best_d = p, d
        if best is not None and best_d > 0:
            defects.append(ConvexityDefect(
                start=tuple(int(v) for v in start),
                end=tuple(int(v) for v in end),
                far=tuple(int(v) for v in best),
                depth=best_d,
            ))
    return defects


def point_segment_distance(p, a, b) -> float:
    px, py = float(p[0]), float(p[1])
    ax, ay = float(a[0]), float(a[1])
    dx, dy = float(b[0]) - ax, float(b[1]) - ay
    L2 = dx * dx + dy * dy
    if L2 == 0:
        return math.hypot(px - ax, py - ay)
    t = max(0.0, min(1.0, ((px - ax) * dx + (py - ay) * dy) / L2))
    return math.hypot(px - ax - t * dx, py - ay - t * dy)


@njit(cache=True)
def _rdp_mark(pts, eps):
    n = pts.shape[0]
    keep = np.zeros(n, dtype=np.bool_)
    keep[0] = keep[n - 1] = True
    stack = [(0, n - 1)]
    while len(stack) > 0:
        i, j = stack.pop()
        if j - i < 2:
            continue
        ax, ay = pts[i, 0], pts[i, 1]
        dx, dy = pts[j, 0] - ax, pts[j, 1] - ay
        L2 = dx * dx + dy * dy
        best, best_d = -1, -1.0
        for k in range(i + 1, j):
            rx, ry = pts[k, 0] - ax, pts[k, 1] - ay
            if L2 > 0:
                t = min(1.0, max(0.0, (rx * dx + ry * dy) / L2))
                rx -= t * dx
                ry -= t * dy
            d = math.hypot(rx, ry)
            if d > best_d:
                best, best_d = k, d
        if best_d > eps:
            keep[best] = True
            stack.append((i, best))
            stack.append((best, j))
    return keep


def _rdp_keep(pts: np.ndarray, eps: float) -> list[int]:
    return np.flatnonzero(_rdp_mark(np.ascontiguousarray(pts, dtype=np.float64), float(eps))).tolist()


def approx_polygon(contour, epsilon: float, closed: bool = True) -> np.ndarray:
    """Ramer-Douglas-Peucker simplification. Returned vertices are a
    subsequence of the input points.

    A closed contour is split at its first point and the point farthest
    from it; the two chains are simplified independently.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    pts = contour.points if isinstance(contour, Contour) else np.asarray(contour)
    n = len(pts)
    if n <= 2:
        return pts.copy()
    if not closed:
        return pts[_rdp_keep(pts, epsilon)]
    d = np.hypot(*(pts - pts[0]).T.astype(np.float64))
    far = int(np.argmax(d))
    if far == 0:
        return pts[:1].copy()
    first = _rdp_keep(pts[:far + 1], epsilon)
    loop = np.vstack([pts[far:], pts[:1]])
    second = [far + k for k in _rdp_keep(loop, epsilon)][1:-1]
    return pts[first + second]


@njit(cache=True)
def _edt_sq_padded(fg):
    h, w = fg.shape
    big = h * h + w * w
    col = np.empty((h, w), dtype=np.int64)
    for c in range(w):
        d = big
        for r in range(h):
            if fg[r, c]:
                d = d + 1 if d < big else big
            else:
                d = 0
            col[r, c] = d
        d = big
        for r in range(h - 1, -1, -1):
            if fg[r, c]:
                d = d + 1 if d < big else big
            else:
                d = 0
            if d < col[r, c]:
                col[r, c] = d
    out = np.empty((h, w), dtype=np.int64)
    v = np.empty(w, dtype=np.int64)
    z = np.empty(w + 1, dtype=np.float64)
    f = np.empty(w, dtype=np.int64)
    for r in range(h):
        for c in range(w):
            x = col[r, c]
            f[c] = x * x if x < big else big * big
        k = 0
        v[0] = 0
        z[0] = -np.inf
        z[1] = np.inf
        for q in range(1, w):
            s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k])
            while s <= z[k]:
                k -= 1
                s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k])
            k += 1
            v[k] = q
            z[k] = s
            z[k + 1] = np.inf
        k = 0
        for q in range(w):
            while z[k + 1] < q:
                k += 1
            dq = q - v[k]
            out[r, q] = dq * dq + f[v[k]]
    return out


def distance_transform_sq(mask: np.ndarray) -> np.ndarray:
    """Exact squared Euclidean distance (int64) from each foreground pixel to
    the nearest background pixel; off-image space counts as background."""
    mask = np.asarray(mask, dtype=bool)
    padded = np.pad(mask, 1)
    return _edt_sq_padded(padded)[1:-1, 1:-1]


def distance_transform(mask: np.ndarray) -> np.ndarray:
    return np.sqrt(distance_transform_sq(mask).astype(np.float64))


def region_distance_transform(region: np.ndarray) -> np.ndarray:
    """distance_transform evaluated on the bounding box of `region` only."""
    region = np.asarray(region, dtype=bool)
    out = np.zeros(region.shape, dtype=np.float64)
    ys, xs = np.nonzero(region)
    if len(ys) == 0:
        return out
    sl = (slice(ys.min(), ys.max() + 1), slice(xs.min(), xs.max() + 1))
    out[sl] = distance_transform(region[sl])
    return out


def estimate_center(mask: np.ndarray, contour: Contour, dt: np.ndarray | None = None,
                    region: np.ndarray | None = None) -> tuple:
    """Distance-transform argmax inside the contour's region; ties go to the
    smallest row, then smallest column."""
    if region is None:
        region = component_mask(mask, contour)
    if not region.any():
        raise ValueError("empty hand region")
    if dt is None:
        dt = region_distance_transform(region)
    vals = np.where(region, dt, -1.0)
    r, c = np.unravel_index(int(np.argmax(vals)), vals.shape)
    return int(c), int(r)


def _angle_at(far, start, end) -> float:
    ax, ay = start[0] - far[0], start[1] - far[1]
    bx, by = end[0] - far[0], end[1] - far[1]
    na, nb = math.hypot(ax, ay), math.hypot(bx, by)
    if na == 0 or nb == 0:
        return 180.0
    cosv = max(-1.0, min(1.0, (ax * bx + ay * by) / (na * nb)))
    return math.degrees(math.acos(cosv))


def validate_defects(defects, center, polygon, cfg: HandGeomConfig | None = None):
    """Keep defects deep and narrow enough to sit between two fingers.

    Returns (fingertips, valid_defects). Fingertips are the merged start/end
    points of the valid defects, ordered by angle around `center`.
    """
    cfg = cfg or HandGeomConfig()
    poly = np.asarray(polygon)
    height = float(poly[:, 1].max() - poly[:, 1].min() + 1)
    valid = [d for d in defects
             if d.depth >= cfg.min_depth_frac * height
             and _angle_at(d.far, d.start, d.end) < cfg.max_angle]
    tips = []
    for d in valid:
        for p in (d.start, d.end):
            if all(math.dist(p, q) >= cfg.merge_radius for q in tips):
                tips.append(p)
    cx, cy = center
    tips.sort(key=lambda p: math.atan2(-(p[1] - cy), p[0] - cx))
    return tips, valid


def estimate_palm_radius(center, valid_defects, dt: np.ndarray) -> float:
    if valid_defects:
        return max(math.dist(d.far, center) for d in valid_defects)
    return float(dt[center[1], center[0]])


def _tight(mask: np.ndarray) -> np.ndarray:
    ys, xs = np.nonzero(mask)
    if len(ys) == 0:
        return mask[:0, :0]
    return mask[ys.min():ys.max() + 1, xs.min():xs.max() + 1]


def crop_hand(mask, contour: Contour, center, radius: float,
              cfg: HandGeomConfig | None = None, region: np.ndarray | None = None) -> np.ndarray:
    """Cut the arm off below the wrist line center_y + wrist_factor * radius."""
    if not radius > 0:
        raise ValueError("radius must be positive")
    cfg = cfg or HandGeomConfig()
    if region is None:
        region = component_mask(mask, contour)
    x0, y0, x1, y1 = contour.bbox()
    cut = center[1] + cfg.wrist_factor * radius
    y_last = min(y1, int(math.floor(cut)))
    return _tight(region[y0:y_last + 1, x0:x1 + 1])


def _axis_cells(src: int, dst: int):
    """[lo, hi) source range per destination index along one axis."""
    i = np.arange(dst)
    if dst >= src:
        lo = np.minimum(((i + 0.5) * src / dst).astype(np.int64), src - 1)
        return lo, lo + 1
    return (i * src) // dst, -((-((i + 1) * src)) // dst)


def _any_cells(a: np.ndarray, lo, hi, axis: int) -> np.ndarray:
    cs = np.cumsum(a, axis=axis, dtype=np.int64)
    pad = [(0, 0), (0, 0)]
    pad[axis] = (1, 0)
    cs = np.pad(cs, pad)
    return (np.take(cs, hi, axis=axis) - np.take(cs, lo, axis=axis)) > 0


def resize_mask(region: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Nearest-neighbour enlargement; reduction takes the OR over each
    destination pixel's source cell so thin parts and the extent survive."""
    region = np.asarray(region, dtype=bool)
    h, w = region.shape
    tmp = _any_cells(region, *_axis_cells(w, out_w), axis=1)
    return _any_cells(tmp, *_axis_cells(h, out_h), axis=0)


def normalize_canvas(region: np.ndarray, side: int = 64) -> np.ndarray:
    """Scale the longest side to `side` keeping aspect ratio, then centre on
    a side x side background canvas."""
    region = np.asarray(region, dtype=bool)
    if region.size == 0 or not region.any():
        raise ValueError("empty region")
    h, w = region.shape
    if h >= w:
        out_h, out_w = side, max(1, (w * side) // h)
    else:
        out_w, out_h = side, max(1, (h * side) // w)
    scaled = resize_mask(region, out_w, out_h)
    canvas = np.zeros((side, side), dtype=bool)
    oy, ox = (side - out_h) // 2, (side - out_w) // 2
    canvas[oy:oy + out_h, ox:ox + out_w] = scaled
    return canvas


def locate_tracked_point(polygon: np.ndarray) -> tuple:
    """Topmost vertex; leftmost among equals."""
    poly = np.asarray(polygon)
    if len(poly) == 0:
        raise ValueError("empty polygon")
    i = min(range(len(poly)), key=lambda k: (poly[k][1], poly[k][0]))
    return int(poly[i][0]), int(poly[i][1])


def observe_hand(mask: np.ndarray, cfg: HandGeomConfig | None = None) -> HandObservation | None:
    """Run the geometry chain on a preprocessed mask; None if no hand."""
    cfg = cfg or HandGeomConfig()
    contours = trace_contours(mask)
    if not contours or contours[0].area < cfg.min_area:
        return None
    contour = contours[0]
    region = component_mask(mask, contour)
    dt = region_distance_transform(region)
    center = estimate_center(mask, contour, dt, region)
    eps = max(cfg.rdp_epsilon_frac * perimeter(contour.points), 1e-6)
    poly = approx_polygon(contour, eps)
    try:
        hull = convex_hull(poly)
        defects = convexity_defects(poly, hull)
    except ValueError:
        defects = []
    tips, valid = validate_defects(defects, center, poly, cfg)
    radius = estimate_palm_radius(center, valid, dt)
    crop = crop_hand(mask, contour, center, radius, cfg, region)
    canvas = normalize_canvas(crop, cfg.canvas_side)
    return HandObservation(
        center=center,
        palm_radius=float(radius),
        fingertips=tips,
        tracked_point=locate_tracked_point(poly),
        canvas=canvas,
        polygon=poly,
        defects=valid,
        area=contour.area,
    )
