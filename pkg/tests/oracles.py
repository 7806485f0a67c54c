"""Slow, obviously-correct reference implementations used by the tests."""
import math
from collections import deque
from itertools import combinations

import numpy as np


def brute_hull(points):
    """Hull vertex set: a point is a vertex iff it lies in no closed,
    non-degenerate triangle spanned by three other points."""
    pts = np.array(sorted(set(map(tuple, np.asarray(points).tolist()))), dtype=np.int64)
    n = len(pts)
    if n < 4:
        return {tuple(int(v) for v in p) for p in pts}
    tri = np.array(list(combinations(range(n), 3)))
    a, b, c = pts[tri[:, 0]], pts[tri[:, 1]], pts[tri[:, 2]]
    area2 = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    keep = area2 != 0
    tri, a, b, c = tri[keep], a[keep], b[keep], c[keep]
    px, py = pts[:, 0][:, None], pts[:, 1][:, None]

    def cross(u, v):
        return (v[:, 0] - u[:, 0]) * (py - u[:, 1]) - (v[:, 1] - u[:, 1]) * (px - u[:, 0])

    d1, d2, d3 = cross(a, b), cross(b, c), cross(c, a)
    inside = ~(((d1 < 0) | (d2 < 0) | (d3 < 0)) & ((d1 > 0) | (d2 > 0) | (d3 > 0)))
    own = (tri[None, :, :] == np.arange(n)[:, None, None]).any(axis=2)
    covered = (inside & ~own).any(axis=1)
    return {tuple(int(v) for v in pts[i]) for i in range(n) if not covered[i]}


def ccw_order(vertices):
    """Sort hull vertices counterclockwise (positive shoelace) from the
    lexicographically smallest."""
    v = np.array(sorted(vertices), dtype=np.float64)
    c = v.mean(axis=0)
    ang = np.arctan2(v[:, 1] - c[1], v[:, 0] - c[0])
    order = [tuple(int(t) for t in v[i]) for i in np.argsort(ang, kind="stable")]
    k = order.index(min(order))
    return order[k:] + order[:k]


def brute_edt_sq(mask):
    """Squared distance to the nearest background pixel, with a one-pixel
    background ring standing in for off-image space."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    padded = np.pad(mask, 1)
    by, bx = np.nonzero(~padded)
    fy, fx = np.nonzero(mask)
    out = np.zeros((h, w), dtype=np.int64)
    if len(fy) == 0:
        return out
    d = (fy[:, None] + 1 - by[None, :]) ** 2 + (fx[:, None] + 1 - bx[None, :]) ** 2
    out[fy, fx] = d.min(axis=1)
    return out


def arc_defects(contour, hull_vertices):
    """Scan every contour point between consecutive hull vertices for the
    largest distance to the hull edge, comparing exact integer crosses."""
    pts = [tuple(int(v) for v in p) for p in np.asarray(contour).tolist()]
    n = len(pts)
    first = {}
    for i, p in enumerate(pts):
        first.setdefault(p, i)
    idx = sorted(first[tuple(h)] for h in hull_vertices)
    out = []
    for a, b in zip(idx, idx[1:] + idx[:1]):
        s, e = pts[a], pts[b]
        ex, ey = e[0] - s[0], e[1] - s[1]
        best, best_cross = None, 0
        k = (a + 1) % n
        while k != b:
            p = pts[k]
            cross = abs(ex * (p[1] - s[1]) - ey * (p[0] - s[0]))
            if cross > best_cross:
                best, best_cross = p, cross
            k = (k + 1) % n
        if best is not None:
            out.append((s, e, best, best_cross / math.hypot(ex, ey)))
    return out


def seg_dist(p, a, b):
    p, a, b = (np.asarray(v, dtype=np.float64) for v in (p, a, b))
    d = b - a
    L2 = d @ d
    t = 0.0 if L2 == 0 else min(1.0, max(0.0, (p - a) @ d / L2))
    return float(np.linalg.norm(p - a - t * d))


def polyline_deviation(points, vertices, closed):
    """Largest distance from any original point to the simplified polyline."""
    verts = [tuple(v) for v in np.asarray(vertices).tolist()]
    segs = list(zip(verts, verts[1:] + (verts[:1] if closed else [])))
    if not segs:
        segs = [(verts[0], verts[0])]
    return max(min(seg_dist(p, a, b) for a, b in segs) for p in np.asarray(points).tolist())


def is_subsequence(sub, seq):
    it = iter(map(tuple, np.asarray(seq).tolist()))
    return all(any(s == t for t in it) for s in map(tuple, np.asarray(sub).tolist()))


def flood_components(mask):
    """8-connected components by BFS, as lists of (row, col)."""
    mask = np.asarray(mask, dtype=bool)
    seen = np.zeros_like(mask)
    comps = []
    h, w = mask.shape
    for r0, c0 in zip(*np.nonzero(mask)):
        if seen[r0, c0]:
            continue
        q = deque([(r0, c0)])
        seen[r0, c0] = True
        comp = []
        while q:
            r, c = q.popleft()
            comp.append((int(r), int(c)))
            for dr in (-1, 0, 1):
                for dc in (-1, 0, 1):
                    rr, cc = r + dr, c + dc
                    if 0 <= rr < h and 0 <= cc < w and mask[rr, cc] and not seen[rr, cc]:
                        seen[rr, cc] = True
                        q.append((rr, cc))
        comps.append(comp)
    return comps


def star_polygon(rng, n, size=64):
    """Random simple polygon with integer vertices, counterclockwise in
    (x, y) coordinates."""
    c = size / 2.0
    while True:
        ang = np.sort(rng.uniform(0, 2 * np.pi, n))
        rad = rng.uniform(0.15, 0.5, n) * (size - 2)
        pts = np.column_stack([c + rad * np.cos(ang), c + rad * np.sin(ang)])
        pts = np.clip(np.rint(pts), 0, size - 1).astype(np.int64)
        _, first = np.unique(pts, axis=0, return_index=True)
        pts = pts[np.sort(first)]
        if len(pts) >= 4 and len(brute_hull(pts)) >= 3:
            return pts


# -- CNN -----------------------------------------------------------------------

def direct_conv(x, w, b):
    """Valid 2-D cross-correlation, one shifted slice per kernel tap."""
    B, C, H, W = x.shape
    F, _, K, _ = w.shape
    oh, ow = H - K + 1, W - K + 1
    out = np.zeros((B, F, oh, ow), dtype=np.float64)
    for f in range(F):
        out[:, f] += b[f]
        for c in range(C):
            for i in range(K):
                for j in range(K):
                    out[:, f] += float(w[f, c, i, j]) * x[:, c, i:i + oh, j:j + ow]
    return out


def direct_pool(x):
    return np.maximum.reduce([x[:, :, i::2, j::2] for i in (0, 1) for j in (0, 1)])


def direct_forward(params, x):
    """Layer-by-layer activations computed without the im2col path."""
    p = {k: v.astype(np.float64) for k, v in params.items()}
    x = np.asarray(x, dtype=np.float64)
    a1 = direct_conv(x, p["conv1_w"], p["conv1_b"])
    p1 = direct_pool(np.maximum(a1, 0))
    a2 = direct_conv(p1, p["conv2_w"], p["conv2_b"])
    p2 = direct_pool(np.maximum(a2, 0))
    flat = p2.reshape(len(x), -1)
    a3 = np.einsum("bi,oi->bo", flat, p["fc1_w"]) + p["fc1_b"]
    logits = np.maximum(a3, 0) @ p["fc2_w"].T + p["fc2_b"]
    z = logits - logits.max(axis=1, keepdims=True)
    probs = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
    return dict(a1=a1, p1=p1, a2=a2, p2=p2, a3=a3, logits=logits, probs=probs)


def _kink_pattern(cache):
    return [cache["a1"] > 0, cache["arg1"], cache["a2"] > 0, cache["arg2"], cache["a3"] > 0]


def gradcheck(model, x, label, rng, per_block=12, h=1e-4):
    """Central differences on sampled entries of every parameter block.

    Entries whose +-h perturbation flips a ReLU or a max-pool choice sit next
    to a kink and are skipped. Returns {block: (max relative error, entries
    checked)}.
    """
    from gesture_hci import cnn
    labels = np.array([label])
    _, grads = cnn.backward_batch(model, x, labels)

    def probe():
        probs, cache = cnn.forward_batch(model, x, keep_cache=True)
        return -np.log(probs[0, label]), _kink_pattern(cache)

    _, base = probe()
    report = {}
    for name in cnn.PARAM_ORDER:
        theta = model.params[name]
        flat = theta.reshape(-1)
        picks = rng.choice(flat.size, size=min(per_block, flat.size), replace=False)
        worst, used = 0.0, 0
        for i in picks:
            old = flat[i]
            flat[i] = old + h
            lp, pat_p = probe()
            flat[i] = old - h
            lm, pat_m = probe()
            flat[i] = old
            if any(not np.array_equal(u, v) for pat in (pat_p, pat_m) for u, v in zip(pat, base)):
                continue
            num = (lp - lm) / (2 * h)
            ana = float(grads[name].reshape(-1)[i])
            rel = abs(num - ana) / max(abs(num), abs(ana), 1e-8)
            worst = max(worst, rel)
            used += 1
        report[name] = (worst, used)
    return report


def gradcheck_model(seed=0, num_classes=8):
    """float64 model with small random biases, so no ReLU input sits exactly
    on zero for a zero input patch."""
    from gesture_hci import cnn
    m = cnn.init_model(num_classes, seed=seed).copy(np.float64)
    rng = np.random.default_rng(seed + 7)
    for k, v in m.params.items():
        if k.endswith("_b"):
            v[...] = rng.uniform(-0.1, 0.1, v.shape)
    return m
