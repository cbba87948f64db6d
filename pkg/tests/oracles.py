"""Independent reference implementations used as test oracles.

None of these call into the code they check beyond reading inputs.
"""

import math

import numpy as np


def _solve_quadratic(a, b, c):
    disc = b * b - 4 * a * c
    if a == 0 or disc < 0:
        return []
    s = math.sqrt(disc)
    return [(-b - s) / (2 * a), (-b + s) / (2 * a)]


def ray_hit_primitive(row, o, d) -> float:
    """Smallest positive ray parameter hitting one primitive row, inf on a miss."""
    rot = np.asarray(row[4:13]).reshape(3, 3)
    lo_ = rot.T @ (np.asarray(o) - row[13:16])
    ld = rot.T @ np.asarray(d)
    kind = int(row[0])
    hits = []
    if kind == 0:
        hits = _solve_quadratic(ld @ ld, 2 * lo_ @ ld, lo_ @ lo_ - row[1] ** 2)
    elif kind == 1:
        h = np.asarray(row[1:4])
        t0, t1 = -math.inf, math.inf
        for k in range(3):
            if abs(ld[k]) < 1e-15:
                if abs(lo_[k]) > h[k]:
                    return math.inf
                continue
            a, b = (-h[k] - lo_[k]) / ld[k], (h[k] - lo_[k]) / ld[k]
            t0, t1 = max(t0, min(a, b)), min(t1, max(a, b))
        if t0 <= t1:
            hits = [t0, t1]
    else:
        r, hh = row[1], row[2]
        for t in _solve_quadratic(ld[0] ** 2 + ld[1] ** 2, 2 * (lo_[0] * ld[0] + lo_[1] * ld[1]),
                                  lo_[0] ** 2 + lo_[1] ** 2 - r * r):
            if abs(lo_[2] + t * ld[2]) <= hh:
                hits.append(t)
        if abs(ld[2]) > 1e-15:
            for zc in (-hh, hh):
                t = (zc - lo_[2]) / ld[2]
                p = lo_ + t * ld
                if p[0] ** 2 + p[1] ** 2 <= r * r:
                    hits.append(t)
    pos = [t for t in hits if t > 0]
    return min(pos) if pos else math.inf


def ray_hit_scene(table, plane_h, o, d) -> tuple[float, int]:
    """(distance, owner) of the first surface along a unit ray; owner -1 plane, -2 miss."""
    best, owner = math.inf, -2
    if d[2] < 0 and o[2] > plane_h:
        best, owner = (plane_h - o[2]) / d[2], -1
    for i, row in enumerate(table):
        t = ray_hit_primitive(row, o, d)
        if t < best:
            best, owner = t, i
    return best, owner


def softplus(x):
    return np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))


def mlp_forward(params: dict, sizes, residual, x):
    """Layer-by-layer forward with explicit neuron sums."""
    h = np.asarray(x, float)
    n = len(sizes) - 1
    for i in range(n):
        W, b = params[f"W{i}"], params[f"b{i}"]
        z = np.einsum("...i,ij->...j", h, W) + b
        if i < n - 1:
            a = softplus(z)
            h = a + h if residual[i] else a
        else:
            h = z
    return h


def head_predict(head, x):
    """Decoded (q, r, w) for one input row, written from the output convention."""
    if head.input_mean is not None:
        x = (x - head.input_mean) / head.input_std
    ql, a, b, wl = mlp_forward(head.net.params, head.net.sizes, head.net.residual, x)
    q = 1.0 / (1.0 + math.exp(-ql))
    r = (math.atan2(b, a) / 2.0) % math.pi
    if r >= math.pi:
        r = 0.0
    w = head.w_max / (1.0 + math.exp(-wl))
    return q, r, w


def central_diff(f, x, h):
    """Central finite-difference gradient of scalar ``f`` at array ``x``."""
    x = np.array(x, float)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


def bilinear_point(planes, p):
    """Point feature by direct corner weights on each plane."""
    P = planes.planes
    res = P.shape[1]
    g = np.clip((np.asarray(p) - planes.origin) / planes.size * res - 0.5, 0, res - 1)
    out = []
    for k, (a, b) in enumerate(((0, 1), (0, 2), (1, 2))):
        u, v = g[a], g[b]
        i, j = min(int(math.floor(u)), res - 2), min(int(math.floor(v)), res - 2)
        fu, fv = u - i, v - j
        out.append(P[k, i, j] * (1 - fu) * (1 - fv) + P[k, i + 1, j] * fu * (1 - fv)
                   + P[k, i, j + 1] * (1 - fu) * fv + P[k, i + 1, j + 1] * fu * fv)
    return np.concatenate(out)


def ray_maxpool(planes, center, direction, step=0.1):
    """Running max over every chord sample ``center + k * step * size * direction``."""
    lo, hi = planes.origin, planes.origin + planes.size
    h = step * planes.size
    best = None
    for k in range(-60, 61):
        p = np.asarray(center) + k * h * np.asarray(direction)
        if np.all(p >= lo - 1e-9) and np.all(p <= hi + 1e-9):
            f = bilinear_point(planes, p)
            best = f if best is None else np.maximum(best, f)
    return best


def _segment_hits_cubes(a, b, los, vs) -> bool:
    """Slab test of one segment against many axis-aligned cubes of edge ``vs``."""
    d = b - a
    t0 = np.zeros(len(los))
    t1 = np.ones(len(los))
    for k in range(3):
        if abs(d[k]) < 1e-15:
            inside = (a[k] >= los[:, k]) & (a[k] <= los[:, k] + vs)
            t1 = np.where(inside, t1, -1.0)
            continue
        u = (los[:, k] - a[k]) / d[k]
        v = (los[:, k] + vs - a[k]) / d[k]
        t0 = np.maximum(t0, np.minimum(u, v))
        t1 = np.minimum(t1, np.maximum(u, v))
    return bool(np.any(t0 <= t1))


def visible_unobserved_bruteforce(volume, bbox, camera) -> int:
    """Per-voxel test of every unobserved bbox voxel against every occupied voxel cube."""
    vs = volume.voxel_size
    centers = volume.voxel_centers()
    occ = np.argwhere((volume.weight > 0) & (volume.distance < 0))
    eye = camera.position
    K = camera.intrinsics
    inv = camera.pose.inverse()
    count = 0
    for idx in np.argwhere(volume.weight == 0):
        c = centers[tuple(idx)]
        if np.any(c < bbox.lo) or np.any(c > bbox.hi):
            continue
        pc = inv.apply(c[None])[0]
        if pc[2] <= 0:
            continue
        u = K.fx * pc[0] / pc[2] + K.cx
        v = K.fy * pc[1] / pc[2] + K.cy
        if not (0 <= u < K.width and 0 <= v < K.height):
            continue
        others = occ[np.any(occ != idx, axis=1)]
        blocked = _segment_hits_cubes(eye, c, volume.origin + others * vs, vs)
        count += not blocked
    return count
