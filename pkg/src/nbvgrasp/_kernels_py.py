"""Pure-numpy reference kernels.

Primitive table layout (one row per primitive, float64, 16 columns)::

    [kind, a, b, c, R00, R01, R02, R10, R11, R12, R20, R21, R22, tx, ty, tz]

kind 0 = sphere (a = radius), 1 = box (a, b, c = half extents),
2 = cylinder about local z (a = radius, b = half height). R is
world-from-local. A support plane ``z = plane_h`` bounds the solid half
space below it; pass ``-inf`` to drop it.
"""

import numpy as np

SPHERE, BOX, CYLINDER = 0, 1, 2
PLANE_OWNER = -1
NO_OWNER = -2


def primitive_sdf(prims: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Signed distance of every point to every primitive, shape (P, N)."""
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    out = np.empty((len(prims), len(pts)))
    for i, row in enumerate(prims):
        rot = row[4:13].reshape(3, 3)
        q = (pts - row[13:16]) @ rot  # local = R^T (p - t)
        kind = int(row[0])
        if kind == SPHERE:
            out[i] = np.linalg.norm(q, axis=1) - row[1]
        elif kind == BOX:
            d = np.abs(q) - row[1:4]
            outside = np.linalg.norm(np.maximum(d, 0.0), axis=1)
            out[i] = outside + np.minimum(d.max(axis=1), 0.0)
        else:
            dr = np.hypot(q[:, 0], q[:, 1]) - row[1]
            dz = np.abs(q[:, 2]) - row[2]
            outside = np.hypot(np.maximum(dr, 0.0), np.maximum(dz, 0.0))
            out[i] = outside + np.minimum(np.maximum(dr, dz), 0.0)
    return out


def scene_sdf(prims: np.ndarray, plane_h: float, pts: np.ndarray):
    """Union SDF and the index of the closest primitive (-1 = plane)."""
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    best = pts[:, 2] - plane_h
    owner = np.full(len(pts), PLANE_OWNER, dtype=np.int64)
    if len(prims):
        d = primitive_sdf(prims, pts)
        k = np.argmin(d, axis=0)
        dk = d[k, np.arange(len(pts))]
        closer = dk < best
        best = np.where(closer, dk, best)
        owner = np.where(closer, k, owner)
    return best, owner


def sphere_trace(prims, plane_h, origins, dirs, max_steps=128, eps=1e-4, far=2.0):
    """March unit-direction rays; returns hit distance (inf on miss) and owner."""
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    n = len(origins)
    t = np.zeros(n)
    hit_t = np.full(n, np.inf)
    owner = np.full(n, NO_OWNER, dtype=np.int64)
    active = np.arange(n)
    for _ in range(max_steps):
        if not len(active):
            break
        p = origins[active] + t[active, None] * dirs[active]
        d, own = scene_sdf(prims, plane_h, p)
        hit = np.abs(d) < eps
        hit_t[active[hit]] = t[active[hit]]
        owner[active[hit]] = own[hit]
        t[active] += d
        keep = ~hit & (t[active] <= far)
        active = active[keep]
    return hit_t, owner


def tsdf_integrate(dist, weight, origin, voxel, depth, fx, fy, cx, cy,
                   rot_cw, trans_cw, trunc, max_weight):
    """Weighted-average projective TSDF update, in place. Returns updated count.

    ``dist``/``weight`` are (R, R, R) float arrays indexed [ix, iy, iz];
    ``rot_cw``/``trans_cw`` map world points into the camera frame.
    """
    res = dist.shape[0]
    idx = (np.arange(res) + 0.5) * voxel
    gx, gy, gz = np.meshgrid(idx, idx, idx, indexing="ij")
    pts = np.stack([gx, gy, gz], axis=-1).reshape(-1, 3) + origin
    cam = pts @ np.asarray(rot_cw).T + trans_cw
    z = cam[:, 2]
    h, w = depth.shape
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.floor(fx * cam[:, 0] / z + cx + 0.5)
        v = np.floor(fy * cam[:, 1] / z + cy + 0.5)
    ok = (z > 1e-9) & (u >= 0) & (u < w) & (v >= 0) & (v < h)
    sel = np.flatnonzero(ok)
    d = depth[v[sel].astype(np.int64), u[sel].astype(np.int64)]
    sdf = d - z[sel]
    good = np.isfinite(d) & (d > 0) & (sdf >= -trunc)
    sel = sel[good]
    val = np.minimum(sdf[good] / trunc, 1.0)
    fd = dist.reshape(-1)
    fw = weight.reshape(-1)
    w0 = fw[sel]
    fd[sel] = (fd[sel] * w0 + val) / (w0 + 1.0)
    fw[sel] = np.minimum(w0 + 1.0, max_weight)
    return len(sel)
