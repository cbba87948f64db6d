# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``_kernels_py``; same signatures and layout."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, floor, INFINITY, isfinite

cnp.import_array()

cdef int SPHERE = 0
cdef int BOX = 1
cdef int PLANE_OWNER = -1
cdef int NO_OWNER = -2


cdef inline double _prim(const double[:, ::1] P, Py_ssize_t i,
                         double px, double py, double pz) nogil:
    cdef double dx = px - P[i, 13]
    cdef double dy = py - P[i, 14]
    cdef double dz = pz - P[i, 15]
    # local = R^T (p - t)
    cdef double qx = P[i, 4] * dx + P[i, 7] * dy + P[i, 10] * dz
    cdef double qy = P[i, 5] * dx + P[i, 8] * dy + P[i, 11] * dz
    cdef double qz = P[i, 6] * dx + P[i, 9] * dy + P[i, 12] * dz
    cdef int kind = <int>P[i, 0]
    cdef double ax, ay, az, ox, oy, oz, m, dr, dh
    if kind == SPHERE:
        return sqrt(qx * qx + qy * qy + qz * qz) - P[i, 1]
    elif kind == BOX:
        ax = fabs(qx) - P[i, 1]
        ay = fabs(qy) - P[i, 2]
        az = fabs(qz) - P[i, 3]
        ox = ax if ax > 0 else 0.0
        oy = ay if ay > 0 else 0.0
        oz = az if az > 0 else 0.0
        m = ax
        if ay > m:
            m = ay
        if az > m:
            m = az
        if m > 0:
            m = 0.0
        return sqrt(ox * ox + oy * oy + oz * oz) + m
    else:
        dr = sqrt(qx * qx + qy * qy) - P[i, 1]
        dh = fabs(qz) - P[i, 2]
        ox = dr if dr > 0 else 0.0
        oz = dh if dh > 0 else 0.0
        m = dr if dr > dh else dh
        if m > 0:
            m = 0.0
        return sqrt(ox * ox + oz * oz) + m


cdef inline double _scene(const double[:, ::1] P, double plane_h,
                          double px, double py, double pz, long* owner) nogil:
    cdef double best = pz - plane_h
    cdef double d
    cdef Py_ssize_t i
    owner[0] = PLANE_OWNER
    for i in range(P.shape[0]):
        d = _prim(P, i, px, py, pz)
        if d < best:
            best = d
            owner[0] = i
    return best


def primitive_sdf(prims, pts):
    cdef const double[:, ::1] P = np.ascontiguousarray(prims, dtype=np.float64)
    cdef const double[:, ::1] X = np.ascontiguousarray(np.asarray(pts, dtype=np.float64).reshape(-1, 3))
    out = np.empty((P.shape[0], X.shape[0]))
    cdef double[:, ::1] O = out
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(P.shape[0]):
            for j in range(X.shape[0]):
                O[i, j] = _prim(P, i, X[j, 0], X[j, 1], X[j, 2])
    return out


def scene_sdf(prims, double plane_h, pts):
    cdef const double[:, ::1] P = np.ascontiguousarray(np.asarray(prims, dtype=np.float64).reshape(-1, 16))
    cdef const double[:, ::1] X = np.ascontiguousarray(np.asarray(pts, dtype=np.float64).reshape(-1, 3))
    cdef Py_ssize_t n = X.shape[0], j
    sdf = np.empty(n)
    owner = np.empty(n, dtype=np.int64)
    cdef double[::1] S = sdf
    cdef long long[::1] W = owner
    cdef long own
    with nogil:
        for j in range(n):
            S[j] = _scene(P, plane_h, X[j, 0], X[j, 1], X[j, 2], &own)
            W[j] = own
    return sdf, owner


def sphere_trace(prims, double plane_h, origins, dirs, int max_steps=128,
                 double eps=1e-4, double far=2.0):
    cdef const double[:, ::1] P = np.ascontiguousarray(np.asarray(prims, dtype=np.float64).reshape(-1, 16))
    cdef const double[:, ::1] O = np.ascontiguousarray(np.asarray(origins, dtype=np.float64).reshape(-1, 3))
    cdef const double[:, ::1] D = np.ascontiguousarray(np.asarray(dirs, dtype=np.float64).reshape(-1, 3))
    cdef Py_ssize_t n = O.shape[0], j
    cdef int k
    cdef double t, d
    cdef long own
    hit_t = np.full(n, np.inf)
    owner = np.full(n, NO_OWNER, dtype=np.int64)
    cdef double[::1] T = hit_t
    cdef long long[::1] W = owner
    with nogil:
        for j in range(n):
            t = 0.0
            for k in range(max_steps):
                d = _scene(P, plane_h, O[j, 0] + t * D[j, 0], O[j, 1] + t * D[j, 1],
                           O[j, 2] + t * D[j, 2], &own)
                if fabs(d) < eps:
                    T[j] = t
                    W[j] = own
                    break
                t += d
                if t > far:
                    break
    return hit_t, owner


def tsdf_integrate(dist, weight, origin, double voxel, depth, double fx, double fy,
                   double cx, double cy, rot_cw, trans_cw, double trunc, double max_weight):
    cdef double[:, :, ::1] Dv = dist
    cdef double[:, :, ::1] Wv = weight
    cdef const double[:, ::1] img = np.ascontiguousarray(depth, dtype=np.float64)
    cdef const double[:, ::1] R = np.ascontiguousarray(rot_cw, dtype=np.float64)
    cdef const double[::1] tc = np.ascontiguousarray(trans_cw, dtype=np.float64)
    cdef const double[::1] org = np.ascontiguousarray(origin, dtype=np.float64)
    cdef Py_ssize_t res = Dv.shape[0], h = img.shape[0], w = img.shape[1]
    cdef Py_ssize_t i, j, k
    cdef long u, v
    cdef double px, py, pz, x, y, z, d, sdf, val, w0
    cdef long count = 0
    with nogil:
        for i in range(res):
            px = org[0] + (i + 0.5) * voxel
            for j in range(res):
                py = org[1] + (j + 0.5) * voxel
                for k in range(res):
                    pz = org[2] + (k + 0.5) * voxel
                    x = R[0, 0] * px + R[0, 1] * py + R[0, 2] * pz + tc[0]
                    y = R[1, 0] * px + R[1, 1] * py + R[1, 2] * pz + tc[1]
                    z = R[2, 0] * px + R[2, 1] * py + R[2, 2] * pz + tc[2]
                    if z <= 1e-9:
                        continue
                    u = <long>floor(fx * x / z + cx + 0.5)
                    v = <long>floor(fy * y / z + cy + 0.5)
                    if u < 0 or u >= w or v < 0 or v >= h:
                        continue
                    d = img[v, u]
                    if not isfinite(d) or d <= 0:
                        continue
                    sdf = d - z
                    if sdf < -trunc:
                        continue
                    val = sdf / trunc
                    if val > 1.0:
                        val = 1.0
                    w0 = Wv[i, j, k]
                    Dv[i, j, k] = (Dv[i, j, k] * w0 + val) / (w0 + 1.0)
                    Wv[i, j, k] = w0 + 1.0 if w0 + 1.0 < max_weight else max_weight
                    count += 1
    return count
