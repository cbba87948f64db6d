"""Tri-plane feature volume: encoder from the TSDF and point/ray/cuboid queries.

Plane order is (xy, xz, yz); plane grid nodes sit at voxel centers. Query
points are given in world meters and normalized by the workspace edge.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .geometry import orthonormal_frame, ray_box_chord
from .nn import sigmoid, softplus
from .tsdf import TsdfVolume

PLANE_AXES = ((0, 1), (0, 2), (1, 2))  # kept coordinates per plane
STAGE1_CHANNELS = 4
RAY_STEP = 0.1  # normalized workspace units
CUBOID_EDGE = 0.25


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class TriPlaneVolume:
    planes: np.ndarray  # (3, R, R, F)
    origin: np.ndarray
    size: float

    def __post_init__(self):
        p = np.asarray(self.planes, dtype=float)
        if p.ndim != 4 or p.shape[0] != 3 or p.shape[1] != p.shape[2]:
            raise ConfigurationError(f"bad plane shape {p.shape}")
        object.__setattr__(self, "planes", p)
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float))

    @property
    def resolution(self) -> int:
        return self.planes.shape[1]

    @property
    def channels(self) -> int:
        return self.planes.shape[3]

    @property
    def point_dim(self) -> int:
        return 3 * self.channels

    def grid_coords(self, pts: np.ndarray) -> np.ndarray:
        """Fractional node coordinates of world points, clamped to the grid."""
        u = (np.asarray(pts, float).reshape(-1, 3) - self.origin) / self.size
        return np.clip(u * self.resolution - 0.5, 0.0, self.resolution - 1)


@dataclass
class EncoderWeights:
    w1: np.ndarray  # (H, 4, 3, 3)
    b1: np.ndarray
    w2: np.ndarray  # (F, H, 3, 3)
    b2: np.ndarray

    @classmethod
    def init(cls, channels: int = 32, hidden: int = 32, seed: int = 0) -> EncoderWeights:
        rng = np.random.default_rng(seed)
        w1 = rng.normal(0.0, np.sqrt(2.0 / (STAGE1_CHANNELS * 9)), (hidden, STAGE1_CHANNELS, 3, 3))
        w2 = rng.normal(0.0, np.sqrt(1.0 / (hidden * 9)), (channels, hidden, 3, 3))
        return cls(w1, np.zeros(hidden), w2, np.zeros(channels))

    @property
    def channels(self) -> int:
        return self.w2.shape[0]

    def as_dict(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    @classmethod
    def from_dict(cls, d) -> EncoderWeights:
        return cls(d["w1"], d["b1"], d["w2"], d["b2"])

    def check(self):
        h = self.w1.shape[0]
        if (
            self.w1.shape[1:] != (STAGE1_CHANNELS, 3, 3)
            or self.b1.shape != (h,)
            or self.w2.shape[1:] != (h, 3, 3)
            or self.b2.shape != (self.w2.shape[0],)
        ):
            raise ConfigurationError("encoder weight shapes are inconsistent")


def orthographic_reduce(volume: TsdfVolume) -> np.ndarray:
    """Stage 1: per-plane (mean, min, occupied fraction, observed fraction), shape (3, R, R, 4)."""
    d, w = volume.distance, volume.weight
    obs = w > 0
    occ = obs & (d < 0)
    out = []
    for reduce_axis in (2, 1, 0):  # xy, xz, yz
        out.append(
            np.stack(
                [
                    d.mean(axis=reduce_axis),
                    d.min(axis=reduce_axis),
                    occ.mean(axis=reduce_axis),
                    obs.mean(axis=reduce_axis),
                ],
                axis=-1,
            )
        )
    return np.stack(out)


def _im2col(x: np.ndarray) -> np.ndarray:
    """(P, R, R, C) with edge padding -> (P, R, R, C*9) 3x3 patches."""
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)), mode="edge")
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))  # (P, R, R, C, 3, 3)
    return win.reshape(*win.shape[:3], -1)


def _col2im(g: np.ndarray, channels: int) -> np.ndarray:
    """Adjoint of :func:`_im2col`, folding padding gradients back onto the edges."""
    p, r = g.shape[0], g.shape[1]
    g = g.reshape(p, r, r, channels, 3, 3)
    xp = np.zeros((p, r + 2, r + 2, channels))
    for di in range(3):
        for dj in range(3):
            xp[:, di : di + r, dj : dj + r] += g[..., di, dj]
    xp[:, 1] += xp[:, 0]
    xp[:, -2] += xp[:, -1]
    xp[:, :, 1] += xp[:, :, 0]
    xp[:, :, -2] += xp[:, :, -1]
    return xp[:, 1:-1, 1:-1]


def _conv(x, w, b):
    cols = _im2col(x)
    return cols @ w.reshape(w.shape[0], -1).T + b, cols


def encode(volume: TsdfVolume, weights: EncoderWeights, keep: bool = False):
    """Stage-1 reduction followed by two shared 3x3 convolutions (softplus between)."""
    weights.check()
    x0 = orthographic_reduce(volume)
    z1, cols1 = _conv(x0, weights.w1, weights.b1)
    h1 = softplus(z1)
    z2, cols2 = _conv(h1, weights.w2, weights.b2)
    planes = TriPlaneVolume(z2, volume.origin, volume.size)
    if keep:
        return planes, (cols1, z1, cols2)
    return planes


def encode_backward(weights: EncoderWeights, cache, grad_planes: np.ndarray) -> dict[str, np.ndarray]:
    cols1, z1, cols2 = cache
    g2 = grad_planes.reshape(-1, grad_planes.shape[-1])
    grads = {
        "w2": (g2.T @ cols2.reshape(-1, cols2.shape[-1])).reshape(weights.w2.shape),
        "b2": g2.sum(axis=0),
    }
    gcols2 = grad_planes @ weights.w2.reshape(weights.w2.shape[0], -1)
    gh1 = _col2im(gcols2, weights.w1.shape[0])
    gz1 = (gh1 * sigmoid(z1)).reshape(-1, weights.w1.shape[0])
    grads["w1"] = (gz1.T @ cols1.reshape(-1, cols1.shape[-1])).reshape(weights.w1.shape)
    grads["b1"] = gz1.sum(axis=0)
    return grads


def _bilinear_taps(uv: np.ndarray, res: int):
    i0 = np.minimum(np.floor(uv).astype(int), res - 2)
    f = uv - i0
    return i0, f


def query_points(planes: TriPlaneVolume, pts) -> np.ndarray:
    """Point features, shape (N, 3F): bilinear samples from xy, xz, yz planes."""
    g = planes.grid_coords(pts)
    res = planes.resolution
    blocks = []
    for k, (a, b) in enumerate(PLANE_AXES):
        i0, f = _bilinear_taps(g[:, (a, b)], res)
        P = planes.planes[k]
        fu, fv = f[:, :1], f[:, 1:]
        blocks.append(
            P[i0[:, 0], i0[:, 1]] * ((1 - fu) * (1 - fv))
            + P[i0[:, 0] + 1, i0[:, 1]] * (fu * (1 - fv))
            + P[i0[:, 0], i0[:, 1] + 1] * ((1 - fu) * fv)
            + P[i0[:, 0] + 1, i0[:, 1] + 1] * (fu * fv)
        )
    return np.concatenate(blocks, axis=1)


def query_point(planes: TriPlaneVolume, p) -> np.ndarray:
    return query_points(planes, np.asarray(p, float).reshape(1, 3))[0]


def query_points_backward(planes: TriPlaneVolume, pts, grad: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`query_points`: scatter (N, 3F) gradients onto the planes."""
    g = planes.grid_coords(pts)
    res, F = planes.resolution, planes.channels
    out = np.zeros_like(planes.planes)
    for k, (a, b) in enumerate(PLANE_AXES):
        i0, f = _bilinear_taps(g[:, (a, b)], res)
        gk = grad[:, k * F : (k + 1) * F]
        fu, fv = f[:, :1], f[:, 1:]
        for du, dv, w in ((0, 0, (1 - fu) * (1 - fv)), (1, 0, fu * (1 - fv)),
                          (0, 1, (1 - fu) * fv), (1, 1, fu * fv)):
            np.add.at(out[k], (i0[:, 0] + du, i0[:, 1] + dv), gk * w)
    return out


def ray_sample_points(planes: TriPlaneVolume, center, direction, step: float = RAY_STEP) -> np.ndarray:
    """Points on the workspace chord through ``center`` at multiples of ``step`` from it.

    Anchoring at the center makes the sample set identical for ``direction``
    and ``-direction``.
    """
    center = np.asarray(center, float)
    d = np.asarray(direction, float)
    lo, hi = planes.origin, planes.origin + planes.size
    chord = ray_box_chord(center, d, lo, hi)
    if chord is None or chord[0] > 1e-12 or chord[1] < -1e-12:
        raise ValueError("ray center outside the workspace")
    h = step * planes.size
    k = np.arange(int(np.ceil(chord[0] / h - 1e-9)), int(np.floor(chord[1] / h + 1e-9)) + 1)
    return center + (k * h)[:, None] * d


def ray_feature(planes: TriPlaneVolume, center, direction, step: float = RAY_STEP) -> np.ndarray:
    return query_points(planes, ray_sample_points(planes, center, direction, step)).max(axis=0)


def ray_features(planes: TriPlaneVolume, centers, direction, step: float = RAY_STEP) -> np.ndarray:
    """Batched :func:`ray_feature` for many centers sharing one direction, (M, 3F)."""
    centers = np.asarray(centers, float).reshape(-1, 3)
    d = np.asarray(direction, float)
    lo, hi = planes.origin, planes.origin + planes.size
    h = step * planes.size
    with np.errstate(divide="ignore", invalid="ignore"):
        a = (lo - centers) / d
        b = (hi - centers) / d
    t0 = np.where(d == 0, -np.inf, np.minimum(a, b)).max(axis=1)
    t1 = np.where(d == 0, np.inf, np.maximum(a, b)).min(axis=1)
    inside = np.all((centers >= lo - 1e-12) & (centers <= hi + 1e-12), axis=1)
    if not inside.all():
        raise ValueError("ray center outside the workspace")
    kmax = int(np.ceil(np.sqrt(3.0) / step)) + 1
    ks = np.arange(-kmax, kmax + 1)
    kmin_c = np.ceil(t0 / h - 1e-9)
    kmax_c = np.floor(t1 / h + 1e-9)
    valid = (ks[None, :] >= kmin_c[:, None]) & (ks[None, :] <= kmax_c[:, None])
    m, s = valid.shape
    pts = centers[:, None, :] + (ks * h)[None, :, None] * d
    feats = query_points(planes, pts.reshape(-1, 3)).reshape(m, s, -1)
    feats = np.where(valid[:, :, None], feats, -np.inf)
    return feats.max(axis=1)


def cuboid_vertices(center, direction, edge: float) -> np.ndarray:
    """Eight corners, lexicographic over (+-length, +-width, +-height) in the view frame."""
    d, e1, e2 = orthonormal_frame(direction)
    half = edge / 2
    signs = np.array([[sl, sw, sh] for sl in (-1, 1) for sw in (-1, 1) for sh in (-1, 1)], float)
    return np.asarray(center, float) + half * (signs[:, :1] * d + signs[:, 1:2] * e1 + signs[:, 2:] * e2)


def geo_feature(planes: TriPlaneVolume, center, direction, edge: float = CUBOID_EDGE) -> np.ndarray:
    return geo_features(planes, np.asarray(center, float).reshape(1, 3), direction, edge)[0]


def geo_features(planes: TriPlaneVolume, centers, direction, edge: float = CUBOID_EDGE) -> np.ndarray:
    """Concatenated cuboid-vertex and center features, shape (M, 9 * 3F)."""
    centers = np.asarray(centers, float).reshape(-1, 3)
    offs = cuboid_vertices(np.zeros(3), direction, edge * planes.size)
    pts = np.concatenate([centers[:, None, :] + offs[None], centers[:, None, :]], axis=1)
    return query_points(planes, pts.reshape(-1, 3)).reshape(len(centers), -1)
