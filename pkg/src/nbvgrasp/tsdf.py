"""Projective TSDF fusion over the cubic workspace."""

from __future__ import annotations

import struct
import warnings

import numpy as np

from . import _backend
from .scene import WORKSPACE_ORIGIN, WORKSPACE_SIZE, DepthImage

_SNAPSHOT_MAGIC = b"TSDF"


class OutOfWorkspaceError(ValueError):
    pass


class FrustumMissWarning(UserWarning):
    pass


class TsdfVolume:
    """Truncated signed distances normalized to [-1, 1] with per-voxel weights.

    Voxel (i, j, k) is centered at ``origin + (i + 0.5, j + 0.5, k + 0.5) * voxel_size``.
    Unobserved voxels hold +1 with weight 0.
    """

    def __init__(
        self,
        resolution: int = 40,
        origin=WORKSPACE_ORIGIN,
        size: float = WORKSPACE_SIZE,
        trunc_voxels: float = 4.0,
        max_weight: float = 32.0,
    ):
        self.resolution = int(resolution)
        self.origin = np.asarray(origin, dtype=float).copy()
        self.size = float(size)
        self.trunc_voxels = float(trunc_voxels)
        self.max_weight = float(max_weight)
        shape = (self.resolution,) * 3
        self.distance = np.ones(shape)
        self.weight = np.zeros(shape)

    @property
    def voxel_size(self) -> float:
        return self.size / self.resolution

    @property
    def trunc(self) -> float:
        return self.trunc_voxels * self.voxel_size

    def copy(self) -> TsdfVolume:
        out = TsdfVolume(self.resolution, self.origin, self.size, self.trunc_voxels, self.max_weight)
        out.distance = self.distance.copy()
        out.weight = self.weight.copy()
        return out

    def voxel_centers(self) -> np.ndarray:
        """World positions, shape (R, R, R, 3)."""
        g = (np.arange(self.resolution) + 0.5) * self.voxel_size
        return np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1) + self.origin

    def index_of(self, p) -> np.ndarray:
        """Integer voxel index containing ``p``."""
        return np.floor((np.asarray(p, float) - self.origin) / self.voxel_size).astype(int)

    def integrate(self, image: DepthImage) -> int:
        """Fuse one depth image in place; returns the number of voxels updated."""
        cam_from_world = image.pose.inverse()
        K = image.intrinsics
        n = _backend.tsdf_integrate(
            self.distance, self.weight, self.origin, self.voxel_size, image.depth,
            K.fx, K.fy, K.cx, K.cy, cam_from_world.rotation, cam_from_world.trans,
            self.trunc, self.max_weight,
        )
        if n == 0:
            warnings.warn("depth image frustum misses the workspace", FrustumMissWarning, stacklevel=2)
        return int(n)

    def sample_trilinear(self, p) -> float | np.ndarray:
        """Trilinear interpolation between voxel centers (clamped to the outer centers)."""
        p = np.asarray(p, dtype=float)
        pts = p.reshape(-1, 3)
        lo, hi = self.origin, self.origin + self.size
        if np.any(pts < lo - 1e-12) or np.any(pts > hi + 1e-12):
            raise OutOfWorkspaceError("query point outside the workspace")
        out = trilinear(self.distance, (pts - self.origin) / self.voxel_size - 0.5)
        return float(out[0]) if p.ndim == 1 else out

    def observed(self) -> np.ndarray:
        return self.weight > 0

    # --- snapshots -----------------------------------------------------
    def to_bytes(self) -> bytes:
        head = _SNAPSHOT_MAGIC + struct.pack("<I4f", self.resolution, *self.origin, self.size)
        body = self.distance.astype("<f4").tobytes() + self.weight.astype("<f4").tobytes()
        return head + body

    @classmethod
    def from_bytes(cls, blob: bytes) -> TsdfVolume:
        if blob[:4] != _SNAPSHOT_MAGIC:
            raise ValueError("not a TSDF snapshot (bad magic at offset 0)")
        res, ox, oy, oz, size = struct.unpack_from("<I4f", blob, 4)
        n = res**3
        expected = 24 + 8 * n
        if len(blob) != expected:
            raise ValueError(f"TSDF snapshot truncated: {len(blob)} bytes, expected {expected}")
        vol = cls(res, (ox, oy, oz), size)
        vol.distance = np.frombuffer(blob, "<f4", n, 24).astype(float).reshape((res,) * 3)
        vol.weight = np.frombuffer(blob, "<f4", n, 24 + 4 * n).astype(float).reshape((res,) * 3)
        return vol

    def zero_crossings(self) -> np.ndarray:
        """Linear-interpolated surface points between observed neighbours of opposite sign."""
        pts = []
        c = self.voxel_centers()
        obs = self.observed()
        for ax in range(3):
            a = [slice(None)] * 3
            b = [slice(None)] * 3
            a[ax], b[ax] = slice(0, -1), slice(1, None)
            da, db = self.distance[tuple(a)], self.distance[tuple(b)]
            m = obs[tuple(a)] & obs[tuple(b)] & (np.sign(da) != np.sign(db)) & (np.abs(da - db) > 0)
            t = da[m] / (da[m] - db[m])
            pts.append(c[tuple(a)][m] + t[:, None] * (c[tuple(b)][m] - c[tuple(a)][m]))
        return np.concatenate(pts) if pts else np.zeros((0, 3))


def trilinear(grid: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Interpolate ``grid`` (R, R, R[, C]) at fractional index coordinates ``q`` (N, 3)."""
    res = np.array(grid.shape[:3])
    q = np.clip(q, 0.0, res - 1)
    # snap round-off so queries at voxel centers return stored values exactly
    q = np.where(np.abs(q - np.rint(q)) < 1e-9, np.rint(q), q)
    i0 = np.minimum(np.floor(q).astype(int), res - 2)
    f = q - i0
    out = 0.0
    for dx in (0, 1):
        wx = f[:, 0] if dx else 1 - f[:, 0]
        for dy in (0, 1):
            wy = f[:, 1] if dy else 1 - f[:, 1]
            for dz in (0, 1):
                wz = f[:, 2] if dz else 1 - f[:, 2]
                v = grid[i0[:, 0] + dx, i0[:, 1] + dy, i0[:, 2] + dz]
                w = wx * wy * wz
                out = out + (w[:, None] * v if v.ndim > 1 else w * v)
    return out
