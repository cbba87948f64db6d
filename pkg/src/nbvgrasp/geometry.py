"""Rigid transforms, camera models and small vector helpers.

Quaternions are stored scalar-first (w, x, y, z). Poses map local
coordinates into the parent frame: ``p_parent = R @ p_local + t``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

UP = np.array([0.0, 0.0, 1.0])


def normalize(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / n


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """Shepperd's method; returns a unit quaternion with w >= 0."""
    m = np.asarray(m, dtype=float)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    q /= np.linalg.norm(q)
    return q if q[0] >= 0 else -q


def quat_multiply(a, b) -> np.ndarray:
    w1, x1, y1, z1 = a
    w2, x2, y2, z2 = b
    return np.array(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ]
    )


def quat_about_z(angle: float) -> np.ndarray:
    return np.array([np.cos(angle / 2), 0.0, 0.0, np.sin(angle / 2)])


@dataclass(frozen=True)
class Pose:
    quat: np.ndarray  # (w, x, y, z)
    trans: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.quat, dtype=float)
        object.__setattr__(self, "quat", q / np.linalg.norm(q))
        object.__setattr__(self, "trans", np.asarray(self.trans, dtype=float).reshape(3))

    @classmethod
    def identity(cls) -> Pose:
        return cls(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @classmethod
    def from_matrix(cls, rot: np.ndarray, trans) -> Pose:
        return cls(matrix_to_quat(rot), trans)

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.quat)

    def compose(self, other: Pose) -> Pose:
        """self ∘ other: apply ``other`` first."""
        q = quat_multiply(self.quat, other.quat)
        return Pose(q, self.rotation @ other.trans + self.trans)

    def inverse(self) -> Pose:
        qi = self.quat * np.array([1.0, -1.0, -1.0, -1.0])
        return Pose(qi, -(quat_to_matrix(qi) @ self.trans))

    def apply(self, pts: np.ndarray) -> np.ndarray:
        return np.asarray(pts, dtype=float) @ self.rotation.T + self.trans

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.trans
        return m


def orthonormal_frame(direction) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Right-handed frame (d, e1, e2) with ``d`` along ``direction``.

    The reference up-vector is world z, or world x when ``direction`` is
    within ~8 degrees of vertical.
    """
    d = normalize(direction)
    up = UP if abs(d[2]) <= 0.99 else np.array([1.0, 0.0, 0.0])
    e1 = normalize(np.cross(d, up))
    e2 = np.cross(d, e1)
    return d, e1, e2


def look_at(eye, target) -> Pose:
    """World-from-camera pose, OpenCV convention (z forward, y down)."""
    eye = np.asarray(eye, dtype=float)
    z = normalize(np.asarray(target, dtype=float) - eye)
    up = UP if abs(z[2]) <= 0.99 else np.array([0.0, 1.0, 0.0])
    x = normalize(np.cross(z, up))
    y = np.cross(z, x)
    return Pose.from_matrix(np.stack([x, y, z], axis=1), eye)


def angle_between(a, b) -> float:
    c = np.dot(normalize(a), normalize(b))
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


@dataclass(frozen=True)
class Intrinsics:
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if min(self.width, self.height) <= 0 or min(self.fx, self.fy) <= 0:
            raise ValueError("intrinsics must be positive")

    @classmethod
    def from_fov(cls, width: int, height: int, fov_x_deg: float = 60.0) -> Intrinsics:
        f = 0.5 * width / np.tan(np.radians(fov_x_deg) / 2)
        return cls(width, height, f, f, (width - 1) / 2, (height - 1) / 2)

    def pixel_rays(self) -> np.ndarray:
        """Camera-frame ray directions with unit z, shape (H, W, 3)."""
        u, v = np.meshgrid(np.arange(self.width), np.arange(self.height))
        return np.stack(
            [(u - self.cx) / self.fx, (v - self.cy) / self.fy, np.ones(u.shape)], axis=-1
        )


@dataclass(frozen=True)
class Camera:
    intrinsics: Intrinsics
    pose: Pose  # world-from-camera

    @property
    def position(self) -> np.ndarray:
        return self.pose.trans

    @property
    def axis(self) -> np.ndarray:
        return self.pose.rotation[:, 2]


@dataclass(frozen=True)
class Aabb:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", np.asarray(self.lo, dtype=float).reshape(3))
        object.__setattr__(self, "hi", np.asarray(self.hi, dtype=float).reshape(3))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def extent(self) -> np.ndarray:
        return self.hi - self.lo

    def contains(self, pts, tol: float = 0.0) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return np.all((pts >= self.lo - tol) & (pts <= self.hi + tol), axis=-1)

    def intersects(self, other: Aabb) -> bool:
        return bool(np.all(self.lo <= other.hi) and np.all(other.lo <= self.hi))


def ray_box_chord(origin, direction, lo, hi) -> tuple[float, float] | None:
    """Slab-method entry/exit parameters of a ray against an AABB."""
    origin = np.asarray(origin, dtype=float)
    direction = np.asarray(direction, dtype=float)
    t0, t1 = -np.inf, np.inf
    for k in range(3):
        if abs(direction[k]) < 1e-15:
            if origin[k] < lo[k] or origin[k] > hi[k]:
                return None
            continue
        a = (lo[k] - origin[k]) / direction[k]
        b = (hi[k] - origin[k]) / direction[k]
        if a > b:
            a, b = b, a
        t0, t1 = max(t0, a), min(t1, b)
    if t0 > t1:
        return None
    return t0, t1
