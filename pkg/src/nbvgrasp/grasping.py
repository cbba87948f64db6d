"""Parallel-jaw grasps and the analytic feasibility oracle.

A grasp is posed by its center ``p``, approach/view direction ``v`` and an
in-plane rotation ``r`` of the closing axis about ``v``. The gripper always
approaches fully open; ``width`` is only the reported closing width.

Success requires
  (a) antipodal contacts: marching outward from ``p`` along both closing
      directions leaves the target within half the maximum opening, and
      the two contact normals oppose within ``normal_angle``;
  (b) the final finger and palm boxes keep ``clearance`` from every
      non-target primitive and the support plane;
  (c) the region swept while approaching one finger length along ``v``
      keeps ``clearance`` from everything, target included.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import _backend
from .geometry import normalize, orthonormal_frame
from .scene import Scene


@dataclass(frozen=True)
class Grasp:
    quality: float
    center: np.ndarray
    view: np.ndarray
    rotation: float
    width: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(3))
        object.__setattr__(self, "view", normalize(self.view))
        object.__setattr__(self, "rotation", float(self.rotation) % np.pi)
        if not 0.0 <= self.quality <= 1.0:
            raise ValueError(f"quality {self.quality} outside [0, 1]")
        if self.width < 0:
            raise ValueError("negative width")


@dataclass(frozen=True)
class GripperConfig:
    finger_length: float = 0.05
    finger_thickness: float = 0.01
    finger_depth: float = 0.02
    palm_thickness: float = 0.01
    max_opening: float = 0.08
    tip_offset: float = 0.01  # fingertips extend this far past the grasp center
    clearance: float = 0.001
    normal_angle_deg: float = 30.0
    march_step: float = 0.001
    sample_spacing: float = 0.004
    refine_tol: float = 2e-5
    adaptive: bool = True

    def finer(self, factor: float = 10.0) -> GripperConfig:
        """Brute-force variant: ``factor``-times finer steps, no adaptive refinement."""
        return GripperConfig(
            self.finger_length, self.finger_thickness, self.finger_depth, self.palm_thickness,
            self.max_opening, self.tip_offset, self.clearance, self.normal_angle_deg,
            self.march_step / factor, self.sample_spacing / factor, self.refine_tol, False,
        )


@dataclass(frozen=True)
class Feasibility:
    success: bool
    reasons: tuple[str, ...] = ()
    span: float = 0.0


def grasp_axes(view, rotation: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(closing, finger-depth, approach) unit axes of a grasp frame."""
    a, e1, e2 = orthonormal_frame(view)
    c = np.cos(rotation) * e1 + np.sin(rotation) * e2
    return c, np.cross(a, c), a


def _box_cells(lo, hi, spacing: float):
    """Surface cells of an axis-aligned box: centers, in-plane axes and half sizes."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    centers, us, ws, halves = [], [], [], []
    eye = np.eye(3)
    for axis in range(3):
        i, j = [k for k in range(3) if k != axis]
        ni = max(1, int(np.ceil((hi[i] - lo[i]) / spacing)))
        nj = max(1, int(np.ceil((hi[j] - lo[j]) / spacing)))
        hi_i, hi_j = (hi[i] - lo[i]) / (2 * ni), (hi[j] - lo[j]) / (2 * nj)
        gi = lo[i] + (2 * np.arange(ni) + 1) * hi_i
        gj = lo[j] + (2 * np.arange(nj) + 1) * hi_j
        GI, GJ = np.meshgrid(gi, gj, indexing="ij")
        for side in (lo[axis], hi[axis]):
            c = np.zeros((GI.size, 3))
            c[:, axis] = side
            c[:, i] = GI.ravel()
            c[:, j] = GJ.ravel()
            centers.append(c)
            us.append(np.tile(eye[i], (GI.size, 1)))
            ws.append(np.tile(eye[j], (GI.size, 1)))
            halves.append(np.tile([hi_i, hi_j], (GI.size, 1)))
    return np.concatenate(centers), np.concatenate(us), np.concatenate(ws), np.concatenate(halves)


@dataclass(frozen=True)
class _Bodies:
    """Gripper surface cells in grasp-local coordinates (closing, depth, approach)."""

    final: tuple
    swept: tuple
    radius: float


def _gripper_bodies(g: GripperConfig) -> _Bodies:
    half_open = g.max_opening / 2
    y = g.finger_depth / 2
    tip = g.tip_offset
    base = tip - g.finger_length

    def boxes(back: float):
        outer = half_open + g.finger_thickness
        return [
            ((half_open, -y, base - back), (outer, y, tip)),
            ((-outer, -y, base - back), (-half_open, y, tip)),
            ((-outer, -y, base - g.palm_thickness - back), (outer, y, base)),
        ]

    def cells(box_list):
        parts = [_box_cells(lo, hi, g.sample_spacing) for lo, hi in box_list]
        return tuple(np.concatenate([p[k] for p in parts]) for k in range(4))

    swept_boxes = boxes(g.finger_length)
    corners = np.array([b for box in swept_boxes for b in box])
    return _Bodies(cells(boxes(0.0)), cells(swept_boxes), float(np.linalg.norm(np.abs(corners).max(axis=0))))


def _min_clear(table, plane_h, centers, us, ws, halves, clearance, adaptive, tol) -> bool:
    """True when every point of the sampled surfaces is farther than ``clearance``.

    With ``adaptive`` the 1-Lipschitz bound settles each cell or splits it in
    four until its covering radius drops below ``tol``.
    """
    while True:
        d, _ = _backend.scene_sdf(table, plane_h, centers)
        if np.any(d <= clearance):
            return False
        if not adaptive:
            return True
        rad = np.hypot(halves[:, 0], halves[:, 1])
        amb = d - rad <= clearance
        if not amb.any():
            return True
        if rad[amb].max() < tol:
            return True
        centers, us, ws, halves = centers[amb], us[amb], ws[amb], halves[amb] / 2
        offs = [(-1, -1), (-1, 1), (1, -1), (1, 1)]
        centers = np.concatenate(
            [centers + si * halves[:, :1] * us + sj * halves[:, 1:] * ws for si, sj in offs]
        )
        us, ws, halves = (np.tile(x, (4, 1)) for x in (us, ws, halves))


class GraspChecker:
    """Feasibility oracle bound to one scene's target and one gripper."""

    def __init__(self, scene: Scene, gripper: GripperConfig | None = None):
        if scene.target < 0:
            raise ValueError("scene has no target")
        self.scene = scene
        self.gripper = gripper or GripperConfig()
        self.target_row = scene.table[scene.target : scene.target + 1]
        self.others = scene.table_without(scene.target)
        self._radii = np.array([p.bounding_radius() for p in scene.primitives])
        self._centers = np.array([p.pose.trans for p in scene.primitives]).reshape(-1, 3)

    @cached_property
    def bodies(self) -> _Bodies:
        return _gripper_bodies(self.gripper)

    def target_sdf(self, pts) -> np.ndarray:
        return _backend.primitive_sdf(self.target_row, np.asarray(pts).reshape(-1, 3))[0]

    def _contact(self, centers, dirs):
        """Outward march from inside the target; returns (found, distance)."""
        g = self.gripper
        n_steps = int(np.ceil(g.max_opening / 2 / g.march_step - 1e-9))
        m = len(centers)
        s = np.minimum(np.arange(1, n_steps + 1) * g.march_step, g.max_opening / 2)
        pts = centers[:, None] + s[None, :, None] * dirs[:, None]
        out = (self.target_sdf(pts.reshape(-1, 3)) >= 0).reshape(m, n_steps)
        found = out.any(axis=1)
        dist = np.full(m, np.inf)
        if not found.any():
            return found, dist
        hit = np.flatnonzero(found)
        k = out[hit].argmax(axis=1)  # first step outside
        hi = s[k]
        lo = np.where(k > 0, s[np.maximum(k - 1, 0)], 0.0)
        c, d = centers[hit], dirs[hit]
        for _ in range(30):
            mid = 0.5 * (lo + hi)
            inside = self.target_sdf(c + mid[:, None] * d) < 0
            lo = np.where(inside, mid, lo)
            hi = np.where(inside, hi, mid)
        dist[hit] = hi
        return found, dist

    def _normals(self, pts) -> np.ndarray:
        h = 1e-6
        grad = np.stack(
            [self.target_sdf(pts + h * e) - self.target_sdf(pts - h * e) for e in np.eye(3)], axis=1
        )
        return grad / np.maximum(np.linalg.norm(grad, axis=1, keepdims=True), 1e-12)

    def antipodal(self, centers, closing):
        """Vectorized condition (a). Returns (ok, span)."""
        centers = np.asarray(centers, float).reshape(-1, 3)
        closing = np.asarray(closing, float).reshape(-1, 3)
        ok = self.target_sdf(centers) < 0
        span = np.zeros(len(centers))
        if not ok.any():
            return ok, span
        idx = np.flatnonzero(ok)
        fp, dp = self._contact(centers[idx], closing[idx])
        fm, dm = self._contact(centers[idx], -closing[idx])
        both = fp & fm
        good = np.zeros(len(idx), bool)
        if both.any():
            b = np.flatnonzero(both)
            c, cl = centers[idx[b]], closing[idx[b]]
            n_plus = self._normals(c + dp[b, None] * cl)
            n_minus = self._normals(c - dm[b, None] * cl)
            cos = np.einsum("ij,ij->i", n_plus, -n_minus)
            good[b] = cos >= np.cos(np.radians(self.gripper.normal_angle_deg)) - 1e-12
        ok[idx] = good
        span[idx[good]] = (dp + dm)[good]
        return ok, span

    def _nearby(self, table_idx: np.ndarray, center) -> np.ndarray:
        d = np.linalg.norm(self._centers[table_idx] - center, axis=1)
        keep = d - self._radii[table_idx] <= self.bodies.radius + self.gripper.clearance
        return table_idx[keep]

    def _clear(self, cells, table, center, frame) -> bool:
        centers, us, ws, halves = cells
        rot = np.stack(frame, axis=1)  # columns: closing, depth, approach
        g = self.gripper
        return _min_clear(
            table, self.scene.plane_height, centers @ rot.T + center, us @ rot.T, ws @ rot.T,
            halves, g.clearance, g.adaptive, g.refine_tol,
        )

    def collision_free(self, center, view, rotation) -> bool:
        """Condition (b)."""
        frame = grasp_axes(view, rotation)
        n = len(self.scene.primitives)
        others = np.array([i for i in range(n) if i != self.scene.target], dtype=int)
        table = self.scene.table[self._nearby(others, center)]
        return self._clear(self.bodies.final, table, center, frame)

    def approach_free(self, center, view, rotation) -> bool:
        """Condition (c)."""
        frame = grasp_axes(view, rotation)
        table = self.scene.table[self._nearby(np.arange(len(self.scene.primitives)), center)]
        return self._clear(self.bodies.swept, table, center, frame)

    def check(self, grasp: Grasp) -> Feasibility:
        c, _, _ = grasp_axes(grasp.view, grasp.rotation)
        ok, span = self.antipodal(grasp.center, c)
        reasons = []
        if not ok[0]:
            reasons.append("antipodal")
        if not self.collision_free(grasp.center, grasp.view, grasp.rotation):
            reasons.append("collision")
        if not self.approach_free(grasp.center, grasp.view, grasp.rotation):
            reasons.append("approach")
        return Feasibility(not reasons, tuple(reasons), float(span[0]))

    def first_success(self, center, view, angles) -> tuple[bool, float, float]:
        """Sweep rotations in order; (found, angle, span) for the first success."""
        center = np.asarray(center, float)
        if self.target_sdf(center)[0] >= 0:
            return False, 0.0, 0.0
        _, e1, e2 = orthonormal_frame(view)
        angles = np.asarray(angles, float)
        closing = np.cos(angles)[:, None] * e1 + np.sin(angles)[:, None] * e2
        ok, span = self.antipodal(np.tile(center, (len(angles), 1)), closing)
        for k in np.flatnonzero(ok):
            r = angles[k]
            if self.collision_free(center, view, r) and self.approach_free(center, view, r):
                return True, float(r), float(span[k])
        return False, 0.0, 0.0


def grasp_feasible(scene: Scene, grasp: Grasp, gripper: GripperConfig | None = None) -> Feasibility:
    return GraspChecker(scene, gripper).check(grasp)
