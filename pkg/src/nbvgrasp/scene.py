"""Analytic tabletop scenes built from SDF primitives, and a sphere-traced depth camera."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import _backend
from .geometry import Aabb, Camera, Intrinsics, Pose, quat_about_z, quat_to_matrix

KINDS = ("sphere", "box", "cylinder")
N_PARAMS = {"sphere": 1, "box": 3, "cylinder": 2}
SCENE_FORMAT_VERSION = 1

WORKSPACE_SIZE = 0.30
WORKSPACE_ORIGIN = np.zeros(3)


class SceneGenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SdfPrimitive:
    kind: str
    params: tuple[float, ...]
    pose: Pose = field(default_factory=Pose.identity)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown primitive kind {self.kind!r}")
        params = tuple(float(p) for p in self.params)
        if len(params) != N_PARAMS[self.kind] or min(params) <= 0:
            raise ValueError(f"bad parameters for {self.kind}: {params}")
        object.__setattr__(self, "params", params)

    def row(self) -> np.ndarray:
        r = np.zeros(16)
        r[0] = KINDS.index(self.kind)
        r[1 : 1 + len(self.params)] = self.params
        r[4:13] = self.pose.rotation.reshape(-1)
        r[13:16] = self.pose.trans
        return r

    def local_corners(self) -> np.ndarray:
        if self.kind == "sphere":
            h = np.full(3, self.params[0])
        elif self.kind == "box":
            h = np.array(self.params)
        else:
            h = np.array([self.params[0], self.params[0], self.params[1]])
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])
        return signs * h

    def aabb(self) -> Aabb:
        if self.kind == "sphere":
            r = self.params[0]
            return Aabb(self.pose.trans - r, self.pose.trans + r)
        if self.kind == "cylinder":
            # exact: disc extent along each world axis plus the axis half-length
            rad, hh = self.params
            axis = self.pose.rotation[:, 2]
            ext = rad * np.sqrt(np.clip(1.0 - axis**2, 0.0, None)) + hh * np.abs(axis)
            return Aabb(self.pose.trans - ext, self.pose.trans + ext)
        pts = self.pose.apply(self.local_corners())
        return Aabb(pts.min(axis=0), pts.max(axis=0))

    def bounding_radius(self) -> float:
        return float(np.linalg.norm(self.local_corners()[0])) if self.kind != "sphere" else self.params[0]


@dataclass(frozen=True)
class Scene:
    primitives: tuple[SdfPrimitive, ...]
    plane_height: float = 0.0
    target: int = -1
    target_bbox: Aabb | None = None

    @cached_property
    def table(self) -> np.ndarray:
        if not self.primitives:
            return np.zeros((0, 16))
        return np.stack([p.row() for p in self.primitives])

    def with_target(self, index: int) -> Scene:
        return Scene(self.primitives, self.plane_height, index, self.primitives[index].aabb())

    def sdf(self, pts) -> np.ndarray:
        return _backend.scene_sdf(self.table, self.plane_height, pts)[0]

    def table_without(self, index: int) -> np.ndarray:
        """Primitive table minus one entry, for clearance checks against the rest."""
        keep = [i for i in range(len(self.primitives)) if i != index]
        return self.table[keep]

    # --- serialization -------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "version": SCENE_FORMAT_VERSION,
            "plane_height": self.plane_height,
            "target": self.target,
            "target_bbox": None
            if self.target_bbox is None
            else {"min": self.target_bbox.lo.tolist(), "max": self.target_bbox.hi.tolist()},
            "primitives": [
                {
                    "kind": p.kind,
                    "params": list(p.params),
                    "quat_wxyz": p.pose.quat.tolist(),
                    "trans_xyz": p.pose.trans.tolist(),
                }
                for p in self.primitives
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> Scene:
        if doc.get("version") != SCENE_FORMAT_VERSION:
            raise ValueError(f"unsupported scene version {doc.get('version')!r}")
        prims = tuple(
            SdfPrimitive(p["kind"], tuple(p["params"]), Pose(p["quat_wxyz"], p["trans_xyz"]))
            for p in doc["primitives"]
        )
        bb = doc.get("target_bbox")
        return cls(
            prims,
            float(doc["plane_height"]),
            int(doc["target"]),
            None if bb is None else Aabb(bb["min"], bb["max"]),
        )

    @classmethod
    def from_json(cls, text: str) -> Scene:
        return cls.from_dict(json.loads(text))


def scene_sdf(scene: Scene, p) -> float | np.ndarray:
    """Signed distance to the scene (primitives plus support half-space)."""
    p = np.asarray(p, dtype=float)
    d = scene.sdf(p.reshape(-1, 3))
    return float(d[0]) if p.ndim == 1 else d


@dataclass(frozen=True)
class DepthImage:
    """z-depth in meters, ``inf`` where no surface was hit."""

    depth: np.ndarray
    intrinsics: Intrinsics
    pose: Pose  # world-from-camera
    owner: np.ndarray | None = None  # primitive index per pixel (-1 plane, -2 miss)

    @property
    def camera(self) -> Camera:
        return Camera(self.intrinsics, self.pose)

    @property
    def hit(self) -> np.ndarray:
        return np.isfinite(self.depth)

    def world_rays(self) -> np.ndarray:
        """Per-pixel world directions scaled so ``origin + depth * ray`` is the surface point."""
        return self.intrinsics.pixel_rays() @ self.pose.rotation.T

    def points(self) -> np.ndarray:
        """World-space points of all hit pixels, row-major order."""
        rays = self.world_rays()[self.hit]
        return self.pose.trans + self.depth[self.hit][:, None] * rays


def render_depth(
    scene: Scene,
    camera: Camera,
    *,
    max_steps: int = 128,
    hit_eps: float = 1e-4,
    far: float = 2.0,
    noise_std: float = 0.0,
    rng: np.random.Generator | None = None,
) -> DepthImage:
    """Sphere-trace one ray per pixel through the scene SDF."""
    K = camera.intrinsics
    rays_cam = K.pixel_rays().reshape(-1, 3)
    norms = np.linalg.norm(rays_cam, axis=1)
    dirs = (rays_cam / norms[:, None]) @ camera.pose.rotation.T
    origins = np.broadcast_to(camera.pose.trans, dirs.shape)
    t, owner = _backend.sphere_trace(
        scene.table, scene.plane_height, origins, dirs, max_steps, hit_eps, far
    )
    depth = t / norms  # ray length -> z-depth
    depth[depth > far] = np.inf
    if noise_std > 0:
        rng = rng or np.random.default_rng(0)
        hit = np.isfinite(depth)
        depth[hit] += rng.normal(0.0, noise_std, int(hit.sum()))
    owner = np.where(np.isfinite(depth), owner, _backend._kernels_py.NO_OWNER)
    return DepthImage(depth.reshape(K.height, K.width), K, camera.pose, owner.reshape(K.height, K.width))


def _random_object(rng: np.random.Generator, x: float, y: float, plane_h: float) -> SdfPrimitive:
    kind = KINDS[rng.integers(3)]
    yaw = rng.uniform(0, np.pi)
    if kind == "sphere":
        r = rng.uniform(0.018, 0.032)
        return SdfPrimitive(kind, (r,), Pose(np.array([1.0, 0, 0, 0]), [x, y, plane_h + r]))
    if kind == "box":
        hx, hy = rng.uniform(0.014, 0.032, 2)
        hz = rng.uniform(0.02, 0.05)
        return SdfPrimitive(kind, (hx, hy, hz), Pose(quat_about_z(yaw), [x, y, plane_h + hz]))
    r = rng.uniform(0.014, 0.03)
    hz = rng.uniform(0.02, 0.05)
    return SdfPrimitive(kind, (r, hz), Pose(np.array([1.0, 0, 0, 0]), [x, y, plane_h + hz]))


def generate_packed_scene(
    rng_seed: int,
    object_count: int,
    *,
    plane_height: float = 0.0,
    min_gap: float = 0.002,
    spread: float = 0.085,
    max_rounds: int = 1000,
) -> Scene:
    """Upright objects packed around the workspace center by rejection sampling.

    Overlap is tested on footprint bounding circles, so accepted objects never
    touch. The scene has no target yet; see :func:`select_target`.
    """
    if not 3 <= object_count <= 8:
        raise ValueError("object_count must be in [3, 8]")
    rng = np.random.default_rng(rng_seed)
    center = WORKSPACE_ORIGIN[:2] + WORKSPACE_SIZE / 2
    placed: list[SdfPrimitive] = []
    rounds = 0
    while len(placed) < object_count:
        rounds += 1
        if rounds > max_rounds:
            raise SceneGenerationError(
                f"could not place {object_count} objects in {max_rounds} rounds (seed {rng_seed})"
            )
        x, y = center + rng.uniform(-spread, spread, 2)
        obj = _random_object(rng, x, y, plane_height)
        r_new = _footprint_radius(obj)
        if all(
            np.hypot(*(obj.pose.trans[:2] - o.pose.trans[:2])) >= r_new + _footprint_radius(o) + min_gap
            for o in placed
        ):
            placed.append(obj)
    return Scene(tuple(placed), plane_height)


def _footprint_radius(p: SdfPrimitive) -> float:
    if p.kind == "box":
        return float(np.hypot(p.params[0], p.params[1]))
    return p.params[0]


def visible_pixel_counts(scene: Scene, camera: Camera, **render_kw) -> np.ndarray:
    img = render_depth(scene, camera, **render_kw)
    own = img.owner[img.owner >= 0]
    return np.bincount(own, minlength=len(scene.primitives))


def select_target(scene: Scene, initial_view: Camera, **render_kw) -> int:
    """Index of the object with the fewest visible pixels (ties -> lowest index)."""
    counts = visible_pixel_counts(scene, initial_view, **render_kw)
    return int(np.argmin(counts))


def generate_bridge_scene(rng_seed: int, plane_height: float = 0.0) -> Scene:
    """A target tucked under a slab resting on two walls.

    The slab hides the target from above and blocks every top-down grasp,
    while the two open ends of the tunnel leave room for side approaches.
    The tunnel heading is random; the target is the last primitive.
    """
    rng = np.random.default_rng(rng_seed)
    cx, cy = WORKSPACE_ORIGIN[:2] + WORKSPACE_SIZE / 2 + rng.uniform(-0.01, 0.01, 2)
    yaw = rng.uniform(0, np.pi)
    rot = quat_about_z(yaw)
    R = quat_to_matrix(rot)
    gap = rng.uniform(0.070, 0.080)  # half distance between wall centres
    depth = rng.uniform(0.030, 0.040)  # half length of the tunnel
    wall_h = rng.uniform(0.040, 0.045)  # half height of the walls
    slab_t = 0.008

    def placed(kind, params, local_xy, z):
        off = R[:2, :2] @ np.asarray(local_xy, float)
        return SdfPrimitive(kind, params, Pose(rot, [cx + off[0], cy + off[1], plane_height + z]))

    prims = [
        placed("box", (depth, 0.008, wall_h), (0.0, -gap), wall_h),
        placed("box", (depth, 0.008, wall_h), (0.0, gap), wall_h),
        placed("box", (depth, gap + 0.008, slab_t), (0.0, 0.0), 2 * wall_h + slab_t),
    ]
    hz = rng.uniform(0.020, 0.028)
    if rng.uniform() < 0.5:
        r = rng.uniform(0.016, 0.022)
        tgt = SdfPrimitive("cylinder", (r, hz), Pose(np.array([1.0, 0, 0, 0]), [cx, cy, plane_height + hz]))
    else:
        hx, hy = rng.uniform(0.014, 0.022, 2)
        tgt = SdfPrimitive("box", (hx, hy, hz), Pose(quat_about_z(rng.uniform(0, np.pi)), [cx, cy, plane_height + hz]))
    prims.append(tgt)
    return Scene(tuple(prims), plane_height).with_target(len(prims) - 1)
