"""Closed-loop next-best-view planning driven by imagined grasp quality.

Each step fuses one depth image, re-encodes the tri-plane volume and asks
the head for the best grasp it can imagine from the current view. Above
``q_max`` that grasp is executed; otherwise every candidate view is scored
by its best imagined grasp and the camera moves to the argmax.
"""

from __future__ import annotations

import json
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .affordance import Head, imagine_affordances
from .geometry import Aabb, Camera, Intrinsics, angle_between, look_at, normalize, ray_box_chord
from .grasping import Grasp, GraspChecker, GripperConfig
from .scene import WORKSPACE_ORIGIN, WORKSPACE_SIZE, Scene, render_depth
from .triplane import EncoderWeights, TriPlaneVolume, encode
from .tsdf import TsdfVolume

log = logging.getLogger(__name__)

GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))
OUTCOMES = ("success", "failure", "abort")
POLICIES = ("ace-nbv", "initial-view", "top-view", "fixed-traj", "geometry-gain")


class PolicyError(RuntimeError):
    pass


@dataclass(frozen=True)
class ViewCandidate:
    index: int
    camera: Camera
    view: np.ndarray  # unit, camera -> target
    reachable: bool = True

    @property
    def position(self) -> np.ndarray:
        return self.camera.position


@dataclass
class PolicyConfig:
    q_max: float = 0.95
    t_max: int = 8
    n_candidates: int = 16
    radius: float = 0.40
    cap_deg: float = 75.0
    q_exec: float = 0.5
    n_grasps: int = 64
    visited_deg: float = 10.0
    reach_margin: float = 0.5  # candidate cameras stay within this of the workspace footprint
    width: int = 80
    height: int = 60
    fov_deg: float = 60.0
    fixed_traj_depression_deg: float = 30.0
    fixed_traj_views: int = 4
    jobs: int = 1

    def __post_init__(self):
        # q_max = 0 (execute at once) and q_exec = inf (strict abort) are both allowed
        if not 0 <= self.q_max <= 1 or not self.q_exec > 0:
            raise ValueError("need 0 <= q_max <= 1 and q_exec > 0")
        if self.t_max < 1:
            raise ValueError("t_max must be >= 1")
        if self.n_candidates < 1:
            raise ValueError("n_candidates must be >= 1")

    @property
    def intrinsics(self) -> Intrinsics:
        return Intrinsics.from_fov(self.width, self.height, self.fov_deg)


@dataclass
class StepRecord:
    step: int
    view: list[float]
    camera: list[float]
    q_current: float
    candidate_scores: list[float]
    candidate_views: list[list[float]]
    chosen: int | None
    evaluations: int
    observed_voxels: int
    grasps: list[list[float]] = field(default_factory=list)  # (x, y, z, q) per imagined grasp


@dataclass
class Episode:
    scene_id: int | str
    policy: str
    steps: list[StepRecord] = field(default_factory=list)
    outcome: str = "abort"
    grasp: Grasp | None = None
    diagnostic: str = ""
    scene: Scene | None = None

    @property
    def n_views(self) -> int:
        return len(self.steps)

    def records(self) -> list[dict]:
        """Line-oriented trace: one dict per step, then a summary."""
        out = [] if self.scene is None else [dict(kind="scene", scene=self.scene.to_dict())]
        out += [dict(kind="step", **_step_dict(s)) for s in self.steps]
        g = self.grasp
        out.append(dict(
            kind="outcome", scene=self.scene_id, policy=self.policy, outcome=self.outcome,
            views=self.n_views, diagnostic=self.diagnostic,
            grasp=None if g is None else dict(
                quality=g.quality, center=_r(g.center), view=_r(g.view),
                rotation=round(g.rotation, 9), width=round(g.width, 9)),
        ))
        return out

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records())


def _r(v) -> list[float]:
    return [round(float(x), 9) for x in np.ravel(v)]


def _step_dict(s: StepRecord) -> dict:
    return dict(
        step=s.step, view=_r(s.view), camera=_r(s.camera), q_current=round(s.q_current, 9),
        candidate_scores=_r(s.candidate_scores), candidate_views=[_r(v) for v in s.candidate_views],
        chosen=s.chosen, evaluations=s.evaluations, observed_voxels=s.observed_voxels,
        grasps=[_r(g) for g in s.grasps],
    )


# --- candidate views ----------------------------------------------------------


def fibonacci_cap(n: int, cap_deg: float) -> np.ndarray:
    """``n`` unit directions on the cap of polar angle <= ``cap_deg`` about +z."""
    cos_cap = np.cos(np.radians(cap_deg))
    i = np.arange(n) + 0.5
    z = 1.0 - (1.0 - cos_cap) * i / n
    rho = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    phi = GOLDEN_ANGLE * np.arange(n)
    return np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)


def camera_at(eye, target, intrinsics: Intrinsics) -> Camera:
    return Camera(intrinsics, look_at(eye, target))


def generate_candidates(
    bbox: Aabb,
    config: PolicyConfig | None = None,
    workspace: tuple[np.ndarray, float] = (WORKSPACE_ORIGIN, WORKSPACE_SIZE),
    plane_height: float = 0.0,
) -> list[ViewCandidate]:
    cfg = config or PolicyConfig()
    K = cfg.intrinsics
    target = bbox.center
    dirs = fibonacci_cap(cfg.n_candidates, cfg.cap_deg)
    if cfg.cap_deg <= 0:
        dirs = dirs[:1]
    lo = np.asarray(workspace[0], float)
    hi = lo + workspace[1]
    out = []
    for d in dirs:
        eye = target + cfg.radius * d
        if eye[2] <= plane_height:
            continue
        if np.any(eye[:2] < lo[:2] - cfg.reach_margin) or np.any(eye[:2] > hi[:2] + cfg.reach_margin):
            continue
        out.append(ViewCandidate(len(out), camera_at(eye, target, K), normalize(target - eye)))
    if not out:
        raise PolicyError("every candidate view was culled")
    return out


def min_pairwise_angle(cands: list[ViewCandidate]) -> float:
    v = np.array([c.view for c in cands])
    if len(v) < 2:
        return np.pi
    c = np.clip(v @ v.T, -1.0, 1.0)
    np.fill_diagonal(c, -1.0)
    return float(np.arccos(c.max()))


def initial_camera(bbox_center=None, config: PolicyConfig | None = None,
                   polar_deg: float = 50.0, azimuth_deg: float = -90.0) -> Camera:
    """Default first view: oblique, from the -y side of the workspace."""
    cfg = config or PolicyConfig()
    c = np.array([0.15, 0.15, 0.05]) if bbox_center is None else np.asarray(bbox_center, float)
    th, ph = np.radians(polar_deg), np.radians(azimuth_deg)
    eye = c + cfg.radius * np.array([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)])
    return camera_at(eye, c, cfg.intrinsics)


def top_camera(config: PolicyConfig | None = None) -> Camera:
    cfg = config or PolicyConfig()
    center = WORKSPACE_ORIGIN + WORKSPACE_SIZE / 2
    return camera_at(center + np.array([0, 0, cfg.radius]), center, cfg.intrinsics)


def fixed_trajectory(bbox: Aabb, config: PolicyConfig | None = None) -> list[Camera]:
    cfg = config or PolicyConfig()
    dep = np.radians(cfg.fixed_traj_depression_deg)
    c = bbox.center
    cams = []
    for k in range(cfg.fixed_traj_views):
        az = 2 * np.pi * k / cfg.fixed_traj_views - np.pi / 2
        off = np.array([np.cos(dep) * np.cos(az), np.cos(dep) * np.sin(az), np.sin(dep)])
        cams.append(camera_at(c + cfg.radius * off, c, cfg.intrinsics))
    return cams


# --- scoring ------------------------------------------------------------------


def evaluate_candidate(planes: TriPlaneVolume, head: Head, bbox: Aabb, candidate, n: int = 64):
    """Best imagined quality from the candidate's view, and the grasp achieving it."""
    v = candidate.view if isinstance(candidate, ViewCandidate) else normalize(candidate)
    grasps = imagine_affordances(planes, head, bbox, v, n)
    return grasps[0].quality, grasps[0]


def choose_view(scores, views, current_view) -> int:
    """Argmax score; ties -> smallest angular travel, then lowest index."""
    travel = [angle_between(current_view, v) for v in views]
    keys = [(-float(s), t, i) for i, (s, t) in enumerate(zip(scores, travel))]
    return min(keys)[2]


def visible_unobserved(volume: TsdfVolume, bbox: Aabb, camera: Camera) -> int:
    """Unobserved voxels inside ``bbox`` that the camera could see through known space.

    A voxel counts when its center projects into the image and the segment
    from the camera to it crosses no observed occupied voxel (grid traversal).
    """
    centers = volume.voxel_centers().reshape(-1, 3)
    unobs = volume.weight.reshape(-1) == 0
    inside = np.all((centers >= bbox.lo) & (centers <= bbox.hi), axis=1)
    idx = np.flatnonzero(unobs & inside)
    if not len(idx):
        return 0
    pts = centers[idx]
    K = camera.intrinsics
    cam = camera.pose.inverse().apply(pts)
    z = cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = K.fx * cam[:, 0] / z + K.cx
        v = K.fy * cam[:, 1] / z + K.cy
    in_img = (z > 0) & (u >= 0) & (u < K.width) & (v >= 0) & (v < K.height)
    pts = pts[in_img]
    if not len(pts):
        return 0
    occ = (volume.weight > 0) & (volume.distance < 0)
    clear = _traverse_clear(occ, volume.origin, volume.voxel_size, camera.position, pts)
    return int(clear.sum())


def _traverse_clear(occ: np.ndarray, origin, vs: float, eye, pts) -> np.ndarray:
    """Vectorized 3-D DDA from ``eye`` to each point; True if no occupied cell precedes the last."""
    res = np.array(occ.shape)
    lo = np.asarray(origin, float)
    d = pts - eye
    n = len(pts)
    target = np.floor((pts - lo) / vs).astype(int)
    t0 = np.zeros(n)
    for k in range(n):
        ch = ray_box_chord(eye, d[k], lo, lo + vs * res)
        t0[k] = max(ch[0], 0.0) if ch is not None else 0.0
    start = eye + (t0[:, None] + 1e-9) * d
    cell = np.clip(np.floor((start - lo) / vs).astype(int), 0, res - 1)
    step = np.where(d > 0, 1, -1)
    with np.errstate(divide="ignore", invalid="ignore"):
        nxt = lo + (cell + (step > 0)) * vs
        t_max = np.where(d != 0, (nxt - eye) / d, np.inf)
        t_delta = np.where(d != 0, vs / np.abs(d), np.inf)
    clear = np.ones(n, bool)
    active = np.ones(n, bool)
    for _ in range(int(res.sum()) + 3):
        at_target = np.all(cell == target, axis=1)
        active &= ~at_target
        if not active.any():
            break
        ok = np.all((cell >= 0) & (cell < res), axis=1)
        active &= ok
        c = np.clip(cell, 0, res - 1)
        hit = active & occ[c[:, 0], c[:, 1], c[:, 2]]
        clear &= ~hit
        active &= ~hit
        ax = np.argmin(t_max, axis=1)
        rows = np.flatnonzero(active)
        a = ax[rows]
        cell[rows, a] += step[rows, a]
        t_max[rows, a] += t_delta[rows, a]
    return clear


# --- episodes -----------------------------------------------------------------


@dataclass
class _Loop:
    scene: Scene
    head: Head
    encoder: EncoderWeights
    config: PolicyConfig
    checker: GraspChecker

    def __post_init__(self):
        self.volume = TsdfVolume()
        self.bbox = self.scene.target_bbox

    def observe(self, camera: Camera) -> TriPlaneVolume:
        img = render_depth(self.scene, camera)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            self.volume.integrate(img)
        return encode(self.volume, self.encoder)

    def execute(self, ep: Episode, grasp: Grasp):
        ep.grasp = grasp
        ep.outcome = "success" if self.checker.check(grasp).success else "failure"


def _score_all(planes, head, bbox, cands, n, jobs) -> list[tuple[float, Grasp]]:
    if jobs > 1 and len(cands) > 1:
        with ThreadPoolExecutor(jobs) as pool:
            return list(pool.map(lambda c: evaluate_candidate(planes, head, bbox, c, n), cands))
    return [evaluate_candidate(planes, head, bbox, c, n) for c in cands]


def run_policy(
    scene: Scene,
    initial_view: Camera,
    head: Head,
    config: PolicyConfig | None = None,
    *,
    encoder: EncoderWeights | None = None,
    gripper: GripperConfig | None = None,
    selector: str = "affordance",
    scene_id: int | str = 0,
    policy_name: str | None = None,
) -> Episode:
    """One closed-loop episode; ``selector`` is "affordance" or "geometry-gain"."""
    cfg = config or PolicyConfig()
    if scene.target_bbox is None:
        raise PolicyError("scene has no target")
    name = policy_name or ("ace-nbv" if selector == "affordance" else selector)
    ep = Episode(scene_id, name, scene=scene)
    loop = _Loop(scene, head, encoder or EncoderWeights.init(), cfg, GraspChecker(scene, gripper))
    bbox = loop.bbox
    cam = initial_view
    visited: list[np.ndarray] = []
    best: Grasp | None = None
    try:
        for t in range(1, cfg.t_max + 1):
            planes = loop.observe(cam)
            v_cur = normalize(bbox.center - cam.position)
            visited.append(v_cur)
            imagined = imagine_affordances(planes, head, bbox, v_cur, cfg.n_grasps)
            g_cur = imagined[0]
            q_cur = g_cur.quality
            evals = 1
            if best is None or g_cur.quality > best.quality:
                best = g_cur
            rec = StepRecord(t, list(v_cur), list(cam.position), q_cur, [], [], None, evals,
                             int(loop.volume.observed().sum()),
                             [[*g.center, g.quality] for g in imagined])
            ep.steps.append(rec)
            if q_cur > cfg.q_max:
                loop.execute(ep, g_cur)
                return ep
            if t == cfg.t_max:
                break
            cands = [
                c for c in generate_candidates(bbox, cfg, plane_height=scene.plane_height)
                if all(angle_between(c.view, w) >= np.radians(cfg.visited_deg) for w in visited)
            ]
            if not cands:
                ep.diagnostic = "no unvisited candidate views"
                break
            if selector == "geometry-gain":
                scores = [float(visible_unobserved(loop.volume, bbox, c.camera)) for c in cands]
            else:
                scores = [q for q, _ in _score_all(planes, head, bbox, cands, cfg.n_grasps, cfg.jobs)]
                rec.evaluations += len(cands)
            k = choose_view(scores, [c.view for c in cands], v_cur)
            rec.candidate_scores = scores
            rec.candidate_views = [list(c.view) for c in cands]
            rec.chosen = cands[k].index
            cam = cands[k].camera
    except (ValueError, FloatingPointError, PolicyError) as exc:
        ep.diagnostic = f"episode aborted: {exc}"
        ep.outcome = "abort"
        ep.grasp = None
        return ep
    if best is not None and best.quality >= cfg.q_exec:
        loop.execute(ep, best)
    else:
        ep.outcome = "abort"
    return ep


def run_views(
    scene: Scene,
    cameras: list[Camera],
    head: Head,
    config: PolicyConfig | None = None,
    *,
    encoder: EncoderWeights | None = None,
    gripper: GripperConfig | None = None,
    scene_id: int | str = 0,
    policy_name: str = "fixed-traj",
) -> Episode:
    """Fuse a fixed camera list, predict once per observed view, execute the best."""
    cfg = config or PolicyConfig()
    ep = Episode(scene_id, policy_name, scene=scene)
    loop = _Loop(scene, head, encoder or EncoderWeights.init(), cfg, GraspChecker(scene, gripper))
    bbox = loop.bbox
    planes = None
    for t, cam in enumerate(cameras, 1):
        planes = loop.observe(cam)
        ep.steps.append(StepRecord(t, list(normalize(bbox.center - cam.position)), list(cam.position),
                                   float("nan"), [], [], None, 0, int(loop.volume.observed().sum())))
    best = None
    for rec in ep.steps:
        imagined = imagine_affordances(planes, head, bbox, np.array(rec.view), cfg.n_grasps)
        rec.q_current = imagined[0].quality
        rec.evaluations = 1
        rec.grasps = [[*g.center, g.quality] for g in imagined]
        if best is None or imagined[0].quality > best.quality:
            best = imagined[0]
    if best is not None and best.quality >= cfg.q_exec:
        loop.execute(ep, best)
    return ep


def baseline_policy(kind: str, scene: Scene, initial_view: Camera, head: Head,
                    config: PolicyConfig | None = None, **kw) -> Episode:
    cfg = config or PolicyConfig()
    if kind == "ace-nbv":
        return run_policy(scene, initial_view, head, cfg, **kw)
    if kind == "initial-view":
        one = PolicyConfig(**{**cfg.__dict__, "t_max": 1})
        return run_policy(scene, initial_view, head, one, policy_name=kind, **kw)
    if kind == "top-view":
        one = PolicyConfig(**{**cfg.__dict__, "t_max": 1})
        return run_policy(scene, top_camera(cfg), head, one, policy_name=kind, **kw)
    if kind == "fixed-traj":
        return run_views(scene, fixed_trajectory(scene.target_bbox, cfg), head, cfg, policy_name=kind, **kw)
    if kind == "geometry-gain":
        return run_policy(scene, initial_view, head, cfg, selector="geometry-gain", **kw)
    raise ValueError(f"unknown policy {kind!r}; expected one of {', '.join(POLICIES)}")


# --- metrics ------------------------------------------------------------------


def compute_metrics(episodes: list[Episode], two_view: list[Episode] | None = None) -> dict[str, float]:
    if not episodes:
        raise ValueError("no episodes")
    n = len(episodes)
    counts = {o: sum(e.outcome == o for e in episodes) for o in OUTCOMES}
    out = {
        "SR": counts["success"] / n,
        "FR": counts["failure"] / n,
        "views": float(np.mean([e.n_views for e in episodes])),
    }
    # complement keeps SR + FR + AR == 1 exact in floating point
    out["AR"] = 1.0 - (out["SR"] + out["FR"])
    if two_view is not None:
        out["SR2"] = sum(e.outcome == "success" for e in two_view) / max(len(two_view), 1)
    return out
