"""View-aware grasp affordance prediction.

The head maps ``[view, ray feature, cuboid feature]`` to four raw outputs
``(quality logit, a, b, width logit)``; ``(a, b)`` encodes the doubled
in-plane angle so the gripper's pi-symmetry carries no discontinuity.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .geometry import Aabb, normalize
from .grasping import Grasp, GraspChecker, GripperConfig
from .nn import MLP, Adam, sigmoid, softplus
from .scene import Scene
from .triplane import ConfigurationError, TriPlaneVolume, geo_features, ray_features

log = logging.getLogger(__name__)

W_MAX = GripperConfig().max_opening
HIDDEN = 128
WIDTH_MARGIN = 0.005


def head_input_dim(channels: int = 32) -> int:
    return 3 + 3 * channels + 9 * 3 * channels


@dataclass
class AffordanceHead:
    net: MLP
    w_max: float = W_MAX
    input_mean: np.ndarray | None = None
    input_std: np.ndarray | None = None
    provenance: str = ""

    @classmethod
    def init(cls, channels: int = 32, hidden: int = HIDDEN, seed: int = 0, w_max: float = W_MAX):
        d = head_input_dim(channels)
        net = MLP.init((d, hidden, hidden, hidden, hidden, 4), (False, True, True, True, False), seed)
        return cls(net, w_max)

    @classmethod
    def zeros(cls, channels: int = 32, hidden: int = HIDDEN, w_max: float = W_MAX):
        d = head_input_dim(channels)
        return cls(MLP.zeros((d, hidden, hidden, hidden, hidden, 4), (False, True, True, True, False)), w_max)

    @property
    def input_dim(self) -> int:
        return self.net.sizes[0]

    def _normalize(self, x):
        if self.input_mean is None:
            return x
        return (x - self.input_mean) / self.input_std

    def raw(self, x: np.ndarray) -> np.ndarray:
        if x.shape[-1] != self.input_dim:
            raise ConfigurationError(f"head expects {self.input_dim} inputs, got {x.shape[-1]}")
        return self.net.forward(self._normalize(x))

    def decode(self, raw: np.ndarray):
        return decode_outputs(raw, self.w_max)

    # Head protocol
    def grasps_at(self, planes: TriPlaneVolume, centers: np.ndarray, view: np.ndarray):
        x = build_inputs(planes, centers, view)
        return self.decode(self.raw(x))


def decode_outputs(raw: np.ndarray, w_max: float):
    raw = np.atleast_2d(raw)
    q = sigmoid(raw[:, 0])
    r = np.mod(np.arctan2(raw[:, 2], raw[:, 1]) / 2.0, np.pi)
    r = np.where(r >= np.pi, 0.0, r)
    w = w_max * sigmoid(raw[:, 3])
    return q, r, w


def build_inputs(planes: TriPlaneVolume, centers, view) -> np.ndarray:
    v = normalize(view)
    if abs(np.linalg.norm(v) - 1) > 1e-9:
        raise ValueError("view must be a unit vector")
    centers = np.asarray(centers, float).reshape(-1, 3)
    ray = ray_features(planes, centers, v)
    geo = geo_features(planes, centers, v)
    return np.concatenate([np.tile(v, (len(centers), 1)), ray, geo], axis=1)


def predict(head: AffordanceHead, v, c_ray, c_geo) -> tuple[float, float, float]:
    v = np.asarray(v, float)
    if abs(np.linalg.norm(v) - 1) > 1e-9:
        raise ValueError("view must be a unit vector")
    x = np.concatenate([v, np.asarray(c_ray, float), np.asarray(c_geo, float)])[None]
    q, r, w = head.decode(head.raw(x))
    return float(q[0]), float(r[0]), float(w[0])


class Head(Protocol):
    def grasps_at(self, planes: TriPlaneVolume, centers: np.ndarray, view: np.ndarray): ...


@dataclass
class ConstantHead:
    quality: float = 0.5
    rotation: float = 0.0
    width: float = W_MAX / 2

    def grasps_at(self, planes, centers, view):
        n = len(np.asarray(centers).reshape(-1, 3))
        return np.full(n, self.quality), np.full(n, self.rotation), np.full(n, self.width)


@dataclass
class OracleHead:
    """Ground-truth head: runs the feasibility oracle instead of reading features."""

    scene: Scene
    gripper: GripperConfig = field(default_factory=GripperConfig)
    n_angles: int = 16

    def __post_init__(self):
        self._checker = GraspChecker(self.scene, self.gripper)

    def grasps_at(self, planes, centers, view):
        centers = np.asarray(centers, float).reshape(-1, 3)
        out = [oracle_predict(self.scene, c, view, checker=self._checker, n_angles=self.n_angles) for c in centers]
        q, r, w = (np.array(x, float) for x in zip(*out)) if out else (np.zeros(0),) * 3
        return q, r, w


def oracle_predict(
    scene: Scene,
    p,
    v,
    gripper: GripperConfig | None = None,
    n_angles: int = 16,
    checker: GraspChecker | None = None,
) -> tuple[float, float, float]:
    """Sweep ``n_angles`` in-plane rotations; quality is 1 iff any is feasible."""
    checker = checker or GraspChecker(scene, gripper)
    angles = np.arange(n_angles) * np.pi / n_angles
    ok, r, span = checker.first_success(p, normalize(v), angles)
    if not ok:
        return 0.0, 0.0, 0.0
    w_max = checker.gripper.max_opening
    return 1.0, r, min(span + WIDTH_MARGIN, w_max)


def lattice_centers(bbox: Aabb, n: int = 64) -> np.ndarray:
    """``n = k**3`` cell centers filling ``bbox``, x-major order."""
    k = round(n ** (1 / 3))
    if k**3 != n:
        raise ValueError(f"lattice size {n} is not a cube")
    if np.any(bbox.extent < 0):
        raise ValueError("inverted bounding box")
    f = (np.arange(k) + 0.5) / k
    g = np.stack(np.meshgrid(f, f, f, indexing="ij"), axis=-1).reshape(-1, 3)
    return bbox.lo + g * bbox.extent


def imagine_affordances(
    planes: TriPlaneVolume, head: Head, bbox: Aabb, v, n: int = 64
) -> list[Grasp]:
    """Grasps predicted on the bbox lattice for view ``v``, best quality first."""
    v = normalize(v)
    centers = lattice_centers(bbox, n)
    q, r, w = head.grasps_at(planes, centers, v)
    order = np.argsort(-q, kind="stable")
    return [Grasp(float(q[i]), centers[i], v, float(r[i]), float(w[i])) for i in order]


# --- training -------------------------------------------------------------


@dataclass(frozen=True)
class GraspLabel:
    center: np.ndarray
    view: np.ndarray
    rotation: float
    width: float
    success: int


def grasp_loss(pred, label: GraspLabel, w_max: float = W_MAX):
    """Loss and gradient for raw outputs ``(q_logit, a, b, width_logit)``."""
    loss, grad, _ = grasp_loss_batch(
        np.asarray(pred, float)[None],
        np.array([label.success], float),
        np.array([label.rotation], float),
        np.array([label.width], float),
        w_max,
    )
    return loss, grad[0]


def grasp_loss_batch(raw, success, rotation, width, w_max: float = W_MAX, reduce: str = "sum"):
    """Per-batch loss; returns (loss, d loss / d raw, component dict)."""
    ql, a, b, wl = raw[:, 0], raw[:, 1], raw[:, 2], raw[:, 3]
    y = success.astype(float)
    lq = softplus(ql) - y * ql
    gq = sigmoid(ql) - y

    n = np.hypot(a, b)
    safe = n > 1e-12
    ns = np.where(safe, n, 1.0)
    ta, tb = np.cos(2 * rotation), np.sin(2 * rotation)
    cos = (a * ta + b * tb) / ns
    lr = np.where(safe, 1.0 - cos, 1.0) * y
    ga = np.where(safe, -(ta - cos * a / ns) / ns, 0.0) * y
    gb = np.where(safe, -(tb - cos * b / ns) / ns, 0.0) * y

    s = sigmoid(wl)
    resid = (w_max * s - width) / w_max
    lw = resid**2 * y
    gw = 2 * resid * s * (1 - s) * y

    grad = np.stack([gq, ga, gb, gw], axis=1)
    total = lq + lr + lw
    parts = {"q": lq, "r": lr, "w": lw}
    if reduce == "mean":
        m = len(raw)
        return total.mean(), grad / m, {k: v.mean() for k, v in parts.items()}
    return total.sum(), grad, {k: v.sum() for k, v in parts.items()}


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 100
    lr: float = 2e-4
    batch_size: int = 128
    val_fraction: float = 0.1
    seed: int = 0
    hidden: int = HIDDEN
    standardize: bool = True
    keep_best: bool = True  # restore the weights of the lowest validation loss


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_loss: float
    train_q: float
    train_r: float
    train_w: float


def train_head(
    features: np.ndarray,
    success: np.ndarray,
    rotation: np.ndarray,
    width: np.ndarray,
    config: TrainConfig | None = None,
    w_max: float = W_MAX,
    head: AffordanceHead | None = None,
) -> tuple[AffordanceHead, list[EpochLog]]:
    """Minibatch Adam on the grasp loss; deterministic for a given seed."""
    cfg = config or TrainConfig()
    x = np.asarray(features, float)
    if not len(x):
        raise TrainingError("empty dataset")
    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(len(x))
    n_val = int(round(cfg.val_fraction * len(x)))
    val, tr = perm[:n_val], perm[n_val:]
    if head is None:
        channels = (x.shape[1] - 3) // 30
        head = AffordanceHead.init(channels, cfg.hidden, seed=cfg.seed, w_max=w_max)
        if cfg.standardize:
            head.input_mean = x[tr].mean(axis=0)
            head.input_std = x[tr].std(axis=0) + 1e-6
    opt = Adam(cfg.lr)
    history = []

    def evaluate(idx):
        if not len(idx):
            return float("nan")
        raw = head.raw(x[idx])
        loss, _, _ = grasp_loss_batch(raw, success[idx], rotation[idx], width[idx], w_max, "mean")
        return float(loss)

    best = (evaluate(val), head.net.copy())
    for epoch in range(cfg.epochs):
        order = tr[rng.permutation(len(tr))]
        tot = np.zeros(4)
        for start in range(0, len(order), cfg.batch_size):
            bi = order[start : start + cfg.batch_size]
            out, cache = head.net.forward(head._normalize(x[bi]), keep=True)
            loss, g, parts = grasp_loss_batch(out, success[bi], rotation[bi], width[bi], w_max, "mean")
            if not np.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {start // cfg.batch_size}: "
                    f"{loss} (components {parts})"
                )
            grads, _ = head.net.backward(cache, g)
            opt.step(head.net.params, grads)
            tot += np.array([loss, parts["q"], parts["r"], parts["w"]]) * len(bi)
        tot /= max(len(tr), 1)
        history.append(EpochLog(epoch, tot[0], evaluate(val), tot[1], tot[2], tot[3]))
        log.debug("epoch %d train %.4f val %.4f", epoch, tot[0], history[-1].val_loss)
        if cfg.keep_best and history[-1].val_loss < best[0]:
            best = (history[-1].val_loss, head.net.copy())
    if cfg.keep_best and len(val) and np.isfinite(best[0]):
        head.net = best[1]
    return head, history
