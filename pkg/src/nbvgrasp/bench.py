"""Dataset generation, training orchestration, benchmark sweeps and the aligned-view study."""

from __future__ import annotations

import csv
import io
import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .affordance import (
    AffordanceHead,
    ConstantHead,
    Head,
    OracleHead,
    TrainConfig,
    build_inputs,
    lattice_centers,
    oracle_predict,
    train_head,
)
from .formats import FormatError, pack_tensors, unpack_tensors
from .geometry import Aabb, angle_between, normalize
from .grasping import GraspChecker
from .neural_render import DepthSample, DepthTrainConfig, SdfDecoder, train_depth
from .nn import MLP
from .policy import (
    Episode,
    PolicyConfig,
    baseline_policy,
    camera_at,
    compute_metrics,
    fibonacci_cap,
    initial_camera,
)
from .scene import Scene, generate_packed_scene, render_depth, select_target
from .triplane import EncoderWeights, encode
from .tsdf import TsdfVolume

log = logging.getLogger(__name__)

PAIR_KINDS = ("front-observe-front-grasp", "front-observe-side-grasp", "multi-observe-front-grasp")
DATASET_MAGIC = b"NBVD"
DATASET_VERSION = 1
LABEL_FIELDS = 12  # center(3) view(3) rotation width success scene kind observe_count
# head trained on scenes 0-799 for 60 epochs; `nbvgrasp train --scenes 0-799 --epochs 60` rebuilds it
PRETRAINED_HEAD = Path(__file__).with_name("data") / "head_desk.nbvw"


# --- scenes -----------------------------------------------------------------


def object_count_for(seed: int) -> int:
    return 4 + int(np.random.default_rng([seed, 1]).integers(0, 4))


def episode_scene(seed: int, config: PolicyConfig | None = None) -> tuple[Scene, object]:
    """Packed scene with its target picked from the default initial view."""
    cfg = config or PolicyConfig()
    scene = generate_packed_scene(seed, object_count_for(seed))
    cam0 = initial_camera(None, cfg)
    scene = scene.with_target(select_target(scene, cam0))
    return scene, initial_camera(scene.target_bbox.center, cfg)


def gt_views(bbox: Aabb, config: PolicyConfig | None = None, n: int = 12) -> list:
    cfg = config or PolicyConfig()
    dirs = fibonacci_cap(n, cfg.cap_deg)
    c = bbox.center
    return [camera_at(c + cfg.radius * d, c, cfg.intrinsics) for d in dirs]


# --- dataset ------------------------------------------------------------------


@dataclass(frozen=True)
class DataPairSpec:
    kind: str
    observe: tuple[int, ...]  # indices into the ground-truth views
    grasp_view: np.ndarray

    def __post_init__(self):
        if self.kind not in PAIR_KINDS:
            raise ValueError(f"unknown pair kind {self.kind!r}")
        if self.kind == "multi-observe-front-grasp" and len(self.observe) < 2:
            raise ValueError("multi-observe pairs fuse at least two views")


@dataclass
class Dataset:
    features: np.ndarray  # (n, D) float32
    labels: np.ndarray  # (n, LABEL_FIELDS) float32
    channels: int = 32
    provenance: str = ""

    def __len__(self) -> int:
        return len(self.features)

    @property
    def success(self) -> np.ndarray:
        return self.labels[:, 8].astype(int)

    @property
    def rotation(self) -> np.ndarray:
        return self.labels[:, 6].astype(float)

    @property
    def width(self) -> np.ndarray:
        return self.labels[:, 7].astype(float)

    @property
    def kinds(self) -> np.ndarray:
        return self.labels[:, 10].astype(int)

    def to_bytes(self) -> bytes:
        prov = self.provenance.encode()
        head = DATASET_MAGIC + struct.pack(
            "<IIIIII", DATASET_VERSION, len(self), self.features.shape[1], LABEL_FIELDS, self.channels, len(prov)
        )
        rec = np.concatenate([self.features, self.labels], axis=1).astype("<f4")
        return head + prov + rec.tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> Dataset:
        if blob[:4] != DATASET_MAGIC:
            raise FormatError(f"bad dataset magic at offset 0: {blob[:4]!r}")
        try:
            ver, n, d, nl, ch, np_ = struct.unpack_from("<IIIIII", blob, 4)
        except struct.error:
            raise FormatError("dataset header truncated at offset 4") from None
        if ver != DATASET_VERSION or nl != LABEL_FIELDS:
            raise FormatError(f"unsupported dataset layout (version {ver}, label fields {nl}) at offset 4")
        off = 28
        prov = blob[off : off + np_].decode()
        off += np_
        need = off + 4 * n * (d + nl)
        if len(blob) != need:
            raise FormatError(f"dataset truncated: {len(blob)} bytes, expected {need} (records from offset {off})")
        rec = np.frombuffer(blob, "<f4", n * (d + nl), off).reshape(n, d + nl).astype(np.float32)
        return cls(rec[:, :d].copy(), rec[:, d:].copy(), ch, prov)

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> Dataset:
        return cls.from_bytes(Path(path).read_bytes())


@dataclass
class DatasetConfig:
    n_views: int = 12
    grasps_per_pair: int = 80
    kinds: tuple[str, ...] = PAIR_KINDS
    side_exclusion_deg: float = 20.0
    multi_views: int = 3
    n_angles: int = 16
    balance: bool = True
    encoder_seed: int = 0
    policy: PolicyConfig = field(default_factory=PolicyConfig)


def _pair_specs(rng, views, cfg: DatasetConfig) -> list[DataPairSpec]:
    n = len(views)
    dirs = [c.axis for c in views]
    specs = []
    for kind in cfg.kinds:
        o = int(rng.integers(n))
        if kind == "front-observe-front-grasp":
            specs.append(DataPairSpec(kind, (o,), dirs[o]))
        elif kind == "front-observe-side-grasp":
            side = [i for i in range(n) if angle_between(dirs[i], dirs[o]) > np.radians(cfg.side_exclusion_deg)]
            g = side[int(rng.integers(len(side)))] if side else o
            specs.append(DataPairSpec(kind, (o,), dirs[g]))
        else:
            others = [i for i in rng.permutation(n) if i != o][: cfg.multi_views - 1]
            specs.append(DataPairSpec(kind, (o, *map(int, others)), dirs[o]))
    return specs


def _jittered_centers(rng, bbox: Aabb, n: int) -> np.ndarray:
    """Cell centres of a 4 x 4 x (n/16) lattice, jittered by up to a quarter cell."""
    kz = max(1, n // 16)
    f = [(np.arange(k) + 0.5) / k for k in (4, 4, kz)]
    g = np.stack(np.meshgrid(*f, indexing="ij"), axis=-1).reshape(-1, 3)
    cell = 1.0 / np.array([4, 4, kz])
    g = g + rng.uniform(-0.25, 0.25, g.shape) * cell
    return bbox.lo + g * bbox.extent


def scene_records(seed: int, cfg: DatasetConfig, encoder: EncoderWeights):
    """Feature and label rows for one scene, plus its ground-truth depth images."""
    pcfg = cfg.policy
    scene, _ = episode_scene(seed, pcfg)
    views = gt_views(scene.target_bbox, pcfg, cfg.n_views)
    images = [render_depth(scene, c) for c in views]
    rng = np.random.default_rng([seed, 7])
    checker = GraspChecker(scene)
    feats, labels = [], []
    volumes = []
    for spec in _pair_specs(rng, views, cfg):
        vol = TsdfVolume()
        for i in spec.observe:
            vol.integrate(images[i])
        volumes.append(vol)
        planes = encode(vol, encoder)
        centers = _jittered_centers(rng, scene.target_bbox, cfg.grasps_per_pair)
        x = build_inputs(planes, centers, spec.grasp_view)
        for p, row in zip(centers, x):
            q, r, w = oracle_predict(scene, p, spec.grasp_view, n_angles=cfg.n_angles, checker=checker)
            feats.append(row)
            labels.append([*p, *spec.grasp_view, r, w, q, seed, PAIR_KINDS.index(spec.kind), len(spec.observe)])
    feats = np.array(feats, np.float32)
    labels = np.array(labels, np.float32)
    return feats, labels, scene, images, volumes


def balance(labels: np.ndarray, rng) -> np.ndarray:
    """Indices keeping every minority-class row and an equal random share of the majority."""
    pos = np.flatnonzero(labels[:, 8] > 0.5)
    neg = np.flatnonzero(labels[:, 8] <= 0.5)
    k = min(len(pos), len(neg))
    keep = np.concatenate([rng.permutation(pos)[:k], rng.permutation(neg)[:k]])
    return np.sort(keep)


def generate_dataset(scene_seeds, config: DatasetConfig | None = None, jobs: int = 1,
                     keep_images: bool = False):
    """Label grasps on every scene; returns the dataset (and depth samples if asked)."""
    cfg = config or DatasetConfig()
    seeds = list(scene_seeds)
    if not seeds:
        raise ValueError("no scene seeds")
    encoder = EncoderWeights.init(seed=cfg.encoder_seed)

    def one(seed):
        # reduce each scene right away so only balanced rows stay in memory
        try:
            f, lab, _, images, volumes = scene_records(seed, cfg, encoder)
        except Exception as exc:  # noqa: BLE001 - a bad scene is skipped, not fatal
            log.warning("scene %d skipped: %s", seed, exc)
            return None
        if not (lab[:, 8] > 0.5).any():
            log.info("scene %d skipped: no positive labels", seed)
            return None
        keep = balance(lab, np.random.default_rng([seed, 11])) if cfg.balance else np.arange(len(lab))
        sample = DepthSample(volumes[0], images) if keep_images else None
        return f[keep], lab[keep], sample

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            results = list(pool.map(one, seeds))
    else:
        results = [one(s) for s in seeds]
    results = [r for r in results if r is not None]
    feats = [r[0] for r in results]
    labels = [r[1] for r in results]
    samples = [r[2] for r in results]
    if not feats:
        raise ValueError("no scene produced a positive label")
    prov = f"kinds={'+'.join(cfg.kinds)};scenes={len(feats)};seeds={seeds[0]}..{seeds[-1]};encoder_seed={cfg.encoder_seed}"
    ds = Dataset(np.concatenate(feats), np.concatenate(labels), encoder.channels, prov)
    return (ds, samples) if keep_images else ds


# --- weights ------------------------------------------------------------------


def save_head(path, head: AffordanceHead):
    t = {f"net.{k}": v for k, v in head.net.params.items()}
    t["w_max"] = np.array([head.w_max])
    t["sizes"] = np.array(head.net.sizes, float)
    t["residual"] = np.array(head.net.residual, float)
    if head.input_mean is not None:
        t["input_mean"] = head.input_mean
        t["input_std"] = head.input_std
    Path(path).write_bytes(pack_tensors(t, head.provenance))


def load_head(path) -> AffordanceHead:
    t, prov = unpack_tensors(Path(path).read_bytes())
    try:
        sizes = tuple(int(s) for s in t["sizes"])
        residual = tuple(bool(r) for r in t["residual"])
        params = {k[4:]: v.astype(float) for k, v in t.items() if k.startswith("net.")}
    except KeyError as exc:
        raise FormatError(f"head weights missing tensor {exc}") from None
    head = AffordanceHead(MLP(sizes, residual, params), float(t["w_max"][0]), provenance=prov)
    if "input_mean" in t:
        head.input_mean = t["input_mean"].astype(float)
        head.input_std = t["input_std"].astype(float)
    return head


def load_pretrained_head() -> AffordanceHead:
    return load_head(PRETRAINED_HEAD)


def save_encoder(path, enc: EncoderWeights, provenance: str = ""):
    Path(path).write_bytes(pack_tensors(enc.as_dict(), provenance))


def load_encoder(path) -> EncoderWeights:
    t, _ = unpack_tensors(Path(path).read_bytes())
    enc = EncoderWeights.from_dict({k: v.astype(float) for k, v in t.items()})
    enc.check()
    return enc


def save_decoder(path, dec: SdfDecoder, provenance: str = ""):
    t = {f"net.{k}": v for k, v in dec.net.params.items()}
    t["log_s"] = np.array([dec.log_s])
    t["sizes"] = np.array(dec.net.sizes, float)
    Path(path).write_bytes(pack_tensors(t, provenance))


def load_decoder(path) -> SdfDecoder:
    t, _ = unpack_tensors(Path(path).read_bytes())
    sizes = tuple(int(s) for s in t["sizes"])
    params = {k[4:]: v.astype(float) for k, v in t.items() if k.startswith("net.")}
    return SdfDecoder(MLP(sizes, (False,) * (len(sizes) - 1), params), float(t["log_s"][0]))


@dataclass
class TrainResult:
    head: AffordanceHead
    history: list
    depth_history: list
    decoder: SdfDecoder | None
    encoder: EncoderWeights


def train_all(dataset: Dataset, config: TrainConfig | None = None, depth_samples=None,
              depth_config: DepthTrainConfig | None = None, encoder_seed: int = 0) -> TrainResult:
    cfg = config or TrainConfig()
    head, hist = train_head(
        dataset.features.astype(float), dataset.success, dataset.rotation, dataset.width, cfg
    )
    head.provenance = f"{dataset.provenance};epochs={cfg.epochs};lr={cfg.lr};batch={cfg.batch_size};seed={cfg.seed}"
    encoder = EncoderWeights.init(seed=encoder_seed)
    decoder, dhist = None, []
    if depth_samples and depth_config is not None and depth_config.steps > 0:
        decoder = SdfDecoder.init(encoder.channels * 3, seed=cfg.seed)
        depth_encoder = EncoderWeights.from_dict({k: v.copy() for k, v in encoder.as_dict().items()})
        dhist = train_depth(depth_samples, depth_encoder, decoder, depth_config)
    return TrainResult(head, hist, dhist, decoder, encoder)


def training_log_csv(history) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "train_loss", "val_loss", "loss_q", "loss_r", "loss_w"])
    for e in history:
        w.writerow([e.epoch, f"{e.train_loss:.6f}", f"{e.val_loss:.6f}", f"{e.train_q:.6f}",
                    f"{e.train_r:.6f}", f"{e.train_w:.6f}"])
    return buf.getvalue()


# --- benchmark ----------------------------------------------------------------


@dataclass
class BenchConfig:
    seeds: tuple[int, ...] = tuple(range(1000, 1100))
    policies: tuple[str, ...] = ("ace-nbv", "initial-view", "top-view", "fixed-traj", "geometry-gain")
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    jobs: int = 1
    two_view: bool = True

    def __post_init__(self):
        if len(self.seeds) < 1:
            raise ValueError("need at least one scene seed")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("scene seeds must be distinct")


@dataclass
class BenchResult:
    episodes: dict[str, list[Episode]]
    two_view: dict[str, list[Episode]]
    summary: dict[str, dict[str, float]]

    def csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["row", "policy", "seed", "outcome", "views", "quality", "SR", "FR", "AR", "Views", "SR2", "note"])
        for name, eps in self.episodes.items():
            for e in eps:
                q = "" if e.grasp is None else f"{e.grasp.quality:.6f}"
                w.writerow(["episode", name, e.scene_id, e.outcome, e.n_views, q, "", "", "", "", "", e.diagnostic])
        for name, m in self.summary.items():
            w.writerow(["summary", name, "", "", "", "", *(_fmt(m.get(k)) for k in ("SR", "FR", "AR", "views", "SR2")), ""])
        return buf.getvalue()

    def table(self) -> str:
        head = f"{'Method':<16}{'SR':>8}{'FR':>8}{'AR':>8}{'#Views':>9}{'2-Views SR':>12}"
        lines = [head, "-" * len(head)]
        for name, m in self.summary.items():
            sr2 = m.get("SR2")
            sr2s = "-" if sr2 is None or np.isnan(sr2) else f"{100 * sr2:.0f}%"
            lines.append(
                f"{name:<16}{100 * m['SR']:>7.0f}%{100 * m['FR']:>7.0f}%{100 * m['AR']:>7.0f}%"
                f"{m['views']:>9.2f}{sr2s:>12}"
            )
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and np.isnan(v)):
        return ""
    return f"{v:.6f}"


def make_head_factory(head: AffordanceHead | str):
    """``head`` is trained weights, "oracle" or "constant"."""
    if head == "oracle":
        return lambda scene: OracleHead(scene)
    if head == "constant":
        return lambda scene: ConstantHead()
    return lambda scene: head


def run_episode(policy: str, seed: int, head_for, cfg: PolicyConfig, encoder=None) -> Episode:
    try:
        scene, cam0 = episode_scene(seed, cfg)
        return baseline_policy(policy, scene, cam0, head_for(scene), cfg, encoder=encoder, scene_id=seed)
    except Exception as exc:  # noqa: BLE001 - one bad episode must not stop the sweep
        log.warning("episode %s/%d failed: %s", policy, seed, exc)
        return Episode(seed, policy, outcome="abort", diagnostic=f"error: {exc}")


def run_benchmark(config: BenchConfig, head="oracle", encoder: EncoderWeights | None = None) -> BenchResult:
    head_for = make_head_factory(head)
    cfg = config.policy
    two_cfg = PolicyConfig(**{**cfg.__dict__, "t_max": min(2, cfg.t_max)})
    jobs = [(p, s, cfg) for p in config.policies for s in config.seeds]
    if config.two_view:
        jobs += [(p, s, two_cfg) for p in config.policies if p in ("ace-nbv", "geometry-gain") for s in config.seeds]

    def go(job):
        return run_episode(job[0], job[1], head_for, job[2], encoder)

    if config.jobs > 1:
        with ThreadPoolExecutor(config.jobs) as pool:
            out = list(pool.map(go, jobs))
    else:
        out = [go(j) for j in jobs]
    episodes: dict[str, list[Episode]] = {p: [] for p in config.policies}
    two: dict[str, list[Episode]] = {}
    n_main = len(config.policies) * len(config.seeds)
    for job, ep in zip(jobs[:n_main], out[:n_main]):
        episodes[job[0]].append(ep)
    for job, ep in zip(jobs[n_main:], out[n_main:]):
        two.setdefault(job[0], []).append(ep)
    summary = {}
    for p, eps in episodes.items():
        if p in two:
            m = compute_metrics(eps, two[p])
        else:
            m = compute_metrics(eps)
            # single-view baselines never use a second view; fixed-traj needs four
            m["SR2"] = m["SR"] if p in ("initial-view", "top-view") else float("nan")
        summary[p] = m
    return BenchResult(episodes, two, summary)


# --- aligned-view experiment --------------------------------------------------


def misaligned_view(v: np.ndarray) -> np.ndarray:
    """Unit vector 90 degrees from ``v`` at the same polar angle (needs polar >= 45 deg)."""
    v = normalize(v)
    th = np.arccos(np.clip(-v[2], -1, 1))  # polar angle of the camera above the target
    c = -1.0 / np.tan(th) ** 2
    if c < -1:
        raise ValueError("view too steep for a same-elevation 90 degree partner")
    dphi = np.arccos(c)
    cs, sn = np.cos(dphi), np.sin(dphi)
    return normalize(np.array([cs * v[0] - sn * v[1], sn * v[0] + cs * v[1], v[2]]))


@dataclass
class AlignedReport:
    seeds: list[int]
    aligned: np.ndarray
    misaligned: np.ndarray

    @property
    def fraction_lower(self) -> float | None:
        """Share of scenes where aligned error is strictly lower; None when every scene ties."""
        diff = self.aligned - self.misaligned
        if np.all(diff == 0):
            return None
        return float(np.mean(diff < 0))

    def csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["seed", "aligned_error", "misaligned_error"])
        for s, a, m in zip(self.seeds, self.aligned, self.misaligned):
            w.writerow([s, f"{a:.6f}", f"{m:.6f}"])
        f = self.fraction_lower
        w.writerow(["fraction_aligned_lower", "tie" if f is None else f"{f:.6f}", ""])
        return buf.getvalue()


def aligned_view_experiment(seeds, head="oracle", config: PolicyConfig | None = None,
                            encoder: EncoderWeights | None = None, n: int = 64) -> AlignedReport:
    cfg = config or PolicyConfig()
    enc = encoder or EncoderWeights.init()
    head_for = make_head_factory(head)
    al, mis = [], []
    for seed in seeds:
        scene, cam = episode_scene(seed, cfg)
        vol = TsdfVolume()
        vol.integrate(render_depth(scene, cam))
        planes = encode(vol, enc)
        v_obs = normalize(scene.target_bbox.center - cam.position)
        centers = lattice_centers(scene.target_bbox, n)
        h: Head = head_for(scene)
        checker = GraspChecker(scene)
        errs = []
        for v in (v_obs, misaligned_view(v_obs)):
            q_pred, _, _ = h.grasps_at(planes, centers, v)
            q_true = np.array([oracle_predict(scene, p, v, checker=checker)[0] for p in centers])
            errs.append(float(np.mean(np.abs(q_pred - q_true))))
        al.append(errs[0])
        mis.append(errs[1])
    return AlignedReport(list(seeds), np.array(al), np.array(mis))
