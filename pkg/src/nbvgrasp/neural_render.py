"""Depth synthesis from the tri-plane volume through a learned SDF decoder.

Per-sample SDF values (normalized by the workspace edge) become section
opacities ``alpha_i = max(0, (Phi(sdf_i) - Phi(sdf_{i+1})) / Phi(sdf_i))``
with ``Phi(x) = sigmoid(s * x)``; compositing weights are
``w_i = T_i * alpha_i`` and the depth is the weighted mean of section
midpoints. Sample positions are treated as constants in the backward pass.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .geometry import ray_box_chord
from .nn import MLP, Adam, sigmoid
from .triplane import (
    ConfigurationError,
    EncoderWeights,
    TriPlaneVolume,
    encode,
    encode_backward,
    query_points,
    query_points_backward,
)

log = logging.getLogger(__name__)

NO_HIT_WEIGHT = 1e-3
DEPTH_EPS = 1e-6

SdfFn = Callable[[np.ndarray], np.ndarray]


@dataclass
class SdfDecoder:
    net: MLP
    log_s: float = float(np.log(20.0))

    @classmethod
    def init(cls, point_dim: int = 96, hidden: int = 128, seed: int = 0, s: float = 20.0):
        return cls(MLP.init((point_dim, hidden, hidden, hidden, 1), seed=seed, last_scale=1.0), float(np.log(s)))

    @classmethod
    def zeros(cls, point_dim: int = 96, hidden: int = 128, s: float = 20.0):
        return cls(MLP.zeros((point_dim, hidden, hidden, hidden, 1)), float(np.log(s)))

    @property
    def s(self) -> float:
        return float(np.exp(self.log_s))


def decode_sdf(weights: SdfDecoder, feature) -> float | np.ndarray:
    f = np.asarray(feature, float)
    if f.shape[-1] != weights.net.sizes[0]:
        raise ConfigurationError(f"decoder expects {weights.net.sizes[0]} features, got {f.shape[-1]}")
    out = weights.net.forward(f.reshape(-1, f.shape[-1]))[:, 0]
    return float(out[0]) if f.ndim == 1 else out


@dataclass
class RenderConfig:
    n_rays: int = 128
    n_uniform: int = 64
    n_importance_rounds: int = 4
    n_importance: int = 32
    near_margin_spacings: float = 3.0  # initial half-width around the true depth
    relax_fraction: float = 0.5  # share of training spent relaxing to the full chord
    chord_margin: float = 0.0  # metres added on both sides of the workspace chord

    def __post_init__(self):
        if self.n_rays < 1 or self.n_uniform < 2 or self.n_importance_rounds < 0 or self.n_importance < 1:
            raise ValueError("render sample counts must be positive")


def ray_chord(origin, direction, volume_origin, size) -> tuple[float, float] | None:
    lo = np.asarray(volume_origin, float)
    c = ray_box_chord(origin, direction, lo, lo + size)
    if c is None or c[1] <= max(c[0], 0.0):
        return None
    return max(c[0], 0.0), c[1]


def composite(sdf: np.ndarray, t: np.ndarray, s: float):
    """Opacities, weights and midpoints for sorted samples; arrays are (R, n)."""
    phi = sigmoid(s * sdf)
    prev, nxt = phi[:, :-1], phi[:, 1:]
    den = np.maximum(prev, 1e-300)
    alpha = np.clip((prev - nxt) / den, 0.0, 1.0)
    trans = np.cumprod(np.concatenate([np.ones((len(t), 1)), 1.0 - alpha[:, :-1]], axis=1), axis=1)
    w = trans * alpha
    mids = 0.5 * (t[:, :-1] + t[:, 1:])
    return phi, alpha, trans, w, mids


def _sample_pdf(t: np.ndarray, w: np.ndarray, n: int) -> np.ndarray:
    """Deterministic inverse-CDF samples inside [t_0, t_{n-1}] from section weights."""
    pdf = w + 1e-5
    pdf = pdf / pdf.sum(axis=1, keepdims=True)
    cdf = np.concatenate([np.zeros((len(t), 1)), np.cumsum(pdf, axis=1)], axis=1)
    cdf[:, -1] = 1.0
    u = (np.arange(n) + 0.5) / n
    out = np.empty((len(t), n))
    for r in range(len(t)):
        idx = np.clip(np.searchsorted(cdf[r], u, side="right"), 1, t.shape[1] - 1)
        c0, c1 = cdf[r, idx - 1], cdf[r, idx]
        frac = (u - c0) / np.maximum(c1 - c0, 1e-12)
        out[r] = t[r, idx - 1] + frac * (t[r, idx] - t[r, idx - 1])
    return out


class ImplicitRenderer:
    """Renders rays against a (planes, decoder) pair, or an analytic SDF hook."""

    def __init__(self, planes: TriPlaneVolume | None, decoder: SdfDecoder | None,
                 config: RenderConfig | None = None, sdf_fn: SdfFn | None = None,
                 sharpness: float | None = None):
        if sdf_fn is None and (planes is None or decoder is None):
            raise ValueError("need planes and decoder, or an sdf_fn")
        self.planes = planes
        self.decoder = decoder
        self.config = config or RenderConfig()
        self.sdf_fn = sdf_fn
        self.sharpness = sharpness

    @property
    def s(self) -> float:
        if self.sharpness is not None:
            return float(self.sharpness)
        return self.decoder.s if self.decoder is not None else 20.0

    def _sdf(self, pts: np.ndarray, keep: bool = False):
        if self.sdf_fn is not None:
            return self.sdf_fn(pts), None
        feats = query_points(self.planes, pts)
        if keep:
            out, cache = self.decoder.net.forward(feats, keep=True)
            return out[:, 0], (pts, cache)
        return self.decoder.net.forward(feats)[:, 0], None

    def sample_positions(self, origins, dirs, near, far) -> np.ndarray:
        cfg = self.config
        R = len(origins)
        f = (np.arange(cfg.n_uniform) + 0.5) / cfg.n_uniform
        t = near[:, None] + f[None] * (far - near)[:, None]
        for k in range(cfg.n_importance_rounds):
            pts = origins[:, None] + t[..., None] * dirs[:, None]
            sdf, _ = self._sdf(pts.reshape(-1, 3))
            _, _, _, w, _ = composite(sdf.reshape(R, -1), t, 64.0 * 2**k)
            new = _sample_pdf(t, w, cfg.n_importance)
            t = np.sort(np.concatenate([t, new], axis=1), axis=1)
        return t

    def render(self, origins, dirs, near, far, keep: bool = False):
        """Depth per ray (NaN = no hit) and the composited weight sums."""
        origins = np.asarray(origins, float).reshape(-1, 3)
        dirs = np.asarray(dirs, float).reshape(-1, 3)
        near = np.broadcast_to(np.asarray(near, float), (len(origins),)).copy()
        far = np.broadcast_to(np.asarray(far, float), (len(origins),)).copy()
        t = self.sample_positions(origins, dirs, near, far)
        R, n = t.shape
        pts = (origins[:, None] + t[..., None] * dirs[:, None]).reshape(-1, 3)
        sdf, net_cache = self._sdf(pts, keep)
        sdf = sdf.reshape(R, n)
        phi, alpha, trans, w, mids = composite(sdf, t, self.s)
        wsum = w.sum(axis=1)
        depth = (w * mids).sum(axis=1) / np.maximum(wsum, DEPTH_EPS)
        depth = np.where(wsum < NO_HIT_WEIGHT, np.nan, depth)
        if keep:
            self._cache = dict(t=t, sdf=sdf, phi=phi, alpha=alpha, trans=trans, w=w,
                               mids=mids, wsum=wsum, depth=depth, net=net_cache)
        return depth, wsum

    def backward(self, grad_depth: np.ndarray):
        """Gradients of a scalar loss w.r.t. decoder params, log_s and the planes."""
        c = self._cache
        s = self.s
        g = np.where(np.isnan(c["depth"]), 0.0, np.asarray(grad_depth, float))
        wsum = c["wsum"]
        big = wsum > DEPTH_EPS
        num = (c["w"] * c["mids"]).sum(axis=1)
        # d depth / d w_i
        gw = np.where(
            big[:, None],
            (c["mids"] - (num / np.where(big, wsum, 1.0))[:, None]) / np.where(big, wsum, 1.0)[:, None],
            c["mids"] / DEPTH_EPS,
        ) * g[:, None]
        alpha, trans, w = c["alpha"], c["trans"], c["w"]
        contrib = gw * w
        suffix = np.cumsum(contrib[:, ::-1], axis=1)[:, ::-1]
        later = np.concatenate([suffix[:, 1:], np.zeros((len(w), 1))], axis=1)
        galpha = gw * trans - later / np.maximum(1.0 - alpha, 1e-12)

        phi = c["phi"]
        prev, nxt = phi[:, :-1], phi[:, 1:]
        den = np.maximum(prev, 1e-300)
        raw = (prev - nxt) / den
        active = (raw > 0) & (raw < 1)
        ga = np.where(active, galpha, 0.0)
        gphi = np.zeros_like(phi)
        gphi[:, :-1] += ga * nxt / den**2
        gphi[:, 1:] += -ga / den
        dphi = phi * (1 - phi)
        gsdf = gphi * dphi * s
        g_log_s = float((gphi * dphi * c["sdf"]).sum() * s)
        out = {"log_s": g_log_s}
        if c["net"] is not None:
            pts, cache = c["net"]
            grads, gfeat = self.decoder.net.backward(cache, gsdf.reshape(-1, 1))
            out.update(grads)
            out["planes"] = query_points_backward(self.planes, pts, gfeat)
        out["sdf"] = gsdf
        return out


def render_depth_implicit(planes, weights, origin, direction, config=None, near=None, far=None,
                          sdf_fn: SdfFn | None = None, sharpness: float | None = None) -> float:
    """Expected depth along one ray (NaN when the composited weight stays below 1e-3)."""
    r = ImplicitRenderer(planes, weights, config, sdf_fn, sharpness)
    if near is None or far is None:
        size = planes.size if planes is not None else 0.30
        org = planes.origin if planes is not None else np.zeros(3)
        chord = ray_chord(origin, direction, org, size)
        if chord is None:
            return float("nan")
        m = r.config.chord_margin
        near, far = max(chord[0] - m, 0.0), chord[1] + m
    d, _ = r.render(np.asarray(origin)[None], np.asarray(direction)[None], near, far)
    return float(d[0])


def depth_loss(rendered, ground_truth):
    """Mean absolute error over rays where both depths are finite."""
    r = np.asarray(rendered, float)
    g = np.asarray(ground_truth, float)
    if r.shape != g.shape:
        raise ValueError("depth arrays differ in length")
    mask = np.isfinite(r) & np.isfinite(g)
    grad = np.zeros_like(r)
    n = int(mask.sum())
    if n == 0:
        warnings.warn("depth loss over an empty mask", RuntimeWarning, stacklevel=2)
        return 0.0, grad
    diff = r[mask] - g[mask]
    grad[mask] = np.sign(diff) / n
    return float(np.abs(diff).mean()), grad


# --- training ---------------------------------------------------------------


@dataclass
class DepthSample:
    """One training scene: the input TSDF and its ground-truth depth views."""

    volume: object  # TsdfVolume
    images: list = field(default_factory=list)  # DepthImage


@dataclass
class DepthTrainConfig:
    steps: int = 200
    lr: float = 2e-4
    seed: int = 0
    train_encoder: bool = True
    render: RenderConfig = field(default_factory=RenderConfig)


def near_far_schedule(step: int, total: int, gt: np.ndarray, chord: tuple[np.ndarray, np.ndarray],
                      cfg: RenderConfig):
    """Linear relaxation from ``gt +- k`` sample spacings to the full chord."""
    t0, t1 = chord
    spacing = (t1 - t0) / cfg.n_uniform
    tight0 = np.maximum(t0, gt - cfg.near_margin_spacings * spacing)
    tight1 = np.minimum(t1, gt + cfg.near_margin_spacings * spacing)
    frac = 1.0 if cfg.relax_fraction <= 0 else min(1.0, step / max(1.0, cfg.relax_fraction * total))
    return tight0 + frac * (t0 - tight0), tight1 + frac * (t1 - tight1)


def train_depth(samples: list[DepthSample], encoder: EncoderWeights, decoder: SdfDecoder,
                config: DepthTrainConfig | None = None):
    """Adam over decoder (and optionally encoder) parameters on the depth loss."""
    cfg = config or DepthTrainConfig()
    rng = np.random.default_rng(cfg.seed)
    params = {f"dec.{k}": v for k, v in decoder.net.params.items()}
    if cfg.train_encoder:
        params.update({f"enc.{k}": v for k, v in encoder.as_dict().items()})
    log_s = np.array([decoder.log_s])
    params["log_s"] = log_s
    opt = Adam(cfg.lr)
    history = []
    for step in range(cfg.steps):
        sample = samples[rng.integers(len(samples))]
        img = sample.images[rng.integers(len(sample.images))]
        planes, enc_cache = encode(sample.volume, encoder, keep=True)
        rays = img.world_rays().reshape(-1, 3)
        depth = img.depth.reshape(-1)
        pick = rng.choice(np.flatnonzero(np.isfinite(depth)), size=cfg.render.n_rays, replace=True)
        o = img.pose.trans
        chords = [ray_chord(o, rays[i], planes.origin, planes.size) for i in pick]
        keep = np.array([c is not None and c[0] <= depth[i] <= c[1] for c, i in zip(chords, pick)])
        if not keep.any():
            continue
        pick = pick[keep]
        t0 = np.array([c[0] for c, k in zip(chords, keep) if k])
        t1 = np.array([c[1] for c, k in zip(chords, keep) if k])
        near, far = near_far_schedule(step, cfg.steps, depth[pick], (t0, t1), cfg.render)
        decoder.log_s = float(log_s[0])
        rend = ImplicitRenderer(planes, decoder, cfg.render)
        pred, _ = rend.render(np.tile(o, (len(pick), 1)), rays[pick], near, far, keep=True)
        loss, gd = depth_loss(pred, depth[pick])
        grads = rend.backward(gd)
        step_grads = {f"dec.{k}": grads[k] for k in decoder.net.params}
        step_grads["log_s"] = np.array([grads["log_s"]])
        if cfg.train_encoder:
            eg = encode_backward(encoder, enc_cache, grads["planes"])
            step_grads.update({f"enc.{k}": v for k, v in eg.items()})
        opt.step(params, step_grads)
        decoder.log_s = float(log_s[0])
        history.append(loss)
        log.debug("depth step %d loss %.5f", step, loss)
    return history
