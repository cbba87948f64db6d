"""Command-line entry point: ``nbvgrasp <subcommand> [flags]``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__, _backend
from .config import (
    ConfigError,
    bench_config,
    dataset_config,
    depth_train_config,
    dump_config,
    load_config,
    parse_seeds,
    policy_config,
    train_config,
)
from .formats import FormatError, overlay_grasps, write_pgm8, write_pgm16, write_ply, write_ppm
from .geometry import Aabb, Camera, look_at
from .policy import POLICIES, baseline_policy
from .scene import Scene, SceneGenerationError, render_depth
from .triplane import EncoderWeights, encode
from .tsdf import TsdfVolume

log = logging.getLogger("nbvgrasp")

OUT_ENV = "NBVGRASP_OUT"
MANIFEST = "run_manifest.txt"
SUBCOMMANDS = ("gen-scenes", "render", "fuse", "train", "plan", "bench", "aligned-exp", "viz")


class DomainError(RuntimeError):
    pass


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file overriding the defaults")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./nbvgrasp_out)")
    common.add_argument("--jobs", type=int, default=1, help="worker threads")
    common.add_argument("-v", "--verbose", action="count", default=0)

    policy = argparse.ArgumentParser(add_help=False)
    policy.add_argument("--policy", help="policy name (bench: comma-separated list)")
    policy.add_argument("--tmax", type=int, help="view budget")
    policy.add_argument("--qmax", type=float, help="execution threshold")
    policy.add_argument("--weights", help="head weights file, or 'oracle' / 'constant' / 'pretrained'")
    policy.add_argument("--encoder", help="encoder weights file (default: seeded init)")

    p = argparse.ArgumentParser(prog="nbvgrasp", description="Affordance-driven next-best-view grasp planning")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="{" + ",".join(SUBCOMMANDS) + "}")

    s = sub.add_parser("gen-scenes", parents=[common], help="write packed scenes as JSON")
    s.add_argument("--count", type=int, default=10)

    s = sub.add_parser("render", parents=[common], help="render a depth image (16-bit PGM)")
    s.add_argument("--scene", help="scene JSON (default: packed scene from --seed)")
    s.add_argument("--view", default="initial", help="'initial' or a ground-truth view index 0..11")

    s = sub.add_parser("fuse", parents=[common], help="fuse ground-truth views into a TSDF snapshot")
    s.add_argument("--scene")
    s.add_argument("--views", type=int, default=12)

    s = sub.add_parser("train", parents=[common], help="generate a dataset and train the heads")
    s.add_argument("--scenes", help="training scene seeds, e.g. 0-49")
    s.add_argument("--epochs", type=int)

    sub.add_parser("plan", parents=[common, policy], help="run one episode and write its trace")

    s = sub.add_parser("bench", parents=[common, policy], help="benchmark policies over scene seeds")
    s.add_argument("--seeds", help="benchmark scene seeds, e.g. 1000-1099")

    s = sub.add_parser("aligned-exp", parents=[common, policy], help="aligned vs 90-degree view study")
    s.add_argument("--scenes", default="2000-2029")

    s = sub.add_parser("viz", parents=[common], help="export PPM/PGM/PLY views of artifacts")
    s.add_argument("--trace", help="episode trace (.jsonl): one overlay PPM per step")
    s.add_argument("--tsdf", help="TSDF snapshot: zero-crossing PLY")
    s.add_argument("--planes", action="store_true", help="with --tsdf: per-channel plane PGMs")
    return p


def _out_dir(args) -> Path:
    return Path(args.out or os.environ.get(OUT_ENV) or "nbvgrasp_out")


def _write_manifest(out: Path, args, cp):
    skip = {"out", "verbose"}
    flags = {k: v for k, v in sorted(vars(args).items()) if k not in skip}
    lines = [
        f"command: {args.command}",
        f"seed: {args.seed}",
        "flags: " + json.dumps(flags, sort_keys=True),
        f"nbvgrasp: {__version__}",
        f"python: {platform.python_version()}",
        f"numpy: {np.__version__}",
        f"kernels: {_backend.BACKEND}",
        "",
        dump_config(cp).rstrip(),
        "",
    ]
    (out / MANIFEST).write_text("\n".join(lines))


def _overrides(args) -> dict:
    o: dict[str, dict[str, str]] = {"policy": {}, "bench": {}, "train": {}, "dataset": {}}
    if getattr(args, "tmax", None) is not None:
        o["policy"]["t_max"] = str(args.tmax)
    if getattr(args, "qmax", None) is not None:
        o["policy"]["q_max"] = str(args.qmax)
    if args.command == "bench":
        if args.policy:
            o["bench"]["policies"] = args.policy
        if args.seeds:
            o["bench"]["seeds"] = args.seeds
    if getattr(args, "weights", None):
        o["bench"]["head"] = args.weights
    if args.command == "train":
        if args.scenes:
            o["dataset"]["scenes"] = args.scenes
        if args.epochs is not None:
            o["train"]["epochs"] = str(args.epochs)
    return o


def _scene_for(args, cfg):
    from .bench import episode_scene

    if getattr(args, "scene", None):
        try:
            scene = Scene.from_json(Path(args.scene).read_text())
        except (OSError, KeyError, ValueError) as exc:
            raise DomainError(f"cannot load scene {args.scene}: {exc}") from None
        if scene.target < 0:
            raise DomainError("scene has no target")
        from .policy import initial_camera

        return scene, initial_camera(scene.target_bbox.center, cfg)
    return episode_scene(args.seed, cfg)


def _head(spec: str):
    from .bench import load_head, load_pretrained_head

    if spec in ("oracle", "constant"):
        return spec
    if spec == "pretrained":
        return load_pretrained_head()
    try:
        return load_head(spec)
    except OSError as exc:
        raise DomainError(f"cannot read head weights: {exc}") from None


def _encoder(args, cp) -> EncoderWeights:
    from .bench import load_encoder

    if getattr(args, "encoder", None):
        try:
            return load_encoder(args.encoder)
        except OSError as exc:
            raise DomainError(f"cannot read encoder weights: {exc}") from None
    return EncoderWeights.init(seed=int(cp["dataset"]["encoder_seed"]))


# --- subcommands --------------------------------------------------------------


def cmd_gen_scenes(args, cp, out: Path):
    from .bench import episode_scene

    cfg = policy_config(cp)
    d = out / "scenes"
    d.mkdir(parents=True, exist_ok=True)
    for seed in range(args.seed, args.seed + args.count):
        scene, _ = episode_scene(seed, cfg)
        (d / f"scene_{seed:05d}.json").write_text(scene.to_json())
    print(f"wrote {args.count} scenes to {d}")


def cmd_render(args, cp, out: Path):
    from .bench import gt_views

    cfg = policy_config(cp)
    scene, cam = _scene_for(args, cfg)
    if args.view != "initial":
        views = gt_views(scene.target_bbox, cfg)
        try:
            cam = views[int(args.view)]
        except (ValueError, IndexError):
            raise DomainError(f"view must be 'initial' or 0..{len(views) - 1}") from None
    img = render_depth(scene, cam)
    write_pgm16(out / "depth.pgm", img.depth)
    print(f"rendered {int(img.hit.sum())} hit pixels to {out / 'depth.pgm'}")


def cmd_fuse(args, cp, out: Path):
    from .bench import gt_views

    cfg = policy_config(cp)
    scene, _ = _scene_for(args, cfg)
    vol = TsdfVolume()
    for cam in gt_views(scene.target_bbox, cfg, args.views):
        vol.integrate(render_depth(scene, cam))
    (out / "tsdf.bin").write_bytes(vol.to_bytes())
    pts = vol.zero_crossings()
    write_ply(out / "surface.ply", pts)
    print(f"fused {args.views} views; {int(vol.observed().sum())} observed voxels, {len(pts)} surface points")


def cmd_train(args, cp, out: Path):
    from .bench import generate_dataset, save_decoder, save_encoder, save_head, train_all, training_log_csv

    dcfg = dataset_config(cp)
    seeds = parse_seeds(cp["dataset"]["scenes"])
    dcfg_depth = depth_train_config(cp)
    want_depth = dcfg_depth.steps > 0
    res = generate_dataset(seeds, dcfg, jobs=args.jobs, keep_images=want_depth)
    ds, samples = res if want_depth else (res, None)
    ds.save(out / "dataset.bin")
    tcfg = train_config(cp)
    result = train_all(ds, tcfg, samples, dcfg_depth, encoder_seed=dcfg.encoder_seed)
    save_head(out / "head.nbvw", result.head)
    save_encoder(out / "encoder.nbvw", result.encoder, ds.provenance)
    (out / "train_log.csv").write_text(training_log_csv(result.history))
    if result.decoder is not None:
        save_decoder(out / "decoder.nbvw", result.decoder, ds.provenance)
        (out / "depth_log.csv").write_text(
            "step,loss\n" + "".join(f"{i},{v:.6f}\n" for i, v in enumerate(result.depth_history))
        )
    best = min((e.val_loss for e in result.history), default=float("nan"))
    print(f"trained on {len(ds)} records; best validation loss {best:.4f}")


def cmd_plan(args, cp, out: Path):
    from .bench import make_head_factory

    cfg = policy_config(cp, args.jobs)
    name = args.policy or "ace-nbv"
    if name not in POLICIES:
        raise ConfigError(f"unknown policy {name!r}; expected one of {', '.join(POLICIES)}")
    scene, cam = _scene_for(args, cfg)
    head = make_head_factory(_head(cp["bench"]["head"]))(scene)
    ep = baseline_policy(name, scene, cam, head, cfg, encoder=_encoder(args, cp), scene_id=args.seed)
    (out / "trace.jsonl").write_text(ep.to_jsonl())
    print(f"outcome={ep.outcome} views={ep.n_views} policy={name} seed={args.seed}")


def cmd_bench(args, cp, out: Path):
    from .bench import run_benchmark

    bcfg = bench_config(cp, args.jobs)
    result = run_benchmark(bcfg, _head(cp["bench"]["head"]), _encoder(args, cp))
    (out / "metrics.csv").write_text(result.csv())
    (out / "table.txt").write_text(result.table())
    tdir = out / "traces"
    tdir.mkdir(exist_ok=True)
    for name, eps in result.episodes.items():
        for e in eps:
            (tdir / f"{name}_{e.scene_id}.jsonl").write_text(e.to_jsonl())
    print(result.table(), end="")


def cmd_aligned(args, cp, out: Path):
    from .bench import aligned_view_experiment

    seeds = parse_seeds(args.scenes)
    rep = aligned_view_experiment(seeds, _head(cp["bench"]["head"]), policy_config(cp), _encoder(args, cp))
    (out / "aligned.csv").write_text(rep.csv())
    f = rep.fraction_lower
    print("aligned error lower in " + ("all scenes tied" if f is None else f"{100 * f:.0f}% of scenes"))


def cmd_viz(args, cp, out: Path):
    if not (args.trace or args.tsdf):
        raise ConfigError("viz needs --trace or --tsdf")
    written = 0
    if args.tsdf:
        try:
            vol = TsdfVolume.from_bytes(Path(args.tsdf).read_bytes())
        except OSError as exc:
            raise DomainError(str(exc)) from None
        write_ply(out / "surface.ply", vol.zero_crossings())
        written += 1
        if args.planes:
            planes = encode(vol, _encoder(args, cp)).planes
            for k, name in enumerate(("xy", "xz", "yz")):
                for c in range(planes.shape[-1]):
                    write_pgm8(out / f"plane_{name}_{c:02d}.pgm", planes[k, :, :, c])
                    written += 1
    if args.trace:
        written += _viz_trace(Path(args.trace), cp, out)
    print(f"wrote {written} files to {out}")


def _viz_trace(path: Path, cp, out: Path) -> int:
    cfg = policy_config(cp)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise DomainError(str(exc)) from None
    recs = []
    for i, line in enumerate(lines, 1):
        try:
            recs.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: line {i}, column {exc.colno}: {exc.msg}") from None
    scenes = [r for r in recs if r.get("kind") == "scene"]
    if not scenes:
        raise FormatError(f"{path}: no scene record (expected on line 1)")
    scene = Scene.from_dict(scenes[0]["scene"])
    bbox: Aabb = scene.target_bbox
    n = 0
    for r in recs:
        if r.get("kind") != "step":
            continue
        cam = Camera(cfg.intrinsics, look_at(r["camera"], bbox.center))
        img = render_depth(scene, cam)
        g = np.array(r.get("grasps") or np.zeros((0, 4)), float).reshape(-1, 4)
        pc = cam.pose.inverse().apply(g[:, :3])
        K = cfg.intrinsics
        z = np.where(pc[:, 2] > 1e-9, pc[:, 2], np.nan)
        pix = np.stack([K.fx * pc[:, 0] / z + K.cx, K.fy * pc[:, 1] / z + K.cy], axis=1)
        ok = np.all(np.isfinite(pix), axis=1)
        write_ppm(out / f"step_{r['step']:02d}.ppm", overlay_grasps(img.depth, pix[ok], g[ok, 3]))
        write_pgm16(out / f"step_{r['step']:02d}.pgm", img.depth)
        n += 2
    return n


COMMANDS = {
    "gen-scenes": cmd_gen_scenes,
    "render": cmd_render,
    "fuse": cmd_fuse,
    "train": cmd_train,
    "plan": cmd_plan,
    "bench": cmd_bench,
    "aligned-exp": cmd_aligned,
    "viz": cmd_viz,
}


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cp = load_config(args.config, _overrides(args))
        if args.command in ("plan", "bench", "aligned-exp"):
            policy_config(cp)  # validate before any output appears
    except ConfigError as exc:
        print(f"nbvgrasp {args.command}: usage error: {exc}", file=sys.stderr)
        return 2
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    np.random.seed(args.seed)  # nothing should rely on it; pinned for safety
    try:
        COMMANDS[args.command](args, cp, out)
    except ConfigError as exc:
        print(f"nbvgrasp {args.command}: usage error: {exc}", file=sys.stderr)
        return 2
    except (DomainError, FormatError, SceneGenerationError, ValueError, OSError) as exc:
        print(f"nbvgrasp {args.command}: error: {exc}", file=sys.stderr)
        _write_manifest(out, args, cp)
        return 1
    _write_manifest(out, args, cp)
    return 0


if __name__ == "__main__":
    sys.exit(main())
