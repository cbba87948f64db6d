"""Time the compiled kernels against the numpy fallback on desk-scale workloads.

    python benchmarks/bench_kernels.py [--repeat 5] [--seed 3]
"""

import argparse
import timeit

import numpy as np

from nbvgrasp import _backend, _kernels_py
from nbvgrasp.bench import episode_scene, gt_views
from nbvgrasp.scene import render_depth
from nbvgrasp.tsdf import TsdfVolume

try:
    from nbvgrasp import _kernels
except ImportError:
    _kernels = None

KERNELS = ("primitive_sdf", "scene_sdf", "sphere_trace", "tsdf_integrate")


def use(impl):
    for name in KERNELS:
        setattr(_backend, name, getattr(impl, name))


def workloads(seed: int):
    scene, cam = episode_scene(seed)
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0, 0.3, (65_536, 3))
    views = gt_views(scene.target_bbox)
    images = [render_depth(scene, c) for c in views]

    def fuse():
        vol = TsdfVolume()
        for im in images:
            vol.integrate(im)
        return vol.distance

    return {
        "scene_sdf (65k points)": lambda: _backend.scene_sdf(scene.table, scene.plane_height, pts)[0],
        "render_depth (80x60)": lambda: render_depth(scene, cam).depth,
        "render_depth x12 views": lambda: np.stack([render_depth(scene, c).depth for c in views]),
        "tsdf fuse 12 views (40^3)": fuse,
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=3)
    args = ap.parse_args()
    if _kernels is None:
        print("compiled extension not built; only the numpy fallback is available")
        return
    work = workloads(args.seed)
    print(f"{'workload':<28}{'python ms':>11}{'cython ms':>11}{'speedup':>9}  max |diff|")
    for name, fn in work.items():
        row = {}
        for label, impl in (("python", _kernels_py), ("cython", _kernels)):
            use(impl)
            out = fn()
            best = min(timeit.repeat(fn, number=1, repeat=args.repeat))
            row[label] = (best, out)
        use(_kernels)
        a, b = row["python"][1], row["cython"][1]
        fin = np.isfinite(a) & np.isfinite(b)
        diff = float(np.max(np.abs(a[fin] - b[fin]))) if fin.any() else 0.0
        same_miss = bool(np.array_equal(np.isfinite(a), np.isfinite(b)))
        tp, tc = row["python"][0], row["cython"][0]
        print(f"{name:<28}{1e3 * tp:>11.2f}{1e3 * tc:>11.2f}{tp / tc:>8.1f}x  {diff:.1e}"
              + ("" if same_miss else "  (hit masks differ)"))


if __name__ == "__main__":
    main()
