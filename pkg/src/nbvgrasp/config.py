"""INI-style run configuration.

Every key has a default; a config file may override any of them. Unknown
sections or keys, and keys left empty, are usage errors.
"""

from __future__ import annotations

import configparser
import io

from .affordance import TrainConfig
from .bench import PAIR_KINDS, BenchConfig, DatasetConfig
from .neural_render import DepthTrainConfig, RenderConfig
from .policy import POLICIES, PolicyConfig

DEFAULTS: dict[str, dict[str, str]] = {
    "policy": {
        "q_max": "0.95",
        "t_max": "8",
        "n_candidates": "16",
        "radius": "0.40",
        "cap_deg": "75",
        "q_exec": "0.5",
        "n_grasps": "64",
        "visited_deg": "10",
        "width": "80",
        "height": "60",
        "fov_deg": "60",
    },
    "dataset": {
        "scenes": "0-49",
        "n_views": "12",
        "grasps_per_pair": "80",
        "kinds": ",".join(PAIR_KINDS),
        "encoder_seed": "0",
    },
    "train": {
        "epochs": "30",
        "lr": "2e-4",
        "batch_size": "128",
        "val_fraction": "0.1",
        "seed": "0",
        "depth_steps": "0",
        "depth_rays": "128",
    },
    "bench": {
        "seeds": "1000-1099",
        "policies": ",".join(POLICIES),
        "head": "oracle",
    },
}


class ConfigError(ValueError):
    pass


def parse_seeds(text: str) -> tuple[int, ...]:
    """"3,5,10-12" -> (3, 5, 10, 11, 12); seeds are non-negative."""
    out: list[int] = []
    for part in text.replace(" ", "").split(","):
        if not part:
            continue
        a, _, b = part.partition("-")
        out.extend(range(int(a), int(b) + 1) if b else [int(a)])
    return tuple(out)


def load_config(path=None, overrides: dict[str, dict[str, str]] | None = None) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    cp.read_dict(DEFAULTS)
    if path is not None:
        user = configparser.ConfigParser(interpolation=None)
        try:
            with open(path) as fh:
                user.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        unknown = [
            f"{s}.{k}" if s in DEFAULTS else f"[{s}]"
            for s in user.sections()
            for k in (user[s] if s in DEFAULTS else [None])
            if s not in DEFAULTS or k not in DEFAULTS[s]
        ]
        if unknown:
            raise ConfigError("unknown config keys: " + ", ".join(sorted(set(unknown))))
        cp.read_dict({s: dict(user[s]) for s in user.sections()})
    for sec, kv in (overrides or {}).items():
        for k, v in kv.items():
            cp[sec][k] = str(v)
    missing = [f"{s}.{k}" for s in cp.sections() for k, v in cp[s].items() if v.strip() == ""]
    if missing:
        raise ConfigError("missing config values: " + ", ".join(missing))
    return cp


def dump_config(cp: configparser.ConfigParser) -> str:
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def _get(cp, sec, key, conv):
    try:
        return conv(cp[sec][key])
    except ValueError as exc:
        raise ConfigError(f"bad value for {sec}.{key}: {cp[sec][key]!r} ({exc})") from None


def policy_config(cp, jobs: int = 1) -> PolicyConfig:
    p = "policy"
    try:
        return PolicyConfig(
            q_max=_get(cp, p, "q_max", float), t_max=_get(cp, p, "t_max", int),
            n_candidates=_get(cp, p, "n_candidates", int), radius=_get(cp, p, "radius", float),
            cap_deg=_get(cp, p, "cap_deg", float), q_exec=_get(cp, p, "q_exec", float),
            n_grasps=_get(cp, p, "n_grasps", int), visited_deg=_get(cp, p, "visited_deg", float),
            width=_get(cp, p, "width", int), height=_get(cp, p, "height", int),
            fov_deg=_get(cp, p, "fov_deg", float), jobs=jobs,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def dataset_config(cp) -> DatasetConfig:
    d = "dataset"
    kinds = tuple(k.strip() for k in cp[d]["kinds"].split(",") if k.strip())
    bad = [k for k in kinds if k not in PAIR_KINDS]
    if bad:
        raise ConfigError(f"unknown pair kinds: {', '.join(bad)}")
    return DatasetConfig(
        n_views=_get(cp, d, "n_views", int), grasps_per_pair=_get(cp, d, "grasps_per_pair", int),
        kinds=kinds, encoder_seed=_get(cp, d, "encoder_seed", int), policy=policy_config(cp),
    )


def train_config(cp) -> TrainConfig:
    t = "train"
    return TrainConfig(
        epochs=_get(cp, t, "epochs", int), lr=_get(cp, t, "lr", float),
        batch_size=_get(cp, t, "batch_size", int), val_fraction=_get(cp, t, "val_fraction", float),
        seed=_get(cp, t, "seed", int),
    )


def depth_train_config(cp) -> DepthTrainConfig:
    t = "train"
    return DepthTrainConfig(
        steps=_get(cp, t, "depth_steps", int), lr=_get(cp, t, "lr", float), seed=_get(cp, t, "seed", int),
        render=RenderConfig(n_rays=_get(cp, t, "depth_rays", int)),
    )


def bench_config(cp, jobs: int = 1) -> BenchConfig:
    b = "bench"
    pols = tuple(p.strip() for p in cp[b]["policies"].split(",") if p.strip())
    bad = [p for p in pols if p not in POLICIES]
    if bad:
        raise ConfigError(f"unknown policies: {', '.join(bad)}")
    try:
        return BenchConfig(seeds=_get(cp, b, "seeds", parse_seeds), policies=pols,
                           policy=policy_config(cp, jobs), jobs=jobs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
