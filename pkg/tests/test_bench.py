import numpy as np
import pytest

from nbvgrasp.affordance import AffordanceHead, TrainConfig, predict
from nbvgrasp.bench import (
    PAIR_KINDS,
    BenchConfig,
    Dataset,
    DatasetConfig,
    _pair_specs,
    aligned_view_experiment,
    balance,
    generate_dataset,
    gt_views,
    episode_scene,
    load_decoder,
    load_encoder,
    load_head,
    misaligned_view,
    run_benchmark,
    save_decoder,
    save_encoder,
    save_head,
    train_all,
)
from nbvgrasp.formats import FormatError
from nbvgrasp.geometry import angle_between, normalize
from nbvgrasp.neural_render import SdfDecoder, decode_sdf
from nbvgrasp.policy import PolicyConfig
from nbvgrasp.scene import render_depth
from nbvgrasp.triplane import EncoderWeights
from nbvgrasp.tsdf import TsdfVolume


@pytest.fixture(scope="module")
def small_ds():
    return generate_dataset(range(3))


def test_dataset_balanced(small_ds):
    frac = small_ds.success.mean()
    assert 0.4 <= frac <= 0.6
    assert small_ds.features.shape[1] == 963
    assert set(np.unique(small_ds.kinds)) <= set(range(len(PAIR_KINDS)))


def test_dataset_view_columns(small_ds):
    # the head input view equals the label's grasp view
    assert np.allclose(small_ds.features[:, :3], small_ds.labels[:, 3:6], atol=1e-6)
    scene, _ = episode_scene(int(small_ds.labels[0, 9]))
    axes = np.array([c.axis for c in gt_views(scene.target_bbox)])
    front = small_ds.labels[(small_ds.kinds == 0) & (small_ds.labels[:, 9] == small_ds.labels[0, 9])]
    for v in front[:, 3:6]:
        assert np.min(np.linalg.norm(axes - v, axis=1)) < 1e-6


def test_pair_specs():
    scene, _ = episode_scene(1)
    views = gt_views(scene.target_bbox)
    cfg = DatasetConfig()
    specs = _pair_specs(np.random.default_rng(5), views, cfg)
    assert [s.kind for s in specs] == list(PAIR_KINDS)
    front, side, multi = specs
    assert np.allclose(front.grasp_view, views[front.observe[0]].axis)
    assert angle_between(side.grasp_view, views[side.observe[0]].axis) > np.radians(cfg.side_exclusion_deg)
    assert len(multi.observe) == cfg.multi_views and len(set(multi.observe)) == cfg.multi_views
    single, fused = TsdfVolume(), TsdfVolume()
    images = {i: render_depth(scene, views[i]) for i in multi.observe}
    single.integrate(images[multi.observe[0]])
    for i in multi.observe:
        fused.integrate(images[i])
    assert fused.observed().sum() >= single.observed().sum()


def test_balance_indices():
    lab = np.zeros((10, 12))
    lab[[1, 4], 8] = 1
    keep = balance(lab, np.random.default_rng(0))
    assert len(keep) == 4 and {1, 4} <= set(keep.tolist())


def test_dataset_generation_deterministic(small_ds):
    again = generate_dataset(range(3), jobs=2)
    assert again.to_bytes() == small_ds.to_bytes()


def test_dataset_roundtrip(tmp_path, small_ds):
    p = tmp_path / "d.bin"
    small_ds.save(p)
    back = Dataset.load(p)
    assert np.array_equal(back.features, small_ds.features)
    assert np.array_equal(back.labels, small_ds.labels)
    assert back.provenance == small_ds.provenance
    blob = p.read_bytes()
    with pytest.raises(FormatError, match="offset"):
        Dataset.from_bytes(blob[:-7])
    with pytest.raises(FormatError, match="offset 0"):
        Dataset.from_bytes(b"XXXX" + blob[4:])


def test_train_all_small(small_ds):
    res = train_all(small_ds, TrainConfig(epochs=2))
    assert len(res.history) == 2
    assert "epochs=2" in res.head.provenance


# --- weights ------------------------------------------------------------------


def test_head_roundtrip(tmp_path):
    head = AffordanceHead.init(seed=4)
    rng = np.random.default_rng(0)
    head.input_mean = rng.normal(size=963)
    head.input_std = rng.uniform(0.5, 2, 963)
    head.provenance = "unit"
    save_head(tmp_path / "h.bin", head)
    back = load_head(tmp_path / "h.bin")
    x = rng.normal(size=960)
    v = normalize([0.1, 0.2, -1])
    # weights are stored as float32
    for k, w in head.net.params.items():
        assert np.array_equal(back.net.params[k], w.astype(np.float32))
    assert np.allclose(predict(back, v, x[:96], x[96:]), predict(head, v, x[:96], x[96:]), atol=1e-5)
    assert back.provenance == "unit"
    save_head(tmp_path / "h2.bin", back)
    assert (tmp_path / "h2.bin").read_bytes() == (tmp_path / "h.bin").read_bytes()


def test_encoder_and_decoder_roundtrip(tmp_path):
    enc = EncoderWeights.init(seed=2)
    save_encoder(tmp_path / "e.bin", enc)
    back = load_encoder(tmp_path / "e.bin")
    for k, v in enc.as_dict().items():
        assert np.array_equal(back.as_dict()[k], v.astype(np.float32))
    dec = SdfDecoder.init(seed=1)
    save_decoder(tmp_path / "s.bin", dec)
    d2 = load_decoder(tmp_path / "s.bin")
    f = np.random.default_rng(1).normal(size=(7, 96))
    assert np.allclose(decode_sdf(d2, f), decode_sdf(dec, f), atol=1e-5)
    assert d2.log_s == pytest.approx(dec.log_s, rel=1e-6)


# --- benchmark ----------------------------------------------------------------


@pytest.fixture(scope="module")
def small_bench():
    cfg = BenchConfig(seeds=tuple(range(10)), policies=("initial-view", "fixed-traj"))
    return cfg, run_benchmark(cfg, "oracle")


def test_benchmark_rows(small_bench):
    _, res = small_bench
    rows = res.csv().splitlines()
    assert sum(r.startswith("episode,") for r in rows) == 20
    assert sum(r.startswith("summary,") for r in rows) == 2
    assert res.summary["fixed-traj"]["views"] == 4.0
    assert res.summary["initial-view"]["views"] == 1.0
    for m in res.summary.values():
        assert m["SR"] + m["FR"] + m["AR"] == 1.0
    assert "4.00" in res.table()


def test_benchmark_deterministic_with_threads(small_bench):
    cfg, res = small_bench
    again = run_benchmark(BenchConfig(seeds=cfg.seeds, policies=cfg.policies, jobs=3), "oracle")
    assert again.csv() == res.csv()


def test_bench_config_validation():
    with pytest.raises(ValueError):
        BenchConfig(seeds=())
    with pytest.raises(ValueError):
        BenchConfig(seeds=(1, 1))


# --- aligned-view experiment --------------------------------------------------


def test_misaligned_view_geometry():
    v = normalize([0.3, -0.8, -0.6])
    m = misaligned_view(v)
    assert angle_between(v, m) == pytest.approx(np.pi / 2)
    assert m[2] == pytest.approx(v[2])
    with pytest.raises(ValueError):
        misaligned_view(normalize([0.1, 0, -1]))


def test_aligned_experiment_oracle_ties():
    rep = aligned_view_experiment(range(2), "oracle")
    assert np.all(rep.aligned == 0) and np.all(rep.misaligned == 0)
    assert rep.fraction_lower is None
    assert "tie" in rep.csv()


def test_aligned_experiment_constant_head_equal():
    rep = aligned_view_experiment(range(2), "constant")
    assert np.array_equal(rep.aligned, rep.misaligned)
    assert np.allclose(rep.aligned, 0.5)


def test_benchmark_uses_policy_config():
    cfg = BenchConfig(seeds=(0,), policies=("initial-view",), policy=PolicyConfig(q_exec=2.0))
    res = run_benchmark(cfg, "oracle")
    assert res.episodes["initial-view"][0].outcome == "abort"
