import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nbvgrasp.affordance import ConstantHead, OracleHead, imagine_affordances
from nbvgrasp.bench import episode_scene
from nbvgrasp.geometry import Aabb, angle_between, normalize
from nbvgrasp.policy import (
    Episode,
    PolicyConfig,
    baseline_policy,
    choose_view,
    compute_metrics,
    evaluate_candidate,
    fibonacci_cap,
    fixed_trajectory,
    generate_candidates,
    min_pairwise_angle,
    top_camera,
    visible_unobserved,
)
from nbvgrasp.scene import generate_bridge_scene, render_depth
from nbvgrasp.triplane import EncoderWeights, encode
from nbvgrasp.tsdf import TsdfVolume

from oracles import visible_unobserved_bruteforce

BOX = Aabb([0.12, 0.13, 0.0], [0.18, 0.17, 0.05])


# --- candidates ---------------------------------------------------------------


def test_candidates_look_at_bbox_center():
    cands = generate_candidates(BOX)
    assert len(cands) == 16
    for c in cands:
        # optical axis passes through the bbox center
        axis = c.camera.pose.rotation[:, 2]
        to_c = BOX.center - c.position
        assert np.linalg.norm(np.cross(axis, normalize(to_c))) < 1e-6
        assert np.linalg.norm(to_c) == pytest.approx(0.40)
        assert np.allclose(c.view, normalize(to_c))


def test_zero_cap_gives_single_top_candidate():
    (c,) = generate_candidates(BOX, PolicyConfig(cap_deg=0.0))
    assert np.allclose(c.view, [0, 0, -1], atol=1e-9)


def test_fibonacci_cap_bounds_and_spacing():
    d = fibonacci_cap(16, 75.0)
    assert np.allclose(np.linalg.norm(d, axis=1), 1)
    assert np.all(d[:, 2] >= np.cos(np.radians(75)) - 1e-12)
    cands = generate_candidates(BOX)
    # enumerate all pairs independently of min_pairwise_angle
    worst = min(angle_between(a.view, b.view) for i, a in enumerate(cands) for b in cands[i + 1:])
    assert min_pairwise_angle(cands) == pytest.approx(worst, abs=1e-9)
    assert worst > np.radians(10)


# --- scoring ------------------------------------------------------------------


def observed_planes(scene, cam):
    vol = TsdfVolume()
    vol.integrate(render_depth(scene, cam))
    return vol, encode(vol, EncoderWeights.init())


def test_constant_head_score():
    q, g = evaluate_candidate(None, ConstantHead(0.7), BOX, [0, 0, -1])
    assert q == 0.7 and g.quality == 0.7


def test_evaluate_candidate_is_bruteforce_max(packed_scene):
    scene, cam = packed_scene
    head = OracleHead(scene)
    for c in generate_candidates(scene.target_bbox)[::5]:
        q, _ = evaluate_candidate(None, head, scene.target_bbox, c)
        grasps = imagine_affordances(None, head, scene.target_bbox, c.view, 64)
        assert q == max(g.quality for g in grasps)


def test_bridge_side_views_beat_top(bridge_scene):
    head = OracleHead(bridge_scene)
    bb = bridge_scene.target_bbox
    top, _ = evaluate_candidate(None, head, bb, [0, 0, -1])
    assert top == 0.0
    scores = [evaluate_candidate(None, head, bb, c)[0] for c in generate_candidates(bb)]
    assert max(scores) == 1.0


# scores on an exact grid so the transforms stay strictly monotone in floating point
@given(st.lists(st.integers(-40, 40).map(lambda k: k / 8), min_size=2, max_size=12),
       st.sampled_from(["exp", "cube", "affine"]))
def test_choose_view_monotone_invariance(scores, kind):
    views = list(fibonacci_cap(len(scores), 75.0) * -1)
    cur = np.array([0.0, 0.0, -1.0])
    f = {"exp": np.exp, "cube": lambda x: x ** 3, "affine": lambda x: 3 * x + 2}[kind]
    assert choose_view(scores, views, cur) == choose_view(list(f(np.array(scores))), views, cur)


def test_choose_view_tie_breaks_on_travel():
    views = [normalize([1, 0, -1]), normalize([0.1, 0, -1]), normalize([0, 1, -1])]
    assert choose_view([0.5, 0.5, 0.2], views, [0, 0, -1]) == 1
    assert choose_view([0.5, 0.5, 0.5], [views[0], views[0], views[0]], [0, 0, -1]) == 0


# --- episodes -----------------------------------------------------------------


def test_qmax_zero_executes_on_first_view(packed_scene):
    scene, cam = packed_scene
    ep = baseline_policy("ace-nbv", scene, cam, ConstantHead(0.6), PolicyConfig(q_max=0.0))
    assert ep.n_views == 1
    assert ep.outcome in ("success", "failure")


def test_tmax_one_low_quality_aborts(packed_scene):
    scene, cam = packed_scene
    ep = baseline_policy("ace-nbv", scene, cam, ConstantHead(0.2), PolicyConfig(t_max=1))
    assert ep.n_views == 1 and ep.outcome == "abort" and ep.grasp is None


def test_low_quality_runs_to_tmax(packed_scene):
    scene, cam = packed_scene
    ep = baseline_policy("ace-nbv", scene, cam, ConstantHead(0.2), PolicyConfig(t_max=3))
    assert ep.n_views == 3
    assert ep.outcome == "abort"


@pytest.mark.parametrize("seed", range(10))
def test_oracle_head_bridge_episode(seed):
    scene = generate_bridge_scene(seed)
    cfg = PolicyConfig()
    ep = baseline_policy("ace-nbv", scene, top_camera(cfg), OracleHead(scene), cfg, scene_id=seed)
    assert ep.outcome == "success" and ep.n_views <= 3
    assert ep.n_views <= cfg.t_max
    top = baseline_policy("top-view", scene, top_camera(cfg), OracleHead(scene), cfg)
    assert top.outcome != "success"


def test_trace_records(packed_scene):
    scene, cam = packed_scene
    ep = baseline_policy("ace-nbv", scene, cam, OracleHead(scene), PolicyConfig(t_max=2), scene_id=3)
    recs = ep.records()
    assert recs[0]["kind"] == "scene" and recs[-1]["kind"] == "outcome"
    assert sum(r["kind"] == "step" for r in recs) == ep.n_views
    assert ep.to_jsonl() == ep.to_jsonl()


# --- baselines ----------------------------------------------------------------


def test_fixed_traj_four_views(packed_scene):
    scene, cam = packed_scene
    ep = baseline_policy("fixed-traj", scene, cam, ConstantHead(0.2))
    assert ep.n_views == 4 and ep.outcome == "abort"
    cams = fixed_trajectory(scene.target_bbox)
    elev = [np.degrees(np.arcsin((c.position - scene.target_bbox.center)[2] / 0.4)) for c in cams]
    assert np.allclose(elev, 30.0)


def test_top_camera_position():
    cam = top_camera()
    assert np.allclose(cam.position, [0.15, 0.15, 0.55])
    assert np.allclose(cam.pose.rotation[:, 2], [0, 0, -1], atol=1e-12)


def test_unknown_policy():
    with pytest.raises(ValueError):
        baseline_policy("random", None, None, ConstantHead())


def test_geometry_gain_count_matches_bruteforce(packed_scene):
    scene, cam = packed_scene
    vol, _ = observed_planes(scene, cam)
    bb = scene.target_bbox
    for c in generate_candidates(bb)[::4]:
        assert visible_unobserved(vol, bb, c.camera) == visible_unobserved_bruteforce(vol, bb, c.camera)


def test_geometry_gain_empty_volume_counts_all_in_view():
    vol = TsdfVolume()
    bb = Aabb([0.14, 0.14, 0.02], [0.16, 0.16, 0.04])
    cam = generate_candidates(bb)[0].camera
    n = visible_unobserved(vol, bb, cam)
    assert n == visible_unobserved_bruteforce(vol, bb, cam) > 0


# --- metrics ------------------------------------------------------------------


def eps(*outcomes):
    return [Episode(i, "x", outcome=o) for i, o in enumerate(outcomes)]


def test_metrics_example():
    m = compute_metrics(eps("success", "success", "success", "failure", "abort"))
    assert m["SR"] == pytest.approx(0.6) and m["FR"] == pytest.approx(0.2) and m["AR"] == pytest.approx(0.2)


def test_metrics_all_abort():
    m = compute_metrics(eps("abort", "abort"))
    assert m["SR"] == 0 and m["FR"] == 0 and m["AR"] == 1


def test_metrics_empty():
    with pytest.raises(ValueError):
        compute_metrics([])


@given(st.lists(st.sampled_from(["success", "failure", "abort"]), min_size=1, max_size=200))
def test_rates_sum_to_one(outcomes):
    m = compute_metrics(eps(*outcomes))
    assert m["SR"] + m["FR"] + m["AR"] == 1.0
    assert min(m["SR"], m["FR"], m["AR"]) >= 0


@pytest.mark.parametrize("t_max", [1, 2, 4])
def test_tmax_never_exceeded(t_max):
    cfg = PolicyConfig(t_max=t_max)
    for seed in (0, 1):
        scene, cam = episode_scene(seed, cfg)
        ep = baseline_policy("ace-nbv", scene, cam, ConstantHead(0.3), cfg)
        assert ep.n_views <= t_max
        ep = baseline_policy("geometry-gain", scene, cam, ConstantHead(0.3), cfg)
        assert ep.n_views <= t_max


def test_config_validation():
    with pytest.raises(ValueError):
        PolicyConfig(q_max=1.5)
    with pytest.raises(ValueError):
        PolicyConfig(t_max=0)
    with pytest.raises(ValueError):
        PolicyConfig(q_exec=0)
