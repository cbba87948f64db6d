import numpy as np
import pytest

from nbvgrasp.geometry import Pose, quat_about_z
from nbvgrasp.grasping import Grasp, GraspChecker, GripperConfig, grasp_axes, grasp_feasible
from nbvgrasp.scene import Scene, SdfPrimitive

UP = np.array([1.0, 0, 0, 0])


def lone_cylinder(extra=()):
    cyl = SdfPrimitive("cylinder", (0.02, 0.04), Pose(UP, [0.15, 0.15, 0.04]))
    return Scene((*extra, cyl)).with_target(len(extra))


def test_side_grasp_on_lone_cylinder_succeeds():
    s = lone_cylinder()
    # approach along +x, close along y through the axis
    g = Grasp(1.0, [0.15, 0.15, 0.05], [1, 0, 0], 0.0, 0.04)
    c, _, a = grasp_axes(g.view, g.rotation)
    assert abs(c[2]) < 1e-12 and np.allclose(a, [1, 0, 0])
    f = grasp_feasible(s, g)
    assert f.success, f.reasons
    assert f.span == pytest.approx(0.04, abs=1e-3)


def test_neighbor_in_finger_path_is_collision():
    wall = SdfPrimitive("box", (0.01, 0.01, 0.04), Pose(UP, [0.15, 0.19, 0.04]))
    s = lone_cylinder((wall,))
    # closing axis along y sweeps the +y finger into the wall
    rot = next(r for r in np.linspace(0, np.pi, 64, endpoint=False)
               if abs(grasp_axes([1, 0, 0], r)[0][1]) > 0.999)
    f = grasp_feasible(s, Grasp(1.0, [0.15, 0.15, 0.05], [1, 0, 0], rot, 0.04))
    assert not f.success
    assert "collision" in f.reasons


def test_center_outside_target_is_not_antipodal():
    s = lone_cylinder()
    f = grasp_feasible(s, Grasp(1.0, [0.25, 0.25, 0.05], [1, 0, 0], 0.0, 0.04))
    assert "antipodal" in f.reasons


def test_top_down_grasp_hits_plane_when_low():
    s = lone_cylinder()
    # fingers reach below the support plane
    f = grasp_feasible(s, Grasp(1.0, [0.15, 0.15, 0.005], [0, 0, -1], 0.0, 0.04))
    assert not f.success


def test_grasp_validation():
    with pytest.raises(ValueError):
        Grasp(1.5, [0, 0, 0], [1, 0, 0], 0.0, 0.01)
    with pytest.raises(ValueError):
        Grasp(0.5, [0, 0, 0], [1, 0, 0], 0.0, -0.01)
    g = Grasp(0.5, [0, 0, 0], [2, 0, 0], 4.0, 0.01)
    assert np.allclose(g.view, [1, 0, 0])
    assert 0 <= g.rotation < np.pi


def test_rotation_period_pi():
    s = lone_cylinder()
    a = grasp_feasible(s, Grasp(1.0, [0.15, 0.15, 0.05], [1, 0, 0], 0.3, 0.04))
    b = grasp_feasible(s, Grasp(1.0, [0.15, 0.15, 0.05], [1, 0, 0], 0.3 + np.pi, 0.04))
    assert a == b


def test_first_success_matches_checks():
    s = lone_cylinder()
    chk = GraspChecker(s)
    angles = np.arange(8) * np.pi / 8
    ok, r, span = chk.first_success([0.15, 0.15, 0.05], np.array([1.0, 0, 0]), angles)
    assert ok
    first = next(a for a in angles if chk.check(Grasp(1.0, [0.15, 0.15, 0.05], [1, 0, 0], a, 0)).success)
    assert r == pytest.approx(first)


def test_random_grasps_match_fine_checker(packed_scene):
    scene, _ = packed_scene
    rng = np.random.default_rng(0)
    coarse = GraspChecker(scene)
    fine = GraspChecker(scene, GripperConfig().finer(10))
    bb = scene.target_bbox
    agree, n_success = 0, 0
    for _ in range(200):
        center = rng.uniform(bb.lo, bb.hi)
        v = rng.normal(size=3)
        v[2] = -abs(v[2])
        g = Grasp(1.0, center, v, rng.uniform(0, np.pi), 0.04)
        a, b = coarse.check(g), fine.check(g)
        agree += a.success == b.success
        n_success += b.success
    assert agree == 200
    assert n_success > 0


def test_yawed_box_symmetry():
    box = SdfPrimitive("box", (0.02, 0.015, 0.03), Pose(quat_about_z(0.4), [0.15, 0.15, 0.03]))
    s = Scene((box,)).with_target(0)
    chk = GraspChecker(s)
    ok, _, span = chk.first_success([0.15, 0.15, 0.035], np.array([0, 0, -1.0]), np.arange(16) * np.pi / 16)
    assert ok
    assert span <= GripperConfig().max_opening
