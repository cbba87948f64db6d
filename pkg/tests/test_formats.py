import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from nbvgrasp.formats import (
    FormatError,
    depth_grey,
    overlay_grasps,
    pack_tensors,
    read_pgm16,
    read_ply,
    read_ppm,
    unpack_tensors,
    write_pgm16,
    write_ply,
    write_ppm,
)


def test_pgm16_roundtrip(tmp_path):
    d = np.array([[0.25, np.inf], [1.0, 0.3337]])
    write_pgm16(tmp_path / "d.pgm", d)
    back = read_pgm16(tmp_path / "d.pgm")
    assert back[0, 1] == np.inf
    assert np.allclose(back[np.isfinite(d)], np.round(d[np.isfinite(d)], 3))


def test_pgm16_errors(tmp_path):
    p = tmp_path / "d.pgm"
    write_pgm16(p, np.full((4, 5), 0.5))
    blob = p.read_bytes()
    p.write_bytes(blob[:-3])
    with pytest.raises(FormatError, match="offset"):
        read_pgm16(p)
    p.write_bytes(b"P6" + blob[2:])
    with pytest.raises(FormatError, match="offset 0"):
        read_pgm16(p)
    p.write_bytes(b"P5\n4 x\n65535\n")
    with pytest.raises(FormatError, match="offset"):
        read_pgm16(p)


def test_ppm_roundtrip_and_truncation(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, (6, 7, 3)).astype(np.uint8)
    write_ppm(tmp_path / "a.ppm", img)
    assert np.array_equal(read_ppm(tmp_path / "a.ppm"), img)
    (tmp_path / "b.ppm").write_bytes((tmp_path / "a.ppm").read_bytes()[:-1])
    with pytest.raises(FormatError, match="offset"):
        read_ppm(tmp_path / "b.ppm")


def test_overlay_colors():
    d = np.full((10, 10), 0.5)
    d[0, 0] = np.inf
    rgb = overlay_grasps(d, np.array([[2.0, 2.0], [7.0, 7.0]]), np.array([0.9, 0.1]))
    assert tuple(rgb[2, 2]) == (255, 0, 0)
    assert tuple(rgb[7, 7]) == (0, 0, 255)
    assert tuple(depth_grey(d)[0, 0]) == (0, 0, 0)


def test_ply_roundtrip(tmp_path):
    pts = np.random.default_rng(1).uniform(0, 0.3, (20, 3))
    write_ply(tmp_path / "p.ply", pts)
    assert np.allclose(read_ply(tmp_path / "p.ply"), pts, atol=1e-6)
    (tmp_path / "q.ply").write_text("obj\n")
    with pytest.raises(FormatError):
        read_ply(tmp_path / "q.ply")


@given(st.dictionaries(
    st.text(st.characters(min_codepoint=97, max_codepoint=122), min_size=1, max_size=8),
    hnp.arrays(np.float32, hnp.array_shapes(min_dims=0, max_dims=3, max_side=4),
               elements=st.floats(-1e6, 1e6, width=32)),
    max_size=4,
), st.text(max_size=20))
def test_tensor_roundtrip(tensors, prov):
    t, p = unpack_tensors(pack_tensors(tensors, prov))
    assert p == prov and list(t) == list(tensors)
    for k, v in tensors.items():
        assert t[k].shape == v.shape and np.array_equal(t[k], v)


def test_tensor_corruption_reports_offset():
    blob = pack_tensors({"a": np.ones((3, 4))}, "x")
    with pytest.raises(FormatError, match="offset 0"):
        unpack_tensors(b"ABCD" + blob[4:])
    with pytest.raises(FormatError, match="offset"):
        unpack_tensors(blob[:-5])
    with pytest.raises(FormatError, match="trailing bytes at offset"):
        unpack_tensors(blob + b"\0")
    with pytest.raises(FormatError, match="offset 4"):
        unpack_tensors(blob[:6])
