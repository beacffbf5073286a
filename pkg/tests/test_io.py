import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from freqmamba.geometry import PointCloud
from freqmamba.io import (EDGE_FRACTION, SHAPE_KINDS, ConfigError, RunConfig, SyntheticShape, XyzFormatError,
                          read_xyz, stack_clouds, synth_dataset, write_ply, write_xyz)

# ---------------------------------------------------------------- xyz


def test_xyz_round_trip(tmp_path, rng):
    pts = rng.standard_normal((50, 3)) * 1e3
    write_xyz(pts, tmp_path / "a.xyz")
    got = read_xyz(tmp_path / "a.xyz")
    np.testing.assert_allclose(got.coords, pts, rtol=0, atol=1e-9)
    assert got.features is None


@given(st.lists(st.tuples(*[st.floats(-1e6, 1e6, allow_nan=False)] * 3), min_size=1, max_size=20))
def test_xyz_round_trip_exact_property(tmp_path_factory, rows):
    path = tmp_path_factory.mktemp("xyz") / "p.xyz"
    pts = np.array(rows, dtype=np.float64)
    write_xyz(pts, path)
    assert np.array_equal(read_xyz(path).coords, pts)


def test_four_columns_fill_scores(tmp_path, rng):
    pts, s = rng.random((6, 3)), rng.random(6)
    write_xyz(pts, tmp_path / "s.xyz", scores=s)
    pc = read_xyz(tmp_path / "s.xyz")
    np.testing.assert_allclose(pc.features[:, 0], s, atol=1e-12)
    # scores carried by the cloud itself are written back
    write_xyz(pc, tmp_path / "t.xyz")
    assert (tmp_path / "t.xyz").read_text() == (tmp_path / "s.xyz").read_text()


def test_comments_and_blank_lines(tmp_path):
    (tmp_path / "c.xyz").write_text("# header\n\n1 2 3  # tail\n4 5 6\n")
    assert np.array_equal(read_xyz(tmp_path / "c.xyz").coords, [[1, 2, 3], [4, 5, 6]])


@pytest.mark.parametrize("text,line", [
    ("", None),
    ("# only a comment\n", None),
    ("1 2 3\n1 2\n", 2),
    ("1 2 3\n1 2 3 4\n", 2),
    ("1 2 3\n\n1 x 3\n", 3),
    ("1 2 nan\n", 1),
    ("1 2 3 4 5\n", 1),
])
def test_malformed_files_name_the_line(tmp_path, text, line):
    path = tmp_path / "bad.xyz"
    path.write_text(text)
    with pytest.raises(XyzFormatError) as info:
        read_xyz(path)
    if line is None:
        assert "no points" in str(info.value)
    else:
        assert f":{line}:" in str(info.value)


def test_ply_header_and_payload(tmp_path, rng):
    pts = rng.random((5, 3))
    write_ply(pts, tmp_path / "a.ply")
    raw = (tmp_path / "a.ply").read_bytes()
    head, body = raw.split(b"end_header\n", 1)
    assert b"format binary_little_endian 1.0" in head and b"element vertex 5" in head
    vals = struct.unpack("<15d", body)
    assert np.array_equal(np.array(vals).reshape(5, 3), pts)


# ---------------------------------------------------------------- run config

def test_config_defaults():
    c = RunConfig()
    assert (c.k, c.zeta, c.tau, c.T, c.depth, c.D, c.M, c.N, c.batch, c.lr) == \
        (32, 0.875, 50, 1000, 8, 512, 256, 2048, 32, 2e-4)
    m = c.model_config()
    assert (m.n_points, m.n_latent, m.latent_dim, m.curves) == (2048, 256, 512, ("z", "z_trans"))


def test_config_round_trip_idempotent():
    c = RunConfig(shape="torus", N=64, M=16, D=16, depth=1, lr=3.5e-4, zeta=0.5, seed=9)
    text = c.to_text()
    back = RunConfig.from_text(text)
    assert back == c and back.to_text() == text


@given(st.floats(1e-8, 1.0), st.integers(1, 10 ** 6), st.floats(0.0, 1.0))
def test_config_round_trip_property(lr, seed, zeta):
    c = RunConfig(lr=lr, seed=seed, zeta=zeta)
    assert RunConfig.from_text(c.to_text()) == c


def test_config_partial_text_and_comments(tmp_path):
    (tmp_path / "r.cfg").write_text("# desk run\nshape = sphere\nN = 128  # points\n\nM = 32\n")
    c = RunConfig.load(tmp_path / "r.cfg")
    assert (c.shape, c.N, c.M, c.D) == ("sphere", 128, 32, 512)
    c.save(tmp_path / "s.cfg")
    assert RunConfig.load(tmp_path / "s.cfg") == c


@pytest.mark.parametrize("text,msg", [
    ("colour = red\n", "unknown key"),
    ("N = 64\nN = 32\n", "duplicate key"),
    ("N = many\n", "expects int"),
    ("lr = inf\n", "expects float"),
    ("just words\n", "key = value"),
    ("shape = teapot\n", "unknown shape"),
    ("M = 4096\n", "M <= N"),
    ("epochs = 0\n", "epochs"),
])
def test_config_rejects_bad_text(text, msg):
    with pytest.raises(ConfigError, match=msg):
        RunConfig.from_text(text)


# ---------------------------------------------------------------- synthetic shapes

@pytest.mark.parametrize("kind", SHAPE_KINDS)
def test_dataset_deterministic_and_normalized(kind):
    a = synth_dataset(kind, 3, 100, seed=4, as_array=True)
    b = synth_dataset(kind, 3, 100, seed=4, as_array=True)
    c = synth_dataset(kind, 3, 100, seed=5, as_array=True)
    assert a.shape == (3, 100, 3) and a.tobytes() == b.tobytes() and not np.array_equal(a, c)
    assert a.min() >= 0 and a.max() <= 1
    # each cloud touches both faces along its longest axis
    ext = a.max(axis=1) - a.min(axis=1)
    np.testing.assert_allclose(ext.max(axis=1), 1.0, atol=1e-12)
    # instances differ from one another
    assert not np.array_equal(a[0], a[1])


def test_dataset_returns_point_clouds():
    out = synth_dataset("sphere", 2, 30)
    assert len(out) == 2 and all(isinstance(c, PointCloud) and c.normalized for c in out)
    with pytest.raises(ValueError):
        synth_dataset("sphere", 0, 30)
    with pytest.raises(ValueError):
        synth_dataset("teapot", 1, 30)


def test_sphere_points_on_surface(rng):
    for _ in range(5):
        shape = SyntheticShape.draw("sphere", rng)
        pts = shape.sample(500)
        r = np.linalg.norm(pts - shape.params["center"], axis=1)
        assert np.abs(r - shape.params["radius"]).max() < 1e-6


def edge_distance(pts, sides):
    # distance to the nearest of the 12 box edges: the two smallest per-axis gaps to a face
    gap = np.minimum(np.abs(pts), np.abs(sides - pts))
    two = np.sort(gap, axis=1)[:, :2]
    return np.sqrt((two ** 2).sum(axis=1))


def test_cube_edges_fraction(rng):
    for _ in range(5):
        shape = SyntheticShape.draw("cube_edges", rng)
        sides = np.asarray(shape.params["sides"])
        pts = shape.sample(1000)
        assert pts.min() >= 0 and np.all(pts <= sides)
        near = edge_distance(pts, sides) < 0.05
        assert near.mean() >= 0.6
        assert near[:int(round(EDGE_FRACTION * 1000))].all()
    # the fraction survives normalization (edges scale by at most 1 / 0.6)
    unit = synth_dataset("cube_edges", 4, 1000, seed=1, as_array=True)
    for c in unit:
        assert (edge_distance(c - c.min(axis=0), c.max(axis=0) - c.min(axis=0)) < 0.05).mean() >= 0.6


def test_torus_and_planes_geometry(rng):
    t = SyntheticShape.draw("torus", rng)
    p = t.sample(400)
    ring = np.hypot(p[:, 0], p[:, 1])
    np.testing.assert_allclose(np.hypot(ring - t.params["major"], p[:, 2]), t.params["minor"], atol=1e-12)
    s = SyntheticShape.draw("two_planes", rng)
    z = s.sample(400)[:, 2]
    assert set(np.unique(z)) == {0.0, s.params["gap"]}
    with pytest.raises(ValueError):
        SyntheticShape.draw("teapot", rng)


def test_stack_clouds(rng):
    a, b = rng.random((4, 3)), rng.random((4, 3))
    assert stack_clouds([PointCloud(a), b]).shape == (2, 4, 3)
    with pytest.raises(ValueError, match="differ"):
        stack_clouds([a, rng.random((5, 3))])
