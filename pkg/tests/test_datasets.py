import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mmgibbs.datasets import DatasetSpec, SampleSet, generate, load_csv, save_csv
from mmgibbs.errors import ConfigError, DataIOError, ParseError
from mmgibbs.evaluation import mmd


def test_mog4_symmetry_statistics():
    pts = generate(DatasetSpec("mog4", n=10_000, seed=0)).points
    se = pts.std(0) / np.sqrt(len(pts))
    assert np.all(np.abs(pts.mean(0)) <= 3 * se)
    quad = np.bincount((pts[:, 0] > 0) * 2 + (pts[:, 1] > 0), minlength=4) / len(pts)
    assert np.all(np.abs(quad - 0.25) <= 0.015)


def test_single_point():
    for kind in ("mog4", "rings", "roll"):
        assert generate(DatasetSpec(kind, n=1)).points.shape == (1, 2)


def test_rings_without_jitter_lie_on_circles():
    pts = generate(DatasetSpec("rings", n=2000, ring_jitter=0.0)).points
    r = np.hypot(pts[:, 0], pts[:, 1])
    on = np.isclose(r, 0.5, rtol=1e-14) | np.isclose(r, 1.0, rtol=1e-14)
    assert on.all()
    assert 0.4 < np.mean(np.isclose(r, 0.5)) < 0.6


def test_default_extents():
    rings = generate(DatasetSpec("rings", n=5000)).points
    roll = generate(DatasetSpec("roll", n=5000)).points
    assert np.all(np.abs(rings) <= 1.1)
    assert np.all(np.abs(roll) <= 1.1)


def test_deterministic_per_seed():
    a = generate(DatasetSpec("roll", n=100, seed=3)).points
    b = generate(DatasetSpec("roll", n=100, seed=3)).points
    c = generate(DatasetSpec("roll", n=100, seed=4)).points
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_two_seeds_in_null_band():
    a = generate(DatasetSpec("mog4", n=10_000, seed=10)).points
    b = generate(DatasetSpec("mog4", n=10_000, seed=11)).points
    assert abs(mmd(a, b).mmd2) <= 0.005


@pytest.mark.parametrize("bad", [dict(kind="moons"), dict(n=0), dict(sigma_g=0.0), dict(r1=-1.0),
                                 dict(ring_jitter=-0.1), dict(roll_t_min=5.0, roll_t_max=4.0)])
def test_spec_validation(bad):
    with pytest.raises(ConfigError):
        generate(DatasetSpec(**bad))


def test_csv_round_trip_bit_identical(tmp_path):
    s = generate(DatasetSpec("mog4", n=10_000, seed=1))
    save_csv(s, tmp_path / "d.csv")
    back = load_csv(tmp_path / "d.csv")
    assert np.array_equal(back.points, s.points)
    assert back.chain_id is None


def test_csv_with_chain_columns(tmp_path):
    s = SampleSet(np.array([[0.1, 0.2], [1e-300, -3.5e200]]), np.array([0, 1]), np.array([1, 1]))
    save_csv(s, tmp_path / "c.csv")
    assert (tmp_path / "c.csv").read_text().splitlines()[0] == "x1,x2,chain_id,step"
    back = load_csv(tmp_path / "c.csv")
    assert np.array_equal(back.points, s.points)
    assert list(back.chain_id) == [0, 1] and list(back.step) == [1, 1]


def test_header_only_file_is_empty_set(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("x1,x2\n")
    s = load_csv(p)
    assert len(s) == 0 and s.dim == 2


def test_zero_byte_file_is_parse_error(tmp_path):
    p = tmp_path / "z.csv"
    p.write_text("")
    with pytest.raises(ParseError, match="line 1"):
        load_csv(p)


def test_dimension_mismatch_reports_line(tmp_path):
    p = tmp_path / "b.csv"
    p.write_text("x1,x2\n0.1,0.2\n0.3\n")
    with pytest.raises(ParseError, match="line 3"):
        load_csv(p)


def test_bad_value_reports_line(tmp_path):
    p = tmp_path / "b.csv"
    p.write_text("x1,x2\n0.1,abc\n")
    with pytest.raises(ParseError, match="line 2"):
        load_csv(p)


def test_bad_header(tmp_path):
    p = tmp_path / "h.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(ParseError):
        load_csv(p)


def test_missing_file(tmp_path):
    with pytest.raises(DataIOError):
        load_csv(tmp_path / "missing.csv")


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.floats(allow_nan=False, allow_infinity=False, width=64),
                          st.floats(allow_nan=False, allow_infinity=False, width=64)), min_size=1, max_size=20))
def test_property_round_trip_any_finite_floats(tmp_path_factory, rows):
    path = tmp_path_factory.mktemp("rt") / "p.csv"
    s = SampleSet(np.array(rows))
    save_csv(s, path)
    assert np.array_equal(load_csv(path).points, s.points)
