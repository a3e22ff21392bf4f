import numpy as np
import pytest
from hypothesis import given, strategies as st

from sheetfield import io as sio
from sheetfield.errors import ParameterError
from sheetfield.sheet import (GridSpec, Rect, SheetPath, bilinear, cell_increment_at, cell_increments, dalang_walsh,
                              generate_sheet, prefix_sum, rect_increment, rescale, sheet_values)

import oracles


def test_axes_vanish_and_shape():
    g = GridSpec(8, 4, 1.0, 0.5, 2)
    w = generate_sheet(g, 3)
    assert w.values.shape == (9, 5, 2)
    assert np.all(w.values[0] == 0) and np.all(w.values[:, 0] == 0)


def test_values_are_read_only():
    w = generate_sheet(GridSpec.square(4), 0)
    with pytest.raises(ValueError):
        w.values[1, 1, 0] = 1.0


def test_nonzero_axes_rejected():
    g = GridSpec.square(2)
    v = np.zeros(g.shape)
    v[0, 1, 0] = 1.0
    with pytest.raises(ParameterError):
        SheetPath(g, v)


def test_increments_round_trip():
    g = GridSpec(6, 5, 1.0, 1.0, 3)
    inc = cell_increments(g, 9)
    np.testing.assert_allclose(generate_sheet(g, 9).increments(), inc, atol=1e-14)
    np.testing.assert_allclose(prefix_sum(inc), generate_sheet(g, 9).values, atol=0)


def test_random_access_increment():
    g = GridSpec(7, 5, 1.0, 1.0, 2)
    inc = cell_increments(g, 4)
    for i, j, c in ((0, 0, 0), (6, 4, 1), (3, 2, 1)):
        assert cell_increment_at(g, 4, i, j, c) == inc[i, j, c]


def test_batch_matches_single():
    g = GridSpec.square(8, 2)
    batch = sheet_values(g, [5, 6])
    np.testing.assert_array_equal(batch[1], generate_sheet(g, 6).values)


def test_coarsen_is_subsampling():
    w = generate_sheet(GridSpec.square(16), 1)
    c = w.coarsen(4)
    assert c.grid.n_s == 4
    np.testing.assert_array_equal(c.values, w.values[::4, ::4])
    with pytest.raises(ParameterError):
        w.coarsen(3)


def test_grid_validation():
    with pytest.raises(ParameterError):
        GridSpec(0, 4)
    with pytest.raises(ParameterError):
        GridSpec(4, 4, 1.5, 1.0)
    with pytest.raises(ParameterError):
        Rect(0.5, 0.25, 0.0, 1.0)


def test_off_grid_rect_rejected():
    w = generate_sheet(GridSpec.square(4), 0)
    with pytest.raises(ParameterError):
        rect_increment(w, Rect(0.1, 0.5, 0.0, 1.0))


def test_covariance_against_oracle():
    # 20000 paths on a coarse grid; exact nodes so no discretisation error
    g = GridSpec.square(4, 1)
    w = sheet_values(g, range(20_000))[..., 0]
    pts = [(0.25, 0.75), (0.5, 0.5), (1.0, 1.0)]
    for p in pts:
        for q in pts:
            a = w[:, g.s_index(p[0]), g.t_index(p[1])]
            b = w[:, g.s_index(q[0]), g.t_index(q[1])]
            prod = a * b
            se = prod.std(ddof=1) / np.sqrt(len(prod))
            assert abs(prod.mean() - oracles.sheet_covariance(p, q)) < 4 * se


def test_rect_increment_variance_is_area():
    g = GridSpec.square(8)
    r = Rect(0.25, 0.75, 0.5, 1.0)
    v = np.array([rect_increment(generate_sheet(g, k), r)[0] for k in range(4000)])
    assert abs(v.var() - r.area) < 4 * r.area * np.sqrt(2 / len(v))


@given(a_s=st.sampled_from([0.0, 0.25, 0.5]), a_t=st.sampled_from([0.0, 0.125, 0.5]),
       e_s=st.sampled_from([0.0, 0.125, 0.25, 0.5]), e_t=st.sampled_from([0.0, 0.25, 0.5]),
       seed=st.integers(0, 1000))
def test_rescale_axes_are_exactly_zero(a_s, a_t, e_s, e_t, seed):
    w = generate_sheet(GridSpec.square(16), seed)
    r = rescale(w, a_s, a_t, e_s, e_t)
    assert np.all(r.values[0] == 0) and np.all(r.values[:, 0] == 0)
    if e_s > 0 and e_t > 0:
        corner = rect_increment(w, Rect(a_s, a_s + e_s, a_t, a_t + e_t))
        np.testing.assert_allclose(r.values[-1, -1], corner, atol=1e-14)


def test_bilinear_is_exact_at_nodes():
    g = GridSpec(4, 8, 1.0, 0.5, 1)
    w = generate_sheet(g, 2)
    assert w.at(0.5, 0.25)[0] == w.values[2, 4, 0]
    with pytest.raises(ParameterError):
        bilinear(w.values, g, 1.5, 0.1)


def test_time_reversal_shape_and_variance():
    g = GridSpec(4, 32, 1.0, 1.0, 1)
    b = np.stack([dalang_walsh(generate_sheet(g, k)).values[..., 0] for k in range(3000)])
    assert b.shape[1:] == (5, 32)
    assert np.all(b[:, :, 0] == 0)
    # the hidden sheet has Var B(s, t) = s t
    v = b[:, 4, 16].var()
    assert abs(v - 0.5) < 0.1


def test_sheet_file_round_trip(tmp_path):
    w = generate_sheet(GridSpec(3, 5, 0.75, 1.0, 2), 42)
    sio.save_sheet(tmp_path / "w.bin", w)
    back = sio.load_sheet(tmp_path / "w.bin")
    assert back.grid == w.grid and back.seed == 42
    np.testing.assert_array_equal(back.values, w.values)


def test_corrupt_file(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"NOTSHEET" + bytes(60))
    with pytest.raises(ParameterError):
        sio.read_grid_array(p)
