import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from flatflow.disttrans import restrict_to_band, signed_distance, squared_edt
from flatflow.geometry import BinarySet, GridDomain, GridError

from conftest import disk, halfplane


def brute_signed_distance(mask, spacing=1.0):
    idx = np.argwhere(np.ones(mask.shape, bool))
    inside, outside = np.argwhere(mask), np.argwhere(~mask)
    out = np.empty(mask.shape)
    for p in idx:
        other = outside if mask[tuple(p)] else inside
        d = np.sqrt(((other - p) ** 2).sum(axis=1)).min() * spacing - 0.5 * spacing
        out[tuple(p)] = -d if mask[tuple(p)] else d
    return out


def single_cell(n=7):
    dom = GridDomain((n, n))
    m = np.zeros((n, n), bool)
    m[3, 3] = True
    return BinarySet(dom, m)


def test_single_cell_value():
    assert signed_distance(single_cell()).values[3, 3] == -0.5


def test_face_neighbour_value():
    assert signed_distance(single_cell()).values[3, 4] == 0.5


def test_knight_move_value():
    d = signed_distance(single_cell()).values
    assert d[1, 4] == pytest.approx(math.sqrt(5) - 0.5, abs=1e-12)


def test_spacing_scales_distance():
    dom = GridDomain((7, 7), spacing=0.5)
    d = signed_distance(BinarySet(dom, single_cell().mask)).values
    assert d[1, 4] == pytest.approx(0.5 * (math.sqrt(5) - 0.5))


def test_empty_or_full_set_is_rejected():
    dom = GridDomain((4, 4))
    with pytest.raises(GridError):
        signed_distance(BinarySet(dom, np.zeros((4, 4), bool)))
    with pytest.raises(GridError):
        signed_distance(BinarySet(dom, np.ones((4, 4), bool)))


def test_band_wide_width_covers_everything():
    s = disk(GridDomain((20, 20)), 5)
    d = signed_distance(s)
    assert restrict_to_band(d, 100.0).shape[0] == 400


def test_band_narrow_width_is_two_layers():
    dom = GridDomain((10, 12))
    d = signed_distance(halfplane(dom, 4))
    cells = restrict_to_band(d, 0.4)
    assert sorted(set(cells[:, 0].tolist())) == [3, 4]
    assert cells.shape[0] == 24


def test_band_annulus_count():
    s = disk(GridDomain((40, 40)), 10)
    cells = restrict_to_band(signed_distance(s), 2.0)
    expected = 2 * math.pi * 10 * 4
    assert abs(cells.shape[0] - expected) <= 0.2 * expected


def test_periodic_distance_wraps():
    dom = GridDomain((8, 8), boundary_condition="periodic")
    m = np.zeros((8, 8), bool)
    m[0, 0] = True
    d = signed_distance(BinarySet(dom, m)).values
    assert d[7, 0] == 0.5 and d[0, 7] == 0.5


def test_squared_edt_backends_agree(rng):
    sites = rng.random((30, 25)) < 0.05
    sites[0, 0] = True
    a = squared_edt(sites, backend="python")
    b = squared_edt(sites)
    assert np.array_equal(a, b)


small_masks = arrays(np.bool_, st.tuples(st.integers(4, 8), st.integers(4, 8))).filter(
    lambda m: m.any() and not m.all())


@given(small_masks)
def test_matches_brute_force(m):
    d = signed_distance(BinarySet(GridDomain(m.shape), m)).values
    np.testing.assert_allclose(d, brute_signed_distance(m), rtol=0, atol=1e-12)


@given(small_masks)
def test_sign_and_face_offset(m):
    d = signed_distance(BinarySet(GridDomain(m.shape), m)).values
    assert np.array_equal(d < 0, m)
    assert np.all(np.abs(d) >= 0.5)


@given(small_masks)
def test_complement_antisymmetry(m):
    dom = GridDomain(m.shape)
    a = signed_distance(BinarySet(dom, m)).values
    b = signed_distance(BinarySet(dom, ~m)).values
    np.testing.assert_array_equal(a, -b)


@given(arrays(np.bool_, (4, 4, 5)).filter(lambda m: m.any() and not m.all()))
def test_three_dimensional_matches_brute_force(m):
    d = signed_distance(BinarySet(GridDomain(m.shape), m)).values
    np.testing.assert_allclose(d, brute_signed_distance(m), atol=1e-12)
