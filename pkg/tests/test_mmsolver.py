import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from flatflow.disttrans import signed_distance
from flatflow.energy import PerimeterKind, perimeter
from flatflow.geometry import BinarySet, GridDomain, GridError, ScalarField, sym_diff_volume
from flatflow.mmsolver import (ConvergenceError, StepConfig, StepMode, flip_deltas, inner_solve, lambda_search,
                               local_descent, mm_step, step_energy, threshold, volume_fixup)

from conftest import disk, halfplane

ISO, ANI = PerimeterKind.ISOTROPIC, PerimeterKind.ANISOTROPIC4


def test_config_validation():
    with pytest.raises(ValueError):
        StepConfig(h=0)
    with pytest.raises(ValueError):
        StepConfig(h=1, inner_tol=0)
    with pytest.raises(ValueError):
        StepConfig(h=1, lambda_tol=-1)
    with pytest.raises(ValueError):
        StepConfig(h=1, lambda_tol=0.5)
    assert StepConfig(h=1).tolerance_for(0.5) == pytest.approx(5e-3)


@pytest.mark.parametrize("kind", [ISO, ANI])
def test_inner_solve_positive_potential(kind):
    dom = GridDomain((12, 12))
    u = inner_solve(ScalarField(dom, np.ones(dom.dims)), kind)
    assert np.all(u.values <= 1e-6)


@pytest.mark.parametrize("kind", [ISO, ANI])
def test_inner_solve_negative_potential(kind):
    dom = GridDomain((12, 12))
    u = inner_solve(ScalarField(dom, -np.ones(dom.dims)), kind)
    assert np.all(u.values >= 1 - 1e-6)


def test_inner_solve_halfplane_reproduces_itself():
    dom = GridDomain((16, 16))
    f = halfplane(dom, 7)
    g = signed_distance(f)
    u = inner_solve(g, ISO, tol=1e-8)
    assert np.array_equal(threshold(u, 0.5, g).mask, f.mask)


def test_inner_solve_reports_non_convergence():
    dom = GridDomain((16, 16))
    g = signed_distance(disk(dom, 5))
    with pytest.raises(ConvergenceError) as err:
        inner_solve(g, ISO, tol=1e-12, max_iters=10, check_every=5)
    assert err.value.gap > 1e-12


def test_threshold_constant_fields():
    dom = GridDomain((5, 5))
    assert threshold(ScalarField(dom, np.zeros(dom.dims))).is_empty()
    assert threshold(ScalarField(dom, np.ones(dom.dims))).is_full()


def test_threshold_ties_follow_potential():
    dom = GridDomain((5, 5))
    g = np.ones(dom.dims)
    g[1, 1] = g[3, 2] = g[4, 4] = -1.0
    s = threshold(ScalarField(dom, np.full(dom.dims, 0.5)), 0.5, ScalarField(dom, g))
    assert s.cell_count == 3 and s.mask[1, 1] and s.mask[3, 2] and s.mask[4, 4]


def test_threshold_ties_fill_target_in_potential_order():
    dom = GridDomain((4, 4))
    g = np.arange(16, dtype=float).reshape(4, 4)
    s = threshold(ScalarField(dom, np.full(dom.dims, 0.5)), 0.5, ScalarField(dom, g), target_cells=5)
    assert np.array_equal(np.flatnonzero(s.mask), np.arange(5))


def test_volume_fixup_hits_target():
    dom = GridDomain((12, 12))
    f = disk(dom, 4)
    pri = np.abs(signed_distance(f).values)
    for target in (f.cell_count - 7, f.cell_count + 9):
        mask, flips = volume_fixup(f.mask, target, pri, False)
        assert mask.sum() == target and flips == abs(target - f.cell_count)


def test_volume_fixup_seeds_an_empty_mask():
    mask, flips = volume_fixup(np.zeros((5, 5), bool), 2, np.arange(25.0).reshape(5, 5), False)
    assert mask.sum() == 2 and flips == 2


def test_stationary_disk_step():
    dom = GridDomain((64, 64))
    f = disk(dom, 16)
    out = lambda_search(f, f.cell_count * dom.cell_volume, StepConfig(h=36.0))
    assert out.set.cell_count == f.cell_count
    assert sym_diff_volume(out.set, f) <= perimeter(f, ANI) * dom.spacing
    assert out.lam == pytest.approx(1 / 16, rel=0.2)
    assert out.monotonicity_violations == 0


@pytest.mark.parametrize("r0,h", [(20, 40.0), (20, 60.0), (16, 32.0)])
def test_unconstrained_disk_shrinks_like_the_ode(r0, h):
    dom = GridDomain((64, 64))
    f = disk(dom, r0)
    out = mm_step(f, StepConfig(h=h, mode=StepMode.UNCONSTRAINED))
    r_before = math.sqrt(f.cell_count / math.pi)
    r_after = math.sqrt(out.set.cell_count / math.pi)
    assert abs(r_after - (r_before - h / r_before)) <= dom.spacing
    assert out.lam == 0.0


def test_full_grid_is_rejected():
    dom = GridDomain((6, 6))
    with pytest.raises(GridError):
        mm_step(BinarySet(dom, np.ones(dom.dims, bool)), StepConfig(h=4.0))


def test_empty_set_is_rejected():
    dom = GridDomain((6, 6))
    with pytest.raises(GridError):
        mm_step(BinarySet(dom, np.zeros(dom.dims, bool)), StepConfig(h=4.0))


def test_dissipation_inequality_on_an_ellipse():
    dom = GridDomain((64, 64))
    x, y = dom.cell_centers()
    f = BinarySet(dom, ((x - 32) / 20) ** 2 + ((y - 32) / 10) ** 2 < 1)
    dist = signed_distance(f)
    out = mm_step(f, StepConfig(h=64.0), dist=dist)
    moved = out.set.mask ^ f.mask
    dissipation = np.abs(dist.values[moved]).sum() / 64.0
    assert perimeter(out.set) + dissipation <= perimeter(f) + out.fix_tolerance + 1e-9
    assert out.set.cell_count == f.cell_count
    assert sym_diff_volume(out.set, f) > 0  # the ellipse actually moves


def test_warm_start_gives_a_valid_step():
    dom = GridDomain((48, 48))
    x, y = dom.cell_centers()
    f = BinarySet(dom, ((x - 24) / 15) ** 2 + ((y - 24) / 8) ** 2 < 1)
    cfg = StepConfig(h=32.0)
    first = mm_step(f, cfg)
    second = mm_step(first.set, cfg, warm=first.dual)
    cold = mm_step(first.set, cfg)
    assert second.set.cell_count == f.cell_count
    assert second.energy <= cold.energy + second.fix_tolerance + cold.fix_tolerance


def brute_flip_deltas(mask, kind, periodic):
    dom = GridDomain(mask.shape, boundary_condition="periodic" if periodic else "neumann")
    base = perimeter(BinarySet(dom, mask), kind)
    out = np.empty(mask.shape)
    for idx in np.ndindex(mask.shape):
        m = mask.copy()
        m[idx] = ~m[idx]
        out[idx] = perimeter(BinarySet(dom, m), kind) - base
    return out


@given(arrays(np.bool_, st.sampled_from([(4, 5), (5, 5), (4, 4, 4)])), st.sampled_from([ISO, ANI]), st.booleans())
def test_flip_deltas_match_brute_force(m, kind, periodic):
    np.testing.assert_allclose(flip_deltas(m, kind, periodic), brute_flip_deltas(m, kind, periodic), atol=1e-12)


def test_local_descent_never_increases_energy(rng):
    dom = GridDomain((16, 16))
    for _ in range(5):
        f = BinarySet(dom, rng.random(dom.dims) < 0.4)
        dist = signed_distance(f)
        start = BinarySet(dom, rng.random(dom.dims) < 0.4)
        mask, moved = local_descent(start.mask, dist.values, 2.0, ISO, dom)
        assert mask.sum() == start.cell_count
        assert step_energy(BinarySet(dom, mask), dist, 2.0, ISO) <= step_energy(start, dist, 2.0, ISO) + 1e-9


small = arrays(np.bool_, st.sampled_from([(6, 6), (8, 7)])).filter(lambda m: 0 < m.sum() < m.size)


@given(small, st.sampled_from([1.0, 4.0, 16.0]), st.sampled_from([ISO, ANI]))
def test_volume_exact_and_no_worse_than_previous(m, h, kind):
    f = BinarySet(GridDomain(m.shape), m)
    dist = signed_distance(f)
    out = mm_step(f, StepConfig(h=h, kind=kind), dist=dist)
    assert out.set.cell_count == f.cell_count
    assert out.energy <= step_energy(f, dist, h, kind) + out.fix_tolerance + 1e-9
    assert out.energy == pytest.approx(step_energy(out.set, dist, h, kind))
    assert out.monotonicity_violations == 0


@given(st.integers(4, 10), st.integers(11, 20), st.sampled_from([9.0, 25.0, 60.0]))
def test_comparison_principle_for_nested_disks(r1, r2, h):
    dom = GridDomain((48, 48))
    cfg = StepConfig(h=h, mode=StepMode.UNCONSTRAINED)
    a, b = mm_step(disk(dom, r1), cfg).set, mm_step(disk(dom, r2), cfg).set
    assert not np.any(a.mask & ~b.mask)


def test_three_dimensional_step_conserves_volume():
    dom = GridDomain((16, 16, 16))
    x, y, z = dom.cell_centers()
    f = BinarySet(dom, ((x - 8) / 6) ** 2 + ((y - 8) / 4) ** 2 + ((z - 8) / 4) ** 2 < 1)
    out = mm_step(f, StepConfig(h=16.0))
    assert out.set.cell_count == f.cell_count
