import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from flatflow import _kernels
from flatflow._kernels import _fallback

compiled = pytest.mark.skipif(_kernels.BACKEND != "compiled", reason="compiled kernels not built")


def test_backend_names():
    assert _kernels.BACKEND in ("compiled", "python")
    with pytest.raises(ValueError):
        _kernels.backend_module("gpu")


@compiled
@given(st.integers(1, 6), st.integers(1, 40), st.integers(0, 10_000))
def test_envelope_backends_agree(lines, n, seed):
    rng = np.random.default_rng(seed)
    f = np.where(rng.random((lines, n)) < 0.2, 0.0, 1e12)
    a, b = f.copy(), f.copy()
    _kernels.parabola_envelope_lines(a, backend="python")
    _kernels.parabola_envelope_lines(b, backend="compiled")
    np.testing.assert_array_equal(a, b)


@compiled
@pytest.mark.parametrize("isotropic", [True, False])
@pytest.mark.parametrize("periodic", [True, False])
def test_rof_backends_agree(isotropic, periodic, rng):
    data = rng.normal(size=(17, 23))
    out = []
    for backend in ("python", "compiled"):
        v, vbar, p = np.zeros_like(data), np.zeros_like(data), np.zeros((2,) + data.shape)
        steps = _kernels.rof_iterate(data, v, vbar, p, isotropic, periodic, 0.25, 0.5, 60, backend=backend)
        out.append((v, p, steps))
    np.testing.assert_allclose(out[0][0], out[1][0], atol=1e-12)
    np.testing.assert_allclose(out[0][1], out[1][1], atol=1e-12)
    assert out[0][2] == pytest.approx(out[1][2])


@compiled
@given(st.integers(0, 10_000), st.integers(1, 15))
def test_enumeration_backends_agree(seed, k):
    w = np.random.default_rng(seed).normal(size=16)
    a = _kernels.enumerate_min(4, 4, k, 1.0, w, 1e-9, backend="python")
    b = _kernels.enumerate_min(4, 4, k, 1.0, w, 1e-9, backend="compiled")
    assert tuple(a[0]) == tuple(b[0])
    assert a[1] == pytest.approx(b[1], abs=1e-12)
    assert a[2:] == b[2:]


def test_divergence_is_negative_adjoint_of_gradient(rng):
    for periodic in (False, True):
        u = rng.normal(size=(6, 7))
        p = rng.normal(size=(2, 6, 7))
        lhs = float((_fallback.gradient(u, periodic) * p).sum())
        rhs = -float((u * _fallback.divergence(p, periodic)).sum())
        assert lhs == pytest.approx(rhs)


def test_dual_projection(rng):
    q = rng.normal(size=(2, 5, 5)) * 3
    iso = q.copy()
    _fallback.project_dual(iso, True)
    assert np.all(np.sqrt((iso ** 2).sum(axis=0)) <= 1 + 1e-12)
    box = q.copy()
    _fallback.project_dual(box, False)
    assert np.all(np.abs(box) <= 1)


def test_environment_forces_the_fallback():
    import os
    import subprocess
    import sys
    env = dict(os.environ, FLATFLOW_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import flatflow; print(flatflow.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
