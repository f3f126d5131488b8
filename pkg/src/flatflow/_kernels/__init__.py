"""Kernel backend selection.

The compiled ``_core`` extension is used when importable; otherwise the
numpy versions in ``_fallback`` take over. Set ``FLATFLOW_PURE_PYTHON=1`` to
force the fallback. The compiled ROF loop covers 2D grids only; 3D always
runs through numpy.
"""
from __future__ import annotations

import importlib
import logging
import os

from . import _fallback

logger = logging.getLogger(__name__)


def _load_core():
    if os.environ.get("FLATFLOW_PURE_PYTHON", "") in ("1", "true", "yes"):
        return None
    try:
        return importlib.import_module(__name__ + "._core")
    except ImportError:  # pragma: no cover - depends on the build
        logger.debug("compiled kernels unavailable, using numpy fallback")
        return None


_core = _load_core()

BACKEND = "compiled" if _core is not None else "python"


def backend_module(name: str | None = None):
    """Return the kernel module for ``name`` ('compiled', 'python' or None=default)."""
    if name is None:
        name = BACKEND
    if name == "compiled":
        if _core is None:
            raise RuntimeError("compiled kernels are not built")
        return _core
    if name == "python":
        return _fallback
    raise ValueError(f"unknown backend {name!r}")


def parabola_envelope_lines(f, backend: str | None = None) -> None:
    backend_module(backend).parabola_envelope_lines(f)


def rof_iterate(f, v, vbar, p, isotropic, periodic, tau, sigma, n_iter, backend: str | None = None):
    mod = backend_module(backend)
    if f.ndim != 2:
        mod = _fallback
    return mod.rof_iterate(f, v, vbar, p, bool(isotropic), bool(periodic), float(tau), float(sigma), int(n_iter))


def enumerate_min(width, height, k, face_area, weights, tol, backend: str | None = None):
    return backend_module(backend).enumerate_min(int(width), int(height), int(k), float(face_area), weights, float(tol))
