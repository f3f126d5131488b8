"""Exhaustive minimizer of the discrete step energy on tiny 2D grids.

Every mask with a fixed number of set cells is scored with the face-counting
perimeter plus the dissipation term. Among minimizers the one whose
row-major 0/1 sequence is lexicographically smallest is returned.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .disttrans import signed_distance
from .geometry import BinarySet, GridError

MAX_CELLS = 25
TIE_TOL = 1e-9


@dataclass(frozen=True)
class OracleResult:
    best_mask: BinarySet
    best_energy: float
    num_candidates: int
    ties: int  # masks within TIE_TOL of best_energy, including best_mask


def oracle_energy(mask: np.ndarray, weights: np.ndarray, face_area: float) -> float:
    """Face count times ``face_area`` plus the summed cell weights of ``mask``."""
    m = np.asarray(mask, dtype=bool)
    faces = int((m[1:, :] != m[:-1, :]).sum() + (m[:, 1:] != m[:, :-1]).sum())
    return faces * face_area + float(weights[m].sum())


def brute_force_min(f: BinarySet, h: float, target_cells: int, backend: str | None = None) -> OracleResult:
    dom = f.domain
    if dom.ndim != 2:
        raise GridError("the oracle handles 2D grids only")
    if dom.periodic:
        raise GridError("the oracle assumes Neumann boundaries")
    n = dom.num_cells
    if n > MAX_CELLS:
        raise GridError(f"grid of {n} cells exceeds the oracle limit of {MAX_CELLS}")
    if not 0 < target_cells < n:
        raise GridError(f"target of {target_cells} cells is degenerate")
    if not h > 0:
        raise ValueError("time step h must be positive")
    dist = signed_distance(f).values
    weights = dist * dom.cell_volume / h
    tol = TIE_TOL * max(1.0, float(np.abs(weights).sum()) + 2 * n * dom.face_area)
    rows, cols = dom.dims
    cells, best, ties, count = _kernels.enumerate_min(cols, rows, target_cells, dom.face_area,
                                                      weights.ravel(), tol, backend=backend)
    if count != math.comb(n, target_cells):  # pragma: no cover - kernel contract
        raise RuntimeError("enumeration skipped candidates")
    mask = np.zeros(n, dtype=bool)
    mask[list(cells)] = True
    mask = mask.reshape(dom.dims)
    # report the energy of the chosen mask itself, recomputed independently
    return OracleResult(BinarySet(dom, mask), oracle_energy(mask, weights, dom.face_area), int(count), int(ties))
