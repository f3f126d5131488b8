"""One minimizing-movements step under an exact volume constraint.

The step functional ``P(E) + (1/h) * integral_E dist_F`` is relaxed to
``TV(u) + sum(u * g) * dx^d`` over ``u`` in ``[0, 1]`` with potential
``g = (dist_F + mu*h) / h``. Shifting ``mu`` only shifts the potential by a
constant, so the whole family of relaxed problems is captured by a single
ROF problem::

    min_v  TV(v) + |v - a|^2 / 2,      a = -dx * dist_F / h

whose super-level set ``{v > dx*mu}`` minimizes the relaxation at shift
``mu`` (exactly for the face-counting perimeter, approximately for the
isotropic one). The shift is found by bisection on the monotone map
``mu -> |{v > dx*mu}|``, followed by a cell-exact volume fix-up when the
target count falls inside a plateau of ``v``, and a volume-preserving
local descent over paired cell flips on the interface.

The reported multiplier is ``lam = -mu``, the sign under which the
optimality condition reads ``dist_F / h = -H + lam`` (``lam = 1/r`` for a
stationary disk).
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from ._kernels._fallback import divergence, gradient, project_dual
from .disttrans import SignedDistanceField, signed_distance
from .energy import PerimeterKind, cell_gradient_norms, interface_cells, perimeter
from .geometry import BinarySet, GridError, ScalarField

logger = logging.getLogger(__name__)

LAMBDA_BRACKET_CONSTANT = 1.0  # initial bracket is +-C/sqrt(h)
MAX_BRACKET_DOUBLINGS = 60
TIE_TOL = 1e-12
CLOSE_POOL = 24  # nearby (add, remove) pairs are scored exactly among this many best
TIE_BAND = 1e-6  # relative; solver noise on plateaus of the relaxed solution


class StepMode(str, enum.Enum):
    VOLUME_CONSTRAINED = "volume_constrained"
    UNCONSTRAINED = "unconstrained"


class ConvergenceError(RuntimeError):
    """The inner primal-dual solve hit its iteration cap above tolerance."""

    def __init__(self, message: str, gap: float):
        super().__init__(f"{message} (gap {gap:.3e})")
        self.gap = gap


class DegenerateStepError(GridError):
    """Bracketing of the multiplier failed or the input set is degenerate."""


@dataclass(frozen=True)
class StepConfig:
    h: float
    kind: PerimeterKind = PerimeterKind.ISOTROPIC
    inner_tol: float | None = None  # energy units; None -> 1e-2 * face area
    inner_max_iters: int = 20000
    lambda_tol: int = 0
    mode: StepMode = StepMode.VOLUME_CONSTRAINED
    check_every: int = 50
    keep_previous_if_better: bool = True
    local_descent: bool = True

    def __post_init__(self):
        object.__setattr__(self, "kind", PerimeterKind(self.kind))
        object.__setattr__(self, "mode", StepMode(self.mode))
        if not self.h > 0:
            raise ValueError("time step h must be positive")
        if self.inner_tol is not None and not self.inner_tol > 0:
            raise ValueError("inner_tol must be positive")
        if self.lambda_tol < 0 or int(self.lambda_tol) != self.lambda_tol:
            raise ValueError("lambda_tol must be a non-negative integer")
        if self.inner_max_iters < 1:
            raise ValueError("inner_max_iters must be at least 1")

    def tolerance_for(self, face_area: float) -> float:
        return self.inner_tol if self.inner_tol is not None else 1e-2 * face_area


@dataclass(frozen=True)
class StepOutcome:
    set: BinarySet
    lam: float
    inner_gap: float
    flipped_cells: int
    energy: float
    iterations: int = 0
    kept_previous: bool = False  # the candidate grown from the previous set won
    candidate_energy: float = math.nan
    monotonicity_violations: int = 0
    descent_flips: int = 0
    distance: SignedDistanceField | None = field(default=None, repr=False)
    dual: np.ndarray | None = field(default=None, repr=False)  # warm start for the next step

    @property
    def fix_tolerance(self) -> float:
        """``flipped_cells * 2d * dx^(d-1) + inner_gap``."""
        dom = self.set.domain
        return self.flipped_cells * 2 * dom.ndim * dom.face_area + self.inner_gap


def step_energy(s: BinarySet, dist: ScalarField, h: float, kind: PerimeterKind) -> float:
    """``P(E) + (1/h) * integral_E dist``."""
    dom = s.domain
    return perimeter(s, kind) + float(dist.values[s.mask].sum()) * dom.cell_volume / h


# ------------------------------------------------------------------ relaxed solves


def _initial_dual(a: np.ndarray, kind: PerimeterKind, periodic: bool) -> np.ndarray:
    g = gradient(a, periodic)
    if kind is PerimeterKind.ISOTROPIC:
        norm = np.sqrt((g * g).sum(axis=0))
        return g / np.maximum(norm, 1e-300)
    return np.sign(g)


class ParametricRelaxation:
    """Accelerated primal-dual solver for the ROF problem behind every multiplier.

    ``levels`` is the primal iterate; its super-level sets are the relaxed
    minimizers.
    """

    def __init__(self, data: np.ndarray, kind: PerimeterKind, periodic: bool, dual0: np.ndarray | None = None):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.kind = PerimeterKind(kind)
        self.periodic = periodic
        self.v = self.data.copy()
        self.vbar = self.data.copy()
        p = _initial_dual(self.data, self.kind, periodic) if dual0 is None else np.array(dual0, dtype=np.float64)
        project_dual(p, self.kind is PerimeterKind.ISOTROPIC)
        self.p = np.ascontiguousarray(p)
        ndim = self.data.ndim
        self.tau = 1.0 / math.sqrt(4.0 * ndim)
        self.sigma = 1.0 / (4.0 * ndim * self.tau)
        self.iterations = 0

    def iterate(self, n: int) -> None:
        self.tau, self.sigma = _kernels.rof_iterate(
            self.data, self.v, self.vbar, self.p,
            self.kind is PerimeterKind.ISOTROPIC, self.periodic,
            self.tau, self.sigma, n,
        )
        self.iterations += n

    def levels(self) -> np.ndarray:
        return self.v.copy()

    def gap(self) -> float:
        """Primal-dual gap of the ROF problem at ``(v, p)`` (cell units).

        Bounds ``|v - v*|^2 / 2`` for the exact minimizer ``v*``.
        """
        v = self.v
        primal = cell_gradient_norms(v, self.kind, self.periodic).sum() + 0.5 * np.sum((v - self.data) ** 2)
        w = self.data + divergence(self.p, self.periodic)
        dual = 0.5 * np.sum(self.data ** 2) - 0.5 * np.sum(w * w)
        return float(primal - dual)

    def binary_gap(self, mask: np.ndarray) -> float:
        """Certificate ``TV(1_E) - <grad 1_E, p>`` bounding the Lagrangian suboptimality of ``E``."""
        u = mask.astype(np.float64)
        tv = cell_gradient_norms(u, self.kind, self.periodic).sum()
        return float(tv - np.sum(gradient(u, self.periodic) * self.p))

    def solve(self, tol_cells: float, max_iters: int, check_every: int) -> float:
        gap = self.gap()
        while gap > tol_cells:
            if self.iterations >= max_iters:
                raise ConvergenceError("relaxed solve did not converge", gap)
            self.iterate(min(check_every, max_iters - self.iterations))
            gap = self.gap()
        return gap


def inner_solve(g: ScalarField, kind: PerimeterKind = PerimeterKind.ISOTROPIC, tol: float = 1e-6,
                max_iters: int = 20000, u0: np.ndarray | None = None, check_every: int = 50) -> ScalarField:
    """Minimize ``TV_kind(u) + sum(u * g) * dx^d`` over ``u`` in ``[0, 1]``.

    Plain primal-dual iteration (``tau * sigma * |grad|^2 < 1``) on the
    box-constrained problem; stops once the primal-dual gap, in energy
    units, is at most ``tol``.
    """
    kind = PerimeterKind(kind)
    dom = g.domain
    iso = kind is PerimeterKind.ISOTROPIC
    w = dom.spacing * g.values
    u = np.clip(np.zeros(dom.dims) if u0 is None else np.array(u0, dtype=np.float64), 0.0, 1.0)
    p = np.zeros((dom.ndim,) + dom.dims)
    L2 = 4.0 * dom.ndim
    tau = sigma = 0.99 / math.sqrt(L2)
    ubar = u.copy()
    gap = math.inf
    for it in range(1, max_iters + 1):
        p += sigma * gradient(ubar, dom.periodic)
        project_dual(p, iso)
        u_new = np.clip(u + tau * (divergence(p, dom.periodic) - w), 0.0, 1.0)
        ubar = 2.0 * u_new - u
        u = u_new
        if it % check_every == 0 or it == max_iters:
            gap = relaxed_gap(u, p, w, kind, dom.periodic) * dom.face_area
            if gap <= tol:
                return ScalarField(dom, u)
    raise ConvergenceError(f"inner solve hit {max_iters} iterations", gap)


def relaxed_gap(u, p, w, kind: PerimeterKind, periodic: bool) -> float:
    """Primal-dual gap of the box relaxation in cell units."""
    primal = cell_gradient_norms(u, kind, periodic).sum() + np.sum(w * u)
    dual = np.minimum(0.0, w - divergence(p, periodic)).sum()
    return float(primal - dual)


# ------------------------------------------------------------------ thresholding


def threshold(u: ScalarField, level: float = 0.5, g: ScalarField | None = None,
              target_cells: int | None = None) -> BinarySet:
    """``{u > level}``; cells with ``u == level`` are taken in increasing ``g``.

    Without a target count, tied cells are included when ``g < 0``. With a
    target, ties are added (smallest ``g`` first) until the count is met.
    """
    vals = u.values
    mask = vals > level
    ties = np.flatnonzero((np.abs(vals - level) <= TIE_TOL * max(1.0, abs(level))).ravel() & ~mask.ravel())
    if ties.size and g is not None:
        gv = g.values.ravel()[ties]
        order = np.lexsort((ties, gv))
        ties = ties[order]
        gv = gv[order]
        flat = mask.ravel()
        if target_cells is None:
            flat[ties[gv < 0]] = True
        else:
            need = max(0, target_cells - int(flat.sum()))
            flat[ties[:need]] = True
        mask = flat.reshape(vals.shape)
    return BinarySet(u.domain, mask)


def volume_fixup(mask: np.ndarray, target_cells: int, priority: np.ndarray, periodic: bool) -> tuple[np.ndarray, int]:
    """Flip interface cells until ``mask`` has ``target_cells`` cells.

    Cells are taken smallest ``priority`` first, on the side that moves the
    count toward the target. Returns the new mask and the number of flips.
    """
    mask = mask.copy()
    flips = 0
    flat_pri = priority.ravel()
    while True:
        excess = int(mask.sum()) - target_cells
        if excess == 0:
            return mask, flips
        band = interface_cells(mask, periodic)
        if not band.any():
            band = np.ones_like(mask)  # empty or full: any cell may seed the set
        cand = band & mask if excess > 0 else band & ~mask
        idx = np.flatnonzero(cand.ravel())
        if idx.size == 0:
            raise DegenerateStepError("no cells left for the volume fix-up")
        idx = idx[np.lexsort((idx, flat_pri[idx]))][: abs(excess)]
        flat = mask.ravel()
        flat[idx] = excess < 0
        mask = flat.reshape(mask.shape)
        flips += idx.size


def flip_deltas(mask: np.ndarray, kind: PerimeterKind, periodic: bool) -> np.ndarray:
    """Change in the cell-unit perimeter if each cell alone were flipped."""
    u = mask.astype(np.float64)
    du = 1.0 - 2.0 * u
    g = gradient(u, periodic)
    iso = PerimeterKind(kind) is PerimeterKind.ISOTROPIC

    def norm(v):
        return np.sqrt((v * v).sum(axis=0)) if iso else np.abs(v).sum(axis=0)

    base = norm(g)
    gy = g.copy()
    for ax in range(u.ndim):
        gy[ax] -= du if periodic else np.where(_last_row_mask(u.shape, ax), 0.0, du)
    delta = norm(gy) - base
    for ax in range(u.ndim):
        # the cell below along ``ax`` sees this cell as its forward neighbour
        fwd = np.roll(du, -1, axis=ax)
        if not periodic:
            fwd[_last_row_mask(u.shape, ax)] = 0.0
        gi = g.copy()
        gi[ax] += fwd
        contrib = np.roll(norm(gi) - base, 1, axis=ax)
        if not periodic:
            contrib[_first_row_mask(u.shape, ax)] = 0.0
        delta += contrib
    return delta


def _last_row_mask(shape, ax):
    m = np.zeros(shape, dtype=bool)
    sl = [slice(None)] * len(shape)
    sl[ax] = -1
    m[tuple(sl)] = True
    return m


def _first_row_mask(shape, ax):
    m = np.zeros(shape, dtype=bool)
    sl = [slice(None)] * len(shape)
    sl[ax] = 0
    m[tuple(sl)] = True
    return m


def _block(blocked: np.ndarray, cell: tuple, periodic: bool, radius: int = 2) -> None:
    idx = []
    for c, n in zip(cell, blocked.shape):
        r = np.arange(c - radius, c + radius + 1)
        idx.append(r % n if periodic else r[(r >= 0) & (r < n)])
    blocked[np.ix_(*idx)] = True


def _pair_perimeter_delta(mask: np.ndarray, cells, kind: PerimeterKind, periodic: bool) -> float:
    """Exact change in cell-unit perimeter when all ``cells`` are flipped together."""
    if periodic:
        window = (slice(None),) * mask.ndim
    else:
        window = tuple(
            slice(max(0, min(c[ax] for c in cells) - 2), min(mask.shape[ax], max(c[ax] for c in cells) + 3))
            for ax in range(mask.ndim)
        )
    # forward differences at the far edge of a cropped window are cut off,
    # but those cells lie two cells away and do not see the flipped ones
    sub = mask[window]
    after = sub.copy()
    for c in cells:
        local = tuple(int(c[ax]) - (window[ax].start or 0) for ax in range(mask.ndim))
        after[local] = ~after[local]
    return float(cell_gradient_norms(after, kind, periodic).sum() - cell_gradient_norms(sub, kind, periodic).sum())


def local_descent(mask: np.ndarray, dist: np.ndarray, h: float, kind: PerimeterKind, domain,
                  keep_volume: bool = True, max_rounds: int = 500, pool: int = 96) -> tuple[np.ndarray, int]:
    """Greedy descent on the binary step energy by cell flips.

    With ``keep_volume`` flips come in (add, remove) pairs with negative
    summed energy change; otherwise single flips are used. The ``pool``
    most favourable adds and removes are paired each round. Pairs of nearby
    cells are scored exactly on a local window; flips accepted in one round
    are at least three cells apart from each other so their energy changes
    add up exactly. Returns the improved mask and the number of cells
    flipped.
    """
    mask = mask.copy()
    weight = domain.cell_volume / h
    moved = 0
    eps = 1e-12 * max(1.0, domain.face_area)
    dims = domain.dims
    for _ in range(max_rounds):
        dE = domain.face_area * flip_deltas(mask, kind, domain.periodic)
        dE += weight * dist * np.where(mask, -1.0, 1.0)
        flat_dE = dE.ravel()
        inside = mask.ravel()
        adds = np.flatnonzero(~inside)
        rems = np.flatnonzero(inside)
        adds = adds[np.lexsort((adds, flat_dE[adds]))][:pool]
        rems = rems[np.lexsort((rems, flat_dE[rems]))][:pool]
        blocked = np.zeros(dims, dtype=bool)
        chosen = []
        if keep_volume:
            if adds.size == 0 or rems.size == 0:
                break
            ca = np.array(np.unravel_index(adds, dims)).T
            cr = np.array(np.unravel_index(rems, dims)).T
            sep = np.abs(ca[:, None, :] - cr[None, :, :])
            if domain.periodic:
                sep = np.minimum(sep, np.array(dims) - sep)
            close = sep.max(axis=2) < 3
            score = flat_dE[adds][:, None] + flat_dE[rems][None, :]
            dist_w = weight * dist.ravel()
            # two flips interact through at most 2*ndim cells' gradients
            reach = 4.0 * domain.ndim * domain.face_area
            exact = close & (score - reach < -eps)
            exact[CLOSE_POOL:, :] = False
            exact[:, CLOSE_POOL:] = False
            for i, j in zip(*np.nonzero(exact)):
                per = _pair_perimeter_delta(mask, (tuple(ca[i]), tuple(cr[j])), kind, domain.periodic)
                score[i, j] = domain.face_area * per + dist_w[adds[i]] - dist_w[rems[j]]
            score[close & ~exact] = np.inf
            good = np.flatnonzero(score.ravel() < -eps)
            good = good[np.argsort(score.ravel()[good], kind="stable")]
            for flat_ij in good:
                i, j = divmod(int(flat_ij), score.shape[1])
                pa, pr = tuple(ca[i]), tuple(cr[j])
                if blocked[pa] or blocked[pr]:
                    continue
                chosen += [adds[i], rems[j]]
                _block(blocked, pa, domain.periodic)
                _block(blocked, pr, domain.periodic)
        else:
            cand = np.concatenate([adds, rems])
            for c in cand[np.argsort(flat_dE[cand], kind="stable")]:
                if flat_dE[c] >= -eps:
                    break
                cc = np.unravel_index(c, dims)
                if blocked[cc]:
                    continue
                chosen.append(c)
                _block(blocked, cc, domain.periodic)
        if not chosen:
            break
        flat = mask.ravel()
        flat[chosen] = ~flat[chosen]
        mask = flat.reshape(dims)
        moved += len(chosen)
    return mask, moved


# ------------------------------------------------------------------ the step


def _count_above(levels_flat_sorted_desc: np.ndarray, s: float) -> int:
    # number of values strictly greater than s in a descending array
    return int(np.searchsorted(-levels_flat_sorted_desc, -s, side="left"))


def lambda_search(f: BinarySet, target_volume: float, cfg: StepConfig,
                  dist: SignedDistanceField | None = None, warm: np.ndarray | None = None) -> StepOutcome:
    """Multiplier bisection for the volume-constrained step.

    The thresholded volume is non-increasing in the potential shift ``mu``,
    so the bracket ``+-C/sqrt(h)`` is widened geometrically until it
    straddles the target and then halved until the cell count matches (or
    the bracket collapses). Remaining mismatch is removed by flipping
    interface cells with the smallest ``|dist_F + mu*h|``.
    """
    if f.is_empty() or f.is_full():
        raise GridError("step needs a set that is neither empty nor full")
    dom = f.domain
    target = int(round(target_volume / dom.cell_volume))
    if not 0 < target < dom.num_cells:
        raise DegenerateStepError(f"target of {target} cells is degenerate")
    dist = signed_distance(f) if dist is None else dist
    h = cfg.h
    relax = _relaxation(dist, cfg, warm)
    tol = cfg.tolerance_for(dom.face_area)
    gap_cells = relax.solve(tol / dom.face_area, cfg.inner_max_iters, cfg.check_every)
    levels = relax.levels()
    desc = np.sort(levels.ravel())[::-1]

    def count(mu: float) -> int:
        return _count_above(desc, dom.spacing * mu)

    half = LAMBDA_BRACKET_CONSTANT / math.sqrt(h)
    lo, hi = -half, half
    c_lo, c_hi = count(lo), count(hi)
    doublings = 0
    while not (c_lo >= target >= c_hi):
        doublings += 1
        if doublings > MAX_BRACKET_DOUBLINGS:
            raise DegenerateStepError("multiplier bracket did not straddle the target volume")
        width = hi - lo
        if c_lo < target:
            lo -= width
            c_lo = count(lo)
        if c_hi > target:
            hi += width
            c_hi = count(hi)
    initial_width = hi - lo
    visited = [(lo, c_lo), (hi, c_hi)]
    mu = 0.5 * (lo + hi)
    c_mid = count(mu)
    visited.append((mu, c_mid))
    while abs(c_mid - target) > cfg.lambda_tol and (hi - lo) >= 1e-12 * initial_width:
        if c_mid > target:
            lo = mu
        else:
            hi = mu
        mu = 0.5 * (lo + hi)
        c_mid = count(mu)
        visited.append((mu, c_mid))
    if c_mid == target:
        # centre the shift in the gap of level values it falls into
        s = dom.spacing * mu
        above = desc[c_mid - 1]
        below = desc[c_mid] if c_mid < desc.size else s
        mu = 0.5 * (above + below) / dom.spacing
    visited.sort()
    violations = sum(1 for (_, a), (_, b) in zip(visited, visited[1:]) if b > a)
    if violations:
        logger.warning("thresholded volume not monotone in the multiplier (%d violations)", violations)
    return _finish(f, dist, cfg, relax, levels, mu, target, gap_cells, violations)


def _finish(f, dist, cfg, relax, levels, mu, target, gap_cells, violations) -> StepOutcome:
    dom = f.domain
    h = cfg.h
    s = dom.spacing * mu
    # levels this close to s are treated as exact ties
    band = TIE_BAND * max(1.0, float(np.abs(levels).max()))
    tied = np.abs(levels - s) <= band
    shifted = np.where(tied, 0.0, levels - s)
    u = ScalarField(dom, np.clip(shifted + 0.5, 0.0, 1.0))
    potential = ScalarField(dom, (dist.values + mu * h) / h)
    priority = np.abs(dist.values + mu * h)
    strict = u.values > 0.5

    # volume-correct candidates: (mask, cells placed to meet the volume)
    candidates = []
    out = threshold(u, 0.5, potential, target)
    if target is None:
        candidates.append((out.mask, 0))
    else:
        flips = abs(out.cell_count - int(strict.sum()))
        mask = out.mask
        if out.cell_count != target:
            mask, extra = volume_fixup(mask, target, priority, dom.periodic)
            flips += extra
        candidates.append((mask, flips))
        for start in (strict, strict | tied):
            if start.any() and not start.all():
                mask, extra = volume_fixup(start, target, priority, dom.periodic)
                candidates.append((mask, extra))
    prev_ok = cfg.keep_previous_if_better and (target is None or f.cell_count == target)
    if prev_ok:
        candidates.append((f.mask, None))

    best = None
    seen = set()
    for mask, flips in candidates:
        key = np.packbits(mask).tobytes()
        if key in seen:
            continue
        seen.add(key)
        moved = 0
        if cfg.local_descent:
            mask, moved = local_descent(mask, dist.values, h, cfg.kind, dom, keep_volume=target is not None)
        cand = f.with_mask(mask)
        if target is not None and cand.cell_count != target:  # pragma: no cover - guarded by construction
            raise DegenerateStepError("volume drifted during the step")
        e = step_energy(cand, dist, h, cfg.kind)
        if best is None or e < best[0]:
            best = (e, cand, flips, moved)
    energy, out, flips, descent = best
    first_energy = step_energy(f.with_mask(candidates[0][0]), dist, h, cfg.kind)
    kept = flips is None
    return StepOutcome(out, 0.0 - mu, gap_cells * dom.face_area, 0 if kept else flips, energy, relax.iterations, kept,
                       first_energy, violations, descent, dist, relax.p.copy())


def _relaxation(dist, cfg: StepConfig, warm) -> ParametricRelaxation:
    dom = dist.domain
    if warm is not None and warm.shape != (dom.ndim,) + dom.dims:
        warm = None
    return ParametricRelaxation(-dom.spacing * dist.values / cfg.h, cfg.kind, dom.periodic, warm)


def mm_step(f: BinarySet, cfg: StepConfig, dist: SignedDistanceField | None = None,
            warm: np.ndarray | None = None) -> StepOutcome:
    """Advance ``f`` by one minimizing-movements step of size ``cfg.h``.

    ``warm`` is an optional dual field (``StepOutcome.dual`` of the previous
    step) used to start the relaxed solve.
    """
    if f.is_empty() or f.is_full():
        raise GridError("step needs a set that is neither empty nor full")
    if cfg.mode is StepMode.VOLUME_CONSTRAINED:
        return lambda_search(f, f.cell_count * f.domain.cell_volume, cfg, dist, warm)
    dom = f.domain
    dist = signed_distance(f) if dist is None else dist
    relax = _relaxation(dist, cfg, warm)
    tol = cfg.tolerance_for(dom.face_area)
    gap_cells = relax.solve(tol / dom.face_area, cfg.inner_max_iters, cfg.check_every)
    return _finish(f, dist, cfg, relax, relax.levels(), 0.0, None, gap_cells, 0)


def with_mode(cfg: StepConfig, mode: StepMode) -> StepConfig:
    return replace(cfg, mode=StepMode(mode))
