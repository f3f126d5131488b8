"""Time stepping of the flat-flow scheme and trajectory diagnostics.

Record ``k`` describes the set ``E_k`` at time ``k*h``; for ``k >= 1`` it
also carries the bookkeeping of the step ``E_{k-1} -> E_k``. Boundary
integrals use the faces between set and complement cells: a quantity is
sampled at a face as the mean of its two cells, and the face is weighted by
``|n_i| * dx^(d-1)`` where ``n`` is the unit normal estimated from the
smoothed signed distance and ``i`` the face axis (faces normal to axis ``i``
tile the projection of the boundary onto that axis).
"""
from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage
from scipy.spatial import ConvexHull, QhullError

from .disttrans import SignedDistanceField, signed_distance
from .energy import (
    CURVATURE_SMOOTHING,
    PerimeterKind,
    cell_gradient_norms,
    interior_margin_mask,
    isoperimetric_ratio,
    perimeter,
    smoothed_distance,
)
from .geometry import BinarySet, GridDomain, GridError, sym_diff_volume
from .mmsolver import StepConfig, StepMode, mm_step

logger = logging.getLogger(__name__)

RESOLUTION_FACTOR = 3.0  # sqrt(h) >= RESOLUTION_FACTOR * dx
CONTAINMENT_MARGIN = 2  # cells
FIRST_SNAPSHOTS = 10


class ResolutionWarning(UserWarning):
    pass


class FlowError(RuntimeError):
    """A run stopped early; ``trajectory`` holds the steps completed so far."""

    def __init__(self, message: str, trajectory: "FlowTrajectory | None" = None):
        super().__init__(message)
        self.trajectory = trajectory


class ContainmentError(FlowError):
    pass


@dataclass(frozen=True)
class FlowConfig:
    h: float
    T: float
    kind: PerimeterKind = PerimeterKind.ISOTROPIC
    mode: StepMode = StepMode.VOLUME_CONSTRAINED
    inner_tol: float | None = None
    inner_max_iters: int = 20000
    lambda_tol: int = 0
    snapshot_ratio: float = 1.5  # geometric spacing of snapshot steps after the first ten
    check_containment: bool = True

    def __post_init__(self):
        object.__setattr__(self, "kind", PerimeterKind(self.kind))
        object.__setattr__(self, "mode", StepMode(self.mode))
        if not self.h > 0 or not self.T >= 0:
            raise ValueError("need h > 0 and T >= 0")
        if not self.snapshot_ratio > 1:
            raise ValueError("snapshot_ratio must exceed 1")

    @property
    def num_steps(self) -> int:
        return int(math.floor(self.T / self.h + 1e-9))

    def step_config(self) -> StepConfig:
        return StepConfig(h=self.h, kind=self.kind, inner_tol=self.inner_tol,
                          inner_max_iters=self.inner_max_iters, lambda_tol=self.lambda_tol, mode=self.mode)


@dataclass(frozen=True)
class StepRecord:
    k: int
    time: float
    perimeter_before: float
    perimeter_after: float
    lam: float
    dissipation_term: float
    el_residual_median: float
    el_residual_p90: float
    sup_boundary_distance: float
    sup_curvature: float
    flipped_cells: int
    diameter: float
    volume_cells: int = 0
    eps_fix: float = 0.0
    inner_gap: float = 0.0
    step_energy: float = math.nan
    previous_energy: float = math.nan
    mean_curvature: float = math.nan
    kept_previous: bool = False
    inner_iterations: int = 0

    @property
    def dissipation_slack(self) -> float:
        """``P_before + eps_fix - (P_after + dissipation)``; non-negative when the step dissipates."""
        return self.perimeter_before + self.eps_fix - self.perimeter_after - self.dissipation_term


CSV_COLUMNS = [f.name for f in StepRecord.__dataclass_fields__.values()]


@dataclass
class FaceSamples:
    """Boundary faces of one set: positions, weights and sampled fields."""

    position: np.ndarray  # (m, ndim), physical coordinates of face midpoints
    weight: np.ndarray  # surface measure per face
    curvature: np.ndarray
    driving: np.ndarray  # signed distance of the previous set at the face

    @property
    def area(self) -> float:
        return float(self.weight.sum())

    def mean_curvature(self) -> float:
        a = self.area
        return float((self.weight * self.curvature).sum() / a) if a > 0 else 0.0


@dataclass
class FlowTrajectory:
    config: FlowConfig
    domain: GridDomain
    records: list[StepRecord] = field(default_factory=list)
    sets: list[BinarySet] = field(default_factory=list, repr=False)
    faces: list[FaceSamples | None] = field(default_factory=list, repr=False)
    snapshot_steps: list[int] = field(default_factory=list)

    @property
    def snapshots(self) -> list[tuple[float, BinarySet]]:
        return [(self.records[k].time, self.sets[k]) for k in self.snapshot_steps]

    @property
    def h(self) -> float:
        return self.config.h


# ------------------------------------------------------------------ geometry helpers


def snapshot_schedule(num_steps: int, ratio: float = 1.5) -> list[int]:
    """All of the first ten steps, then geometric spacing, always the last one."""
    steps = set(range(min(num_steps, FIRST_SNAPSHOTS) + 1))
    x = float(FIRST_SNAPSHOTS)
    while x < num_steps:
        steps.add(int(round(x)))
        x *= ratio
    steps.add(num_steps)
    return sorted(s for s in steps if s <= num_steps)


def set_diameter(s: BinarySet) -> float:
    """Largest distance between two cell centers of ``s``."""
    if s.is_empty():
        return 0.0
    dom = s.domain
    idx = np.argwhere(s.mask).astype(np.float64)
    if idx.shape[0] > 64:
        try:
            idx = idx[ConvexHull(idx).vertices]
        except QhullError:  # flat point sets
            pass
    best = 0.0
    for start in range(0, idx.shape[0], 512):
        chunk = idx[start:start + 512]
        d2 = ((chunk[:, None, :] - idx[None, :, :]) ** 2).sum(axis=2)
        best = max(best, float(d2.max()))
    return math.sqrt(best) * dom.spacing


def touches_margin(s: BinarySet, margin: int = CONTAINMENT_MARGIN) -> bool:
    if s.domain.periodic:
        return False
    return bool((s.mask & ~interior_margin_mask(s.domain.dims, margin)).any())


def boundary_faces(s: BinarySet, curvature: np.ndarray, smoothed: np.ndarray,
                   driving: np.ndarray | None = None) -> FaceSamples:
    dom = s.domain
    mask = s.mask
    grads = np.gradient(smoothed) if min(dom.dims) > 1 else [np.zeros_like(smoothed)] * dom.ndim
    gnorm = np.sqrt(sum(g * g for g in grads))
    gnorm = np.where(gnorm > 0, gnorm, 1.0)
    pos, wts, hs, ds = [], [], [], []
    drv = driving if driving is not None else np.zeros(dom.dims)
    for ax in range(dom.ndim):
        nxt = np.roll(mask, -1, axis=ax)
        faces = mask != nxt
        if not dom.periodic:
            last = [slice(None)] * dom.ndim
            last[ax] = -1
            faces[tuple(last)] = False
        idx = np.argwhere(faces)
        if idx.size == 0:
            continue
        jdx = idx.copy()
        jdx[:, ax] = (jdx[:, ax] + 1) % dom.dims[ax]
        a, b = tuple(idx.T), tuple(jdx.T)
        n_ax = 0.5 * (np.abs(grads[ax][a] / gnorm[a]) + np.abs(grads[ax][b] / gnorm[b]))
        p = (idx + 0.5) * dom.spacing
        p[:, ax] += 0.5 * dom.spacing
        pos.append(p)
        wts.append(n_ax * dom.face_area)
        hs.append(0.5 * (curvature[a] + curvature[b]))
        ds.append(0.5 * (drv[a] + drv[b]))
    if not pos:
        empty = np.zeros((0,))
        return FaceSamples(np.zeros((0, dom.ndim)), empty, empty, empty)
    return FaceSamples(np.concatenate(pos), np.concatenate(wts), np.concatenate(hs), np.concatenate(ds))


def _interior_faces(fs: FaceSamples, dom: GridDomain) -> np.ndarray:
    """Faces far enough from the box for the curvature stencil."""
    if dom.periodic or fs.position.shape[0] == 0:
        return np.ones(fs.position.shape[0], dtype=bool)
    lo = 2.0 * dom.spacing
    hi = np.array(dom.extents) - lo
    return np.all((fs.position >= lo) & (fs.position <= hi), axis=1)


# ------------------------------------------------------------------ the driver


def _analyse(s: BinarySet, dist: SignedDistanceField, driving: SignedDistanceField | None) -> FaceSamples:
    smooth = smoothed_distance(s, CURVATURE_SMOOTHING, dist)
    H = ndimage.laplace(smooth, mode="wrap" if s.domain.periodic else "nearest") / s.domain.spacing ** 2
    return boundary_faces(s, H, smooth, None if driving is None else driving.values)


def run(e0: BinarySet, cfg: FlowConfig, progress: Callable[[StepRecord], None] | None = None) -> FlowTrajectory:
    """Iterate the minimizing-movements step from ``e0`` up to time ``cfg.T``."""
    if e0.is_empty() or e0.is_full():
        raise GridError("initial set must be neither empty nor full")
    dom = e0.domain
    if math.sqrt(cfg.h) < RESOLUTION_FACTOR * dom.spacing:
        warnings.warn(
            f"sqrt(h) = {math.sqrt(cfg.h):.3g} is below {RESOLUTION_FACTOR:g} cells; "
            "interfaces will pin to the lattice", ResolutionWarning, stacklevel=2)
    if cfg.check_containment and touches_margin(e0):
        raise ContainmentError("initial set touches the box margin")
    tr = FlowTrajectory(cfg, dom)
    step_cfg = cfg.step_config()
    dist = signed_distance(e0)
    fs0 = _analyse(e0, dist, None)
    p0 = perimeter(e0, cfg.kind)
    tr.records.append(StepRecord(
        k=0, time=0.0, perimeter_before=p0, perimeter_after=p0, lam=math.nan, dissipation_term=0.0,
        el_residual_median=math.nan, el_residual_p90=math.nan, sup_boundary_distance=0.0,
        sup_curvature=_sup_abs(fs0.curvature[_interior_faces(fs0, dom)]), flipped_cells=0,
        diameter=set_diameter(e0), volume_cells=e0.cell_count, mean_curvature=fs0.mean_curvature()))
    tr.sets.append(e0)
    tr.faces.append(fs0)
    current, warm = e0, None
    for k in range(1, cfg.num_steps + 1):
        try:
            out = mm_step(current, step_cfg, dist=dist, warm=warm)
        except Exception as exc:
            raise FlowError(f"step {k} failed: {exc}", tr) from exc
        nxt = out.set
        if cfg.mode is StepMode.VOLUME_CONSTRAINED and nxt.cell_count != current.cell_count:
            raise FlowError(f"step {k} changed the volume", tr)  # pragma: no cover - solver guarantees this
        new_dist = signed_distance(nxt) if not (nxt.is_empty() or nxt.is_full()) else None
        if new_dist is None:
            raise FlowError(f"step {k} produced a degenerate set", tr)
        fs = _analyse(nxt, new_dist, dist)
        changed = nxt.mask ^ current.mask
        dissipation = float(np.abs(dist.values[changed]).sum()) * dom.cell_volume / cfg.h
        lam = out.lam
        keep = _interior_faces(fs, dom)
        H = fs.curvature[keep]
        resid = np.abs(fs.driving[keep] / cfg.h + H - lam)
        rec = StepRecord(
            k=k, time=k * cfg.h,
            perimeter_before=tr.records[-1].perimeter_after,
            perimeter_after=perimeter(nxt, cfg.kind),
            lam=lam, dissipation_term=dissipation,
            el_residual_median=float(np.median(resid)) if resid.size else math.nan,
            el_residual_p90=float(np.percentile(resid, 90)) if resid.size else math.nan,
            sup_boundary_distance=_sup_abs(fs.driving),
            sup_curvature=_sup_abs(H),
            flipped_cells=out.flipped_cells,
            diameter=set_diameter(nxt),
            volume_cells=nxt.cell_count,
            eps_fix=out.fix_tolerance,
            inner_gap=out.inner_gap,
            step_energy=out.energy,
            previous_energy=float(
                perimeter(current, cfg.kind) + dist.values[current.mask].sum() * dom.cell_volume / cfg.h),
            mean_curvature=fs.mean_curvature(),
            kept_previous=out.kept_previous,
            inner_iterations=out.iterations,
        )
        tr.records.append(rec)
        tr.sets.append(nxt)
        tr.faces.append(fs)
        if progress is not None:
            progress(rec)
        if cfg.check_containment and touches_margin(nxt):
            raise ContainmentError(
                f"set reached the {CONTAINMENT_MARGIN}-cell box margin at step {k}; enlarge the box", tr)
        current, dist, warm = nxt, new_dist, out.dual
    tr.snapshot_steps = snapshot_schedule(len(tr.records) - 1, cfg.snapshot_ratio)
    return tr


def _sup_abs(x: np.ndarray) -> float:
    return float(np.abs(x).max()) if x.size else 0.0


# ------------------------------------------------------------------ reports


def holder_modulus(tr: FlowTrajectory, snapshots: Sequence[tuple[float, BinarySet]] | None = None) -> float:
    """``max |E_t (sym diff) E_s| / sqrt(s - t)`` over snapshot pairs with ``s - t >= h``."""
    snaps = list(tr.snapshots if snapshots is None else snapshots)
    if len(snaps) < 2:
        raise ValueError("the Hölder modulus needs at least two snapshots")
    best = 0.0
    for i in range(len(snaps)):
        for j in range(i + 1, len(snaps)):
            (t, a), (s, b) = snaps[i], snaps[j]
            gap = abs(s - t)
            if gap < tr.h * (1 - 1e-9):
                continue
            best = max(best, sym_diff_volume(a, b) / math.sqrt(gap))
    return best


def _ball_offsets(r_cells: float, ndim: int, axis: int) -> np.ndarray:
    """Integer offsets ``o`` with ``|o - e_axis / 2| <= r_cells``: a ball centred on a face."""
    R = int(math.floor(r_cells)) + 1
    rng = np.arange(-R, R + 1)
    grid = np.stack(np.meshgrid(*([rng] * ndim), indexing="ij"), axis=-1).reshape(-1, ndim)
    shift = np.zeros(ndim)
    shift[axis] = 0.5
    return grid[((grid - shift) ** 2).sum(axis=1) <= r_cells ** 2]


def _interface_face_cells(mask: np.ndarray, periodic: bool) -> list[tuple[int, np.ndarray]]:
    """For each axis, the lower cells of faces separating the two phases."""
    out = []
    for ax in range(mask.ndim):
        if periodic:
            diff = mask != np.roll(mask, -1, axis=ax)
        else:
            diff = np.zeros_like(mask)
            lo = [slice(None)] * mask.ndim
            hi = [slice(None)] * mask.ndim
            lo[ax], hi[ax] = slice(0, -1), slice(1, None)
            diff[tuple(lo)] = mask[tuple(lo)] != mask[tuple(hi)]
        out.append((ax, np.argwhere(diff)))
    return out


@dataclass(frozen=True)
class DensityReport:
    k: int
    radii: tuple[float, ...]
    volume_ratio_min: tuple[float, ...]
    volume_ratio_max: tuple[float, ...]
    perimeter_ratio_min: tuple[float, ...]
    perimeter_ratio_max: tuple[float, ...]
    volume_reference: float  # halfplane value |B_1| / 2
    perimeter_reference: float  # halfplane value |B_1^{d-1}|
    distance_ratio: float  # sup_boundary_distance / sqrt(h)
    curvature_ratio: float  # sup_curvature * sqrt(h)
    samples: int

    def within_band(self, factor: float = 20.0) -> bool:
        lo_v, hi_v = self.volume_reference / factor, self.volume_reference * factor
        lo_p, hi_p = self.perimeter_reference / factor, self.perimeter_reference * factor
        return (min(self.volume_ratio_min) >= lo_v and max(self.volume_ratio_max) <= hi_v
                and min(self.perimeter_ratio_min) >= lo_p and max(self.perimeter_ratio_max) <= hi_p)


def density_report(tr: FlowTrajectory, k: int, max_samples: int = 64) -> DensityReport:
    """Volume and perimeter densities of ``E_{k+1}`` in balls centred on its interface.

    Ball centres are midpoints of faces separating the set from its
    complement, evenly spaced through the face list. Radii are
    ``sqrt(h)/2`` and ``sqrt(h)``; balls leaving a Neumann box are skipped.
    The volume density is ``min(|E & B|, |B \\ E|) / r^d``.
    """
    if not 0 <= k < len(tr.records) - 1:
        raise IndexError(f"step {k} has no successor in the trajectory")
    s = tr.sets[k + 1]
    dom = s.domain
    d = dom.ndim
    dims = np.array(dom.dims)
    radii = (0.5 * math.sqrt(tr.h), math.sqrt(tr.h))
    faces = [(ax, c) for ax, cells in _interface_face_cells(s.mask, dom.periodic) for c in cells]
    norms = cell_gradient_norms(s.mask, tr.config.kind, dom.periodic)
    unit_ball = math.pi ** (d / 2) / math.gamma(d / 2 + 1)
    unit_disk = math.pi ** ((d - 1) / 2) / math.gamma((d - 1) / 2 + 1)
    vmin, vmax, pmin, pmax = [], [], [], []
    used = 0
    for r in radii:
        offsets = [_ball_offsets(r / dom.spacing, d, ax) for ax in range(d)]
        if dom.periodic:
            pool = faces
        else:
            pool = [(ax, c) for ax, c in faces
                    if np.all(c + offsets[ax].min(axis=0) >= 0) and np.all(c + offsets[ax].max(axis=0) < dims)]
        if len(pool) > max_samples:
            pool = [pool[i] for i in np.linspace(0, len(pool) - 1, max_samples).round().astype(int)]
        used = max(used, len(pool))
        vols, pers = [], []
        for ax, c in pool:
            pts = offsets[ax] + c
            if dom.periodic:
                pts = pts % dims
            ix = tuple(pts.T)
            inside = int(s.mask[ix].sum())
            vols.append(min(inside, pts.shape[0] - inside) * dom.cell_volume / r ** d)
            pers.append(float(norms[ix].sum()) * dom.face_area / r ** (d - 1))
        vmin.append(min(vols) if vols else math.nan)
        vmax.append(max(vols) if vols else math.nan)
        pmin.append(min(pers) if pers else math.nan)
        pmax.append(max(pers) if pers else math.nan)
    rec = tr.records[k + 1]
    sq = math.sqrt(tr.h)
    return DensityReport(k, radii, tuple(vmin), tuple(vmax), tuple(pmin), tuple(pmax),
                         unit_ball / 2, unit_disk, rec.sup_boundary_distance / sq, rec.sup_curvature * sq, used)


@dataclass(frozen=True)
class MultiplierReport:
    max_lambda_sqrt_h: float
    curvature_energy: float  # sum_k h * (|H|^2 + lambda^2) integrated over the boundary
    deviation_energy: float  # sum_k h * |H - lambda|^2 integrated over the boundary
    perimeter_drop: float
    dissipation_constant: float  # deviation_energy / perimeter_drop


def multiplier_report(tr: FlowTrajectory) -> MultiplierReport:
    if tr.config.mode is not StepMode.VOLUME_CONSTRAINED:
        raise ValueError("multiplier report needs a volume-constrained run")
    sq = math.sqrt(tr.h)
    lam_max, e_curv, e_dev = 0.0, 0.0, 0.0
    for rec, fs in zip(tr.records[1:], tr.faces[1:]):
        lam_max = max(lam_max, abs(rec.lam) * sq)
        keep = _interior_faces(fs, tr.domain)
        w, H = fs.weight[keep], fs.curvature[keep]
        e_curv += tr.h * float((w * H ** 2).sum() + rec.lam ** 2 * fs.area)
        e_dev += tr.h * float((w * (H - rec.lam) ** 2).sum())
    drop = tr.records[0].perimeter_after - tr.records[-1].perimeter_after
    const = e_dev / drop if drop > 0 else math.nan
    return MultiplierReport(lam_max, e_curv, e_dev, drop, const)


TestFunction = Callable[..., np.ndarray]


def default_test_functions(domain: GridDomain) -> list[tuple[str, TestFunction]]:
    """Spatial factors: constant, linear, quadratic and low trigonometric modes.

    Each takes normalized coordinates ``X_i = x_i / L_i`` in ``[0, 1]``.
    """
    fams: list[tuple[str, TestFunction]] = [("one", lambda *X: np.ones_like(X[0]))]
    names = "xyz"
    for i in range(domain.ndim):
        fams.append((names[i], lambda *X, i=i: X[i] - 0.5))
        fams.append((names[i] + "2", lambda *X, i=i: (X[i] - 0.5) ** 2))
        fams.append(("cos" + names[i], lambda *X, i=i: np.cos(2 * np.pi * X[i])))
        fams.append(("sin" + names[i], lambda *X, i=i: np.sin(2 * np.pi * X[i])))
    if domain.ndim >= 2:
        fams.append(("xy", lambda *X: (X[0] - 0.5) * (X[1] - 0.5)))
        fams.append(("cosxcosy", lambda *X: np.cos(2 * np.pi * X[0]) * np.cos(2 * np.pi * X[1])))
    return fams


def time_cutoff(t: np.ndarray | float, T: float) -> np.ndarray:
    """``(1 - t/T)^2`` on ``[0, T]``, zero afterwards: C^1 and vanishing at ``T``."""
    t = np.asarray(t, dtype=np.float64)
    return np.where(t < T, (1.0 - t / T) ** 2, 0.0)


@dataclass(frozen=True)
class WeakFormResidual:
    value: float  # max over the family and both identities
    curvature_identity: dict
    transport_identity: dict


def weak_form_residual(tr: FlowTrajectory, test_functions: Sequence[tuple[str, TestFunction]] | None = None,
                       detail: bool = False):
    """Discrete mismatch in both identities of the distributional formulation.

    The sets are piecewise constant in time (``E_t = E_k`` on
    ``[kh, (k+1)h)``); the outward normal velocity on the boundary of
    ``E_k`` is ``v = dist_{E_{k-1}} / h``. For ``phi = psi(t) xi(x)``:

    * curvature identity: ``sum_k h * int_{bd E_k} (v + H - Hbar) phi``
    * transport identity: ``sum_k [int_{E_k} phi_k - int_{E_{k-1}} phi_k] - h * int_{bd E_k} v phi_k``

    which is the summation-by-parts form of
    ``int int_E d_t phi + int_{E_0} phi(0) = -int int_{bd E} v phi``.
    Each mismatch is divided by ``sum_k h * int_{bd E_k} |phi|``, giving
    a residual in units of 1/length.
    """
    if len(tr.records) < 11:
        raise ValueError("weak-form residual needs at least 10 steps")
    dom = tr.domain
    fams = list(test_functions) if test_functions is not None else default_test_functions(dom)
    T = tr.records[-1].time + tr.h  # support ends one step after the last set
    centers = dom.cell_centers()
    Xc = [c / L for c, L in zip(centers, dom.extents)]
    res1, res2 = {}, {}
    for name, xi in fams:
        xi_cells = np.asarray(xi(*Xc), dtype=np.float64) * np.ones(dom.dims)
        r1 = r2 = norm = 0.0
        for k in range(1, len(tr.records)):
            fs = tr.faces[k]
            psi = float(time_cutoff(tr.records[k].time, T))
            if psi == 0.0:
                continue
            Xf = [fs.position[:, i] / dom.extents[i] for i in range(dom.ndim)]
            phi_f = psi * np.asarray(xi(*Xf), dtype=np.float64) * np.ones(fs.weight.shape)
            v = fs.driving / tr.h
            Hbar = fs.mean_curvature()
            keep = _interior_faces(fs, dom)
            r1 += tr.h * float((fs.weight * (v + fs.curvature - Hbar) * phi_f)[keep].sum())
            moved = tr.sets[k].mask.astype(np.float64) - tr.sets[k - 1].mask
            r2 += psi * float((moved * xi_cells).sum()) * dom.cell_volume \
                - tr.h * float((fs.weight * v * phi_f).sum())
            norm += tr.h * float((fs.weight * np.abs(phi_f)).sum())
        res1[name] = abs(r1) / norm if norm > 0 else 0.0
        res2[name] = abs(r2) / norm if norm > 0 else 0.0
    value = max(max(res1.values()), max(res2.values()))
    if detail:
        return WeakFormResidual(value, res1, res2)
    return value


def _components(mask: np.ndarray, periodic: bool) -> tuple[np.ndarray, int]:
    structure = ndimage.generate_binary_structure(mask.ndim, 1)  # face neighbours only
    labels, n = ndimage.label(mask, structure=structure)
    if periodic and n > 1:
        parent = list(range(n + 1))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for ax in range(mask.ndim):
            first = np.take(labels, 0, axis=ax)
            last = np.take(labels, -1, axis=ax)
            for a, b in zip(first.ravel(), last.ravel()):
                if a and b:
                    ra, rb = find(a), find(b)
                    if ra != rb:
                        parent[max(ra, rb)] = min(ra, rb)
        roots = np.array([find(i) for i in range(n + 1)])
        uniq = {r: i for i, r in enumerate(sorted(set(roots[1:])), start=1)}
        remap = np.array([0] + [uniq[r] for r in roots[1:]])
        labels = remap[labels]
        n = len(uniq)
    return labels, n


def count_components(s: BinarySet) -> int:
    return _components(s.mask, s.domain.periodic)[1]


def disk_floor_ratio(domain: GridDomain, cells: int, kind: PerimeterKind = PerimeterKind.ISOTROPIC) -> float:
    """Isoperimetric ratio of the digitized ball with the cell count closest to ``cells``."""
    if cells <= 0:
        raise ValueError("need a positive cell count")
    centers = domain.cell_centers()
    mid = domain.center()
    r2 = sum((c - m) ** 2 for c, m in zip(centers, mid))
    order = np.sort(r2.ravel())
    cells = min(cells, order.size)
    radius2 = order[cells - 1]
    ball = BinarySet(domain, r2 <= radius2)
    return isoperimetric_ratio(ball, kind)


def second_moment_elongation(mask: np.ndarray) -> float:
    """Square root of the eigenvalue ratio of the cell-position covariance."""
    pts = np.argwhere(mask).astype(np.float64)
    if pts.shape[0] < 2:
        return 1.0
    ev = np.linalg.eigvalsh(np.cov(pts.T))
    return float(math.sqrt(ev[-1] / max(ev[0], 1e-300)))


@dataclass(frozen=True)
class BallConvergenceReport:
    times: tuple[float, ...]
    ratios: tuple[float, ...]
    components: tuple[int, ...]
    final_ratio: float
    floor_ratio: float
    component_ratios: tuple[float, ...]
    component_floors: tuple[float, ...]
    final_elongation: float

    @property
    def relative_to_floor(self) -> float:
        return self.final_ratio / self.floor_ratio

    @property
    def component_relative(self) -> tuple[float, ...]:
        return tuple(r / f for r, f in zip(self.component_ratios, self.component_floors))


def ball_convergence_report(tr: FlowTrajectory) -> BallConvergenceReport:
    dom = tr.domain
    if dom.ndim != 2:
        raise ValueError("ball convergence report is for 2D runs")
    times, ratios, comps = [], [], []
    for t, s in tr.snapshots:
        times.append(t)
        ratios.append(isoperimetric_ratio(s))
        comps.append(count_components(s))
    final = tr.sets[-1]
    labels, n = _components(final.mask, dom.periodic)
    c_ratios, c_floors = [], []
    for lab in range(1, n + 1):
        part = BinarySet(dom, labels == lab)
        c_ratios.append(isoperimetric_ratio(part))
        c_floors.append(disk_floor_ratio(dom, part.cell_count))
    floor = disk_floor_ratio(dom, final.cell_count)
    return BallConvergenceReport(tuple(times), tuple(ratios), tuple(comps), isoperimetric_ratio(final), floor,
                                 tuple(c_ratios), tuple(c_floors), second_moment_elongation(final.mask))


# ------------------------------------------------------------------ output


def write_records_csv(tr: FlowTrajectory, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for rec in tr.records:
            row = asdict(rec)
            w.writerow([_fmt(row[c]) for c in CSV_COLUMNS])


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, np.integer):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return repr(x) if math.isfinite(x) else ("nan" if math.isnan(x) else ("inf" if x > 0 else "-inf"))
    return str(x)


def jsonable(obj):
    """Convert reports (dataclasses, tuples, numpy scalars, non-finite floats) to JSON values."""
    if hasattr(obj, "__dataclass_fields__"):
        return {k: jsonable(v) for k, v in asdict(obj).items()}
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, (str, int, bool)) or obj is None:
        return obj
    return str(obj)


def write_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")
