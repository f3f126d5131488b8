"""Command-line front end.

Config files are flat ``key = value`` text; keys carry their unit
(``h_time``, ``dx_length``, ...). Lines starting with ``#`` are comments.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import sys
import warnings
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import flow
from .energy import PerimeterKind
from .geometry import BinarySet, GridDomain, GridError, load_mask, save_mask, save_pgm, sym_diff_volume
from .mmsolver import ConvergenceError, StepConfig, StepMode, mm_step
from .oracle import brute_force_min

logger = logging.getLogger("flatflow")

EXIT_OK, EXIT_MISMATCH, EXIT_CONFIG, EXIT_IO, EXIT_SOLVER = 0, 1, 2, 3, 4
PRESETS = ("ball", "ellipse", "two-balls", "perturbed-circle", "from-file")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    grid_cells: tuple[int, ...] = (128, 128)
    dx_length: float = 1.0
    boundary: str = "neumann"
    preset: str = "ball"
    radius_length: float | None = None  # equal-area radius; default a quarter of the shortest side
    aspect: str = "2:1"
    gap_length: float | None = None
    amplitude_length: float | None = None
    wavenumber: int = 5
    mask_path: str = ""
    h_time: float = 64.0
    T_time: float = 640.0
    snapshot_ratio: float = 1.5
    kind: str = "isotropic"
    mode: str = "volume_constrained"
    inner_tol_energy: float | None = None
    inner_max_iters: int = 20000
    lambda_tol_cells: int = 0
    ladder_time: tuple[float, ...] = ()
    write_pgm: bool = False
    seed: int = 0
    override_resolution_guard: bool = False

    def __post_init__(self):
        try:
            GridDomain(tuple(self.grid_cells), self.dx_length, self.boundary)
            PerimeterKind(self.kind)
            StepMode(self.mode)
        except (GridError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}; choose from {', '.join(PRESETS)}")
        if self.preset == "from-file" and not self.mask_path:
            raise ConfigError("preset from-file needs mask_path")
        if not self.h_time > 0 or not self.T_time >= 0:
            raise ConfigError("need h_time > 0 and T_time >= 0")
        if self.inner_tol_energy is not None and not self.inner_tol_energy > 0:
            raise ConfigError("inner_tol_energy must be positive")
        if self.lambda_tol_cells < 0:
            raise ConfigError("lambda_tol_cells must be >= 0")
        _aspect(self.aspect)

    # -- resolution guard
    def resolution_problem(self, h: float | None = None) -> str | None:
        h = self.h_time if h is None else h
        if math.sqrt(h) < flow.RESOLUTION_FACTOR * self.dx_length:
            return (f"sqrt(h) = {math.sqrt(h):.4g} is below {flow.RESOLUTION_FACTOR:g} * dx = "
                    f"{flow.RESOLUTION_FACTOR * self.dx_length:.4g}; pass --override-resolution-guard to run anyway")
        return None

    def domain(self) -> GridDomain:
        return GridDomain(tuple(self.grid_cells), self.dx_length, self.boundary)

    def flow_config(self, h: float | None = None) -> flow.FlowConfig:
        return flow.FlowConfig(h=self.h_time if h is None else h, T=self.T_time, kind=self.kind, mode=self.mode,
                               inner_tol=self.inner_tol_energy, inner_max_iters=self.inner_max_iters,
                               lambda_tol=self.lambda_tol_cells, snapshot_ratio=self.snapshot_ratio)

    def resolved(self) -> dict:
        """Every field with defaults filled in, as plain JSON values."""
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        ext = min(self.grid_cells) * self.dx_length
        if d["radius_length"] is None:
            d["radius_length"] = 0.25 * ext
        if d["gap_length"] is None:
            d["gap_length"] = 0.25 * d["radius_length"]
        if d["amplitude_length"] is None:
            d["amplitude_length"] = 0.1 * d["radius_length"]
        if d["inner_tol_energy"] is None:
            d["inner_tol_energy"] = StepConfig(h=self.h_time).tolerance_for(self.dx_length ** (len(self.grid_cells) - 1))
        d["grid_cells"] = list(self.grid_cells)
        d["ladder_time"] = list(self.ladder_time)
        return d

    # -- text format
    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {_format_value(v)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        known = {f.name: f for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key = value")
            key, val = (p.strip() for p in line.split("=", 1))
            if key not in known:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            if key in values:
                raise ConfigError(f"line {lineno}: duplicate key {key!r}")
            values[key] = _parse_value(key, val)
        return cls(**values)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_text(fh.read())


_INT_KEYS = {"wavenumber", "inner_max_iters", "lambda_tol_cells", "seed"}
_FLOAT_KEYS = {"dx_length", "h_time", "T_time", "snapshot_ratio"}
_OPT_FLOAT_KEYS = {"radius_length", "gap_length", "amplitude_length", "inner_tol_energy"}
_BOOL_KEYS = {"write_pgm", "override_resolution_guard"}


def _parse_value(key: str, val: str):
    try:
        if key == "grid_cells":
            parts = val.lower().replace(",", "x").split("x")
            return tuple(int(p) for p in parts if p.strip())
        if key == "ladder_time":
            return tuple(float(p) for p in val.split(",") if p.strip())
        if key in _INT_KEYS:
            return int(val)
        if key in _FLOAT_KEYS:
            return float(val)
        if key in _OPT_FLOAT_KEYS:
            return None if val.lower() in ("", "none", "default") else float(val)
        if key in _BOOL_KEYS:
            low = val.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(val)
            return low in ("true", "1", "yes")
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {val!r}") from exc
    return val


def _format_value(v) -> str:
    if v is None:
        return "default"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        if v and all(isinstance(x, int) for x in v):
            return "x".join(str(x) for x in v)
        return ",".join(repr(float(x)) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _aspect(text: str) -> tuple[float, float]:
    try:
        a, b = (float(x) for x in text.split(":"))
    except ValueError as exc:
        raise ConfigError(f"aspect must look like 2:1, got {text!r}") from exc
    if not (a > 0 and b > 0):
        raise ConfigError("aspect entries must be positive")
    return a, b


# ------------------------------------------------------------------ presets


def build_initial_set(cfg: RunConfig) -> BinarySet:
    dom = cfg.domain()
    if cfg.preset == "from-file":
        s = load_mask(cfg.mask_path)
        if s.domain.dims != dom.dims:
            raise ConfigError(f"mask has dims {s.domain.dims}, config says {dom.dims}")
        return BinarySet(dom, s.mask)
    r = cfg.resolved()
    R = r["radius_length"]
    x = [c - m for c, m in zip(dom.cell_centers(), dom.center())]
    rad2 = sum(xi ** 2 for xi in x)
    if cfg.preset == "ball":
        mask = rad2 < R ** 2
    elif cfg.preset == "ellipse":
        a, b = _aspect(cfg.aspect)
        scale = R / math.sqrt(a * b)  # same area as the disk of radius R
        q = (x[0] / (a * scale)) ** 2 + (x[1] / (b * scale)) ** 2
        for xi in x[2:]:
            q = q + (xi / R) ** 2
        mask = q < 1.0
    elif cfg.preset == "two-balls":
        off = R + 0.5 * r["gap_length"]
        left = (x[0] + off) ** 2 + sum(xi ** 2 for xi in x[1:])
        right = (x[0] - off) ** 2 + sum(xi ** 2 for xi in x[1:])
        mask = (left < R ** 2) | (right < R ** 2)
    elif cfg.preset == "perturbed-circle":
        if dom.ndim != 2:
            raise ConfigError("perturbed-circle is a 2D preset")
        phase = float(np.random.default_rng(cfg.seed).uniform(0.0, 2.0 * math.pi))
        theta = np.arctan2(x[1], x[0])
        mask = np.sqrt(rad2) < R + r["amplitude_length"] * np.cos(cfg.wavenumber * theta + phase)
    else:  # pragma: no cover - validated in RunConfig
        raise ConfigError(cfg.preset)
    s = BinarySet(dom, mask)
    if s.is_empty() or s.is_full():
        raise ConfigError("the preset produced an empty or full set")
    return s


# ------------------------------------------------------------------ commands


def _summary(cfg: RunConfig, tr: flow.FlowTrajectory, h: float) -> dict:
    dom = tr.domain
    recs = tr.records
    steps = recs[1:]
    acc_fix = 0.0
    perim_ok = True
    for rec in steps:
        acc_fix += rec.eps_fix
        perim_ok &= rec.perimeter_after <= recs[0].perimeter_after + acc_fix + 1e-9
    eps_grid_volume = recs[0].perimeter_after * dom.spacing
    diam_budget = recs[0].diameter + sum(h * abs(r.lam) for r in steps if math.isfinite(r.lam))
    out = {
        "config": cfg.resolved(),
        "h_time": h,
        "steps": len(steps),
        "tolerances": {
            "inner_tol_energy": StepConfig(h=h, inner_tol=cfg.inner_tol_energy).tolerance_for(dom.face_area),
            "lambda_tol_cells": cfg.lambda_tol_cells,
            "eps_grid_volume": eps_grid_volume,
            "eps_grid_perimeter_per_cell": 2 * dom.ndim * dom.face_area,
            "eps_grid_length": dom.spacing * math.sqrt(dom.ndim),
            "eps_grid_velocity": dom.spacing / h,
            "resolution_factor": flow.RESOLUTION_FACTOR,
        },
        "checks": {
            "volume_conserved": all(r.volume_cells == recs[0].volume_cells for r in recs)
            if StepMode(cfg.mode) is StepMode.VOLUME_CONSTRAINED else None,
            "dissipation_all_steps": all(r.dissipation_slack >= -1e-9 for r in steps),
            "perimeter_bounded": perim_ok,
            "diameter_bounded": all(r.diameter <= diam_budget + dom.spacing * math.sqrt(dom.ndim) for r in recs),
        },
        "final": {
            "time": recs[-1].time,
            "perimeter": recs[-1].perimeter_after,
            "volume_cells": recs[-1].volume_cells,
            "diameter": recs[-1].diameter,
            "sym_diff_volume_from_initial": sym_diff_volume(tr.sets[0], tr.sets[-1]),
        },
        "initial": {"perimeter": recs[0].perimeter_after, "volume_cells": recs[0].volume_cells,
                    "diameter": recs[0].diameter},
    }
    reports = {}
    sq = math.sqrt(h)
    if steps:
        reports["max_sup_boundary_distance_over_sqrt_h"] = max(r.sup_boundary_distance for r in steps) / sq
        reports["max_sup_curvature_times_sqrt_h"] = max(r.sup_curvature for r in steps) * sq
        reports["el_residual_median_max"] = max(r.el_residual_median for r in steps)
    if len(tr.snapshot_steps) >= 2:
        reports["holder_constant"] = flow.holder_modulus(tr)
    if StepMode(cfg.mode) is StepMode.VOLUME_CONSTRAINED and steps:
        reports["multiplier"] = flow.multiplier_report(tr)
    if steps:
        reports["density"] = flow.density_report(tr, len(recs) - 2)
    if len(recs) >= 11:
        reports["weak_form_residual"] = flow.weak_form_residual(tr, detail=True)
    if dom.ndim == 2:
        reports["ball_convergence"] = flow.ball_convergence_report(tr)
    out["reports"] = reports
    return flow.jsonable(out)


def _write_run(cfg: RunConfig, tr: flow.FlowTrajectory, out_dir: Path, h: float) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    flow.write_records_csv(tr, out_dir / "steps.csv")
    masks = out_dir / "masks"
    masks.mkdir(exist_ok=True)
    for t, s in tr.snapshots:
        stem = f"t_{t:.6f}"
        save_mask(s, masks / f"{stem}.mask")
        if cfg.write_pgm and s.domain.ndim == 2:
            save_pgm(s, masks / f"{stem}.pgm")
    summary = _summary(cfg, tr, h)
    flow.write_json(summary, out_dir / "summary.json")
    return summary


def _run_flow(cfg: RunConfig, h: float | None = None) -> flow.FlowTrajectory:
    e0 = build_initial_set(cfg)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", flow.ResolutionWarning)
        return flow.run(e0, cfg.flow_config(h))


def _guard(cfg: RunConfig, hs) -> None:
    if cfg.override_resolution_guard:
        return
    for h in hs:
        msg = cfg.resolution_problem(h)
        if msg:
            raise ConfigError(msg)


def cmd_run(cfg: RunConfig, out_dir: Path) -> int:
    _guard(cfg, [cfg.h_time])
    tr = _run_flow(cfg)
    _write_run(cfg, tr, out_dir, cfg.h_time)
    return EXIT_OK


STUDY_COLUMNS = ["time", "h", "perimeter", "sym_diff_to_next_h", "holder_constant", "max_lambda_sqrt_h",
                 "sup_distance_over_sqrt_h", "sup_curvature_times_sqrt_h", "weak_form_residual"]


def cmd_study(cfg: RunConfig, out_dir: Path, ladder=None) -> int:
    hs = sorted(set(ladder or cfg.ladder_time), reverse=True)
    if len(hs) < 2:
        raise ConfigError("a study needs at least two ladder values (ladder_time = h1,h2,...)")
    _guard(cfg, hs)
    out_dir.mkdir(parents=True, exist_ok=True)
    runs = {}
    for h in hs:
        tr = _run_flow(cfg, h)
        summary = _write_run(cfg, tr, out_dir / f"h_{h:g}", h)
        runs[h] = (tr, summary)
    # compare at times that every run has reached exactly: multiples of the largest h
    coarse = runs[hs[0]][0]
    times = [coarse.records[k].time for k in coarse.snapshot_steps]
    rows = []
    for t in times:
        sets = []
        for h in hs:
            tr = runs[h][0]
            k = int(round(t / h))
            sets.append(tr.sets[k] if k < len(tr.sets) else None)
        for i, h in enumerate(hs):
            tr, summary = runs[h]
            k = int(round(t / h))
            if k >= len(tr.records):
                continue
            rep = summary["reports"]
            nxt = sets[i + 1] if i + 1 < len(hs) else None
            rows.append([
                t, h, tr.records[k].perimeter_after,
                sym_diff_volume(sets[i], nxt) if nxt is not None and sets[i] is not None else "",
                rep.get("holder_constant", ""),
                rep.get("multiplier", {}).get("max_lambda_sqrt_h", ""),
                rep.get("max_sup_boundary_distance_over_sqrt_h", ""),
                rep.get("max_sup_curvature_times_sqrt_h", ""),
                rep.get("weak_form_residual", {}).get("value", ""),
            ])
    with open(out_dir / "study.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STUDY_COLUMNS)
        for row in rows:
            w.writerow([flow._fmt(x) if isinstance(x, float) else x for x in row])
    return EXIT_OK


ORACLE_COLUMNS = ["instance", "size", "h", "cells", "step_energy", "oracle_energy", "tolerance",
                  "oracle_ties", "flipped_cells", "masks_equal", "passed"]


def oracle_instances(seed: int, count: int):
    """Deterministic random instances: alternating 4x4 and 5x5 grids."""
    rng = np.random.default_rng(seed)
    for i in range(count):
        n = 4 if i % 2 == 0 else 5
        while True:
            mask = rng.random((n, n)) < rng.uniform(0.2, 0.8)
            if 0 < mask.sum() < n * n:
                break
        h = float(rng.choice([0.25, 1.0, 4.0, 16.0]))
        yield i, BinarySet(GridDomain((n, n)), mask), h


def run_oracle_instance(f: BinarySet, h: float, inner_tol: float = 1e-6):
    cfg = StepConfig(h=h, kind=PerimeterKind.ANISOTROPIC4, lambda_tol=0, inner_tol=inner_tol,
                     inner_max_iters=200000)
    out = mm_step(f, cfg)
    ref = brute_force_min(f, h, f.cell_count)
    tol = cfg.tolerance_for(f.domain.face_area) + out.fix_tolerance
    passed = out.energy <= ref.best_energy + tol and out.set.cell_count == f.cell_count
    return out, ref, tol, passed


def cmd_oracle_test(seed: int, count: int, out_dir: Path | None, stream=None) -> int:
    stream = stream or sys.stdout
    rows = []
    failures = 0
    for i, f, h in oracle_instances(seed, count):
        out, ref, tol, passed = run_oracle_instance(f, h)
        failures += not passed
        row = [i, f"{f.domain.dims[0]}x{f.domain.dims[1]}", h, f.cell_count, out.energy, ref.best_energy, tol,
               ref.ties, out.flipped_cells, bool(np.array_equal(out.set.mask, ref.best_mask.mask)), passed]
        rows.append(row)
        print(f"instance {i:4d} {row[1]} h={h:g} step={out.energy:.9g} oracle={ref.best_energy:.9g} "
              f"{'PASS' if passed else 'FAIL'}", file=stream)
    print(f"oracle-test: {count - failures}/{count} passed (seed {seed})", file=stream)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "oracle.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(ORACLE_COLUMNS)
            for row in rows:
                w.writerow([flow._fmt(x) for x in row])
    return EXIT_OK if failures == 0 else EXIT_MISMATCH


# ------------------------------------------------------------------ entry point


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="flatflow", description="Volume-preserving flat flow on a grid.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("run", "study"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="key = value config file")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        sp.add_argument("--override-resolution-guard", action="store_true")
        if name == "study":
            sp.add_argument("--ladder", default=None, help="comma-separated h values (overrides ladder_time)")
    sp = sub.add_parser("oracle-test")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--count", type=int, default=200)
    sp.add_argument("--out", default=None)
    sp.add_argument("--config", default=None, help="accepted for symmetry; unused")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _error(code: int, kind: str, message: str, out: str | None) -> int:
    payload = {"error": kind, "message": message, "exit_code": code}
    text = json.dumps(payload, sort_keys=True)
    print(text, file=sys.stderr)
    if out:
        try:
            Path(out).mkdir(parents=True, exist_ok=True)
            with open(Path(out) / "error.json", "w") as fh:
                fh.write(text + "\n")
        except OSError:
            pass
    return code


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    out = getattr(args, "out", None)
    try:
        if args.command == "oracle-test":
            if args.count < 0:
                raise ConfigError("count must be >= 0")
            return cmd_oracle_test(args.seed, args.count, Path(out) if out else None)
        cfg = RunConfig.load(args.config)
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.override_resolution_guard:
            overrides["override_resolution_guard"] = True
        if getattr(args, "ladder", None):
            overrides["ladder_time"] = tuple(float(x) for x in args.ladder.split(",") if x.strip())
        if overrides:
            cfg = dataclasses.replace(cfg, **overrides)
        if args.command == "run":
            return cmd_run(cfg, Path(out))
        return cmd_study(cfg, Path(out))
    except FileNotFoundError as exc:
        code = EXIT_CONFIG if getattr(args, "config", None) and exc.filename == args.config else EXIT_IO
        return _error(code, "config" if code == EXIT_CONFIG else "io", str(exc), out if code == EXIT_IO else None)
    except ConfigError as exc:
        return _error(EXIT_CONFIG, "config", str(exc), out)
    except (GridError, ValueError) as exc:
        return _error(EXIT_CONFIG, "config", str(exc), out)
    except OSError as exc:
        return _error(EXIT_IO, "io", str(exc), None)
    except (flow.FlowError, ConvergenceError, RuntimeError) as exc:
        return _error(EXIT_SOLVER, "solver", str(exc), out)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
