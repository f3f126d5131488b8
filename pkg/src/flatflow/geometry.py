"""Uniform grids, binary sets and scalar fields, plus mask file I/O.

Cells are identified with their centers and sets are unions of closed
cells, so volumes and symmetric differences are exact cell counts times
the cell volume.

Mask file format (text header, then payload)::

    FFMASK 1
    dims 64 64
    spacing 0.015625
    bc neumann
    data
    0100110...   (one line per row, '0'/'1' per cell, row-major)

Raw float dumps use the same header with magic ``FFRAW`` and ``data``
followed by ``prod(dims)`` little-endian float64 values.
"""
from __future__ import annotations

import enum
import math
import os
from dataclasses import dataclass, field

import numpy as np

MASK_MAGIC = "FFMASK 1"
RAW_MAGIC = "FFRAW 1"
MAX_CELLS = 1 << 28


class BoundaryCondition(str, enum.Enum):
    NEUMANN = "neumann"
    PERIODIC = "periodic"


class GridError(ValueError):
    """Raised on invalid grids, domain mismatches and malformed files."""


@dataclass(frozen=True)
class GridDomain:
    dims: tuple[int, ...]
    spacing: float = 1.0
    boundary_condition: BoundaryCondition = BoundaryCondition.NEUMANN

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "boundary_condition", BoundaryCondition(self.boundary_condition))
        if len(dims) not in (2, 3):
            raise GridError(f"only 2D and 3D grids are supported, got {len(dims)}D")
        if any(n < 4 for n in dims):
            raise GridError(f"every axis needs at least 4 cells, got {dims}")
        if not (self.spacing > 0 and math.isfinite(self.spacing)):
            raise GridError(f"spacing must be positive and finite, got {self.spacing}")
        if math.prod(dims) > MAX_CELLS:
            raise GridError(f"grid of {math.prod(dims)} cells exceeds the {MAX_CELLS} cell limit")

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def num_cells(self) -> int:
        return math.prod(self.dims)

    @property
    def cell_volume(self) -> float:
        return self.spacing ** self.ndim

    @property
    def face_area(self) -> float:
        return self.spacing ** (self.ndim - 1)

    @property
    def extents(self) -> tuple[float, ...]:
        return tuple(n * self.spacing for n in self.dims)

    @property
    def diameter(self) -> float:
        return math.sqrt(sum(e * e for e in self.extents))

    @property
    def periodic(self) -> bool:
        return self.boundary_condition is BoundaryCondition.PERIODIC

    def cell_centers(self) -> tuple[np.ndarray, ...]:
        """Coordinates of cell centers, ``indexing='ij'``; the box starts at the origin."""
        axes = [(np.arange(n) + 0.5) * self.spacing for n in self.dims]
        return tuple(np.meshgrid(*axes, indexing="ij"))

    def center(self) -> tuple[float, ...]:
        return tuple(e / 2 for e in self.extents)


@dataclass(frozen=True, eq=False)
class BinarySet:
    """Indicator of a set on ``domain``; ``mask`` is a read-only bool array."""

    domain: GridDomain
    mask: np.ndarray = field(repr=False)

    def __post_init__(self):
        mask = np.asarray(self.mask)
        if mask.shape != self.domain.dims:
            if mask.size != self.domain.num_cells:
                raise GridError(f"mask of {mask.size} cells does not fit grid {self.domain.dims}")
            mask = mask.reshape(self.domain.dims)
        mask = np.array(mask, dtype=bool, copy=True)
        mask.flags.writeable = False
        object.__setattr__(self, "mask", mask)

    @property
    def cell_count(self) -> int:
        return int(np.count_nonzero(self.mask))

    def is_empty(self) -> bool:
        return not self.mask.any()

    def is_full(self) -> bool:
        return bool(self.mask.all())

    def complement(self) -> "BinarySet":
        return BinarySet(self.domain, ~self.mask)

    def with_mask(self, mask: np.ndarray) -> "BinarySet":
        return BinarySet(self.domain, mask)

    def __eq__(self, other):
        if not isinstance(other, BinarySet):
            return NotImplemented
        return self.domain == other.domain and np.array_equal(self.mask, other.mask)

    def __hash__(self):
        return hash((self.domain, self.mask.tobytes()))


@dataclass(frozen=True, eq=False)
class ScalarField:
    domain: GridDomain
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.shape != self.domain.dims:
            if values.size != self.domain.num_cells:
                raise GridError(f"field of {values.size} values does not fit grid {self.domain.dims}")
            values = values.reshape(self.domain.dims)
        if not np.all(np.isfinite(values)):
            raise GridError("scalar field contains NaN or Inf")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)


def volume(s: BinarySet) -> float:
    return s.cell_count * s.domain.cell_volume


def _check_same_domain(a: BinarySet, b: BinarySet) -> None:
    if a.domain != b.domain:
        raise GridError(f"domain mismatch: {a.domain} vs {b.domain}")


def sym_diff_cells(a: BinarySet, b: BinarySet) -> int:
    _check_same_domain(a, b)
    return int(np.count_nonzero(a.mask ^ b.mask))


def sym_diff_volume(a: BinarySet, b: BinarySet) -> float:
    """Volume of ``a Δ b``."""
    return sym_diff_cells(a, b) * a.domain.cell_volume


def union(a: BinarySet, b: BinarySet) -> BinarySet:
    _check_same_domain(a, b)
    return a.with_mask(a.mask | b.mask)


# ---------------------------------------------------------------- file I/O


def _header(magic: str, domain: GridDomain) -> str:
    return (
        f"{magic}\n"
        f"dims {' '.join(str(n) for n in domain.dims)}\n"
        f"spacing {domain.spacing!r}\n"
        f"bc {domain.boundary_condition.value}\n"
        "data\n"
    )


def _read_header(fh, magic: str, expect_ndim: int | None) -> GridDomain:
    def line() -> str:
        raw = fh.readline()
        if not raw:
            raise GridError("truncated header")
        return raw.decode("ascii", errors="replace").strip() if isinstance(raw, bytes) else raw.strip()

    if line() != magic:
        raise GridError(f"bad magic, expected {magic!r}")
    fields = {}
    while True:
        text = line()
        if text == "data":
            break
        key, _, rest = text.partition(" ")
        fields[key] = rest
    try:
        dims = tuple(int(tok) for tok in fields["dims"].split())
        spacing = float(fields["spacing"])
        bc = BoundaryCondition(fields.get("bc", "neumann"))
    except (KeyError, ValueError) as exc:
        raise GridError(f"malformed header: {exc}") from exc
    if not dims or any(n <= 0 for n in dims) or math.prod(dims) > MAX_CELLS:
        raise GridError(f"header dims {dims} out of range")
    if expect_ndim is not None and len(dims) != expect_ndim:
        raise GridError(f"file holds a {len(dims)}D grid, expected {expect_ndim}D")
    return GridDomain(dims, spacing, bc)


def save_mask(s: BinarySet, path: str | os.PathLike) -> None:
    flat = s.mask.reshape(-1, s.domain.dims[-1])
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(_header(MASK_MAGIC, s.domain))
        for row in flat:
            fh.write("".join("1" if b else "0" for b in row))
            fh.write("\n")


def load_mask(path: str | os.PathLike, ndim: int | None = None) -> BinarySet:
    """Read a mask file; ``ndim`` rejects files of the wrong dimension."""
    with open(path, "r", encoding="ascii") as fh:
        domain = _read_header(fh, MASK_MAGIC, ndim)
        rows = [ln.strip() for ln in fh.read().split("\n") if ln.strip()]
    width = domain.dims[-1]
    nrows = domain.num_cells // width
    if len(rows) != nrows or any(len(r) != width for r in rows):
        raise GridError(f"payload does not match dims {domain.dims}")
    payload = "".join(rows)
    if set(payload) - {"0", "1"}:
        raise GridError("payload contains characters other than 0/1")
    bits = np.frombuffer(payload.encode("ascii"), dtype=np.uint8) == ord("1")
    return BinarySet(domain, bits.reshape(domain.dims))


def save_raw(domain: GridDomain, values: np.ndarray, path: str | os.PathLike) -> None:
    values = np.asarray(values, dtype="<f8")
    if values.size != domain.num_cells:
        raise GridError("raw dump size does not match domain")
    with open(path, "wb") as fh:
        fh.write(_header(RAW_MAGIC, domain).encode("ascii"))
        fh.write(values.tobytes(order="C"))


def load_raw(path: str | os.PathLike) -> tuple[GridDomain, np.ndarray]:
    with open(path, "rb") as fh:
        domain = _read_header(fh, RAW_MAGIC, None)
        data = fh.read()
    if len(data) != 8 * domain.num_cells:
        raise GridError("raw payload truncated or oversized")
    return domain, np.frombuffer(data, dtype="<f8").reshape(domain.dims).copy()


def save_pgm(s: BinarySet, path: str | os.PathLike) -> None:
    """8-bit grayscale bitmap (binary PGM), 255 for set cells; 2D only."""
    if s.domain.ndim != 2:
        raise GridError("bitmap export is 2D only")
    rows, cols = s.domain.dims
    with open(path, "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n255\n".encode("ascii"))
        fh.write(np.where(s.mask, 255, 0).astype(np.uint8).tobytes())
