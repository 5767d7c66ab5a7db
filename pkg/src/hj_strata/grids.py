"""Grids and sampled value fields.

Three grid kinds cover all solves: state-constrained boxes, periodic-in-y1
strips with a constrained vertical extent, and fully periodic tori.  Nodes
are indexed ``(i, j)`` for the ``y1``/``y2`` axes with flat index
``i * n2 + j``; spacing may differ per axis (periodic axes divide the period
exactly).  The anchor is the node closest to the origin and is the
normalization point for relative value iterations.

Bilinear interpolation wraps on periodic axes and is exact on affine
functions, which doubles as the correctness test for the weight logic.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = ["GridSpec", "ValueField", "interpolate"]

_ALIGN_TOL = 1e-9


def _check_multiple(length: float, h: float, what: str) -> int:
    ratio = length / h
    n = round(ratio)
    if n < 1 or abs(ratio - n) > _ALIGN_TOL * max(1.0, ratio):
        raise ValueError(f"{what} ({length}) must be a positive integer multiple of h ({h})")
    return n


@dataclass(frozen=True, slots=True)
class GridSpec:
    """A rectangular grid; build with :meth:`box`, :meth:`strip`, or :meth:`torus`."""

    kind: str
    n1: int
    n2: int
    h1: float
    h2: float
    origin: tuple[float, float]
    periodic1: bool
    periodic2: bool

    @classmethod
    def box(cls, half_widths: float | tuple[float, float], h: float) -> "GridSpec":
        """State-constrained box ``[-L1, L1] x [-L2, L2]``; h must divide both."""
        if isinstance(half_widths, (int, float)):
            half_widths = (float(half_widths), float(half_widths))
        L1, L2 = float(half_widths[0]), float(half_widths[1])
        m1 = _check_multiple(2.0 * L1, h, "box width")
        m2 = _check_multiple(2.0 * L2, h, "box height")
        return cls("box", m1 + 1, m2 + 1, h, h, (-L1, -L2), False, False)

    @classmethod
    def strip(cls, period: float, rho: float, h: float) -> "GridSpec":
        """Periodic strip ``(R/T Z) x [-rho, rho]``."""
        if period <= 0:
            raise ValueError("strip period must be positive")
        n1 = max(2, round(period / h))
        m2 = _check_multiple(2.0 * rho, h, "strip height")
        return cls("strip", n1, m2 + 1, period / n1, h, (0.0, -rho), True, False)

    @classmethod
    def torus(cls, periods: float | tuple[float, float], h: float) -> "GridSpec":
        """Fully periodic cell ``(R/T1 Z) x (R/T2 Z)``."""
        if isinstance(periods, (int, float)):
            periods = (float(periods), float(periods))
        T1, T2 = float(periods[0]), float(periods[1])
        if T1 <= 0 or T2 <= 0:
            raise ValueError("torus periods must be positive")
        n1 = max(2, round(T1 / h))
        n2 = max(2, round(T2 / h))
        return cls("torus", n1, n2, T1 / n1, T2 / n2, (0.0, 0.0), True, True)

    @property
    def size(self) -> int:
        return self.n1 * self.n2

    def coords1(self) -> np.ndarray:
        return self.origin[0] + self.h1 * np.arange(self.n1)

    def coords2(self) -> np.ndarray:
        return self.origin[1] + self.h2 * np.arange(self.n2)

    def nodes(self) -> np.ndarray:
        """All node coordinates, shape ``(n1 * n2, 2)`` in flat-index order."""
        c1, c2 = np.meshgrid(self.coords1(), self.coords2(), indexing="ij")
        return np.column_stack([c1.ravel(), c2.ravel()])

    def flat_index(self, i: int, j: int) -> int:
        return i * self.n2 + j

    def anchor_index(self) -> int:
        """Flat index of the node nearest the origin."""
        i = int(np.argmin(np.abs(self.coords1())))
        j = int(np.argmin(np.abs(self.coords2())))
        return self.flat_index(i, j)

    def index_of(self, point: tuple[float, float]) -> int:
        """Flat index of the node nearest ``point``."""
        t1 = (point[0] - self.origin[0]) / self.h1
        t2 = (point[1] - self.origin[1]) / self.h2
        if self.periodic1:
            i = int(round(t1)) % self.n1
        else:
            i = min(max(int(round(t1)), 0), self.n1 - 1)
        if self.periodic2:
            j = int(round(t2)) % self.n2
        else:
            j = min(max(int(round(t2)), 0), self.n2 - 1)
        return self.flat_index(i, j)

    def interp_weights(self, points: np.ndarray, *, clip: bool = False) -> tuple[np.ndarray, np.ndarray]:
        """Bilinear stencil of each point: flat corner indices (n, 4), weights (n, 4).

        Constrained axes reject points outside the grid unless ``clip``;
        periodic axes wrap.
        """
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        idx = np.empty((len(pts), 4), dtype=np.int32)
        w = np.empty((len(pts), 4))
        i0, f1 = self._axis_cell(pts[:, 0], 0, clip)
        j0, f2 = self._axis_cell(pts[:, 1], 1, clip)
        i1 = (i0 + 1) % self.n1 if self.periodic1 else i0 + 1
        j1 = (j0 + 1) % self.n2 if self.periodic2 else j0 + 1
        idx[:, 0] = i0 * self.n2 + j0
        idx[:, 1] = i1 * self.n2 + j0
        idx[:, 2] = i0 * self.n2 + j1
        idx[:, 3] = i1 * self.n2 + j1
        w[:, 0] = (1.0 - f1) * (1.0 - f2)
        w[:, 1] = f1 * (1.0 - f2)
        w[:, 2] = (1.0 - f1) * f2
        w[:, 3] = f1 * f2
        return idx, w

    def _axis_cell(self, x: np.ndarray, axis: int, clip: bool) -> tuple[np.ndarray, np.ndarray]:
        n = self.n1 if axis == 0 else self.n2
        h = self.h1 if axis == 0 else self.h2
        o = self.origin[axis]
        periodic = self.periodic1 if axis == 0 else self.periodic2
        t = (x - o) / h
        if periodic:
            base = np.floor(t)
            frac = t - base
            cell = base.astype(np.int64) % n
            return cell.astype(np.int32), frac
        if not clip:
            span = (n - 1) * h
            tol = _ALIGN_TOL * max(1.0, span / h)
            if np.any(t < -tol) or np.any(t > (n - 1) + tol):
                bad = float(x[np.argmax(np.maximum(-t, t - (n - 1)))])
                raise ValueError(
                    f"point coordinate {bad} lies outside the grid axis "
                    f"[{o}, {o + span}] (pass clip=True to clamp)"
                )
        t = np.clip(t, 0.0, float(n - 1))
        cell = np.minimum(t.astype(np.int64), n - 2).astype(np.int32)
        return cell, t - cell

    def contains(self, points: np.ndarray, *, tol: float = 1e-12) -> np.ndarray:
        """Componentwise domain membership for state-constrained axes."""
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        ok = np.ones(len(pts), dtype=bool)
        if not self.periodic1:
            lo, hi = self.origin[0], self.origin[0] + (self.n1 - 1) * self.h1
            ok &= (pts[:, 0] >= lo - tol) & (pts[:, 0] <= hi + tol)
        if not self.periodic2:
            lo, hi = self.origin[1], self.origin[1] + (self.n2 - 1) * self.h2
            ok &= (pts[:, 1] >= lo - tol) & (pts[:, 1] <= hi + tol)
        return ok

    def meta_line(self) -> str:
        return (
            f"kind={self.kind} n1={self.n1} n2={self.n2} h1={self.h1!r} h2={self.h2!r} "
            f"o1={self.origin[0]!r} o2={self.origin[1]!r} "
            f"periodic1={int(self.periodic1)} periodic2={int(self.periodic2)}"
        )

    @classmethod
    def from_meta_line(cls, line: str) -> "GridSpec":
        fields = dict(re.findall(r"(\w+)=([^\s]+)", line))
        return cls(
            kind=fields["kind"],
            n1=int(fields["n1"]),
            n2=int(fields["n2"]),
            h1=float(fields["h1"]),
            h2=float(fields["h2"]),
            origin=(float(fields["o1"]), float(fields["o2"])),
            periodic1=bool(int(fields["periodic1"])),
            periodic2=bool(int(fields["periodic2"])),
        )


@dataclass(frozen=True, slots=True)
class ValueField:
    """Values sampled on a grid, with bilinear evaluation."""

    grid: GridSpec
    values: np.ndarray  # shape (n1, n2)

    def __post_init__(self):
        expected = (self.grid.n1, self.grid.n2)
        if self.values.shape != expected:
            raise ValueError(f"values shape {self.values.shape} does not match grid {expected}")

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def anchor_value(self) -> float:
        return float(self.flat()[self.grid.anchor_index()])

    def __call__(self, points: np.ndarray, *, clip: bool = False) -> np.ndarray:
        return interpolate(self, points, clip=clip)

    def to_csv(self, path: str | Path) -> Path:
        """Write ``y1,y2,value`` rows (full float precision) plus grid metadata."""
        path = Path(path)
        pts = self.grid.nodes()
        vals = self.flat()
        lines = ["# hj-strata value field", f"# {self.grid.meta_line()}", "y1,y2,value"]
        lines.extend(f"{float(p[0])!r},{float(p[1])!r},{float(v)!r}" for p, v in zip(pts, vals))
        path.write_text("\n".join(lines) + "\n")
        return path

    @classmethod
    def from_csv(cls, path: str | Path) -> "ValueField":
        lines = Path(path).read_text().splitlines()
        meta = next(l for l in lines if l.startswith("# kind="))
        grid = GridSpec.from_meta_line(meta[2:])
        rows = [l for l in lines if l and not l.startswith("#") and not l.startswith("y1,")]
        if len(rows) != grid.size:
            raise ValueError(f"{path}: expected {grid.size} rows, found {len(rows)}")
        vals = np.array([float(r.rsplit(",", 1)[1]) for r in rows])
        return cls(grid, vals.reshape(grid.n1, grid.n2))


def interpolate(field: ValueField, points: np.ndarray, *, clip: bool = False) -> np.ndarray:
    """Bilinear interpolation of ``field`` at ``points`` of shape (..., 2).

    Wraps on periodic axes; on constrained axes points outside the grid raise
    unless ``clip`` clamps them to the boundary.  Exact on affine functions.
    """
    pts = np.asarray(points, dtype=float)
    shape = pts.shape[:-1]
    idx, w = field.grid.interp_weights(pts.reshape(-1, 2), clip=clip)
    vals = (field.flat()[idx] * w).sum(axis=1)
    return vals.reshape(shape)
