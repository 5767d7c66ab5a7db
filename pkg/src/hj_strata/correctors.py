"""Piecewise subsolution builders around the defect at a frozen slow point.

The comparison arguments for the stratified limit lean on explicit Lipschitz
subsolutions of ``H(0, y, Du) <= level`` that agree with a plane wave far from
the defect.  Each one is a pointwise minimum of a few pieces: affine plane
waves, shifted tangential strip correctors, and the truncated origin
corrector.  Which pieces enter, and at which momenta, depends on which of the
three effective levels dominates at the target covector:

* ``"plane"``  -- the ambient effective value H̄(0, p) is strictly largest;
* ``"line"``   -- a tangential value H̄₁,T(0, p₁) is largest (or ties the
  ambient value above the origin datum);
* ``"origin"`` -- the origin datum E dominates; the construction certifies
  the slightly lifted level E + η.

``build_subcorrector`` assembles the pieces for a regime and fits the
separating constants by scanning samples; ``subsolution_residual`` then
measures how well the assembled minimum satisfies the level inequality under
the true Hamiltonian, differencing the active piece only and reporting each
node's most favorable one-sided candidate (the almost-everywhere test).
``bellman_certificate`` cross-checks the same inequality through the dynamic
programming operator, with no differencing at all.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from .bellman import SLOperator
from .cell import (
    ErgodicEstimate,
    EffectiveTables,
    ball_ergodic,
    slopes,
    strip_ergodic,
    torus_effective,
)
from .grids import GridSpec, ValueField
from .hamiltonian import eval_fields, region_masks
from .scenario import Scenario

__all__ = [
    "BracketError",
    "CorrectorSet",
    "Piece",
    "RegimeError",
    "SubcorrectorSpec",
    "bellman_certificate",
    "build_corrector_set",
    "build_subcorrector",
    "check_min_subsolution",
    "majorant_gap",
    "residual_field",
    "select_regime",
    "subsolution_residual",
]

_X0 = np.zeros(2)
_EDGE_FRACTION = 0.75   # the split radius must fit inside this fraction of the box
_TIE_SLACK = 1e-9


class RegimeError(ValueError):
    """The requested construction contradicts the measured level ordering."""


class BracketError(ValueError):
    """A momentum root is not bracketed inside the tabulated window."""


# ---------------------------------------------------------------------------
# level queries and momentum roots
# ---------------------------------------------------------------------------


def plane_level(scn: Scenario, tables: EffectiveTables, p) -> float:
    """Ambient effective value H̄(0, p) at the frozen slow point."""
    p = np.asarray(p, dtype=float)
    if scn.case == "case2":
        if tables.hbar is None:
            raise ValueError("case2 tables carry no ambient grid; retabulate with a p_grid")
        return float(tables.hbar_at(p))
    drift = scn.background.eval_drift(0.0, 0.0, 0.0, 0.0)
    cost = scn.background.eval_cost(0.0, 0.0, 0.0, 0.0)
    return float(np.max(-(drift @ p) - cost))


def _grid_root(grid: np.ndarray, vals: np.ndarray, level: float, side: str, what: str) -> float:
    """Piecewise-linear root of a convex table at ``level`` on one flank.

    ``side`` is ``"right"`` (root above the argmin) or ``"left"``.  Exact for
    tables that are linear between knots; raises :class:`BracketError` with
    the bounding table row when the level never reaches the window edge.
    """
    k = int(np.argmin(vals))
    if level < vals[k] - 1e-12:
        raise BracketError(
            f"{what}: level {level:.6g} lies below the table minimum "
            f"{vals[k]:.6g} at p1={grid[k]:.6g}"
        )
    if side == "right":
        idx = range(k, len(grid) - 1)
        edge = len(grid) - 1
    else:
        idx = range(k - 1, -1, -1)
        edge = 0
    if vals[edge] < level - 1e-12:
        raise BracketError(
            f"{what}: level {level:.6g} is not reached on the {side} flank; "
            f"window ends at row p1={grid[edge]:.6g}, value {vals[edge]:.6g}"
        )
    for i in idx:
        lo, hi = vals[i], vals[i + 1]
        if side == "left":
            lo, hi = hi, lo
        if lo - 1e-12 <= level <= hi + 1e-12:
            a, b = (i, i + 1) if side == "right" else (i + 1, i)
            dv = vals[b] - vals[a]
            if abs(dv) < 1e-15:
                return float(grid[b])
            t = (level - vals[a]) / dv
            return float(grid[a] + t * (grid[b] - grid[a]))
    raise BracketError(f"{what}: no table segment brackets level {level:.6g} on the {side} flank")


def _tangential_root(
    tables: EffectiveTables, branch: str, level: float, side: str, what: str
) -> float:
    return _grid_root(tables.p1_grid, np.asarray(tables.h1t[branch], dtype=float), level, side, what)


def _vertical_roots(scn: Scenario, tables: EffectiveTables, p1: float, level: float) -> tuple[float, float]:
    """Both roots q₂ of H̄(0, (p₁, q₂)) = level, bracketing the sublevel set."""
    if scn.case != "case2":
        return slopes(scn, p1, level)
    if tables.p_grid is None or tables.hbar is None:
        raise ValueError("case2 tables carry no ambient grid; retabulate with a p_grid")
    q_grid = np.asarray(tables.p_grid, dtype=float)
    section = np.array([float(tables.hbar_at((p1, q))) for q in q_grid])
    lower = _grid_root(q_grid, section, level, "left", "ambient section, lower slope")
    upper = _grid_root(q_grid, section, level, "right", "ambient section, upper slope")
    return lower, upper


def _polish_vertical_root(
    scn: Scenario,
    tables: EffectiveTables,
    correctors: CorrectorSet,
    p1: float,
    q0: float,
    level: float,
    notes: list,
    what: str,
) -> float:
    """Refine a periodic-background vertical root against solved constants.

    The ambient table is interpolated on a coarse momentum grid, so its roots
    can miss the solved level by the interpolation error -- and an affine
    piece pinned at such a root then runs above the level it claims.  Secant
    iteration on solved cell constants (cached on the corrector set, where
    the piece needs the corrector anyway) pins the root to solver accuracy.
    Convexity of the effective Hamiltonian keeps each flank monotone, so the
    secant is well behaved; if it still fails to settle, the best iterate is
    kept and noted.
    """
    if scn.case != "case2":
        return q0
    target = max(2.0 * correctors.tol, 1e-6)
    q_grid = np.asarray(tables.p_grid, dtype=float)
    e = max(q_grid[1] - q_grid[0], 1e-3)
    qa, qb = np.clip([q0 - e, q0 + e], q_grid[0], q_grid[-1])
    slope = (float(tables.hbar_at((p1, qb))) - float(tables.hbar_at((p1, qa)))) / (qb - qa)
    q_prev, f_prev = None, None
    q, best_q, best_f = float(q0), float(q0), math.inf
    for _ in range(6):
        f = float(correctors.plane_estimate((p1, q)).constant) - level
        if abs(f) < abs(best_f):
            best_q, best_f = q, f
        if abs(f) <= target:
            return q
        if q_prev is not None and abs(f - f_prev) > 1e-14:
            slope = (f - f_prev) / (q - q_prev)
        if abs(slope) < 1e-9:
            break
        q_prev, f_prev = q, f
        q = q - f / slope
    notes.append(
        f"{what}: solved-root polish stalled at offset {best_f:+.2e} "
        f"(momentum {best_q:.6g})"
    )
    return best_q


def _table_gradient(tables: EffectiveTables, branch: str, p1: float) -> tuple[float, float]:
    """Left/right difference quotients of a tangential table at ``p1``."""
    grid = tables.p1_grid
    vals = np.asarray(tables.h1t[branch], dtype=float)
    i = int(np.clip(np.searchsorted(grid, p1), 1, len(grid) - 1))
    left = (vals[i] - vals[i - 1]) / (grid[i] - grid[i - 1])
    j = min(i + 1, len(grid) - 1)
    right = (vals[j] - vals[j - 1]) / (grid[j] - grid[j - 1])
    return float(left), float(right)


# ---------------------------------------------------------------------------
# pieces
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class Piece:
    """One branch of the piecewise minimum.

    ``values`` is the smooth extension ``slope . y + field(y) - offset``;
    ``admissible`` marks where the piece may be selected (half-plane
    restriction and sampled-field coverage).  ``shares_c`` tags the strip
    pieces whose common offset is the fitted constant ``c``.
    """

    label: str
    kind: str                      # "affine" | "plane" | "strip" | "ball"
    slope: tuple[float, float]
    branch: str | None = None
    offset: float = 0.0
    field: ValueField | None = None
    halfplane: int = 0             # 0 both, -1 only y1 <= 0, +1 only y1 >= 0
    shares_c: bool = False

    def values(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        out = pts[:, 0] * self.slope[0] + pts[:, 1] * self.slope[1] - self.offset
        if self.field is not None:
            out = out + self.field(pts)
        return out

    def admissible(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        ok = np.ones(len(pts), dtype=bool)
        if self.halfplane < 0:
            ok &= pts[:, 0] <= _TIE_SLACK
        elif self.halfplane > 0:
            ok &= pts[:, 0] >= -_TIE_SLACK
        if self.field is not None:
            ok &= self.field.grid.contains(pts)
        return ok

    def masked(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        ok = self.admissible(pts)
        out = np.full(len(pts), np.inf)
        if ok.any():
            out[ok] = self.values(pts[ok])
        return out


def _piece_matrix(pieces, pts) -> np.ndarray:
    return np.stack([piece.masked(pts) for piece in pieces])


@dataclass(frozen=True, slots=True)
class SubcorrectorSpec:
    """A fitted piecewise subsolution: pieces, offsets, and the region split."""

    target: tuple[float, float]
    regime: str
    case: str
    level: float
    eta: float
    q_values: Mapping[str, float]
    c: float
    C: float
    split_radius: float
    half_width: float
    pieces: tuple[Piece, ...]
    notes: tuple[str, ...] = ()

    def values(self, pts: np.ndarray) -> np.ndarray:
        """The composed minimum at the sample points."""
        return np.min(_piece_matrix(self.pieces, pts), axis=0)

    def active(self, pts: np.ndarray) -> np.ndarray:
        """Index of the selected piece at each sample point."""
        return np.argmin(_piece_matrix(self.pieces, pts), axis=0)

    def target_values(self, pts: np.ndarray) -> np.ndarray:
        """The plane-wave majorant the minimum must stay below."""
        for piece in self.pieces:
            if piece.label == "target":
                return piece.values(pts)
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        return pts @ np.asarray(self.target)

    def write_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["# key", "value"])
            writer.writerow(["regime", self.regime])
            writer.writerow(["target1", float(self.target[0])])
            writer.writerow(["target2", float(self.target[1])])
            writer.writerow(["level", float(self.level)])
            writer.writerow(["eta", float(self.eta)])
            writer.writerow(["c", float(self.c)])
            writer.writerow(["C", float(self.C)])
            writer.writerow(["split_radius", float(self.split_radius)])
            writer.writerow(["half_width", float(self.half_width)])
            for key, val in sorted(self.q_values.items()):
                writer.writerow([key, float(val)])
            writer.writerow([])
            writer.writerow(["label", "kind", "branch", "slope1", "slope2", "offset", "halfplane"])
            for piece in self.pieces:
                writer.writerow([
                    piece.label, piece.kind, piece.branch or "",
                    float(piece.slope[0]), float(piece.slope[1]),
                    float(piece.offset), piece.halfplane,
                ])
        return path


# ---------------------------------------------------------------------------
# corrector cache
# ---------------------------------------------------------------------------


@dataclass
class CorrectorSet:
    """Sampled correctors shared by the subsolution builders.

    Holds the truncated origin corrector ``w`` (solved once, on a box that
    pads the certification window so its constrained boundary stays outside)
    and lazily solved strip correctors keyed by (branch, momentum).  For
    periodic backgrounds it also caches torus correctors so plane waves can
    carry their periodic correction.
    """

    scenario: Scenario
    half_width: float
    coverage: float
    h: float
    tol: float
    delta: float
    w_field: ValueField
    w_constant: float
    notes: tuple[str, ...] = ()
    _strips: dict = field(default_factory=dict, repr=False)
    _plane: dict = field(default_factory=dict, repr=False)

    def strip_corrector(self, momentum: float, branch: str = "main") -> ValueField:
        key = (branch, round(float(momentum), 12))
        if key not in self._strips:
            est = strip_ergodic(
                self.scenario, float(momentum), branch=branch,
                rho=self.coverage, h=self.h, tol=self.tol, delta=self.delta,
            )
            if not est.converged:
                raise RuntimeError(
                    f"strip corrector at momentum {momentum:.6g} ({branch}) did not converge"
                )
            self._strips[key] = est
        return self._strips[key].corrector

    def plane_estimate(self, q) -> ErgodicEstimate:
        """Solved periodic cell estimate at momentum ``q`` (case2 only)."""
        key = (round(float(q[0]), 12), round(float(q[1]), 12))
        if key not in self._plane:
            est = torus_effective(
                self.scenario, (float(q[0]), float(q[1])),
                h=self.h, tol=self.tol, delta=self.delta,
            )
            if not est.converged:
                raise RuntimeError(f"torus corrector at momentum {key} did not converge")
            self._plane[key] = est
        return self._plane[key]

    def plane_corrector(self, q) -> ValueField | None:
        """Periodic correction of the plane wave ⟨q, y⟩ (case2 only)."""
        if self.scenario.case != "case2":
            return None
        return self.plane_estimate(q).corrector


def build_corrector_set(
    scn: Scenario,
    *,
    half_width: float | None = None,
    h: float | None = None,
    tol: float | None = None,
    delta: float | None = None,
) -> CorrectorSet:
    """Solve the shared correctors for subsolution assembly.

    ``half_width`` is the certification window the fitted constants must
    cover (default ``4 * R1``); sampled fields are solved on a padded domain
    so their state-constrained boundaries sit outside it.

    Unlike the table solves, these fields are differenced pointwise by the
    residual checks, so the default time step is the linear one, ``delta =
    h``: the scheduled ``sqrt(h)`` step converges to the right constants but
    leaves O(sqrt(h)) slope errors wherever the running cost varies, which a
    gradient test then reports as a (spurious) level violation.
    """
    sched = scn.schedules
    h = sched.cell_h if h is None else float(h)
    tol = sched.tol_ergodic if tol is None else float(tol)
    delta = h if delta is None else float(delta)
    if half_width is None:
        half_width = 4.0 * scn.R1
    half_width = math.ceil(half_width / h) * h
    pad = max(0.5, 8.0 * h)
    coverage = math.ceil((half_width + pad) / h) * h
    est = ball_ergodic(scn, coverage, h=h, tol=tol, delta=delta)
    notes = [f"origin corrector truncation {coverage:g}, constant {est.constant:.6g}"]
    if not est.converged:
        raise RuntimeError(f"origin corrector at truncation {coverage:g} did not converge")
    return CorrectorSet(
        scenario=scn,
        half_width=float(half_width),
        coverage=float(coverage),
        h=h,
        tol=tol,
        delta=delta,
        w_field=est.corrector,
        w_constant=float(est.constant),
        notes=tuple(notes),
    )


# ---------------------------------------------------------------------------
# regime selection
# ---------------------------------------------------------------------------


def select_regime(scn: Scenario, tables: EffectiveTables, p, *, slack: float | None = None) -> str:
    """Dominant level at the covector: ``"plane"``, ``"line"``, or ``"origin"``.

    Ties follow the constructions' reach: the origin datum wins its ties (the
    lifted level E + η covers equalities) and the tangential level wins a tie
    with the ambient one.  ``slack`` defaults to the solver tolerance the
    tables were built at -- orderings tighter than that are not resolved by
    the data, and the origin construction is the one that tolerates them.
    """
    if slack is None:
        slack = max(1e-9, float(tables.provenance.get("tol_ergodic", 0.0)))
    p = np.asarray(p, dtype=float)
    plane = plane_level(scn, tables, p)
    line = max(float(tables.h1t_at(p[0], branch)) for branch in tables.branches())
    if tables.E + slack >= plane and tables.E + slack >= line:
        return "origin"
    if plane > line + slack:
        return "plane"
    return "line"


# ---------------------------------------------------------------------------
# fitting machinery
# ---------------------------------------------------------------------------


def _band_masks(scn: Scenario, pts: np.ndarray) -> dict[str, np.ndarray]:
    """Closed defect neighbourhoods used when fitting the strip offsets."""
    y1, y2 = pts[:, 0], pts[:, 1]
    tol = 1e-9
    band = np.abs(y2) <= scn.R0 + tol
    if scn.case in ("case1", "case2"):
        omega = (band & (y1 <= tol)) | (y1 * y1 + y2 * y2 <= scn.R0 * scn.R0 + tol)
        return {"main": omega}
    return {
        "plus": band & (y1 >= scn.R0 - tol),
        "minus": band & (y1 <= -scn.R0 + tol),
    }


def _local_lipschitz(values: np.ndarray, grid: GridSpec, mask: np.ndarray) -> float:
    v = values.reshape(grid.n1, grid.n2)
    g1, g2 = np.gradient(v, grid.h1, grid.h2)
    slope = np.hypot(g1, g2).reshape(-1)
    return float(np.max(slope[mask])) if mask.any() else 0.0

def _fit_max(diff: np.ndarray, grid: GridSpec, mask: np.ndarray, what: str) -> float:
    """Max of a sampled difference over a region, plus a Lipschitz margin.

    Rejects fits whose maximum sits strictly on the sampling-box edge and
    above every interior value: there the sample cannot certify the unbounded
    region beyond the box.  (Periodic ties between edge and interior pass.)
    """
    if not mask.any():
        raise ValueError(f"{what}: the fitting region misses every sample node")
    vals = np.where(mask, diff, -np.inf)
    pts = grid.nodes()
    L1 = grid.origin[0] + (grid.n1 - 1) * grid.h1
    L0 = grid.origin[0]
    on_edge = (pts[:, 0] >= L1 - 0.5 * grid.h1) | (pts[:, 0] <= L0 + 0.5 * grid.h1)
    interior_max = float(np.max(np.where(on_edge, -np.inf, vals)))
    edge_max = float(np.max(np.where(on_edge, vals, -np.inf)))
    if edge_max > interior_max + 1e-9:
        k = int(np.argmax(np.where(on_edge, vals, -np.inf)))
        raise ValueError(
            f"{what}: the fitted maximum sits on the sampling-box edge at "
            f"y=({pts[k, 0]:.3g}, {pts[k, 1]:.3g}); enlarge half_width"
        )
    margin = 2.0 * max(grid.h1, grid.h2) * _local_lipschitz(diff, grid, mask)
    return float(max(edge_max, interior_max)) + margin + 1e-12


def _piece_safety(scn: Scenario, pieces, pts: np.ndarray) -> np.ndarray:
    """Where each piece's own Hamiltonian agrees with the true one.

    The sampled origin corrector solves the true equation everywhere inside
    its truncation; strip pieces are trustworthy on their own periodic band
    and wherever the true fields coincide with the shared background; plane
    waves only in the genuine background.
    """
    y1, y2 = pts[:, 0], pts[:, 1]
    masks = region_masks(scn, y1, y2)
    bg = masks["background"]
    wide = np.abs(y2) >= scn.R0 - 1e-9
    safe = np.zeros((len(pieces), len(pts)), dtype=bool)
    for k, piece in enumerate(pieces):
        if piece.kind == "ball":
            safe[k] = True
        elif piece.kind in ("affine", "plane"):
            safe[k] = bg
            if scn.case in ("case1", "case2"):
                safe[k] |= masks["strip"] & wide
        elif piece.kind == "strip":
            own = masks["strip"] if scn.case in ("case1", "case2") else masks[f"strip_{piece.branch}"]
            safe[k] = own | (bg & wide)
            if scn.case in ("case1", "case2"):
                safe[k] |= masks["strip"] & wide
        else:
            raise ValueError(f"unknown piece kind {piece.kind!r}")
    return safe


def _shared_offset(scn: Scenario, pieces, grid: GridSpec, pts: np.ndarray) -> float:
    """Common offset pushing each tagged strip below the unshifted pieces on
    its own band."""
    bands = _band_masks(scn, pts)
    reference = [p for p in pieces if p.kind != "ball" and not p.shares_c]
    ref_vals = np.min(_piece_matrix(reference, pts), axis=0)
    fit = 0.0
    for piece in pieces:
        if not piece.shares_c:
            continue
        band_key = "main" if scn.case in ("case1", "case2") else piece.branch
        mask = bands[band_key] & piece.admissible(pts) & np.isfinite(ref_vals)
        diff = piece.values(pts) - ref_vals
        fit = max(fit, _fit_max(diff, grid, mask, f"offset fit for {piece.label}"))
    return fit


def _pair_candidates(g1m, g1p, g2m, g2p):
    """Gradient candidates from per-axis one-sided quotients.

    The symmetric average plus the four one-sided pairings.  Where the
    differenced function is C1 at grid scale all five coincide; within a cell
    of a kink they bracket the nearby almost-everywhere gradients instead.
    """
    return [
        (0.5 * (g1m + g1p), 0.5 * (g2m + g2p)),
        (g1m, g2m), (g1m, g2p), (g1p, g2m), (g1p, g2p),
    ]


def _favorable_hamiltonian(scn: Scenario, pts: np.ndarray, candidates) -> np.ndarray:
    """min over gradient candidates of H(0, y, g): the a.e. test at grid scale.

    A subsolution is only constrained at points of differentiability (and at
    superdifferential points, where convexity reduces the test to one-sided
    limits), so at a node whose difference quotients disagree -- the sampled
    kinks of a corrector, or the seam cells of a composed minimum -- the only
    sound pointwise verdict comes from the candidate consistent with a nearby
    smooth point.  A genuine violation lives on an open set and shows on
    every candidate, so taking the most favorable one never hides it.
    """
    drift, cost = eval_fields(scn, _X0, pts)
    best = np.full(len(pts), np.inf)
    for g1, g2 in candidates:
        values = -(drift[..., 0] * g1 + drift[..., 1] * g2) - cost
        best = np.minimum(best, values.max(axis=0))
    return best


def _piece_quotients(piece: Piece, pts: np.ndarray, h1: float, h2: float):
    v0 = piece.values(pts)
    g1m = (v0 - piece.values(pts - [h1, 0.0])) / h1
    g1p = (piece.values(pts + [h1, 0.0]) - v0) / h1
    g2m = (v0 - piece.values(pts - [0.0, h2])) / h2
    g2p = (piece.values(pts + [0.0, h2]) - v0) / h2
    return g1m, g1p, g2m, g2p


def _piece_level_residuals(
    scn: Scenario, pieces, pts: np.ndarray, h1: float, h2: float, level: float
) -> np.ndarray:
    """Per-piece, per-node level residual under the true Hamiltonian --
    the same a.e. measurement the final residual check applies to the
    composed minimum, here on each piece's smooth extension separately.
    """
    out = np.empty((len(pieces), len(pts)))
    for k, piece in enumerate(pieces):
        quot = _piece_quotients(piece, pts, h1, h2)
        out[k] = _favorable_hamiltonian(scn, pts, _pair_candidates(*quot)) - level
    return out


def _split_radius(
    scn: Scenario,
    pieces,
    grid: GridSpec,
    pts: np.ndarray,
    level: float,
    safety_margin: float,
    notes: list,
) -> float:
    """Smallest radius beyond which the running minimum only selects
    trustworthy pieces.

    A selected piece counts as trustworthy where the true fields coincide
    with the ones it was solved against (the analytic region split), or where
    its own measured level residual stays within ``safety_margin`` (a piece
    that is locally a subsolution is a legitimate selection even off its home
    region).  If the split never closes inside the sampling box, the cap is
    returned with a note; the residual check remains the arbiter.
    """
    radii = np.hypot(pts[:, 0], pts[:, 1])
    floor = float(scn.R1)
    cap = _EDGE_FRACTION * float(np.max(np.abs(pts)))
    outer = [p for p in pieces if p.kind != "ball"]
    vals = _piece_matrix(outer, pts)
    active = np.argmin(vals, axis=0)
    rows = np.arange(len(pts))
    safe = _piece_safety(scn, outer, pts)
    chosen = safe[active, rows]
    if not chosen.all():
        measured = _piece_level_residuals(scn, outer, pts, grid.h1, grid.h2, level)
        loose = measured[active, rows] <= safety_margin
        if (loose & ~chosen).any():
            worst = [outer[k].label for k in sorted(set(active[loose & ~chosen]))]
            notes.append(
                "selection leans on measured piece residuals off the analytic "
                f"regions for: {', '.join(worst)}"
            )
        chosen = chosen | loose
    unsafe = (~chosen) & (radii > floor)
    if not unsafe.any():
        return floor + max(grid.h1, grid.h2)
    r_need = float(np.max(radii[unsafe])) + max(grid.h1, grid.h2)
    if r_need > cap:
        k = int(np.argmax(np.where(unsafe, radii, -np.inf)))
        notes.append(
            f"region split did not close inside the sampling box: piece "
            f"{outer[int(active[k])].label!r} is selected at "
            f"y=({pts[k, 0]:.3g}, {pts[k, 1]:.3g}) with measured residual "
            f"above the safety margin; split radius capped"
        )
        return cap
    return r_need


def _ball_offset(pieces, ball: Piece, radius: float, pts: np.ndarray, grid: GridSpec) -> float:
    """Offset dropping the origin corrector below every rival on the split ball."""
    inside = np.hypot(pts[:, 0], pts[:, 1]) <= radius + 1e-9
    others = [p for p in pieces if p is not ball]
    rivals = np.min(_piece_matrix(others, pts), axis=0)
    diff = ball.values(pts) - rivals
    mask = inside & np.isfinite(rivals)
    vals = np.where(mask, diff, -np.inf)
    k = int(np.argmax(vals))
    margin = 2.0 * max(grid.h1, grid.h2) * _local_lipschitz(diff, grid, mask)
    return float(vals[k]) + margin + 1e-12


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------


def _affine_piece(label, q, correctors: CorrectorSet, *, halfplane: int = 0) -> Piece:
    q = (float(q[0]), float(q[1]))
    fld = correctors.plane_corrector(q)
    kind = "plane" if fld is not None else "affine"
    return Piece(label=label, kind=kind, slope=q, field=fld, halfplane=halfplane)


def _strip_piece(
    label, momentum, correctors: CorrectorSet, *, branch: str = "main",
    shares_c: bool = True, halfplane: int = 0,
) -> Piece:
    fld = correctors.strip_corrector(momentum, branch)
    return Piece(
        label=label, kind="strip", slope=(float(momentum), 0.0), branch=branch,
        field=fld, halfplane=halfplane, shares_c=shares_c,
    )


def _ball_piece(correctors: CorrectorSet) -> Piece:
    return Piece(label="origin", kind="ball", slope=(0.0, 0.0), field=correctors.w_field)


@dataclass
class _Draft:
    level: float
    eta: float
    q_values: dict
    pieces: list
    notes: list


def _draft_plane_single(scn, tables, correctors, p, notes) -> _Draft:
    level = plane_level(scn, tables, p)
    line = float(tables.h1t_at(p[0]))
    if not (level > max(line, tables.E) + _TIE_SLACK):
        raise RegimeError(
            f"plane regime needs the ambient level to dominate strictly: "
            f"ambient {level:.6g}, tangential {line:.6g}, origin {tables.E:.6g}"
        )
    q1 = _tangential_root(tables, "main", level, "right", "tangential table")
    if q1 <= p[0] + _TIE_SLACK:
        raise RegimeError(f"degenerate tangential root q1={q1:.6g} at p1={p[0]:.6g}")
    pieces = [
        _affine_piece("target", p, correctors),
        _strip_piece("band", q1, correctors),
    ]
    return _Draft(level, 0.0, {"q1": q1}, pieces, notes)


def _draft_line_single(scn, tables, correctors, p, notes) -> _Draft:
    level = float(tables.h1t_at(p[0]))
    plane = plane_level(scn, tables, p)
    if level < plane - _TIE_SLACK or level <= tables.E + _TIE_SLACK:
        raise RegimeError(
            f"line regime needs the tangential level on top: tangential "
            f"{level:.6g}, ambient {plane:.6g}, origin {tables.E:.6g}"
        )
    grid = tables.p1_grid
    vals = np.asarray(tables.h1t["main"], dtype=float)
    argmin = grid[int(np.argmin(vals))]
    side = "left" if p[0] > argmin else "right"
    p_tilde = _tangential_root(tables, "main", level, side, "tangential table")
    q_values = {"p_tilde": p_tilde}
    if p_tilde > p[0]:
        # The strip momentum exceeds the target's, so the band piece dies off
        # to the left on its own; the target plane wave covers the rest.
        pieces = [
            _affine_piece("target", p, correctors),
            _strip_piece("band", p_tilde, correctors),
        ]
        notes.append("band carried at the far-side root")
    else:
        pi_upper = _vertical_roots(scn, tables, p_tilde, level)[1]
        pi_upper = _polish_vertical_root(
            scn, tables, correctors, p_tilde, pi_upper, level, notes, "escape slope"
        )
        q_values["pi_upper"] = pi_upper
        pieces = [
            _affine_piece("target", p, correctors),
            _strip_piece("band", p[0], correctors),
            _affine_piece("escape", (p_tilde, pi_upper), correctors),
        ]
        notes.append("band carried at the target momentum with an escape plane wave")
    return _Draft(level, 0.0, q_values, pieces, notes)


def _draft_origin_single(scn, tables, correctors, p, eta, notes) -> _Draft:
    plane = plane_level(scn, tables, p)
    line = float(tables.h1t_at(p[0]))
    # The construction certifies the lifted level, so that is what must be on
    # top -- comparing raw E would reject solver-tolerance ties it covers.
    if tables.E + eta <= max(plane, line) + _TIE_SLACK:
        raise RegimeError(
            f"origin construction needs the lifted level on top: E + eta "
            f"{tables.E + eta:.6g}, ambient {plane:.6g}, tangential {line:.6g}"
        )
    level = tables.E + eta
    q1 = _tangential_root(tables, "main", level, "right", "tangential table")
    q_lo, q_hi = _vertical_roots(scn, tables, p[0], level)
    q_lo = _polish_vertical_root(scn, tables, correctors, p[0], q_lo, level, notes, "lower bracket slope")
    q_hi = _polish_vertical_root(scn, tables, correctors, p[0], q_hi, level, notes, "upper bracket slope")
    if not (q_lo - _TIE_SLACK <= p[1] <= q_hi + _TIE_SLACK):
        raise RegimeError(
            f"vertical roots ({q_lo:.6g}, {q_hi:.6g}) fail to bracket p2={p[1]:.6g}; "
            f"the ambient level at the covector exceeds E + eta"
        )
    pieces = [
        _affine_piece("bracket-lower", (p[0], q_lo), correctors),
        _affine_piece("bracket-upper", (p[0], q_hi), correctors),
        _strip_piece("band", q1, correctors),
    ]
    if scn.case == "case2":
        # Periodic corrections break the exact affine squeeze against the
        # target plane wave, so the corrected target joins the minimum.
        pieces.insert(0, _affine_piece("target", p, correctors))
        notes.append("corrected target included to keep the plane-wave majorant")
    return _Draft(level, eta, {"q1": q1, "q2_lower": q_lo, "q2_upper": q_hi}, pieces, notes)


def _draft_plane_split(scn, tables, correctors, p, notes) -> _Draft:
    level = plane_level(scn, tables, p)
    lines = {b: float(tables.h1t_at(p[0], b)) for b in ("plus", "minus")}
    if not (level > max(max(lines.values()), tables.E) + _TIE_SLACK):
        raise RegimeError(
            f"plane regime needs the ambient level to dominate strictly: "
            f"ambient {level:.6g}, tangential {lines}, origin {tables.E:.6g}"
        )
    q1_minus = _tangential_root(tables, "minus", level, "right", "minus tangential table")
    q1_plus = _tangential_root(tables, "plus", level, "left", "plus tangential table")
    pieces = [
        _affine_piece("target", p, correctors),
        _strip_piece("band-minus", q1_minus, correctors, branch="minus"),
        _strip_piece("band-plus", q1_plus, correctors, branch="plus"),
    ]
    return _Draft(level, 0.0, {"q1_minus": q1_minus, "q1_plus": q1_plus}, pieces, notes)


def _draft_line_split(scn, tables, correctors, p, eta, notes) -> _Draft:
    lines = {b: float(tables.h1t_at(p[0], b)) for b in ("plus", "minus")}
    level = max(lines.values())
    plane = plane_level(scn, tables, p)
    if level < plane - _TIE_SLACK or level <= tables.E + _TIE_SLACK:
        raise RegimeError(
            f"line regime needs a tangential level on top: tangential {lines}, "
            f"ambient {plane:.6g}, origin {tables.E:.6g}"
        )
    gap = lines["minus"] - lines["plus"]
    if abs(gap) > _TIE_SLACK:
        # One band dominates; its own momentum runs at the level while the
        # other band is carried at the far root of the dominant level.
        high, low = ("minus", "plus") if gap > 0 else ("plus", "minus")
        side = "left" if high == "minus" else "right"
        p_tilde = _tangential_root(tables, low, level, side, f"{low} tangential table")
        pieces = [
            _affine_piece("target", p, correctors),
            _strip_piece(f"band-{high}", p[0], correctors, branch=high),
            _strip_piece(f"band-{low}", p_tilde, correctors, branch=low, shares_c=False),
        ]
        notes.append(f"dominant branch {high}; opposite band carried at its level root")
        return _Draft(level, 0.0, {"p_tilde": p_tilde}, pieces, notes)
    if level > plane + _TIE_SLACK:
        # Equal bands above the ambient level: each half-plane keeps its own
        # band piece, glued along the vertical axis by the plane wave.
        lo, hi = _vertical_roots(scn, tables, p[0], level)
        if not (lo - _TIE_SLACK <= p[1] <= hi + _TIE_SLACK):
            raise RegimeError(
                f"vertical roots ({lo:.6g}, {hi:.6g}) fail to bracket p2={p[1]:.6g} "
                f"at the shared tangential level"
            )
        pieces = [
            _affine_piece("target", p, correctors),
            _strip_piece("band-minus", p[0], correctors, branch="minus", halfplane=-1),
            _strip_piece("band-plus", p[0], correctors, branch="plus", halfplane=+1),
        ]
        notes.append("equal bands split along the vertical axis")
        return _Draft(level, 0.0, {"pi_lower": lo, "pi_upper": hi}, pieces, notes)
    # All three levels coincide above E: drop one band strictly below the
    # level through whichever table flank reaches down toward the origin
    # datum; if neither flank descends, lift the level by eta instead.
    grads = {b: _table_gradient(tables, b, p[0]) for b in ("plus", "minus")}
    target_val = level - min(eta, 0.5 * (level - tables.E))
    for branch, side, tag in (("plus", "left", "ascending"), ("minus", "right", "descending")):
        try:
            p_tilde = _tangential_root(tables, branch, target_val, side, f"{branch} tangential table")
        except BracketError:
            continue
        other = "minus" if branch == "plus" else "plus"
        pieces = [
            _affine_piece("target", p, correctors),
            _strip_piece(f"band-{branch}", p_tilde, correctors, branch=branch),
            _strip_piece(f"band-{other}", p[0], correctors, branch=other),
        ]
        notes.append(f"{branch} table {tag} through the level; band dropped below it")
        return _Draft(level, 0.0, {"p_tilde": p_tilde}, pieces, notes)
    notes.append(
        f"neither table flank descends below the level near p1={p[0]:.6g} "
        f"(difference quotients {grads}); certifying the lifted level"
    )
    lifted = level + eta
    for branch, side in (("plus", "left"), ("minus", "right")):
        try:
            p_tilde = _tangential_root(tables, branch, lifted, side, f"{branch} tangential table")
        except BracketError:
            continue
        other = "minus" if branch == "plus" else "plus"
        pieces = [
            _affine_piece("target", p, correctors),
            _strip_piece(f"band-{branch}", p_tilde, correctors, branch=branch),
            _strip_piece(f"band-{other}", p[0], correctors, branch=other),
        ]
        return _Draft(lifted, eta, {"p_tilde": p_tilde}, pieces, notes)
    raise RegimeError(
        f"tangential tables are flat around p1={p[0]:.6g} within the window "
        f"(difference quotients {grads}); no level root on either flank"
    )


def _draft_origin_split(scn, tables, correctors, p, eta, notes) -> _Draft:
    plane = plane_level(scn, tables, p)
    lines = {b: float(tables.h1t_at(p[0], b)) for b in ("plus", "minus")}
    if tables.E + eta <= max(plane, max(lines.values())) + _TIE_SLACK:
        raise RegimeError(
            f"origin construction needs the lifted level on top: E + eta "
            f"{tables.E + eta:.6g}, ambient {plane:.6g}, tangential {lines}"
        )
    level = tables.E + eta
    q1_minus = _tangential_root(tables, "minus", level, "right", "minus tangential table")
    q1_plus = _tangential_root(tables, "plus", level, "left", "plus tangential table")
    q_lo, q_hi = _vertical_roots(scn, tables, p[0], level)
    if not (q_lo - _TIE_SLACK <= p[1] <= q_hi + _TIE_SLACK):
        raise RegimeError(
            f"vertical roots ({q_lo:.6g}, {q_hi:.6g}) fail to bracket p2={p[1]:.6g}; "
            f"the ambient level at the covector exceeds E + eta"
        )
    pieces = [
        _affine_piece("bracket-lower", (p[0], q_lo), correctors),
        _affine_piece("bracket-upper", (p[0], q_hi), correctors),
        _strip_piece("band-minus", q1_minus, correctors, branch="minus"),
        _strip_piece("band-plus", q1_plus, correctors, branch="plus"),
    ]
    q_values = {
        "q1_minus": q1_minus, "q1_plus": q1_plus,
        "q2_lower": q_lo, "q2_upper": q_hi,
    }
    return _Draft(level, eta, q_values, pieces, notes)


def build_subcorrector(
    scn: Scenario,
    tables: EffectiveTables,
    correctors: CorrectorSet,
    p,
    regime: str,
    *,
    eta: float | None = None,
    safety_margin: float = 5e-3,
) -> SubcorrectorSpec:
    """Assemble and fit the piecewise subsolution for one regime.

    The momenta come from exact roots of the tabulated levels; the offsets
    ``c`` and ``C`` and the split radius are fitted by scanning the
    certification window, each with a finite-difference Lipschitz margin.
    ``safety_margin`` bounds the measured per-piece residual accepted when a
    piece is selected off its analytic home region.
    """
    p = (float(np.asarray(p, dtype=float)[0]), float(np.asarray(p, dtype=float)[1]))
    if correctors.scenario is not scn and correctors.scenario.canonical() != scn.canonical():
        raise ValueError("corrector set was built for a different scenario")
    if eta is None:
        drift = scn.background.eval_drift(0.0, 0.0, 0.0, 0.0)
        cost = scn.background.eval_cost(0.0, 0.0, 0.0, 0.0)
        eta = 0.05 * max(float(np.max(np.abs(cost))), 1e-6)
    notes: list[str] = []
    split = scn.case == "case3"
    if regime == "plane":
        draft = _draft_plane_split(scn, tables, correctors, p, notes) if split \
            else _draft_plane_single(scn, tables, correctors, p, notes)
    elif regime == "line":
        draft = _draft_line_split(scn, tables, correctors, p, eta, notes) if split \
            else _draft_line_single(scn, tables, correctors, p, notes)
    elif regime == "origin":
        draft = _draft_origin_split(scn, tables, correctors, p, eta, notes) if split \
            else _draft_origin_single(scn, tables, correctors, p, eta, notes)
    else:
        raise ValueError(f"unknown regime {regime!r}; expected 'plane', 'line', or 'origin'")

    grid = GridSpec.box(correctors.half_width, correctors.h)
    pts = grid.nodes()

    c = _shared_offset(scn, draft.pieces, grid, pts)
    pieces = [
        replace(piece, offset=c) if piece.shares_c else piece
        for piece in draft.pieces
    ]
    radius = _split_radius(scn, pieces, grid, pts, draft.level, safety_margin, draft.notes)
    ball = _ball_piece(correctors)
    C = _ball_offset(pieces + [ball], ball, radius, pts, grid)
    pieces.append(replace(ball, offset=C))

    return SubcorrectorSpec(
        target=p,
        regime=regime,
        case=scn.case,
        level=float(draft.level),
        eta=float(draft.eta),
        q_values=dict(draft.q_values),
        c=float(c),
        C=float(C),
        split_radius=float(radius),
        half_width=float(correctors.half_width),
        pieces=tuple(pieces),
        notes=tuple(draft.notes),
    )


# ---------------------------------------------------------------------------
# residual checks
# ---------------------------------------------------------------------------


def _active_piece_quotients(spec: SubcorrectorSpec, pts: np.ndarray, h1: float, h2: float):
    """Per-axis one-sided quotients of the selected piece at each node.

    Differencing the smooth extension of the active piece keeps kink lines of
    the composed minimum from polluting the residual; the pieces' own internal
    kinks (every corrector has them) are then handled by the candidate rule in
    :func:`_favorable_hamiltonian`.
    """
    active = spec.active(pts)
    offsets = [
        np.zeros(2), np.array([-h1, 0.0]), np.array([h1, 0.0]),
        np.array([0.0, -h2]), np.array([0.0, h2]),
    ]
    n = len(pts)
    stencil = np.empty((len(spec.pieces), 5, n))
    for k, piece in enumerate(spec.pieces):
        sel = active == k
        if not sel.any():
            stencil[k] = 0.0
            continue
        sub = pts[sel]
        for j, off in enumerate(offsets):
            stencil[k, j, sel] = piece.values(sub + off)
    rows = active, np.arange(n)
    v0 = stencil[rows[0], 0, rows[1]]
    g1m = (v0 - stencil[rows[0], 1, rows[1]]) / h1
    g1p = (stencil[rows[0], 2, rows[1]] - v0) / h1
    g2m = (v0 - stencil[rows[0], 3, rows[1]]) / h2
    g2p = (stencil[rows[0], 4, rows[1]] - v0) / h2
    return g1m, g1p, g2m, g2p


def _check_probe_coverage(spec: SubcorrectorSpec, grid: GridSpec) -> None:
    reach1 = grid.origin[0] + (grid.n1 - 1) * grid.h1 + grid.h1
    reach2 = grid.origin[1] + (grid.n2 - 1) * grid.h2 + grid.h2
    for piece in spec.pieces:
        if piece.field is None:
            continue
        fg = piece.field.grid
        corners = np.array([
            [grid.origin[0] - grid.h1, grid.origin[1] - grid.h2],
            [reach1, reach2],
            [grid.origin[0] - grid.h1, reach2],
            [reach1, grid.origin[1] - grid.h2],
        ])
        if not fg.contains(corners).all():
            raise ValueError(
                f"sample grid (with difference probes) leaves the coverage of "
                f"piece {piece.label!r}; shrink the grid or rebuild the "
                f"correctors with a larger half_width"
            )


def subsolution_residual(scn: Scenario, spec: SubcorrectorSpec, level: float, sample_grid: GridSpec) -> float:
    """Worst violation of the level inequality and of the plane-wave bound.

    Returns ``max(H(0, y, Dχ) - level, χ - ⟨p, y⟩)`` over the sample nodes,
    with gradients taken as one-sided differences of the active piece and the
    most favorable candidate reported per node (the a.e. test; see
    :func:`_favorable_hamiltonian`).  A negative value is the certified
    margin; a large positive value is a finding about the construction, not
    an error.
    """
    _check_probe_coverage(spec, sample_grid)
    pts = sample_grid.nodes()
    quot = _active_piece_quotients(spec, pts, sample_grid.h1, sample_grid.h2)
    residual = _favorable_hamiltonian(scn, pts, _pair_candidates(*quot)) - float(level)
    gap = spec.values(pts) - spec.target_values(pts)
    return float(max(residual.max(), gap.max()))


def residual_field(scn: Scenario, spec: SubcorrectorSpec, level: float, sample_grid: GridSpec) -> ValueField:
    """Per-node level residual of the composed minimum, for maps and reports."""
    _check_probe_coverage(spec, sample_grid)
    pts = sample_grid.nodes()
    quot = _active_piece_quotients(spec, pts, sample_grid.h1, sample_grid.h2)
    residual = _favorable_hamiltonian(scn, pts, _pair_candidates(*quot)) - float(level)
    return ValueField(sample_grid, residual.reshape(sample_grid.n1, sample_grid.n2))


def majorant_gap(spec: SubcorrectorSpec, sample_grid: GridSpec) -> float:
    """Max of χ - ⟨p, y⟩ over the sample nodes (should never be positive)."""
    pts = sample_grid.nodes()
    return float(np.max(spec.values(pts) - spec.target_values(pts)))


def bellman_certificate(
    scn: Scenario,
    spec: SubcorrectorSpec,
    level: float,
    sample_grid: GridSpec,
    *,
    delta: float | None = None,
) -> float:
    """Dynamic-programming check of the level inequality, no differencing.

    A Lipschitz subsolution of ``H(0, y, Du) <= level`` satisfies the one-step
    bound ``χ(y) <= min_a [δ ℓ(y, a) + χ(y + δ f(y, a))] + δ level`` -- the
    running cost integrated along each straight step dominates the decrease of
    χ even across kinks, where difference quotients stop being gradients.  So
    this returns ``max((χ - Tχ)/δ) - level`` over the nodes whose whole
    control fan stays on the grid (boundary nodes see a truncated minimum and
    are excluded).  The reading is exact up to O(δ) cost-freezing slack plus
    the foot interpolation error of the sampled χ; the latter is O(h²/δ)
    where χ is smooth but grows to O(h/δ) times the slope gap within a step
    of the kinks, so isolated positive spikes in a seam's collar are an
    artifact while a violation on a piece's interior is genuine.  A piece
    produced by the ergodic solvers satisfies its own discrete fixed-point
    identity, so with the sample grid and step matched to the corrector set's
    the certificate reads the solver residual directly there.  ``delta``
    defaults to the grid spacing; pass the corrector set's ``delta`` (and
    build the grid at its ``h``) for the sharpest reading on solved pieces.
    """
    _check_probe_coverage(spec, sample_grid)
    step = min(sample_grid.h1, sample_grid.h2) if delta is None else float(delta)
    pts = sample_grid.nodes()
    drift, cost = eval_fields(scn, _X0, pts)
    op = SLOperator(sample_grid, drift, cost, step)
    full_fan = np.isfinite(op.base).all(axis=0)
    if not full_fan.any():
        raise ValueError(
            "every sample node loses part of its control fan at this step; "
            "enlarge the grid or shrink delta"
        )
    chi = spec.values(pts)
    residual = (chi - op.apply(chi, 0.0)) / step - float(level)
    return float(residual[full_fan].max())


def _field_quotients(values: np.ndarray, grid: GridSpec):
    """Per-axis one-sided quotient arrays of a node field.

    Constrained edges replicate the adjacent interior quotient so every node
    carries a full candidate set; periodic axes wrap.
    """
    v = values
    if grid.periodic1:
        f1m = (v - np.roll(v, 1, axis=0)) / grid.h1
        f1p = (np.roll(v, -1, axis=0) - v) / grid.h1
    else:
        d1 = (v[1:] - v[:-1]) / grid.h1
        f1m = np.concatenate([d1[:1], d1], axis=0)
        f1p = np.concatenate([d1, d1[-1:]], axis=0)
    if grid.periodic2:
        f2m = (v - np.roll(v, 1, axis=1)) / grid.h2
        f2p = (np.roll(v, -1, axis=1) - v) / grid.h2
    else:
        d2 = (v[:, 1:] - v[:, :-1]) / grid.h2
        f2m = np.concatenate([d2[:, :1], d2], axis=1)
        f2p = np.concatenate([d2, d2[:, -1:]], axis=1)
    return f1m, f1p, f2m, f2p


def check_min_subsolution(scn: Scenario, u1: ValueField, u2: ValueField, level: float) -> float:
    """Level residual of ``min(u1, u2)`` from two sampled subsolutions.

    At each node the difference quotients of whichever field achieves the
    minimum are tested (most favorable candidate, as in
    :func:`_favorable_hamiltonian`), so the residual of the composition never
    exceeds the inputs' residuals by more than the difference slack.
    """
    if u1.grid.meta_line() != u2.grid.meta_line():
        raise ValueError(
            f"grid mismatch: {u1.grid.meta_line()} vs {u2.grid.meta_line()}"
        )
    grid = u1.grid
    take1 = u1.values <= u2.values
    parts1 = _field_quotients(u1.values, grid)
    parts2 = _field_quotients(u2.values, grid)
    quot = tuple(
        np.where(take1, a, b).reshape(-1) for a, b in zip(parts1, parts2)
    )
    pts = grid.nodes()
    residual = _favorable_hamiltonian(scn, pts, _pair_candidates(*quot)) - float(level)
    return float(residual.max())
