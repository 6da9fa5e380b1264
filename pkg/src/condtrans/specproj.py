"""Condition-number-constrained spectrum projection.

Solves

    min_{s, l}  ||s - d||^2   subject to   l r_i <= s_i <= kappa l r_i

which is the singular-value step of the conditioned transform learner.
For fixed ``l`` the optimal ``s`` is ``d`` clamped to ``[l r, kappa l r]``,
so the problem collapses to minimizing the convex piecewise quadratic

    g(l) = sum_{i in A(l)} (d_i - r_i l)^2 + sum_{i in B(l)} (d_i - kappa r_i l)^2

with ``A(l) = {i : d_i <= l r_i}`` and ``B(l) = {i : d_i >= kappa r_i l}``.
``g`` is C^1 with a nondecreasing derivative; between consecutive
breakpoints ``{d_i / r_i} U {d_i / (kappa r_i)}`` the index sets are
constant, so the minimizer is the stationary point

    l* = (sum_A r_i d_i + kappa sum_B r_i d_i) / (sum_A r_i^2 + kappa^2 sum_B r_i^2)

of the interval on which ``g'`` changes sign.

Two independent reference solvers live here too: a dense grid search
(:func:`grid_oracle`) and an exhaustive enumeration over (prefix, suffix)
index-set pairs (:func:`pair_enumeration`).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import InfeasibleProjectionError

__all__ = [
    "ProjectionInstance",
    "ProjectionSolution",
    "index_sets",
    "g_value",
    "g_derivative",
    "clamp_solution",
    "solve_projection",
    "breakpoint_scan",
    "grid_oracle",
    "pair_enumeration",
    "search_interval",
]

logger = logging.getLogger(__name__)

DEGENERATE_RTOL = 1e-12


@dataclass(frozen=True)
class ProjectionInstance:
    """Targets ``d``, weights ``r`` and condition bound ``kappa``.

    Negative targets are folded to ``|d|``; ``flipped`` records where this
    happened so a caller can negate the matching singular vector. Weights
    at or below ``degenerate_rtol * max(r)`` are marked degenerate and take
    no part in the constraint.
    """

    d: np.ndarray
    r: np.ndarray
    kappa: float
    flipped: np.ndarray = field(repr=False)
    degenerate: np.ndarray = field(repr=False)

    @classmethod
    def from_arrays(cls, d, r, kappa, degenerate_rtol=DEGENERATE_RTOL):
        d = np.atleast_1d(np.asarray(d, dtype=np.float64))
        r = np.atleast_1d(np.asarray(r, dtype=np.float64))
        kappa = float(kappa)
        if d.ndim != 1 or d.shape != r.shape or d.size == 0:
            raise ValueError(
                f"d and r must be nonempty vectors of equal length, got {d.shape} and {r.shape}"
            )
        if not (np.all(np.isfinite(d)) and np.all(np.isfinite(r))):
            raise ValueError("d and r must be finite")
        if np.any(r < 0):
            raise ValueError("weights r must be nonnegative")
        if not kappa >= 1.0:
            raise ValueError(f"kappa must be >= 1, got {kappa}")
        flipped = d < 0
        rmax = r.max()
        degenerate = r <= degenerate_rtol * rmax if rmax > 0 else np.ones(r.shape, bool)
        for a in (flipped, degenerate):
            a.setflags(write=False)
        d = np.abs(d)
        d.setflags(write=False)
        r = r.copy()
        r.setflags(write=False)
        return cls(d, r, kappa, flipped, degenerate)

    @property
    def n(self):
        return self.d.size

    @property
    def active(self):
        return ~self.degenerate

    def ratios(self):
        """``d_i / r_i`` over the non-degenerate indices."""
        a = self.active
        return self.d[a] / self.r[a]


@dataclass(frozen=True)
class ProjectionSolution:
    s_star: np.ndarray
    l_star: float
    objective: float
    # d == 0: every feasible scaling ties, s* = 0
    degenerate: bool = False
    # ratio of d already within kappa, s* = d
    unchanged: bool = False

    def sigma(self, inst):
        """Map back to the unweighted variable ``s_i / r_i``.

        Degenerate indices get ``l_star`` (the lower bound) so that the
        resulting spectrum stays invertible and within the ratio bound.
        """
        out = np.full(inst.n, self.l_star)
        a = inst.active
        if self.unchanged:
            out[a] = inst.d[a] / inst.r[a]
        else:
            out[a] = np.clip(inst.d[a] / inst.r[a], self.l_star, inst.kappa * self.l_star)
        return out


def _coerce(inst):
    if isinstance(inst, ProjectionInstance):
        return inst
    d, r, kappa = inst
    return ProjectionInstance.from_arrays(d, r, kappa)


def index_sets(l, inst):
    """Return index arrays ``(A, B)`` at multiplier ``l``."""
    inst = _coerce(inst)
    a = inst.active
    d, r = inst.d, inst.r
    A = np.flatnonzero(a & (d <= l * r))
    B = np.flatnonzero(a & (d >= inst.kappa * r * l))
    return A, B


def g_value(l, inst):
    inst = _coerce(inst)
    A, B = index_sets(l, inst)
    d, r, k = inst.d, inst.r, inst.kappa
    return float(np.sum((d[A] - r[A] * l) ** 2) + np.sum((d[B] - k * r[B] * l) ** 2))


def g_derivative(l, inst):
    inst = _coerce(inst)
    A, B = index_sets(l, inst)
    d, r, k = inst.d, inst.r, inst.kappa
    return float(2 * np.sum(r[A] * (r[A] * l - d[A])) + 2 * k * np.sum(r[B] * (k * l * r[B] - d[B])))


def clamp_solution(l, inst):
    """Optimal ``s`` for fixed ``l``: ``d`` clamped to ``[l r, kappa l r]``."""
    inst = _coerce(inst)
    s = np.clip(inst.d, l * inst.r, inst.kappa * l * inst.r)
    s[inst.degenerate] = l * inst.r[inst.degenerate]
    return s


def _objective(s, inst):
    a = inst.active
    return float(np.sum((s[a] - inst.d[a]) ** 2))


def search_interval(inst):
    """``((d/r)_min, (d/r)_max / kappa)``, the bracket holding the minimizer."""
    q = _coerce(inst).ratios()
    return float(q.min()), float(q.max() / inst.kappa)


def _special_case(inst):
    """Handle instances that need no search; returns None otherwise."""
    if not inst.active.any():
        raise InfeasibleProjectionError(
            "all weights are degenerate (r = 0); the data matrix is rank deficient"
        )
    q = inst.ratios()
    if not np.any(q > 0):
        return ProjectionSolution(np.zeros(inst.n), 0.0, 0.0, degenerate=True)
    qmin, qmax = q.min(), q.max()
    if qmin > 0 and qmax <= inst.kappa * qmin:
        s = inst.d.copy()
        s[inst.degenerate] = qmin * inst.r[inst.degenerate]
        return ProjectionSolution(s, float(qmin), 0.0, unchanged=True)
    return None


def _stationary(sum_rd, sum_rr):
    return sum_rd / sum_rr


def breakpoint_scan(inst, check_convexity=True):
    """Exact solver: locate the sign change of ``g'`` among sorted breakpoints.

    ``g'`` at every breakpoint is obtained from prefix/suffix sums over the
    ratios sorted once, so the scan costs O(n log n). The interval that
    contains the root is then solved in closed form with sums recomputed
    directly for accuracy.
    """
    inst = _coerce(inst)
    special = _special_case(inst)
    if special is not None:
        return special

    kappa = inst.kappa
    a = inst.active
    d, r = inst.d[a], inst.r[a]
    q = d / r
    order = np.argsort(q, kind="stable")
    d, r, q = d[order], r[order], q[order]
    qk = q / kappa

    rd, rr = r * d, r * r
    c_rd = np.concatenate(([0.0], np.cumsum(rd)))
    c_rr = np.concatenate(([0.0], np.cumsum(rr)))
    tot_rd, tot_rr = c_rd[-1], c_rr[-1]

    bps = np.unique(np.concatenate((q, qk)))
    # |A(b)| = #{q <= b}; |B(b)| = #{q / kappa >= b}
    na = np.searchsorted(q, bps, side="right")
    nb_start = np.searchsorted(qk, bps, side="left")
    sa_rd, sa_rr = c_rd[na], c_rr[na]
    sb_rd, sb_rr = tot_rd - c_rd[nb_start], tot_rr - c_rr[nb_start]
    gprime = 2 * (bps * sa_rr - sa_rd) + 2 * kappa * (kappa * bps * sb_rr - sb_rd)

    if check_convexity:
        scale = 1e-9 * (1.0 + np.abs(gprime).max())
        if np.any(np.diff(gprime) < -scale):
            logger.warning("g' not monotone across breakpoints; result may be inexact")

    k = int(np.searchsorted(gprime, 0.0, side="left"))
    if k < bps.size and gprime[k] == 0.0:
        l_star = float(bps[k])
    else:
        # root lies in (bps[k-1], bps[k]); sets are those of the open interval
        lo = bps[k - 1] if k > 0 else 0.0
        hi = bps[k] if k < bps.size else math.inf
        mid = 0.5 * (lo + hi) if math.isfinite(hi) else lo + 1.0
        in_a = q <= mid
        in_b = qk >= mid
        num = rd[in_a].sum() + kappa * rd[in_b].sum()
        den = rr[in_a].sum() + kappa**2 * rr[in_b].sum()
        l_star = float(np.clip(_stationary(num, den), lo, hi))

    s = clamp_solution(l_star, inst)
    return ProjectionSolution(s, l_star, _objective(s, inst))


def solve_projection(inst, degenerate_rtol=DEGENERATE_RTOL):
    """Solve the projection for a :class:`ProjectionInstance` or a ``(d, r, kappa)`` tuple."""
    if not isinstance(inst, ProjectionInstance):
        d, r, kappa = inst
        inst = ProjectionInstance.from_arrays(d, r, kappa, degenerate_rtol)
    if inst.degenerate.any():
        logger.debug("%d degenerate weight(s) excluded from projection", int(inst.degenerate.sum()))
    return breakpoint_scan(inst)


def grid_oracle(inst, grid_points=4000, margin=0.01, refinements=50):
    """Brute-force reference: dense grid over ``l`` plus ternary refinement."""
    inst = _coerce(inst)
    if grid_points < 1000:
        raise ValueError("grid_points must be at least 1000")
    special = _special_case(inst)
    if special is not None:
        return special
    lo, hi = search_interval(inst)
    if hi < lo:
        lo, hi = hi, lo
    lo *= 1 - margin
    hi *= 1 + margin
    a = inst.active
    d, r, kappa = inst.d[a], inst.r[a], inst.kappa

    def f(ls):
        ls = np.atleast_1d(ls)[None, :]
        s = np.clip(d[:, None], ls * r[:, None], kappa * ls * r[:, None])
        return np.sum((s - d[:, None]) ** 2, axis=0)

    grid = np.linspace(lo, hi, grid_points)
    vals = f(grid)
    j = int(np.argmin(vals))
    left, right = grid[max(j - 1, 0)], grid[min(j + 1, grid_points - 1)]
    for _ in range(refinements):
        m1 = left + (right - left) / 3
        m2 = right - (right - left) / 3
        f1, f2 = f(np.array([m1, m2]))
        if f1 <= f2:
            right = m2
        else:
            left = m1
    cands = np.array([grid[j], left, right, 0.5 * (left + right)])
    cv = f(cands)
    l_best = float(cands[int(np.argmin(cv))])
    s = clamp_solution(l_best, inst)
    return ProjectionSolution(s, l_best, _objective(s, inst))


def pair_enumeration(inst):
    """O(n^2) reference over index-set pairs.

    With indices sorted by ``d_i / r_i``, ``A(l)`` is always a prefix and
    ``B(l)`` a suffix of that order. Each (prefix, suffix) pair gives one
    stationary candidate; ``g`` is evaluated exactly at every candidate and
    the best is kept.
    """
    inst = _coerce(inst)
    special = _special_case(inst)
    if special is not None:
        return special
    a = inst.active
    d, r, kappa = inst.d[a], inst.r[a], inst.kappa
    order = np.argsort(d / r, kind="stable")
    d, r = d[order], r[order]
    n = d.size
    best_l, best_f = None, math.inf
    for na in range(n + 1):
        for nb in range(n + 1):
            num = (r[:na] * d[:na]).sum() + kappa * (r[n - nb:] * d[n - nb:]).sum()
            den = (r[:na] ** 2).sum() + kappa**2 * (r[n - nb:] ** 2).sum()
            if den <= 0:
                continue
            l = num / den
            if l <= 0:
                continue
            s = np.clip(d, l * r, kappa * l * r)
            fv = float(np.sum((s - d) ** 2))
            if fv < best_f:
                best_l, best_f = l, fv
    s = clamp_solution(best_l, inst)
    return ProjectionSolution(s, float(best_l), _objective(s, inst))
