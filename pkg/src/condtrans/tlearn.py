"""Square sparsifying transform learning.

Three learners share one data layout: ``y`` is ``(n, m)`` with one signal
per column, ``x`` the ``(n, m)`` sparse codes and ``w`` the ``(n, n)``
transform, so the representation error is ``||x - w @ y||_F``.

* :func:`fit_proposed` -- alternating minimization over the SVD factors
  ``w = u @ diag(sigma) @ v.T`` with ``kappa(w) <= cond_bound`` and
  ``||w||_F = frob_target`` enforced at every iteration.
* :func:`fit_bresler` -- the log-determinant / Frobenius penalty model
  with its closed-form transform update.
* :func:`fit_ortho` -- orthogonal transforms via Procrustes.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import linalg

from .exceptions import DimensionError, NumericalError
from .matcore import (
    condition_number,
    dct_kron_init,
    hard_threshold,
    polar_orthogonal_factor,
    svd,
)
from .specproj import ProjectionInstance, solve_projection

__all__ = [
    "TransformConstraints",
    "TransformFactors",
    "PenaltyParams",
    "IterationRecord",
    "FitLog",
    "objective",
    "update_codes",
    "update_u",
    "update_sigma",
    "update_v",
    "proposed_sweep",
    "fit_proposed",
    "bresler_transform_update",
    "bresler_objective",
    "bresler_mu_grid",
    "fit_bresler",
    "ortho_transform_update",
    "fit_ortho",
    "default_init",
]

logger = logging.getLogger(__name__)

BRESLER_MU_FACTORS = (2.1e-5, 2.1e-6, 2.1e-8, 1e-9)


@dataclass(frozen=True)
class TransformConstraints:
    """Explicit knobs of the conditioned model.

    ``cond_bound`` caps ``kappa(w)``, ``frob_target`` fixes ``||w||_F`` and
    ``sparsity`` is the number of nonzeros allowed per code column.
    """

    cond_bound: float
    frob_target: float
    sparsity: int

    def __post_init__(self):
        if not self.cond_bound >= 1:
            raise ValueError(f"cond_bound must be >= 1, got {self.cond_bound}")
        if not self.frob_target > 0:
            raise ValueError(f"frob_target must be > 0, got {self.frob_target}")
        if int(self.sparsity) < 1:
            raise ValueError(f"sparsity must be >= 1, got {self.sparsity}")

    def check_dim(self, n):
        if self.sparsity > n:
            raise ValueError(f"sparsity {self.sparsity} exceeds signal dimension {n}")


@dataclass(frozen=True)
class PenaltyParams:
    """Weights of ``-mu log|det w| + (rho_pen / 2) ||w||_F^2``."""

    mu: float
    rho_pen: float
    sparsity: int

    def __post_init__(self):
        if not (self.mu > 0 and self.rho_pen > 0):
            raise ValueError("mu and rho_pen must be positive")
        if int(self.sparsity) < 1:
            raise ValueError(f"sparsity must be >= 1, got {self.sparsity}")


@dataclass(frozen=True)
class TransformFactors:
    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray

    @classmethod
    def from_matrix(cls, w):
        u, s, v = svd(w)
        return cls(u, s, v)

    def matrix(self):
        return (self.u * self.sigma) @ self.v.T

    @property
    def kappa(self):
        return float(self.sigma.max() / self.sigma.min())


@dataclass
class IterationRecord:
    iter: int
    objective: float
    err: float
    err_normalized: float
    kappa: float
    frob: float
    v_step_increase_flag: bool = False
    ms: float = 0.0
    sigma_step_increase_flag: bool = False
    # F before the iteration and after each sub-step (proposed method only)
    step_objectives: dict = field(default_factory=dict)
    sigma_step_rejected: bool = False
    penalized_objective: float | None = None


CSV_COLUMNS = ("iter", "objective", "err", "err_normalized", "kappa", "frob", "v_step_increase_flag", "ms")


@dataclass
class FitLog:
    """Per-iteration history of a fit."""

    method: str
    initial_objective: float = math.nan
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records])

    def rows(self, include_timing=True):
        cols = CSV_COLUMNS if include_timing else CSV_COLUMNS[:-1]
        for r in self.records:
            row = []
            for c in cols:
                v = getattr(r, c)
                row.append(int(v) if isinstance(v, (bool, np.bool_)) else v)
            yield row

    def to_csv(self, fh=None, include_timing=True):
        """Write one row per iteration; returns the text when ``fh`` is None."""
        buf = io.StringIO() if fh is None else fh
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(CSV_COLUMNS if include_timing else CSV_COLUMNS[:-1])
        for row in self.rows(include_timing):
            wr.writerow([_fmt(v) for v in row])
        return buf.getvalue() if fh is None else None

    def to_dict(self, include_timing=True):
        recs = []
        for r in self.records:
            d = asdict(r)
            if not include_timing:
                d.pop("ms")
            recs.append(d)
        return {"method": self.method, "initial_objective": self.initial_objective, "records": recs}

    def to_json(self, include_timing=True):
        return json.dumps(self.to_dict(include_timing), default=_json_default, sort_keys=True)


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def _check_data(y, x=None):
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2:
        raise DimensionError(f"y must be 2-D (n, m), got shape {y.shape}")
    if x is not None:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != y.shape:
            raise DimensionError(f"x shape {x.shape} does not match y shape {y.shape}")
    return y, x


def objective(w, x, y):
    """``||x - w y||_F^2``."""
    w = np.asarray(w, dtype=np.float64)
    y, x = _check_data(y, x)
    if w.shape != (y.shape[0], y.shape[0]):
        raise DimensionError(f"w must be ({y.shape[0]}, {y.shape[0]}), got {w.shape}")
    return float(np.sum((x - w @ y) ** 2))


def _factored_objective(u, sigma, v, x, y):
    return float(np.sum((x - ((u * sigma) @ (v.T @ y))) ** 2))


def update_codes(w, y, s):
    """Sparse coding by hard thresholding ``w @ y`` column-wise."""
    return hard_threshold(w @ y, s)


def default_init(n, frob_target=None):
    """DCT kron DCT, optionally rescaled to a given Frobenius norm."""
    w = dct_kron_init(n)
    if frob_target is not None:
        w *= frob_target / np.linalg.norm(w)
    return w


# -- proposed method ---------------------------------------------------------


def update_u(factors, x, y):
    """Procrustes step: ``argmin_U ||U A - x||`` with ``A = diag(sigma) v.T y``."""
    a = factors.sigma[:, None] * (factors.v.T @ y)
    return polar_orthogonal_factor(x @ a.T)


def _sigma_terms(u, v, x, y):
    """``c_i = <y.T v_i, x.T u_i>`` and ``r_i = ||y.T v_i||``."""
    vy = v.T @ y
    ux = u.T @ x
    c = np.einsum("ij,ij->i", vy, ux)
    r = np.sqrt(np.einsum("ij,ij->i", vy, vy))
    return c, r


def _reduced_sigma_objective(sigma, c, r):
    # F(sigma) - ||x||^2
    return float(np.sum(sigma**2 * r**2 - 2 * sigma * c))


def update_sigma(factors, x, y, constraints, monotone=False):
    """Spectrum step followed by renormalization to ``frob_target``.

    Returns ``(sigma, u, rejected)``. ``u`` may have columns negated (sign
    folding of negative targets keeps ``sigma`` positive). With ``monotone``
    the incoming ``(sigma, u)`` is kept whenever the renormalized candidate
    does not lower the objective; ``rejected`` reports that case.
    """
    u, v = factors.u, factors.v
    c, r = _sigma_terms(u, v, x, y)
    if not np.any(r > 0):
        raise NumericalError("all ||y.T v_i|| vanish; y is rank deficient (zero data?)")
    safe_r = np.where(r > 0, r, 1.0)
    inst = ProjectionInstance.from_arrays(c / safe_r, r, constraints.cond_bound)
    sol = solve_projection(inst)

    tau = constraints.frob_target
    if sol.degenerate:
        cand = None
    else:
        cand = sol.sigma(inst)
        cand = tau * cand / np.linalg.norm(cand)
    sign = np.where(inst.flipped, -1.0, 1.0)

    if cand is None:
        if not monotone:
            raise NumericalError("spectrum projection degenerate (d = 0); cannot form sigma")
        return factors.sigma.copy(), u.copy(), True

    if monotone:
        f_new = _reduced_sigma_objective(cand, c * sign, r)
        f_old = _reduced_sigma_objective(factors.sigma, c, r)
        if f_new > f_old:
            return factors.sigma.copy(), u.copy(), True
    return cand, u * sign[None, :], False


def update_v(factors, x, y):
    """Surrogate Procrustes step: polar factor of ``y x.T u diag(sigma)^-1``.

    Minimizes ``||y.T V - x.T u diag(sigma)^-1||_F`` exactly; the true
    objective may go up.
    """
    s = factors.sigma
    if s.min() < 1e-14 * s.max():
        raise NumericalError(f"sigma nearly singular (min {s.min():.3g}, max {s.max():.3g})")
    m = (y @ x.T) @ factors.u / s[None, :]
    return polar_orthogonal_factor(m)


def proposed_sweep(factors, x, y, constraints, monotone_sigma=False):
    """One U, sigma, V pass; returns ``(factors, info)``.

    ``info`` holds the objective before the sweep and after each block.
    """
    info = {"before": _factored_objective(factors.u, factors.sigma, factors.v, x, y)}
    u = update_u(factors, x, y)
    factors = replace(factors, u=u)
    info["after_u"] = _factored_objective(u, factors.sigma, factors.v, x, y)

    sigma, u, rejected = update_sigma(factors, x, y, constraints, monotone=monotone_sigma)
    factors = replace(factors, u=u, sigma=sigma)
    info["after_sigma"] = _factored_objective(u, sigma, factors.v, x, y)
    info["sigma_rejected"] = rejected

    v = update_v(factors, x, y)
    factors = replace(factors, v=v)
    info["after_v"] = _factored_objective(u, sigma, v, x, y)
    return factors, info


def _metrics(w, x, y):
    wy = w @ y
    err = float(np.linalg.norm(x - wy))
    nwy = float(np.linalg.norm(wy))
    return err, (err / nwy if nwy > 0 else math.inf), condition_number(w), float(np.linalg.norm(w))


def fit_proposed(y, constraints, w0=None, iters=300, monotone_sigma=False):
    """Learn a transform with explicit condition-number and norm constraints.

    Parameters
    ----------
    y : ndarray of shape (n, m)
    constraints : TransformConstraints
    w0 : ndarray of shape (n, n), optional
        Initial transform; rescaled to ``constraints.frob_target``. Defaults
        to the DCT kron DCT transform (``n`` must then be a perfect square).
    iters : int
        Fixed iteration budget; there is no early exit.
    monotone_sigma : bool
        Keep the incoming spectrum when the renormalized projection would
        raise the objective. Off by default: rescaling to the norm target
        is not a descent step, and refusing it tends to freeze the spectrum
        at its (orthogonal) starting point.

    Returns
    -------
    factors : TransformFactors
    x : ndarray of shape (n, m)
    log : FitLog
    """
    y, _ = _check_data(y)
    n = y.shape[0]
    constraints.check_dim(n)
    if iters < 1:
        raise ValueError("iters must be >= 1")
    tau = constraints.frob_target
    w = default_init(n) if w0 is None else np.array(w0, dtype=np.float64)
    w *= tau / np.linalg.norm(w)
    factors = TransformFactors.from_matrix(w)
    if factors.kappa > constraints.cond_bound * (1 + 1e-12):
        # infeasible start: pull the spectrum inside the bound
        lo = factors.sigma.max() / constraints.cond_bound
        sig = np.maximum(factors.sigma, lo)
        factors = replace(factors, sigma=tau * sig / np.linalg.norm(sig))
    s = constraints.sparsity
    x = update_codes(factors.matrix(), y, s)

    log = FitLog("proposed", initial_objective=_factored_objective(factors.u, factors.sigma, factors.v, x, y))
    for t in range(1, iters + 1):
        t0 = time.perf_counter()
        factors, info = proposed_sweep(factors, x, y, constraints, monotone_sigma)
        w = factors.matrix()
        x = update_codes(w, y, s)
        ms = 1e3 * (time.perf_counter() - t0)
        err, errn, kap, frob = _metrics(w, x, y)
        rejected = info.pop("sigma_rejected")
        info["after_x"] = err**2
        log.records.append(
            IterationRecord(
                t, err**2, err, errn, kap, frob,
                v_step_increase_flag=info["after_v"] > info["after_sigma"],
                ms=ms, step_objectives=info, sigma_step_rejected=rejected,
                sigma_step_increase_flag=info["after_sigma"] > info["after_u"],
            )
        )
    return factors, x, log


# -- penalty baseline --------------------------------------------------------


def bresler_objective(w, x, y, params):
    sign, logdet = np.linalg.slogdet(w)
    if sign == 0:
        return math.inf
    return objective(w, x, y) - params.mu * logdet + 0.5 * params.rho_pen * float(np.sum(w * w))


def _bresler_gradient(w, x, y, params):
    return 2 * (w @ y - x) @ y.T + params.rho_pen * w - params.mu * np.linalg.inv(w).T


def _bresler_closed_form(yyt, yxt, params):
    n = yyt.shape[0]
    try:
        ell = linalg.cholesky(yyt + 0.5 * params.rho_pen * np.eye(n), lower=True)
    except linalg.LinAlgError as exc:
        raise NumericalError("y y^T + (rho_pen/2) I is not positive definite") from exc
    linv_yxt = linalg.solve_triangular(ell, yxt, lower=True)
    q, sig, r = svd(linv_yxt)
    diag = 0.5 * (sig + np.sqrt(sig**2 + 2 * params.mu))
    # W = R diag Q^T L^{-1}; solve instead of forming L^{-1}
    right = linalg.solve_triangular(ell, q, lower=True, trans="T").T
    return (r * diag) @ right


def bresler_transform_update(y, x, params, refine_rtol=1e-6, max_refine=200):
    """Closed-form minimizer of the penalized objective for fixed codes.

    The result is checked against the first-order condition
    ``2 (w y - x) y.T + rho_pen w - mu w^-T = 0``; if the residual is not
    small relative to the size of its terms, a backtracking gradient
    refinement runs.
    """
    y, x = _check_data(y, x)
    yyt = y @ y.T
    yxt = y @ x.T
    w = _bresler_closed_form(yyt, yxt, params)
    g = _bresler_gradient(w, x, y, params)
    scale = (
        np.linalg.norm(2 * w @ yyt) + np.linalg.norm(2 * yxt) + params.rho_pen * np.linalg.norm(w)
        + params.mu * np.linalg.norm(np.linalg.inv(w))
    )
    if np.linalg.norm(g) <= refine_rtol * scale:
        return w
    logger.warning("closed-form transform update off stationarity (%.3g); refining", np.linalg.norm(g) / scale)
    f = bresler_objective(w, x, y, params)
    step = 1.0 / (2 * np.linalg.norm(yyt, 2) + params.rho_pen)
    for _ in range(max_refine):
        while True:
            cand = w - step * g
            fc = bresler_objective(cand, x, y, params)
            if fc <= f - 0.5 * step * np.sum(g * g) or step < 1e-30:
                break
            step *= 0.5
        w, f = cand, fc
        g = _bresler_gradient(w, x, y, params)
        if np.linalg.norm(g) <= refine_rtol * scale:
            break
    return w


def bresler_mu_grid(y, w0=None, factors=BRESLER_MU_FACTORS):
    """Penalty weights ``f * ||w0 y||_F^2`` for each factor ``f``.

    The scale is evaluated once at the initial transform.
    """
    y, _ = _check_data(y)
    w0 = default_init(y.shape[0]) if w0 is None else np.asarray(w0, dtype=np.float64)
    scale = float(np.sum((w0 @ y) ** 2))
    return [f * scale for f in factors]


def fit_bresler(y, params, w0=None, iters=300):
    """Alternate the closed-form transform update with hard-threshold coding.

    Returns ``(w, x, log)``; ``log`` records ``kappa(w)`` and ``||w||_F`` per
    iteration so a conditioned run can be matched to it.
    """
    y, _ = _check_data(y)
    n = y.shape[0]
    if params.sparsity > n:
        raise ValueError(f"sparsity {params.sparsity} exceeds signal dimension {n}")
    w = default_init(n) if w0 is None else np.array(w0, dtype=np.float64)
    x = update_codes(w, y, params.sparsity)
    log = FitLog("bresler", initial_objective=objective(w, x, y))
    for t in range(1, iters + 1):
        t0 = time.perf_counter()
        w = bresler_transform_update(y, x, params)
        x = update_codes(w, y, params.sparsity)
        ms = 1e3 * (time.perf_counter() - t0)
        err, errn, kap, frob = _metrics(w, x, y)
        log.records.append(
            IterationRecord(t, err**2, err, errn, kap, frob, ms=ms,
                            penalized_objective=bresler_objective(w, x, y, params))
        )
    return w, x, log


# -- orthogonal baseline -----------------------------------------------------


def ortho_transform_update(y, x):
    """``argmin ||x - W y||`` over orthogonal ``W``."""
    return polar_orthogonal_factor(x @ y.T)


def fit_ortho(y, s, w0=None, iters=300):
    """Procrustes transform learning; returns ``(w, x, log)``."""
    y, _ = _check_data(y)
    n = y.shape[0]
    if not 1 <= s <= n:
        raise ValueError(f"sparsity must lie in [1, {n}], got {s}")
    w = default_init(n) if w0 is None else np.array(w0, dtype=np.float64)
    x = update_codes(w, y, s)
    log = FitLog("ortho", initial_objective=objective(w, x, y))
    for t in range(1, iters + 1):
        t0 = time.perf_counter()
        w = ortho_transform_update(y, x)
        x = update_codes(w, y, s)
        ms = 1e3 * (time.perf_counter() - t0)
        err, errn, kap, frob = _metrics(w, x, y)
        log.records.append(IterationRecord(t, err**2, err, errn, kap, frob, ms=ms))
    return w, x, log
