"""Built-in consistency checks run by ``condtrans selftest``.

Each check compares a solver against an independent reference or asserts
an invariant on a small seeded problem. Output is one line per check and
carries no timings, so two runs print identical text.
"""

from __future__ import annotations

import itertools
import sys

import numpy as np
from scipy import linalg
from scipy.stats import ortho_group

from .denoise import update_clean_patches, variable_sparsity_codes
from .imaging import assemble_patches, extract_patches, psnr, ssim
from .matcore import condition_number, hard_threshold, polar_orthogonal_factor
from .specproj import breakpoint_scan, grid_oracle, pair_enumeration
from .tlearn import (
    PenaltyParams,
    TransformConstraints,
    _bresler_gradient,
    bresler_transform_update,
    fit_ortho,
    fit_proposed,
    update_codes,
)

__all__ = ["CHECKS", "run_selftest"]

SEED = 20240607


def _projection(rng):
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(2, 21))
        inst = (rng.uniform(1e-3, 10, n), rng.uniform(1e-3, 10, n), float(rng.uniform(1, 100)))
        f = breakpoint_scan(inst).objective
        g = grid_oracle(inst).objective
        p = pair_enumeration(inst).objective
        tol = 1e-8 * (1 + float(np.sum(inst[0] ** 2)))
        if f > g + tol or f > p + 1e-10:
            return False, f"scan {f!r} vs grid {g!r} / pairs {p!r}"
        worst = max(worst, f - p)
    return True, f"200 instances, worst excess over enumeration {worst:.1e}"


def _polar(rng):
    m = rng.standard_normal((6, 6))
    q = polar_orthogonal_factor(m)
    best = np.trace(q.T @ m)
    samples = ortho_group.rvs(6, size=2000, random_state=rng)
    tr = np.einsum("kij,ij->k", samples, m)
    if np.max(tr) > best + 1e-10:
        return False, "random orthogonal matrix beats the polar factor"
    return True, "trace optimal against 2000 samples"


def _threshold(rng):
    for n in range(1, 8):
        x = rng.standard_normal(n)
        for s in range(n + 1):
            h = hard_threshold(x[:, None], s)[:, 0]
            best = min(
                np.sum((x - np.where(np.isin(np.arange(n), sup), x, 0.0)) ** 2)
                for sup in itertools.combinations(range(n), s)
            )
            if abs(np.sum((x - h) ** 2) - best) > 1e-12 or np.count_nonzero(h) > s:
                return False, f"n={n}, s={s}"
    return True, "matches exhaustive search for n < 8"


def _patches(rng):
    img = rng.uniform(0, 255, (23, 19))
    for p, st in ((4, 1), (5, 3), (8, 8)):
        y, grid = extract_patches(img, p, st, subtract_mean=True)
        out = assemble_patches(y, grid, fill=img)
        if np.max(np.abs(out - img)) > 1e-10:
            return False, f"round trip failed at p={p}, stride={st}"
    if psnr(img, img) != float("inf") or abs(ssim(img, img) - 1) > 1e-12:
        return False, "metric identities"
    return True, "round trip exact; metric identities hold"


def _proposed(rng):
    y = rng.standard_normal((16, 400)) * np.linspace(3, 0.1, 16)[:, None]
    cons = TransformConstraints(8.0, 3.0, 3)
    _, x, log = fit_proposed(y, cons, iters=25)
    for r in log.records:
        if r.kappa > 8.0 * (1 + 1e-8) or abs(r.frob - 3.0) > 1e-9 * 3.0:
            return False, f"constraint violated at iteration {r.iter}"
        so = r.step_objectives
        tol = 1e-10 * (1 + so["before"])
        if so["after_u"] > so["before"] + tol or so["after_x"] > so["after_v"] + tol:
            return False, f"U- or X-step increased the objective at iteration {r.iter}"
    if np.max(np.count_nonzero(x, axis=0)) > 3:
        return False, "sparsity exceeded"
    return True, "kappa, norm and sparsity held for 25 iterations"


def _reduction(rng):
    y = rng.standard_normal((16, 300))
    _, _, lp = fit_proposed(y, TransformConstraints(1.0, 4.0, 4), iters=15)
    _, _, lo = fit_ortho(y, 4, iters=15)
    if np.max(np.abs(lp.column("kappa") - 1)) > 1e-8:
        return False, "kappa drifted from 1"
    a, b = lp.records[-1].objective, lo.records[-1].objective
    if abs(a - b) > 0.01 * b:
        return False, f"objective {a!r} vs orthogonal {b!r}"
    return True, "rho = 1 matches the orthogonal learner"


def _bresler(rng):
    worst = 0.0
    for _ in range(10):
        n = int(rng.integers(2, 9))
        y = rng.standard_normal((n, 5 * n))
        x = update_codes(np.eye(n), y, max(1, n // 2))
        params = PenaltyParams(float(rng.uniform(0.1, 5)), float(rng.uniform(0.1, 5)), 1)
        w = bresler_transform_update(y, x, params)
        res = np.linalg.norm(_bresler_gradient(w, x, y, params)) / (1 + np.linalg.norm(w))
        if res > 1e-6:
            return False, f"stationarity residual {res:.2e}"
        worst = max(worst, res)
    return True, f"worst relative stationarity residual {worst:.1e}"


def _denoise_steps(rng):
    n, m = 16, 200
    w = ortho_group.rvs(n, random_state=rng)
    yh = rng.standard_normal((n, m))
    x, s = variable_sparsity_codes(w, yh, 1.5)
    z = w @ yh
    for j in range(0, m, 7):
        tail = lambda k: np.linalg.norm(z[:, j] - hard_threshold(z[:, [j]], k)[:, 0])  # noqa: E731
        if tail(s[j]) > 1.5 + 1e-12 or (s[j] > 1 and tail(s[j] - 1) <= 1.5):
            return False, f"sparsity level not minimal in column {j}"
    _, s2 = variable_sparsity_codes(w, yh, 1.5, search="bisect")
    if not np.array_equal(s, s2):
        return False, "bisection disagrees with linear search"
    a = rng.standard_normal((n, n)) + 3 * np.eye(n)
    got = update_clean_patches(a, x, yh, 0.7)
    ref = linalg.solve(a.T @ a + 0.7 * np.eye(n), a.T @ x + 0.7 * yh)
    if np.max(np.abs(got - ref)) > 1e-10 * (1 + np.abs(ref).max()):
        return False, "clean-patch update disagrees with dense solve"
    if condition_number(w) > 1 + 1e-10:
        return False, "test transform is not orthogonal"
    return True, "sparsity levels minimal; least-squares update exact"


CHECKS = (
    ("projection-oracles", _projection),
    ("polar-optimality", _polar),
    ("hard-threshold", _threshold),
    ("patch-roundtrip", _patches),
    ("proposed-invariants", _proposed),
    ("rho-one-reduction", _reduction),
    ("bresler-stationarity", _bresler),
    ("denoise-subproblems", _denoise_steps),
)


def run_selftest(stream=None):
    """Run every check; returns True when all pass."""
    stream = stream or sys.stdout
    ok_all = True
    for name, fn in CHECKS:
        rng = np.random.default_rng([SEED, len(name)])
        try:
            ok, detail = fn(rng)
        except Exception as exc:  # a crash is a failed check, not an abort
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        ok_all &= ok
        stream.write(f"{'ok  ' if ok else 'FAIL'} {name}: {detail}\n")
    stream.write("selftest passed\n" if ok_all else "selftest FAILED\n")
    return ok_all
