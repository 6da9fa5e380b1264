import csv
import io
import json

import numpy as np
import pytest

from condtrans.exceptions import NumericalError
from condtrans.matcore import condition_number, hard_threshold
from condtrans.tlearn import (
    CSV_COLUMNS,
    PenaltyParams,
    TransformConstraints,
    TransformFactors,
    _bresler_gradient,
    _sigma_terms,
    bresler_mu_grid,
    bresler_objective,
    bresler_transform_update,
    default_init,
    fit_bresler,
    fit_ortho,
    fit_proposed,
    objective,
    update_codes,
    update_sigma,
    update_u,
    update_v,
)

from _helpers import random_orthogonal


def planted(rng, n=16, m=600, s=2):
    w_true = random_orthogonal(rng, n)
    x_true = hard_threshold(rng.standard_normal((n, m)) * 5, s)
    return w_true, x_true, w_true.T @ x_true


# -- objective ---------------------------------------------------------------


def test_objective_examples(rng):
    y = rng.standard_normal((3, 5))
    assert objective(np.eye(3), y, y) == 0
    y2 = np.zeros((2, 2))
    y2[0, 0] = 2
    assert objective(np.eye(2), np.zeros((2, 2)), y2) == pytest.approx(4)


def test_objective_matches_loops(rng):
    w, x, y = rng.standard_normal((4, 4)), rng.standard_normal((4, 6)), rng.standard_normal((4, 6))
    ref = 0.0
    for i in range(4):
        for j in range(6):
            ref += (x[i, j] - sum(w[i, k] * y[k, j] for k in range(4))) ** 2
    assert objective(w, x, y) == pytest.approx(ref, rel=1e-12)


def test_constraints_validation():
    with pytest.raises(ValueError):
        TransformConstraints(0.5, 1.0, 1)
    with pytest.raises(ValueError):
        TransformConstraints(2.0, 0.0, 1)
    with pytest.raises(ValueError):
        TransformConstraints(2.0, 1.0, 0)
    with pytest.raises(ValueError):
        TransformConstraints(2.0, 1.0, 5).check_dim(4)
    with pytest.raises(ValueError):
        PenaltyParams(0.0, 1.0, 1)


# -- U / sigma / V steps -----------------------------------------------------


def _factors(rng, n, kappa=5.0, tau=3.0):
    sig = np.sort(rng.uniform(1, kappa, n))[::-1]
    sig *= tau / np.linalg.norm(sig)
    return TransformFactors(random_orthogonal(rng, n), sig, random_orthogonal(rng, n))


def test_update_u_exact_procrustes(rng):
    f = _factors(rng, 5)
    y = rng.standard_normal((5, 40))
    q = random_orthogonal(rng, 5)
    a = f.sigma[:, None] * (f.v.T @ y)
    np.testing.assert_allclose(update_u(f, q @ a, y), q, atol=1e-10)


def test_update_u_beats_random_orthogonals(rng):
    f = _factors(rng, 6)
    y, x = rng.standard_normal((6, 50)), rng.standard_normal((6, 50))
    u = update_u(f, x, y)
    best = objective((u * f.sigma) @ f.v.T, x, y)
    for _ in range(100):
        ur = random_orthogonal(rng, 6)
        assert best <= objective((ur * f.sigma) @ f.v.T, x, y) + 1e-10


def test_update_sigma_rho_one_gives_flat_spectrum(rng):
    f = _factors(rng, 8)
    y, x = rng.standard_normal((8, 60)), rng.standard_normal((8, 60))
    sig, _, _ = update_sigma(f, x, y, TransformConstraints(1.0, 2.0, 1))
    np.testing.assert_allclose(sig, np.full(8, 2.0 / np.sqrt(8)), rtol=1e-12)


def test_update_sigma_unconstrained_minimizer(rng):
    f = _factors(rng, 6)
    y = rng.standard_normal((6, 80))
    x = (f.u * f.sigma) @ f.v.T @ y + 0.01 * rng.standard_normal((6, 80))
    sig, u, _ = update_sigma(f, x, y, TransformConstraints(1e6, 4.0, 1))
    c, r = _sigma_terms(f.u, f.v, x, y)
    free = np.abs(c) / r**2  # per-index least squares
    np.testing.assert_allclose(sig, 4.0 * free / np.linalg.norm(free), rtol=1e-10)
    np.testing.assert_allclose(np.abs(u), np.abs(f.u))


def test_update_sigma_fixed_point(rng):
    f = _factors(rng, 5, kappa=2.0, tau=1.0)
    y = rng.standard_normal((5, 30))
    x = (f.u * f.sigma) @ f.v.T @ y  # exact fit: sigma is optimal
    sig, _, _ = update_sigma(f, x, y, TransformConstraints(10.0, 1.0, 1))
    np.testing.assert_allclose(sig, f.sigma, rtol=1e-10)


def test_update_sigma_feasible(rng):
    for _ in range(20):
        f = _factors(rng, 10)
        y, x = rng.standard_normal((10, 50)), rng.standard_normal((10, 50))
        sig, u, _ = update_sigma(f, x, y, TransformConstraints(3.0, 2.5, 1))
        assert sig.max() / sig.min() <= 3.0 * (1 + 1e-10)
        assert np.linalg.norm(sig) == pytest.approx(2.5, rel=1e-12)
        np.testing.assert_allclose(u.T @ u, np.eye(10), atol=1e-10)


def test_update_v_identity_sigma_is_procrustes(rng):
    u = random_orthogonal(rng, 5)
    f = TransformFactors(u, np.ones(5), random_orthogonal(rng, 5))
    y, x = rng.standard_normal((5, 40)), rng.standard_normal((5, 40))
    v = update_v(f, x, y)
    # with sigma = I the surrogate is the true objective
    best = objective(u @ v.T, x, y)
    for _ in range(50):
        assert best <= objective(u @ random_orthogonal(rng, 5).T, x, y) + 1e-10


def test_update_v_planted_recovery(rng):
    f = _factors(rng, 6)
    x = (f.u * f.sigma) @ f.v.T  # y = I
    v = update_v(TransformFactors(f.u, f.sigma, random_orthogonal(rng, 6)), x, np.eye(6))
    np.testing.assert_allclose(v, f.v, atol=1e-10)


def test_update_v_decreases_surrogate(rng):
    f = _factors(rng, 7)
    y, x = rng.standard_normal((7, 60)), rng.standard_normal((7, 60))
    target = x.T @ f.u / f.sigma
    before = np.linalg.norm(y.T @ f.v - target)
    after = np.linalg.norm(y.T @ update_v(f, x, y) - target)
    assert after <= before + 1e-10


def test_update_v_rejects_singular_sigma(rng):
    f = TransformFactors(np.eye(3), np.array([1.0, 1.0, 1e-16]), np.eye(3))
    with pytest.raises(NumericalError):
        update_v(f, np.eye(3), np.eye(3))


# -- fit_proposed --------------------------------------------------------------


def test_fit_proposed_invariants(desk_y):
    cons = TransformConstraints(30.0, 2.5, 6)
    factors, x, log = fit_proposed(desk_y, cons, iters=30)
    assert len(log) == 30
    assert np.all(log.column("kappa") <= 30.0 * (1 + 1e-8))
    np.testing.assert_allclose(log.column("frob"), 2.5, rtol=1e-9)
    assert np.count_nonzero(x, axis=0).max() <= 6
    np.testing.assert_allclose(factors.matrix(), (factors.u * factors.sigma) @ factors.v.T)
    for r in log:
        so = r.step_objectives
        tol = 1e-10 * (1 + so["before"])
        assert so["after_u"] <= so["before"] + tol
        assert so["after_x"] <= so["after_v"] + tol
        assert r.v_step_increase_flag == (so["after_v"] > so["after_sigma"])


def test_fit_proposed_rho_one_is_orthogonal(rng):
    _, _, y = planted(rng)
    _, _, log = fit_proposed(y, TransformConstraints(1.0, 4.0, 2), iters=20)
    np.testing.assert_allclose(log.column("kappa"), 1.0, atol=1e-8)


def test_fit_proposed_planted_orthogonal_model(rng):
    w_true, x_true, y = planted(rng, n=16, m=800, s=2)
    _, _, log = fit_proposed(y, TransformConstraints(1.0, 4.0, 2), iters=50)
    assert log.records[-1].err <= 1e-6


def test_fit_proposed_initial_transform_rescaled(rng):
    y = rng.standard_normal((4, 50))
    f, _, _ = fit_proposed(y, TransformConstraints(5.0, 7.0, 1), w0=3 * np.eye(4), iters=1)
    assert np.linalg.norm(f.matrix()) == pytest.approx(7.0)


def test_fit_log_serialization(rng):
    y = rng.standard_normal((4, 50))
    _, _, log = fit_proposed(y, TransformConstraints(5.0, 2.0, 2), iters=3)
    rows = list(csv.reader(io.StringIO(log.to_csv())))
    assert tuple(rows[0]) == CSV_COLUMNS and len(rows) == 4
    rows = list(csv.reader(io.StringIO(log.to_csv(include_timing=False))))
    assert "ms" not in rows[0]
    d = json.loads(log.to_json())
    assert d["method"] == "proposed" and len(d["records"]) == 3


# -- bresler -------------------------------------------------------------------


def _bresler_instance(rng, n):
    y = rng.standard_normal((n, 6 * n))
    x = update_codes(random_orthogonal(rng, n), y, max(1, n // 3))
    return y, x, PenaltyParams(float(rng.uniform(0.05, 10)), float(rng.uniform(0.05, 10)), 1)


def test_bresler_stationarity(rng):
    for _ in range(100):
        n = int(rng.integers(1, 17))
        y, x, p = _bresler_instance(rng, n)
        w = bresler_transform_update(y, x, p)
        assert np.linalg.norm(_bresler_gradient(w, x, y, p)) <= 1e-6 * (1 + np.linalg.norm(w))


def test_bresler_local_minimality(rng):
    y, x, p = _bresler_instance(rng, 6)
    w = bresler_transform_update(y, x, p)
    f = bresler_objective(w, x, y, p)
    for _ in range(100):
        d = rng.standard_normal((6, 6))
        assert f <= bresler_objective(w + 1e-3 * d / np.linalg.norm(d), x, y, p)


def test_bresler_kappa_decreases_along_mu_ladder(rng):
    y, x, _ = _bresler_instance(rng, 8)
    kappas = [condition_number(bresler_transform_update(y, x, PenaltyParams(mu, mu, 1)))
              for mu in (1e-2, 1e-1, 1, 10, 100, 1e3, 1e4)]
    assert np.all(np.diff(kappas) <= 1e-9)
    assert kappas[-1] < 1.01


def test_fit_bresler_descent(desk_y):
    mu = bresler_mu_grid(desk_y)[0]
    p = PenaltyParams(mu, mu, 6)
    w0 = default_init(64)
    _, _, log = fit_bresler(desk_y, p, iters=15)
    pen = [bresler_objective(w0, update_codes(w0, desk_y, 6), desk_y, p)]
    pen += [r.penalized_objective for r in log]
    assert np.all(np.diff(pen) <= 1e-10 * (1 + np.abs(pen[:-1])))


def test_bresler_mu_grid_uses_initial_scale(desk_y):
    grid = bresler_mu_grid(desk_y)
    scale = np.sum((default_init(64) @ desk_y) ** 2)
    np.testing.assert_allclose(grid, np.array([2.1e-5, 2.1e-6, 2.1e-8, 1e-9]) * scale)


def test_bresler_mu_grid_spans_condition_range(desk_y):
    # the sweep should reach from tens to tens of thousands
    ks = []
    for mu in bresler_mu_grid(desk_y)[::3]:
        w, _, _ = fit_bresler(desk_y, PenaltyParams(mu, mu, 6), iters=40)
        ks.append(condition_number(w))
    assert 10 <= ks[0] <= 100 and ks[1] >= 1000


# -- ortho -----------------------------------------------------------------------


def test_fit_ortho_sparse_data_keeps_identity(rng):
    y = hard_threshold(rng.standard_normal((6, 40)), 2)
    w, x, log = fit_ortho(y, 2, w0=np.eye(6), iters=5)
    np.testing.assert_allclose(w, np.eye(6), atol=1e-12)
    assert log.records[-1].err == pytest.approx(0, abs=1e-12)


def test_fit_ortho_monotone_and_orthogonal(rng):
    y = rng.standard_normal((16, 300))
    w, _, log = fit_ortho(y, 3, iters=30)
    obj = np.concatenate([[log.initial_objective], log.column("objective")])
    assert np.all(np.diff(obj) <= 1e-10 * (1 + obj[:-1]))
    np.testing.assert_allclose(log.column("kappa"), 1.0, atol=1e-10)
    np.testing.assert_allclose(w.T @ w, np.eye(16), atol=1e-10)


def test_fit_ortho_rejects_bad_sparsity(rng):
    with pytest.raises(ValueError):
        fit_ortho(rng.standard_normal((4, 10)), 5)
