"""Test-function families, Gram geometry, residual action, dual energy."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pathkl import (
    ArgumentError,
    BasisFunction,
    FunctionBasis,
    InitialLaw,
    TimeGrid,
    basis_from_config,
    bump_basis,
    drift_correction,
    dual_energy,
    fokker_planck_residual,
    gaussian_bump,
    gram_matrix,
    make_model,
    mixed_basis,
    sample_paths,
    windowed_monomial,
)


def _fd_gradient(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for i in range(x.shape[0]):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        out[i] = (f.value(xp) - f.value(xm)) / (2 * h)
    return out


def _fd_hessian(f, x, h=1e-5):
    x = np.asarray(x, dtype=float)
    d = x.shape[0]
    out = np.zeros((d, d))
    for i in range(d):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        out[i] = (f.gradient(xp) - f.gradient(xm)) / (2 * h)
    return 0.5 * (out + out.T)


# ---------------------------------------------------------------------------
# basis functions: derivatives, support, seams


@pytest.mark.parametrize("maker", [
    lambda: gaussian_bump([0.4], 0.7, [-2.0], [3.0]),
    lambda: gaussian_bump([-1.0], 2.0, [-4.0], [4.0], margin=0.4),
    lambda: windowed_monomial(1, [-2.0], [2.0]),
    lambda: windowed_monomial(2, [-1.0], [3.0], margin=0.3),
    lambda: windowed_monomial(0, [-2.0], [2.0]),
])
def test_derivatives_match_finite_differences(maker):
    f = maker()
    # probe the core, the smoothing band, and just inside the edge
    lo, hi = -1.9, 1.9
    for u in np.linspace(0.02, 0.98, 13):
        x = np.array([lo + u * (hi - lo)])
        np.testing.assert_allclose(f.gradient(x), _fd_gradient(f, x),
                                   rtol=2e-4, atol=2e-5)
        np.testing.assert_allclose(f.hessian(x), _fd_hessian(f, x),
                                   rtol=2e-3, atol=2e-4)


def test_compact_support_exact():
    f = gaussian_bump([0.0], 1.0, [-1.0], [1.0])
    for x in ([-1.0], [1.0], [-1.5], [2.0]):
        x = np.array(x)
        assert f.value(x) == 0.0
        assert np.all(f.gradient(x) == 0.0)
        assert np.all(f.hessian(x) == 0.0)


def test_seam_smoothness():
    # value, gradient, hessian all approach 0 at the box edge
    f = windowed_monomial(1, [-1.0], [1.0], margin=0.25)
    eps = 1e-5
    x = np.array([1.0 - eps])
    assert abs(f.value(x)) < 1e-10
    assert abs(f.gradient(x)[0]) < 1e-5
    assert abs(f.hessian(x)[0, 0]) < 1e-1


def test_batched_evaluation_matches_scalar():
    f = gaussian_bump([0.2], 0.8, [-2.0], [2.0])
    xs = np.linspace(-2.5, 2.5, 41)[:, None]
    vals = f.value(xs)
    for i, x in enumerate(xs):
        assert vals[i] == pytest.approx(f.value(x), abs=1e-14)


def test_basis_builders_validate():
    with pytest.raises(ArgumentError):
        bump_basis([-1.0], [1.0], 0)
    with pytest.raises(ArgumentError):
        gaussian_bump([0.0], -1.0, [-1.0], [1.0])
    with pytest.raises(ArgumentError):
        windowed_monomial(-1, [-1.0], [1.0])


def test_basis_from_config_strict():
    with pytest.raises(ArgumentError):
        basis_from_config({"family": "bumps", "box": [-1, 1], "typo": 3})
    with pytest.raises(ArgumentError):
        basis_from_config({"family": "bumps"})
    with pytest.raises(ArgumentError):
        basis_from_config({"family": "fourier", "box": [-1, 1]})
    basis = basis_from_config({"family": "mixed", "box": [-3, 3],
                               "count": 4, "degrees": [0, 1]})
    assert basis.size == 6


# ---------------------------------------------------------------------------
# Gram matrix


def _linear_fn():
    return BasisFunction(value=lambda x: float(np.asarray(x)[..., 0])
                         if np.asarray(x).ndim == 1
                         else np.asarray(x)[..., 0],
                         gradient=lambda x: np.ones_like(
                             np.asarray(x, dtype=float)),
                         hessian=lambda x: np.zeros(
                             np.asarray(x).shape + (1,)),
                         family="test", meta={})


def _bare_basis(fns):
    return FunctionBasis(functions=tuple(fns), lo=np.array([-1e9]),
                         hi=np.array([1e9]), margin=0.25)


def test_gram_linear_unit():
    basis = _bare_basis([_linear_fn()])
    samples = np.random.default_rng(0).normal(size=(50, 1))
    gram = gram_matrix(make_model("brownian", {}), 0.0, samples, basis)
    np.testing.assert_allclose(gram.matrix, [[1.0]], atol=1e-12)


def test_gram_scalar_a2():
    basis = _bare_basis([_linear_fn()])
    samples = np.zeros((10, 1))
    gram = gram_matrix(make_model("brownian", {"a": 2.0}), 0.0, samples,
                       basis)
    np.testing.assert_allclose(gram.matrix, [[2.0]], atol=1e-12)


def test_gram_duplicate_functions_rank_one():
    basis = _bare_basis([_linear_fn(), _linear_fn()])
    samples = np.random.default_rng(1).normal(size=(30, 1))
    gram = gram_matrix(make_model("brownian", {}), 0.0, samples, basis)
    assert np.linalg.matrix_rank(gram.matrix, tol=1e-10) == 1
    # pseudo-inverse path: duplicated span gives the same supremum
    sol_dup = dual_energy(np.array([1.0, 1.0]), gram)
    gram1 = gram_matrix(make_model("brownian", {}), 0.0, samples,
                        _bare_basis([_linear_fn()]))
    sol_one = dual_energy(np.array([1.0]), gram1)
    assert sol_dup.value == pytest.approx(sol_one.value, abs=1e-12)


def test_gram_empty_samples():
    with pytest.raises(ArgumentError):
        gram_matrix(make_model("brownian", {}), 0.0, np.zeros((0, 1)),
                    _bare_basis([_linear_fn()]))


# ---------------------------------------------------------------------------
# residual action


def test_residual_zero_under_reference():
    # sampled under P itself, the residual pairing vanishes
    grid = TimeGrid.uniform(1.0, 64)
    spec = make_model("brownian", {})
    ens = sample_paths(spec, InitialLaw.point_mass([0.0]), grid, 4000, 0)
    basis = bump_basis([-3.5], [3.5], 6)
    res = fokker_planck_residual(ens, spec, basis, t_index=32, window=4)
    se = np.sqrt(np.diag(res.cov_mean))
    assert np.all(np.abs(res.values) <= 3 * se)


def test_residual_detects_constant_drift():
    grid = TimeGrid.uniform(1.0, 64)
    mu = make_model("constant_drift", {"theta": 1.0})
    P = make_model("brownian", {})
    ens = sample_paths(mu, InitialLaw.point_mass([0.0]), grid, 6000, 3)
    basis = _bare_basis([_linear_fn()])
    res = fokker_planck_residual(ens, P, basis, t_index=32, window=4)
    se = math.sqrt(res.cov_mean[0, 0])
    # d/dt E[x] = theta while E[L x] = 0 under driftless reference
    assert abs(res.values[0] - 1.0) <= 3 * se


def test_residual_flat_function_is_silent():
    grid = TimeGrid.uniform(1.0, 64)
    mu = make_model("constant_drift", {"theta": 1.0})
    ens = sample_paths(mu, InitialLaw.point_mass([0.0]), grid, 2000, 4)
    # bump so wide its gradient is ~0 where the mass lives
    basis = _bare_basis([gaussian_bump([0.0], 400.0, [-1e3], [1e3])])
    res = fokker_planck_residual(ens, make_model("brownian", {}), basis,
                                 t_index=32, window=4)
    assert abs(res.values[0]) < 1e-4


def test_residual_window_validation():
    grid = TimeGrid.uniform(1.0, 16)
    spec = make_model("brownian", {})
    ens = sample_paths(spec, InitialLaw.point_mass([0.0]), grid, 8, 0)
    basis = bump_basis([-2.0], [2.0], 3)
    with pytest.raises(ArgumentError):
        fokker_planck_residual(ens, spec, basis, t_index=0, window=1)
    with pytest.raises(ArgumentError):
        fokker_planck_residual(ens, spec, basis, t_index=16, window=1)
    with pytest.raises(ArgumentError):
        fokker_planck_residual(ens, spec, basis, t_index=8, window=0)


# ---------------------------------------------------------------------------
# dual energy


def _gram_from_matrix(q):
    from pathkl.variational import GramData
    q = np.asarray(q, dtype=float)
    return GramData(matrix=q, n_samples=1, t=0.0,
                    condition=float(np.linalg.cond(q)))


def test_dual_energy_unit():
    sol = dual_energy(np.array([1.0]), _gram_from_matrix([[1.0]]))
    assert sol.value == pytest.approx(0.5, abs=1e-15)


def test_dual_energy_zero_action():
    sol = dual_energy(np.zeros(3), _gram_from_matrix(np.eye(3)))
    assert sol.value == 0.0


def test_dual_energy_matches_direct_maximization():
    from scipy.optimize import minimize
    rng = np.random.default_rng(7)
    for _ in range(10):
        m = rng.normal(size=(3, 3))
        q = m @ m.T + 1e-3 * np.eye(3)
        c = rng.normal(size=3)
        sol = dual_energy(c, _gram_from_matrix(q))
        res = minimize(lambda g: 0.5 * g @ q @ g - c @ g,
                       np.zeros(3), jac=lambda g: q @ g - c,
                       method="L-BFGS-B", tol=1e-14)
        assert sol.value == pytest.approx(-res.fun, abs=1e-6)


def test_energy_identity_exact():
    rng = np.random.default_rng(11)
    m = rng.normal(size=(4, 4))
    q = m @ m.T
    c = rng.normal(size=4)
    gram = _gram_from_matrix(q)
    sol = dual_energy(c, gram)
    g = sol.coefficients
    assert sol.value == 0.5 * float(g @ (q @ g))


@settings(max_examples=40)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0.0, 1.0))
def test_dual_energy_convex_in_action(seed, lam):
    rng = np.random.default_rng(seed)
    m = rng.normal(size=(3, 3))
    q = m @ m.T + 1e-6 * np.eye(3)
    gram = _gram_from_matrix(q)
    c1, c2 = rng.normal(size=3), rng.normal(size=3)
    mix = dual_energy(lam * c1 + (1 - lam) * c2, gram).value
    bound = lam * dual_energy(c1, gram).value \
        + (1 - lam) * dual_energy(c2, gram).value
    assert mix <= bound + 1e-9


def test_dual_energy_monotone_in_basis():
    # a larger span can only raise the restricted supremum
    grid = TimeGrid.uniform(1.0, 64)
    mu = make_model("constant_drift", {"theta": 1.0})
    P = make_model("brownian", {})
    ens = sample_paths(mu, InitialLaw.point_mass([0.0]), grid, 3000, 5)
    small = bump_basis([-2.5], [3.5], 4)
    large = FunctionBasis(
        functions=small.functions + (gaussian_bump([0.5], 0.6, [-2.5],
                                                   [3.5]),),
        lo=small.lo, hi=small.hi, margin=small.margin)
    vals = {}
    for tag, basis in (("small", small), ("large", large)):
        res = fokker_planck_residual(ens, P, basis, t_index=32, window=4)
        gram = gram_matrix(P, res.t, ens.states[:, 32], basis)
        vals[tag] = dual_energy(res.values, gram).value
    assert vals["large"] >= vals["small"] - 1e-9


def test_dual_energy_scale_invariant():
    grid = TimeGrid.uniform(1.0, 64)
    mu = make_model("constant_drift", {"theta": 1.0})
    P = make_model("brownian", {})
    ens = sample_paths(mu, InitialLaw.point_mass([0.0]), grid, 2000, 6)
    base = bump_basis([-2.5], [3.5], 5)
    alpha = 3.7

    def scaled(f):
        return BasisFunction(
            value=lambda x, f=f: alpha * f.value(x),
            gradient=lambda x, f=f: alpha * f.gradient(x),
            hessian=lambda x, f=f: alpha * f.hessian(x),
            family=f.family, meta=f.meta)

    scaled_basis = FunctionBasis(
        functions=tuple(scaled(f) for f in base.functions),
        lo=base.lo, hi=base.hi, margin=base.margin)
    out = []
    for basis in (base, scaled_basis):
        res = fokker_planck_residual(ens, P, basis, t_index=32, window=4)
        gram = gram_matrix(P, res.t, ens.states[:, 32], basis)
        out.append(dual_energy(res.values, gram).value)
    assert out[0] == pytest.approx(out[1], rel=1e-9, abs=1e-12)


# ---------------------------------------------------------------------------
# drift-field recovery


def test_recovered_field_zero_action():
    basis = bump_basis([-2.0], [2.0], 3)
    samples = np.random.default_rng(0).normal(size=(100, 1))
    P = make_model("brownian", {})
    gram = gram_matrix(P, 0.5, samples, basis)
    from pathkl.variational import FokkerPlanckResidual
    res = FokkerPlanckResidual(values=np.zeros(basis.size),
                               cov_mean=np.zeros((basis.size, basis.size)),
                               t=0.5, n_paths=100)
    corr = drift_correction(res, gram, basis, P)
    assert corr.energy == 0.0
    pts = np.linspace(-1.5, 1.5, 7)[:, None]
    assert np.all(corr.field(pts) == 0.0)


def test_recovered_field_ou_shape():
    # drift gap between OU and BM is -gamma*y; check sign and magnitude
    grid = TimeGrid.uniform(1.0, 128)
    gamma = 1.0
    mu = make_model("ou", {"gamma": gamma})
    P = make_model("brownian", {})
    ens = sample_paths(mu, InitialLaw.gaussian([0.0], [[0.5]]), grid,
                       30_000, 8)
    basis = mixed_basis([-3.2], [3.2], n_bumps=8, bump_scale=1.0,
                        degrees=[1])
    idx = 64
    res = fokker_planck_residual(ens, P, basis, t_index=idx, window=8)
    gram = gram_matrix(P, res.t, ens.states[:, idx], basis)
    corr = drift_correction(res, gram, basis, P, t=res.t)
    ys = np.linspace(-0.9, 0.9, 9)[:, None]
    h = corr.field(ys)[:, 0]
    np.testing.assert_allclose(h, -gamma * ys[:, 0], atol=0.12)
