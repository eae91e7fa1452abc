import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bbm.errors import Infeasible, ValidationError
from bbm.prior_fc import (
    NU_SPAN,
    FCPrior,
    build_cholesky_prior,
    build_fc_prior,
    empirical_fc,
    fit_iw,
    iw_variance,
    sample_fc_prior,
    to_correlation,
)
from bbm.synth import random_correlation


def pair_with_correlation(r, T, rng):
    """Two columns whose sample correlation is exactly ``r``."""
    x = rng.standard_normal(T)
    x -= x.mean()
    w = rng.standard_normal(T)
    w -= w.mean()
    w -= (w @ x) / (x @ x) * x
    x /= np.linalg.norm(x)
    w /= np.linalg.norm(w)
    return np.column_stack([x, r * x + np.sqrt(1 - r**2) * w])


def timecourses_for(R, T, rng):
    """T x Q time courses whose sample correlation is exactly ``R``."""
    Z = rng.standard_normal((T, R.shape[0]))
    Z -= Z.mean(axis=0)
    # whiten the sample, then impose R
    L = np.linalg.cholesky(Z.T @ Z)
    W = np.linalg.solve(L, Z.T).T
    return W @ np.linalg.cholesky(R).T


def test_identical_sessions(rng):
    R = random_correlation(4, rng)
    tcs = [timecourses_for(R, 50, rng) for _ in range(5)]
    mean, var = empirical_fc(tcs)
    np.testing.assert_allclose(mean, R, atol=1e-12)
    np.testing.assert_allclose(var, 0, atol=1e-20)


def test_two_point_statistics(rng):
    mean, var = empirical_fc([pair_with_correlation(0.2, 30, rng), pair_with_correlation(0.6, 30, rng)])
    assert mean[0, 1] == pytest.approx(0.4, abs=1e-12)
    assert var[0, 1] == pytest.approx(0.08, abs=1e-12)
    assert var[0, 0] == 0 and mean[1, 1] == 1


def test_independent_columns_mean_near_zero(rng):
    T = 10_000
    mean, _ = empirical_fc([rng.standard_normal((T, 2)) for _ in range(20)])
    assert abs(mean[0, 1]) < 3 / np.sqrt(T)


def test_need_two_sessions(rng):
    with pytest.raises(ValidationError):
        empirical_fc([rng.standard_normal((10, 2))])


def test_iw_zero_variance_hits_upper_bound():
    nu, psi = fit_iw(np.eye(3), np.zeros((3, 3)))
    assert nu == 3 + 4 + NU_SPAN
    np.testing.assert_allclose(psi / (nu - 4), np.eye(3))


def test_iw_q2_closed_form():
    # emp_mean = I gives Var(Sigma_12) = (nu - 3) / ((nu - 2)(nu - 5)); solve for 0.04
    root = max(np.roots([1.0, -32.0, 85.0]).real)
    emp_var = np.array([[0.0, 0.04], [0.04, 0.0]])
    nu, psi = fit_iw(np.eye(2), emp_var)
    assert nu == pytest.approx(root, rel=2e-6)
    v = iw_variance(nu, psi)[0, 1]
    assert v >= 0.04
    assert v == pytest.approx(0.04, abs=1e-4)
    assert (nu - 3) / ((nu - 2) * (nu - 5)) == pytest.approx(v, rel=1e-12)


def test_iw_variance_formula_matches_monte_carlo():
    from scipy.stats import invwishart

    psi = np.array([[9.0, 2.0, 0.5], [2.0, 8.0, 1.0], [0.5, 1.0, 7.0]])
    nu = 12.0
    draws = invwishart.rvs(df=nu, scale=psi, size=200_000, random_state=1)
    mc = draws.var(axis=0)
    np.testing.assert_allclose(iw_variance(nu, psi), mc, rtol=0.05)


def test_doubling_emp_var_lowers_nu(rng):
    R = random_correlation(4, rng)
    v = np.abs(rng.normal(0.01, 0.003, (4, 4)))
    v = (v + v.T) / 2
    nu1, _ = fit_iw(R, v)
    nu2, _ = fit_iw(R, 2 * v)
    assert nu2 < nu1


def test_infeasible_variance():
    with pytest.raises(Infeasible):
        fit_iw(np.eye(2), np.array([[0.0, 10.0], [10.0, 0.0]]))


def test_iw_mean_of_raw_draws():
    from scipy.stats import invwishart

    R = random_correlation(3, np.random.default_rng(5))
    nu, psi = fit_iw(R, np.full((3, 3), 0.01))
    draws = invwishart.rvs(df=nu, scale=psi, size=5000, random_state=2)
    se = draws.std(axis=0, ddof=1) / np.sqrt(5000)
    z = np.abs(draws.mean(axis=0) - R) / se
    assert z.max() < 3.5  # nine entries, three symmetric pairs


def test_cholesky_identical_training(rng):
    R = random_correlation(4, rng)
    perms, cm, cv = build_cholesky_prior([R] * 6, P=3, rng_seed=0)
    np.testing.assert_allclose(cv, 0, atol=1e-24)
    prior = FCPrior(emp_mean=R, emp_var=np.zeros((4, 4)), permutations=perms, chol_mean=cm, chol_var=cv)
    draws = sample_fc_prior(prior, 20, rng_seed=1, kind="cholesky")
    np.testing.assert_allclose(draws, np.broadcast_to(R, draws.shape), atol=1e-12)


def test_cholesky_identity_training():
    perms, cm, cv = build_cholesky_prior([np.eye(3)] * 4, P=2)
    rows, cols = np.tril_indices(3)
    np.testing.assert_allclose(cm[0], (rows == cols).astype(float))
    np.testing.assert_allclose(cv, 0)
    assert perms[0].tolist() == [0, 1, 2]


def test_cholesky_two_by_two_closed_form():
    Rs = [np.array([[1.0, r], [r, 1.0]]) for r in (0.0, 0.8)]
    _, cm, cv = build_cholesky_prior(Rs, P=1)
    # elements in (0,0), (1,0), (1,1) order; L21 = r, L22 = sqrt(1 - r^2)
    np.testing.assert_allclose(cm[0], [1.0, 0.4, 0.8], atol=1e-12)
    np.testing.assert_allclose(cv[0], [0.0, 0.32, 0.08], atol=1e-12)


def test_cholesky_small_variance_tracks_mean_structure():
    R = random_correlation(4, np.random.default_rng(8))
    _, cm, _ = build_cholesky_prior([R], P=1)
    cv = np.full_like(cm, 1e-6)
    prior = FCPrior(
        emp_mean=R, emp_var=np.zeros((4, 4)), permutations=np.arange(4)[None], chol_mean=cm, chol_var=cv
    )
    draws = sample_fc_prior(prior, 10_000, rng_seed=3, kind="cholesky")
    se = draws.std(axis=0, ddof=1) / 100
    off = ~np.eye(4, dtype=bool)
    assert np.all(np.abs(draws.mean(axis=0) - R)[off] < 2 * se[off] + 1e-6)


@given(st.integers(0, 2**31), st.sampled_from(["iw", "cholesky"]), st.integers(2, 7))
def test_draws_are_correlation_matrices(seed, kind, Q):
    rng = np.random.default_rng(seed)
    tcs = [rng.standard_normal((30, Q)) @ np.linalg.cholesky(random_correlation(Q, rng)).T for _ in range(6)]
    prior = build_fc_prior(tcs, kinds=(kind,), P=4, rng_seed=seed)
    draws = sample_fc_prior(prior, 25, rng_seed=seed)
    assert np.all(np.abs(np.diagonal(draws, axis1=1, axis2=2) - 1) <= 1e-10)
    assert np.linalg.eigvalsh(draws).min() >= -1e-10
    np.testing.assert_allclose(draws, np.swapaxes(draws, 1, 2), atol=1e-15)


def test_iw_binding_entry(rng):
    tcs = [rng.standard_normal((40, 4)) for _ in range(30)]
    prior = build_fc_prior(tcs, kinds=("iw",))
    slack = iw_variance(prior.iw_nu, prior.iw_psi) - prior.emp_var
    off = ~np.eye(4, dtype=bool)
    assert slack[off].min() >= 0
    assert slack[off].min() < 1e-3 * prior.emp_var[off].max()


def test_both_priors_capture_the_mean():
    rng = np.random.default_rng(21)
    base = random_correlation(5, rng, strength=0.7)
    tcs = []
    for _ in range(80):
        E = np.triu(rng.normal(0, 0.08, (5, 5)), 1)
        G = to_correlation(base + E + E.T + 0.2 * np.eye(5))
        tcs.append(rng.standard_normal((300, 5)) @ np.linalg.cholesky(G).T)
    prior = build_fc_prior(tcs, P=10, rng_seed=0)
    for kind in ("iw", "cholesky"):
        draws = sample_fc_prior(prior, 10_000, rng_seed=4, kind=kind)
        assert np.abs(draws.mean(axis=0) - prior.emp_mean).max() < 0.02, kind


def test_sampling_is_seeded(rng):
    tcs = [rng.standard_normal((30, 3)) for _ in range(5)]
    prior = build_fc_prior(tcs)
    for kind in ("iw", "cholesky"):
        a = sample_fc_prior(prior, 10, rng_seed=9, kind=kind)
        b = sample_fc_prior(prior, 10, rng_seed=9, kind=kind)
        assert np.array_equal(a, b)
