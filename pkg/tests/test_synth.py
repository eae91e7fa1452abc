import dataclasses
import logging

import numpy as np
import pytest

from bbm.dualreg import dual_regression
from bbm.errors import ValidationError
from bbm.prior_fc import correlation, empirical_fc
from bbm.synth import (
    SynthConfig,
    nearest_correlation,
    noise_sd_for_snr,
    random_correlation,
    simulate_population,
)


def test_noiseless_population():
    cfg = SynthConfig(Q=3, V=120, T=80, n_subjects=2, noise_sd=0.0, var_scale=0.0, var_floor=0.0)
    pop = simulate_population(cfg)
    s0 = pop.prior.mean
    for i, (b1, _) in enumerate(pop.sessions):
        A = pop.timecourses[i][0]
        np.testing.assert_array_equal(b1.data, A @ s0)
        dr = dual_regression(b1, pop.template())
        np.testing.assert_allclose(dr.maps, s0, atol=1e-8)


def test_residual_is_the_noise():
    cfg = SynthConfig(Q=3, V=400, T=300, n_subjects=1, noise_sd=1.3, rng_seed=4)
    pop = simulate_population(cfg)
    A, S = pop.timecourses[0][0], pop.maps[0]
    E = pop.sessions[0][0].data - A @ S
    v = E.var(axis=0, ddof=1)
    se = cfg.noise_sd**2 * np.sqrt(2 / (cfg.T - 1))
    assert np.mean(np.abs(v - cfg.noise_sd**2) < 3 * se) > 0.99
    assert abs(v.mean() - cfg.noise_sd**2) < 3 * se / np.sqrt(cfg.V)


def test_zero_perturbation_shares_fc_and_fisher_variance():
    cfg = SynthConfig(Q=4, V=50, T=200, n_subjects=150, fc_perturbation=0.0, rng_seed=5)
    emp = {}
    for T in (200, 800):
        pop = simulate_population(dataclasses.replace(cfg, T=T))
        assert all(np.array_equal(G, pop.fc_base) for G in pop.fcs)
        mean, var = empirical_fc([a for s in pop.timecourses for a in s])
        emp[T] = (mean, var)
    rho = pop.fc_base
    off = ~np.eye(4, dtype=bool)
    for T, (mean, var) in emp.items():
        # delta method on the Fisher transform: Var(r) ~ (1 - rho^2)^2 / (T - 3)
        predicted = (1 - rho**2) ** 2 / (T - 3)
        assert np.mean(var[off] / predicted[off]) == pytest.approx(1.0, abs=0.1)
    assert emp[800][1][off].mean() < emp[200][1][off].mean() / 3


def test_subject_streams_independent_of_population_size():
    cfg = SynthConfig(Q=3, V=60, T=40, n_subjects=5, rng_seed=9)
    big = simulate_population(cfg)
    small = simulate_population(dataclasses.replace(cfg, n_subjects=3))
    np.testing.assert_array_equal(big.maps[2], small.maps[2])
    np.testing.assert_array_equal(big.sessions[2][1].data, small.sessions[2][1].data)


def test_sessions_share_maps_not_timecourses():
    pop = simulate_population(SynthConfig(Q=3, V=60, T=40, n_subjects=1))
    a1, a2 = pop.timecourses[0]
    assert not np.allclose(a1, a2)
    np.testing.assert_allclose(a1.std(axis=0, ddof=1), 1.0)


def test_variance_tracks_engagement():
    pop = simulate_population(SynthConfig(Q=3, V=300, T=40, n_subjects=1))
    s0, var = pop.prior.mean, pop.prior.var
    assert var[s0 >= 1].min() > var[s0 == 0].max()


def test_nearest_correlation_repairs(caplog):
    R = np.array([[1.0, 0.9, -0.9], [0.9, 1.0, 0.9], [-0.9, 0.9, 1.0]])
    with caplog.at_level(logging.INFO, logger="bbm.synth"):
        C = nearest_correlation(R)
    assert "repaired" in caplog.text
    np.testing.assert_allclose(np.diag(C), 1.0)
    assert np.linalg.eigvalsh(C).min() > 0


def test_noise_for_snr():
    rng = np.random.default_rng(0)
    s0 = rng.standard_normal((3, 200))
    G = random_correlation(3, rng)
    sd = noise_sd_for_snr(s0, G, 0.5)
    signal = np.mean([s @ G @ s for s in s0.T])
    assert signal / sd**2 == pytest.approx(0.5)


def test_generated_fc_matches_config():
    pop = simulate_population(SynthConfig(Q=3, V=60, T=2000, n_subjects=2, fc_perturbation=0.05))
    for G, (a, _) in zip(pop.fcs, pop.timecourses):
        assert np.abs(correlation(a) - G).max() < 0.1


def test_config_validation():
    with pytest.raises(ValidationError):
        SynthConfig(Q=10, V=10, T=100)
    with pytest.raises(ValidationError):
        SynthConfig(noise_sd=-1)
