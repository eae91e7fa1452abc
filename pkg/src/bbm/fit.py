"""Single-subject model fitting.

Model, per location ``v``::

    y_v = A s_v + e_v,         e_v ~ N(0, tau2_v I)
    s_v ~ N(s0_v, diag(sigma2_v))
    a_t ~ N(0, G),             G ~ FC prior (optional)

Without an FC prior, ``A`` and ``tau2`` are point estimates found by EM
with ``s`` integrated out. With an FC prior, ``A`` also gets a Gaussian
variational posterior and ``G`` is re-estimated every sweep (variational
Bayes). The per-location E-step lives in :mod:`bbm.kernels`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .dualreg import stage1, stage2
from .errors import DimensionMismatch, NumericalError, ValidationError
from .io import BoldMatrix, Template
from .prior_fc import FCPrior, correlation, sample_fc_prior, to_correlation
from .prior_spatial import SpatialPrior

logger = logging.getLogger(__name__)

FC_PRIORS = ("none", "iw", "cholesky")
NOISE_MODELS = ("per_location", "global")


@dataclass(frozen=True)
class FitConfig:
    max_iters: int = 100
    tol: float = 1e-3
    fc_prior: str = "none"
    cholesky_K: int = 1000
    noise_model: str = "per_location"
    rng_seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if not self.tol > 0:
            raise ValidationError("tol must be positive")
        if self.max_iters < 1:
            raise ValidationError("max_iters must be >= 1")
        if self.fc_prior not in FC_PRIORS:
            raise ValidationError(f"fc_prior must be one of {FC_PRIORS}")
        if self.noise_model not in NOISE_MODELS:
            raise ValidationError(f"noise_model must be one of {NOISE_MODELS}")
        if self.cholesky_K < 1:
            raise ValidationError("cholesky_K must be >= 1")


@dataclass
class SubjectFit:
    s_mean: np.ndarray  # Q x V
    s_var: np.ndarray  # Q x V
    A: np.ndarray  # T x Q, unit-variance columns
    G_hat: np.ndarray  # Q x Q
    tau2: np.ndarray  # V
    n_iters: int
    converged: bool
    objective_trace: np.ndarray
    # objective before and after each M-step; used to audit EM monotonicity
    estep_objective: np.ndarray = field(default_factory=lambda: np.empty(0))
    mstep_objective: np.ndarray = field(default_factory=lambda: np.empty(0))
    config: Optional[FitConfig] = None

    @property
    def Q(self) -> int:
        return self.s_mean.shape[0]

    @property
    def V(self) -> int:
        return self.s_mean.shape[1]


def posterior_location(y_v, A, tau2_v, s0_v, sigma2_v):
    """Gaussian posterior ``(mean, cov)`` of one location's loadings with ``A`` fixed."""
    y_v = np.asarray(y_v, dtype=np.float64)
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    if A.shape[0] != y_v.shape[0]:
        A = A.reshape(y_v.shape[0], -1)
    s0_v = np.atleast_1d(np.asarray(s0_v, dtype=np.float64))
    sigma2_v = np.atleast_1d(np.asarray(sigma2_v, dtype=np.float64))
    if not tau2_v > 0:
        raise ValidationError("tau2_v must be positive")
    if np.any(sigma2_v < 0):
        raise ValidationError("sigma2_v must be non-negative")
    G = A.T @ A
    C = (A.T @ y_v - G @ s0_v)[:, None]
    delta, Sigma, _ = kernels.estep(G, C, np.array([float(tau2_v)]), sigma2_v[:, None])
    return s0_v + delta[:, 0], Sigma[0]


def _unit_variance(A):
    sd = A.std(axis=0, ddof=1)
    if np.any(sd == 0):
        raise NumericalError("a network time course collapsed to zero")
    return A / sd, sd


def _expected_sq_resid(yy, Y, Amean, G, mu, Sigma):
    """``E||y_v - A s_v||^2`` for every location (length V)."""
    cross = np.einsum("tv,tq,qv->v", Y, Amean, mu, optimize=True)
    quad = np.einsum("qv,qr,rv->v", mu, G, mu, optimize=True)
    tr = np.einsum("vqr,rq->v", Sigma, G, optimize=True)
    return yy - 2.0 * cross + quad + tr


def _loglik_bound(T, tau2, resid, kl):
    return float(np.sum(-0.5 * T * np.log(2 * np.pi * tau2) - 0.5 * resid / tau2 - kl))


class _Problem:
    """Data and prior arrays shared by the EM and VB loops."""

    def __init__(self, b, prior, cfg):
        self.Y = b.data
        self.T, self.V = self.Y.shape
        self.S0 = prior.mean
        self.sigma2 = prior.var
        self.Q = self.S0.shape[0]
        self.cfg = cfg
        self.yy = np.einsum("tv,tv->v", self.Y, self.Y)
        ref = float(self.yy.mean() / self.T) if self.yy.mean() > 0 else 1.0
        self.tau2_floor = 1e-10 * ref

    def update_tau2(self, resid):
        tau2 = resid / self.T
        if self.cfg.noise_model == "global":
            tau2 = np.full(self.V, tau2.mean())
        return np.maximum(tau2, self.tau2_floor)

    def estep(self, G, Amean, tau2):
        C = Amean.T @ self.Y - G @ self.S0
        delta, Sigma, kl = kernels.estep(G, C, tau2, self.sigma2, self.cfg.threads)
        return self.S0 + delta, Sigma, kl

    def weighted_moments(self, mu, Sigma, tau2):
        """``sum_v E[s_v] y_v^T / tau2_v`` (as T x Q) and ``sum_v E[s_v s_v^T] / tau2_v``."""
        w = 1.0 / tau2
        num = self.Y @ (mu * w).T
        Ess = np.einsum("vqr,v->qr", Sigma, w) + (mu * w) @ mu.T
        return num, (Ess + Ess.T) / 2


def _check_inputs(b, prior, fc, cfg, gsr, scale):
    if not isinstance(b, BoldMatrix):
        raise ValidationError("b must be a BoldMatrix")
    if prior.V != b.V:
        raise DimensionMismatch(f"prior has V={prior.V}, data has V={b.V}")
    if b.T <= prior.Q:
        raise ValidationError(f"need T > Q, got T={b.T}, Q={prior.Q}")
    if gsr is not None and bool(gsr) != bool(prior.gsr):
        raise ValidationError(f"data gsr={gsr} but prior was trained with gsr={prior.gsr}")
    if scale is not None and scale != prior.scale:
        raise ValidationError(f"data scale={scale!r} but prior was trained with {prior.scale!r}")
    if np.any(prior.var < 0):
        raise ValidationError("prior variance has negative entries; clamp it first")
    if cfg.fc_prior != "none":
        if fc is None:
            raise ValidationError(f"fc_prior={cfg.fc_prior!r} requires an FCPrior")
        if fc.Q != prior.Q:
            raise DimensionMismatch(f"FC prior has Q={fc.Q}, spatial prior has Q={prior.Q}")
        if cfg.fc_prior not in fc.kinds:
            raise ValidationError(f"FC prior bundle has no {cfg.fc_prior!r} component")


def fit_subject(
    b: BoldMatrix,
    prior: SpatialPrior,
    fc: Optional[FCPrior] = None,
    cfg: FitConfig = FitConfig(),
    gsr: Optional[bool] = None,
    scale: Optional[str] = None,
) -> SubjectFit:
    """Fit the model to one subject's preprocessed data.

    ``gsr`` and ``scale``, when given, describe how ``b`` was preprocessed
    and must match the settings recorded in ``prior``.
    """
    _check_inputs(b, prior, fc, cfg, gsr, scale)
    prob = _Problem(b, prior, cfg)
    A0 = stage1(b, Template("maps", maps=prior.mean))
    dr = stage2(b, A0)
    tau2 = np.maximum(dr.residual_var, prob.tau2_floor)
    if cfg.noise_model == "global":
        tau2 = np.full(prob.V, tau2.mean())
    if cfg.fc_prior == "none":
        return _fit_em(prob, A0, tau2)
    return _fit_vb(prob, A0, tau2, fc)


def _fit_em(prob: _Problem, A, tau2) -> SubjectFit:
    cfg = prob.cfg
    trace, e_obj, m_obj = [], [], []
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        G = A.T @ A
        mu, Sigma, kl = prob.estep(G, A, tau2)
        resid = _expected_sq_resid(prob.yy, prob.Y, A, G, mu, Sigma)
        e_obj.append(_loglik_bound(prob.T, tau2, resid, kl))
        trace.append(e_obj[-1])

        num, Ess = prob.weighted_moments(mu, Sigma, tau2)
        try:
            A_new = np.linalg.solve(Ess, num.T).T
        except np.linalg.LinAlgError:
            raise NumericalError("singular second-moment matrix in the M-step") from None
        G_new = A_new.T @ A_new
        resid = _expected_sq_resid(prob.yy, prob.Y, A_new, G_new, mu, Sigma)
        tau2 = prob.update_tau2(resid)
        m_obj.append(_loglik_bound(prob.T, tau2, resid, kl))

        A_new, _ = _unit_variance(A_new)
        change = np.linalg.norm(A_new - A) / np.linalg.norm(A)
        A = A_new
        logger.debug("EM iter %d: objective %.6f, change %.3g", it, m_obj[-1], change)
        if change < cfg.tol:
            converged = True
            break

    G = A.T @ A
    mu, Sigma, kl = prob.estep(G, A, tau2)
    return SubjectFit(
        s_mean=mu,
        s_var=np.ascontiguousarray(np.diagonal(Sigma, axis1=1, axis2=2).T),
        A=A,
        G_hat=correlation(A),
        tau2=tau2,
        n_iters=it,
        converged=converged,
        objective_trace=np.asarray(trace),
        estep_objective=np.asarray(e_obj),
        mstep_objective=np.asarray(m_obj),
        config=cfg,
    )


class _GUpdate:
    """Point update of the FC matrix given the expected scatter of ``a_t``."""

    def __init__(self, fc: FCPrior, cfg: FitConfig, T: int):
        self.kind = cfg.fc_prior
        self.T = T
        self.Q = fc.Q
        if self.kind == "iw":
            self.psi, self.nu = fc.iw_psi, fc.iw_nu
            self.initial = to_correlation(fc.iw_mean)
        else:
            self.samples = sample_fc_prior(fc, cfg.cholesky_K, cfg.rng_seed, kind="cholesky")
            sign, logdet = np.linalg.slogdet(self.samples)
            if np.any(sign <= 0):
                # near-singular draws would dominate the likelihood weights
                keep = sign > 0
                self.samples, logdet = self.samples[keep], logdet[keep]
            self.logdet = logdet
            self.inv = np.linalg.inv(self.samples)
            self.initial = to_correlation(self.samples.mean(axis=0))

    def __call__(self, scatter):
        if self.kind == "iw":
            return to_correlation((self.psi + scatter) / (self.nu + self.T + self.Q + 1))
        logw = -0.5 * self.T * self.logdet - 0.5 * np.einsum("kij,ji->k", self.inv, scatter)
        w = np.exp(logw - logw.max())
        return to_correlation(np.einsum("k,kij->ij", w / w.sum(), self.samples))


def _fit_vb(prob: _Problem, A, tau2, fc: FCPrior) -> SubjectFit:
    cfg = prob.cfg
    T, Q = prob.T, prob.Q
    g_update = _GUpdate(fc, cfg, T)
    G_hat = g_update.initial
    M, Vcov = A, np.zeros((Q, Q))
    trace = []
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        EAA = M.T @ M + T * Vcov
        mu, Sigma, kl = prob.estep(EAA, M, tau2)

        _, W = prob.weighted_moments(mu, Sigma, tau2)
        Ginv = np.linalg.inv(G_hat)
        Vcov = np.linalg.inv(Ginv + W)
        Vcov = (Vcov + Vcov.T) / 2
        M_new = prob.Y @ (mu / tau2).T @ Vcov

        # unit-variance convention on E[a_tq^2], carried into the covariance
        scale = np.sqrt((M_new**2).sum(axis=0) / (T - 1) + np.diag(Vcov))
        M_new = M_new / scale
        Vcov = Vcov / np.outer(scale, scale)

        EAA = M_new.T @ M_new + T * Vcov
        resid = _expected_sq_resid(prob.yy, prob.Y, M_new, EAA, mu, Sigma)
        tau2 = prob.update_tau2(resid)
        G_hat = g_update(EAA)
        trace.append(_loglik_bound(T, tau2, resid, kl))

        change = np.linalg.norm(M_new - M) / np.linalg.norm(M)
        M = M_new
        logger.debug("VB iter %d: bound %.6f, change %.3g", it, trace[-1], change)
        if change < cfg.tol:
            converged = True
            break

    EAA = M.T @ M + T * Vcov
    mu, Sigma, kl = prob.estep(EAA, M, tau2)
    A_out, _ = _unit_variance(M - M.mean(axis=0))
    return SubjectFit(
        s_mean=mu,
        s_var=np.ascontiguousarray(np.diagonal(Sigma, axis1=1, axis2=2).T),
        A=A_out,
        G_hat=G_hat,
        tau2=tau2,
        n_iters=it,
        converged=converged,
        objective_trace=np.asarray(trace),
        config=cfg,
    )
