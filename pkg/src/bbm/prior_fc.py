"""Population priors on between-network functional connectivity (FC).

Two priors are built from the training sessions' correlation matrices:

* an inverse-Wishart (IW) whose mean is the empirical mean FC and whose
  single degrees-of-freedom parameter is made as large as possible
  without the prior variance dropping below the empirical variance of
  any off-diagonal element;
* a permuted Cholesky prior: for each of P network orderings, the
  lower-triangular Cholesky factor elements of the training matrices are
  summarized by element-wise mean and variance. Draws pick an ordering at
  random, sample the off-diagonal factor elements independently, set each
  diagonal element so its row has unit norm, and map back to the original
  network order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .errors import CholeskyFailure, ConstantColumn, DimensionMismatch, Infeasible, ValidationError

EIG_FLOOR = 1e-8
NU_SPAN = 1e6
_ROW_CAP = 1.0 - 1e-6


@dataclass(frozen=True)
class FCPrior:
    emp_mean: np.ndarray
    emp_var: np.ndarray
    iw_nu: Optional[float] = None
    iw_psi: Optional[np.ndarray] = None
    permutations: Optional[np.ndarray] = None  # P x Q
    chol_mean: Optional[np.ndarray] = None  # P x Q(Q+1)/2
    chol_var: Optional[np.ndarray] = None  # P x Q(Q+1)/2
    kind: str = "iw"

    @property
    def Q(self) -> int:
        return self.emp_mean.shape[0]

    @property
    def kinds(self) -> tuple:
        out = []
        if self.iw_nu is not None:
            out.append("iw")
        if self.chol_mean is not None:
            out.append("cholesky")
        return tuple(out)

    @property
    def iw_mean(self) -> np.ndarray:
        return self.iw_psi / (self.iw_nu - self.Q - 1)


def repair_spd(R: np.ndarray, floor: float = EIG_FLOOR) -> np.ndarray:
    """Clip eigenvalues below ``floor`` and re-symmetrize."""
    R = (R + R.T) / 2
    w, U = np.linalg.eigh(R)
    if w.min() >= floor:
        return R
    R = (U * np.maximum(w, floor)) @ U.T
    return (R + R.T) / 2


def to_correlation(S: np.ndarray) -> np.ndarray:
    """Rescale a covariance (or a stack of them) to unit diagonal."""
    d = np.sqrt(np.diagonal(S, axis1=-2, axis2=-1))
    R = S / (d[..., :, None] * d[..., None, :])
    R = (R + np.swapaxes(R, -1, -2)) / 2
    idx = np.arange(S.shape[-1])
    R[..., idx, idx] = 1.0
    return R


def correlation(tc: np.ndarray) -> np.ndarray:
    sd = tc.std(axis=0)
    if np.any(sd == 0):
        raise ConstantColumn(f"constant time course(s): {np.flatnonzero(sd == 0).tolist()}")
    R = np.corrcoef(tc, rowvar=False)
    np.fill_diagonal(R, 1.0)
    return R


def empirical_fc(tcs: Sequence[np.ndarray]):
    """Element-wise mean and sample variance of per-session Pearson FC."""
    if len(tcs) < 2:
        raise ValidationError(f"need >= 2 training sessions, got {len(tcs)}")
    Rs = []
    for tc in tcs:
        tc = np.asarray(tc, dtype=np.float64)
        if tc.shape[0] <= tc.shape[1]:
            raise ValidationError(f"need T > Q, got time courses of shape {tc.shape}")
        Rs.append(correlation(tc))
    if len({R.shape for R in Rs}) != 1:
        raise DimensionMismatch("sessions disagree on Q")
    Rs = np.stack(Rs)
    mean = Rs.mean(axis=0)
    np.fill_diagonal(mean, 1.0)
    var = Rs.var(axis=0, ddof=1)
    np.fill_diagonal(var, 0.0)
    return mean, var


def iw_variance(nu: float, psi: np.ndarray) -> np.ndarray:
    """Element-wise variance of an inverse-Wishart(nu, psi) draw (needs nu > Q + 3)."""
    Q = psi.shape[0]
    d = np.diag(psi)
    num = (nu - Q + 1) * psi**2 + (nu - Q - 1) * np.outer(d, d)
    return num / ((nu - Q) * (nu - Q - 1) ** 2 * (nu - Q - 3))


def _iw_slack(nu, mean, emp_var, iu):
    Q = mean.shape[0]
    return np.min(iw_variance(nu, (nu - Q - 1) * mean)[iu] - emp_var[iu])


def fit_iw(emp_mean: np.ndarray, emp_var: np.ndarray, rtol: float = 1e-6):
    """Fit IW parameters ``(nu, psi)`` matching the empirical mean exactly.

    ``nu`` is the largest value in ``(Q+4, Q+4+1e6]`` whose element-wise
    variance still covers ``emp_var`` at every off-diagonal entry; it is
    located by bisection (the IW variance decreases monotonically in nu).
    """
    emp_mean = np.asarray(emp_mean, dtype=np.float64)
    emp_var = np.asarray(emp_var, dtype=np.float64)
    Q = emp_mean.shape[0]
    if Q < 2:
        raise ValidationError("IW prior needs Q >= 2")
    if emp_var.shape != emp_mean.shape:
        raise DimensionMismatch("emp_mean and emp_var must have the same shape")
    mean = repair_spd(emp_mean)
    iu = np.triu_indices(Q, 1)
    lo, hi = Q + 4.0, Q + 4.0 + NU_SPAN
    if _iw_slack(hi, mean, emp_var, iu) >= 0:
        nu = hi
    else:
        if _iw_slack(lo, mean, emp_var, iu) < 0:
            raise Infeasible("empirical FC variance exceeds the IW variance for every nu")
        while hi - lo > rtol * lo:
            mid = 0.5 * (lo + hi)
            if _iw_slack(mid, mean, emp_var, iu) >= 0:
                lo = mid
            else:
                hi = mid
        nu = lo
    return nu, (nu - Q - 1) * mean


def _tril(Q):
    return np.tril_indices(Q)


def build_cholesky_prior(fcs: Sequence[np.ndarray], P: int = 10, rng_seed=0):
    """Element statistics of Cholesky factors under ``P`` network orderings.

    The first ordering is the identity; the rest are drawn from
    ``rng_seed``. Returns ``(permutations, chol_mean, chol_var)``.
    """
    if P < 1:
        raise ValidationError("P must be >= 1")
    fcs = [repair_spd(np.asarray(R, dtype=np.float64)) for R in fcs]
    if not fcs:
        raise ValidationError("need at least one training matrix")
    Q = fcs[0].shape[0]
    if any(R.shape != (Q, Q) for R in fcs):
        raise DimensionMismatch("training matrices differ in size")
    rng = np.random.default_rng(rng_seed)
    perms = np.empty((P, Q), dtype=np.int64)
    perms[0] = np.arange(Q)
    for p in range(1, P):
        perms[p] = rng.permutation(Q)
    stack = np.stack(fcs)
    rows, cols = _tril(Q)
    n_el = rows.size
    chol_mean = np.empty((P, n_el))
    chol_var = np.empty((P, n_el))
    for p, perm in enumerate(perms):
        permuted = stack[:, perm][:, :, perm]
        try:
            L = np.linalg.cholesky(permuted)
        except np.linalg.LinAlgError as exc:
            raise CholeskyFailure(f"Cholesky failed under permutation {p}: {exc}") from None
        el = L[:, rows, cols]
        chol_mean[p] = el.mean(axis=0)
        chol_var[p] = el.var(axis=0, ddof=1) if len(fcs) > 1 else 0.0
    return perms, chol_mean, chol_var


def build_fc_prior(
    tcs: Sequence[np.ndarray], kinds=("iw", "cholesky"), P: int = 10, rng_seed=0
) -> FCPrior:
    """Convenience: empirical statistics plus whichever priors are requested."""
    emp_mean, emp_var = empirical_fc(tcs)
    kw = {}
    if "iw" in kinds:
        kw["iw_nu"], kw["iw_psi"] = fit_iw(emp_mean, emp_var)
    if "cholesky" in kinds:
        fcs = [correlation(np.asarray(tc, dtype=np.float64)) for tc in tcs]
        kw["permutations"], kw["chol_mean"], kw["chol_var"] = build_cholesky_prior(
            fcs, P=P, rng_seed=rng_seed
        )
    return FCPrior(emp_mean=emp_mean, emp_var=emp_var, kind=kinds[0], **kw)


def sample_fc_prior(prior: FCPrior, K: int, rng_seed=0, kind: Optional[str] = None) -> np.ndarray:
    """Draw ``K`` unit-diagonal correlation matrices (K x Q x Q) from the prior."""
    kind = kind or prior.kind
    rng = np.random.default_rng(rng_seed)
    Q = prior.Q
    if kind == "iw":
        if prior.iw_nu is None:
            raise ValidationError("prior has no fitted inverse-Wishart parameters")
        draws = stats.invwishart.rvs(df=prior.iw_nu, scale=prior.iw_psi, size=K, random_state=rng)
        return to_correlation(np.asarray(draws).reshape(K, Q, Q))
    if kind != "cholesky":
        raise ValidationError(f"unknown FC prior kind {kind!r}")
    if prior.chol_mean is None:
        raise ValidationError("prior has no Cholesky statistics")
    rows, cols = _tril(Q)
    P = prior.permutations.shape[0]
    which = rng.integers(P, size=K)
    sd = np.sqrt(np.maximum(prior.chol_var, 0.0))
    el = prior.chol_mean[which] + sd[which] * rng.standard_normal((K, rows.size))
    L = np.zeros((K, Q, Q))
    L[:, rows, cols] = el
    # diagonal completes each row to unit norm; rows that overshoot are shrunk first
    idx = np.arange(Q)
    L[:, idx, idx] = 0.0
    ss = (L**2).sum(axis=2)
    over = ss > _ROW_CAP
    L *= np.where(over, np.sqrt(_ROW_CAP / np.where(over, ss, 1.0)), 1.0)[:, :, None]
    L[:, idx, idx] = np.sqrt(1.0 - np.minimum((L**2).sum(axis=2), _ROW_CAP))
    S = L @ np.swapaxes(L, 1, 2)
    R = to_correlation(S)
    out = np.empty_like(R)
    for k in range(K):
        inv = np.argsort(prior.permutations[which[k]])
        out[k] = R[k][np.ix_(inv, inv)]
    return out
