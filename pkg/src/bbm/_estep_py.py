"""Pure numpy implementation of the per-location posterior kernel.

Same contract as the compiled ``_estep.estep``; used when the extension is
not built or when ``BBM_PURE_PYTHON=1``.
"""

import numpy as np

from .errors import NumericalError


def free_mask(sigma2):
    with np.errstate(divide="ignore"):
        return (sigma2 > 0) & np.isfinite(1.0 / sigma2)


def estep(G, C, tau2, sigma2, threads=1):
    """Gaussian posterior of every location's network loadings.

    Parameters
    ----------
    G : (Q, Q) expected ``A^T A``
    C : (Q, V) ``E[A]^T (Y - E[A] S0)``; equivalently ``E[A]^T y_v - G s0_v``
    tau2 : (V,) noise variances
    sigma2 : (Q, V) prior variances; zero entries are pinned to the prior mean
    threads : ignored (present for signature parity)

    Returns
    -------
    delta : (Q, V) posterior mean minus prior mean
    Sigma : (V, Q, Q) posterior covariances (zero rows/cols where pinned)
    kl : (V,) KL divergence from posterior to prior
    """
    Q, V = C.shape
    F = free_mask(sigma2).T  # V x Q
    both = F[:, :, None] & F[:, None, :]
    P = np.where(both, G[None, :, :] / tau2[:, None, None], 0.0)
    with np.errstate(divide="ignore"):
        prec = np.where(F, 1.0 / sigma2.T, 1.0)
    idx = np.arange(Q)
    P[:, idx, idx] += prec
    try:
        L = np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        raise NumericalError("posterior precision is not positive definite") from None
    Sigma = np.linalg.inv(P)
    Sigma = (Sigma + np.swapaxes(Sigma, 1, 2)) / 2
    b = np.where(F, C.T / tau2[:, None], 0.0)
    delta = np.einsum("vij,vj->vi", Sigma, b)
    Sigma[~both] = 0.0
    delta[~F] = 0.0

    diagS = Sigma[:, idx, idx]
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_s2 = np.where(F, prec, 0.0)
        log_s2 = np.where(F, np.log(np.where(F, sigma2.T, 1.0)), 0.0)
    logdetP = 2.0 * np.where(F, np.log(L[:, idx, idx]), 0.0).sum(axis=1)
    kl = 0.5 * (
        (diagS * inv_s2).sum(axis=1)
        + (delta**2 * inv_s2).sum(axis=1)
        - F.sum(axis=1)
        + log_s2.sum(axis=1)
        + logdetP
    )
    return np.ascontiguousarray(delta.T), np.ascontiguousarray(Sigma), kl
