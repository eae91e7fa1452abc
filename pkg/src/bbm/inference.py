"""Engagement maps from posterior moments.

A location is engaged in network ``q`` at level ``z`` when the posterior
probability that its loading exceeds ``u_q(z) = mean(s0_q) + z * sd(s0_q)``
is high enough (one-sided, optionally Bonferroni corrected over all
``Q * V`` tests). Thresholds grow with ``z``, so the masks are nested.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import norm

from .errors import DimensionMismatch, ValidationError

DEFAULT_ZS = (0.0, 1.0, 2.0, 3.0)


@dataclass(frozen=True)
class EngagementResult:
    zs: np.ndarray  # (nz,)
    masks: np.ndarray  # (nz, Q, V) bool
    thresholds: np.ndarray  # (nz, Q) minimum effect sizes
    alpha: float
    correction: str
    critical_value: float

    def mask(self, z: float) -> np.ndarray:
        i = int(np.flatnonzero(np.isclose(self.zs, z))[0])
        return self.masks[i]

    def counts(self) -> np.ndarray:
        """Number of engaged locations per (z, network)."""
        return self.masks.sum(axis=2)


def effect_size_thresholds(s0: np.ndarray, zs: Sequence[float]) -> np.ndarray:
    mean = s0.mean(axis=1)
    sd = s0.std(axis=1, ddof=1)
    return mean[None, :] + np.asarray(zs, dtype=np.float64)[:, None] * sd[None, :]


def engagement_masks(
    s_mean: np.ndarray,
    s_var: np.ndarray,
    s0: np.ndarray,
    zs: Sequence[float] = DEFAULT_ZS,
    alpha: float = 0.05,
    correction: str = "bonferroni",
) -> EngagementResult:
    """Nested masks of significant engagement, one per effect-size level ``z``.

    ``s_mean``/``s_var`` are posterior moments (Q x V) and ``s0`` the prior
    mean maps that define the effect-size thresholds. Locations with zero
    posterior variance are flagged iff ``s_mean > u``.
    """
    s_mean = np.asarray(s_mean, dtype=np.float64)
    s_var = np.asarray(s_var, dtype=np.float64)
    s0 = np.asarray(s0, dtype=np.float64)
    if not (s_mean.shape == s_var.shape == s0.shape) or s_mean.ndim != 2:
        raise DimensionMismatch("posterior moments and prior mean must all be Q x V")
    zs = np.atleast_1d(np.asarray(zs, dtype=np.float64))
    if np.any(zs < 0) or np.any(np.diff(zs) < 0):
        raise ValidationError("zs must be non-negative and sorted ascending")
    if not 0 < alpha < 1:
        raise ValidationError("alpha must be in (0, 1)")
    if correction not in ("bonferroni", "none"):
        raise ValidationError(f"unknown correction {correction!r}")
    if np.any(s_var < 0):
        raise ValidationError("posterior variances must be non-negative")
    Q, V = s_mean.shape
    level = alpha / (Q * V) if correction == "bonferroni" else alpha
    crit = float(norm.isf(level))
    u = effect_size_thresholds(s0, zs)
    excess = s_mean[None, :, :] - u[:, :, None]
    pinned = s_var == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        stat = excess / np.sqrt(np.where(pinned, 1.0, s_var))[None]
    masks = np.where(pinned[None], excess > 0, stat > crit)
    return EngagementResult(
        zs=zs, masks=masks, thresholds=u, alpha=alpha, correction=correction, critical_value=crit
    )


def engagements(fit, prior, zs=DEFAULT_ZS, alpha=0.05, correction="bonferroni"):
    """Engagement masks for a :class:`~bbm.fit.SubjectFit` under its spatial prior."""
    if fit.s_mean.shape != prior.mean.shape:
        raise DimensionMismatch(f"fit is {fit.s_mean.shape}, prior is {prior.mean.shape}")
    return engagement_masks(fit.s_mean, fit.s_var, prior.mean, zs, alpha, correction)
