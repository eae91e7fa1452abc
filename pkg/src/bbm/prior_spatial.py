"""Spatial topography prior from test-retest dual regression maps.

Each (network, location) cell is treated as a one-way random effects
problem ``x_ij = z_i + e_ij`` with two sessions per subject; the between
subject variance of ``z_i`` is the prior variance.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .dualreg import DualRegResult
from .errors import DimensionMismatch, ValidationError


@dataclass(frozen=True)
class SpatialPrior:
    mean: np.ndarray  # Q x V
    var: np.ndarray  # Q x V, between-subject variance (see clamp_and_inflate)
    n_subjects: int = 0
    template_name: str = ""
    gsr: bool = False
    scale: str = "global"
    noise_var: Optional[np.ndarray] = None  # Q x V, within-subject (session) noise

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        var = np.asarray(self.var, dtype=np.float64)
        if mean.ndim != 2 or mean.shape != var.shape:
            raise DimensionMismatch(f"mean {mean.shape} and var {var.shape} must match (Q x V)")
        if not np.all(np.isfinite(mean)):
            raise ValidationError("prior mean must be finite")
        if not np.all(np.isfinite(var)):
            raise ValidationError("prior variance must be finite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "var", var)

    @property
    def Q(self) -> int:
        return self.mean.shape[0]

    @property
    def V(self) -> int:
        return self.mean.shape[1]


def variance_decomposition(x: np.ndarray):
    """Method-of-moments decomposition for two sessions per subject.

    Parameters
    ----------
    x : ndarray, shape (n, 2, ...)
        Session estimates for n subjects.

    Returns
    -------
    mean, between_var, noise_var : ndarrays of shape ``x.shape[2:]``
        ``between_var`` is *not* clamped, so it is unbiased but may be
        negative.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 2 or x.shape[1] != 2:
        raise DimensionMismatch(f"expected shape (n, 2, ...), got {x.shape}")
    n = x.shape[0]
    if n < 2:
        raise ValidationError(f"need at least 2 subjects, got {n}")
    mean = x.mean(axis=(0, 1))
    noise_var = ((x[:, 0] - x[:, 1]) ** 2).mean(axis=0) / 2
    subject_means = x.mean(axis=1)
    between = subject_means.var(axis=0, ddof=1) - noise_var / 2
    return mean, between, noise_var


def estimate_spatial_prior(
    sessions: Sequence[tuple[DualRegResult, DualRegResult]],
    template_name: str = "",
    gsr: bool = False,
    scale: str = "global",
) -> SpatialPrior:
    """Estimate the prior mean and between-subject variance of every map cell.

    ``sessions`` holds one ``(session1, session2)`` pair of dual regression
    results per training subject. Negative variance estimates are clamped
    to zero.
    """
    if len(sessions) < 2:
        raise ValidationError(f"need >= 2 subjects, got {len(sessions)}")
    maps = []
    for i, pair in enumerate(sessions):
        if len(pair) != 2:
            raise ValidationError(f"subject {i} has {len(pair)} sessions, need exactly 2")
        maps.append([_as_map(s) for s in pair])
    shapes = {m.shape for pair in maps for m in pair}
    if len(shapes) != 1:
        raise DimensionMismatch(f"inconsistent map shapes across sessions: {sorted(shapes)}")
    mean, between, noise = variance_decomposition(np.stack([np.stack(p) for p in maps]))
    return SpatialPrior(
        mean=mean,
        var=np.maximum(between, 0.0),
        n_subjects=len(sessions),
        template_name=template_name,
        gsr=gsr,
        scale=scale,
        noise_var=noise,
    )


def _as_map(s) -> np.ndarray:
    return s.maps if isinstance(s, DualRegResult) else np.asarray(s, dtype=np.float64)


def clamp_and_inflate(p: SpatialPrior, var_floor: float = 0.0) -> SpatialPrior:
    """Raise every prior variance to at least ``var_floor``."""
    if not np.isfinite(var_floor) or var_floor < 0:
        raise ValidationError("var_floor must be finite and >= 0")
    return replace(p, var=np.maximum(p.var, var_floor))
