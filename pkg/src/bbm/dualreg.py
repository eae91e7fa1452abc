"""Dual regression, including the parcel-median first stage."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConstantColumn, DimensionMismatch, InsufficientTimepoints, RankDeficient
from .io import BoldMatrix, Template
from .preprocess import standardize_columns


@dataclass(frozen=True)
class DualRegResult:
    timecourses: np.ndarray  # T x Q, unit-variance columns
    maps: np.ndarray  # Q x V
    residual_var: np.ndarray  # V

    @property
    def Q(self) -> int:
        return self.maps.shape[0]


def _full_rank(x: np.ndarray) -> bool:
    return np.linalg.matrix_rank(x) == min(x.shape)


def stage1(b: BoldMatrix, t: Template) -> np.ndarray:
    """Network time courses (T x Q) from a template.

    Continuous maps: per-time-point least squares of the data on the
    template maps. Parcellations: per-time-point median within each parcel.
    Either way the columns are then centered and scaled to unit variance.
    """
    if t.V != b.V:
        raise DimensionMismatch(f"template has V={t.V}, data has V={b.V}")
    Y = b.data
    if t.kind == "maps":
        if t.Q >= t.V or not _full_rank(t.maps):
            raise RankDeficient(f"template maps are rank deficient (Q={t.Q})")
        tc = np.linalg.lstsq(t.maps.T, Y.T, rcond=None)[0].T
    else:
        tc = np.empty((b.T, t.Q))
        for q in range(t.Q):
            tc[:, q] = np.median(Y[:, t.labels == q + 1], axis=1)
    try:
        return standardize_columns(tc)
    except ConstantColumn as exc:
        raise RankDeficient(f"stage-1 time course is constant: {exc}") from None


def stage2(b: BoldMatrix, tc: np.ndarray) -> DualRegResult:
    """Per-location least squares of the data on the network time courses."""
    tc = np.asarray(tc, dtype=np.float64)
    T, Q = tc.shape
    if T != b.T:
        raise DimensionMismatch(f"time courses have T={T}, data has T={b.T}")
    if T <= Q:
        raise InsufficientTimepoints(f"need T > Q for stage 2, got T={T}, Q={Q}")
    if not _full_rank(tc):
        raise RankDeficient("network time courses are collinear")
    maps, rss, _, _ = np.linalg.lstsq(tc, b.data, rcond=None)
    if rss.size == 0:  # lstsq omits residuals in some degenerate cases
        rss = ((b.data - tc @ maps) ** 2).sum(axis=0)
    return DualRegResult(timecourses=tc, maps=maps, residual_var=rss / (T - Q))


def dual_regression(b: BoldMatrix, t: Template) -> DualRegResult:
    return stage2(b, stage1(b, t))
