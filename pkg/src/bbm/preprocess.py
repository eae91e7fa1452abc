"""Deterministic preprocessing: motion censoring, normalization, splitting.

The same :func:`preprocess` settings must be used when training priors and
when fitting a subject; prior bundles record them so the fit can check.
"""

from __future__ import annotations

import logging

import numpy as np

from .errors import ConstantColumn, DimensionMismatch, InsufficientDuration, ValidationError
from .io import BoldMatrix, MotionParams, check_finite

logger = logging.getLogger(__name__)

SCALE_MODES = ("global", "local", "none")


def compute_fd(m: MotionParams, head_radius_mm: float = 50.0, lag: int = 1) -> np.ndarray:
    """Framewise displacement with a configurable lag.

    ``FD[t] = sum_k |p[t, k] - p[t - lag, k]|`` where the three rotation
    columns are converted to arc length on a sphere of ``head_radius_mm``.
    The first ``lag`` entries are 0.
    """
    p = m.params
    check_finite(p, "motion parameters")
    if lag < 1 or lag >= p.shape[0]:
        raise ValidationError(f"lag must satisfy 1 <= lag < {p.shape[0]}, got {lag}")
    p = p.copy()
    p[:, 3:] *= head_radius_mm
    fd = np.zeros(p.shape[0])
    fd[lag:] = np.abs(p[lag:] - p[:-lag]).sum(axis=1)
    return fd


def censor(
    b: BoldMatrix,
    fd: np.ndarray,
    threshold_mm: float = 0.5,
    drop_initial: int = 15,
    min_duration_s: float = 600.0,
) -> BoldMatrix:
    """Drop the first ``drop_initial`` volumes and any volume with FD above threshold.

    ``fd`` is indexed by raw volume, so censoring an already-censored
    matrix with the same FD is a no-op.

    Raises
    ------
    InsufficientDuration
        If the retained scan is shorter than ``min_duration_s``.
    """
    fd = np.asarray(fd, dtype=np.float64)
    raw_len = b.kept_mask.shape[0]
    if fd.shape != (raw_len,):
        raise DimensionMismatch(f"FD has length {fd.shape[0]}, raw scan has {raw_len} volumes")
    if not threshold_mm > 0:
        raise ValidationError("threshold_mm must be positive")
    allowed = fd <= threshold_mm
    allowed[: max(int(drop_initial), 0)] = False
    new_mask = b.kept_mask & allowed
    kept = int(new_mask.sum())
    retained = kept * b.tr_seconds
    if retained < min_duration_s or kept < 2:
        raise InsufficientDuration(retained, min_duration_s)
    rows = allowed[b.kept_mask]
    logger.debug("censor: kept %d of %d volumes", kept, raw_len)
    return b.with_data(b.data[rows], kept_mask=new_mask)


def standardize_columns(x: np.ndarray) -> np.ndarray:
    """Center columns and scale them to unit sample variance (ddof=1)."""
    x = x - x.mean(axis=0)
    sd = x.std(axis=0, ddof=1)
    if np.any(sd == 0):
        raise ConstantColumn(f"constant columns: {np.flatnonzero(sd == 0).tolist()}")
    return x / sd


def preprocess(b: BoldMatrix, gsr: bool = False, scale: str = "global") -> BoldMatrix:
    """Optional global signal regression, column centering, then scaling.

    ``scale="global"`` divides the whole matrix by the mean column standard
    deviation; ``"local"`` scales each column to unit standard deviation.
    """
    if scale not in SCALE_MODES:
        raise ValidationError(f"scale must be one of {SCALE_MODES}, got {scale!r}")
    y = b.data - b.data.mean(axis=0)
    if gsr:
        g = y.mean(axis=1)
        gg = g @ g
        if gg > 0:
            y = y - np.outer(g, (g @ y) / gg)
        y = y - y.mean(axis=0)
    if scale != "none":
        sd = y.std(axis=0, ddof=1)
        if scale == "local":
            if np.any(sd == 0):
                raise ConstantColumn(
                    f"zero-variance columns: {np.flatnonzero(sd == 0)[:10].tolist()}"
                )
            y = y / sd
        else:
            s = sd.mean()
            if s == 0:
                raise ConstantColumn("all columns are constant")
            y = y / s
    return b.with_data(y)


def split_pseudo_sessions(b: BoldMatrix) -> tuple[BoldMatrix, BoldMatrix]:
    """Split a scan down the middle into two independently centered halves."""
    if b.T < 4:
        raise ValidationError(f"need T >= 4 to split into pseudo sessions, got {b.T}")
    half = b.T // 2
    raw_idx = np.flatnonzero(b.kept_mask)
    out = []
    for i, rows in enumerate((slice(0, half), slice(half, b.T))):
        mask = np.zeros_like(b.kept_mask)
        mask[raw_idx[rows]] = True
        data = b.data[rows] - b.data[rows].mean(axis=0)
        out.append(
            BoldMatrix(
                data=data,
                tr_seconds=b.tr_seconds,
                kept_mask=mask,
                subject_id=b.subject_id,
                session_id=f"{b.session_id}pseudo{i + 1}",
            )
        )
    return out[0], out[1]
