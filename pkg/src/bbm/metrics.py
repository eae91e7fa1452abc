"""Overlap and reliability metrics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConstantColumn, DimensionMismatch
from .io import Template


@dataclass(frozen=True)
class OverlapMatrix:
    dice: np.ndarray  # Q x Q (or Q1 x Q2 for cross overlap)
    threshold_z: Optional[float]
    source: str


def threshold_zmap(maps: np.ndarray, z: float) -> np.ndarray:
    """Standardize each map over locations and flag ``|zscore| >= z``."""
    maps = np.atleast_2d(np.asarray(maps, dtype=np.float64))
    sd = maps.std(axis=1, ddof=1, keepdims=True)
    if np.any(sd == 0):
        raise ConstantColumn(f"constant maps: {np.flatnonzero(sd.ravel() == 0).tolist()}")
    zs = (maps - maps.mean(axis=1, keepdims=True)) / sd
    return np.abs(zs) >= z


def dice(a, b) -> float:
    """Dice coefficient of two boolean masks; 0 when both are empty."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise DimensionMismatch(f"mask shapes differ: {a.shape} vs {b.shape}")
    denom = int(a.sum()) + int(b.sum())
    return 0.0 if denom == 0 else 2.0 * int(np.logical_and(a, b).sum()) / denom


def dice_matrix(masks_a: np.ndarray, masks_b: Optional[np.ndarray] = None) -> np.ndarray:
    masks_a = np.asarray(masks_a, dtype=bool)
    masks_b = masks_a if masks_b is None else np.asarray(masks_b, dtype=bool)
    if masks_a.shape[1] != masks_b.shape[1]:
        raise DimensionMismatch("mask sets cover different numbers of locations")
    inter = masks_a.astype(np.int64) @ masks_b.T.astype(np.int64)
    sizes = masks_a.sum(axis=1)[:, None] + masks_b.sum(axis=1)[None, :]
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(sizes > 0, 2.0 * inter / np.maximum(sizes, 1), 0.0)
    return out


def network_masks(source, z: float = 2.0) -> np.ndarray:
    """Boolean Q x V masks: labels for parcellations, z-thresholding for maps."""
    if isinstance(source, Template):
        if source.kind == "parcellation":
            return source.masks()
        source = source.maps
    return threshold_zmap(source, z)


def overlap_matrix(source, z: float = 2.0, other=None, kind: str = "template") -> OverlapMatrix:
    """Pairwise Dice between networks (or between two sets of networks)."""
    a = network_masks(source, z)
    b = None if other is None else network_masks(other, z)
    is_parc = isinstance(source, Template) and source.kind == "parcellation"
    return OverlapMatrix(dice=dice_matrix(a, b), threshold_z=None if is_parc else z, source=kind)


def reliability(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-network Pearson correlation over locations between two estimates."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if x.shape != y.shape:
        raise DimensionMismatch(f"shapes differ: {x.shape} vs {y.shape}")
    xc = x - x.mean(axis=1, keepdims=True)
    yc = y - y.mean(axis=1, keepdims=True)
    nx = np.sqrt((xc**2).sum(axis=1))
    ny = np.sqrt((yc**2).sum(axis=1))
    if np.any(nx == 0) or np.any(ny == 0):
        raise ConstantColumn("reliability is undefined for constant rows")
    return (xc * yc).sum(axis=1) / (nx * ny)
