"""End-to-end prior estimation: screening, dual regression, prior fitting."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .dualreg import dual_regression
from .errors import InsufficientDuration, ValidationError
from .io import BoldMatrix, MotionParams, Template
from .preprocess import censor, compute_fd, preprocess, split_pseudo_sessions
from .prior_fc import FCPrior, build_fc_prior
from .prior_spatial import SpatialPrior, estimate_spatial_prior

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PrepConfig:
    gsr: bool = False
    scale: str = "global"
    fd_threshold: float = 0.5
    drop_initial: int = 15
    min_duration_s: float = 600.0
    fd_lag: int = 1
    head_radius_mm: float = 50.0


def prepare_session(
    b: BoldMatrix, motion: Optional[MotionParams] = None, cfg: PrepConfig = PrepConfig()
) -> BoldMatrix:
    """Censor (drop initial volumes, high-FD volumes, duration check) then normalize.

    Without motion parameters only the initial volumes are dropped.
    """
    if motion is not None:
        if motion.T != b.kept_mask.shape[0]:
            raise ValidationError(
                f"motion has {motion.T} rows but the scan has {b.kept_mask.shape[0]} volumes"
            )
        fd = compute_fd(motion, cfg.head_radius_mm, cfg.fd_lag)
    else:
        fd = np.zeros(b.kept_mask.shape[0])
    b = censor(b, fd, cfg.fd_threshold, cfg.drop_initial, cfg.min_duration_s)
    return preprocess(b, gsr=cfg.gsr, scale=cfg.scale)


def estimate_prior(
    subjects: Mapping[str, Sequence[BoldMatrix]],
    template: Template,
    gsr: bool = False,
    scale: str = "global",
    split_sessions: bool = False,
    fc_kinds: Sequence[str] = ("iw", "cholesky"),
    permutations: int = 10,
    rng_seed: int = 0,
) -> tuple[SpatialPrior, Optional[FCPrior]]:
    """Build spatial and FC priors from already-prepared training sessions.

    ``subjects`` maps a subject id to its sessions: exactly two, or one when
    ``split_sessions`` is set (the scan is then halved into pseudo sessions).
    """
    pairs, tcs = [], []
    for sid, sessions in subjects.items():
        sessions = list(sessions)
        if len(sessions) == 1 and split_sessions:
            sessions = list(split_pseudo_sessions(sessions[0]))
        if len(sessions) != 2:
            raise ValidationError(
                f"subject {sid!r} has {len(sessions)} session(s); need exactly 2 "
                "(or 1 with pseudo-session splitting)"
            )
        drs = [dual_regression(s, template) for s in sessions]
        pairs.append(tuple(drs))
        tcs.extend(d.timecourses for d in drs)
    if len(pairs) < 2:
        raise ValidationError(f"need >= 2 subjects, got {len(pairs)}")
    spatial = estimate_spatial_prior(pairs, template_name=template.name, gsr=gsr, scale=scale)
    fc = None
    if fc_kinds and template.Q >= 2:
        fc = build_fc_prior(tcs, kinds=tuple(fc_kinds), P=permutations, rng_seed=rng_seed)
    return spatial, fc


def screen_subjects(raw: Mapping[str, Sequence[tuple]], cfg: PrepConfig):
    """Prepare every session; drop subjects with any session that is too short.

    ``raw`` maps subject id to ``(BoldMatrix, MotionParams or None)`` pairs.
    Returns ``(kept, excluded)`` where ``excluded`` maps id to a reason.
    """
    kept, excluded = {}, {}
    for sid, sessions in raw.items():
        try:
            kept[sid] = [prepare_session(b, m, cfg) for b, m in sessions]
        except InsufficientDuration as exc:
            excluded[sid] = str(exc)
            logger.warning("excluding subject %s: %s", sid, exc)
    return kept, excluded
