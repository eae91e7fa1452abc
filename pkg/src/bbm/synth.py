"""Synthetic populations drawn from the generative model.

Every random draw comes from a stream keyed by ``(seed, subject, session,
role)``, so any subject can be regenerated on its own and results do not
depend on the order in which subjects are simulated.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .errors import ValidationError
from .io import BoldMatrix, Template
from .preprocess import standardize_columns
from .prior_fc import to_correlation
from .prior_spatial import SpatialPrior

logger = logging.getLogger(__name__)

# stream roles
_MAPS, _FC, _TIME, _NOISE, _POP = 0, 1, 2, 3, 4


def stream(seed: int, subject: int = 0, session: int = 0, role: int = 0) -> np.random.Generator:
    """Independent generator for one (subject, session, role) cell.

    Subject 0 / session 0 are reserved for population-level draws.
    """
    return np.random.default_rng([int(seed), int(subject), int(session), int(role)])


@dataclass(frozen=True)
class SynthConfig:
    Q: int = 6
    V: int = 2000
    T: int = 600
    n_subjects: int = 20
    noise_sd: float = 1.0
    engagement_geometry: str = "blocks"
    fc_base: Optional[np.ndarray] = None
    fc_perturbation: Union[float, np.ndarray] = 0.1
    var_scale: float = 0.1  # prior variance per unit of |s0|
    var_floor: float = 0.005
    tr_seconds: float = 2.0
    rng_seed: int = 0

    def __post_init__(self):
        if not (self.Q < min(self.T, self.V)):
            raise ValidationError(f"need Q < min(T, V), got Q={self.Q}, T={self.T}, V={self.V}")
        if self.noise_sd < 0:
            raise ValidationError("noise_sd must be >= 0")
        if self.engagement_geometry not in ("blocks", "gaussian_bumps"):
            raise ValidationError(f"unknown geometry {self.engagement_geometry!r}")
        if self.n_subjects < 1:
            raise ValidationError("n_subjects must be >= 1")


@dataclass
class SynthPopulation:
    config: SynthConfig
    prior: SpatialPrior  # true population mean and between-subject variance
    fc_base: np.ndarray
    maps: np.ndarray  # n x Q x V, subject-specific true maps
    fcs: np.ndarray  # n x Q x Q, subject-specific true FC
    timecourses: list = field(default_factory=list)  # per subject: (A1, A2)
    sessions: list = field(default_factory=list)  # per subject: (BoldMatrix, BoldMatrix)

    def template(self, kind: str = "maps") -> Template:
        s0 = self.prior.mean
        if kind == "maps":
            return Template("maps", maps=s0, name="synthetic")
        labels = np.argmax(s0, axis=0) + 1
        labels[s0.max(axis=0) < 0.5 * s0.max()] = 0
        return Template("parcellation", labels=labels, name="synthetic")


def engagement_maps(Q: int, V: int, geometry: str = "blocks", rng=None) -> np.ndarray:
    """Population mean maps with engaged regions near 1 and background near 0."""
    x = np.arange(V)
    s0 = np.zeros((Q, V))
    width = V / Q
    if geometry == "blocks":
        for q in range(Q):
            lo = int(round((q - 0.15) * width))
            hi = int(round((q + 1.15) * width))
            s0[q, max(lo, 0) : min(hi, V)] = 1.0
            # weaker secondary region shared with the next network
            c = int(((q + 1) % Q + 0.5) * width)
            s0[q, max(c - int(width / 8), 0) : c + int(width / 8)] += 0.4
    else:
        rng = rng or np.random.default_rng(0)
        for q in range(Q):
            centers = [(q + 0.5) * width, rng.uniform(0, V)]
            for c, amp in zip(centers, (1.0, 0.5)):
                s0[q] += amp * np.exp(-0.5 * ((x - c) / (width / 4)) ** 2)
    return s0


def random_correlation(Q: int, rng, strength: float = 1.0) -> np.ndarray:
    W = rng.standard_normal((Q, max(Q // 2, 1))) * strength
    return to_correlation(W @ W.T + np.eye(Q))


def nearest_correlation(R: np.ndarray, floor: float = 1e-3, iters: int = 50) -> np.ndarray:
    """Approximate nearest correlation matrix by alternating eigen-clipping and rescaling."""
    R = (R + R.T) / 2
    repaired = False
    for _ in range(iters):
        w, U = np.linalg.eigh(R)
        if w.min() >= floor * 0.999 and np.allclose(np.diag(R), 1.0):
            break
        repaired = True
        R = to_correlation((U * np.maximum(w, floor)) @ U.T)
    if repaired:
        logger.info("perturbed FC matrix repaired by eigenvalue clipping")
    return R


def noise_sd_for_snr(s0: np.ndarray, G: np.ndarray, snr: float) -> float:
    """Noise SD giving ``mean_v(var(a_t^T s_v)) / noise_var == snr``."""
    signal = np.einsum("qv,qr,rv->v", s0, G, s0).mean()
    return float(np.sqrt(signal / snr))


def simulate_subject(cfg: SynthConfig, s0, sigma2, fc_base, subject: int):
    """True map, true FC, and two sessions (time courses and data) for one subject."""
    Q, V, T = cfg.Q, cfg.V, cfg.T
    rng = stream(cfg.rng_seed, subject, 0, _MAPS)
    S = s0 + np.sqrt(sigma2) * rng.standard_normal((Q, V))
    rng = stream(cfg.rng_seed, subject, 0, _FC)
    pert = np.asarray(cfg.fc_perturbation, dtype=np.float64)
    E = np.triu(rng.standard_normal((Q, Q)), 1)
    E = (E + E.T) * pert
    G = nearest_correlation(fc_base + E) if np.any(pert != 0) else fc_base.copy()
    chol = np.linalg.cholesky(G)
    tcs, bolds = [], []
    for ses in (1, 2):
        Z = stream(cfg.rng_seed, subject, ses, _TIME).standard_normal((T, Q))
        A = standardize_columns(Z @ chol.T)
        noise = stream(cfg.rng_seed, subject, ses, _NOISE).standard_normal((T, V))
        Y = A @ S + cfg.noise_sd * noise
        tcs.append(A)
        bolds.append(
            BoldMatrix(
                data=Y,
                tr_seconds=cfg.tr_seconds,
                subject_id=f"sub-{subject:03d}",
                session_id=f"ses-{ses}",
            )
        )
    return S, G, tuple(tcs), tuple(bolds)


def simulate_population(cfg: SynthConfig) -> SynthPopulation:
    """Population prior plus ``n_subjects`` subjects with two sessions each."""
    pop = stream(cfg.rng_seed, 0, 0, _POP)
    s0 = engagement_maps(cfg.Q, cfg.V, cfg.engagement_geometry, rng=pop)
    sigma2 = cfg.var_scale * np.abs(s0) + cfg.var_floor
    if cfg.fc_base is None:
        fc_base = random_correlation(cfg.Q, pop)
    else:
        fc_base = np.asarray(cfg.fc_base, dtype=np.float64)
        if fc_base.shape != (cfg.Q, cfg.Q):
            raise ValidationError(f"fc_base must be {cfg.Q} x {cfg.Q}")
    maps, fcs, tcs, sessions = [], [], [], []
    for i in range(1, cfg.n_subjects + 1):
        S, G, tc, bold = simulate_subject(cfg, s0, sigma2, fc_base, i)
        maps.append(S)
        fcs.append(G)
        tcs.append(tc)
        sessions.append(bold)
    prior = SpatialPrior(
        mean=s0, var=sigma2, n_subjects=cfg.n_subjects, template_name="synthetic", scale="none"
    )
    return SynthPopulation(
        config=cfg,
        prior=prior,
        fc_base=fc_base,
        maps=np.stack(maps),
        fcs=np.stack(fcs),
        timecourses=tcs,
        sessions=sessions,
    )
