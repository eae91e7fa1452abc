"""Directory bundles for priors, fits, and engagement maps.

Prior bundle::

    manifest.json   template name, Q, V, n_subjects, gsr, scale
    mean.bbm        Q x V prior mean
    var.bbm         Q x V prior variance
    noise_var.bbm   Q x V session noise variance (optional)
    fc.json         FC prior kind(s), IW degrees of freedom, permutations
    fc_*.bbm        FC matrices (emp_mean, emp_var, iw_psi, chol_mean, chol_var)

Fit bundle: ``s_mean.bbm s_var.bbm A.bbm G.bbm tau2.bbm fit.json``.
"""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .errors import FormatError
from .fit import FitConfig, SubjectFit
from .inference import EngagementResult
from .io import read_matrix, write_matrix
from .prior_fc import FCPrior
from .prior_spatial import SpatialPrior

PRIOR_FORMAT = "bbm-prior/1"
FIT_FORMAT = "bbm-fit/1"


def dump_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise FormatError(f"missing bundle file {path}") from None


def save_prior_bundle(out_dir, spatial: SpatialPrior, fc: FCPrior | None = None, extra=None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": PRIOR_FORMAT,
        "template_name": spatial.template_name,
        "Q": spatial.Q,
        "V": spatial.V,
        "n_subjects": spatial.n_subjects,
        "gsr": bool(spatial.gsr),
        "scale": spatial.scale,
    }
    manifest.update(extra or {})
    dump_json(out / "manifest.json", manifest)
    write_matrix(out / "mean.bbm", spatial.mean)
    write_matrix(out / "var.bbm", spatial.var)
    if spatial.noise_var is not None:
        write_matrix(out / "noise_var.bbm", spatial.noise_var)
    if fc is not None:
        meta = {"kind": fc.kind, "kinds": list(fc.kinds), "Q": fc.Q, "iw_nu": fc.iw_nu}
        if fc.permutations is not None:
            meta["permutations"] = fc.permutations.tolist()
        dump_json(out / "fc.json", meta)
        write_matrix(out / "fc_emp_mean.bbm", fc.emp_mean)
        write_matrix(out / "fc_emp_var.bbm", fc.emp_var)
        if fc.iw_psi is not None:
            write_matrix(out / "fc_iw_psi.bbm", fc.iw_psi)
        if fc.chol_mean is not None:
            write_matrix(out / "fc_chol_mean.bbm", fc.chol_mean)
            write_matrix(out / "fc_chol_var.bbm", fc.chol_var)


def load_prior_bundle(path):
    """Return ``(SpatialPrior, FCPrior or None, manifest dict)``."""
    p = Path(path)
    manifest = _load_json(p / "manifest.json")
    noise = read_matrix(p / "noise_var.bbm") if (p / "noise_var.bbm").exists() else None
    spatial = SpatialPrior(
        mean=read_matrix(p / "mean.bbm"),
        var=read_matrix(p / "var.bbm"),
        n_subjects=int(manifest.get("n_subjects", 0)),
        template_name=manifest.get("template_name", ""),
        gsr=bool(manifest.get("gsr", False)),
        scale=manifest.get("scale", "global"),
        noise_var=noise,
    )
    if spatial.Q != manifest.get("Q", spatial.Q) or spatial.V != manifest.get("V", spatial.V):
        raise FormatError(f"{p}: manifest dimensions disagree with mean.bbm")
    fc = None
    if (p / "fc.json").exists():
        meta = _load_json(p / "fc.json")
        kinds = meta.get("kinds", [meta.get("kind")])
        kw = {}
        if "iw" in kinds:
            kw["iw_nu"] = float(meta["iw_nu"])
            kw["iw_psi"] = read_matrix(p / "fc_iw_psi.bbm")
        if "cholesky" in kinds:
            kw["permutations"] = np.asarray(meta["permutations"], dtype=np.int64)
            kw["chol_mean"] = read_matrix(p / "fc_chol_mean.bbm")
            kw["chol_var"] = read_matrix(p / "fc_chol_var.bbm")
        fc = FCPrior(
            emp_mean=read_matrix(p / "fc_emp_mean.bbm"),
            emp_var=read_matrix(p / "fc_emp_var.bbm"),
            kind=meta.get("kind", kinds[0]),
            **kw,
        )
    return spatial, fc, manifest


def save_fit_bundle(out_dir, fit: SubjectFit, extra=None) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_matrix(out / "s_mean.bbm", fit.s_mean)
    write_matrix(out / "s_var.bbm", fit.s_var)
    write_matrix(out / "A.bbm", fit.A)
    write_matrix(out / "G.bbm", fit.G_hat)
    write_matrix(out / "tau2.bbm", fit.tau2)
    meta = {
        "format": FIT_FORMAT,
        "config": asdict(fit.config) if fit.config is not None else None,
        "n_iters": fit.n_iters,
        "converged": fit.converged,
        "objective_trace": [float(x) for x in fit.objective_trace],
    }
    meta.update(extra or {})
    dump_json(out / "fit.json", meta)


def load_fit_bundle(path) -> SubjectFit:
    p = Path(path)
    meta = _load_json(p / "fit.json")
    cfg = meta.get("config")
    return SubjectFit(
        s_mean=read_matrix(p / "s_mean.bbm"),
        s_var=read_matrix(p / "s_var.bbm"),
        A=read_matrix(p / "A.bbm"),
        G_hat=read_matrix(p / "G.bbm"),
        tau2=read_matrix(p / "tau2.bbm").ravel(),
        n_iters=int(meta["n_iters"]),
        converged=bool(meta.get("converged", False)),
        objective_trace=np.asarray(meta.get("objective_trace", []), dtype=np.float64),
        config=FitConfig(**cfg) if cfg else None,
    )


def _z_label(z: float) -> str:
    return f"{z:g}".replace("-", "m").replace(".", "p")


def save_engagements(out_dir, res: EngagementResult, network_names=None) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    Q = res.masks.shape[1]
    names = list(network_names) if network_names else [f"net{q + 1}" for q in range(Q)]
    report = {
        "alpha": res.alpha,
        "correction": res.correction,
        "critical_value": res.critical_value,
        "levels": [],
    }
    counts = res.counts()
    for i, z in enumerate(res.zs):
        fname = f"mask_z{_z_label(float(z))}.bbm"
        write_matrix(out / fname, res.masks[i].astype(np.float64))
        report["levels"].append(
            {
                "z": float(z),
                "file": fname,
                "networks": [
                    {"name": names[q], "threshold": float(res.thresholds[i, q]), "count": int(counts[i, q])}
                    for q in range(Q)
                ],
            }
        )
    dump_json(out / "engagements.json", report)
