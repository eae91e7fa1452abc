"""Command-line interface.

Subcommands: ``simulate``, ``estimate-prior``, ``fit``, ``engagements``,
``overlap``. Every command writes its outputs under ``--out`` together with
a ``run_manifest.json`` describing the run. Exit codes: 0 success, 2 invalid or
unreadable input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
import time
from collections import OrderedDict
from pathlib import Path

import numpy as np
import scipy

from . import __version__, kernels
from .bundles import (
    dump_json,
    load_fit_bundle,
    load_prior_bundle,
    save_engagements,
    save_fit_bundle,
    save_prior_bundle,
)
from .errors import BBMError, DimensionMismatch, NumericalError, ValidationError
from .fit import FitConfig, fit_subject
from .inference import DEFAULT_ZS, engagements
from .io import (
    load_bold,
    load_motion,
    load_template,
    read_sidecar,
    save_bold,
    save_template,
    write_csv_matrix,
    write_matrix,
)
from .metrics import overlap_matrix
from .pipeline import PrepConfig, estimate_prior, prepare_session, screen_subjects
from .synth import SynthConfig, noise_sd_for_snr, simulate_population

logger = logging.getLogger("bbm")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3
MANIFEST = "run_manifest.json"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def dataset_hash(out: Path) -> str:
    """Hash of every file under ``out`` except the run manifest."""
    h = hashlib.sha256()
    for f in sorted(p for p in out.rglob("*") if p.is_file() and p.name != MANIFEST):
        h.update(str(f.relative_to(out)).encode())
        h.update(sha256_file(f).encode())
    return h.hexdigest()


def write_manifest(out: Path, args, inputs, started: float, seed=None) -> None:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "out")}
    cfg_json = json.dumps(cfg, sort_keys=True, default=str)
    dump_json(
        out / MANIFEST,
        {
            "command": args.command,
            "config": json.loads(cfg_json),
            "config_hash": hashlib.sha256(cfg_json.encode()).hexdigest(),
            "inputs": {str(p): sha256_file(p) for p in inputs if Path(p).is_file()},
            "seed": seed,
            "versions": {
                "bbm": __version__,
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "python": platform.python_version(),
                "kernel_backend": kernels.BACKEND,
            },
            "outputs_hash": dataset_hash(out),
            "wall_time_s": round(time.time() - started, 3),
        },
    )


def _prep_config(args) -> PrepConfig:
    return PrepConfig(
        gsr=bool(args.gsr),
        scale=args.scale,
        fd_threshold=args.fd_threshold,
        drop_initial=args.drop_initial,
        min_duration_s=args.min_duration_s,
        fd_lag=args.fd_lag,
    )


def _load_session(path):
    """BOLD matrix plus motion parameters named in its sidecar (if any)."""
    b = load_bold(path)
    meta = read_sidecar(path)
    motion = None
    if meta.get("motion"):
        mpath = Path(path).parent / meta["motion"]
        motion = load_motion(mpath)
    return b, motion


# -- commands -------------------------------------------------------------------


def cmd_simulate(args) -> list:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = SynthConfig(
        Q=args.Q,
        V=args.V,
        T=args.T,
        n_subjects=args.n_subjects,
        noise_sd=args.noise_sd if args.noise_sd is not None else 1.0,
        engagement_geometry=args.geometry,
        fc_perturbation=args.fc_perturbation,
        tr_seconds=args.tr,
        rng_seed=args.seed,
    )
    if args.noise_sd is None:
        pilot = simulate_population(SynthConfig(**{**vars(cfg), "n_subjects": 1}))
        cfg = SynthConfig(
            **{**vars(cfg), "noise_sd": noise_sd_for_snr(pilot.prior.mean, pilot.fc_base, args.snr)}
        )
    pop = simulate_population(cfg)
    save_template(out / "template.bbm", pop.template("maps"))
    save_template(out / "template_parcellation.csv", pop.template("parcellation"))
    truth = out / "truth"
    truth.mkdir(exist_ok=True)
    write_matrix(truth / "prior_mean.bbm", pop.prior.mean)
    write_matrix(truth / "prior_var.bbm", pop.prior.var)
    write_matrix(truth / "fc_base.bbm", pop.fc_base)
    for i, (bolds, S, G) in enumerate(zip(pop.sessions, pop.maps, pop.fcs), start=1):
        write_matrix(truth / f"sub-{i:03d}_maps.bbm", S)
        write_matrix(truth / f"sub-{i:03d}_fc.bbm", G)
        for b in bolds:
            save_bold(out / f"{b.subject_id}_{b.session_id}.bbm", b)
    dump_json(out / "simulation.json", {k: v for k, v in vars(cfg).items() if k != "fc_base"})
    print(dataset_hash(out))
    return []


def cmd_estimate_prior(args) -> list:
    if args.template_kind is None:
        args.template_kind = "parcellation" if args.template.endswith(".csv") else "maps"
    template = load_template(args.template, kind=args.template_kind)
    raw = OrderedDict()
    for path in args.bold:
        try:
            b, motion = _load_session(path)
        except BBMError as exc:
            exc.args = (f"{path}: {exc}",)
            raise
        if b.V != template.V:
            raise DimensionMismatch(f"{path}: V={b.V} but template has V={template.V}")
        raw.setdefault(b.subject_id, []).append((b, motion))
    if len(raw) < 2:
        raise ValidationError(f"need ≥ 2 subjects, got {len(raw)}")
    kept, excluded = screen_subjects(raw, _prep_config(args))
    if len(kept) < 2:
        raise ValidationError(
            f"need ≥ 2 subjects after screening, got {len(kept)} (excluded: {excluded})"
        )
    kinds = ("iw", "cholesky") if args.fc_prior == "both" else (args.fc_prior,)
    spatial, fc = estimate_prior(
        kept,
        template,
        gsr=bool(args.gsr),
        scale=args.scale,
        split_sessions=args.split_sessions,
        fc_kinds=kinds,
        permutations=args.permutations,
        rng_seed=args.seed,
    )
    save_prior_bundle(
        args.out,
        spatial,
        fc,
        extra={
            "network_names": list(template.network_names),
            "template_kind": template.kind,
            "excluded_subjects": excluded,
            "subjects": list(kept),
            "split_sessions": bool(args.split_sessions),
        },
    )
    return [args.template, *args.bold]


def cmd_fit(args) -> list:
    spatial, fc, manifest = load_prior_bundle(args.prior)
    if args.gsr is not None and bool(args.gsr) != spatial.gsr:
        raise ValidationError(f"--gsr={args.gsr} but the prior was trained with gsr={spatial.gsr}")
    if args.scale is not None and args.scale != spatial.scale:
        raise ValidationError(
            f"--scale={args.scale} but the prior was trained with scale={spatial.scale}"
        )
    if args.template:
        t = load_template(args.template)
        if t.Q != spatial.Q or t.V != spatial.V:
            raise DimensionMismatch(
                f"template is Q={t.Q}, V={t.V}; prior is Q={spatial.Q}, V={spatial.V}"
            )
    args.gsr, args.scale = spatial.gsr, spatial.scale
    b, motion = _load_session(args.bold)
    if b.V != spatial.V:
        raise DimensionMismatch(f"{args.bold}: V={b.V} but the prior has V={spatial.V}")
    b = prepare_session(b, motion, _prep_config(args))
    cfg = FitConfig(
        max_iters=args.max_iters,
        tol=args.tol,
        fc_prior=args.fc_prior,
        cholesky_K=args.cholesky_k,
        noise_model=args.noise_model,
        rng_seed=args.seed,
        threads=args.threads,
    )
    result = fit_subject(b, spatial, fc, cfg, gsr=spatial.gsr, scale=spatial.scale)
    save_fit_bundle(args.out, result, extra={"subject_id": b.subject_id, "T": b.T})
    if not result.converged:
        logger.warning("fit did not converge in %d iterations", result.n_iters)
    return [args.bold, *sorted(str(p) for p in Path(args.prior).glob("*"))]


def cmd_engagements(args) -> list:
    spatial, _, manifest = load_prior_bundle(args.prior)
    fit = load_fit_bundle(args.fit)
    zs = sorted(args.z) if args.z else list(DEFAULT_ZS)
    res = engagements(fit, spatial, zs=zs, alpha=args.alpha, correction=args.correction)
    save_engagements(args.out, res, manifest.get("network_names"))
    return sorted(str(p) for d in (args.prior, args.fit) for p in Path(d).glob("*"))


def cmd_overlap(args) -> list:
    src = load_template(args.maps, kind=args.kind)
    other = load_template(args.other, kind=args.other_kind) if args.other else None
    ov = overlap_matrix(src, z=args.z, other=other, kind=args.source)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    names = list(other.network_names if other is not None else src.network_names)
    write_csv_matrix(out / "dice.csv", ov.dice, header=names)
    return [args.maps] + ([args.other] if args.other else [])


# -- argument parsing -----------------------------------------------------------


def _add_prep_flags(p, with_norm=True):
    if with_norm:
        p.add_argument("--gsr", action=argparse.BooleanOptionalAction, default=False)
        p.add_argument("--scale", choices=("global", "local", "none"), default="global")
    p.add_argument("--fd-threshold", type=float, default=0.5, help="FD censoring threshold (mm)")
    p.add_argument("--fd-lag", type=int, default=1)
    p.add_argument("--drop-initial", type=int, default=15)
    p.add_argument("--min-duration-s", type=float, default=600.0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bbm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a synthetic training set")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--Q", type=int, default=6)
    p.add_argument("--V", type=int, default=2000)
    p.add_argument("--T", type=int, default=600)
    p.add_argument("--n-subjects", type=int, default=10)
    p.add_argument("--noise-sd", type=float, default=None)
    p.add_argument("--snr", type=float, default=0.5, help="used when --noise-sd is not given")
    p.add_argument("--geometry", choices=("blocks", "gaussian_bumps"), default="blocks")
    p.add_argument("--fc-perturbation", type=float, default=0.1)
    p.add_argument("--tr", type=float, default=2.0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate-prior", help="estimate spatial and FC priors")
    p.add_argument("--out", required=True)
    p.add_argument("--template", required=True)
    p.add_argument("--template-kind", choices=("parcellation", "maps"), default=None)
    p.add_argument("--bold", nargs="+", required=True, help="session files (sidecars give subject ids)")
    p.add_argument("--split-sessions", action="store_true")
    p.add_argument("--fc-prior", choices=("iw", "cholesky", "both"), default="both")
    p.add_argument("--permutations", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    _add_prep_flags(p)
    p.set_defaults(func=cmd_estimate_prior)

    p = sub.add_parser("fit", help="fit one subject")
    p.add_argument("--out", required=True)
    p.add_argument("--prior", required=True)
    p.add_argument("--bold", required=True)
    p.add_argument("--template", default=None, help="optional; checked against the prior")
    p.add_argument("--fc-prior", choices=("none", "iw", "cholesky"), default="none")
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--cholesky-k", type=int, default=1000)
    p.add_argument("--noise-model", choices=("per_location", "global"), default="per_location")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--gsr", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--scale", choices=("global", "local", "none"), default=None)
    _add_prep_flags(p, with_norm=False)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("engagements", help="significant engagement masks")
    p.add_argument("--out", required=True)
    p.add_argument("--fit", required=True)
    p.add_argument("--prior", required=True)
    p.add_argument("--z", type=float, action="append", help="repeatable; default 0 1 2 3")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--correction", choices=("bonferroni", "none"), default="bonferroni")
    p.set_defaults(func=cmd_engagements)

    p = sub.add_parser("overlap", help="Dice overlap between networks")
    p.add_argument("--out", required=True)
    p.add_argument("--maps", required=True, help="template or map file")
    p.add_argument("--kind", choices=("parcellation", "maps"), default=None)
    p.add_argument("--other", default=None, help="second map set for cross overlap")
    p.add_argument("--other-kind", choices=("parcellation", "maps"), default=None)
    p.add_argument("--z", type=float, default=2.0)
    p.add_argument("--source", choices=("template", "prior_mean", "subject"), default="template")
    p.set_defaults(func=cmd_overlap)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    started = time.time()
    try:
        inputs = args.func(args)
        write_manifest(Path(args.out), args, inputs, started, seed=getattr(args, "seed", None))
    except ValidationError as exc:
        print(f"bbm {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"bbm {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"bbm {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
