"""Command-line entry point: ``cnlab <subcommand> [flags]``.

Exit codes: 0 success, 1 an asserted check failed, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import load_config
from .errors import (
    CnlabError,
    ConfigurationError,
    ConstructionError,
    ConvergenceError,
    PreconditionError,
    UnsupportedBackendError,
)
from .geometry import MODELS, curvature
from .verifier import (
    FLOOR,
    ModelConfig,
    ResidualReport,
    adjudicate_bochner_koiso,
    adjudicate_commutation,
    convergence_study,
    expand_resolutions,
    pin_record,
    run_identity_suite,
)

log = logging.getLogger("cnlab")

CONFIG_ERRORS = (ConfigurationError, ConstructionError, PreconditionError, UnsupportedBackendError, ValueError)


def _common(parser: argparse.ArgumentParser) -> None:
    g = parser.add_argument_group("model and output")
    g.add_argument("--config", help="TOML file with model, dim, resolution, stencil_order, interior_margin, params.*")
    g.add_argument("--model", choices=MODELS)
    g.add_argument("--dim", type=int)
    g.add_argument("--res", type=int, nargs="+", metavar="N", help="resolution(s); one value on an FD backend expands to N, N+4, N+8")
    g.add_argument("--order", type=int, help="finite-difference stencil order")
    g.add_argument("--tol", type=float, help="absolute residual floor treated as exact")
    g.add_argument("--out", help="output path (stdout when omitted)")
    g.add_argument("--format", choices=("json", "csv"))
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--threads", type=int, default=1)
    g.add_argument("--no-timestamp", action="store_true", help="omit timestamp and timings (byte-reproducible output)")
    g.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cnlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("identities", help="run the identity suite")
    _common(p)
    p.add_argument("--cases", nargs="+", metavar="ID", help="explicit case ids (default: every applicable case)")

    p = sub.add_parser("adjudicate", help="adjudicate an ambiguous statement")
    p.add_argument("target", choices=("commutation", "bochner-koiso"))
    _common(p)
    p.add_argument("--samples", type=int, help="random fields per adjudication")

    p = sub.add_parser("spectrum", help="assemble a torus operator and solve for eigenpairs")
    _common(p)
    p.add_argument("--op", default="lichnerowicz:general")
    p.add_argument("--k", type=int, help="number of eigenpairs (default: all for fourier_block, else 20)")
    p.add_argument("--target", type=float, default=0.0)
    p.add_argument("--backend", choices=("dense", "fourier_block", "iterative"))

    p = sub.add_parser("flow", help="integrate the linearized Ricci flow and fit the decay rate")
    _common(p)
    p.add_argument("--integrator", choices=("exact", "rk4"), default="exact")
    p.add_argument("--init", choices=("eigen", "random", "cn"), default="eigen")
    p.add_argument("--t-final", type=float, default=0.1)
    p.add_argument("--dt", type=float, default=1e-4)
    p.add_argument("--samples", type=int, default=21, help="output times for the exact integrator")

    p = sub.add_parser("convergence", help="grid-refinement study of one identity case")
    _common(p)
    p.add_argument("--case", required=True)

    p = sub.add_parser("report", help="validate and re-render a stored JSON report")
    p.add_argument("path")
    p.add_argument("--out")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    return parser


def _model_config(args) -> ModelConfig:
    cfg = load_config(args.config) if args.config else {}
    model = args.model or cfg.get("model", "flat_torus")
    dim = args.dim if args.dim is not None else cfg.get("dim", 2)
    res = args.res or cfg.get("resolution") or [33 if model == "flat_torus" else 17]
    order = args.order if args.order is not None else cfg.get("stencil_order", 6)
    margin = cfg.get("interior_margin")
    params = dict(cfg.get("params", {}))
    if model not in MODELS:
        raise ConfigurationError(f"unknown model {model!r}")
    if any(b <= a for a, b in zip(res, res[1:])):
        raise ConfigurationError("resolutions must be strictly increasing")
    return ModelConfig(model, int(dim), tuple(res), int(order), margin, params)


def _with_ladder(cfg: ModelConfig) -> ModelConfig:
    return ModelConfig(
        cfg.model, cfg.dim, expand_resolutions(cfg.model, cfg.resolutions, cfg.derivative),
        cfg.stencil_order, cfg.interior_margin, cfg.params, cfg.derivative,
    )


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _format(args) -> str:
    if args.format:
        return args.format
    return "csv" if args.out and args.out.endswith(".csv") else "json"


def _stamp(report: ResidualReport, args) -> ResidualReport:
    if args.no_timestamp:
        report.timestamp = None
        report.timings = None
    elif report.timestamp is None:
        report.timestamp = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    return report


def _cmd_identities(args) -> int:
    cfg = _with_ladder(_model_config(args))
    report = run_identity_suite(
        cfg, args.cases, seed=args.seed, threads=args.threads, floor=args.tol or FLOOR, timestamp=not args.no_timestamp
    )
    _stamp(report, args)
    if _format(args) == "csv":
        _emit(_cases_csv(report.cases), args.out)
    else:
        _emit(report.to_json(), args.out)
    for c in report.cases:
        if c["applicable"]:
            log.info("%s %s slope=%s residuals=%s", c["id"], c["verdict"], c.get("slope"), c.get("residuals"))
    return 0 if report.passed else 1


def _cases_csv(cases) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "kind", "verdict", "slope", "finest_residual", "anchor"])
    for c in cases:
        res = c.get("residuals") or [None]
        w.writerow([c["id"], c["kind"], c["verdict"], c.get("slope"), res[-1], c["anchor"]])
    return buf.getvalue()


def _cmd_adjudicate(args) -> int:
    cfg = _model_config(args)
    t0 = time.perf_counter()
    if args.target == "commutation":
        cfg = _with_ladder(cfg)
        record = adjudicate_commutation(
            cfg, samples=args.samples or 10, seed=args.seed, floor=args.tol or FLOOR, threads=args.threads
        )
        ok = record["verdict"] != "inconclusive"
    else:
        ctx = cfg.build(cfg.resolutions[-1])
        record = adjudicate_bochner_koiso(ctx, samples=args.samples or 20, seed=args.seed)
        ok = True
    report = ResidualReport(
        "adjudicate", cfg.to_dict() | {"seed": args.seed}, pin_record(), [], [record],
        timings={"total": time.perf_counter() - t0},
    )
    _emit(_stamp(report, args).to_json(), args.out)
    return 0 if ok else 1


def _cmd_spectrum(args) -> int:
    from .spectral import assemble, eigensolve, spectral_window

    cfg = _model_config(args)
    ctx = cfg.build(cfg.resolutions[-1])
    t0 = time.perf_counter()
    backend = args.backend or ("fourier_block" if ctx.is_flat else None)
    handle = assemble(ctx, args.op, backend=backend)
    k = args.k or (handle.ndof if handle.backend == "fourier_block" else min(20, handle.ndof))
    dec = eigensolve(handle, k, args.target)
    lam = curvature(ctx).lambda_hat
    lam = 0.0 if abs(lam) < 1e-12 else lam
    window = spectral_window(lam, dec.eigenvalues.tolist())
    if _format(args) == "csv":
        _emit(dec.to_csv(), args.out)
        return 0
    spectra = {
        "operator": dec.operator,
        "backend": dec.backend,
        "count": dec.count,
        "target": args.target,
        "asymmetry": handle.asymmetry,
        "eigenpairs": [
            {"index": i, "eigenvalue": p.eigenvalue, "label": list(p.label), "residual": p.residual}
            for i, p in enumerate(dec.eigenpairs)
        ],
        "window": window.to_dict(),
    }
    report = ResidualReport(
        "spectrum", cfg.to_dict() | {"seed": args.seed}, pin_record(), [], [], spectra=spectra,
        timings={"total": time.perf_counter() - t0},
    )
    _emit(_stamp(report, args).to_json(), args.out)
    return 0


def _cmd_flow(args) -> int:
    from .flow import exact_trajectory, fit_decay_rate, flow_rk4
    from .gauge import synthesize_cn_torus
    from .random_fields import band_limited_scalar, band_limited_sym2
    from .spectral import assemble, eigensolve

    cfg = _model_config(args)
    ctx = cfg.build(cfg.resolutions[-1])
    rng = np.random.default_rng(args.seed)
    mu = None
    if args.init == "eigen":
        if not ctx.is_flat:
            raise ConfigurationError("--init eigen needs the flat torus; use --init random")
        pair = eigensolve(assemble(ctx, "lichnerowicz:general", backend="fourier_block"), 1, 4 * np.pi**2).eigenpairs[0]
        h0, mu = pair.eigenvector, pair.eigenvalue
    elif args.init == "cn":
        h0 = synthesize_cn_torus(ctx, band_limited_scalar(ctx, rng), seed=args.seed)
    else:
        h0 = band_limited_sym2(ctx, rng)
    t0 = time.perf_counter()
    if args.integrator == "exact":
        traj = exact_trajectory(ctx, h0, np.linspace(0.0, args.t_final, args.samples), thin=True)
    else:
        traj = flow_rk4(ctx, h0, args.dt, int(round(args.t_final / args.dt)), thin=True)
    if _format(args) == "csv":
        _emit(traj.to_csv(), args.out)
        return 0
    try:
        rate, r2 = fit_decay_rate(traj)
    except PreconditionError as exc:
        rate, r2 = None, None
        log.warning("%s", exc)
    flow = traj.to_dict() | {"init": args.init, "mu": mu, "rate": rate, "r_squared": r2}
    report = ResidualReport(
        "flow", cfg.to_dict() | {"seed": args.seed}, pin_record(), [], [], flow=flow,
        timings={"total": time.perf_counter() - t0},
    )
    _emit(_stamp(report, args).to_json(), args.out)
    return 0


def _cmd_convergence(args) -> int:
    cfg = _model_config(args)
    res = expand_resolutions(cfg.model, cfg.resolutions, cfg.derivative)
    t0 = time.perf_counter()
    study = convergence_study(args.case, cfg, res, seed=args.seed, floor=args.tol or FLOOR)
    report = ResidualReport(
        "convergence", cfg.to_dict() | {"seed": args.seed}, pin_record(), [], [],
        timings={"total": time.perf_counter() - t0},
    )
    data = report.to_dict() | {"convergence": study}
    if args.no_timestamp:
        data.pop("timings", None)
    else:
        data["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    _emit(json.dumps(data, indent=2, sort_keys=True) + "\n", args.out)
    return 0


def _cmd_report(args) -> int:
    path = Path(args.path)
    if not path.is_file():
        raise ConfigurationError(f"no such report: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path} is not JSON: {exc}") from exc
    report = ResidualReport.from_dict(data)
    if args.format == "csv":
        _emit(_cases_csv(report.cases), args.out)
    else:
        _emit(report.to_json(), args.out)
    failed = [c["id"] for c in report.cases if c.get("kind") == "asserted" and c.get("verdict") == "fail"]
    return 1 if failed else 0


COMMANDS = {
    "identities": _cmd_identities,
    "adjudicate": _cmd_adjudicate,
    "spectrum": _cmd_spectrum,
    "flow": _cmd_flow,
    "convergence": _cmd_convergence,
    "report": _cmd_report,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: usage error -> 2, --help -> 0
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING, format="%(message)s")
    if getattr(args, "threads", 1) < 1:
        print("cnlab: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](args)
    except ConvergenceError as exc:
        print(f"cnlab: {exc}", file=sys.stderr)
        return 1
    except CONFIG_ERRORS as exc:
        print(f"cnlab: {exc}", file=sys.stderr)
        return 2
    except CnlabError as exc:
        print(f"cnlab: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
