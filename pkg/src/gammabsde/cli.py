"""Command-line entry point: geodesic, frechet, solve, verify, audit-cat0."""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import report
from .bsde import load_scenario, solve_bsde
from .errors import GammaBsdeError, ParseError
from .frechet import DiscreteMeasure, frechet_mean
from .geodesics import cat0_audit, geodesic, path_rotation_angle
from .geometry import load_domain
from .lattice import build_lattice
from .verifier import run_suites

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_CHECK_FAILED = 2


@dataclass
class RunConfig:
    """Resolved run parameters; embedded in outputs for reproducibility."""

    domain_path: str
    scenario_path: str | None
    k: int
    seed: int
    out_dir: str | None
    suite: str | None
    emit_svg: str | None
    threads: int

    @staticmethod
    def from_args(args):
        k = getattr(args, "k", 0) or 0
        if k < 0:
            raise ParseError(f"k must be nonnegative, got {k}")
        return RunConfig(
            domain_path=getattr(args, "domain", ""),
            scenario_path=getattr(args, "scenario", None),
            k=k,
            seed=getattr(args, "seed", 0) or 0,
            out_dir=getattr(args, "out", None),
            suite=getattr(args, "suite", None),
            emit_svg=getattr(args, "svg", None),
            threads=_threads(args),
        )

    def as_dict(self):
        return {
            "domain": self.domain_path,
            "scenario": self.scenario_path,
            "k": self.k,
            "seed": self.seed,
            "suite": self.suite,
        }


def _read(path, what):
    try:
        with open(path, "r", encoding="utf-8") as f:
            return f.read()
    except OSError as exc:
        raise ParseError(f"cannot read {what} file '{path}': {exc.strerror}") from None


def _parse_point(text):
    try:
        x, y = text.split(",")
        return np.array([float(x), float(y)])
    except ValueError:
        raise ParseError(f"expected a point 'X,Y', got '{text}'") from None


def _threads(args):
    env = os.environ.get("GB_THREADS")
    if getattr(args, "threads", None) is not None:
        return max(1, args.threads)
    if env is not None:
        try:
            return max(1, int(env))
        except ValueError:
            raise ParseError(f"GB_THREADS must be an integer, got '{env}'") from None
    return os.cpu_count() or 1


def _cmd_geodesic(args):
    d = load_domain(_read(args.domain, "domain"))
    p = geodesic(d, _parse_point(args.from_), _parse_point(args.to))
    payload = {
        "waypoints": [list(map(float, w)) for w in p.waypoints],
        "length": p.length,
        "psi": p.length**2,
        "theta": path_rotation_angle(p),
    }
    print(report.dumps_json(payload))
    if args.svg:
        report.write_svg(args.svg, d, paths=[p.waypoints])
    return EXIT_OK


def _cmd_frechet(args):
    d = load_domain(_read(args.domain, "domain"))
    data = json.loads(_read(args.measure, "measure"))
    try:
        pts = [row["p"] for row in data]
        ws = [row["w"] for row in data]
    except (TypeError, KeyError):
        raise ParseError('measure file must be a list of {"p": [x, y], "w": w}') from None
    measure = DiscreteMeasure(np.asarray(pts, float), np.asarray(ws, float))
    measure.validate_support(d)
    cert = frechet_mean(d, measure)
    print(report.dumps_json(cert.as_dict()))
    return EXIT_OK


def _cmd_solve(args):
    cfg = RunConfig.from_args(args)
    d = load_domain(_read(args.domain, "domain"))
    scen = load_scenario(_read(args.scenario, "scenario"))
    L = build_lattice(scen.d_prime, args.k, scen.horizon)
    sol = solve_bsde(d, L, scen.terminal_fn(d), scen.generator)
    res = sol.scheme
    diag = {
        "config": cfg.as_dict(),
        "scenario": scen.name,
        "domain": d.name,
        "k": args.k,
        "d_prime": scen.d_prime,
        "horizon": scen.horizon,
        "root_y": [float(v) for v in res.root()],
        "picard_iterations": sol.iterations,
        "picard_trace": [float(x) for x in sol.picard_trace],
        "bmo_diagnostic": sol.bmo,
        "max_mean_residual": max(res.diagnostics["mean_residual"].values(), default=0.0),
    }
    print(report.dumps_json(diag))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        report.write_field_csv(os.path.join(args.out, "Y.csv"), L, res.Y, ["y1", "y2"])
        znames = [f"z{r}{c}" for r in (1, 2) for c in range(1, L.d_prime + 1)]
        report.write_field_csv(os.path.join(args.out, "Z.csv"), L, res.Z, znames)
        report.write_field_csv(os.path.join(args.out, "K.csv"), L, res.K_inc, ["k1", "k2"])
        report.write_json(os.path.join(args.out, "diagnostics.json"), diag)
        report.fig_solution(os.path.join(args.out, "solution.png"), res,
                            title=f"{d.name} / {scen.name} (k={args.k})")
        report.fig_picard(os.path.join(args.out, "picard.png"), sol.picard_trace)
    return EXIT_OK


def _cmd_verify(args):
    cfg = RunConfig.from_args(args)
    d = load_domain(_read(args.domain, "domain"))
    scen = load_scenario(_read(args.scenario, "scenario")) if args.scenario else None
    reports = run_suites(d, scen, args.k, which=args.suite, seed=args.seed)
    payload = [r.as_dict() for r in reports]
    print(report.reports_table(reports))
    print(report.dumps_json(payload))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        report.write_json(os.path.join(args.out, "verify_report.json"), payload)
        report.write_json(os.path.join(args.out, "run_config.json"), cfg.as_dict())
        report.fig_reports(os.path.join(args.out, "verify_report.png"), reports,
                           title=f"{d.name}: suite {args.suite}")
    return EXIT_OK if all(r.passed for r in reports) else EXIT_CHECK_FAILED


def _cmd_audit(args):
    d = load_domain(_read(args.domain, "domain"))
    audit = cat0_audit(d, args.samples, seed=args.seed)
    print(report.dumps_json(audit.as_dict()))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        report.write_json(os.path.join(args.out, "cat0_audit.json"), audit.as_dict())
    return EXIT_OK if audit.passed else EXIT_CHECK_FAILED


def build_parser():
    ap = argparse.ArgumentParser(
        prog="gammabsde",
        description="Geodesic engine, barycenter solver and reflected-BSDE "
        "scheme on polygonal planar domains, with verification suites.",
    )
    ap.add_argument("--threads", type=int, default=None,
                    help="bound on worker threads (GB_THREADS overrides the default)")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("geodesic", help="shortest path between two points")
    g.add_argument("--domain", required=True)
    g.add_argument("--from", dest="from_", required=True, metavar="X,Y")
    g.add_argument("--to", required=True, metavar="X,Y")
    g.add_argument("--svg", default=None, help="write a standalone SVG rendering")
    g.set_defaults(fn=_cmd_geodesic)

    f = sub.add_parser("frechet", help="Fréchet mean of a discrete measure")
    f.add_argument("--domain", required=True)
    f.add_argument("--measure", required=True)
    f.set_defaults(fn=_cmd_frechet)

    s = sub.add_parser("solve", help="solve the reflected backward equation")
    s.add_argument("--domain", required=True)
    s.add_argument("--scenario", required=True)
    s.add_argument("--k", type=int, required=True, help="dyadic time exponent")
    s.add_argument("--out", default=None, help="directory for CSV/JSON/figures")
    s.set_defaults(fn=_cmd_solve)

    v = sub.add_parser("verify", help="run verification suites")
    v.add_argument("--domain", required=True)
    v.add_argument("--scenario", default=None)
    v.add_argument("--k", type=int, default=6)
    v.add_argument("--suite", default="all",
                   choices=["geometry", "frechet", "scheme", "bsde", "all"])
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out", default=None)
    v.set_defaults(fn=_cmd_verify)

    a = sub.add_parser("audit-cat0", help="sampled comparison-geometry audit")
    a.add_argument("--domain", required=True)
    a.add_argument("--samples", type=int, default=500)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out", default=None)
    a.set_defaults(fn=_cmd_audit)
    return ap


def run(argv) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code not in (0, None) else EXIT_OK
    try:
        _threads(args)  # validated; the engine itself is deterministic
        return args.fn(args)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except GammaBsdeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
