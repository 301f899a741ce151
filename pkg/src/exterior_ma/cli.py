"""Command-line entry point: ``run``, ``suite``, ``oracle`` and ``report``.

Exit codes: 0 when every experiment passes, 1 when any fails, 2 on a
configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .core import RightHandSide, ValidationError
from .harness import ConfigError, ExperimentSpec, RunReport, SuiteReport, default_suite, run_experiment, run_suite


def _overrides(text: str | None) -> dict:
    """Parse ``key=value,key=value`` (or a JSON object) into threshold overrides."""
    if not text:
        return {}
    if text.lstrip().startswith("{"):
        try:
            return {k: float(v) for k, v in json.loads(text).items()}
        except (json.JSONDecodeError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad --tol-overrides: {exc}") from exc
    out = {}
    for item in filter(None, text.split(",")):
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"bad --tol-overrides entry {item!r}; expected key=value")
        try:
            out[key.strip()] = float(val)
        except ValueError as exc:
            raise ConfigError(f"bad --tol-overrides value {val!r}") from exc
    return out


def _read_json(path: str):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc


def _solver_flags(args) -> dict:
    flags = {"h": args.grid_h, "W": args.stencil_width, "tol": args.tol, "max_iter": args.max_iter,
             "init": args.init}
    return {k: v for k, v in flags.items() if v is not None}


def cmd_run(args) -> int:
    data = _read_json(args.config)
    if "experiments" in data:
        raise ConfigError("config holds a suite; use the 'suite' subcommand")
    data = dict(data)
    data["solver"] = {**data.get("solver", {}), **_solver_flags(args)}
    spec = ExperimentSpec.from_dict(data, _overrides(args.tol_overrides), args.seed)
    spec.out = args.out
    rep = run_experiment(spec)
    print(rep.summary_line())
    return 0 if rep.passed else 1


def cmd_suite(args) -> int:
    config = default_suite() if args.config == "default" else _read_json(args.config)
    suite = run_suite(config, workers=args.workers, overrides=_overrides(args.tol_overrides),
                      seed=args.seed, out=args.out)
    for rep in suite.reports:
        print(rep.summary_line())
    print(f"{sum(r.passed for r in suite.reports)} passed, {sum(not r.passed for r in suite.reports)} failed")
    return suite.exit_code


def cmd_oracle(args) -> int:
    from .radial import exact_radial_solution

    data = _read_json(args.config)
    try:
        n = int(data["n"])
        f = RightHandSide.from_dict(data["rhs"])
    except (KeyError, ValidationError, ValueError) as exc:
        raise ConfigError(f"bad oracle config: {exc}") from exc
    prof = exact_radial_solution(f, n, float(data.get("d", 0.0)), float(data.get("r0", 0.0)),
                                 float(data.get("base", 0.0)), data.get("r_max"))
    res = float(prof.det_residual())
    summary = {"n": n, "d": prof.d, "r0": prof.r0, "det_residual_max": res, "convex": prof.is_convex(),
               "tail": prof.tail}
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        prof.to_csv(out / "profile.csv")
        summary["csv"] = str(out / "profile.csv")
    print(json.dumps(summary, indent=2, default=float))
    return 0


def cmd_report(args) -> int:
    d = Path(args.dir)
    if not d.is_dir():
        raise ConfigError(f"{d} is not a directory")
    reports = []
    for p in sorted(d.glob("*.json")):
        data = json.loads(p.read_text())
        if isinstance(data, dict) and "criteria" in data and "id" in data:
            reports.append(RunReport.from_dict(data))
    for rep in reports:
        print(rep.summary_line())
    suite = SuiteReport(reports)
    print(f"{sum(r.passed for r in reports)} passed, {sum(not r.passed for r in reports)} failed")
    return suite.exit_code


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="exterior-ma", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_help):
        sp.add_argument("config", help=config_help)
        sp.add_argument("--out", help="output directory for reports and artifacts")
        sp.add_argument("--seed", type=int, default=None, help="sampling seed (default 42)")
        sp.add_argument("--tol-overrides", help="threshold overrides, e.g. sigma_band_grid=0.2")

    r = sub.add_parser("run", help="run one experiment")
    common(r, "experiment JSON config")
    r.add_argument("--grid-h", type=float)
    r.add_argument("--stencil-width", type=int)
    r.add_argument("--tol", type=float)
    r.add_argument("--max-iter", type=int)
    r.add_argument("--init", choices=["subsolution", "supersolution"])
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("suite", help="run a suite of experiments ('default' for the bundled one)")
    common(s, "suite JSON config or 'default'")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_suite)

    o = sub.add_parser("oracle", help="build and export a radial profile")
    o.add_argument("config", help="JSON with n, rhs, and optional d, r0, base, r_max")
    o.add_argument("--out")
    o.set_defaults(func=cmd_oracle)

    rp = sub.add_parser("report", help="summarise persisted run reports")
    rp.add_argument("dir")
    rp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValidationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
