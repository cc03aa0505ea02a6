"""Command line entry point: ``poissonsi <subcommand> [options]``."""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from .config import THEOREMS, ExperimentConfig, load_config
from .experiments import ACCEPTANCE, default_config, run
from .report import clean


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v]


def _space(text: str) -> dict:
    """``hilbert:D`` or ``lq:Q:D``."""
    parts = text.split(":")
    if parts[0] == "hilbert" and len(parts) == 2:
        return {"kind": "hilbert", "dim": int(parts[1])}
    if parts[0] == "lq" and len(parts) == 3:
        return {"kind": "lq", "q": float(parts[1]), "dim": int(parts[2])}
    raise argparse.ArgumentTypeError(f"expected hilbert:D or lq:Q:D, got {text!r}")


def _common() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, allow_abbrev=False)
    g = common.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    g.add_argument("--samples", type=int, default=argparse.SUPPRESS, help="Monte Carlo sample count")
    g.add_argument("--tolerance", type=float, default=argparse.SUPPRESS)
    g.add_argument("--out", default=argparse.SUPPRESS, help="directory for JSON and CSV reports")
    g.add_argument("--config", default=argparse.SUPPRESS, help="YAML or JSON experiment config")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(
        prog="poissonsi", parents=[common], description=__doc__, allow_abbrev=False
    )
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="sample Poisson paths on a grid and write them as CSV")
    s.add_argument("--horizon", type=float)
    s.add_argument("--intervals", type=int)
    s.add_argument("--weights", type=_floats, help="comma-separated mark intensities")
    s.add_argument("--jump-times", action="store_true")

    s = sub.add_parser("identities", parents=[common], help="exact identity suite")
    s.add_argument("--instances", type=int)

    s = sub.add_parser("ratios", parents=[common], help="ensemble ratio experiments")
    s.add_argument("--theorem", choices=THEOREMS, required=True)
    s.add_argument("--p", type=_floats, help="comma-separated outer exponents")
    s.add_argument("--s", type=float, help="type or cotype exponent")
    s.add_argument("--space", type=_space, help="hilbert:D or lq:Q:D")
    s.add_argument("--kappas", type=_floats, help="comma-separated intensity factors")
    s.add_argument("--members", type=int, help="ensemble draws")

    s = sub.add_parser("clark-ocone", parents=[common], help="Clark-Ocone reconstruction residuals")
    s.add_argument("--K", type=_ints, help="comma-separated slice counts")

    s = sub.add_parser("reverse-doob", parents=[common], help="exact reverse dual Doob check")
    s.add_argument("--depth", type=_ints, help="comma-separated tree depths (at most 5)")
    s.add_argument("--p", type=_floats, help="comma-separated exponents in (0, 1]")
    s.add_argument("--families", type=int)

    sub.add_parser("report", parents=[common], help="run the full acceptance battery")
    return parser


def _params(base: ExperimentConfig, **kw) -> dict:
    params = dict(base.params)
    params.update({k: v for k, v in kw.items() if v is not None})
    return params


def _from_args(args) -> list[ExperimentConfig]:
    g = {k: getattr(args, k, None) for k in ("seed", "samples", "tolerance")}
    if getattr(args, "config", None):
        cfgs = load_config(args.config)
        if args.command != "report":
            cfgs = [c for c in cfgs if c.kind == args.command]
        return [c.with_overrides(**g) for c in cfgs]
    cmd = args.command
    if cmd == "report":
        return [default_config(k, t, **g) for k, t in ACCEPTANCE]
    if cmd == "simulate":
        base = default_config("simulate", **g)
        return [base.with_overrides(params=_params(
            base, horizon=args.horizon, n_intervals=args.intervals, weights=args.weights,
            jump_times=args.jump_times or None,
        ))]
    if cmd == "identities":
        base = default_config("identities", **g)
        return [base.with_overrides(params=_params(base, instances=args.instances))]
    if cmd == "clark-ocone":
        base = default_config("clark-ocone", **g)
        return [base.with_overrides(params=_params(base, K=args.K))]
    if cmd == "reverse-doob":
        base = default_config("reverse-doob", p=args.p, **g)
        return [base.with_overrides(params=_params(base, depths=args.depth, families=args.families))]
    theorem = args.theorem
    base = default_config("ratios", theorem, **g)
    params = dict(base.params)
    if args.members is not None and "ensemble" in params:
        params["ensemble"] = {**params["ensemble"], "members": args.members}
    if args.members is not None and theorem == "isometry":
        params["instances"] = args.members
    if args.members is not None and theorem == "inclusions":
        params["functions"] = args.members
    if (args.p is not None or args.space is not None) and theorem == "lq":
        params.pop("pairs", None)
    return [
        ExperimentConfig.from_dict({
            **base.to_dict(),
            "p": args.p if args.p is not None else base.p,
            "s": args.s if args.s is not None else base.s,
            "space": args.space or base.space,
            "kappas": args.kappas or base.kappas,
            "params": params,
        })
    ]


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfgs = _from_args(args)
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if not cfgs:
        print("error: the config file holds no experiment for this subcommand", file=sys.stderr)
        return 2
    out = Path(getattr(args, "out", None) or "reports")
    t0 = time.perf_counter()
    summary, ok = [], True
    for i, cfg in enumerate(cfgs):
        try:
            report = run(cfg)
        except (ValueError, KeyError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        stem = report.kind if len(cfgs) == 1 else f"{i:02d}-{report.kind}"
        js, _ = report.write(out, stem)
        for line in report.summary_lines():
            print(line)
        print(f"      -> {js} ({report.wall_clock:.1f}s)")
        summary.append({"kind": report.kind, "report": str(js), "passed": report.passed,
                        "criteria": [c.to_dict() for c in report.criteria]})
        ok &= report.passed
    if args.command == "report":
        (out / "summary.json").write_text(json.dumps(clean({
            "passed": ok, "experiments": summary, "wall_clock_seconds": time.perf_counter() - t0,
        }), sort_keys=True, indent=2) + "\n")
    print("all criteria passed" if ok else "some criteria FAILED")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
