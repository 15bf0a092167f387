"""Command-line interface.

Exit codes: 0 success, 1 configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .config import ScenarioConfig, load_config
from .errors import ConfigurationError, NumericalError
from .experiments import fmt, run_convergence, run_limit, run_mc, run_scenario
from .presets import preset, preset_names

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigurationError(message)


def _kappa_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"--kappa expects comma-separated numbers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="membrane", description="Diffusion through semi-permeable membranes and its Markov-chain limit.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, kappa=True, seed=False):
        src = sp.add_mutually_exclusive_group(required=True)
        src.add_argument("--config", metavar="PATH", help="JSON scenario document")
        src.add_argument("--scenario", metavar="NAME", help=f"built-in scenario ({', '.join(preset_names())})")
        sp.add_argument("--out", metavar="DIR", help="output directory (default out/<name>)")
        if kappa:
            sp.add_argument("--kappa", metavar="LIST", type=_kappa_list, help="comma-separated kappa values")
        if seed:
            sp.add_argument("--seed", metavar="N", type=int, help="random seed")

    common(sub.add_parser("simulate", help="PDE snapshots, mass trajectories and limit trajectory"))
    common(sub.add_parser("converge", help="kappa sweep of distances to the limit"))
    common(sub.add_parser("limit", help="limit chain matrices and trajectory"), kappa=False)
    common(sub.add_parser("mc", help="particle occupancy estimates"), seed=True)
    sub.add_parser("presets", help="list built-in scenarios")
    return p


def _load(args) -> ScenarioConfig:
    return load_config(args.config) if args.config else preset(args.scenario)


def _matrix(name: str, m: np.ndarray) -> str:
    rows = ["  [" + ", ".join(f"{v: .6g}" for v in r) + "]" for r in np.atleast_2d(m)]
    return f"{name} =\n" + "\n".join(rows)


def _run(argv) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "presets":
        for name in preset_names():
            print(f"{name}: {preset(name).description}")
        return EXIT_OK
    config = _load(args)
    if args.command == "limit":
        res = run_limit(config, args.out)
        ch = res["chain"]
        print(_matrix("Q", ch.Q))
        print(_matrix("Q*", ch.Qstar))
        print("C = " + ", ".join(fmt(v) for v in ch.C))
        print("mu = " + ", ".join(fmt(v) for v in ch.mu))
    elif args.command == "simulate":
        res = run_scenario(config, args.out, kappas=args.kappa)
        for f in res["files"]:
            print(f"wrote {f}")
    elif args.command == "converge":
        report = run_convergence(config, args.out, kappas=args.kappa)
        for line in report.lines():
            print(line)
    elif args.command == "mc":
        k = None if args.kappa is None else args.kappa[0]
        if args.kappa is not None and len(args.kappa) != 1:
            raise ConfigurationError("mc takes a single --kappa value")
        occ = run_mc(config, args.out, seed=args.seed, kappa=k)
        for t, o, s in zip(occ.t, occ.occupancy, occ.se):
            print(f"t={t:g} " + " ".join(f"{v:.5f}+-{e:.5f}" for v, e in zip(o, s)))
    return EXIT_OK


def main(argv=None) -> int:
    try:
        return _run(argv)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
