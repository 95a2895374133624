import argparse
import logging
import sys

import numpy as np

from complexity_analyzer import ComplexityAnalyzer
from errors import EcoplexError, InputError
from run_config import PRUNE_POLICIES, ROUTES, RunConfig

EXIT_OK, EXIT_COMPUTATION, EXIT_USAGE = 0, 1, 2

# argparse destination -> RunConfig field
FLAG_FIELDS = {
    "input": "input",
    "year": "years",
    "rca_threshold": "rca_threshold",
    "prune_policy": "prune_policy",
    "route": "route",
    "iters": "mor_iters",
    "tol": "tol",
    "seed": "seed",
    "out": "out",
    "verify": "verify",
    "target": "target",
    "candidates": "candidates",
    "audit": "audit",
    "threads": "threads",
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--input", help="Trade CSV (ingest) or artifact directory (other commands)")
    common.add_argument("--out", help="Output directory")
    common.add_argument("--config", help="JSON run config (defaults to ./config.json when present)")
    common.add_argument("--seed", type=int)
    common.add_argument("--tol", type=float, help="Truncated SVD residual tolerance")
    common.add_argument("--threads", type=int)
    common.add_argument("--verbose", action="store_true", help="Debug logging")

    parser = argparse.ArgumentParser(
        description="Economic complexity (ECI/PCI) by spectral co-clustering"
    )
    commands = parser.add_subparsers(dest="command", required=True)

    ingest = commands.add_parser("ingest", parents=[common], help="Trade flows -> specialization matrix")
    ingest.add_argument("--year", type=int, action="append", help="Year to ingest (repeatable)")
    ingest.add_argument("--rca-threshold", type=float)
    ingest.add_argument("--prune-policy", choices=PRUNE_POLICIES)

    scores = commands.add_parser("scores", parents=[common], help="ECI / PCI by one route")
    scores.add_argument("--route", choices=ROUTES)
    scores.add_argument("--iters", type=int, help="Method of Reflections iterations")
    scores.add_argument("--verify", action="store_const", const=True, help="Also write the identity report")

    commands.add_parser("cocluster", parents=[common], help="GMM co-clusters and plot data")
    commands.add_parser("verify", parents=[common], help="Identity verification report")

    simulate = commands.add_parser("simulate", help="Counterfactual specialization experiments")
    modes = simulate.add_subparsers(dest="mode", required=True)
    sweep = modes.add_parser("sweep", parents=[common], help="Single-addition sweep")
    sweep.add_argument("--candidates", help="CSV with header country,product")
    sweep.add_argument("--audit", action="store_const", const=True, help="Refit the GMM per counterfactual")
    greedy = modes.add_parser("greedy", parents=[common], help="Greedy ECI maximization for one country")
    greedy.add_argument("--target", help="Country code to specialize")
    greedy.add_argument("--audit", action="store_const", const=True, help="Record every candidate evaluation")

    commands.add_parser("bench", parents=[common], help="Truncated SVD vs dense eigen timings")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    overrides = {field: getattr(args, flag, None) for flag, field in FLAG_FIELDS.items()}

    try:
        config = RunConfig.resolve(overrides, args.config)
        analyzer = ComplexityAnalyzer(config)
        if args.command == "simulate":
            if args.mode == "sweep":
                analyzer.simulate_sweep()
            else:
                analyzer.simulate_greedy()
        elif args.command == "verify":
            if not analyzer.verify():
                print("✗ Some identities failed; see verification_report.json")
                return EXIT_COMPUTATION
        else:
            getattr(analyzer, args.command)()
    except np.linalg.LinAlgError as exc:
        # a ValueError subclass, but a numerical failure
        print(f"✗ LinAlgError: {exc}", file=sys.stderr)
        return EXIT_COMPUTATION
    except (InputError, FileNotFoundError, ValueError) as exc:
        print(f"✗ {exc}", file=sys.stderr)
        return EXIT_USAGE
    except EcoplexError as exc:
        print(f"✗ {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_COMPUTATION

    print(f"\nDone. Outputs written to {config.out}/")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
