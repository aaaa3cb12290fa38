"""
Command-line driver: ``fairtransport <subcommand> [flags]``.

Exit codes: 0 success or PASS, 2 usage or validation error, 3 verification
mismatch, 4 audit p-value below the threshold.
"""

from __future__ import annotations

import argparse
import sys
from typing import List, Optional

from . import config
from .errors import FairTransportError
from .pipeline import RunConfig, cmd_audit, cmd_certify, cmd_compile, cmd_project, cmd_verify

EXIT_OK = 0
EXIT_ERROR = 2
EXIT_MISMATCH = 3
EXIT_AUDIT_FAILED = 4


def _add_inputs(parser: argparse.ArgumentParser) -> None:
    """The three input file options shared by every subcommand."""
    parser.add_argument("--ontology", required=True, help="Ontology file (.fto)")
    parser.add_argument("--binding", required=True, help="Binding JSON document")
    parser.add_argument("--data", required=True, help="Dataset CSV")


def _add_run_options(parser: argparse.ArgumentParser, projection: bool = True, auditing: bool = True) -> None:
    _add_inputs(parser)
    parser.add_argument("--out", required=True, help="Output directory")
    parser.add_argument("--allow-trivial", action="store_true",
                        help="Proceed when the ontology declares no sensitive concepts")
    parser.add_argument("--seed", type=int, default=None,
                        help="Audit seed (falls back to FAIRTRANSPORT_SEED, then fresh entropy)")
    if projection:
        parser.add_argument("--method", choices=config.METHODS, default=None,
                            help=f"Projection method (default: {config.DEFAULT_METHOD})")
        parser.add_argument("--epsilon", type=float, default=None,
                            help="Entropic regularization for algorithm1 (default: scale x median cost)")
    if auditing:
        parser.add_argument("--permutations", type=int, default=None,
                            help=f"Permutation replicates (default: {config.DEFAULT_PERMUTATIONS})")
        parser.add_argument("--p-threshold", type=float, default=None,
                            help=f"Audit acceptance threshold (default: {config.DEFAULT_P_THRESHOLD})")
        parser.add_argument("--json", action="store_true", help="Print the report as JSON")
        parser.add_argument("--progress", action="store_true", help="Show a progress bar over permutations")


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with the compile, project, audit, certify and verify subcommands."""
    parser = argparse.ArgumentParser(
        prog="fairtransport",
        description="Ontology-compiled bias sigma-algebras, optimal-transport fair representations and certificates.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compile", help="Build the mask matrix and atom partition")
    _add_run_options(p, projection=False, auditing=False)

    p = sub.add_parser("project", help="Compute the fair representation")
    _add_run_options(p, auditing=False)

    p = sub.add_parser("audit", help="Test independence of Y (or raw X) from the atoms")
    _add_run_options(p)
    p.add_argument("--raw", action="store_true", help="Audit the original features instead of Y")

    p = sub.add_parser("certify", help="Run the full chain and write cert.json")
    _add_run_options(p)

    p = sub.add_parser("verify", help="Re-run the pipeline and check a certificate")
    p.add_argument("cert", help="Certificate file (cert.json)")
    _add_inputs(p)
    p.add_argument("--json", action="store_true", help="Print the report as JSON")
    return parser


def _run_config(args: argparse.Namespace) -> RunConfig:
    """RunConfig from parsed arguments; options a subcommand lacks fall back to config defaults."""
    return RunConfig.create(
        ontology=args.ontology,
        binding=args.binding,
        dataset=args.data,
        out_dir=args.out,
        method=getattr(args, "method", None),
        epsilon=getattr(args, "epsilon", None),
        permutations=getattr(args, "permutations", None),
        seed=args.seed,
        p_threshold=getattr(args, "p_threshold", None),
        allow_trivial=args.allow_trivial,
    )


def _dispatch(args: argparse.Namespace) -> int:
    """Run one subcommand and return its exit code."""
    if args.command == "verify":
        report = cmd_verify(args.cert, args.ontology, args.binding, args.data)
        print(report.to_json() if args.json else repr(report))
        return EXIT_OK if report.passed else EXIT_MISMATCH

    cfg = _run_config(args)
    if args.command == "compile":
        cmd_compile(cfg)
        return EXIT_OK
    if args.command == "project":
        cmd_project(cfg)
        return EXIT_OK
    if args.command == "certify":
        cert = cmd_certify(cfg, show_progress=args.progress)
        p_value = cert.hsic["p_value"]
        if args.json:
            print(cert.to_json())
    else:
        report = cmd_audit(cfg, raw=args.raw, show_progress=args.progress)
        p_value = report.hsic.p_value
        print(report.to_json() if args.json else repr(report))

    if p_value < cfg.p_threshold:
        print(f"Audit p-value {p_value:.4f} is below the threshold {cfg.p_threshold}.", file=sys.stderr)
        return EXIT_AUDIT_FAILED
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    """Console entry point. Library errors are printed and mapped to exit code 2."""
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except FairTransportError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
