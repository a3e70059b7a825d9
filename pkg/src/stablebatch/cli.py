"""Command-line front end.

Exit codes: 0 ok, 2 invalid config, 3 fit or check failure, 4 I/O.
Failures print one JSON object on stderr.
"""

import argparse
import json
import sys

from . import __version__, pipeline
from .errors import (
    DomainError,
    FitDiverged,
    InsufficientData,
    InsufficientOverlap,
    InvalidConfig,
    LengthMismatch,
    MissingArtifacts,
    MonotonicityViolation,
    NonPositiveBatch,
    OrderingViolation,
    RunParseError,
    StallError,
)

EXIT_OK, EXIT_CONFIG, EXIT_FIT, EXIT_IO = 0, 2, 3, 4

_CONFIG_ERRORS = (InvalidConfig, LengthMismatch, NonPositiveBatch)
_FIT_ERRORS = (InsufficientData, FitDiverged, DomainError, StallError, OrderingViolation,
               InsufficientOverlap, MonotonicityViolation)
_IO_ERRORS = (MissingArtifacts, RunParseError, OSError)


def _float_list(text):
    return [float(x) for x in text.split(",") if x.strip()]


def _common(p):
    p.add_argument("--config", help="pipeline config (JSON)")
    p.add_argument("--seed", type=int, help="global seed (overrides config)")
    p.add_argument("--output-dir", "--out", dest="output_dir",
                   help=f"output directory (overrides ${pipeline.OUTPUT_ENV} and config)")
    p.add_argument("--model-size", type=float)
    p.add_argument("--runs", type=lambda s: [x for x in s.split(",") if x], help="comma-separated run files")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="stablebatch", description="Batch-size analysis for constant-learning-rate training runs.")
    parser.add_argument("--version", action="version", version=f"stablebatch {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sub_sim = sub.add_parser("simulate", help="simulate constant-LR runs")
    _common(sub_sim)
    sub_sim.add_argument("--batch-sizes", type=_float_list)
    sub_sim.add_argument("--max-steps", type=int)

    for name, text in (("fit-loss", "fit per-run loss power laws"),
                       ("fit-es", "fit E(S) per target loss and extract metrics"),
                       ("fit", "fit-loss followed by fit-es")):
        p = sub.add_parser(name, help=text)
        _common(p)
        p.add_argument("--target-losses", type=_float_list)
        p.add_argument("--warmup-exclude", type=int)
        p.add_argument("--loss-delta", type=float)
        p.add_argument("--es-delta", type=float)
        p.add_argument("--seeds", type=int)

    p = sub.add_parser("schedule", help="build a dynamic batch schedule")
    _common(p)
    p.add_argument("--d-interval", type=float)
    p.add_argument("--momenta", type=_float_list)
    p.add_argument("--init-mode", choices=("anchored", "paper_literal"))
    p.add_argument("--quantum", type=float)
    p.add_argument("--compare-reference", action="store_true", default=None)

    p = sub.add_parser("verify", help="check loss-argmin / data-argmin equivalence on a simulated surface")
    _common(p)
    p.add_argument("--d-max", type=float)

    for name, text in (("plot", "render SVG figures"), ("report", "write report.json")):
        _common(sub.add_parser(name, help=text))
    return parser


def _overrides(args):
    o = {"seed": args.seed, "output_dir": args.output_dir, "model_size": args.model_size, "runs": args.runs}
    get = lambda k: getattr(args, k, None)  # noqa: E731
    o["target_losses"] = get("target_losses")
    o["fit.warmup_exclude"] = get("warmup_exclude")
    o["fit.loss_delta"] = get("loss_delta")
    o["fit.es_delta"] = get("es_delta")
    o["fit.seeds"] = get("seeds")
    o["simulator.batch_sizes"] = get("batch_sizes")
    o["simulator.max_steps"] = get("max_steps")
    o["schedule.d_interval"] = get("d_interval")
    o["schedule.momenta"] = get("momenta")
    o["schedule.init_mode"] = get("init_mode")
    o["schedule.quantum"] = get("quantum")
    o["schedule.compare_reference"] = get("compare_reference")
    o["verify.d_max"] = get("d_max")
    return o


def _fail(code, exc_type, message, **extra):
    payload = {"error": exc_type, "message": message, "exit_code": code, **extra}
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    return code


def _ok(payload):
    print(json.dumps(payload, sort_keys=True))
    return EXIT_OK


def run(args):
    cfg = pipeline.load_config(args.config, _overrides(args))
    cmd = args.command
    if cmd == "simulate":
        paths = pipeline.cmd_simulate(cfg)
        return _ok({"runs": [str(p) for p in paths]})
    if cmd == "fit-loss":
        return _ok({"fits": [str(p) for p in pipeline.cmd_fit_loss(cfg)]})
    if cmd in ("fit-es", "fit"):
        path, failed = (pipeline.cmd_fit if cmd == "fit" else pipeline.cmd_fit_es)(cfg)
        if failed:
            return _fail(EXIT_FIT, "FitFailure", f"{failed} target loss fit(s) failed; see {path}", metrics=str(path))
        return _ok({"metrics": str(path)})
    if cmd == "schedule":
        return _ok({"schedule": str(pipeline.cmd_schedule(cfg))})
    if cmd == "verify":
        path, passed = pipeline.cmd_verify(cfg)
        if not passed:
            return _fail(EXIT_FIT, "EquivalenceFailure", f"argmin mismatch; see {path}", report=str(path))
        return _ok({"verify": str(path), "passed": True})
    if cmd == "plot":
        return _ok({"plots": [str(p) for p in pipeline.cmd_plot(cfg)]})
    if cmd == "report":
        return _ok({"report": str(pipeline.cmd_report(cfg))})
    raise InvalidConfig(f"unknown command {cmd}")


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code in (0, None):
            return 0
        return _fail(EXIT_CONFIG, "UsageError", "invalid command line")
    try:
        return run(args)
    except _IO_ERRORS as exc:
        return _fail(EXIT_IO, type(exc).__name__, str(exc))
    except _CONFIG_ERRORS as exc:
        return _fail(EXIT_CONFIG, type(exc).__name__, str(exc))
    except _FIT_ERRORS as exc:
        return _fail(EXIT_FIT, type(exc).__name__, str(exc))
    except ValueError as exc:
        return _fail(EXIT_CONFIG, type(exc).__name__, str(exc))


if __name__ == "__main__":
    sys.exit(main())
