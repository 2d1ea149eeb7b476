"""Command-line entry: simulate | mine | calibrate | detect | baseline | report.

Exit codes: 0 ok, 1 usage or invalid configuration, 2 numerical failure,
3 mining failure during a detection run.
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from src.models.run import CaseConfig, FamilyRequest, RunManifest, RunStatus
from src.models.scenario import ScenarioConfig
from src.utils.errors import ConfigValidationError, DivergenceError, MiningConvergenceError, MonitorError, StepBoundError
from src.utils.logging_config import configure_logging
from src.utils.settings import settings

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2
EXIT_DETECTION_MINING = 3

NUMERICAL_ERRORS = (DivergenceError, StepBoundError, MiningConvergenceError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON configuration for the command")
    common.add_argument("--out", type=Path, required=True, help="Primary output path")
    common.add_argument("--seed", type=int, default=None, help="Seed for every random choice of the run")
    common.add_argument("--jobs", type=int, default=None, help="Worker processes")

    parser = _Parser(prog="dihrnn", description="Coefficient-mining unknown-error monitor")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("simulate", parents=[common], help="Generate closed-loop traces from a scenario or family config")

    mine = sub.add_parser("mine", parents=[common], help="Mine a coefficient sequence from one trace")
    mine.add_argument("trace", type=Path)

    calibrate = sub.add_parser("calibrate", parents=[common], help="Calibrate the residue range on error-free traces")
    calibrate.add_argument("traces", type=Path, nargs="+", help="Trace CSVs or directories of them")

    detect = sub.add_parser("detect", parents=[common], help="Label every window of the given traces")
    detect.add_argument("profile", type=Path)
    detect.add_argument("traces", type=Path, nargs="+")

    baseline = sub.add_parser("baseline", parents=[common], help="Output-conformance baseline")
    baseline.add_argument("calibration", type=Path, help="Directory of error-free traces or a saved baseline profile")
    baseline.add_argument("traces", type=Path, nargs="+")

    report = sub.add_parser("report", parents=[common], help="Tabulate verdict files; --config takes a scenario index")
    report.add_argument("verdicts", type=Path, nargs="*")
    return parser


def _require_config(args) -> Path:
    """--config as given, else relative to the bundled config directory."""
    if args.config is None:
        raise UsageError(f"{args.command} needs --config")
    path = args.config
    bundled = settings.config_dir / path
    if not path.exists() and not path.is_absolute() and bundled.exists():
        logger.debug(f"Using bundled config {bundled}")
        return bundled
    return path


def _load_case(args):
    from src.agents.case_context import CaseContext
    from src.storage.artifact_store import store

    return CaseContext(store.load_model(_require_config(args), CaseConfig))


def _scenario_configs(args) -> List[ScenarioConfig]:
    from src.storage.artifact_store import store
    from src.tools.scenarios import scenario_family

    path = _require_config(args)
    data = store.load_json(path)
    if isinstance(data, dict) and "family" in data:
        request = store.load_model(path, FamilyRequest)
        seed = request.seed if args.seed is None else args.seed
        try:
            return scenario_family(request.family, seed=seed)
        except KeyError as e:
            raise ConfigValidationError(f"{path}: family: {e.args[0]}")
    config = store.load_model(path, ScenarioConfig)
    if args.seed is not None:
        config = config.model_copy(update={"seed": args.seed})
    return [config]


def _dispatch(args, manifest: RunManifest) -> int:
    from src.agents.case_context import expand_trace_paths

    jobs = args.jobs or settings.jobs
    seed = args.seed if args.seed is not None else settings.seed

    if args.command == "simulate":
        from src.agents.simulation import simulation_agent

        simulation_agent.run(manifest, _scenario_configs(args), args.out, jobs=jobs)
        return EXIT_OK

    if args.command == "report":
        from src.agents.report import report_agent

        report_agent.run(manifest, expand_verdicts(args.verdicts), args.out, index_path=args.config)
        return EXIT_OK

    ctx = _load_case(args)
    if args.command == "mine":
        from src.agents.mining import mining_agent

        manifest.input_paths = [str(args.trace)]
        mining_agent.run(manifest, ctx, args.trace, args.out)
        return EXIT_OK

    traces = expand_trace_paths(args.traces)
    manifest.input_paths = [str(p) for p in traces]
    if not traces:
        raise UsageError("no trace files found")

    if args.command == "calibrate":
        from src.agents.calibration import calibration_agent

        calibration_agent.run(manifest, ctx, traces, args.out, seed=seed)
        return EXIT_OK

    if args.command == "detect":
        from src.agents.detection import detection_agent

        manifest.input_paths.insert(0, str(args.profile))
        detection_agent.run(manifest, ctx, args.profile, traces, args.out, jobs=jobs)
        return EXIT_DETECTION_MINING if manifest.errors else EXIT_OK

    from src.agents.baseline import baseline_agent

    manifest.input_paths.insert(0, str(args.calibration))
    baseline_agent.run(manifest, ctx, args.calibration, traces, args.out)
    return EXIT_OK


def expand_verdicts(paths: Sequence[Path]) -> List[Path]:
    out: List[Path] = []
    for path in paths:
        out.extend(sorted(path.glob("*.csv")) if path.is_dir() else [path])
    return out


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging()

    seed = args.seed if args.seed is not None else settings.seed
    manifest = RunManifest(
        command=args.command,
        config_paths=[str(args.config)] if args.config else [],
        seed=seed,
    )
    try:
        code = _dispatch(args, manifest)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"dihrnn: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigValidationError as e:
        logger.error(str(e))
        print(f"dihrnn: invalid configuration: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NUMERICAL_ERRORS as e:
        logger.error(f"{args.command} failed: {e}")
        manifest.status = RunStatus.FAILED
        _write_manifest(args.out, manifest)
        return EXIT_NUMERICAL
    except MonitorError as e:
        logger.error(f"{args.command} failed: {e}")
        manifest.status = RunStatus.FAILED
        _write_manifest(args.out, manifest)
        return EXIT_USAGE

    manifest.status = RunStatus.COMPLETED if code == EXIT_OK else RunStatus.FAILED
    manifest.current_stage = "complete"
    _write_manifest(args.out, manifest)
    return code


def _write_manifest(out: Path, manifest: RunManifest) -> None:
    from src.storage.artifact_store import store

    target = out / "run" if out.is_dir() else out
    store.write_manifest(target, manifest)


if __name__ == "__main__":
    sys.exit(main())
