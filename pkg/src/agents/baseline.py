import logging
from pathlib import Path
from typing import List

from pydantic import ValidationError

from src.agents.case_context import CaseContext, expand_trace_paths
from src.models.conformal import OutputConformalProfile
from src.models.run import RunManifest
from src.utils.errors import ConfigValidationError, PreconditionError

logger = logging.getLogger(__name__)

BASELINE_COLUMNS = ["scenario", "window", "robustness", "lo", "hi", "label", "detect_time"]


class BaselineAgent:
    """Output-conformance baseline: calibrate on error-free traces (or load a profile), then label traces."""

    def __init__(self):
        self.stage_name = "baseline"
        self._baseline = None

    @property
    def baseline(self):
        if self._baseline is None:
            from src.tools import baseline
            self._baseline = baseline
        return self._baseline

    def profile_path(self, out: Path) -> Path:
        return Path(out).with_suffix(".profile.json")

    def _load_profile(self, ctx: CaseContext, path: Path) -> OutputConformalProfile:
        try:
            return OutputConformalProfile.model_validate(ctx.store.load_json(path))
        except ValidationError as e:
            first = e.errors()[0]
            location = ".".join(str(part) for part in first["loc"])
            raise ConfigValidationError(f"{path}: {location}: {first['msg']}")

    def run(
        self,
        manifest: RunManifest,
        ctx: CaseContext,
        calibration: Path,
        trace_paths: List[Path],
        out: Path,
    ) -> RunManifest:
        manifest.current_stage = self.stage_name
        settings = ctx.case.baseline
        if settings is None:
            raise ConfigValidationError(f"case {ctx.case.name}: baseline: Field required")
        predictor = ctx.predictor()
        try:
            calibration = Path(calibration)
            if calibration.suffix == ".json":
                profile = self._load_profile(ctx, calibration)
                logger.info(f"Loaded baseline profile {calibration}")
            else:
                paths = expand_trace_paths([calibration])
                if not paths:
                    raise PreconditionError(f"no calibration traces under {calibration}")
                warnings: List[str] = []
                profile = self.baseline.baseline_calibrate(
                    ctx.load_traces(paths, predictor),
                    settings.safety,
                    predictor,
                    miscoverage=settings.miscoverage,
                    window_length=settings.window_length,
                    center_policy=settings.center_policy,
                    integrator=ctx.case.integrator,
                    output_offsets=settings.output_offsets,
                    warnings=warnings,
                )
                for warning in warnings:
                    manifest.add_warning(warning)
                target = self.profile_path(out)
                manifest.add_output(str(target), ctx.store.save_json(target, profile.model_dump(mode="json")))

            rows = []
            summary = {}
            for path, trace in zip(trace_paths, ctx.load_traces(trace_paths, predictor)):
                name = Path(path).stem
                verdict = self.baseline.baseline_detect(trace, profile, predictor.state_names)
                rows.append(
                    {
                        "scenario": name,
                        "window": verdict.window,
                        "robustness": verdict.robustness,
                        "lo": verdict.interval[0],
                        "hi": verdict.interval[1],
                        "label": verdict.label.value,
                        "detect_time": verdict.detect_time,
                    }
                )
                summary[name] = verdict.label.value
                logger.info(f"{name}: baseline {verdict.label.value} (robustness {verdict.robustness:.4g})")

            manifest.add_output(str(out), ctx.store.save_table(out, rows, BASELINE_COLUMNS))
            manifest.metadata["baseline_interval"] = list(profile.interval)
            manifest.metadata["verdicts"] = summary
            return manifest

        except Exception as e:
            logger.error(f"Baseline failed: {e}")
            manifest.add_error(self.stage_name, str(e))
            raise


# Global instance
baseline_agent = BaselineAgent()
