import logging
from pathlib import Path
from typing import List, Optional, Tuple

from pydantic import ValidationError

from src.agents.case_context import CaseContext
from src.models.coefficients import MiningConfig, RnnStructure
from src.models.conformal import CalibrationProfile, Verdict
from src.models.run import RunManifest
from src.models.system import Trace
from src.utils.errors import ConfigValidationError, DivergenceError, MiningConvergenceError, StepBoundError
from src.utils.parallel import parallel_map

logger = logging.getLogger(__name__)

VERDICT_COLUMNS = ["scenario", "window", "t0", "residue", "lo", "hi", "label"]

DetectTask = Tuple[str, Trace, RnnStructure, MiningConfig, CalibrationProfile]


def mine_and_detect(task: DetectTask) -> Tuple[str, List[Verdict], Optional[str]]:
    """Verdicts for every window of one trace, or the mining failure message."""
    from src.tools.conformal import detect_sequence
    from src.tools.dih_rnn import continuous_mine

    name, trace, structure, cfg, profile = task
    try:
        sequence = continuous_mine(trace, structure, cfg, initial=profile.omega_e)
    except (MiningConvergenceError, DivergenceError, StepBoundError) as e:
        return name, [], str(e)
    return name, detect_sequence(sequence, profile), None


def load_profile(ctx: CaseContext, path: Path) -> CalibrationProfile:
    data = ctx.store.load_json(path)
    try:
        return CalibrationProfile.from_json_dict(data, ctx.structure)
    except KeyError as e:
        raise ConfigValidationError(f"{path}: {e.args[0]}: Field required")
    except ValidationError as e:
        first = e.errors()[0]
        location = ".".join(str(part) for part in first["loc"])
        raise ConfigValidationError(f"{path}: {location}: {first['msg']}")


class DetectionAgent:
    """Mines each trace against a calibration profile and labels every window."""

    def __init__(self):
        self.stage_name = "detection"

    def run(
        self,
        manifest: RunManifest,
        ctx: CaseContext,
        profile_path: Path,
        trace_paths: List[Path],
        out: Path,
        jobs: int = 1,
    ) -> RunManifest:
        """A trace counts as detected when any of its windows is. Mining failures are recorded per trace."""
        manifest.current_stage = self.stage_name
        logger.info(f"Detecting on {len(trace_paths)} trace(s) against {profile_path}")
        try:
            profile = load_profile(ctx, profile_path)
            traces = ctx.load_traces(trace_paths)
            tasks = [
                (Path(path).stem, trace, ctx.structure, ctx.mining, profile)
                for path, trace in zip(trace_paths, traces)
            ]
            results = parallel_map(mine_and_detect, tasks, jobs)

            rows = []
            summary = {}
            for name, verdicts, failure in results:
                if failure is not None:
                    logger.error(f"Mining failed for {name}: {failure}")
                    manifest.add_error(self.stage_name, failure, scenario=name)
                    continue
                for v in verdicts:
                    rows.append(
                        {
                            "scenario": name,
                            "window": v.window,
                            "t0": v.t0,
                            "residue": v.residue,
                            "lo": v.interval[0],
                            "hi": v.interval[1],
                            "label": v.label.value,
                        }
                    )
                summary[name] = "D" if any(v.detected for v in verdicts) else "ND"
                logger.info(f"{name}: {summary[name]} (max residue {max(v.residue for v in verdicts):.4g})")

            manifest.add_output(str(out), ctx.store.save_table(out, rows, VERDICT_COLUMNS))
            manifest.metadata["verdicts"] = summary
            return manifest

        except Exception as e:
            logger.error(f"Detection failed: {e}")
            manifest.add_error(self.stage_name, str(e))
            raise


# Global instance
detection_agent = DetectionAgent()
