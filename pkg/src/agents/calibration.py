import logging
from pathlib import Path
from typing import List, Optional

from src.agents.case_context import CaseContext
from src.models.run import RunManifest

logger = logging.getLogger(__name__)


class CalibrationAgent:
    """Reference coefficients and conformal range from error-free traces.

    1. Split the traces into train and test with the run seed
    2. Mine omega_e jointly on train
    3. Mine every test window and calibrate the residue range
    """

    def __init__(self):
        self.stage_name = "calibration"
        self._conformal = None

    @property
    def conformal(self):
        if self._conformal is None:
            from src.tools import conformal
            self._conformal = conformal
        return self._conformal

    def run(
        self,
        manifest: RunManifest,
        ctx: CaseContext,
        trace_paths: List[Path],
        out: Path,
        seed: Optional[int] = None,
    ) -> RunManifest:
        manifest.current_stage = self.stage_name
        pipeline = ctx.case.pipeline
        split_seed = pipeline.split_seed if pipeline.split_seed is not None else (seed or 0)
        logger.info(f"Calibrating {ctx.case.name} on {len(trace_paths)} error-free trace(s)")
        try:
            traces = ctx.load_traces(trace_paths)
            indices = list(range(len(traces)))
            train_idx, test_idx = self.conformal.split_error_free(indices, seed=split_seed, train_fraction=pipeline.train_fraction)
            manifest.metadata["train"] = [str(trace_paths[i]) for i in train_idx]
            manifest.metadata["test"] = [str(trace_paths[i]) for i in test_idx]

            warnings: List[str] = []
            profile = self.conformal.calibrate(
                [traces[i] for i in train_idx],
                [traces[i] for i in test_idx],
                ctx.structure,
                ctx.mining,
                miscoverage=pipeline.miscoverage,
                residue_offset=pipeline.residue_offset,
                center_policy=pipeline.center_policy,
                warnings=warnings,
            )
            for warning in warnings:
                manifest.add_warning(warning)

            manifest.add_output(str(out), ctx.store.save_json(out, profile.to_json_dict()))
            manifest.metadata["interval"] = list(profile.interval)
            logger.info(f"Calibration complete: interval [{profile.lo:.4g}, {profile.hi:.4g}]")
            return manifest

        except Exception as e:
            logger.error(f"Calibration failed: {e}")
            manifest.add_error(self.stage_name, str(e))
            raise


# Global instance
calibration_agent = CalibrationAgent()
