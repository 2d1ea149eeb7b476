import logging
from pathlib import Path
from typing import List

from src.models.run import RunManifest
from src.models.scenario import ScenarioConfig
from src.models.system import Trace
from src.tools.plants import plant_system
from src.tools.scenarios import run_scenario
from src.utils.parallel import parallel_map

logger = logging.getLogger(__name__)

INDEX_NAME = "scenarios.json"


class SimulationAgent:
    """Runs closed-loop scenarios and writes their traces as CSV."""

    def __init__(self):
        self.stage_name = "simulation"
        self._store = None

    @property
    def store(self):
        if self._store is None:
            from src.storage.artifact_store import store
            self._store = store
        return self._store

    def run(self, manifest: RunManifest, configs: List[ScenarioConfig], out: Path, jobs: int = 1) -> RunManifest:
        """Write one CSV to `out` for a single scenario, else one CSV per scenario plus an index in `out/`."""
        out = Path(out)
        manifest.current_stage = self.stage_name
        logger.info(f"Simulating {len(configs)} scenario(s)")
        try:
            traces: List[Trace] = parallel_map(run_scenario, configs, jobs)

            if len(configs) == 1 and out.suffix == ".csv":
                targets = [out]
            else:
                targets = [out / f"{config.name}.csv" for config in configs]

            index = {}
            for config, trace, target in zip(configs, traces, targets):
                system = plant_system(config.plant, config.typed_params())
                manifest.add_output(str(target), self.store.save_trace(target, trace, system))
                index[config.name] = {
                    "file": target.name,
                    "plant": config.plant.value,
                    "fault": config.fault.kind if config.fault is not None else None,
                    "seed": config.seed,
                }
            if targets != [out]:
                index_path = out / INDEX_NAME
                manifest.add_output(str(index_path), self.store.save_json(index_path, index))

            manifest.metadata["scenarios"] = index
            logger.info(f"Simulation complete: {len(targets)} trace(s) under {out}")
            return manifest

        except Exception as e:
            logger.error(f"Simulation failed: {e}")
            manifest.add_error(self.stage_name, str(e))
            raise


# Global instance
simulation_agent = SimulationAgent()
