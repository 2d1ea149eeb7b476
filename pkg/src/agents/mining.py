import logging
from pathlib import Path

from src.agents.case_context import CaseContext
from src.models.run import RunManifest
from src.tools.plants import physical_view

logger = logging.getLogger(__name__)


class MiningAgent:
    """Continuous coefficient mining of one trace."""

    def __init__(self):
        self.stage_name = "mining"
        self._dih_rnn = None

    @property
    def dih_rnn(self):
        if self._dih_rnn is None:
            from src.tools import dih_rnn
            self._dih_rnn = dih_rnn
        return self._dih_rnn

    def run(self, manifest: RunManifest, ctx: CaseContext, trace_path: Path, out: Path) -> RunManifest:
        manifest.current_stage = self.stage_name
        logger.info(f"Mining {trace_path} with the {ctx.case.name} template")
        try:
            trace = ctx.load_traces([trace_path])[0]
            sequence = self.dih_rnn.continuous_mine(trace, ctx.structure, ctx.mining)

            payload = sequence.to_json_dict()
            payload["physical"] = [physical_view(ctx.case.plant, omega, ctx.template) for omega in sequence.omegas]
            manifest.add_output(str(out), ctx.store.save_json(out, payload))
            manifest.metadata["windows"] = len(sequence)
            manifest.metadata["structure_hash"] = sequence.structure_hash
            logger.info(f"Mined {len(sequence)} window(s) into {out}")
            return manifest

        except Exception as e:
            logger.error(f"Mining failed: {e}")
            manifest.add_error(self.stage_name, str(e), trace=str(trace_path))
            raise


# Global instance
mining_agent = MiningAgent()
