import logging
from pathlib import Path
from typing import List, Sequence, Union

from src.models.coefficients import MiningConfig, RnnStructure
from src.models.run import CaseConfig
from src.models.scenario import typed_plant_params
from src.models.system import LinearOdeSystem, SystemTemplate, Trace
from src.tools.dih_rnn import induce_structure
from src.tools.plants import plant_template, predictor_system

logger = logging.getLogger(__name__)


class CaseContext:
    """A case config resolved into the objects every stage works with."""

    def __init__(self, case: CaseConfig):
        self.case = case
        self.params = typed_plant_params(case.plant, case.params)
        template = case.template or plant_template(case.plant, self.params)
        self.template: SystemTemplate = template.pin(case.pinned)
        self.structure: RnnStructure = induce_structure(self.template)
        self._store = None
        if case.pinned:
            logger.info(f"Case {case.name}: holding {case.pinned} at their template values")
        logger.debug(f"Case {case.name}: structure {self.structure.structure_hash} with {self.structure.size} coefficients")

    @property
    def store(self):
        if self._store is None:
            from src.storage.artifact_store import store
            self._store = store
        return self._store

    @property
    def system(self) -> LinearOdeSystem:
        return self.template.system

    @property
    def mining(self) -> MiningConfig:
        return self.case.pipeline.mining

    def predictor(self) -> LinearOdeSystem:
        return predictor_system(self.case.plant, self.params)

    def load_traces(self, paths: Sequence[Path], system: Union[LinearOdeSystem, None] = None) -> List[Trace]:
        system = system or self.system
        return [self.store.load_trace(path, system) for path in paths]


def expand_trace_paths(paths: Sequence[Union[str, Path]]) -> List[Path]:
    """Files as given; directories contribute their *.csv files in name order."""
    expanded: List[Path] = []
    for path in map(Path, paths):
        if path.is_dir():
            expanded.extend(sorted(p for p in path.glob("*.csv")))
        else:
            expanded.append(path)
    return expanded
