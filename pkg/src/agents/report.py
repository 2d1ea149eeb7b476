import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

import pandas as pd

from src.models.run import RunManifest

logger = logging.getLogger(__name__)


def detection_metrics(rows: List[Dict[str, Any]], key: str) -> Dict[str, Any]:
    """Confusion counts, TPR and PPV over scenarios with a verdict under `key`."""
    tp = fp = fn = tn = 0
    for row in rows:
        detected = row.get(key)
        if detected is None:
            continue
        faulty = row["faulty"]
        if faulty and detected:
            tp += 1
        elif faulty:
            fn += 1
        elif detected:
            fp += 1
        else:
            tn += 1
    return {
        "tp": tp,
        "fp": fp,
        "fn": fn,
        "tn": tn,
        "tpr": tp / (tp + fn) if tp + fn else None,
        "ppv": tp / (tp + fp) if tp + fp else None,
    }


def _coefficient_rows(df: pd.DataFrame) -> Dict[str, Dict[str, Any]]:
    out = {}
    for name, group in df.groupby("scenario", sort=True):
        group = group.sort_values("window")
        hits = group[group["label"] == "D"]
        first = hits.iloc[0] if len(hits) else None
        out[str(name)] = {
            "detected": bool(len(hits)),
            "window": int(first["window"]) if first is not None else None,
            "detect_time": float(first["t0"]) if first is not None else None,
            "max_residue": float(group["residue"].max()),
            "residues": [float(r) for r in group["residue"]],
            "interval": [float(group["lo"].iloc[0]), float(group["hi"].iloc[0])],
        }
    return out


def _baseline_rows(df: pd.DataFrame) -> Dict[str, Dict[str, Any]]:
    out = {}
    for row in df.sort_values("scenario").to_dict(orient="records"):
        detected = row["label"] == "D"
        out[str(row["scenario"])] = {
            "baseline_detected": detected,
            "baseline_window": int(row["window"]) if detected else None,
            "baseline_detect_time": float(row["detect_time"]) if detected else None,
            "baseline_robustness": float(row["robustness"]),
        }
    return out


class ReportAgent:
    """Tabulates verdicts per scenario, detection rates and the latency comparison."""

    def __init__(self):
        self.stage_name = "report"
        self._store = None
        self._plotting = None

    @property
    def store(self):
        if self._store is None:
            from src.storage.artifact_store import store
            self._store = store
        return self._store

    @property
    def plotting(self):
        if self._plotting is None:
            from src.tools import plotting
            self._plotting = plotting
        return self._plotting

    def build(self, verdict_paths: List[Path], index: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
        coefficient: Dict[str, Dict[str, Any]] = {}
        baseline: Dict[str, Dict[str, Any]] = {}
        for path in verdict_paths:
            df = self.store.load_table(path)
            if df.empty:
                continue
            if "residue" in df.columns:
                coefficient.update(_coefficient_rows(df))
            else:
                baseline.update(_baseline_rows(df))

        rows = []
        for name in sorted(set(coefficient) | set(baseline)):
            entry = (index or {}).get(name)
            fault = entry.get("fault") if entry else None
            row: Dict[str, Any] = {
                "scenario": name,
                "fault": fault,
                # without an index every scenario is taken as fault-injected
                "faulty": fault is not None if index is not None else True,
                "detected": None,
            }
            row.update(coefficient.get(name, {}))
            row.update(baseline.get(name, {}))
            rows.append(row)

        both = [r for r in rows if r.get("detected") and r.get("baseline_detected")]
        not_later = [r for r in both if r["detect_time"] <= r["baseline_detect_time"]]
        return {
            "scenarios": rows,
            "coefficient": detection_metrics(rows, "detected"),
            "baseline": detection_metrics(rows, "baseline_detected"),
            "latency": {"both_detected": len(both), "coefficient_not_later": len(not_later)},
        }

    def run(
        self,
        manifest: RunManifest,
        verdict_paths: List[Path],
        out: Path,
        index_path: Optional[Path] = None,
    ) -> RunManifest:
        manifest.current_stage = self.stage_name
        logger.info(f"Building report from {len(verdict_paths)} verdict file(s)")
        try:
            index = self.store.load_json(index_path) if index_path is not None else None
            if index is None:
                manifest.add_warning("No scenario index given; every scenario is counted as fault-injected")
            report = self.build(verdict_paths, index)
            manifest.add_output(str(out), self.store.save_json(out, report))

            rows = report["scenarios"]
            residues = {r["scenario"]: r["residues"] for r in rows if r.get("residues")}
            if residues:
                interval = next(r["interval"] for r in rows if r.get("residues"))
                figure = self.plotting.plot_residues(residues, tuple(interval), Path(out).with_suffix(".residues.svg"))
                manifest.add_output(str(figure), self.store.sha256(figure))
            if any(r.get("baseline_detected") is not None for r in rows):
                figure = self.plotting.plot_latency(rows, Path(out).with_suffix(".latency.svg"))
                manifest.add_output(str(figure), self.store.sha256(figure))

            metrics = report["coefficient"]
            logger.info(
                f"Report: {metrics['tp']} true positive(s), {metrics['fp']} false positive(s) over {len(rows)} scenario(s)"
            )
            return manifest

        except Exception as e:
            logger.error(f"Report failed: {e}")
            manifest.add_error(self.stage_name, str(e))
            raise


# Global instance
report_agent = ReportAgent()
