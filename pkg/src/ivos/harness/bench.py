"""Benchmark runner and report emission.

Every sequence runs with three seeded prompt initializations; each session's
per-round mean scores and cumulative times make one curve, and aggregate
AUC / interpolated-at-60s numbers are means over all curves. With the
deterministic step timer (the default) two runs with the same seed produce
byte-identical reports and checkpoints.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Set

import numpy as np

from ..core import RunConfig, stable_u64
from ..engine import StepTimer, WallTimer, run_simulated_session
from ..metrics import TimeCurve, auc, score_at
from .checkpoint import save_checkpoint
from .dataset import DatasetIndex, SequenceEntry, load_sequence

REPORT_FORMAT = "ivos-report/1"
INTERP_AT_SECONDS = 60.0

BackendFactory = Callable[[SequenceEntry, int], object]


@dataclass
class SequenceRun:
    sequence: str
    init: int
    t_max: float
    rounds: List[dict]

    def curve(self, key: str) -> TimeCurve:
        return TimeCurve(np.array([r["time"] for r in self.rounds]),
                         np.array([r[key] for r in self.rounds]),
                         t_max=self.t_max)


@dataclass
class EvaluationReport:
    config: dict
    seed: int
    inits: int
    runs: List[SequenceRun] = field(default_factory=list)
    aggregates: Dict[str, float] = field(default_factory=dict)
    partial: bool = False
    failures: List[dict] = field(default_factory=list)

    def to_doc(self) -> dict:
        return {
            "format": REPORT_FORMAT,
            "config": self.config,
            "seed": self.seed,
            "inits": self.inits,
            "partial": self.partial,
            "failures": self.failures,
            "aggregates": self.aggregates,
            "sequences": [
                {"sequence": r.sequence, "init": r.init, "t_max": r.t_max,
                 "rounds": r.rounds}
                for r in self.runs
            ],
        }


def _aggregate(runs: Sequence[SequenceRun]) -> Dict[str, float]:
    if not runs:
        return {}
    auc_j, j60, auc_jf, jf60 = [], [], [], []
    for run in runs:
        cj = run.curve("j")
        cjf = run.curve("jf")
        auc_j.append(auc(cj))
        j60.append(score_at(cj, INTERP_AT_SECONDS))
        auc_jf.append(auc(cjf))
        jf60.append(score_at(cjf, INTERP_AT_SECONDS))
    return {
        "auc_j": float(np.mean(auc_j)),
        "j_at_60s": float(np.mean(j60)),
        "auc_jf": float(np.mean(auc_jf)),
        "jf_at_60s": float(np.mean(jf60)),
    }


def run_benchmark(index: DatasetIndex, cfg: RunConfig,
                  backend_factory: BackendFactory, inits: int = 3,
                  wall_clock: bool = False, timer_step: float = 1.0,
                  t_max_override: Optional[float] = None,
                  out_dir=None,
                  sequences: Optional[Sequence[str]] = None,
                  source_extra: Optional[dict] = None) -> EvaluationReport:
    """Simulated evaluation over a dataset index.

    ``backend_factory(entry, session_seed)`` supplies the Backends for each
    (sequence, initialization); the session seed is a stable hash of the run
    seed, the sequence name and the initialization index.
    """
    report = EvaluationReport(config=cfg.to_dict(), seed=cfg.rng_seed,
                              inits=inits)
    out_path = Path(out_dir) if out_dir is not None else None
    names = list(sequences) if sequences else index.names
    for name in names:
        entry = index.sequence(name)
        try:
            frames, refs = load_sequence(entry)
            n_objects = max(1, len(entry.object_ids))
            t_max = t_max_override if t_max_override is not None else \
                cfg.num_rounds * cfg.per_object_time_cap * n_objects
            for init in range(inits):
                session_seed = stable_u64(cfg.rng_seed, entry.name, init)
                backends = backend_factory(entry, session_seed)
                timer = WallTimer() if wall_clock else StepTimer(timer_step)
                tag = f"{entry.name}/init{init}"
                session, tables = run_simulated_session(
                    frames, refs, cfg, backends, timer, prompt_stream_tag=tag)
                rounds = []
                for r, (record, table) in enumerate(
                        zip(session.records, tables), start=1):
                    rounds.append({
                        "round": r,
                        "frame_index": record.frame_index,
                        "time": record.timestamp,
                        "j": float(table.j.mean()),
                        "f": float(table.f.mean()),
                        "jf": float(table.jf.mean()),
                    })
                report.runs.append(SequenceRun(entry.name, init, t_max, rounds))
                if out_path is not None:
                    ck_dir = out_path / "checkpoints"
                    ck_dir.mkdir(parents=True, exist_ok=True)
                    source = {"kind": "dataset", "sequence": entry.name,
                              "init": init, "session_seed": session_seed,
                              "prompt_stream_tag": tag}
                    source.update(source_extra or {})
                    save_checkpoint(
                        session, cfg, source=source,
                        path=ck_dir / f"{entry.name}_init{init}.ckpt")
        except Exception as exc:
            report.partial = True
            report.failures.append({"sequence": name, "error": str(exc)})
    report.aggregates = _aggregate(report.runs)
    return report


def emit_report(report: EvaluationReport, formats: Set[str],
                out_dir) -> Dict[str, Path]:
    """Write the requested report files; returns {format: path}."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: Dict[str, Path] = {}
    known = {"json", "csv", "curve-points"}
    unknown = set(formats) - known
    if unknown:
        raise ValueError(f"unknown report formats: {sorted(unknown)}")
    if "json" in formats:
        path = out / "report.json"
        path.write_text(json.dumps(report.to_doc(), indent=2, sort_keys=True)
                        + "\n")
        written["json"] = path
    if "csv" in formats:
        path = out / "report.csv"
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["record", "sequence", "init", "round", "frame_index",
                         "time", "j", "f", "jf", "metric", "value", "partial"])
        for run in report.runs:
            for row in run.rounds:
                writer.writerow(["round", run.sequence, run.init,
                                 row["round"], row["frame_index"],
                                 repr(row["time"]), repr(row["j"]),
                                 repr(row["f"]), repr(row["jf"]), "", "",
                                 int(report.partial)])
        for metric, value in sorted(report.aggregates.items()):
            writer.writerow(["aggregate", "", "", "", "", "", "", "", "",
                             metric, repr(value), int(report.partial)])
        path.write_text(buf.getvalue())
        written["csv"] = path
    if "curve-points" in formats:
        path = out / "curves.csv"
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["time", "score"])
        for run in report.runs:
            for row in run.rounds:
                writer.writerow([repr(row["time"]), repr(row["jf"])])
        path.write_text(buf.getvalue())
        written["curve-points"] = path
    return written
