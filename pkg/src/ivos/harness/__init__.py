"""Dataset ingestion, benchmark runner, report emission, session service,
checkpoints, and the command-line entry points."""

from .dataset import (DatasetIndex, SequenceEntry, decode_label_png,
                      encode_label_png, export_dataset, label_palette,
                      load_dataset, load_sequence)
from .bench import EvaluationReport, emit_report, run_benchmark
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "DatasetIndex", "SequenceEntry", "decode_label_png", "encode_label_png",
    "export_dataset", "label_palette", "load_dataset", "load_sequence",
    "EvaluationReport", "emit_report", "run_benchmark",
    "load_checkpoint", "save_checkpoint",
]
