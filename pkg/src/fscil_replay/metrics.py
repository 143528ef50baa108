"""Session accuracy, prediction entropy, replay label histograms and report export."""
from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ContractViolation
from .models import argmax_class

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
CSV_HEADER = ("session", "accuracy", "n_test_classes", "n_test_examples")


def _predict(model, features: np.ndarray, batch: int = 2048) -> np.ndarray:
    out = [model.logits(features[i:i + batch]) for i in range(0, len(features), batch)]
    return np.concatenate(out) if out else np.zeros((0, model.n_classes))


def cumulative_accuracy(model, test) -> float:
    """Top-1 accuracy over every output class of ``model``; ties go to the lowest id."""
    missing = set(test.class_ids) - set(model.class_ids)
    if missing:
        raise ContractViolation(f"model has no outputs for test classes {sorted(missing)}")
    if len(test) == 0:
        raise ContractViolation("empty test set")
    pred = argmax_class(_predict(model, test.features), model.class_ids)
    return float(np.mean(pred == test.labels))


def base_accuracy(model, test, base_class_ids: Sequence[int]) -> float:
    """Accuracy on the test examples of ``base_class_ids``, argmax over all outputs."""
    mask = np.isin(test.labels, list(base_class_ids))
    if not mask.any():
        raise ContractViolation("test set holds no base-class examples")
    pred = argmax_class(_predict(model, test.features[mask]), model.class_ids)
    return float(np.mean(pred == test.labels[mask]))


def softmax_entropy(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=1, keepdims=True)
    log_p = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return -(np.exp(log_p) * log_p).sum(axis=1)


def per_class_entropy(model, test, class_ids: Optional[Sequence[int]] = None) -> dict:
    """Mean softmax entropy (nats) of the model's outputs, grouped by true class."""
    ids = test.class_ids if class_ids is None else class_ids
    ent = softmax_entropy(_predict(model, test.features))
    out = {}
    for c in ids:
        mask = test.labels == c
        if not mask.any():
            warnings.warn(f"class {c} has no test examples; omitted from the entropy map", stacklevel=2)
            continue
        out[int(c)] = float(ent[mask].mean())
    return out


def replay_label_histogram(batch, class_count: int) -> np.ndarray:
    """Zero-filled count of replay labels per class id ``0 .. class_count-1``."""
    labels = np.asarray(getattr(batch, "labels", batch), dtype=np.int64).reshape(-1)
    if labels.size and (labels.min() < 0 or labels.max() >= class_count):
        bad = labels[(labels < 0) | (labels >= class_count)][0]
        raise ContractViolation(f"label {bad} outside [0, {class_count})")
    return np.bincount(labels, minlength=class_count)


@dataclass
class SessionReport:
    per_session_accuracy: list = field(default_factory=list)
    average_accuracy: float = 0.0
    per_session_base_accuracy: list = field(default_factory=list)
    n_test_classes: list = field(default_factory=list)
    n_test_examples: list = field(default_factory=list)
    per_class_entropy: dict = field(default_factory=dict)
    incremental_class_ids: list = field(default_factory=list)
    replay_histograms: list = field(default_factory=list)
    replay_drawn: list = field(default_factory=list)
    config_hash: str = ""
    seed: int = 0
    schema_version: int = SCHEMA_VERSION
    final_model: object = field(default=None, repr=False, compare=False)

    def add_session(self, accuracy: float, base_accuracy: float, n_test_classes: int, n_test_examples: int,
                    replay_histogram: dict, replay_drawn: int) -> None:
        if not 0.0 <= accuracy <= 1.0:
            raise ContractViolation(f"accuracy {accuracy} outside [0, 1]")
        if sum(replay_histogram.values()) != replay_drawn:
            raise ContractViolation("replay histogram does not sum to the number of samples drawn")
        self.per_session_accuracy.append(float(accuracy))
        self.per_session_base_accuracy.append(float(base_accuracy))
        self.n_test_classes.append(int(n_test_classes))
        self.n_test_examples.append(int(n_test_examples))
        self.replay_histograms.append({int(k): int(v) for k, v in sorted(replay_histogram.items())})
        self.replay_drawn.append(int(replay_drawn))
        self.average_accuracy = float(np.mean(self.per_session_accuracy))

    @property
    def final_accuracy(self) -> float:
        return self.per_session_accuracy[-1]

    def entropy_gap(self) -> float:
        """Mean entropy over incremental classes minus mean over base classes."""
        inc = set(self.incremental_class_ids)
        new = [v for c, v in self.per_class_entropy.items() if c in inc]
        old = [v for c, v in self.per_class_entropy.items() if c not in inc]
        return float(np.mean(new) - np.mean(old))

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "per_session_accuracy": self.per_session_accuracy,
            "average_accuracy": self.average_accuracy,
            "per_session_base_accuracy": self.per_session_base_accuracy,
            "n_test_classes": self.n_test_classes,
            "n_test_examples": self.n_test_examples,
            "per_class_entropy": {str(k): v for k, v in sorted(self.per_class_entropy.items())},
            "incremental_class_ids": list(self.incremental_class_ids),
            "replay_histograms": [{str(k): v for k, v in h.items()} for h in self.replay_histograms],
            "replay_drawn": self.replay_drawn,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SessionReport":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ContractViolation(f"unsupported report schema version {d.get('schema_version')!r}")
        return cls(
            per_session_accuracy=list(d["per_session_accuracy"]),
            average_accuracy=d["average_accuracy"],
            per_session_base_accuracy=list(d["per_session_base_accuracy"]),
            n_test_classes=list(d["n_test_classes"]),
            n_test_examples=list(d["n_test_examples"]),
            per_class_entropy={int(k): v for k, v in d["per_class_entropy"].items()},
            incremental_class_ids=list(d["incremental_class_ids"]),
            replay_histograms=[{int(k): v for k, v in h.items()} for h in d["replay_histograms"]],
            replay_drawn=list(d["replay_drawn"]),
            config_hash=d["config_hash"],
            seed=d["seed"],
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def final_improvement(report_a: SessionReport, report_b: SessionReport) -> float:
    """Final-session accuracy of A minus that of B."""
    return report_a.final_accuracy - report_b.final_accuracy


def export_report(report: SessionReport, path, format: str = "json") -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if format == "json":
            path.write_text(report.to_json())
        elif format == "csv":
            with path.open("w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(CSV_HEADER)
                for i, acc in enumerate(report.per_session_accuracy):
                    w.writerow([i, repr(acc), report.n_test_classes[i], report.n_test_examples[i]])
        else:
            raise ContractViolation(f"unknown report format {format!r}")
    except OSError as exc:
        raise OSError(f"could not write report to {path}: {exc.strerror}") from exc
    return path


def load_report(path) -> SessionReport:
    path = Path(path)
    if path.suffix == ".csv":
        with path.open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        rep = SessionReport()
        for r in rows:
            rep.per_session_accuracy.append(float(r["accuracy"]))
            rep.n_test_classes.append(int(r["n_test_classes"]))
            rep.n_test_examples.append(int(r["n_test_examples"]))
        rep.average_accuracy = float(np.mean(rep.per_session_accuracy)) if rows else 0.0
        return rep
    return SessionReport.from_dict(json.loads(path.read_text()))
