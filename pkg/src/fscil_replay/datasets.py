"""
Synthetic datasets, the few-shot session split, and the manifest + CSV file format.

Two desk-scale problem families:

* ``gen_toy_gaussians`` - labelled 2-D Gaussian clusters (decision-boundary toy).
* ``gen_pattern_set`` - ``size x size`` oriented sinusoid templates plus noise,
  a stand-in for small natural-image benchmarks.

``split_sessions`` turns a labelled train/test pair into a base session followed
by ``way``-way ``shot``-shot incremental sessions with cumulative test sets.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ContractViolation, DatasetFormatError

FORMAT_VERSION = 1


@dataclass
class SessionDataset:
    """Labelled examples for one session.

    ``features`` is stored flat as ``[n, prod(feature_shape)]`` float32.
    ``generated`` flags replayed (synthetic) rows; real rows are False.
    """

    features: np.ndarray
    labels: np.ndarray
    session_index: int = 0
    class_ids: Optional[tuple] = None
    feature_shape: Optional[tuple] = None
    generated: Optional[np.ndarray] = None

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float32)
        if feats.ndim == 1:
            feats = feats.reshape(-1, 1)
        if feats.ndim > 2:
            if self.feature_shape is None:
                self.feature_shape = feats.shape[1:]
            feats = feats.reshape(len(feats), -1)
        self.features = feats
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if len(self.labels) != len(feats):
            raise ContractViolation(f"{len(feats)} feature rows but {len(self.labels)} labels")
        if self.feature_shape is None:
            self.feature_shape = (feats.shape[1],)
        self.feature_shape = tuple(int(s) for s in self.feature_shape)
        if int(np.prod(self.feature_shape)) != feats.shape[1]:
            raise ContractViolation(f"feature_shape {self.feature_shape} does not match row width {feats.shape[1]}")
        if not np.isfinite(feats).all():
            raise ContractViolation("dataset features must be finite")
        present = tuple(sorted(set(self.labels.tolist())))
        if self.class_ids is None:
            self.class_ids = present
        self.class_ids = tuple(sorted(int(c) for c in self.class_ids))
        missing = set(present) - set(self.class_ids)
        if missing:
            raise ContractViolation(f"labels {sorted(missing)} are not in class_ids {self.class_ids}")
        if self.generated is None:
            self.generated = np.zeros(len(feats), dtype=bool)
        self.generated = np.asarray(self.generated, dtype=bool).reshape(-1)
        if len(self.generated) != len(feats):
            raise ContractViolation("provenance flags must have one entry per example")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]

    def class_counts(self) -> dict:
        counts = {c: 0 for c in self.class_ids}
        for c, n in zip(*np.unique(self.labels, return_counts=True)):
            counts[int(c)] = int(n)
        return counts

    def select(self, mask_or_index, class_ids=None, session_index=None) -> "SessionDataset":
        return SessionDataset(
            self.features[mask_or_index],
            self.labels[mask_or_index],
            self.session_index if session_index is None else session_index,
            class_ids,
            self.feature_shape,
            self.generated[mask_or_index],
        )

    def of_classes(self, class_ids: Sequence[int]) -> "SessionDataset":
        ids = tuple(sorted(int(c) for c in class_ids))
        return self.select(np.isin(self.labels, ids), class_ids=ids)


@dataclass
class ProtocolSpec:
    base_class_count: int
    way: int
    shot: int
    session_count: int
    test_per_class: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if self.base_class_count < 2:
            raise ContractViolation("the base session needs at least 2 classes")
        if self.way < 1 or self.shot < 1 or self.session_count < 0:
            raise ContractViolation(f"invalid protocol shape way={self.way} shot={self.shot} sessions={self.session_count}")

    @property
    def total_classes(self) -> int:
        return self.base_class_count + self.session_count * self.way


# -- generators ---------------------------------------------------------------

def gen_toy_gaussians(class_specs: Sequence, seed: int, class_ids: Optional[Sequence[int]] = None) -> SessionDataset:
    """Sample ``count`` points per ``(mean, covariance, count)`` class spec.

    Covariances must be symmetric positive semi-definite. Sampling goes through
    the eigendecomposition, so a zero covariance returns the mean exactly.
    """
    rng = np.random.default_rng(seed)
    ids = list(range(len(class_specs))) if class_ids is None else [int(c) for c in class_ids]
    if len(ids) != len(class_specs):
        raise ContractViolation("one class id per class spec is required")
    feats, labels = [], []
    for cid, (mean, cov, count) in zip(ids, class_specs):
        mean = np.asarray(mean, dtype=np.float64)
        cov = np.asarray(cov, dtype=np.float64)
        if cov.shape != (mean.size, mean.size) or not np.allclose(cov, cov.T):
            raise ContractViolation(f"class {cid}: covariance must be a symmetric {mean.size}x{mean.size} matrix")
        w, v = np.linalg.eigh(cov)
        if w.min() < -1e-10 * max(1.0, abs(w).max()):
            raise ContractViolation(f"class {cid}: covariance is not positive semi-definite (eigenvalue {w.min():.3g})")
        root = v * np.sqrt(np.clip(w, 0.0, None))
        z = rng.standard_normal((int(count), mean.size))
        feats.append(mean + z @ root.T)
        labels.append(np.full(int(count), cid))
    return SessionDataset(np.concatenate(feats), np.concatenate(labels), class_ids=ids)


def pattern_templates(classes: int, size: int, seed: int) -> np.ndarray:
    """One oriented sinusoid per class, ``[classes, size*size]`` in [-1, 1]."""
    rng = np.random.default_rng(seed)
    u, v = np.meshgrid(np.arange(size) / size, np.arange(size) / size, indexing="ij")
    out = np.empty((classes, size * size))
    for c in range(classes):
        freq = rng.uniform(0.5, 2.5)
        theta = rng.uniform(0, np.pi)
        phase = rng.uniform(0, 2 * np.pi)
        wave = np.cos(2 * np.pi * freq * (u * np.cos(theta) + v * np.sin(theta)) + phase)
        out[c] = wave.reshape(-1)
    return out


def gen_pattern_set(classes: int, per_class: int, size: int, seed: int, noise: float = 0.3,
                    template_seed: Optional[int] = None) -> SessionDataset:
    """Noisy copies of per-class sinusoid templates, clipped to [-1, 1].

    ``template_seed`` fixes the class templates independently of the per-example
    noise, so a train and a test draw can share classes.
    """
    if size < 4:
        raise ContractViolation(f"pattern size must be >= 4, got {size}")
    templates = pattern_templates(classes, size, seed if template_seed is None else template_seed)
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(classes), per_class)
    feats = templates[labels] + noise * rng.standard_normal((len(labels), size * size))
    return SessionDataset(np.clip(feats, -1.0, 1.0), labels, feature_shape=(size, size), class_ids=range(classes))


# -- session split ------------------------------------------------------------

def split_sessions(train: SessionDataset, test: SessionDataset, spec: ProtocolSpec) -> tuple:
    """Partition into base + incremental sessions.

    Classes are taken in ascending id order. Session 0 holds every training
    example of the first ``base_class_count`` classes; session ``i`` holds
    ``shot`` examples (seeded, without replacement) of each of its ``way`` new
    classes. Test element ``i`` covers every class seen through session ``i``.
    """
    classes = list(train.class_ids)
    if spec.total_classes > len(classes):
        raise ContractViolation(
            f"protocol needs {spec.total_classes} classes but the training set has {len(classes)} "
            f"(deficit {spec.total_classes - len(classes)})"
        )
    rng = np.random.default_rng(spec.seed)
    session_classes = [classes[:spec.base_class_count]]
    for i in range(spec.session_count):
        start = spec.base_class_count + i * spec.way
        session_classes.append(classes[start:start + spec.way])

    counts = train.class_counts()
    test_counts = test.class_counts()
    sessions, tests, seen = [], [], []
    for idx, cls in enumerate(session_classes):
        if idx == 0:
            sess = train.of_classes(cls)
        else:
            picks = []
            for c in cls:
                rows = np.flatnonzero(train.labels == c)
                if counts.get(c, 0) < spec.shot:
                    raise ContractViolation(
                        f"class {c} has {counts.get(c, 0)} training examples, {spec.shot} required "
                        f"(deficit {spec.shot - counts.get(c, 0)})"
                    )
                picks.append(np.sort(rng.choice(rows, size=spec.shot, replace=False)))
            sess = train.select(np.concatenate(picks), class_ids=cls)
        sess.session_index = idx
        sessions.append(sess)
        seen.extend(cls)
        for c in cls:
            if test_counts.get(c, 0) == 0:
                raise ContractViolation(f"class {c} has no test examples")
        t = test.of_classes(seen)
        if spec.test_per_class is not None:
            keep = np.concatenate([np.flatnonzero(t.labels == c)[:spec.test_per_class] for c in seen])
            t = t.select(np.sort(keep), class_ids=t.class_ids)
        t.session_index = idx
        tests.append(t)
    return sessions, tests


# -- presets ------------------------------------------------------------------

TOY_BASE_ANGLES = (90.0, 210.0, 330.0)
TOY_NOVEL_ANGLES = (30.0, 150.0, 270.0)


@dataclass
class ToyConfig:
    radius: float = 0.6
    std: float = 0.09
    train_per_class: int = 200
    test_per_class: int = 100
    base_angles: tuple = TOY_BASE_ANGLES
    novel_angles: tuple = TOY_NOVEL_ANGLES


def toy_class_specs(cfg: ToyConfig, count: int) -> list:
    specs = []
    for angle in (*cfg.base_angles, *cfg.novel_angles):
        a = np.deg2rad(angle)
        specs.append(([cfg.radius * np.cos(a), cfg.radius * np.sin(a)], np.eye(2) * cfg.std ** 2, count))
    return specs


def make_toy_protocol(seed: int = 0, cfg: Optional[ToyConfig] = None, shot: int = 5) -> tuple:
    """3 base Gaussian clusters + 3 one-way ``shot``-shot sessions, all inside [-1, 1]^2."""
    cfg = cfg or ToyConfig()
    train = gen_toy_gaussians(toy_class_specs(cfg, cfg.train_per_class), seed=seed)
    test = gen_toy_gaussians(toy_class_specs(cfg, cfg.test_per_class), seed=seed + 10_007)
    spec = ProtocolSpec(len(cfg.base_angles), 1, shot, len(cfg.novel_angles), seed=seed)
    return split_sessions(train, test, spec)


def make_pattern_protocol(seed: int = 0, base_classes: int = 10, way: int = 2, shot: int = 5, sessions: int = 4,
                          size: int = 8, train_per_class: int = 60, test_per_class: int = 30,
                          noise: float = 0.3) -> tuple:
    """Mini-synthetic protocol: ``base_classes`` + ``sessions`` x ``way``-way ``shot``-shot on patterns."""
    total = base_classes + way * sessions
    train = gen_pattern_set(total, train_per_class, size, seed=seed + 1, noise=noise, template_seed=seed)
    test = gen_pattern_set(total, test_per_class, size, seed=seed + 2, noise=noise, template_seed=seed)
    spec = ProtocolSpec(base_classes, way, shot, sessions, seed=seed)
    return split_sessions(train, test, spec)


# -- file format --------------------------------------------------------------

def _paths(path) -> tuple:
    path = Path(path)
    stem = path.with_suffix("") if path.suffix in (".json", ".csv") else path
    return stem.with_suffix(".json"), stem.with_suffix(".csv")


def save_dataset(dataset: SessionDataset, path) -> tuple:
    """Write ``<stem>.json`` (manifest) and ``<stem>.csv`` (label, then features)."""
    manifest_path, body_path = _paths(path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format_version": FORMAT_VERSION,
        "feature_shape": list(dataset.feature_shape),
        "class_ids": list(dataset.class_ids),
        "counts": {str(c): n for c, n in dataset.class_counts().items()},
        "n_examples": len(dataset),
        "session_index": dataset.session_index,
        "generated_rows": np.flatnonzero(dataset.generated).tolist(),
        "body": body_path.name,
    }
    with body_path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["label"] + [f"f{i}" for i in range(dataset.input_dim)])
        for label, row in zip(dataset.labels, dataset.features):
            writer.writerow([int(label)] + ["%.9g" % v for v in row])
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest_path, body_path


def load_dataset(path) -> SessionDataset:
    manifest_path, _ = _paths(path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"manifest is not valid JSON ({exc.msg})", manifest_path, exc.lineno) from None
    for key in ("feature_shape", "class_ids", "counts", "n_examples"):
        if key not in manifest:
            raise DatasetFormatError(f"manifest lacks {key!r}", manifest_path)
    body_path = manifest_path.parent / manifest.get("body", manifest_path.with_suffix(".csv").name)
    width = int(np.prod(manifest["feature_shape"]))
    class_ids = [int(c) for c in manifest["class_ids"]]
    labels, rows = [], []
    with body_path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DatasetFormatError("empty body file", body_path, 1)
        if len(header) != width + 1:
            raise DatasetFormatError(f"header has {len(header)} columns, expected {width + 1}", body_path, 1)
        for line_no, rec in enumerate(reader, start=2):
            if len(rec) != width + 1:
                raise DatasetFormatError(f"row has {len(rec)} columns, expected {width + 1}", body_path, line_no)
            try:
                label = int(rec[0])
                values = [float(v) for v in rec[1:]]
            except ValueError as exc:
                raise DatasetFormatError(f"unparseable value ({exc})", body_path, line_no) from None
            if label not in class_ids:
                raise DatasetFormatError(f"label {label} not among manifest class ids", body_path, line_no)
            labels.append(label)
            rows.append(values)
    if not rows:
        raise DatasetFormatError("dataset has no examples", body_path)
    if len(rows) != manifest["n_examples"]:
        raise DatasetFormatError(f"manifest declares {manifest['n_examples']} examples, body has {len(rows)}", manifest_path)
    generated = np.zeros(len(rows), dtype=bool)
    generated[np.asarray(manifest.get("generated_rows", []), dtype=np.int64)] = True
    ds = SessionDataset(np.asarray(rows, dtype=np.float32), labels, int(manifest.get("session_index", 0)),
                        class_ids, tuple(manifest["feature_shape"]), generated)
    declared = {int(k): int(v) for k, v in manifest["counts"].items()}
    if declared != ds.class_counts():
        raise DatasetFormatError(f"manifest class counts {declared} disagree with body {ds.class_counts()}", manifest_path)
    return ds
