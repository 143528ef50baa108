"""
Few-shot class-incremental training loop.

``base_train`` fits session 0. Each later session runs ``incremental_step``:

1. train a generator against the previous model (skipped when ``replay_count == 0``),
2. copy the previous model and append a randomly initialised head block,
3. for every epoch, draw fresh replay samples, label them with the previous
   model's argmax, merge them with the novel few-shot data, and minimise
   cross-entropy with two learning rates - ``lambda1`` for the old backbone and
   old head blocks, ``lambda2`` for the new head block.

The ablation switches turn off entropy regularisation (ER), replace re-labelling
by logit distillation (RL), or freeze the backbone (BF).
"""
from __future__ import annotations

import copy
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .datasets import SessionDataset
from .errors import ContractViolation
from .metrics import SessionReport, base_accuracy, cumulative_accuracy, per_class_entropy, replay_label_histogram
from .models import ClassifierModel, expand_head
from .optim import SGD
from .replay import GenTrainConfig, ReplayBatch, sample_replay, train_generator

logger = logging.getLogger(__name__)


@dataclass
class Ablation:
    entropy_regularization: bool = True
    relabel: bool = True
    backbone_finetune: bool = True

    def arm_name(self) -> str:
        parts = [name for name, on in (("ER", self.entropy_regularization), ("RL", self.relabel),
                                       ("BF", self.backbone_finetune)) if on]
        return "+".join(parts) if parts else "none"


ABLATION_ARMS = {
    "full": Ablation(),
    "no-er": Ablation(entropy_regularization=False),
    "no-rl": Ablation(relabel=False),
    "no-bf": Ablation(backbone_finetune=False),
}


@dataclass
class ProtocolConfig:
    """Everything a protocol run needs besides the data itself."""

    base_epochs: int = 100
    base_lr: float = 0.1
    base_milestones: tuple = (60, 70)
    base_batch_size: int = 128
    incremental_epochs: int = 40
    lambda1: float = 1e-4
    lambda2: float = 0.1
    incremental_milestones: tuple = (10, 30)
    incremental_batch_size: int = 25
    lr_factor: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    replay_count: int = 25
    ablation: Ablation = field(default_factory=Ablation)
    kd_weight: float = 1.0
    kd_temperature: float = 2.0
    hidden: tuple = (32, 32)
    feature_dim: int = 16
    cosine_scale: float = 16.0
    gen_cfg: GenTrainConfig = field(default_factory=GenTrainConfig)
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.ablation, dict):
            self.ablation = Ablation(**self.ablation)
        if isinstance(self.gen_cfg, dict):
            self.gen_cfg = GenTrainConfig(**self.gen_cfg)
        self.base_milestones = tuple(int(m) for m in self.base_milestones)
        self.incremental_milestones = tuple(int(m) for m in self.incremental_milestones)
        self.hidden = tuple(int(h) for h in self.hidden)
        errors = self.validate()
        if errors:
            raise ContractViolation("; ".join(errors))

    def validate(self) -> list:
        errors = []
        if self.replay_count < 0:
            errors.append(f"replay_count must be >= 0 (got {self.replay_count})")
        if self.kd_weight < 0:
            errors.append(f"kd_weight must be >= 0 (got {self.kd_weight})")
        if self.kd_temperature <= 0:
            errors.append(f"kd_temperature must be positive (got {self.kd_temperature})")
        if self.lambda1 < 0 or self.lambda2 < 0:
            errors.append("lambda1 and lambda2 must be non-negative")
        if self.base_lr <= 0:
            errors.append(f"base_lr must be positive (got {self.base_lr})")
        if self.base_epochs < 1 or self.incremental_epochs < 0:
            errors.append("base_epochs must be >= 1 and incremental_epochs >= 0")
        if self.base_batch_size < 1 or self.incremental_batch_size < 1:
            errors.append("batch sizes must be >= 1")
        if self.cosine_scale <= 0:
            errors.append("cosine_scale must be positive")
        return errors

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in list(d.items()):
            if isinstance(v, tuple):
                d[k] = list(v)
        d["gen_cfg"] = {k: list(v) if isinstance(v, tuple) else v for k, v in d["gen_cfg"].items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ProtocolConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ContractViolation(f"unknown protocol config keys: {sorted(unknown)}")
        return cls(**d)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def effective_gen_cfg(self, session_index: int) -> GenTrainConfig:
        g = copy.deepcopy(self.gen_cfg)
        if not self.ablation.entropy_regularization:
            g.entropy_weight = 0.0
        g.seed = self.gen_cfg.seed + 1000 * self.seed + session_index
        return g


@dataclass
class SessionRun:
    """Audit record of one incremental session."""

    session_index: int
    model_before: ClassifierModel
    model_after: ClassifierModel
    merged_class_counts: dict
    replay_histogram: dict
    replay_drawn: int
    loss_history: list = field(default_factory=list)


# -- losses -------------------------------------------------------------------

def cross_entropy(logits: ad.Tensor, labels: np.ndarray, class_ids: Sequence[int]) -> ad.Tensor:
    """Mean softmax cross-entropy; ``labels`` are global class ids."""
    col = {c: i for i, c in enumerate(class_ids)}
    try:
        idx = np.array([col[int(y)] for y in labels])
    except KeyError as exc:
        raise ContractViolation(f"label {exc.args[0]} is not an output class of the model") from None
    onehot = np.zeros(logits.shape, dtype=logits.dtype)
    onehot[np.arange(len(idx)), idx] = 1
    loss = ad.scale(ad.mean(ad.sum_(ad.mul(ad.log_softmax(logits, axis=1), onehot), axis=1)), -1.0)
    loss.label = "cross_entropy"
    return loss


def kd_loss(new_old_logits: ad.Tensor, teacher_logits: np.ndarray, temperature: float) -> ad.Tensor:
    """Batch-mean ``KL(softmax(teacher/T) || softmax(student/T))``."""
    t = ad.Tensor(teacher_logits, dtype=new_old_logits.dtype)
    p = ad.softmax(ad.scale(t, 1.0 / temperature), axis=1)
    log_p = ad.log_softmax(ad.scale(t, 1.0 / temperature), axis=1)
    log_q = ad.log_softmax(ad.scale(new_old_logits, 1.0 / temperature), axis=1)
    loss = ad.mean(ad.sum_(ad.mul(p, ad.sub(log_p, log_q)), axis=1))
    loss.label = "kd_kl"
    return loss


# -- session 0 ------------------------------------------------------------------

def _minibatches(rng: np.random.Generator, n: int, batch_size: int):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def base_train(dataset: SessionDataset, cfg: ProtocolConfig, history: Optional[list] = None) -> ClassifierModel:
    """Train the session-0 classifier with SGD-momentum and the step schedule."""
    if len(dataset) == 0:
        raise ContractViolation("base training set is empty")
    if len(dataset.class_ids) < 2:
        raise ContractViolation("base training needs at least 2 classes")
    model = ClassifierModel(dataset.input_dim, cfg.hidden, cfg.feature_dim, cfg.cosine_scale, seed=cfg.seed)
    model.add_head(dataset.class_ids, seed=cfg.seed + 1, session_index=0)
    params = model.parameters()
    opt = SGD(params, lr=cfg.base_lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed + 2)
    for epoch in range(cfg.base_epochs):
        opt.set_lr(epoch, cfg.base_milestones, cfg.lr_factor)
        total = 0.0
        for idx in _minibatches(rng, len(dataset), cfg.base_batch_size):
            loss = cross_entropy(model(dataset.features[idx]), dataset.labels[idx], model.class_ids)
            ad.backward(loss, params)
            opt.step()
            total += loss.item() * len(idx)
        if history is not None:
            history.append(total / len(dataset))
    return model


# -- sessions 1..N --------------------------------------------------------------

def merge_dataset(novel: SessionDataset, replay: Optional[ReplayBatch]) -> SessionDataset:
    """Union of the novel data and labelled replay samples, with provenance flags."""
    if replay is None or len(replay) == 0:
        return novel
    replay_ids = set(int(c) for c in np.unique(replay.labels))
    overlap = replay_ids & set(novel.class_ids)
    if overlap:
        raise ContractViolation(f"replayed labels overlap the novel classes: {sorted(overlap)}")
    feats = np.concatenate([novel.features, replay.samples.astype(np.float32)])
    labels = np.concatenate([novel.labels, replay.labels])
    generated = np.concatenate([np.zeros(len(novel), bool), np.ones(len(replay), bool)])
    class_ids = tuple(sorted(set(novel.class_ids) | replay_ids))
    return SessionDataset(feats, labels, novel.session_index, class_ids, novel.feature_shape, generated)


def _param_groups(model: ClassifierModel, new_session: int, cfg: ProtocolConfig) -> list:
    old_heads = model.head_parameters([h.session_index for h in model.heads if h.session_index != new_session])
    new_head = model.head_parameters([new_session])
    old = (model.backbone | old_heads) if cfg.ablation.backbone_finetune else old_heads
    return [{"params": old, "lr": cfg.lambda1}, {"params": new_head, "lr": cfg.lambda2}]


def incremental_step(old_model: ClassifierModel, novel: SessionDataset, cfg: ProtocolConfig,
                     on_step: Optional[Callable] = None) -> tuple:
    """One incremental session; returns ``(new_model, SessionRun)``.

    ``on_step(loss, terms)`` is called with every training loss before backward
    (``terms`` names the loss components), for instrumentation.
    """
    overlap = set(novel.class_ids) & set(old_model.class_ids)
    if overlap:
        raise ContractViolation(f"novel classes already known to the model: {sorted(overlap)}")
    session = novel.session_index
    if session <= max(h.session_index for h in old_model.heads):
        session = max(h.session_index for h in old_model.heads) + 1
    teacher = old_model
    gen = None
    if cfg.replay_count > 0:
        gen, _ = train_generator(teacher, cfg.effective_gen_cfg(session))

    model = expand_head(old_model, novel.class_ids, seed=cfg.seed * 7919 + session)
    groups = _param_groups(model, session, cfg)
    opt = SGD(groups, momentum=cfg.momentum, lr=cfg.lambda2)
    rng = np.random.default_rng(cfg.seed * 104_729 + session)
    old_cols = len(teacher.class_ids)
    hist: dict = {}
    drawn = 0
    merged_counts: dict = {}
    losses = []
    train_bb = cfg.ablation.backbone_finetune

    for epoch in range(cfg.incremental_epochs):
        opt.set_lr(epoch, cfg.incremental_milestones, cfg.lr_factor)
        replay = sample_replay(gen, teacher, cfg.replay_count, rng) if gen is not None else None
        if replay is not None:
            drawn += len(replay)
            counts = replay_label_histogram(replay, max(teacher.class_ids) + 1)
            for c in teacher.class_ids:
                hist[c] = hist.get(c, 0) + int(counts[c])
        merged = merge_dataset(novel, replay)
        if epoch == 0:
            merged_counts = merged.class_counts()
        for idx in _minibatches(rng, len(merged), cfg.incremental_batch_size):
            x, y, gen_mask = merged.features[idx], merged.labels[idx], merged.generated[idx]
            logits = model.forward(x, train_backbone=train_bb)
            if cfg.ablation.relabel or not gen_mask.any():
                loss = cross_entropy(logits, y, model.class_ids)
                terms = ("cross_entropy",)
            else:
                parts, terms = [], []
                real = np.flatnonzero(~gen_mask)
                if len(real):
                    ce = cross_entropy(ad.take(logits, real), y[real], model.class_ids)
                    parts.append(ad.scale(ce, len(real) / len(idx)))
                    terms.append("cross_entropy")
                fake = np.flatnonzero(gen_mask)
                # replay rows follow the novel rows in the merged dataset
                t_logits = replay.teacher_logits[idx[fake] - len(novel)]
                student = ad.take(ad.take(logits, fake), (slice(None), slice(0, old_cols)))
                kd = kd_loss(student, t_logits, cfg.kd_temperature)
                parts.append(ad.scale(kd, cfg.kd_weight * len(fake) / len(idx)))
                terms.append("kd_kl")
                loss = parts[0] if len(parts) == 1 else ad.add(parts[0], parts[1])
                terms = tuple(terms)
            if on_step is not None:
                on_step(loss, terms)
            ad.backward(loss, model.parameters())
            opt.step()
            model.parameters().zero_grad()
            losses.append(loss.item())

    run = SessionRun(session, old_model, model, merged_counts, hist, drawn, losses)
    return model, run


def run_protocol(sessions: Sequence[SessionDataset], test_sets: Sequence[SessionDataset], cfg: ProtocolConfig,
                 runs: Optional[list] = None) -> SessionReport:
    """Base training plus one incremental step per later session.

    After every session the model is scored on that session's cumulative test
    set. On failure the partially filled report is attached to the exception as
    ``exc.partial_report``.
    """
    if len(sessions) != len(test_sets):
        raise ContractViolation("one cumulative test set per session is required")
    seen: set = set()
    for s in sessions:
        dup = seen & set(s.class_ids)
        if dup:
            raise ContractViolation(f"class ids {sorted(dup)} appear in more than one session")
        seen |= set(s.class_ids)

    report = SessionReport(config_hash=cfg.config_hash(), seed=cfg.seed)
    base_ids = sessions[0].class_ids
    model = None
    try:
        for i, (train, test) in enumerate(zip(sessions, test_sets)):
            if i == 0:
                model = base_train(train, cfg)
                hist, drawn = {}, 0
            else:
                model, run = incremental_step(model, train, cfg)
                hist, drawn = run.replay_histogram, run.replay_drawn
                if runs is not None:
                    runs.append(run)
            report.add_session(
                accuracy=cumulative_accuracy(model, test),
                base_accuracy=base_accuracy(model, test, base_ids),
                n_test_classes=len(test.class_ids),
                n_test_examples=len(test),
                replay_histogram=hist,
                replay_drawn=drawn,
            )
            logger.info("session %d: acc %.4f", i, report.per_session_accuracy[-1])
        report.per_class_entropy = per_class_entropy(model, test_sets[len(sessions) - 1])
        report.incremental_class_ids = [c for s in sessions[1:] for c in s.class_ids]
    except Exception as exc:
        exc.partial_report = report
        raise
    report.final_model = model
    return report
