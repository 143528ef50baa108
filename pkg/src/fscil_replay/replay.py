"""
Data-free replay: invert a frozen classifier into a sample generator.

A generator ``G`` and an auxiliary student ``A`` are trained against a frozen
teacher ``T``. Per outer iteration a noise batch is drawn; the generator takes
``k_inner`` steps that *increase* the teacher/auxiliary logit discrepancy and the
teacher's prediction entropy, then the auxiliary takes one step that decreases
the (squared-L2) discrepancy. Samples from the trained generator are labelled by
the teacher's argmax and replayed in the next incremental session.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractViolation, GeneratorDivergenceError, NumericOverflowError
from .models import AuxiliaryModel, ClassifierModel, GeneratorModel, argmax_class
from .optim import Adam

logger = logging.getLogger(__name__)

MATCH_NORMS = ("l1", "sq_l2")


@dataclass
class GenTrainConfig:
    """Generator-training hyperparameters.

    ``alpha``/``beta`` are the generator/auxiliary Adam learning rates; one
    "epoch" is ``batches_per_epoch`` outer iterations. ``match_norm`` selects the
    discrepancy term the generator maximises (``"l1"`` or ``"sq_l2"``).
    """

    epochs: int = 300
    batches_per_epoch: int = 10
    batch_size: int = 64
    k_inner: int = 5
    alpha: float = 0.1
    beta: float = 1e-3
    entropy_weight: float = 1.0
    match_norm: str = "l1"
    lr_milestones: tuple = (100, 150, 200)
    lr_factor: float = 0.1
    noise_dim: int = 16
    gen_hidden: tuple = (64,)
    seed: int = 0

    def __post_init__(self):
        self.lr_milestones = tuple(int(m) for m in self.lr_milestones)
        self.gen_hidden = tuple(int(h) for h in self.gen_hidden)
        errors = self.validate()
        if errors:
            raise ContractViolation("; ".join(errors))

    def validate(self) -> list:
        errors = []
        if self.k_inner < 1:
            errors.append(f"k_inner must be >= 1 (got {self.k_inner})")
        if self.batch_size < 1:
            errors.append(f"batch_size must be >= 1 (got {self.batch_size})")
        if self.entropy_weight < 0:
            errors.append(f"entropy_weight must be >= 0 (got {self.entropy_weight})")
        if self.match_norm not in MATCH_NORMS:
            errors.append(f"match_norm must be one of {MATCH_NORMS} (got {self.match_norm!r})")
        if self.epochs < 0 or self.batches_per_epoch < 1:
            errors.append("epochs must be >= 0 and batches_per_epoch >= 1")
        if self.alpha <= 0 or self.beta <= 0:
            errors.append("alpha and beta must be positive")
        return errors


@dataclass
class ReplayBatch:
    samples: np.ndarray          # [n, input_dim]
    labels: np.ndarray           # teacher argmax class ids
    teacher_entropy: np.ndarray  # nats, per sample
    teacher_logits: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if not (len(self.samples) == len(self.labels) == len(self.teacher_entropy)):
            raise ContractViolation("replay batch fields must have equal length")

    def __len__(self) -> int:
        return len(self.labels)


# -- losses -------------------------------------------------------------------

def shannon_entropy(probs, log_probs: Optional[Tensor] = None, atol: float = 1e-5) -> Tensor:
    """Per-row entropy in nats, ``-sum_c p_c log p_c``, with ``0 log 0 = 0``.

    Pass ``log_probs`` (e.g. a log-softmax of the same logits) to avoid taking
    the log of underflowed probabilities.
    """
    probs = ad.as_tensor(probs)
    p = probs.data
    if p.ndim != 2:
        raise ContractViolation(f"expected a [batch, classes] probability matrix, got {p.shape}")
    if (p < 0).any() or not np.allclose(p.sum(axis=1, dtype=np.float64), 1.0, atol=atol, rtol=0):
        raise ContractViolation("each row must be a probability distribution (entries >= 0, summing to 1)")
    if log_probs is None:
        # shift exact zeros to 1 so they contribute 0 * log(1) = 0
        log_probs = ad.log(ad.add(probs, (p == 0).astype(p.dtype)))
    return ad.scale(ad.sum_(ad.mul(probs, log_probs), axis=1), -1.0)


def entropy_of_logits(logits) -> Tensor:
    logits = ad.as_tensor(logits)
    return shannon_entropy(ad.softmax(logits, axis=1), ad.log_softmax(logits, axis=1))


def aux_loss(teacher_logits, aux_logits) -> Tensor:
    """Batch mean of ``||teacher - aux||_2^2`` over logit vectors."""
    t, a = ad.as_tensor(teacher_logits), ad.as_tensor(aux_logits)
    if t.shape != a.shape:
        raise ContractViolation(f"logit shapes differ: {t.shape} vs {a.shape}")
    return ad.mean(ad.sq_l2_distance(t, a, axis=1))


def gen_loss(teacher_logits, aux_logits, teacher_probs, cfg: Optional[GenTrainConfig] = None, *,
             entropy_weight: Optional[float] = None, match_norm: Optional[str] = None) -> Tensor:
    """``-mean(match(teacher, aux)) - entropy_weight * mean(H(teacher probs))``.

    With ``entropy_weight=0`` and ``match_norm="sq_l2"`` this is exactly
    ``-aux_loss``. Keyword arguments override ``cfg``.
    """
    w = entropy_weight if entropy_weight is not None else (cfg.entropy_weight if cfg else 1.0)
    norm = match_norm or (cfg.match_norm if cfg else "l1")
    t, a = ad.as_tensor(teacher_logits), ad.as_tensor(aux_logits)
    if t.shape != a.shape:
        raise ContractViolation(f"logit shapes differ: {t.shape} vs {a.shape}")
    if norm == "l1":
        match = ad.mean(ad.l1_distance(t, a, axis=1))
    elif norm == "sq_l2":
        match = ad.mean(ad.sq_l2_distance(t, a, axis=1))
    else:
        raise ContractViolation(f"unknown match_norm {norm!r}")
    loss = ad.scale(match, -1.0)
    if w:
        probs = ad.as_tensor(teacher_probs)
        if probs.shape != t.shape:
            raise ContractViolation(f"teacher_probs shape {probs.shape} differs from logits {t.shape}")
        ent = ad.mean(shannon_entropy(probs, ad.log_softmax(t, axis=1)))
        loss = ad.sub(loss, ad.scale(ent, w))
    return loss


# -- training -----------------------------------------------------------------

@dataclass
class EpochStats:
    epoch: int
    gen_loss: float
    aux_loss: float
    heldout_aux_loss: float
    mean_entropy: float


def _as_rng(rng: Union[int, np.random.Generator, None]) -> np.random.Generator:
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def train_generator(teacher: ClassifierModel, cfg: GenTrainConfig, history: Optional[list] = None,
                    heldout_size: int = 256) -> tuple:
    """Train ``(generator, auxiliary)`` against the frozen ``teacher``.

    The teacher's parameters are read as constants and never written. Per-epoch
    :class:`EpochStats` are appended to ``history`` when given; the held-out
    auxiliary loss uses one fixed noise batch for the whole run.
    """
    rng = np.random.default_rng(cfg.seed)
    gen = GeneratorModel(cfg.noise_dim, teacher.input_dim, cfg.gen_hidden, seed=cfg.seed + 101, dtype=teacher.dtype)
    aux = AuxiliaryModel.for_teacher(teacher, seed=cfg.seed + 202)
    opt_g = Adam(gen.parameters(), lr=cfg.alpha)
    opt_a = Adam(aux.parameters(), lr=cfg.beta)
    z_hold = gen.sample_noise(np.random.default_rng(cfg.seed + 303), heldout_size)

    it = 0
    last = {}
    for epoch in range(cfg.epochs):
        opt_g.set_lr(epoch, cfg.lr_milestones, cfg.lr_factor)
        opt_a.set_lr(epoch, cfg.lr_milestones, cfg.lr_factor)
        g_acc = a_acc = h_acc = 0.0
        for _ in range(cfg.batches_per_epoch):
            z = gen.sample_noise(rng, cfg.batch_size)
            try:
                for _ in range(cfg.k_inner):
                    x = gen(z)
                    t_logits = teacher(x, trainable=False)
                    a_logits = aux(x, trainable=False)
                    probs = ad.softmax(t_logits, axis=1)
                    lg = gen_loss(t_logits, a_logits, probs, cfg)
                    ad.backward(lg, gen.parameters())
                    opt_g.step()
                    last["gen_loss"] = lg.item()
                    g_acc += last["gen_loss"]
                    h_acc += float(ad.mean(entropy_of_logits(t_logits.detach())).item())
                x = gen(z, trainable=False).detach()
                t_logits = teacher(x, trainable=False)
                la = aux_loss(t_logits, aux(x))
                ad.backward(la, aux.parameters())
                opt_a.step()
                last["aux_loss"] = la.item()
                a_acc += last["aux_loss"]
            except NumericOverflowError as exc:
                raise GeneratorDivergenceError(
                    f"generator training diverged at iteration {it} (epoch {epoch}): {exc}; last losses {last}",
                    iteration=it, losses=last,
                ) from exc
            it += 1
        if history is not None:
            x_hold = gen(z_hold, trainable=False)
            held = aux_loss(teacher(x_hold, trainable=False), aux(x_hold, trainable=False)).item()
            n_g = cfg.batches_per_epoch * cfg.k_inner
            stats = EpochStats(epoch, g_acc / n_g, a_acc / cfg.batches_per_epoch, held, h_acc / n_g)
            history.append(stats)
            logger.debug("gen epoch %d: %s", epoch, stats)
    return gen, aux


def sample_replay(gen: GeneratorModel, teacher: ClassifierModel, count: int,
                  rng: Union[int, np.random.Generator, None] = None) -> ReplayBatch:
    """Draw ``count`` fresh samples and label them with the teacher's argmax."""
    if count < 1:
        raise ContractViolation(f"count must be >= 1, got {count}")
    rng = _as_rng(rng)
    x = gen(gen.sample_noise(rng, count), trainable=False).data
    logits = teacher.logits(x)
    labels = argmax_class(logits, teacher.class_ids)
    ent = entropy_of_logits(logits).data
    return ReplayBatch(x, labels, ent, logits)


def dump_replay_csv(batch: ReplayBatch, path) -> Path:
    """One row per sample: label, teacher entropy, then flattened sample values."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", "entropy"] + [f"x{i}" for i in range(batch.samples.shape[1])])
        for lab, ent, row in zip(batch.labels, batch.teacher_entropy, batch.samples):
            w.writerow([int(lab), "%.9g" % ent] + ["%.9g" % v for v in row])
    return path
