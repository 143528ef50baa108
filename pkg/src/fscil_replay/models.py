"""
Classifier with an expandable cosine head, generator and auxiliary networks.

The classifier splits into a backbone (an MLP producing a feature vector) and
an ordered list of head blocks, one per session. Logits are
``scale * cos(feature, head row)``; head rows and features are normalised at
logit time, storage stays unnormalised.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterSet, Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ContractViolation


def _linear_init(rng: np.random.Generator, fan_in: int, fan_out: int, dtype) -> tuple:
    w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
    return ad.parameter(w, dtype=dtype), ad.parameter(np.zeros(fan_out), dtype=dtype)


def _build_mlp(prefix: str, sizes: Sequence[int], rng, dtype) -> ParameterSet:
    params = ParameterSet()
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        w, b = _linear_init(rng, fan_in, fan_out, dtype)
        params.add(f"{prefix}.{i}.weight", w)
        params.add(f"{prefix}.{i}.bias", b)
    return params


def _run_mlp(params: ParameterSet, prefix: str, n_layers: int, x: Tensor, trainable: bool) -> Tensor:
    h = x
    for i in range(n_layers):
        w, b = params[f"{prefix}.{i}.weight"], params[f"{prefix}.{i}.bias"]
        if not trainable:
            w, b = w.detach(), b.detach()
        h = ad.add(ad.matmul(h, w), b)
        if i < n_layers - 1:
            h = ad.relu(h)
    return h


@dataclass
class HeadBlock:
    session_index: int
    class_ids: tuple
    weights: Tensor  # [len(class_ids), feature_dim]

    def param_name(self) -> str:
        return f"head.{self.session_index}.weight"


class ClassifierModel:
    """MLP backbone plus a growing list of cosine-classifier head blocks."""

    def __init__(
        self,
        input_dim: int,
        hidden: Sequence[int] = (32, 32),
        feature_dim: int = 16,
        scale: float = 16.0,
        seed: int = 0,
        dtype=np.float32,
    ):
        if scale <= 0:
            raise ContractViolation(f"cosine scale must be positive, got {scale}")
        self.input_dim = int(input_dim)
        self.hidden = tuple(int(h) for h in hidden)
        self.feature_dim = int(feature_dim)
        self.scale = float(scale)
        self.dtype = np.dtype(dtype)
        sizes = (self.input_dim, *self.hidden, self.feature_dim)
        self.backbone = _build_mlp("backbone", sizes, np.random.default_rng(seed), self.dtype)
        self.heads: list = []

    # -- structure ------------------------------------------------------
    @property
    def n_layers(self) -> int:
        return len(self.hidden) + 1

    @property
    def class_ids(self) -> tuple:
        return tuple(c for h in self.heads for c in h.class_ids)

    @property
    def n_classes(self) -> int:
        return sum(len(h.class_ids) for h in self.heads)

    def parameters(self) -> ParameterSet:
        return self.backbone | self.head_parameters()

    def head_parameters(self, sessions: Optional[Sequence[int]] = None) -> ParameterSet:
        blocks = self.heads if sessions is None else [h for h in self.heads if h.session_index in sessions]
        return ParameterSet((h.param_name(), h.weights) for h in blocks)

    def add_head(self, class_ids: Sequence[int], seed: int, session_index: Optional[int] = None) -> HeadBlock:
        """Append a randomly initialised head block in place (std = 1/sqrt(feature_dim))."""
        ids = tuple(int(c) for c in class_ids)
        if not ids:
            raise ContractViolation("a session must add at least one class")
        if len(set(ids)) != len(ids):
            raise ContractViolation(f"duplicate class ids in new head: {ids}")
        existing = set(self.class_ids)
        for c in ids:
            if c in existing:
                raise ContractViolation(f"class id {c} already present in the model")
        if session_index is None:
            session_index = self.heads[-1].session_index + 1 if self.heads else 0
        rng = np.random.default_rng(seed)
        w = rng.normal(0.0, 1.0 / np.sqrt(self.feature_dim), size=(len(ids), self.feature_dim))
        block = HeadBlock(int(session_index), ids, ad.parameter(w, dtype=self.dtype))
        self.heads.append(block)
        return block

    # -- forward --------------------------------------------------------
    def _check_input(self, x: Tensor) -> None:
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ContractViolation(f"classifier expects input [batch, {self.input_dim}], got {x.shape}")

    def features(self, x, trainable: bool = True) -> Tensor:
        x = ad.as_tensor(x, dtype=self.dtype)
        self._check_input(x)
        return _run_mlp(self.backbone, "backbone", self.n_layers, x, trainable)

    def forward(self, x, trainable: bool = True, train_backbone: Optional[bool] = None) -> Tensor:
        """Cosine logits ``[batch, n_classes]``.

        ``trainable=False`` treats every parameter as a constant (gradients still
        flow to ``x``); ``train_backbone`` overrides that for the backbone alone.
        """
        if not self.heads:
            raise ContractViolation("classifier has no head blocks yet")
        bb = trainable if train_backbone is None else train_backbone
        feats = ad.l2_normalize(self.features(x, trainable=bb), axis=1)
        rows = [h.weights if trainable else h.weights.detach() for h in self.heads]
        w = rows[0] if len(rows) == 1 else ad.concat(rows, axis=0)
        w = ad.l2_normalize(w, axis=1)
        return ad.scale(ad.matmul(feats, ad.transpose(w)), self.scale)

    __call__ = forward

    def logits(self, x: np.ndarray) -> np.ndarray:
        """Plain-array forward for evaluation; no graph is built."""
        return self.forward(np.asarray(x), trainable=False).data

    def clone(self) -> "ClassifierModel":
        return clone_model(self)

    def structure(self) -> dict:
        return {
            "kind": type(self).__name__,
            "input_dim": self.input_dim,
            "hidden": list(self.hidden),
            "feature_dim": self.feature_dim,
            "scale": self.scale,
            "heads": [{"session_index": h.session_index, "class_ids": list(h.class_ids)} for h in self.heads],
        }


class AuxiliaryModel(ClassifierModel):
    """Student-shaped helper with one fixed head sized to the teacher's classes."""

    @classmethod
    def for_teacher(cls, teacher: ClassifierModel, seed: int) -> "AuxiliaryModel":
        aux = cls(teacher.input_dim, teacher.hidden, teacher.feature_dim, teacher.scale, seed=seed, dtype=teacher.dtype)
        ClassifierModel.add_head(aux, teacher.class_ids, seed=seed + 1, session_index=0)
        return aux

    def add_head(self, class_ids, seed, session_index=None):
        raise ContractViolation("the auxiliary model's head does not grow")


class GeneratorModel:
    """Noise-to-sample MLP with a tanh output layer."""

    def __init__(self, noise_dim: int, output_dim: int, hidden: Sequence[int] = (64,), seed: int = 0, dtype=np.float32):
        self.noise_dim = int(noise_dim)
        self.output_shape = (int(output_dim),)
        self.hidden = tuple(int(h) for h in hidden)
        self.dtype = np.dtype(dtype)
        sizes = (self.noise_dim, *self.hidden, int(output_dim))
        self.params = _build_mlp("gen", sizes, np.random.default_rng(seed), self.dtype)

    def parameters(self) -> ParameterSet:
        return self.params

    def forward(self, z, trainable: bool = True) -> Tensor:
        z = ad.as_tensor(z, dtype=self.dtype)
        if z.ndim != 2 or z.shape[1] != self.noise_dim:
            raise ContractViolation(f"generator expects noise [batch, {self.noise_dim}], got {z.shape}")
        return ad.tanh(_run_mlp(self.params, "gen", len(self.hidden) + 1, z, trainable))

    __call__ = forward

    def sample_noise(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return rng.standard_normal((count, self.noise_dim)).astype(self.dtype)


def clone_model(model):
    """Deep copy; training the copy never touches the source."""
    return copy.deepcopy(model)


def expand_head(model: ClassifierModel, new_class_ids: Sequence[int], seed: int) -> ClassifierModel:
    """Return a copy of ``model`` with one extra head block for ``new_class_ids``.

    Backbone and old blocks are copied bit-exactly; ``model`` itself is left alone.
    """
    if not list(new_class_ids):
        raise ContractViolation("a session must add at least one class")
    new = clone_model(model)
    new.add_head(new_class_ids, seed=seed)
    return new


def save_model(model, path) -> tuple:
    extra = {"model": model.structure() if isinstance(model, ClassifierModel) else {
        "kind": "GeneratorModel", "noise_dim": model.noise_dim,
        "output_shape": list(model.output_shape), "hidden": list(model.hidden)}}
    return save_checkpoint(model.parameters(), path, extra=extra)


def load_model(path):
    arrays, manifest = load_checkpoint(path)
    spec = manifest["model"]
    if spec["kind"] == "GeneratorModel":
        model = GeneratorModel(spec["noise_dim"], spec["output_shape"][0], spec["hidden"])
    else:
        cls = AuxiliaryModel if spec["kind"] == "AuxiliaryModel" else ClassifierModel
        model = cls(spec["input_dim"], spec["hidden"], spec["feature_dim"], spec["scale"])
        for h in spec["heads"]:
            ClassifierModel.add_head(model, h["class_ids"], seed=0, session_index=h["session_index"])
    params = model.parameters()
    for name, p in params.items():
        if name not in arrays:
            raise ContractViolation(f"checkpoint {Path(path)} lacks parameter {name!r}")
        p.data = arrays[name].astype(p.dtype)
    return model


def argmax_class(logits: np.ndarray, class_ids: Sequence[int]) -> np.ndarray:
    """Per-row predicted class id; exact ties go to the lowest class id."""
    ids = np.asarray(class_ids, dtype=np.int64)
    order = np.argsort(ids, kind="stable")
    return ids[order][np.argmax(np.asarray(logits)[:, order], axis=1)]
