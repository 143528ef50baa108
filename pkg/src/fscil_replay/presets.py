"""Named run configurations for the desk-scale protocols.

A run config is a plain JSON-compatible dict with three sections:
``dataset`` (which protocol to build), ``protocol`` (``ProtocolConfig`` fields,
with nested ``gen_cfg`` and ``ablation``) and a top-level ``seed`` shared by both.
"""
from __future__ import annotations

import copy

from .datasets import ToyConfig, make_pattern_protocol, make_toy_protocol
from .errors import ContractViolation

TOY_GEN = dict(epochs=60, batches_per_epoch=5, batch_size=64, k_inner=5, alpha=3e-3, beta=1e-2, lr_milestones=[],
               noise_dim=16, gen_hidden=[64])

TOY_RUN = {
    "seed": 0,
    "dataset": {"kind": "toy"},
    "protocol": dict(base_epochs=30, base_milestones=[20, 25], base_batch_size=64, incremental_epochs=40,
                     incremental_milestones=[10, 30], lambda1=1e-2, lambda2=0.1, replay_count=25,
                     cosine_scale=5.0, gen_cfg=TOY_GEN),
}

PATTERN_GEN = dict(epochs=30, batches_per_epoch=5, batch_size=64, k_inner=5, alpha=3e-3, beta=1e-2,
                   lr_milestones=[], noise_dim=16, gen_hidden=[64])

PATTERN_RUN = {
    "seed": 0,
    "dataset": {"kind": "pattern"},
    "protocol": dict(base_epochs=30, base_milestones=[20, 25], base_batch_size=64, incremental_epochs=40,
                     incremental_milestones=[10, 30], lambda1=1e-4, lambda2=0.1, replay_count=10,
                     cosine_scale=8.0, hidden=[64, 32], gen_cfg=PATTERN_GEN),
}

PRESETS = {"toy": TOY_RUN, "pattern": PATTERN_RUN}

DATASET_KEYS = {
    "toy": {"kind", "radius", "std", "train_per_class", "test_per_class", "shot"},
    "pattern": {"kind", "base_classes", "way", "shot", "sessions", "size", "train_per_class", "test_per_class",
                "noise"},
}


def preset(name: str) -> dict:
    if name not in PRESETS:
        raise ContractViolation(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return copy.deepcopy(PRESETS[name])


def dataset_errors(spec: dict) -> list:
    kind = spec.get("kind")
    if kind not in DATASET_KEYS:
        return [f"dataset.kind must be one of {sorted(DATASET_KEYS)} (got {kind!r})"]
    unknown = set(spec) - DATASET_KEYS[kind]
    return [f"dataset.{k} is not a {kind} dataset option" for k in sorted(unknown)]


def build_protocol(spec: dict, seed: int) -> tuple:
    """``(sessions, cumulative_tests)`` for a dataset section."""
    errors = dataset_errors(spec)
    if errors:
        raise ContractViolation("; ".join(errors))
    opts = {k: v for k, v in spec.items() if k != "kind"}
    if spec["kind"] == "toy":
        shot = opts.pop("shot", 5)
        return make_toy_protocol(seed, ToyConfig(**opts), shot=shot)
    return make_pattern_protocol(seed, **opts)
