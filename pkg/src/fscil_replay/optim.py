"""SGD-with-momentum and Adam over :class:`ParameterSet` groups, plus the step schedule."""
from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .autodiff import ParameterSet
from .errors import ContractViolation


def lr_schedule(epoch: int, base_lr: float, milestones: Sequence[int] = (), factor: float = 0.1) -> float:
    """Step decay: ``base_lr * factor ** (number of milestones <= epoch)``."""
    if base_lr <= 0:
        raise ContractViolation(f"base_lr must be positive, got {base_lr}")
    if not 0 < factor <= 1:
        raise ContractViolation(f"factor must lie in (0, 1], got {factor}")
    ms = list(milestones)
    if any(b <= a for a, b in zip(ms, ms[1:])):
        raise ContractViolation(f"milestones must be strictly increasing, got {ms}")
    passed = sum(1 for m in ms if m <= epoch)
    return base_lr * factor ** passed


class Optimizer:
    """Shared bookkeeping: parameter groups, per-parameter state, step counter.

    ``groups`` is either a single ParameterSet (one group at ``lr``) or a list of
    ``{"params": ParameterSet, "lr": float}`` dicts, each group keeping its own
    learning rate. Moment buffers are float64 regardless of parameter dtype.
    """

    kind = "base"

    def __init__(self, groups, lr: float, weight_decay: float = 0.0):
        if isinstance(groups, ParameterSet):
            groups = [{"params": groups}]
        self.groups = []
        seen = set()
        for g in groups:
            params = g["params"]
            for p in params.values():
                if id(p) in seen:
                    raise ContractViolation("a parameter appears in more than one optimizer group")
                seen.add(id(p))
            self.groups.append({"params": params, "lr": float(g.get("lr", lr)), "base_lr": float(g.get("lr", lr))})
        self.weight_decay = float(weight_decay)
        self.step_count = 0
        self.state: dict = {}

    def parameters(self) -> Iterable:
        for g in self.groups:
            yield from g["params"].items()

    def set_lr(self, epoch: int, milestones: Sequence[int] = (), factor: float = 0.1) -> None:
        """Apply the step schedule to every group's own base rate."""
        for g in self.groups:
            g["lr"] = lr_schedule(epoch, g["base_lr"], milestones, factor) if g["base_lr"] > 0 else 0.0

    def zero_grad(self) -> None:
        for _, p in self.parameters():
            p.grad = None

    def step(self) -> None:
        for g in self.groups:
            for name, p in g["params"].items():
                if p.grad is None:
                    raise ContractViolation(f"parameter {name!r} has no gradient; run backward first")
        self.step_count += 1
        for g in self.groups:
            for _, p in g["params"].items():
                grad = p.grad.astype(np.float64)
                if self.weight_decay:
                    grad = grad + self.weight_decay * p.data
                self._apply(p, grad, g["lr"])
                p.grad = None

    def _apply(self, p, grad: np.ndarray, lr: float) -> None:
        raise NotImplementedError


class SGD(Optimizer):
    kind = "sgd-momentum"

    def __init__(self, groups, lr: float = 0.1, momentum: float = 0.0, weight_decay: float = 0.0):
        super().__init__(groups, lr, weight_decay)
        self.momentum = float(momentum)

    def _apply(self, p, grad, lr):
        if self.momentum:
            buf = self.state.get(id(p))
            buf = grad.copy() if buf is None else self.momentum * buf + grad
            self.state[id(p)] = buf
            grad = buf
        # computed in the parameter's own dtype so a unit gradient moves it by exactly lr
        p.data = p.data - (p.dtype.type(lr) * grad.astype(p.dtype))


class Adam(Optimizer):
    kind = "adam"

    def __init__(self, groups, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0):
        super().__init__(groups, lr, weight_decay)
        self.betas = (float(betas[0]), float(betas[1]))
        self.eps = float(eps)

    def _apply(self, p, grad, lr):
        b1, b2 = self.betas
        m, v = self.state.get(id(p), (np.zeros_like(grad), np.zeros_like(grad)))
        m = b1 * m + (1 - b1) * grad
        v = b2 * v + (1 - b2) * grad * grad
        self.state[id(p)] = (m, v)
        m_hat = m / (1 - b1 ** self.step_count)
        v_hat = v / (1 - b2 ** self.step_count)
        p.data = (p.data - lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.dtype)
