"""Functional Adam with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch


@dataclass
class AdamState:
    m: dict[str, torch.Tensor] = field(default_factory=dict)
    v: dict[str, torch.Tensor] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8

    def to_dict(self) -> dict:
        return {"m": self.m, "v": self.v, "step": self.step, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}

    @classmethod
    def from_dict(cls, d: dict) -> "AdamState":
        return cls(**d)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float) -> tuple[dict, AdamState]:
    """Return updated parameters and state; inputs are not modified."""
    if set(params) != set(grads):
        raise KeyError(f"params/grads key mismatch: {sorted(set(params) ^ set(grads))}")
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ValueError(f"{name}: gradient shape {tuple(g.shape)} != {tuple(params[name].shape)}")
        if not torch.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    new_params, m_new, v_new = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        m = state.m.get(name, torch.zeros_like(p))
        v = state.v.get(name, torch.zeros_like(p))
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        new_params[name] = p - lr * (m / bc1) / (torch.sqrt(v / bc2) + state.eps)
        m_new[name], v_new[name] = m, v
    return new_params, AdamState(m_new, v_new, t, b1, b2, state.eps)
