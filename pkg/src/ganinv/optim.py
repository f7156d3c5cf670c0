"""Adam optimizer with bias correction.

Fixed standard settings beta1=0.9, beta2=0.999, eps=1e-8 for every
training phase; the learning rate is the only tunable and stays
constant. Moments are stored per parameter name so optimizer state can
ride along in checkpoints.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


class NonFiniteGradient(Exception):
    pass


@dataclass
class AdamState:
    lr: float
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray], lr: float) -> "AdamState":
        return cls(
            lr=lr,
            step=0,
            m={k: np.zeros_like(a) for k, a in params.items()},
            v={k: np.zeros_like(a) for k, a in params.items()},
        )


def adam_step(state: AdamState, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
    """One update over all params; returns the new params dict.

    Mutates `state` (moments and step counter). Deterministic: same
    state/params/grads give bitwise-identical results.
    """
    for name in params:
        if name in state.m and state.m[name].shape != params[name].shape:
            raise ValueError(f"moment shape mismatch for {name}")
    state.step += 1
    t = state.step
    c1 = 1.0 - BETA1**t
    c2 = 1.0 - BETA2**t
    out = {}
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for parameter {name!r} at step {t}")
        m = state.m[name] = BETA1 * state.m[name] + (1.0 - BETA1) * g
        v = state.v[name] = BETA2 * state.v[name] + (1.0 - BETA2) * (g * g)
        out[name] = p - state.lr * (m / c1) / (np.sqrt(v / c2) + EPS)
    return out
