"""Per-position dynamic halting (adaptive computation time).

The update order follows the usual ACT formulation step for step: a position
keeps receiving updates while its accumulated halting probability stays at
or below the threshold; on the step it crosses, it is given the remainder
``1 - accumulated`` as its final interpolation weight and is frozen from then
on. The state that the next step attends over is the freshly transformed
state; the accumulated, weight-interpolated state is the output.

Halting probabilities and remainders are kept as :class:`Tensor` objects so
that gradients reach the halting unit through the interpolation weights.
The masks themselves are piecewise constant and carry no gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import tensor as tn
from .errors import ConfigError
from .tensor import Tensor


@dataclass
class HaltingState:
    halting_probability: Tensor  # (..., m)
    remainders: Tensor  # (..., m)
    n_updates: np.ndarray  # (..., m), integral values stored as floats
    previous_state: Tensor  # (..., m, d)
    step: int
    threshold: float
    max_steps: int
    update_weights: Optional[Tensor] = None  # weights used by the last act_step

    @classmethod
    def initial(cls, state_shape, threshold: float, max_steps: int,
                halted: Optional[np.ndarray] = None, dtype=np.float64) -> "HaltingState":
        """All-zero state. Positions flagged in ``halted`` start with probability 1."""
        if max_steps < 1:
            raise ConfigError(f"max_steps must be >= 1, got {max_steps}")
        if not 0.0 < threshold < 1.0:
            raise ConfigError(f"threshold must lie in (0, 1), got {threshold}")
        pos_shape = tuple(state_shape[:-1])
        hp = np.zeros(pos_shape, dtype=dtype)
        if halted is not None:
            hp[np.asarray(halted, dtype=bool)] = 1.0
        return cls(
            halting_probability=Tensor(hp),
            remainders=Tensor(np.zeros(pos_shape, dtype=dtype)),
            n_updates=np.zeros(pos_shape, dtype=dtype),
            previous_state=Tensor(np.zeros(tuple(state_shape), dtype=dtype)),
            step=0,
            threshold=float(threshold),
            max_steps=int(max_steps),
        )


def should_continue(hs: HaltingState) -> bool:
    """True while some position is below threshold and under its step budget."""
    return bool(np.any((hs.halting_probability.data < hs.threshold)
                       & (hs.n_updates < hs.max_steps)))


def halting_unit(state: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """sigmoid(state . w + b) for every row of ``state``; returns shape state.shape[:-1]."""
    logits = state @ weight + bias
    return tn.sigmoid(logits).reshape(state.shape[:-1])


def act_step(hs: HaltingState, transformed_state: Tensor, p) -> HaltingState:
    """One halting update: mask, accumulate, assign remainders, interpolate."""
    p = tn.as_tensor(p, hs.halting_probability)
    hp = hs.halting_probability
    dtype = hp.dtype
    running = (hp.data < 1.0).astype(dtype)
    proposed = hp.data + p.data * running
    new_halted = (proposed > hs.threshold).astype(dtype) * running
    still_running = (proposed <= hs.threshold).astype(dtype) * running

    hp = hp + p * still_running
    remainders = hs.remainders + new_halted * (1.0 - hp)
    hp = hp + new_halted * remainders
    n_updates = hs.n_updates + still_running + new_halted
    weights = p * still_running + new_halted * remainders

    w = weights.reshape(weights.shape + (1,))
    new_state = transformed_state * w + hs.previous_state * (1.0 - w)
    return replace(hs, halting_probability=hp, remainders=remainders,
                   n_updates=n_updates, previous_state=new_state,
                   step=hs.step + 1, update_weights=weights)


@dataclass
class ActResult:
    output: Tensor  # accumulated state, (..., m, d)
    n_updates: np.ndarray
    remainders: Tensor
    halting_probability: Tensor
    steps: int
    weights: list = field(default_factory=list)  # per-step update weights (ndarray)


def run_act(state: Tensor, step_fn: Callable[[Tensor, int], Tensor],
            halt_fn: Callable[[Tensor, int], Tensor], threshold: float, max_steps: int,
            halted: Optional[np.ndarray] = None) -> ActResult:
    """Apply ``step_fn`` under per-position halting.

    ``step_fn(state, t)`` and ``halt_fn(state, t)`` both receive the carried
    state and the 1-based step index; ``halt_fn`` returns per-position
    probabilities. Positions in ``halted`` (padding) never update.
    """
    hs = HaltingState.initial(state.shape, threshold, max_steps, halted, dtype=state.dtype)
    weights = []
    while should_continue(hs):
        t = hs.step + 1
        p = halt_fn(state, t)
        transformed = step_fn(state, t)
        hs = act_step(hs, transformed, p)
        weights.append(hs.update_weights.data)
        state = transformed
    return ActResult(hs.previous_state, hs.n_updates, hs.remainders,
                     hs.halting_probability, hs.step, weights)


def ponder_stats(ponder, mask=None) -> dict:
    """Mean, population std and integer histogram of update counts over unmasked positions."""
    ponder = np.asarray(ponder, dtype=np.float64)
    if mask is None:
        values = ponder.reshape(-1)
    else:
        values = ponder[np.asarray(mask, dtype=bool)]
    if values.size == 0:
        raise ValueError("ponder_stats: mask selects no positions")
    counts = np.rint(values).astype(np.int64)
    hist = {int(k): int(v) for k, v in zip(*np.unique(counts, return_counts=True))}
    return {"mean": float(values.mean()), "std": float(values.std()), "histogram": hist}


def format_ponder(mean: float, std: float, digits: int = 1) -> str:
    return f"{mean:.{digits}f} ± {std:.{digits}f}"
