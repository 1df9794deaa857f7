"""Adam, EMA weight tracking and learning-rate schedules."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class OptimizerState:
    """Bias-corrected Adam state over a named parameter set."""

    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)


def init_adam(params: dict[str, Tensor], beta1: float = 0.9, beta2: float = 0.999,
              epsilon: float = 1e-8) -> OptimizerState:
    state = OptimizerState(step=0, beta1=beta1, beta2=beta2, epsilon=epsilon)
    for name, p in params.items():
        state.first_moment[name] = np.zeros_like(p.data)
        state.second_moment[name] = np.zeros_like(p.data)
    return state


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
              state: OptimizerState, lr: float) -> OptimizerState:
    """One in-place Adam update; the caller owns params and state."""
    if lr <= 0:
        raise ValueError(f"lr must be positive, got {lr}")
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.data.shape} for {name}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads[name]
        m = state.first_moment[name]
        v = state.second_moment[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    return state


@dataclass
class EmaState:
    """Exponential moving average of parameter values, fixed decay."""

    decay: float
    shadow: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 < self.decay < 1.0:
            raise ValueError(f"decay must lie in (0, 1), got {self.decay}")

    def snapshot(self) -> dict[str, Tensor]:
        """Shadow values wrapped as read-only evaluation parameters."""
        return {name: Tensor(arr.copy()) for name, arr in self.shadow.items()}


def init_ema(params: dict[str, Tensor], decay: float) -> EmaState:
    ema = EmaState(decay=decay)
    for name, p in params.items():
        ema.shadow[name] = p.data.copy()
    return ema


def ema_update(ema: EmaState, params: dict[str, Tensor]) -> EmaState:
    d = ema.decay
    for name, p in params.items():
        s = ema.shadow[name]
        if s.shape != p.data.shape:
            raise ValueError(f"shadow shape {s.shape} != parameter shape {p.data.shape} for {name}")
        s *= d
        s += (1.0 - d) * p.data
    return ema


@dataclass(frozen=True)
class LrSchedule:
    """Peak-LR/warm-up parameterization of the step-dependent learning rate.

    kind "transformer": peak * min(step/warmup, sqrt(warmup/step)), which
    rises linearly to the peak at warmup_steps then decays as 1/sqrt(step).
    kind "constant-with-linear-warmup": peak * min(step/warmup, 1).
    """

    peak_lr: float
    warmup_steps: int
    kind: str = "transformer"

    def __post_init__(self):
        if self.peak_lr <= 0:
            raise ValueError(f"peak_lr must be positive, got {self.peak_lr}")
        if self.warmup_steps < 1:
            raise ValueError(f"warmup_steps must be >= 1, got {self.warmup_steps}")
        if self.kind not in ("transformer", "constant-with-linear-warmup"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")


def lr_at(schedule: LrSchedule, step: int) -> float:
    if step < 1:
        raise ValueError(f"step must be >= 1, got {step}")
    ramp = step / schedule.warmup_steps
    if schedule.kind == "transformer":
        return schedule.peak_lr * min(ramp, math.sqrt(schedule.warmup_steps / step))
    return schedule.peak_lr * min(ramp, 1.0)
