"""Parameter update rules (SGD family and Adam family) and LR schedules."""

from dataclasses import dataclass, field

import numpy as np

OPTIMIZER_KINDS = ("sgd", "sgd_momentum", "adam", "amsgrad", "adamax", "nadam")


class NonFiniteGradient(RuntimeError):
    """A gradient contained NaN/inf; the step was aborted."""


@dataclass
class OptimizerState:
    kind: str
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    momentum: float = 0.9
    step_count: int = 0
    slots: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in OPTIMIZER_KINDS:
            raise ValueError(f"unknown optimizer {self.kind!r}")

    def _slot(self, name, param):
        if name not in self.slots:
            self.slots[name] = np.zeros_like(param)
        return self.slots[name]


def optimizer_step(state, params, grads, lr=None):
    """Apply one in-place update to every parameter.

    ``params`` and ``grads`` are name -> Tensor maps with identical keys.
    Non-finite gradients abort the step before any parameter is touched.
    """
    if lr is None:
        lr = state.lr
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    missing = [k for k in params if k not in grads]
    if missing:
        raise KeyError(f"missing gradients for: {sorted(missing)}")
    for name in params:
        if not np.all(np.isfinite(grads[name].data)):
            raise NonFiniteGradient(f"non-finite gradient for {name!r}")

    state.step_count += 1
    t = state.step_count
    b1, b2, eps, mu = state.beta1, state.beta2, state.epsilon, state.momentum

    for name, param in params.items():
        g = grads[name].data.astype(param.data.dtype, copy=False)
        w = param.data
        if state.kind == "sgd":
            w -= lr * g
        elif state.kind == "sgd_momentum":
            v = state._slot(f"{name}/v", w)
            v[...] = mu * v + g
            w -= lr * v
        elif state.kind == "adam":
            m = state._slot(f"{name}/m", w)
            v = state._slot(f"{name}/v", w)
            m[...] = b1 * m + (1 - b1) * g
            v[...] = b2 * v + (1 - b2) * g * g
            m_hat = m / (1 - b1 ** t)
            v_hat = v / (1 - b2 ** t)
            w -= lr * m_hat / (np.sqrt(v_hat) + eps)
        elif state.kind == "amsgrad":
            # second moment kept uncorrected; element-wise running max
            m = state._slot(f"{name}/m", w)
            v = state._slot(f"{name}/v", w)
            vmax = state._slot(f"{name}/vmax", w)
            m[...] = b1 * m + (1 - b1) * g
            v[...] = b2 * v + (1 - b2) * g * g
            np.maximum(vmax, v, out=vmax)
            m_hat = m / (1 - b1 ** t)
            w -= lr * m_hat / (np.sqrt(vmax) + eps)
        elif state.kind == "adamax":
            m = state._slot(f"{name}/m", w)
            u = state._slot(f"{name}/u", w)
            m[...] = b1 * m + (1 - b1) * g
            np.maximum(b2 * u, np.abs(g), out=u)
            w -= (lr / (1 - b1 ** t)) * m / (u + eps)
        elif state.kind == "nadam":
            m = state._slot(f"{name}/m", w)
            v = state._slot(f"{name}/v", w)
            m[...] = b1 * m + (1 - b1) * g
            v[...] = b2 * v + (1 - b2) * g * g
            m_hat = m / (1 - b1 ** t)
            v_hat = v / (1 - b2 ** t)
            m_nesterov = b1 * m_hat + (1 - b1) * g / (1 - b1 ** t)
            w -= lr * m_nesterov / (np.sqrt(v_hat) + eps)
    return params, state


@dataclass(frozen=True)
class LrSchedule:
    """Step decay (default) or the halve-once-late variant.

    When ``halve_at_end`` is set, the learning rate stays at ``initial_lr``
    and is halved once from that epoch onward; otherwise it decays by
    ``decay_factor`` every ``decay_every`` epochs.
    """
    initial_lr: float = 1e-3
    decay_factor: float = 0.6
    decay_every: int = 9
    halve_at_end: int | None = None


def lr_at(schedule, epoch):
    if epoch < 0:
        raise ValueError(f"epoch must be non-negative, got {epoch}")
    if schedule.halve_at_end is not None:
        return schedule.initial_lr * (0.5 if epoch >= schedule.halve_at_end else 1.0)
    return schedule.initial_lr * schedule.decay_factor ** (epoch // schedule.decay_every)
