"""
Adam optimizer for tensor-core parameters
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from ..utils.errors import ShapeError
from .tensor import Tensor


@dataclass
class AdamState:
    """First/second moment estimates and step counter for a parameter list"""

    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Sequence[Tensor], **hyper: float) -> "AdamState":
        return cls(
            m=[np.zeros_like(p.data) for p in params],
            v=[np.zeros_like(p.data) for p in params],
            **hyper,
        )


def adam_step(
    params: Sequence[Tensor],
    grads: Sequence[Optional[np.ndarray]],
    state: AdamState,
) -> AdamState:
    """
    Apply one bias-corrected Adam update in place

    Parameters whose gradient is None keep their value and moments.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError(
            f"Adam got {len(params)} parameters, {len(grads)} gradients and {len(state.m)} moment slots"
        )
    state.t += 1
    bias1 = 1.0 - state.beta1 ** state.t
    bias2 = 1.0 - state.beta2 ** state.t

    for i, (param, grad) in enumerate(zip(params, grads)):
        if grad is None:
            continue
        if grad.shape != param.shape:
            raise ShapeError(f"Gradient shape {grad.shape} does not match parameter {param.shape}")
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grad
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grad * grad
        m_hat = state.m[i] / bias1
        v_hat = state.v[i] / bias2
        param.data -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(param.dtype, copy=False)
    return state


class Adam:
    """Stateful wrapper that reads grads from the parameters themselves"""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.state = AdamState.for_params(self.params, lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def step(self) -> None:
        adam_step(self.params, [p.grad for p in self.params], self.state)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()
