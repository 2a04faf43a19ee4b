"""
Central finite-difference gradient checking
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from ..utils.errors import ConfigError
from ..utils.logger import default_logger
from .ops import relu_trace
from .tensor import Tape, Tensor

logger = default_logger


@dataclass
class GradCheckReport:
    """Worst relative error between analytic and numerical gradients"""

    max_rel_error: float = 0.0
    checked: int = 0
    skipped: int = 0
    per_param: Dict[str, float] = field(default_factory=dict)

    def passed(self, tolerance: float) -> bool:
        return self.checked > 0 and self.max_rel_error < tolerance


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    return abs(analytic - numeric) / max(abs(analytic) + abs(numeric), floor)


def _same_patterns(a: List[np.ndarray], b: List[np.ndarray]) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def grad_check(
    fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    samples: Optional[int] = None,
    eps: float = 1e-5,
    seed: int = 0,
) -> GradCheckReport:
    """
    Compare backward() gradients with central differences

    Args:
        fn: Builds the scalar loss from the current parameter values
        params: float64 tensors to check (parameters or inputs)
        samples: Coordinates sampled per tensor; all coordinates when None
        eps: Finite-difference step
        seed: Seed of the coordinate sampler

    A coordinate is skipped when any relu changes its activation pattern
    between the +eps and -eps evaluations, which covers inputs sitting
    exactly at the kink.
    """
    for p in params:
        if p.dtype != np.float64:
            raise ConfigError(f"grad_check needs float64 tensors, got {p.dtype} for {p.name or 'tensor'}")

    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = fn()
    tape.backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    rng = np.random.default_rng(seed)
    report = GradCheckReport()

    for index, (param, grad) in enumerate(zip(params, analytic)):
        name = param.name or f"param{index}"
        flat = param.data.reshape(-1)
        if samples is None or samples >= flat.size:
            coords = np.arange(flat.size)
        else:
            coords = rng.choice(flat.size, size=samples, replace=False)

        worst = 0.0
        for c in coords:
            original = flat[c]
            flat[c] = original + eps
            with relu_trace() as plus_pattern:
                plus = fn().item()
            flat[c] = original - eps
            with relu_trace() as minus_pattern:
                minus = fn().item()
            flat[c] = original

            if not _same_patterns(plus_pattern, minus_pattern):
                report.skipped += 1
                continue
            numeric = (plus - minus) / (2.0 * eps)
            worst = max(worst, relative_error(float(grad.reshape(-1)[c]), numeric))
            report.checked += 1

        report.per_param[name] = worst
        report.max_rel_error = max(report.max_rel_error, worst)

    logger.debug(
        f"grad_check: max rel error {report.max_rel_error:.3e} over {report.checked} coordinates "
        f"({report.skipped} skipped)"
    )
    return report
