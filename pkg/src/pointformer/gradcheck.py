"""Central finite-difference checking of tape gradients.

The checker is the independent oracle for every backward rule in the
package: it perturbs each input coordinate by +/-step, re-evaluates the
function without any tape, and compares the difference quotient against the
gradient the tape produced.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import GradientError
from .tensor import Tape, Tensor

# relative error denominator floor; differences below floor*tolerance are
# treated as matching (protects near-zero gradients from FD roundoff)
_DENOM_FLOOR = 1e-3


@dataclass
class GradCheckFailure:
    input_index: int
    coord: int
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    passed: bool
    per_input: list[float] = field(default_factory=list)
    failures: list[GradCheckFailure] = field(default_factory=list)

    def __str__(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return (
            f"gradient check {status}: max relative error "
            f"{self.max_rel_error:.3e} (tolerance {self.tolerance:.1e}, "
            f"{len(self.failures)} failing coordinates)"
        )


def gradient_check(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    step: float = 1e-5,
    tolerance: float = 1e-4,
) -> GradCheckReport:
    """Compare tape gradients of ``fn(*inputs)`` against central differences.

    ``fn`` must return a scalar Tensor and be deterministic. All checked
    inputs must be float64 leaves (``requires_grad=True``); float32 rounding
    would swamp the difference quotient. Failures do not raise; they are
    returned as report entries.
    """
    inputs = list(inputs)
    for i, t in enumerate(inputs):
        if not isinstance(t, Tensor) or not t.requires_grad:
            raise GradientError(f"input {i} is not a requires_grad Tensor")
        if t.data.dtype != np.float64:
            raise GradientError(f"input {i} must be float64 for gradient checking")
        t.zero_grad()

    with Tape() as tape:
        loss = fn(*inputs)
    if loss.size != 1:
        raise GradientError("gradient_check needs a scalar-valued function")
    tape.backward(loss)
    analytic = [t.grad.copy() for t in inputs]

    report = GradCheckReport(max_rel_error=0.0, tolerance=tolerance, passed=True)
    for i, t in enumerate(inputs):
        flat = t.data.reshape(-1)
        an = analytic[i].reshape(-1)
        worst = 0.0
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            f_plus = float(fn(*inputs).data)
            flat[j] = orig - step
            f_minus = float(fn(*inputs).data)
            flat[j] = orig
            num = (f_plus - f_minus) / (2.0 * step)
            denom = max(abs(an[j]), abs(num), _DENOM_FLOOR)
            rel = abs(an[j] - num) / denom
            worst = max(worst, rel)
            if rel >= tolerance:
                report.failures.append(
                    GradCheckFailure(i, j, float(an[j]), float(num), float(rel))
                )
        report.per_input.append(worst)
        report.max_rel_error = max(report.max_rel_error, worst)
    report.passed = report.max_rel_error < tolerance
    return report
