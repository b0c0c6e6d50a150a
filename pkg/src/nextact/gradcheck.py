"""Central finite-difference verification of the full training objective.

Builds a small model on random data, computes analytic gradients for every
parameter, and compares entry by entry against (f(w+h) - f(w-h)) / 2h.
The relative error uses max(1, |analytic|, |numeric|) as denominator so
near-zero gradients are judged on absolute error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import seeding
from .data import AnticipationInstance
from .errors import ParameterError
from .model import SrlParams, forward_loss

__all__ = ["GradCheckReport", "run_gradcheck", "relative_error"]


def relative_error(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.abs(a - b) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))


@dataclass
class GradCheckReport:
    worst: float
    worst_param: str
    tolerance: float
    per_param: dict

    @property
    def passed(self) -> bool:
        return self.worst < self.tolerance


def run_gradcheck(
    dim: int = 8,
    o: int = 3,
    a: int = 2,
    n_contrast: int = 4,
    n_classes: int = 3,
    seed: int = 0,
    step: float = 1e-5,
    tolerance: float = 1e-4,
    aggregator: str = "gru",
    alpha: float = 0.7,
    beta: float = 0.9,
    corrupt: str | None = None,
) -> GradCheckReport:
    """Compare every parameter gradient of the full loss to central FD.

    ``corrupt`` (test hook) perturbs the named parameter's analytic gradient
    before comparison, to prove the checker catches broken adjoints.
    """
    if step <= 0 or tolerance <= 0:
        raise ParameterError("step and tolerance must be positive")
    rng = seeding.stream(seed, "gradcheck")
    params = SrlParams.create(
        dim, n_classes, n_classes, n_classes, rng,
        aggregator=aggregator, dropout=0.0, alpha=alpha, beta=beta,
    )
    instance = AnticipationInstance(
        video_id="gradcheck",
        observed=rng.uniform(-2.0, 2.0, size=(o, dim)),
        future=rng.uniform(-2.0, 2.0, size=(a, dim)),
        horizon=a,
        labels=(
            int(rng.integers(n_classes)),
            int(rng.integers(n_classes)),
            int(rng.integers(n_classes)),
        ),
    )
    negatives = [rng.uniform(-2.0, 2.0, size=(n_contrast - 1, dim)) for _ in range(a)]

    def loss_value() -> float:
        loss, _, _ = forward_loss(params, instance, negatives, rng=None, training=False)
        return loss.item()

    loss, _, bound = forward_loss(params, instance, negatives, rng=None, training=False)
    bound.graph.backward(loss)
    analytic = {name: g.copy() for name, g in bound.grad_by_name().items()}
    if corrupt is not None:
        if corrupt not in analytic:
            raise ParameterError(f"no parameter named {corrupt!r} to corrupt")
        analytic[corrupt] += 0.5 * np.abs(analytic[corrupt]) + 1e-2

    per_param = {}
    worst = -1.0
    worst_param = ""
    for name, arr in params.named_arrays():
        flat = arr.ravel()
        fd = np.empty_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = loss_value()
            flat[i] = orig - step
            fm = loss_value()
            flat[i] = orig
            fd[i] = (fp - fm) / (2.0 * step)
        err = float(relative_error(analytic[name].ravel(), fd).max())
        per_param[name] = err
        if err > worst:
            worst = err
            worst_param = name
    return GradCheckReport(worst=worst, worst_param=worst_param, tolerance=tolerance, per_param=per_param)
