"""Closed-form complexity and generalization-gap bounds for the trained nets.

Everything here is a deterministic formula of dataset statistics and measured
model quantities:

  parameter-Lipschitz constants, with base = R_theta / sqrt(L-1):
    lip_loss = sqrt(L) * Lip2 * mean||x||_2 * base^(L-1)
    lip_frob = 2 sqrt(L) * base^(2L-1)
    lip_l11  = sqrt(L k d)  * base^(L-1)

  Rademacher bounds, with delta_sup the radius of the function class:
    12 * delta_sup * sqrt(P/n) * ( sqrt(|log(3 R_theta Lip / delta_sup)|)
                                   + sqrt(pi/2) )
  where (delta_sup, Lip) is (sqrt(2 r2 mean||x||^2), lip_loss) or
  (r1 R_x, lip_loss) for the loss class and (r2, lip_frob) or (r1, lip_l11)
  for the Jacobian-penalty class. The absolute value inside the log is applied
  exactly as printed, so arguments below 1 stay real.

  surrogate complexity adds the penalty-weighted Jacobian term, and the
  generalization gap is 2 * surrogate complexity + 3 C sqrt(log(2/delta)/2n)
  with C = B + (1/2) lam eps Lip2^2 B2 (l2) or B + lam eps LipInf B1 (linf).

Powers of base are computed in log space; overflow reports +inf and the
report's vacuity flag. Any gap bound exceeding the loss range B is flagged
vacuous rather than hidden.

CSV sweep header (fixed):
    depth,r_theta,n,r1,r2,lam,epsilon,lip_loss,lip_frob,lip_l11,
    rad_loss_r2,rad_loss_r1,rad_jac_frob,rad_jac_l11,
    rad_surrogate_l2,rad_surrogate_linf,gap_bound_l2,gap_bound_linf,
    vacuous_l2,vacuous_linf
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING

import numpy as np

from .losses import LIP_L2_CAP, LIP_LINF_CAP, cross_entropy_batch

if TYPE_CHECKING:  # pragma: no cover
    from .data import Dataset
    from .network import MlpParams


class DomainError(ValueError):
    """Bound formula evaluated outside its domain (e.g. r1, r2 <= 0)."""


class Regime(Enum):
    R2 = "r2"  # frobenius-squared penalty class
    R1 = "r1"  # entrywise-l1 penalty class


@dataclass
class DatasetStats:
    n: int
    mean_x_l2: float      # (1/n) sum ||x_i||_2
    mean_x_l2_sq: float   # (1/n) sum ||x_i||_2^2
    r_x: float            # max_i ||x_i||_inf
    d: int
    k: int

    def __post_init__(self):
        # Jensen: (mean ||x||)^2 <= mean ||x||^2 (tiny float slack allowed)
        if self.mean_x_l2 ** 2 > self.mean_x_l2_sq * (1 + 1e-12) + 1e-12:
            raise ValueError("inconsistent stats: (mean||x||)^2 > mean||x||^2")


@dataclass
class BoundInputs:
    r_theta: float
    num_params: int
    depth: int
    r1: float
    r2: float
    lam: float
    epsilon: float
    b: float
    b1: float
    b2: float
    delta: float
    lip_l2: float = LIP_L2_CAP
    lip_linf: float = LIP_LINF_CAP

    def __post_init__(self):
        if self.depth < 2:
            raise DomainError("depth must be >= 2")
        if not 0 < self.delta < 1:
            raise DomainError("delta must lie in (0, 1)")
        for name in ("r_theta", "r1", "r2", "lam", "epsilon", "b", "b1", "b2"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be nonnegative")


@dataclass
class BoundReport:
    lip_loss: float
    lip_frob: float
    lip_l11: float
    rad_loss_r2: float
    rad_loss_r1: float
    rad_jac_frob: float
    rad_jac_l11: float
    rad_surrogate_l2: float
    rad_surrogate_linf: float
    gap_bound_l2: float
    gap_bound_linf: float
    vacuous_l2: bool
    vacuous_linf: bool


def _base_power(r_theta: float, depth: int, exponent: int) -> float:
    """(r_theta / sqrt(depth-1)) ** exponent in log space; overflow -> inf."""
    if r_theta == 0.0:
        return 0.0 if exponent > 0 else 1.0
    log_val = exponent * (math.log(r_theta) - 0.5 * math.log(depth - 1))
    if log_val > 700.0:  # exp overflows float64 just above 709
        return math.inf
    return math.exp(log_val)


def lipschitz_param_constants(stats: DatasetStats, inp: BoundInputs) -> dict[str, float]:
    """Lipschitz constants of loss / ||J||_F^2 / ||J||_1,1 in the parameters."""
    L = inp.depth
    base_lm1 = _base_power(inp.r_theta, L, L - 1)
    base_2lm1 = _base_power(inp.r_theta, L, 2 * L - 1)
    return {
        "lip_loss": math.sqrt(L) * inp.lip_l2 * stats.mean_x_l2 * base_lm1,
        "lip_frob": 2.0 * math.sqrt(L) * base_2lm1,
        "lip_l11": math.sqrt(L * stats.k * stats.d) * base_lm1,
    }


def _dudley_value(delta_sup: float, lip: float, r_theta: float,
                  num_params: int, n: int) -> float:
    if delta_sup <= 0:
        raise DomainError("class radius must be positive")
    if math.isinf(lip):
        return math.inf
    log_arg = 3.0 * r_theta * lip / delta_sup
    if log_arg <= 0:
        raise DomainError("log argument must be positive")
    return (
        12.0
        * delta_sup
        * math.sqrt(num_params / n)
        * (math.sqrt(abs(math.log(log_arg))) + math.sqrt(math.pi / 2.0))
    )


def rademacher_loss_bound(stats: DatasetStats, inp: BoundInputs, regime: Regime) -> float:
    """Rademacher complexity bound of the standard loss class."""
    lip = lipschitz_param_constants(stats, inp)["lip_loss"]
    if regime is Regime.R2:
        if inp.r2 <= 0:
            raise DomainError("r2 must be positive")
        delta_sup = math.sqrt(2.0 * inp.r2 * stats.mean_x_l2_sq)
    else:
        if inp.r1 <= 0:
            raise DomainError("r1 must be positive")
        delta_sup = inp.r1 * stats.r_x
    return _dudley_value(delta_sup, lip, inp.r_theta, inp.num_params, stats.n)


def rademacher_jacobian_bound(stats: DatasetStats, inp: BoundInputs, regime: Regime) -> float:
    """Rademacher complexity bound of the Jacobian-penalty class."""
    consts = lipschitz_param_constants(stats, inp)
    if regime is Regime.R2:
        if inp.r2 <= 0:
            raise DomainError("r2 must be positive")
        return _dudley_value(inp.r2, consts["lip_frob"], inp.r_theta,
                             inp.num_params, stats.n)
    if inp.r1 <= 0:
        raise DomainError("r1 must be positive")
    return _dudley_value(inp.r1, consts["lip_l11"], inp.r_theta,
                         inp.num_params, stats.n)


def surrogate_complexity(
    stats: DatasetStats,
    inp: BoundInputs,
    loss_bounds: tuple[float, float] | None = None,
    jac_bounds: tuple[float, float] | None = None,
) -> dict[str, float]:
    """Complexity of the penalised losses: loss class + weighted penalty class.

    The component bounds are computed from (stats, inp) unless given
    explicitly as (r2-regime value, r1-regime value) pairs.
    """
    if loss_bounds is None:
        loss_bounds = (rademacher_loss_bound(stats, inp, Regime.R2),
                       rademacher_loss_bound(stats, inp, Regime.R1))
    if jac_bounds is None:
        jac_bounds = (rademacher_jacobian_bound(stats, inp, Regime.R2),
                      rademacher_jacobian_bound(stats, inp, Regime.R1))
    return {
        "rad_surrogate_l2": (
            loss_bounds[0]
            + 0.5 * inp.lam * inp.epsilon * inp.lip_l2 ** 2 * jac_bounds[0]
        ),
        "rad_surrogate_linf": (
            loss_bounds[1] + inp.lam * inp.epsilon * inp.lip_linf * jac_bounds[1]
        ),
    }


def generalization_gap_bound(stats: DatasetStats, inp: BoundInputs) -> dict[str, float]:
    """High-probability gap between expected and empirical surrogate risk."""
    surr = surrogate_complexity(stats, inp)
    conf = math.sqrt(math.log(2.0 / inp.delta) / (2.0 * stats.n))
    c2 = inp.b + 0.5 * inp.lam * inp.epsilon * inp.lip_l2 ** 2 * inp.b2
    cinf = inp.b + inp.lam * inp.epsilon * inp.lip_linf * inp.b1
    return {
        "gap_bound_l2": 2.0 * surr["rad_surrogate_l2"] + 3.0 * c2 * conf,
        "gap_bound_linf": 2.0 * surr["rad_surrogate_linf"] + 3.0 * cinf * conf,
    }


def compute_report(stats: DatasetStats, inp: BoundInputs) -> BoundReport:
    consts = lipschitz_param_constants(stats, inp)
    surr = surrogate_complexity(stats, inp)
    gap = generalization_gap_bound(stats, inp)
    return BoundReport(
        lip_loss=consts["lip_loss"],
        lip_frob=consts["lip_frob"],
        lip_l11=consts["lip_l11"],
        rad_loss_r2=rademacher_loss_bound(stats, inp, Regime.R2),
        rad_loss_r1=rademacher_loss_bound(stats, inp, Regime.R1),
        rad_jac_frob=rademacher_jacobian_bound(stats, inp, Regime.R2),
        rad_jac_l11=rademacher_jacobian_bound(stats, inp, Regime.R1),
        rad_surrogate_l2=surr["rad_surrogate_l2"],
        rad_surrogate_linf=surr["rad_surrogate_linf"],
        gap_bound_l2=gap["gap_bound_l2"],
        gap_bound_linf=gap["gap_bound_linf"],
        vacuous_l2=gap["gap_bound_l2"] > inp.b,
        vacuous_linf=gap["gap_bound_linf"] > inp.b,
    )


def norm_bound_slacks(params: "MlpParams", dataset: "Dataset") -> dict[str, float]:
    """Slacks (rhs - lhs) of the output-norm and loss-range inequalities.

    With r2, r1 the measured mean Jacobian norms of this batch:
      mean||f||_2            <= sqrt(r2) sqrt(mean||x||^2)
      mean||f||_1            <= r1 R_x
      mean|loss - loss_at_0| <= Lip2 sqrt(r2) sqrt(mean||x||^2)
      mean|loss - loss_at_0| <= LipInf r1 R_x
    All four slacks must be >= -1e-9 on any net/batch.
    """
    from .jacobian import batch_stats
    from .network import forward_batch

    xs, ys = dataset.xs, dataset.ys
    stats = batch_stats(params, xs)
    mean_x_sq = float((xs * xs).sum(axis=1).mean())
    r_x = float(np.abs(xs).max()) if xs.size else 0.0
    bt = forward_batch(params, xs)
    mean_f_l2 = float(np.linalg.norm(bt.logits, axis=1).mean())
    mean_f_l1 = float(np.abs(bt.logits).sum(axis=1).mean())
    losses, _ = cross_entropy_batch(bt.logits, ys)
    loss_at_zero = math.log(params.dims[-1])  # zero net gives uniform softmax
    mean_loss_shift = float(np.abs(losses - loss_at_zero).mean())

    rhs_l2 = math.sqrt(stats.mean_frob_sq) * math.sqrt(mean_x_sq)
    rhs_l1 = stats.mean_l11 * r_x
    return {
        "output_l2_slack": rhs_l2 - mean_f_l2,
        "output_l1_slack": rhs_l1 - mean_f_l1,
        "loss_shift_l2_slack": LIP_L2_CAP * rhs_l2 - mean_loss_shift,
        "loss_shift_l1_slack": LIP_LINF_CAP * rhs_l1 - mean_loss_shift,
    }


SWEEP_HEADER = [
    "depth", "r_theta", "n", "r1", "r2", "lam", "epsilon",
    "lip_loss", "lip_frob", "lip_l11",
    "rad_loss_r2", "rad_loss_r1", "rad_jac_frob", "rad_jac_l11",
    "rad_surrogate_l2", "rad_surrogate_linf",
    "gap_bound_l2", "gap_bound_linf", "vacuous_l2", "vacuous_linf",
]


def sweep_row(stats: DatasetStats, inp: BoundInputs, report: BoundReport) -> list:
    return [
        inp.depth, repr(inp.r_theta), stats.n, repr(inp.r1), repr(inp.r2),
        repr(inp.lam), repr(inp.epsilon),
        repr(report.lip_loss), repr(report.lip_frob), repr(report.lip_l11),
        repr(report.rad_loss_r2), repr(report.rad_loss_r1),
        repr(report.rad_jac_frob), repr(report.rad_jac_l11),
        repr(report.rad_surrogate_l2), repr(report.rad_surrogate_linf),
        repr(report.gap_bound_l2), repr(report.gap_bound_linf),
        int(report.vacuous_l2), int(report.vacuous_linf),
    ]


def write_sweep_csv(path, rows: list[list]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(SWEEP_HEADER)
        writer.writerows(rows)
