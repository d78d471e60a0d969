"""Softmax cross entropy, its Lipschitz caps, and the Jacobian-penalised surrogates.

The cross-entropy logit gradient satisfies ||g||_2 <= sqrt(2) and
||g||_inf <= 1 for every logits/label pair; those caps are the default
Lipschitz constants entering the surrogate losses. The surrogate adds a scaled
Jacobian norm to the standard loss:

    l2 geometry :  loss + (1/2) lam eps Lip2^2 ||J||_F^2
    linf geometry: loss + lam eps LipInf ||J||_{1,1}
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING

import numpy as np

from .tensor import Vector, as_vector

if TYPE_CHECKING:  # pragma: no cover - type-only import, avoids a cycle
    from .jacobian import Jacobian

LIP_L2_CAP = math.sqrt(2.0)
LIP_LINF_CAP = 1.0


class Geometry(Enum):
    L2 = "l2"
    LINF = "linf"


class PenaltyKind(Enum):
    FROB_SQ = "frob_sq"
    L11 = "l11"


def penalty_for(geometry: Geometry) -> PenaltyKind:
    """Penalty matching an attack geometry: l2 <-> ||J||_F^2, linf <-> ||J||_{1,1}."""
    return PenaltyKind.FROB_SQ if geometry is Geometry.L2 else PenaltyKind.L11


@dataclass
class LossValue:
    value: float
    grad_logits: Vector


@dataclass
class RegConfig:
    """Penalty strength: the effective regularization weight is lam * epsilon."""

    epsilon: float
    lam: float
    norm_kind: PenaltyKind
    lip_l2: float = LIP_L2_CAP
    lip_linf: float = LIP_LINF_CAP

    def __post_init__(self):
        if self.epsilon < 0 or self.lam < 0:
            raise ValueError("epsilon and lam must be nonnegative")

    @property
    def effective_lambda(self) -> float:
        return self.lam * self.epsilon

    @classmethod
    def from_effective(cls, effective_lambda: float, epsilon: float,
                       norm_kind: PenaltyKind) -> "RegConfig":
        if effective_lambda == 0:
            return cls(epsilon=epsilon, lam=0.0, norm_kind=norm_kind)
        if epsilon <= 0:
            raise ValueError("epsilon must be positive to recover lam from lam*epsilon")
        return cls(epsilon=epsilon, lam=effective_lambda / epsilon, norm_kind=norm_kind)

    def penalty_coefficient(self) -> float:
        """Multiplier applied to the selected Jacobian norm in the surrogate."""
        if self.norm_kind is PenaltyKind.FROB_SQ:
            return 0.5 * self.lam * self.epsilon * self.lip_l2 ** 2
        return self.lam * self.epsilon * self.lip_linf


def cross_entropy(logits: Vector, label: int) -> LossValue:
    """Nonnegative softmax cross entropy and its logit gradient.

    Stable log-sum-exp (max subtracted) so PGD-hardened logits far apart do
    not overflow. grad = softmax(logits) - onehot(label).
    """
    logits = as_vector(logits)
    label = int(label)
    if not 0 <= label < logits.shape[0]:
        raise ValueError(f"label {label} out of range for k={logits.shape[0]}")
    shifted = logits - logits.max()
    lse = np.log(np.exp(shifted).sum())
    value = float(lse - shifted[label])
    grad = np.exp(shifted - lse)
    grad[label] -= 1.0
    return LossValue(value=value, grad_logits=grad)


def cross_entropy_batch(logits: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized cross_entropy over rows: returns (values n, grads n x k)."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    idx = np.arange(logits.shape[0])
    values = lse - shifted[idx, labels]
    grads = np.exp(shifted - lse[:, None])
    grads[idx, labels] -= 1.0
    return values, grads


def lipschitz_check(logits: Vector, label: int) -> dict[str, float]:
    """l2 and linf norms of the loss gradient (bounded by sqrt(2) and 1)."""
    g = cross_entropy(logits, label).grad_logits
    return {"l2": float(np.linalg.norm(g)), "linf": float(np.abs(g).max())}


def surrogate_loss(loss: LossValue, jac: "Jacobian", cfg: RegConfig) -> float:
    """Standard loss plus the penalty selected by cfg.norm_kind."""
    norm = jac.frob_sq if cfg.norm_kind is PenaltyKind.FROB_SQ else jac.l11
    return loss.value + cfg.penalty_coefficient() * norm


def first_order_upper_bound(loss: LossValue, jac: "Jacobian", epsilon: float,
                            geometry: Geometry, lip_l2: float = LIP_L2_CAP,
                            lip_linf: float = LIP_LINF_CAP) -> float:
    """Upper bound on the first-order approximation of the robust loss.

    l2 ball:   loss + eps/2 + (eps/2) Lip2^2 ||J||_F^2
    linf ball: loss + eps LipInf ||J||_{1,1}
    """
    if geometry is Geometry.L2:
        return loss.value + 0.5 * epsilon + 0.5 * epsilon * lip_l2 ** 2 * jac.frob_sq
    return loss.value + epsilon * lip_linf * jac.l11
