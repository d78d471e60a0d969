"""PGD adversarial attacks under l2 and linf balls, and robust-loss estimation.

Iterates x <- project_ball(clamp(x + step), x0, eps) with step
step_size * g / ||g||_2 (l2) or step_size * sign(g) (linf), where g is the
input gradient of the loss. The returned example is the highest-loss iterate
encountered (including the start when random_start is off), so per-sample
adversarial loss never drops below the clean loss.

Clamping runs before projection: since the center already lies in
[clamp_lo, clamp_hi], projecting a clamped point toward the center keeps every
coordinate inside the pixel range, and the ball constraint holds exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .losses import Geometry, cross_entropy_batch
from .network import MlpParams, forward_batch, input_grad_batch
from .tensor import Rng, Vector, as_vector

if TYPE_CHECKING:  # pragma: no cover
    from .data import Dataset


@dataclass
class AttackConfig:
    geometry: Geometry
    epsilon: float
    steps: int
    step_size: float
    clamp_lo: float = 0.0
    clamp_hi: float = 1.0
    random_start: bool = False
    rng: Rng | None = None

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if self.clamp_lo >= self.clamp_hi:
            raise ValueError("clamp_lo must be below clamp_hi")
        if self.random_start and self.rng is None:
            raise ValueError("random_start needs an rng")


@dataclass
class AdversarialExample:
    x_adv: Vector
    loss_adv: float
    predicted: int


def project_ball(x: Vector, center: Vector, epsilon: float, geometry: Geometry) -> Vector:
    """Nearest point of the epsilon-ball around center; idempotent."""
    x = as_vector(x)
    center = as_vector(center)
    delta = x - center
    if geometry is Geometry.L2:
        norm = float(np.linalg.norm(delta))
        if norm > epsilon:
            delta = delta * (epsilon / norm) if norm > 0 else delta
        return center + delta
    return center + np.clip(delta, -epsilon, epsilon)


def _project_batch(xs, centers, epsilon, geometry):
    delta = xs - centers
    if geometry is Geometry.L2:
        norm = np.linalg.norm(delta, axis=1)
        scale = np.ones_like(norm)
        over = norm > epsilon
        scale[over] = epsilon / norm[over]
        return centers + delta * scale[:, None]
    return centers + np.clip(delta, -epsilon, epsilon)


def _random_start_batch(x0: np.ndarray, cfg: AttackConfig, base_index: int) -> np.ndarray:
    """Uniform draw inside the ball, one derived stream per sample index."""
    n, d = x0.shape
    deltas = np.empty_like(x0)
    for i in range(n):
        r = cfg.rng.derive(base_index + i)
        if cfg.geometry is Geometry.LINF:
            deltas[i] = r.uniform(-cfg.epsilon, cfg.epsilon, size=d)
        else:
            direction = r.normal(size=d)
            nrm = float(np.linalg.norm(direction))
            if nrm == 0.0:
                deltas[i] = 0.0
                continue
            radius = cfg.epsilon * float(r.uniform()) ** (1.0 / d)
            deltas[i] = direction * (radius / nrm)
    return x0 + deltas


def pgd_attack_batch(
    params: MlpParams,
    x0: np.ndarray,
    labels: np.ndarray,
    cfg: AttackConfig,
    base_index: int = 0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Attack every row of x0; returns (x_adv, loss_adv, predicted)."""
    x0 = np.ascontiguousarray(x0, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if cfg.random_start:
        x = _random_start_batch(x0, cfg, base_index)
        x = np.clip(x, cfg.clamp_lo, cfg.clamp_hi)
        x = _project_batch(x, x0, cfg.epsilon, cfg.geometry)
    else:
        x = x0.copy()

    def eval_loss(xs):
        bt = forward_batch(params, xs)
        values, grads = cross_entropy_batch(bt.logits, labels)
        return bt, values, grads

    bt, best_loss, grads = eval_loss(x)
    best_x = x.copy()
    best_logits = bt.logits.copy()
    for _ in range(cfg.steps):
        g = input_grad_batch(params, bt, grads)
        if cfg.geometry is Geometry.L2:
            norm = np.linalg.norm(g, axis=1)
            nonzero = norm > 0
            step = np.zeros_like(g)
            step[nonzero] = g[nonzero] * (cfg.step_size / norm[nonzero, None])
        else:
            step = cfg.step_size * np.sign(g)
        x = np.clip(x + step, cfg.clamp_lo, cfg.clamp_hi)
        x = _project_batch(x, x0, cfg.epsilon, cfg.geometry)
        bt, values, grads = eval_loss(x)
        better = values > best_loss
        best_loss[better] = values[better]
        best_x[better] = x[better]
        best_logits[better] = bt.logits[better]
    return best_x, best_loss, best_logits.argmax(axis=1)


def pgd_attack(params: MlpParams, x0: Vector, label: int, cfg: AttackConfig) -> AdversarialExample:
    """PGD on a single sample; see the module docstring for the update rule."""
    x0 = as_vector(x0)
    if np.any(x0 < cfg.clamp_lo) or np.any(x0 > cfg.clamp_hi):
        raise ValueError("x0 must lie inside [clamp_lo, clamp_hi]")
    x_adv, loss_adv, predicted = pgd_attack_batch(
        params, x0[None, :], np.array([label]), cfg
    )
    return AdversarialExample(
        x_adv=x_adv[0], loss_adv=float(loss_adv[0]), predicted=int(predicted[0])
    )


def robust_metrics(
    params: MlpParams, dataset: "Dataset", cfg: AttackConfig, chunk: int = 2048
) -> dict[str, float]:
    """PGD estimate of adversarial accuracy and mean adversarial loss."""
    n = dataset.xs.shape[0]
    if n == 0:
        raise ValueError("robust_metrics needs a nonempty dataset")
    correct = 0
    loss_total = 0.0
    for lo in range(0, n, chunk):
        xs = dataset.xs[lo:lo + chunk]
        ys = dataset.ys[lo:lo + chunk]
        _, losses, preds = pgd_attack_batch(params, xs, ys, cfg, base_index=lo)
        correct += int((preds == ys).sum())
        loss_total += float(losses.sum())
    return {"robust_accuracy": correct / n, "robust_loss_mean": loss_total / n}
