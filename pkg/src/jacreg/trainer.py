"""Mini-batch SGD with heavy-ball momentum on the Jacobian-penalised objective.

The update is v <- mu v - lr g, w <- w + v, with g the batch mean of
(cross-entropy gradient + penalty_coefficient * penalty gradient). Training is
deterministic given (seed, config, data) under a fixed BLAS thread count: the
init and shuffle streams are derived from the seed, and batches reduce in a
fixed order.

The epoch CSV has exactly the columns in CSV_COLUMNS, one row per epoch.
Cheap fields (running batch means, training accuracy, the penalty norm when
the penalty sweep already produced it) appear every epoch; evaluation-pass
fields (test accuracy, robust metrics) only on log epochs, where the row is
recomputed on the full sets with end-of-epoch parameters. Empty cells mean
"not logged this epoch".
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .attacks import AttackConfig, robust_metrics
from .data import NUM_CLASSES, Dataset
from .jacobian import JacobianStats, batch_stats, penalty_grads_batch
from .losses import PenaltyKind, RegConfig, cross_entropy_batch
from .network import (
    MlpParams,
    ParamGrad,
    backprop_loss_batch,
    forward_batch,
    init_params,
    save_checkpoint,
)
from .tensor import Rng

CSV_COLUMNS = [
    "epoch", "train_loss", "train_surrogate", "train_jac_norm", "train_acc",
    "test_acc", "robust_train_acc", "robust_test_acc", "robust_loss",
]


@dataclass
class TrainConfig:
    epochs: int
    batch_size: int
    learning_rate: float
    momentum: float
    reg: RegConfig
    seed: int
    log_every: int = 25
    hidden: tuple[int, ...] = (100, 100, 100, 100)
    init_rule: str = "he"

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0 or self.log_every < 1:
            raise ValueError("bad epochs/batch_size/log_every")


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    train_surrogate: float
    train_jac_norm: float | None = None
    train_acc: float | None = None
    test_acc: float | None = None
    robust_train_acc: float | None = None
    robust_test_acc: float | None = None
    robust_loss: float | None = None
    # extras for the robust-vs-surrogate curve output; not part of the epoch CSV
    test_surrogate: float | None = None
    robust_test_loss: float | None = None


@dataclass
class EvalMetrics:
    acc: float
    loss_mean: float
    surrogate_mean: float
    jac_stats: JacobianStats
    robust_acc: float | None = None
    robust_loss: float | None = None


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"non-finite loss at epoch {epoch}")
        self.epoch = epoch


def _batch_step(params: MlpParams, xs: np.ndarray, ys: np.ndarray, reg: RegConfig):
    """One batch: mean loss/surrogate, mean gradient, correct count, norm sum."""
    n = xs.shape[0]
    bt = forward_batch(params, xs)
    losses, dlogits = cross_entropy_batch(bt.logits, ys)
    loss_grads = backprop_loss_batch(params, bt, dlogits)
    correct = int((bt.logits.argmax(axis=1) == ys).sum())
    coeff = reg.penalty_coefficient()
    loss_mean = float(losses.mean())
    if coeff > 0.0:
        pen_grads, frob_sq, l11 = penalty_grads_batch(params, bt, reg.norm_kind)
        norm = frob_sq if reg.norm_kind is PenaltyKind.FROB_SQ else l11
        norm_sum = float(norm.sum())
        grad = [(lg + coeff * pg) / n for lg, pg in zip(loss_grads.layers, pen_grads)]
        surrogate_mean = loss_mean + coeff * norm_sum / n
    else:
        norm_sum = None
        grad = [lg / n for lg in loss_grads.layers]
        surrogate_mean = loss_mean
    return loss_mean, surrogate_mean, grad, correct, norm_sum


def objective_grad(params: MlpParams, xs: np.ndarray, ys: np.ndarray,
                   reg: RegConfig) -> tuple[float, float, ParamGrad]:
    """Batch-mean loss, surrogate, and gradient of the penalised objective."""
    loss, surrogate, grad, _, _ = _batch_step(params, xs, ys, reg)
    return loss, surrogate, ParamGrad(layers=grad)


def evaluate(params: MlpParams, ds: Dataset, reg: RegConfig | None = None,
             attack: AttackConfig | None = None, chunk: int = 2048) -> EvalMetrics:
    """Standard metrics always; PGD robust metrics when an attack is given."""
    n = ds.n
    loss_total = 0.0
    correct = 0
    for lo in range(0, n, chunk):
        bt = forward_batch(params, ds.xs[lo:lo + chunk])
        losses, _ = cross_entropy_batch(bt.logits, ds.ys[lo:lo + chunk])
        loss_total += float(losses.sum())
        correct += int((bt.logits.argmax(axis=1) == ds.ys[lo:lo + chunk]).sum())
    stats = batch_stats(params, ds.xs, chunk=chunk)
    loss_mean = loss_total / n
    surrogate_mean = loss_mean
    if reg is not None and reg.penalty_coefficient() > 0.0:
        norm = (stats.mean_frob_sq if reg.norm_kind is PenaltyKind.FROB_SQ
                else stats.mean_l11)
        surrogate_mean = loss_mean + reg.penalty_coefficient() * norm
    metrics = EvalMetrics(acc=correct / n, loss_mean=loss_mean,
                          surrogate_mean=surrogate_mean, jac_stats=stats)
    if attack is not None:
        rm = robust_metrics(params, ds, attack, chunk=chunk)
        metrics.robust_acc = rm["robust_accuracy"]
        metrics.robust_loss = rm["robust_loss_mean"]
    return metrics


def _fmt(value) -> str:
    return "" if value is None else repr(value)


def _csv_row(log: EpochLog) -> list[str]:
    return [
        str(log.epoch), _fmt(log.train_loss), _fmt(log.train_surrogate),
        _fmt(log.train_jac_norm), _fmt(log.train_acc), _fmt(log.test_acc),
        _fmt(log.robust_train_acc), _fmt(log.robust_test_acc), _fmt(log.robust_loss),
    ]


def write_epoch_csv(logs: list[EpochLog], path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        writer.writerows(_csv_row(log) for log in logs)


def train(
    ds_train: Dataset,
    ds_test: Dataset,
    cfg: TrainConfig,
    attack_for_logging: AttackConfig | None = None,
    csv_path=None,
    checkpoint_path=None,
) -> tuple[MlpParams, list[EpochLog]]:
    """Train from a fresh He init; returns final parameters and epoch logs."""
    d = ds_train.xs.shape[1]
    dims = (d, *cfg.hidden, NUM_CLASSES)
    base = Rng(cfg.seed)
    params = init_params(dims, base.derive(0), cfg.init_rule)
    shuffle_rng = base.derive(1)
    velocity = [np.zeros_like(w) for w in params.layers]
    n = ds_train.n
    logs: list[EpochLog] = []

    writer = None
    csv_file = None
    if csv_path is not None:
        csv_file = open(csv_path, "w", newline="")
        writer = csv.writer(csv_file, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)

    try:
        for epoch in range(1, cfg.epochs + 1):
            order = shuffle_rng.permutation(n)
            loss_sum = surr_sum = 0.0
            correct = 0
            norm_sum = 0.0
            have_norm = True
            for lo in range(0, n, cfg.batch_size):
                sel = order[lo:lo + cfg.batch_size]
                loss, surr, grad, ncorr, bnorm = _batch_step(
                    params, ds_train.xs[sel], ds_train.ys[sel], cfg.reg
                )
                if not np.isfinite(loss) or not np.isfinite(surr):
                    raise TrainingDiverged(epoch)
                for w, v, g in zip(params.layers, velocity, grad):
                    v *= cfg.momentum
                    v -= cfg.learning_rate * g
                    w += v
                loss_sum += loss * len(sel)
                surr_sum += surr * len(sel)
                correct += ncorr
                if bnorm is None:
                    have_norm = False
                else:
                    norm_sum += bnorm

            log = EpochLog(
                epoch=epoch,
                train_loss=loss_sum / n,
                train_surrogate=surr_sum / n,
                train_jac_norm=(norm_sum / n) if have_norm else None,
                train_acc=correct / n,
            )
            if epoch % cfg.log_every == 0 or epoch == cfg.epochs:
                ev_train = evaluate(params, ds_train, reg=cfg.reg,
                                    attack=attack_for_logging)
                ev_test = evaluate(params, ds_test, reg=cfg.reg,
                                   attack=attack_for_logging)
                norm = (ev_train.jac_stats.mean_frob_sq
                        if cfg.reg.norm_kind is PenaltyKind.FROB_SQ
                        else ev_train.jac_stats.mean_l11)
                log.train_loss = ev_train.loss_mean
                log.train_surrogate = ev_train.surrogate_mean
                log.train_jac_norm = norm
                log.train_acc = ev_train.acc
                log.test_acc = ev_test.acc
                if attack_for_logging is not None:
                    log.robust_train_acc = ev_train.robust_acc
                    log.robust_loss = ev_train.robust_loss
                    log.robust_test_acc = ev_test.robust_acc
                    log.robust_test_loss = ev_test.robust_loss
                    log.test_surrogate = ev_test.surrogate_mean
            logs.append(log)
            if writer is not None:
                writer.writerow(_csv_row(log))
    finally:
        if csv_file is not None:
            csv_file.close()

    if checkpoint_path is not None:
        save_checkpoint(params, checkpoint_path, rng_id=Rng.algorithm, seed=cfg.seed)
    return params, logs
