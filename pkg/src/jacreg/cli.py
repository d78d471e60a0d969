"""Command-line driver tying data, training, attacks, verification and bounds.

Exit codes: 0 success, 1 runtime/training failure, 2 usage/config error.

Every command that writes an output directory stores a canonical config.json
beside its outputs; `jacreg train --config <echo>` re-runs from that echo and,
with --threads 1, reproduces byte-identical CSVs and checkpoints.

--threads N pins the BLAS pool size; it is honored by setting the usual
environment knobs before numpy is first imported, which is why the heavy
imports in this module live inside the command handlers.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

DATA_ENV = "JACREG_DATA_DIR"
DEFAULT_DATA_DIR = "data/mnist"

# experiment protocol attack settings per geometry: (epsilon, steps, step_size)
ATTACK_DEFAULTS = {"l2": (0.5, 20, 0.1), "linf": (0.03, 20, 0.01)}

# derived-stream indices under the run seed (0 and 1 are used inside train())
SUBSET_STREAM = 2
ATTACK_STREAM = 3


def _apply_threads_env(argv: list[str]) -> None:
    """Honor --threads before numpy loads its BLAS; must run pre-import."""
    threads = None
    for i, tok in enumerate(argv):
        if tok == "--threads" and i + 1 < len(argv):
            threads = argv[i + 1]
        elif tok.startswith("--threads="):
            threads = tok.split("=", 1)[1]
    if threads is None:
        return
    for var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
        "VECLIB_MAXIMUM_THREADS",
    ):
        os.environ[var] = str(threads)


def _preload_config(argv: list[str]) -> dict:
    """Fetch the --config echo (if any) so its values become parser defaults."""
    path = None
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            path = argv[i + 1]
        elif tok.startswith("--config="):
            path = tok.split("=", 1)[1]
    if path is None:
        return {}
    with open(path) as f:
        echo = json.load(f)
    echo.pop("command", None)
    return echo


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="jacreg",
        description="Jacobian-regularized MLP training, PGD evaluation, and "
                    "generalization-bound calculators.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    parser.subparsers = {}

    def add_common(p):
        p.add_argument("--threads", type=int, default=None,
                       help="BLAS thread count (1 gives bit-reproducible runs)")
        p.add_argument("--data-dir", default=None,
                       help=f"MNIST IDX directory (default ${DATA_ENV} or {DEFAULT_DATA_DIR})")

    def add_geometry(p):
        p.add_argument("--geometry", choices=["l2", "linf"], default="l2")
        p.add_argument("--l2", dest="geometry", action="store_const", const="l2",
                       help="shorthand for --geometry l2")
        p.add_argument("--linf", dest="geometry", action="store_const", const="linf",
                       help="shorthand for --geometry linf")

    p = sub.add_parser("train", help="train a Jacobian-regularized MLP")
    add_common(p)
    add_geometry(p)
    p.add_argument("--config", default=None, help="config echo to re-run from")
    p.add_argument("--effective-lambda", type=float, default=0.01,
                   help="lambda * epsilon, the user-facing penalty strength")
    p.add_argument("--epsilon", type=float, default=None,
                   help="attack radius (default 0.5 for l2, 0.03 for linf)")
    p.add_argument("--epochs", type=int, default=1000)
    p.add_argument("--batch-size", type=int, default=1000)
    p.add_argument("--learning-rate", type=float, default=0.1)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log-every", type=int, default=25)
    p.add_argument("--hidden", type=int, nargs="+", default=[100, 100, 100, 100])
    p.add_argument("--train-size", type=int, default=1000)
    p.add_argument("--log-attacks", action="store_true",
                   help="also log PGD robust metrics every log interval")
    p.add_argument("--out-dir", default="runs/train")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attack", help="PGD-attack a checkpoint and report robustness")
    add_common(p)
    add_geometry(p)
    p.add_argument("checkpoint")
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--step-size", type=float, default=None)
    p.add_argument("--random-start", action="store_true")
    p.add_argument("--seed", type=int, default=0,
                   help="seed of the training run (selects the same train subset)")
    p.add_argument("--train-size", type=int, default=1000)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("bounds", help="evaluate the complexity/gap bound formulas")
    add_common(p)
    p.add_argument("checkpoint")
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--effective-lambda", type=float, default=0.01)
    p.add_argument("--epsilon", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-size", type=int, default=1000)
    p.add_argument("--b", type=float, default=None,
                   help="loss range override (default: empirical max on train)")
    p.add_argument("--b1", type=float, default=None,
                   help="||J||_1,1 range override")
    p.add_argument("--b2", type=float, default=None,
                   help="||J||_F^2 range override")
    p.add_argument("--out-dir", default="runs/bounds")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("verify", help="run the randomized invariant audits")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--nets", type=int, default=200,
                   help="random nets per structural check")
    p.add_argument("--corrupt-jacobian", action="store_true",
                   help=argparse.SUPPRESS)  # negative-control fixture
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("reproduce", help="rebuild the experiment tables/curves")
    add_common(p)
    p.add_argument("table", choices=["t1", "t2", "fig1"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=1000)
    p.add_argument("--train-size", type=int, default=1000)
    p.add_argument("--log-every", type=int, default=25)
    p.add_argument("--effective-lambda", type=float, default=0.5,
                   help="fig1 only: penalty strength of the single run")
    p.add_argument("--random-start", action="store_true",
                   help="fig1 only: random PGD starts in the logged attacks")
    p.add_argument("--out-dir", default="runs/reproduce")
    p.set_defaults(func=cmd_reproduce)

    for name, action in sub.choices.items():
        parser.subparsers[name] = action
    return parser


# --------------------------------------------------------------------------
# shared helpers (import numpy lazily: --threads must act first)

def _resolve_data_dir(args) -> Path:
    raw = args.data_dir or os.environ.get(DATA_ENV) or DEFAULT_DATA_DIR
    return Path(raw)


def _require_mnist(data_dir: Path):
    from .data import TEST_FILES, TRAIN_FILES

    for name in TRAIN_FILES + TEST_FILES:
        raw, gz = data_dir / name, data_dir / (name + ".gz")
        if not raw.exists() and not gz.exists():
            raise FileNotFoundError(f"missing data path: {raw} (or {gz})")


def _load_splits(args):
    from .data import load_mnist, subsample
    from .tensor import Rng

    data_dir = _resolve_data_dir(args)
    _require_mnist(data_dir)
    train_full, test = load_mnist(data_dir)
    n_keep = getattr(args, "train_size", None) or train_full.n
    train = subsample(train_full, n_keep, Rng(args.seed).derive(SUBSET_STREAM))
    return train, test


def _attack_config(geometry_name: str, epsilon=None, steps=None, step_size=None,
                   random_start=False, seed=0):
    from .attacks import AttackConfig
    from .losses import Geometry
    from .tensor import Rng

    d_eps, d_steps, d_step = ATTACK_DEFAULTS[geometry_name]
    return AttackConfig(
        geometry=Geometry(geometry_name),
        epsilon=d_eps if epsilon is None else epsilon,
        steps=d_steps if steps is None else steps,
        step_size=d_step if step_size is None else step_size,
        random_start=random_start,
        rng=Rng(seed).derive(ATTACK_STREAM) if random_start else None,
    )


def _echo_config(out_dir: Path, payload: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "config.json", "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def _metrics_dict(ev) -> dict:
    out = {
        "accuracy": ev.acc,
        "loss": ev.loss_mean,
        "surrogate": ev.surrogate_mean,
        "mean_jac_frob_sq": ev.jac_stats.mean_frob_sq,
        "mean_jac_l11": ev.jac_stats.mean_l11,
    }
    if ev.robust_acc is not None:
        out["robust_accuracy"] = ev.robust_acc
        out["robust_loss"] = ev.robust_loss
    return out


# --------------------------------------------------------------------------
# commands

def cmd_train(args) -> int:
    from .losses import Geometry, RegConfig, penalty_for
    from .trainer import TrainConfig, train

    epsilon = args.epsilon
    if epsilon is None:
        epsilon = ATTACK_DEFAULTS[args.geometry][0]
    reg = RegConfig.from_effective(args.effective_lambda, epsilon,
                                   penalty_for(Geometry(args.geometry)))
    cfg = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        momentum=args.momentum,
        reg=reg,
        seed=args.seed,
        log_every=args.log_every,
        hidden=tuple(args.hidden),
    )
    train_ds, test_ds = _load_splits(args)
    attack = _attack_config(args.geometry, epsilon=epsilon, seed=args.seed) \
        if args.log_attacks else None

    out_dir = Path(args.out_dir)
    _echo_config(out_dir, {
        "command": "train",
        "geometry": args.geometry,
        "effective_lambda": args.effective_lambda,
        "epsilon": epsilon,
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "learning_rate": args.learning_rate,
        "momentum": args.momentum,
        "seed": args.seed,
        "log_every": args.log_every,
        "hidden": list(args.hidden),
        "train_size": args.train_size,
        "log_attacks": bool(args.log_attacks),
        "data_dir": str(_resolve_data_dir(args)),
        "threads": args.threads,
        "out_dir": str(out_dir),
    })

    params, logs = train(
        train_ds, test_ds, cfg,
        attack_for_logging=attack,
        csv_path=out_dir / "epochs.csv",
        checkpoint_path=out_dir / "model.jreg",
    )

    from .trainer import evaluate

    ev_train = evaluate(params, train_ds, reg=reg, attack=attack)
    ev_test = evaluate(params, test_ds, reg=reg, attack=attack)
    summary = {"train": _metrics_dict(ev_train), "test": _metrics_dict(ev_test)}
    with open(out_dir / "summary.json", "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"checkpoint: {out_dir / 'model.jreg'}")
    print(f"train acc {ev_train.acc:.4f}  test acc {ev_test.acc:.4f}  "
          f"final surrogate {ev_train.surrogate_mean:.4f}")
    return EXIT_OK


def cmd_attack(args) -> int:
    from .network import load_checkpoint
    from .trainer import evaluate

    params, _, _ = load_checkpoint(args.checkpoint)
    train_ds, test_ds = _load_splits(args)
    attack = _attack_config(args.geometry, args.epsilon, args.steps,
                            args.step_size, args.random_start, args.seed)
    results = {}
    for name, ds in (("train", train_ds), ("test", test_ds)):
        ev = evaluate(params, ds, attack=attack)
        results[name] = _metrics_dict(ev)
        print(f"{name}: standard acc {ev.acc:.4f}  robust acc {ev.robust_acc:.4f}  "
              f"robust loss {ev.robust_loss:.6f}")
    if args.out_dir is not None:
        out_dir = Path(args.out_dir)
        _echo_config(out_dir, {
            "command": "attack",
            "checkpoint": str(args.checkpoint),
            "geometry": args.geometry,
            "epsilon": attack.epsilon,
            "steps": attack.steps,
            "step_size": attack.step_size,
            "random_start": attack.random_start,
            "seed": args.seed,
            "train_size": args.train_size,
            "data_dir": str(_resolve_data_dir(args)),
            "threads": args.threads,
        })
        with open(out_dir / "attack.json", "w") as f:
            json.dump(results, f, indent=2, sort_keys=True)
            f.write("\n")
    return EXIT_OK


def cmd_bounds(args) -> int:
    import numpy as np

    from .bounds import BoundInputs, compute_report, sweep_row, write_sweep_csv
    from .jacobian import jacobian_batch
    from .losses import cross_entropy_batch
    from .network import forward_batch, frobenius_total, load_checkpoint

    if not 0 < args.delta < 1:
        print(f"error: --delta must lie in (0, 1), got {args.delta}", file=sys.stderr)
        return EXIT_USAGE

    params, _, _ = load_checkpoint(args.checkpoint)
    train_ds, _ = _load_splits(args)

    # measured radii and empirical ranges over the training subset
    frob_sq_all, l11_all, loss_all = [], [], []
    for lo in range(0, train_ds.n, 2048):
        xs = train_ds.xs[lo:lo + 2048]
        bt = forward_batch(params, xs)
        w = jacobian_batch(params, bt)
        frob_sq_all.append(np.einsum("nij,nij->n", w, w))
        l11_all.append(np.abs(w).sum(axis=(1, 2)))
        losses, _ = cross_entropy_batch(bt.logits, train_ds.ys[lo:lo + 2048])
        loss_all.append(losses)
    frob_sq = np.concatenate(frob_sq_all)
    l11 = np.concatenate(l11_all)
    losses = np.concatenate(loss_all)

    lam = 0.0 if args.effective_lambda == 0 else args.effective_lambda / args.epsilon
    inp = BoundInputs(
        r_theta=frobenius_total(params),
        num_params=params.num_params,
        depth=params.depth,
        r1=float(l11.mean()),
        r2=float(frob_sq.mean()),
        lam=lam,
        epsilon=args.epsilon,
        b=args.b if args.b is not None else float(losses.max()),
        b1=args.b1 if args.b1 is not None else float(l11.max()),
        b2=args.b2 if args.b2 is not None else float(frob_sq.max()),
        delta=args.delta,
    )
    report = compute_report(train_ds.stats, inp)

    print(f"measured: r_theta {inp.r_theta:.4f}  r1 {inp.r1:.4f}  r2 {inp.r2:.4f}  "
          f"B {inp.b:.4f}  B1 {inp.b1:.4f}  B2 {inp.b2:.4f}")
    for field in ("lip_loss", "lip_frob", "lip_l11", "rad_loss_r2", "rad_loss_r1",
                  "rad_jac_frob", "rad_jac_l11", "rad_surrogate_l2",
                  "rad_surrogate_linf", "gap_bound_l2", "gap_bound_linf"):
        print(f"{field}: {getattr(report, field):.6e}")
    for name, flag in (("l2", report.vacuous_l2), ("linf", report.vacuous_linf)):
        print(f"vacuous_{name}: {'yes (bound exceeds loss range B)' if flag else 'no'}")

    out_dir = Path(args.out_dir)
    _echo_config(out_dir, {
        "command": "bounds",
        "checkpoint": str(args.checkpoint),
        "delta": args.delta,
        "effective_lambda": args.effective_lambda,
        "epsilon": args.epsilon,
        "seed": args.seed,
        "train_size": args.train_size,
        "b": args.b, "b1": args.b1, "b2": args.b2,
        "data_dir": str(_resolve_data_dir(args)),
        "threads": args.threads,
    })
    write_sweep_csv(out_dir / "bounds.csv", [sweep_row(train_ds.stats, inp, report)])
    print(f"report row: {out_dir / 'bounds.csv'}")
    return EXIT_OK


# --------------------------------------------------------------------------
# verification audits

def _random_net(rng, min_depth=2, max_depth=6, max_width=64, d_out=None):
    from .network import init_params

    depth = int(rng.integers(min_depth, max_depth + 1))
    dims = [int(rng.integers(3, 13))]
    dims += [int(rng.integers(4, max_width + 1)) for _ in range(depth - 1)]
    dims.append(int(rng.integers(2, 11)) if d_out is None else d_out)
    return init_params(dims, rng)


def _small_net(rng):
    # narrow nets keep the per-weight finite-difference sweeps affordable
    return _random_net(rng, max_depth=4, max_width=9)


def _generic_point(params, rng, min_preact=1e-3, tries=200):
    """Input with no pre-activation near the ReLU kink set."""
    import numpy as np

    from .network import forward

    for _ in range(tries):
        x = rng.normal(size=params.dims[0])
        trace = forward(params, x)
        if all(np.abs(z).min() > min_preact for z in trace.preacts):
            return x, trace
    raise RuntimeError("could not find a generic point")


def _max_scaled_err(got, want) -> float:
    """max |got - want| across layers, scaled by the largest oracle entry."""
    import numpy as np

    num = max(float(np.abs(g - w).max()) for g, w in zip(got, want))
    den = max(max(float(np.abs(w).max()) for w in want), 1e-12)
    return num / den


def _verify_checks(seed: int, nets: int, corrupt_jacobian: bool):
    import numpy as np

    from .bounds import norm_bound_slacks
    from .data import Dataset, compute_stats
    from .jacobian import (
        fd_input_jacobian,
        fd_param_grad,
        input_jacobian,
        penalty_grad_frob_sq,
        penalty_grad_l11,
    )
    from .losses import LIP_L2_CAP, LIP_LINF_CAP, cross_entropy, cross_entropy_batch
    from .network import backprop_loss, forward
    from .tensor import Rng

    checks = []

    def homogeneity():
        rng = Rng(seed).derive(101)
        worst = 0.0
        for _ in range(nets):
            params = _random_net(rng)
            for _ in range(10):
                x = rng.normal(size=params.dims[0])
                trace = forward(params, x)
                jac = input_jacobian(params, trace).matrix
                if corrupt_jacobian:
                    jac = jac.copy()
                    jac[0, 0] += 1e-3
                resid = float(np.abs(trace.logits - jac.T @ x).max())
                worst = max(worst, resid / (1.0 + float(np.abs(trace.logits).max())))
        return worst <= 1e-9, f"max_rel_residual={worst:.3e}"

    def lipschitz_caps():
        rng = Rng(seed).derive(102)
        logits = rng.normal(size=(200_000, 10), scale=3.0)
        labels = rng.integers(0, 10, size=200_000)
        _, grads = cross_entropy_batch(logits, labels)
        l2 = np.linalg.norm(grads, axis=1)
        linf = np.abs(grads).max(axis=1)
        ok = (l2.max() <= LIP_L2_CAP + 1e-12 and linf.max() <= LIP_LINF_CAP + 1e-12
              and l2.max() > 1.35)
        return ok, f"sup_l2={l2.max():.6f} sup_linf={linf.max():.6f}"

    def loss_grad_fd():
        rng = Rng(seed).derive(103)
        worst = 0.0
        for _ in range(min(nets, 15)):
            params = _small_net(rng)
            x, trace = _generic_point(params, rng)
            y = int(rng.integers(0, params.dims[-1]))
            got = backprop_loss(params, trace, cross_entropy(trace.logits, y).grad_logits)
            want = fd_param_grad(
                params, lambda p: cross_entropy(forward(p, x).logits, y).value
            )
            worst = max(worst, _max_scaled_err(got.layers, want.layers))
        return worst <= 1e-5, f"max_scaled_err={worst:.3e}"

    def jacobian_fd():
        rng = Rng(seed).derive(104)
        worst = 0.0
        for _ in range(min(nets, 30)):
            params = _small_net(rng)
            x, trace = _generic_point(params, rng)
            got = input_jacobian(params, trace).matrix
            want = fd_input_jacobian(params, x)
            worst = max(worst, float(np.abs(got - want).max()))
        return worst <= 1e-6, f"max_abs_err={worst:.3e}"

    def penalty_grads_fd():
        rng = Rng(seed).derive(105)
        worst = 0.0
        for _ in range(min(nets, 10)):
            params = _small_net(rng)
            while True:
                x, trace = _generic_point(params, rng)
                if np.abs(input_jacobian(params, trace).matrix).min() > 1e-4:
                    break
            got_f = penalty_grad_frob_sq(params, trace)
            want_f = fd_param_grad(
                params, lambda p: input_jacobian(p, forward(p, x)).frob_sq
            )
            got_1 = penalty_grad_l11(params, trace)
            want_1 = fd_param_grad(
                params, lambda p: input_jacobian(p, forward(p, x)).l11
            )
            worst = max(worst, _max_scaled_err(got_f.layers, want_f.layers),
                        _max_scaled_err(got_1.layers, want_1.layers))
        return worst <= 1e-4, f"max_scaled_err={worst:.3e}"

    def norm_bound_slack_audit():
        rng = Rng(seed).derive(106)
        worst = np.inf
        for _ in range(min(nets, 100)):
            params = _random_net(rng)
            xs = rng.uniform(0.0, 1.0, size=(20, params.dims[0]))
            ys = np.asarray(rng.integers(0, params.dims[-1], size=20))
            ds = Dataset(xs=xs, ys=ys, stats=None)
            ds.stats = compute_stats(ds, k=params.dims[-1])
            slacks = norm_bound_slacks(params, ds)
            worst = min(worst, min(slacks.values()))
        return worst >= -1e-9, f"min_slack={worst:.3e}"

    def am_gm_chain():
        # eps*Lip2*||J||_F <= eps/2 + (eps/2)*Lip2^2*||J||_F^2 for all draws
        rng = Rng(seed).derive(107)
        eps = rng.uniform(0.0, 2.0, size=10_000)
        frob = rng.uniform(0.0, 50.0, size=10_000)
        lhs = eps * LIP_L2_CAP * frob
        rhs = 0.5 * eps + 0.5 * eps * LIP_L2_CAP ** 2 * frob * frob
        worst = float((rhs - lhs).min())
        return worst >= -1e-12, f"min_slack={worst:.3e}"

    checks.append(("homogeneity_identity", homogeneity))
    checks.append(("lipschitz_caps", lipschitz_caps))
    checks.append(("loss_grad_finite_diff", loss_grad_fd))
    checks.append(("input_jacobian_finite_diff", jacobian_fd))
    checks.append(("penalty_grads_finite_diff", penalty_grads_fd))
    checks.append(("norm_bound_slacks", norm_bound_slack_audit))
    checks.append(("first_order_am_gm", am_gm_chain))
    return checks


def cmd_verify(args) -> int:
    failures = 0
    checks = _verify_checks(args.seed, args.nets, args.corrupt_jacobian)
    for name, fn in checks:
        try:
            ok, msg = fn()
        except Exception as exc:  # a crashed audit is a failed audit
            ok, msg = False, f"error={exc}"
        status = "PASS" if ok else "FAIL"
        if not ok:
            failures += 1
        print(f"{status} {name}: {msg}")
    print(f"done: {len(checks)} checks, {failures} failures")
    return EXIT_OK if failures == 0 else EXIT_RUNTIME


# --------------------------------------------------------------------------
# reproduction runs

TABLE_GRIDS = {
    "t1": {"geometry": "l2", "lambdas": [0.0, 0.01, 0.1]},
    "t2": {"geometry": "linf", "lambdas": [0.0, 0.001, 0.005]},
}


def _markdown_table(geometry: str, lambdas, norms, rows) -> str:
    header = "| Effective Lambda | " + " | ".join(
        f"{lam:g} | " for lam in lambdas) + "\n"
    norm_name = "mean ||J||_F^2" if geometry == "l2" else "mean ||J||_1,1"
    lines = [
        header,
        "| Jacobian Norm (" + norm_name + ") | " + " | ".join(
            f"{v:.4g} | " for v in norms) + "\n",
        "| Types | " + " | ".join("Standard | Robust" for _ in lambdas) + " |\n",
    ]
    for label in ("Training", "Testing", "Gap"):
        cells = []
        for col in rows:
            std, rob = col[label]
            cells.append(f"{std * 100:.1f}% | {rob * 100:.1f}%")
        lines.append(f"| {label} | " + " | ".join(cells) + " |\n")
    return "".join(lines)


def _reproduce_table(args, table: str) -> int:
    import csv as csv_mod

    from .losses import Geometry, RegConfig, penalty_for
    from .trainer import TrainConfig, evaluate, train

    grid = TABLE_GRIDS[table]
    geometry = grid["geometry"]
    epsilon = ATTACK_DEFAULTS[geometry][0]
    train_ds, test_ds = _load_splits(args)
    attack = _attack_config(geometry, seed=args.seed)

    out_dir = Path(args.out_dir) / table
    _echo_config(out_dir, {
        "command": f"reproduce {table}",
        "geometry": geometry,
        "lambdas": grid["lambdas"],
        "epsilon": epsilon,
        "epochs": args.epochs,
        "train_size": args.train_size,
        "seed": args.seed,
        "log_every": args.log_every,
        "data_dir": str(_resolve_data_dir(args)),
        "threads": args.threads,
    })

    norms, rows, csv_rows = [], [], []
    for lam_eff in grid["lambdas"]:
        reg = RegConfig.from_effective(lam_eff, epsilon, penalty_for(Geometry(geometry)))
        cfg = TrainConfig(
            epochs=args.epochs, batch_size=1000, learning_rate=0.1, momentum=0.9,
            reg=reg, seed=args.seed, log_every=args.log_every,
        )
        run_dir = out_dir / f"lam{lam_eff:g}"
        run_dir.mkdir(parents=True, exist_ok=True)
        params, _ = train(
            train_ds, test_ds, cfg,
            csv_path=run_dir / "epochs.csv",
            checkpoint_path=run_dir / "model.jreg",
        )
        ev_train = evaluate(params, train_ds, reg=reg, attack=attack)
        ev_test = evaluate(params, test_ds, reg=reg, attack=attack)
        norm = (ev_train.jac_stats.mean_frob_sq if geometry == "l2"
                else ev_train.jac_stats.mean_l11)
        norms.append(norm)
        rows.append({
            "Training": (ev_train.acc, ev_train.robust_acc),
            "Testing": (ev_test.acc, ev_test.robust_acc),
            "Gap": (ev_train.acc - ev_test.acc,
                    ev_train.robust_acc - ev_test.robust_acc),
        })
        csv_rows.append([
            lam_eff, norm, ev_train.acc, ev_train.robust_acc,
            ev_test.acc, ev_test.robust_acc,
        ])
        print(f"lambda~={lam_eff:g}: jac_norm={norm:.4g} "
              f"test std={ev_test.acc:.4f} robust={ev_test.robust_acc:.4f}")

    with open(out_dir / f"{table}.csv", "w", newline="") as f:
        writer = csv_mod.writer(f, lineterminator="\n")
        writer.writerow(["effective_lambda", "jacobian_norm", "train_acc",
                         "robust_train_acc", "test_acc", "robust_test_acc"])
        writer.writerows(csv_rows)
    with open(out_dir / f"{table}.md", "w") as f:
        f.write(_markdown_table(geometry, grid["lambdas"], norms, rows))
    print(f"table written: {out_dir / (table + '.md')}")
    return EXIT_OK


def _reproduce_fig1(args) -> int:
    import csv as csv_mod

    from .losses import Geometry, RegConfig, penalty_for
    from .trainer import TrainConfig, train

    geometry = "l2"
    epsilon = ATTACK_DEFAULTS[geometry][0]
    reg = RegConfig.from_effective(args.effective_lambda, epsilon,
                                   penalty_for(Geometry(geometry)))
    train_ds, test_ds = _load_splits(args)
    attack = _attack_config(geometry, seed=args.seed,
                            random_start=args.random_start)

    out_dir = Path(args.out_dir) / "fig1"
    _echo_config(out_dir, {
        "command": "reproduce fig1",
        "geometry": geometry,
        "effective_lambda": args.effective_lambda,
        "epsilon": epsilon,
        "epochs": args.epochs,
        "train_size": args.train_size,
        "seed": args.seed,
        "log_every": args.log_every,
        "random_start": bool(args.random_start),
        "data_dir": str(_resolve_data_dir(args)),
        "threads": args.threads,
    })
    cfg = TrainConfig(
        epochs=args.epochs, batch_size=1000, learning_rate=0.1, momentum=0.9,
        reg=reg, seed=args.seed, log_every=args.log_every,
    )
    _, logs = train(
        train_ds, test_ds, cfg,
        attack_for_logging=attack,
        csv_path=out_dir / "epochs.csv",
        checkpoint_path=out_dir / "model.jreg",
    )
    with open(out_dir / "fig1_curves.csv", "w", newline="") as f:
        writer = csv_mod.writer(f, lineterminator="\n")
        writer.writerow(["epoch", "train_surrogate", "robust_train_loss",
                         "test_surrogate", "robust_test_loss"])
        for log in logs:
            if log.robust_loss is None:
                continue
            writer.writerow([log.epoch, repr(log.train_surrogate),
                             repr(log.robust_loss), repr(log.test_surrogate),
                             repr(log.robust_test_loss)])
    print(f"curves written: {out_dir / 'fig1_curves.csv'}")
    return EXIT_OK


def cmd_reproduce(args) -> int:
    if args.table == "fig1":
        return _reproduce_fig1(args)
    return _reproduce_table(args, args.table)


# --------------------------------------------------------------------------

def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    _apply_threads_env(argv)
    parser = build_parser()
    try:
        defaults = _preload_config(argv)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read --config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if defaults:
        train_parser = parser.subparsers["train"]
        known = {a.dest for a in train_parser._actions}
        train_parser.set_defaults(
            **{k: v for k, v in defaults.items() if k in known}
        )
    args = parser.parse_args(argv)

    # deferred imports: error types only needed for the handler dispatch below
    from .bounds import DomainError
    from .data import IdxFormatError
    from .network import CheckpointError
    from .trainer import TrainingDiverged

    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (IdxFormatError, CheckpointError, DomainError, TrainingDiverged) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:  # config validation (bad momentum, lambda, ...)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
