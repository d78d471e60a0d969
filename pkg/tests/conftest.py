import os
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))  # make oracles importable

DATA_DIR = Path(__file__).resolve().parent.parent / "data" / "mnist"


def mnist_available() -> bool:
    from jacreg.data import TEST_FILES, TRAIN_FILES

    return all(
        (DATA_DIR / n).exists() or (DATA_DIR / (n + ".gz")).exists()
        for n in TRAIN_FILES + TEST_FILES
    )


needs_mnist = pytest.mark.skipif(
    not mnist_available(),
    reason=f"MNIST IDX files not found under {DATA_DIR} (see README)",
)


@pytest.fixture(scope="session")
def mnist():
    if not mnist_available():
        pytest.skip(f"MNIST IDX files not found under {DATA_DIR}")
    from jacreg.data import load_mnist

    return load_mnist(DATA_DIR)


@pytest.fixture(scope="session")
def protocol_subset(mnist):
    """The n=1000 training subset used by the experiment-protocol tests."""
    from jacreg.data import subsample
    from jacreg.tensor import Rng

    train_full, _ = mnist
    return subsample(train_full, 1000, Rng(0).derive(2))


def train_grid(subset, test_ds, geometry: str, lambdas, epochs=1000, seed=0):
    """Train the experiment grid once; returns {lam: results}."""
    from jacreg.attacks import AttackConfig, robust_metrics
    from jacreg.losses import Geometry, RegConfig, penalty_for
    from jacreg.trainer import TrainConfig, evaluate, train

    geom = Geometry(geometry)
    eps, steps, step_size = {"l2": (0.5, 20, 0.1), "linf": (0.03, 20, 0.01)}[geometry]
    attack = AttackConfig(geometry=geom, epsilon=eps, steps=steps, step_size=step_size)
    out = {}
    for lam_eff in lambdas:
        reg = RegConfig.from_effective(lam_eff, eps, penalty_for(geom))
        cfg = TrainConfig(epochs=epochs, batch_size=1000, learning_rate=0.1,
                          momentum=0.9, reg=reg, seed=seed, log_every=max(epochs, 1))
        params, _ = train(subset, test_ds, cfg)
        ev_train = evaluate(params, subset, reg=reg, attack=attack)
        ev_test = evaluate(params, test_ds, reg=reg, attack=attack)
        out[lam_eff] = {"params": params, "train": ev_train, "test": ev_test}
    return out


@pytest.fixture(scope="session")
def t1_runs(protocol_subset, mnist):
    _, test_ds = mnist
    return train_grid(protocol_subset, test_ds, "l2", [0.0, 0.01, 0.1])


@pytest.fixture(scope="session")
def t2_runs(protocol_subset, mnist):
    _, test_ds = mnist
    return train_grid(protocol_subset, test_ds, "linf", [0.0, 0.001, 0.005])
