import math

import numpy as np
import pytest

from jacreg.bounds import (
    BoundInputs,
    DatasetStats,
    DomainError,
    Regime,
    SWEEP_HEADER,
    compute_report,
    norm_bound_slacks,
    generalization_gap_bound,
    lipschitz_param_constants,
    rademacher_jacobian_bound,
    rademacher_loss_bound,
    surrogate_complexity,
    sweep_row,
    write_sweep_csv,
)
from jacreg.data import Dataset, compute_stats
from jacreg.network import MlpParams, init_params
from jacreg.tensor import Rng


def _stats(n=100, mean_x_l2=1.0, mean_x_l2_sq=1.0, r_x=1.0, d=1, k=1):
    return DatasetStats(n=n, mean_x_l2=mean_x_l2, mean_x_l2_sq=mean_x_l2_sq,
                        r_x=r_x, d=d, k=k)


def _inputs(**kw):
    base = dict(r_theta=2.0, num_params=10, depth=2, r1=1.0, r2=1.0,
                lam=0.1, epsilon=0.5, b=1.0, b1=1.0, b2=1.0, delta=0.05)
    base.update(kw)
    return BoundInputs(**base)


def test_unit_ratio_collapse():
    # r_theta = sqrt(L-1) makes the base term 1
    for L in (2, 3, 5):
        stats = _stats(d=3, k=4, mean_x_l2=2.5, mean_x_l2_sq=6.25)
        inp = _inputs(depth=L, r_theta=math.sqrt(L - 1))
        consts = lipschitz_param_constants(stats, inp)
        assert consts["lip_loss"] == pytest.approx(
            math.sqrt(L) * math.sqrt(2) * 2.5, rel=1e-12)
        assert consts["lip_frob"] == pytest.approx(2 * math.sqrt(L), rel=1e-12)
        assert consts["lip_l11"] == pytest.approx(math.sqrt(L * 4 * 3), rel=1e-12)


def test_hand_values_depth_two():
    consts = lipschitz_param_constants(_stats(), _inputs())
    assert consts["lip_loss"] == pytest.approx(4.0, rel=1e-12)
    assert consts["lip_frob"] == pytest.approx(16.0 * math.sqrt(2), rel=1e-12)
    assert consts["lip_l11"] == pytest.approx(2.0 * math.sqrt(2), rel=1e-12)


def test_doubling_r_theta_power_law():
    for L in (2, 3, 4):
        stats = _stats()
        one = lipschitz_param_constants(stats, _inputs(depth=L, r_theta=1.5))
        two = lipschitz_param_constants(stats, _inputs(depth=L, r_theta=3.0))
        assert two["lip_frob"] / one["lip_frob"] == pytest.approx(
            2.0 ** (2 * L - 1), rel=1e-12)


def test_rademacher_scales_as_inverse_sqrt_n():
    # the log argument carries no n dependence, so the ratio is exactly 2
    for regime in (Regime.R2, Regime.R1):
        v1 = rademacher_loss_bound(_stats(n=100), _inputs(), regime)
        v4 = rademacher_loss_bound(_stats(n=400), _inputs(), regime)
        assert 2.0 * v4 == pytest.approx(v1, rel=1e-12)


def test_rademacher_log_argument_one():
    # choose r2 so that 3 r_theta lip_frob / r2 = 1
    stats = _stats()
    inp = _inputs()
    lip_frob = lipschitz_param_constants(stats, inp)["lip_frob"]
    inp2 = _inputs(r2=3.0 * inp.r_theta * lip_frob)
    got = rademacher_jacobian_bound(stats, inp2, Regime.R2)
    want = 12.0 * inp2.r2 * math.sqrt(inp2.num_params / stats.n) * math.sqrt(math.pi / 2)
    assert got == pytest.approx(want, rel=1e-12)


def test_rademacher_jacobian_linear_times_log_structure():
    stats = _stats()
    lip_frob = lipschitz_param_constants(stats, _inputs())["lip_frob"]
    a = 3.0 * 2.0 * lip_frob  # log numerator at r_theta = 2
    r2 = a / math.exp(10.0)   # log argument e^10, comfortably above 1
    v1 = rademacher_jacobian_bound(stats, _inputs(r2=r2), Regime.R2)
    v2 = rademacher_jacobian_bound(stats, _inputs(r2=2 * r2), Regime.R2)
    ratio = v2 / v1
    expected = 2.0 * ((math.sqrt(10.0 - math.log(2.0)) + math.sqrt(math.pi / 2))
                      / (math.sqrt(10.0) + math.sqrt(math.pi / 2)))
    assert ratio == pytest.approx(expected, rel=1e-12)
    c = math.log(2.0) / 10.0
    assert 2.0 / math.sqrt(1 + c) < ratio < 2.0 * math.sqrt(1 + c)


def test_domain_errors():
    with pytest.raises(DomainError):
        rademacher_loss_bound(_stats(), _inputs(r2=0.0), Regime.R2)
    with pytest.raises(DomainError):
        rademacher_loss_bound(_stats(), _inputs(r1=0.0), Regime.R1)
    with pytest.raises(DomainError):
        rademacher_jacobian_bound(_stats(), _inputs(r2=0.0), Regime.R2)
    with pytest.raises(DomainError):
        _inputs(delta=1.5)
    with pytest.raises(DomainError):
        _inputs(depth=1)


def test_surrogate_complexity_reduces_without_penalty():
    for kw in ({"lam": 0.0}, {"epsilon": 0.0}):
        stats = _stats()
        inp = _inputs(**kw)
        surr = surrogate_complexity(stats, inp)
        assert surr["rad_surrogate_l2"] == pytest.approx(
            rademacher_loss_bound(stats, inp, Regime.R2), rel=1e-15)
        assert surr["rad_surrogate_linf"] == pytest.approx(
            rademacher_loss_bound(stats, inp, Regime.R1), rel=1e-15)


def test_surrogate_complexity_hand_combination():
    surr = surrogate_complexity(_stats(), _inputs(), loss_bounds=(1.0, 1.0),
                                jac_bounds=(2.0, 2.0))
    assert surr["rad_surrogate_l2"] == pytest.approx(1.1, rel=1e-12)
    assert surr["rad_surrogate_linf"] == pytest.approx(1.1, rel=1e-12)


def test_gap_bound_confidence_term_vanishes():
    # gap - 2*complexity is exactly the confidence term, which dies with n
    inp = _inputs()
    for n in (100, 10 ** 6, 10 ** 12):
        stats = _stats(n=n)
        gap = generalization_gap_bound(stats, inp)
        surr = surrogate_complexity(stats, inp)
        c2 = inp.b + 0.5 * inp.lam * inp.epsilon * 2.0 * inp.b2
        conf = 3.0 * c2 * math.sqrt(math.log(2.0 / inp.delta) / (2.0 * n))
        assert gap["gap_bound_l2"] - 2 * surr["rad_surrogate_l2"] == pytest.approx(
            conf, rel=1e-12)
    assert conf <= 5e-6  # vanished at n = 1e12


def test_gap_bound_special_delta():
    # delta = 2/e^2 gives log(2/delta) = 2, so the term is 3 C / sqrt(n)
    stats = _stats(n=100)
    inp = _inputs(delta=2.0 / math.e ** 2)
    gap = generalization_gap_bound(stats, inp)
    surr = surrogate_complexity(stats, inp)
    c2 = inp.b + 0.5 * inp.lam * inp.epsilon * 2.0 * inp.b2
    want = 2 * surr["rad_surrogate_l2"] + 3.0 * c2 / math.sqrt(100)
    assert gap["gap_bound_l2"] == pytest.approx(want, rel=1e-12)


def test_monotonicity_in_n_and_p():
    values_n = [rademacher_loss_bound(_stats(n=n), _inputs(), Regime.R2)
                for n in (50, 100, 400, 1600)]
    assert all(a >= b for a, b in zip(values_n, values_n[1:]))
    values_p = [rademacher_loss_bound(_stats(), _inputs(num_params=p), Regime.R2)
                for p in (1, 10, 100, 1000)]
    assert all(a <= b for a, b in zip(values_p, values_p[1:]))


def test_overflow_reports_infinity_and_vacuity():
    inp = _inputs(r_theta=1e200, depth=6)
    consts = lipschitz_param_constants(_stats(), inp)
    assert math.isinf(consts["lip_frob"])
    report = compute_report(_stats(), inp)
    assert math.isinf(report.gap_bound_l2)
    assert report.vacuous_l2 and report.vacuous_linf


def test_stats_jensen_validation():
    with pytest.raises(ValueError):
        DatasetStats(n=5, mean_x_l2=2.0, mean_x_l2_sq=1.0, r_x=1.0, d=3, k=2)


def _uniform_dataset(rng, n, d, k=6):
    ds = Dataset(xs=rng.uniform(0.0, 1.0, size=(n, d)),
                 ys=np.asarray(rng.integers(0, k, size=n)), stats=None)
    ds.stats = compute_stats(ds, k=k)
    return ds


def test_norm_bound_slacks_zero_net():
    params = init_params((5, 4, 6), Rng(0), scale_rule="zero")
    ds = _uniform_dataset(Rng(1), 10, 5)
    slacks = norm_bound_slacks(params, ds)
    assert all(v >= 0.0 for v in slacks.values())


def test_norm_bound_slacks_randomized_audit():
    rng = Rng(2)
    worst = math.inf
    for seed in range(60):
        dims = (int(rng.integers(3, 8)), int(rng.integers(4, 12)),
                int(rng.integers(4, 12)), int(rng.integers(2, 7)))
        params = init_params(dims, Rng(1000 + seed))
        ds = _uniform_dataset(Rng(2000 + seed), 15, dims[0], k=dims[-1])
        slacks = norm_bound_slacks(params, ds)
        worst = min(worst, min(slacks.values()))
    assert worst >= -1e-9


def test_norm_bound_tightness_construction():
    # rank-one net in an all-positive regime with identical inputs aligned to
    # the single right-singular direction: the l2 chain is an equality
    rng = np.random.default_rng(3)
    v = np.abs(rng.normal(size=6)) + 0.5
    v /= np.linalg.norm(v)
    w = np.abs(rng.normal(size=4)) + 0.5
    u = np.abs(rng.normal(size=4)) + 0.5
    params = MlpParams([np.outer(w, v), u[None, :]])  # k = 1
    xs = np.tile(0.8 * v, (5, 1))
    ds = Dataset(xs=xs, ys=np.zeros(5, dtype=np.int64), stats=None)
    ds.stats = compute_stats(ds, k=1)
    slacks = norm_bound_slacks(params, ds)
    stats_mean_sq = float((xs * xs).sum(axis=1).mean())
    from jacreg.jacobian import batch_stats

    rhs = math.sqrt(batch_stats(params, xs).mean_frob_sq) * math.sqrt(stats_mean_sq)
    assert slacks["output_l2_slack"] >= -1e-12
    assert slacks["output_l2_slack"] <= 1e-6 * rhs


def test_sweep_csv(tmp_path):
    stats = _stats()
    inp = _inputs()
    report = compute_report(stats, inp)
    path = tmp_path / "sweep.csv"
    write_sweep_csv(path, [sweep_row(stats, inp, report)])
    lines = path.read_text().strip().splitlines()
    assert lines[0] == ",".join(SWEEP_HEADER)
    assert len(lines) == 2
    cells = lines[1].split(",")
    assert float(cells[SWEEP_HEADER.index("gap_bound_l2")]) == pytest.approx(
        report.gap_bound_l2, rel=1e-15)
