import numpy as np
import pytest

from dppairwise.data import Bounds, Dataset, gen_synthetic
from dppairwise.losses import make_loss
from dppairwise.optimizer import TrainConfig
from dppairwise.risk import empirical_risk_hessian
from dppairwise.stability import (
    HessianFactor,
    SolverConfig,
    beta_statistics,
    coupled_dp_trainer,
    elastic_beta,
    estimate_uas,
    exact_trainer,
    influence_loo,
    influence_rhs,
    retrain_loo,
)

TOL = 1e-10


@pytest.fixture(scope="module")
def loss():
    return make_loss("ranking", 0.1, Bounds(5))


def _star(loss, D):
    from dppairwise.stability import _minimize

    return _minimize(loss, D, SolverConfig(tol=TOL))


def _identical(n, d=5):
    return Dataset(np.full((n, d), 0.1), np.full(n, 0.5))


def test_retrain_identical_samples(loss):
    D = _identical(10)
    star = _star(loss, D)
    loo = retrain_loo(loss, D, 3)
    assert np.linalg.norm(loo - star) <= 10 * TOL / loss.constants.mu


def test_retrain_three_samples(loss):
    D = gen_synthetic("ranking", 3, 5, seed=1)
    loo = retrain_loo(loss, D, 0)
    direct = _star(loss, D.without(0))
    np.testing.assert_allclose(loo, direct, atol=1e-9)


def test_retrain_shift_shrinks(loss):
    medians = []
    for n in (20, 40):
        D = gen_synthetic("ranking", n, 5, seed=21)
        star = _star(loss, D)
        shifts = [np.linalg.norm(retrain_loo(loss, D, i, theta0=star) - star) for i in range(n)]
        medians.append(np.median(shifts))
    assert 1.4 < medians[0] / medians[1] < 2.9


def test_influence_zero_rhs(loss):
    # x - x' = 0 for every pair and theta = 0 zero the right-hand side exactly
    D = Dataset(np.zeros((6, 5)), np.linspace(-1, 1, 6))
    assert not np.any(influence_rhs(loss, np.zeros(5), D, 2))
    np.testing.assert_array_equal(influence_loo(loss, np.zeros(5), D, 2).delta_theta, np.zeros(5))


def test_influence_vs_retrain(loss):
    D = gen_synthetic("ranking", 20, 5, seed=7)
    star = _star(loss, D)
    factor = HessianFactor(empirical_risk_hessian(loss, star, D))
    errs = []
    for i in range(D.n):
        exact = retrain_loo(loss, D, i, theta0=star) - star
        pred = influence_loo(loss, star, D, i, factor=factor).delta_theta
        errs.append(np.linalg.norm(pred - exact) / np.linalg.norm(exact))
    assert np.mean(np.array(errs) <= 0.5) >= 0.9


def test_influence_error_shrinks(loss):
    med = {}
    for n in (20, 80):
        D = gen_synthetic("ranking", n, 5, seed=13)
        star = _star(loss, D)
        factor = HessianFactor(empirical_risk_hessian(loss, star, D))
        idx = range(0, n, max(1, n // 20))
        med[n] = np.median(
            [
                np.linalg.norm(
                    influence_loo(loss, star, D, i, factor=factor).delta_theta
                    - (retrain_loo(loss, D, i, theta0=star) - star)
                )
                for i in idx
            ]
        )
    assert med[80] < med[20]


def test_hessian_factor_pivots(loss):
    D = gen_synthetic("ranking", 30, 5, seed=2)
    H = empirical_risk_hessian(loss, _star(loss, D), D)
    np.testing.assert_array_equal(H, H.T)
    f = HessianFactor(H)
    assert f.gamma == 0.0 and np.all(f.pivots > 0)


def test_hessian_factor_ladder():
    H = np.diag([1.0, 0.0, 0.0])
    f = HessianFactor(H)
    assert f.gamma > 0 and np.all(f.pivots > 0)
    x, res = f.solve(np.array([1.0, 0.0, 0.0]))
    assert res <= 1e-10


def test_hessian_factor_failure():
    with pytest.raises(np.linalg.LinAlgError):
        HessianFactor(np.diag([1.0, -5.0]))


def test_elastic_beta_identity_and_bound(loss):
    D = gen_synthetic("ranking", 10, 5, seed=3)
    th = np.full(5, 0.1)
    assert elastic_beta(loss, th, th, D[0], D[1]) == 0.0
    rng = np.random.default_rng(0)
    for _ in range(50):
        a, b = rng.uniform(-0.4, 0.4, 5), rng.uniform(-0.4, 0.4, 5)
        j, k = rng.choice(10, 2, replace=False)
        assert elastic_beta(loss, a, b, D[j], D[k]) <= loss.constants.G * np.linalg.norm(a - b) + 1e-12


def test_first_order_proxy(loss):
    D = gen_synthetic("ranking", 50, 5, seed=4)
    star = _star(loss, D)
    rng = np.random.default_rng(5)
    agree = total = 0
    for i in rng.choice(50, 10, replace=False):
        loo = retrain_loo(loss, D, int(i), theta0=star)
        delta = loo - star
        for _ in range(20):
            j, k = rng.choice(50, 2, replace=False)
            exact = elastic_beta(loss, star, loo, D[j], D[k])
            proxy = abs(delta @ loss.grads(star, D.X[j], D.y[j], D.X[k], D.y[k])[0])
            total += 1
            if exact > 0 and abs(proxy - exact) <= 0.5 * exact:
                agree += 1
    assert agree / total >= 0.8


def test_beta_statistics_degenerate(loss):
    rep = beta_statistics(loss, _identical(12), "retrain", removals=5, pairs=30)
    assert rep.beta_uniform <= 1e-9 and rep.beta_sup_mean <= 1e-9 and rep.beta_mean <= 1e-9


@pytest.mark.parametrize("method", ["retrain", "influence"])
def test_beta_statistics_ordering(loss, method):
    for seed in range(3):
        D = gen_synthetic("ranking", 25, 5, seed=seed)
        rep = beta_statistics(loss, D, method, removals=10, pairs=60, seed=seed)
        assert rep.beta_uniform >= rep.beta_sup_mean >= rep.beta_mean >= 0
        assert np.all(rep.beta_table <= loss.constants.G * rep.shifts[:, None] + 1e-12)
        assert rep.to_dict()["empirical"] is True


def test_beta_statistics_probe_errors(loss):
    D = gen_synthetic("ranking", 5, 5, seed=0)
    with pytest.raises(ValueError):
        beta_statistics(loss, D, "retrain", removals=6)
    with pytest.raises(ValueError):
        beta_statistics(loss, D, "retrain", pairs=21)
    with pytest.raises(ValueError):
        beta_statistics(loss, D, "jackknife")


def test_uas_identical_replacement(loss):
    D = _identical(6)
    est = estimate_uas(loss, D, exact_trainer(loss), 5, seed=0)
    assert est.kappa == 0.0 and np.all(est.shifts == 0.0)


def test_uas_dominates_beta(loss):
    for seed in range(5):
        D = gen_synthetic("ranking", 20, 5, seed=seed)
        rep = beta_statistics(loss, D, "retrain", removals=20, pairs=100, seed=seed)
        uas = estimate_uas(loss, D, exact_trainer(loss), 20, seed=seed)
        assert uas.G_kappa >= rep.beta_uniform


def test_uas_shrinks_with_n(loss):
    kappas = {}
    for n in (20, 40):
        vals = []
        for seed in range(4):
            D = gen_synthetic("ranking", n, 5, seed=seed)
            vals.append(estimate_uas(loss, D, exact_trainer(loss), 15, seed=seed).kappa)
        kappas[n] = np.median(vals)
    assert 1.3 < kappas[20] / kappas[40] < 3.0


def test_coupled_noise_trainer(loss):
    D = gen_synthetic("ranking", 15, 5, seed=0)
    train = coupled_dp_trainer(loss, TrainConfig(T=5, sigma=0.5, seed=3))
    np.testing.assert_array_equal(train(D), train(D))
    est = estimate_uas(loss, D, train, 5, seed=1)
    assert est.kappa >= 0 and np.isfinite(est.kappa)
