"""Pairwise empirical risk, Monte-Carlo population risk and the PL checker."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .data import Dataset, SyntheticDistribution, uniform_ball
from .losses import PairwiseLoss

# Pairs are processed in row blocks of roughly this many pairs. The block
# layout depends only on (n, p), never on the worker count, and partial sums
# are reduced in block order, so results are bit-identical for any number of
# workers.
_PAIRS_PER_BLOCK = 1 << 17


def _row_blocks(n: int, p: int) -> list:
    rows = max(1, _PAIRS_PER_BLOCK // (n * max(1, p // 8)))
    return [slice(a, min(a + rows, n)) for a in range(0, n, rows)]


def _map_blocks(fn, blocks, workers: int):
    if workers <= 1 or len(blocks) == 1:
        return [fn(b) for b in blocks]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, blocks))


def _check(D: Dataset):
    if D.n < 2:
        raise ValueError("empirical risk needs n >= 2")


def risk_and_grad(loss: PairwiseLoss, theta, D: Dataset, workers: int = 1, need_grad: bool = True):
    """``(L(theta; D), grad L(theta; D))`` averaged over all n(n-1) ordered pairs."""
    _check(D)
    theta = loss.check_theta(theta, D.d)
    n = D.n
    blocks = _row_blocks(n, theta.size)
    parts = _map_blocks(lambda b: loss.block_value_grad(theta, D.X, D.y, b, need_grad), blocks, workers)
    N = n * (n - 1)
    val = math.fsum(float(v) for v, _ in parts) / N
    if not need_grad:
        return val, None
    grad = np.sum(np.stack([g for _, g in parts]), axis=0) / N
    return val, grad


def empirical_risk(loss: PairwiseLoss, theta, D: Dataset, workers: int = 1) -> float:
    return risk_and_grad(loss, theta, D, workers=workers, need_grad=False)[0]


def empirical_risk_grad(loss: PairwiseLoss, theta, D: Dataset, workers: int = 1) -> np.ndarray:
    return risk_and_grad(loss, theta, D, workers=workers)[1]


def empirical_risk_hessian(loss: PairwiseLoss, theta, D: Dataset, workers: int = 1) -> np.ndarray:
    _check(D)
    theta = loss.check_theta(theta, D.d)
    n = D.n
    # hessian blocks hold p*p entries per pair
    blocks = _row_blocks(n, theta.size ** 2)
    parts = _map_blocks(lambda b: loss.block_hessian(theta, D.X, D.y, b), blocks, workers)
    H = np.sum(np.stack(parts), axis=0) / (n * (n - 1))
    return 0.5 * (H + H.T)


# -- population risk --------------------------------------------------------

@dataclass(frozen=True)
class MCEstimate:
    value: float
    stderr: float
    m: int


Sampler = Union[SyntheticDistribution, Dataset]


def draw_pairs(sampler: Sampler, m: int, rng: np.random.Generator):
    """``m`` independent pairs ``(z, z')``; the two members are drawn independently."""
    if isinstance(sampler, Dataset):
        if sampler.n == 0:
            raise ValueError("empty sampler")
        I = rng.integers(0, sampler.n, m)
        J = rng.integers(0, sampler.n, m)
        return sampler.X[I], sampler.y[I], sampler.X[J], sampler.y[J]
    if isinstance(sampler, SyntheticDistribution):
        xa, ya = sampler.draw(m, rng)
        xb, yb = sampler.draw(m, rng)
        return xa, ya, xb, yb
    raise TypeError(f"unsupported sampler {type(sampler).__name__}")


def _pair_values(loss, thetas, pairs, chunk=1 << 16):
    xa, ya, xb, yb = pairs
    m = len(ya)
    out = np.empty((len(thetas), m))
    for a in range(0, m, chunk):
        sl = slice(a, a + chunk)
        for k, th in enumerate(thetas):
            out[k, sl] = loss.values(th, xa[sl], ya[sl], xb[sl], yb[sl])
    return out


def _mc(values: np.ndarray) -> MCEstimate:
    m = values.size
    if m and values.min() == values.max():
        # constant integrand: report it exactly rather than a rounded mean
        return MCEstimate(float(values[0]), 0.0, m)
    se = float(values.std(ddof=1) / math.sqrt(m)) if m > 1 else 0.0
    return MCEstimate(float(values.mean()), se, m)


def population_risk_mc(loss: PairwiseLoss, theta, sampler: Sampler, m: int, seed: int) -> MCEstimate:
    """Mean of the loss over ``m`` freshly drawn pairs, with its standard error."""
    if m < 1:
        raise ValueError("m must be >= 1")
    pairs = draw_pairs(sampler, m, np.random.default_rng(seed))
    return _mc(_pair_values(loss, [theta], pairs)[0])


@dataclass(frozen=True)
class RiskDecomposition:
    """Excess population risk split into its three bracketed parts.

    ``generalization_error = L_P(theta) - L(theta; D)``,
    ``excess_empirical_risk = L(theta; D) - L(theta*; D)``,
    ``approximation_gap = L(theta*; D) - L_P(theta_ref)``.
    ``stderr`` is the Monte-Carlo standard error of ``total`` (paired pairs).
    """

    generalization_error: float
    excess_empirical_risk: float
    approximation_gap: float
    total: float
    stderr: float = 0.0

    @classmethod
    def from_parts(cls, gen, emp, approx, stderr=0.0):
        return cls(gen, emp, approx, gen + emp + approx, stderr)


def excess_population_risk(
    loss: PairwiseLoss,
    theta_priv,
    reference_theta,
    sampler: Sampler,
    m: int,
    seed: int,
    D: Optional[Dataset] = None,
    theta_star=None,
    workers: int = 1,
) -> RiskDecomposition:
    """Estimate ``L_P(theta_priv) - L_P(reference)`` on common Monte-Carlo pairs.

    With a training set ``D`` and its minimizer ``theta_star`` the estimate is
    split into generalization, excess-empirical and approximation terms;
    without them everything is reported as generalization error.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    pairs = draw_pairs(sampler, m, np.random.default_rng(seed))
    vals = _pair_values(loss, [theta_priv, reference_theta], pairs)
    lp_priv = float(vals[0].mean())
    lp_ref = float(vals[1].mean())
    se = _mc(vals[0] - vals[1]).stderr
    if D is None:
        return RiskDecomposition.from_parts(lp_priv - lp_ref, 0.0, 0.0, se)
    if theta_star is None:
        raise ValueError("theta_star is required together with D")
    l_priv = empirical_risk(loss, theta_priv, D, workers)
    l_star = empirical_risk(loss, theta_star, D, workers)
    return RiskDecomposition.from_parts(lp_priv - l_priv, l_priv - l_star, l_star - lp_ref, se)


# -- PL condition -----------------------------------------------------------

class ConvergenceError(RuntimeError):
    """Zero-noise descent did not reach the requested gradient tolerance."""



@dataclass(frozen=True)
class PLReport:
    violations: int
    worst_ratio: float
    count: int
    mu: float
    L_min: float
    minimizer_grad_norm: float


def pl_check(
    loss: PairwiseLoss,
    D: Dataset,
    mu: float,
    count: int = 500,
    radius: float = 1.0,
    seed: int = 0,
    tol: float = 1e-10,
    max_iter: int = 100_000,
    L_min: Optional[float] = None,
    workers: int = 1,
) -> PLReport:
    """Probe ``||grad L||^2 >= 2 mu (L - L_min)`` at ``count`` points in a ball.

    ``L_min`` comes from zero-noise gradient descent run to gradient norm
    ``tol``; pass it explicitly to skip that step.
    """
    from .optimizer import exact_minimize

    if mu <= 0:
        raise ValueError("mu must be positive")
    achieved = 0.0
    if L_min is None:
        res = exact_minimize(loss, D, tol=tol, max_iter=max_iter, workers=workers)
        if not res.converged:
            raise ConvergenceError(f"minimizer not found: gradient norm {res.grad_norm!r} > {tol!r}")
        L_min = empirical_risk(loss, res.theta, D, workers)
        achieved = res.grad_norm
    p = loss.n_params(D.d)
    probes = uniform_ball(np.random.default_rng(seed), count, p, radius)
    violations = 0
    worst = math.inf
    for th in probes:
        val, g = risk_and_grad(loss, th, D, workers)
        lhs = float(g @ g)
        rhs = 2 * mu * (val - L_min)
        if rhs <= 0:
            continue
        ratio = lhs / rhs
        worst = min(worst, ratio)
        if ratio < 1.0:
            violations += 1
    return PLReport(violations, worst, count, mu, L_min, achieved)


# -- population minimizer ---------------------------------------------------

@dataclass(frozen=True)
class ReferenceFit:
    """Approximate population minimizer and its diagnostics.

    ``grad_norm`` is the gradient norm of the fitted objective;
    ``holdout_grad_norm`` is the gradient norm of the Monte-Carlo population
    risk at ``theta`` on independent pairs, an estimate of how far ``theta``
    is from stationarity of the true population risk.
    """

    theta: np.ndarray
    m: int
    grad_norm: float
    n_iter: int
    converged: bool
    holdout_grad_norm: float


def _pairs_value_grad(loss, theta, pairs, chunk=1 << 15):
    xa, ya, xb, yb = pairs
    m = len(ya)
    vals, grads = [], []
    for a in range(0, m, chunk):
        sl = slice(a, a + chunk)
        vals.append(loss.values(theta, xa[sl], ya[sl], xb[sl], yb[sl]).sum())
        grads.append(loss.grads(theta, xa[sl], ya[sl], xb[sl], yb[sl]).sum(axis=0))
    return math.fsum(vals) / m, np.sum(np.stack(grads), axis=0) / m


def reference_minimizer(
    loss: PairwiseLoss,
    sampler: Sampler,
    m: int,
    seed: int,
    tol: float = 1e-10,
    max_iter: int = 100_000,
    eta: Optional[float] = None,
) -> ReferenceFit:
    """Minimize the average loss over ``m`` i.i.d. pairs drawn from ``sampler``.

    Each pair uses two independent draws, so the objective is an unbiased
    estimate of the population risk at every theta.
    """
    if m < 2:
        raise ValueError("m must be >= 2")
    if eta is None:
        if loss.constants is None:
            raise ValueError("eta not given and the loss has no registered constants")
        eta = 1.0 / loss.constants.L
    rng = np.random.default_rng(seed)
    pairs = draw_pairs(sampler, m, rng)
    p = loss.n_params(pairs[0].shape[1])
    theta = np.zeros(p)
    _, g = _pairs_value_grad(loss, theta, pairs)
    gn = float(np.linalg.norm(g))
    it = 0
    while gn > tol and it < max_iter:
        theta = theta - eta * g
        it += 1
        _, g = _pairs_value_grad(loss, theta, pairs)
        gn = float(np.linalg.norm(g))
        if not math.isfinite(gn):
            raise ConvergenceError(f"reference descent diverged at step {it} (eta={eta!r})")
    holdout = draw_pairs(sampler, m, rng)
    _, hg = _pairs_value_grad(loss, theta, holdout)
    return ReferenceFit(theta, m, gn, it, gn <= tol, float(np.linalg.norm(hg)))
