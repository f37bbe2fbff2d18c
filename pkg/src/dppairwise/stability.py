"""Leave-one-out stability: influence functions, exact retraining, beta and UAS statistics.

Every statistic here is empirical: sups run over the sampled removals and
probe pairs of the dataset at hand, never over the whole data universe.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from .data import Dataset, Sample, pair_indices
from .losses import PairwiseLoss
from .optimizer import TrainConfig, dp_pairwise_gd, exact_minimize
from .risk import ConvergenceError, empirical_risk_hessian

# Ridge multipliers tried in order, scaled by trace(H)/p.
DAMPING_LADDER = (0.0, 1e-8, 1e-6, 1e-4)


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-10
    max_iter: int = 100_000
    eta: Optional[float] = None


def _minimize(loss, D, cfg: SolverConfig, theta0=None, workers=1) -> np.ndarray:
    res = exact_minimize(loss, D, tol=cfg.tol, max_iter=cfg.max_iter, theta0=theta0, eta=cfg.eta, workers=workers)
    if not res.converged:
        raise ConvergenceError(f"gradient norm {res.grad_norm!r} above tol {cfg.tol!r} after {res.n_iter} steps")
    return res.theta


def retrain_loo(
    loss: PairwiseLoss,
    D: Dataset,
    i: int,
    solver_cfg: SolverConfig = SolverConfig(),
    theta0=None,
    workers: int = 1,
) -> np.ndarray:
    """Minimizer of the pairwise risk on ``D`` without sample ``i``."""
    if D.n < 3:
        raise ValueError("leave-one-out needs n >= 3")
    return _minimize(loss, D.without(i), solver_cfg, theta0=theta0, workers=workers)


class HessianFactor:
    """Damped Cholesky factor of the empirical-risk Hessian, computed once.

    The ridge ``gamma`` is the first rung of :data:`DAMPING_LADDER` (times
    ``trace(H)/p``, or times 1 when the trace vanishes) at which the
    factorization succeeds and the solve residual is within ``rtol``.
    """

    def __init__(self, H: np.ndarray, damping: Optional[float] = None, rtol: float = 1e-8):
        H = np.asarray(H, dtype=np.float64)
        if not np.allclose(H, H.T, rtol=0, atol=1e-12 * max(1.0, np.abs(H).max())):
            raise ValueError("Hessian is not symmetric")
        self.H = H
        self.rtol = rtol
        p = H.shape[0]
        scale = np.trace(H) / p
        if not scale > 0:
            scale = 1.0
        rungs = [damping] if damping is not None else [c * scale for c in DAMPING_LADDER]
        self.gamma = None
        for gamma in rungs:
            A = H + gamma * np.eye(p)
            try:
                c, low = scipy.linalg.cho_factor(A, lower=True)
            except np.linalg.LinAlgError:
                continue
            pivots = np.diag(c)
            if not np.all(pivots > 0):
                continue
            # condition check on a probe right-hand side
            probe = np.ones(p)
            x = scipy.linalg.cho_solve((c, low), probe)
            if np.linalg.norm(A @ x - probe) > rtol * max(1.0, np.linalg.norm(probe)) or not np.all(np.isfinite(x)):
                continue
            self.gamma = float(gamma)
            self._factor = (c, low)
            self._A = A
            self.pivots = pivots ** 2
            break
        if self.gamma is None:
            raise np.linalg.LinAlgError("Hessian could not be factorized on any damping rung")

    def solve(self, b: np.ndarray):
        x = scipy.linalg.cho_solve(self._factor, b)
        return x, float(np.linalg.norm(self._A @ x - b))


@dataclass(frozen=True)
class InfluenceResult:
    delta_theta: np.ndarray
    hessian_damping: float
    residual: float


def influence_rhs(loss: PairwiseLoss, theta_star, D: Dataset, i: int) -> np.ndarray:
    """``(1/(n(n-1))) sum_{k != i} [grad ell(theta; z_i, z_k) + grad ell(theta; z_k, z_i)]``."""
    n = D.n
    others = np.arange(n) != i
    Xo, yo = D.X[others], D.y[others]
    Xi = np.broadcast_to(D.X[i], Xo.shape)
    yi = np.full(n - 1, D.y[i])
    g = loss.grads(theta_star, Xi, yi, Xo, yo).sum(axis=0) + loss.grads(theta_star, Xo, yo, Xi, yi).sum(axis=0)
    return g / (n * (n - 1))


def influence_loo(
    loss: PairwiseLoss,
    theta_star,
    D: Dataset,
    i: int,
    damping: Optional[float] = None,
    factor: Optional[HessianFactor] = None,
) -> InfluenceResult:
    """First-order prediction of ``theta*_{D^{-i}} - theta*_D``.

    Solves ``(H + gamma I) delta = rhs`` with ``H`` the empirical-risk
    Hessian at ``theta_star`` and ``rhs`` from :func:`influence_rhs`. Pass a
    precomputed ``factor`` to share one factorization across many ``i``.
    """
    theta_star = np.asarray(theta_star, dtype=np.float64)
    if factor is None:
        factor = HessianFactor(empirical_risk_hessian(loss, theta_star, D), damping=damping)
    delta, residual = factor.solve(influence_rhs(loss, theta_star, D, i))
    return InfluenceResult(delta, factor.gamma, residual)


def elastic_beta(loss: PairwiseLoss, theta_full, theta_loo, zj: Sample, zk: Sample) -> float:
    """``|ell(theta_full; z_j, z_k) - ell(theta_loo; z_j, z_k)|``."""
    a = loss.values(theta_full, zj.x, zj.y, zk.x, zk.y)[0]
    b = loss.values(theta_loo, zj.x, zj.y, zk.x, zk.y)[0]
    return float(abs(a - b))


@dataclass(frozen=True)
class StabilityReport:
    """Sampled pairwise locally elastic stability of the exact minimizer.

    ``beta_table[r, q]`` is beta_n(z_i; z_j, z_k) for removal ``removed[r]``
    and probe pair ``pairs[q] = (j, k)``. The ``n_*`` properties give the
    n-independent scale ``beta = n * beta_n``.
    """

    method: str
    n: int
    removed: np.ndarray
    pairs: np.ndarray
    beta_table: np.ndarray
    shifts: np.ndarray  # ||theta_full - theta_loo|| per removal
    beta_uniform: float
    beta_sup_mean: float
    beta_mean: float
    beta_median: float
    theta_star: np.ndarray = field(repr=False)

    @property
    def n_beta_uniform(self) -> float:
        return self.n * self.beta_uniform

    @property
    def n_beta_sup_mean(self) -> float:
        return self.n * self.beta_sup_mean

    @property
    def n_beta_median(self) -> float:
        return self.n * self.beta_median

    @property
    def gap_ratio(self) -> float:
        """``beta_uniform / sup_z E beta``; 1 when both vanish."""
        if self.beta_sup_mean == 0:
            return 1.0 if self.beta_uniform == 0 else math.inf
        return self.beta_uniform / self.beta_sup_mean

    def to_dict(self, table: bool = False) -> dict:
        out = {
            "method": self.method,
            "n": self.n,
            "empirical": True,
            "beta_uniform": self.beta_uniform,
            "beta_sup_mean": self.beta_sup_mean,
            "beta_mean": self.beta_mean,
            "beta_median": self.beta_median,
            "n_beta_uniform": self.n_beta_uniform,
            "n_beta_sup_mean": self.n_beta_sup_mean,
            "n_beta_median": self.n_beta_median,
            "gap_ratio": self.gap_ratio,
            "removed": [int(i) for i in self.removed],
            "shifts": [float(s) for s in self.shifts],
        }
        if table:
            out["pairs"] = [[int(j), int(k)] for j, k in self.pairs]
            out["beta_table"] = [[float(b) for b in row] for row in self.beta_table]
        return out


def beta_statistics(
    loss: PairwiseLoss,
    D: Dataset,
    method: str = "retrain",
    removals: Optional[int] = None,
    pairs: int = 200,
    seed: int = 0,
    solver_cfg: SolverConfig = SolverConfig(),
    theta_star=None,
    workers: int = 1,
) -> StabilityReport:
    """Sample beta_n(z_i; z_j, z_k) over a probe grid and aggregate it.

    ``removals`` distinct indices are removed one at a time (default
    ``min(n, 30)``); the same ``pairs`` ordered probe pairs ``(j, k)``,
    ``j != k``, are scored for every removal.
    """
    if method not in ("retrain", "influence"):
        raise ValueError(f"unknown method {method!r}")
    n = D.n
    removals = min(n, 30) if removals is None else removals
    if not 1 <= removals <= n:
        raise ValueError(f"removals must lie in [1, {n}]")
    if not 1 <= pairs <= n * (n - 1):
        raise ValueError(f"pairs must lie in [1, {n * (n - 1)}]")
    if method == "retrain" and n < 3:
        raise ValueError("retraining needs n >= 3")

    rng = np.random.default_rng(seed)
    removed = np.sort(rng.choice(n, size=removals, replace=False))
    I, J = pair_indices(n)
    pick = np.sort(rng.choice(I.size, size=pairs, replace=False))
    pj, pk = I[pick], J[pick]

    if theta_star is None:
        theta_star = _minimize(loss, D, solver_cfg, workers=workers)
    theta_star = np.asarray(theta_star, dtype=np.float64)
    xa, ya, xb, yb = D.X[pj], D.y[pj], D.X[pk], D.y[pk]
    base = loss.values(theta_star, xa, ya, xb, yb)

    factor = None
    if method == "influence":
        factor = HessianFactor(empirical_risk_hessian(loss, theta_star, D, workers))

    table = np.empty((removals, pairs))
    shifts = np.empty(removals)
    for r, i in enumerate(removed):
        if method == "retrain":
            theta_loo = retrain_loo(loss, D, int(i), solver_cfg, theta0=theta_star, workers=workers)
        else:
            theta_loo = theta_star + influence_loo(loss, theta_star, D, int(i), factor=factor).delta_theta
        table[r] = np.abs(base - loss.values(theta_loo, xa, ya, xb, yb))
        shifts[r] = np.linalg.norm(theta_loo - theta_star)

    return StabilityReport(
        method=method,
        n=n,
        removed=removed,
        pairs=np.stack([pj, pk], axis=1),
        beta_table=table,
        shifts=shifts,
        beta_uniform=float(table.max()),
        beta_sup_mean=float(table.mean(axis=1).max()),
        beta_mean=float(table.mean()),
        beta_median=float(np.median(table)),
        theta_star=theta_star,
    )


# -- uniform argument stability ---------------------------------------------

@dataclass(frozen=True)
class UASEstimate:
    kappa: float
    G_kappa: float
    shifts: np.ndarray
    replaced: np.ndarray


def exact_trainer(loss: PairwiseLoss, solver_cfg: SolverConfig = SolverConfig(), workers: int = 1) -> Callable:
    return lambda D: _minimize(loss, D, solver_cfg, workers=workers)


def coupled_dp_trainer(loss: PairwiseLoss, config: TrainConfig, workers: int = 1) -> Callable:
    """DP trainer with a fixed noise seed: adjacent runs see the same noise sequence."""
    return lambda D: dp_pairwise_gd(loss, D, config, workers=workers).theta_priv.theta


def estimate_uas(
    loss: PairwiseLoss,
    D: Dataset,
    trainer: Callable,
    n_replacements: int,
    seed: int = 0,
    pool: Optional[Dataset] = None,
    G: Optional[float] = None,
) -> UASEstimate:
    """Max over sampled single-sample replacements of ``||A(D) - A(D')||``.

    Replacement records are drawn uniformly from ``pool`` (default: ``D``
    itself, so a draw can hit the replaced record and leave D unchanged).
    """
    if n_replacements < 1:
        raise ValueError("n_replacements must be >= 1")
    pool = D if pool is None else pool
    if G is None:
        if loss.constants is None:
            raise ValueError("G not given and the loss has no registered constants")
        G = loss.constants.G
    rng = np.random.default_rng(seed)
    base = np.asarray(trainer(D), dtype=np.float64)
    shifts = np.empty(n_replacements)
    replaced = np.empty((n_replacements, 2), dtype=np.int64)
    for r in range(n_replacements):
        i = int(rng.integers(D.n))
        k = int(rng.integers(pool.n))
        replaced[r] = (i, k)
        new = pool[k]
        if new == D[i]:
            shifts[r] = 0.0
            continue
        shifts[r] = np.linalg.norm(np.asarray(trainer(D.replace(i, new))) - base)
    kappa = float(shifts.max())
    return UASEstimate(kappa, G * kappa, shifts, replaced)
