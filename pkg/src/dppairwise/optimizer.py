"""Noisy full-batch pairwise gradient descent and the zero-noise solver."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .data import Dataset, ModelParams, uniform_ball
from .losses import PairwiseLoss
from .privacy import NoiseScale, sample_noise
from .risk import risk_and_grad


class DivergenceError(FloatingPointError):
    def __init__(self, iteration: int, message: str = "non-finite iterate"):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration


def gd_step(theta, grad, noise, eta: float) -> np.ndarray:
    """``theta - eta * (grad + noise)``."""
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if not (theta.shape == grad.shape == noise.shape):
        raise ValueError(f"shape mismatch: {theta.shape}, {grad.shape}, {noise.shape}")
    return theta - eta * (grad + noise)


def project(theta, radius: float) -> np.ndarray:
    """Euclidean projection onto the l2 ball (Frobenius ball for matrices)."""
    if not radius > 0:
        raise ValueError("radius must be > 0")
    theta = np.asarray(theta, dtype=np.float64)
    norm = float(np.linalg.norm(theta))
    if norm <= radius:
        return theta
    return theta * (radius / norm)


def default_theta0(p: int, seed, radius: Optional[float] = None) -> np.ndarray:
    """Uniform draw from the ball of radius ``min(1, radius) / 2``."""
    r = 0.5 * (1.0 if radius is None else min(1.0, radius))
    return uniform_ball(np.random.default_rng(seed), 1, p, r)[0]


@dataclass(frozen=True)
class TrainConfig:
    T: int
    sigma: Union[NoiseScale, float] = 0.0
    eta: Optional[float] = None  # None -> 1/L of the loss
    theta0: Optional[np.ndarray] = None  # None -> default_theta0(seed)
    project: Optional[float] = None
    record_trajectory: bool = False
    seed: int = 0

    def __post_init__(self):
        if int(self.T) != self.T or self.T < 1:
            raise ValueError("T must be a positive integer")
        if self.eta is not None and not self.eta > 0:
            raise ValueError("eta must be > 0")
        if self.sigma_value < 0:
            raise ValueError("sigma must be >= 0")
        if self.project is not None and not self.project > 0:
            raise ValueError("projection radius must be > 0")

    @property
    def sigma_value(self) -> float:
        return self.sigma.sigma if isinstance(self.sigma, NoiseScale) else float(self.sigma)

    def to_dict(self) -> dict:
        return {
            "T": self.T,
            "sigma": self.sigma.to_dict() if isinstance(self.sigma, NoiseScale) else self.sigma_value,
            "eta": self.eta,
            "theta0": None if self.theta0 is None else [float(v) for v in np.asarray(self.theta0)],
            "project": self.project,
            "record_trajectory": self.record_trajectory,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class TrainResult:
    theta_priv: ModelParams
    risk_trace: np.ndarray  # L(theta_t; D), t = 1..T
    grad_norm_trace: np.ndarray  # ||grad L(theta_{t-1}; D)||, t = 1..T
    noise_seed: int
    eta: float
    config_echo: dict
    initial_risk: float
    trajectory: Optional[np.ndarray] = field(default=None, repr=False)  # (T + 1, p)


def resolve_eta(loss: PairwiseLoss, eta: Optional[float]) -> float:
    if eta is not None:
        return float(eta)
    if loss.constants is None:
        raise ValueError("eta not given and the loss has no registered smoothness constant")
    return 1.0 / loss.constants.L


def dp_pairwise_gd(
    loss: PairwiseLoss,
    D: Dataset,
    config: TrainConfig,
    rng=None,
    workers: int = 1,
) -> TrainResult:
    """Run T steps of ``theta_t = theta_{t-1} - eta (grad L(theta_{t-1}; D) + b_t)``.

    ``b_t ~ N(0, sigma^2 I_p)`` is drawn fresh at every step from a generator
    seeded with ``config.seed`` (or from ``rng`` when supplied). The noise
    scale is taken as given; calibrate it with :mod:`dppairwise.privacy`.
    """
    eta = resolve_eta(loss, config.eta)
    p = loss.n_params(D.d)
    sigma = config.sigma_value
    if config.theta0 is None:
        theta = default_theta0(p, [config.seed, 1], config.project)
    else:
        theta = loss.check_theta(config.theta0, D.d).copy()
    if rng is None:
        rng = np.random.default_rng(config.seed)

    T = int(config.T)
    risks = np.empty(T)
    gnorms = np.empty(T)
    traj = np.empty((T + 1, p)) if config.record_trajectory else None
    if traj is not None:
        traj[0] = theta

    val, g = risk_and_grad(loss, theta, D, workers)
    initial = val
    for t in range(1, T + 1):
        gnorms[t - 1] = math.sqrt(float(g @ g))
        b = sample_noise(sigma, p, rng)
        theta = gd_step(theta, g, b, eta)
        if config.project is not None:
            theta = project(theta, config.project)
        if not np.all(np.isfinite(theta)):
            raise DivergenceError(t, f"non-finite iterate (sigma={sigma!r}, eta={eta!r})")
        val, g = risk_and_grad(loss, theta, D, workers)
        if not math.isfinite(val):
            raise DivergenceError(t, "non-finite empirical risk")
        risks[t - 1] = val
        if traj is not None:
            traj[t] = theta

    return TrainResult(
        theta_priv=ModelParams(theta, layout=loss.layout, radius=config.project),
        risk_trace=risks,
        grad_norm_trace=gnorms,
        noise_seed=config.seed,
        eta=eta,
        config_echo=config.to_dict(),
        initial_risk=initial,
        trajectory=traj,
    )


@dataclass(frozen=True)
class MinimizeResult:
    theta: np.ndarray
    grad_norm: float
    n_iter: int
    converged: bool
    value: float
    pl_guaranteed: bool


def exact_minimize(
    loss: PairwiseLoss,
    D: Dataset,
    tol: float = 1e-10,
    max_iter: int = 100_000,
    theta0=None,
    eta: Optional[float] = None,
    workers: int = 1,
) -> MinimizeResult:
    """Zero-noise gradient descent until ``||grad L|| <= tol`` or ``max_iter``.

    Non-convergence is reported through ``converged=False`` rather than
    raised. Without a registered PL parameter the result is best effort and a
    warning is emitted.
    """
    eta = resolve_eta(loss, eta)
    p = loss.n_params(D.d)
    pl = loss.constants is not None and loss.constants.mu > 0
    if not pl:
        warnings.warn("loss has no PL parameter; minimization is best effort", RuntimeWarning, stacklevel=2)
    theta = np.zeros(p) if theta0 is None else loss.check_theta(theta0, D.d).copy()
    val, g = risk_and_grad(loss, theta, D, workers)
    gn = math.sqrt(float(g @ g))
    it = 0
    while gn > tol and it < max_iter:
        theta = theta - eta * g
        it += 1
        if not np.all(np.isfinite(theta)):
            raise DivergenceError(it, "zero-noise descent diverged; eta too large?")
        val, g = risk_and_grad(loss, theta, D, workers)
        gn = math.sqrt(float(g @ g))
    return MinimizeResult(theta, gn, it, gn <= tol, val, pl)
