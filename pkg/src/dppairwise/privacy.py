"""Noise calibration for gradient-perturbed pairwise learning.

Two calibrations are offered:

``moments_accountant``
    The closed form ``sigma = 8 G sqrt(T ln(1/delta)) / (n eps)``; the
    minimal per-iteration noise for which T full-batch noisy steps are
    (eps, delta)-DP.

``basic_gaussian``
    The classical Gaussian mechanism applied at every step to the l2
    sensitivity ``4G/n`` of the averaged pairwise gradient, with the budget
    split evenly by basic composition: each step gets (eps/T, delta/T), so
    ``sigma = (4G/n) sqrt(2 ln(1.25 T/delta)) T/eps``. The classical
    mechanism needs a per-step epsilon below 1.

All logarithms are natural.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

METHODS = ("moments_accountant", "basic_gaussian")


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float
    delta: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")


@dataclass(frozen=True)
class NoiseScale:
    sigma: float
    method: str
    G: float
    T: int
    n: int
    epsilon: float
    delta: float

    def to_dict(self) -> dict:
        return {
            "sigma": self.sigma,
            "method": self.method,
            "G": self.G,
            "T": self.T,
            "n": self.n,
            "epsilon": self.epsilon,
            "delta": self.delta,
        }


class CalibrationRegimeError(ValueError):
    """The requested budget lies outside the mechanism's validity regime."""


def _check_inputs(G, T, n):
    if not G > 0:
        raise ValueError("G must be > 0")
    if int(T) != T or T < 1:
        raise ValueError("T must be a positive integer")
    if int(n) != n or n < 2:
        raise ValueError("n must be an integer >= 2")


def calibrate_sigma_ma(G: float, T: int, n: int, budget: PrivacyBudget) -> NoiseScale:
    _check_inputs(G, T, n)
    eps, delta = budget.epsilon, budget.delta
    sigma = 8.0 * G * math.sqrt(T * math.log(1.0 / delta)) / (n * eps)
    return NoiseScale(sigma, "moments_accountant", float(G), int(T), int(n), eps, delta)


def calibrate_sigma_basic(G: float, T: int, n: int, budget: PrivacyBudget) -> NoiseScale:
    _check_inputs(G, T, n)
    eps, delta = budget.epsilon, budget.delta
    if eps / T >= 1.0:
        raise CalibrationRegimeError(
            f"per-step epsilon {eps / T!r} >= 1; the classical Gaussian mechanism needs eps/T < 1"
        )
    sens = pairwise_gradient_sensitivity(G, n)
    sigma = sens * math.sqrt(2.0 * math.log(1.25 * T / delta)) * T / eps
    return NoiseScale(sigma, "basic_gaussian", float(G), int(T), int(n), eps, delta)


def calibrate(G: float, T: int, n: int, budget: PrivacyBudget, method: str = "moments_accountant") -> NoiseScale:
    if method in ("ma", "moments_accountant"):
        return calibrate_sigma_ma(G, T, n, budget)
    if method in ("basic", "basic_gaussian"):
        return calibrate_sigma_basic(G, T, n, budget)
    raise ValueError(f"unknown calibration method {method!r}")


def pairwise_gradient_sensitivity(G: float, n: int) -> float:
    """l2 sensitivity of the averaged pairwise gradient under one replacement.

    Swapping one sample touches 2(n-1) of the n(n-1) ordered pairs, and each
    touched term moves by at most 2G, giving ``2(n-1) * 2G / (n(n-1)) = 4G/n``.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    if G < 0:
        raise ValueError("G must be >= 0")
    return 4.0 * G / n


def sample_noise(sigma: float, p: int, rng) -> np.ndarray:
    """One draw of ``N(0, sigma^2 I_p)``; always consumes ``p`` normals from ``rng``."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if p < 1:
        raise ValueError("p must be >= 1")
    z = rng.standard_normal(p)
    if sigma == 0:
        return np.zeros(p)
    return sigma * z
