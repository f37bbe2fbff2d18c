"""Pairwise loss families with analytic derivatives and registered constants.

All per-pair routines are vectorized over a batch of ``m`` pairs: feature
arrays ``xa, xb`` have shape ``(m, d)`` and labels ``ya, yb`` shape ``(m,)``.
A single pair can be passed with 1-d ``x`` arrays and scalar labels.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .data import Bounds, Sample

KINDS = ("bipartite_ranking", "metric_learning", "custom")
_ALIASES = {"ranking": "bipartite_ranking", "metric": "metric_learning"}


def canonical_kind(kind: str) -> str:
    kind = _ALIASES.get(kind, kind)
    if kind not in KINDS:
        raise ValueError(f"unknown loss kind {kind!r}")
    return kind


# phi(u) = log(1 + exp(-u)) and its derivatives, overflow-free

def phi(u):
    u = np.asarray(u, dtype=np.float64)
    return np.log1p(np.exp(-np.abs(u))) + np.maximum(-u, 0.0)


def dphi(u):
    """phi'(u) = -1 / (1 + e^u)."""
    u = np.asarray(u, dtype=np.float64)
    e = np.exp(-np.abs(u))
    return np.where(u >= 0, -e / (1.0 + e), -1.0 / (1.0 + e))


def d2phi(u):
    """phi''(u) = e^u / (1 + e^u)^2."""
    u = np.asarray(u, dtype=np.float64)
    e = np.exp(-np.abs(u))
    return e / (1.0 + e) ** 2


def _sigmoid(u: float) -> float:
    return 1.0 / (1.0 + math.exp(-u))


@dataclass(frozen=True)
class LossConstants:
    G: float
    L: float
    mu: float = 0.0
    M_ell: float = math.inf
    source: str = "custom"

    def __post_init__(self):
        if not (self.G > 0 and self.L > 0):
            raise ValueError("G and L must be positive")
        if self.mu < 0:
            raise ValueError("mu must be >= 0")
        if self.mu > 0 and not self.mu < self.L:
            raise ValueError("a PL parameter must satisfy 0 < mu < L")


# Values printed for the unit-bounded examples (||x|| <= 1, |y| <= 1, ||theta|| <= 1).
PUBLISHED_RANKING_G = 2.0
PUBLISHED_RANKING_L = (2 + 2 * math.sqrt(2)) / (3 + 2 * math.sqrt(2))
PUBLISHED_METRIC_G = 1.0
PUBLISHED_METRIC_L = (1 + math.sqrt(2)) / (6 + 4 * math.sqrt(2))


def phi_argument_bound(kind: str, bounds: Bounds, radius: float = 1.0) -> float:
    """Largest attainable ``|u|`` for the phi argument on the constrained set."""
    kind = canonical_kind(kind)
    if kind == "bipartite_ranking":
        return (2 * bounds.y_max) * (2 * bounds.x_max) * radius
    if kind == "metric_learning":
        # |1 - v^T Theta v| <= 1 + ||Theta||_2 ||v||^2 and ||Theta||_2 <= ||Theta||_F
        return 1.0 + (2 * bounds.x_max) ** 2 * radius
    raise ValueError("custom losses have no built-in argument bound")


def registered_constants(
    kind: str,
    bounds: Optional[Bounds] = None,
    lam: float = 0.0,
    radius: float = 1.0,
    source: str = "published",
    custom: Optional[LossConstants] = None,
) -> LossConstants:
    """Constants (G, L, mu, M_ell) of a built-in loss on its constrained set.

    ``source="published"`` returns the published unit-bound values, which only
    exist for ``||x|| <= 1, |y| <= 1, radius 1``. ``source="worst_case"``
    returns bounds derived from ``sup |phi'|`` and ``sup phi''`` over the
    attainable phi arguments; these hold for any declared bounds. The
    regularizer ``lam * ||theta||^2`` adds ``2 lam radius`` to G and
    ``2 lam`` to L, and sets the PL parameter ``mu = lam``.
    """
    if custom is not None:
        return custom
    kind = canonical_kind(kind)
    if kind == "custom":
        raise ValueError("custom losses must supply their own constants")
    if lam < 0:
        raise ValueError("lam must be >= 0")
    if bounds is None:
        raise ValueError("bounds are required for built-in constants")
    u_max = phi_argument_bound(kind, bounds, radius)
    M_ell = float(phi(-u_max)) + lam * radius ** 2

    if source == "published":
        if not (bounds.x_max == 1.0 and bounds.y_max == 1.0 and radius == 1.0):
            raise ValueError(
                "published constants exist only for unit bounds; "
                "use source='worst_case' or pass custom constants"
            )
        G, L = (
            (PUBLISHED_RANKING_G, PUBLISHED_RANKING_L)
            if kind == "bipartite_ranking"
            else (PUBLISHED_METRIC_G, PUBLISHED_METRIC_L)
        )
    elif source == "worst_case":
        if kind == "bipartite_ranking":
            scale = (2 * bounds.y_max) * (2 * bounds.x_max)
        else:
            scale = (2 * bounds.x_max) ** 2
        G = _sigmoid(u_max) * scale
        L = 0.25 * scale ** 2
    else:
        raise ValueError(f"unknown constants source {source!r}")

    return LossConstants(
        G=G + 2 * lam * radius,
        L=L + 2 * lam,
        mu=lam,
        M_ell=M_ell,
        source=source,
    )


class PairwiseLoss:
    """Base class: ``ell(theta; z, z') = data term + lam * ||theta||^2``."""

    kind = "custom"
    layout = "vector"

    def __init__(self, lam: float = 0.0, constants: Optional[LossConstants] = None):
        if lam < 0:
            raise ValueError("lam must be >= 0")
        self.lam = float(lam)
        self.constants = constants

    def n_params(self, d: int) -> int:
        return d

    def check_theta(self, theta, d: int) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64).reshape(-1)
        if theta.size != self.n_params(d):
            raise ValueError(
                f"{self.kind} loss with d={d} expects {self.n_params(d)} parameters, got {theta.size}"
            )
        return theta

    # data-term hooks, vectorized over pairs
    def _data_value(self, theta, xa, ya, xb, yb):
        raise NotImplementedError

    def _data_grad(self, theta, xa, ya, xb, yb):
        raise NotImplementedError

    def _data_hessian(self, theta, xa, ya, xb, yb):
        raise NotImplementedError

    def values(self, theta, xa, ya, xb, yb) -> np.ndarray:
        xa, ya, xb, yb = _as_batch(xa, ya, xb, yb)
        theta = self.check_theta(theta, xa.shape[1])
        return self._data_value(theta, xa, ya, xb, yb) + self.lam * (theta @ theta)

    def grads(self, theta, xa, ya, xb, yb) -> np.ndarray:
        xa, ya, xb, yb = _as_batch(xa, ya, xb, yb)
        theta = self.check_theta(theta, xa.shape[1])
        return self._data_grad(theta, xa, ya, xb, yb) + 2 * self.lam * theta

    def hessians(self, theta, xa, ya, xb, yb) -> np.ndarray:
        xa, ya, xb, yb = _as_batch(xa, ya, xb, yb)
        theta = self.check_theta(theta, xa.shape[1])
        H = self._data_hessian(theta, xa, ya, xb, yb)
        idx = np.arange(theta.size)
        H[:, idx, idx] += 2 * self.lam
        return H

    # dataset-level accumulation over a block of rows; subclasses may
    # override with a closed form that avoids materializing per-pair arrays
    def block_value_grad(self, theta, X, y, rows: slice, need_grad: bool = True):
        n = X.shape[0]
        I = np.repeat(np.arange(rows.start, rows.stop), n)
        J = np.tile(np.arange(n), rows.stop - rows.start)
        keep = I != J
        I, J = I[keep], J[keep]
        val = self.values(theta, X[I], y[I], X[J], y[J]).sum()
        if not need_grad:
            return val, None
        return val, self.grads(theta, X[I], y[I], X[J], y[J]).sum(axis=0)

    def block_hessian(self, theta, X, y, rows: slice):
        n = X.shape[0]
        I = np.repeat(np.arange(rows.start, rows.stop), n)
        J = np.tile(np.arange(n), rows.stop - rows.start)
        keep = I != J
        I, J = I[keep], J[keep]
        return self.hessians(theta, X[I], y[I], X[J], y[J]).sum(axis=0)

    def __repr__(self):
        return f"{type(self).__name__}(lam={self.lam})"


def _as_batch(xa, ya, xb, yb):
    xa = np.asarray(xa, dtype=np.float64)
    xb = np.asarray(xb, dtype=np.float64)
    if xa.ndim == 1:
        xa = xa[None, :]
        xb = xb[None, :]
    ya = np.asarray(ya, dtype=np.float64).reshape(-1)
    yb = np.asarray(yb, dtype=np.float64).reshape(-1)
    return xa, ya, xb, yb


class RankingLoss(PairwiseLoss):
    """Bipartite ranking: ``phi((y - y') theta^T (x - x'))``."""

    kind = "bipartite_ranking"

    def _parts(self, theta, xa, ya, xb, yb):
        dx = xa - xb
        dy = ya - yb
        return dx, dy, dy * (dx @ theta)

    def _data_value(self, theta, xa, ya, xb, yb):
        return phi(self._parts(theta, xa, ya, xb, yb)[2])

    def _data_grad(self, theta, xa, ya, xb, yb):
        dx, dy, u = self._parts(theta, xa, ya, xb, yb)
        return (dphi(u) * dy)[:, None] * dx

    def _data_hessian(self, theta, xa, ya, xb, yb):
        dx, dy, u = self._parts(theta, xa, ya, xb, yb)
        # outer product first so every entry is exactly symmetric
        return (d2phi(u) * dy * dy)[:, None, None] * (dx[:, :, None] * dx[:, None, :])

    def block_value_grad(self, theta, X, y, rows, need_grad=True):
        theta = self.check_theta(theta, X.shape[1])
        n = X.shape[0]
        s = X @ theta
        blk = np.arange(rows.start, rows.stop)
        dy = y[blk, None] - y[None, :]
        u = dy * (s[blk, None] - s[None, :])
        off = np.ones_like(u, dtype=bool)
        off[np.arange(blk.size), blk] = False
        npairs = off.sum()
        val = phi(u)[off].sum() + npairs * self.lam * (theta @ theta)
        if not need_grad:
            return val, None
        w = dphi(u) * dy
        w[~off] = 0.0
        # sum_ij w_ij (x_i - x_j)
        coef = np.zeros(n)
        coef[blk] = w.sum(axis=1)
        coef -= w.sum(axis=0)
        g = (coef[:, None] * X).sum(axis=0) + npairs * 2 * self.lam * theta
        return val, g


class MetricLoss(PairwiseLoss):
    """Mahalanobis metric learning: ``phi(y y' (1 - (x-x')^T Theta (x-x')))``.

    ``Theta`` is a d x d matrix flattened row-major (p = d**2).
    """

    kind = "metric_learning"
    layout = "matrix"

    def n_params(self, d):
        return d * d

    def _parts(self, theta, xa, ya, xb, yb):
        d = xa.shape[1]
        v = xa - xb
        s = ya * yb
        q = np.einsum("mi,ij,mj->m", v, theta.reshape(d, d), v)
        return v, s, s * (1.0 - q)

    def _data_value(self, theta, xa, ya, xb, yb):
        return phi(self._parts(theta, xa, ya, xb, yb)[2])

    def _data_grad(self, theta, xa, ya, xb, yb):
        v, s, u = self._parts(theta, xa, ya, xb, yb)
        outer = (v[:, :, None] * v[:, None, :]).reshape(len(v), -1)
        return (-s * dphi(u))[:, None] * outer

    def _data_hessian(self, theta, xa, ya, xb, yb):
        v, s, u = self._parts(theta, xa, ya, xb, yb)
        outer = (v[:, :, None] * v[:, None, :]).reshape(len(v), -1)
        # s^2 = 1 for +-1 labels, kept for general labels
        return (s * s * d2phi(u))[:, None, None] * (outer[:, :, None] * outer[:, None, :])

    def block_value_grad(self, theta, X, y, rows, need_grad=True):
        theta = self.check_theta(theta, X.shape[1])
        n, d = X.shape
        Th = theta.reshape(d, d)
        blk = np.arange(rows.start, rows.stop)
        XT = X @ Th
        a = np.einsum("ij,ij->i", XT, X)  # x_i^T Theta x_i
        B = X[blk] @ Th @ X.T  # x_i^T Theta x_j
        BT = XT @ X[blk].T  # x_j^T Theta x_i, shape (n, blk)
        q = a[blk, None] + a[None, :] - B - BT.T
        s = y[blk, None] * y[None, :]
        u = s * (1.0 - q)
        off = np.ones_like(u, dtype=bool)
        off[np.arange(blk.size), blk] = False
        npairs = off.sum()
        val = phi(u)[off].sum() + npairs * self.lam * (theta @ theta)
        if not need_grad:
            return val, None
        w = -s * dphi(u)
        w[~off] = 0.0
        # sum_ij w_ij (x_i - x_j)(x_i - x_j)^T
        diag = np.zeros(n)
        diag[blk] = w.sum(axis=1)
        diag += w.sum(axis=0)
        Xb = X[blk]
        cross = Xb.T @ (w @ X)
        g = (X * diag[:, None]).T @ X - cross - cross.T
        return val, g.reshape(-1) + npairs * 2 * self.lam * theta


class CustomLoss(PairwiseLoss):
    """User-supplied data term.

    ``value(theta, x, y, x2, y2)``, ``grad(...)`` and ``hessian(...)`` are
    per-pair callbacks; they are looped over in Python, so this is meant for
    prototyping at small n. ``constants`` must be given.
    """

    kind = "custom"

    def __init__(
        self,
        value: Callable,
        grad: Callable,
        hessian: Callable,
        constants: LossConstants,
        n_params: Optional[Callable[[int], int]] = None,
        lam: float = 0.0,
    ):
        super().__init__(lam=lam, constants=constants)
        self._value = value
        self._grad = grad
        self._hessian = hessian
        self._n_params = n_params

    def n_params(self, d):
        return d if self._n_params is None else self._n_params(d)

    def _data_value(self, theta, xa, ya, xb, yb):
        return np.array([self._value(theta, *a) for a in zip(xa, ya, xb, yb)], dtype=np.float64)

    def _data_grad(self, theta, xa, ya, xb, yb):
        return np.array([self._grad(theta, *a) for a in zip(xa, ya, xb, yb)], dtype=np.float64).reshape(
            len(xa), -1
        )

    def _data_hessian(self, theta, xa, ya, xb, yb):
        p = theta.size
        return np.array([self._hessian(theta, *a) for a in zip(xa, ya, xb, yb)], dtype=np.float64).reshape(
            len(xa), p, p
        )


def make_loss(
    kind: str,
    lam: float = 0.0,
    bounds: Optional[Bounds] = None,
    radius: float = 1.0,
    source: str = "published",
) -> PairwiseLoss:
    """Build a registered loss with its constants attached."""
    kind = canonical_kind(kind)
    cls = {"bipartite_ranking": RankingLoss, "metric_learning": MetricLoss}.get(kind)
    if cls is None:
        raise ValueError("use CustomLoss directly for custom losses")
    consts = registered_constants(kind, bounds, lam, radius=radius, source=source) if bounds else None
    return cls(lam=lam, constants=consts)


# single-pair conveniences mirroring the record-level API

def loss_value(loss: PairwiseLoss, theta, z: Sample, z2: Sample) -> float:
    return float(loss.values(theta, z.x, z.y, z2.x, z2.y)[0])


def loss_grad(loss: PairwiseLoss, theta, z: Sample, z2: Sample) -> np.ndarray:
    return loss.grads(theta, z.x, z.y, z2.x, z2.y)[0]


def loss_hessian(loss: PairwiseLoss, theta, z: Sample, z2: Sample) -> np.ndarray:
    return loss.hessians(theta, z.x, z.y, z2.x, z2.y)[0]
