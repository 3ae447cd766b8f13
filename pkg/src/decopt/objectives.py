"""Node-local quadratic objectives f_i(x) = 0.5 (x - a_i)^T Q_i (x - a_i)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class ObjectiveFamily:
    Q: np.ndarray  # (n, d, d)
    a: np.ndarray  # (n, d)
    mu: float
    beta: float

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        a = np.asarray(self.a, dtype=float)
        if Q.ndim != 3 or Q.shape[1] != Q.shape[2]:
            raise ValueError(f"Q must have shape (n, d, d), got {Q.shape}")
        if a.shape != Q.shape[:2]:
            raise ValueError(f"a must have shape {Q.shape[:2]}, got {a.shape}")
        if not 0 < self.mu <= self.beta:
            raise ValueError(f"need 0 < mu <= beta, got mu={self.mu}, beta={self.beta}")
        if not np.allclose(Q, np.swapaxes(Q, 1, 2), atol=1e-12):
            raise ValueError("every Q_i must be symmetric")
        eigs = np.linalg.eigvalsh(Q)
        slack = 1e-9 * self.beta
        if eigs.min() < self.mu - slack or eigs.max() > self.beta + slack:
            raise ValueError(
                f"eigenvalues of Q_i must lie in [{self.mu}, {self.beta}], "
                f"got [{eigs.min():.6g}, {eigs.max():.6g}]")
        Q.setflags(write=False)
        a.setflags(write=False)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "a", a)

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    @property
    def d(self) -> int:
        return self.Q.shape[1]

    @property
    def kappa(self) -> float:
        return self.beta / self.mu

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n, self.d):
            raise ValueError(f"expected shape {(self.n, self.d)}, got {x.shape}")
        return x

    def value(self, x) -> np.ndarray:
        """Per-node values f_i(x_i)."""
        r = self._check(x) - self.a
        return 0.5 * np.einsum("ni,nij,nj->n", r, self.Q, r)

    def grad(self, x) -> np.ndarray:
        """Row i is grad f_i(x_i)."""
        return np.einsum("nij,nj->ni", self.Q, self._check(x) - self.a)

    def prox(self, i: int, v, rho: float) -> np.ndarray:
        """Unique x with rho (v - x) = grad f_i(x)."""
        if rho <= 0:
            raise ValueError(f"rho must be positive, got {rho}")
        v = np.asarray(v, dtype=float).reshape(self.d)
        Q = self.Q[i]
        return np.linalg.solve(Q + rho * np.eye(self.d), Q @ self.a[i] + rho * v)

    def prox_all(self, V, rho: float) -> np.ndarray:
        """Row-wise prox for every node at once."""
        if rho <= 0:
            raise ValueError(f"rho must be positive, got {rho}")
        V = self._check(V)
        lhs = self.Q + rho * np.eye(self.d)
        rhs = np.einsum("nij,nj->ni", self.Q, self.a) + rho * V
        return np.linalg.solve(lhs, rhs[..., None])[..., 0]

    def central_optimum(self) -> np.ndarray:
        """Minimizer of the average objective."""
        return np.linalg.solve(self.Q.sum(0), np.einsum("nij,nj->i", self.Q, self.a))

    def average_value(self, x0) -> float:
        x = np.broadcast_to(np.asarray(x0, dtype=float), (self.n, self.d))
        return float(self.value(x).mean())


def make_family(Q, a, mu=None, beta=None) -> ObjectiveFamily:
    """Build a family; bounds default to the extreme eigenvalues of the Q_i."""
    Q = np.asarray(Q, dtype=float)
    a = np.asarray(a, dtype=float)
    if Q.ndim == 1:
        Q = Q[:, None, None]
    if a.ndim == 1:
        a = a[:, None]
    eigs = np.linalg.eigvalsh(Q)
    return ObjectiveFamily(Q, a, float(eigs.min() if mu is None else mu),
                           float(eigs.max() if beta is None else beta))


def random_family(n: int, d: int, kappa: float, seed: int = 0) -> ObjectiveFamily:
    """Random family with mu = 1, beta = kappa and both bounds attained."""
    if n < 2 or d < 1 or kappa < 1:
        raise ValueError(f"need n >= 2, d >= 1, kappa >= 1; got n={n}, d={d}, kappa={kappa}")
    rng = np.random.default_rng(seed)
    eigs = rng.uniform(1.0, kappa, size=(n, d))
    eigs[0, 0] = 1.0
    eigs[-1, -1] = kappa
    Q = np.empty((n, d, d))
    for i in range(n):
        U, _ = np.linalg.qr(rng.standard_normal((d, d)))
        Q[i] = (U * eigs[i]) @ U.T
    Q = 0.5 * (Q + np.swapaxes(Q, 1, 2))
    a = rng.normal(scale=2.0, size=(n, d))
    # kappa = 1 forces Q_i = I; drop rounding noise
    if kappa == 1:
        Q = np.broadcast_to(np.eye(d), (n, d, d)).copy()
    return ObjectiveFamily(Q, a, 1.0, float(kappa))
