"""Small dense LMI feasibility solver.

Decision variables are a symmetric matrix P (stored as its upper triangle)
and nonnegative scalars lam.  For an affine map

    F(P, lam) = F0 + sum_i x_i F_i

the solver maximizes a slack t subject to

    F(P, lam) <= -t I,   P >= eps_P I,   lam >= 0,   trace(P) + sum(lam) <= radius

with a log-det barrier method (damped Newton steps, dense linear algebra).
The LMIs produced by the rate analysis are homogeneous in (P, lam), so the
radius only fixes a scale and does not change the verdict.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

MARGIN_TOL = 1e-9
EPS_P = 1e-8


def max_eigenvalue(S) -> float:
    S = np.asarray(S, dtype=float)
    if not np.all(np.isfinite(S)):
        raise ValueError("matrix has non-finite entries")
    return float(np.linalg.eigvalsh(0.5 * (S + S.T))[-1])


def svec_basis(n: int) -> np.ndarray:
    """Symmetric basis E_ab (a <= b), shape (n(n+1)/2, n, n)."""
    iu = np.triu_indices(n)
    E = np.zeros((len(iu[0]), n, n))
    k = np.arange(len(iu[0]))
    E[k, iu[0], iu[1]] = 1.0
    E[k, iu[1], iu[0]] = 1.0
    return E


def smat(p: np.ndarray, n: int) -> np.ndarray:
    P = np.zeros((n, n))
    iu = np.triu_indices(n)
    P[iu] = p
    P[(iu[1], iu[0])] = p
    return P


def svec(P: np.ndarray) -> np.ndarray:
    return np.asarray(P)[np.triu_indices(P.shape[0])]


@dataclass(frozen=True, eq=False)
class LmiFeasibilityProblem:
    """F(x) = F0 + sum_i x_i Fs[i] with x = (svec(P), lam)."""

    F0: np.ndarray      # (m, m)
    Fs: np.ndarray      # (N, m, m)
    n_p: int            # size of P
    n_lambda: int

    def __post_init__(self):
        N = self.n_p * (self.n_p + 1) // 2 + self.n_lambda
        m = self.F0.shape[0]
        if self.F0.shape != (m, m) or self.Fs.shape != (N, m, m):
            raise ValueError(f"expected F0 {(m, m)} and Fs {(N, m, m)}, got "
                             f"{self.F0.shape} and {self.Fs.shape}")

    @property
    def size(self) -> int:
        return self.F0.shape[0]

    def split(self, x):
        k = self.n_p * (self.n_p + 1) // 2
        return smat(x[:k], self.n_p), np.asarray(x[k:])

    def evaluate(self, x) -> np.ndarray:
        return self.F0 + np.tensordot(x, self.Fs, axes=1)

    def scaled(self, c: float) -> "LmiFeasibilityProblem":
        return LmiFeasibilityProblem(c * self.F0, c * self.Fs, self.n_p, self.n_lambda)


@dataclass
class FeasibilityResult:
    status: str                 # "feasible" | "infeasible" | "failed"
    slack: float                # best t found (lower bound on the optimum)
    P: np.ndarray | None = None
    lam: np.ndarray | None = None
    upper_bound: float = np.inf  # barrier bound on the optimal slack
    newton_steps: int = 0

    @property
    def feasible(self) -> bool:
        return self.status == "feasible"


class _Barrier:
    """-logdet of affine matrix blocks plus -log of affine scalars, in y = (x, t)."""

    def __init__(self, mats, lin_G, lin_g0):
        self.mats = mats          # list of (G0 (m,m), Gs (N+1,m,m))
        self.lin_G = lin_G        # (r, N+1)
        self.lin_g0 = lin_g0      # (r,)
        self.nu = sum(G0.shape[0] for G0, _ in mats) + len(lin_g0)

    def value(self, y) -> float:
        val = 0.0
        for G0, Gs in self.mats:
            S = G0 + np.tensordot(y, Gs, axes=1)
            try:
                L = np.linalg.cholesky(S)
            except np.linalg.LinAlgError:
                return np.inf
            val -= 2.0 * np.log(np.diag(L)).sum()
        g = self.lin_g0 + self.lin_G @ y
        if np.any(g <= 0):
            return np.inf
        return val - np.log(g).sum()

    def derivatives(self, y):
        nvar = len(y)
        grad = np.zeros(nvar)
        hess = np.zeros((nvar, nvar))
        for G0, Gs in self.mats:
            S = G0 + np.tensordot(y, Gs, axes=1)
            L = np.linalg.cholesky(S)
            Li = np.linalg.inv(L)
            K = Li @ Gs @ Li.T                      # (nvar, m, m)
            grad -= np.trace(K, axis1=1, axis2=2)
            Kf = K.reshape(nvar, -1)
            hess += Kf @ Kf.T
        g = self.lin_g0 + self.lin_G @ y
        w = 1.0 / g
        grad -= self.lin_G.T @ w
        hess += (self.lin_G * (w ** 2)[:, None]).T @ self.lin_G
        return grad, hess


def solve(problem: LmiFeasibilityProblem, margin_tol: float = MARGIN_TOL,
          eps_p: float = EPS_P, radius: float = 1.0, max_newton: int = 2000,
          early_exit: bool = True) -> FeasibilityResult:
    """Maximize the slack t; feasible iff t > margin_tol.

    With ``early_exit`` the barrier stops as soon as the verdict is decided
    (t above the threshold, or the duality bound below it).
    """
    m, n_p, n_l = problem.size, problem.n_p, problem.n_lambda
    k_p = n_p * (n_p + 1) // 2
    N = k_p + n_l
    nvar = N + 1
    iu = np.triu_indices(n_p)
    diag_idx = np.flatnonzero(iu[0] == iu[1])

    # -F(x) - t I > 0
    G1s = np.concatenate([-problem.Fs, -np.eye(m)[None]], axis=0)
    blocks = [(-problem.F0, G1s)]
    # P - eps I > 0
    if n_p:
        G2s = np.zeros((nvar, n_p, n_p))
        G2s[:k_p] = svec_basis(n_p)
        blocks.append((-eps_p * np.eye(n_p), G2s))
    # lam > 0 and radius - trace(P) - sum(lam) > 0
    lin_G = np.zeros((n_l + 1, nvar))
    lin_G[np.arange(n_l), k_p + np.arange(n_l)] = 1.0
    lin_G[n_l, diag_idx] = -1.0
    lin_G[n_l, k_p:N] = -1.0
    lin_g0 = np.zeros(n_l + 1)
    lin_g0[n_l] = radius
    barrier = _Barrier(blocks, lin_G, lin_g0)

    # strictly feasible start
    x0 = np.zeros(N)
    share = radius / (2.0 * (n_p + n_l)) if (n_p + n_l) else 0.0
    x0[diag_idx] = max(share, 10 * eps_p)
    x0[k_p:] = share
    t0 = -max_eigenvalue(problem.evaluate(x0)) - 1.0
    y = np.append(x0, t0)

    c = np.zeros(nvar)
    c[-1] = -1.0   # minimize -t
    s = 1.0
    steps = 0
    status = None
    upper = np.inf
    while steps < max_newton:
        # centering
        stalled = False
        for _ in range(200):
            f0 = s * (c @ y) + barrier.value(y)
            grad, hess = barrier.derivatives(y)
            grad = grad + s * c
            try:
                dy = -np.linalg.solve(hess, grad)
            except np.linalg.LinAlgError:
                dy = -np.linalg.lstsq(hess, grad, rcond=None)[0]
            dec2 = -grad @ dy
            steps += 1
            if dec2 < 1e-10:
                break
            alpha = 1.0
            while alpha > 1e-14:
                y_new = y + alpha * dy
                f1 = s * (c @ y_new) + barrier.value(y_new)
                if f1 <= f0 + 0.25 * alpha * (grad @ dy):
                    break
                alpha *= 0.5
            else:
                stalled = True
                break
            y = y_new
            if steps >= max_newton:
                break
        t = y[-1]
        upper = t + barrier.nu / s
        if early_exit and t > margin_tol:
            status = "feasible"
            break
        if upper < margin_tol:
            status = "infeasible"
            break
        if barrier.nu / s < 1e-13 * max(1.0, abs(t)):
            status = "feasible" if t > margin_tol else "infeasible"
            break
        if stalled:
            status = "feasible" if t > margin_tol else "failed"
            break
        s *= 20.0
    if status is None:
        status = "feasible" if y[-1] > margin_tol else "failed"

    P, lam = problem.split(y[:N])
    result = FeasibilityResult(status, float(y[-1]), P, lam, float(upper), steps)
    if result.feasible and not _recheck(problem, y[:N], margin_tol, eps_p):
        log.warning("barrier witness failed the eigenvalue re-check; reporting failure")
        result.status = "failed"
    if status == "failed":
        log.warning("LMI solver stalled after %d Newton steps (t=%.3e)", steps, y[-1])
    return result


def _recheck(problem: LmiFeasibilityProblem, x, margin_tol: float, eps_p: float) -> bool:
    P, lam = problem.split(x)
    F = problem.evaluate(x)
    return (max_eigenvalue(F) <= -margin_tol
            and (P.size == 0 or -max_eigenvalue(-P) >= eps_p)
            and np.all(lam >= 0))
