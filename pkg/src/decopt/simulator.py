"""Run closed-loop algorithms on objective families and measure convergence."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .base_algorithms import CentralizedAlgorithm, ClosedLoop, DistributedAlgorithm
from .consensus import averaging_matrix
from .objectives import ObjectiveFamily

DIVERGENCE_LIMIT = 1e12


class DivergenceError(RuntimeError):
    def __init__(self, iteration: int, signal: str, result: "RunResult | None" = None):
        super().__init__(f"divergence at iteration {iteration} in signal {signal!r}")
        self.iteration = iteration
        self.signal = signal
        self.result = result


class RateFitError(ValueError):
    pass


def _as_loop(alg, n: int) -> ClosedLoop:
    if isinstance(alg, ClosedLoop):
        return alg
    if isinstance(alg, (CentralizedAlgorithm, DistributedAlgorithm)):
        return alg.exact(n)
    raise TypeError(f"cannot run {type(alg).__name__}")


def evaluate_nonlinearity(loop: ClosedLoop, fam: ObjectiveFamily, state: np.ndarray) -> np.ndarray:
    """Solve for u given the state, closing self-loops with proximal steps."""
    ss = loop.linear
    d = state.shape[1]
    u = np.zeros((ss.n_inputs, d))
    Cx = ss.C @ state
    for idx in loop.order:
        ch = loop.channels[idx]
        vs, us = ss.output_slice(ch.v), ss.input_slice(ch.u)
        gamma = loop.prox_gamma[idx]
        # own block contributes -gamma u; it is still zero in u here
        r = Cx[vs] + ss.D[vs] @ u
        if ch.kind == "identity":
            u[us] = r
        elif gamma > 0:
            u[us] = fam.grad(fam.prox_all(r, 1.0 / gamma))
        else:
            u[us] = fam.grad(r)
    return u


@dataclass
class RunResult:
    trajectories: dict[str, np.ndarray]
    gap: np.ndarray
    consensus_error: np.ndarray
    x_star: np.ndarray
    iterations: int
    tau_emp: float | None = None
    meta: dict = field(default_factory=dict)

    def primal(self) -> np.ndarray:
        return self.trajectories[self.meta["primal"]]

    def fit_rate(self, tail_fraction: float = 0.5, floor: float = 1e-11) -> float:
        """Empirical rate of the gap, using only iterations above ``floor``."""
        g = self.gap
        below = np.flatnonzero(g <= floor)
        if below.size:
            g = g[:below[0]]
        return empirical_rate(g, tail_fraction)

    def to_csv(self, header: str | None = None) -> str:
        buf = io.StringIO()
        if header is not None:
            buf.write(f"# {header}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "gap", "consensus_error"])
        for k, (g, c) in enumerate(zip(self.gap, self.consensus_error)):
            w.writerow([k, repr(float(g)), repr(float(c))])
        return buf.getvalue()


def run(alg, fam: ObjectiveFamily, x0=None, K: int = 1000, state0=None,
        x_star=None, check_divergence: bool = True) -> RunResult:
    """Simulate ``K`` iterations.

    Either ``state0`` (full linear state) or ``x0`` (node iterates, placed in
    the algorithm's primal state span) may be given; the default starts every
    node at its local minimizer a_i.  Trajectories are stored per output span,
    per input span (``u`` channels) and as ``"state"``; each has K entries.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    loop = _as_loop(alg, fam.n)
    ss = loop.linear
    if state0 is None:
        if x0 is None:
            sl = ss.state_slice(loop.primal_state)
            x0 = fam.a if sl.stop - sl.start == fam.n else fam.a.mean(0, keepdims=True)
        state = loop.initial_state(x0, d=fam.d)
    else:
        state = np.array(state0, dtype=float)
        if state.ndim == 1:
            state = state[:, None]
    if state.shape != (ss.n_states, fam.d):
        raise ValueError(f"state must have shape {(ss.n_states, fam.d)}, got {state.shape}")
    if x_star is None:
        x_star = fam.central_optimum()
    x_star = np.asarray(x_star, dtype=float)

    states = np.empty((K, ss.n_states, fam.d))
    inputs = np.empty((K, ss.n_inputs, fam.d))
    outputs = np.empty((K, ss.n_outputs, fam.d))
    primal = ss.output_slice(loop.primal)
    Jp = averaging_matrix(primal.stop - primal.start)
    gap = np.empty(K)
    cons = np.empty(K)
    for k in range(K):
        u = evaluate_nonlinearity(loop, fam, state)
        y = ss.C @ state + ss.D @ u
        states[k], inputs[k], outputs[k] = state, u, y
        p = y[primal]
        gap[k] = np.max(np.linalg.norm(p - x_star, axis=1))
        cons[k] = np.linalg.norm(p - Jp @ p)
        if check_divergence:
            for name, arr in (("state", state), ("u", u), ("output", y)):
                if not np.all(np.isfinite(arr)) or (arr.size and np.abs(arr).max() > DIVERGENCE_LIMIT):
                    partial = _result(loop, states[:k + 1], inputs[:k + 1], outputs[:k + 1],
                                      gap[:k + 1], cons[:k + 1], x_star)
                    raise DivergenceError(k, name, partial)
        state = ss.A @ state + ss.B @ u
    return _result(loop, states, inputs, outputs, gap, cons, x_star)


def _result(loop, states, inputs, outputs, gap, cons, x_star) -> RunResult:
    ss = loop.linear
    traj = {"state": states}
    for name, _ in ss.outputs:
        traj[name] = outputs[:, ss.output_slice(name)]
    for name, _ in ss.inputs:
        traj[name] = inputs[:, ss.input_slice(name)]
    res = RunResult(traj, gap, cons, x_star, len(gap),
                    meta={"primal": loop.primal, "name": loop.name})
    try:
        res.tau_emp = res.fit_rate()
    except RateFitError:
        res.tau_emp = None
    return res


def empirical_rate(errors, tail_fraction: float = 0.5, min_points: int = 50) -> float:
    """exp(slope) of a least-squares fit of log(error) over the tail.

    The tail is the last ``max(tail_fraction * N, min_points)`` entries (capped
    at N).  Returns 0.0 when an error is exactly zero (finite-step convergence)
    and clips the result at 1.
    """
    e = np.asarray(errors, dtype=float)
    if not 0 < tail_fraction <= 1:
        raise ValueError(f"tail_fraction must lie in (0, 1], got {tail_fraction}")
    if e.size and np.any(e <= 0):
        return 0.0
    m = min(e.size, max(int(np.ceil(tail_fraction * e.size)), min_points))
    if m < 10:
        raise RateFitError(f"need at least 10 tail points, have {m}")
    tail = e[-m:]
    k = np.arange(m, dtype=float)
    slope = np.polyfit(k, np.log(tail), 1)[0]
    return float(min(np.exp(slope), 1.0))
