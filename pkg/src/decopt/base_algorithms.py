"""Base (non-decentralized) algorithms in canonical linear-plus-nonlinearity form.

A node-level algorithm is described by per-node scalar matrices; its
multi-node realization replicates them with ``kron(M, I_n)`` so that every
signal is stored field-major (all nodes of field 1, then field 2, ...).

``ClosedLoop`` is the common executable form: a linear part whose input spans
are the nonlinearity outputs u and whose output spans include the signals
the nonlinearities read.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .consensus import averaging_matrix
from .linear_systems import IllPosedError, StateSpace, make_state_space


@dataclass(frozen=True)
class Channel:
    """u-span ``u`` is produced from output span ``v``.

    ``kind`` is ``"grad"`` (u_i = grad f_i(v_i)) or ``"identity"`` (u = v).
    """

    u: str
    v: str
    kind: str = "grad"

    def __post_init__(self):
        if self.kind not in ("grad", "identity"):
            raise ValueError(f"unknown channel kind {self.kind!r}")


@dataclass(frozen=True, eq=False)
class ClosedLoop:
    """Linear part in feedback with per-node nonlinearities.

    ``order`` and ``prox_gamma`` are derived: channels are evaluated in
    dependency order, and a channel whose v-span depends on its own u-span
    through ``D = -gamma I`` is closed by a proximal solve.
    """

    linear: StateSpace
    channels: tuple[Channel, ...]
    n: int
    primal: str          # output span holding the node iterates used for metrics
    primal_state: str    # state span initialized from x0
    name: str = ""
    meta: dict = field(default_factory=dict)
    order: tuple[int, ...] = field(init=False, default=())
    prox_gamma: tuple[float, ...] = field(init=False, default=())

    def __post_init__(self):
        ss = self.linear
        u_sl = [ss.input_slice(c.u) for c in self.channels]
        v_sl = [ss.output_slice(c.v) for c in self.channels]
        covered = sorted((s.start, s.stop) for s in u_sl)
        if covered and (covered[0][0] != 0 or covered[-1][1] != ss.n_inputs
                        or any(a[1] != b[0] for a, b in zip(covered, covered[1:]))):
            raise ValueError("channel u-spans must partition the linear input")
        for c, s in zip(self.channels, v_sl):
            if c.kind == "grad" and s.stop - s.start != self.n:
                raise ValueError(f"gradient channel {c.u} must read exactly n={self.n} rows")
        k = len(self.channels)
        deps = [set() for _ in range(k)]
        gamma = [0.0] * k
        for a in range(k):
            for b in range(k):
                blk = ss.D[v_sl[a], u_sl[b]]
                if not np.any(blk):
                    continue
                if a != b:
                    deps[a].add(b)
                    continue
                g = -blk[0, 0]
                if (self.channels[a].kind != "grad" or g <= 0
                        or not np.allclose(blk, -g * np.eye(blk.shape[0]), atol=1e-14)):
                    raise IllPosedError(
                        f"channel {self.channels[a].u} feeds back on itself through a "
                        "feedthrough that is not -gamma*I with gamma > 0")
                gamma[a] = float(g)
        order, done = [], set()
        while len(order) < k:
            ready = [a for a in range(k) if a not in done and deps[a] <= done]
            if not ready:
                raise IllPosedError("nonlinear channels form an algebraic cycle")
            order.extend(ready)
            done.update(ready)
        object.__setattr__(self, "order", tuple(order))
        object.__setattr__(self, "prox_gamma", tuple(gamma))

    def initial_state(self, x0, d: int | None = None) -> np.ndarray:
        """Zero state except ``primal_state``, which is set from x0.

        x0 may have n rows, or a single row that is then replicated as needed.
        """
        ss = self.linear
        sl = ss.state_slice(self.primal_state)
        rows = sl.stop - sl.start
        x0 = np.asarray(x0, dtype=float)
        if x0.ndim == 1:
            x0 = x0[None, :] if d is None or x0.shape[0] == d else x0[:, None]
        d = x0.shape[1]
        if x0.shape[0] != rows:
            if x0.shape[0] == 1:
                x0 = np.repeat(x0, rows, axis=0)
            elif rows == 1 and np.allclose(x0, x0[0]):
                x0 = x0[:1]
            else:
                raise ValueError(f"x0 has {x0.shape[0]} rows, state {self.primal_state!r} has {rows}")
        state = np.zeros((ss.n_states, d))
        state[sl] = x0
        return state


@dataclass(frozen=True, eq=False)
class CentralizedAlgorithm:
    """xi0+ = A0 xi0 + B0 ave(u),  v0 = C0 xi0 + D0 ave(u),  u_i = phi_i(v0)."""

    sys0: StateSpace
    channels: tuple[Channel, ...]
    primal_output: str
    primal_state: str
    name: str
    params: dict

    steady: Callable

    def fixed_point(self, fam):
        """(xi0*, u*) with xi0* of sys0's state size and u* node-stacked."""
        return self.steady(fam)

    def exact(self, n: int) -> ClosedLoop:
        """Single copy of sys0 with ave(u) evaluated exactly; every phi_i reads v0."""
        s = self.sys0
        ones = np.ones((n, 1))
        avg = np.full((1, n), 1.0 / n)
        lin = make_state_space(
            s.A, np.kron(s.B, avg), np.kron(s.C, ones), np.kron(s.D, ones @ avg),
            inputs=[(nm, sz * n) for nm, sz in s.inputs],
            outputs=[(nm, sz * n) for nm, sz in s.outputs],
            states=s.states,
        )
        return ClosedLoop(lin, self.channels, n, self.primal_output, self.primal_state,
                          name=f"centralized {self.name}")


@dataclass(frozen=True, eq=False)
class DistributedAlgorithm:
    """Per-node system with a local input u_i and an averaged input ave(u).

    ``sys`` has inputs ``u_fields`` followed by ``ave_<field>`` spans.
    """

    sys: StateSpace
    u_fields: tuple[str, ...]
    channels: tuple[Channel, ...]
    primal_output: str
    primal_state: str
    name: str
    params: dict

    steady: Callable

    def fixed_point(self, fam):
        """(xi*, u*) field-major over all nodes."""
        return self.steady(fam)

    def blocks(self):
        """(A, B_loc, B_ave, C, D_loc, D_ave) at the per-node level."""
        k = sum(self.sys.input_slice(f).stop - self.sys.input_slice(f).start for f in self.u_fields)
        s = self.sys
        return s.A, s.B[:, :k], s.B[:, k:], s.C, s.D[:, :k], s.D[:, k:]

    def exact(self, n: int) -> ClosedLoop:
        """All nodes with ave(u) evaluated exactly (field-wise J)."""
        A, Bl, Ba, C, Dl, Da = self.blocks()
        I, J = np.eye(n), averaging_matrix(n)
        s = self.sys
        lin = make_state_space(
            np.kron(A, I), np.kron(Bl, I) + np.kron(Ba, J),
            np.kron(C, I), np.kron(Dl, I) + np.kron(Da, J),
            inputs=[(f, (s.input_slice(f).stop - s.input_slice(f).start) * n) for f in self.u_fields],
            outputs=[(nm, sz * n) for nm, sz in s.outputs],
            states=[(nm, sz * n) for nm, sz in s.states],
        )
        return ClosedLoop(lin, self.channels, n, self.primal_output, self.primal_state,
                          name=f"exact-average {self.name}")


def build_gradient_descent(eta: float) -> CentralizedAlgorithm:
    """x0+ = x0 - eta ave(grad f_i(x0))."""
    if not eta > 0:
        raise ValueError(f"step size must be positive, got {eta}")
    sys0 = make_state_space(1.0, -eta, 1.0, 0.0, inputs=[("u", 1)], outputs=[("v", 1)],
                            states=[("xi", 1)])

    def steady(fam):
        x = fam.central_optimum()[None, :]
        return x, fam.grad(np.repeat(x, fam.n, axis=0))

    return CentralizedAlgorithm(sys0, (Channel("u", "v", "grad"),), "v", "xi",
                                "gradient descent", {"eta": eta}, steady)


def build_admm(rho: float) -> DistributedAlgorithm:
    """Consensus ADMM with xi_i = (x_i, y_i), v_i = (x_i^k, x_i^{k+1}).

    u_i = (v_i^1, grad f_i(v_i^2)); the second channel is an algebraic loop
    through D_loc = -1/rho, closed by a proximal step.
    """
    if not rho > 0:
        raise ValueError(f"penalty must be positive, got {rho}")
    r = 1.0 / rho
    A = [[0, -r], [0, 0]]
    B_loc = [[0, -r], [0, -1]]
    B_ave = np.eye(2)
    C = [[1, 0], [0, -r]]
    D_loc = [[0, 0], [0, -r]]
    D_ave = [[0, 0], [1, 0]]
    sys = make_state_space(
        A, np.hstack([B_loc, B_ave]), C, np.hstack([D_loc, D_ave]),
        inputs=[("u1", 1), ("u2", 1), ("ave_u1", 1), ("ave_u2", 1)],
        outputs=[("v1", 1), ("v2", 1)],
        states=[("x", 1), ("y", 1)],
    )
    channels = (Channel("u1", "v1", "identity"), Channel("u2", "v2", "grad"))

    def steady(fam):
        # x_i = x*, w_i = grad f_i(x*), y_i = ave(w*) - w_i
        x = np.repeat(fam.central_optimum()[None, :], fam.n, axis=0)
        w = fam.grad(x)
        return np.vstack([x, w.mean(0) - w]), np.vstack([x, w])

    return DistributedAlgorithm(sys, ("u1", "u2"), channels, "v2", "x", "ADMM",
                                {"rho": rho}, steady)


def normalize_rho(rho0: float, mu: float, beta: float) -> float:
    """rho = rho0 sqrt(mu beta), which makes the rate depend on kappa only."""
    if not rho0 > 0:
        raise ValueError(f"rho0 must be positive, got {rho0}")
    if not 0 < mu <= beta:
        raise ValueError(f"need 0 < mu <= beta, got mu={mu}, beta={beta}")
    return rho0 * float(np.sqrt(mu * beta))


def default_eta(mu: float, beta: float) -> float:
    return 2.0 / (mu + beta)
