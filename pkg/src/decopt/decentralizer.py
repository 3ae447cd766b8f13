"""Replace the averaging operator of a base algorithm by consensus tracking.

Centralized algorithms get n replicas of sys0 and two trackers
(u_hat = G_con u feeds the replicas, v_hat = G_con v feeds the gradients).
Distributed algorithms keep their per-node systems and only track u.

States of a composed system are ordered: base replicas, then the v-tracker,
then the u-tracker.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .base_algorithms import (
    CentralizedAlgorithm,
    Channel,
    ClosedLoop,
    DistributedAlgorithm,
    build_gradient_descent,
)
from .consensus import GossipMatrix, averaging_matrix, gcon_v1, make_gossip
from .linear_systems import (
    StateSpace,
    interconnect,
    lift_dimension,
    make_state_space,
    steady_state_residual,
)

# A composed system is a ClosedLoop whose meta records how it was built.
DecentralizedAlgorithm = ClosedLoop

TrackerBuilder = Callable[[np.ndarray], StateSpace]


def _gossip(W) -> GossipMatrix:
    return W if isinstance(W, GossipMatrix) else make_gossip(W)


def tracker_bank(gcon_builder: TrackerBuilder, W, fields: Sequence[tuple[str, int]]) -> StateSpace:
    """One tracker per field, block diagonal in field-major layout."""
    g = gcon_builder(_gossip(W).W)
    f = sum(s for _, s in fields)
    n = g.n_inputs
    I = np.eye(f)
    states = [(f"zeta_{name}", s * g.n_states) for name, s in fields if g.n_states]
    return make_state_space(
        np.kron(I, g.A), np.kron(I, g.B), np.kron(I, g.C), np.kron(I, g.D),
        inputs=[(name, s * n) for name, s in fields],
        outputs=[(name, s * n) for name, s in fields],
        states=states,
    )


def _name(builder) -> str:
    return getattr(builder, "__name__", str(builder))


def decentralize_centralized(alg: CentralizedAlgorithm, gcon_builder: TrackerBuilder, W,
                             track_v: bool = True) -> DecentralizedAlgorithm:
    """xi_i+ = A0 xi_i + B0 u_hat_i,  v_i = C0 xi_i + D0 u_hat_i,  u_i = phi_i(v_hat_i).

    With ``track_v=False`` the gradients read the raw v_i instead; that is the
    variant which loses consensus of its fixed points.
    """
    gm = _gossip(W)
    n = gm.n
    s0 = alg.sys0
    base = lift_dimension(s0, n)
    u_fields = list(s0.inputs)
    v_fields = list(s0.outputs)
    blocks = {"base": base}
    wiring = {}
    outputs = [(name, f"base.{name}") for name, _ in v_fields]
    if track_v:
        blocks["trk_v"] = tracker_bank(gcon_builder, gm, v_fields)
        for name, _ in v_fields:
            wiring[f"trk_v.{name}"] = f"base.{name}"
            outputs.append((f"{name}_hat", f"trk_v.{name}"))
    blocks["trk_u"] = tracker_bank(gcon_builder, gm, u_fields)
    for name, _ in u_fields:
        wiring[f"base.{name}"] = f"trk_u.{name}"
        wiring[f"trk_u.{name}"] = name
        outputs.append((f"{name}_hat", f"trk_u.{name}"))
    ext = [(name, s * n) for name, s in u_fields]
    lin = interconnect(blocks, wiring, ext, outputs)
    reads = (lambda v: f"{v}_hat") if track_v else (lambda v: v)
    channels = tuple(Channel(c.u, reads(c.v), c.kind) for c in alg.channels)
    return ClosedLoop(
        lin, channels, n, reads(alg.primal_output), f"base.{alg.primal_state}",
        name=f"decentralized {alg.name} ({_name(gcon_builder)})",
        meta={"base": alg, "tracker": gcon_builder, "W": gm,
              "trackers": (("trk_v", "v") if track_v else None, ("trk_u", "u"))},
    )


def decentralize_distributed(alg: DistributedAlgorithm, gcon_builder: TrackerBuilder,
                             W) -> DecentralizedAlgorithm:
    """Per-node systems with ave(u) replaced by u_hat = G_con u; no v-tracker."""
    gm = _gossip(W)
    n = gm.n
    base = lift_dimension(alg.sys, n)
    fields = [(f, alg.sys.input_slice(f).stop - alg.sys.input_slice(f).start) for f in alg.u_fields]
    blocks = {"base": base, "trk_u": tracker_bank(gcon_builder, gm, fields)}
    wiring = {}
    for f, _ in fields:
        wiring[f"base.{f}"] = f
        wiring[f"base.ave_{f}"] = f"trk_u.{f}"
        wiring[f"trk_u.{f}"] = f
    outputs = [(name, f"base.{name}") for name, _ in alg.sys.outputs]
    outputs += [(f"{f}_hat", f"trk_u.{f}") for f, _ in fields]
    lin = interconnect(blocks, wiring, [(f, s * n) for f, s in fields], outputs)
    return ClosedLoop(
        lin, alg.channels, n, alg.primal_output, f"base.{alg.primal_state}",
        name=f"decentralized {alg.name} ({_name(gcon_builder)})",
        meta={"base": alg, "tracker": gcon_builder, "W": gm,
              "trackers": (None, ("trk_u", "u"))},
    )


def build_broken_gd(eta: float, W) -> DecentralizedAlgorithm:
    """Gradient descent with only the u-tracker (gcon_v1); gradients read raw v."""
    return decentralize_centralized(build_gradient_descent(eta), gcon_v1, W, track_v=False)


def _tracker_state(dec: ClosedLoop, inputs: np.ndarray) -> np.ndarray:
    """Steady tracker state with outputs equal to the field-wise average of ``inputs``."""
    g = dec.meta["tracker"](dec.meta["W"].W)
    n = dec.n
    f = inputs.shape[0] // n
    bank = make_state_space(
        np.kron(np.eye(f), g.A), np.kron(np.eye(f), g.B),
        np.kron(np.eye(f), g.C), np.kron(np.eye(f), g.D))
    if bank.n_states == 0:
        return np.zeros((0, inputs.shape[1]))
    Jf = np.kron(np.eye(f), averaging_matrix(n))
    lhs = np.vstack([np.eye(bank.n_states) - bank.A, bank.C])
    rhs = np.vstack([bank.B @ inputs, Jf @ inputs - bank.D @ inputs])
    zeta, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
    return zeta


def replicated_fixed_point(dec: ClosedLoop, fam) -> tuple[np.ndarray, np.ndarray]:
    """State and input at which the composed system sits at the base fixed point.

    Base replicas hold the base steady state, tracker outputs equal the exact
    averages of their (steady) inputs.  Returns ``(state, u_star)``.
    """
    alg = dec.meta["base"]
    n = dec.n
    xi_star, u_star = alg.fixed_point(fam)
    lin = dec.linear
    parts = []
    if isinstance(alg, CentralizedAlgorithm):
        # per-field replication of the single-copy state
        rows = [np.repeat(xi_star[i:i + 1], n, axis=0) for i in range(xi_star.shape[0])]
        base_state = np.vstack(rows)
        Jf = np.kron(np.eye(u_star.shape[0] // n), averaging_matrix(n))
        s0 = alg.sys0
        base = lift_dimension(s0, n)
        v_star = base.C @ base_state + base.D @ (Jf @ u_star)
    else:
        base_state = xi_star
        v_star = None
    parts.append(base_state)
    for entry in dec.meta["trackers"]:
        if entry is None:
            continue
        _, source = entry
        parts.append(_tracker_state(dec, u_star if source == "u" else v_star))
    state = np.vstack(parts)
    if state.shape[0] != lin.n_states:
        raise ValueError("fixed point does not match the composed state layout")
    return state, u_star


def fixed_point_residual(dec: ClosedLoop, fam) -> float:
    state, u_star = replicated_fixed_point(dec, fam)
    return steady_state_residual(dec.linear, state, u_star)


def diging_residual(vhat, u, W, eta: float) -> float:
    """max_k || vhat^{k+2} - 2 W vhat^{k+1} + W^2 vhat^k + eta (u^{k+1} - u^k) ||."""
    vhat = np.asarray(vhat, dtype=float)
    u = np.asarray(u, dtype=float)
    if vhat.ndim == 2:
        vhat = vhat[..., None]
    if u.ndim == 2:
        u = u[..., None]
    if len(vhat) < 3 or len(u) < 2:
        raise ValueError("need trajectories of length >= 3")
    W = _gossip(W).W if not isinstance(W, np.ndarray) else W
    K = len(vhat) - 2
    r = (vhat[2:] - 2 * np.einsum("ij,kjd->kid", W, vhat[1:K + 1])
         + np.einsum("ij,kjd->kid", W @ W, vhat[:K]) + eta * (u[1:K + 1] - u[:K]))
    return float(np.max(np.linalg.norm(r.reshape(K, -1), axis=1))) if K else 0.0
