"""Gossip matrices and consensus-tracking systems.

Two trackers are provided, both driven by a node-stacked signal v and
producing w whose limit is J v* for any convergent v:

* :func:`gcon_v1`:  w^{k+1} = W w^k + (v^{k+1} - v^k),    w^0 = v^0
* :func:`gcon_v2`:  w^{k+1} = W (w^k + v^{k+1} - v^k),    w^0 = W v^0

Both are realized with state zeta^0 = 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .linear_systems import StateSpace, make_state_space, simulate, static_gain


class GraphError(ValueError):
    pass


def averaging_matrix(n: int) -> np.ndarray:
    """J = 1 1^T / n."""
    return np.full((n, n), 1.0 / n)


def sigma2(W) -> float:
    """sigma_max(J - W)."""
    W = np.asarray(W, dtype=float)
    return float(np.linalg.norm(averaging_matrix(W.shape[0]) - W, 2))


def _is_connected(adj: np.ndarray) -> bool:
    n = adj.shape[0]
    seen = {0}
    frontier = [0]
    while frontier:
        i = frontier.pop()
        for j in np.flatnonzero(adj[i]):
            if j not in seen:
                seen.add(int(j))
                frontier.append(int(j))
    return len(seen) == n


@dataclass(frozen=True, eq=False)
class GossipMatrix:
    W: np.ndarray
    sigma2: float

    @property
    def n(self) -> int:
        return self.W.shape[0]


def make_gossip(W, atol: float = 1e-12) -> GossipMatrix:
    """Validate a symmetric, irreducible, doubly stochastic W with sigma2 < 1."""
    W = np.array(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1] or W.shape[0] < 1:
        raise GraphError(f"W must be square, got shape {W.shape}")
    if not np.all(np.isfinite(W)):
        raise GraphError("W has non-finite entries")
    if not np.allclose(W, W.T, atol=atol):
        raise GraphError("W is not symmetric")
    if W.min() < -atol:
        raise GraphError("W has negative entries")
    if not np.allclose(W.sum(1), 1.0, atol=atol):
        raise GraphError("W is not doubly stochastic")
    support = (np.abs(W) > atol).astype(int)
    np.fill_diagonal(support, 0)
    if W.shape[0] > 1 and not _is_connected(support):
        raise GraphError("support graph of W is disconnected (W is reducible)")
    s2 = sigma2(W)
    if s2 >= 1.0 - 1e-12:
        raise GraphError(f"sigma2 = {s2:.6g} >= 1; consensus tracking would fail")
    W.setflags(write=False)
    return GossipMatrix(W, s2)


def metropolis_gossip(adjacency) -> GossipMatrix:
    """Metropolis weights W_ij = 1 / (1 + max(deg_i, deg_j)) on edges."""
    adj = np.asarray(adjacency)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise GraphError("adjacency must be square")
    if not np.array_equal(adj, adj.T):
        raise GraphError("adjacency must be symmetric")
    if np.any(np.diag(adj) != 0):
        raise GraphError("adjacency must have a zero diagonal")
    adj = (adj != 0).astype(int)
    if not _is_connected(adj):
        raise GraphError("graph is disconnected")
    deg = adj.sum(1)
    n = adj.shape[0]
    W = np.zeros((n, n))
    rows, cols = np.nonzero(adj)
    W[rows, cols] = 1.0 / (1.0 + np.maximum(deg[rows], deg[cols]))
    W[np.diag_indices(n)] = 1.0 - W.sum(1)
    return make_gossip(W)


def two_node_gossip(s2: float) -> GossipMatrix:
    """The unique 2x2 gossip matrix with sigma2 = s2 (nonnegative second eigenvalue)."""
    if not 0 <= s2 < 1:
        raise GraphError(f"sigma2 must lie in [0, 1), got {s2}")
    p = (1.0 - s2) / 2.0
    return make_gossip([[1 - p, p], [p, 1 - p]])


def builtin_graph(kind: str, n: int) -> np.ndarray:
    """Adjacency of a ring, path or complete graph on n nodes."""
    if n < 2:
        raise GraphError(f"need n >= 2, got {n}")
    adj = np.zeros((n, n), dtype=int)
    if kind == "complete":
        adj[:] = 1
        np.fill_diagonal(adj, 0)
    elif kind in ("path", "ring"):
        for i in range(n - 1):
            adj[i, i + 1] = adj[i + 1, i] = 1
        if kind == "ring" and n > 2:
            adj[0, -1] = adj[-1, 0] = 1
    else:
        raise GraphError(f"unknown builtin graph {kind!r}")
    return adj


def read_edge_list(path, n: int | None = None) -> np.ndarray:
    """Adjacency from a text file of whitespace-separated 0-indexed "i j" pairs."""
    edges = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise GraphError(f"{path}:{lineno}: expected 'i j', got {line!r}")
        i, j = (int(p) for p in parts)
        if i < 0 or j < 0:
            raise GraphError(f"{path}:{lineno}: negative node index")
        if i == j:
            raise GraphError(f"{path}:{lineno}: self-loop {i}")
        edges.append((i, j))
    size = max((max(e) for e in edges), default=-1) + 1
    if n is not None:
        if n < size:
            raise GraphError(f"edge list references node {size - 1} but n={n}")
        size = n
    adj = np.zeros((size, size), dtype=int)
    for i, j in edges:
        adj[i, j] = adj[j, i] = 1
    return adj


def _W(W) -> np.ndarray:
    return W.W if isinstance(W, GossipMatrix) else np.asarray(W, dtype=float)


def gcon_v1(W) -> StateSpace:
    """zeta+ = W zeta + (W - I) v,  w = zeta + v."""
    W = _W(W)
    n = W.shape[0]
    I = np.eye(n)
    return make_state_space(W, W - I, I, I, inputs=[("v", n)], outputs=[("w", n)],
                            states=[("zeta", n)])


def gcon_v2(W) -> StateSpace:
    """zeta+ = W zeta + (W^2 - W) v,  w = zeta + W v."""
    W = _W(W)
    n = W.shape[0]
    return make_state_space(W, W @ W - W, np.eye(n), W, inputs=[("v", n)],
                            outputs=[("w", n)], states=[("zeta", n)])


def exact_average(W) -> StateSpace:
    """Static w = J v; the ideal tracker that G_con approximates."""
    n = _W(W).shape[0] if not isinstance(W, int) else W
    return static_gain(averaging_matrix(n), inputs=[("v", n)], outputs=[("w", n)])


TRACKERS = {"v1": gcon_v1, "v2": gcon_v2, "exact": exact_average}


def tracker_steady_state(gcon: StateSpace, v_star) -> np.ndarray:
    """State zeta* at which the tracker holds output J v* under constant input v*."""
    v_star = np.asarray(v_star, dtype=float)
    if v_star.ndim == 1:
        v_star = v_star[:, None]
    if gcon.n_states == 0:
        return np.zeros((0, v_star.shape[1]))
    target = averaging_matrix(gcon.n_inputs) @ v_star - gcon.D @ v_star
    zeta, *_ = np.linalg.lstsq(gcon.C, target, rcond=None)
    return zeta


def track(gcon: StateSpace, v) -> np.ndarray:
    """Output trajectory of a tracker driven by ``v`` (shape (K, n, d)) from zeta^0 = 0."""
    v = np.asarray(v, dtype=float)
    if v.ndim == 2:
        v = v[..., None]
    if v.ndim != 3 or v.shape[0] == 0:
        raise ValueError(f"v must be a non-empty (K, n, d) array, got {v.shape}")
    if v.shape[1] != gcon.n_inputs:
        raise ValueError(f"v has {v.shape[1]} rows, tracker expects {gcon.n_inputs}")
    _, w = simulate(gcon, v)
    return w
