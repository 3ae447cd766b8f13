"""Discrete-time linear state-space systems and exact interconnection algebra.

Signals are stored node-stacked: a signal with ``r`` rows and ``d`` columns is
an ``(r, d)`` array, and the system matrices act on the rows.  Simulating a
system on a ``d``-column signal is therefore the same as ``d`` independent
scalar-coordinate simulations.

Every system carries named spans for its inputs, outputs and states so that
large block systems can be wired by name instead of by raw index.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

Span = tuple[str, int]

#: Reject loops whose (I - D_loop) has sigma_min below this fraction of sigma_max.
WELL_POSED_RTOL = 1e-10


class DimensionError(ValueError):
    """Raised when matrix or signal dimensions are inconsistent."""


class WiringError(ValueError):
    """Raised for dangling, duplicated or unknown connections."""


class IllPosedError(ValueError):
    """Raised when an algebraic loop cannot be closed uniquely."""


def _as_matrix(x, name: str) -> np.ndarray:
    m = np.array(x, dtype=float)
    if m.ndim == 0:
        m = m.reshape(1, 1)
    if m.ndim != 2:
        raise DimensionError(f"{name} must be a matrix, got ndim={m.ndim}")
    if not np.all(np.isfinite(m)):
        raise DimensionError(f"{name} has non-finite entries")
    return m


def _check_spans(spans, total: int, what: str) -> tuple[Span, ...]:
    spans = tuple((str(n), int(s)) for n, s in spans)
    names = [n for n, _ in spans]
    if len(set(names)) != len(names):
        raise WiringError(f"duplicate {what} span names: {names}")
    if any(s < 0 for _, s in spans):
        raise DimensionError(f"negative {what} span size")
    if sum(s for _, s in spans) != total:
        raise DimensionError(
            f"{what} spans {spans} cover {sum(s for _, s in spans)} rows, expected {total}"
        )
    return spans


def _offsets(spans: Sequence[Span]) -> dict[str, slice]:
    out, start = {}, 0
    for name, size in spans:
        out[name] = slice(start, start + size)
        start += size
    return out


@dataclass(frozen=True, eq=False)
class StateSpace:
    """x+ = A x + B u,  y = C x + D u."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    inputs: tuple[Span, ...] = field(default=())
    outputs: tuple[Span, ...] = field(default=())
    states: tuple[Span, ...] = field(default=())

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.B.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.C.shape[0]

    def input_slice(self, name: str) -> slice:
        return _lookup(_offsets(self.inputs), name, "input")

    def output_slice(self, name: str) -> slice:
        return _lookup(_offsets(self.outputs), name, "output")

    def state_slice(self, name: str) -> slice:
        return _lookup(_offsets(self.states), name, "state")

    def input_names(self) -> list[str]:
        return [n for n, _ in self.inputs]

    def output_names(self) -> list[str]:
        return [n for n, _ in self.outputs]

    def state_names(self) -> list[str]:
        return [n for n, _ in self.states]

    def renamed(self, inputs=None, outputs=None, states=None) -> "StateSpace":
        return make_state_space(
            self.A, self.B, self.C, self.D,
            inputs=self.inputs if inputs is None else inputs,
            outputs=self.outputs if outputs is None else outputs,
            states=self.states if states is None else states,
        )

    def __repr__(self) -> str:
        return (f"StateSpace(n_states={self.n_states}, inputs={list(self.inputs)}, "
                f"outputs={list(self.outputs)})")


def _lookup(table: Mapping[str, slice], name: str, what: str) -> slice:
    try:
        return table[name]
    except KeyError:
        raise WiringError(f"unknown {what} span {name!r}; have {list(table)}") from None


def make_state_space(A, B, C, D, *, inputs=None, outputs=None, states=None) -> StateSpace:
    """Validate and build a :class:`StateSpace`.

    Scalars are promoted to 1x1 matrices. Span lists default to a single span
    named ``u`` / ``y`` / ``x``.
    """
    A = _as_matrix(A, "A")
    B = _as_matrix(B, "B")
    C = _as_matrix(C, "C")
    D = _as_matrix(D, "D")
    nx = A.shape[0]
    if A.shape != (nx, nx):
        raise DimensionError(f"A must be square, got {A.shape}")
    # empty blocks may come in as (0, 0); reshape them to the implied size
    nu, ny = B.shape[1] if B.size else D.shape[1], C.shape[0] if C.size else D.shape[0]
    if B.size == 0:
        B = np.zeros((nx, nu))
    if C.size == 0:
        C = np.zeros((ny, nx))
    if B.shape[0] != nx:
        raise DimensionError(f"B has {B.shape[0]} rows but A is {nx}x{nx}")
    if C.shape[1] != nx:
        raise DimensionError(f"C has {C.shape[1]} columns but A is {nx}x{nx}")
    if D.shape != (C.shape[0], B.shape[1]):
        raise DimensionError(f"D must be {C.shape[0]}x{B.shape[1]}, got {D.shape}")
    inputs = _check_spans(inputs if inputs is not None else [("u", B.shape[1])], B.shape[1], "input")
    outputs = _check_spans(outputs if outputs is not None else [("y", C.shape[0])], C.shape[0], "output")
    states = _check_spans(states if states is not None else ([("x", nx)] if nx else []), nx, "state")
    for m in (A, B, C, D):
        m.setflags(write=False)
    return StateSpace(A, B, C, D, inputs, outputs, states)


def static_gain(D, *, inputs=None, outputs=None) -> StateSpace:
    """Memoryless system y = D u."""
    D = _as_matrix(D, "D")
    return make_state_space(np.zeros((0, 0)), np.zeros((0, D.shape[1])),
                            np.zeros((D.shape[0], 0)), D, inputs=inputs, outputs=outputs)


def _as_signal(x, rows: int, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] != rows:
        raise DimensionError(f"{what} must have {rows} rows, got shape {x.shape}")
    return x


def step(ss: StateSpace, state, input):
    """One update; returns ``(next_state, output)`` as ``(rows, d)`` arrays."""
    x = _as_signal(state, ss.n_states, "state")
    u = _as_signal(input, ss.n_inputs, "input")
    if x.shape[1] != u.shape[1] and ss.n_states and ss.n_inputs:
        raise DimensionError(f"state has {x.shape[1]} columns, input has {u.shape[1]}")
    d = u.shape[1] if ss.n_inputs else x.shape[1]
    if ss.n_states == 0:
        x = np.zeros((0, d))
    if ss.n_inputs == 0:
        u = np.zeros((0, d))
    return ss.A @ x + ss.B @ u, ss.C @ x + ss.D @ u


def simulate(ss: StateSpace, inputs, state0=None):
    """Drive ``ss`` with a sequence of inputs.

    Returns ``(states, outputs)`` with ``states[k]`` the state before step k
    (length K+1) and ``outputs[k]`` the output at step k (length K).
    """
    inputs = [np.asarray(u, dtype=float) for u in inputs]
    if not inputs:
        raise DimensionError("empty input sequence")
    d = _as_signal(inputs[0], ss.n_inputs, "input").shape[1]
    x = np.zeros((ss.n_states, d)) if state0 is None else _as_signal(state0, ss.n_states, "state")
    states, outputs = [x], []
    for u in inputs:
        x, y = step(ss, x, u)
        states.append(x)
        outputs.append(y)
    return np.array(states), np.array(outputs)


def steady_state_residual(ss: StateSpace, state, input) -> float:
    x = _as_signal(state, ss.n_states, "state")
    x_next, _ = step(ss, x, input)
    return float(np.linalg.norm(x_next - x))


def is_steady_state(ss: StateSpace, state, input, tol: float = 1e-10) -> bool:
    return steady_state_residual(ss, state, input) <= tol


def lift_dimension(ss: StateSpace, d: int) -> StateSpace:
    """Replace every block M by kron(M, I_d); spans scale by d."""
    if int(d) != d or d < 1:
        raise ValueError(f"d must be a positive integer, got {d}")
    d = int(d)
    if d == 1:
        return ss
    I = np.eye(d)

    def scale(spans):
        return [(n, s * d) for n, s in spans]

    return make_state_space(
        np.kron(ss.A, I), np.kron(ss.B, I), np.kron(ss.C, I), np.kron(ss.D, I),
        inputs=scale(ss.inputs), outputs=scale(ss.outputs), states=scale(ss.states),
    )


def _block_diag(mats: Sequence[np.ndarray]) -> np.ndarray:
    rows = sum(m.shape[0] for m in mats)
    cols = sum(m.shape[1] for m in mats)
    out = np.zeros((rows, cols))
    r = c = 0
    for m in mats:
        out[r:r + m.shape[0], c:c + m.shape[1]] = m
        r += m.shape[0]
        c += m.shape[1]
    return out


def interconnect(
    blocks: Mapping[str, StateSpace],
    wiring: Mapping[str, str],
    inputs: Sequence[Span],
    outputs: Sequence[tuple[str, str]],
) -> StateSpace:
    """Wire named blocks into one system.

    ``wiring`` maps every block input ``"block.input_span"`` to a source that is
    either an external input name or ``"block.output_span"``.  ``outputs`` is a
    list of ``(name, source)`` pairs using the same source syntax.  Linear
    algebraic loops are closed exactly; the result's states are the block states
    in the order of ``blocks`` with spans named ``"block.span"``.
    """
    names = list(blocks)
    if any("." in n for n in names):
        raise WiringError("block names may not contain '.'")
    ext = _offsets(_check_spans(inputs, sum(s for _, s in inputs), "external input"))
    n_ext = sum(s for _, s in inputs)

    x_off, u_off, y_off = {}, {}, {}
    nx = nu = ny = 0
    for n in names:
        b = blocks[n]
        x_off[n], u_off[n], y_off[n] = nx, nu, ny
        nx += b.n_states
        nu += b.n_inputs
        ny += b.n_outputs

    def source_rows(src: str, size: int):
        """(is_external, row slice) for a source reference."""
        if src in ext:
            sl = ext[src]
            kind = True
        else:
            blk, _, span = src.partition(".")
            if blk not in blocks or not span:
                raise WiringError(f"unknown source {src!r}")
            local = blocks[blk].output_slice(span)
            sl = slice(y_off[blk] + local.start, y_off[blk] + local.stop)
            kind = False
        if sl.stop - sl.start != size:
            raise DimensionError(f"source {src!r} has {sl.stop - sl.start} rows, sink needs {size}")
        return kind, sl

    # U = Sy Y + Se e
    Sy = np.zeros((nu, ny))
    Se = np.zeros((nu, n_ext))
    seen = set()
    for sink, src in wiring.items():
        blk, _, span = sink.partition(".")
        if blk not in blocks or not span:
            raise WiringError(f"unknown sink {sink!r}")
        local = blocks[blk].input_slice(span)
        rows = slice(u_off[blk] + local.start, u_off[blk] + local.stop)
        is_ext, sl = source_rows(src, rows.stop - rows.start)
        target = Se if is_ext else Sy
        target[rows, sl] = np.eye(rows.stop - rows.start)
        seen.add(sink)
    missing = [f"{n}.{s}" for n in names for s, size in blocks[n].inputs
               if size > 0 and f"{n}.{s}" not in seen]
    if missing:
        raise WiringError(f"dangling block inputs: {missing}")

    Ad = _block_diag([blocks[n].A for n in names])
    Bd = _block_diag([blocks[n].B for n in names])
    Cd = _block_diag([blocks[n].C for n in names])
    Dd = _block_diag([blocks[n].D for n in names])

    loop = np.eye(nu) - Sy @ Dd
    if nu:
        sv = np.linalg.svd(loop, compute_uv=False)
        if sv[-1] <= WELL_POSED_RTOL * sv[0]:
            raise IllPosedError(
                f"algebraic loop is ill-posed: sigma_min(I - D_loop) = {sv[-1]:.3e}")
    # U = Ux x + Ue e
    Ux = np.linalg.solve(loop, Sy @ Cd) if nu else np.zeros((0, nx))
    Ue = np.linalg.solve(loop, Se) if nu else np.zeros((0, n_ext))

    A = Ad + Bd @ Ux
    B = Bd @ Ue
    Yx = Cd + Dd @ Ux
    Ye = Dd @ Ue

    out_spans, C_rows, D_rows = [], [], []
    for oname, src in outputs:
        if src in ext:
            sl = ext[src]
            size = sl.stop - sl.start
            C_rows.append(np.zeros((size, nx)))
            D_rows.append(np.eye(n_ext)[sl])
        else:
            blk, _, span = src.partition(".")
            if blk not in blocks or not span:
                raise WiringError(f"unknown output source {src!r}")
            local = blocks[blk].output_slice(span)
            sl = slice(y_off[blk] + local.start, y_off[blk] + local.stop)
            size = sl.stop - sl.start
            C_rows.append(Yx[sl])
            D_rows.append(Ye[sl])
        out_spans.append((oname, size))
    C = np.vstack(C_rows) if C_rows else np.zeros((0, nx))
    D = np.vstack(D_rows) if D_rows else np.zeros((0, n_ext))

    states = [(f"{n}.{s}", size) for n in names for s, size in blocks[n].states]
    return make_state_space(A, B, C, D, inputs=list(inputs), outputs=out_spans, states=states)
