"""IQC descriptions of the nonlinear and uncertain blocks, and rate certification.

An :class:`IqcSpec` owns a filter Psi that reads named signals of a known
linear system G and produces z; each quadratic form ``(z span, M)`` is
nonnegative on every admissible trajectory.  :func:`assemble` attaches all
filters to G and returns the LMI

    [A B]^T P [A B] - tau^2 [I 0]^T P [I 0] + sum_j lam_j [Cz_j Dz_j]^T M_j [Cz_j Dz_j]  <=  0

in the augmented state (G states, then filter states).  Everything is in
deviation coordinates, so fixed-point offsets never appear.

G signals are referenced as ``"y:name"`` (output span), ``"u:name"`` (input
span) or ``"x:name"`` (state span).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import sdp
from .consensus import GossipMatrix, averaging_matrix, make_gossip
from .linear_systems import (
    DimensionError,
    StateSpace,
    WiringError,
    interconnect,
    lift_dimension,
    make_state_space,
    static_gain,
)


@dataclass(frozen=True, eq=False)
class IqcSpec:
    """Filter plus quadratic forms on its output spans."""

    filter: StateSpace
    sources: dict[str, str]                       # filter input span -> G signal
    forms: tuple[tuple[str, np.ndarray], ...]     # (filter output span, M)
    name: str = ""

    def __post_init__(self):
        for span, _ in self.filter.inputs:
            if span not in self.sources:
                raise WiringError(f"IQC {self.name!r}: filter input {span!r} has no source")
        for span, M in self.forms:
            sl = self.filter.output_slice(span)
            M = np.asarray(M, dtype=float)
            if M.shape != (sl.stop - sl.start,) * 2:
                raise DimensionError(f"IQC {self.name!r}: M for {span!r} is {M.shape}, "
                                     f"z has {sl.stop - sl.start} rows")
            if not np.allclose(M, M.T, atol=1e-14):
                raise ValueError(f"IQC {self.name!r}: M for {span!r} is not symmetric")

    def wired(self, **sources: str) -> "IqcSpec":
        """Copy with some filter inputs re-pointed at other G signals."""
        return IqcSpec(self.filter, {**self.sources, **sources}, self.forms, self.name)

    def lifted(self, d: int) -> "IqcSpec":
        return IqcSpec(lift_dimension(self.filter, d), dict(self.sources),
                       tuple((s, np.kron(M, np.eye(d))) for s, M in self.forms), self.name)

    def values(self, signals: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        """z^T M z along a trajectory, filter started at rest.

        ``signals`` maps each source name to a (K, rows) or (K, rows, d) array.
        Returns one length-K array per form (summed over columns).
        """
        f = self.filter
        parts = []
        for span, _ in f.inputs:
            s = np.asarray(signals[self.sources[span]], dtype=float)
            parts.append(s if s.ndim == 3 else s[..., None])
        r = np.concatenate(parts, axis=1)
        K, _, d = r.shape
        psi = np.zeros((f.n_states, d))
        z = np.empty((K, f.n_outputs, d))
        for k in range(K):
            z[k] = f.C @ psi + f.D @ r[k]
            psi = f.A @ psi + f.B @ r[k]
        out = {}
        for span, M in self.forms:
            zs = z[:, f.output_slice(span)]
            out[span] = np.einsum("kid,ij,kjd->k", zs, np.asarray(M), zs)
        return out


def _static_selector(spans: Sequence[tuple[str, int]], out: str) -> StateSpace:
    size = sum(s for _, s in spans)
    return static_gain(np.eye(size), inputs=list(spans), outputs=[(out, size)])


def sector_matrix(mu: float, beta: float) -> np.ndarray:
    """2x2 form with (v, u)^T M (v, u) = 2 (u - mu v)(beta v - u)."""
    return np.array([[-2.0 * mu * beta, mu + beta], [mu + beta, -2.0]])


def sector_iqc(mu: float, beta: float, n: int = 1, v: str = "y:v", u: str = "u:u") -> IqcSpec:
    """Sector bound of a mu-strongly convex, beta-smooth gradient on z = (v, u)."""
    if not 0 < mu <= beta:
        raise ValueError(f"need 0 < mu <= beta, got mu={mu}, beta={beta}")
    return IqcSpec(_static_selector([("v", n), ("u", n)], "z"), {"v": v, "u": u},
                   (("z", np.kron(sector_matrix(mu, beta), np.eye(n))),), "sector")


def normalized_sector_iqc(rho0: float, kappa: float, n: int = 1, v: str = "y:v",
                          u: str = "u:w") -> IqcSpec:
    """Sector bound for w = grad f(v) / rho with rho = rho0 sqrt(mu beta).

    Equals the mu/beta sector form after rescaling u by 1/rho and dividing by
    rho^2, so it depends on kappa only.
    """
    if not rho0 > 0:
        raise ValueError(f"rho0 must be positive, got {rho0}")
    if not kappa >= 1:
        raise ValueError(f"kappa must be >= 1, got {kappa}")
    c = (np.sqrt(kappa) + 1.0 / np.sqrt(kappa)) / rho0
    M = np.array([[-2.0 / rho0 ** 2, c], [c, -2.0]])
    return IqcSpec(_static_selector([("v", n), ("u", n)], "z"), {"v": v, "u": u},
                   (("z", np.kron(M, np.eye(n))),), "normalized sector")


def zero_sum_iqc(state: str, n: int) -> IqcSpec:
    """-(1^T zeta)^2 >= 0, i.e. the tracker state sums to zero."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    filt = static_gain(np.ones((1, n)), inputs=[("zeta", n)], outputs=[("z", 1)])
    return IqcSpec(filt, {"zeta": f"x:{state}"}, (("z", -np.ones((1, 1))),), f"zero-sum {state}")


def gcon_uncertain_iqc(sigma2: float, n: int, v: str = "y:v", wbar: str = "y:wbar") -> IqcSpec:
    """Tracker with unknown W of given sigma2, seen through wbar = w - J v.

    Filter states hold v^{k-1} and wbar^{k-1};
    z1 = (wbar^k, Jp (wbar^{k-1} + v^k - v^{k-1})) with M1 = diag(-I, sigma2^2 I),
    z2 = wbar^k with M2 = -J.
    """
    if not 0 <= sigma2 < 1:
        raise ValueError(f"sigma2 must lie in [0, 1), got {sigma2}")
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    I, Z = np.eye(n), np.zeros((n, n))
    J = averaging_matrix(n)
    Jp = I - J
    A = np.zeros((2 * n, 2 * n))
    B = np.eye(2 * n)
    C = np.block([[Z, Z], [-Jp, Jp], [Z, Z]])
    D = np.block([[Z, I], [Jp, Z], [Z, I]])
    filt = make_state_space(A, B, C, D, inputs=[("v", n), ("wbar", n)],
                            outputs=[("z1", 2 * n), ("z2", n)],
                            states=[("v_prev", n), ("wbar_prev", n)])
    M1 = np.block([[-I, Z], [Z, sigma2 ** 2 * I]])
    return IqcSpec(filt, {"v": v, "wbar": wbar}, (("z1", M1), ("z2", -J)), "uncertain G_con")


@dataclass(frozen=True, eq=False)
class AnalysisProblem:
    """Augmented system and LMI data at a fixed rate tau."""

    G: StateSpace
    iqcs: tuple[IqcSpec, ...]
    tau: float
    system: StateSpace                              # G plus filters, outputs = z spans
    forms: tuple[tuple[str, np.ndarray], ...]       # (system output span, M)
    dims: dict = field(default_factory=dict)

    @property
    def n_lambda(self) -> int:
        return len(self.forms)

    def at(self, tau: float) -> "AnalysisProblem":
        _check_tau(tau)
        return AnalysisProblem(self.G, self.iqcs, float(tau), self.system, self.forms, self.dims)

    def form_rows(self):
        """[Cz Dz] and M per form."""
        s = self.system
        CD = np.hstack([s.C, s.D])
        return [(CD[s.output_slice(span)], M) for span, M in self.forms]

    def lmi(self) -> sdp.LmiFeasibilityProblem:
        s = self.system
        nx, nu = s.n_states, s.n_inputs
        AB = np.hstack([s.A, s.B])
        E = np.hstack([np.eye(nx), np.zeros((nx, nu))])
        basis = sdp.svec_basis(nx)
        Fp = (np.einsum("ai,kab,bj->kij", AB, basis, AB)
              - self.tau ** 2 * np.einsum("ai,kab,bj->kij", E, basis, E))
        Fl = [R.T @ M @ R for R, M in self.form_rows()]
        Fs = np.concatenate([Fp, np.array(Fl).reshape(-1, nx + nu, nx + nu)], axis=0)
        return sdp.LmiFeasibilityProblem(np.zeros((nx + nu, nx + nu)), Fs, nx, len(Fl))

    def lmi_matrix(self, P, lam) -> np.ndarray:
        """Closed LMI for given (P, lam), built block by block."""
        s = self.system
        A, B = s.A, s.B
        P = np.asarray(P, dtype=float)
        out = np.block([[A.T @ P @ A - self.tau ** 2 * P, A.T @ P @ B],
                        [B.T @ P @ A, B.T @ P @ B]])
        for lj, (R, M) in zip(np.asarray(lam, dtype=float), self.form_rows()):
            out = out + lj * (R.T @ M @ R)
        return out

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        s = self.system
        for arr in (s.A, s.B, s.C, s.D, *(M for _, M in self.forms)):
            h.update(np.ascontiguousarray(np.round(arr, 12)).tobytes())
            h.update(str(arr.shape).encode())
        return h.hexdigest()[:16]


def _check_tau(tau):
    if not 0 < tau <= 1:
        raise ValueError(f"tau must lie in (0, 1], got {tau}")


def augment(G: StateSpace, iqcs: Sequence[IqcSpec]) -> tuple[StateSpace, tuple]:
    """Attach every filter to G; returns the augmented system and its forms."""
    need_states = sorted({src[2:] for q in iqcs for src in q.sources.values()
                          if src.startswith("x:")})
    # expose requested state spans of G as extra outputs
    extra_C = [np.eye(G.n_states)[G.state_slice(s)] for s in need_states]
    taken = {name for name, _ in G.outputs}
    state_out = {s: f"__state_{s.replace('.', '_')}" for s in need_states}
    clash = taken & set(state_out.values())
    if clash:
        raise WiringError(f"output names clash with state taps: {sorted(clash)}")
    Gx = make_state_space(
        G.A, G.B,
        np.vstack([G.C, *extra_C]) if extra_C else G.C,
        np.vstack([G.D, *(np.zeros((c.shape[0], G.n_inputs)) for c in extra_C)]) if extra_C else G.D,
        inputs=G.inputs,
        outputs=list(G.outputs) + [(state_out[s], c.shape[0]) for s, c in zip(need_states, extra_C)],
        states=G.states,
    )
    blocks = {"G": Gx}
    wiring = {f"G.{name}": name for name, size in G.inputs if size}
    outputs = []
    forms = []
    for j, q in enumerate(iqcs):
        blk = f"iqc{j}"
        blocks[blk] = q.filter
        for span, src in q.sources.items():
            kind, _, name = src.partition(":")
            if kind == "y":
                target = f"G.{name}"
            elif kind == "u":
                target = name
            elif kind == "x":
                target = f"G.{state_out[name]}"
            else:
                raise WiringError(f"IQC {q.name!r}: bad source {src!r} (use y:, u: or x:)")
            wiring[f"{blk}.{span}"] = target
        for span, M in q.forms:
            outputs.append((f"{blk}.{span}", f"{blk}.{span}"))
            forms.append((f"{blk}.{span}", np.asarray(M, dtype=float)))
    try:
        system = interconnect(blocks, wiring, list(G.inputs), outputs)
    except KeyError as exc:
        raise WiringError(f"IQC reads a signal G does not have: {exc}") from None
    return system, tuple(forms)


def assemble(G: StateSpace, iqcs: Sequence[IqcSpec], tau: float) -> AnalysisProblem:
    _check_tau(tau)
    iqcs = tuple(iqcs)
    system, forms = augment(G, iqcs)
    dims = {"G_states": G.n_states, "states": system.n_states, "inputs": system.n_inputs,
            "lmi_size": system.n_states + system.n_inputs, "multipliers": len(forms)}
    return AnalysisProblem(G, iqcs, float(tau), system, forms, dims)


@dataclass(frozen=True, eq=False)
class ProblemBuilder:
    """tau -> AnalysisProblem for a fixed G and IQC set; assembles once."""

    G: StateSpace
    iqcs: tuple[IqcSpec, ...]
    label: str = ""
    params: dict = field(default_factory=dict)

    def __call__(self, tau: float) -> AnalysisProblem:
        cached = self.__dict__.get("_base")
        if cached is None:
            cached = assemble(self.G, self.iqcs, 1.0)
            object.__setattr__(self, "_base", cached)
        return cached.at(tau)

    def lifted(self, d: int) -> "ProblemBuilder":
        return ProblemBuilder(lift_dimension(self.G, d), tuple(q.lifted(d) for q in self.iqcs),
                              self.label, {**self.params, "d": d})


def known_w_g(W) -> StateSpace:
    """Decentralized ADMM (rho normalized to 1) with the trackers' states included.

    State (x, y, zeta_x, zeta_w), input w = grad f(v) / rho, output v.
    """
    W = W.W if isinstance(W, GossipMatrix) else make_gossip(W).W
    n = W.shape[0]
    I, Z = np.eye(n), np.zeros((n, n))
    W2 = W @ W
    A = np.block([[W, -I, I, Z], [Z, Z, Z, I], [W2 - W, Z, W, Z], [Z, Z, Z, W]])
    B = np.vstack([-I, W - I, Z, W2 - W])
    C = np.hstack([W, -I, I, Z])
    D = -I
    return make_state_space(A, B, C, D, inputs=[("w", n)], outputs=[("v", n)],
                            states=[("x", n), ("y", n), ("zeta_x", n), ("zeta_w", n)])


def known_w_admm(W, kappa: float, rho0: float = 1.0) -> ProblemBuilder:
    gm = W if isinstance(W, GossipMatrix) else make_gossip(W)
    n = gm.n
    G = known_w_g(gm)
    iqcs = (normalized_sector_iqc(rho0, kappa, n, v="y:v", u="u:w"),
            zero_sum_iqc("zeta_x", n), zero_sum_iqc("zeta_w", n))
    return ProblemBuilder(G, iqcs, "known-W ADMM", {"kappa": kappa, "rho0": rho0, "n": n})


def admm_core(n: int) -> StateSpace:
    """(v, x) = G_ADMM(w, xhat, what); state (x, y)."""
    I, Z = np.eye(n), np.zeros((n, n))
    A = np.block([[Z, -I], [Z, Z]])
    B = np.block([[-I, I, Z], [-I, Z, I]])
    C = np.block([[Z, -I], [I, Z]])
    D = np.block([[-I, I, Z], [Z, Z, Z]])
    return make_state_space(A, B, C, D, inputs=[("w", n), ("xhat", n), ("what", n)],
                            outputs=[("v", n), ("x", n)], states=[("x", n), ("y", n)])


def unknown_w_system(sigma2: float, n: int = 2) -> StateSpace:
    """G_ADMM, the gradient selector and two filter copies wired together.

    Input (w, xhat, what); outputs z_grad = (v, w) and the filter outputs
    z_x1, z_x2 (reading x and xhat - Jx) and z_w1, z_w2 (reading w and what - Jw).
    """
    J = averaging_matrix(n)
    I = np.eye(n)
    psi = gcon_uncertain_iqc(sigma2, n).filter
    dev = static_gain(np.hstack([-J, I]), inputs=[("sig", n), ("hat", n)], outputs=[("bar", n)])
    blocks = {
        "admm": admm_core(n),
        "devx": dev, "devw": dev,
        "grad": _static_selector([("v", n), ("u", n)], "z"),
        "psix": psi, "psiw": psi,
    }
    wiring = {
        "admm.w": "w", "admm.xhat": "xhat", "admm.what": "what",
        "devx.sig": "admm.x", "devx.hat": "xhat",
        "devw.sig": "w", "devw.hat": "what",
        "grad.v": "admm.v", "grad.u": "w",
        "psix.v": "admm.x", "psix.wbar": "devx.bar",
        "psiw.v": "w", "psiw.wbar": "devw.bar",
    }
    outputs = [("z_grad", "grad.z"), ("z_x1", "psix.z1"), ("z_x2", "psix.z2"),
               ("z_w1", "psiw.z1"), ("z_w2", "psiw.z2")]
    return interconnect(blocks, wiring, [("w", n), ("xhat", n), ("what", n)], outputs)


def unknown_w_admm(sigma2: float, n: int = 2, kappa: float = 10.0, rho0: float = 1.0) -> ProblemBuilder:
    """Worst case over all gossip matrices with the given sigma2 (n fixed and small)."""
    if not 0 <= sigma2 < 1:
        raise ValueError(f"sigma2 must lie in [0, 1), got {sigma2}")
    G = unknown_w_system(sigma2, n)
    sector = normalized_sector_iqc(rho0, kappa, n)
    unc = gcon_uncertain_iqc(sigma2, n)
    M1, M2 = (M for _, M in unc.forms)
    forms = [IqcSpec(static_gain(np.eye(2 * n), inputs=[("z", 2 * n)], outputs=[("z", 2 * n)]),
                     {"z": "y:z_grad"}, sector.forms, "normalized sector")]
    for tag in ("x", "w"):
        forms.append(IqcSpec(static_gain(np.eye(2 * n), inputs=[("z", 2 * n)], outputs=[("z", 2 * n)]),
                             {"z": f"y:z_{tag}1"}, (("z", M1),), f"sigma2 bound ({tag})"))
        forms.append(IqcSpec(static_gain(np.eye(n), inputs=[("z", n)], outputs=[("z", n)]),
                             {"z": f"y:z_{tag}2"}, (("z", M2),), f"zero mean ({tag})"))
    return ProblemBuilder(G, tuple(forms), "unknown-W ADMM",
                          {"sigma2": sigma2, "n": n, "kappa": kappa, "rho0": rho0})


@dataclass
class RateCertificate:
    tau: float
    P: np.ndarray
    lam: np.ndarray
    margin: float
    fingerprint: str
    certified: bool = True

    def to_json(self) -> str:
        return json.dumps({
            "tau": self.tau,
            "P": np.asarray(self.P).tolist(),
            "lambda": np.asarray(self.lam).tolist(),
            "margin": self.margin,
            "fingerprint": self.fingerprint,
        }, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "RateCertificate":
        doc = json.loads(text)
        return cls(float(doc["tau"]), np.array(doc["P"], dtype=float),
                   np.array(doc["lambda"], dtype=float), float(doc["margin"]), doc["fingerprint"])


@dataclass
class NoCertificate:
    """Returned when the LMI is infeasible even just below tau = 1."""

    reason: str
    slack: float
    fingerprint: str
    certified: bool = False
    tau: float | None = None


def bisect_rate(builder: Callable[[float], AnalysisProblem], tol: float = 1e-3,
                **solver_opts) -> RateCertificate | NoCertificate:
    """Smallest feasible tau on a bisection grid of resolution ``tol``."""
    if not tol > 0 or tol >= 1:
        raise ValueError(f"tol must lie in (0, 1), got {tol}")

    def attempt(tau):
        prob = builder(tau)
        res = sdp.solve(prob.lmi(), **solver_opts)
        return prob, res

    hi = 1.0 - tol
    prob, res = attempt(hi)
    if not res.feasible:
        return NoCertificate(f"LMI {res.status} at tau = {hi:g}", res.slack, prob.fingerprint())
    best = (prob, res)
    lo = 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        prob, res = attempt(mid)
        if res.feasible:
            hi, best = mid, (prob, res)
        else:
            lo = mid
    prob, res = best
    margin = sdp.max_eigenvalue(prob.lmi_matrix(res.P, res.lam))
    return RateCertificate(prob.tau, res.P, res.lam, margin, prob.fingerprint())


def verify_certificate(problem: AnalysisProblem, cert: RateCertificate,
                       margin_tol: float = sdp.MARGIN_TOL, eps_p: float = sdp.EPS_P) -> bool:
    """Recompute the LMI at the certificate's (tau, P, lam) and check the bounds."""
    if not getattr(cert, "certified", False):
        return False
    P = np.asarray(cert.P, dtype=float)
    lam = np.asarray(cert.lam, dtype=float)
    n = problem.system.n_states
    if P.shape != (n, n) or lam.shape != (problem.n_lambda,):
        return False
    if np.any(lam < 0) or not np.allclose(P, P.T, atol=1e-12):
        return False
    F = problem.at(cert.tau).lmi_matrix(P, lam)
    F = 0.5 * (F + F.T)
    return bool(np.linalg.eigvalsh(F).max() <= -margin_tol
                and np.linalg.eigvalsh(P).min() >= eps_p)
