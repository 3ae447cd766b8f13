"""Command line front end: simulate, certify, sweep.

CSV files start with one ``#`` line echoing the configuration as JSON.

* simulate: ``k,gap,consensus_error`` per iteration
* certify:  appends ``parameter,value,tau`` to ``--csv``; certificate JSON
  goes to ``--json`` (or stdout)
* sweep:    ``parameter,value,tau,tau_emp[,wall_time]``; ``tau`` is empty when
  no certificate exists, ``tau_emp`` is empty unless ``--simulate`` is given

Exit codes: 0 success, 1 configuration error, 2 divergence, 3 no certificate.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import iqc
from .base_algorithms import build_admm, build_gradient_descent, default_eta, normalize_rho
from .consensus import (
    TRACKERS,
    GraphError,
    builtin_graph,
    make_gossip,
    metropolis_gossip,
    read_edge_list,
)
from .decentralizer import build_broken_gd, decentralize_centralized, decentralize_distributed
from .objectives import random_family
from .simulator import DivergenceError, run

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_NO_CERT = 0, 1, 2, 3
CONSENSUS_FLAG = 1e-6

log = logging.getLogger("decopt")


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list[float]:
    try:
        vals = [float(t) for t in text.replace(";", ",").split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("grid is empty")
    return vals


def _matrix(text: str) -> np.ndarray:
    """Rows separated by ';', entries by ',' or whitespace."""
    try:
        rows = [[float(x) for x in r.replace(",", " ").split()] for r in text.split(";")]
        return np.array(rows, dtype=float)
    except ValueError:
        raise argparse.ArgumentTypeError(f"cannot parse matrix {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="decopt", description=__doc__,
                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def graph_args(sp):
        sp.add_argument("--graph", help="ring, path, complete, or a path to an 'i j' edge list")
        sp.add_argument("--n", type=int, help="number of nodes")
        sp.add_argument("--weights", type=_matrix,
                        help="explicit gossip matrix, e.g. '0.6,0.4;0.4,0.6'")

    sim = sub.add_parser("simulate", help="run a decentralized algorithm")
    graph_args(sim)
    sim.add_argument("--alg", choices=["gd", "admm", "broken-gd"], default="admm")
    sim.add_argument("--tracker", choices=["v1", "v2"], default="v2")
    sim.add_argument("--kappa", type=float, required=True)
    sim.add_argument("--rho0", type=float, default=1.0)
    sim.add_argument("--eta", type=float, help="GD step size (default 2/(mu+beta))")
    sim.add_argument("--shrink-eta", action="store_true",
                     help="scale the default step by (1-sigma2)/2 when sigma2 > 0.5")
    sim.add_argument("--dim", type=int, default=1, help="variable dimension d")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--iterations", type=int, default=1000)
    sim.add_argument("--out", help="CSV path (default stdout)")

    cert = sub.add_parser("certify", help="certify a convergence rate for decentralized ADMM")
    graph_args(cert)
    cert.add_argument("--mode", choices=["known-w", "unknown-w"], default="known-w")
    cert.add_argument("--kappa", type=float, required=True)
    cert.add_argument("--rho0", type=float, default=1.0)
    cert.add_argument("--sigma2", type=float)
    cert.add_argument("--tol", type=float, default=1e-3)
    cert.add_argument("--json", help="certificate output path (default stdout)")
    cert.add_argument("--csv", help="sweep CSV to append a row to")

    sw = sub.add_parser("sweep", help="certify over a grid of kappa or sigma2")
    graph_args(sw)
    sw.add_argument("--mode", choices=["known-w", "unknown-w"], default="known-w")
    sw.add_argument("--kappas", type=_floats, help="kappa grid, e.g. 1,10,100")
    sw.add_argument("--sigma2s", type=_floats, help="sigma2 grid (unknown-w)")
    sw.add_argument("--kappa", type=float, help="fixed kappa for a sigma2 grid")
    sw.add_argument("--rho0", type=float, default=1.0)
    sw.add_argument("--tol", type=float, default=1e-3)
    sw.add_argument("--simulate", action="store_true",
                    help="add the empirical rate of a simulated run (known-w only)")
    sw.add_argument("--seed", type=int, default=0)
    sw.add_argument("--iterations", type=int, default=2000)
    sw.add_argument("--timing", action="store_true", help="add a wall_time column")
    sw.add_argument("--jobs", type=int, default=1)
    sw.add_argument("--out", help="CSV path (default stdout)")
    return p


def resolve_gossip(args):
    if args.weights is not None:
        if args.graph:
            raise ConfigError("--graph and --weights are mutually exclusive")
        gm = make_gossip(args.weights)
        if args.n is not None and args.n != gm.n:
            raise ConfigError(f"--n={args.n} but --weights is {gm.n}x{gm.n}")
        return gm
    if not args.graph:
        raise ConfigError("--graph or --weights is required")
    if args.graph in ("ring", "path", "complete"):
        if args.n is None:
            raise ConfigError(f"--n is required with --graph {args.graph}")
        return metropolis_gossip(builtin_graph(args.graph, args.n))
    path = Path(args.graph)
    if not path.is_file():
        raise ConfigError(f"--graph: no builtin or file named {args.graph!r}")
    return metropolis_gossip(read_edge_list(path, args.n))


def _config_line(args) -> str:
    cfg = {k: (v.tolist() if isinstance(v, np.ndarray) else v)
           for k, v in sorted(vars(args).items()) if k != "verbose"}
    return json.dumps(cfg, sort_keys=True)


def _write(text: str, path: str | None, append: bool = False):
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "a" if append else "w") as fh:
            fh.write(text)


def _check_positive(name, value):
    if value is not None and not value > 0:
        raise ConfigError(f"--{name} must be positive, got {value}")


def build_simulation(args):
    if args.kappa < 1:
        raise ConfigError(f"--kappa must be >= 1, got {args.kappa}")
    _check_positive("rho0", args.rho0)
    _check_positive("eta", args.eta)
    _check_positive("iterations", args.iterations)
    _check_positive("dim", args.dim)
    gm = resolve_gossip(args)
    fam = random_family(gm.n, args.dim, args.kappa, args.seed)
    tracker = TRACKERS[args.tracker]
    if args.alg == "admm":
        alg = decentralize_distributed(build_admm(normalize_rho(args.rho0, fam.mu, fam.beta)),
                                       tracker, gm)
        return alg, fam, {}
    eta = args.eta
    if eta is None:
        eta = default_eta(fam.mu, fam.beta)
        if args.shrink_eta and gm.sigma2 > 0.5:
            eta *= (1.0 - gm.sigma2) / 2.0
    if args.alg == "gd":
        alg = decentralize_centralized(build_gradient_descent(eta), tracker, gm)
    else:
        alg = build_broken_gd(eta, gm)
    return alg, fam, {"eta": eta}


def cmd_simulate(args) -> int:
    alg, fam, extra = build_simulation(args)
    header = _config_line(args)
    try:
        res = run(alg, fam, K=args.iterations)
    except DivergenceError as exc:
        if exc.result is not None:
            _write(exc.result.to_csv(header), args.out)
        print(f"diverged: {exc}; try a smaller --eta", file=sys.stderr)
        return EXIT_DIVERGED
    _write(res.to_csv(header), args.out)
    rate = "n/a" if res.tau_emp is None else f"{res.tau_emp:.6f}"
    summary = (f"{alg.name}: tau_emp={rate} gap={res.gap[-1]:.3e} "
               f"consensus_error={res.consensus_error[-1]:.3e}")
    if "eta" in extra:
        summary += f" eta={extra['eta']:.6g}"
    if res.consensus_error[-1] > CONSENSUS_FLAG:
        summary += " CONSENSUS NOT REACHED"
    print(summary, file=sys.stderr)
    return EXIT_OK


def certify_builder(mode, kappa, rho0, sigma2=None, n=None, gossip=None):
    if kappa < 1:
        raise ConfigError(f"--kappa must be >= 1, got {kappa}")
    _check_positive("rho0", rho0)
    if mode == "known-w":
        return iqc.known_w_admm(gossip, kappa, rho0)
    if sigma2 is None or not 0 <= sigma2 < 1:
        raise ConfigError(f"--sigma2 must lie in [0, 1), got {sigma2}")
    if n is None or n < 2:
        raise ConfigError(f"--n must be >= 2 in unknown-w mode, got {n}")
    return iqc.unknown_w_admm(sigma2, n, kappa, rho0)


def _mode_inputs(args):
    """Gossip matrix (known-w) or validated n (unknown-w)."""
    if not 0 < args.tol < 1:
        raise ConfigError(f"--tol must lie in (0, 1), got {args.tol}")
    if args.mode == "known-w":
        if getattr(args, "sigma2", None) is not None or getattr(args, "sigma2s", None):
            raise ConfigError("--sigma2 applies to --mode unknown-w only")
        return resolve_gossip(args), None
    if args.graph or args.weights is not None:
        raise ConfigError("unknown-w mode takes --sigma2 and --n, not a graph")
    n = 2 if args.n is None else args.n
    return None, n


def cmd_certify(args) -> int:
    gm, n = _mode_inputs(args)
    builder = certify_builder(args.mode, args.kappa, args.rho0, args.sigma2, n, gm)
    cert = iqc.bisect_rate(builder, args.tol)
    param, value = ("kappa", args.kappa) if args.mode == "known-w" else ("sigma2", args.sigma2)
    if args.csv:
        new = not Path(args.csv).exists() or Path(args.csv).stat().st_size == 0
        head = f"# {_config_line(args)}\nparameter,value,tau\n" if new else ""
        tau = "" if not cert.certified else repr(cert.tau)
        _write(f"{head}{param},{value!r},{tau}\n", args.csv, append=True)
    if not cert.certified:
        print(f"no certificate: {cert.reason}", file=sys.stderr)
        return EXIT_NO_CERT
    _write(cert.to_json() + "\n", args.json)
    print(f"certified tau={cert.tau:.6f} margin={cert.margin:.3e}", file=sys.stderr)
    return EXIT_OK


def _sweep_point(task):
    mode, kappa, rho0, sigma2, n, W, tol, simulate, seed, iterations = task
    t0 = time.perf_counter()
    gm = make_gossip(W) if W is not None else None
    cert = iqc.bisect_rate(certify_builder(mode, kappa, rho0, sigma2, n, gm), tol)
    tau_emp = None
    if simulate and gm is not None:
        fam = random_family(gm.n, 1, kappa, seed)
        alg = decentralize_distributed(build_admm(normalize_rho(rho0, fam.mu, fam.beta)),
                                       TRACKERS["v2"], gm)
        try:
            tau_emp = run(alg, fam, K=iterations).tau_emp
        except DivergenceError:
            tau_emp = 1.0
    return (cert.tau if cert.certified else None), tau_emp, time.perf_counter() - t0


def cmd_sweep(args) -> int:
    gm, n = _mode_inputs(args)
    if args.mode == "known-w":
        if not args.kappas:
            raise ConfigError("--kappas is required in known-w mode")
        param, grid = "kappa", sorted(args.kappas)
        tasks = [("known-w", k, args.rho0, None, None, gm.W, args.tol, args.simulate,
                  args.seed, args.iterations) for k in grid]
    else:
        if not args.sigma2s:
            raise ConfigError("--sigma2s is required in unknown-w mode")
        if args.kappa is None:
            raise ConfigError("--kappa is required with --sigma2s")
        param, grid = "sigma2", sorted(args.sigma2s)
        for s in grid:
            if not 0 <= s < 1:
                raise ConfigError(f"--sigma2s entries must lie in [0, 1), got {s}")
        tasks = [("unknown-w", args.kappa, args.rho0, s, n, None, args.tol, False,
                  args.seed, args.iterations) for s in grid]
    for t in tasks:  # validate before spawning workers
        certify_builder(t[0], t[1], t[2], t[3], t[4], gm)
    if args.jobs < 1:
        raise ConfigError(f"--jobs must be >= 1, got {args.jobs}")
    if args.jobs == 1:
        results = [_sweep_point(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_point, tasks))
    cols = ["parameter", "value", "tau", "tau_emp"] + (["wall_time"] if args.timing else [])
    lines = [f"# {_config_line(args)}", ",".join(cols)]
    for value, (tau, tau_emp, wall) in zip(grid, results):
        row = [param, repr(value), "" if tau is None else repr(tau),
               "" if tau_emp is None else repr(tau_emp)]
        if args.timing:
            row.append(f"{wall:.3f}")
        lines.append(",".join(row))
    _write("\n".join(lines) + "\n", args.out)
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "certify": cmd_certify, "sweep": cmd_sweep}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, GraphError) as exc:
        print(f"decopt {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
