"""Decentralized consensus optimization from base algorithms and consensus tracking."""

from .base_algorithms import build_admm, build_gradient_descent
from .consensus import gcon_v1, gcon_v2, make_gossip
from .decentralizer import build_broken_gd, decentralize_centralized, decentralize_distributed
from .iqc import bisect_rate, known_w_admm, unknown_w_admm, verify_certificate
from .objectives import make_family, random_family
from .simulator import run

__all__ = [
    "bisect_rate", "build_admm", "build_broken_gd", "build_gradient_descent",
    "decentralize_centralized", "decentralize_distributed", "gcon_v1", "gcon_v2",
    "known_w_admm", "make_family", "make_gossip", "random_family", "run",
    "unknown_w_admm", "verify_certificate",
]
