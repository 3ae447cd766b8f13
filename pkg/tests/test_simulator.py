import numpy as np
import pytest

from decopt.base_algorithms import build_admm, build_gradient_descent, default_eta, normalize_rho
from decopt.consensus import gcon_v1, gcon_v2
from decopt.decentralizer import (
    decentralize_centralized,
    decentralize_distributed,
    replicated_fixed_point,
)
from decopt.objectives import random_family
from decopt.simulator import DivergenceError, RateFitError, empirical_rate, run


def test_decentralized_gd_ring4(ring4):
    fam = random_family(4, 2, 10, seed=0)
    alg = decentralize_centralized(build_gradient_descent(default_eta(fam.mu, fam.beta)), gcon_v2, ring4)
    res = run(alg, fam, K=2000)
    assert res.consensus_error[-1] <= 1e-8 and res.gap[-1] <= 1e-8
    assert len(res.gap) == len(res.consensus_error) == res.iterations == 2000


@pytest.mark.parametrize("kind", ["gd1", "gd2", "admm"])
def test_start_at_optimum_stays_there(ring4, kind):
    # consensual x* together with the tracker steady state; zero tracker
    # states would not do, since the local gradients differ at x*
    fam = random_family(4, 3, 10, seed=1)
    if kind == "admm":
        alg = decentralize_distributed(build_admm(3.0), gcon_v2, ring4)
    else:
        alg = decentralize_centralized(build_gradient_descent(0.02),
                                       gcon_v1 if kind == "gd1" else gcon_v2, ring4)
    state, _ = replicated_fixed_point(alg, fam)
    res = run(alg, fam, state0=state, K=50)
    assert res.gap.max() <= 1e-12 and res.consensus_error.max() <= 1e-12


def test_admm_linear_tail(w2):
    fam = random_family(2, 1, 10, seed=2)
    alg = decentralize_distributed(build_admm(normalize_rho(1, fam.mu, fam.beta)), gcon_v2, w2)
    res = run(alg, fam, K=400)
    assert res.tau_emp is not None and 0 < res.tau_emp < 1
    g = res.gap[(res.gap > 1e-11)]
    half = len(g) // 2
    # log-linear envelope: both halves decay at a similar rate
    early, late = empirical_rate(g[:half], 1.0, 10), empirical_rate(g[half:], 1.0, 10)
    assert early < 1 and late < 1 and abs(early - late) < 0.15


def test_divergence_guard(ring4):
    fam = random_family(4, 1, 10, seed=3)
    alg = decentralize_centralized(build_gradient_descent(0.5), gcon_v1, ring4)
    with pytest.raises(DivergenceError) as info:
        run(alg, fam, K=5000)
    assert info.value.iteration > 0
    assert info.value.result is not None and len(info.value.result.gap) == info.value.iteration + 1


def test_rejects_bad_arguments(ring4):
    fam = random_family(4, 1, 10, seed=3)
    alg = decentralize_centralized(build_gradient_descent(0.1), gcon_v1, ring4)
    with pytest.raises(ValueError):
        run(alg, fam, K=0)
    with pytest.raises(ValueError):
        run(alg, fam, state0=np.zeros(3), K=5)


def test_runs_are_deterministic(ring4):
    fam = random_family(4, 2, 10, seed=4)
    alg = decentralize_distributed(build_admm(3.0), gcon_v2, ring4)
    a, b = run(alg, fam, K=100), run(alg, fam, K=100)
    assert np.array_equal(a.gap, b.gap)
    for key in a.trajectories:
        assert np.array_equal(a.trajectories[key], b.trajectories[key])


@pytest.mark.parametrize("which", ["gd", "admm"])
def test_centralized_equals_decentralized_with_J(which):
    from decopt.consensus import make_gossip
    J = make_gossip(np.full((3, 3), 1 / 3))
    fam = random_family(3, 2, 10, seed=5)
    x0 = np.repeat(fam.a[:1], 3, 0)
    if which == "gd":
        alg = build_gradient_descent(0.1)
        cen = run(alg, fam, x0=x0[:1], K=100)
        dec = run(decentralize_centralized(alg, gcon_v2, J), fam, x0=x0, K=100)
    else:
        alg = build_admm(2.0)
        cen = run(alg, fam, x0=x0, K=100)
        dec = run(decentralize_distributed(alg, gcon_v2, J), fam, x0=x0, K=100)
    assert np.allclose(cen.gap, dec.gap, atol=1e-12)


def test_csv_export(ring4):
    fam = random_family(4, 1, 2, seed=6)
    res = run(build_gradient_descent(0.3), fam, K=5)
    text = res.to_csv("config")
    lines = text.splitlines()
    assert lines[0] == "# config" and lines[1] == "k,gap,consensus_error"
    assert len(lines) == 7 and lines[2].startswith("0,")


def test_rate_geometric():
    assert empirical_rate(0.5 ** np.arange(60)) == pytest.approx(0.5, abs=1e-6)


def test_rate_noisy_geometric():
    rng = np.random.default_rng(0)
    e = 3 * 0.9 ** np.arange(200) + np.abs(rng.normal(scale=1e-15, size=200))
    assert empirical_rate(e) == pytest.approx(0.9, abs=1e-3)


def test_rate_constant_and_edges():
    assert empirical_rate(np.ones(100)) == pytest.approx(1.0)
    assert empirical_rate(np.array([1.0] * 20 + [0.0])) == 0.0
    with pytest.raises(RateFitError):
        empirical_rate(np.ones(5))
    with pytest.raises(ValueError):
        empirical_rate(np.ones(100), tail_fraction=0)
