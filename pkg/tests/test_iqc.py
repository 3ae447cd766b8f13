import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from decopt import iqc, sdp
from decopt.base_algorithms import ClosedLoop, Channel, build_admm, normalize_rho
from decopt.consensus import averaging_matrix, gcon_v2, make_gossip, track, two_node_gossip
from decopt.decentralizer import decentralize_distributed
from decopt.linear_systems import make_state_space
from decopt.objectives import make_family, random_family
from decopt.simulator import run

from conftest import W_TWO_NODE


def scalar_builder(a):
    G = make_state_space(a, np.zeros((1, 0)), np.zeros((0, 1)), np.zeros((0, 0)),
                         states=[("x", 1)])
    return iqc.ProblemBuilder(G, ())


def admm_run(fam, W, rho0=1.0, K=300):
    rho = normalize_rho(rho0, fam.mu, fam.beta)
    return run(decentralize_distributed(build_admm(rho), gcon_v2, W), fam, K=K), rho


# sector forms

def test_sector_identity_map_is_on_the_boundary():
    M = iqc.sector_matrix(1.0, 1.0)
    for v in (-2.0, 0.3, 5.0):
        z = np.array([v, v])
        assert z @ M @ z == pytest.approx(0.0)


def test_sector_holds_on_gradient_pairs(rng):
    fam = random_family(5, 3, 10.0, seed=3)
    spec = iqc.sector_iqc(fam.mu, fam.beta, n=fam.n)
    M = spec.forms[0][1]
    for _ in range(200):
        x, y = rng.normal(scale=3.0, size=(2, fam.n, fam.d))
        dv, du = x - y, fam.grad(x) - fam.grad(y)
        z = np.concatenate([dv, du])
        assert np.einsum("id,ij,jd->", z, M, z) >= -1e-10


def test_sector_rejects_bad_bounds():
    with pytest.raises(ValueError):
        iqc.sector_iqc(2.0, 1.0)
    with pytest.raises(ValueError):
        iqc.normalized_sector_iqc(1.0, 0.5)
    with pytest.raises(ValueError):
        iqc.normalized_sector_iqc(0.0, 2.0)


def test_normalized_sector_at_unit_kappa():
    M = iqc.normalized_sector_iqc(1.0, 1.0, n=2).forms[0][1]
    I = np.eye(2)
    assert np.allclose(M, np.block([[-2 * I, 2 * I], [2 * I, -2 * I]]))


@settings(max_examples=30, deadline=None)
@given(mu=st.floats(0.1, 5.0), k=st.floats(1.0, 100.0), rho0=st.floats(0.2, 5.0),
       v=st.floats(-10, 10), u=st.floats(-10, 10))
def test_normalized_sector_is_rescaled_sector(mu, k, rho0, v, u):
    beta = mu * k
    rho = normalize_rho(rho0, mu, beta)
    Ms = iqc.sector_matrix(mu, beta)
    Mn = iqc.normalized_sector_iqc(rho0, k).forms[0][1]
    zs = np.array([v, u])
    zn = np.array([v, u / rho])
    assert zn @ Mn @ zn == pytest.approx(zs @ Ms @ zs / rho ** 2, rel=1e-9, abs=1e-9)


# zero-sum and uncertain-tracker forms

def test_zero_sum_values():
    spec = iqc.zero_sum_iqc("zeta", 3)
    vals = spec.values({"x:zeta": np.array([[1.0, -2.0, 1.0], [1.0, 1.0, 1.0]])})["z"]
    assert vals[0] == pytest.approx(0.0)
    assert vals[1] == pytest.approx(-9.0)


def test_zero_sum_along_decentralized_admm():
    fam = random_family(2, 2, 10.0, seed=0)
    res, _ = admm_run(fam, W_TWO_NODE)
    loop_states = decentralize_distributed(build_admm(1.0), gcon_v2, W_TWO_NODE).linear
    for span in ("trk_u.zeta_u1", "trk_u.zeta_u2"):
        zeta = res.trajectories["state"][:, loop_states.state_slice(span)]
        vals = iqc.zero_sum_iqc("z", 2).values({"x:z": zeta})["z"]
        assert np.abs(vals).max() <= 1e-12 * max(1.0, np.abs(zeta).max() ** 2)


def test_uncertain_iqc_on_consensual_input():
    spec = iqc.gcon_uncertain_iqc(0.5, 3)
    v = np.tile(np.arange(10.0)[:, None], (1, 3))
    vals = spec.values({"y:v": v, "y:wbar": np.zeros_like(v)})
    assert np.allclose(vals["z1"], 0) and np.allclose(vals["z2"], 0)


@pytest.mark.parametrize("s2", [0.0, 0.3, 0.7, 0.95])
def test_uncertain_iqc_holds_on_tracker_runs(rng, s2):
    gm = two_node_gossip(s2)
    v = rng.normal(size=(80, 2, 2)).cumsum(0)
    w = track(gcon_v2(gm.W), v)
    wbar = w - np.einsum("ij,kjd->kid", averaging_matrix(2), v)
    vals = iqc.gcon_uncertain_iqc(s2, 2).values({"y:v": v, "y:wbar": wbar})
    scale = 1.0 + np.abs(v).max() ** 2
    assert vals["z1"].min() >= -1e-10 * scale
    assert np.abs(vals["z2"]).max() <= 1e-10 * scale


def test_uncertain_iqc_validation():
    with pytest.raises(ValueError):
        iqc.gcon_uncertain_iqc(1.0, 2)
    with pytest.raises(ValueError):
        iqc.gcon_uncertain_iqc(0.5, 1)
    with pytest.raises(ValueError):
        iqc.unknown_w_admm(1.0)


def test_every_form_holds_along_admm_trajectories():
    """Each IQC used by the unknown-W analysis, on simulated deviations."""
    fam = random_family(2, 3, 10.0, seed=4)
    res, rho = admm_run(fam, W_TWO_NODE)
    tr = res.trajectories
    x_star = fam.central_optimum()
    w_star = fam.grad(np.repeat(x_star[None], 2, 0)) / rho
    v = tr["v2"] - x_star
    w = tr["u2"] / rho - w_star
    sector = iqc.normalized_sector_iqc(1.0, fam.kappa, n=2, v="v", u="w")
    assert sector.values({"v": v, "w": w})["z"].min() >= -1e-8
    s2 = make_gossip(W_TWO_NODE).sigma2
    J = averaging_matrix(2)
    for sig, hat in (("u1", "u1_hat"), ("u2", "u2_hat")):
        s, h = tr[sig], tr[hat]
        wbar = h - np.einsum("ij,kjd->kid", J, s)
        vals = iqc.gcon_uncertain_iqc(s2, 2).values({"y:v": s, "y:wbar": wbar})
        scale = 1.0 + np.abs(s).max() ** 2
        assert vals["z1"].min() >= -1e-8 * scale
        assert np.abs(vals["z2"]).max() <= 1e-8 * scale


# assembly

def test_assemble_scalar_lyapunov():
    b = scalar_builder(0.5)
    assert sdp.solve(b(0.6).lmi()).feasible
    assert not sdp.solve(b(0.4).lmi()).feasible


def test_assemble_dimensions(w2):
    p = iqc.known_w_admm(w2, 10.0)(0.9)
    assert p.G.n_states == 8
    assert p.system.n_states == 8
    assert p.n_lambda == 3
    u = iqc.unknown_w_admm(0.3)(0.9)
    assert u.G.n_states == 12
    assert [name for name, _ in u.G.inputs] == ["w", "xhat", "what"]
    assert p.dims["lmi_size"] == 10
    with pytest.raises(ValueError):
        iqc.known_w_admm(w2, 10.0)(0.0)
    with pytest.raises(ValueError):
        iqc.known_w_admm(w2, 10.0)(1.5)


def test_known_w_matrices_match_the_display(w2):
    W = w2.W
    G = iqc.known_w_g(W)
    n = 2
    I, Z = np.eye(n), np.zeros((n, n))
    blk = lambda r, c: G.A[r * n:(r + 1) * n, c * n:(c + 1) * n]
    assert np.allclose(blk(0, 0), W) and np.allclose(blk(0, 1), -I) and np.allclose(blk(0, 2), I)
    assert np.allclose(blk(1, 3), I) and np.allclose(blk(2, 0), W @ W - W)
    assert np.allclose(blk(2, 2), W) and np.allclose(blk(3, 3), W)
    assert np.allclose(blk(1, 0), Z) and np.allclose(blk(3, 1), Z)
    assert np.allclose(G.B, np.vstack([-I, W - I, Z, W @ W - W]))
    assert np.allclose(G.C, np.hstack([W, -I, I, Z]))
    assert np.allclose(G.D, -I)


def test_known_w_g_reproduces_decentralized_admm():
    fam = random_family(2, 2, 10.0, seed=7)
    res, rho = admm_run(fam, W_TWO_NODE, K=60)
    scaled = make_family(fam.Q / rho, fam.a)
    loop = ClosedLoop(iqc.known_w_g(W_TWO_NODE), (Channel("w", "v"),), 2, "v", "x")
    res_g = run(loop, scaled, K=60, x_star=fam.central_optimum())
    assert np.allclose(res_g.trajectories["v"], res.trajectories["v2"], atol=1e-10)


def test_unknown_w_reads_all_three_inputs():
    G = iqc.unknown_w_system(0.3)
    for name in ("w", "xhat", "what"):
        assert np.any(G.D[:, G.input_slice(name)]) or np.any(G.B[:, G.input_slice(name)])


# certificates

def test_bisect_scalar():
    cert = iqc.bisect_rate(scalar_builder(0.5), tol=1e-3)
    assert cert.certified
    assert abs(cert.tau - 0.5) <= 2e-3
    none = iqc.bisect_rate(scalar_builder(1.1), tol=1e-3)
    assert not none.certified and none.tau is None
    with pytest.raises(ValueError):
        iqc.bisect_rate(scalar_builder(0.5), tol=0.0)


@pytest.fixture(scope="module")
def known10():
    b = iqc.known_w_admm(W_TWO_NODE, 10.0)
    return b, iqc.bisect_rate(b)


def test_certificate_verifies(known10):
    b, cert = known10
    assert cert.certified and 0 < cert.tau < 1
    assert iqc.verify_certificate(b(cert.tau), cert)
    assert cert.fingerprint == b(cert.tau).fingerprint()


def test_verification_rejects_tampering(known10):
    b, cert = known10
    lower = iqc.RateCertificate(cert.tau - 0.05, cert.P, cert.lam, cert.margin, cert.fingerprint)
    assert not iqc.verify_certificate(b(cert.tau), lower)
    flipped = iqc.RateCertificate(cert.tau, -cert.P, cert.lam, cert.margin, cert.fingerprint)
    assert not iqc.verify_certificate(b(cert.tau), flipped)
    neg = iqc.RateCertificate(cert.tau, cert.P, -cert.lam - 1, cert.margin, cert.fingerprint)
    assert not iqc.verify_certificate(b(cert.tau), neg)
    missing = iqc.NoCertificate("x", -1.0, "")
    assert not iqc.verify_certificate(b(cert.tau), missing)


def test_certificate_json_round_trip(known10):
    b, cert = known10
    back = iqc.RateCertificate.from_json(cert.to_json())
    assert back.tau == cert.tau and back.fingerprint == cert.fingerprint
    assert np.array_equal(back.P, cert.P) and np.array_equal(back.lam, cert.lam)
    assert iqc.verify_certificate(b(back.tau), back)


def test_feasibility_is_monotone_in_tau(known10):
    b, cert = known10
    taus = np.linspace(0.5, 0.99, 12)
    ok = [sdp.solve(b(t).lmi()).feasible for t in taus]
    first = ok.index(True)
    assert all(ok[first:])
    assert taus[first] >= cert.tau - 1e-3 - 0.05


def test_lifting_preserves_the_rate():
    b = iqc.known_w_admm(W_TWO_NODE, 2.0)
    t1 = iqc.bisect_rate(b, tol=2e-3).tau
    t2 = iqc.bisect_rate(b.lifted(2), tol=2e-3).tau
    assert abs(t1 - t2) <= 2e-3 + 1e-9


def test_unknown_w_at_zero_sigma_matches_exact_averaging():
    tu = iqc.bisect_rate(iqc.unknown_w_admm(0.0, kappa=10.0), tol=2e-3)
    tj = iqc.bisect_rate(iqc.known_w_admm(averaging_matrix(2), 10.0), tol=2e-3)
    assert tu.certified and tj.certified
    assert tu.tau <= tj.tau + 2e-3 + 1e-9


def test_empirical_rate_respects_certificate(known10):
    _, cert = known10
    fam = random_family(2, 3, 10.0, seed=1)
    res, _ = admm_run(fam, W_TWO_NODE, K=400)
    assert res.tau_emp <= cert.tau + 0.02
