import numpy as np
import pytest
from scipy.stats import multivariate_normal, norm

from ecgi_vae.errors import EstimationError, InvalidArgument, SolverError
from ecgi_vae.inversion import (EMConfig, MeasurementModel, PosteriorU, e_step, em_infer,
                                estimate_beta, m_step_objective, m_step_objective_and_grad,
                                m_step_update)
from ecgi_vae.nn import grad_check
from ecgi_vae.svae import SVAE, DecoderOutput, SVAEConfig, ZPrior


def brute_force_posterior(H, beta, Y, M, S):
    """Explicit-inverse Gaussian posterior, column by column."""
    n, T = M.shape
    U_hat, Sig = np.empty((n, T)), np.empty((n, T))
    for k in range(T):
        cov = np.linalg.inv(beta * H.T @ H + np.diag(1 / S[:, k]))
        U_hat[:, k] = cov @ (beta * H.T @ Y[:, k] + M[:, k] / S[:, k])
        Sig[:, k] = np.diag(cov)
    return U_hat, Sig


def random_instance(rng, n, m, T):
    H = rng.standard_normal((m, n))
    Y = rng.standard_normal((m, T))
    M = rng.standard_normal((n, T))
    S = rng.uniform(0.1, 2.0, (n, T))
    return H, Y, M, S, float(rng.uniform(0.5, 20))


def test_zero_beta_returns_prior(rng):
    H, Y, M, S, _ = random_instance(rng, 5, 3, 4)
    post = e_step(MeasurementModel(H, 0.0), Y, DecoderOutput(M, S))
    np.testing.assert_array_equal(post.U_hat, M)
    np.testing.assert_array_equal(post.Sigma_diag, S)


@pytest.mark.parametrize("method", ["dense", "woodbury"])
def test_hand_example(method):
    post = e_step(MeasurementModel(np.eye(2), 1.0), np.array([[2.0], [4.0]]),
                  DecoderOutput(np.zeros((2, 1)), np.ones((2, 1))), method)
    np.testing.assert_allclose(post.U_hat[:, 0], [1, 2], atol=1e-15)
    np.testing.assert_allclose(post.Sigma_diag[:, 0], [0.5, 0.5], atol=1e-15)


@pytest.mark.parametrize("method", ["dense", "woodbury", "auto"])
def test_matches_brute_force(rng, method):
    for n, m, T in [(6, 4, 3), (12, 8, 5), (7, 2, 1), (3, 9, 2)]:
        H, Y, M, S, beta = random_instance(rng, n, m, T)
        post = e_step(MeasurementModel(H, beta), Y, DecoderOutput(M, S), method)
        U_ref, Sig_ref = brute_force_posterior(H, beta, Y, M, S)
        np.testing.assert_allclose(post.U_hat, U_ref, rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(post.Sigma_diag, Sig_ref, rtol=1e-10)
        assert np.all(post.Sigma_diag > 0)


@pytest.mark.parametrize("method", ["dense", "woodbury"])
def test_column_marginal_likelihood(rng, method):
    H, Y, M, S, beta = random_instance(rng, 7, 4, 3)
    post = e_step(MeasurementModel(H, beta), Y, DecoderOutput(M, S), method)
    for k in range(3):
        K = np.eye(4) / beta + H @ np.diag(S[:, k]) @ H.T
        ref = multivariate_normal(H @ M[:, k], K).logpdf(Y[:, k])
        assert post.log_evidence_terms[k] == pytest.approx(ref, rel=1e-10)


def test_e_step_errors(rng):
    H, Y, M, S, beta = random_instance(rng, 4, 3, 2)
    with pytest.raises(InvalidArgument):
        e_step(MeasurementModel(H, beta), Y[:, :1], DecoderOutput(M, S))
    H[0, 0] = np.nan
    with pytest.raises(SolverError, match="column 0"):
        e_step(MeasurementModel(H, beta), Y, DecoderOutput(M, S), "dense")


def test_beta_override_and_errors(desk_lead_field):
    H = desk_lead_field.H
    assert estimate_beta(H, np.ones((32, 4)), beta=50) == 50
    with pytest.raises(EstimationError):
        estimate_beta(H, np.zeros((32, 4)))


def test_beta_known_noise(desk_mesh, desk_lead_field, rng):
    from ecgi_vae.apsim import APParams, PacingConfig, simulate
    H = desk_lead_field.H
    U = simulate(desk_mesh, APParams(), PacingConfig(desk_mesh.nodes_within(77, 1.0))).U
    Y = H @ U
    Y *= np.sqrt(0.01 * 10 ** 2.5 / np.mean(Y ** 2))  # noise variance 0.01 sits at 25 dB
    beta = estimate_beta(H, Y + 0.1 * rng.standard_normal(Y.shape))
    assert 50 <= beta <= 200


def test_beta_cap_noiseless(rng):
    H = rng.standard_normal((10, 4))
    assert estimate_beta(H, H @ rng.standard_normal((4, 6))) == 1e8


# ------------------------------------------------------------------ M-step

def zero_decoder(n=5, d=2):
    return SVAE(SVAEConfig(n_nodes=n, latent_dim=d, enc_hidden=(3, 3), dec_hidden=(3, 3),
                           dec_var_floor=0.0))


def test_objective_trivial_value(rng):
    model = zero_decoder()
    T = 4
    post = PosteriorU(np.zeros((5, T)), np.zeros((5, T)))
    zp = ZPrior(rng.standard_normal((2, T)), np.ones((2, T)))
    L = m_step_objective(zp.Z_bar, post, model, zp)
    assert L == pytest.approx(-(5 * T / 2) * np.log(2 * np.pi) - (2 * T / 2) * np.log(2 * np.pi),
                              rel=1e-14)
    worse = PosteriorU(post.U_hat, post.Sigma_diag + 0.1)
    assert m_step_objective(zp.Z_bar, worse, model, zp) < L


def test_objective_monte_carlo(small_svae, rng):
    T = 3
    Z = rng.standard_normal((2, T))
    post = PosteriorU(rng.standard_normal((6, T)), rng.uniform(0.05, 0.5, (6, T)))
    zp = ZPrior(rng.standard_normal((2, T)), rng.uniform(0.5, 2, (2, T)))
    dec = small_svae.decode(Z)
    samples = post.U_hat + np.sqrt(post.Sigma_diag) * rng.standard_normal((10 ** 5, 6, T))
    mc = np.mean(np.sum(norm.logpdf(samples, dec.M, np.sqrt(dec.S)), axis=(1, 2)))
    mc += np.sum(norm.logpdf(Z, zp.Z_bar, np.sqrt(zp.C)))
    assert m_step_objective(Z, post, small_svae, zp) == pytest.approx(mc, rel=0.005)


def test_stationary_point_unchanged(rng):
    model = zero_decoder()
    zp = ZPrior(rng.standard_normal((2, 4)), np.ones((2, 4)))
    post = PosteriorU(rng.standard_normal((5, 4)), np.ones((5, 4)))
    res = m_step_update(zp.Z_bar, post, model, zp)
    np.testing.assert_array_equal(res.Z, zp.Z_bar)


def test_prior_gradient_closed_form(rng):
    model = zero_decoder()
    zp = ZPrior(rng.standard_normal((2, 4)), rng.uniform(0.3, 3, (2, 4)))
    post = PosteriorU(rng.standard_normal((5, 4)), np.ones((5, 4)))
    Z = rng.standard_normal((2, 4))
    _, g = m_step_objective_and_grad(Z, post, model, zp)
    np.testing.assert_allclose(g, -(Z - zp.Z_bar) / zp.C, atol=1e-15)
    rep = grad_check(lambda p: (m_step_objective(p["Z"], post, model, zp),
                                {"Z": -(p["Z"] - zp.Z_bar) / zp.C}), {"Z": Z}, tolerance=1e-8)
    assert rep.passed, rep


def test_full_gradient_through_decoder(small_svae, rng):
    T = 5
    post = PosteriorU(rng.standard_normal((6, T)), rng.uniform(0.05, 0.5, (6, T)))
    zp = ZPrior(rng.standard_normal((2, T)), rng.uniform(0.5, 2, (2, T)))

    def fn(p):
        L, g = m_step_objective_and_grad(p["Z"], post, small_svae, zp)
        return L, {"Z": g}

    rep = grad_check(fn, {"Z": rng.standard_normal((2, T))}, tolerance=1e-4)
    assert rep.passed, rep
    assert fn({"Z": zp.Z_bar})[0] == pytest.approx(m_step_objective(zp.Z_bar, post, small_svae, zp),
                                                   rel=1e-14)


def test_objective_column_permutation(rng):
    model = SVAE(SVAEConfig(n_nodes=6, latent_dim=2, enc_hidden=(3, 3), dec_hidden=(4, 5)),
                 np.random.default_rng(5))
    # remove every path between time steps so the decoder is column-local
    for layer in (model.dec1, model.dec2):
        b = layer.b.copy()
        h = layer.hidden_dim
        b[h:2 * h] = -1e3
        layer.set_params(U=np.zeros_like(layer.U), b=b)
    T = 6
    Z = rng.standard_normal((2, T))
    post = PosteriorU(rng.standard_normal((6, T)), rng.uniform(0.1, 1, (6, T)))
    zp = ZPrior(rng.standard_normal((2, T)), rng.uniform(0.5, 2, (2, T)))
    perm = rng.permutation(T)
    L = m_step_objective(Z, post, model, zp)
    Lp = m_step_objective(Z[:, perm], PosteriorU(post.U_hat[:, perm], post.Sigma_diag[:, perm]),
                          model, ZPrior(zp.Z_bar[:, perm], zp.C[:, perm]))
    assert Lp == pytest.approx(L, rel=1e-14)


# ------------------------------------------------------------------ EM

@pytest.fixture
def em_problem(small_svae, rng):
    T = 6
    zp = ZPrior(rng.standard_normal((2, T)) * 0.3, np.full((2, T), 0.5))
    Z_true = zp.sample(rng)
    M_true = small_svae.decode(Z_true).M
    H = rng.standard_normal((5, 6))
    return H, H @ M_true, M_true, zp


def test_em_monotone_and_deterministic(small_svae, em_problem):
    H, Y, _, zp = em_problem
    model = MeasurementModel(H, 100.0)
    cfg = EMConfig(max_em_iters=15, m_step_lr=1e-3)
    res = em_infer(model, Y, small_svae, zp, cfg)
    for t in res.trace:
        assert np.all(np.diff(t["m_step_L"]) >= -1e-9)
    assert len(res.log_marginal) == res.n_iters + 1
    assert np.all(np.diff(res.log_marginal) >= -1e-8)
    again = em_infer(model, Y, small_svae, zp, cfg)
    assert again.Z_map.tobytes() == res.Z_map.tobytes()
    assert again.L_trace == res.L_trace


def test_em_single_iteration(small_svae, em_problem):
    H, Y, _, zp = em_problem
    res = em_infer(MeasurementModel(H, 10.0), Y, small_svae, zp, EMConfig(rel_tol=np.inf))
    assert res.n_iters == 1 and len(res.trace) == 1 and res.converged

