import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import (central_diff_grad, crandn, line_search_oracle, neg_loglik_per_antenna, p_dense,
                     q_dense, random_instance, s_r)
from ura_sim.codebook import generate_codebook
from ura_sim.errors import ConfigError, NumericalError
from ura_sim.inner_detector import (DetectorOptions, DetectorState, EffectiveChannelModel, detect,
                                    genie_effective_channel, prior_effective_channel, select_support)


def _state(seed=0, **kw):
    rng = np.random.default_rng(seed)
    C, gamma, G, Y = random_instance(rng, **kw)
    return DetectorState(Y, C, 1.0, G_tilde=G), C, gamma, G, Y


def test_objective_at_zero():
    # [TRIVIAL] gamma = 0 -> p = n0 log sigma2 + tr(Sigma_hat)/sigma2, q = 0
    rng = np.random.default_rng(1)
    C = crandn(rng, 6, 4)
    Y = crandn(rng, 6, 10)
    st_ = DetectorState(Y, C, 2.0, G_tilde=crandn(rng, 4, 10))
    Sh = Y @ Y.conj().T / 10
    assert st_.p() == pytest.approx(6 * math.log(2.0) + np.trace(Sh).real / 2.0)
    assert st_.q() == 0.0
    assert st_.objective() == pytest.approx(st_.p())


def test_objective_equals_density():
    # [DERIVED] p + q = -(1/M) log-likelihood minus the n0 log(pi) constant
    for seed in range(5):
        state, C, gamma, G, Y = _state(seed)
        state.gamma_tilde[:] = gamma
        state.refresh()
        ref = neg_loglik_per_antenna(C, gamma, G, Y, 1.0) - C.shape[0] * math.log(math.pi)
        assert state.full_objective() == pytest.approx(ref, abs=1e-8)
        assert state.p() == pytest.approx(p_dense(C, gamma, Y, 1.0), abs=1e-9)
        assert state.q() == pytest.approx(q_dense(C, gamma, G, Y, 1.0), abs=1e-9)


def test_objective_anchor():
    # [TRIVIAL] at the linearization point the surrogate equals p + q
    state, C, gamma, *_ = _state(3)
    state.gamma_tilde[:] = gamma
    state.refresh()
    state.set_linearization_point()
    assert state.objective() == pytest.approx(state.full_objective(), abs=1e-12)


def test_gradient_matches_finite_differences():
    # [DERIVED] n0=8, 2^J=4, M=4
    for seed in range(10):
        rng = np.random.default_rng(seed)
        C, gamma, G, Y = random_instance(rng, n0=8, N=4, M=4)
        gamma = gamma + 0.2
        state = DetectorState(Y, C, 1.0, G_tilde=G)
        g = state.grad_q(gamma)
        fd = central_diff_grad(lambda x: q_dense(C, x, G, Y, 1.0), gamma)
        assert np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1e-3)) < 1e-5


def test_gradient_zero_mean_and_origin():
    # [TRIVIAL] G = 0 -> gradient 0; [DERIVED] gamma = 0 keeps only Theta_5
    rng = np.random.default_rng(2)
    C, _, G, Y = random_instance(rng)
    M = Y.shape[1]
    zero = DetectorState(Y, C, 1.5, G_tilde=np.zeros_like(G))
    assert np.all(zero.grad_q(np.abs(rng.standard_normal(4))) == 0)
    state = DetectorState(Y, C, 1.5, G_tilde=G)
    ref = np.array([-(2 / M) * np.real(np.trace(np.outer(G[r], Y.conj().T @ C[:, r]) / 1.5))
                    for r in range(4)])
    np.testing.assert_allclose(state.grad_q(), ref, rtol=1e-12, atol=1e-14)


def test_coordinate_update_matches_line_search():
    # [DERIVED] argmin of s_r over the feasible interval by golden section
    rng = np.random.default_rng(7)
    for trial in range(60):
        state, C, gamma, G, Y = _state(100 + trial, mean_scale=0.3)
        state.gamma_tilde[:] = np.abs(rng.standard_normal(4)) * 0.5
        state.refresh()
        state.set_linearization_point()
        r = int(rng.integers(4))
        n1, n2, n3 = state.coefficients(r)
        d = state.coordinate_update(r)
        ref = line_search_oracle(n1, n2, n3, state.gamma_tilde[r])
        assert d == pytest.approx(ref, abs=1e-7)


def test_degenerate_step_limit():
    # [DERIVED] n3 -> 0 gives the zero-mean update n2/n1^2 - 1/n1
    state, *_ = _state(4)
    state.grad_q_at_point[:] = 0.0
    n1, n2, _ = state.coefficients(1)
    assert state.coordinate_update(1) == pytest.approx(max(n2 / n1 ** 2 - 1 / n1, 0.0))
    state.grad_q_at_point[1] = 1e-13
    assert state.coordinate_update(1) == pytest.approx(max(n2 / n1 ** 2 - 1 / n1, 0.0))


def test_fixed_point_gives_zero_step():
    # [TRIVIAL] after moving to the minimizer the next step is 0
    state, *_ = _state(5)
    state.set_linearization_point()
    d = state.coordinate_update(2)
    state.apply_update(2, d)
    assert abs(state.coordinate_update(2)) < 1e-7


def test_apply_update_keeps_inverse():
    # [DERIVED] Sherman-Morrison vs fresh inversion
    state, *_ = _state(6)
    rng = np.random.default_rng(0)
    before = state.Sigma_tilde_inv.copy()
    state.apply_update(0, 0.0)
    assert np.array_equal(before, state.Sigma_tilde_inv)
    for _ in range(100):
        r = int(rng.integers(4))
        d = max(float(rng.normal(0, 0.5)), -state.gamma_tilde[r])
        state.apply_update(r, d)
        assert np.all(state.gamma_tilde >= 0)
        err = np.linalg.norm(state.Sigma_tilde_inv - np.linalg.inv(state.Sigma_tilde))
        assert err < 1e-8


def test_apply_update_refuses_negative_and_singular():
    state, *_ = _state(8)
    with pytest.raises(ValueError):
        state.apply_update(0, -1.0)
    state.gamma_tilde[0] = 100.0
    n1 = state.coefficients(0)[0]
    with pytest.raises(NumericalError):
        state.apply_update(0, -1.0 / n1)


def test_accepted_updates_do_not_increase_surrogate():
    # every coordinate move is a descent step for s_r
    state, *_ = _state(9)
    state.set_linearization_point()
    rng = np.random.default_rng(1)
    for _ in range(50):
        r = int(rng.integers(4))
        n1, n2, n3 = state.coefficients(r)
        d = state.coordinate_update(r)
        assert s_r(d, n1, n2, n3) <= s_r(0.0, n1, n2, n3) + 1e-12
        state.apply_update(r, d)


@pytest.mark.parametrize("update", ["exact", "linearized"])
def test_trace_monotone(update):
    rng = np.random.default_rng(3)
    cb = generate_codebook(24, 4, 0.5, seed=2)
    H = crandn(rng, 3, 32) + 1.0
    G = np.zeros((16, 32), complex)
    G[[1, 5, 9]] = 1.0
    Y = cb.C[:, [1, 5, 9]] @ H + crandn(rng, 24, 32)
    res = detect(Y, cb, EffectiveChannelModel(G, np.ones(16)), DetectorOptions(seed=0, update=update))
    tr = np.array(res.trace)
    if update == "exact":
        assert np.all(np.diff(tr) <= 1e-9)
    assert np.all(res.gamma_hat >= 0)
    assert res.iterations == len(tr) - 1


def test_modes_agree_without_mean():
    # [TRIVIAL] with G = 0 both modes produce identical iterates
    rng = np.random.default_rng(5)
    cb = generate_codebook(16, 3, 1.0, seed=1)
    Y = cb.C[:, [2]] @ crandn(rng, 1, 20) + crandn(rng, 16, 20)
    eff = EffectiveChannelModel(np.zeros((8, 20), complex), np.ones(8))
    for update in ("exact", "linearized"):
        a = detect(Y, cb, eff, DetectorOptions(seed=4, update=update))
        b = detect(Y, cb, None, DetectorOptions(seed=4, update=update, mode="zero_mean_baseline"))
        np.testing.assert_array_equal(a.gamma_hat, b.gamma_hat)


def test_single_codeword_noiseless_genie():
    # [DERIVED] exhaustive over r0 at 2^J = 16
    rng = np.random.default_rng(11)
    cb = generate_codebook(32, 4, 1.0, seed=3)
    M = 16
    g = np.exp(2j * np.pi * rng.uniform(size=M)) * math.sqrt(0.9)
    for r0 in range(16):
        h = g + math.sqrt(0.1) * crandn(rng, M)
        Y = np.outer(cb.C[:, r0], h) + 1e-3 * crandn(rng, 32, M)
        eff = genie_effective_channel([r0], g[None, :], np.array([0.1]), np.array([1.0]), 16,
                                      form="literal")
        res = detect(Y, cb, eff, DetectorOptions(seed=r0, sigma2=1e-6))
        assert int(np.argmax(res.gamma_hat)) == r0


def test_noise_only_has_no_large_peaks():
    # [DERIVED] spurious entries stay within the 1/sqrt(M) scale
    rng = np.random.default_rng(12)
    n0, M, sigma2 = 32, 64, 50.0
    cb = generate_codebook(n0, 4, 1.0, seed=4)
    for t in range(5):
        Y = math.sqrt(sigma2) * crandn(rng, n0, M)
        res = detect(Y, cb, None, DetectorOptions(seed=t, sigma2=sigma2, mode="zero_mean_baseline"))
        # scale of one codeword's power relative to the noise floor
        assert res.gamma_hat.max() * n0 / sigma2 < 10 / math.sqrt(M)
        assert np.all(np.diff(res.trace) <= 1e-9)


def test_grid_search_oracle():
    # [DERIVED] detect reaches the best grid value on tiny instances
    grid = np.arange(0.0, 1.5001, 0.05)
    mesh = np.stack(np.meshgrid(*[grid] * 3, indexing="ij"), -1).reshape(-1, 3)
    for seed in range(3):
        rng = np.random.default_rng(seed)
        C, gamma, G, Y = random_instance(rng, n0=6, N=3, M=16, active=[0, 2])
        res = detect(Y, C, EffectiveChannelModel(G, np.ones(3)), DetectorOptions(seed=seed, tol=1e-8))
        S = np.einsum("ir,kr,jr->kij", C, mesh, C.conj()) + np.eye(6)
        Si = np.linalg.inv(S)
        Sh = Y @ Y.conj().T / 16
        p = np.linalg.slogdet(S)[1] + np.real(np.einsum("kij,ji->k", Si, Sh))
        E = np.einsum("ir,kr,rm->kim", C, mesh, G)
        q = (np.real(np.einsum("kij,kjm,kim->k", Si, E, E.conj()))
             - 2 * np.real(np.einsum("kij,kjm,im->k", Si, E, Y.conj()))) / 16
        best = float(np.min(p + q))
        assert res.trace[-1] <= best + 1e-4


def test_select_support_examples():
    # [TRIVIAL] exact support, single peak and ties to the lower index
    g = np.array([0, 3.0, 0, 1.0, 0, 2.0])
    assert select_support(g, 3, 0).tolist() == [1, 3, 5]
    e = np.zeros(8)
    e[3] = 5
    assert select_support(e, 1, 0).tolist() == [3]
    tie = np.array([1.0, 0.5, 0.5, 0.5, 2.0])
    assert select_support(tie, 2, 1).tolist() == [0, 1, 4]
    with pytest.raises(ConfigError):
        select_support(tie, 4, 2)


@given(st.lists(st.floats(0, 10), min_size=2, max_size=30), st.integers(0, 30))
def test_select_support_is_top_k(values, k):
    g = np.array(values)
    k = min(k, g.size)
    idx = select_support(g, k, 0)
    assert idx.size == k and len(set(idx.tolist())) == k
    if 0 < k < g.size:
        rest = np.setdiff1d(np.arange(g.size), idx)
        assert g[idx].min() >= g[rest].max()


def test_genie_forms():
    rng = np.random.default_rng(0)
    G_los = crandn(rng, 3, 8)
    alpha = np.array([0.1, 0.2, 0.3])
    beta = np.array([1.0, 4.0, 0.25])
    cw = [2, 2, 5]
    lit = genie_effective_channel(cw, G_los, alpha, beta, 8, form="literal")
    np.testing.assert_allclose(lit.G_tilde[2], G_los[0] + G_los[1])
    assert lit.R[2] == pytest.approx(0.3) and lit.R[5] == pytest.approx(0.3) and lit.R[0] == 0
    cal = genie_effective_channel(cw, G_los, alpha, beta, 8)
    assert cal.gamma_true[2] == pytest.approx(5.0)
    assert cal.gamma_tilde_true[2] == pytest.approx(0.1 + 0.8)
    # mean of the superposed channel is reproduced at the true gamma_tilde
    np.testing.assert_allclose(cal.gamma_tilde_true[2] * cal.G_tilde[2], G_los[0] + 2 * G_los[1])
    assert cal.R[2] == pytest.approx(0.9 / 5.0)
    with pytest.raises(ValueError):
        genie_effective_channel(cw, G_los, alpha, beta, 8, form="other")


def test_prior_model_is_shared_across_codewords():
    from ura_sim.config import SystemConfig
    from ura_sim.population import build_population
    pop = build_population(SystemConfig(K_tot=30, K_a=3, M=8))
    eff = prior_effective_channel(pop, 3, 16)
    assert np.allclose(eff.G_tilde, eff.G_tilde[0]) and np.allclose(eff.R, eff.R[0])


def test_options_validation():
    with pytest.raises(ConfigError):
        DetectorOptions(mode="bad")
    with pytest.raises(ConfigError):
        DetectorOptions(sweeps=4).t_max(4)
    assert DetectorOptions().t_max(16) == 32
    with pytest.raises(ConfigError):
        DetectorOptions(order="zigzag")


def test_permutation_order_visits_every_coordinate():
    from ura_sim.inner_detector import _visit_order
    o = _visit_order(np.random.default_rng(0), 16, 40, "permutation")
    assert o.size == 40 and set(o[:16].tolist()) == set(range(16))
