import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import expit

from conftest import directional_check
from learnedpf.errors import ContractError, DimensionError, StoreError
from learnedpf.numerics import autodiff as ad, make_rng
from learnedpf.proposals import (
    GaussianProposalParams, GNNProposal, ParamStore, ProposalConfig, build_proposal,
    gaussian_sample, init_params, kernel_covariance, reparam_sample,
)
from learnedpf.proposals.learned import LOG_PSI_FLOOR
from learnedpf.ssm import ModelSpec, NoiseLaw, make_scenario

SMALL = dict(hidden=(8, 6), rnn_hidden=5, gnn_hidden=(4, 3), gnn_order=2, psi_layers=3)


def toy_model(N=1, M=1):
    g = NoiseLaw("gaussian", 1.0)
    return ModelSpec(np.eye(N), np.eye(N)[:M], "identity", g, g, np.zeros(N), g)


def small(family, model, T=3, seed=0, **kw):
    cfg = ProposalConfig(family=family, **{**SMALL, **kw})
    return build_proposal(model, init_params(model, T, cfg, make_rng(seed)), cfg, T)


# ---------------------------------------------------------------- kernel covariance and Gaussian head

def test_kernel_covariance_examples():
    assert np.allclose(kernel_covariance(np.full(3, 0.7), np.eye(3)), np.ones((3, 3)))
    e = np.exp(-1.0)
    assert np.allclose(kernel_covariance(np.array([0.0, 1.0]), np.eye(2)), [[1, e], [e, 1]])


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_kernel_covariance_is_psd(n, seed):
    r = np.random.default_rng(seed)
    S = kernel_covariance(r.normal(0, 3, n), r.normal(0, 2, (n, n)))
    assert np.allclose(S, S.T)
    assert np.linalg.eigvalsh(S).min() >= -1e-10 * max(1.0, np.abs(S).max())


def test_gaussian_sample_jitter_only_stays_at_mean():
    mu = np.array([[1.0, -2.0, 3.0]])
    gp = GaussianProposalParams.from_cov(mu, np.zeros((3, 3)))
    x, _ = gaussian_sample(gp, make_rng(0))
    assert np.all(np.abs(x - mu) <= 4 * np.sqrt(gp.jitter))


def test_gaussian_log_density_at_mean():
    gp = GaussianProposalParams(np.zeros((1, 2)), np.eye(2), np.eye(2))
    assert gp.logpdf(np.zeros((1, 2)))[0] == pytest.approx(-1.83788, abs=1e-5)


def test_gaussian_sample_empirical_covariance():
    r = make_rng(1)
    B = r.standard_normal((3, 3))
    S = B @ B.T + np.eye(3)
    gp = GaussianProposalParams.from_cov(np.zeros((1_000_000, 3)), S, jitter=0.0)
    x, log_pi = gaussian_sample(gp, r)
    emp = np.cov(x.T)
    assert np.linalg.norm(emp - S) / np.linalg.norm(S) < 0.02
    head = GaussianProposalParams(np.zeros((5, 3)), S, gp.chol)
    assert np.allclose(log_pi[:5], head.logpdf(x[:5]))


@pytest.mark.parametrize("seed", range(5))
def test_reparametrized_sample_gradient(seed):
    r = np.random.default_rng(seed)
    u = r.standard_normal((4, 3))
    w = r.standard_normal((4, 3))
    params = {"mu": r.standard_normal((4, 3)), "B": r.standard_normal((3, 3))}

    def f(p):
        cov = ad.matmul(p["B"], ad.transpose(p["B"])) + np.eye(3)
        x, _ = reparam_sample(p["mu"], cov, u)
        return ad.sum_(x * w)

    assert directional_check(f, params, r) < 1e-4


# ---------------------------------------------------------------- MLP family

def test_mlp_zero_parameters_give_zero_mean_and_covariance():
    m = make_scenario("linear-gaussian", 6, 0)
    prop = small("mlp", m)
    for k in prop.store:
        prop.store[k] = np.zeros_like(prop.store[k])
    gp, _ = prop.gaussian_params(1, np.ones((2, 6)), np.ones(4))
    assert np.all(gp.mean == 0) and np.all(gp.cov == 0)


def test_mlp_single_hidden_unit_matches_hand_forward():
    m = toy_model()
    prop = small("mlp", m, T=1, hidden=(1,))
    s = prop.store
    s["mean.t1.l0.W"], s["mean.t1.l0.b"] = np.array([[0.3, -0.7]]), np.array([0.1])
    s["mean.t1.l1.W"], s["mean.t1.l1.b"] = np.array([[1.5]]), np.array([-0.2])
    s["cov.l0.W"], s["cov.l0.b"] = np.array([[0.4, 0.2]]), np.array([0.0])
    s["cov.l1.W"], s["cov.l1.b"] = np.array([[2.0]]), np.array([0.5])
    s["cov.C"] = np.array([[1.3]])
    x, y = 0.8, -0.4
    gp, _ = prop.gaussian_params(1, np.array([[x]]), np.array([y]))
    mu = 1.5 * np.tanh(0.3 * x - 0.7 * y + 0.1) - 0.2
    assert abs(gp.mean[0, 0] - mu) <= 1e-12
    # a single component has K = 1, so the covariance is C^2 whatever z is
    assert abs(gp.cov[0, 0] - 1.69) <= 1e-12


def test_mlp_is_deterministic_and_per_step():
    m = make_scenario("linear-gaussian", 6, 0)
    prop = small("mlp", m)
    xp, y = make_rng(0).standard_normal((3, 6)), np.ones(4)
    a, _ = prop.gaussian_params(2, xp, y)
    b, _ = prop.gaussian_params(2, xp, y)
    c, _ = prop.gaussian_params(3, xp, y)
    assert np.array_equal(a.mean, b.mean) and np.array_equal(a.cov, b.cov)
    assert not np.allclose(a.mean, c.mean)
    assert np.allclose(a.cov, c.cov)  # covariance network is shared across steps


def test_missing_time_step_is_a_store_error():
    m = make_scenario("linear-gaussian", 6, 0)
    for family in ("mlp", "gnn", "psi"):
        prop = small(family, m, T=2)
        with pytest.raises(StoreError):
            prop.sample(3, np.ones((2, 6)), np.ones(4), prop.initial_memory(2), make_rng(0))
    prop = small("mlp", m, T=2)
    del prop.store["mean.t2.l0.W"]
    with pytest.raises(StoreError):
        prop.gaussian_params(2, np.ones((2, 6)), np.ones(4))


def test_scaling_and_skip_connection():
    m = make_scenario("nonlinear-gaussian", 6, 0)
    base = small("mlp", m, T=1)
    scaled = build_proposal(m, base.store, ProposalConfig(family="mlp", **SMALL, scale=10.0,
                                                          mean_scale=2.0, cov_scale=3.0, skip=True), 1)
    xp, y = make_rng(0).standard_normal((2, 6)), np.ones(4)
    g0, _ = base.gaussian_params(1, xp / 10.0, y / 10.0)
    g1, _ = scaled.gaussian_params(1, xp, y)
    assert np.allclose(g1.mean, 2.0 * g0.mean + m.transition_mean(xp))
    assert np.allclose(g1.cov, 9.0 * g0.cov)


# ---------------------------------------------------------------- RNN family

def test_rnn_scalar_hidden_matches_hand_recursion():
    m = toy_model()
    prop = small("rnn", m, T=5, rnn_hidden=1)
    r = make_rng(4)
    for k in prop.store:
        prop.store[k] = r.standard_normal(prop.store[k].shape)
    s = prop.store
    h, c = np.zeros(1), np.zeros(1)
    mem = prop.initial_memory(1)
    for t, (x, y) in enumerate([(0.5, 1.0), (-0.3, 0.2), (1.1, -0.9)], start=1):
        pre = s["rnn.W"] @ np.array([x, y, h[0]]) + s["rnn.b"]
        i, f, g, o = expit(pre[0]), expit(pre[1]), np.tanh(pre[2]), expit(pre[3])
        c = f * c + i * g
        h = o * np.tanh(c)
        mu = s["rnn.mean.W"] @ h + s["rnn.mean.b"]
        gp, mem = prop.gaussian_params(t, np.array([[x]]), np.array([y]), mem)
        assert abs(gp.mean[0, 0] - mu[0]) <= 1e-12
        assert abs(mem[0][0, 0] - h[0]) <= 1e-12 and abs(mem[1][0, 0] - c[0]) <= 1e-12


def test_rnn_parameters_are_time_invariant():
    m = make_scenario("linear-gaussian", 6, 0)
    prop = small("rnn", m, T=4)
    xp, y = make_rng(0).standard_normal((3, 6)), np.ones(4)
    a, _ = prop.gaussian_params(1, xp, y, prop.initial_memory(3))
    b, _ = prop.gaussian_params(4, xp, y, prop.initial_memory(3))
    assert np.array_equal(a.mean, b.mean) and np.array_equal(a.cov, b.cov)


def test_rnn_zero_parameters_give_zero_mean():
    m = make_scenario("linear-gaussian", 6, 0)
    prop = small("rnn", m)
    for k in prop.store:
        prop.store[k] = np.zeros_like(prop.store[k])
    gp, _ = prop.gaussian_params(1, np.ones((2, 6)), np.ones(4), prop.initial_memory(2))
    assert np.all(gp.mean == 0)


def test_rnn_memory_size_mismatch():
    m = make_scenario("linear-gaussian", 6, 0)
    prop = small("rnn", m)
    with pytest.raises(ContractError):
        prop.gaussian_params(1, np.ones((2, 6)), np.ones(4), (np.zeros((2, 3)), np.zeros((2, 3))))
    with pytest.raises(ContractError):
        prop.gaussian_params(1, np.ones((2, 6)), np.ones(4), None)


# ---------------------------------------------------------------- GNN family

def test_gnn_is_permutation_equivariant():
    m = make_scenario("linear-gaussian", 7, 3)
    prop = small("gnn", m, T=1)
    perm = make_rng(5).permutation(7)
    P = np.eye(7)[perm]
    mp = ModelSpec(P @ m.A @ P.T, m.C, "identity", m.state_noise, m.measurement_noise,
                   m.initial_mean, m.initial_noise)
    store = prop.store.copy()
    for name in ("gnn.mean.t1.adapt", "gnn.cov.adapt"):
        store[name] = P @ store[name]
    store["gnn.C"] = P @ store["gnn.C"] @ P.T
    permuted = build_proposal(mp, store, prop.config, 1)
    xp, y = make_rng(1).standard_normal((3, 7)), make_rng(2).standard_normal(5)
    g, _ = prop.gaussian_params(1, xp, y)
    gperm, _ = permuted.gaussian_params(1, xp @ P.T, y)
    assert np.allclose(gperm.mean, g.mean @ P.T)
    assert np.allclose(gperm.cov, P @ g.cov @ P.T)


def test_gnn_zero_order_is_shared_per_node_mlp():
    m = make_scenario("linear-gaussian", 6, 0)
    prop = small("gnn", m, T=1, gnn_order=0)
    xp, y = make_rng(1).standard_normal((1, 6)), make_rng(2).standard_normal(4)
    gp, _ = prop.gaussian_params(1, xp, y)
    s = prop.store
    feats = np.stack([xp[0], s["gnn.mean.t1.adapt"] @ y], axis=-1)
    z = feats
    for i in range(3):
        z = z @ s[f"gnn.mean.t1.l{i}.d0"] + s[f"gnn.mean.t1.l{i}.b"]
        if i < 2:
            z = np.tanh(z)
    assert np.allclose(gp.mean[0], z[:, 0])


def test_gnn_zero_filters_give_bias_columns():
    m = make_scenario("linear-gaussian", 6, 0)
    prop = small("gnn", m, T=1)
    for k in list(prop.store):
        if ".d" in k:
            prop.store[k] = np.zeros_like(prop.store[k])
    prop.store["gnn.mean.t1.l2.b"] = np.array([0.7])
    gp, _ = prop.gaussian_params(1, np.ones((2, 6)), np.ones(4))
    assert np.allclose(gp.mean, 0.7)


def test_gnn_rejects_wrong_graph():
    m = make_scenario("linear-gaussian", 6, 0)
    prop = small("gnn", m, T=1)
    with pytest.raises(DimensionError):
        GNNProposal(m, prop.store, prop.config, 1, S=np.eye(5))


# ---------------------------------------------------------------- Psi family

def test_psi_zero_matrices_give_zero():
    m = make_scenario("linear-gaussian", 6, 0)
    prop = small("psi", m, T=1)
    for k in prop.store:
        prop.store[k] = np.zeros_like(prop.store[k])
    x, _, _ = prop.sample(1, np.ones((4, 6)), np.ones(4), None, make_rng(0))
    assert np.all(x == 0)


def unit_psi():
    m = toy_model()
    prop = small("psi", m, T=1, psi_layers=1)
    s = prop.store
    s["psi.t1.A"], s["psi.t1.B"], s["psi.t1.C"] = np.eye(1), np.zeros((1, 1)), np.zeros((1, 1))
    s["psi.t1.l0.W"], s["psi.t1.l0.b"] = np.eye(1), np.zeros(1)
    return prop


def test_psi_single_unit_is_tanh_of_uniform():
    prop = unit_psi()
    u = make_rng(0).uniform(size=(1000, 1))
    x, log_pi = prop.transform(1, u, np.zeros((1000, 1)), np.zeros(1))
    assert np.allclose(x, np.tanh(u))
    assert np.all((x > 0) & (x < np.tanh(1.0)))
    assert np.allclose(log_pi, -np.log1p(-x[:, 0] ** 2))


def test_psi_density_change_of_variables():
    prop = unit_psi()
    x = np.array([[0.1], [0.5], [0.7]])
    lp = prop.logpdf(1, np.zeros((3, 1)), np.zeros(1), x)
    assert np.allclose(lp, np.log(1.0 / (1.0 - x[:, 0] ** 2)))
    out = prop.logpdf(1, np.zeros((3, 1)), np.zeros(1), np.array([[-0.1], [0.9], [2.0]]))
    assert np.all(out == LOG_PSI_FLOOR)


def test_psi_forward_and_inverse_densities_agree():
    m = make_scenario("linear-gaussian", 6, 0)
    prop = small("psi", m, T=2, psi_layers=2)
    xp = make_rng(1).standard_normal((50, 6))
    y = np.ones(4)
    x, log_pi, _ = prop.sample(2, xp, y, None, make_rng(2))
    # near-saturated tanh units lose digits in 1 - a^2, hence the relative tolerance
    assert np.allclose(prop.logpdf(2, xp, y, x), log_pi, rtol=1e-3, atol=1e-6)


def test_psi_density_integrates_to_one_in_one_dimension():
    m = toy_model()
    prop = small("psi", m, T=1, psi_layers=9, seed=3)
    u = make_rng(0).uniform(size=(20_000, 1))
    xs, _ = prop.transform(1, u, np.full((20_000, 1), 0.3), np.array([-0.2]))
    lo, hi = xs.min() - 0.05, xs.max() + 0.05
    grid = np.linspace(lo, hi, 400_001)[:, None]
    dens = np.exp(prop.logpdf(1, np.full((len(grid), 1), 0.3), np.array([-0.2]), grid))
    assert np.sum(dens) * (grid[1, 0] - grid[0, 0]) == pytest.approx(1.0, abs=1e-2)


# ---------------------------------------------------------------- Gaussian heads: entropy and gradients

@pytest.mark.parametrize("family", ["mlp", "rnn", "gnn"])
def test_gaussian_head_self_sample_entropy(family):
    m = make_scenario("linear-gaussian", 6, 0)
    prop = small(family, m, T=1)
    n = 100_000
    xp = np.tile(make_rng(1).standard_normal((1, 6)), (n, 1))
    x, log_pi, _ = prop.sample(1, xp, np.ones(4), prop.initial_memory(n), make_rng(2))
    gp, _ = prop.gaussian_params(1, xp[:1], np.ones(4), prop.initial_memory(1))
    L = gp.chol[0] if gp.chol.ndim == 3 else gp.chol
    entropy = 0.5 * 6 * np.log(2 * np.pi * np.e) + np.sum(np.log(np.diag(L)))
    se = np.std(log_pi) / np.sqrt(n)
    assert abs(-np.mean(log_pi) - entropy) < 3 * se


@pytest.mark.parametrize("family", ["mlp", "rnn", "gnn", "psi"])
def test_rsample_gradients_match_finite_differences(family):
    m = make_scenario("nonlinear-gaussian", 5, 0)
    prop = small(family, m, T=2, psi_layers=2)
    xp = make_rng(3).standard_normal((3, 5))
    y = np.ones(3)
    w = make_rng(4).standard_normal((3, 5))

    def f(p):
        mem = prop.initial_memory(3)
        x, _, mem = prop.rsample(1, xp, y, mem, p, make_rng(9))
        x2, _, _ = prop.rsample(2, x, y, mem, p, make_rng(10))
        return ad.sum_(x2 * w)

    assert directional_check(f, dict(prop.store), make_rng(5)) < 1e-4


# ---------------------------------------------------------------- store

def test_store_round_trip_is_bit_exact(tmp_path):
    m = make_scenario("linear-gaussian", 6, 0)
    store = small("gnn", m).store
    path = tmp_path / "ck.npz"
    store.save(path)
    back = ParamStore.load(path)
    assert set(back) == set(store)
    assert all(np.array_equal(back[k], store[k]) for k in store)
    assert back.checksum() == store.checksum()


def test_store_errors(tmp_path):
    s = ParamStore({"a": np.zeros(3)})
    with pytest.raises(StoreError):
        s["missing"]
    with pytest.raises(StoreError):
        s["a"] = np.zeros(4)
    np.savez(tmp_path / "plain.npz", a=np.zeros(2))
    with pytest.raises(StoreError):
        ParamStore.load(tmp_path / "plain.npz")


def test_init_params_deterministic():
    m = make_scenario("linear-gaussian", 6, 0)
    cfg = ProposalConfig(family="mlp", **SMALL)
    a = init_params(m, 3, cfg, make_rng(7))
    b = init_params(m, 3, cfg, make_rng(7))
    assert a.checksum() == b.checksum()
    assert "mean.t3.l0.W" in a and "cov.C" in a and "mean.t4.l0.W" not in a


def test_proposal_config_validation():
    with pytest.raises(ContractError):
        ProposalConfig(family="transformer")
    with pytest.raises(ContractError):
        ProposalConfig(scale=0.0)
