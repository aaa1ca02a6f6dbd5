import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from learnedpf.errors import ConfigError, DimensionError, NumericalError
from learnedpf.numerics import make_rng
from learnedpf.ssm import (
    ModelSpec, NoiseLaw, SirParams, Trajectory, build_geometric_graph, build_measurement_matrix,
    graph_model, knn_graph, make_scenario, read_trajectory_csv, simulate, sir_model, sir_step,
    variance_from_snr, write_trajectory_csv,
)

# ---------------------------------------------------------------- graphs


@pytest.mark.parametrize("N", [4, 10, 25, 50])
def test_geometric_graph_invariants(N):
    A = build_geometric_graph(N, make_rng(0, N))
    assert np.isclose(np.linalg.norm(A, 2), 1.0, atol=1e-10)
    assert np.allclose(A, A.T)
    assert np.all(np.diag(A) == 0)
    assert np.all(A >= 0)
    # every node keeps at least its 3 chosen neighbours
    assert np.all(np.count_nonzero(A, axis=1) >= 3)


def test_geometric_graph_is_pure_function_of_seed():
    assert np.array_equal(build_geometric_graph(10, make_rng(5)), build_geometric_graph(10, make_rng(5)))


def test_geometric_graph_rejects_small_n():
    with pytest.raises(ConfigError):
        build_geometric_graph(3, make_rng(0))


def test_two_point_graph_is_single_normalized_edge():
    # hand construction: one mutual edge, weight exp(-d^2), normalized to 1
    A = knn_graph(np.array([[0.0, 0.0], [0.3, 0.4]]), k=1)
    assert np.allclose(A, [[0.0, 1.0], [1.0, 0.0]])


def test_knn_union_symmetrization():
    # point 2 is far away: it selects point 1, but nobody selects point 2
    pts = np.array([[0.0, 0.0], [0.1, 0.0], [5.0, 0.0]])
    A = knn_graph(pts, k=1)
    assert A[1, 2] > 0 and A[2, 1] == A[1, 2]


def test_measurement_matrix_examples():
    assert np.allclose(build_measurement_matrix(5, 5), np.eye(5))
    expected = np.concatenate([np.eye(2), np.eye(2)], axis=1) / np.sqrt(2)
    assert np.allclose(build_measurement_matrix(4, 2), expected)
    for N, M in [(10, 8), (25, 23), (7, 3)]:
        assert np.isclose(np.linalg.norm(build_measurement_matrix(N, M), 2), 1.0, atol=1e-10)
    with pytest.raises(ConfigError):
        build_measurement_matrix(3, 4)


def test_variance_from_snr_examples():
    assert variance_from_snr(np.ones(7), 0.0) == pytest.approx(7.0)
    assert variance_from_snr(np.ones(10), 5.0) == pytest.approx(3.16228, abs=1e-5)
    assert variance_from_snr(np.ones(50), 5.0) == pytest.approx(15.8114, abs=1e-4)
    with pytest.raises(ConfigError):
        variance_from_snr(np.zeros(3), 5.0)


# ---------------------------------------------------------------- noise

@pytest.mark.parametrize("family", ["gaussian", "exponential", "uniform"])
def test_noise_moments(family):
    law = NoiseLaw(family, 2.5)
    x = law.sample(1_000_000, make_rng(1, 2))
    se = np.sqrt(2.5 / x.size)
    assert abs(x.mean()) < 4 * se
    assert abs(x.var() / 2.5 - 1.0) < 0.02


def test_noise_supports():
    s = np.sqrt(2.0)
    e = NoiseLaw("exponential", 2.0).sample(100_000, make_rng(3))
    u = NoiseLaw("uniform", 2.0).sample(100_000, make_rng(4))
    assert e.min() >= -s
    assert np.all(np.abs(u) <= s * np.sqrt(3.0))


def test_noise_law_validation():
    with pytest.raises(ConfigError):
        NoiseLaw("laplace", 1.0)
    with pytest.raises(ConfigError):
        NoiseLaw("gaussian", 0.0)


@pytest.mark.parametrize("family", ["gaussian", "exponential", "uniform"])
def test_noise_logpdf_integrates_to_one(family):
    from scipy.integrate import quad
    law = NoiseLaw(family, 1.7)
    f = lambda r: np.exp(law.logpdf(np.array([r])))
    s = law.sigma
    lo, hi = {"gaussian": (-12 * s, 12 * s), "exponential": (-s, 40 * s),
              "uniform": (-s * np.sqrt(3), s * np.sqrt(3))}[family]
    assert quad(f, lo, hi, limit=200)[0] == pytest.approx(1.0, abs=1e-6)


def test_noise_logpdf_outside_support_is_minus_inf():
    assert NoiseLaw("exponential", 1.0).logpdf(np.array([-1.5])) == -np.inf
    assert NoiseLaw("uniform", 1.0).logpdf(np.array([2.0])) == -np.inf


# ---------------------------------------------------------------- SIR

def test_sir_step_examples():
    p = SirParams()
    assert np.allclose(sir_step(np.array([1000.0, 0.0, 0.0]), p), [1000.0, 0.0, 0.0])
    assert np.allclose(sir_step(np.array([997.0, 3.0, 0.0]), p), [995.95315, 3.96285, 0.084])
    noise = np.array([1.0, -2.0, 0.5])
    assert np.allclose(sir_step(np.array([997.0, 3.0, 0.0]), p, noise),
                       np.array([995.95315, 3.96285, 0.084]) + noise)


def test_sir_step_with_negligible_rates_leaves_state_unchanged():
    # rates must be positive, so "zero rates" is the limit of tiny ones
    x = np.array([500.0, 20.0, 7.0])
    assert np.allclose(sir_step(x, SirParams(beta=1e-300, gamma=1e-300, delta=1.0)), x)


def test_sir_params_validation():
    with pytest.raises(ConfigError):
        SirParams(beta=0.0)


def test_sir_zero_noise_conserves_population():
    p = SirParams()
    x = np.array([997.0, 3.0, 0.0])
    for _ in range(500):
        x = sir_step(x, p)
        assert abs(x.sum() - 1000.0) <= 16 * np.spacing(1000.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 2000), st.floats(0, 2000), st.floats(0, 2000))
def test_sir_increments_sum_to_zero(S, I, R):
    x = np.array([S, I, R])
    assert abs(sir_step(x, SirParams()).sum() - x.sum()) <= 1e-9 * max(1.0, x.sum(), S * I * 5e-4)


# ---------------------------------------------------------------- models and simulation

def test_model_spec_validation():
    with pytest.raises(DimensionError):
        ModelSpec(np.eye(3), np.eye(2), "identity", NoiseLaw("gaussian", 1), NoiseLaw("gaussian", 1),
                  np.zeros(3), NoiseLaw("gaussian", 1))
    with pytest.raises(ConfigError):
        ModelSpec(np.eye(2), np.eye(2), "relu", NoiseLaw("gaussian", 1), NoiseLaw("gaussian", 1),
                  np.zeros(2), NoiseLaw("gaussian", 1))


def test_simulate_deterministic_recursion_with_tiny_noise():
    # the smallest admissible variance stands in for zero noise
    A = build_geometric_graph(6, make_rng(0))
    m = graph_model(A, 4)
    tiny = NoiseLaw("gaussian", 1e-300)
    m = ModelSpec(m.A, m.C, "identity", tiny, tiny, m.initial_mean, tiny)
    traj = simulate(m, 5, make_rng(0))
    for t in range(6):
        xt = np.linalg.matrix_power(A, t) @ np.ones(6)
        assert np.allclose(traj.states[t], xt)
        assert np.allclose(traj.measurements[t], m.C @ xt)


def test_simulate_base_case_and_shapes():
    m = make_scenario("linear-gaussian", 10, 0)
    traj = simulate(m, 0, make_rng(0))
    assert traj.states.shape == (1, 10) and traj.measurements.shape == (1, 8)
    traj = simulate(m, 12, make_rng(0))
    assert traj.T == 12 and np.all(np.isfinite(traj.states))


def test_initial_state_mean():
    m = make_scenario("linear-gaussian", 10, 0)
    x0 = m.sample_initial(10_000, make_rng(9))
    se = np.sqrt(m.initial_noise.variance / 10_000)
    assert np.all(np.abs(x0.mean(axis=0) - 1.0) < 4 * se)


def test_sir_initial_law_has_stated_means():
    m = sir_model()
    x0 = m.sample_initial(200_000, make_rng(2))
    se = np.sqrt(500.0 / 200_000)
    assert np.all(np.abs(x0.mean(axis=0) - [997.0, 3.0, 0.0]) < 4 * se)


def test_simulate_raises_when_sir_overflows():
    m = sir_model()
    failures = 0
    for s in range(40):
        try:
            traj = simulate(m, 200, make_rng(s, 7))
            assert np.all(np.isfinite(traj.states))
        except NumericalError:
            failures += 1
    assert failures > 0


def test_scenarios_are_pure_and_validated():
    a, b = make_scenario("nonlinear-gaussian", 10, 3), make_scenario("nonlinear-gaussian", 10, 3)
    assert np.array_equal(a.A, b.A) and a.phi == "abs"
    assert make_scenario("linear-exponential", 10, 0).state_noise.family == "exponential"
    assert make_scenario("linear-uniform", 10, 0).measurement_noise.family == "uniform"
    assert make_scenario("linear-gaussian", 10, 0).linear_gaussian
    assert make_scenario("linear-gaussian", 10, 0).state_noise.variance == pytest.approx(3.16228, abs=1e-5)
    with pytest.raises(ConfigError):
        make_scenario("linear-gaussian", 10, 0, M=5)
    with pytest.raises(ConfigError):
        make_scenario("sir", 4, 0)
    with pytest.raises(ConfigError):
        make_scenario("weather", 10, 0)
    sir = make_scenario("sir", 3, 0)
    assert sir.N == 3 and sir.M == 2 and np.array_equal(sir.C, np.eye(3)[[0, 2]])


def test_trajectory_csv_round_trip(tmp_path):
    traj = simulate(make_scenario("linear-gaussian", 6, 1), 4, make_rng(1))
    path = tmp_path / "traj.csv"
    write_trajectory_csv(path, traj)
    header = path.read_text().splitlines()[0]
    assert header == "t,x_1,x_2,x_3,x_4,x_5,x_6,y_1,y_2,y_3,y_4"
    back = read_trajectory_csv(path)
    assert np.array_equal(back.states, traj.states)
    assert np.array_equal(back.measurements, traj.measurements)


def test_trajectory_length_mismatch():
    with pytest.raises(DimensionError):
        Trajectory(np.zeros((3, 2)), np.zeros((2, 1)))
