import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad_vec
from scipy.linalg import expm
from scipy.stats import ortho_group

from ssmlab.activations import TANH, get_activation
from ssmlab.core import (
    ExpSumKernel,
    GruLayer,
    LstmLayer,
    MultiLayerModel,
    SampledKernel,
    SsmLayer,
    VanillaRnnLayer,
    affine_scan,
    conv_direct,
    conv_fft,
    discretize,
    dumps_model,
    forward_multilayer,
    loads_model,
    materialize_kernel,
    random_stable_layer,
    run_continuous,
    run_fft,
    run_parallel_scan,
    run_sequential,
    spectral_stability,
)
from ssmlab.exceptions import (
    ConfigError,
    DimensionError,
    EngineCompatibilityError,
    KernelLengthError,
    NumericalOverflowError,
)

HALF = SsmLayer([[0.5]], [[1.0]], [[1.0]], [[0.0]])


def matrix_power_oracle(layer, x):
    T = x.shape[0]
    powers = [np.eye(layer.m)]
    for _ in range(T):
        powers.append(layer.W @ powers[-1])
    y = np.zeros((T, layer.d_out))
    for k in range(T):
        for i in range(k + 1):
            y[k] += layer.C @ powers[k - i] @ layer.U @ x[i]
        y[k] += layer.D @ x[k]
    return y


layer_params = st.tuples(
    st.integers(1, 64),  # m
    st.integers(1, 512),  # T
    st.integers(1, 3),  # d_in
    st.integers(1, 3),  # d_out
    st.integers(0, 2**31 - 1),  # seed
)


# ---------------------------------------------------------------- layers


def test_layer_defaults_and_dimension_checks():
    layer = SsmLayer(np.zeros((3, 3)), np.ones((3, 2)), np.ones((1, 3)))
    assert layer.D.shape == (1, 2) and not layer.D.any()
    assert layer.b.shape == (3,) and not layer.has_bias
    with pytest.raises(DimensionError):
        SsmLayer(np.zeros((3, 2)), np.ones((3, 1)), np.ones((1, 3)))
    with pytest.raises(DimensionError):
        SsmLayer(np.zeros((3, 3)), np.ones((2, 1)), np.ones((1, 3)))
    with pytest.raises(ValueError):
        SsmLayer([[np.nan]], [[1.0]], [[1.0]])


def test_layer_arrays_are_read_only():
    layer = random_stable_layer(4, rng=0)
    with pytest.raises(ValueError):
        layer.W[0, 0] = 1.0


def test_model_chaining_checked():
    a = random_stable_layer(4, 1, 2, rng=0)
    b = random_stable_layer(4, 3, 1, rng=1)
    with pytest.raises(DimensionError):
        MultiLayerModel([a, b])
    with pytest.raises(DimensionError):
        MultiLayerModel([])
    with pytest.raises(DimensionError):
        MultiLayerModel([a, random_stable_layer(4, 2, 1, rng=1)], activations=["tanh", "relu"])


@pytest.mark.parametrize(
    "W, radius, stable",
    [
        (np.zeros((2, 2)), 0.0, True),
        (np.diag([0.5, 0.99]), 0.99, True),
    ],
)
def test_spectral_stability_examples(W, radius, stable):
    rep = spectral_stability(SsmLayer(W, np.ones((2, 1)), np.ones((1, 2))))
    assert rep.stable is stable
    assert rep.radius_or_abscissa == pytest.approx(radius, abs=1e-14)


def test_scaled_orthogonal_is_unstable():
    Q = ortho_group.rvs(5, random_state=3)
    rep = spectral_stability(SsmLayer(1.01 * Q, np.ones((5, 1)), np.ones((1, 5))))
    assert not rep.stable
    assert rep.radius_or_abscissa == pytest.approx(1.01, abs=1e-12)


def test_continuous_stability_uses_abscissa():
    layer = SsmLayer(np.diag([-0.5, -2.0]), np.ones((2, 1)), np.ones((1, 2)), time_kind="continuous")
    rep = spectral_stability(layer)
    assert rep.stable and rep.radius_or_abscissa == pytest.approx(-0.5)


@given(st.integers(1, 32), st.integers(0, 10**6), st.sampled_from(["discrete", "continuous"]))
@settings(max_examples=40, deadline=None)
def test_random_stable_layer_is_stable(m, seed, kind):
    assert random_stable_layer(m, time_kind=kind, rng=seed).stable


# ---------------------------------------------------------------- sequential engine


def test_zero_input_gives_zero_output():
    layer = random_stable_layer(5, rng=1)
    assert not run_sequential(layer, np.zeros((8, 1))).any()


@pytest.mark.parametrize("engine", [run_sequential, run_parallel_scan, run_fft])
def test_geometric_example(engine):
    y = engine(HALF, np.array([1.0, 0.0, 0.0]))
    np.testing.assert_allclose(y[:, 0], [1.0, 0.5, 0.25], atol=1e-15)


def test_sequential_matches_matrix_power_oracle():
    rng = np.random.default_rng(7)
    layer = random_stable_layer(16, rng=rng)
    x = rng.standard_normal((128, 1))
    np.testing.assert_allclose(run_sequential(layer, x), matrix_power_oracle(layer, x), atol=1e-10, rtol=0)


def test_bias_accumulates():
    layer = SsmLayer([[0.5]], [[0.0]], [[1.0]], b=[1.0])
    y = run_sequential(layer, np.zeros(4))[:, 0]
    np.testing.assert_allclose(y, [1.0, 1.5, 1.75, 1.875])
    np.testing.assert_allclose(run_fft(layer, np.zeros(4))[:, 0], y, atol=1e-14)
    np.testing.assert_allclose(run_parallel_scan(layer, np.zeros(4))[:, 0], y, atol=1e-14)


def test_overflow_names_first_step():
    layer = SsmLayer([[1e200]], [[1.0]], [[1.0]])
    with pytest.raises(NumericalOverflowError) as info:
        run_sequential(layer, np.ones(10))
    assert info.value.step == 2


def test_dimension_mismatch_raises():
    layer = random_stable_layer(3, d_in=2, rng=0)
    with pytest.raises(DimensionError):
        run_sequential(layer, np.ones((5, 3)))


def test_continuous_layer_rejected_by_discrete_engines():
    layer = random_stable_layer(3, time_kind="continuous", rng=0)
    with pytest.raises(ConfigError):
        run_sequential(layer, np.ones(4))


# ---------------------------------------------------------------- scan


def test_scan_single_step_is_exact():
    layer = random_stable_layer(6, rng=2)
    x = np.array([[0.7]])
    assert np.array_equal(run_parallel_scan(layer, x), run_sequential(layer, x))


def test_affine_scan_matches_loop():
    rng = np.random.default_rng(0)
    A = 0.5 * rng.standard_normal((4, 4))
    v = rng.standard_normal((13, 4))
    h, ref = np.zeros(4), []
    for k in range(13):
        h = A @ h + v[k]
        ref.append(h)
    np.testing.assert_allclose(affine_scan(A, v), np.array(ref), atol=1e-12)


@given(layer_params)
@settings(max_examples=40, deadline=None)
def test_engine_equivalence(params):
    m, T, d_in, d_out, seed = params
    rng = np.random.default_rng(seed)
    layer = random_stable_layer(m, d_in, d_out, rng=rng)
    x = rng.standard_normal((T, d_in))
    ref = run_sequential(layer, x)
    assert np.max(np.abs(run_parallel_scan(layer, x) - ref)) <= 1e-10
    assert np.max(np.abs(conv_fft(materialize_kernel(layer, T), x, layer.D) - ref)) <= 1e-8


@given(layer_params, st.data())
@settings(max_examples=30, deadline=None)
def test_causality(params, data):
    m, T, d_in, d_out, seed = params
    rng = np.random.default_rng(seed)
    layer = random_stable_layer(m, d_in, d_out, rng=rng)
    x = rng.standard_normal((T, d_in))
    k = data.draw(st.integers(1, T))
    for engine, tol in [(run_sequential, 0.0), (run_parallel_scan, 0.0), (run_fft, 1e-10)]:
        full, head = engine(layer, x), engine(layer, x[:k])
        assert np.max(np.abs(full[:k] - head)) <= tol


@given(st.integers(1, 32), st.integers(2, 200), st.integers(0, 10**6))
@settings(max_examples=30, deadline=None)
def test_impulse_response_is_kernel_plus_feedthrough(m, T, seed):
    layer = random_stable_layer(m, rng=seed)
    x = np.zeros((T, 1))
    x[0] = 1.0
    expected = materialize_kernel(layer, T).scalar.copy()
    expected[0] += layer.D[0, 0]
    assert np.max(np.abs(run_sequential(layer, x)[:, 0] - expected)) <= 1e-12


@given(st.integers(1, 16), st.integers(1, 100), st.integers(0, 50), st.integers(0, 10**6))
@settings(max_examples=30, deadline=None)
def test_time_homogeneity(m, T, z, seed):
    rng = np.random.default_rng(seed)
    layer = random_stable_layer(m, rng=rng)
    x = rng.standard_normal((T, 1))
    shifted = run_sequential(layer, np.vstack([np.zeros((z, 1)), x]))
    assert np.array_equal(shifted[:z], np.zeros((z, 1)))
    assert np.array_equal(shifted[z:], run_sequential(layer, x))


# ---------------------------------------------------------------- kernels and convolution


def test_kernel_of_nilpotent_layer():
    layer = SsmLayer(np.zeros((2, 2)), [[1.0], [2.0]], [[3.0, 1.0]])
    np.testing.assert_array_equal(materialize_kernel(layer, 4).scalar, [5.0, 0.0, 0.0, 0.0])


def test_kernel_geometric_example():
    layer = SsmLayer([[0.5]], [[1.0]], [[2.0]])
    np.testing.assert_allclose(materialize_kernel(layer, 5).scalar, [2, 1, 0.5, 0.25, 0.125])


def test_kernel_matches_repeated_multiplication():
    layer = random_stable_layer(8, 2, 3, rng=11)
    vals = materialize_kernel(layer, 30).values
    v = layer.U.copy()
    for j in range(30):
        assert np.max(np.abs(vals[j] - layer.C @ v)) <= 1e-12
        v = layer.W @ v


def test_delta_kernel_is_identity():
    x = np.random.default_rng(0).standard_normal(50)
    delta = np.zeros(50)
    delta[0] = 1.0
    np.testing.assert_allclose(conv_fft(SampledKernel(delta), x)[:, 0], x, atol=1e-14)


def test_fft_matches_sequential_at_example_scale():
    rng = np.random.default_rng(5)
    layer = random_stable_layer(32, rng=rng)
    x = rng.standard_normal((1024, 1))
    assert np.max(np.abs(run_fft(layer, x) - run_sequential(layer, x))) <= 1e-8


def test_impulse_recovers_kernel_through_fft():
    kernel = SampledKernel(np.exp(-0.3 * np.arange(20)))
    x = np.zeros(20)
    x[0] = 1.0
    y = conv_fft(kernel, x, D=[[2.0]])[:, 0]
    expected = kernel.scalar.copy()
    expected[0] += 2.0
    np.testing.assert_allclose(y, expected, atol=1e-14)


def test_direct_and_fft_convolution_agree():
    rng = np.random.default_rng(1)
    vals = rng.standard_normal((100, 2, 3))
    x = rng.standard_normal((100, 3))
    np.testing.assert_allclose(conv_fft(SampledKernel(vals), x), conv_direct(SampledKernel(vals), x), atol=1e-11)


def test_short_kernel_raises():
    with pytest.raises(KernelLengthError):
        conv_fft(SampledKernel(np.ones(3)), np.ones(5))


def test_exp_sum_kernel_two_term_example():
    k = ExpSumKernel([1.0, -1.0], [1.0, 2.0])
    np.testing.assert_allclose(k.sample(3), [0.0, np.exp(-1) - np.exp(-2), np.exp(-2) - np.exp(-4)])
    with pytest.raises(ValueError):
        ExpSumKernel([1.0], [-0.1])


# ---------------------------------------------------------------- multilayer


def test_depth_one_equals_single_layer():
    layer = random_stable_layer(5, rng=4)
    x = np.random.default_rng(0).standard_normal((40, 1))
    assert np.array_equal(forward_multilayer(MultiLayerModel([layer]), x), run_sequential(layer, x))


def test_two_layer_tanh_engines_agree():
    rng = np.random.default_rng(8)
    model = MultiLayerModel([random_stable_layer(8, 1, 3, rng=rng), random_stable_layer(8, 3, 1, rng=rng)], TANH)
    x = rng.standard_normal((300, 1))
    ref = forward_multilayer(model, x, "sequential")
    assert np.max(np.abs(forward_multilayer(model, x, "scan") - ref)) <= 1e-10
    assert np.max(np.abs(forward_multilayer(model, x, "fft") - ref)) <= 1e-8


def test_zero_recurrence_has_no_history():
    rng = np.random.default_rng(0)
    l1 = SsmLayer(np.zeros((4, 4)), rng.standard_normal((4, 1)), np.eye(4), b=rng.standard_normal(4))
    l2 = SsmLayer(np.zeros((1, 1)), rng.standard_normal((1, 4)), [[1.0]])
    model = MultiLayerModel([l1, l2], TANH)
    x = rng.standard_normal(20)
    base = forward_multilayer(model, x)
    for j in range(19):
        x2 = x.copy()
        x2[j] += 0.5
        diff = forward_multilayer(model, x2) - base
        assert np.all(diff[j + 1:] == 0.0)
        assert diff[j] != 0.0


def test_nonlinear_recurrence_forces_sequential():
    rng = np.random.default_rng(0)
    rnn = VanillaRnnLayer(0.1 * rng.standard_normal((3, 3)), rng.standard_normal((3, 1)), np.zeros(3), np.eye(3))
    model = MultiLayerModel([rnn])
    forward_multilayer(model, np.ones(5))
    with pytest.raises(EngineCompatibilityError):
        forward_multilayer(model, np.ones(5), "scan")


def test_gated_layers_run_and_stay_bounded():
    rng = np.random.default_rng(2)
    m = 4
    gru = GruLayer(rng.uniform(-0.5, 0.5, (3 * m, 1)), rng.uniform(-0.5, 0.5, (3 * m, m)),
                   np.zeros(3 * m), np.zeros(3 * m), np.eye(m))
    lstm = LstmLayer(rng.uniform(-0.5, 0.5, (4 * m, 1)), rng.uniform(-0.5, 0.5, (4 * m, m)),
                     np.zeros(4 * m), np.zeros(4 * m), np.eye(m))
    for layer in (gru, lstm):
        y = forward_multilayer(MultiLayerModel([layer]), rng.standard_normal((50, 1)))
        assert y.shape == (50, m) and np.all(np.abs(y) <= 1.0)


# ---------------------------------------------------------------- discretization


def test_zoh_zero_dynamics():
    layer = SsmLayer(np.zeros((2, 2)), [[1.0], [2.0]], np.ones((1, 2)), time_kind="continuous")
    d = discretize(layer, 0.25)
    np.testing.assert_allclose(d.W, np.eye(2), atol=1e-15)
    np.testing.assert_allclose(d.U, 0.25 * layer.U, atol=1e-15)


def test_zoh_scalar():
    d = discretize(SsmLayer([[-1.0]], [[1.0]], [[1.0]], time_kind="continuous"), 0.1)
    assert d.W[0, 0] == pytest.approx(0.904837418, abs=1e-9)
    assert d.U[0, 0] == pytest.approx(1 - np.exp(-0.1), abs=1e-14)


def test_zoh_impulse_matches_quadrature():
    layer = random_stable_layer(4, time_kind="continuous", rng=9, feedthrough=False)
    dt = 0.05
    d = discretize(layer, dt)
    x = np.zeros((40, 1))
    x[0] = 1.0
    y = run_sequential(d, x)[:, 0]
    for k in range(40):
        # input held at 1 on the first interval; state read at the end of interval k
        t = (k + 1) * dt
        ref, _ = quad_vec(lambda s: layer.C @ expm(layer.W * (t - s)) @ layer.U, 0.0, dt, epsabs=1e-13)
        assert abs(y[k] - ref[0, 0]) <= 1e-6


def test_bilinear_scalar():
    d = discretize(SsmLayer([[-1.0]], [[1.0]], [[1.0]], time_kind="continuous"), 0.1, "bilinear")
    assert d.W[0, 0] == pytest.approx((1 - 0.05) / (1 + 0.05))
    assert d.U[0, 0] == pytest.approx(0.1 / 1.05)


def test_discretize_requires_continuous():
    with pytest.raises(ConfigError):
        discretize(HALF, 0.1)


def continuous_reference(layer, u_fn, t_end, fine_dt=1e-4):
    t = np.arange(0.0, t_end + fine_dt / 2, fine_dt)
    return t, run_continuous(layer, u_fn(t)[:, None], fine_dt)[:, 0]


def test_zoh_converges_at_first_order():
    layer = random_stable_layer(4, time_kind="continuous", rng=3, feedthrough=False)
    t_end = 2.0
    t_ref, y_ref = continuous_reference(layer, np.cos, t_end)
    errors = []
    for dt in (0.04, 0.02, 0.01):
        n = int(round(t_end / dt))
        # sample x_k at the right end of the k-th hold interval
        tk = (np.arange(n) + 1) * dt
        y = run_sequential(discretize(layer, dt), np.cos(tk)[:, None])[:, 0]
        errors.append(np.max(np.abs(y - np.interp(tk, t_ref, y_ref))))
    ratios = [errors[i] / errors[i + 1] for i in range(2)]
    assert all(1.5 <= r <= 2.5 for r in ratios), ratios


def test_foh_simulation_is_exact_for_linear_input():
    layer = random_stable_layer(3, time_kind="continuous", rng=1, feedthrough=False)
    t = np.arange(0, 1.0001, 0.1)
    y = run_continuous(layer, t[:, None], 0.1)[:, 0]
    for k, tk in enumerate(t):
        ref, _ = quad_vec(lambda s: layer.C @ expm(layer.W * (tk - s)) @ layer.U * s, 0.0, tk, epsabs=1e-13)
        assert abs(y[k] - ref[0, 0]) <= 1e-10


# ---------------------------------------------------------------- serialization


def test_model_json_round_trip_is_lossless():
    rng = np.random.default_rng(3)
    model = MultiLayerModel(
        [random_stable_layer(5, 2, 3, rng=rng), random_stable_layer(4, 3, 2, rng=rng)], activations=["relu"]
    )
    text = dumps_model(model)
    doc = json.loads(text)
    assert set(doc) >= {"version", "time_kind", "layers", "activations"}
    assert set(doc["layers"][0]) >= {"W", "U", "C", "D", "b"}
    again = loads_model(text)
    for a, b in zip(model.layers, again.layers):
        for name in "WUCDb":
            assert np.array_equal(getattr(a, name), getattr(b, name))
    assert [a.name for a in again.activations] == ["relu"]
    x = rng.standard_normal((20, 2))
    assert np.array_equal(forward_multilayer(model, x), forward_multilayer(again, x))


def test_gated_round_trip():
    rng = np.random.default_rng(0)
    m = 3
    gru = GruLayer(rng.standard_normal((3 * m, 1)), rng.standard_normal((3 * m, m)),
                   rng.standard_normal(3 * m), rng.standard_normal(3 * m), np.eye(m))
    model = MultiLayerModel([gru, random_stable_layer(2, m, 1, rng=1)], "tanh")
    again = loads_model(dumps_model(model))
    x = rng.standard_normal((10, 1))
    assert np.array_equal(forward_multilayer(model, x), forward_multilayer(again, x))


def test_activation_lookup():
    assert get_activation("tanh") is TANH
    with pytest.raises(ConfigError):
        get_activation("swishy")
