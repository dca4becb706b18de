import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssmlab.core import MultiLayerModel, SsmLayer, VanillaRnnLayer, forward_multilayer, random_stable_layer
from ssmlab.exceptions import ConfigError, NotDiagonalizableError
from ssmlab.memory_probe import (
    Family,
    MemoryTrace,
    ModelZooConfig,
    closed_form_memory_single_layer,
    closed_form_memory_two_layer,
    fit_envelope,
    generate_model,
    hippo_legs,
    probe_memory,
    slowest_timescale,
    suggest_horizon,
    verify_exponential_propagation,
)


def moderate_layer(m, rng, d_in=1, d_out=1):
    """Continuous stable layer with unit-norm input and output maps."""
    layer = random_stable_layer(m, d_in, d_out, time_kind="continuous", rng=rng, scale=0.5,
                                abscissa=(-1.0, -0.2))
    return layer.replace(U=layer.U / np.linalg.norm(layer.U), C=layer.C / np.linalg.norm(layer.C),
                         D=layer.D / max(1.0, np.linalg.norm(layer.D)))


# ---------------------------------------------------------------- closed forms


def test_scalar_closed_form():
    layer = SsmLayer([[-1.0]], [[1.0]], [[1.0]], time_kind="continuous")
    tr = closed_form_memory_single_layer(layer, [0.0, 1.0])
    np.testing.assert_allclose(tr.rho_hat, [1.0, 0.36787944117144233], rtol=1e-14)


def test_zero_readout_closed_form():
    layer = random_stable_layer(4, time_kind="continuous", rng=0).replace(C=np.zeros((1, 4)))
    assert not closed_form_memory_single_layer(layer, np.linspace(0, 5, 20)).rho_hat.any()


def test_defective_matrix_uses_expm_fallback():
    W = np.array([[-1.0, 1.0], [0.0, -1.0]])
    layer = SsmLayer(W, [[0.0], [1.0]], [[1.0, 0.0]], time_kind="continuous")
    tr = closed_form_memory_single_layer(layer, [0.5, 2.0])
    assert "expm-fallback" in tr.flags
    np.testing.assert_allclose(tr.rho_hat, [0.5 * np.exp(-0.5), 2.0 * np.exp(-2.0)], rtol=1e-12)


def test_two_layer_scalar_pair():
    a = SsmLayer([[-1.0]], [[2.0]], [[1.5]], time_kind="continuous")
    b = SsmLayer([[-2.0]], [[0.5]], [[-1.0]], time_kind="continuous")
    t = np.linspace(0, 6, 13)
    tr = closed_form_memory_two_layer([a, b], t)
    np.testing.assert_allclose(tr.rho_hat, (np.exp(-t) - np.exp(-2 * t)) * 2.0 * 1.5 * 0.5 * 1.0, atol=1e-15)


def test_two_layer_coincident_limit():
    a = SsmLayer([[-1.0]], [[1.0]], [[1.0]], time_kind="continuous")
    b = SsmLayer([[-1.0 - 1e-10]], [[3.0]], [[1.0]], time_kind="continuous")
    t = np.linspace(0, 5, 11)
    tr = closed_form_memory_two_layer([a, b], t)
    np.testing.assert_allclose(tr.rho_hat, 3.0 * t * np.exp(-t), rtol=1e-9)


def test_two_layer_rejects_defective():
    W = np.array([[-1.0, 1.0], [0.0, -1.0]])
    bad = SsmLayer(W, [[0.0], [1.0]], [[1.0, 0.0]], time_kind="continuous")
    good = SsmLayer([[-1.0]], [[1.0]], [[1.0]], time_kind="continuous")
    with pytest.raises(NotDiagonalizableError):
        closed_form_memory_two_layer([bad, good], [1.0])


# ---------------------------------------------------------------- probe


def test_probe_single_layer_matches_closed_form():
    layer = moderate_layer(8, np.random.default_rng(3))
    tr = probe_memory(layer, 10.0, dt=1e-2)
    ref = closed_form_memory_single_layer(layer, tr.times)
    assert np.max(np.abs(tr.rho_hat - ref.rho_hat)) <= 1e-4


def test_probe_error_is_second_order():
    layer = moderate_layer(6, np.random.default_rng(5))
    errs = []
    for dt in (2e-2, 1e-2, 5e-3):
        tr = probe_memory(layer, 10.0, dt=dt)
        errs.append(np.max(np.abs(tr.rho_hat - closed_form_memory_single_layer(layer, tr.times).rho_hat)))
    for a, b in zip(errs, errs[1:]):
        assert 3.0 <= a / b <= 5.0


def test_probe_two_layer_matches_closed_form():
    rng = np.random.default_rng(4)
    a, b = moderate_layer(4, rng), moderate_layer(4, rng)
    tr = probe_memory(MultiLayerModel([a, b], "identity"), 10.0, dt=1e-2)
    ref = closed_form_memory_two_layer([a, b], tr.times)
    assert np.max(np.abs(tr.rho_hat - ref.rho_hat)) <= 1e-4


def test_pure_feedthrough_has_no_memory():
    layer = SsmLayer(np.zeros((2, 2)), np.zeros((2, 1)), np.zeros((1, 2)), [[2.5]])
    tr = probe_memory(layer, 20)
    assert tr.rho_hat.size == 20 and not tr.rho_hat.any()
    cont = layer.replace(time_kind="continuous")
    assert not probe_memory(cont, 1.0, 0.1).rho_hat[1:].any()


def test_discrete_probe_is_kernel_norm():
    layer = random_stable_layer(5, 1, 2, rng=2)
    tr = probe_memory(layer, 30)
    # with h_{-1} = 0 the step response differences are C W^{k+1} U
    vals = [np.linalg.norm(layer.C @ np.linalg.matrix_power(layer.W, k + 1) @ layer.U) for k in range(30)]
    np.testing.assert_allclose(tr.rho_hat, vals, atol=1e-14)


def test_probe_overflow_truncates():
    layer = SsmLayer([[1e100]], [[1.0]], [[1.0]])
    tr = probe_memory(layer, 30)
    assert tr.overflow and "overflow" in tr.flags
    assert 0 < len(tr) < 30 and np.all(np.isfinite(tr.rho_hat))


def test_probe_validation():
    layer = random_stable_layer(2, d_in=2, rng=0)
    with pytest.raises(ConfigError):
        probe_memory(layer, 10, coordinate=2)
    with pytest.raises(ConfigError):
        probe_memory(layer, 10, dt=0)


@given(st.integers(0, 10**6), st.integers(1, 6))
@settings(max_examples=25, deadline=None)
def test_trace_invariants(seed, m):
    layer = random_stable_layer(m, 2, 2, rng=seed)
    tr = probe_memory(layer, 40, coordinate=seed % 2)
    assert tr.times.shape == tr.rho_hat.shape
    assert np.all(np.isfinite(tr.rho_hat)) and np.all(tr.rho_hat >= 0)


@given(st.integers(0, 10**6))
@settings(max_examples=25, deadline=None)
def test_coordinate_triangle_inequality(seed):
    rng = np.random.default_rng(seed)
    model = MultiLayerModel([random_stable_layer(6, 3, 4, rng=rng), random_stable_layer(5, 4, 2, rng=rng)])
    i, j = rng.choice(3, 2, replace=False)
    ri = probe_memory(model, 50, coordinate=int(i)).rho_hat
    rj = probe_memory(model, 50, coordinate=int(j)).rho_hat
    x = np.zeros((51, 3))
    x[:, [i, j]] = 1.0
    rij = np.linalg.norm(np.diff(forward_multilayer(model, x), axis=0), axis=1)
    assert np.all(rij <= ri + rj + 1e-12)


def test_memory_trace_validation():
    with pytest.raises(ValueError):
        MemoryTrace([0, 1], [1.0])
    with pytest.raises(ValueError):
        MemoryTrace([0, 1], [1.0, -1.0])


# ---------------------------------------------------------------- envelope


def test_envelope_exact_exponential():
    t = np.linspace(0, 20, 401)
    e = fit_envelope(MemoryTrace(t, np.exp(-0.5 * t)))
    assert e.c0 == pytest.approx(0.5, abs=1e-6)
    assert e.r2 >= 1 - 1e-9
    assert e.window[0] >= t[0] and e.window[1] <= t[-1]


def test_envelope_constant_trace():
    e = fit_envelope(MemoryTrace(np.arange(50.0), np.full(50, 0.3)))
    assert e.c0 == 0.0 and np.isnan(e.r2) and "r2-undefined" in e.flags


def test_envelope_zero_tail_is_degenerate():
    rho = np.zeros(40)
    rho[:5] = 1.0
    e = fit_envelope(MemoryTrace(np.arange(40.0), rho))
    assert e.degenerate and e.c0 == np.inf


def test_envelope_few_points_flagged():
    e = fit_envelope(MemoryTrace(np.arange(12.0), np.exp(-np.arange(12.0))))
    assert "fewer-than-10-points" in e.flags


@given(st.floats(0.01, 2.0), st.floats(-3, 3), st.floats(0.2, 1.0))
@settings(max_examples=30, deadline=None)
def test_envelope_invariants(rate, logc, frac):
    t = np.linspace(0, 10, 200)
    rng = np.random.default_rng(0)
    rho = np.exp(logc - rate * t + 0.05 * rng.standard_normal(t.size))
    e = fit_envelope(MemoryTrace(t, rho), frac)
    assert 0.0 <= e.r2 <= 1.0
    assert t[0] <= e.window[0] <= e.window[1] <= t[-1]


def test_naive_ssm_fixed_seed_envelope():
    model = generate_model(ModelZooConfig("naive-ssm", depth=3, hidden=64, seed=0))
    e = fit_envelope(probe_memory(model, suggest_horizon(model)))
    assert e.c0 > 0 and e.r2 >= 0.9
    assert e.c0 == pytest.approx(2.794e-3, rel=1e-3)  # regression value


# ---------------------------------------------------------------- zoo


def test_zoo_config_validation():
    with pytest.raises(ConfigError):
        ModelZooConfig("transformer")
    with pytest.raises(ConfigError):
        ModelZooConfig("naive-ssm", hidden=0)
    with pytest.raises(ConfigError):
        ModelZooConfig("gru", init={"dt": 0.1})
    cfg = ModelZooConfig("S4", depth=2, hidden=4, seed=3)
    assert cfg.family is Family.S4LIKE and cfg.model_id == "s4like-d2-m4-s3"


def test_zoo_is_deterministic():
    for fam in Family:
        a = generate_model(ModelZooConfig(fam, 2, 4, seed=11))
        b = generate_model(ModelZooConfig(fam, 2, 4, seed=11))
        x = np.random.default_rng(0).standard_normal((20, 1))
        assert np.array_equal(forward_multilayer(a, x), forward_multilayer(b, x))


@pytest.mark.parametrize("family", ["naive-ssm", "s4like"])
@given(seed=st.integers(0, 10**6), m=st.integers(1, 32))
@settings(max_examples=15, deadline=None)
def test_ssm_families_are_stable(family, seed, m):
    model = generate_model(ModelZooConfig(family, depth=2, hidden=m, seed=seed))
    assert all(layer.stable for layer in model.layers)


def test_hippo_structure():
    A, B = hippo_legs(4)
    assert A[2, 1] == pytest.approx(-np.sqrt(5) * np.sqrt(3))
    assert A[1, 1] == -2.0 and A[1, 2] == 0.0
    np.testing.assert_allclose(B, np.sqrt([1, 3, 5, 7]))


def test_naive_scalar_memory_is_geometric():
    model = generate_model(ModelZooConfig("naive-ssm", hidden=1, seed=5, init={"w_low": 0.9, "w_high": 0.9}))
    layer = model.layers[0]
    assert layer.W[0, 0] == pytest.approx(0.9)
    tr = probe_memory(model, 40)
    cu = abs(layer.C[0, 0] * layer.U[0, 0])
    np.testing.assert_allclose(tr.rho_hat, cu * 0.9 ** (np.arange(40) + 1), rtol=1e-12)


def test_rnn_without_recurrence_forgets():
    rng = np.random.default_rng(0)
    rnn = VanillaRnnLayer(np.zeros((4, 4)), rng.standard_normal((4, 1)), rng.standard_normal(4),
                          rng.standard_normal((1, 4)))
    tr = probe_memory(MultiLayerModel([rnn]), 20)
    assert not tr.rho_hat[tr.times >= 2].any()


@pytest.mark.parametrize("family", [f.value for f in Family])
def test_zoo_memory_decays(family):
    logs = []
    for seed in range(20):
        tr = probe_memory(generate_model(ModelZooConfig(family, 1, 8, seed=seed)), 256)
        logs.append(np.log10(np.maximum(tr.rho_hat, 1e-14)))
    mean = np.mean(logs, axis=0)
    assert mean[-16:].mean() < mean[:16].mean()


def test_slowest_timescale_and_horizon():
    layer = SsmLayer(np.diag([0.5, np.exp(-0.01)]), np.ones((2, 1)), np.ones((1, 2)))
    assert slowest_timescale(layer) == pytest.approx(100.0)
    assert suggest_horizon(layer) == pytest.approx(2000.0)
    assert suggest_horizon(SsmLayer([[0.1]], [[1.0]], [[1.0]])) == 512
    assert suggest_horizon(SsmLayer([[1.0]], [[1.0]], [[1.0]])) == 200_000


# ---------------------------------------------------------------- propagation


def test_propagation_tanh_example():
    rep = verify_exponential_propagation(0.5, lambda t: 1.0 + np.exp(-t), "tanh")
    assert rep["passed"] and rep["tail_decreasing"] and rep["bounded"]
    assert rep["final_value"] < 1e-3


def test_propagation_detects_slow_convergence():
    rep = verify_exponential_propagation(1.0, lambda t: 1.0 + np.exp(-0.5 * t), "identity")
    assert not rep["tail_decreasing"] and not rep["passed"]


def test_propagation_identity_is_equality():
    rep = verify_exponential_propagation(0.3, lambda t: -0.2 + 2 * np.exp(-t), "identity")
    np.testing.assert_allclose(rep["scaled"], rep["bound"], rtol=1e-15)


def test_propagation_constant_input_is_zero():
    rep = verify_exponential_propagation(0.5, lambda t: np.full_like(t, 0.4), "relu")
    assert not np.any(rep["scaled"]) and rep["passed"]
