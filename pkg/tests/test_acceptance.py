"""End-to-end acceptance checks. Each test records one PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py`` or ``python tests/test_acceptance.py``.
"""

import time
import warnings

import numpy as np
import pytest

from conftest import ACCEPTANCE
from ssmlab.constructions import (
    ScalarFunctionSpec,
    VolterraSpec,
    VolterraTerm,
    build_elementwise,
    build_ka_pipeline,
    build_volterra,
    compile_expr,
    product_decomposition,
    quadrature_reference,
)
from ssmlab.core import (
    ExpSumKernel,
    MultiLayerModel,
    conv_direct,
    conv_fft,
    materialize_kernel,
    random_stable_layer,
    run_fft,
    run_parallel_scan,
    run_sequential,
)
from ssmlab.exceptions import IllConditionedWarning
from ssmlab.experiments import loglog_slope
from ssmlab.kernel_fit import BUILTIN_TARGETS, FitProblem, fit_nonlinear_lsq, fit_sweep
from ssmlab.memory_probe import (
    ModelZooConfig,
    closed_form_memory_single_layer,
    closed_form_memory_two_layer,
    fit_envelope,
    generate_model,
    probe_memory,
    suggest_horizon,
    verify_exponential_propagation,
)


def record(key, title, ok, detail, started):
    line = f"{key} {title}: {'PASS' if ok else 'FAIL'} ({detail}; {time.perf_counter() - started:.1f}s)"
    ACCEPTANCE[key] = line
    print(line)
    assert ok, line


def test_c1_engine_equivalence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(20240)
    scan_err = fft_err = 0.0
    for i in range(200):
        # the first draw is the largest allowed size
        m, T = (64, 4096) if i == 0 else (int(rng.integers(1, 65)), int(rng.integers(1, 4097)))
        d_in, d_out = (int(v) for v in rng.integers(1, 4, 2))
        layer = random_stable_layer(m, d_in, d_out, rng=rng)
        x = rng.standard_normal((T, d_in))
        ref = run_sequential(layer, x)
        scan_err = max(scan_err, float(np.max(np.abs(run_parallel_scan(layer, x) - ref))))
        fft_err = max(fft_err, float(np.max(np.abs(run_fft(layer, x) - ref))))
    elapsed = time.perf_counter() - t0
    ok = scan_err <= 1e-10 and fft_err <= 1e-8 and elapsed <= 120
    record("C1", "engine equivalence", ok, f"scan {scan_err:.2e}, fft {fft_err:.2e} over 200 layers", t0)


def test_c2_kernel_fit_exactness_and_monotonicity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst_in_class = 0.0
    for m in range(1, 5):
        for _ in range(5):
            lam = np.sort(rng.uniform(0.1, 3.0, m)) + 0.3 * np.arange(m)
            c = rng.uniform(0.5, 1.5, m) * rng.choice([-1, 1], m)
            r = fit_nonlinear_lsq(FitProblem(ExpSumKernel(c, lam), m, 10.0), seed=0)
            worst_in_class = max(worst_in_class, r.sup_error)
    monotone = True
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IllConditionedWarning)
        for name, target in sorted(BUILTIN_TARGETS.items()):
            errs = [r.sup_error for r in fit_sweep(lambda k: FitProblem(target, k, 10.0), range(1, 9), seed=0)]
            # roundoff-level ties may tick up by a few ulps
            monotone &= all(b <= a + 1e-12 for a, b in zip(errs, errs[1:]))
    elapsed = time.perf_counter() - t0
    ok = worst_in_class <= 1e-8 and monotone and elapsed <= 60
    record("C2", "kernel fit", ok, f"in-class worst {worst_in_class:.1e}, sweeps monotone={monotone}", t0)


def unit_layer(m, rng):
    layer = random_stable_layer(m, time_kind="continuous", rng=rng, scale=0.5, abscissa=(-1.0, -0.2))
    return layer.replace(U=layer.U / np.linalg.norm(layer.U), C=layer.C / np.linalg.norm(layer.C),
                         D=layer.D / max(1.0, np.linalg.norm(layer.D)))


def test_c3_probe_matches_closed_forms():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    singles = [unit_layer(8, rng) for _ in range(50)]
    pairs = [(unit_layer(4, rng), unit_layer(4, rng)) for _ in range(50)]

    def max_err(dt):
        e1 = e2 = 0.0
        for layer in singles:
            tr = probe_memory(layer, 10.0, dt=dt)
            e1 = max(e1, float(np.max(np.abs(tr.rho_hat - closed_form_memory_single_layer(layer, tr.times).rho_hat))))
        for a, b in pairs:
            tr = probe_memory(MultiLayerModel([a, b]), 10.0, dt=dt)
            e2 = max(e2, float(np.max(np.abs(tr.rho_hat - closed_form_memory_two_layer([a, b], tr.times).rho_hat))))
        return e1, e2

    e1, e2 = max_err(1e-2)
    h1, h2 = max_err(5e-3)
    ratio = max(e1, e2) / max(h1, h2)
    ok = e1 <= 1e-4 and e2 <= 1e-4 and 3 <= ratio <= 5 and time.perf_counter() - t0 <= 120
    record("C3", "memory probe oracles", ok, f"single {e1:.1e}, two-layer {e2:.1e}, halving ratio {ratio:.2f}", t0)


def test_c4_naive_ssm_exponential_memory():
    t0 = time.perf_counter()
    hits = 0
    for seed in range(100):
        model = generate_model(ModelZooConfig("naive-ssm", depth=3, hidden=64, seed=seed))
        env = fit_envelope(probe_memory(model, suggest_horizon(model)), 0.5)
        hits += bool(env.c0 > 0 and env.r2 >= 0.9)
    ok = hits >= 95 and time.perf_counter() - t0 <= 300
    record("C4", "exponential memory decay", ok, f"{hits}/100 seeds with c0 > 0 and r2 >= 0.9", t0)


def test_c5_s4_decays_slower_than_naive():
    t0 = time.perf_counter()
    med = {}
    for family in ("s4like", "naive-ssm"):
        c0 = [fit_envelope(probe_memory(generate_model(ModelZooConfig(family, 3, 64, seed=s)), 2048)).c0
              for s in range(100)]
        med[family] = float(np.median(c0))
    ok = med["s4like"] < med["naive-ssm"] and time.perf_counter() - t0 <= 300
    record("C5", "rank of decay rates", ok, f"median c0 s4like {med['s4like']:.2e} vs naive {med['naive-ssm']:.2e}",
           t0)


def test_c6_constructions():
    t0 = time.perf_counter()
    sin = ScalarFunctionSpec(compile_expr("sin(x)", ("x",)), (-np.pi, np.pi))
    ew = build_elementwise(sin, 32, 0.05, seed=0)

    ka = build_ka_pipeline(product_decomposition(), tol=0.02, seed=0)
    g = np.linspace(-1, 1, 21)
    X = np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2)
    ka_err = float(np.max(np.abs(ka.predict(X) - X[:, 0] * X[:, 1])))

    kern = lambda a, b: np.exp(-a - b)  # noqa: E731
    vb = build_volterra(VolterraSpec((VolterraTerm(2, kernel=kern, rank=1),), h0=0.5), 2, 1e-3)
    rng = np.random.default_rng(11)
    dt = 0.01
    t = np.arange(0, 10 + dt / 2, dt)
    idx = np.arange(10, t.size, 10)
    worst = 0.0
    for _ in range(10):
        amp, freq, phase = rng.uniform(0.2, 1.0, 3), rng.uniform(0.2, 2.0, 3), rng.uniform(0, 2 * np.pi, 3)
        x = np.sum(amp[:, None] * np.sin(freq[:, None] * t + phase[:, None]), axis=0)
        ref = 0.5 + quadrature_reference(kern, 2, x, dt, idx)
        y = vb.model.evaluate(x, dt)[idx]
        worst = max(worst, float(np.linalg.norm(y - ref) / np.linalg.norm(ref)))

    ok = ew.sup_error <= 0.05 and ka_err <= ka.bound and worst <= 1e-2 and time.perf_counter() - t0 <= 300
    detail = f"sin {ew.sup_error:.1e}, KA {ka_err:.1e} <= bound {ka.bound:.1e}, Volterra rel L2 {worst:.1e}"
    record("C6", "constructions", ok, detail, t0)


def test_c7_complexity_slopes():
    t0 = time.perf_counter()
    layer = random_stable_layer(32, rng=0)
    rng = np.random.default_rng(1)
    Ts = [2**k for k in range(12, 19)]
    fft_s, direct_s = [], []
    for T in Ts:
        kernel = materialize_kernel(layer, T)
        x = rng.standard_normal((T, 1))
        fft_s.append(min(_timed(conv_fft, kernel, x, layer.D) for _ in range(20)))
        direct_s.append(min(_timed(conv_direct, kernel, x, layer.D) for _ in range(3 if T <= 2**16 else 1)))
    a, b = loglog_slope(Ts, fft_s), loglog_slope(Ts, direct_s)
    ok = 0.9 <= a <= 1.3 and 1.8 <= b <= 2.2 and time.perf_counter() - t0 <= 300
    record("C7", "complexity slopes", ok, f"fft {a:.2f}, direct {b:.2f}", t0)


def _timed(fn, *args):
    start = time.perf_counter()
    fn(*args)
    return time.perf_counter() - start


PROPAGATION_INPUTS = {
    "1+exp(-t)": (0.5, lambda t: 1.0 + np.exp(-t)),
    "-0.5+2exp(-0.8t)": (0.4, lambda t: -0.5 + 2.0 * np.exp(-0.8 * t)),
    "vector": (0.6, lambda t: np.stack([0.2 - np.exp(-1.5 * t), 0.7 + 0.5 * np.exp(-t)], axis=-1)),
}


def test_c8_propagation():
    t0 = time.perf_counter()
    failures = []
    for act in ("tanh", "relu", "hardtanh", "identity"):
        for name, (c0, seq) in PROPAGATION_INPUTS.items():
            rep = verify_exponential_propagation(c0, seq, act)
            if not rep["passed"]:
                failures.append(f"{act}/{name}")
    ok = not failures and time.perf_counter() - t0 <= 10
    record("C8", "exponential propagation", ok, f"{12 - len(failures)}/12 cases" +
           (f", failed {failures}" if failures else ""), t0)


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-s"]))
