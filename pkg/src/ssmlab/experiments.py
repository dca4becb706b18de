"""Experiment drivers shared by the command line and the acceptance suite.

Each driver returns plain rows and per-task statuses; writing files is the
caller's job.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core.engines import conv_direct, materialize_kernel, run_fft, run_parallel_scan, run_sequential
from .core.layers import random_stable_layer
from .exceptions import ConfigError
from .kernel_fit import BUILTIN_TARGETS, FitMethod, FitProblem, fit_sweep, read_target_csv
from .memory_probe import ModelZooConfig, fit_envelope, generate_model, probe_memory

TRACE_COLUMNS = ("model_family", "depth", "hidden", "seed", "t", "rho_hat")
ENVELOPE_COLUMNS = ("model_family", "depth", "hidden", "seed", "c0", "intercept", "r2",
                    "window_lo", "window_hi")
SWEEP_COLUMNS = ("modes", "sup_error", "converged", "method")
BENCH_COLUMNS = ("engine", "T", "seconds")


def _map(fn, items, jobs: int):
    """Ordered map, in worker processes when ``jobs > 1``."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


@dataclass
class ProbeTask:
    family: str
    depth: int
    hidden: int
    seed: int
    steps: int
    dt: float
    window: float
    coordinate: int = 0
    init: dict = field(default_factory=dict)


def _probe_one(task: ProbeTask) -> dict:
    try:
        cfg = ModelZooConfig(task.family, task.depth, task.hidden, seed=task.seed, init=task.init)
        model = generate_model(cfg)
        trace = probe_memory(model, task.steps * task.dt, task.dt, task.coordinate,
                             model_id=cfg.model_id, seed=task.seed)
        env = fit_envelope(trace, task.window)
        return {"family": cfg.family.value, "task": task, "trace": trace, "envelope": env,
                "status": "ok" if not trace.overflow else "overflow", "error": None}
    except Exception as exc:  # recorded in the manifest, reported as a task failure
        return {"family": task.family, "task": task, "trace": None, "envelope": None,
                "status": "error", "error": f"{type(exc).__name__}: {exc}"}


def probe_experiment(families, depth: int, hidden: int, seeds, steps: int, dt: float = 1.0,
                     window: float = 0.5, coordinate: int = 0, jobs: int = 1, init=None):
    """Probe every (family, seed); returns ``(trace_rows, envelope_rows, statuses)``."""
    if steps < 2:
        raise ConfigError("steps must be at least 2")
    tasks = [ProbeTask(f, depth, hidden, s, steps, dt, window, coordinate, dict(init or {}))
             for f in families for s in seeds]
    results = _map(_probe_one, tasks, jobs)
    trace_rows, env_rows, statuses = [], [], []
    for res in results:
        t = res["task"]
        statuses.append({"id": f"{res['family']}/seed={t.seed}", "status": res["status"],
                         "error": res["error"]})
        if res["trace"] is None:
            continue
        fam = res["family"]
        key = (fam, t.depth, t.hidden, t.seed)
        tr = res["trace"]
        trace_rows += [(*key, float(tt), float(r)) for tt, r in zip(tr.times, tr.rho_hat)]
        e = res["envelope"]
        env_rows.append((*key, e.c0, e.log_intercept, e.r2, e.window[0], e.window[1]))
    return trace_rows, env_rows, statuses


def resolve_target(target: str, horizon: float | None):
    """Map a built-in name or CSV path to ``(target, horizon)`` for ``FitProblem``."""
    if target in BUILTIN_TARGETS:
        return BUILTIN_TARGETS[target], float(horizon if horizon is not None else 10.0)
    times, values = read_target_csv(target)
    return (times, values), None


def kernel_sweep(target, modes, method: str = "nlsq", horizon: float | None = None, dt: float = 1.0,
                 seed=None):
    """Fit the target for each number of modes; returns the list of results."""
    tgt, H = resolve_target(target, horizon) if isinstance(target, str) else (target, horizon)
    method = FitMethod(method)
    kw = {"seed": seed} if method is FitMethod.NLSQ else {}
    return fit_sweep(lambda m: FitProblem(tgt, m, H, method=method, dt=dt), modes, **kw)


ENGINES = ("sequential", "scan", "fft", "direct")
AGREEMENT_TOL = {"scan": 1e-10, "fft": 1e-8, "direct": 1e-8}


def _direct(layer, x):
    return conv_direct(materialize_kernel(layer, x.shape[0]), x, layer.D)


_RUNNERS = {"sequential": run_sequential, "scan": run_parallel_scan, "fft": run_fft, "direct": _direct}


class EngineDisagreement(RuntimeError):
    def __init__(self, diffs):
        self.diffs = diffs
        super().__init__("engines disagree: " + ", ".join(
            f"{d['engine']} at T={d['T']}: {d['max_abs_diff']:.3g} > {d['tol']:.0e}" for d in diffs))


def bench_engines(engines, Ts, hidden: int = 32, repeats: int = 3, seed=0, check: bool = True):
    """Time each engine on a random stable layer; returns ``(rows, agreement)``.

    For every ``T`` all engines first run once and are compared with the
    first engine in ``engines`` (normally ``sequential``); any disagreement
    beyond tolerance raises ``EngineDisagreement`` before timing. Timings
    are the minimum over ``repeats`` runs.
    """
    engines = list(engines)
    unknown = [e for e in engines if e not in _RUNNERS]
    if unknown:
        raise ConfigError(f"unknown engines {unknown}; expected {list(ENGINES)}")
    if not engines or not Ts:
        raise ConfigError("need at least one engine and one T")
    rng = np.random.default_rng(seed)
    layer = random_stable_layer(hidden, rng=rng)
    rows, agreement = [], []
    for T in Ts:
        x = rng.standard_normal((int(T), 1))
        outputs = {}
        for e in engines:
            outputs[e] = _RUNNERS[e](layer, x)
        if check:
            ref_name = "sequential" if "sequential" in outputs else engines[0]
            ref = outputs[ref_name]
            bad = []
            for e, y in outputs.items():
                if e == ref_name:
                    continue
                diff = float(np.max(np.abs(y - ref)))
                tol = AGREEMENT_TOL.get(e, 1e-8) if ref_name == "sequential" else 1e-8
                entry = {"engine": e, "reference": ref_name, "T": int(T), "max_abs_diff": diff, "tol": tol}
                agreement.append(entry)
                if not diff <= tol:
                    bad.append(entry)
            if bad:
                raise EngineDisagreement(bad)
        for e in engines:
            best = np.inf
            for _ in range(repeats):
                t0 = time.perf_counter()
                _RUNNERS[e](layer, x)
                best = min(best, time.perf_counter() - t0)
            rows.append((e, int(T), best))
    return rows, agreement


def loglog_slope(Ts, seconds) -> float:
    return float(np.polyfit(np.log(np.asarray(Ts, float)), np.log(np.asarray(seconds, float)), 1)[0])
