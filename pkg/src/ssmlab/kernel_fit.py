"""Exponential-sum approximation of decaying convolution kernels.

A single linear layer can only realize kernels of the form
``sum_i c_i exp(-lambda_i s)``. Two fitting routes are provided:

* ``fit_poly_change_of_var`` fixes the rates to integer multiples of a base
  rate, so that with ``tau = exp(-lambda_base s)`` the model is a polynomial
  in ``tau``; the coefficients then come from linear least squares.
* ``fit_nonlinear_lsq`` optimizes rates and coefficients jointly with a
  Levenberg-Marquardt iteration on the rates (coefficients are eliminated by
  variable projection).

Either result converts to a diagonal ``SsmLayer`` with ``realize_layer``.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable

import numpy as np

from ._validation import check_random_state
from .core.kernels import ExpSumKernel, SampledKernel
from .core.layers import SsmLayer
from .exceptions import ConfigError, IllConditionedWarning

COND_WARN = 1e12
SUP_REFINE = 10


class FitMethod(str, Enum):
    POLY = "poly"
    NLSQ = "nlsq"


_METHOD_ALIASES = {"polychangeofvar": "poly", "nonlinearlsq": "nlsq", "lsq": "nlsq"}


def as_method(method) -> FitMethod:
    if isinstance(method, FitMethod):
        return method
    key = str(method).lower().replace("-", "").replace("_", "")
    try:
        return FitMethod(_METHOD_ALIASES.get(key, key))
    except ValueError:
        raise ConfigError(f"unknown fit method {method!r}; expected 'poly' or 'nlsq'") from None


@dataclass
class FitProblem:
    """What to fit and how.

    ``target`` is either sampled (a 1-D array, ``SampledKernel`` or a
    ``(times, values)`` pair) or a callable ``rho(s)`` evaluated on grids over
    ``[0, horizon]``. Sampled values without explicit times sit at lags
    ``j * dt``. ``dt`` is also the step of the realized discrete layer.
    """

    target: object
    modes: int
    horizon: float | None = None
    method: FitMethod | str = FitMethod.NLSQ
    dt: float = 1.0
    lambda_base: float | None = None
    n_grid: int | None = None

    def __post_init__(self):
        if isinstance(self.modes, bool) or not isinstance(self.modes, (int, np.integer)) or self.modes < 1:
            raise ConfigError(f"modes must be a positive integer, got {self.modes!r}")
        self.modes = int(self.modes)
        self.method = as_method(self.method)
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        if callable(self.target) and not isinstance(self.target, (SampledKernel, ExpSumKernel)):
            if self.horizon is None or not self.horizon > 0:
                raise ConfigError("a callable target needs a positive horizon")
            return
        if isinstance(self.target, ExpSumKernel):
            if self.horizon is None or not self.horizon > 0:
                raise ConfigError("an exponential-sum target needs a positive horizon")
            return
        times, values = self.samples()
        if not np.all(np.isfinite(values)):
            raise ConfigError("target values must be finite")
        if np.any(times < 0) or np.any(np.diff(times) <= 0):
            raise ConfigError("target times must be non-negative and increasing")
        self.horizon = float(times[-1])

    @property
    def is_sampled(self) -> bool:
        return not callable(self.target) or isinstance(self.target, SampledKernel)

    def samples(self) -> tuple[np.ndarray, np.ndarray]:
        t = self.target
        if isinstance(t, SampledKernel):
            values = t.scalar
            return np.arange(values.size) * t.dt, values
        if isinstance(t, tuple) and len(t) == 2:
            return np.asarray(t[0], dtype=float).ravel(), np.asarray(t[1], dtype=float).ravel()
        values = np.asarray(t, dtype=float).ravel()
        if values.size < 1:
            raise ConfigError("empty target")
        return np.arange(values.size) * self.dt, values

    def base_rate(self) -> float:
        if self.lambda_base is not None:
            if not self.lambda_base > 0:
                raise ConfigError("lambda_base must be positive")
            return float(self.lambda_base)
        return 1.0 / self.horizon if self.horizon > 0 else 1.0

    def grids(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """``(s_fit, f_fit, s_eval, f_eval)``; sampled targets use their own lags for both."""
        if self.is_sampled:
            s, f = self.samples()
            return s, f, s, f
        fn: Callable = self.target
        H = float(self.horizon)
        if self.method is FitMethod.POLY:
            n = self.n_grid or max(64, 4 * self.modes)
            lb = self.base_rate()
            lo = np.exp(-lb * H)
            k = np.arange(n)
            # Chebyshev nodes of the first kind mapped to [exp(-lb H), 1] in tau
            tau = 0.5 * (1 + lo) + 0.5 * (1 - lo) * np.cos((2 * k + 1) * np.pi / (2 * n))
            s_fit = np.sort(-np.log(tau) / lb)
        else:
            n = self.n_grid or 200
            s_fit = np.linspace(0.0, H, n)
        s_eval = np.linspace(0.0, H, SUP_REFINE * (n - 1) + 1)
        f_fit = np.asarray(fn(s_fit), dtype=float)
        f_eval = np.asarray(fn(s_eval), dtype=float)
        if not (np.all(np.isfinite(f_fit)) and np.all(np.isfinite(f_eval))):
            raise ConfigError("target is not finite on [0, horizon]")
        return s_fit, f_fit, s_eval, f_eval


@dataclass
class FitResult:
    kernel: ExpSumKernel
    sup_error: float
    per_lag_error: np.ndarray
    layer: SsmLayer
    grid: np.ndarray
    method: FitMethod
    converged: bool = True
    iterations: int = 0
    condition_number: float = float("nan")
    warnings: list[str] = field(default_factory=list)

    @property
    def modes(self) -> int:
        return self.kernel.modes

    def to_dict(self) -> dict:
        return {
            "modes": self.modes,
            "c": self.kernel.c.tolist(),
            "lambda": self.kernel.lam.tolist(),
            "sup_error": self.sup_error,
            "converged": self.converged,
        }


def realize_layer(kernel: ExpSumKernel, dt: float = 1.0) -> SsmLayer:
    """Diagonal discrete layer whose kernel at lag ``j`` is ``sum_i c_i u_i exp(-lambda_i j dt)``."""
    if not isinstance(kernel, ExpSumKernel):
        raise ConfigError("realize_layer expects an ExpSumKernel")
    if not dt > 0:
        raise ConfigError("dt must be positive")
    return SsmLayer(np.diag(np.exp(-kernel.lam * dt)), kernel.u[:, None], kernel.c[None, :])


def _finish(p: FitProblem, kernel: ExpSumKernel, s_eval, f_eval, **extra) -> FitResult:
    err = np.abs(f_eval - kernel(s_eval))
    return FitResult(
        kernel=kernel,
        sup_error=float(err.max()),
        per_lag_error=err,
        layer=realize_layer(kernel, p.dt),
        grid=s_eval,
        method=p.method,
        **extra,
    )


def _design(s: np.ndarray, lam: np.ndarray) -> np.ndarray:
    return np.exp(-np.multiply.outer(s, lam))


def fit_poly_change_of_var(p: FitProblem) -> FitResult:
    """Fit with rates ``lambda_i = i * lambda_base``, ``i = 1..m``, by linear least squares.

    ``lambda_base`` defaults to ``1 / horizon``, making the model a degree-m
    polynomial without constant term in ``tau = exp(-s / horizon)``. Every
    prefix of the rate list is solved and the candidate with the smallest sup
    error is kept (zero-padded), so the error never grows with ``m``.
    """
    if p.method is not FitMethod.POLY:
        raise ConfigError("problem method is not 'poly'")
    s_fit, f_fit, s_eval, f_eval = p.grids()
    m = p.modes
    if m > s_fit.size:
        raise ConfigError(f"{m} modes exceed the {s_fit.size} grid points")
    lam = p.base_rate() * np.arange(1, m + 1)
    A = _design(s_fit, lam)
    A_eval = _design(s_eval, lam)
    cond = float(np.linalg.cond(A))
    notes = []
    if not np.isfinite(cond) or cond > COND_WARN:
        notes.append(f"design matrix condition number {cond:.3g} exceeds {COND_WARN:.0e}")
        warnings.warn(notes[-1], IllConditionedWarning, stacklevel=2)
    best_c, best_sup = np.zeros(m), float(np.max(np.abs(f_eval)))
    for k in range(1, m + 1):
        ck = np.linalg.lstsq(A[:, :k], f_fit, rcond=None)[0]
        sup = float(np.max(np.abs(f_eval - A_eval[:, :k] @ ck)))
        if sup < best_sup:
            best_sup = sup
            best_c = np.concatenate([ck, np.zeros(m - k)])
    return _finish(p, ExpSumKernel(best_c, lam), s_eval, f_eval,
                   condition_number=cond, warnings=notes)


def default_rates(m: int, horizon: float) -> np.ndarray:
    """Geometrically spread initial rates between ``1/horizon`` and ``4``."""
    lo = 1.0 / max(horizon, 1e-12)
    hi = max(4.0, 2 * lo)
    return np.geomspace(lo, hi, m) if m > 1 else np.array([lo])


def _project(A: np.ndarray, f: np.ndarray):
    c, *_ = np.linalg.lstsq(A, f, rcond=None)
    return c, A @ c - f


def _starts(m: int, horizon: float, seed, n_starts: int) -> list[np.ndarray]:
    """Default rates first, then wider or narrower spreads and seeded log-uniform draws."""
    lo = 1.0 / max(horizon, 1e-12)
    starts = [default_rates(m, horizon)]
    for hi in (1.0, 16.0):
        if len(starts) < n_starts:
            starts.append(np.geomspace(lo, max(hi, 2 * lo), m) if m > 1 else np.array([hi]))
    rng = check_random_state(0 if seed is None else seed)
    if seed is not None:
        starts[0] = starts[0] * np.exp(0.05 * rng.standard_normal(m))
    while len(starts) < n_starts:
        starts.append(np.sort(np.exp(rng.uniform(np.log(lo), np.log(16.0), m))))
    return starts


def fit_nonlinear_lsq(
    p: FitProblem,
    init=None,
    *,
    seed=None,
    max_iter: int = 500,
    rtol: float = 1e-10,
    n_starts: int = 64,
) -> FitResult:
    """Jointly fit coefficients and rates by damped Gauss-Newton (Levenberg-Marquardt).

    Coefficients are the least-squares solution for the current rates
    (variable projection); the rate step uses the Kaufman Jacobian. Rates are
    clamped at zero. Without ``init`` up to ``n_starts`` deterministic starts
    are tried (see ``_starts``), stopping once one fits to roundoff. The
    iterate with the smallest sup error on the fine grid is returned;
    ``converged`` is False when ``max_iter`` ran out.
    """
    if p.method is not FitMethod.NLSQ:
        raise ConfigError("problem method is not 'nlsq'")
    s_fit, f_fit, s_eval, f_eval = p.grids()
    m = p.modes
    if m > s_fit.size:
        raise ConfigError(f"{m} modes exceed the {s_fit.size} grid points")
    if init is None:
        starts = _starts(m, p.horizon, seed, max(int(n_starts), 1))
    else:
        lam0 = np.array(init, dtype=float).ravel()
        if lam0.size != m:
            raise ConfigError(f"init has {lam0.size} rates for {m} modes")
        starts = [lam0]

    scale = max(float(np.max(np.abs(f_fit))), float(np.max(np.abs(f_eval))), 1e-300)
    done = 1e-13 * scale

    def evaluate(rates):
        A = _design(s_fit, rates)
        c, r = _project(A, f_fit)
        return A, c, r, 0.5 * float(r @ r)

    def sup_of(rates, c):
        return float(np.max(np.abs(f_eval - _design(s_eval, rates) @ c)))

    def solve(lam):
        lam = np.maximum(lam, 0.0)
        A, c, r, cost = evaluate(lam)
        best = (sup_of(lam, c), lam.copy(), c.copy())
        mu = None
        converged = False
        it = 0
        for it in range(1, max_iter + 1):
            if cost <= (1e-15 * scale) ** 2 * s_fit.size:
                converged = True
                break
            # Kaufman VarPro Jacobian: J = P_perp dA/dlam c
            dA = -s_fit[:, None] * A * c[None, :]
            Q, _ = np.linalg.qr(A)
            J = dA - Q @ (Q.T @ dA)
            g = J.T @ r
            JTJ = J.T @ J
            diag = np.maximum(np.diag(JTJ), 1e-300)
            if mu is None:
                mu = 1e-3 * float(diag.max())
            improved = False
            for _ in range(30):
                try:
                    step = np.linalg.solve(JTJ + mu * np.diag(diag), -g)
                except np.linalg.LinAlgError:
                    mu *= 10.0
                    continue
                trial = np.maximum(lam + step, 0.0)
                A_t, c_t, r_t, cost_t = evaluate(trial)
                if np.isfinite(cost_t) and cost_t < cost:
                    rel = (cost - cost_t) / max(cost, 1e-300)
                    lam, A, c, r, cost = trial, A_t, c_t, r_t, cost_t
                    mu = max(mu / 3.0, 1e-300)
                    improved = True
                    break
                mu *= 4.0
            sup = sup_of(lam, c)
            if sup < best[0]:
                best = (sup, lam.copy(), c.copy())
            if not improved or rel < rtol:
                converged = True
                break
        return best, converged, it

    overall = None
    for lam0 in starts:
        best, converged, it = solve(lam0)
        if overall is None or best[0] < overall[0][0]:
            overall = (best, converged, it)
        if overall[0][0] <= done:
            break
    (_, lam, c), converged, it = overall
    return _finish(p, ExpSumKernel(c, lam), s_eval, f_eval,
                   converged=converged, iterations=it)


def fit_kernel(p: FitProblem, **kwargs) -> FitResult:
    if p.method is FitMethod.POLY:
        return fit_poly_change_of_var(p)
    return fit_nonlinear_lsq(p, **kwargs)


def _pad(result: FitResult, p: FitProblem) -> FitResult:
    k = result.kernel
    extra = p.modes - k.modes
    if extra <= 0:
        return result
    if p.method is FitMethod.POLY:
        lam = p.base_rate() * np.arange(1, p.modes + 1)
        c = np.concatenate([k.c, np.zeros(extra)])
    else:
        lam = np.concatenate([k.lam, np.full(extra, k.lam.max() * 2 if k.lam.size else 1.0)])
        c = np.concatenate([k.c, np.zeros(extra)])
    s_fit, f_fit, s_eval, f_eval = p.grids()
    return _finish(p, ExpSumKernel(c, lam), s_eval, f_eval,
                   converged=result.converged, iterations=0,
                   warnings=result.warnings + ["kept zero-padded fit with fewer modes"])


def fit_sweep(make_problem: Callable[[int], FitProblem], modes, **kwargs) -> list[FitResult]:
    """Fit for each mode count in increasing order.

    Nonlinear fits are warm-started from the previous rates plus one new
    rate and compared with a multi-start fit. If a fit is worse in sup norm than the zero-padded previous one,
    the padded fit is kept, so the error column is non-increasing.
    """
    results: list[FitResult] = []
    prev = None
    for m in sorted(modes):
        p = make_problem(m)
        kw = dict(kwargs)
        if prev is not None and p.method is FitMethod.NLSQ and "init" not in kwargs:
            prev_lam = np.sort(prev.kernel.lam)
            new = [prev_lam.max() * 2.0 + 1e-3] * (m - prev_lam.size)
            kw["init"] = np.concatenate([prev_lam, new])[:m]
        res = fit_kernel(p, **kw)
        if "init" in kw and "init" not in kwargs:
            cold = fit_kernel(p, **kwargs)
            if cold.sup_error < res.sup_error:
                res = cold
        if prev is not None:
            padded = _pad(prev, p)
            if padded.sup_error < res.sup_error:
                res = padded
        results.append(res)
        prev = res
    return results


BUILTIN_TARGETS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "exp": lambda s: np.exp(-np.asarray(s)),
    "poly-decay": lambda s: 1.0 / (1.0 + np.asarray(s)) ** 2,
    "damped-mixture": lambda s: 0.6 * np.exp(-0.5 * np.asarray(s))
    + 0.4 * (1.0 + np.asarray(s)) * np.exp(-2.0 * np.asarray(s)),
}


def read_target_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a ``lag_or_time,value`` CSV (header optional)."""
    times, values = [], []
    with open(Path(path), newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                t, v = float(row[0]), float(row[1])
            except (ValueError, IndexError):
                if not times:
                    continue  # header line
                raise ConfigError(f"malformed target row {row!r} in {path}") from None
            times.append(t)
            values.append(v)
    if not times:
        raise ConfigError(f"no samples in {path}")
    return np.array(times), np.array(values)
