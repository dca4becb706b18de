"""Truncated Volterra series realized by products of first-order state-space convolutions.

A separable order-n kernel ``h_n(tau_1..tau_n) = sum_i prod_j k_ij(tau_j)``
turns the n-fold convolution integral into ``sum_i prod_j (k_ij * x)(t)``.
Each factor ``k_ij`` is an exponential sum, i.e. a continuous diagonal
layer, so a term is a bank of parallel linear layers followed by an exact
element-wise product.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..core.engines import run_continuous
from ..core.kernels import ExpSumKernel
from ..core.layers import SsmLayer, TimeKind
from ..exceptions import ConfigError
from ..kernel_fit import FitMethod, FitProblem, fit_nonlinear_lsq

MAX_ORDER = 3
FORMAT = "ssmlab.volterra"


@dataclass(frozen=True, eq=False)
class VolterraTerm:
    """One order-n term: explicit factors ``factors[i][j]`` or a callable full kernel.

    Factors may be ``ExpSumKernel`` instances (used as-is) or 1-D callables
    (fit by exponential sums). A callable ``kernel(tau_1, ..., tau_n)`` is
    first factorized to ``rank`` separable terms.
    """

    order: int
    factors: tuple | None = None
    kernel: Callable | None = None
    rank: int = 1

    def __post_init__(self):
        if not 1 <= self.order <= MAX_ORDER:
            raise ConfigError(f"order must be in 1..{MAX_ORDER}, got {self.order}")
        if (self.factors is None) == (self.kernel is None):
            raise ConfigError("give exactly one of factors or kernel")
        if self.factors is not None:
            rows = tuple(tuple(r) for r in self.factors)
            if not rows or any(len(r) != self.order for r in rows):
                raise ConfigError(f"each separable product needs {self.order} factors")
            for r in rows:
                for k in r:
                    if not (isinstance(k, ExpSumKernel) or callable(k)):
                        raise ConfigError("factors must be ExpSumKernel or callables")
            object.__setattr__(self, "factors", rows)
        elif self.rank < 1:
            raise ConfigError("rank must be >= 1")


@dataclass(frozen=True, eq=False)
class VolterraSpec:
    terms: tuple[VolterraTerm, ...]
    h0: float = 0.0
    horizon: float = 10.0

    def __post_init__(self):
        terms = tuple(self.terms)
        if not terms:
            raise ConfigError("a Volterra spec needs at least one term")
        if not self.horizon > 0:
            raise ConfigError("horizon must be positive")
        object.__setattr__(self, "terms", terms)

    @property
    def order(self) -> int:
        return max(t.order for t in self.terms)


def factorize(kernel: Callable, order: int, rank: int, horizon: float, n_grid: int | None = None,
              *, seed=0, sweeps: int = 200):
    """Separable approximation of ``kernel`` on a uniform grid of ``[0, horizon]^order``.

    Order 2 uses a truncated SVD, order 3 a CP decomposition by alternating
    least squares. Returns ``(factor_rows, grid, sup_error)`` with factors as
    sampled arrays ``(rank, order, n_grid)``.
    """
    n_grid = n_grid or {1: 401, 2: 201, 3: 41}[order]
    s = np.linspace(0.0, horizon, n_grid)
    mesh = np.meshgrid(*([s] * order), indexing="ij")
    H = np.asarray(kernel(*mesh), dtype=float)
    if H.shape != (n_grid,) * order or not np.all(np.isfinite(H)):
        raise ConfigError("kernel must return finite values on the sample grid")
    if order == 1:
        F = H[None, None, :]
    elif order == 2:
        Uo, S, Vt = np.linalg.svd(H)
        r = min(rank, S.size)
        root = np.sqrt(S[:r])
        F = np.stack([Uo[:, :r].T * root[:, None], Vt[:r] * root[:, None]], axis=1)
    else:
        F = _cp_als(H, rank, seed=seed, sweeps=sweeps)
    approx = _reconstruct(F)
    return F, s, float(np.max(np.abs(approx - H)))


def _reconstruct(F: np.ndarray) -> np.ndarray:
    order = F.shape[1]
    letters = "abc"[:order]
    spec = ",".join(f"r{c}" for c in letters) + "->" + letters
    return np.einsum(spec, *[F[:, j] for j in range(order)])


def _cp_als(H: np.ndarray, rank: int, *, seed=0, sweeps: int = 200, tol: float = 1e-13) -> np.ndarray:
    rng = np.random.default_rng(seed)
    n = H.shape[0]
    A = [rng.standard_normal((n, rank)) for _ in range(3)]
    prev = np.inf
    norm = max(np.linalg.norm(H), 1e-300)
    for _ in range(sweeps):
        for mode in range(3):
            o1, o2 = [A[k] for k in range(3) if k != mode]
            G = (o1.T @ o1) * (o2.T @ o2)
            subs = {0: "ijk,jr,kr->ir", 1: "ijk,ir,kr->jr", 2: "ijk,ir,jr->kr"}[mode]
            M = np.einsum(subs, H, o1, o2)
            A[mode] = np.linalg.lstsq(G, M.T, rcond=None)[0].T
        err = np.linalg.norm(np.einsum("ir,jr,kr->ijk", *A) - H) / norm
        if abs(prev - err) < tol:
            break
        prev = err
    # balance column norms across modes
    scales = np.stack([np.linalg.norm(a, axis=0) for a in A])
    total = np.prod(scales, axis=0) ** (1 / 3)
    F = np.stack([A[k] / np.where(scales[k] > 0, scales[k], 1.0) * total for k in range(3)], axis=1)
    return np.transpose(F, (2, 1, 0))


def _factor_layer(kernels: list[ExpSumKernel]) -> SsmLayer:
    rates = np.concatenate([k.lam for k in kernels])
    U = np.concatenate([k.u for k in kernels])[:, None]
    C = np.zeros((len(kernels), rates.size))
    start = 0
    for i, k in enumerate(kernels):
        C[i, start:start + k.modes] = k.c
        start += k.modes
    return SsmLayer(-np.diag(rates), U, C, time_kind=TimeKind.CONTINUOUS)


@dataclass(frozen=True, eq=False)
class RealizedTerm:
    """``factors[i][j]`` kernels of one term plus the continuous layer that runs them all."""

    order: int
    factors: tuple[tuple[ExpSumKernel, ...], ...]

    @property
    def rank(self) -> int:
        return len(self.factors)

    @property
    def layer(self) -> SsmLayer:
        return _factor_layer([k for row in self.factors for k in row])

    def kernel(self, *taus) -> np.ndarray:
        out = 0.0
        for row in self.factors:
            prod = 1.0
            for k, tau in zip(row, taus):
                prod = prod * k(tau)
            out = out + prod
        return out


@dataclass(frozen=True, eq=False)
class VolterraModel:
    """``y(t) = h0 + sum_terms sum_i prod_j (k_ij * x)(t)`` on a uniform sample grid."""

    h0: float
    terms: tuple[RealizedTerm, ...]

    def evaluate(self, x, dt: float) -> np.ndarray:
        """Output at ``t_k = k dt`` for input samples ``x(t_k)``, with ``x`` linear between samples."""
        x = np.asarray(x, dtype=float).ravel()
        y = np.full(x.size, float(self.h0))
        for term in self.terms:
            conv = run_continuous(term.layer, x[:, None], dt, hold="foh")
            y += np.prod(conv.reshape(x.size, term.rank, term.order), axis=2).sum(axis=1)
        return y

    def parameter_vector(self) -> np.ndarray:
        parts = [np.array([self.h0])]
        for term in self.terms:
            layer = term.layer
            parts += [np.diag(layer.W), layer.U.ravel(), layer.C.ravel()]
        return np.concatenate(parts)

    @property
    def n_params(self) -> int:
        return self.parameter_vector().size

    def to_dict(self) -> dict:
        return {
            "format": FORMAT,
            "version": 1,
            "h0": self.h0,
            "terms": [
                {"order": t.order, "factors": [[k.to_dict() for k in row] for row in t.factors]}
                for t in self.terms
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "VolterraModel":
        if data.get("format") != FORMAT:
            raise ConfigError(f"not a {FORMAT} document")
        terms = tuple(
            RealizedTerm(t["order"], tuple(
                tuple(ExpSumKernel(k["c"], k["lambda"], k.get("u")) for k in row) for row in t["factors"]
            ))
            for t in data["terms"]
        )
        return cls(float(data["h0"]), terms)

    def dumps(self, indent: int | None = None) -> str:
        return json.dumps(self.to_dict(), indent=indent)


@dataclass
class VolterraBuild:
    model: VolterraModel
    met_tol: bool
    tol: float
    report: dict = field(default_factory=dict)


def _fit_factor(fn, modes: int, horizon: float, seed) -> tuple[ExpSumKernel, float]:
    """Fit a callable factor on ``[0, horizon]`` or a sampled ``(grid, values)`` pair at its samples."""
    res = fit_nonlinear_lsq(FitProblem(fn, modes, horizon, method=FitMethod.NLSQ), seed=seed)
    return res.kernel, res.sup_error


def _term_error(term: RealizedTerm, reference: Callable, horizon: float) -> float:
    n = {1: 2001, 2: 201, 3: 41}[term.order]
    s = np.linspace(0.0, horizon, n)
    mesh = np.meshgrid(*([s] * term.order), indexing="ij")
    return float(np.max(np.abs(term.kernel(*mesh) - reference(*mesh))))


def build_volterra(spec: VolterraSpec, modes_per_factor: int, tol: float, *, seed=0) -> VolterraBuild:
    """Realize every term by separable exponential-sum factors.

    The report gives, per term, the separable approximation error (callable
    kernels only), each factor's fit error and the sup error of the realized
    kernel against the requested one. ``met_tol`` holds when every realized
    kernel is within ``tol``.
    """
    if isinstance(modes_per_factor, bool) or not isinstance(modes_per_factor, (int, np.integer)) \
            or modes_per_factor < 1:
        raise ConfigError("modes_per_factor must be a positive integer")
    H = spec.horizon
    realized, term_reports = [], []
    for idx, term in enumerate(spec.terms):
        sep_error = 0.0
        if term.kernel is not None:
            F, grid, sep_error = factorize(term.kernel, term.order, term.rank, H, seed=seed)
            rows = [[(grid, F[i, j]) for j in range(term.order)] for i in range(F.shape[0])]
            reference = term.kernel
        else:
            rows = term.factors
            reference = RealizedTerm(term.order, rows).kernel
        fitted, factor_errors = [], []
        for row in rows:
            kr = []
            for k in row:
                if isinstance(k, ExpSumKernel):
                    kr.append(k)
                    factor_errors.append(0.0)
                else:
                    kernel, err = _fit_factor(k, modes_per_factor, H, seed)
                    kr.append(kernel)
                    factor_errors.append(err)
            fitted.append(tuple(kr))
        rt = RealizedTerm(term.order, tuple(fitted))
        kernel_error = _term_error(rt, reference, H)
        realized.append(rt)
        term_reports.append({
            "term": idx, "order": term.order, "rank": rt.rank, "separable_error": sep_error,
            "factor_errors": factor_errors, "kernel_error": kernel_error,
            "met_tol": kernel_error <= tol,
        })
    model = VolterraModel(float(spec.h0), tuple(realized))
    met = all(t["met_tol"] for t in term_reports)
    report = {"stage": "volterra", "order": spec.order, "horizon": H,
              "modes_per_factor": int(modes_per_factor), "n_params": model.n_params,
              "terms": term_reports, "tol": tol, "met_tol": met}
    return VolterraBuild(model, met, tol, report)


def quadrature_reference(kernel: Callable, order: int, x, dt: float, times_idx) -> np.ndarray:
    """Volterra output of one term by trapezoid quadrature on the sample grid (orders 1 and 2).

    ``y(t_k) = int_{[0,t_k]^n} h(tau) prod_j x(t_k - tau_j) dtau``.
    """
    x = np.asarray(x, dtype=float).ravel()
    N = x.size
    s = np.arange(N) * dt
    if order == 1:
        h = np.asarray(kernel(s), dtype=float)
    elif order == 2:
        S1, S2 = np.meshgrid(s, s, indexing="ij")
        h = np.asarray(kernel(S1, S2), dtype=float)
    else:
        raise ConfigError("quadrature reference supports orders 1 and 2")
    out = []
    for k in times_idx:
        if k == 0:
            out.append(0.0)
            continue
        w = np.full(k + 1, dt)
        w[[0, -1]] = dt / 2
        xs = x[k::-1]  # x(t_k - tau_j) for tau_j = j dt
        if order == 1:
            out.append(float(np.sum(w * h[:k + 1] * xs)))
        else:
            wx = w * xs
            out.append(float(wx @ h[:k + 1, :k + 1] @ wx))
    return np.array(out)


def spec_from_json(data: dict) -> VolterraSpec:
    """Read ``{"h0", "horizon", "terms": [{"order", "kernel": expr | "factors": [[expr | {c, lambda}]]}]}``.

    Kernel expressions use ``t1..tn`` (or ``t`` for factors).
    """
    from .functions import compile_expr

    terms = []
    for t in data["terms"]:
        order = int(t["order"])
        if "kernel" in t:
            names = tuple(f"t{j + 1}" for j in range(order))
            terms.append(VolterraTerm(order, kernel=compile_expr(t["kernel"], names),
                                      rank=int(t.get("rank", 1))))
        else:
            rows = []
            for row in t["factors"]:
                rows.append(tuple(
                    ExpSumKernel(k["c"], k["lambda"], k.get("u")) if isinstance(k, dict)
                    else compile_expr(k, ("t",)) for k in row
                ))
            terms.append(VolterraTerm(order, factors=tuple(rows)))
    return VolterraSpec(tuple(terms), float(data.get("h0", 0.0)), float(data.get("horizon", 10.0)))
