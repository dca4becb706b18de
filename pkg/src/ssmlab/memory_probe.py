"""Memory functions of recurrent models: step-input probe, closed forms, decay envelopes.

The memory function of a model is the norm of the time derivative of its
output under a unit step input. For a linear layer this is the norm of its
impulse response ``C exp(W t) U``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np
from scipy.linalg import expm

from ._validation import check_positive, check_random_state
from .activations import IDENTITY, TANH, get_activation
from .core.discretize import Scheme, discretize
from .core.engines import forward_continuous, forward_multilayer
from .core.layers import (
    GruLayer,
    LstmLayer,
    MultiLayerModel,
    SsmLayer,
    TimeKind,
    VanillaRnnLayer,
    spectral_stability,
)
from .exceptions import ConfigError, NotDiagonalizableError, NumericalOverflowError

FLOOR = 1e-14
EIG_COND_LIMIT = 1e8
COINCIDENT = 1e-8


@dataclass
class MemoryTrace:
    times: np.ndarray
    rho_hat: np.ndarray
    coordinate: int = 0
    model_id: str = ""
    seed: int | None = None
    overflow: bool = False
    flags: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float).ravel()
        self.rho_hat = np.asarray(self.rho_hat, dtype=float).ravel()
        if self.times.shape != self.rho_hat.shape:
            raise ValueError("times and rho_hat must have the same length")
        if not np.all(np.isfinite(self.rho_hat)) or np.any(self.rho_hat < 0):
            raise ValueError("rho_hat must be finite and non-negative")

    def __len__(self):
        return self.times.size


def _step_input(n: int, d_in: int, coordinate: int) -> np.ndarray:
    if not 0 <= coordinate < d_in:
        raise ConfigError(f"coordinate {coordinate} out of range for {d_in} inputs")
    x = np.zeros((n, d_in))
    x[:, coordinate] = 1.0
    return x


def _run_truncating(run: Callable[[np.ndarray], np.ndarray], x: np.ndarray):
    """Run on ``x``; on overflow retry on the finite prefix. Returns ``(y, overflowed)``."""
    overflowed = False
    n = x.shape[0]
    while n > 0:
        try:
            return run(x[:n]), overflowed
        except NumericalOverflowError as err:
            overflowed = True
            n = min(n - 1, err.step if err.step is not None else n - 1)
        except ValueError:
            # a non-finite activation output rejected by the next layer
            overflowed = True
            n -= max(1, n // 2)
    return np.zeros((0, 1)), True


def probe_memory(
    model,
    t_max: float,
    dt: float = 1.0,
    coordinate: int = 0,
    *,
    model_id: str = "",
    seed: int | None = None,
    hold: str = "foh",
) -> MemoryTrace:
    """Sample the memory function up to ``t_max``.

    Discrete models run ``N + 1 = round(t_max / dt) + 1`` steps with the
    step at index 0 and return ``|y_{k+1} - y_k| / dt`` at ``t_k = k dt``
    (``N`` samples). Continuous models are simulated on ``t_k = k dt``,
    ``k = 0..N``, and differentiated with second-order differences (central
    inside, one-sided at the ends). Multi-output norms are Euclidean.
    On overflow the trace stops at the last finite sample and ``overflow``
    is set.
    """
    if isinstance(model, SsmLayer):
        model = MultiLayerModel([model])
    check_positive(dt, "dt")
    check_positive(t_max, "t_max")
    n = int(round(t_max / dt))
    if n < 1:
        raise ConfigError("t_max must cover at least one step")
    x = _step_input(n + 1, model.d_in, coordinate)
    kind = model.time_kind
    if kind not in ("continuous", "discrete"):
        raise ConfigError("cannot probe a model mixing discrete and continuous layers")
    with np.errstate(over="ignore", invalid="ignore"):
        if kind == "continuous":
            y, over = _run_truncating(lambda u: forward_continuous(model, u, dt, hold), x)
            if y.shape[0] >= 3:
                rho = np.linalg.norm(np.gradient(y, dt, axis=0, edge_order=2), axis=1)
            elif y.shape[0] == 2:
                rho = np.full(2, np.linalg.norm(y[1] - y[0]) / dt)
            else:
                rho = np.zeros(0)
        else:
            y, over = _run_truncating(lambda u: forward_multilayer(model, u), x)
            rho = np.linalg.norm(np.diff(y, axis=0), axis=1) / dt
        bad = ~np.isfinite(rho)
    if bad.any():
        # finite outputs can still overflow once differenced or scaled
        rho, over = rho[: int(np.argmax(bad))], True
    times = np.arange(rho.size) * dt
    flags = ["overflow"] if over else []
    return MemoryTrace(times, rho, coordinate, model_id, seed, over, flags)


def _eig_basis(W: np.ndarray):
    lam, P = np.linalg.eig(W)
    cond = np.linalg.cond(P)
    return lam, P, cond


def closed_form_memory_single_layer(layer: SsmLayer, times, coordinate: int = 0) -> MemoryTrace:
    """``|C exp(W t) U e_coordinate|`` for a continuous linear layer.

    Uses the eigendecomposition of ``W`` when its eigenvector matrix is well
    conditioned and the matrix exponential otherwise (flagged).
    """
    if layer.time_kind is not TimeKind.CONTINUOUS:
        raise ConfigError("closed-form memory needs a continuous-time layer")
    times = np.asarray(times, dtype=float).ravel()
    u = layer.U[:, coordinate]
    lam, P, cond = _eig_basis(layer.W)
    flags = []
    if np.isfinite(cond) and cond < EIG_COND_LIMIT:
        left = layer.C @ P
        right = np.linalg.solve(P, u)
        vals = (np.exp(np.multiply.outer(times, lam)) * right) @ left.T
        rho = np.linalg.norm(vals.real, axis=1)
    else:
        flags.append("expm-fallback")
        rho = np.array([np.linalg.norm(layer.C @ (expm(layer.W * t) @ u)) for t in times])
    return MemoryTrace(times, rho, coordinate, flags=flags)


def _pair_weights(lam_in: np.ndarray, lam_out: np.ndarray, t: float) -> np.ndarray:
    """``G[j, i] = int_0^t exp(lam_out_j (t - s)) exp(lam_in_i s) ds``."""
    delta = lam_out[:, None] - lam_in[None, :]
    base = np.exp(lam_in[None, :] * t)
    close = np.abs(delta) < COINCIDENT
    safe = np.where(close, 1.0, delta)
    return np.where(close, t * base, base * np.expm1(safe * t) / safe)


def closed_form_memory_two_layer(layers, times, coordinate: int = 0) -> MemoryTrace:
    """Memory of two stacked continuous linear layers with no activation between them.

    With eigenbases ``W_l = P_l diag(lam_l) P_l^-1`` the cascade's impulse
    response is ``C2 P2 [M o G(t)] P1^-1 U1 + D2 rho_1(t) + rho_2(t) D1`` where
    ``M = P2^-1 U2 C1 P1`` and ``G`` holds the pair integrals
    ``(exp(lam2_j t) - exp(lam1_i t)) / (lam2_j - lam1_i)`` (limit
    ``t exp(lam t)`` for coincident pairs).
    """
    first, second = layers
    for layer in (first, second):
        if not isinstance(layer, SsmLayer) or layer.time_kind is not TimeKind.CONTINUOUS:
            raise ConfigError("closed-form two-layer memory needs continuous SsmLayers")
    if second.d_in != first.d_out:
        raise ConfigError("layer dimensions do not chain")
    times = np.asarray(times, dtype=float).ravel()
    lam1, P1, c1 = _eig_basis(first.W)
    lam2, P2, c2 = _eig_basis(second.W)
    if not (np.isfinite(c1) and np.isfinite(c2)) or max(c1, c2) > EIG_COND_LIMIT:
        raise NotDiagonalizableError(
            "a layer has an (almost) defective transition matrix; use probe_memory instead"
        )
    u = first.U[:, coordinate]
    right = np.linalg.solve(P1, u)
    M = np.linalg.solve(P2, second.U @ first.C @ P1)
    left = second.C @ P2
    D1u = first.D[:, coordinate]
    right2 = np.linalg.solve(P2, second.U @ D1u)
    out = np.empty((times.size, second.d_out))
    for k, t in enumerate(times):
        rho1 = (first.C @ P1) @ (np.exp(lam1 * t) * right)
        rho2 = left @ (np.exp(lam2 * t) * right2)
        conv = left @ ((M * _pair_weights(lam1, lam2, t)) @ right)
        out[k] = (conv + second.D @ rho1 + rho2).real
    return MemoryTrace(times, np.linalg.norm(out, axis=1), coordinate)


def slowest_timescale(model) -> float:
    """Longest linear time constant (in steps or time units) across the model's SSM layers.

    ``1 / -log(radius)`` for discrete layers and ``1 / -abscissa`` for
    continuous ones; ``inf`` for marginal or unstable layers. Layers with a
    nonlinear recurrence are ignored.
    """
    layers = [model] if isinstance(model, SsmLayer) else model.layers
    tau = 0.0
    for layer in layers:
        if not isinstance(layer, SsmLayer):
            continue
        report = spectral_stability(layer)
        if not report.stable:
            return np.inf
        v = report.radius_or_abscissa
        if layer.is_discrete:
            rate = -np.log(v) if v > 0 else np.inf
        else:
            rate = -v
        tau = max(tau, 1.0 / rate if rate > 0 else np.inf)
    return tau


def suggest_horizon(model, multiple: float = 20.0, *, minimum: float = 512, maximum: float = 200_000) -> float:
    """Horizon of ``multiple`` slowest time constants, clipped to ``[minimum, maximum]``.

    The trailing half of such a trace sits well inside the asymptotic regime
    while staying above double-precision noise for the default multiple.
    """
    tau = slowest_timescale(model)
    return float(np.clip(multiple * tau, minimum, maximum)) if np.isfinite(tau) else float(maximum)


@dataclass
class EnvelopeFit:
    """``log rho(t) ~ log_intercept - c0 t`` over ``window``."""

    c0: float
    log_intercept: float
    r2: float
    window: tuple[float, float]
    n_points: int
    degenerate: bool = False
    flags: list[str] = field(default_factory=list)

    @property
    def intercept(self) -> float:
        return self.log_intercept


def fit_envelope(trace: MemoryTrace, window_fraction: float = 0.5, floor: float = FLOOR) -> EnvelopeFit:
    """Least-squares line through ``(t, log rho)`` on the trailing ``window_fraction`` of samples.

    Samples at or below ``floor`` are dropped. An all-zero tail gives a
    degenerate fit with ``c0 = inf``; a constant tail gives ``c0 = 0`` and
    ``r2 = nan`` (flagged).
    """
    if not 0 < window_fraction <= 1:
        raise ConfigError("window_fraction must be in (0, 1]")
    n = len(trace)
    if n == 0:
        return EnvelopeFit(np.inf, -np.inf, np.nan, (np.nan, np.nan), 0, True, ["empty-trace"])
    start = min(int(np.floor(n * (1.0 - window_fraction))), n - 1)
    t = trace.times[start:]
    r = trace.rho_hat[start:]
    keep = r > floor
    t, r = t[keep], r[keep]
    flags = []
    if t.size < 2:
        return EnvelopeFit(np.inf, -np.inf, np.nan, (float(trace.times[start]), float(trace.times[-1])),
                           int(t.size), True, ["zero-tail"])
    if t.size < 10:
        flags.append("fewer-than-10-points")
    logr = np.log(r)
    slope, intercept = np.polyfit(t, logr, 1)
    resid = logr - (slope * t + intercept)
    ss_tot = float(np.sum((logr - logr.mean()) ** 2))
    if ss_tot <= 1e-24 * max(1.0, float(np.sum(logr**2))):
        flags.append("r2-undefined")
        return EnvelopeFit(0.0, float(logr.mean()), np.nan, (float(t[0]), float(t[-1])),
                           int(t.size), False, flags)
    r2 = float(np.clip(1.0 - float(resid @ resid) / ss_tot, 0.0, 1.0))
    return EnvelopeFit(float(-slope), float(intercept), r2, (float(t[0]), float(t[-1])),
                       int(t.size), False, flags)


class Family(str, Enum):
    VANILLA_RNN = "vanilla-rnn"
    GRU = "gru"
    LSTM = "lstm"
    NAIVE_SSM = "naive-ssm"
    S4LIKE = "s4like"


_FAMILY_ALIASES = {"rnn": "vanilla-rnn", "vanillarnn": "vanilla-rnn", "naivessm": "naive-ssm",
                   "naive": "naive-ssm", "s4": "s4like", "s4-like": "s4like"}


def as_family(family) -> Family:
    if isinstance(family, Family):
        return family
    key = str(family).lower().replace("_", "-")
    key = _FAMILY_ALIASES.get(key.replace("-", ""), _FAMILY_ALIASES.get(key, key))
    try:
        return Family(key)
    except ValueError:
        raise ConfigError(
            f"unknown model family {family!r}; expected one of {[f.value for f in Family]}"
        ) from None


DEFAULT_INIT = {
    Family.NAIVE_SSM: {"w_low": 0.0, "w_high": 1.0},
    Family.S4LIKE: {"dt": 0.002},
}


@dataclass
class ModelZooConfig:
    """Random model recipe. Weights are i.i.d. uniform on ``+-1/sqrt(fan_in)`` unless noted.

    ``init`` overrides family defaults: ``w_low``/``w_high`` for the naive SSM
    diagonal, ``dt`` for the S4-like bilinear step.
    """

    family: Family | str
    depth: int = 1
    hidden: int = 8
    input_dim: int = 1
    output_dim: int = 1
    seed: int = 0
    init: dict = field(default_factory=dict)

    def __post_init__(self):
        self.family = as_family(self.family)
        for name in ("depth", "hidden", "input_dim", "output_dim"):
            check_positive(getattr(self, name), name, integer=True)
        check_positive(self.seed, "seed", integer=True, allow_zero=True)
        unknown = set(self.init) - set(DEFAULT_INIT.get(self.family, {}))
        if unknown:
            raise ConfigError(f"unknown init keys {sorted(unknown)} for family {self.family.value}")

    @property
    def init_params(self) -> dict:
        return {**DEFAULT_INIT.get(self.family, {}), **self.init}

    @property
    def model_id(self) -> str:
        return f"{self.family.value}-d{self.depth}-m{self.hidden}-s{self.seed}"


def hippo_legs(m: int) -> tuple[np.ndarray, np.ndarray]:
    """HiPPO-LegS transition ``A`` (lower triangular) and input vector ``B``."""
    q = np.sqrt(2.0 * np.arange(m) + 1.0)
    A = -np.tril(np.outer(q, q), -1) - np.diag(np.arange(1.0, m + 1))
    return A, q.copy()


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, shape)


def generate_model(cfg: ModelZooConfig) -> MultiLayerModel:
    """Draw a model of the configured family; deterministic per ``cfg.seed``.

    SSM families put ``tanh`` between linear layers. Recurrent families carry
    their own nonlinearity, use no extra activation between layers and
    expose their full hidden state except at the last layer, which has a
    random linear readout.
    """
    rng = check_random_state(cfg.seed)
    m, p = cfg.hidden, cfg.init_params
    layers = []
    d_in = cfg.input_dim
    for ell in range(cfg.depth):
        last = ell == cfg.depth - 1
        d_out = cfg.output_dim if last else m
        if cfg.family is Family.NAIVE_SSM:
            W = np.diag(rng.uniform(p["w_low"], p["w_high"], m))
            layer = SsmLayer(W, _uniform(rng, (m, d_in), d_in), _uniform(rng, (d_out, m), m))
        elif cfg.family is Family.S4LIKE:
            A, B = hippo_legs(m)
            U = np.outer(B, _uniform(rng, d_in, d_in))
            cont = SsmLayer(A, U, _uniform(rng, (d_out, m), m), time_kind=TimeKind.CONTINUOUS)
            layer = discretize(cont, p["dt"], Scheme.BILINEAR)
        else:
            C = _uniform(rng, (d_out, m), m) if last else np.eye(m)
            if cfg.family is Family.VANILLA_RNN:
                layer = VanillaRnnLayer(_uniform(rng, (m, m), m), _uniform(rng, (m, d_in), m),
                                        _uniform(rng, m, m), C)
            else:
                g = 3 if cfg.family is Family.GRU else 4
                cls = GruLayer if cfg.family is Family.GRU else LstmLayer
                layer = cls(_uniform(rng, (g * m, d_in), m), _uniform(rng, (g * m, m), m),
                            _uniform(rng, g * m, m), _uniform(rng, g * m, m), C)
        if isinstance(layer, SsmLayer) and not spectral_stability(layer).stable:
            raise ConfigError(f"layer {ell} of {cfg.model_id} is not stable")
        layers.append(layer)
        d_in = d_out
    act = TANH if cfg.family in (Family.NAIVE_SSM, Family.S4LIKE) else IDENTITY
    return MultiLayerModel(layers, act)


def verify_exponential_propagation(
    c0: float,
    sequence: Callable[[np.ndarray], np.ndarray],
    activation,
    *,
    x_star=None,
    times=None,
) -> dict:
    """Check that ``exp(c0 t) |sigma(x_t) - sigma(x*)|`` stays bounded and decays.

    ``x*`` defaults to ``sequence(inf)``. The Lipschitz bound
    ``L exp(c0 t) |x_t - x*|`` is returned alongside. ``tail_decreasing``
    requires the maximum over the second half of the horizon (after its
    first sample) not to exceed the value at its start.
    """
    act = get_activation(activation)
    t = np.linspace(0.0, 20.0, 2001) if times is None else np.asarray(times, dtype=float).ravel()
    x = np.asarray(sequence(t), dtype=float)
    x = x.reshape(t.size, -1)
    xs = np.asarray(sequence(np.inf) if x_star is None else x_star, dtype=float).reshape(1, -1)
    growth = np.exp(c0 * t)
    scaled = growth * np.linalg.norm(act(x) - act(xs), axis=1)
    bound = act.lipschitz * growth * np.linalg.norm(x - xs, axis=1)
    tail = scaled[t.size // 2:]
    bounded = bool(np.all(np.isfinite(scaled)) and np.all(scaled <= bound * (1 + 1e-12) + 1e-300))
    decreasing = bool(tail.size < 2 or np.max(tail[1:]) <= tail[0])
    return {
        "activation": act.name,
        "c0": float(c0),
        "times": t,
        "scaled": scaled,
        "bound": bound,
        "bounded": bounded,
        "tail_decreasing": decreasing,
        "final_value": float(scaled[-1]),
        "passed": bounded and decreasing,
    }
