"""Five-layer Kolmogorov-Arnold pipeline built from state-space layers.

A decomposition

    f(x_1..x_d) = sum_q Phi_q( sum_p b_{q,p} phi(x_p + q a) + c_q )

is realized on the sequence ``x_1..x_d`` (position ``p`` is time step ``p``):

1-2. zero-recurrence layers computing ``phi_hat(x_k + q a)`` per channel,
3.   a block-diagonal linear layer whose kernel carries the weights ``b_q``
     in reverse lag order, so step ``d`` sees ``sum_p b_{q,p} phi_hat(...)``,
4-5. zero-recurrence layers computing ``Phi_hat_q(z_q + c_q)`` and summing.

The output at the last step approximates ``f``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from ..activations import IDENTITY, TANH, get_activation
from ..core.engines import forward_multilayer
from ..core.kernels import ExpSumKernel
from ..core.layers import MultiLayerModel, SsmLayer
from ..exceptions import ConfigError, IllConditionedWarning
from ..kernel_fit import FitMethod, FitProblem, fit_poly_change_of_var
from .elementwise import N_EVAL, N_TRAIN, ShallowNet, _affine_net, elementwise_model, train_shallow
from .functions import ScalarFunctionSpec, compile_expr, constant, function_from_json


@dataclass(frozen=True, eq=False)
class KaChannel:
    outer: ScalarFunctionSpec
    weights: np.ndarray
    offset: float = 0.0

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).ravel()
        if w.size < 1 or not np.all(np.isfinite(w)):
            raise ConfigError("channel weights must be a non-empty finite vector")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "offset", float(self.offset))


@dataclass(frozen=True, eq=False)
class KaDecomposition:
    """Channels ``q = 0..Q`` sharing one inner function ``phi`` with shifts ``q * shift``.

    ``input_domain`` is the range of each ``x_p``; ``decomposition_error`` is
    how far the decomposition itself may be from the intended target.
    """

    inner: ScalarFunctionSpec
    channels: tuple[KaChannel, ...]
    shift: float = 0.0
    input_domain: tuple[float, float] = (-1.0, 1.0)
    decomposition_error: float = 0.0
    name: str = ""

    def __post_init__(self):
        chans = tuple(self.channels)
        if not chans:
            raise ConfigError("a decomposition needs at least one channel")
        d = chans[0].weights.size
        if any(ch.weights.size != d for ch in chans):
            raise ConfigError("all channels need weight vectors of the same length")
        lo, hi = (float(v) for v in self.input_domain)
        if not lo < hi:
            raise ConfigError("input_domain must satisfy lo < hi")
        object.__setattr__(self, "channels", chans)
        object.__setattr__(self, "input_domain", (lo, hi))

    @property
    def arity(self) -> int:
        return self.channels[0].weights.size

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    def shifts(self) -> np.ndarray:
        return self.shift * np.arange(self.n_channels)

    def evaluate(self, X) -> np.ndarray:
        """Exact value of the decomposition at rows of ``X`` (shape ``(n, d)``)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.arity:
            raise ConfigError(f"expected {self.arity} coordinates, got {X.shape[1]}")
        out = np.zeros(X.shape[0])
        for q, ch in enumerate(self.channels):
            z = self.inner(X + q * self.shift) @ ch.weights + ch.offset
            out += ch.outer(z)
        return out


def product_decomposition(domain=(-1.0, 1.0)) -> KaDecomposition:
    """``x1 x2 = ((x1 + x2)^2 - (x1 - x2)^2) / 4`` with an identity inner function."""
    lo, hi = domain
    r = 2.2 * max(abs(lo), abs(hi))
    sq = ScalarFunctionSpec(compile_expr("z**2/4", ("z",)), (-r, r), name="z**2/4")
    neg = ScalarFunctionSpec(compile_expr("-z**2/4", ("z",)), (-r, r), name="-z**2/4")
    ident = ScalarFunctionSpec(compile_expr("x", ("x",)), (lo, hi), name="x")
    return KaDecomposition(ident, (KaChannel(sq, [1.0, 1.0]), KaChannel(neg, [1.0, -1.0])),
                           input_domain=domain, name="product")


def sum_decomposition(d: int, domain=(-1.0, 1.0)) -> KaDecomposition:
    """``x_1 + ... + x_d`` with one channel and identity inner and outer functions."""
    lo, hi = domain
    r = 1.1 * d * max(abs(lo), abs(hi))
    ident_out = ScalarFunctionSpec(compile_expr("z", ("z",)), (-r, r), name="z")
    ident = ScalarFunctionSpec(compile_expr("x", ("x",)), (lo, hi), name="x")
    return KaDecomposition(ident, (KaChannel(ident_out, np.ones(d)),), input_domain=domain,
                           name=f"sum{d}")


def decomposition_from_json(data: dict) -> KaDecomposition:
    """Read ``{"inner": fn, "shift": a, "input_domain": [..], "channels": [{outer, weights, offset}]}``.

    A top-level ``"weights"`` list is used for channels that omit their own.
    """
    domain = tuple(constant(v) for v in data.get("input_domain", (-1.0, 1.0)))
    if data.get("stock") == "product":
        return product_decomposition(domain)
    if data.get("stock") == "sum":
        if "arity" not in data:
            raise ConfigError("a stock sum decomposition needs an arity")
        return sum_decomposition(int(data["arity"]), domain)
    shared = data.get("weights")
    chans = []
    for ch in data["channels"]:
        w = ch.get("weights", shared)
        if w is None:
            raise ConfigError("channel has no weights and no shared weights are given")
        chans.append(KaChannel(function_from_json(ch["outer"], ("z",)), w, ch.get("offset", 0.0)))
    return KaDecomposition(
        inner=function_from_json(data["inner"], ("x",)),
        channels=tuple(chans),
        shift=float(data.get("shift", 0.0)),
        input_domain=domain,
        decomposition_error=float(data.get("decomposition_error", 0.0)),
        name=data.get("name", ""),
    )


def _fit_net(f: ScalarFunctionSpec, width: int, activation, seed) -> ShallowNet:
    if activation.name == "identity":
        return _affine_net(f)
    x = f.grid(N_TRAIN)
    return train_shallow(x, f(x), width, activation, seed=seed)


def _sup_on(f: ScalarFunctionSpec, net: ShallowNet) -> float:
    x = f.grid(N_EVAL)
    return float(np.max(np.abs(net(x) - f(x))))


def _weights_kernel(weights: np.ndarray) -> ExpSumKernel:
    """Exponential sum whose lag ``j`` value approximates ``weights[d - 1 - j]``."""
    lags = weights[::-1].copy()
    d = lags.size
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IllConditionedWarning)
        res = fit_poly_change_of_var(FitProblem(lags, modes=d, method=FitMethod.POLY))
    return res.kernel


def _conv_layer(kernels: list[ExpSumKernel]) -> SsmLayer:
    q = len(kernels)
    rates = np.concatenate([k.lam for k in kernels])
    W = np.diag(np.exp(-rates))
    U = np.zeros((rates.size, q))
    C = np.zeros((q, rates.size))
    start = 0
    for i, k in enumerate(kernels):
        U[start:start + k.modes, i] = k.u
        C[i, start:start + k.modes] = k.c
        start += k.modes
    return SsmLayer(W, U, C)


@dataclass
class KaBuild:
    model: MultiLayerModel
    decomposition: KaDecomposition
    kernels: list[ExpSumKernel]
    bound: float
    met_tol: bool
    tol: float
    report: dict = field(default_factory=dict)

    def predict(self, X) -> np.ndarray:
        """Pipeline output at the final step for each row of ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.decomposition.arity:
            raise ConfigError(f"expected {self.decomposition.arity} coordinates, got {X.shape[1]}")
        return np.array([forward_multilayer(self.model, row[:, None])[-1, 0] for row in X])


def build_ka_pipeline(
    decomp: KaDecomposition,
    conv=None,
    widths: dict | None = None,
    tol: float = 1e-2,
    *,
    activation=TANH,
    seed=0,
) -> KaBuild:
    """Assemble the five-layer model and its a-priori error bound.

    ``conv`` optionally supplies the convolution kernel(s) directly, either
    one ``ExpSumKernel`` for every channel or one per channel; by default each
    channel's weights are fit exactly with ``d`` modes. The bound is

        sum_q L_q (||b_q||_1 eps_phi + eps_conv_q) + eps_Phi_q

    where ``eps_conv_q = ||b_q - rho_q||_1 * sup|phi_hat|`` measures the kernel
    realization. Each stage gets a third of ``tol`` when attributing misses.
    """
    widths = {"phi": 64, "Phi": 64, **(widths or {})}
    act = get_activation(activation)
    Q = decomp.n_channels
    d = decomp.arity
    shifts = decomp.shifts()

    # stage 1-2: inner function
    phi_act = IDENTITY if decomp.inner.is_affine() else act
    phi_net = _fit_net(decomp.inner, widths["phi"], phi_act, seed)
    eps_phi = _sup_on(decomp.inner, phi_net)
    lo, hi = decomp.input_domain
    ilo, ihi = decomp.inner.domain
    phi_covered = bool(ilo <= lo + shifts.min() and hi + shifts.max() <= ihi)
    xs = np.linspace(lo, hi, N_EVAL)
    phi_sup = max(float(np.max(np.abs(phi_net(xs + s)))) for s in shifts)

    # stage 3: temporal convolution
    if conv is None:
        kernels = [_weights_kernel(ch.weights) for ch in decomp.channels]
    elif isinstance(conv, ExpSumKernel):
        kernels = [conv] * Q
    else:
        kernels = list(conv)
        if len(kernels) != Q or not all(isinstance(k, ExpSumKernel) for k in kernels):
            raise ConfigError(f"conv must be one ExpSumKernel or a list of {Q}")
    eps_conv = [float(np.sum(np.abs(ch.weights[::-1] - k.sample(d)))) * phi_sup
                for ch, k in zip(decomp.channels, kernels)]

    # stage 4-5: outer functions
    outer_affine = all(ch.outer.is_affine() for ch in decomp.channels)
    Phi_act = IDENTITY if outer_affine else act
    Phi_nets = [_fit_net(ch.outer, widths["Phi"], Phi_act, seed + 1 + q)
                for q, ch in enumerate(decomp.channels)]
    eps_Phi = [_sup_on(ch.outer, net) for ch, net in zip(decomp.channels, Phi_nets)]
    lips = [ch.outer.lipschitz_constant() for ch in decomp.channels]

    inner_stack = elementwise_model([phi_net] * Q, shifts)
    outer_stack = elementwise_model(Phi_nets, [ch.offset for ch in decomp.channels],
                                    separate_inputs=True, sum_outputs=True)
    model = MultiLayerModel(
        [*inner_stack.layers, _conv_layer(kernels), *outer_stack.layers],
        [phi_act, IDENTITY, IDENTITY, Phi_act],
    )

    channels = []
    bound = 0.0
    for q, ch in enumerate(decomp.channels):
        b1 = float(np.sum(np.abs(ch.weights)))
        reach = b1 * (phi_sup + eps_phi) + eps_conv[q]
        olo, ohi = ch.outer.domain
        covered = bool(olo <= ch.offset - reach and ch.offset + reach <= ohi)
        term = lips[q] * (b1 * eps_phi + eps_conv[q]) + eps_Phi[q]
        bound += term
        channels.append({
            "channel": q, "outer": ch.outer.description, "weights_l1": b1, "lipschitz": lips[q],
            "eps_conv": eps_conv[q], "eps_Phi": eps_Phi[q], "bound_term": term,
            "outer_domain_covered": covered,
        })
    budget = tol / 3.0
    stages = {
        "phi": {"sup_error": eps_phi, "activation": phi_act.name, "width": phi_net.width,
                "domain_covered": phi_covered, "met_tol": eps_phi <= budget},
        "conv": {"l1_error": eps_conv, "modes": [k.modes for k in kernels],
                 "met_tol": max(eps_conv) <= budget},
        "Phi": {"sup_error": eps_Phi, "activation": Phi_act.name,
                "widths": [n.width for n in Phi_nets], "met_tol": max(eps_Phi) <= budget},
    }
    covered = phi_covered and all(c["outer_domain_covered"] for c in channels)
    met = bool(bound + decomp.decomposition_error <= tol and covered)
    report = {
        "stage": "ka", "decomposition": decomp.name, "arity": d, "channels": channels,
        "stages": stages, "bound": bound, "decomposition_error": decomp.decomposition_error,
        "domain_covered": covered, "tol": tol, "met_tol": met,
        "failed_stages": [name for name, s in stages.items() if not s["met_tol"]],
    }
    return KaBuild(model, decomp, kernels, bound, met, tol, report)
