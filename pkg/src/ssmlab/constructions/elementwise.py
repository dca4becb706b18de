"""Two-layer state-space models that approximate element-wise functions.

With zero recurrence (``W1 = W2 = 0``, ``b2 = 0``) the stack computes
``y_k = U2 sigma(U1 x_k + b1)``, a shallow network applied at every step, so
``y_k`` depends on ``x_k`` alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import block_diag
from scipy.optimize import least_squares

from .._validation import check_random_state
from ..activations import IDENTITY, TANH, Activation, get_activation
from ..core.layers import MultiLayerModel, SsmLayer
from ..exceptions import ConfigError
from .functions import ScalarFunctionSpec

N_TRAIN = 1024
N_EVAL = 4096
ADAM_STEPS = 5000


@dataclass
class ShallowNet:
    """``g(x) = sum_i v_i sigma(a_i x + b_i)``."""

    a: np.ndarray
    b: np.ndarray
    v: np.ndarray
    activation: Activation

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.activation(np.multiply.outer(x, self.a) + self.b) @ self.v

    @property
    def width(self) -> int:
        return self.a.size


def _init_hidden(width, lo, hi, rng):
    span = hi - lo
    centers = lo + span * (np.arange(width) + rng.uniform(0.25, 0.75, width)) / width
    slopes = rng.choice([-1.0, 1.0], width) * rng.uniform(0.5, 2.0, width) * (2.0 / span) * np.sqrt(width)
    return slopes, -slopes * centers


def train_shallow(
    x: np.ndarray,
    y: np.ndarray,
    width: int,
    activation: Activation = TANH,
    *,
    seed=0,
    steps: int = ADAM_STEPS,
    learning_rate: float = 1e-2,
    polish: bool = True,
    max_nfev: int = 200,
) -> ShallowNet:
    """Fit a one-hidden-layer network to samples by full-batch Adam on mean squared error.

    Hidden units start with breakpoints spread over the sample range, the
    output weights start at their least-squares values, and a
    Levenberg-Marquardt polish runs after Adam. Deterministic for a fixed seed.
    """
    rng = check_random_state(seed)
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    act = get_activation(activation)
    a, b = _init_hidden(width, x.min(), x.max(), rng)
    v = np.linalg.lstsq(act(np.multiply.outer(x, a) + b), y, rcond=None)[0]
    theta = np.concatenate([a, b, v])
    n = x.size

    def unpack(t):
        return t[:width], t[width:2 * width], t[2 * width:]

    def residual(t):
        a_, b_, v_ = unpack(t)
        return act(np.multiply.outer(x, a_) + b_) @ v_ - y

    def jacobian(t):
        a_, b_, v_ = unpack(t)
        z = np.multiply.outer(x, a_) + b_
        dz = act.grad(z) * v_
        return np.hstack([dz * x[:, None], dz, act(z)])

    m1 = np.zeros_like(theta)
    m2 = np.zeros_like(theta)
    beta1, beta2, eps = 0.9, 0.999, 1e-12
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(1, steps + 1):
            a, b, v = unpack(theta)
            z = np.multiply.outer(x, a) + b
            h = act(z)
            r = h @ v - y
            if not np.any(r):
                break
            slope = 1.0 - h * h if act.name == "tanh" else act.grad(z)
            dz = np.outer(r, v) * slope
            g = np.concatenate([x @ dz, dz.sum(axis=0), r @ h]) / n
            m1 = beta1 * m1 + (1 - beta1) * g
            m2 = beta2 * m2 + (1 - beta2) * g * g
            theta = theta - learning_rate * (m1 / (1 - beta1**step)) / (np.sqrt(m2 / (1 - beta2**step)) + eps)
    if polish and np.any(residual(theta)):
        try:
            sol = least_squares(residual, theta, jac=jacobian, method="lm", max_nfev=max_nfev,
                                xtol=1e-15, ftol=1e-15, gtol=1e-15)
            if np.all(np.isfinite(sol.x)) and np.max(np.abs(sol.fun)) <= np.max(np.abs(residual(theta))):
                theta = sol.x
        except ValueError:
            pass
    a, b, v = unpack(theta)
    return ShallowNet(a.copy(), b.copy(), v.copy(), act)


def _affine_net(f: ScalarFunctionSpec) -> ShallowNet:
    x = f.grid(N_TRAIN)
    slope, intercept = np.linalg.lstsq(np.column_stack([x, np.ones_like(x)]), f(x), rcond=None)[0]
    return ShallowNet(np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([slope, intercept]), IDENTITY)


def elementwise_model(nets: list[ShallowNet], shifts=None, *, separate_inputs: bool = False,
                      sum_outputs: bool = False) -> MultiLayerModel:
    """Two zero-recurrence layers applying ``nets[q]`` to ``x + shifts[q]`` in parallel.

    By default the scalar input feeds every net and the output has one
    channel per net. With ``separate_inputs`` net ``q`` reads input channel
    ``q``; with ``sum_outputs`` the channel outputs are added into one. All
    nets must share an activation.
    """
    act = nets[0].activation
    if any(n.activation.name != act.name for n in nets):
        raise ConfigError("parallel element-wise nets must share one activation")
    q = len(nets)
    shifts = np.zeros(q) if shifts is None else np.asarray(shifts, float).ravel()
    if shifts.size != q:
        raise ConfigError(f"{shifts.size} shifts for {q} nets")
    a = np.concatenate([n.a for n in nets])
    b = np.concatenate([n.b + n.a * s for n, s in zip(nets, shifts)])
    w = a.size
    U1 = block_diag(*[n.a[:, None] for n in nets]) if separate_inputs else a[:, None]
    first = SsmLayer(np.zeros((w, w)), U1, np.eye(w), b=b)
    if sum_outputs:
        second = SsmLayer(np.zeros((1, 1)), np.concatenate([n.v for n in nets])[None, :], np.eye(1))
    else:
        second = SsmLayer(np.zeros((q, q)), block_diag(*[n.v[None, :] for n in nets]), np.eye(q))
    return MultiLayerModel([first, second], [act])


@dataclass
class ElementwiseBuild:
    model: MultiLayerModel
    net: ShallowNet
    sup_error: float
    met_tol: bool
    tol: float
    function: ScalarFunctionSpec
    report: dict = field(default_factory=dict)

    def __call__(self, x):
        return self.net(x)


def build_elementwise(
    f: ScalarFunctionSpec,
    width: int,
    tol: float,
    *,
    activation=TANH,
    seed=0,
    steps: int = ADAM_STEPS,
    n_train: int = N_TRAIN,
    n_eval: int = N_EVAL,
) -> ElementwiseBuild:
    """Train ``U2 sigma(U1 x + b1)`` on ``f`` and wrap it as a two-layer SSM.

    The sup error is measured on an ``n_eval``-point grid of the domain. An
    identity activation is solved exactly by affine least squares.
    """
    if not isinstance(f, ScalarFunctionSpec):
        raise ConfigError("f must be a ScalarFunctionSpec")
    if isinstance(width, bool) or not isinstance(width, (int, np.integer)) or width < 1:
        raise ConfigError(f"width must be a positive integer, got {width!r}")
    act = get_activation(activation)
    if act.name == "identity":
        net = _affine_net(f)
    else:
        x = f.grid(n_train)
        net = train_shallow(x, f(x), int(width), act, seed=seed, steps=steps)
    xe = f.grid(n_eval)
    sup = float(np.max(np.abs(net(xe) - f(xe))))
    model = elementwise_model([net])
    return ElementwiseBuild(
        model=model,
        net=net,
        sup_error=sup,
        met_tol=sup <= tol,
        tol=tol,
        function=f,
        report={"stage": "elementwise", "function": f.description, "width": net.width,
                "activation": act.name, "sup_error": sup, "tol": tol, "met_tol": sup <= tol},
    )
