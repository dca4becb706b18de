"""Execution engines for linear state-space layers.

Three routes compute the same map ``y_k = sum_{i<=k} C W^{k-i} U x_i + D x_k``:
a sequential recurrence, a work-efficient parallel prefix scan over affine
maps, and a zero-padded FFT convolution with the materialized kernel. All
inputs are time-major ``(T, d)`` arrays with zero initial state.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from .._validation import check_positive, check_sequence
from ..exceptions import ConfigError, EngineCompatibilityError, KernelLengthError, DimensionError
from .discretize import hold_matrices
from .kernels import SampledKernel
from .layers import MultiLayerModel, SsmLayer, TimeKind, raise_if_nonfinite


class Engine(str, Enum):
    SEQUENTIAL = "sequential"
    SCAN = "scan"
    FFT = "fft"


_ENGINE_ALIASES = {"fftconv": "fft", "fft_conv": "fft", "parallel_scan": "scan"}


def as_engine(engine) -> Engine:
    if isinstance(engine, Engine):
        return engine
    key = str(engine).lower()
    return Engine(_ENGINE_ALIASES.get(key, key))


def _require_discrete(layer: SsmLayer) -> None:
    if not isinstance(layer, SsmLayer):
        raise EngineCompatibilityError(f"{type(layer).__name__} is not a linear state-space layer")
    if layer.time_kind is not TimeKind.DISCRETE:
        raise ConfigError("continuous-time layer: call discretize() first or use run_continuous()")


def _rows(X: np.ndarray, M: np.ndarray) -> np.ndarray:
    """``X @ M.T`` computed row by row, so a row's value does not depend on ``len(X)``."""
    return np.einsum("ti,oi->to", X, M)


def _readout(layer: SsmLayer, H: np.ndarray, x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore", invalid="ignore"):
        y = _rows(H, layer.C) + _rows(x, layer.D)
    raise_if_nonfinite(y, "output")
    return y


def run_sequential(layer: SsmLayer, x) -> np.ndarray:
    """Evaluate the recurrence step by step, O(T m^2)."""
    _require_discrete(layer)
    x = check_sequence(x, layer.d_in)
    drive = _rows(x, layer.U) + layer.b
    W = layer.W
    H = np.empty((x.shape[0], layer.m))
    h = np.zeros(layer.m)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(x.shape[0]):
            h = W @ h + drive[k]
            H[k] = h
    raise_if_nonfinite(H, "hidden state")
    return _readout(layer, H, x)


def affine_scan(A: np.ndarray, v: np.ndarray) -> np.ndarray:
    """All states of ``h_k = A h_{k-1} + v_k`` with ``h_{-1} = 0``.

    Blelloch up-sweep/down-sweep over the affine maps ``h -> A h + v_k`` with
    composition ``(A2, v2) o (A1, v1) = (A2 A1, A2 v1 + v2)``. The sequence is
    padded at the end with ``(A, 0)`` maps, so every subtree of size ``2^d``
    has linear part ``A^(2^d)`` and only those powers are ever formed. Because
    the tree is anchored at step 0 and products are taken row by row, the
    state at step ``k`` is bitwise independent of ``T``. Each level is one
    batched product.
    """
    T, m = v.shape
    levels = max(int(np.ceil(np.log2(T))), 0) if T > 1 else 0
    n = 1 << levels
    buf = np.zeros((n, m))
    buf[:T] = v
    powers = [A]
    for _ in range(1, levels):
        powers.append(powers[-1] @ powers[-1])
    with np.errstate(over="ignore", invalid="ignore"):
        for d in range(levels):
            half, stride = 1 << d, 1 << (d + 1)
            left = buf[half - 1::stride]
            buf[stride - 1::stride] += _rows(left, powers[d])
        prefix = buf
        prefix[n - 1] = 0.0
        for d in reversed(range(levels)):
            half, stride = 1 << d, 1 << (d + 1)
            agg = prefix[half - 1::stride].copy()
            parent = prefix[stride - 1::stride].copy()
            prefix[half - 1::stride] = parent
            prefix[stride - 1::stride] = _rows(parent, powers[d]) + agg
        states = _rows(prefix[:T], A) + v
    return states


def run_parallel_scan(layer: SsmLayer, x) -> np.ndarray:
    """Evaluate the recurrence with a parallel prefix scan, depth O(log T)."""
    _require_discrete(layer)
    x = check_sequence(x, layer.d_in)
    if x.shape[0] == 1:
        # degenerate scan, identical arithmetic to one sequential step
        return run_sequential(layer, x)
    H = affine_scan(layer.W, _rows(x, layer.U) + layer.b)
    raise_if_nonfinite(H, "hidden state")
    return _readout(layer, H, x)


def _power_series(W: np.ndarray, M: np.ndarray, T: int) -> np.ndarray:
    """Stack ``W^j M`` for ``j = 0..T-1`` into a ``(T,) + M.shape`` array."""
    out = np.empty((T,) + M.shape)
    cur = M.astype(np.float64, copy=True)
    with np.errstate(over="ignore", invalid="ignore"):
        for j in range(T):
            out[j] = cur
            cur = W @ cur
    raise_if_nonfinite(out, "matrix power")
    return out


def materialize_kernel(layer: SsmLayer, T: int) -> SampledKernel:
    """Induced kernel ``rho_j = C W^j U`` for lags ``0..T-1``, shape ``(T, d_out, d_in)``."""
    _require_discrete(layer)
    check_positive(T, "T", integer=True)
    series = _power_series(layer.W, layer.U, T)
    return SampledKernel(np.einsum("om,tmi->toi", layer.C, series))


def _next_pow2(n: int) -> int:
    return 1 << max(int(n - 1).bit_length(), 0)


def _kernel_and_input(kernel, x) -> tuple[np.ndarray, np.ndarray]:
    vals = kernel.values if isinstance(kernel, SampledKernel) else SampledKernel(kernel).values
    x = check_sequence(x, vals.shape[2])
    T = x.shape[0]
    if vals.shape[0] < T:
        raise KernelLengthError(f"kernel has {vals.shape[0]} lags but the sequence has {T} steps")
    return vals[:T], x


def _feedthrough(D, d_out: int, d_in: int) -> np.ndarray:
    if D is None:
        return np.zeros((d_out, d_in))
    D = np.atleast_2d(np.asarray(D, dtype=np.float64))
    if D.shape != (d_out, d_in):
        raise DimensionError(f"D has shape {D.shape}, expected {(d_out, d_in)}")
    return D


def conv_fft(kernel, x, D=None) -> np.ndarray:
    """Causal convolution ``y_k = sum_{j<=k} rho_j x_{k-j} + D x_k`` in O(T log T).

    The transform length is the next power of two at or above ``2T - 1`` so
    the circular product equals the linear convolution.
    """
    vals, x = _kernel_and_input(kernel, x)
    T = x.shape[0]
    n = _next_pow2(2 * T - 1)
    Kf = np.fft.rfft(vals, n, axis=0)
    Xf = np.fft.rfft(x, n, axis=0)
    if vals.shape[1:] == (1, 1):
        Yf = Kf[:, 0, :] * Xf
    else:
        Yf = np.einsum("foi,fi->fo", Kf, Xf)
    y = np.fft.irfft(Yf, n, axis=0)[:T]
    return y + x @ _feedthrough(D, vals.shape[1], vals.shape[2]).T


def conv_direct(kernel, x, D=None) -> np.ndarray:
    """Causal convolution by direct summation, O(T^2); the dense baseline."""
    vals, x = _kernel_and_input(kernel, x)
    T = x.shape[0]
    y = np.zeros((T, vals.shape[1]))
    for o in range(vals.shape[1]):
        for i in range(vals.shape[2]):
            y[:, o] += np.convolve(vals[:, o, i], x[:, i])[:T]
    return y + x @ _feedthrough(D, vals.shape[1], vals.shape[2]).T


def run_fft(layer: SsmLayer, x) -> np.ndarray:
    """Evaluate a layer through its materialized kernel and ``conv_fft``."""
    _require_discrete(layer)
    x = check_sequence(x, layer.d_in)
    T = x.shape[0]
    y = conv_fft(materialize_kernel(layer, T), x, layer.D)
    if layer.has_bias:
        # bias acts as a constant unit input: y_k += C sum_{j<=k} W^j b
        y += np.cumsum(_power_series(layer.W, layer.b[:, None], T)[:, :, 0] @ layer.C.T, axis=0)
    return y


_SSM_RUNNERS = {
    Engine.SEQUENTIAL: run_sequential,
    Engine.SCAN: run_parallel_scan,
    Engine.FFT: run_fft,
}


def run_layer(layer, x, engine="sequential") -> np.ndarray:
    engine = as_engine(engine)
    if isinstance(layer, SsmLayer):
        return _SSM_RUNNERS[engine](layer, x)
    if engine is not Engine.SEQUENTIAL:
        raise EngineCompatibilityError(
            f"{type(layer).__name__} has a nonlinear recurrence; only the sequential engine applies"
        )
    return layer.run(x)


def forward_multilayer(model: MultiLayerModel | SsmLayer, x, engine="sequential") -> np.ndarray:
    """Run the stack: layer, activation, layer, ..., layer (no trailing activation)."""
    if isinstance(model, SsmLayer):
        model = MultiLayerModel([model])
    engine = as_engine(engine)
    if engine is not Engine.SEQUENTIAL:
        bad = [type(layer).__name__ for layer in model.layers if not isinstance(layer, SsmLayer)]
        if bad:
            raise EngineCompatibilityError(f"engine {engine.value!r} cannot run {bad}")
    out = check_sequence(x, model.d_in)
    for i, layer in enumerate(model.layers):
        if i:
            out = model.activations[i - 1](out)
        out = run_layer(layer, out, engine)
    return out


def run_continuous(layer: SsmLayer, u, dt: float, hold: str = "foh") -> np.ndarray:
    """Simulate a continuous layer on the grid ``t_k = k dt`` from ``h(0) = 0``.

    ``u`` holds input samples ``u(t_k)``; the result holds ``y(t_k)``. With
    ``hold="foh"`` the input is linearly interpolated between samples (exact
    for piecewise-linear input, second order otherwise); ``"zoh"`` holds
    ``u_k`` on ``[t_k, t_{k+1})``.
    """
    if layer.time_kind is not TimeKind.CONTINUOUS:
        raise ConfigError("run_continuous expects a continuous-time layer")
    check_positive(dt, "dt")
    u = check_sequence(u, layer.d_in, name="u")
    Ub = np.hstack([layer.U, layer.b[:, None]])
    ub = np.hstack([u, np.ones((u.shape[0], 1))])
    N = u.shape[0]
    H = np.zeros((N, layer.m))
    if hold == "zoh":
        Phi, G0 = hold_matrices(layer.W, Ub, dt, order=0)
        drive = ub[:-1] @ G0.T
    elif hold == "foh":
        Phi, G0, G1 = hold_matrices(layer.W, Ub, dt, order=1)
        drive = ub[:-1] @ (G0 - G1).T + ub[1:] @ G1.T
    else:
        raise ValueError(f"hold must be 'zoh' or 'foh', got {hold!r}")
    h = np.zeros(layer.m)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(N - 1):
            h = Phi @ h + drive[k]
            H[k + 1] = h
    raise_if_nonfinite(H, "hidden state")
    return _readout(layer, H, u)


def forward_continuous(model: MultiLayerModel, u, dt: float, hold: str = "foh") -> np.ndarray:
    """Grid simulation of a stack of continuous layers with sampled activations."""
    out = check_sequence(u, model.d_in, name="u")
    for i, layer in enumerate(model.layers):
        if i:
            out = model.activations[i - 1](out)
        out = run_continuous(layer, out, dt, hold)
    return out
