"""Continuous-to-discrete conversion of state-space layers."""

from __future__ import annotations

from enum import Enum

import numpy as np
from scipy.linalg import expm

from .._validation import check_positive
from ..exceptions import ConfigError, DiscretizationError
from .layers import SsmLayer, TimeKind


class Scheme(str, Enum):
    ZOH = "zoh"
    BILINEAR = "bilinear"


def _expm_checked(M: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore", invalid="ignore"):
        F = expm(M)
    if not np.all(np.isfinite(F)):
        raise DiscretizationError("matrix exponential is not finite; reduce dt")
    return F


def hold_matrices(W: np.ndarray, U: np.ndarray, dt: float, order: int = 0):
    """Exact propagators of ``dh/dt = W h + U u`` over one step of length ``dt``.

    With ``order=0`` the input is held constant and ``(Phi, G0)`` satisfy
    ``h(t + dt) = Phi h(t) + G0 u``. With ``order=1`` the input is linearly
    interpolated between samples and ``(Phi, G0, G1)`` give
    ``h(t + dt) = Phi h(t) + G0 u_k + G1 (u_{k+1} - u_k)``.
    Both come from one exponential of an augmented block matrix, so a
    singular ``W`` needs no special case.
    """
    m, q = U.shape
    if order == 0:
        M = np.zeros((m + q, m + q))
        M[:m, :m] = W * dt
        M[:m, m:] = U * dt
        F = _expm_checked(M)
        return F[:m, :m], F[:m, m:]
    if order == 1:
        M = np.zeros((m + 2 * q, m + 2 * q))
        M[:m, :m] = W * dt
        M[:m, m:m + q] = U * dt
        M[m:m + q, m + q:] = np.eye(q)
        F = _expm_checked(M)
        return F[:m, :m], F[:m, m:m + q], F[:m, m + q:]
    raise ValueError(f"hold order must be 0 or 1, got {order}")


def discretize(layer: SsmLayer, dt: float, scheme: str | Scheme = Scheme.ZOH) -> SsmLayer:
    """Convert a continuous layer to the discrete recurrence.

    ZOH gives ``W_d = exp(W dt)`` and ``U_d = int_0^dt exp(W s) ds U``, which
    equals ``W^{-1}(W_d - I) U`` when ``W`` is invertible. The bilinear
    (Tustin) scheme gives ``W_d = (I - dt/2 W)^{-1}(I + dt/2 W)`` and
    ``U_d = (I - dt/2 W)^{-1} dt U``. ``C`` and ``D`` are unchanged.

    With a zero-order hold, discrete state ``h_k`` is the continuous state at
    the end of the interval on which ``x_k`` is held.
    """
    if layer.time_kind is not TimeKind.CONTINUOUS:
        raise ConfigError("discretize expects a continuous-time layer")
    check_positive(dt, "dt")
    scheme = Scheme(scheme)
    m = layer.m
    Ub = np.hstack([layer.U, layer.b[:, None]])
    if scheme is Scheme.ZOH:
        Wd, Gb = hold_matrices(layer.W, Ub, dt)
    else:
        left = np.eye(m) - 0.5 * dt * layer.W
        try:
            Wd = np.linalg.solve(left, np.eye(m) + 0.5 * dt * layer.W)
            Gb = np.linalg.solve(left, dt * Ub)
        except np.linalg.LinAlgError as exc:
            raise DiscretizationError(f"bilinear transform is singular at dt={dt}") from exc
        if not (np.all(np.isfinite(Wd)) and np.all(np.isfinite(Gb))):
            raise DiscretizationError("bilinear transform produced non-finite entries")
    return SsmLayer(Wd, Gb[:, :-1], layer.C, layer.D, Gb[:, -1], time_kind=TimeKind.DISCRETE)
