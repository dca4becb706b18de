"""Layer-wise activations with their Lipschitz constants."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import erf, expit

from .exceptions import ConfigError

# max of d/dz [z * Phi(z)], attained at z = sqrt(2)
_GELU_LIPSCHITZ = 1.1289041451847327


@dataclass(frozen=True)
class Activation:
    """An element-wise nonlinearity.

    ``sigmoidal`` marks functions with limits -1 and +1 at -inf and +inf, the
    class the element-wise construction is stated for.
    """

    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    lipschitz: float
    deriv: Callable[[np.ndarray], np.ndarray]
    sigmoidal: bool = False

    def __call__(self, z):
        return self.fn(np.asarray(z, dtype=np.float64))

    def grad(self, z):
        """Derivative (a subgradient at kinks)."""
        return self.deriv(np.asarray(z, dtype=np.float64))

    def __repr__(self):
        return f"Activation({self.name!r})"


def _hardtanh(z):
    return np.clip(z, -1.0, 1.0)


def _relu(z):
    return np.maximum(z, 0.0)


def _sigmoidal(z):
    # 2 * logistic(z) - 1 == tanh(z / 2); limits are -1 and +1
    return 2.0 * expit(z) - 1.0


def _gelu(z):
    return 0.5 * z * (1.0 + erf(z / np.sqrt(2.0)))


def _gelu_grad(z):
    return 0.5 * (1.0 + erf(z / np.sqrt(2.0))) + z * np.exp(-0.5 * z * z) / np.sqrt(2.0 * np.pi)


def _sigmoidal_grad(z):
    e = expit(z)
    return 2.0 * e * (1.0 - e)


IDENTITY = Activation("identity", lambda z: z, 1.0, np.ones_like)
TANH = Activation("tanh", np.tanh, 1.0, lambda z: 1.0 - np.tanh(z) ** 2, sigmoidal=True)
HARDTANH = Activation("hardtanh", _hardtanh, 1.0, lambda z: (np.abs(z) < 1.0).astype(float),
                      sigmoidal=True)
RELU = Activation("relu", _relu, 1.0, lambda z: (z > 0).astype(float))
SIGMOIDAL = Activation("sigmoidal", _sigmoidal, 0.5, _sigmoidal_grad, sigmoidal=True)
GELU = Activation("gelu", _gelu, _GELU_LIPSCHITZ, _gelu_grad)

ACTIVATIONS = {a.name: a for a in (IDENTITY, TANH, HARDTANH, RELU, SIGMOIDAL, GELU)}


def get_activation(activation) -> Activation:
    """Look up an activation by name; ``Activation`` instances pass through."""
    if isinstance(activation, Activation):
        return activation
    if activation is None:
        return IDENTITY
    try:
        return ACTIVATIONS[str(activation).lower()]
    except KeyError:
        raise ConfigError(
            f"unknown activation {activation!r}; expected one of {sorted(ACTIVATIONS)}"
        ) from None
