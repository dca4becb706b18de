"""Temporal convolution kernels: sampled lags or exponential sums."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .._validation import as_vector
from ..exceptions import DimensionError


@dataclass(frozen=True, eq=False)
class SampledKernel:
    """Kernel values ``rho_j`` at lags ``j * dt``, shaped ``(T, d_out, d_in)``."""

    values: np.ndarray
    dt: float = 1.0

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64)
        if vals.ndim == 1:
            vals = vals[:, None, None]
        if vals.ndim != 3 or vals.shape[0] < 1:
            raise DimensionError(f"kernel values must have shape (T, d_out, d_in), got {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("kernel values contain non-finite entries")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "dt", float(self.dt))

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def scalar(self) -> np.ndarray:
        """Single-channel kernel as a 1-D array."""
        if self.values.shape[1:] != (1, 1):
            raise DimensionError(f"kernel has {self.values.shape[1:]} channels, not (1, 1)")
        return self.values[:, 0, 0]

    def sample(self, n: int | None = None) -> np.ndarray:
        n = self.length if n is None else n
        if n > self.length:
            raise DimensionError(f"kernel has {self.length} lags, {n} requested")
        return self.values[:n, 0, 0] if self.values.shape[1:] == (1, 1) else self.values[:n]


@dataclass(frozen=True, eq=False)
class ExpSumKernel:
    """Scalar kernel ``rho(s) = sum_i c_i u_i exp(-lambda_i s)`` with ``lambda_i >= 0``."""

    c: np.ndarray
    lam: np.ndarray
    u: np.ndarray | None = None

    def __post_init__(self):
        c = as_vector(self.c, "c")
        lam = as_vector(self.lam, "lam", c.size)
        if np.any(lam < 0):
            raise ValueError("decay rates must be non-negative")
        u = as_vector(np.ones(c.size) if self.u is None else self.u, "u", c.size)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "u", u)

    @property
    def modes(self) -> int:
        return self.c.size

    def __call__(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=np.float64)
        return np.exp(-np.multiply.outer(s, self.lam)) @ (self.c * self.u)

    def sample(self, n: int, dt: float = 1.0) -> np.ndarray:
        return self(np.arange(n) * dt)

    def l1_norm(self, n: int, dt: float = 1.0) -> float:
        return float(np.sum(np.abs(self.sample(n, dt))))

    def to_dict(self) -> dict:
        return {"modes": self.modes, "c": self.c.tolist(), "lambda": self.lam.tolist(), "u": self.u.tolist()}
