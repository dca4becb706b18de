"""Recurrent layer types and the multi-layer model container."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple, Sequence, Union

import numpy as np

from .._validation import as_matrix, as_vector, check_random_state, check_sequence
from ..activations import IDENTITY, Activation, get_activation
from ..exceptions import DimensionError, EigenSolverError, NumericalOverflowError


class TimeKind(str, Enum):
    DISCRETE = "discrete"
    CONTINUOUS = "continuous"


def _first_nonfinite_row(arr: np.ndarray) -> int | None:
    bad = np.flatnonzero(~np.isfinite(arr.reshape(arr.shape[0], -1)).all(axis=1))
    return int(bad[0]) if bad.size else None


def raise_if_nonfinite(arr: np.ndarray, what: str) -> None:
    step = _first_nonfinite_row(arr)
    if step is not None:
        raise NumericalOverflowError(
            f"{what} became non-finite at step {step}; the recurrence is likely unstable",
            step=step,
        )


class StabilityReport(NamedTuple):
    stable: bool
    radius_or_abscissa: float


@dataclass(frozen=True, eq=False)
class SsmLayer:
    """Linear state-space layer ``h_k = W h_{k-1} + U x_k + b``, ``y_k = C h_k + D x_k``.

    For ``time_kind="continuous"`` the same matrices describe
    ``dh/dt = W h + U x + b``. ``D`` and ``b`` default to zero. Arrays are
    stored read-only so layers can be shared between threads.
    """

    W: np.ndarray
    U: np.ndarray
    C: np.ndarray
    D: np.ndarray | None = None
    b: np.ndarray | None = None
    time_kind: TimeKind = TimeKind.DISCRETE

    def __post_init__(self):
        W = as_matrix(self.W, "W")
        m = W.shape[0]
        if W.shape != (m, m):
            raise DimensionError(f"W must be square, got {W.shape}")
        U = as_matrix(self.U, "U", (m, None))
        C = as_matrix(self.C, "C", (None, m), vector_as="row")
        d_in, d_out = U.shape[1], C.shape[0]
        D = np.zeros((d_out, d_in)) if self.D is None else self.D
        D = as_matrix(D, "D", (d_out, d_in))
        b = as_vector(np.zeros(m) if self.b is None else self.b, "b", m)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "time_kind", TimeKind(self.time_kind))

    @property
    def m(self) -> int:
        return self.W.shape[0]

    @property
    def d_in(self) -> int:
        return self.U.shape[1]

    @property
    def d_out(self) -> int:
        return self.C.shape[0]

    @property
    def is_discrete(self) -> bool:
        return self.time_kind is TimeKind.DISCRETE

    @property
    def stable(self) -> bool:
        return spectral_stability(self).stable

    @property
    def has_bias(self) -> bool:
        return bool(np.any(self.b != 0))

    def replace(self, **changes) -> "SsmLayer":
        fields = dict(W=self.W, U=self.U, C=self.C, D=self.D, b=self.b, time_kind=self.time_kind)
        fields.update(changes)
        return SsmLayer(**fields)

    def n_params(self) -> int:
        return self.W.size + self.U.size + self.C.size + self.D.size + self.b.size

    def __repr__(self):
        return f"SsmLayer(m={self.m}, d_in={self.d_in}, d_out={self.d_out}, {self.time_kind.value})"


def spectral_stability(layer: SsmLayer) -> StabilityReport:
    """Spectral radius (discrete) or spectral abscissa (continuous) of ``W``."""
    try:
        eig = np.linalg.eigvals(layer.W)
    except np.linalg.LinAlgError as exc:
        raise EigenSolverError(f"eigenvalue computation failed: {exc}") from exc
    if layer.is_discrete:
        value = float(np.max(np.abs(eig)))
        return StabilityReport(value < 1.0, value)
    value = float(np.max(eig.real))
    return StabilityReport(value < 0.0, value)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass(frozen=True, eq=False)
class VanillaRnnLayer:
    """Elman recurrence ``h_k = tanh(W h_{k-1} + U x_k + b)``, ``y_k = C h_k``."""

    W: np.ndarray
    U: np.ndarray
    b: np.ndarray | None = None
    C: np.ndarray | None = None

    def __post_init__(self):
        W = as_matrix(self.W, "W")
        m = W.shape[0]
        if W.shape != (m, m):
            raise DimensionError(f"W must be square, got {W.shape}")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "U", as_matrix(self.U, "U", (m, None)))
        object.__setattr__(self, "b", as_vector(np.zeros(m) if self.b is None else self.b, "b", m))
        C = np.eye(m) if self.C is None else self.C
        object.__setattr__(self, "C", as_matrix(C, "C", (None, m), vector_as="row"))

    m = property(lambda self: self.W.shape[0])
    d_in = property(lambda self: self.U.shape[1])
    d_out = property(lambda self: self.C.shape[0])

    def run(self, x) -> np.ndarray:
        x = check_sequence(x, self.d_in)
        drive = x @ self.U.T + self.b
        H = np.empty((x.shape[0], self.m))
        h = np.zeros(self.m)
        for k in range(x.shape[0]):
            h = np.tanh(self.W @ h + drive[k])
            H[k] = h
        return H @ self.C.T


@dataclass(frozen=True, eq=False)
class GruLayer:
    """GRU with gates stacked as (reset, update, new), matching the usual convention.

    ``r = s(W_ir x + b_ir + W_hr h + b_hr)``, ``z = s(W_iz x + b_iz + W_hz h + b_hz)``,
    ``n = tanh(W_in x + b_in + r * (W_hn h + b_hn))``, ``h' = (1 - z) n + z h``.
    """

    W_ih: np.ndarray
    W_hh: np.ndarray
    b_ih: np.ndarray | None = None
    b_hh: np.ndarray | None = None
    C: np.ndarray | None = None

    def __post_init__(self):
        W_hh = as_matrix(self.W_hh, "W_hh")
        if W_hh.shape[0] % 3 or W_hh.shape[0] != 3 * W_hh.shape[1]:
            raise DimensionError(f"W_hh must have shape (3m, m), got {W_hh.shape}")
        m = W_hh.shape[1]
        object.__setattr__(self, "W_hh", W_hh)
        object.__setattr__(self, "W_ih", as_matrix(self.W_ih, "W_ih", (3 * m, None)))
        for name in ("b_ih", "b_hh"):
            val = getattr(self, name)
            object.__setattr__(self, name, as_vector(np.zeros(3 * m) if val is None else val, name, 3 * m))
        C = np.eye(m) if self.C is None else self.C
        object.__setattr__(self, "C", as_matrix(C, "C", (None, m), vector_as="row"))

    m = property(lambda self: self.W_hh.shape[1])
    d_in = property(lambda self: self.W_ih.shape[1])
    d_out = property(lambda self: self.C.shape[0])

    def run(self, x) -> np.ndarray:
        x = check_sequence(x, self.d_in)
        m = self.m
        gi = x @ self.W_ih.T + self.b_ih
        H = np.empty((x.shape[0], m))
        h = np.zeros(m)
        for k in range(x.shape[0]):
            gh = self.W_hh @ h + self.b_hh
            r = _sigmoid(gi[k, :m] + gh[:m])
            z = _sigmoid(gi[k, m:2 * m] + gh[m:2 * m])
            n = np.tanh(gi[k, 2 * m:] + r * gh[2 * m:])
            h = (1.0 - z) * n + z * h
            H[k] = h
        return H @ self.C.T


@dataclass(frozen=True, eq=False)
class LstmLayer:
    """LSTM with gates stacked as (input, forget, cell, output)."""

    W_ih: np.ndarray
    W_hh: np.ndarray
    b_ih: np.ndarray | None = None
    b_hh: np.ndarray | None = None
    C: np.ndarray | None = None

    def __post_init__(self):
        W_hh = as_matrix(self.W_hh, "W_hh")
        if W_hh.shape[0] != 4 * W_hh.shape[1]:
            raise DimensionError(f"W_hh must have shape (4m, m), got {W_hh.shape}")
        m = W_hh.shape[1]
        object.__setattr__(self, "W_hh", W_hh)
        object.__setattr__(self, "W_ih", as_matrix(self.W_ih, "W_ih", (4 * m, None)))
        for name in ("b_ih", "b_hh"):
            val = getattr(self, name)
            object.__setattr__(self, name, as_vector(np.zeros(4 * m) if val is None else val, name, 4 * m))
        C = np.eye(m) if self.C is None else self.C
        object.__setattr__(self, "C", as_matrix(C, "C", (None, m), vector_as="row"))

    m = property(lambda self: self.W_hh.shape[1])
    d_in = property(lambda self: self.W_ih.shape[1])
    d_out = property(lambda self: self.C.shape[0])

    def run(self, x) -> np.ndarray:
        x = check_sequence(x, self.d_in)
        m = self.m
        gi = x @ self.W_ih.T + self.b_ih
        H = np.empty((x.shape[0], m))
        h = np.zeros(m)
        c = np.zeros(m)
        for k in range(x.shape[0]):
            g = gi[k] + self.W_hh @ h + self.b_hh
            i = _sigmoid(g[:m])
            f = _sigmoid(g[m:2 * m])
            cell = np.tanh(g[2 * m:3 * m])
            o = _sigmoid(g[3 * m:])
            c = f * c + i * cell
            h = o * np.tanh(c)
            H[k] = h
        return H @ self.C.T


RecurrentLayer = Union[SsmLayer, VanillaRnnLayer, GruLayer, LstmLayer]


@dataclass(frozen=True, eq=False)
class MultiLayerModel:
    """Stack of recurrent layers with an activation between consecutive layers.

    ``activations`` may be a single activation (used for every gap) or one per
    gap, i.e. ``len(layers) - 1`` entries. No activation follows the last layer.
    """

    layers: Sequence[RecurrentLayer]
    activations: Sequence[Activation] | Activation | str | None = field(default=None)

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise DimensionError("a model needs at least one layer")
        acts = self.activations
        if acts is None or isinstance(acts, (str, Activation)):
            acts = [get_activation(acts)] * (len(layers) - 1)
        acts = tuple(get_activation(a) for a in acts)
        if len(acts) != len(layers) - 1:
            raise DimensionError(
                f"{len(layers)} layers need {len(layers) - 1} activations, got {len(acts)}"
            )
        for i in range(1, len(layers)):
            if layers[i].d_in != layers[i - 1].d_out:
                raise DimensionError(
                    f"layer {i} expects {layers[i].d_in} inputs but layer {i - 1} "
                    f"produces {layers[i - 1].d_out}"
                )
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "activations", acts)

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def d_in(self) -> int:
        return self.layers[0].d_in

    @property
    def d_out(self) -> int:
        return self.layers[-1].d_out

    @property
    def all_ssm(self) -> bool:
        return all(isinstance(layer, SsmLayer) for layer in self.layers)

    @property
    def is_linear(self) -> bool:
        return self.all_ssm and all(a is IDENTITY or a.name == "identity" for a in self.activations)

    @property
    def time_kind(self) -> str:
        kinds = {layer.time_kind.value for layer in self.layers if isinstance(layer, SsmLayer)}
        if not kinds or kinds == {"discrete"}:
            return "discrete"
        return kinds.pop() if len(kinds) == 1 else "mixed"

    def forward(self, x, engine="sequential") -> np.ndarray:
        from .engines import forward_multilayer

        return forward_multilayer(self, x, engine)

    def __repr__(self):
        names = ", ".join(type(layer).__name__ for layer in self.layers)
        return f"MultiLayerModel([{names}], activations={[a.name for a in self.activations]})"


def random_stable_layer(
    m: int,
    d_in: int = 1,
    d_out: int = 1,
    *,
    time_kind: str = "discrete",
    rng=None,
    radius: float | tuple[float, float] = (0.5, 0.95),
    abscissa: float | tuple[float, float] = (-1.0, -0.1),
    feedthrough: bool = True,
    scale: float = 1.0,
) -> SsmLayer:
    """Draw a dense random layer whose ``W`` is stable by construction.

    Discrete layers are rescaled to a spectral radius drawn from ``radius``;
    continuous ones are shifted so the spectral abscissa is drawn from
    ``abscissa``. ``scale`` multiplies the random part of a continuous ``W``
    before the shift.
    """
    rng = check_random_state(rng)
    A = scale * rng.standard_normal((m, m)) / np.sqrt(m)
    eig = np.linalg.eigvals(A)
    if TimeKind(time_kind) is TimeKind.DISCRETE:
        target = rng.uniform(*radius) if isinstance(radius, tuple) else float(radius)
        W = A * (target / max(np.max(np.abs(eig)), 1e-12))
    else:
        target = rng.uniform(*abscissa) if isinstance(abscissa, tuple) else float(abscissa)
        W = A + (target - np.max(eig.real)) * np.eye(m)
    U = rng.standard_normal((m, d_in)) / np.sqrt(d_in)
    C = rng.standard_normal((d_out, m)) / np.sqrt(m)
    D = rng.standard_normal((d_out, d_in)) if feedthrough else None
    return SsmLayer(W, U, C, D, time_kind=time_kind)
