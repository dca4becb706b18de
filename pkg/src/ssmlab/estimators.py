"""scikit-learn style wrappers around the functional core."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .activations import get_activation
from .constructions.elementwise import _affine_net, elementwise_model, train_shallow
from .constructions.functions import ScalarFunctionSpec
from .core.engines import as_engine, forward_multilayer
from .core.layers import MultiLayerModel, SsmLayer
from .exceptions import ConfigError
from .kernel_fit import FitProblem, as_method, fit_kernel


def _as_1d(X, name="X") -> np.ndarray:
    arr = np.asarray(X, dtype=float)
    if arr.ndim == 2 and arr.shape[1] == 1:
        arr = arr[:, 0]
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"{name} must be a non-empty 1-D array or a single column, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


class SSMTransformer(TransformerMixin, BaseEstimator):
    """Apply a fixed model to sequences.

    ``transform`` accepts one ``(T, d)`` sequence or a batch ``(n, T, d)``.
    ``fit`` only validates the model against the data width.
    """

    def __init__(self, model=None, engine="sequential"):
        self.model = model
        self.engine = engine

    def _model(self) -> MultiLayerModel:
        if isinstance(self.model, SsmLayer):
            return MultiLayerModel([self.model])
        if not isinstance(self.model, MultiLayerModel):
            raise ConfigError("model must be an SsmLayer or MultiLayerModel")
        return self.model

    def fit(self, X, y=None):
        model = self._model()
        as_engine(self.engine)
        X = np.asarray(X, dtype=float)
        width = X.shape[-1] if X.ndim >= 2 else 1
        if width != model.d_in:
            raise ValueError(f"X has {width} channels, model expects {model.d_in}")
        self.n_features_in_ = width
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_in_")
        model = self._model()
        X = np.asarray(X, dtype=float)
        if X.ndim == 3:
            return np.stack([forward_multilayer(model, seq, self.engine) for seq in X])
        return forward_multilayer(model, X, self.engine)


class ExpSumKernelRegressor(RegressorMixin, BaseEstimator):
    """Fit ``rho(s) ~ sum_i c_i exp(-lambda_i s)`` to samples ``(s, rho)``."""

    def __init__(self, modes=4, method="nlsq", dt=1.0, random_state=None):
        self.modes = modes
        self.method = method
        self.dt = dt
        self.random_state = random_state

    def fit(self, X, y):
        s = _as_1d(X, "X")
        rho = _as_1d(y, "y")
        if s.size != rho.size:
            raise ValueError("X and y have different lengths")
        order = np.argsort(s)
        problem = FitProblem((s[order], rho[order]), self.modes, method=as_method(self.method), dt=self.dt)
        kw = {"seed": self.random_state} if problem.method.value == "nlsq" else {}
        result = fit_kernel(problem, **kw)
        self.result_ = result
        self.kernel_ = result.kernel
        self.coef_ = result.kernel.c * result.kernel.u
        self.rates_ = result.kernel.lam
        self.sup_error_ = result.sup_error
        self.layer_ = result.layer
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "kernel_")
        return self.kernel_(_as_1d(X, "X"))


class ElementwiseSSMRegressor(RegressorMixin, BaseEstimator):
    """Shallow network ``U2 sigma(U1 x + b1)`` fit to ``(x, f(x))``, exportable as a two-layer SSM."""

    def __init__(self, width=32, activation="tanh", steps=5000, learning_rate=1e-2, random_state=0):
        self.width = width
        self.activation = activation
        self.steps = steps
        self.learning_rate = learning_rate
        self.random_state = random_state

    def fit(self, X, y):
        x = _as_1d(X, "X")
        f = _as_1d(y, "y")
        if x.size != f.size:
            raise ValueError("X and y have different lengths")
        act = get_activation(self.activation)
        if act.name == "identity":
            order = np.argsort(x)
            spec = ScalarFunctionSpec(samples=(x[order], f[order]), domain=(x.min(), x.max()))
            self.net_ = _affine_net(spec)
        else:
            self.net_ = train_shallow(x, f, int(self.width), act, seed=self.random_state,
                                      steps=self.steps, learning_rate=self.learning_rate)
        self.train_sup_error_ = float(np.max(np.abs(self.net_(x) - f)))
        self.domain_ = (float(x.min()), float(x.max()))
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "net_")
        return self.net_(_as_1d(X, "X"))

    def to_model(self) -> MultiLayerModel:
        check_is_fitted(self, "net_")
        return elementwise_model([self.net_])
