"""Scalar target functions and a small safe expression language for spec files."""

from __future__ import annotations

import ast
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..exceptions import ConfigError

_FUNCS = {
    name: getattr(np, name)
    for name in ("sin", "cos", "tan", "exp", "log", "sqrt", "tanh", "abs", "arctan", "sinh", "cosh")
}
_FUNCS["sign"] = np.sign
_CONSTS = {"pi": np.pi, "e": np.e}

_BINOPS = {
    ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply,
    ast.Div: np.divide, ast.Pow: np.power,
}
_UNARY = {ast.USub: np.negative, ast.UAdd: np.positive}


def compile_expr(text: str, variables: tuple[str, ...]) -> Callable:
    """Compile an arithmetic expression over ``variables`` into a vectorized function.

    Only numbers, the named variables, ``pi``/``e``, ``+ - * / **`` and a fixed
    set of numpy functions are accepted.
    """
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse expression {text!r}: {exc.msg}") from None

    def check(node):
        if isinstance(node, ast.Expression):
            return check(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return
        if isinstance(node, ast.Name):
            if node.id not in variables and node.id not in _CONSTS:
                raise ConfigError(f"unknown name {node.id!r} in {text!r}")
            return
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            check(node.left)
            check(node.right)
            return
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
            check(node.operand)
            return
        if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name)
                and node.func.id in _FUNCS and not node.keywords and len(node.args) == 1):
            check(node.args[0])
            return
        raise ConfigError(f"unsupported syntax {ast.dump(node)[:40]!r} in {text!r}")

    check(tree)

    def evaluate(node, env):
        if isinstance(node, ast.Expression):
            return evaluate(node.body, env)
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            return env[node.id] if node.id in env else _CONSTS[node.id]
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](evaluate(node.left, env), evaluate(node.right, env))
        if isinstance(node, ast.UnaryOp):
            return _UNARY[type(node.op)](evaluate(node.operand, env))
        return _FUNCS[node.func.id](evaluate(node.args[0], env))

    def fn(*args):
        if len(args) != len(variables):
            raise TypeError(f"expected {len(variables)} arguments, got {len(args)}")
        env = {v: np.asarray(a, dtype=float) for v, a in zip(variables, args)}
        shape = np.broadcast(*env.values()).shape if env else ()
        return np.broadcast_to(evaluate(tree, env), shape).astype(float)

    fn.__name__ = "expr"
    fn.expression = text
    return fn


@dataclass(frozen=True, eq=False)
class ScalarFunctionSpec:
    """A continuous scalar function on ``domain = (lo, hi)``.

    Defined either by a callable or by sorted ``samples = (x, f(x))``, which
    are linearly interpolated. ``lipschitz`` is estimated from a dense grid
    when not given.
    """

    fn: Callable | None = None
    domain: tuple[float, float] = (-1.0, 1.0)
    samples: tuple[np.ndarray, np.ndarray] | None = None
    lipschitz: float | None = None
    name: str = ""

    def __post_init__(self):
        lo, hi = (float(v) for v in self.domain)
        if not lo < hi:
            raise ConfigError(f"domain must satisfy lo < hi, got {self.domain}")
        object.__setattr__(self, "domain", (lo, hi))
        if (self.fn is None) == (self.samples is None):
            raise ConfigError("give exactly one of fn or samples")
        if self.samples is not None:
            xs, ys = (np.asarray(a, dtype=float).ravel() for a in self.samples)
            if xs.size != ys.size or xs.size < 2:
                raise ConfigError("samples need matching x and f(x) arrays of length >= 2")
            if np.any(np.diff(xs) <= 0) or not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
                raise ConfigError("sample x values must be finite and strictly increasing")
            object.__setattr__(self, "samples", (xs, ys))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.samples is not None:
            return np.interp(x, *self.samples)
        return np.asarray(self.fn(x), dtype=float) * np.ones_like(x)

    @property
    def description(self) -> str:
        if self.name:
            return self.name
        return getattr(self.fn, "expression", getattr(self.fn, "__name__", "samples"))

    def grid(self, n: int) -> np.ndarray:
        return np.linspace(*self.domain, n)

    def lipschitz_constant(self, n: int = 4096) -> float:
        if self.lipschitz is not None:
            return float(self.lipschitz)
        x = self.grid(n)
        return float(np.max(np.abs(np.diff(self(x)) / np.diff(x))))

    def is_affine(self, n: int = 257, rtol: float = 1e-12) -> bool:
        x = self.grid(n)
        y = self(x)
        A = np.column_stack([x, np.ones_like(x)])
        coef = np.linalg.lstsq(A, y, rcond=None)[0]
        scale = max(float(np.max(np.abs(y))), 1.0)
        return float(np.max(np.abs(A @ coef - y))) <= rtol * scale


def constant(value) -> float:
    """A number, or a constant expression such as ``"-pi/2"``."""
    if isinstance(value, str):
        return float(compile_expr(value, ())())
    return float(value)


def function_from_json(data: dict, variables=("x",)) -> ScalarFunctionSpec:
    """Build a spec from ``{"expr": "...", "domain": [lo, hi]}`` or ``{"samples": [[x, f], ...]}``.

    Domain bounds may be constant expressions like ``"-pi"``.
    """
    domain = tuple(constant(v) for v in data.get("domain", (-1.0, 1.0)))
    lip = data.get("lipschitz")
    if "expr" in data:
        return ScalarFunctionSpec(compile_expr(data["expr"], tuple(variables)), domain,
                                  lipschitz=lip, name=data["expr"])
    pts = np.asarray(data["samples"], dtype=float)
    if "domain" not in data:
        domain = (float(pts[0, 0]), float(pts[-1, 0]))
    return ScalarFunctionSpec(samples=(pts[:, 0], pts[:, 1]), domain=domain, lipschitz=lip,
                              name=data.get("name", "samples"))
