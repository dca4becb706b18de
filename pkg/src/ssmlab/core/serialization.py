"""JSON round-trip for layers and models.

Document layout::

    {"format": "ssmlab.model", "version": 1, "time_kind": "discrete",
     "layers": [{"type": "ssm", "time_kind": "discrete",
                 "W": [[...]], "U": [[...]], "C": [[...]], "D": [[...]], "b": [...]}],
     "activations": ["tanh"]}

Matrices are nested row-major lists. Python's float repr is the shortest
string that parses back to the same double, so the round trip is exact.
Nonlinear layers use ``"type": "rnn"`` (``W, U, b, C``) or ``"gru"`` /
``"lstm"`` (``W_ih, W_hh, b_ih, b_hh, C``).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..activations import get_activation
from ..exceptions import ConfigError
from .layers import GruLayer, LstmLayer, MultiLayerModel, SsmLayer, VanillaRnnLayer

FORMAT = "ssmlab.model"
VERSION = 1

_GATED = {"gru": GruLayer, "lstm": LstmLayer}


def layer_to_dict(layer) -> dict:
    if isinstance(layer, SsmLayer):
        return {
            "type": "ssm",
            "time_kind": layer.time_kind.value,
            "W": layer.W.tolist(),
            "U": layer.U.tolist(),
            "C": layer.C.tolist(),
            "D": layer.D.tolist(),
            "b": layer.b.tolist(),
        }
    if isinstance(layer, VanillaRnnLayer):
        return {"type": "rnn", "W": layer.W.tolist(), "U": layer.U.tolist(),
                "b": layer.b.tolist(), "C": layer.C.tolist()}
    for name, cls in _GATED.items():
        if isinstance(layer, cls):
            return {"type": name, **{k: getattr(layer, k).tolist()
                                     for k in ("W_ih", "W_hh", "b_ih", "b_hh", "C")}}
    raise TypeError(f"cannot serialize {type(layer).__name__}")


def layer_from_dict(data: dict):
    kind = data.get("type", "ssm")
    try:
        if kind == "ssm":
            return SsmLayer(
                np.array(data["W"], dtype=float),
                np.array(data["U"], dtype=float),
                np.array(data["C"], dtype=float),
                np.array(data["D"], dtype=float) if data.get("D") is not None else None,
                np.array(data["b"], dtype=float) if data.get("b") is not None else None,
                time_kind=data.get("time_kind", "discrete"),
            )
        if kind == "rnn":
            return VanillaRnnLayer(data["W"], data["U"], data.get("b"), data.get("C"))
        if kind in _GATED:
            return _GATED[kind](data["W_ih"], data["W_hh"], data.get("b_ih"),
                                data.get("b_hh"), data.get("C"))
    except KeyError as exc:
        raise ConfigError(f"layer of type {kind!r} is missing field {exc.args[0]!r}") from None
    raise ConfigError(f"unknown layer type {kind!r}")


def model_to_dict(model: MultiLayerModel) -> dict:
    return {
        "format": FORMAT,
        "version": VERSION,
        "time_kind": model.time_kind,
        "layers": [layer_to_dict(layer) for layer in model.layers],
        "activations": [a.name for a in model.activations],
    }


def model_from_dict(data: dict) -> MultiLayerModel:
    if data.get("version") != VERSION:
        raise ConfigError(f"unsupported model version {data.get('version')!r}")
    layers = [layer_from_dict(d) for d in data["layers"]]
    return MultiLayerModel(layers, [get_activation(a) for a in data.get("activations", [])])


def dumps_model(model: MultiLayerModel, indent: int | None = None) -> str:
    return json.dumps(model_to_dict(model), indent=indent)


def loads_model(text: str) -> MultiLayerModel:
    return model_from_dict(json.loads(text))


def save_model(model: MultiLayerModel, path) -> None:
    Path(path).write_text(dumps_model(model))


def load_model(path) -> MultiLayerModel:
    return loads_model(Path(path).read_text())
