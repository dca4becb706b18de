"""Constructive builders: element-wise maps, Kolmogorov-Arnold pipelines, Volterra series."""

from .elementwise import ElementwiseBuild, ShallowNet, build_elementwise, elementwise_model, train_shallow
from .functions import ScalarFunctionSpec, compile_expr, function_from_json
from .ka import (
    KaBuild,
    KaChannel,
    KaDecomposition,
    build_ka_pipeline,
    decomposition_from_json,
    product_decomposition,
    sum_decomposition,
)
from .volterra import (
    VolterraBuild,
    VolterraModel,
    VolterraSpec,
    VolterraTerm,
    build_volterra,
    factorize,
    quadrature_reference,
    spec_from_json,
)

__all__ = [
    "ElementwiseBuild", "KaBuild", "KaChannel", "KaDecomposition", "ScalarFunctionSpec",
    "ShallowNet", "VolterraBuild", "VolterraModel", "VolterraSpec", "VolterraTerm",
    "build_elementwise", "build_ka_pipeline", "build_volterra", "compile_expr",
    "decomposition_from_json", "elementwise_model", "factorize", "function_from_json",
    "product_decomposition", "quadrature_reference", "spec_from_json", "sum_decomposition",
    "train_shallow",
]
