"""State-space layers, multi-layer models and their execution engines."""

from .discretize import Scheme, discretize, hold_matrices
from .engines import (
    Engine,
    affine_scan,
    conv_direct,
    conv_fft,
    forward_continuous,
    forward_multilayer,
    materialize_kernel,
    run_continuous,
    run_fft,
    run_layer,
    run_parallel_scan,
    run_sequential,
)
from .kernels import ExpSumKernel, SampledKernel
from .layers import (
    GruLayer,
    LstmLayer,
    MultiLayerModel,
    SsmLayer,
    StabilityReport,
    TimeKind,
    VanillaRnnLayer,
    random_stable_layer,
    spectral_stability,
)
from .serialization import (
    dumps_model,
    layer_from_dict,
    layer_to_dict,
    load_model,
    loads_model,
    model_from_dict,
    model_to_dict,
    save_model,
)

__all__ = [
    "Engine", "ExpSumKernel", "GruLayer", "LstmLayer", "MultiLayerModel", "SampledKernel",
    "Scheme", "SsmLayer", "StabilityReport", "TimeKind", "VanillaRnnLayer", "affine_scan",
    "conv_direct", "conv_fft", "discretize", "dumps_model", "forward_continuous",
    "forward_multilayer", "hold_matrices", "layer_from_dict", "layer_to_dict", "load_model",
    "loads_model", "materialize_kernel", "model_from_dict", "model_to_dict", "random_stable_layer",
    "run_continuous", "run_fft", "run_layer", "run_parallel_scan", "run_sequential",
    "save_model", "spectral_stability",
]
