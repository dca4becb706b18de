"""Linear and nonlinear state-space models: execution engines, kernel fitting,
constructive builders and memory probes."""

__version__ = "0.1.0"

from .activations import Activation, get_activation
from .core import (
    ExpSumKernel,
    GruLayer,
    LstmLayer,
    MultiLayerModel,
    SampledKernel,
    SsmLayer,
    VanillaRnnLayer,
    discretize,
    dumps_model,
    forward_continuous,
    forward_multilayer,
    load_model,
    loads_model,
    materialize_kernel,
    random_stable_layer,
    run_continuous,
    run_fft,
    run_parallel_scan,
    run_sequential,
    save_model,
)
from .estimators import ElementwiseSSMRegressor, ExpSumKernelRegressor, SSMTransformer
from .kernel_fit import FitMethod, FitProblem, FitResult, fit_kernel, fit_sweep
from .memory_probe import (
    EnvelopeFit,
    Family,
    MemoryTrace,
    ModelZooConfig,
    closed_form_memory_single_layer,
    closed_form_memory_two_layer,
    fit_envelope,
    generate_model,
    probe_memory,
    verify_exponential_propagation,
)

__all__ = [
    "Activation", "ElementwiseSSMRegressor", "EnvelopeFit", "ExpSumKernel", "ExpSumKernelRegressor",
    "Family", "FitMethod", "FitProblem", "FitResult", "GruLayer", "LstmLayer", "MemoryTrace",
    "ModelZooConfig", "MultiLayerModel", "SSMTransformer", "SampledKernel", "SsmLayer",
    "VanillaRnnLayer", "closed_form_memory_single_layer", "closed_form_memory_two_layer",
    "discretize", "dumps_model", "fit_envelope", "fit_kernel", "fit_sweep", "forward_continuous",
    "forward_multilayer", "generate_model", "get_activation", "load_model", "loads_model",
    "materialize_kernel", "probe_memory", "random_stable_layer", "run_continuous", "run_fft",
    "run_parallel_scan", "run_sequential", "save_model", "verify_exponential_propagation",
]
