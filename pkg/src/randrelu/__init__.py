"""Random ReLU features: sampling, the induced arc-cosine kernel, Maurey
sparsification of ReLU atoms, norm-constrained training and experiments."""

from randrelu.atoms import (
    AssembledNet,
    AtomicFunction,
    BudgetExceededError,
    LayerStack,
    VectorAtomic,
    assemble,
    best_of_k_sparsify,
    layer_node_counts,
    maurey_error_bound,
    maurey_sparsify,
    sparsify_stack,
    stack_error_constant,
)
from randrelu.data import Dataset, SplitPlan, gen_daniely, gen_grid2d, kfold, load_libsvm, normalize
from randrelu.features import FeatureBank, FeatureSpec, fourier_features, relu_features
from randrelu.kernels import arccos_kernel, empirical_dmax, mc_kernel_estimate, taylor_coeffs
from randrelu.learn import (
    DenseNet,
    LossSpec,
    RandomFeatureModel,
    TrainConfig,
    dense_train,
    matched_width_3layer,
    theory_counts,
    train_rrf,
)

__version__ = "0.1.0"

__all__ = [
    "AssembledNet",
    "AtomicFunction",
    "BudgetExceededError",
    "LayerStack",
    "VectorAtomic",
    "assemble",
    "best_of_k_sparsify",
    "layer_node_counts",
    "maurey_error_bound",
    "maurey_sparsify",
    "sparsify_stack",
    "stack_error_constant",
    "Dataset",
    "SplitPlan",
    "gen_daniely",
    "gen_grid2d",
    "kfold",
    "load_libsvm",
    "normalize",
    "FeatureBank",
    "FeatureSpec",
    "fourier_features",
    "relu_features",
    "arccos_kernel",
    "empirical_dmax",
    "mc_kernel_estimate",
    "taylor_coeffs",
    "DenseNet",
    "LossSpec",
    "RandomFeatureModel",
    "TrainConfig",
    "dense_train",
    "matched_width_3layer",
    "theory_counts",
    "train_rrf",
]
