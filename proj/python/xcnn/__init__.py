"""Explainable CNN toolkit: autodiff tensors, screening CNN, metrics, and KernelSHAP."""

from ._core import (
    BudgetError,
    DomainError,
    InvalidArgument,
    ShapeError,
    SplitError,
    Tensor,
    UndefinedAucError,
    XcnnError,
    class_weights,
    confusion_matrix,
    conv2d,
    custom_cnn_audit,
    custom_cnn_shapes,
    exact_shapley,
    exp,
    head_audit,
    kernel_shap,
    linear,
    log,
    macro_prf1,
    matmul,
    maxpool2x2,
    mean,
    relu,
    roc_curve_auc,
    run,
    shapley_kernel_weight,
    softmax,
    stratified_split,
    sum,
    synth,
    weighted_cross_entropy,
)

__version__ = "0.1.0"
