"""Float64 tensor substrate with reverse-mode differentiation."""

from .functional import (
    batch_norm2d,
    batch_norm_nhwc,
    batch_norm_relu_pool_nhwc,
    bilinear_sample,
    binary_cross_entropy,
    conv2d,
    conv2d_nhwc,
    cross_entropy,
    frobenius_norm,
    gather_bilinear,
    gelu,
    layer_norm,
    linear,
    log_softmax,
    max_pool2d,
    max_pool_nhwc,
    softmax,
)
from .gradcheck import GradCheckReport, check_parameter_groups, finite_diff_check, relative_error
from .rng import Rng, splitmix64
from .tensor import (
    ContractError,
    DimensionError,
    Tape,
    Tensor,
    active_tape,
    add,
    as_tensor,
    backward,
    concat,
    div,
    exp,
    getitem,
    log,
    matmul,
    mean,
    mul,
    power,
    relu,
    reshape,
    sqrt,
    stack,
    sub,
    swapaxes,
    transpose,
    tsum,
)
