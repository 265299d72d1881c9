"""From-scratch feed-forward network with backpropagation and a numerical oracle."""

from .layers import (
    ACTIVATIONS,
    CONV2D,
    DENSE,
    FLATTEN,
    LINEAR,
    MAXPOOL2D,
    RELU,
    SIGMOID,
    SOFTMAX,
    LayerSpec,
    ShapeError,
    conv2d,
    dense,
    flatten,
    maxpool2d,
    validate_chain,
)
from .network import (
    CROSS_ENTROPY,
    LOSSES,
    MSE,
    CacheMismatchError,
    ForwardCache,
    Gradients,
    Hyperparams,
    LossError,
    ModelParams,
    backward,
    compute_loss,
    forward,
    init_params,
    predict,
    sgd_step,
    to_onehot,
    train_epochs,
)
from .gradcheck import GroupCheck, compare_gradients, finite_diff_gradient, relative_errors
