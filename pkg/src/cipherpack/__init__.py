"""Slot-packed ciphertext CNN inference simulator with exact operation
accounting: a SIMD-slot engine over Z_t, dense/column tensor packings and
their homomorphic transitions, low-rank factorized convolution, and a
closed-form cost model reconciled against measured counters."""

from .hesim import (
    CapacityError,
    EncodingOverflowError,
    HeContext,
    OpCounters,
    PlainVector,
    PreconditionError,
    SchemeParams,
    SlotCiphertext,
    rotations_for_span,
)
from .packing import (
    ChannelPacked,
    ConvPacked,
    DensePacked,
    KernelSpec,
    TensorShape,
    combine_to_dense,
    conv_pack,
    dense_pack,
    h_grouping,
    h_grouping_from_dense,
    h_im2col_from_conv,
    h_im2col_from_dense,
    plain_im2col,
)
from .engine import (
    BiasVector,
    WeightMatrix,
    conv_conv,
    conv_dense,
    factored_conv,
    fc_dense,
    square_layer,
)
from .factorize import (
    FactorizedPair,
    quantize_factors,
    quantize_matrix,
    rank_search,
    reconstruction_error,
    truncated_svd,
    weights_to_matrix,
)
from .costmodel import (
    CostReport,
    CostTriple,
    compare_plans,
    predict_conv,
    predict_dense,
    predict_network,
    predict_transition,
    rotation_reduction,
)
from .netspec import LayerSpec, NetworkError, NetworkSpec, load_network, save_network
from .planner import PackingPlan, PlanError, build_plan
from .presets import PRESET_NAMES, preset_network
from .runner import (
    ModulusTooSmallError,
    RunResult,
    run_encrypted,
    run_reference,
    verify,
)
from .weights import WeightSet, WeightTensor, load_weights, random_weights, save_weights

__version__ = "0.1.0"
