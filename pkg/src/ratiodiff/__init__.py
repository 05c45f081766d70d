"""Continuous-time discrete diffusion by conditional-ratio matching.

Exact CTMC oracles over enumerable product spaces, trainable conditional
models with a self-contained gradient engine, reverse-time samplers, and
distribution metrics, plus a CLI (``ratiodiff``) tying them together.
"""

from .datasets import ToyDatasetSpec, quantize2d, dequantize2d, sample_toy2d, sample_toy_states
from .errors import (
    CapacityError,
    ConfigError,
    DomainError,
    NumericError,
    RatiodiffError,
    VerificationError,
)
from .losses import (
    L2Head,
    CrossEntropyHead,
    DenoisingCrossEntropyHead,
    OrdinalKernelSpec,
    OrdinalScoreHead,
    TrainingBatch,
    expected_cross_entropy_observed,
    expected_cross_entropy_soft,
    expected_l2,
    loss_path_kl_tabular,
    make_head,
    ordinal_score_target,
    x0_marginal_transform,
)
from .metrics import MetricsReport, MmdConfig, evaluate_run, mmd_exp_hamming, tv_distance
from .models import (
    ExactTabularModel,
    backprop_gradient,
    leak_check,
    load_checkpoint,
    save_checkpoint,
    tabular_conditionals,
)
from .nets import EnergyModel, HollowModel, MaskedModel, TabularModel
from .rates import RateSpec, kernel_matrix, uniform_rate
from .samplers import (
    SamplerConfig,
    analytical_row_probs,
    euler_row_probs,
    exact_reverse_simulate,
    lb_corrector_step,
    reverse_rate_table,
    sample_reverse,
)
from .schedules import NoiseSchedule
from .simulate import forward_sample, gillespie_forward
from .spaces import StateSpace
from .tabular import (
    TabularDistribution,
    distribution_from_weights,
    exact_marginal,
    full_generator,
    reverse_transition_exact,
    uniform_distribution,
)
from .training import TrainConfig, TrainResult, toy_state_sampler, train
from .verify import run_suite

__version__ = "0.1.0"

__all__ = [
    "CapacityError",
    "ConfigError",
    "CrossEntropyHead",
    "DenoisingCrossEntropyHead",
    "DomainError",
    "EnergyModel",
    "ExactTabularModel",
    "HollowModel",
    "L2Head",
    "MaskedModel",
    "MetricsReport",
    "MmdConfig",
    "NoiseSchedule",
    "NumericError",
    "OrdinalKernelSpec",
    "OrdinalScoreHead",
    "RateSpec",
    "RatiodiffError",
    "SamplerConfig",
    "StateSpace",
    "TabularDistribution",
    "TabularModel",
    "ToyDatasetSpec",
    "TrainConfig",
    "TrainResult",
    "TrainingBatch",
    "VerificationError",
    "analytical_row_probs",
    "backprop_gradient",
    "dequantize2d",
    "distribution_from_weights",
    "euler_row_probs",
    "evaluate_run",
    "exact_marginal",
    "exact_reverse_simulate",
    "expected_cross_entropy_observed",
    "expected_cross_entropy_soft",
    "expected_l2",
    "forward_sample",
    "full_generator",
    "gillespie_forward",
    "kernel_matrix",
    "lb_corrector_step",
    "leak_check",
    "load_checkpoint",
    "loss_path_kl_tabular",
    "make_head",
    "mmd_exp_hamming",
    "ordinal_score_target",
    "quantize2d",
    "reverse_rate_table",
    "reverse_transition_exact",
    "run_suite",
    "sample_reverse",
    "sample_toy2d",
    "sample_toy_states",
    "save_checkpoint",
    "tabular_conditionals",
    "toy_state_sampler",
    "train",
    "tv_distance",
    "uniform_distribution",
    "uniform_rate",
    "x0_marginal_transform",
]
