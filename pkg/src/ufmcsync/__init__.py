"""Joint timing-offset and channel estimation for multi-user UFMC uplink."""

from .config import SystemConfig
from .waveform import (
    ChannelRealization,
    ReceivedFrame,
    SubbandFilter,
    SymbolFrame,
    apply_channel_and_noise,
    build_steering_vector,
    design_chebyshev_filter,
    eval_delayed_stream,
    eval_subcarrier_sum,
    interference_terms,
    receiver_front_end,
    synthesize_symbol,
)
from .anm import AnmProblem, AnmSolution, atomic_norm_exact, default_lambda, solve
from .estimation import (
    EstimationError,
    EstimationResult,
    associate,
    correlation_baseline,
    joint_estimate,
    ls_channels,
    matrix_pencil,
    tau_to_delta_t,
    timing_advance_decision,
)
from .harness import ExperimentConfig, MetricsRecord, compute_nmse, run_ber_sweep, run_nmse_sweep

__version__ = "0.1.0"

__all__ = [
    "SystemConfig",
    "SubbandFilter",
    "SymbolFrame",
    "ChannelRealization",
    "ReceivedFrame",
    "design_chebyshev_filter",
    "eval_subcarrier_sum",
    "synthesize_symbol",
    "eval_delayed_stream",
    "apply_channel_and_noise",
    "receiver_front_end",
    "interference_terms",
    "build_steering_vector",
    "AnmProblem",
    "AnmSolution",
    "solve",
    "default_lambda",
    "atomic_norm_exact",
    "EstimationResult",
    "EstimationError",
    "matrix_pencil",
    "tau_to_delta_t",
    "ls_channels",
    "joint_estimate",
    "associate",
    "timing_advance_decision",
    "correlation_baseline",
    "ExperimentConfig",
    "MetricsRecord",
    "run_nmse_sweep",
    "run_ber_sweep",
    "compute_nmse",
]
