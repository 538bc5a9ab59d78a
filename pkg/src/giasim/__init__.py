"""Grouping-based interference alignment simulator for multi-cell MIMO uplink.

Cells in a coordinated cluster pair up so that each aligns all of its users'
interference into a small subspace at exactly one other base station, which
then removes everything by zero-forcing. The package provides the
closed-form transceiver construction, three ways to optimize which cell
aligns toward which, Grassmannian limited feedback of the precoder patterns
with dynamic bit allocation, and a seeded Monte-Carlo harness producing CSV.
"""

from .assignment import (
    Assignment,
    PreferenceProfile,
    breaking_step,
    build_preferences,
    centralized_search,
    enumerate_derangements,
    fca_match,
    fixed_cyclic,
    gale_shapley,
    is_stable,
    strict_count_formula,
)
from .errors import (
    AlignmentFailure,
    CapacityExceeded,
    ContractViolation,
    DegenerateChannel,
    EmptySubspace,
    GiaSimError,
    InfeasibleConfig,
    NumericalFailure,
    RankDeficient,
)
from .feedback import (
    BitAllocation,
    Codebook,
    dba_allocate,
    decompose_quantization,
    distortion_bound,
    eba_allocate,
    generate_codebook,
    omega_matrix,
    quantize,
    quantized_decoder,
    rinr,
    rinr_upper_bound,
)
from .gia import (
    TransceiverSet,
    aligned_interference_basis,
    build_potentials,
    build_transceivers,
    full_precoder,
    inner_precoder,
    stack_alignment_matrix,
    user_pattern,
    user_rate,
    verify_alignment,
    zf_decoder,
)
from .harness import (
    SchemeSpec,
    SweepSpec,
    TrialResult,
    aggregate_metrics,
    backhaul_overhead,
    baseline_fdma,
    baseline_rb,
    run_sweep,
    run_trial,
    throughput,
)
from .system import (
    ChannelRealization,
    SystemConfig,
    draw_channels,
    trial_rng,
    validate_feasibility,
)

__version__ = "0.1.0"
