"""Error bounds and exponents for random (multiple) access coding, with an ensemble simulator."""

from .bounds import BoundResult, GridSpec, pes_bound_multi, pes_bound_single, pes_bound_standard
from .channel import (
    Channel,
    InputDistribution,
    OperationRegion,
    RatePoint,
    RateProfile,
    conditional_mutual_information,
    load_channel,
    mutual_information,
    region_is_achievable,
)
from .exponents import (
    ExponentResult,
    OptimizerConfig,
    ei_multi,
    ei_single,
    ei_tilde,
    em_multi,
    em_single,
    em_tilde,
    es_lower_multi,
    es_lower_single,
)
from .simulator import (
    CodebookSpec,
    SimOutcome,
    ThresholdParams,
    ThresholdTable,
    compute_threshold,
    decode_multi,
    decode_single,
    exact_ensemble_error,
    generate_codebook,
    run_trials,
)

__version__ = "0.1.0"
