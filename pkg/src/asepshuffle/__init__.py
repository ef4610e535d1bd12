"""Biased adjacent-transposition shuffles, asymmetric exclusion processes
and their couplings: simulation, exact small-instance analysis and
reproducible experiments."""

from .configs import (
    FiniteConfig,
    ParameterError,
    Permutation,
    ReconstructionError,
    SecondClassConfig,
    StateError,
    ZConfig,
    canonical_states,
    dominates,
    embed_hat,
    height_projection,
    leftmost_hole,
    project_second_class,
    reconstruct_permutation,
    rightmost_particle,
    tagged_site,
    zero_erased_view,
)
from .coupling import (
    CoupledFamily,
    card_coalescence_time,
    coupled_evolve,
    sandwich_hitting_time,
    verify_hat_domination,
    verify_monotone,
    verify_projection_commutation,
)
from .dynamics import ProcessKind, apply_sort_event, run_continuous, run_discrete
from .harness import ExperimentConfig, RunManifest, parse_config, run_experiment, summarize
from .measures import (
    BlockingOracle,
    BlockingParams,
    InitKind,
    sample_blocking,
    sample_initial,
    stationarity_check,
)
from .observables import (
    calibrate_D,
    couple_distance_tail,
    gap_law_test,
    hitting_tail_estimate,
    hitting_time,
    proof_event_probs,
    tagged_drift,
)
from .oracle import (
    build_generator,
    exact_expected_hitting,
    exact_mixing_time,
    spectral_gap,
    stationary_distribution,
    transition_matrix,
    tv_mixing_curve,
)
from .streams import DiscreteStream, EventStream, derive_seed

__version__ = "0.1.0"
