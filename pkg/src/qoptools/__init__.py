"""Iterative imposition toolkit: state estimation, Bell gap optimization, marginal problems."""

__version__ = "0.1.0"

from . import bell, errors, qmp
from .mathcore import (
    MeasurementKind,
    MeasurementSet,
    QuantumState,
    as_rng,
    eigh,
    fidelity,
    hs_distance,
    kron,
    mub_bases,
    partial_trace,
    pauli_product_bases,
    qubit_mub_bases,
    random_mixed_state,
    random_pure_state,
)
from .qmp import (
    ConvergenceReport,
    HalpernSchedule,
    MarginalSpec,
    SpectralConstraint,
    ame_spec,
    impose_all,
    impose_marginal,
    impose_spectrum,
    npm_sweep,
    solve,
    solve_accelerated,
    spec_from_generator,
)
from .qse import (
    EstimationProblem,
    EstimationResult,
    ImpositionTarget,
    NoiseModel,
    bootstrap_fidelity,
    estimate,
    impose_one,
    impose_pvm,
    measurement_protocol,
    nearest_density_matrix,
    run_benchmark,
    simulate_frequencies,
)
