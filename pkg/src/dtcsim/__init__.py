"""Desk-scale simulator of period-doubling (time-crystal-like) response in
periodically driven dipolar nuclear spin clusters."""

__version__ = "0.1.0"

from .spinsys import (
    SpinSpecies,
    SpinSite,
    SpinSystem,
    GeometryConfig,
    build_cluster,
    dipolar_coupling,
    interaction_scale,
    load_geometry,
    system_from_positions,
)
from .hamiltonian import (
    HamiltonianTerms,
    RfTerm,
    SpinOperatorSet,
    build_internal,
    build_rf,
    dipolar_variant,
    spin_operators,
    toggling_average,
)
from .sequence import (
    Delay,
    Pulse,
    PulseParams,
    PulseProgram,
    Sample,
    dtc_program,
    echo_program,
    phase_pair_program,
)
from .engine import (
    EvolutionRecord,
    Evolver,
    InitialState,
    cw_decoupling_field,
    propagator,
    read_record_csv,
    run_program_dense,
    run_program_typicality,
    write_record_csv,
)
from .analysis import (
    CrystalFit,
    CrystalFitEntry,
    EchoPeak,
    EnvelopeModel,
    GaussianFit,
    Spectrum,
    cosine_power_envelope,
    crystalline_fraction,
    decay_time,
    echo_peak,
    fit_gaussian,
    region_half_width,
    spectrum,
)
