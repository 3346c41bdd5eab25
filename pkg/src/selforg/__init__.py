"""Dissipative self-ordering of driven quantum gases in a lossy cavity.

Truncated standing-wave mode expansion of the atoms, a single damped cavity
field, master-equation dynamics to the stationary state, and the ordering
diagnostics built on top (field distributions, order parameter, momentum
populations, emission spectra).
"""

from ._version import __version__
from .modes import (
    BasisSet,
    GroupConstructionError,
    GroupLabel,
    InitialKind,
    ModeGroups,
    ModeIndex,
    ModeSet,
    Statistics,
    TopShellPolicy,
    basis_size_formula,
    enumerate_fock_basis,
    enumerate_modes,
    fermi_sea_components,
    initial_signatures,
    initial_state,
    mode_groups,
    restrict_basis,
)
from .operators import (
    JointOperators,
    JointSpace,
    ParticleOperators,
    PhotonOp,
    Sector,
    bilinear_many_body,
    coupling_matrix,
    dump_operator,
    embed_joint,
    expect,
    joint_operators,
    kinetic_matrix,
    momentum_number_operators,
    particle_operators,
    photon_operator,
)
from .liouville import (
    Liouvillian,
    SystemParams,
    apply_lindblad_rhs,
    build_hamiltonian,
    parity_symmetry,
    shifted_detuning,
    superoperator_matrix,
    translation_symmetry_unitary,
)
from .evolve import (
    ConvergenceError,
    CorrelationSeries,
    DegenerateNullSpaceError,
    SpectrumResult,
    SteadyStateResult,
    StepSizeUnderflowError,
    TraceDriftError,
    Trajectory,
    integrate,
    populated_blocks,
    spectrum,
    steady_state,
    two_time_correlation,
    validate_density_matrix,
)
from .observables import (
    CoherentMixtureFit,
    CutoffError,
    OrderParameterResult,
    QGrid,
    QMaximum,
    ScalarObservables,
    best_fit_coherent_mixture,
    coherent_state_vector,
    fidelity,
    husimi_q,
    locate_q_maxima,
    momentum_populations,
    order_parameter,
    reduce_field,
    reduce_particles,
    scalar_observables,
)
from .runner import (
    ConfigError,
    RunConfig,
    Task,
    TruncationReport,
    build_system,
    default_photon_cutoff,
    echo_config,
    parse_config,
    run_task,
)
