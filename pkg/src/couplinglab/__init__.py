"""Couplings of Markov chains and synchronous particle systems on lattices.

Submodules
----------
lattice      lattices, configurations, cylinders, densities
metrics      cylinder metric, discrepancy densities, shift averages
systems      particle-system rules and the toy chains
coupling     couplings of two copies, the pairing procedure, the splice
exact        exact computations on small finite chains
estimators   Monte Carlo harness
cli          command-line front end
"""
from .lattice import (
    Alphabet,
    Boundary,
    Configuration,
    Cylinder,
    DensitySector,
    Lattice,
    LatticeDomainError,
    UnsupportedOperation,
    cylinder_indicator,
    density,
    density_full,
    shift,
)
from .metrics import (
    bit_metric,
    cylinder_metric,
    discrepancy_density,
    discrepancy_set,
    kappa,
    psi_n,
    shifted_discrepancy_density,
)
from .systems import (
    DOUBLING,
    HALVING,
    SHIFT_ANNIHILATION,
    BitStream,
    DeterministicMap,
    InvariantViolation,
    SystemRule,
    identity_rule,
    particle_vacancy_rule,
    tasep_rule,
)
from .coupling import (
    CoupledState,
    CouplingKind,
    ParticleRegistry,
    coupled_step,
    enumerate_particles,
    equal_pairing_update,
    pairing_update,
    rosenthal_splice,
    tau_epsilon,
)
from .exact import (
    CouplingKernel,
    FiniteChain,
    coupling_inequality_verify,
    glued_independent_kernel,
    independent_kernel,
    invariant_measure,
    invariant_measures,
    splice_marginal_check,
    tau_distribution,
    total_variation,
)
from .estimators import (
    ReplicaPlan,
    cesaro_estimate,
    density_series,
    drift_bound,
    indicator_mismatch_rate,
    run_coupled,
    weak_convergence_probe,
)

__version__ = "0.1.0"
