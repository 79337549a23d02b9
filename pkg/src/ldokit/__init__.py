"""Learn local dynamic operators from structured-grid PDE snapshots,
constrain them with energy conservation, reduce them with POD-DEIM-Galerkin
projection, and calibrate them against observables with Metropolis MCMC."""

from .core_grid import (
    Grid,
    SnapshotSet,
    StateField,
    gather_stencil,
    read_snapshots,
    write_snapshots,
)
from .energy_constraints import (
    PerturbationSubspace,
    demo_subspace,
    energy_nullspace_basis,
    energy_residual,
    perturbed_ldo,
)
from .errors import (
    BlowUpError,
    ConfigError,
    DegenerateDirectionsError,
    DeimSelectionError,
    LdoKitError,
    NonFiniteStateError,
    SnapshotFormatError,
)
from .ldo_features import (
    BasisSpec,
    LdoCoefficients,
    apply_ldo,
    diffop_basis,
    enumerate_basis,
    eval_features,
    integrate_ldo,
    quadratic_basis,
    rsw_reference_coefficients,
)
from .rsw_dynamics import (
    RswParams,
    convergence_study,
    energy_density,
    integrate_rsw,
    make_initial_condition,
    rsw_tendency,
    step_euler,
    step_rk4,
)
from .rom import RomModel, build_rom, compute_pod, deim_select, flop_estimate, integrate_rom
from .bayes_uq import (
    CoarsenSpec,
    LikelihoodParams,
    McmcConfig,
    PosteriorSamples,
    coarsen,
    log_likelihood,
    metropolis_chain,
    rms_error,
)
from .sysid_regression import (
    FitReport,
    RegressionSystem,
    assemble_regression,
    constrained_fit,
    lasso_cv,
    lasso_fit,
    least_squares_fit,
)

__version__ = "0.1.0"
