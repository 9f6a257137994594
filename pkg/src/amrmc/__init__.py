"""Regression Monte Carlo for Bermudan options with exact Gram matrices.

Path simulation, polynomial bases, closed-form moments and bounds, the
backward-induction pricer and the paths-versus-basis-size experiments.
"""

from .basis import (
    BasisFamily,
    BasisSpec,
    eval_basis,
    hermite,
    hermite_square_expansion,
    martingale_scale,
)
from .experiments import (
    MseCell,
    SweepGrid,
    SweepResult,
    continuation_error_norm,
    estimate_mse_cell,
    multiperiod_error_study,
    run_cell,
    run_sweep,
    worst_case_target,
)
from .moments import (
    GramAnalysis,
    GramConditioningError,
    c_rho,
    critical_curve,
    expected_mse_closed_form,
    first_cross_moment_normal,
    fourth_cross_moment_normal,
    gram_analysis,
    k_star,
    lognormal_moments,
    theorem3_bound,
    worst_case_bounds_normal,
)
from .paths import ExerciseGrid, PathBatch, ProcessKind, SeedCoordinates, sample_paths
from .regression import (
    CoefficientSet,
    PayoffSpec,
    SinglePeriodTarget,
    check_assumptions,
    continuation_eval,
    price_bermudan,
    project,
)

__version__ = "0.1.0"
