"""Numerical laboratory for normalized Ricci flows on symmetric model geometries."""

__version__ = "0.1.0"

from .geometry import (  # noqa: F401
    CP1_CONFORMAL,
    F1_MOMENTUM,
    Backend,
    Field,
    Grid,
    MetricState,
    VectorField,
    Weight,
    get_backend,
    initial_metric,
    integrate,
    make_grid,
    perturb_metric,
    scalar_curvature,
    volume,
)
from .potentials import (  # noqa: F401
    DiagnosticsRecord,
    PotentialSet,
    compute_averages,
    compute_potentials,
    diagnostics,
    perelman_monitor,
    solve_holomorphy_potential,
    solve_ricci_potential,
)
from .spectral import (  # noqa: F401
    SpectrumReport,
    bochner_residual,
    decompose_against_eigenbasis,
    full_spectrum,
    function_spectrum,
    principal_eigenpair,
    project_h0,
)
from .invariants import (  # noqa: F401
    CheckResult,
    ConditionReport,
    SolitonResult,
    check_conditions,
    delta_prime,
    futaki,
    modified_futaki,
    soliton_coefficient,
)
from .flow import (  # noqa: F401
    DecayFit,
    DecayQuantity,
    FlowConfig,
    FlowTrace,
    Stepper,
    fit_decay_rate,
    reparametrize_compare,
    run_flow,
    stable_dt,
)
from .report import emit_report, read_trace_csv, report_from_csv  # noqa: F401
