"""filterlab: a continuous-time nonlinear filtering laboratory.

Simulates correlated jump-diffusion signal/observation models, runs a
change-of-measure particle filter, and verifies the filtering equations and
exponential-martingale criteria against exact oracles and closed forms.
"""

from .filters import FilterCollapse, FilterConfig, ParticleCloud, ess, init_cloud, pi_estimate, rho_estimate, run_filter, step
from .girsanov import (
    DiagnosticsReport,
    Estimate,
    GirsanovEnsemble,
    WeightTrajectory,
    log_weight_increment,
)
from .models import (
    LevySpec,
    ModelError,
    SignalModel,
    TestFunction,
    apply_correlation,
    apply_D,
    apply_generator,
    make_model,
    phi_battery,
    validate_model,
)
from .simulate import (
    PathBundle,
    SimulationBlowUp,
    TimeGrid,
    path_from_csv,
    path_from_json,
    path_to_csv,
    path_to_json,
    propagate_under_reference,
    sample_levy_increment,
    simulate_counterexample_paths,
    simulate_pair,
)

__version__ = "0.1.0"
