"""Numerical laboratory for the radial logarithmic Klein-Gordon equation on R^3.

``u_tt - Lap u + u = |u|^(p-1) u ln|u|^2`` with ``2 < p < 4``: ground states
by shooting and constrained minimisation, the action / constraint
functionals and their dilation algebra, an energy-conserving time
integrator, and the instability experiment from dilated ground states.
"""

__version__ = "0.1.0"

from .radial import (  # noqa: E402
    STRAUSS_CONSTANT,
    FieldError,
    RadialField,
    RadialGrid,
    dilate,
    gn_ratio,
    grad_l2_norm_sq,
    h1_norm_sq,
    integrate_volume,
    l2_norm_sq,
    lp_norm,
    strauss_ratio,
)
from .functionals import (  # noqa: E402
    ModelParams,
    NotProjectableError,
    ParameterError,
    ScalingCoefficients,
    eval_energy,
    eval_J,
    eval_JK,
    eval_K,
    nonlinearity_f,
    ode_residual,
    potential_G,
    project_to_nehari,
    residual_norm,
    scaling_coefficients,
)
from .ground_state import (  # noqa: E402
    GroundState,
    GroundStateError,
    Method,
    NehariConfig,
    Shot,
    ShootingConfig,
    find_ground_state,
    minimize_nehari,
    shoot_classify,
)
from .dynamics import (  # noqa: E402
    DiagnosticsRecord,
    EvolveConfig,
    State,
    Termination,
    run,
    step,
)
