"""Particle methods for convolution-coupled continuity equations on measures,
with an exact Wasserstein-1 toolkit and a bound-certification harness."""

from ._accel import BACKEND
from .flow import (
    FlowState,
    ParticleTrajectory,
    StepControl,
    StepControlError,
    accumulate_divergence,
    flow_map_lipschitz_probe,
    rk4_step,
)
from .harness import (
    BoundReport,
    FrozenProblem,
    check_lemma_stability,
    check_linfty_growth,
    check_stability_general,
    check_stability_initial,
    refinement_study,
    stability_battery,
)
from .kernels import (
    AuditError,
    Kernel,
    KernelMatrix,
    add_kernels,
    audit_kernel,
    convolve,
    convolve_batch,
    convolve_vector,
    convolve_vector_batch,
    diagonal_matrix,
    kernel_library,
    odd_ramp_kernel,
    scale_kernel,
    zero_kernel,
)
from .measures import (
    EmptySpeciesError,
    GridAxis,
    GridDensity,
    MeasureVector,
    ParticleMeasure,
    concat,
    dirac,
    particles_from_density,
    push_forward,
    rescale_to_probability,
    total_mass,
    uniform_density_1d,
)
from .solver import (
    PicardConvergenceError,
    PicardParams,
    Scenario,
    SolutionRecord,
    StabilityConstants,
    TestFunction,
    picard_window,
    polynomial_bump_test,
    solve,
    solve_direct,
    solve_frozen,
    solve_picard,
    weak_form_residual,
    window_length,
)
from .velocity import (
    VelocityField,
    VelocityModel,
    audit_model,
    audit_velocity_field,
    congestion_speed,
    constant_direction,
    constant_drift_field,
    dirac_coupling_field,
    eval_nonlocal_velocity,
    lipschitz_bound_b,
    linear_local_field,
    pedestrian_field,
    phi_field,
    sedimentation_field,
    toward_point,
    velocity_batch,
)
from .wasserstein import (
    PairCapError,
    TransportPlan,
    UnequalMassError,
    coupling_cost,
    default_dual_family,
    w1_1d,
    w1_dual_lower_bound,
    w1_exact,
    w1_vector,
)

__version__ = "0.1.0"
