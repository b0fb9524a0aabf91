"""Maximum-entropy optimal control toolkit for continuous-time systems."""

__version__ = "0.1.0"

from .dynamics import (
    ControlBox,
    ControlAffine,
    CostEstimate,
    CostModel,
    DynamicsModel,
    GaussianPolicy,
    Generic,
    GenericRunning,
    GenericTerminal,
    L1Terminal,
    Linear,
    QuadraticRunning,
    QuadraticTerminal,
    Trajectory,
    eval_dynamics,
    evaluate_cost,
    gaussian_entropy,
    kl_from_uniform,
    make_rng,
    relaxed_drift,
    simulate_sampled,
)
from .soft_hamiltonian import (
    HamiltonianContext,
    HamiltonianReport,
    QuadratureGrid,
    boltzmann_density,
    build_grid,
    check_grid_convergence,
    grid_entropy,
    laplace_gap,
    soft_hamiltonian,
    soft_hamiltonian_batch,
    standard_hamiltonian,
)
from .hopf_lax import (
    CharacteristicCurve,
    HopfLaxConfig,
    ValueEstimate,
    hopf_lax_value,
    integrate_characteristics,
    legendre_transform,
    receding_horizon_control,
    sample_feedback,
    synthesize_feedback,
    value_surface,
)
from .godunov import (
    Grid2D,
    GridFunction,
    compare_solutions,
    godunov_flux,
    godunov_solve,
)
from .lq import (
    GaussianAtState,
    LqProblem,
    MaxEntLqPolicy,
    RiccatiSolution,
    are_residual,
    control_affine_policy,
    kleinman_iterate,
    load_matrix,
    make_stable_system,
    maxent_policy,
    quantitative_gaps,
    save_matrix,
    solve_lyapunov,
)
from .adaptive_dp import (
    HiddenLqSystem,
    LearnerConfig,
    LearnerReport,
    OffPolicyRows,
    OnPolicyRows,
    collect_offpolicy_window,
    collect_onpolicy_window,
    run_offpolicy,
    run_onpolicy,
    settling_time,
    sinusoidal_baseline,
    solve_offpolicy,
    solve_onpolicy,
)
