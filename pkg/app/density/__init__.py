from .dynamics import (
    ControlAffineSystem, builtin_system, linear_system, zero_control, constant_control, rk4_step,
    simulate_batch, integrate, generate_snapshots, generate_local_snapshots
)
from .dictionary import (
    RbfDictionary, IdentityDictionary, build_dictionary, eval_basis, lambda_matrix, build_quadrature,
    cost_data, project_density, sink_indices, quadratic_cost
)
from .operators import edmd_matrices, edmd_fit, nsdmd_fit, generator_pair, koopman_spectrum
from .solver import make_program, solve, solve_simplex_ls, solve_stochastic_ls, project_simplex_rows, dump_program
from .ocp import (
    assemble, solve_ocp, GlobalController, recover_controller, evaluate_cost, empirical_stability,
    simulate_closed_loop
)
from .local_control import (
    identify_local, lqr_local, LocalController, local_density, BlendedController, blend
)
from .validation import (
    AnalyticOracle, scalar_oracle, hjb_residual, compare_scalar, generator_check, lambda_consistency,
    replay_certificate, invariant_suite
)
from .pipeline import Pipeline
