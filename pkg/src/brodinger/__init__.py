"""Optimal transport, Schrodinger bridges, and incompressible generalized
flows on the flat torus, at desk scale."""

__version__ = "0.1.0"

from .torus import TorusGrid, geodesic_dist, wrap
from .heat import gaussian_bound_ratio, heat_convolve, smooth_field, theta_kernel
from .measures import (
    DensityCurve,
    GridDensity,
    continuity_residual,
    entropy,
    fisher_info,
    kinetic_action,
    wasserstein2_circle,
)
from .schrodinger import (
    BridgeCurve,
    SchrodingerPotentials,
    entropic_interpolation,
    entropy_convexity_profile,
    evaluate_H_nu,
    gamma_sweep_sch,
    solve_schrodinger_system,
    static_entropic_cost,
)
from .regularizer import (
    RegularizedCurve,
    regularize_curve,
    verify_fund_inequalities,
)
from .pathlab import (
    BridgeSampler,
    DiscretePath,
    bridge_partition_Z,
    build_recovery_flow,
    cameron_martin_entropy,
    discrete_action,
    exp_moment_check,
    hat_action,
    sample_bridge_torus,
    sample_brownian,
    torus_bridge_entropy_check,
)
from .flows import (
    DiscreteFlow,
    PathLattice,
    gamma_antipodal,
    gamma_convergence_flows,
    gamma_identity,
    solve_Bro_ipfp,
    solve_REu_lp,
)
from .multiphase import (
    PhaseSpec,
    PressureField,
    TrafficPlan,
    average_entropy_profile,
    extract_pressure,
    mreu_reference,
    pressure_convergence,
    solve_MBro,
    two_bump_exchange,
)
