"""Direct collocation of the hybrid time/energy quadcopter OCP."""
from quadgcnet.trajopt.problem import (
    FinalConditions,
    InfeasibleSpecError,
    IntermediateWaypoint,
    NonConvergenceError,
    OcpSpec,
    Trajectory,
    audit_solution,
    braking_onset_time,
    evaluate_cost,
    hermite_simpson_defects,
    landing_spec,
    saturation_fraction,
    switching_events,
)
from quadgcnet.trajopt.solve import refine_node_doubling, resample, solve_ocp

__all__ = [
    "FinalConditions", "InfeasibleSpecError", "IntermediateWaypoint", "NonConvergenceError",
    "OcpSpec", "Trajectory", "audit_solution", "evaluate_cost", "hermite_simpson_defects",
    "saturation_fraction", "refine_node_doubling", "resample", "solve_ocp", "braking_onset_time",
    "landing_spec", "switching_events",
]
