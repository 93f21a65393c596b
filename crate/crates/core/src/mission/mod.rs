//! Survey planning and fleet execution.

mod coverage;
mod fleet;
mod geometry;
mod planner;
mod sim;

pub use coverage::{coverage_fraction, CoverageGrid};
pub use fleet::{
    assign_strip_ids, assign_transects, chunk_sizes, max_synchronized_distance, nearest_station,
    return_trip_energy, return_trip_feasible, traversal, Assignment, AuvState, AuvStatus,
    ChargingStation, FleetSpec,
};
pub use geometry::{AreaSpec, Axis, Constraint, ConstraintKind, Polygon, Reference};
pub use planner::{
    plan_3d_grid, plan_3d_grid_in, plan_belt_transects, plan_belt_transects_in, strip_offsets,
    Dimensionality, PlanSpec, Strip, TransectPlan,
};
pub use sim::{
    AuvTelemetry, ControlCommand, Mission, MissionEvent, MissionParams, MissionSnapshot,
    MissionSpec, NAVIGATION_STREAM,
};
