//! Cost-based placement of operators on the server or the client.

mod plan;
mod stats;

pub use plan::{
    apply_override, baseline_plan, candidate_plan, candidate_plans_for_interactions, choose_partition,
    cut_edges, estimate_cardinality, estimate_cost, make_plan, validate_assignment, Assignment,
    CostContext, CostEstimate, CutEdge, EdgeEstimate, PartitionError, PartitionPlan, Side,
};
pub use stats::{default_width, CostParams, FieldStats, NetworkProfile, Stats, TableStats, DISTINCT_SAMPLE_CAP, estimate_distinct};
