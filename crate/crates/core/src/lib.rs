//! Implicit θ-Euler-Maruyama integration of SDEs `dx = f(x)dt + g(x)dw` whose
//! coefficients grow super-linearly, with condition audits, moment bounds and
//! Monte Carlo studies of convergence and stability.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod error;
pub mod experiments;
pub mod model;
pub mod noise;
pub mod report;
pub mod scheme;
pub mod solver;
pub mod stats;

pub use analysis::{
    audit_condition, bound_lemma33, bound_thm22, bound_thm37, estimate_profile, BoundId, BoundReport, Condition,
    ConditionAudit, ConditionId, ProbeSpec, Thm22Bounds,
};
pub use error::{Error, Result};
pub use experiments::{
    divergence_demo, exit_frequency_study, exit_time_tracker, moment_bound_study, stability_study, strong_error_study,
    DivergenceReport, ExitReport, MomentReport, StabilityReport, StabilitySpec, StrongErrorReport, StrongErrorSpec,
};
pub use model::{
    catalog, CubicForm, Domain, MatrixField, ModelCatalogEntry, MonotoneProfile, ProfileOrigin, SdeModel, VectorField,
};
pub use noise::{BrownianGrid, TimePartition};
pub use scheme::{
    explicit_em_step, run_path, split_theta_em_step, theta_em_step, Monitors, PathState, SchemeConfig, SchemeKind,
    StateFn, Trajectory,
};
pub use solver::{solve_cubic_closed_form, solve_implicit, SolveOutcome, SolverConfig, SolverMethod};
