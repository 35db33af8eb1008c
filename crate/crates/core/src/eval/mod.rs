//! Depth-completion metrics, observation samplers, synthetic scenes and the
//! dense reference solver.

mod metrics;
pub mod oracle;
pub mod problem;
mod sampling;
mod scene;

pub use metrics::{compute_metrics, MetricReport, INVERSE_DEPTH_FLOOR};
pub use oracle::{dense_oracle_solve, DENSE_CAP};
pub use problem::{random_problem, Problem, ProblemOptions};
pub use sampling::{random_mask_augment, sample_random_points, subsample_rows};
pub use scene::{synth_scene, SceneSpec};
