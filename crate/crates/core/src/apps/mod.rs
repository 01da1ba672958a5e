//! Application batch generators and drivers: covariance matrices with ridge
//! linear regression, polynomial-regression aggregates, data cubes, mutual
//! information with Chow-Liu trees, and CART decision trees.
//!
//! Generators are pure: they turn application parameters into an aggregate
//! batch for the engine. Drivers (BGD, CART) iterate on top of the executor,
//! rebinding dynamic factors between iterations instead of replanning.

pub mod covar;
pub mod cube;
pub mod mi;
pub mod regression;
pub mod tree;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AppError {
    #[error("the join is empty; distributions are undefined")]
    EmptyJoin,
    #[error("linear regression requires continuous features; `{0}` is categorical")]
    CategoricalFeature(String),
    #[error("cost function does not match the label kind (variance needs a continuous label, gini/entropy a categorical one)")]
    CostLabelMismatch,
    #[error(transparent)]
    Exec(#[from] crate::exec::ExecError),
    #[error("planning failed: {0}")]
    Plan(#[from] crate::physical::PlanError),
}
