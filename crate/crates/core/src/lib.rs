//! aggforge-core: an in-memory optimization and execution engine for large
//! batches of group-by SUM-of-product aggregate queries over acyclic natural
//! joins.
//!
//! A batch of queries is decomposed over a join tree into shared directional
//! views, the views are merged and clustered into groups, and every group is
//! evaluated in a single scan over its common relation by a multi-output plan.
//! Application generators ([`apps`]) build the aggregate batches needed for
//! covariance matrices, data cubes, mutual information / Chow-Liu trees,
//! decision trees, and ridge linear regression, and drive the downstream
//! algorithms on top of the engine.
//!
//! The pipeline, front to back:
//!
//! 1. [`catalog`] — relation schemas, attribute metadata, join-tree validation.
//! 2. [`storage`] — columnar tables, dictionary encoding, trie-style range scans.
//! 3. [`query`] — the aggregate batch model (sums of products of UDAFs) and its DSL.
//! 4. [`logical`] — root assignment, view decomposition, merging, grouping.
//! 5. [`physical`] — per-group multi-output plans over a join-attribute order.
//! 6. [`exec`] — the interpreted executor, scheduler, and brute-force oracle.

#![allow(clippy::too_many_arguments, clippy::type_complexity, clippy::needless_range_loop)]

pub mod apps;
pub mod catalog;
pub mod exec;
pub mod logical;
pub mod physical;
pub mod query;
pub mod storage;
pub mod testkit;

mod keys;

pub use keys::{decode_key, encode_key, Literal};

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use std::fmt::{Debug, Display};
use std::str::FromStr;

/// Scalar type carried by aggregate values, table float columns, and all of
/// the numeric machinery downstream (covar matrices, model parameters, costs).
///
/// Group-by keys and dictionary codes are always integers and never depend on
/// this type.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + FromStr
    + Display
    + Debug
    + Default
    + Send
    + Sync
    + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Default scalar used by the CLI and the acceptance suite.
pub type Real = f64;

/// Convenience aliases over the default scalar.
pub type Table = storage::Table<Real>;
pub type Database = storage::Database<Real>;
pub type ResultTable = exec::ResultTable<Real>;
pub type FunctionRegistry = query::FunctionRegistry<Real>;
