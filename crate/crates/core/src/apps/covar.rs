//! Non-centered covariance (covar) matrices and batch gradient descent for
//! ridge linear regression over them.
//!
//! One query per unordered item pair: `SUM(Xj*Xk)` when both are continuous,
//! `Covar(Xj; Xk)` when `Xj` is categorical, `Covar(Xj,Xk; 1)` when both are.
//! The intercept is the constant-1 feature, so its pairs yield the count and
//! the degree-1 sums. The gradient of the ridge objective is then a linear
//! map over the matrix: no data pass per iteration.

use super::AppError;
use crate::catalog::{AttrId, AttrKind, Catalog, JoinTree, RelId};
use crate::exec::{run_batch, ResultTable};
use crate::query::{AggregateExpr, AggregateQuery, FunctionRegistry, UdafFactor};
use crate::storage::Database;
use crate::Scalar;
use std::collections::HashMap;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Feature {
    /// The constant-1 feature whose weight is the intercept.
    Intercept,
    Attr(AttrId),
}

#[derive(Debug, Clone)]
pub struct CovarBatch<S> {
    /// Features followed by the label.
    pub items: Vec<Feature>,
    pub queries: Vec<AggregateQuery<S>>,
    /// Item index pair per query, `j <= k`.
    pub pairs: Vec<(usize, usize)>,
}

impl<S: Scalar> CovarBatch<S> {
    pub fn aggregate_value_count(&self) -> usize {
        self.queries.len()
    }
}

fn item_kind(catalog: &Catalog, f: Feature) -> AttrKind {
    match f {
        Feature::Intercept => AttrKind::Continuous,
        Feature::Attr(a) => catalog.attr_info(a).kind,
    }
}

/// One query per unordered pair over `features ++ [label]`:
/// `(n+1)(n+2)/2` queries for n features and one label.
pub fn covar_batch<S: Scalar>(
    catalog: &Catalog,
    features: &[Feature],
    label: Feature,
) -> CovarBatch<S> {
    let mut items: Vec<Feature> = features.to_vec();
    items.push(label);
    let mut queries = Vec::new();
    let mut pairs = Vec::new();
    for j in 0..items.len() {
        for k in j..items.len() {
            let mut group_by: Vec<AttrId> = Vec::new();
            let mut factors: Vec<UdafFactor<S>> = Vec::new();
            if j == k {
                match (items[j], item_kind(catalog, items[j])) {
                    (Feature::Intercept, _) => {}
                    (Feature::Attr(a), AttrKind::Continuous) => {
                        factors.push(UdafFactor::Power(a, 2));
                    }
                    (Feature::Attr(a), AttrKind::Categorical) => group_by.push(a),
                }
            } else {
                for &it in [&items[j], &items[k]] {
                    match (it, item_kind(catalog, it)) {
                        (Feature::Intercept, _) => {}
                        (Feature::Attr(a), AttrKind::Continuous) => {
                            factors.push(UdafFactor::Identity(a));
                        }
                        (Feature::Attr(a), AttrKind::Categorical) => {
                            if !group_by.contains(&a) {
                                group_by.push(a);
                            }
                        }
                    }
                }
            }
            if factors.is_empty() {
                factors.push(UdafFactor::Constant(S::one()));
            }
            queries.push(AggregateQuery::new(
                &format!("Covar_{j}_{k}"),
                group_by,
                vec![AggregateExpr::product(factors)],
            ));
            pairs.push((j, k));
        }
    }
    CovarBatch {
        items,
        queries,
        pairs,
    }
}

#[derive(Debug, Clone)]
pub enum CovarEntry<S> {
    Scalar(S),
    /// Group-by variant for categorical items (vector or matrix entry).
    Table(Arc<ResultTable<S>>),
}

/// The assembled covar matrix: symmetric by construction, scalar entries for
/// continuous pairs, tables for categorical ones.
#[derive(Debug, Clone)]
pub struct CovarMatrix<S> {
    pub dim: usize,
    entries: HashMap<(usize, usize), CovarEntry<S>>,
    /// Dataset size |D| (the intercept-intercept entry), when present.
    pub count: Option<S>,
}

impl<S: Scalar> CovarMatrix<S> {
    pub fn assemble(batch: &CovarBatch<S>, results: &[Arc<ResultTable<S>>]) -> CovarMatrix<S> {
        let mut entries = HashMap::new();
        let mut count = None;
        for (qi, &(j, k)) in batch.pairs.iter().enumerate() {
            let rt = &results[qi];
            let entry = if rt.key_attrs.is_empty() {
                let v = if rt.rows() > 0 { rt.value(0, 0) } else { S::zero() };
                if j == k && batch.items[j] == Feature::Intercept {
                    count = Some(v);
                }
                CovarEntry::Scalar(v)
            } else {
                CovarEntry::Table(rt.clone())
            };
            entries.insert((j, k), entry);
        }
        CovarMatrix {
            dim: batch.items.len(),
            entries,
            count,
        }
    }

    /// Entry (j,k); symmetric under swap.
    pub fn get(&self, j: usize, k: usize) -> &CovarEntry<S> {
        let key = if j <= k { (j, k) } else { (k, j) };
        &self.entries[&key]
    }

    /// Dense symmetric matrix when every entry is scalar.
    pub fn dense(&self) -> Option<Vec<Vec<S>>> {
        let mut m = vec![vec![S::zero(); self.dim]; self.dim];
        for j in 0..self.dim {
            for k in j..self.dim {
                match self.get(j, k) {
                    CovarEntry::Scalar(v) => {
                        m[j][k] = *v;
                        m[k][j] = *v;
                    }
                    CovarEntry::Table(_) => return None,
                }
            }
        }
        Some(m)
    }
}

#[derive(Debug, Clone)]
pub struct BgdConfig<S> {
    pub lambda: S,
    /// Armijo sufficient-decrease constant.
    pub sigma: S,
    pub max_iters: usize,
    /// Convergence threshold: stop when one iteration's objective decrease
    /// falls below `tol` times the total decrease so far.
    pub tol: S,
}

impl<S: Scalar> Default for BgdConfig<S> {
    fn default() -> Self {
        BgdConfig {
            lambda: S::zero(),
            sigma: S::from_f64(1e-4).unwrap(),
            max_iters: 10_000,
            tol: S::from_f64(1e-8).unwrap(),
        }
    }
}

/// Model parameters: one theta per item, the label slot pinned to -1.
#[derive(Debug, Clone)]
pub struct ModelParams<S> {
    pub theta: Vec<S>,
    pub lambda: S,
    pub iterations: usize,
    pub converged: bool,
    /// Degenerate input detected (empty dataset); reported, never fatal.
    pub singular_warning: bool,
}

#[derive(Debug, Clone)]
pub struct BgdResult<S> {
    pub params: ModelParams<S>,
    /// J(theta) per accepted iteration, starting with the initial point.
    pub objective_trace: Vec<S>,
}

/// Ridge gradient from the covar matrix alone:
/// `grad_k = (1/|D|) sum_j theta_j * Sigma_{j,k} + lambda * theta_k`
/// for every trainable k (all but the label slot).
pub fn gradient_from_covar<S: Scalar>(
    sigma: &[Vec<S>],
    count: S,
    theta: &[S],
    lambda: S,
) -> Vec<S> {
    let dim = sigma.len();
    let inv = if count > S::zero() {
        S::one() / count
    } else {
        S::zero()
    };
    (0..dim - 1)
        .map(|k| {
            let mut g = S::zero();
            for j in 0..dim {
                g += theta[j] * sigma[j][k];
            }
            g * inv + lambda * theta[k]
        })
        .collect()
}

fn objective<S: Scalar>(sigma: &[Vec<S>], count: S, theta: &[S], lambda: S) -> S {
    let dim = sigma.len();
    let inv = if count > S::zero() {
        S::one() / count
    } else {
        S::zero()
    };
    let mut quad = S::zero();
    for j in 0..dim {
        for k in 0..dim {
            quad += theta[j] * sigma[j][k] * theta[k];
        }
    }
    let two = S::from_f64(2.0).unwrap();
    let mut penalty = S::zero();
    for t in theta.iter().take(dim - 1) {
        penalty += *t * *t;
    }
    quad * inv / two + lambda * penalty / two
}

/// Batch gradient descent over the covar matrix with Barzilai-Borwein step
/// sizes and Armijo backtracking. No data pass per iteration: the gradient is
/// a product with the (fixed) covar matrix.
pub fn bgd_train<S: Scalar>(
    sigma: &[Vec<S>],
    count: S,
    config: &BgdConfig<S>,
    init: Option<Vec<S>>,
) -> BgdResult<S> {
    let dim = sigma.len();
    let singular_warning = count <= S::zero();
    let mut theta: Vec<S> = init.unwrap_or_else(|| vec![S::zero(); dim]);
    theta[dim - 1] = -S::one();
    let lambda = config.lambda;

    let mut trace = vec![objective(sigma, count, &theta, lambda)];
    let mut prev_theta: Option<Vec<S>> = None;
    let mut prev_grad: Option<Vec<S>> = None;
    let mut iterations = 0;
    let mut converged = false;
    // Barzilai-Borwein steps are sawtoothed: a single small drop does not
    // mean convergence, so require a run of them.
    let mut small_drops = 0usize;

    for _ in 0..config.max_iters {
        iterations += 1;
        let grad = gradient_from_covar(sigma, count, &theta, lambda);
        let gnorm2: S = grad.iter().map(|g| *g * *g).fold(S::zero(), |a, b| a + b);
        if gnorm2 == S::zero() {
            converged = true;
            break;
        }
        // Barzilai-Borwein step from the previous iterate, else 1
        let mut step = S::one();
        if let (Some(pt), Some(pg)) = (&prev_theta, &prev_grad) {
            let mut dd = S::zero();
            let mut dg = S::zero();
            for k in 0..dim - 1 {
                let dt = theta[k] - pt[k];
                let dgk = grad[k] - pg[k];
                dd += dt * dt;
                dg += dt * dgk;
            }
            if dg > S::zero() && dd > S::zero() {
                step = dd / dg;
            }
        }
        // Armijo backtracking: J(theta - s g) <= J(theta) - sigma s |g|^2
        let j0 = *trace.last().unwrap();
        let mut accepted = None;
        for _ in 0..64 {
            let cand: Vec<S> = (0..dim)
                .map(|k| {
                    if k == dim - 1 {
                        -S::one()
                    } else {
                        theta[k] - step * grad[k]
                    }
                })
                .collect();
            let j1 = objective(sigma, count, &cand, lambda);
            if j1 <= j0 - config.sigma * step * gnorm2 {
                accepted = Some((cand, j1));
                break;
            }
            step /= S::from_f64(2.0).unwrap();
        }
        let Some((next, j1)) = accepted else {
            converged = true;
            break;
        };
        prev_theta = Some(theta.clone());
        prev_grad = Some(grad);
        theta = next;
        trace.push(j1);
        let drop = j0 - j1;
        let total = trace[0] - j1;
        if drop <= config.tol * total.max(S::min_positive_value()) {
            small_drops += 1;
            if small_drops >= 8 {
                converged = true;
                break;
            }
        } else {
            small_drops = 0;
        }
    }

    BgdResult {
        params: ModelParams {
            theta,
            lambda,
            iterations,
            converged,
            singular_warning,
        },
        objective_trace: trace,
    }
}

/// End-to-end ridge regression: covar batch through the engine, then BGD.
/// Features must be continuous (the intercept is added automatically).
pub fn linreg<S: Scalar>(
    catalog: &Catalog,
    tree: &JoinTree,
    db: &Database<S>,
    registry: &FunctionRegistry<S>,
    features: &[AttrId],
    label: AttrId,
    config: &BgdConfig<S>,
    threads: usize,
) -> Result<(BgdResult<S>, CovarMatrix<S>), AppError> {
    for &a in features.iter().chain([&label]) {
        if catalog.attr_info(a).kind == AttrKind::Categorical {
            return Err(AppError::CategoricalFeature(
                catalog.attr_name(a).to_string(),
            ));
        }
    }
    let mut items = vec![Feature::Intercept];
    items.extend(features.iter().map(|&a| Feature::Attr(a)));
    let batch = covar_batch::<S>(catalog, &items, Feature::Attr(label));
    let results = run_batch(batch.queries.clone(), catalog, tree, db, registry, threads)?;
    let matrix = CovarMatrix::assemble(&batch, &results);
    let dense = matrix.dense().expect("continuous covar is dense");
    let count = matrix.count.unwrap_or(S::zero());
    Ok((bgd_train(&dense, count, config, None), matrix))
}

/// Sizes of the tables the root assignment needs.
pub fn table_sizes<S: Scalar>(db: &Database<S>) -> HashMap<RelId, usize> {
    db.tables.iter().map(|(&r, t)| (r, t.row_count)).collect()
}
