//! CART decision trees (regression and classification) on top of the engine.
//!
//! Each tree node needs, per candidate split, COUNT / SUM(label) /
//! SUM(label^2) (regression) or per-class counts (classification) under the
//! node's path conditions. The path conditions are dynamic per-feature
//! conjunction functions: between nodes only they are rebound - the plans
//! are built once and reused for every node.

use super::AppError;
use crate::catalog::{AttrId, AttrKind, Catalog, JoinTree};
use crate::exec::{prepare_batch, run_batch, ResultTable};
use crate::query::{
    AggregateExpr, AggregateQuery, CmpOp, Condition, FuncId, FunctionRegistry, Param, PathOp,
    UdafFactor,
};
use crate::storage::{Column, Database};
use crate::{Literal, Scalar};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostKind {
    Variance,
    Gini,
    Entropy,
}

/// Sufficient statistics of a dataset fragment.
#[derive(Debug, Clone, PartialEq)]
pub enum Stats<S> {
    Rt { count: S, sum: S, sumsq: S },
    /// Per-class counts, indexed by label dictionary code.
    Ct(Vec<S>),
}

impl<S: Scalar> Stats<S> {
    pub fn count(&self) -> S {
        match self {
            Stats::Rt { count, .. } => *count,
            Stats::Ct(c) => c.iter().fold(S::zero(), |a, &b| a + b),
        }
    }

    pub fn minus(&self, other: &Stats<S>) -> Stats<S> {
        match (self, other) {
            (
                Stats::Rt { count, sum, sumsq },
                Stats::Rt {
                    count: c2,
                    sum: s2,
                    sumsq: q2,
                },
            ) => Stats::Rt {
                count: *count - *c2,
                sum: *sum - *s2,
                sumsq: *sumsq - *q2,
            },
            (Stats::Ct(a), Stats::Ct(b)) => {
                Stats::Ct(a.iter().zip(b).map(|(x, y)| *x - *y).collect())
            }
            _ => unreachable!("mixed stats kinds"),
        }
    }

    pub fn plus(&self, other: &Stats<S>) -> Stats<S> {
        match (self, other) {
            (
                Stats::Rt { count, sum, sumsq },
                Stats::Rt {
                    count: c2,
                    sum: s2,
                    sumsq: q2,
                },
            ) => Stats::Rt {
                count: *count + *c2,
                sum: *sum + *s2,
                sumsq: *sumsq + *q2,
            },
            (Stats::Ct(a), Stats::Ct(b)) => {
                Stats::Ct(a.iter().zip(b).map(|(x, y)| *x + *y).collect())
            }
            _ => unreachable!("mixed stats kinds"),
        }
    }

    /// Count-weighted impurity: variance as given (already count-scaled),
    /// `n * gini`, or `n * entropy` (natural log).
    pub fn cost(&self, kind: CostKind) -> S {
        match (self, kind) {
            (Stats::Rt { count, sum, sumsq }, CostKind::Variance) => {
                if *count <= S::zero() {
                    S::zero()
                } else {
                    *sumsq - *sum * *sum / *count
                }
            }
            (Stats::Ct(counts), CostKind::Gini) => {
                let n = self.count();
                if n <= S::zero() {
                    return S::zero();
                }
                let mut s = S::zero();
                for &c in counts {
                    let p = c / n;
                    s += p * p;
                }
                n * (S::one() - s)
            }
            (Stats::Ct(counts), CostKind::Entropy) => {
                let n = self.count();
                if n <= S::zero() {
                    return S::zero();
                }
                let mut h = S::zero();
                for &c in counts {
                    if c > S::zero() {
                        let p = c / n;
                        h -= p * p.ln();
                    }
                }
                n * h
            }
            _ => unreachable!("cost kind does not match stats kind"),
        }
    }

    pub fn prediction(&self) -> Prediction<S> {
        match self {
            Stats::Rt { count, sum, .. } => Prediction::Mean(if *count > S::zero() {
                *sum / *count
            } else {
                S::zero()
            }),
            Stats::Ct(counts) => {
                let mut best = 0usize;
                for (k, &c) in counts.iter().enumerate() {
                    if c > counts[best] {
                        best = k;
                    }
                }
                Prediction::Class(best as i64)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Prediction<S> {
    Mean(S),
    /// Label dictionary code.
    Class(i64),
}

/// Split condition: `attr <= t` for continuous attributes, `attr in set`
/// (dictionary codes) for categorical ones.
#[derive(Debug, Clone, PartialEq)]
pub enum SplitCut {
    Le(Literal),
    In(Vec<i64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode<S> {
    pub count: S,
    pub cost: S,
    pub prediction: Prediction<S>,
    pub split: Option<Split<S>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split<S> {
    pub attr: AttrId,
    pub cut: SplitCut,
    pub yes: Box<TreeNode<S>>,
    pub no: Box<TreeNode<S>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree<S> {
    pub root: TreeNode<S>,
    pub label: AttrId,
    pub cost: CostKind,
}

/// Candidate splits of one feature.
#[derive(Debug, Clone)]
pub enum FeatKind {
    Continuous { thresholds: Vec<Literal> },
    Categorical,
}

#[derive(Debug, Clone)]
pub struct FeatureSplits {
    pub attr: AttrId,
    pub kind: FeatKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelKind {
    Rt,
    /// Classification with this many label classes.
    Ct(usize),
}

/// What one candidate's statistics look like in the batch results.
#[derive(Debug, Clone)]
pub enum CandidateRef {
    /// Continuous: `query` holds the stats of the `attr <= t` side.
    Continuous {
        feature: usize,
        threshold: usize,
        query: usize,
    },
    /// Categorical: `query` groups stats by category.
    Categorical { feature: usize, query: usize },
}

#[derive(Debug, Clone)]
pub struct NodeBatch<S> {
    pub queries: Vec<AggregateQuery<S>>,
    pub candidates: Vec<CandidateRef>,
    pub label: AttrId,
    pub label_kind: LabelKind,
}

impl<S: Scalar> NodeBatch<S> {
    /// Application aggregate values per node: `n(p+1)c` for continuous
    /// candidates (p = 2 for regression, label classes for classification).
    pub fn application_aggregate_count(&self) -> usize {
        let p = match self.label_kind {
            LabelKind::Rt => 2,
            LabelKind::Ct(p) => p,
        };
        self.candidates
            .iter()
            .filter(|c| matches!(c, CandidateRef::Continuous { .. }))
            .count()
            * (p + 1)
    }
}

/// The path filter factors: one dynamic conjunction per feature, applied to
/// every query of the node batch.
fn path_factors<S: Scalar>(features: &[FeatureSplits], filters: &[FuncId]) -> Vec<UdafFactor<S>> {
    features
        .iter()
        .zip(filters)
        .map(|(f, &func)| UdafFactor::Named {
            func,
            args: vec![f.attr],
        })
        .collect()
}

/// Per-candidate queries for a regression-tree node: COUNT, SUM(label),
/// SUM(label^2) under the path conditions extended with the candidate.
pub fn rt_node_batch<S: Scalar>(
    features: &[FeatureSplits],
    label: AttrId,
    filters: &[FuncId],
) -> NodeBatch<S> {
    let base = path_factors::<S>(features, filters);
    let mut queries = Vec::new();
    let mut candidates = Vec::new();
    let stats_exprs = |factors: Vec<UdafFactor<S>>| -> Vec<AggregateExpr<S>> {
        let mut count = factors.clone();
        count.push(UdafFactor::Constant(S::one()));
        let mut sum = factors.clone();
        sum.push(UdafFactor::Identity(label));
        let mut sumsq = factors;
        sumsq.push(UdafFactor::Power(label, 2));
        vec![
            AggregateExpr::product(count),
            AggregateExpr::product(sum),
            AggregateExpr::product(sumsq),
        ]
    };
    for (fi, f) in features.iter().enumerate() {
        match &f.kind {
            FeatKind::Continuous { thresholds } => {
                for (ti, t) in thresholds.iter().enumerate() {
                    let mut factors = base.clone();
                    factors.push(UdafFactor::Kronecker {
                        attr: f.attr,
                        op: CmpOp::Le,
                        threshold: Param::Static(t.clone()),
                    });
                    candidates.push(CandidateRef::Continuous {
                        feature: fi,
                        threshold: ti,
                        query: queries.len(),
                    });
                    queries.push(AggregateQuery::new(
                        &format!("RT_f{fi}_t{ti}"),
                        vec![],
                        stats_exprs(factors),
                    ));
                }
            }
            FeatKind::Categorical => {
                candidates.push(CandidateRef::Categorical {
                    feature: fi,
                    query: queries.len(),
                });
                queries.push(AggregateQuery::new(
                    &format!("RT_f{fi}_cat"),
                    vec![f.attr],
                    stats_exprs(base.clone()),
                ));
            }
        }
    }
    NodeBatch {
        queries,
        candidates,
        label,
        label_kind: LabelKind::Rt,
    }
}

/// Per-candidate queries for a classification-tree node: per-class counts
/// (group-by label) plus the total, under path + candidate conditions.
pub fn ct_node_batch<S: Scalar>(
    features: &[FeatureSplits],
    label: AttrId,
    label_classes: usize,
    filters: &[FuncId],
) -> NodeBatch<S> {
    let base = path_factors::<S>(features, filters);
    let mut queries = Vec::new();
    let mut candidates = Vec::new();
    for (fi, f) in features.iter().enumerate() {
        match &f.kind {
            FeatKind::Continuous { thresholds } => {
                for (ti, t) in thresholds.iter().enumerate() {
                    let mut factors = base.clone();
                    factors.push(UdafFactor::Kronecker {
                        attr: f.attr,
                        op: CmpOp::Le,
                        threshold: Param::Static(t.clone()),
                    });
                    candidates.push(CandidateRef::Continuous {
                        feature: fi,
                        threshold: ti,
                        query: queries.len(),
                    });
                    queries.push(AggregateQuery::new(
                        &format!("CT_f{fi}_t{ti}"),
                        vec![label],
                        vec![AggregateExpr::product(factors.clone())],
                    ));
                    queries.push(AggregateQuery::new(
                        &format!("CTt_f{fi}_t{ti}"),
                        vec![],
                        vec![AggregateExpr::product(factors)],
                    ));
                }
            }
            FeatKind::Categorical => {
                candidates.push(CandidateRef::Categorical {
                    feature: fi,
                    query: queries.len(),
                });
                queries.push(AggregateQuery::new(
                    &format!("CT_f{fi}_cat"),
                    vec![f.attr, label],
                    vec![AggregateExpr::product(base.clone())],
                ));
                queries.push(AggregateQuery::new(
                    &format!("CTt_f{fi}_cat"),
                    vec![f.attr],
                    vec![AggregateExpr::product(base.clone())],
                ));
            }
        }
    }
    NodeBatch {
        queries,
        candidates,
        label,
        label_kind: LabelKind::Ct(label_classes),
    }
}

/// The chosen split of a node.
#[derive(Debug, Clone)]
pub struct ChosenSplit<S> {
    pub attr: AttrId,
    pub cut: SplitCut,
    pub yes: Stats<S>,
    pub cost: S,
}

/// Per-candidate statistics handed to the (shared) split selection: the
/// stats of the `yes` side, or per-category stats for categorical features.
#[derive(Debug, Clone)]
pub enum CandidateStats<S> {
    Continuous {
        feature: usize,
        threshold: usize,
        yes: Stats<S>,
    },
    Categorical {
        feature: usize,
        /// (category key, stats), ascending by key.
        per_category: Vec<(i64, Stats<S>)>,
    },
}

/// Greedy best split: minimal weighted child cost, both children non-empty,
/// ties resolved by candidate order (feature index, then threshold index;
/// categorical candidates rank their categories by individual split cost and
/// grow the subset greedily while the cost strictly improves).
pub fn select_split<S: Scalar>(
    features: &[FeatureSplits],
    cands: &[CandidateStats<S>],
    node: &Stats<S>,
    kind: CostKind,
) -> Option<ChosenSplit<S>> {
    let mut best: Option<ChosenSplit<S>> = None;
    let mut consider = |cost: S, attr: AttrId, cut: SplitCut, yes: Stats<S>| {
        if best.as_ref().is_none_or(|b| cost < b.cost) {
            best = Some(ChosenSplit {
                attr,
                cut,
                yes,
                cost,
            });
        }
    };
    for cand in cands {
        match cand {
            CandidateStats::Continuous {
                feature,
                threshold,
                yes,
            } => {
                let no = node.minus(yes);
                if yes.count() < S::one() || no.count() < S::one() {
                    continue;
                }
                let cost = yes.cost(kind) + no.cost(kind);
                let t = match &features[*feature].kind {
                    FeatKind::Continuous { thresholds } => thresholds[*threshold].clone(),
                    FeatKind::Categorical => unreachable!(),
                };
                consider(cost, features[*feature].attr, SplitCut::Le(t), yes.clone());
            }
            CandidateStats::Categorical {
                feature,
                per_category,
            } => {
                // rank categories by the cost of splitting on each alone
                let mut ranked: Vec<(usize, S)> = per_category
                    .iter()
                    .enumerate()
                    .filter_map(|(ci, (_, st))| {
                        let no = node.minus(st);
                        if st.count() < S::one() || no.count() < S::one() {
                            return None;
                        }
                        Some((ci, st.cost(kind) + no.cost(kind)))
                    })
                    .collect();
                ranked.sort_by(|a, b| {
                    a.1.partial_cmp(&b.1)
                        .unwrap()
                        .then(per_category[a.0].0.cmp(&per_category[b.0].0))
                });
                if ranked.is_empty() {
                    continue;
                }
                // grow the subset greedily while the cost strictly improves
                let mut subset = vec![ranked[0].0];
                let mut yes = per_category[ranked[0].0].1.clone();
                let mut cost = ranked[0].1;
                for &(ci, _) in &ranked[1..] {
                    let cand_yes = yes.plus(&per_category[ci].1);
                    let no = node.minus(&cand_yes);
                    if no.count() < S::one() {
                        break;
                    }
                    let c = cand_yes.cost(kind) + no.cost(kind);
                    if c < cost {
                        subset.push(ci);
                        yes = cand_yes;
                        cost = c;
                    } else {
                        break;
                    }
                }
                let mut keys: Vec<i64> = subset.iter().map(|&ci| per_category[ci].0).collect();
                keys.sort_unstable();
                consider(cost, features[*feature].attr, SplitCut::In(keys), yes);
            }
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct CartConfig {
    pub label: AttrId,
    pub features: Vec<AttrId>,
    pub max_depth: usize,
    pub min_split: usize,
    /// Conditions tried per continuous attribute (equi-depth quantiles).
    pub buckets: usize,
    pub cost: CostKind,
    pub threads: usize,
}

/// Equi-depth candidate thresholds per continuous feature, measured over the
/// join distribution with one shared count batch.
pub fn build_feature_splits<S: Scalar>(
    catalog: &Catalog,
    tree: &JoinTree,
    db: &Database<S>,
    registry: &FunctionRegistry<S>,
    config: &CartConfig,
) -> Result<Vec<FeatureSplits>, AppError> {
    let continuous: Vec<AttrId> = config
        .features
        .iter()
        .copied()
        .filter(|&a| catalog.attr_info(a).kind == AttrKind::Continuous)
        .collect();
    let batch: Vec<AggregateQuery<S>> = continuous
        .iter()
        .map(|&a| AggregateQuery::new(&format!("dist_{}", a.0), vec![a], vec![AggregateExpr::count()]))
        .collect();
    let results = if batch.is_empty() {
        Vec::new()
    } else {
        run_batch(batch, catalog, tree, db, registry, config.threads)?
    };
    let threshold_literal = |attr: AttrId, key: i64| -> Literal {
        for t in db.tables.values() {
            if let Some(col) = t.column(attr) {
                return match col {
                    Column::Float(_) => Literal::Float(crate::decode_key(key)),
                    _ => Literal::Int(key),
                };
            }
        }
        Literal::Int(key)
    };
    let mut by_attr: std::collections::HashMap<AttrId, Vec<Literal>> =
        std::collections::HashMap::new();
    for (i, &a) in continuous.iter().enumerate() {
        let rt = &results[i];
        let total: S = (0..rt.rows())
            .map(|r| rt.value(r, 0))
            .fold(S::zero(), |x, y| x + y);
        let mut thresholds = Vec::new();
        if total > S::zero() && rt.rows() > 1 {
            let c = config.buckets;
            let mut cum = S::zero();
            let mut targets: Vec<S> = (1..=c)
                .map(|b| {
                    total * S::from_usize(b).unwrap() / S::from_usize(c + 1).unwrap()
                })
                .collect();
            targets.reverse();
            for r in 0..rt.rows() {
                cum += rt.value(r, 0);
                while let Some(&t) = targets.last() {
                    if cum >= t {
                        let lit = threshold_literal(a, rt.key(r, 0));
                        if thresholds.last() != Some(&lit) {
                            thresholds.push(lit);
                        }
                        targets.pop();
                    } else {
                        break;
                    }
                }
            }
        }
        by_attr.insert(a, thresholds);
    }
    Ok(config
        .features
        .iter()
        .map(|&a| FeatureSplits {
            attr: a,
            kind: match catalog.attr_info(a).kind {
                AttrKind::Continuous => FeatKind::Continuous {
                    thresholds: by_attr.remove(&a).unwrap_or_default(),
                },
                AttrKind::Categorical => FeatKind::Categorical,
            },
        })
        .collect())
}

struct PathCond {
    feature: usize,
    yes: bool,
    cut: SplitCut,
}

fn rebind_path<S: Scalar>(
    registry: &mut FunctionRegistry<S>,
    filters: &[FuncId],
    features: &[FeatureSplits],
    path: &[PathCond],
) {
    for (fi, &func) in filters.iter().enumerate() {
        let conds: Vec<Condition> = path
            .iter()
            .filter(|p| p.feature == fi)
            .map(|p| match (&p.cut, p.yes) {
                (SplitCut::Le(t), true) => Condition {
                    arg: 0,
                    op: PathOp::Cmp(CmpOp::Le),
                    value: t.clone(),
                },
                (SplitCut::Le(t), false) => Condition {
                    arg: 0,
                    op: PathOp::Cmp(CmpOp::Gt),
                    value: t.clone(),
                },
                (SplitCut::In(set), yes) => Condition {
                    arg: 0,
                    op: if yes { PathOp::In } else { PathOp::NotIn },
                    value: Literal::Str(
                        set.iter()
                            .map(|k| k.to_string())
                            .collect::<Vec<_>>()
                            .join("|"),
                    ),
                },
            })
            .collect();
        registry
            .rebind_conjunction(func, conds)
            .expect("path filters are conjunctions");
        let _ = features;
    }
}

/// Reads candidate stats out of the executed node batch.
fn gather_candidates<S: Scalar>(
    node_batch: &NodeBatch<S>,
    results: &[Arc<ResultTable<S>>],
) -> Vec<CandidateStats<S>> {
    let read_scalar_rt = |rt: &ResultTable<S>| Stats::Rt {
        count: rt.value(0, 0),
        sum: rt.value(0, 1),
        sumsq: rt.value(0, 2),
    };
    node_batch
        .candidates
        .iter()
        .map(|c| match (c, node_batch.label_kind) {
            (
                CandidateRef::Continuous {
                    feature,
                    threshold,
                    query,
                },
                LabelKind::Rt,
            ) => CandidateStats::Continuous {
                feature: *feature,
                threshold: *threshold,
                yes: read_scalar_rt(&results[*query]),
            },
            (
                CandidateRef::Continuous {
                    feature,
                    threshold,
                    query,
                },
                LabelKind::Ct(p),
            ) => {
                let rt = &results[*query];
                let mut counts = vec![S::zero(); p];
                for r in 0..rt.rows() {
                    counts[rt.key(r, 0) as usize] = rt.value(r, 0);
                }
                CandidateStats::Continuous {
                    feature: *feature,
                    threshold: *threshold,
                    yes: Stats::Ct(counts),
                }
            }
            (CandidateRef::Categorical { feature, query }, LabelKind::Rt) => {
                let rt = &results[*query];
                let per_category = (0..rt.rows())
                    .map(|r| {
                        (
                            rt.key(r, 0),
                            Stats::Rt {
                                count: rt.value(r, 0),
                                sum: rt.value(r, 1),
                                sumsq: rt.value(r, 2),
                            },
                        )
                    })
                    .collect();
                CandidateStats::Categorical {
                    feature: *feature,
                    per_category,
                }
            }
            (CandidateRef::Categorical { feature, query }, LabelKind::Ct(p)) => {
                let rt = &results[*query];
                // key columns are (category, label) in canonical attr order
                let q = &node_batch.queries[*query];
                let cat_attr = q
                    .group_by
                    .iter()
                    .position(|a| *a != node_batch.label)
                    .expect("categorical CT query has a non-label key");
                let label_col = 1 - cat_attr;
                // rows are sorted by canonical attr order, which may put the
                // label first; accumulate per category explicitly
                let mut cats: Vec<(i64, Stats<S>)> = Vec::new();
                for r in 0..rt.rows() {
                    let cat = rt.key(r, cat_attr);
                    let lab = rt.key(r, label_col) as usize;
                    let entry = match cats.iter_mut().find(|(k, _)| *k == cat) {
                        Some((_, st)) => st,
                        None => {
                            cats.push((cat, Stats::Ct(vec![S::zero(); p])));
                            &mut cats.last_mut().unwrap().1
                        }
                    };
                    if let Stats::Ct(counts) = entry {
                        counts[lab] += rt.value(r, 0);
                    }
                }
                cats.sort_by_key(|(k, _)| *k);
                CandidateStats::Categorical {
                    feature: *feature,
                    per_category: cats,
                }
            }
        })
        .collect()
}

/// Greedy CART over the engine: plans are built once; between nodes only the
/// dynamic path conjunctions are rebound.
pub fn cart_train<S: Scalar>(
    catalog: &Catalog,
    tree: &JoinTree,
    db: &Database<S>,
    registry: &mut FunctionRegistry<S>,
    config: &CartConfig,
) -> Result<DecisionTree<S>, AppError> {
    let label_kind = match (catalog.attr_info(config.label).kind, config.cost) {
        (AttrKind::Continuous, CostKind::Variance) => LabelKind::Rt,
        (AttrKind::Categorical, CostKind::Gini) | (AttrKind::Categorical, CostKind::Entropy) => {
            LabelKind::Ct(db.dict(config.label).map(|d| d.len()).unwrap_or(0))
        }
        _ => return Err(AppError::CostLabelMismatch),
    };
    let features = build_feature_splits(catalog, tree, db, registry, config)?;

    // root statistics
    let root_stats = match label_kind {
        LabelKind::Rt => {
            let q = AggregateQuery::new(
                "root",
                vec![],
                vec![
                    AggregateExpr::count(),
                    AggregateExpr::sum_of(config.label),
                    AggregateExpr::product(vec![UdafFactor::Power(config.label, 2)]),
                ],
            );
            let r = run_batch(vec![q], catalog, tree, db, registry, config.threads)?;
            Stats::Rt {
                count: r[0].value(0, 0),
                sum: r[0].value(0, 1),
                sumsq: r[0].value(0, 2),
            }
        }
        LabelKind::Ct(p) => {
            let q = AggregateQuery::new(
                "root",
                vec![config.label],
                vec![AggregateExpr::count()],
            );
            let r = run_batch(vec![q], catalog, tree, db, registry, config.threads)?;
            let mut counts = vec![S::zero(); p];
            for row in 0..r[0].rows() {
                counts[r[0].key(row, 0) as usize] = r[0].value(row, 0);
            }
            Stats::Ct(counts)
        }
    };

    // dynamic path filters, one conjunction per feature
    let filters: Vec<FuncId> = features
        .iter()
        .map(|f| registry.register_conjunction(&format!("__path_{}", f.attr.0), 1))
        .collect();
    let node_batch = match label_kind {
        LabelKind::Rt => rt_node_batch::<S>(&features, config.label, &filters),
        LabelKind::Ct(p) => ct_node_batch::<S>(&features, config.label, p, &filters),
    };
    let prepared = prepare_batch(node_batch.queries.clone(), catalog, tree, db, None)?;

    let root = grow(
        catalog,
        db,
        registry,
        &prepared,
        &node_batch,
        &features,
        &filters,
        config,
        root_stats,
        Vec::new(),
        0,
    )?;
    Ok(DecisionTree {
        root,
        label: config.label,
        cost: config.cost,
    })
}

#[allow(clippy::too_many_arguments)]
fn grow<S: Scalar>(
    catalog: &Catalog,
    db: &Database<S>,
    registry: &mut FunctionRegistry<S>,
    prepared: &crate::exec::PreparedBatch<S>,
    node_batch: &NodeBatch<S>,
    features: &[FeatureSplits],
    filters: &[FuncId],
    config: &CartConfig,
    stats: Stats<S>,
    path: Vec<PathCond>,
    depth: usize,
) -> Result<TreeNode<S>, AppError> {
    let cost = stats.cost(config.cost);
    let prediction = stats.prediction();
    let count = stats.count();
    let leaf = TreeNode {
        count,
        cost,
        prediction: prediction.clone(),
        split: None,
    };
    if depth >= config.max_depth
        || count < S::from_usize(config.min_split).unwrap()
        || cost <= S::zero()
    {
        return Ok(leaf);
    }

    rebind_path(registry, filters, features, &path);
    let (results, _) = prepared.execute(catalog, db, registry, config.threads)?;
    let cands = gather_candidates(node_batch, &results);
    let Some(chosen) = select_split(features, &cands, &stats, config.cost) else {
        return Ok(leaf);
    };
    if chosen.cost >= cost {
        return Ok(leaf);
    }

    let no_stats = stats.minus(&chosen.yes);
    let fi = features
        .iter()
        .position(|f| f.attr == chosen.attr)
        .expect("chosen feature");
    let mut yes_path: Vec<PathCond> = path
        .iter()
        .map(|p| PathCond {
            feature: p.feature,
            yes: p.yes,
            cut: p.cut.clone(),
        })
        .collect();
    yes_path.push(PathCond {
        feature: fi,
        yes: true,
        cut: chosen.cut.clone(),
    });
    let mut no_path: Vec<PathCond> = path
        .iter()
        .map(|p| PathCond {
            feature: p.feature,
            yes: p.yes,
            cut: p.cut.clone(),
        })
        .collect();
    no_path.push(PathCond {
        feature: fi,
        yes: false,
        cut: chosen.cut.clone(),
    });

    let yes = grow(
        catalog, db, registry, prepared, node_batch, features, filters, config,
        chosen.yes.clone(), yes_path, depth + 1,
    )?;
    let no = grow(
        catalog, db, registry, prepared, node_batch, features, filters, config, no_stats,
        no_path, depth + 1,
    )?;
    Ok(TreeNode {
        count,
        cost,
        prediction,
        split: Some(Split {
            attr: chosen.attr,
            cut: chosen.cut,
            yes: Box::new(yes),
            no: Box::new(no),
        }),
    })
}

/// Indented text rendering of a tree.
pub fn render_tree<S: Scalar>(
    tree: &DecisionTree<S>,
    catalog: &Catalog,
    db: &Database<S>,
) -> String {
    fn rec<S: Scalar>(
        node: &TreeNode<S>,
        catalog: &Catalog,
        db: &Database<S>,
        label: AttrId,
        out: &mut String,
        indent: usize,
    ) {
        let pad = "  ".repeat(indent);
        match &node.split {
            None => {
                let pred = match &node.prediction {
                    Prediction::Mean(m) => format!("{m}"),
                    Prediction::Class(c) => db
                        .dict(label)
                        .map(|d| d.decode(*c as u32).to_string())
                        .unwrap_or_else(|| c.to_string()),
                };
                out.push_str(&format!(
                    "{pad}leaf predict={pred} count={} cost={}\n",
                    node.count, node.cost
                ));
            }
            Some(split) => {
                let cond = match &split.cut {
                    SplitCut::Le(t) => format!("{} <= {}", catalog.attr_name(split.attr), t),
                    SplitCut::In(keys) => {
                        let vals: Vec<String> = keys
                            .iter()
                            .map(|k| {
                                db.dict(split.attr)
                                    .map(|d| d.decode(*k as u32).to_string())
                                    .unwrap_or_else(|| k.to_string())
                            })
                            .collect();
                        format!("{} in {{{}}}", catalog.attr_name(split.attr), vals.join(","))
                    }
                };
                out.push_str(&format!(
                    "{pad}{cond} count={} cost={}\n",
                    node.count, node.cost
                ));
                rec(&split.yes, catalog, db, label, out, indent + 1);
                rec(&split.no, catalog, db, label, out, indent + 1);
            }
        }
    }
    let mut out = String::new();
    rec(&tree.root, catalog, db, tree.label, &mut out, 0);
    out
}
