//! The interpreted executor: evaluates multi-output plans over sorted tables
//! in a single scan per group, schedules groups over the dependency graph,
//! and parallelizes (task parallelism across independent groups, domain
//! parallelism over partitions of the largest relation).
//!
//! Also hosts the brute-force oracle: materialize the join, group rows, and
//! evaluate every UDAF directly. The two paths share nothing beyond factor
//! semantics, which is what makes the equivalence tests meaningful.

use crate::catalog::{AttrId, Catalog, JoinTree, RelId};
use crate::logical::{GroupId, OptimizedBatch, ViewId};
use crate::physical::{
    AttrSource, Container, LoopSpec, MultiOutputPlan, OutputKeySrc, PlanFactor,
    SlotKind,
};
use crate::query::{
    AggregateQuery, Binding, CmpOp, Condition, FnKind, FunctionRegistry, KeyResolver, Param,
    UdafFactor,
};
use crate::storage::{distinct_ranges, literal_to_key, Column, Database, Table, TrieRange};
use crate::{Literal, Scalar};
use std::collections::HashMap;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("group {0:?} depends on uncomputed view {1:?}")]
    MissingDependency(GroupId, ViewId),
    #[error("group dependency graph has a cycle")]
    CycleDetected,
    #[error(transparent)]
    Storage(#[from] crate::storage::StorageError),
}

/// A computed view or query result: tuples over the group-by attributes,
/// each functionally determining a fixed-width aggregate vector. Rows are
/// sorted by the key tuple.
#[derive(Debug, Clone, Default)]
pub struct ResultTable<S> {
    pub key_attrs: Vec<AttrId>,
    /// Row-major keys, width = key_attrs.len().
    pub keys: Vec<i64>,
    /// Row-major values, width = arity.
    pub values: Vec<S>,
    pub arity: usize,
}

impl<S: Scalar> ResultTable<S> {
    pub fn rows(&self) -> usize {
        if self.key_attrs.is_empty() {
            if self.values.is_empty() {
                0
            } else {
                1
            }
        } else {
            self.keys.len() / self.key_attrs.len()
        }
    }

    pub fn key(&self, row: usize, col: usize) -> i64 {
        self.keys[row * self.key_attrs.len() + col]
    }

    pub fn key_tuple(&self, row: usize) -> &[i64] {
        let w = self.key_attrs.len();
        &self.keys[row * w..(row + 1) * w]
    }

    pub fn value(&self, row: usize, agg: usize) -> S {
        self.values[row * self.arity + agg]
    }

    pub fn value_row(&self, row: usize) -> &[S] {
        &self.values[row * self.arity..(row + 1) * self.arity]
    }

    /// Rows in `[range)` whose `col` equals `key` (requires sort by cols).
    pub fn narrow(&self, col: usize, range: (usize, usize), key: i64) -> (usize, usize) {
        let (mut lo, mut hi) = (range.0, range.1);
        let w = self.key_attrs.len();
        let at = |r: usize| self.keys[r * w + col];
        let mut a = lo;
        let mut b = hi;
        while a < b {
            let mid = a + (b - a) / 2;
            if at(mid) < key {
                a = mid + 1;
            } else {
                b = mid;
            }
        }
        lo = a;
        let mut c = lo;
        let mut d = hi;
        while c < d {
            let mid = c + (d - c) / 2;
            if at(mid) <= key {
                c = mid + 1;
            } else {
                d = mid;
            }
        }
        hi = c;
        (lo, hi)
    }

    fn sort_rows(&mut self) {
        let w = self.key_attrs.len();
        if w == 0 {
            return;
        }
        let n = self.rows();
        let mut perm: Vec<usize> = (0..n).collect();
        let keys = &self.keys;
        perm.sort_by(|&x, &y| keys[x * w..(x + 1) * w].cmp(&keys[y * w..(y + 1) * w]));
        let mut keys2 = Vec::with_capacity(self.keys.len());
        let mut vals2 = Vec::with_capacity(self.values.len());
        for &r in &perm {
            keys2.extend_from_slice(&self.keys[r * w..(r + 1) * w]);
            vals2.extend_from_slice(&self.values[r * self.arity..(r + 1) * self.arity]);
        }
        self.keys = keys2;
        self.values = vals2;
    }
}

/// Scan counters per group. `leaf_visits` counts distinct base-relation rows
/// enumerated by the leaf pass; the single-scan property bounds it by the
/// relation's row count.
#[derive(Debug, Clone, Default)]
pub struct ScanStats {
    pub group: u32,
    pub node: String,
    pub leaf_visits: u64,
    pub view_lookups: u64,
    pub inner_iters: u64,
    pub output_rows: u64,
}

/// Literal-to-key resolution backed by the loaded database.
pub struct DbResolver<'a, S> {
    pub db: &'a Database<S>,
}

impl<'a, S: Scalar> KeyResolver for DbResolver<'a, S> {
    fn literal_key(&self, attr: AttrId, lit: &Literal) -> i64 {
        for t in self.db.tables.values() {
            if let Some(col) = t.column(attr) {
                return literal_to_key(col, self.db.dict(attr), lit);
            }
        }
        -1
    }
}

#[derive(Clone, Copy)]
enum Decoder {
    Int,
    Float,
}

impl Decoder {
    fn decode<S: Scalar>(self, key: i64) -> S {
        match self {
            Decoder::Int => S::from_i64(key).unwrap(),
            Decoder::Float => S::from_f64(crate::decode_key(key)).unwrap(),
        }
    }
}

fn decoder_for<S: Scalar>(db: &Database<S>, attr: AttrId) -> Decoder {
    for t in db.tables.values() {
        if let Some(col) = t.column(attr) {
            return match col {
                Column::Float(_) => Decoder::Float,
                _ => Decoder::Int,
            };
        }
    }
    Decoder::Int
}

/// A factor compiled for the scan: thresholds resolved to keys, arguments
/// resolved to context / leaf-column / view-column reads.
enum RunFactor<S: Scalar> {
    Constant(S),
    Identity(RunSrc),
    Power(RunSrc, i32),
    Kronecker {
        src: RunSrc,
        op: CmpOp,
        threshold: i64,
    },
    InSet {
        src: RunSrc,
        keys: Vec<i64>,
    },
    Host {
        f: Arc<dyn Fn(&[S]) -> S + Send + Sync>,
        srcs: Vec<RunSrc>,
    },
    ParamHost {
        f: Arc<dyn Fn(&[S], &[S]) -> S + Send + Sync>,
        params: Vec<S>,
        srcs: Vec<RunSrc>,
    },
    Conjunction {
        conds: Vec<(RunSrc, RunCond)>,
    },
}

enum RunCond {
    Cmp(CmpOp, i64),
    In(Vec<i64>),
    NotIn(Vec<i64>),
}

#[derive(Clone, Copy)]
struct RunSrc {
    where_: AttrSource,
    decoder: Decoder,
}

struct RunCtx<'a, S: Scalar> {
    base: &'a Table<S>,
    views: Vec<&'a ResultTable<S>>,
    ctx_keys: Vec<i64>,
    /// Current row per incoming view (bound by loops).
    vrow: Vec<usize>,
    /// Current leaf row (bound by the leaf pass).
    leaf_row: usize,
}

impl<'a, S: Scalar> RunCtx<'a, S> {
    fn key_of(&self, src: &RunSrc) -> i64 {
        match src.where_ {
            AttrSource::Order(p) => self.ctx_keys[p],
            AttrSource::LeafCol(c) => self.base.key_at(c, self.leaf_row),
            AttrSource::ViewCol { view, col } => self.views[view].key(self.vrow[view], col),
        }
    }

    fn value_of(&self, src: &RunSrc) -> S {
        match src.where_ {
            AttrSource::LeafCol(c) => self.base.columns[c].value(self.leaf_row),
            _ => src.decoder.decode(self.key_of(src)),
        }
    }
}

impl<S: Scalar> RunFactor<S> {
    fn eval(&self, ctx: &RunCtx<S>, scratch: &mut Vec<S>) -> S {
        match self {
            RunFactor::Constant(c) => *c,
            RunFactor::Identity(s) => ctx.value_of(s),
            RunFactor::Power(s, e) => ctx.value_of(s).powi(*e),
            RunFactor::Kronecker { src, op, threshold } => {
                if op.test(ctx.key_of(src), *threshold) {
                    S::one()
                } else {
                    S::zero()
                }
            }
            RunFactor::InSet { src, keys } => {
                if keys.contains(&ctx.key_of(src)) {
                    S::one()
                } else {
                    S::zero()
                }
            }
            RunFactor::Host { f, srcs } => {
                scratch.clear();
                scratch.extend(srcs.iter().map(|s| ctx.value_of(s)));
                f(scratch)
            }
            RunFactor::ParamHost { f, params, srcs } => {
                scratch.clear();
                scratch.extend(srcs.iter().map(|s| ctx.value_of(s)));
                f(params, scratch)
            }
            RunFactor::Conjunction { conds } => {
                for (src, cond) in conds {
                    let key = ctx.key_of(src);
                    let pass = match cond {
                        RunCond::Cmp(op, t) => op.test(key, *t),
                        RunCond::In(set) => set.contains(&key),
                        RunCond::NotIn(set) => !set.contains(&key),
                    };
                    if !pass {
                        return S::zero();
                    }
                }
                S::one()
            }
        }
    }
}

fn bind_factor<S: Scalar>(
    pf: &PlanFactor<S>,
    node_table: &Table<S>,
    plan: &MultiOutputPlan<S>,
    db: &Database<S>,
    registry: &FunctionRegistry<S>,
) -> RunFactor<S> {
    let attr_of_src = |i: usize| -> AttrId {
        let attrs = pf.factor.attrs();
        attrs[i]
    };
    let mk_src = |i: usize| -> RunSrc {
        let where_ = pf.srcs[i];
        let decoder = match where_ {
            AttrSource::LeafCol(c) => match &node_table.columns[c] {
                Column::Float(_) => Decoder::Float,
                _ => Decoder::Int,
            },
            AttrSource::Order(p) => match &node_table.columns[plan.order_cols[p]] {
                Column::Float(_) => Decoder::Float,
                _ => Decoder::Int,
            },
            AttrSource::ViewCol { .. } => decoder_for(db, attr_of_src(i)),
        };
        RunSrc { where_, decoder }
    };
    let resolver = DbResolver { db };
    let resolve_param = |attr: AttrId, p: &Param| -> i64 {
        let lit = match p {
            Param::Static(l) => l.clone(),
            Param::Dynamic(id) => registry.dyn_param(*id).clone(),
        };
        resolver.literal_key(attr, &lit)
    };
    match &pf.factor {
        UdafFactor::Constant(c) => RunFactor::Constant(*c),
        UdafFactor::Identity(_) => RunFactor::Identity(mk_src(0)),
        UdafFactor::Power(_, e) => RunFactor::Power(mk_src(0), *e as i32),
        UdafFactor::Kronecker { attr, op, threshold } => RunFactor::Kronecker {
            src: mk_src(0),
            op: *op,
            threshold: resolve_param(*attr, threshold),
        },
        UdafFactor::InSet { attr, set } => {
            let lit = match set {
                Param::Static(l) => l.clone(),
                Param::Dynamic(id) => registry.dyn_param(*id).clone(),
            };
            RunFactor::InSet {
                src: mk_src(0),
                keys: resolver.set_keys(*attr, &lit),
            }
        }
        UdafFactor::Named { func, args } => {
            let def = registry.get(*func);
            let srcs: Vec<RunSrc> = (0..args.len()).map(mk_src).collect();
            match &def.kind {
                FnKind::Host(f) => RunFactor::Host {
                    f: f.clone(),
                    srcs,
                },
                FnKind::ParamHost { params, f } => RunFactor::ParamHost {
                    f: f.clone(),
                    params: params.clone(),
                    srcs,
                },
                FnKind::Conjunction(conds) => RunFactor::Conjunction {
                    conds: conds
                        .iter()
                        .map(|c: &Condition| {
                            let rc = match c.op {
                                crate::query::PathOp::Cmp(op) => RunCond::Cmp(
                                    op,
                                    resolver.literal_key(args[c.arg], &c.value),
                                ),
                                crate::query::PathOp::In => {
                                    RunCond::In(resolver.set_keys(args[c.arg], &c.value))
                                }
                                crate::query::PathOp::NotIn => {
                                    RunCond::NotIn(resolver.set_keys(args[c.arg], &c.value))
                                }
                            };
                            (srcs[c.arg], rc)
                        })
                        .collect(),
                },
            }
        }
    }
}

struct RunLoop<S: Scalar> {
    over_leaf: bool,
    over_views: Vec<usize>,
    factors: Vec<RunFactor<S>>,
    view_aggs: Vec<(usize, usize)>,
}

enum RunSlot<S: Scalar> {
    ViewLookup { view: usize, agg: usize },
    Simple(RunFactor<S>),
    RangeCount,
    Loop(RunLoop<S>),
    Product(Vec<u32>),
    Running(Vec<u32>),
}

struct RunTerm<S: Scalar> {
    closed: Vec<u32>,
    open: Option<RunLoop<S>>,
    key_srcs: Vec<OutputKeySrc>,
}

struct RunOutput<S: Scalar> {
    view: ViewId,
    key_attrs: Vec<AttrId>,
    container: Container,
    arity: usize,
    exprs: Vec<Vec<RunTerm<S>>>,
    has_open: bool,
    /// Key column indices sorted by scan (order-position) depth; the
    /// appendable monitor checks monotonicity in this order.
    monitor_perm: Vec<usize>,
}

enum OutputAcc<S> {
    Appendable {
        keys: Vec<i64>,
        values: Vec<S>,
        last_key: Option<Vec<i64>>,
    },
    Keyed(HashMap<Vec<i64>, Vec<S>>),
}

/// View access during a scan: either narrowed ranges over the natively
/// sorted table, or a hash index over a permutation.
enum ViewAccess {
    Sorted,
    Hashed {
        perm: Vec<u32>,
        index: HashMap<Vec<i64>, (u32, u32)>,
    },
}

/// Per-group state shared by every partition of a scan: resolved views,
/// access paths, and bound slots/outputs. Read-only during execution.
struct BoundGroup<'a, S: Scalar> {
    views: Vec<&'a ResultTable<S>>,
    access: Vec<ViewAccess>,
    slot_defs: Vec<RunSlot<S>>,
    outputs: Vec<RunOutput<S>>,
}

struct GroupRun<'a, S: Scalar> {
    plan: &'a MultiOutputPlan<S>,
    base: &'a Table<S>,
    views: &'a [&'a ResultTable<S>],
    access: &'a [ViewAccess],
    slots: Vec<S>,
    slot_defs: &'a [RunSlot<S>],
    outputs: &'a [RunOutput<S>],
    accs: &'a mut Vec<OutputAcc<S>>,
    /// Per view: range stack indexed by depth (sorted) or current bucket
    /// (hashed, as perm range).
    vranges: Vec<Vec<(usize, usize)>>,
    base_ranges: Vec<TrieRange>,
    ctx: RunCtx<'a, S>,
    stats: ScanStats,
    scratch: Vec<S>,
    dead: bool,
    /// live[d]: the subtree under the current depth-d prefix produced at
    /// least one join row; gates non-scalar emissions.
    live: Vec<bool>,
}

impl<'a, S: Scalar> GroupRun<'a, S> {
    fn view_rows(&self, vi: usize, depth: usize) -> (usize, usize) {
        self.vranges[vi][depth.min(self.vranges[vi].len() - 1)]
    }

    /// Rows of view `vi` as result-table row indices at the current depth.
    fn view_row_at(&self, vi: usize, i: usize) -> usize {
        match &self.access[vi] {
            ViewAccess::Sorted => i,
            ViewAccess::Hashed { perm, .. } => perm[i] as usize,
        }
    }

    fn run_loop(
        loop_: &RunLoop<S>,
        ctx: &mut RunCtx<'a, S>,
        views: &[&'a ResultTable<S>],
        access: &[ViewAccess],
        vranges: &[Vec<(usize, usize)>],
        depth: usize,
        leaf_range: Option<TrieRange>,
        stats: &mut ScanStats,
        scratch: &mut Vec<S>,
        mut sink: impl FnMut(&mut RunCtx<'a, S>, S),
    ) {
        // nested iteration over the leaf range and each view's current rows
        fn recurse<'a, S: Scalar>(
            loop_: &RunLoop<S>,
            ctx: &mut RunCtx<'a, S>,
            views: &[&'a ResultTable<S>],
            access: &[ViewAccess],
            vranges: &[Vec<(usize, usize)>],
            depth: usize,
            vidx: usize,
            leaf_range: Option<TrieRange>,
            stats: &mut ScanStats,
            scratch: &mut Vec<S>,
            sink: &mut impl FnMut(&mut RunCtx<'a, S>, S),
        ) {
            if vidx == loop_.over_views.len() {
                match (loop_.over_leaf, leaf_range) {
                    (true, Some(range)) => {
                        for row in range.lo..range.hi {
                            ctx.leaf_row = row;
                            emit_one(loop_, ctx, views, stats, scratch, sink);
                        }
                    }
                    // leaf row already bound by the enclosing leaf pass
                    _ => emit_one(loop_, ctx, views, stats, scratch, sink),
                }
                return;
            }
            let vi = loop_.over_views[vidx];
            let (lo, hi) = vranges[vi][depth.min(vranges[vi].len() - 1)];
            for i in lo..hi {
                let row = match &access[vi] {
                    ViewAccess::Sorted => i,
                    ViewAccess::Hashed { perm, .. } => perm[i] as usize,
                };
                ctx.vrow[vi] = row;
                stats.view_lookups += 1;
                recurse(
                    loop_, ctx, views, access, vranges, depth, vidx + 1, leaf_range, stats,
                    scratch, sink,
                );
            }
        }
        fn emit_one<'a, S: Scalar>(
            loop_: &RunLoop<S>,
            ctx: &mut RunCtx<'a, S>,
            views: &[&'a ResultTable<S>],
            stats: &mut ScanStats,
            scratch: &mut Vec<S>,
            sink: &mut impl FnMut(&mut RunCtx<'a, S>, S),
        ) {
            stats.inner_iters += 1;
            let mut v = S::one();
            for f in &loop_.factors {
                v *= f.eval(ctx, scratch);
                if v == S::zero() {
                    break;
                }
            }
            if v != S::zero() {
                for (vi, agg) in &loop_.view_aggs {
                    v *= views[*vi].value(ctx.vrow[*vi], *agg);
                }
            }
            sink(ctx, v);
        }
        recurse(
            loop_, ctx, views, access, vranges, depth, 0, leaf_range, stats, scratch, &mut sink,
        );
    }
}

/// Resolves incoming views, builds their access paths, and binds every slot
/// and output of the plan. Done once per group; partitions share the result.
fn bind_group<'a, S: Scalar>(
    plan: &MultiOutputPlan<S>,
    base: &Table<S>,
    db: &Database<S>,
    registry: &FunctionRegistry<S>,
    computed: &'a HashMap<ViewId, Arc<ResultTable<S>>>,
) -> Result<BoundGroup<'a, S>, ExecError> {
    let mut views: Vec<&ResultTable<S>> = Vec::with_capacity(plan.incoming.len());
    for iv in &plan.incoming {
        let rt = computed
            .get(&iv.view)
            .ok_or(ExecError::MissingDependency(plan.group, iv.view))?;
        views.push(rt);
    }

    let mut access = Vec::with_capacity(plan.incoming.len());
    for (vi, iv) in plan.incoming.iter().enumerate() {
        if iv.sorted_compatible {
            access.push(ViewAccess::Sorted);
        } else {
            let rt = views[vi];
            let w = rt.key_attrs.len();
            let mut perm: Vec<u32> = (0..rt.rows() as u32).collect();
            let key_cols = iv.key_cols.clone();
            let key_of = |r: u32| -> Vec<i64> {
                key_cols.iter().map(|&c| rt.key(r as usize, c)).collect()
            };
            perm.sort_by(|&x, &y| {
                key_of(x).cmp(&key_of(y)).then_with(|| {
                    rt.keys[x as usize * w..(x as usize + 1) * w]
                        .cmp(&rt.keys[y as usize * w..(y as usize + 1) * w])
                })
            });
            let mut index: HashMap<Vec<i64>, (u32, u32)> = HashMap::new();
            let mut start = 0usize;
            while start < perm.len() {
                let key = key_of(perm[start]);
                let mut end = start + 1;
                while end < perm.len() && key_of(perm[end]) == key {
                    end += 1;
                }
                index.insert(key, (start as u32, end as u32));
                start = end;
            }
            access.push(ViewAccess::Hashed { perm, index });
        }
    }

    let bind_loop = |l: &LoopSpec<S>| RunLoop {
        over_leaf: l.over_leaf,
        over_views: l.over_views.clone(),
        factors: l
            .factors
            .iter()
            .map(|f| bind_factor(f, base, plan, db, registry))
            .collect(),
        view_aggs: l.view_aggs.clone(),
    };
    let slot_defs: Vec<RunSlot<S>> = plan
        .slots
        .iter()
        .map(|s| match &s.kind {
            SlotKind::ViewLookup { view, agg } => RunSlot::ViewLookup {
                view: *view,
                agg: *agg,
            },
            SlotKind::Simple(f) => RunSlot::Simple(bind_factor(f, base, plan, db, registry)),
            SlotKind::RangeCount => RunSlot::RangeCount,
            SlotKind::LoopSum(l) => RunSlot::Loop(bind_loop(l)),
            SlotKind::Product(p) => RunSlot::Product(p.iter().map(|x| x.0).collect()),
            SlotKind::Running(p) => RunSlot::Running(p.iter().map(|x| x.0).collect()),
        })
        .collect();

    let outputs: Vec<RunOutput<S>> = plan
        .outputs
        .iter()
        .map(|o| {
            let exprs: Vec<Vec<RunTerm<S>>> = o
                .exprs
                .iter()
                .map(|terms| {
                    terms
                        .iter()
                        .map(|t| RunTerm {
                            closed: t.closed.iter().map(|x| x.0).collect(),
                            open: t.open.as_ref().map(&bind_loop),
                            key_srcs: t.key_srcs.clone(),
                        })
                        .collect()
                })
                .collect();
            let has_open = exprs.iter().flatten().any(|t| t.open.is_some());
            let mut monitor_perm: Vec<usize> = (0..o.key_attrs.len()).collect();
            if let Some(first) = o.exprs.first().and_then(|t| t.first()) {
                monitor_perm.sort_by_key(|&i| match first.key_srcs[i] {
                    OutputKeySrc::Order(p) => p,
                    OutputKeySrc::ViewCol { .. } => usize::MAX,
                });
            }
            RunOutput {
                view: o.view,
                key_attrs: o.key_attrs.clone(),
                container: o.container,
                arity: o.exprs.len(),
                exprs,
                has_open,
                monitor_perm,
            }
        })
        .collect();

    Ok(BoundGroup {
        views,
        access,
        slot_defs,
        outputs,
    })
}

/// Fresh (empty) accumulators for a group's outputs.
fn new_accs<S: Scalar>(bound: &BoundGroup<S>) -> Vec<OutputAcc<S>> {
    bound
        .outputs
        .iter()
        .map(|o| match o.container {
            Container::Appendable => OutputAcc::Appendable {
                keys: Vec::new(),
                values: Vec::new(),
                last_key: None,
            },
            Container::Keyed => OutputAcc::Keyed(HashMap::new()),
        })
        .collect()
}

/// Scans (a restriction of) the base table, accumulating into `accs`.
/// Sequential partitions of one group may share the accumulators; the
/// contribution order then matches the parallel merge order.
fn scan_into<S: Scalar>(
    plan: &MultiOutputPlan<S>,
    base: &Table<S>,
    bound: &BoundGroup<S>,
    accs: &mut Vec<OutputAcc<S>>,
    root_range: Option<TrieRange>,
) -> Result<ScanStats, ExecError> {
    let nviews = plan.incoming.len();
    let scan_depth = plan.scan_depth;
    let full = root_range.unwrap_or(base.full_range());
    let mut run = GroupRun {
        plan,
        base,
        views: &bound.views,
        access: &bound.access,
        slots: vec![S::zero(); plan.slots.len()],
        slot_defs: &bound.slot_defs,
        outputs: &bound.outputs,
        accs,
        vranges: (0..nviews)
            .map(|vi| vec![(0usize, bound.views[vi].rows()); scan_depth + 1])
            .collect(),
        base_ranges: vec![full; scan_depth + 1],
        ctx: RunCtx {
            base,
            views: bound.views.clone(),
            ctx_keys: vec![0; scan_depth.max(1)],
            vrow: vec![0; nviews],
            leaf_row: 0,
        },
        stats: ScanStats {
            group: plan.group.0,
            node: String::new(),
            ..Default::default()
        },
        scratch: Vec::new(),
        dead: false,
        live: vec![false; scan_depth + 1],
    };
    run.descend(0)?;
    Ok(run.stats)
}

/// Sorts and packages the accumulated outputs.
fn finalize_accs<S: Scalar>(
    bound: &BoundGroup<S>,
    accs: Vec<OutputAcc<S>>,
) -> HashMap<ViewId, ResultTable<S>> {
    let mut out: HashMap<ViewId, ResultTable<S>> = HashMap::new();
    for (o, acc) in bound.outputs.iter().zip(accs.into_iter()) {
        let mut rt = ResultTable {
            key_attrs: o.key_attrs.clone(),
            keys: Vec::new(),
            values: Vec::new(),
            arity: o.arity,
        };
        match acc {
            OutputAcc::Appendable { keys, values, .. } => {
                rt.keys = keys;
                rt.values = values;
                rt.sort_rows();
            }
            OutputAcc::Keyed(map) => {
                let mut entries: Vec<(Vec<i64>, Vec<S>)> = map.into_iter().collect();
                entries.sort_by(|a, b| a.0.cmp(&b.0));
                for (k, v) in entries {
                    rt.keys.extend(k);
                    rt.values.extend(v);
                }
            }
        }
        out.insert(o.view, rt);
    }
    out
}

/// Runs the scan over (a restriction of) the base table.
fn execute_bound<S: Scalar>(
    plan: &MultiOutputPlan<S>,
    base: &Table<S>,
    bound: &BoundGroup<S>,
    root_range: Option<TrieRange>,
) -> Result<(HashMap<ViewId, ResultTable<S>>, ScanStats), ExecError> {
    let mut accs = new_accs(bound);
    let mut stats = scan_into(plan, base, bound, &mut accs, root_range)?;
    let out = finalize_accs(bound, accs);
    for rt in out.values() {
        stats.output_rows += rt.rows() as u64;
    }
    Ok((out, stats))
}

/// Prepares and runs one group's plan over (a restriction of) the base table.
/// `computed` must hold every incoming view.
pub fn execute_group<S: Scalar>(
    plan: &MultiOutputPlan<S>,
    _opt: &OptimizedBatch<S>,
    base: &Table<S>,
    db: &Database<S>,
    registry: &FunctionRegistry<S>,
    computed: &HashMap<ViewId, Arc<ResultTable<S>>>,
    root_range: Option<TrieRange>,
) -> Result<(HashMap<ViewId, ResultTable<S>>, ScanStats), ExecError> {
    let bound = bind_group(plan, base, db, registry, computed)?;
    execute_bound(plan, base, &bound, root_range)
}

impl<'a, S: Scalar> GroupRun<'a, S> {
    /// Runs enter(depth); returns false when a view narrows to empty (the
    /// join eliminates this subtree).
    fn enter(&mut self, depth: usize) -> Result<bool, ExecError> {
        let prog = &self.plan.depths[depth];
        // narrow sorted views by the value just bound
        for &(vi, col) in &prog.narrow {
            let prev = self.vranges[vi][depth - 1];
            let r = self.views[vi].narrow(col, prev, self.ctx.ctx_keys[depth - 1]);
            self.vranges[vi][depth] = r;
            if r.0 >= r.1 {
                return Ok(false);
            }
        }
        // hash lookups once all keys fixed
        for &vi in &prog.hash_lookup {
            let (index, key_positions) = match &self.access[vi] {
                ViewAccess::Hashed { index, .. } => {
                    let pos: Vec<usize> =
                        self.plan.incoming[vi].keys.iter().map(|(_, p)| *p).collect();
                    (index, pos)
                }
                ViewAccess::Sorted => unreachable!("hash lookup on sorted view"),
            };
            let key: Vec<i64> = key_positions.iter().map(|&p| self.ctx.ctx_keys[p]).collect();
            self.stats.view_lookups += 1;
            match index.get(&key) {
                Some(&(lo, hi)) => self.vranges[vi][depth] = (lo as usize, hi as usize),
                None => return Ok(false),
            }
        }
        // carry forward untouched view ranges
        if depth > 0 {
            let narrowed: Vec<usize> = prog
                .narrow
                .iter()
                .map(|(vi, _)| *vi)
                .chain(prog.hash_lookup.iter().copied())
                .collect();
            for vi in 0..self.vranges.len() {
                if !narrowed.contains(&vi) {
                    self.vranges[vi][depth] = self.vranges[vi][depth - 1];
                }
            }
        }

        // compute slots
        let range = self.base_ranges[depth];
        for id in &prog.compute {
            let idx = id.0 as usize;
            let v = match &self.slot_defs[idx] {
                RunSlot::ViewLookup { view, agg } => {
                    let (lo, hi) = self.view_rows(*view, depth);
                    debug_assert!(hi - lo == 1, "lookup on non-unique view row");
                    self.stats.view_lookups += 1;
                    let row = self.view_row_at(*view, lo);
                    self.views[*view].value(row, *agg)
                }
                RunSlot::Simple(f) => f.eval(&self.ctx, &mut self.scratch),
                RunSlot::RangeCount => S::from_usize(range.len()).unwrap(),
                RunSlot::Loop(l) => {
                    let mut acc = S::zero();
                    let leaf = if l.over_leaf { Some(range) } else { None };
                    GroupRun::run_loop(
                        l,
                        &mut self.ctx,
                        self.views,
                        self.access,
                        &self.vranges,
                        depth,
                        leaf,
                        &mut self.stats,
                        &mut self.scratch,
                        |_, v| acc += v,
                    );
                    acc
                }
                RunSlot::Product(_) => unreachable!("products run after the leaf pass"),
                RunSlot::Running(_) => unreachable!("running slots are not in compute"),
            };
            self.slots[idx] = v;
        }

        // one pass over the leaf range for all leaf loops
        if !prog.leaf_pass.is_empty() {
            self.stats.leaf_visits += range.len() as u64;
            for id in &prog.leaf_pass {
                self.slots[id.0 as usize] = S::zero();
            }
            for row in range.lo..range.hi {
                self.ctx.leaf_row = row;
                for id in &prog.leaf_pass {
                    let idx = id.0 as usize;
                    if let RunSlot::Loop(l) = &self.slot_defs[idx] {
                        if l.over_views.is_empty() {
                            let mut v = S::one();
                            for f in &l.factors {
                                v *= f.eval(&self.ctx, &mut self.scratch);
                                if v == S::zero() {
                                    break;
                                }
                            }
                            self.slots[idx] += v;
                            self.stats.inner_iters += 1;
                        } else {
                            let mut acc = S::zero();
                            GroupRun::run_loop(
                                l,
                                &mut self.ctx,
                                self.views,
                                self.access,
                                &self.vranges,
                                depth,
                                None,
                                &mut self.stats,
                                &mut self.scratch,
                                |_, v| acc += v,
                            );
                            self.slots[idx] += acc;
                        }
                    }
                }
            }
        }

        for id in &prog.products {
            let idx = id.0 as usize;
            if let RunSlot::Product(parts) = &self.slot_defs[idx] {
                self.slots[idx] = self.eval_product_u32(parts);
            }
        }
        for id in &prog.zero {
            self.slots[id.0 as usize] = S::zero();
        }
        Ok(true)
    }

    fn eval_product_u32(&self, parts: &[u32]) -> S {
        let mut v = S::one();
        for &p in parts {
            v *= self.slots[p as usize];
        }
        v
    }

    fn exit(&mut self, depth: usize) {
        let prog = &self.plan.depths[depth];
        for id in &prog.accumulate {
            let idx = id.0 as usize;
            if let RunSlot::Running(parts) = &self.slot_defs[idx] {
                let v = self.eval_product_u32(parts);
                self.slots[idx] += v;
            }
        }
        let live = self.live[depth];
        for &oi in &prog.emit {
            if live || self.outputs[oi].key_attrs.is_empty() {
                self.emit_output(oi, depth);
            }
        }
    }

    fn emit_output(&mut self, oi: usize, depth: usize) {
        let o: &'a RunOutput<S> = &self.outputs[oi];
        if !o.has_open {
            // all key columns come from the order context
            let key: Vec<i64> = o.exprs[0][0]
                .key_srcs
                .iter()
                .map(|s| match s {
                    OutputKeySrc::Order(p) => self.ctx.ctx_keys[*p],
                    OutputKeySrc::ViewCol { .. } => unreachable!("closed output with view key"),
                })
                .collect();
            let vals: Vec<S> = o
                .exprs
                .iter()
                .map(|terms| {
                    let mut total = S::zero();
                    for t in terms {
                        total += self.eval_product_u32(&t.closed);
                    }
                    total
                })
                .collect();
            let vals = if self.dead { vec![S::zero(); o.arity] } else { vals };
            match &mut self.accs[oi] {
                OutputAcc::Appendable {
                    keys,
                    values,
                    last_key,
                } => {
                    if key.is_empty() {
                        // scalar row: partitions of one scan add into it
                        if values.is_empty() {
                            values.extend(vals);
                        } else {
                            for (d, v) in values.iter_mut().zip(vals) {
                                *d += v;
                            }
                        }
                        return;
                    }
                    // keys arrive grouped by the scan: strictly increasing
                    // when compared in order-position sequence
                    if let Some(lk) = last_key {
                        let increasing = o
                            .monitor_perm
                            .iter()
                            .map(|&i| (lk[i], key[i]))
                            .find(|(a, b)| a != b)
                            .map(|(a, b)| a < b)
                            .unwrap_or(false);
                        assert!(increasing, "appendable output received non-increasing key");
                    }
                    *last_key = Some(key.clone());
                    keys.extend(key);
                    values.extend(vals);
                }
                OutputAcc::Keyed(map) => {
                    let entry = map.entry(key).or_insert_with(|| vec![S::zero(); o.arity]);
                    for (e, v) in entry.iter_mut().zip(vals) {
                        *e += v;
                    }
                }
            }
            return;
        }

        // outputs with carried key columns: loop per term
        if self.dead {
            return;
        }
        for (ei, terms) in o.exprs.iter().enumerate() {
            for t in terms {
                let closed = self.eval_product_u32(&t.closed);
                match &t.open {
                    None => {
                        // key must still be assembled; all srcs are order-based
                        let key: Vec<i64> = t
                            .key_srcs
                            .iter()
                            .map(|s| match s {
                                OutputKeySrc::Order(p) => self.ctx.ctx_keys[*p],
                                OutputKeySrc::ViewCol { .. } => {
                                    unreachable!("closed term with carried key")
                                }
                            })
                            .collect();
                        if let OutputAcc::Keyed(map) = &mut self.accs[oi] {
                            let entry =
                                map.entry(key).or_insert_with(|| vec![S::zero(); o.arity]);
                            entry[ei] += closed;
                        }
                    }
                    Some(open) => {
                        let key_srcs = &t.key_srcs;
                        let leaf = if open.over_leaf {
                            Some(self.base_ranges[depth])
                        } else {
                            None
                        };
                        let acc = match &mut self.accs[oi] {
                            OutputAcc::Keyed(map) => map,
                            OutputAcc::Appendable { .. } => {
                                unreachable!("open output must be keyed")
                            }
                        };
                        let arity = o.arity;
                        GroupRun::run_loop(
                            open,
                            &mut self.ctx,
                            self.views,
                            self.access,
                            &self.vranges,
                            depth,
                            leaf,
                            &mut self.stats,
                            &mut self.scratch,
                            |ctx, v| {
                                let key: Vec<i64> = key_srcs
                                    .iter()
                                    .map(|s| match s {
                                        OutputKeySrc::Order(p) => ctx.ctx_keys[*p],
                                        OutputKeySrc::ViewCol { view, col } => {
                                            ctx.views[*view].key(ctx.vrow[*view], *col)
                                        }
                                    })
                                    .collect();
                                let entry =
                                    acc.entry(key).or_insert_with(|| vec![S::zero(); arity]);
                                entry[ei] += closed * v;
                            },
                        );
                    }
                }
            }
        }
    }

    fn descend(&mut self, depth: usize) -> Result<(), ExecError> {
        if depth == 0 {
            let ok = self.enter(0)?;
            if !ok {
                self.dead = true;
            }
            if self.dead {
                self.live[0] = false;
            } else if self.plan.scan_depth == 0 {
                self.live[0] = !self.base_ranges[0].is_empty();
            } else {
                self.live[0] = false;
                self.loop_depth(0)?;
            }
            self.exit(0);
            return Ok(());
        }
        unreachable!("descend is only entered at depth 0");
    }

    fn loop_depth(&mut self, depth: usize) -> Result<(), ExecError> {
        // iterate distinct values of order[depth] within the current range
        let attr = self.plan.order[depth];
        let range = self.base_ranges[depth];
        let iter = distinct_ranges(self.base, depth, range, attr)?;
        let pairs: Vec<(i64, TrieRange)> = iter.collect();
        for (key, sub) in pairs {
            self.ctx.ctx_keys[depth] = key;
            self.base_ranges[depth + 1] = sub;
            if !self.enter(depth + 1)? {
                continue;
            }
            if depth + 1 < self.plan.scan_depth {
                self.live[depth + 1] = false;
                self.loop_depth(depth + 1)?;
            } else {
                // deepest level reached with every view matched and a
                // non-empty base range: the join has rows here
                self.live[depth + 1] = true;
            }
            self.exit(depth + 1);
            if self.live[depth + 1] {
                self.live[depth] = true;
            }
        }
        Ok(())
    }
}

/// Executes the whole batch: groups in topological (level) order, independent
/// groups concurrently, the group(s) on the largest relation domain-
/// partitioned on the first attribute of their order. Results are identical
/// to a single-threaded run.
pub fn execute_batch<S: Scalar>(
    plans: &[MultiOutputPlan<S>],
    opt: &OptimizedBatch<S>,
    catalog: &Catalog,
    db: &Database<S>,
    registry: &FunctionRegistry<S>,
    threads: usize,
) -> Result<(Vec<Arc<ResultTable<S>>>, Vec<ScanStats>), ExecError> {
    let threads = threads.max(1);
    // `threads` fixes the domain-partition fan-out (and thereby the result
    // merge structure); actual OS-thread concurrency is capped by the
    // machine so oversubscription never degrades a scan
    let workers = threads.min(
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1),
    );
    // defensive acyclicity check over group edges
    for (a, b) in &opt.graph.edges {
        let (la, lb) = (
            opt.graph.groups[a.0 as usize].level,
            opt.graph.groups[b.0 as usize].level,
        );
        if la >= lb {
            return Err(ExecError::CycleDetected);
        }
    }

    // one sorted copy per (relation, order) shared across groups
    let mut sorted: HashMap<(RelId, Vec<AttrId>), Arc<Table<S>>> = HashMap::new();
    for plan in plans {
        let key = (plan.node, plan.order.clone());
        if let std::collections::hash_map::Entry::Vacant(e) = sorted.entry(key) {
            let t = db.table(plan.node);
            let ok = t.sort_order.len() >= plan.order.len()
                && t.sort_order[..plan.order.len()] == plan.order[..];
            let table = if ok {
                db.tables[&plan.node].clone()
            } else {
                Arc::new(crate::storage::sort_table(t, &plan.order)?)
            };
            e.insert(table);
        }
    }

    let largest = db
        .tables
        .values()
        .map(|t| t.row_count)
        .max()
        .unwrap_or(0);

    let mut computed: HashMap<ViewId, Arc<ResultTable<S>>> = HashMap::new();
    let mut stats: Vec<ScanStats> = Vec::new();

    let max_level = opt.graph.groups.iter().map(|g| g.level).max().unwrap_or(0);
    for level in 0..=max_level {
        let level_groups: Vec<usize> = (0..plans.len())
            .filter(|&gi| opt.graph.groups[gi].level == level)
            .collect();
        let run_one = |gi: usize,
                       computed: &HashMap<ViewId, Arc<ResultTable<S>>>|
         -> Result<(HashMap<ViewId, ResultTable<S>>, ScanStats), ExecError> {
            let plan = &plans[gi];
            let base = &sorted[&(plan.node, plan.order.clone())];
            let partitions = if threads > 1
                && base.row_count == largest
                && !plan.order.is_empty()
                && plan.scan_depth > 0
            {
                partition_ranges(base, plan.order_cols[0], threads)
            } else {
                vec![base.full_range()]
            };
            let bound = bind_group(plan, base, db, registry, computed)?;
            if partitions.len() <= 1 {
                let (out, mut st) = execute_bound(plan, base, &bound, None)?;
                st.node = catalog.rel_name(plan.node).to_string();
                Ok((out, st))
            } else {
                let mut total = ScanStats {
                    group: plan.group.0,
                    node: catalog.rel_name(plan.node).to_string(),
                    ..Default::default()
                };
                if workers <= 1 {
                    // one worker: run the partitions back to back into one
                    // accumulator set; addition order per key matches the
                    // parallel merge, so results are identical
                    let mut accs = new_accs(&bound);
                    for &range in &partitions {
                        let st = scan_into(plan, base, &bound, &mut accs, Some(range))?;
                        total.leaf_visits += st.leaf_visits;
                        total.view_lookups += st.view_lookups;
                        total.inner_iters += st.inner_iters;
                    }
                    let m = finalize_accs(&bound, accs);
                    for rt in m.values() {
                        total.output_rows += rt.rows() as u64;
                    }
                    return Ok((m, total));
                }
                let results: Vec<(HashMap<ViewId, ResultTable<S>>, ScanStats)> = {
                    std::thread::scope(|scope| {
                        let handles: Vec<_> = partitions
                            .iter()
                            .map(|&range| {
                                let bound = &bound;
                                scope.spawn(move || {
                                    execute_bound(plan, base, bound, Some(range))
                                })
                            })
                            .collect();
                        handles
                            .into_iter()
                            .map(|h| h.join().expect("partition thread"))
                            .collect::<Result<Vec<_>, _>>()
                    })?
                };
                for (_, st) in &results {
                    total.leaf_visits += st.leaf_visits;
                    total.view_lookups += st.view_lookups;
                    total.inner_iters += st.inner_iters;
                }
                let mut parts: Vec<HashMap<ViewId, ResultTable<S>>> =
                    results.into_iter().map(|(p, _)| p).collect();
                let view_ids: Vec<ViewId> = parts[0].keys().copied().collect();
                let mut m: HashMap<ViewId, ResultTable<S>> = HashMap::new();
                for vid in view_ids {
                    let tables: Vec<ResultTable<S>> = parts
                        .iter_mut()
                        .map(|p| p.remove(&vid).expect("same outputs per partition"))
                        .collect();
                    // partitions finalize sorted; the merge preserves order
                    m.insert(vid, merge_many(tables));
                }
                for rt in m.values() {
                    total.output_rows += rt.rows() as u64;
                }
                Ok((m, total))
            }
        };

        if workers == 1 || level_groups.len() == 1 {
            for gi in level_groups {
                let (out, st) = run_one(gi, &computed)?;
                stats.push(st);
                for (vid, rt) in out {
                    computed.insert(vid, Arc::new(rt));
                }
            }
        } else {
            // waves of at most `workers` independent groups
            for wave in level_groups.chunks(workers) {
                let results: Vec<Result<(HashMap<ViewId, ResultTable<S>>, ScanStats), ExecError>> =
                    std::thread::scope(|scope| {
                        let handles: Vec<_> = wave
                            .iter()
                            .map(|&gi| {
                                let computed = &computed;
                                scope.spawn(move || run_one(gi, computed))
                            })
                            .collect();
                        handles.into_iter().map(|h| h.join().expect("group thread")).collect()
                    });
                for res in results {
                    let (out, st) = res?;
                    stats.push(st);
                    for (vid, rt) in out {
                        computed.insert(vid, Arc::new(rt));
                    }
                }
            }
        }
    }
    stats.sort_by_key(|s| s.group);

    let query_tables: Vec<Arc<ResultTable<S>>> = opt
        .query_views
        .iter()
        .map(|v| computed[v].clone())
        .collect();
    Ok((query_tables, stats))
}

/// Key-disjoint partition of the table's top-level distinct ranges into at
/// most `parts` contiguous chunks of balanced row coverage.
fn partition_ranges<S: Scalar>(table: &Table<S>, col: usize, parts: usize) -> Vec<TrieRange> {
    let n = table.row_count;
    if n == 0 || parts <= 1 {
        return vec![table.full_range()];
    }
    let mut boundaries = vec![0usize];
    let target = n.div_ceil(parts);
    let mut at = 0usize;
    while at < n {
        let mut end = (at + target).min(n);
        if end < n {
            // extend to the end of the current key run
            let key = table.key_at(col, end - 1);
            while end < n && table.key_at(col, end) == key {
                end += 1;
            }
        }
        boundaries.push(end);
        at = end;
    }
    boundaries
        .windows(2)
        .map(|w| TrieRange { lo: w[0], hi: w[1] })
        .filter(|r| !r.is_empty())
        .collect()
}

/// Key-wise addition of sorted partial outputs in one k-way pass: equal keys
/// sum their aggregate vectors (in partition order), distinct keys union.
/// The result stays sorted.
fn merge_many<S: Scalar>(tables: Vec<ResultTable<S>>) -> ResultTable<S> {
    if tables.len() == 1 {
        return tables.into_iter().next().unwrap();
    }
    let arity = tables[0].arity;
    let key_attrs = tables[0].key_attrs.clone();
    if key_attrs.is_empty() {
        // scalar outputs: vector addition across partitions
        let mut values: Vec<S> = Vec::new();
        for t in tables {
            if values.is_empty() {
                values = t.values;
            } else if !t.values.is_empty() {
                for (d, s) in values.iter_mut().zip(t.values) {
                    *d += s;
                }
            }
        }
        return ResultTable {
            key_attrs,
            keys: Vec::new(),
            values,
            arity,
        };
    }
    let total_rows: usize = tables.iter().map(|t| t.rows()).sum();
    let w = key_attrs.len();
    let mut keys: Vec<i64> = Vec::with_capacity(total_rows * w);
    let mut values: Vec<S> = Vec::with_capacity(total_rows * arity);
    let mut cursor = vec![0usize; tables.len()];
    loop {
        let mut min_key: Option<&[i64]> = None;
        for (ti, t) in tables.iter().enumerate() {
            if cursor[ti] < t.rows() {
                let k = t.key_tuple(cursor[ti]);
                if min_key.is_none_or(|m| k < m) {
                    min_key = Some(k);
                }
            }
        }
        let Some(min_key) = min_key else { break };
        let at = keys.len();
        keys.extend_from_slice(min_key);
        let min_key = &keys[at..at + w];
        let vat = values.len();
        values.resize(vat + arity, S::zero());
        for (ti, t) in tables.iter().enumerate() {
            if cursor[ti] < t.rows() && t.key_tuple(cursor[ti]) == min_key {
                for a in 0..arity {
                    values[vat + a] += t.value(cursor[ti], a);
                }
                cursor[ti] += 1;
            }
        }
    }
    ResultTable {
        key_attrs,
        keys,
        values,
        arity,
    }
}

/// Materialized natural join over the tree: one i64 key column per attribute.
pub struct JoinRows {
    pub attrs: Vec<AttrId>,
    pub cols: Vec<Vec<i64>>,
    pub rows: usize,
}

impl JoinRows {
    pub fn col(&self, attr: AttrId) -> Option<&[i64]> {
        self.attrs
            .iter()
            .position(|&a| a == attr)
            .map(|i| self.cols[i].as_slice())
    }
}

/// Materializes the natural join row by row, following the tree structure so
/// intermediate results stay connected.
pub fn materialize_join<S: Scalar>(
    catalog: &Catalog,
    tree: &JoinTree,
    db: &Database<S>,
) -> JoinRows {
    // BFS order from the first node
    let mut order: Vec<RelId> = Vec::new();
    if let Some(&start) = tree.nodes.first() {
        let mut stack = vec![start];
        while let Some(n) = stack.pop() {
            if order.contains(&n) {
                continue;
            }
            order.push(n);
            for m in tree.neighbors(n) {
                if !order.contains(&m) {
                    stack.push(m);
                }
            }
        }
    }

    let mut attrs: Vec<AttrId> = Vec::new();
    let mut cols: Vec<Vec<i64>> = Vec::new();
    let mut rows = 0usize;
    for (step, &rel) in order.iter().enumerate() {
        let t = db.table(rel);
        let t_attrs = &catalog.rel_schema(rel).attrs;
        if step == 0 {
            attrs = t_attrs.clone();
            cols = (0..attrs.len())
                .map(|c| (0..t.row_count).map(|r| t.key_at(c, r)).collect())
                .collect();
            rows = t.row_count;
            continue;
        }
        // hash join on shared attributes
        let shared: Vec<(usize, usize)> = t_attrs
            .iter()
            .enumerate()
            .filter_map(|(tc, a)| attrs.iter().position(|x| x == a).map(|jc| (jc, tc)))
            .collect();
        let new_attrs: Vec<(usize, AttrId)> = t_attrs
            .iter()
            .enumerate()
            .filter(|(_, a)| !attrs.contains(a))
            .map(|(tc, a)| (tc, *a))
            .collect();
        let mut index: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
        for r in 0..t.row_count {
            let key: Vec<i64> = shared.iter().map(|&(_, tc)| t.key_at(tc, r)).collect();
            index.entry(key).or_default().push(r);
        }
        let mut out_cols: Vec<Vec<i64>> = vec![Vec::new(); attrs.len() + new_attrs.len()];
        let mut out_rows = 0usize;
        for r in 0..rows {
            let key: Vec<i64> = shared.iter().map(|&(jc, _)| cols[jc][r]).collect();
            if let Some(matches) = index.get(&key) {
                for &tr in matches {
                    for (c, col) in cols.iter().enumerate() {
                        out_cols[c].push(col[r]);
                    }
                    for (nc, &(tc, _)) in new_attrs.iter().enumerate() {
                        out_cols[attrs.len() + nc].push(t.key_at(tc, tr));
                    }
                    out_rows += 1;
                }
            }
        }
        attrs.extend(new_attrs.iter().map(|&(_, a)| a));
        cols = out_cols;
        rows = out_rows;
    }
    JoinRows { attrs, cols, rows }
}

struct JoinRowBinding<'a, S> {
    join: &'a JoinRows,
    row: usize,
    decoders: &'a HashMap<AttrId, Decoder>,
    _marker: std::marker::PhantomData<S>,
}

impl<'a, S: Scalar> Binding<S> for JoinRowBinding<'a, S> {
    fn key(&self, attr: AttrId) -> Option<i64> {
        self.join.col(attr).map(|c| c[self.row])
    }
    fn value(&self, attr: AttrId) -> Option<S> {
        let key = self.key(attr)?;
        let d = self.decoders.get(&attr).copied().unwrap_or(Decoder::Int);
        Some(d.decode(key))
    }
}

/// Reference implementation: joins everything, then groups and evaluates
/// each query directly, row by row.
pub fn brute_force_oracle<S: Scalar>(
    batch: &[AggregateQuery<S>],
    catalog: &Catalog,
    tree: &JoinTree,
    db: &Database<S>,
    registry: &FunctionRegistry<S>,
) -> Vec<ResultTable<S>> {
    let join = materialize_join(catalog, tree, db);
    oracle_on_join(batch, &join, db, registry)
}

/// Evaluates a batch against an already-materialized join.
pub fn oracle_on_join<S: Scalar>(
    batch: &[AggregateQuery<S>],
    join: &JoinRows,
    db: &Database<S>,
    registry: &FunctionRegistry<S>,
) -> Vec<ResultTable<S>> {
    let mut decoders: HashMap<AttrId, Decoder> = HashMap::new();
    for &a in &join.attrs {
        decoders.insert(a, decoder_for(db, a));
    }
    let resolver = DbResolver { db };
    batch
        .iter()
        .map(|q| {
            let keycols: Vec<&[i64]> = q
                .group_by
                .iter()
                .map(|&a| join.col(a).expect("group-by attr in join"))
                .collect();
            let mut map: HashMap<Vec<i64>, Vec<S>> = HashMap::new();
            for r in 0..join.rows {
                let binding = JoinRowBinding {
                    join,
                    row: r,
                    decoders: &decoders,
                    _marker: std::marker::PhantomData,
                };
                let key: Vec<i64> = keycols.iter().map(|c| c[r]).collect();
                let entry = map
                    .entry(key)
                    .or_insert_with(|| vec![S::zero(); q.aggregates.len()]);
                for (ai, agg) in q.aggregates.iter().enumerate() {
                    entry[ai] +=
                        crate::query::eval_expr(agg, &binding, registry, &resolver)
                            .expect("oracle eval");
                }
            }
            let mut rt = ResultTable {
                key_attrs: q.group_by.clone(),
                keys: Vec::new(),
                values: Vec::new(),
                arity: q.aggregates.len(),
            };
            if q.group_by.is_empty() {
                // empty sums: one row of zeros even on an empty join
                let vals = map
                    .remove(&Vec::new())
                    .unwrap_or_else(|| vec![S::zero(); q.aggregates.len()]);
                rt.values = vals;
            } else {
                let mut entries: Vec<(Vec<i64>, Vec<S>)> = map.into_iter().collect();
                entries.sort_by(|a, b| a.0.cmp(&b.0));
                for (k, v) in entries {
                    rt.keys.extend(k);
                    rt.values.extend(v);
                }
            }
            rt
        })
        .collect()
}

/// An optimized and planned batch, reusable across executions. Dynamic
/// factors may be rebound in the registry between executions without
/// rebuilding the plans.
pub struct PreparedBatch<S> {
    pub batch: Vec<AggregateQuery<S>>,
    pub opt: OptimizedBatch<S>,
    pub plans: Vec<MultiOutputPlan<S>>,
}

impl<S: Scalar> PreparedBatch<S> {
    pub fn execute(
        &self,
        catalog: &Catalog,
        db: &Database<S>,
        registry: &FunctionRegistry<S>,
        threads: usize,
    ) -> Result<(Vec<Arc<ResultTable<S>>>, Vec<ScanStats>), ExecError> {
        execute_batch(&self.plans, &self.opt, catalog, db, registry, threads)
    }
}

/// Runs the full optimizer pipeline (roots, decomposition, merging, grouping,
/// physical planning) for a batch over a loaded database.
pub fn prepare_batch<S: Scalar>(
    batch: Vec<AggregateQuery<S>>,
    catalog: &Catalog,
    tree: &JoinTree,
    db: &Database<S>,
    forced_roots: Option<Vec<RelId>>,
) -> Result<PreparedBatch<S>, crate::physical::PlanError> {
    let sizes: HashMap<RelId, usize> = db
        .tables
        .iter()
        .map(|(&r, t)| (r, t.row_count))
        .collect();
    let opt = crate::logical::optimize_batch(&batch, catalog, tree, &sizes, forced_roots);
    let domains: HashMap<AttrId, usize> = catalog
        .attr_ids()
        .map(|a| (a, db.domain_size(catalog, a)))
        .collect();
    let plans = crate::physical::plan_batch(&opt, catalog, &domains)?;
    Ok(PreparedBatch { batch, opt, plans })
}

/// One-shot convenience: prepare and execute.
pub fn run_batch<S: Scalar>(
    batch: Vec<AggregateQuery<S>>,
    catalog: &Catalog,
    tree: &JoinTree,
    db: &Database<S>,
    registry: &FunctionRegistry<S>,
    threads: usize,
) -> Result<Vec<Arc<ResultTable<S>>>, ExecError> {
    let prepared = prepare_batch(batch, catalog, tree, db, None).expect("planning failed");
    let (tables, _) = prepared.execute(catalog, db, registry, threads)?;
    Ok(tables)
}

/// Relative comparison of two result tables: identical key sets and every
/// aggregate within `tol` relative (absolute near zero).
pub fn tables_match<S: Scalar>(a: &ResultTable<S>, b: &ResultTable<S>, tol: f64) -> bool {
    if a.rows() != b.rows() || a.arity != b.arity {
        return false;
    }
    if a.keys != b.keys {
        return false;
    }
    for (x, y) in a.values.iter().zip(&b.values) {
        let (x, y) = (x.to_f64().unwrap(), y.to_f64().unwrap());
        let scale = x.abs().max(y.abs()).max(1.0);
        if (x - y).abs() > tol * scale {
            return false;
        }
    }
    true
}
