//! Logical optimization: turns a query batch into a consolidated, grouped set
//! of directional views over the join tree.
//!
//! Layers, in order: root assignment (one root per query), aggregate pushdown
//! (one directional view per tree edge, toward the root), view merging
//! (identical views collapse; same group-by and body concatenate aggregates;
//! same group-by and direction fuse into one shared-scan view), and view
//! grouping (views out of the same relation with no dependency between them
//! evaluate together in one scan).

use crate::catalog::{AttrId, Catalog, JoinTree, RelId};
use crate::query::{AggregateQuery, UdafFactor};
use crate::Scalar;
use std::collections::{HashMap, HashSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ViewId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GroupId(pub u32);

/// Where a view's output flows: along a tree edge into a consumer relation,
/// or out of the engine as a query result.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViewTarget {
    Edge(RelId),
    Query(usize),
}

/// One multiplicand of a node-level product: either a UDAF factor over
/// attributes visible at the node (base columns, join attributes, or carried
/// columns of incoming views), or an aggregate slot of an incoming view.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeFactor<S> {
    Base(UdafFactor<S>),
    Slot { view: ViewId, slot: usize },
}

impl<S: Scalar> NodeFactor<S> {
    fn canon(&self, out: &mut Vec<u8>) {
        match self {
            NodeFactor::Base(f) => {
                out.push(0);
                f.canon(out);
            }
            NodeFactor::Slot { view, slot } => {
                out.push(1);
                out.extend(view.0.to_le_bytes());
                out.extend((*slot as u32).to_le_bytes());
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeTerm<S> {
    pub factors: Vec<NodeFactor<S>>,
}

impl<S: Scalar> NodeTerm<S> {
    fn canon(&self) -> Vec<u8> {
        let mut parts: Vec<Vec<u8>> = self
            .factors
            .iter()
            .map(|f| {
                let mut b = Vec::new();
                f.canon(&mut b);
                b
            })
            .collect();
        parts.sort();
        let mut out = Vec::new();
        for p in parts {
            out.extend((p.len() as u32).to_le_bytes());
            out.extend(p);
        }
        out
    }
}

/// A sum of products over node factors; the definition of one aggregate slot.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeExpr<S> {
    pub terms: Vec<NodeTerm<S>>,
}

impl<S: Scalar> NodeExpr<S> {
    fn canon(&self) -> Vec<u8> {
        let mut parts: Vec<Vec<u8>> = self.terms.iter().map(|t| t.canon()).collect();
        parts.sort();
        let mut out = Vec::new();
        for p in parts {
            out.extend((p.len() as u32).to_le_bytes());
            out.extend(p);
        }
        out
    }
}

/// A directional view (or root query definition): a group-by aggregate over
/// the source relation joined with its incoming views.
#[derive(Debug, Clone)]
pub struct LogicalView<S> {
    pub id: ViewId,
    pub source: RelId,
    pub target: ViewTarget,
    /// Canonically sorted. For edge views: join keys with the target, plus
    /// group-by attributes carried from the subtree, plus hoisted attributes
    /// needed by straddling n-ary factors.
    pub group_by: Vec<AttrId>,
    pub incoming: Vec<ViewId>,
    /// One entry per aggregate slot.
    pub exprs: Vec<NodeExpr<S>>,
}

/// The decomposition of one query: per-edge views (ids local to this value)
/// plus the root definition combining them.
#[derive(Debug, Clone)]
pub struct QueryDecomposition<S> {
    pub views: Vec<LogicalView<S>>,
    pub root_view: LogicalView<S>,
}

/// A set of mutually independent views out of one relation; the unit of
/// execution (one scan computes all of them).
#[derive(Debug, Clone)]
pub struct ViewGroup {
    pub id: GroupId,
    pub node: RelId,
    pub level: usize,
    pub views: Vec<ViewId>,
}

#[derive(Debug, Clone)]
pub struct GroupDependencyGraph {
    pub groups: Vec<ViewGroup>,
    /// producer -> consumer; acyclic by construction (levels increase).
    pub edges: Vec<(GroupId, GroupId)>,
}

/// The fully optimized batch, ready for physical planning.
#[derive(Debug, Clone)]
pub struct OptimizedBatch<S> {
    pub views: Vec<LogicalView<S>>,
    pub graph: GroupDependencyGraph,
    /// Root relation per query.
    pub roots: Vec<RelId>,
    /// Output view per query.
    pub query_views: Vec<ViewId>,
    /// Views created before merging (queries x edges).
    pub pre_merge_view_count: usize,
}

impl<S: Scalar> OptimizedBatch<S> {
    pub fn view(&self, id: ViewId) -> &LogicalView<S> {
        &self.views[id.0 as usize]
    }

    /// Edge views only, query outputs excluded.
    pub fn merged_view_count(&self) -> usize {
        self.views
            .iter()
            .filter(|v| matches!(v.target, ViewTarget::Edge(_)))
            .count()
    }
}

/// Assigns a join-tree root to every query in the batch.
///
/// Each relation gets, per query, weight `|F n omega_R| / |F|`; queries
/// without group-by attributes spread `1/m` to every relation. Relations are
/// processed in decreasing total weight (ties: larger table, then name) and
/// claim every still-unassigned query that gave them nonzero weight.
pub fn assign_roots<S: Scalar>(
    batch: &[AggregateQuery<S>],
    catalog: &Catalog,
    tree: &JoinTree,
    table_sizes: &HashMap<RelId, usize>,
) -> Vec<RelId> {
    let m = tree.nodes.len() as u64;
    // Exact rational weights: common denominator over |F| values and m.
    let mut denoms: Vec<u64> = batch
        .iter()
        .map(|q| {
            if q.group_by.is_empty() {
                m
            } else {
                q.group_by.len() as u64
            }
        })
        .collect();
    denoms.push(1);
    let lcm = denoms.iter().fold(1u64, |a, &b| num_lcm(a, b.max(1)));

    let mut weight: HashMap<RelId, u128> = tree.nodes.iter().map(|&n| (n, 0u128)).collect();
    let mut considered: Vec<HashSet<RelId>> = Vec::with_capacity(batch.len());
    for q in batch {
        let mut cons = HashSet::new();
        if q.group_by.is_empty() {
            for &n in &tree.nodes {
                *weight.get_mut(&n).unwrap() += (lcm / m) as u128;
                cons.insert(n);
            }
        } else {
            let f = q.group_by.len() as u64;
            for &n in &tree.nodes {
                let schema: HashSet<AttrId> =
                    catalog.rel_schema(n).attrs.iter().copied().collect();
                let hits = q.group_by.iter().filter(|a| schema.contains(a)).count() as u64;
                if hits > 0 {
                    *weight.get_mut(&n).unwrap() += (hits * (lcm / f)) as u128;
                    cons.insert(n);
                }
            }
        }
        considered.push(cons);
    }

    let mut order: Vec<RelId> = tree.nodes.clone();
    order.sort_by(|&a, &b| {
        weight[&b]
            .cmp(&weight[&a])
            .then_with(|| {
                table_sizes
                    .get(&b)
                    .unwrap_or(&0)
                    .cmp(table_sizes.get(&a).unwrap_or(&0))
            })
            .then_with(|| catalog.rel_name(a).cmp(catalog.rel_name(b)))
    });

    let mut roots: Vec<Option<RelId>> = vec![None; batch.len()];
    for rel in order {
        for (qi, cons) in considered.iter().enumerate() {
            if roots[qi].is_none() && cons.contains(&rel) {
                roots[qi] = Some(rel);
            }
        }
    }
    roots.into_iter().map(|r| r.unwrap()).collect()
}

fn num_lcm(a: u64, b: u64) -> u64 {
    fn gcd(a: u64, b: u64) -> u64 {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    a / gcd(a, b) * b
}

struct PendingView<S> {
    source: RelId,
    target: RelId,
    group_by: HashSet<AttrId>,
    incoming: Vec<usize>,
    exprs: Vec<NodeExpr<S>>,
    memo: HashMap<Vec<u8>, usize>,
}

struct Decomposer<'a, S> {
    catalog: &'a Catalog,
    tree: &'a JoinTree,
    parent: HashMap<RelId, RelId>,
    subtree: HashMap<RelId, HashSet<AttrId>>,
    edge_idx: HashMap<(RelId, RelId), usize>,
    pending: Vec<PendingView<S>>,
}

impl<'a, S: Scalar> Decomposer<'a, S> {
    fn new(catalog: &'a Catalog, tree: &'a JoinTree, root: RelId) -> Self {
        let parent = tree.orient(root);
        let mut subtree = HashMap::new();
        for &n in &tree.nodes {
            subtree.insert(n, tree.subtree_attrs(catalog, root, n));
        }
        Decomposer {
            catalog,
            tree,
            parent,
            subtree,
            edge_idx: HashMap::new(),
            pending: Vec::new(),
        }
    }

    fn children(&self, n: RelId) -> Vec<RelId> {
        self.tree
            .neighbors(n)
            .into_iter()
            .filter(|&c| self.parent.get(&c) == Some(&n) && c != n)
            .collect()
    }

    fn rel_attrs(&self, n: RelId) -> HashSet<AttrId> {
        self.catalog.rel_schema(n).attrs.iter().copied().collect()
    }

    /// Places one product term at node `n`: local factors stay, factors fully
    /// inside one child subtree push down, straddling factors stay with their
    /// child-side attributes hoisted into the child view's group-by. Every
    /// child edge contributes a slot (a count when nothing is pushed).
    fn place_term(
        &mut self,
        n: RelId,
        factors: &[UdafFactor<S>],
        needed: &HashSet<AttrId>,
    ) -> NodeTerm<S> {
        let local_attrs = self.rel_attrs(n);
        let children = self.children(n);
        let mut local: Vec<NodeFactor<S>> = Vec::new();
        let mut pushed: HashMap<RelId, Vec<UdafFactor<S>>> = HashMap::new();
        let mut hoists: HashMap<RelId, HashSet<AttrId>> = HashMap::new();

        for f in factors {
            let attrs = f.attrs();
            if attrs.iter().all(|a| local_attrs.contains(a)) {
                local.push(NodeFactor::Base(f.clone()));
                continue;
            }
            let home = children
                .iter()
                .find(|&&c| attrs.iter().all(|a| self.subtree[&c].contains(a)))
                .copied();
            if let Some(c) = home {
                pushed.entry(c).or_default().push(f.clone());
            } else {
                // n-ary factor spanning subtrees: evaluate here, hoist the
                // child-side attributes into the child views' group-bys
                for &c in &children {
                    let h: HashSet<AttrId> = attrs
                        .iter()
                        .copied()
                        .filter(|a| self.subtree[&c].contains(a) && !local_attrs.contains(a))
                        .collect();
                    if !h.is_empty() {
                        hoists.entry(c).or_default().extend(h);
                    }
                }
                local.push(NodeFactor::Base(f.clone()));
            }
        }

        for c in children {
            let mut child_needed: HashSet<AttrId> = needed
                .iter()
                .copied()
                .filter(|a| self.subtree[&c].contains(a) && !local_attrs.contains(a))
                .collect();
            if let Some(h) = hoists.get(&c) {
                child_needed.extend(h.iter().copied());
            }
            let child_factors = pushed.remove(&c).unwrap_or_default();
            let (view, slot) = self.edge_slot(c, n, &child_factors, &child_needed);
            local.push(NodeFactor::Slot {
                view: ViewId(view as u32),
                slot,
            });
        }
        NodeTerm { factors: local }
    }

    /// Slot of the c->p view computing the subtree sum of `factors` grouped
    /// by the view's group-by. Identical slots within one query dedup.
    fn edge_slot(
        &mut self,
        c: RelId,
        p: RelId,
        factors: &[UdafFactor<S>],
        needed: &HashSet<AttrId>,
    ) -> (usize, usize) {
        let idx = match self.edge_idx.get(&(c, p)) {
            Some(&i) => i,
            None => {
                let keys = self
                    .tree
                    .edge_key(c, p)
                    .map(|k| k.to_vec())
                    .unwrap_or_default();
                let i = self.pending.len();
                self.pending.push(PendingView {
                    source: c,
                    target: p,
                    group_by: keys.into_iter().collect(),
                    incoming: Vec::new(),
                    exprs: Vec::new(),
                    memo: HashMap::new(),
                });
                self.edge_idx.insert((c, p), i);
                i
            }
        };
        self.pending[idx].group_by.extend(needed.iter().copied());
        let term = self.place_term(c, factors, needed);
        let canon = term.canon();
        if let Some(&slot) = self.pending[idx].memo.get(&canon) {
            return (idx, slot);
        }
        let slot = self.pending[idx].exprs.len();
        for f in &term.factors {
            if let NodeFactor::Slot { view, .. } = f {
                if !self.pending[idx].incoming.contains(&(view.0 as usize)) {
                    self.pending[idx].incoming.push(view.0 as usize);
                }
            }
        }
        self.pending[idx].exprs.push(NodeExpr { terms: vec![term] });
        self.pending[idx].memo.insert(canon, slot);
        (idx, slot)
    }
}

/// Decomposes one query into directional views along the tree edges (toward
/// `root`) plus the root definition.
pub fn decompose_query<S: Scalar>(
    q: &AggregateQuery<S>,
    query_index: usize,
    catalog: &Catalog,
    tree: &JoinTree,
    root: RelId,
) -> QueryDecomposition<S> {
    let mut d: Decomposer<S> = Decomposer::new(catalog, tree, root);
    let needed: HashSet<AttrId> = q.group_by.iter().copied().collect();
    let mut root_exprs = Vec::new();
    for agg in &q.aggregates {
        let mut terms = Vec::new();
        for term in &agg.terms {
            terms.push(d.place_term(root, term, &needed));
        }
        root_exprs.push(NodeExpr { terms });
    }
    let mut incoming: Vec<ViewId> = Vec::new();
    for e in &root_exprs {
        for t in &e.terms {
            for f in &t.factors {
                if let NodeFactor::Slot { view, .. } = f {
                    if !incoming.contains(view) {
                        incoming.push(*view);
                    }
                }
            }
        }
    }
    incoming.sort();
    let mut group_by = q.group_by.clone();
    group_by.sort();
    let root_view = LogicalView {
        id: ViewId(d.pending.len() as u32),
        source: root,
        target: ViewTarget::Query(query_index),
        group_by,
        incoming,
        exprs: root_exprs,
    };
    let views = d
        .pending
        .into_iter()
        .enumerate()
        .map(|(i, pv)| {
            let mut gb: Vec<AttrId> = pv.group_by.into_iter().collect();
            gb.sort();
            let mut inc: Vec<ViewId> = pv.incoming.iter().map(|&i| ViewId(i as u32)).collect();
            inc.sort();
            LogicalView {
                id: ViewId(i as u32),
                source: pv.source,
                target: ViewTarget::Edge(pv.target),
                group_by: gb,
                incoming: inc,
                exprs: pv.exprs,
            }
        })
        .collect();
    QueryDecomposition { views, root_view }
}

/// Maps a (query, local view, slot) of the un-merged decomposition to its
/// merged location.
pub type SlotRemap = HashMap<(usize, u32, usize), (ViewId, usize)>;

/// Consolidates the per-query views. Views sharing source, direction, and
/// group-by merge into one; identical aggregate slots keep a single copy.
/// Downstream references (including the root definitions) are remapped.
pub fn merge_views<S: Scalar>(
    decompositions: &[QueryDecomposition<S>],
) -> (Vec<LogicalView<S>>, Vec<ViewId>, SlotRemap) {
    #[derive(Clone, Copy, PartialEq, Eq, Hash)]
    struct Local {
        query: usize,
        view: u32,
    }

    fn local_level<S: Scalar>(
        decs: &[QueryDecomposition<S>],
        memo: &mut HashMap<(usize, u32), usize>,
        qi: usize,
        vid: u32,
    ) -> usize {
        if let Some(&l) = memo.get(&(qi, vid)) {
            return l;
        }
        let v = &decs[qi].views[vid as usize];
        let l = v
            .incoming
            .iter()
            .map(|w| local_level(decs, memo, qi, w.0) + 1)
            .max()
            .unwrap_or(0);
        memo.insert((qi, vid), l);
        l
    }

    // children before parents, deterministic order
    let mut all: Vec<Local> = Vec::new();
    for (qi, d) in decompositions.iter().enumerate() {
        for v in &d.views {
            all.push(Local {
                query: qi,
                view: v.id.0,
            });
        }
    }
    let mut memo = HashMap::new();
    all.sort_by_key(|l| {
        (
            local_level(decompositions, &mut memo, l.query, l.view),
            l.query,
            l.view,
        )
    });

    #[derive(PartialEq, Eq, Hash)]
    struct MergeKey {
        source: RelId,
        target: RelId,
        group_by: Vec<AttrId>,
    }

    struct Merged<S> {
        view: LogicalView<S>,
        memo: HashMap<Vec<u8>, usize>,
    }

    let mut merged: Vec<Merged<S>> = Vec::new();
    let mut buckets: HashMap<MergeKey, usize> = HashMap::new();
    let mut remap: SlotRemap = HashMap::new();

    fn remap_expr<S: Scalar>(expr: &NodeExpr<S>, qi: usize, remap: &SlotRemap) -> NodeExpr<S> {
        NodeExpr {
            terms: expr
                .terms
                .iter()
                .map(|t| NodeTerm {
                    factors: t
                        .factors
                        .iter()
                        .map(|f| match f {
                            NodeFactor::Base(b) => NodeFactor::Base(b.clone()),
                            NodeFactor::Slot { view, slot } => {
                                let (nv, ns) = remap[&(qi, view.0, *slot)];
                                NodeFactor::Slot { view: nv, slot: ns }
                            }
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    for l in &all {
        let v = &decompositions[l.query].views[l.view as usize];
        let target = match v.target {
            ViewTarget::Edge(t) => t,
            ViewTarget::Query(_) => unreachable!("root views are not in the edge list"),
        };
        let key = MergeKey {
            source: v.source,
            target,
            group_by: v.group_by.clone(),
        };
        let mi = match buckets.get(&key) {
            Some(&mi) => mi,
            None => {
                let mi = merged.len();
                merged.push(Merged {
                    view: LogicalView {
                        id: ViewId(mi as u32),
                        source: v.source,
                        target: v.target,
                        group_by: v.group_by.clone(),
                        incoming: Vec::new(),
                        exprs: Vec::new(),
                    },
                    memo: HashMap::new(),
                });
                buckets.insert(key, mi);
                mi
            }
        };
        for (si, expr) in v.exprs.iter().enumerate() {
            let new_expr = remap_expr(expr, l.query, &remap);
            let canon = new_expr.canon();
            let slot = match merged[mi].memo.get(&canon) {
                Some(&s) => s,
                None => {
                    let s = merged[mi].view.exprs.len();
                    for t in &new_expr.terms {
                        for f in &t.factors {
                            if let NodeFactor::Slot { view, .. } = f {
                                if !merged[mi].view.incoming.contains(view) {
                                    merged[mi].view.incoming.push(*view);
                                }
                            }
                        }
                    }
                    merged[mi].view.exprs.push(new_expr);
                    merged[mi].memo.insert(canon, s);
                    s
                }
            };
            remap.insert((l.query, l.view, si), (ViewId(mi as u32), slot));
        }
    }

    let mut views: Vec<LogicalView<S>> = merged
        .into_iter()
        .map(|m| {
            let mut v = m.view;
            v.incoming.sort();
            v
        })
        .collect();

    // Root definitions, remapped, never merged with each other.
    let mut query_views = Vec::with_capacity(decompositions.len());
    for (qi, d) in decompositions.iter().enumerate() {
        let rv = &d.root_view;
        let id = ViewId(views.len() as u32);
        let exprs: Vec<NodeExpr<S>> = rv.exprs.iter().map(|e| remap_expr(e, qi, &remap)).collect();
        let mut incoming: Vec<ViewId> = Vec::new();
        for e in &exprs {
            for t in &e.terms {
                for f in &t.factors {
                    if let NodeFactor::Slot { view, .. } = f {
                        if !incoming.contains(view) {
                            incoming.push(*view);
                        }
                    }
                }
            }
        }
        incoming.sort();
        views.push(LogicalView {
            id,
            source: rv.source,
            target: rv.target,
            group_by: rv.group_by.clone(),
            incoming,
            exprs,
        });
        query_views.push(id);
    }
    (views, query_views, remap)
}

/// Clusters views into maximal groups of mutually independent views out of
/// the same relation, and builds the (acyclic) group dependency graph.
pub fn group_views<S: Scalar>(views: &[LogicalView<S>], catalog: &Catalog) -> GroupDependencyGraph {
    fn compute_level<S: Scalar>(
        views: &[LogicalView<S>],
        level: &mut [usize],
        done: &mut [bool],
        v: usize,
    ) -> usize {
        if done[v] {
            return level[v];
        }
        let l = views[v]
            .incoming
            .iter()
            .map(|w| compute_level(views, level, done, w.0 as usize) + 1)
            .max()
            .unwrap_or(0);
        level[v] = l;
        done[v] = true;
        l
    }
    let mut level = vec![0usize; views.len()];
    let mut done = vec![false; views.len()];
    for v in 0..views.len() {
        compute_level(views, &mut level, &mut done, v);
    }

    let mut keys: Vec<(usize, String, RelId)> = Vec::new();
    for v in views {
        let k = (
            level[v.id.0 as usize],
            catalog.rel_name(v.source).to_string(),
            v.source,
        );
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.sort();

    let mut groups: Vec<ViewGroup> = keys
        .iter()
        .enumerate()
        .map(|(i, (lvl, _, node))| ViewGroup {
            id: GroupId(i as u32),
            node: *node,
            level: *lvl,
            views: Vec::new(),
        })
        .collect();
    let mut group_of: HashMap<ViewId, GroupId> = HashMap::new();
    for v in views {
        let gi = keys
            .iter()
            .position(|(lvl, _, node)| *lvl == level[v.id.0 as usize] && *node == v.source)
            .unwrap();
        groups[gi].views.push(v.id);
        group_of.insert(v.id, GroupId(gi as u32));
    }
    let mut edges: Vec<(GroupId, GroupId)> = Vec::new();
    for v in views {
        for w in &v.incoming {
            let e = (group_of[w], group_of[&v.id]);
            if e.0 != e.1 && !edges.contains(&e) {
                edges.push(e);
            }
        }
    }
    edges.sort();
    GroupDependencyGraph { groups, edges }
}

/// Runs the full logical pipeline. `forced_roots` overrides root assignment
/// (used by root-invariance checks and structural tests).
pub fn optimize_batch<S: Scalar>(
    batch: &[AggregateQuery<S>],
    catalog: &Catalog,
    tree: &JoinTree,
    table_sizes: &HashMap<RelId, usize>,
    forced_roots: Option<Vec<RelId>>,
) -> OptimizedBatch<S> {
    let roots = forced_roots.unwrap_or_else(|| assign_roots(batch, catalog, tree, table_sizes));
    let decomposed: Vec<QueryDecomposition<S>> = batch
        .iter()
        .enumerate()
        .map(|(qi, q)| decompose_query(q, qi, catalog, tree, roots[qi]))
        .collect();
    let pre_merge_view_count = decomposed.iter().map(|d| d.views.len()).sum();
    let (views, query_views, _) = merge_views(&decomposed);
    let graph = group_views(&views, catalog);
    OptimizedBatch {
        views,
        graph,
        roots,
        query_views,
        pre_merge_view_count,
    }
}

/// Deterministic text rendering of the view list and group graph.
pub fn explain_logical<S: Scalar>(
    opt: &OptimizedBatch<S>,
    batch: &[AggregateQuery<S>],
    catalog: &Catalog,
) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    for (qi, q) in batch.iter().enumerate() {
        writeln!(out, "root {} -> {}", q.id, catalog.rel_name(opt.roots[qi])).unwrap();
    }
    writeln!(out, "views ({}):", opt.views.len()).unwrap();
    for v in &opt.views {
        let name = view_label(v, batch, catalog);
        let gb: Vec<&str> = v.group_by.iter().map(|&a| catalog.attr_name(a)).collect();
        let inc: Vec<String> = v
            .incoming
            .iter()
            .map(|w| view_label(opt.view(*w), batch, catalog))
            .collect();
        writeln!(
            out,
            "  {} gb({}) slots={} incoming=[{}]",
            name,
            gb.join(","),
            v.exprs.len(),
            inc.join(",")
        )
        .unwrap();
        for (si, e) in v.exprs.iter().enumerate() {
            writeln!(out, "    s{} = {}", si, render_expr(e, opt, batch, catalog)).unwrap();
        }
    }
    writeln!(out, "groups ({}):", opt.graph.groups.len()).unwrap();
    for g in &opt.graph.groups {
        let names: Vec<String> = g
            .views
            .iter()
            .map(|v| view_label(opt.view(*v), batch, catalog))
            .collect();
        writeln!(
            out,
            "  G{} @ {} level={}: [{}]",
            g.id.0,
            catalog.rel_name(g.node),
            g.level,
            names.join(",")
        )
        .unwrap();
    }
    let edges: Vec<String> = opt
        .graph
        .edges
        .iter()
        .map(|(a, b)| format!("G{}->G{}", a.0, b.0))
        .collect();
    writeln!(out, "group edges: [{}]", edges.join(",")).unwrap();
    out
}

pub(crate) fn view_label<S: Scalar>(
    v: &LogicalView<S>,
    batch: &[AggregateQuery<S>],
    catalog: &Catalog,
) -> String {
    match v.target {
        ViewTarget::Edge(t) => format!(
            "V{}[{}->{}]",
            v.id.0,
            catalog.rel_name(v.source),
            catalog.rel_name(t)
        ),
        ViewTarget::Query(qi) => batch[qi].id.clone(),
    }
}

fn render_expr<S: Scalar>(
    e: &NodeExpr<S>,
    opt: &OptimizedBatch<S>,
    batch: &[AggregateQuery<S>],
    catalog: &Catalog,
) -> String {
    let term_strs: Vec<String> = e
        .terms
        .iter()
        .map(|t| {
            if t.factors.is_empty() {
                return "1".to_string();
            }
            t.factors
                .iter()
                .map(|f| render_factor(f, opt, batch, catalog))
                .collect::<Vec<_>>()
                .join("*")
        })
        .collect();
    term_strs.join(" + ")
}

pub(crate) fn render_factor<S: Scalar>(
    f: &NodeFactor<S>,
    opt: &OptimizedBatch<S>,
    batch: &[AggregateQuery<S>],
    catalog: &Catalog,
) -> String {
    match f {
        NodeFactor::Base(b) => render_udaf(b, catalog),
        NodeFactor::Slot { view, slot } => {
            format!("{}.s{}", view_label(opt.view(*view), batch, catalog), slot)
        }
    }
}

pub(crate) fn render_udaf<S: Scalar>(f: &UdafFactor<S>, catalog: &Catalog) -> String {
    use crate::query::Param;
    match f {
        UdafFactor::Constant(c) => format!("{c}"),
        UdafFactor::Identity(a) => catalog.attr_name(*a).to_string(),
        UdafFactor::Power(a, e) => format!("{}^{}", catalog.attr_name(*a), e),
        UdafFactor::Kronecker { attr, op, threshold } => {
            let t = match threshold {
                Param::Static(l) => format!("{l}"),
                Param::Dynamic(id) => format!("@{}", id.0),
            };
            format!("[{} {} {}]", catalog.attr_name(*attr), op.symbol(), t)
        }
        UdafFactor::InSet { attr, set } => {
            let t = match set {
                Param::Static(l) => format!("{l}"),
                Param::Dynamic(id) => format!("@{}", id.0),
            };
            format!("[{} in {}]", catalog.attr_name(*attr), t)
        }
        UdafFactor::Named { func, args } => {
            let a: Vec<&str> = args.iter().map(|&x| catalog.attr_name(x)).collect();
            format!("fn{}({})", func.0, a.join(","))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::favorita_catalog;
    use crate::query::{AggregateExpr, FunctionRegistry};
    use std::sync::Arc;

    fn favorita_registry() -> FunctionRegistry<f64> {
        let mut reg = FunctionRegistry::new();
        reg.register_host("f", 1, Arc::new(|a: &[f64]| a[0] + 1.0));
        reg.register_host("g", 1, Arc::new(|a: &[f64]| a[0] * 2.0));
        reg.register_host("h", 2, Arc::new(|a: &[f64]| a[0] + a[1]));
        reg
    }

    fn sizes(catalog: &Catalog, tree: &JoinTree, fact: &str, big: usize) -> HashMap<RelId, usize> {
        tree.nodes
            .iter()
            .map(|&n| {
                let s = if catalog.rel_name(n) == fact { big } else { 10 };
                (n, s)
            })
            .collect()
    }

    #[test]
    fn chain_queries_root_at_a_relation_containing_their_attribute() {
        let mut c = Catalog::new();
        let n = 6;
        let mut rels = Vec::new();
        for i in 1..n {
            rels.push(
                c.add_relation(&format!("S{i}"), &[&format!("x{i}"), &format!("x{}", i + 1)])
                    .unwrap(),
            );
        }
        let edges = (1..rels.len()).map(|i| (rels[i - 1], rels[i])).collect();
        let tree =
            crate::catalog::validate_join_tree(&c, &JoinTree::new(rels.clone(), edges)).unwrap();
        let batch: Vec<AggregateQuery<f64>> = (1..=n)
            .map(|i| {
                AggregateQuery::new(
                    &format!("Q{i}"),
                    vec![c.attr(&format!("x{i}")).unwrap()],
                    vec![AggregateExpr::count()],
                )
            })
            .collect();
        let sz: HashMap<RelId, usize> = rels.iter().map(|&r| (r, 10)).collect();
        let roots = assign_roots(&batch, &c, &tree, &sz);
        for (i, root) in roots.iter().enumerate() {
            let xi = c.attr(&format!("x{}", i + 1)).unwrap();
            assert!(
                c.rel_schema(*root).attrs.contains(&xi),
                "Q{} rooted at {} which lacks x{}",
                i + 1,
                c.rel_name(*root),
                i + 1
            );
        }
    }

    #[test]
    fn all_items_groupby_roots_at_items() {
        let (c, tree) = favorita_catalog();
        let q = AggregateQuery::<f64>::new(
            "Q",
            vec![c.attr("family").unwrap(), c.attr("class").unwrap()],
            vec![AggregateExpr::count()],
        );
        let sz = sizes(&c, &tree, "Sales", 1000);
        let roots = assign_roots(&[q], &c, &tree, &sz);
        assert_eq!(roots[0], c.relation("Items").unwrap());
    }

    #[test]
    fn empty_groupby_ties_break_by_size() {
        let (c, tree) = favorita_catalog();
        let batch: Vec<AggregateQuery<f64>> = (0..2)
            .map(|i| AggregateQuery::new(&format!("Q{i}"), vec![], vec![AggregateExpr::count()]))
            .collect();
        let sz = sizes(&c, &tree, "Sales", 100);
        let roots = assign_roots(&batch, &c, &tree, &sz);
        let sales = c.relation("Sales").unwrap();
        assert_eq!(roots, vec![sales, sales]);
    }

    #[test]
    fn example_pushdown_structure() {
        // Q1(f(units)*g(price)) rooted at Sales: five views, with
        // V[Oil->Transactions] grouping by date and carrying g(price).
        let (c, tree) = favorita_catalog();
        let reg = favorita_registry();
        let batch = crate::query::parse_batch("Q1(; f(units)*g(price))", &c, &reg).unwrap();
        let sales = c.relation("Sales").unwrap();
        let d = decompose_query(&batch[0], 0, &c, &tree, sales);
        assert_eq!(d.views.len(), 5);
        let oil = c.relation("Oil").unwrap();
        let trans = c.relation("Transactions").unwrap();
        let date = c.attr("date").unwrap();
        let store = c.attr("store").unwrap();
        let v_o = d
            .views
            .iter()
            .find(|v| v.source == oil && v.target == ViewTarget::Edge(trans))
            .expect("view O->T");
        assert_eq!(v_o.group_by, vec![date]);
        assert_eq!(v_o.exprs.len(), 1);
        // g(price) was pushed into it
        let has_g = v_o.exprs[0].terms[0]
            .factors
            .iter()
            .any(|f| matches!(f, NodeFactor::Base(UdafFactor::Named { .. })));
        assert!(has_g);
        // V_T(date,store) consumes V_R and V_O
        let v_t = d.views.iter().find(|v| v.source == trans).expect("view T->S");
        assert_eq!(v_t.group_by, vec![date, store]);
        assert_eq!(v_t.incoming.len(), 2);
        // root consumes three views (T, H, I edges)
        assert_eq!(d.root_view.incoming.len(), 3);
    }

    #[test]
    fn shared_views_merge_across_queries() {
        // Q1 and Q2 share V_T (and its underlying V_O, V_R) and V_H.
        let (c, tree) = favorita_catalog();
        let reg = favorita_registry();
        let batch =
            crate::query::parse_batch("Q1(; f(units)*g(price))\nQ2(family; g(price))", &c, &reg)
                .unwrap();
        let sales = c.relation("Sales").unwrap();
        let opt = optimize_batch(
            &batch,
            &c,
            &tree,
            &sizes(&c, &tree, "Sales", 100),
            Some(vec![sales, sales]),
        );
        // 10 pre-merge views (2 queries x 5 edges); merged: V_O, V_R, V_T,
        // V_H shared; Items edge differs (item) vs (family,item).
        assert_eq!(opt.pre_merge_view_count, 10);
        assert_eq!(opt.merged_view_count(), 6);
    }

    #[test]
    fn identical_queries_collapse_to_one_copy_of_each_view() {
        let (c, tree) = favorita_catalog();
        let reg = favorita_registry();
        let batch = crate::query::parse_batch(
            "Q1(; f(units)*g(price))\nQ2(; f(units)*g(price))",
            &c,
            &reg,
        )
        .unwrap();
        let sales = c.relation("Sales").unwrap();
        let opt = optimize_batch(
            &batch,
            &c,
            &tree,
            &sizes(&c, &tree, "Sales", 100),
            Some(vec![sales, sales]),
        );
        assert_eq!(opt.merged_view_count(), 5);
        for v in opt
            .views
            .iter()
            .filter(|v| matches!(v.target, ViewTarget::Edge(_)))
        {
            assert_eq!(v.exprs.len(), 1, "duplicate slots in {:?}", v.id);
        }
    }

    #[test]
    fn merge_case2_concatenates_aggregates() {
        // V_O(date; g(price)) and V'_O(date; 1) merge into W_O(date; g, 1).
        let (c, tree) = favorita_catalog();
        let reg = favorita_registry();
        let batch =
            crate::query::parse_batch("Q1(; f(units)*g(price))\nQ3(; f(units))", &c, &reg)
                .unwrap();
        let sales = c.relation("Sales").unwrap();
        let opt = optimize_batch(
            &batch,
            &c,
            &tree,
            &sizes(&c, &tree, "Sales", 100),
            Some(vec![sales, sales]),
        );
        let oil = c.relation("Oil").unwrap();
        let w_o = opt.views.iter().find(|v| v.source == oil).unwrap();
        assert_eq!(w_o.exprs.len(), 2);
    }

    #[test]
    fn single_relation_query_has_no_views() {
        let mut c = Catalog::new();
        let r = c.add_relation("R", &["a", "b"]).unwrap();
        let tree = crate::catalog::validate_join_tree(&c, &JoinTree::new(vec![r], vec![])).unwrap();
        let q = AggregateQuery::<f64>::new(
            "Q",
            vec![c.attr("a").unwrap()],
            vec![AggregateExpr::count()],
        );
        let d = decompose_query(&q, 0, &c, &tree, r);
        assert!(d.views.is_empty());
        assert!(d.root_view.incoming.is_empty());
    }

    #[test]
    fn independent_leaf_views_group_separately_with_no_edges() {
        let (c, tree) = favorita_catalog();
        let reg = favorita_registry();
        let batch = crate::query::parse_batch("Qa(htype; 1)\nQb(family; 1)", &c, &reg).unwrap();
        let opt = optimize_batch(&batch, &c, &tree, &sizes(&c, &tree, "Sales", 100), None);
        let holi = c.relation("Holidays").unwrap();
        let items = c.relation("Items").unwrap();
        let g_h: Vec<_> = opt
            .graph
            .groups
            .iter()
            .filter(|g| g.node == holi && g.level == 0)
            .collect();
        let g_i: Vec<_> = opt
            .graph
            .groups
            .iter()
            .filter(|g| g.node == items && g.level == 0)
            .collect();
        assert_eq!(g_h.len(), 1);
        assert_eq!(g_i.len(), 1);
        for (a, b) in &opt.graph.edges {
            let ga = &opt.graph.groups[a.0 as usize];
            let gb = &opt.graph.groups[b.0 as usize];
            assert!(!(ga.node == holi && gb.node == items && ga.level == 0 && gb.level == 0));
        }
    }

    #[test]
    fn dependent_views_at_same_node_split_groups() {
        let mut c = Catalog::new();
        let r = c.add_relation("R", &["a", "b"]).unwrap();
        let s = c.add_relation("S", &["b", "d"]).unwrap();
        let t = c.add_relation("T", &["d", "e"]).unwrap();
        let tree = crate::catalog::validate_join_tree(
            &c,
            &JoinTree::new(vec![r, s, t], vec![(r, s), (s, t)]),
        )
        .unwrap();
        let e = c.attr("e").unwrap();
        let q = AggregateQuery::<f64>::new("Q", vec![e], vec![AggregateExpr::count()]);
        let opt = optimize_batch(
            &[q],
            &c,
            &tree,
            &vec![(r, 10), (s, 10), (t, 10)].into_iter().collect(),
            Some(vec![t]),
        );
        assert_eq!(opt.graph.groups.len(), 3);
        let levels: Vec<usize> = opt.graph.groups.iter().map(|g| g.level).collect();
        assert_eq!(levels, vec![0, 1, 2]);
        assert_eq!(opt.graph.edges.len(), 2);
    }

    #[test]
    fn explain_logical_is_deterministic() {
        let (c, tree) = favorita_catalog();
        let reg = favorita_registry();
        let batch =
            crate::query::parse_batch("Q1(; f(units)*g(price))\nQ2(family; g(price))", &c, &reg)
                .unwrap();
        let sz = sizes(&c, &tree, "Sales", 100);
        let a = explain_logical(&optimize_batch(&batch, &c, &tree, &sz, None), &batch, &c);
        let b = explain_logical(&optimize_batch(&batch, &c, &tree, &sz, None), &batch, &c);
        assert_eq!(a, b);
        assert!(a.contains("groups"));
    }
}
