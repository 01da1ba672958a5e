//! Physical planning: one multi-output plan per view group.
//!
//! A plan scans the group's common relation as a trie over a total order of
//! its join attributes. Incoming views anchor at the lowest depth that fixes
//! all of their key attributes; each output product decomposes into minimal
//! partial products (union-find over factors sharing non-join attributes of
//! one relation or view), combined with intermediate aggregates `a_d` on the
//! way down and running sums `r_d` on the way back up. Outputs whose group-by
//! is a prefix of the attribute order append rows in scan order; all others
//! accumulate into a keyed map.

use crate::catalog::{AttrId, Catalog, RelId};
use crate::logical::{GroupId, LogicalView, NodeFactor, OptimizedBatch, ViewId};
use crate::query::{AggregateQuery, UdafFactor};
use crate::Scalar;
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("incoming view {0:?} has key attributes outside the attribute order")]
    UnjoinableView(ViewId),
    #[error("output {0:?} carries key attribute {1:?} provided by no incoming view of the term")]
    MissingKeySource(ViewId, AttrId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SlotId(pub u32);

/// Where a factor argument is read from during the scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AttrSource {
    /// Fixed by the nested loops: the current key at this order position.
    Order(usize),
    /// Column of the base relation, read per leaf row.
    LeafCol(usize),
    /// Key column of an incoming view, read per view row.
    ViewCol { view: usize, col: usize },
}

/// A UDAF factor with its arguments resolved to scan sources.
#[derive(Debug, Clone)]
pub struct PlanFactor<S> {
    pub factor: UdafFactor<S>,
    pub srcs: Vec<AttrSource>,
}

impl<S: Scalar> PlanFactor<S> {
    fn canon(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.factor.canon(&mut out);
        for s in &self.srcs {
            match s {
                AttrSource::Order(p) => {
                    out.push(0);
                    out.extend((*p as u32).to_le_bytes());
                }
                AttrSource::LeafCol(c) => {
                    out.push(1);
                    out.extend((*c as u32).to_le_bytes());
                }
                AttrSource::ViewCol { view, col } => {
                    out.push(2);
                    out.extend((*view as u32).to_le_bytes());
                    out.extend((*col as u32).to_le_bytes());
                }
            }
        }
        out
    }
}

/// A dependent-factor loop: iterates the current leaf range and/or the
/// matching rows of incoming views, accumulating the product of the factors
/// and the referenced view aggregates.
#[derive(Debug, Clone)]
pub struct LoopSpec<S> {
    pub over_leaf: bool,
    /// Incoming view indices iterated (views with carried columns).
    pub over_views: Vec<usize>,
    pub factors: Vec<PlanFactor<S>>,
    /// (view index, aggregate slot) read per view row.
    pub view_aggs: Vec<(usize, usize)>,
}

impl<S: Scalar> LoopSpec<S> {
    fn canon(&self) -> Vec<u8> {
        let mut out = vec![self.over_leaf as u8];
        for v in &self.over_views {
            out.extend((*v as u32).to_le_bytes());
        }
        out.push(255);
        let mut fac: Vec<Vec<u8>> = self.factors.iter().map(|f| f.canon()).collect();
        fac.sort();
        for f in fac {
            out.extend((f.len() as u32).to_le_bytes());
            out.extend(f);
        }
        out.push(254);
        let mut aggs = self.view_aggs.clone();
        aggs.sort_unstable();
        for (v, a) in aggs {
            out.extend((v as u32).to_le_bytes());
            out.extend((a as u32).to_le_bytes());
        }
        out
    }
}

#[derive(Debug, Clone)]
pub enum SlotKind<S> {
    /// Single-row aggregate fetch from an incoming view without carried
    /// columns, once its keys are fixed.
    ViewLookup { view: usize, agg: usize },
    /// Factor over order attributes only (or a constant).
    Simple(PlanFactor<S>),
    /// Size of the current leaf range (the base multiplicity).
    RangeCount,
    LoopSum(LoopSpec<S>),
    /// Product of previously computed slots (partial products and the
    /// intermediate-aggregate chain).
    Product(Vec<SlotId>),
    /// Running sum over the product of parts; zeroed one depth up,
    /// accumulated on the way back from this depth.
    Running(Vec<SlotId>),
}

#[derive(Debug, Clone)]
pub struct SlotDef<S> {
    pub kind: SlotKind<S>,
    pub depth: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputKeySrc {
    Order(usize),
    ViewCol { view: usize, col: usize },
}

/// One term of an output aggregate at emission: a product of closed slots,
/// times an open loop when the output key carries view columns. `key_srcs`
/// is parallel to the output's `key_attrs`.
#[derive(Debug, Clone)]
pub struct TermSpec<S> {
    pub closed: Vec<SlotId>,
    pub open: Option<LoopSpec<S>>,
    pub key_srcs: Vec<OutputKeySrc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Container {
    /// Group-by is a prefix of the attribute order: rows append in scan
    /// order, keys never repeat.
    Appendable,
    /// Keyed map with accumulation on collision.
    Keyed,
}

#[derive(Debug, Clone)]
pub struct OutputDef<S> {
    pub view: ViewId,
    pub key_attrs: Vec<AttrId>,
    pub container: Container,
    pub emit_depth: usize,
    /// exprs[aggregate][term]
    pub exprs: Vec<Vec<TermSpec<S>>>,
}

/// An incoming view as seen by the plan.
#[derive(Debug, Clone)]
pub struct IncomingView {
    pub view: ViewId,
    /// Key attributes with their order positions, ascending by position.
    pub keys: Vec<(AttrId, usize)>,
    /// Lowest depth with all keys fixed.
    pub anchor: usize,
    /// Carried (non-key) columns: (attr, column index in the result table).
    pub extras: Vec<(AttrId, usize)>,
    /// Column index in the result table per key, parallel to `keys`.
    pub key_cols: Vec<usize>,
    /// Whether the result table's native sort allows range narrowing along
    /// the scan; otherwise the executor builds a hash index.
    pub sorted_compatible: bool,
}

/// Per-depth instruction schedule.
#[derive(Debug, Clone, Default)]
pub struct DepthProgram {
    /// (incoming view, key column) narrowed by the value just bound.
    pub narrow: Vec<(usize, usize)>,
    /// Hash-indexed views looked up once all their keys are fixed.
    pub hash_lookup: Vec<usize>,
    /// Slots computed on entry before the leaf pass (no slot dependencies).
    pub compute: Vec<SlotId>,
    /// LoopSum slots over the leaf range, all evaluated in one row pass.
    pub leaf_pass: Vec<SlotId>,
    /// Product slots, evaluated after the leaf pass, in dependency order.
    pub products: Vec<SlotId>,
    /// Running slots reset on entry (they belong to depth+1).
    pub zero: Vec<SlotId>,
    /// Running slots accumulated on exit from this depth.
    pub accumulate: Vec<SlotId>,
    /// Outputs emitted on exit from this depth.
    pub emit: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct MultiOutputPlan<S> {
    pub group: GroupId,
    pub node: RelId,
    pub order: Vec<AttrId>,
    /// Column index in the base table per order attribute.
    pub order_cols: Vec<usize>,
    pub scan_depth: usize,
    pub incoming: Vec<IncomingView>,
    pub outputs: Vec<OutputDef<S>>,
    pub slots: Vec<SlotDef<S>>,
    pub depths: Vec<DepthProgram>,
}

impl<S: Scalar> MultiOutputPlan<S> {
    /// Slots beyond direct view lookups: the engine-synthesized intermediate
    /// aggregates.
    pub fn intermediate_count(&self) -> usize {
        self.slots
            .iter()
            .filter(|s| !matches!(s.kind, SlotKind::ViewLookup { .. }))
            .count()
    }
}

/// Join attributes used by the group: incoming-view keys plus output group-by
/// attributes of the common relation, ordered by ascending distinct count
/// (ties lexicographically by name).
pub fn choose_attribute_order<S: Scalar>(
    group_views: &[&LogicalView<S>],
    all_views: &[LogicalView<S>],
    catalog: &Catalog,
    node: RelId,
    domain_sizes: &HashMap<AttrId, usize>,
) -> Vec<AttrId> {
    let node_attrs: Vec<AttrId> = catalog.rel_schema(node).attrs.clone();
    let mut used: Vec<AttrId> = Vec::new();
    let push = |a: AttrId, used: &mut Vec<AttrId>| {
        if node_attrs.contains(&a) && !used.contains(&a) {
            used.push(a);
        }
    };
    for v in group_views {
        for a in &v.group_by {
            push(*a, &mut used);
        }
        for w in &v.incoming {
            for a in &all_views[w.0 as usize].group_by {
                push(*a, &mut used);
            }
        }
    }
    used.sort_by(|a, b| {
        let (da, db) = (
            domain_sizes.get(a).copied().unwrap_or(1),
            domain_sizes.get(b).copied().unwrap_or(1),
        );
        da.cmp(&db)
            .then_with(|| catalog.attr_name(*a).cmp(catalog.attr_name(*b)))
    });
    used
}

struct Registrar<'a, S: Scalar> {
    catalog: &'a Catalog,
    node: RelId,
    order: Vec<AttrId>,
    incoming: Vec<IncomingView>,
    in_index: HashMap<ViewId, usize>,
    slots: Vec<SlotDef<S>>,
    memo: HashMap<Vec<u8>, SlotId>,
}

impl<'a, S: Scalar> Registrar<'a, S> {
    fn order_pos(&self, a: AttrId) -> Option<usize> {
        self.order.iter().position(|&x| x == a)
    }

    fn leaf_col(&self, a: AttrId) -> Option<usize> {
        self.catalog
            .rel_schema(self.node)
            .attrs
            .iter()
            .position(|&x| x == a)
    }

    fn alloc(&mut self, kind: SlotKind<S>, depth: usize) -> SlotId {
        let canon = slot_canon(&kind, depth);
        if let Some(&id) = self.memo.get(&canon) {
            return id;
        }
        let id = SlotId(self.slots.len() as u32);
        self.slots.push(SlotDef { kind, depth });
        self.memo.insert(canon, id);
        id
    }

    /// Product helper: one part aliases, several allocate a Product slot.
    fn product(&mut self, mut parts: Vec<SlotId>, depth: usize) -> Option<SlotId> {
        parts.sort_unstable();
        match parts.len() {
            0 => None,
            1 => Some(parts[0]),
            _ => Some(self.alloc(SlotKind::Product(parts), depth)),
        }
    }
}

fn slot_canon<S: Scalar>(kind: &SlotKind<S>, depth: usize) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend((depth as u32).to_le_bytes());
    match kind {
        SlotKind::ViewLookup { view, agg } => {
            out.push(0);
            out.extend((*view as u32).to_le_bytes());
            out.extend((*agg as u32).to_le_bytes());
        }
        SlotKind::Simple(f) => {
            out.push(1);
            out.extend(f.canon());
        }
        SlotKind::RangeCount => out.push(2),
        SlotKind::LoopSum(l) => {
            out.push(3);
            out.extend(l.canon());
        }
        SlotKind::Product(parts) => {
            out.push(4);
            for p in parts {
                out.extend(p.0.to_le_bytes());
            }
        }
        SlotKind::Running(parts) => {
            out.push(5);
            for p in parts {
                out.extend(p.0.to_le_bytes());
            }
        }
    }
    out
}

/// Atom of one term: a value computed entirely at a single depth.
enum Atom<S: Scalar> {
    Lookup { view: usize, agg: usize },
    Simple(PlanFactor<S>),
    Cluster(ClusterAtom<S>),
}

struct ClusterAtom<S: Scalar> {
    over_leaf: bool,
    views: Vec<usize>,
    factors: Vec<PlanFactor<S>>,
    view_aggs: Vec<(usize, usize)>,
}

struct DecomposedTerm<S: Scalar> {
    atoms: Vec<Atom<S>>,
    open: Option<ClusterAtom<S>>,
    key_srcs: Vec<OutputKeySrc>,
    open_depth: usize,
}

/// Output key column template: fixed order position, or an attribute carried
/// by an incoming view (resolved per term).
enum KeyTemplate {
    Order(usize),
    Carried(AttrId),
}

/// Builds the multi-output plan for one view group.
pub fn register<S: Scalar>(
    opt: &OptimizedBatch<S>,
    group: GroupId,
    catalog: &Catalog,
    domain_sizes: &HashMap<AttrId, usize>,
) -> Result<MultiOutputPlan<S>, PlanError> {
    let g = &opt.graph.groups[group.0 as usize];
    let group_views: Vec<&LogicalView<S>> = g.views.iter().map(|v| opt.view(*v)).collect();
    let node = g.node;
    let order = choose_attribute_order(&group_views, &opt.views, catalog, node, domain_sizes);
    let node_schema = catalog.rel_schema(node);
    let order_cols: Vec<usize> = order
        .iter()
        .map(|a| node_schema.attrs.iter().position(|x| x == a).unwrap())
        .collect();
    let depth_max = order.len();

    // Incoming views of the whole group, deterministic order.
    let mut incoming_ids: Vec<ViewId> = Vec::new();
    for v in &group_views {
        for w in &v.incoming {
            if !incoming_ids.contains(w) {
                incoming_ids.push(*w);
            }
        }
    }
    incoming_ids.sort();

    let mut incoming = Vec::with_capacity(incoming_ids.len());
    for &w in &incoming_ids {
        let lv = opt.view(w);
        let mut keys: Vec<(AttrId, usize)> = Vec::new();
        let mut extras: Vec<(AttrId, usize)> = Vec::new();
        for (col, &a) in lv.group_by.iter().enumerate() {
            if node_schema.attrs.contains(&a) {
                let pos = order
                    .iter()
                    .position(|&x| x == a)
                    .ok_or(PlanError::UnjoinableView(w))?;
                keys.push((a, pos));
            } else {
                extras.push((a, col));
            }
        }
        keys.sort_by_key(|(_, p)| *p);
        let key_cols: Vec<usize> = keys
            .iter()
            .map(|(a, _)| lv.group_by.iter().position(|x| x == a).unwrap())
            .collect();
        let anchor = keys.iter().map(|(_, p)| p + 1).max().unwrap_or(0);
        // Native sort = canonical group_by order; range narrowing needs the
        // keys, in scan order, to form a prefix of it.
        let sorted_compatible = keys
            .iter()
            .enumerate()
            .all(|(i, (a, _))| lv.group_by.get(i) == Some(a));
        incoming.push(IncomingView {
            view: w,
            keys,
            anchor,
            extras,
            key_cols,
            sorted_compatible,
        });
    }
    let in_index: HashMap<ViewId, usize> = incoming
        .iter()
        .enumerate()
        .map(|(i, iv)| (iv.view, i))
        .collect();

    let mut reg = Registrar {
        catalog,
        node,
        order: order.clone(),
        incoming,
        in_index,
        slots: Vec::new(),
        memo: HashMap::new(),
    };

    let mut outputs: Vec<OutputDef<S>> = Vec::new();
    for v in &group_views {
        // Key template: order positions now, carried attributes per term.
        let template: Vec<KeyTemplate> = v
            .group_by
            .iter()
            .map(|&a| match reg.order_pos(a) {
                Some(p) => KeyTemplate::Order(p),
                None => KeyTemplate::Carried(a),
            })
            .collect();
        let carried: Vec<AttrId> = template
            .iter()
            .filter_map(|t| match t {
                KeyTemplate::Carried(a) => Some(*a),
                _ => None,
            })
            .collect();
        let order_key_depth = template
            .iter()
            .filter_map(|t| match t {
                KeyTemplate::Order(p) => Some(p + 1),
                _ => None,
            })
            .max()
            .unwrap_or(0);

        // Decompose all terms first; the emission depth must cover every
        // term's open cluster.
        let mut decomposed: Vec<Vec<DecomposedTerm<S>>> = Vec::new();
        let mut emit_depth = order_key_depth;
        for expr in &v.exprs {
            let mut terms = Vec::new();
            for term in &expr.terms {
                let dt = decompose_term(&mut reg, term, &carried, &template, v.id, depth_max)?;
                emit_depth = emit_depth.max(dt.open_depth);
                terms.push(dt);
            }
            decomposed.push(terms);
        }

        let container = if carried.is_empty() && {
            let mut pos: Vec<usize> = template
                .iter()
                .map(|t| match t {
                    KeyTemplate::Order(p) => *p,
                    _ => unreachable!(),
                })
                .collect();
            pos.sort_unstable();
            pos.iter().copied().eq(0..v.group_by.len())
        } {
            Container::Appendable
        } else {
            Container::Keyed
        };

        let mut exprs = Vec::new();
        for terms in decomposed {
            let mut specs = Vec::new();
            for dt in terms {
                specs.push(layout_term(&mut reg, dt, emit_depth, depth_max));
            }
            exprs.push(specs);
        }

        outputs.push(OutputDef {
            view: v.id,
            key_attrs: v.group_by.clone(),
            container,
            emit_depth,
            exprs,
        });
    }

    // Depth schedules.
    let mut depths: Vec<DepthProgram> = vec![DepthProgram::default(); depth_max + 1];
    for (vi, iv) in reg.incoming.iter().enumerate() {
        if iv.sorted_compatible {
            for (ki, (_, pos)) in iv.keys.iter().enumerate() {
                depths[pos + 1].narrow.push((vi, iv.key_cols[ki]));
            }
        } else {
            depths[iv.anchor].hash_lookup.push(vi);
        }
    }
    for (si, slot) in reg.slots.iter().enumerate() {
        let id = SlotId(si as u32);
        match &slot.kind {
            SlotKind::Running(_) => {
                if slot.depth > 0 {
                    depths[slot.depth - 1].zero.push(id);
                }
                depths[slot.depth].accumulate.push(id);
            }
            SlotKind::LoopSum(l) if l.over_leaf => depths[slot.depth].leaf_pass.push(id),
            SlotKind::Product(_) => depths[slot.depth].products.push(id),
            _ => depths[slot.depth].compute.push(id),
        }
    }
    for (oi, o) in outputs.iter().enumerate() {
        depths[o.emit_depth].emit.push(oi);
    }

    let mut scan_depth = 0;
    for (d, p) in depths.iter().enumerate() {
        if !p.narrow.is_empty()
            || !p.hash_lookup.is_empty()
            || !p.compute.is_empty()
            || !p.leaf_pass.is_empty()
            || !p.products.is_empty()
            || !p.zero.is_empty()
            || !p.accumulate.is_empty()
            || !p.emit.is_empty()
        {
            scan_depth = d;
        }
    }

    Ok(MultiOutputPlan {
        group,
        node,
        order,
        order_cols,
        scan_depth,
        incoming: reg.incoming,
        outputs,
        slots: reg.slots,
        depths,
    })
}

/// Splits a term into closed atoms plus the open cluster binding the output's
/// carried key columns (when any). Minimal partial products: factors sharing
/// non-join attributes of the base relation or one incoming view are
/// dependent and evaluate together in one loop.
fn decompose_term<S: Scalar>(
    reg: &mut Registrar<S>,
    term: &crate::logical::NodeTerm<S>,
    carried: &[AttrId],
    template: &[KeyTemplate],
    out_view: ViewId,
    depth_max: usize,
) -> Result<DecomposedTerm<S>, PlanError> {
    // sources: 0 = leaf, 1+i = incoming view i
    let nsrc = 1 + reg.incoming.len();
    let mut dsu: Vec<usize> = (0..nsrc).collect();
    fn find(dsu: &mut Vec<usize>, x: usize) -> usize {
        if dsu[x] != x {
            let r = find(dsu, dsu[x]);
            dsu[x] = r;
        }
        dsu[x]
    }

    struct Piece<S: Scalar> {
        sources: Vec<usize>,
        factor: Option<PlanFactor<S>>,
        view_agg: Option<(usize, usize)>,
    }
    let mut pieces: Vec<Piece<S>> = Vec::new();
    let mut simples: Vec<Atom<S>> = Vec::new();
    let mut term_views: Vec<usize> = Vec::new();

    for f in &term.factors {
        match f {
            NodeFactor::Slot { view, slot } => {
                let vi = reg.in_index[view];
                if !term_views.contains(&vi) {
                    term_views.push(vi);
                }
                if reg.incoming[vi].extras.is_empty() {
                    simples.push(Atom::Lookup {
                        view: vi,
                        agg: *slot,
                    });
                } else {
                    pieces.push(Piece {
                        sources: vec![1 + vi],
                        factor: None,
                        view_agg: Some((vi, *slot)),
                    });
                }
            }
            NodeFactor::Base(b) => {
                // multiplying by one is a no-op; the base multiplicity atom
                // covers pure count terms
                if matches!(b, UdafFactor::Constant(c) if *c == S::one()) {
                    continue;
                }
                let attrs = b.attrs();
                let mut srcs = Vec::with_capacity(attrs.len());
                let mut sources: Vec<usize> = Vec::new();
                for &a in &attrs {
                    if let Some(p) = reg.order_pos(a) {
                        srcs.push(AttrSource::Order(p));
                    } else if let Some(c) = reg.leaf_col(a) {
                        srcs.push(AttrSource::LeafCol(c));
                        sources.push(0);
                    } else {
                        let mut found = None;
                        for (vi, iv) in reg.incoming.iter().enumerate() {
                            if let Some((_, col)) = iv.extras.iter().find(|(x, _)| *x == a) {
                                found = Some((vi, *col));
                                break;
                            }
                        }
                        let (vi, col) =
                            found.ok_or(PlanError::MissingKeySource(out_view, a))?;
                        srcs.push(AttrSource::ViewCol { view: vi, col });
                        sources.push(1 + vi);
                    }
                }
                sources.sort_unstable();
                sources.dedup();
                let pf = PlanFactor {
                    factor: b.clone(),
                    srcs,
                };
                if sources.is_empty() {
                    simples.push(Atom::Simple(pf));
                } else {
                    pieces.push(Piece {
                        sources,
                        factor: Some(pf),
                        view_agg: None,
                    });
                }
            }
        }
    }

    // This term's providers for the output's carried key attributes.
    let mut key_views: Vec<usize> = Vec::new();
    let mut carried_src: HashMap<AttrId, (usize, usize)> = HashMap::new();
    for &a in carried {
        let mut found = None;
        for &vi in &term_views {
            if let Some((_, col)) = reg.incoming[vi].extras.iter().find(|(x, _)| *x == a) {
                found = Some((vi, *col));
                break;
            }
        }
        let (vi, col) = found.ok_or(PlanError::MissingKeySource(out_view, a))?;
        carried_src.insert(a, (vi, col));
        if !key_views.contains(&vi) {
            key_views.push(vi);
        }
    }
    let key_srcs: Vec<OutputKeySrc> = template
        .iter()
        .map(|t| match t {
            KeyTemplate::Order(p) => OutputKeySrc::Order(*p),
            KeyTemplate::Carried(a) => {
                let (vi, col) = carried_src[a];
                OutputKeySrc::ViewCol { view: vi, col }
            }
        })
        .collect();

    for p in &pieces {
        for w in &p.sources[1..] {
            let (ra, rb) = (find(&mut dsu, p.sources[0]), find(&mut dsu, *w));
            if ra != rb {
                dsu[ra] = rb;
            }
        }
    }
    // bind all key views into one cluster so a single emission loop fixes
    // every carried key column
    if key_views.len() > 1 {
        for w in &key_views[1..] {
            let (ra, rb) = (find(&mut dsu, 1 + key_views[0]), find(&mut dsu, 1 + *w));
            if ra != rb {
                dsu[ra] = rb;
            }
        }
    }

    let mut clusters: HashMap<usize, ClusterAtom<S>> = HashMap::new();
    for p in pieces {
        let root = find(&mut dsu, p.sources[0]);
        let c = clusters.entry(root).or_insert_with(|| ClusterAtom {
            over_leaf: false,
            views: Vec::new(),
            factors: Vec::new(),
            view_aggs: Vec::new(),
        });
        for s in &p.sources {
            if *s == 0 {
                c.over_leaf = true;
            } else if !c.views.contains(&(s - 1)) {
                c.views.push(s - 1);
            }
        }
        if let Some(f) = p.factor {
            c.factors.push(f);
        }
        if let Some(va) = p.view_agg {
            c.view_aggs.push(va);
        }
    }

    let mut atoms = simples;
    let mut open: Option<ClusterAtom<S>> = None;
    let mut roots: Vec<usize> = clusters.keys().copied().collect();
    roots.sort_unstable();
    for root in roots {
        let mut c = clusters.remove(&root).unwrap();
        c.views.sort_unstable();
        c.factors.sort_by_key(|f| f.canon());
        c.view_aggs.sort_unstable();
        let is_open = key_views.iter().any(|kv| c.views.contains(kv));
        if is_open {
            debug_assert!(open.is_none(), "key views were unioned into one cluster");
            open = Some(c);
        } else {
            atoms.push(Atom::Cluster(c));
        }
    }
    let open_depth = open
        .as_ref()
        .map(|c| cluster_depth(reg, c, depth_max))
        .unwrap_or(0)
        .max(
            key_views
                .iter()
                .map(|&kv| reg.incoming[kv].anchor)
                .max()
                .unwrap_or(0),
        );
    Ok(DecomposedTerm {
        atoms,
        open,
        key_srcs,
        open_depth,
    })
}

fn cluster_depth<S: Scalar>(reg: &Registrar<S>, c: &ClusterAtom<S>, depth_max: usize) -> usize {
    let mut d = 0;
    if c.over_leaf {
        d = depth_max;
    }
    for v in &c.views {
        d = d.max(reg.incoming[*v].anchor);
    }
    for f in &c.factors {
        for s in &f.srcs {
            if let AttrSource::Order(p) = s {
                d = d.max(p + 1);
            }
        }
    }
    d
}

fn atom_depth<S: Scalar>(reg: &Registrar<S>, a: &Atom<S>, depth_max: usize) -> usize {
    match a {
        Atom::Lookup { view, .. } => reg.incoming[*view].anchor,
        Atom::Simple(f) => f
            .srcs
            .iter()
            .map(|s| match s {
                AttrSource::Order(p) => p + 1,
                _ => 0,
            })
            .max()
            .unwrap_or(0),
        Atom::Cluster(c) => cluster_depth(reg, c, depth_max),
    }
}

/// Lays out one term over the depths: allocates atom slots, partial products
/// `p_d`, the intermediate chain `a_d` down to the emission depth, and the
/// running-sum chain `r_d` below it.
fn layout_term<S: Scalar>(
    reg: &mut Registrar<S>,
    dt: DecomposedTerm<S>,
    emit_depth: usize,
    depth_max: usize,
) -> TermSpec<S> {
    let DecomposedTerm {
        atoms,
        open,
        key_srcs,
        ..
    } = dt;
    let mut has_leaf = atoms
        .iter()
        .any(|a| matches!(a, Atom::Cluster(c) if c.over_leaf));
    if let Some(o) = &open {
        has_leaf |= o.over_leaf;
    }

    let mut by_depth: HashMap<usize, Vec<SlotId>> = HashMap::new();
    let mut max_atom_depth = 0usize;
    for a in atoms {
        let d = atom_depth(reg, &a, depth_max);
        let id = match a {
            Atom::Lookup { view, agg } => reg.alloc(SlotKind::ViewLookup { view, agg }, d),
            Atom::Simple(f) => reg.alloc(SlotKind::Simple(f), d),
            Atom::Cluster(c) => reg.alloc(
                SlotKind::LoopSum(LoopSpec {
                    over_leaf: c.over_leaf,
                    over_views: c.views,
                    factors: c.factors,
                    view_aggs: c.view_aggs,
                }),
                d,
            ),
        };
        max_atom_depth = max_atom_depth.max(d);
        by_depth.entry(d).or_default().push(id);
    }
    // Base multiplicity: every join row contributes once; covered by a leaf
    // loop when present, otherwise by the range size at the deepest point.
    if !has_leaf {
        let d = emit_depth.max(max_atom_depth);
        let id = reg.alloc(SlotKind::RangeCount, d);
        by_depth.entry(d).or_default().push(id);
        max_atom_depth = d;
    }

    let mut p: HashMap<usize, SlotId> = HashMap::new();
    let mut depths_used: Vec<usize> = by_depth.keys().copied().collect();
    depths_used.sort_unstable();
    for d in &depths_used {
        let parts = by_depth.remove(d).unwrap();
        if let Some(id) = reg.product(parts, *d) {
            p.insert(*d, id);
        }
    }

    // Intermediate chain a_d down to the emission depth.
    let mut a_cur: Option<SlotId> = None;
    for d in 0..=emit_depth.min(depth_max) {
        if let Some(&pd) = p.get(&d) {
            a_cur = match a_cur {
                None => Some(pd),
                Some(prev) => reg.product(vec![prev, pd], d),
            };
        }
    }

    // Running chain below the emission depth: r_d += p_d * r_{d+1}.
    let mut r_next: Option<SlotId> = None;
    if max_atom_depth > emit_depth {
        for d in (emit_depth + 1..=max_atom_depth).rev() {
            let mut parts: Vec<SlotId> = Vec::new();
            if let Some(&pd) = p.get(&d) {
                parts.push(pd);
            }
            if let Some(r) = r_next {
                parts.push(r);
            }
            if parts.is_empty() {
                continue;
            }
            parts.sort_unstable();
            r_next = Some(reg.alloc(SlotKind::Running(parts), d));
        }
    }

    let mut closed = Vec::new();
    if let Some(a) = a_cur {
        closed.push(a);
    }
    if let Some(r) = r_next {
        closed.push(r);
    }
    let open_spec = open.map(|c| LoopSpec {
        over_leaf: c.over_leaf,
        over_views: c.views,
        factors: c.factors,
        view_aggs: c.view_aggs,
    });
    TermSpec {
        closed,
        open: open_spec,
        key_srcs,
    }
}

/// Plans every group of the optimized batch, in group order.
pub fn plan_batch<S: Scalar>(
    opt: &OptimizedBatch<S>,
    catalog: &Catalog,
    domain_sizes: &HashMap<AttrId, usize>,
) -> Result<Vec<MultiOutputPlan<S>>, PlanError> {
    (0..opt.graph.groups.len())
        .map(|gi| register(opt, GroupId(gi as u32), catalog, domain_sizes))
        .collect()
}

/// Deterministic nested-loop rendering of a plan with slot numbers.
pub fn explain_plan<S: Scalar>(
    plan: &MultiOutputPlan<S>,
    opt: &OptimizedBatch<S>,
    batch: &[AggregateQuery<S>],
    catalog: &Catalog,
) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    let g = &opt.graph.groups[plan.group.0 as usize];
    writeln!(
        out,
        "group G{} @ {} (level {})",
        plan.group.0,
        catalog.rel_name(plan.node),
        g.level
    )
    .unwrap();
    let order_names: Vec<&str> = plan.order.iter().map(|&a| catalog.attr_name(a)).collect();
    writeln!(out, "order: [{}]", order_names.join(", ")).unwrap();
    for iv in &plan.incoming {
        let label = crate::logical::view_label(opt.view(iv.view), batch, catalog);
        let keys: Vec<&str> = iv.keys.iter().map(|(a, _)| catalog.attr_name(*a)).collect();
        let extras: Vec<&str> = iv
            .extras
            .iter()
            .map(|(a, _)| catalog.attr_name(*a))
            .collect();
        writeln!(
            out,
            "incoming {} keys({}) extras({}) anchor={} {}",
            label,
            keys.join(","),
            extras.join(","),
            iv.anchor,
            if iv.sorted_compatible { "sorted" } else { "hashed" }
        )
        .unwrap();
    }

    let fmt_slot_ref = |id: &SlotId| format!("a{}", id.0);
    let fmt_loop = |l: &LoopSpec<S>| {
        let mut srcs = Vec::new();
        if l.over_leaf {
            srcs.push("rows".to_string());
        }
        for v in &l.over_views {
            srcs.push(crate::logical::view_label(
                opt.view(plan.incoming[*v].view),
                batch,
                catalog,
            ));
        }
        let mut body: Vec<String> = l
            .factors
            .iter()
            .map(|f| crate::logical::render_udaf(&f.factor, catalog))
            .collect();
        for (v, agg) in &l.view_aggs {
            body.push(format!(
                "{}.s{}",
                crate::logical::view_label(opt.view(plan.incoming[*v].view), batch, catalog),
                agg
            ));
        }
        if body.is_empty() {
            body.push("1".to_string());
        }
        format!("sum over {} of {}", srcs.join(" x "), body.join("*"))
    };

    for d in 0..=plan.scan_depth {
        let indent = "  ".repeat(d + 1);
        if d > 0 {
            writeln!(
                out,
                "{}foreach {}:",
                "  ".repeat(d),
                catalog.attr_name(plan.order[d - 1])
            )
            .unwrap();
        }
        let prog = &plan.depths[d];
        for (vi, col) in &prog.narrow {
            writeln!(
                out,
                "{indent}narrow {} by col{}",
                crate::logical::view_label(opt.view(plan.incoming[*vi].view), batch, catalog),
                col
            )
            .unwrap();
        }
        for vi in &prog.hash_lookup {
            writeln!(
                out,
                "{indent}lookup {} (hash)",
                crate::logical::view_label(opt.view(plan.incoming[*vi].view), batch, catalog)
            )
            .unwrap();
        }
        for id in &prog.compute {
            let s = &plan.slots[id.0 as usize];
            let rhs = match &s.kind {
                SlotKind::ViewLookup { view, agg } => format!(
                    "{}.s{}",
                    crate::logical::view_label(
                        opt.view(plan.incoming[*view].view),
                        batch,
                        catalog
                    ),
                    agg
                ),
                SlotKind::Simple(f) => crate::logical::render_udaf(&f.factor, catalog),
                SlotKind::RangeCount => "|range|".to_string(),
                SlotKind::LoopSum(l) => fmt_loop(l),
                SlotKind::Product(parts) => parts
                    .iter()
                    .map(fmt_slot_ref)
                    .collect::<Vec<_>>()
                    .join("*"),
                SlotKind::Running(_) => unreachable!(),
            };
            writeln!(out, "{indent}a{} = {}", id.0, rhs).unwrap();
        }
        for id in &prog.leaf_pass {
            if let SlotKind::LoopSum(l) = &plan.slots[id.0 as usize].kind {
                writeln!(out, "{indent}a{} = {}", id.0, fmt_loop(l)).unwrap();
            }
        }
        for id in &prog.products {
            if let SlotKind::Product(parts) = &plan.slots[id.0 as usize].kind {
                writeln!(
                    out,
                    "{indent}a{} = {}",
                    id.0,
                    parts.iter().map(fmt_slot_ref).collect::<Vec<_>>().join("*")
                )
                .unwrap();
            }
        }
        for id in &prog.zero {
            writeln!(out, "{indent}a{} = 0", id.0).unwrap();
        }
        for id in &prog.accumulate {
            if let SlotKind::Running(parts) = &plan.slots[id.0 as usize].kind {
                writeln!(
                    out,
                    "{indent}on exit: a{} += {}",
                    id.0,
                    parts.iter().map(fmt_slot_ref).collect::<Vec<_>>().join("*")
                )
                .unwrap();
            }
        }
        for oi in &prog.emit {
            let o = &plan.outputs[*oi];
            let label = crate::logical::view_label(opt.view(o.view), batch, catalog);
            let keys: Vec<&str> = o.key_attrs.iter().map(|&a| catalog.attr_name(a)).collect();
            let mut exprs = Vec::new();
            for terms in &o.exprs {
                let ts: Vec<String> = terms
                    .iter()
                    .map(|t| {
                        let mut s = t
                            .closed
                            .iter()
                            .map(fmt_slot_ref)
                            .collect::<Vec<_>>()
                            .join("*");
                        if let Some(open) = &t.open {
                            if !s.is_empty() {
                                s.push('*');
                            }
                            s.push_str(&format!("({})", fmt_loop(open)));
                        }
                        if s.is_empty() {
                            s.push('1');
                        }
                        s
                    })
                    .collect();
                exprs.push(ts.join(" + "));
            }
            writeln!(
                out,
                "{indent}on exit: emit {}[{}] {} [{}]",
                label,
                keys.join(","),
                match o.container {
                    Container::Appendable => "append",
                    Container::Keyed => "keyed",
                },
                exprs.join(" ; ")
            )
            .unwrap();
        }
    }
    out
}
