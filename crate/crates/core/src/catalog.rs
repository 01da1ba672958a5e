//! Database schemas, attribute metadata, and join-tree construction.
//!
//! The catalog is immutable after construction and safe to share across
//! threads. Attributes are global to the database (natural-join semantics):
//! two relations mentioning attribute `date` join on it.

use std::collections::{HashMap, HashSet};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AttrId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttrKind {
    Continuous,
    Categorical,
}

#[derive(Debug, Clone)]
pub struct AttributeInfo {
    pub name: String,
    pub kind: AttrKind,
    /// Count of distinct values, used for attribute ordering. Measured from
    /// loaded data when absent.
    pub domain_size_hint: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RelationSchema {
    pub name: String,
    pub attrs: Vec<AttrId>,
}

#[derive(Debug, Error, PartialEq)]
pub enum CatalogError {
    #[error("duplicate attribute `{0}` in relation `{1}`")]
    DuplicateAttribute(String, String),
    #[error("relation `{0}` has no attributes")]
    EmptyRelation(String),
    #[error("duplicate relation `{0}`")]
    DuplicateRelation(String),
    #[error("unknown relation `{0}`")]
    UnknownRelation(String),
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),
    #[error("invalid domain size hint for `{0}`: must be >= 1")]
    BadDomainHint(String),
    #[error("join tree has a cycle")]
    CyclicTree,
    #[error("join tree is disconnected")]
    DisconnectedTree,
    #[error(
        "running intersection violated: relations `{r1}` and `{r2}` share `{attr}`, \
         which is missing from `{via}` on their path"
    )]
    RunningIntersectionViolation {
        r1: String,
        r2: String,
        via: String,
        attr: String,
    },
    #[error("schemas admit no valid join tree (cyclic join hypergraph)")]
    CyclicSchema,
    #[error("config parse error at line {line}: {msg}")]
    Config { line: usize, msg: String },
}

/// Global attribute and relation registry.
#[derive(Debug, Clone, Default)]
pub struct Catalog {
    attrs: Vec<AttributeInfo>,
    attr_by_name: HashMap<String, AttrId>,
    relations: Vec<RelationSchema>,
    rel_by_name: HashMap<String, RelId>,
}

impl Catalog {
    pub fn new() -> Catalog {
        Catalog::default()
    }

    /// Registers an attribute, or returns the existing id for the name.
    pub fn add_attr(&mut self, name: &str, kind: AttrKind) -> AttrId {
        if let Some(&id) = self.attr_by_name.get(name) {
            return id;
        }
        let id = AttrId(self.attrs.len() as u32);
        self.attrs.push(AttributeInfo {
            name: name.to_string(),
            kind,
            domain_size_hint: None,
        });
        self.attr_by_name.insert(name.to_string(), id);
        id
    }

    pub fn add_relation(&mut self, name: &str, attr_names: &[&str]) -> Result<RelId, CatalogError> {
        if self.rel_by_name.contains_key(name) {
            return Err(CatalogError::DuplicateRelation(name.to_string()));
        }
        if attr_names.is_empty() {
            return Err(CatalogError::EmptyRelation(name.to_string()));
        }
        let mut seen = HashSet::new();
        let mut attrs = Vec::with_capacity(attr_names.len());
        for a in attr_names {
            if !seen.insert(*a) {
                return Err(CatalogError::DuplicateAttribute(
                    a.to_string(),
                    name.to_string(),
                ));
            }
            attrs.push(self.add_attr(a, AttrKind::Continuous));
        }
        let id = RelId(self.relations.len() as u32);
        self.relations.push(RelationSchema {
            name: name.to_string(),
            attrs,
        });
        self.rel_by_name.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn set_categorical(&mut self, attr: &str) -> Result<(), CatalogError> {
        let id = self.attr(attr)?;
        self.attrs[id.0 as usize].kind = AttrKind::Categorical;
        Ok(())
    }

    pub fn set_domain_hint(&mut self, attr: &str, hint: usize) -> Result<(), CatalogError> {
        if hint == 0 {
            return Err(CatalogError::BadDomainHint(attr.to_string()));
        }
        let id = self.attr(attr)?;
        self.attrs[id.0 as usize].domain_size_hint = Some(hint);
        Ok(())
    }

    pub fn attr(&self, name: &str) -> Result<AttrId, CatalogError> {
        self.attr_by_name
            .get(name)
            .copied()
            .ok_or_else(|| CatalogError::UnknownAttribute(name.to_string()))
    }

    pub fn relation(&self, name: &str) -> Result<RelId, CatalogError> {
        self.rel_by_name
            .get(name)
            .copied()
            .ok_or_else(|| CatalogError::UnknownRelation(name.to_string()))
    }

    pub fn attr_info(&self, id: AttrId) -> &AttributeInfo {
        &self.attrs[id.0 as usize]
    }

    pub fn attr_name(&self, id: AttrId) -> &str {
        &self.attrs[id.0 as usize].name
    }

    pub fn rel_schema(&self, id: RelId) -> &RelationSchema {
        &self.relations[id.0 as usize]
    }

    pub fn rel_name(&self, id: RelId) -> &str {
        &self.relations[id.0 as usize].name
    }

    pub fn relations(&self) -> &[RelationSchema] {
        &self.relations
    }

    pub fn num_attrs(&self) -> usize {
        self.attrs.len()
    }

    pub fn attr_ids(&self) -> impl Iterator<Item = AttrId> {
        (0..self.attrs.len() as u32).map(AttrId)
    }

    /// Attributes shared by two relations, in canonical (AttrId) order.
    pub fn shared_attrs(&self, a: RelId, b: RelId) -> Vec<AttrId> {
        let sa: HashSet<_> = self.rel_schema(a).attrs.iter().copied().collect();
        let mut out: Vec<AttrId> = self
            .rel_schema(b)
            .attrs
            .iter()
            .copied()
            .filter(|x| sa.contains(x))
            .collect();
        out.sort();
        out
    }
}

/// An undirected tree over the relations. Edges carry the natural-join keys
/// of their endpoints. Valid trees satisfy the running-intersection property.
#[derive(Debug, Clone, PartialEq)]
pub struct JoinTree {
    pub nodes: Vec<RelId>,
    /// Unordered pairs, stored with the smaller RelId first.
    pub edges: Vec<(RelId, RelId)>,
    /// Parallel to `edges`: join keys (schema intersection), canonical order.
    pub edge_keys: Vec<Vec<AttrId>>,
}

impl JoinTree {
    pub fn new(nodes: Vec<RelId>, edges: Vec<(RelId, RelId)>) -> JoinTree {
        let edges = edges
            .into_iter()
            .map(|(a, b)| if a <= b { (a, b) } else { (b, a) })
            .collect();
        JoinTree {
            nodes,
            edges,
            edge_keys: Vec::new(),
        }
    }

    pub fn neighbors(&self, n: RelId) -> Vec<RelId> {
        let mut out = Vec::new();
        for &(a, b) in &self.edges {
            if a == n {
                out.push(b);
            } else if b == n {
                out.push(a);
            }
        }
        out.sort();
        out
    }

    pub fn edge_key(&self, a: RelId, b: RelId) -> Option<&[AttrId]> {
        let pair = if a <= b { (a, b) } else { (b, a) };
        self.edges
            .iter()
            .position(|&e| e == pair)
            .map(|i| self.edge_keys[i].as_slice())
    }

    /// Orients the tree toward `root`: returns parent map (root maps to itself).
    pub fn orient(&self, root: RelId) -> HashMap<RelId, RelId> {
        let mut parent = HashMap::new();
        parent.insert(root, root);
        let mut stack = vec![root];
        while let Some(n) = stack.pop() {
            for m in self.neighbors(n) {
                if let std::collections::hash_map::Entry::Vacant(e) = parent.entry(m) {
                    e.insert(n);
                    stack.push(m);
                }
            }
        }
        parent
    }

    /// Attributes appearing anywhere in the subtree rooted at `node` when the
    /// tree is oriented toward `root`.
    pub fn subtree_attrs(&self, catalog: &Catalog, root: RelId, node: RelId) -> HashSet<AttrId> {
        let parent = self.orient(root);
        let mut out = HashSet::new();
        let mut stack = vec![node];
        while let Some(n) = stack.pop() {
            out.extend(self.rel_attrs(catalog, n));
            for m in self.neighbors(n) {
                if parent.get(&m) == Some(&n) {
                    stack.push(m);
                }
            }
        }
        out
    }

    fn rel_attrs<'a>(&self, catalog: &'a Catalog, n: RelId) -> impl Iterator<Item = AttrId> + 'a {
        catalog.rel_schema(n).attrs.iter().copied()
    }
}

/// Checks connectivity, acyclicity, and the running-intersection property,
/// and fills in the per-edge join keys.
pub fn validate_join_tree(catalog: &Catalog, tree: &JoinTree) -> Result<JoinTree, CatalogError> {
    let n = tree.nodes.len();
    let node_set: HashSet<RelId> = tree.nodes.iter().copied().collect();
    for &(a, b) in &tree.edges {
        if !node_set.contains(&a) || !node_set.contains(&b) {
            return Err(CatalogError::UnknownRelation(format!("{:?}", (a, b))));
        }
    }
    if tree.edges.len() + 1 > n {
        return Err(CatalogError::CyclicTree);
    }
    if tree.edges.len() + 1 < n {
        return Err(CatalogError::DisconnectedTree);
    }
    // |E| = |V| - 1: connected iff acyclic; check reachability.
    if n > 0 {
        let start = tree.nodes[0];
        let mut seen = HashSet::new();
        seen.insert(start);
        let mut stack = vec![start];
        while let Some(x) = stack.pop() {
            for y in tree.neighbors(x) {
                if seen.insert(y) {
                    stack.push(y);
                }
            }
        }
        if seen.len() != n {
            return Err(CatalogError::DisconnectedTree);
        }
    }

    // Running intersection: for every node pair, their shared attributes must
    // appear in every node on the path between them.
    for (i, &r1) in tree.nodes.iter().enumerate() {
        for &r2 in &tree.nodes[i + 1..] {
            let shared = catalog.shared_attrs(r1, r2);
            if shared.is_empty() {
                continue;
            }
            for via in path_between(tree, r1, r2) {
                if via == r1 || via == r2 {
                    continue;
                }
                let via_attrs: HashSet<AttrId> =
                    catalog.rel_schema(via).attrs.iter().copied().collect();
                for &a in &shared {
                    if !via_attrs.contains(&a) {
                        return Err(CatalogError::RunningIntersectionViolation {
                            r1: catalog.rel_name(r1).to_string(),
                            r2: catalog.rel_name(r2).to_string(),
                            via: catalog.rel_name(via).to_string(),
                            attr: catalog.attr_name(a).to_string(),
                        });
                    }
                }
            }
        }
    }

    let mut out = tree.clone();
    out.edge_keys = out
        .edges
        .iter()
        .map(|&(a, b)| catalog.shared_attrs(a, b))
        .collect();
    Ok(out)
}

fn path_between(tree: &JoinTree, from: RelId, to: RelId) -> Vec<RelId> {
    let parent = tree.orient(from);
    let mut path = vec![to];
    let mut cur = to;
    while cur != from {
        cur = parent[&cur];
        path.push(cur);
    }
    path.reverse();
    path
}

/// Builds some valid join tree for the schemas: maximum-weight spanning tree
/// on shared-attribute counts, then validated. Fails with `CyclicSchema` when
/// no spanning tree satisfies the running-intersection property.
pub fn infer_join_tree(catalog: &Catalog) -> Result<JoinTree, CatalogError> {
    let nodes: Vec<RelId> = catalog
        .relations()
        .iter()
        .enumerate()
        .map(|(i, _)| RelId(i as u32))
        .collect();
    if nodes.is_empty() {
        return Err(CatalogError::CyclicSchema);
    }
    // Kruskal on candidate edges sorted by decreasing shared-attribute count,
    // ties by relation names for determinism.
    let mut candidates = Vec::new();
    for (i, &a) in nodes.iter().enumerate() {
        for &b in &nodes[i + 1..] {
            let w = catalog.shared_attrs(a, b).len();
            candidates.push((w, a, b));
        }
    }
    candidates.sort_by(|x, y| {
        y.0.cmp(&x.0)
            .then_with(|| catalog.rel_name(x.1).cmp(catalog.rel_name(y.1)))
            .then_with(|| catalog.rel_name(x.2).cmp(catalog.rel_name(y.2)))
    });
    let mut dsu: Vec<usize> = (0..nodes.len()).collect();
    fn find(dsu: &mut Vec<usize>, x: usize) -> usize {
        if dsu[x] != x {
            let r = find(dsu, dsu[x]);
            dsu[x] = r;
        }
        dsu[x]
    }
    let mut edges = Vec::new();
    for (_, a, b) in candidates {
        let (ra, rb) = (find(&mut dsu, a.0 as usize), find(&mut dsu, b.0 as usize));
        if ra != rb {
            dsu[ra] = rb;
            edges.push((a, b));
        }
    }
    let tree = JoinTree::new(nodes, edges);
    validate_join_tree(catalog, &tree).map_err(|e| match e {
        CatalogError::RunningIntersectionViolation { .. } | CatalogError::DisconnectedTree => {
            CatalogError::CyclicSchema
        }
        other => other,
    })
}

/// Parses the line-oriented schema + join-tree config:
///
/// ```text
/// # comment
/// relation Sales: date,store,item,units,promo
/// categorical: item,family
/// edge Sales Transactions
/// ```
///
/// Returns the catalog and the explicit tree if any `edge` lines were given.
pub fn parse_config(text: &str) -> Result<(Catalog, Option<JoinTree>), CatalogError> {
    let mut catalog = Catalog::new();
    let mut edge_specs: Vec<(String, String)> = Vec::new();
    let mut categorical: Vec<(usize, String)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: &str| CatalogError::Config {
            line: lineno + 1,
            msg: msg.to_string(),
        };
        if let Some(rest) = line.strip_prefix("relation ") {
            let (name, attrs) = rest.split_once(':').ok_or_else(|| err("expected `:`"))?;
            let attr_names: Vec<&str> = attrs.split(',').map(str::trim).collect();
            if attr_names.iter().any(|a| a.is_empty()) {
                return Err(err("empty attribute name"));
            }
            catalog.add_relation(name.trim(), &attr_names)?;
        } else if let Some(rest) = line.strip_prefix("categorical:") {
            for a in rest.split(',').map(str::trim).filter(|a| !a.is_empty()) {
                categorical.push((lineno + 1, a.to_string()));
            }
        } else if let Some(rest) = line.strip_prefix("edge ") {
            let parts: Vec<&str> = rest.split_whitespace().collect();
            if parts.len() != 2 {
                return Err(err("expected `edge <R1> <R2>`"));
            }
            edge_specs.push((parts[0].to_string(), parts[1].to_string()));
        } else {
            return Err(err("unrecognized directive"));
        }
    }
    for (line, a) in categorical {
        catalog
            .set_categorical(&a)
            .map_err(|e| CatalogError::Config {
                line,
                msg: e.to_string(),
            })?;
    }
    let tree = if edge_specs.is_empty() {
        None
    } else {
        let mut edges = Vec::new();
        for (a, b) in edge_specs {
            edges.push((catalog.relation(&a)?, catalog.relation(&b)?));
        }
        let nodes = (0..catalog.relations().len() as u32).map(RelId).collect();
        Some(JoinTree::new(nodes, edges))
    };
    Ok((catalog, tree))
}

/// The Favorita-shaped six-relation schema used in examples and benchmarks.
pub fn favorita_catalog() -> (Catalog, JoinTree) {
    let text = "\
relation Sales: date,store,item,units,promo
relation Holidays: date,htype,locale,transferred
relation Stores: store,city,state,stype,cluster
relation Items: item,family,class,perishable
relation Transactions: date,store,txns
relation Oil: date,price
categorical: htype,locale,city,state,stype,family
edge Sales Transactions
edge Transactions Stores
edge Transactions Oil
edge Sales Holidays
edge Sales Items
";
    let (catalog, tree) = parse_config(text).expect("static config");
    let tree = validate_join_tree(&catalog, &tree.expect("edges given")).expect("static tree");
    (catalog, tree)
}
