//! Seeded random database generation and the independent oracles used by the
//! property tests: normal equations over the materialized join, exhaustive
//! spanning-tree search, and a row-level CART.
//!
//! Key domains are small integer ranges so joins stay dense and group-by
//! outputs non-trivial; continuous values are integer- or half-integer valued
//! so both evaluation paths produce bit-identical sufficient statistics.

use crate::apps::tree::{
    select_split, CandidateStats, CartConfig, DecisionTree, FeatKind, FeatureSplits, LabelKind,
    Prediction, SplitCut, Stats, TreeNode,
};
use crate::catalog::{AttrId, AttrKind, Catalog, JoinTree, RelId};
use crate::exec::{DbResolver, JoinRows};
use crate::query::KeyResolver;
use crate::storage::{Column, Database};
use crate::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DbPattern {
    /// Relation 0 joined to every other relation.
    Star,
    /// A path of relations.
    Chain,
    /// Random tree shape.
    Tree,
}

#[derive(Debug, Clone)]
pub struct RandomDbSpec {
    pub relations: usize,
    pub fact_rows: usize,
    pub dim_rows_per_key: f64,
    /// Non-key attributes per relation.
    pub extra_attrs: usize,
    pub categorical_fraction: f64,
    pub pattern: DbPattern,
    pub key_domain: usize,
    pub seed: u64,
}

impl Default for RandomDbSpec {
    fn default() -> Self {
        RandomDbSpec {
            relations: 3,
            fact_rows: 200,
            dim_rows_per_key: 1.2,
            extra_attrs: 2,
            categorical_fraction: 0.4,
            pattern: DbPattern::Star,
            key_domain: 20,
            seed: 0,
        }
    }
}

#[derive(Debug)]
pub struct GeneratedDb<S> {
    pub catalog: Catalog,
    pub tree: JoinTree,
    pub db: Database<S>,
    /// Non-key continuous attributes.
    pub continuous: Vec<AttrId>,
    /// Categorical attributes.
    pub categorical: Vec<AttrId>,
    /// Join-key attributes.
    pub keys: Vec<AttrId>,
}

/// Deterministic random acyclic database: schema, validated join tree, and
/// loaded tables.
pub fn generate_db<S: Scalar>(spec: &RandomDbSpec) -> GeneratedDb<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let m = spec.relations.max(1);

    // tree shape: parent[i] for i >= 1
    let parents: Vec<usize> = (1..m)
        .map(|i| match spec.pattern {
            DbPattern::Star => 0,
            DbPattern::Chain => i - 1,
            DbPattern::Tree => rng.gen_range(0..i),
        })
        .collect();

    // schema: key attribute per edge, extra attributes per relation
    let mut catalog = Catalog::new();
    let mut rel_attrs: Vec<Vec<String>> = vec![Vec::new(); m];
    for (i, &p) in parents.iter().enumerate() {
        let key = format!("k{}", i);
        rel_attrs[i + 1].push(key.clone());
        rel_attrs[p].push(key);
    }
    let mut continuous_names: Vec<String> = Vec::new();
    let mut categorical_names: Vec<String> = Vec::new();
    for (r, attrs) in rel_attrs.iter_mut().enumerate() {
        for x in 0..spec.extra_attrs {
            let name = format!("r{r}a{x}");
            if rng.gen_bool(spec.categorical_fraction) {
                categorical_names.push(name.clone());
            } else {
                continuous_names.push(name.clone());
            }
            attrs.push(name);
        }
    }
    let mut rels: Vec<RelId> = Vec::new();
    for (r, attrs) in rel_attrs.iter().enumerate() {
        let refs: Vec<&str> = attrs.iter().map(String::as_str).collect();
        rels.push(catalog.add_relation(&format!("R{r}"), &refs).unwrap());
    }
    for c in &categorical_names {
        catalog.set_categorical(c).unwrap();
    }
    let edges: Vec<(RelId, RelId)> = parents
        .iter()
        .enumerate()
        .map(|(i, &p)| (rels[i + 1], rels[p]))
        .collect();
    let tree = crate::catalog::validate_join_tree(&catalog, &JoinTree::new(rels.clone(), edges))
        .expect("generated schema is acyclic by construction");

    // data
    let mut db: Database<S> = Database::new();
    let cat_card = 5usize;
    for (r, attrs) in rel_attrs.iter().enumerate() {
        let nrows = if r == 0 {
            spec.fact_rows
        } else {
            // roughly dim_rows_per_key rows per key value, some keys absent
            let mut n = 0usize;
            for _ in 0..spec.key_domain {
                if rng.gen_bool(0.9) {
                    n += 1;
                    if rng.gen_bool((spec.dim_rows_per_key - 1.0).clamp(0.0, 1.0)) {
                        n += 1;
                    }
                }
            }
            n.max(1)
        };
        // pre-draw per-key presence for dimension key columns
        let mut columns: Vec<Column<S>> = Vec::new();
        let mut key_col_values: HashMap<usize, Vec<i64>> = HashMap::new();
        if r > 0 {
            // first attr is the key to the parent; build its rows
            let mut vals = Vec::new();
            for key in 0..spec.key_domain as i64 {
                if rng.gen_bool(0.9) {
                    vals.push(key);
                    if rng.gen_bool((spec.dim_rows_per_key - 1.0).clamp(0.0, 1.0)) {
                        vals.push(key);
                    }
                }
            }
            if vals.is_empty() {
                vals.push(0);
            }
            key_col_values.insert(0, vals);
        }
        let nrows = if r > 0 {
            key_col_values[&0].len()
        } else {
            nrows
        };
        for (ci, name) in attrs.iter().enumerate() {
            let attr = catalog.attr(name).unwrap();
            let kind = catalog.attr_info(attr).kind;
            if name.starts_with('k') {
                let vals: Vec<i64> = if let Some(v) = key_col_values.get(&ci) {
                    v.clone()
                } else {
                    (0..nrows)
                        .map(|_| rng.gen_range(0..spec.key_domain as i64))
                        .collect()
                };
                columns.push(Column::Int(vals));
            } else if kind == AttrKind::Categorical {
                let dict = db.dicts.entry(attr).or_default();
                let vals: Vec<u32> = (0..nrows)
                    .map(|_| dict.encode(&format!("c{}", rng.gen_range(0..cat_card))))
                    .collect();
                columns.push(Column::Cat(vals));
            } else if rng.gen_bool(0.5) {
                // half-integer float column; exact in binary floating point
                let vals: Vec<S> = (0..nrows)
                    .map(|_| S::from_f64(rng.gen_range(0..40) as f64 * 0.5).unwrap())
                    .collect();
                columns.push(Column::Float(vals));
            } else {
                let vals: Vec<i64> = (0..nrows).map(|_| rng.gen_range(0..20)).collect();
                columns.push(Column::Int(vals));
            }
        }
        let attr_ids: Vec<AttrId> = attrs.iter().map(|n| catalog.attr(n).unwrap()).collect();
        db.from_columns(rels[r], attr_ids, columns);
    }

    let continuous = continuous_names
        .iter()
        .map(|n| catalog.attr(n).unwrap())
        .collect();
    let categorical = categorical_names
        .iter()
        .map(|n| catalog.attr(n).unwrap())
        .collect();
    let keys = (0..m.saturating_sub(1))
        .map(|i| catalog.attr(&format!("k{i}")).unwrap())
        .collect();
    GeneratedDb {
        catalog,
        tree,
        db,
        continuous,
        categorical,
        keys,
    }
}

/// Favorita-shaped synthetic instance: the six-relation schema of
/// [`crate::catalog::favorita_catalog`] with `fact_rows` Sales rows.
pub fn favorita_synthetic<S: Scalar>(
    fact_rows: usize,
    seed: u64,
) -> (Catalog, JoinTree, Database<S>) {
    let (catalog, tree) = crate::catalog::favorita_catalog();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut db: Database<S> = Database::new();
    let (dates, stores, items) = (120i64, 40i64, 200i64);
    let rel = |n: &str| catalog.relation(n).unwrap();
    let attr = |n: &str| catalog.attr(n).unwrap();
    fn cat<S: Scalar>(db: &mut Database<S>, id: AttrId, v: String) -> u32 {
        db.dicts.entry(id).or_default().encode(&v)
    }

    // Sales(date, store, item, units, promo)
    let mut s_cols: Vec<Vec<i64>> = vec![Vec::new(); 5];
    for _ in 0..fact_rows {
        s_cols[0].push(rng.gen_range(0..dates));
        s_cols[1].push(rng.gen_range(0..stores));
        s_cols[2].push(rng.gen_range(0..items));
        s_cols[3].push(rng.gen_range(0..30));
        s_cols[4].push(rng.gen_range(0..2));
    }
    db.from_columns(
        rel("Sales"),
        ["date", "store", "item", "units", "promo"].iter().map(|n| attr(n)).collect(),
        s_cols.into_iter().map(Column::Int).collect(),
    );

    // Holidays(date, htype, locale, transferred)
    let mut h_date = Vec::new();
    let mut h_type = Vec::new();
    let mut h_loc = Vec::new();
    let mut h_tr = Vec::new();
    for d in 0..dates {
        h_date.push(d);
        h_type.push(cat(&mut db, attr("htype"), format!("t{}", rng.gen_range(0..4))));
        h_loc.push(cat(&mut db, attr("locale"), format!("l{}", rng.gen_range(0..3))));
        h_tr.push(rng.gen_range(0..2));
    }
    db.from_columns(
        rel("Holidays"),
        ["date", "htype", "locale", "transferred"].iter().map(|n| attr(n)).collect(),
        vec![
            Column::Int(h_date),
            Column::Cat(h_type),
            Column::Cat(h_loc),
            Column::Int(h_tr),
        ],
    );

    // Stores(store, city, state, stype, cluster)
    let mut r_cols: (Vec<i64>, Vec<u32>, Vec<u32>, Vec<u32>, Vec<i64>) = Default::default();
    for s in 0..stores {
        r_cols.0.push(s);
        r_cols.1.push(cat(&mut db, attr("city"), format!("city{}", rng.gen_range(0..12))));
        r_cols.2.push(cat(&mut db, attr("state"), format!("st{}", rng.gen_range(0..6))));
        r_cols.3.push(cat(&mut db, attr("stype"), format!("ty{}", rng.gen_range(0..4))));
        r_cols.4.push(rng.gen_range(1..18));
    }
    db.from_columns(
        rel("Stores"),
        ["store", "city", "state", "stype", "cluster"].iter().map(|n| attr(n)).collect(),
        vec![
            Column::Int(r_cols.0),
            Column::Cat(r_cols.1),
            Column::Cat(r_cols.2),
            Column::Cat(r_cols.3),
            Column::Int(r_cols.4),
        ],
    );

    // Items(item, family, class, perishable)
    let mut i_cols: (Vec<i64>, Vec<u32>, Vec<i64>, Vec<i64>) = Default::default();
    for i in 0..items {
        i_cols.0.push(i);
        i_cols.1.push(cat(&mut db, attr("family"), format!("fam{}", rng.gen_range(0..25))));
        i_cols.2.push(rng.gen_range(0..30));
        i_cols.3.push(rng.gen_range(0..2));
    }
    db.from_columns(
        rel("Items"),
        ["item", "family", "class", "perishable"].iter().map(|n| attr(n)).collect(),
        vec![
            Column::Int(i_cols.0),
            Column::Cat(i_cols.1),
            Column::Int(i_cols.2),
            Column::Int(i_cols.3),
        ],
    );

    // Transactions(date, store, txns): every (date, store) pair
    let mut t_cols: (Vec<i64>, Vec<i64>, Vec<i64>) = Default::default();
    for d in 0..dates {
        for s in 0..stores {
            t_cols.0.push(d);
            t_cols.1.push(s);
            t_cols.2.push(rng.gen_range(50..500));
        }
    }
    db.from_columns(
        rel("Transactions"),
        ["date", "store", "txns"].iter().map(|n| attr(n)).collect(),
        vec![
            Column::Int(t_cols.0),
            Column::Int(t_cols.1),
            Column::Int(t_cols.2),
        ],
    );

    // Oil(date, price): half-integer float prices
    let mut o_cols: (Vec<i64>, Vec<S>) = Default::default();
    for d in 0..dates {
        o_cols.0.push(d);
        o_cols
            .1
            .push(S::from_f64(rng.gen_range(60..200) as f64 * 0.5).unwrap());
    }
    db.from_columns(
        rel("Oil"),
        ["date", "price"].iter().map(|n| attr(n)).collect(),
        vec![Column::Int(o_cols.0), Column::Float(o_cols.1)],
    );

    (catalog, tree, db)
}

/// Writes a config file and one CSV per relation (decoded values), so a
/// generated database can be reloaded through the CLI.
pub fn write_db_csvs<S: Scalar>(
    catalog: &Catalog,
    tree: &JoinTree,
    db: &Database<S>,
    dir: &std::path::Path,
) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut cfg = String::new();
    for rel in catalog.relations() {
        let names: Vec<&str> = rel.attrs.iter().map(|&a| catalog.attr_name(a)).collect();
        cfg.push_str(&format!("relation {}: {}\n", rel.name, names.join(",")));
    }
    let cats: Vec<&str> = catalog
        .attr_ids()
        .filter(|&a| catalog.attr_info(a).kind == AttrKind::Categorical)
        .map(|a| catalog.attr_name(a))
        .collect();
    if !cats.is_empty() {
        cfg.push_str(&format!("categorical: {}\n", cats.join(",")));
    }
    for &(a, b) in &tree.edges {
        cfg.push_str(&format!("edge {} {}\n", catalog.rel_name(a), catalog.rel_name(b)));
    }
    std::fs::write(dir.join("schema.cfg"), cfg)?;
    for (&rel, table) in &db.tables {
        let mut text = String::new();
        for row in 0..table.row_count {
            let cells: Vec<String> = table
                .columns
                .iter()
                .zip(&table.attrs)
                .map(|(col, &attr)| match col {
                    Column::Int(v) => v[row].to_string(),
                    Column::Float(v) => format!("{}", v[row]),
                    Column::Cat(v) => db
                        .dict(attr)
                        .map(|d| d.decode(v[row]).to_string())
                        .unwrap_or_else(|| v[row].to_string()),
                })
                .collect();
            text.push_str(&cells.join(","));
            text.push('\n');
        }
        std::fs::write(dir.join(format!("{}.csv", catalog.rel_name(rel))), text)?;
    }
    Ok(())
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
pub fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in 0..n {
            if row == col {
                continue;
            }
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

/// Closed-form ridge solution from a materialized join: builds the covar
/// matrix directly row by row, then solves the normal equations
/// `(Sigma_ff/|D| + lambda I) theta = Sigma_f,label / |D|`.
pub fn normal_equation_theta(
    join: &JoinRows,
    features: &[AttrId],
    label: AttrId,
    lambda: f64,
    decoders: &HashMap<AttrId, bool>, // true = float column
) -> Option<Vec<f64>> {
    let n = features.len();
    let value = |attr: AttrId, row: usize| -> f64 {
        let key = join.col(attr).unwrap()[row];
        if decoders.get(&attr).copied().unwrap_or(false) {
            crate::decode_key(key)
        } else {
            key as f64
        }
    };
    let count = join.rows as f64;
    if count < 1.0 {
        return None;
    }
    // item 0 is the intercept
    let item = |i: usize, row: usize| -> f64 {
        if i == 0 {
            1.0
        } else {
            value(features[i - 1], row)
        }
    };
    let dim = n + 1;
    let mut sigma = vec![vec![0.0; dim]; dim];
    let mut rhs = vec![0.0; dim];
    for r in 0..join.rows {
        for j in 0..dim {
            let xj = item(j, r);
            for k in j..dim {
                let v = xj * item(k, r);
                sigma[j][k] += v;
                if j != k {
                    sigma[k][j] += v;
                }
            }
            rhs[j] += xj * value(label, r);
        }
    }
    for j in 0..dim {
        for k in 0..dim {
            sigma[j][k] /= count;
        }
        rhs[j] /= count;
        sigma[j][j] += lambda;
    }
    solve_linear(sigma, rhs)
}

/// All spanning trees of the complete graph on n nodes, via Prufer
/// sequences. n <= 6 keeps this tiny.
pub fn all_spanning_trees(n: usize) -> Vec<Vec<(usize, usize)>> {
    if n == 1 {
        return vec![vec![]];
    }
    if n == 2 {
        return vec![vec![(0, 1)]];
    }
    let mut out = Vec::new();
    let len = n - 2;
    let mut seq = vec![0usize; len];
    loop {
        out.push(prufer_to_tree(&seq, n));
        // increment the sequence
        let mut i = 0;
        loop {
            if i == len {
                return out;
            }
            seq[i] += 1;
            if seq[i] < n {
                break;
            }
            seq[i] = 0;
            i += 1;
        }
    }
}

fn prufer_to_tree(seq: &[usize], n: usize) -> Vec<(usize, usize)> {
    let mut degree = vec![1usize; n];
    for &s in seq {
        degree[s] += 1;
    }
    let mut edges = Vec::with_capacity(n - 1);
    let mut used = vec![false; n];
    for &s in seq {
        let leaf = (0..n).find(|&v| degree[v] == 1 && !used[v]).unwrap();
        edges.push((leaf.min(s), leaf.max(s)));
        used[leaf] = true;
        degree[s] -= 1;
    }
    let rest: Vec<usize> = (0..n).filter(|&v| !used[v] && degree[v] >= 1).collect();
    edges.push((rest[0].min(rest[1]), rest[0].max(rest[1])));
    edges
}

/// Row-level CART over the materialized join: identical buckets, costs, and
/// tie-breaks as the engine path, but statistics computed by direct row
/// partitioning.
pub fn oracle_cart<S: Scalar>(
    join: &JoinRows,
    catalog: &Catalog,
    db: &Database<S>,
    features: &[FeatureSplits],
    config: &CartConfig,
) -> DecisionTree<S> {
    let label_kind = match catalog.attr_info(config.label).kind {
        AttrKind::Continuous => LabelKind::Rt,
        AttrKind::Categorical => LabelKind::Ct(db.dict(config.label).map(|d| d.len()).unwrap_or(0)),
    };
    let resolver = DbResolver { db };
    let label_col = join.col(config.label).expect("label in join");
    let label_is_float = db
        .tables
        .values()
        .find_map(|t| t.column(config.label))
        .map(|c| matches!(c, Column::Float(_)))
        .unwrap_or(false);
    let label_value = |row: usize| -> S {
        let key = label_col[row];
        if label_is_float {
            S::from_f64(crate::decode_key(key)).unwrap()
        } else {
            S::from_i64(key).unwrap()
        }
    };
    let stats_of = |rows: &[u32]| -> Stats<S> {
        match label_kind {
            LabelKind::Rt => {
                let mut count = S::zero();
                let mut sum = S::zero();
                let mut sumsq = S::zero();
                for &r in rows {
                    let y = label_value(r as usize);
                    count += S::one();
                    sum += y;
                    sumsq += y * y;
                }
                Stats::Rt { count, sum, sumsq }
            }
            LabelKind::Ct(p) => {
                let mut counts = vec![S::zero(); p];
                for &r in rows {
                    counts[label_col[r as usize] as usize] += S::one();
                }
                Stats::Ct(counts)
            }
        }
    };

    // per-feature key thresholds
    let thresholds: Vec<Vec<i64>> = features
        .iter()
        .map(|f| match &f.kind {
            FeatKind::Continuous { thresholds } => thresholds
                .iter()
                .map(|t| resolver.literal_key(f.attr, t))
                .collect(),
            FeatKind::Categorical => Vec::new(),
        })
        .collect();

    fn grow<S: Scalar>(
        join: &JoinRows,
        features: &[FeatureSplits],
        thresholds: &[Vec<i64>],
        config: &CartConfig,
        stats_of: &dyn Fn(&[u32]) -> Stats<S>,
        rows: Vec<u32>,
        stats: Stats<S>,
        depth: usize,
    ) -> TreeNode<S> {
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
            return leaf;
        }
        let mut cands: Vec<CandidateStats<S>> = Vec::new();
        for (fi, f) in features.iter().enumerate() {
            let col = join.col(f.attr).expect("feature in join");
            match &f.kind {
                FeatKind::Continuous { .. } => {
                    for (ti, &t) in thresholds[fi].iter().enumerate() {
                        let yes_rows: Vec<u32> = rows
                            .iter()
                            .copied()
                            .filter(|&r| col[r as usize] <= t)
                            .collect();
                        cands.push(CandidateStats::Continuous {
                            feature: fi,
                            threshold: ti,
                            yes: stats_of(&yes_rows),
                        });
                    }
                }
                FeatKind::Categorical => {
                    let mut by_cat: Vec<(i64, Vec<u32>)> = Vec::new();
                    for &r in &rows {
                        let key = col[r as usize];
                        match by_cat.iter_mut().find(|(k, _)| *k == key) {
                            Some((_, v)) => v.push(r),
                            None => by_cat.push((key, vec![r])),
                        }
                    }
                    by_cat.sort_by_key(|(k, _)| *k);
                    cands.push(CandidateStats::Categorical {
                        feature: fi,
                        per_category: by_cat
                            .into_iter()
                            .map(|(k, rs)| (k, stats_of(&rs)))
                            .collect(),
                    });
                }
            }
        }
        let Some(chosen) = select_split(features, &cands, &stats, config.cost) else {
            return leaf;
        };
        if chosen.cost >= cost {
            return leaf;
        }
        let fi = features
            .iter()
            .position(|f| f.attr == chosen.attr)
            .unwrap();
        let col = join.col(features[fi].attr).unwrap();
        let (yes_rows, no_rows): (Vec<u32>, Vec<u32>) = rows.iter().partition(|&&r| {
            let key = col[r as usize];
            match &chosen.cut {
                SplitCut::Le(_) => {
                    // reuse the resolved threshold for this candidate
                    match &features[fi].kind {
                        FeatKind::Continuous { thresholds: t } => {
                            let ti = t
                                .iter()
                                .position(|l| SplitCut::Le(l.clone()) == chosen.cut)
                                .unwrap();
                            key <= thresholds[fi][ti]
                        }
                        FeatKind::Categorical => unreachable!(),
                    }
                }
                SplitCut::In(set) => set.contains(&key),
            }
        });
        let no_stats = stats.minus(&chosen.yes);
        let yes = grow(
            join, features, thresholds, config, stats_of, yes_rows, chosen.yes.clone(), depth + 1,
        );
        let no = grow(
            join, features, thresholds, config, stats_of, no_rows, no_stats, depth + 1,
        );
        TreeNode {
            count,
            cost,
            prediction,
            split: Some(crate::apps::tree::Split {
                attr: chosen.attr,
                cut: chosen.cut,
                yes: Box::new(yes),
                no: Box::new(no),
            }),
        }
    }

    let rows: Vec<u32> = (0..join.rows as u32).collect();
    let stats = stats_of(&rows);
    let root = grow(
        join,
        features,
        &thresholds,
        config,
        &stats_of,
        rows,
        stats,
        0,
    );
    DecisionTree {
        root,
        label: config.label,
        cost: config.cost,
    }
}

/// Depth and leaf count of a tree, for quick structural checks.
pub fn tree_shape<S: Scalar>(t: &TreeNode<S>) -> (usize, usize) {
    match &t.split {
        None => (0, 1),
        Some(s) => {
            let (dy, ly) = tree_shape(&s.yes);
            let (dn, ln) = tree_shape(&s.no);
            (dy.max(dn) + 1, ly + ln)
        }
    }
}

/// Mean prediction of a regression-tree leaf, when the node is a leaf.
pub fn leaf_mean<S: Scalar>(t: &TreeNode<S>) -> Option<S> {
    match (&t.split, &t.prediction) {
        (None, Prediction::Mean(m)) => Some(*m),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let spec = RandomDbSpec {
            seed: 42,
            ..Default::default()
        };
        let a: GeneratedDb<f64> = generate_db(&spec);
        let b: GeneratedDb<f64> = generate_db(&spec);
        for (&rel, ta) in &a.db.tables {
            let tb = b.db.table(rel);
            assert_eq!(ta.row_count, tb.row_count);
            for c in 0..ta.columns.len() {
                for r in 0..ta.row_count {
                    assert_eq!(ta.key_at(c, r), tb.key_at(c, r));
                }
            }
        }
    }

    #[test]
    fn star_pattern_has_depth_one_tree() {
        let spec = RandomDbSpec {
            relations: 4,
            pattern: DbPattern::Star,
            seed: 1,
            ..Default::default()
        };
        let g: GeneratedDb<f64> = generate_db(&spec);
        let center = g.tree.nodes[0];
        for &(a, b) in &g.tree.edges {
            assert!(a == center || b == center);
        }
    }

    #[test]
    fn most_seeds_produce_nonempty_joins() {
        let mut nonempty = 0;
        for seed in 0..100 {
            let spec = RandomDbSpec {
                relations: 3,
                fact_rows: 60,
                seed,
                ..Default::default()
            };
            let g: GeneratedDb<f64> = generate_db(&spec);
            let join = crate::exec::materialize_join(&g.catalog, &g.tree, &g.db);
            if join.rows > 0 {
                nonempty += 1;
            }
        }
        assert!(nonempty >= 90, "only {nonempty}/100 seeds joined");
    }

    #[test]
    fn spanning_tree_enumeration_matches_cayley() {
        assert_eq!(all_spanning_trees(2).len(), 1);
        assert_eq!(all_spanning_trees(3).len(), 3);
        assert_eq!(all_spanning_trees(4).len(), 16);
        assert_eq!(all_spanning_trees(5).len(), 125);
        // every enumerated edge set is a spanning tree
        for t in all_spanning_trees(4) {
            assert_eq!(t.len(), 3);
            let mut dsu: Vec<usize> = (0..4).collect();
            fn find(d: &mut Vec<usize>, x: usize) -> usize {
                if d[x] != x {
                    let r = find(d, d[x]);
                    d[x] = r;
                }
                d[x]
            }
            for (a, b) in t {
                let (ra, rb) = (find(&mut dsu, a), find(&mut dsu, b));
                assert_ne!(ra, rb, "cycle in enumerated tree");
                dsu[ra] = rb;
            }
        }
    }

    #[test]
    fn gaussian_solver_inverts_small_systems() {
        let a = vec![vec![2.0, 1.0], vec![1.0, 3.0]];
        let x = solve_linear(a.clone(), vec![5.0, 10.0]).unwrap();
        assert!((2.0 * x[0] + x[1] - 5.0).abs() < 1e-12);
        assert!((x[0] + 3.0 * x[1] - 10.0).abs() < 1e-12);
    }
}
