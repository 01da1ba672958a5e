//! Application-level integration tests: every batch generator against the
//! brute-force oracle, analytic mutual-information cases, the gradient
//! rewrite identity, and CART against the row-level oracle.

use aggforge_core::apps::covar::{covar_batch, gradient_from_covar, linreg, BgdConfig, Feature};
use aggforge_core::apps::cube::{data_cube_batch, render_1nf};
use aggforge_core::apps::mi::{chow_liu, mi_matrix, mutual_information_batch, tree_total_mi};
use aggforge_core::apps::regression::poly_regression_batch;
use aggforge_core::apps::tree::{
    cart_train, CartConfig, CostKind, Prediction, SplitCut,
};
use aggforge_core::catalog::{validate_join_tree, AttrId, Catalog, JoinTree};
use aggforge_core::exec::{
    brute_force_oracle, materialize_join, run_batch, tables_match, ResultTable,
};
use aggforge_core::query::{AggregateQuery, FunctionRegistry};
use aggforge_core::storage::{Column, Database};
use aggforge_core::testkit::{
    all_spanning_trees, generate_db, oracle_cart, tree_shape, GeneratedDb, RandomDbSpec,
};
use std::sync::Arc;

type Reg = FunctionRegistry<f64>;

fn check_batch_against_oracle(g: &GeneratedDb<f64>, batch: Vec<AggregateQuery<f64>>, what: &str) {
    let reg: Reg = FunctionRegistry::new();
    let oracle = brute_force_oracle(&batch, &g.catalog, &g.tree, &g.db, &reg);
    let out = run_batch(batch, &g.catalog, &g.tree, &g.db, &reg, 1).unwrap();
    for (qi, o) in oracle.iter().enumerate() {
        assert!(
            tables_match(&out[qi], o, 1e-9),
            "{what}: query {qi} diverges from the oracle"
        );
    }
}

#[test]
fn covar_batch_matches_oracle_on_random_dbs() {
    for seed in 0..5 {
        let g: GeneratedDb<f64> = generate_db(&RandomDbSpec {
            seed,
            ..Default::default()
        });
        let mut items: Vec<Feature> = vec![Feature::Intercept];
        items.extend(g.continuous.iter().take(2).map(|&a| Feature::Attr(a)));
        items.extend(g.categorical.iter().take(1).map(|&a| Feature::Attr(a)));
        let label = Feature::Attr(*g.continuous.last().expect("a continuous attr"));
        let b = covar_batch::<f64>(&g.catalog, &items, label);
        check_batch_against_oracle(&g, b.queries, "covar");
    }
}

#[test]
fn poly_batch_matches_oracle() {
    for seed in [7, 8] {
        let g: GeneratedDb<f64> = generate_db(&RandomDbSpec {
            seed,
            extra_attrs: 2,
            categorical_fraction: 0.3,
            ..Default::default()
        });
        let feats: Vec<AttrId> = g.continuous.iter().take(2).copied().collect();
        if feats.len() < 2 {
            continue;
        }
        let b = poly_regression_batch::<f64>(&g.catalog, &feats, 2);
        check_batch_against_oracle(&g, b.queries, "poly");
    }
}

#[test]
fn cube_batch_matches_oracle_and_renders_all_sentinel() {
    let g: GeneratedDb<f64> = generate_db(&RandomDbSpec {
        seed: 3,
        extra_attrs: 3,
        categorical_fraction: 0.5,
        ..Default::default()
    });
    let dims: Vec<AttrId> = g
        .categorical
        .iter()
        .chain(g.keys.iter())
        .take(3)
        .copied()
        .collect();
    let measures: Vec<AttrId> = g.continuous.iter().take(2).copied().collect();
    if dims.len() < 2 || measures.is_empty() {
        panic!("generator did not produce enough attributes for the cube test");
    }
    let b = data_cube_batch::<f64>(&dims, &measures);
    let reg: Reg = FunctionRegistry::new();
    let out = run_batch(b.queries.clone(), &g.catalog, &g.tree, &g.db, &reg, 1).unwrap();
    check_batch_against_oracle(&g, b.queries.clone(), "cube");
    let text = render_1nf(&b, &out, &g.catalog, &g.db);
    assert!(text.lines().count() > 1);
    assert!(text.contains("ALL"));
}

fn single_relation_db(rows: &[(i64, i64)]) -> (Catalog, JoinTree, Database<f64>) {
    let mut c = Catalog::new();
    let r = c.add_relation("R", &["x", "y"]).unwrap();
    let tree = validate_join_tree(&c, &JoinTree::new(vec![r], vec![])).unwrap();
    let mut db: Database<f64> = Database::new();
    db.from_columns(
        r,
        vec![c.attr("x").unwrap(), c.attr("y").unwrap()],
        vec![
            Column::Int(rows.iter().map(|&(x, _)| x).collect()),
            Column::Int(rows.iter().map(|&(_, y)| y).collect()),
        ],
    );
    (c, tree, db)
}

#[test]
fn independent_uniform_attributes_have_zero_mi() {
    let rows: Vec<(i64, i64)> = (0..4).flat_map(|x| (0..3).map(move |y| (x, y))).collect();
    let (c, tree, db) = single_relation_db(&rows);
    let attrs = vec![c.attr("x").unwrap(), c.attr("y").unwrap()];
    let b = mutual_information_batch::<f64>(&attrs);
    let reg: Reg = FunctionRegistry::new();
    let out = run_batch(b.queries.clone(), &c, &tree, &db, &reg, 1).unwrap();
    let mi = mi_matrix(&b, &out).unwrap();
    assert!(mi.get(0, 1).abs() < 1e-9);
}

#[test]
fn identical_two_valued_attributes_have_ln2_mi() {
    let rows: Vec<(i64, i64)> = vec![(0, 0), (1, 1), (0, 0), (1, 1)];
    let (c, tree, db) = single_relation_db(&rows);
    let attrs = vec![c.attr("x").unwrap(), c.attr("y").unwrap()];
    let b = mutual_information_batch::<f64>(&attrs);
    let reg: Reg = FunctionRegistry::new();
    let out = run_batch(b.queries.clone(), &c, &tree, &db, &reg, 1).unwrap();
    let mi = mi_matrix(&b, &out).unwrap();
    assert!((mi.get(0, 1) - 2.0_f64.ln()).abs() < 1e-9);
}

#[test]
fn mi_matches_direct_computation_on_materialized_join() {
    let g: GeneratedDb<f64> = generate_db(&RandomDbSpec {
        seed: 11,
        relations: 3,
        fact_rows: 120,
        ..Default::default()
    });
    let attrs: Vec<AttrId> = g.keys.iter().chain(g.categorical.iter()).take(4).copied().collect();
    let b = mutual_information_batch::<f64>(&attrs);
    let reg: Reg = FunctionRegistry::new();
    let out = run_batch(b.queries.clone(), &g.catalog, &g.tree, &g.db, &reg, 1).unwrap();
    let mi = mi_matrix(&b, &out).unwrap();

    // direct: empirical distribution over the materialized join
    let join = materialize_join(&g.catalog, &g.tree, &g.db);
    let n = join.rows as f64;
    for i in 0..attrs.len() {
        for j in i + 1..attrs.len() {
            let ci = join.col(attrs[i]).unwrap();
            let cj = join.col(attrs[j]).unwrap();
            let mut joint: std::collections::HashMap<(i64, i64), f64> = Default::default();
            let mut mi_: std::collections::HashMap<i64, f64> = Default::default();
            let mut mj_: std::collections::HashMap<i64, f64> = Default::default();
            for r in 0..join.rows {
                *joint.entry((ci[r], cj[r])).or_default() += 1.0;
                *mi_.entry(ci[r]).or_default() += 1.0;
                *mj_.entry(cj[r]).or_default() += 1.0;
            }
            let mut direct = 0.0;
            for ((a, b2), &cnt) in &joint {
                let p = cnt / n;
                direct += p * (p / (mi_[a] / n * (mj_[b2] / n))).ln();
            }
            assert!(
                (mi.get(i, j) - direct).abs() <= 1e-9 * direct.abs().max(1.0),
                "MI({i},{j}) engine {} vs direct {}",
                mi.get(i, j),
                direct
            );
            assert!(mi.get(i, j) >= -1e-9);
            assert_eq!(mi.get(i, j), mi.get(j, i));
        }
    }
}

#[test]
fn chow_liu_is_optimal_on_small_instances() {
    let g: GeneratedDb<f64> = generate_db(&RandomDbSpec {
        seed: 21,
        relations: 3,
        fact_rows: 150,
        categorical_fraction: 1.0,
        ..Default::default()
    });
    let attrs: Vec<AttrId> = g
        .keys
        .iter()
        .chain(g.categorical.iter())
        .take(5)
        .copied()
        .collect();
    let b = mutual_information_batch::<f64>(&attrs);
    let reg: Reg = FunctionRegistry::new();
    let out = run_batch(b.queries.clone(), &g.catalog, &g.tree, &g.db, &reg, 1).unwrap();
    let mi = mi_matrix(&b, &out).unwrap();
    let edges = chow_liu(&mi);
    assert_eq!(edges.len(), attrs.len() - 1);
    let total = tree_total_mi(&mi, &edges);
    let best = all_spanning_trees(attrs.len())
        .into_iter()
        .map(|t| tree_total_mi(&mi, &t))
        .fold(f64::NEG_INFINITY, f64::max);
    assert!((total - best).abs() <= 1e-12 * best.abs().max(1.0));
}

#[test]
fn gradient_from_covar_equals_direct_gradient() {
    let g: GeneratedDb<f64> = generate_db(&RandomDbSpec {
        seed: 31,
        categorical_fraction: 0.0,
        extra_attrs: 3,
        ..Default::default()
    });
    let feats: Vec<AttrId> = g.continuous.iter().take(2).copied().collect();
    let label = g.continuous[2];
    let mut items = vec![Feature::Intercept];
    items.extend(feats.iter().map(|&a| Feature::Attr(a)));
    let b = covar_batch::<f64>(&g.catalog, &items, Feature::Attr(label));
    let reg: Reg = FunctionRegistry::new();
    let out = run_batch(b.queries.clone(), &g.catalog, &g.tree, &g.db, &reg, 1).unwrap();
    let m = aggforge_core::apps::covar::CovarMatrix::assemble(&b, &out);
    let dense = m.dense().unwrap();
    let count = m.count.unwrap();

    let theta = vec![0.3, -1.2, 0.7, -1.0];
    let lambda = 0.05;
    let g1 = gradient_from_covar(&dense, count, &theta, lambda);

    // direct gradient over the materialized join
    let join = materialize_join(&g.catalog, &g.tree, &g.db);
    let decoders: std::collections::HashMap<AttrId, bool> = g
        .catalog
        .attr_ids()
        .map(|a| {
            let isf = g
                .db
                .tables
                .values()
                .find_map(|t| t.column(a))
                .map(|c| matches!(c, Column::Float(_)))
                .unwrap_or(false);
            (a, isf)
        })
        .collect();
    let value = |attr: AttrId, row: usize| -> f64 {
        let key = join.col(attr).unwrap()[row];
        if decoders[&attr] {
            aggforge_core::decode_key(key)
        } else {
            key as f64
        }
    };
    let item = |i: usize, row: usize| -> f64 {
        match i {
            0 => 1.0,
            1 | 2 => value(feats[i - 1], row),
            _ => value(label, row),
        }
    };
    let mut g2 = vec![0.0; 3];
    for r in 0..join.rows {
        let inner: f64 = (0..4).map(|j| theta[j] * item(j, r)).sum();
        for (k, gk) in g2.iter_mut().enumerate() {
            *gk += inner * item(k, r);
        }
    }
    for (k, gk) in g2.iter_mut().enumerate() {
        *gk = *gk / (join.rows as f64) + lambda * theta[k];
    }
    for k in 0..3 {
        assert!(
            (g1[k] - g2[k]).abs() <= 1e-9 * g2[k].abs().max(1.0),
            "gradient component {k}: covar {} vs direct {}",
            g1[k],
            g2[k]
        );
    }
}

#[test]
fn linreg_matches_normal_equations_on_a_well_conditioned_instance() {
    let g: GeneratedDb<f64> = generate_db(&RandomDbSpec {
        seed: 41,
        categorical_fraction: 0.0,
        extra_attrs: 3,
        fact_rows: 300,
        ..Default::default()
    });
    let feats: Vec<AttrId> = g.continuous.iter().take(3).copied().collect();
    let label = *g.continuous.last().unwrap();
    let reg: Reg = FunctionRegistry::new();
    let cfg = BgdConfig {
        lambda: 0.1,
        ..Default::default()
    };
    let (res, _) = linreg(&g.catalog, &g.tree, &g.db, &reg, &feats, label, &cfg, 1).unwrap();
    let join = materialize_join(&g.catalog, &g.tree, &g.db);
    let decoders: std::collections::HashMap<AttrId, bool> = g
        .catalog
        .attr_ids()
        .map(|a| {
            let isf = g
                .db
                .tables
                .values()
                .find_map(|t| t.column(a))
                .map(|c| matches!(c, Column::Float(_)))
                .unwrap_or(false);
            (a, isf)
        })
        .collect();
    let oracle =
        aggforge_core::testkit::normal_equation_theta(&join, &feats, label, 0.1, &decoders)
            .expect("solvable");
    for k in 0..oracle.len() {
        assert!(
            (res.params.theta[k] - oracle[k]).abs() <= 1e-4 * oracle[k].abs().max(1.0),
            "theta[{k}]: bgd {} vs closed form {}",
            res.params.theta[k],
            oracle[k]
        );
    }
}

#[test]
fn rt_and_ct_node_batches_match_oracle() {
    use aggforge_core::apps::tree::{ct_node_batch, rt_node_batch, FeatKind, FeatureSplits};
    use aggforge_core::Literal;
    let g: GeneratedDb<f64> = generate_db(&RandomDbSpec {
        seed: 51,
        extra_attrs: 3,
        categorical_fraction: 0.34,
        ..Default::default()
    });
    let mut reg: Reg = FunctionRegistry::new();
    let feats: Vec<FeatureSplits> = g
        .continuous
        .iter()
        .take(2)
        .map(|&a| FeatureSplits {
            attr: a,
            kind: FeatKind::Continuous {
                thresholds: vec![Literal::Int(3), Literal::Int(9)],
            },
        })
        .chain(g.categorical.iter().take(1).map(|&a| FeatureSplits {
            attr: a,
            kind: FeatKind::Categorical,
        }))
        .collect();
    let label = *g.continuous.last().unwrap();
    let filters: Vec<_> = feats
        .iter()
        .map(|f| reg.register_conjunction(&format!("pf{}", f.attr.0), 1))
        .collect();
    let rt = rt_node_batch::<f64>(&feats, label, &filters);
    let oracle = brute_force_oracle(&rt.queries, &g.catalog, &g.tree, &g.db, &reg);
    let out = run_batch(rt.queries.clone(), &g.catalog, &g.tree, &g.db, &reg, 1).unwrap();
    for (qi, o) in oracle.iter().enumerate() {
        assert!(tables_match(&out[qi], o, 1e-9), "rt node query {qi}");
    }

    if let Some(&cat_label) = g.categorical.first() {
        let p = g.db.dict(cat_label).map(|d| d.len()).unwrap_or(0);
        let feats2: Vec<FeatureSplits> = g
            .continuous
            .iter()
            .take(2)
            .map(|&a| FeatureSplits {
                attr: a,
                kind: FeatKind::Continuous {
                    thresholds: vec![Literal::Int(5)],
                },
            })
            .collect();
        let filters2: Vec<_> = feats2
            .iter()
            .map(|f| reg.register_conjunction(&format!("pg{}", f.attr.0), 1))
            .collect();
        let ct = ct_node_batch::<f64>(&feats2, cat_label, p, &filters2);
        let oracle = brute_force_oracle(&ct.queries, &g.catalog, &g.tree, &g.db, &reg);
        let out = run_batch(ct.queries.clone(), &g.catalog, &g.tree, &g.db, &reg, 1).unwrap();
        for (qi, o) in oracle.iter().enumerate() {
            assert!(tables_match(&out[qi], o, 1e-9), "ct node query {qi}");
        }
    }
}

#[test]
fn rebind_then_execute_equals_fresh_plan() {
    use aggforge_core::query::{CmpOp, Param, UdafFactor};
    use aggforge_core::query::AggregateExpr;
    let rows: Vec<(i64, i64)> = (0..10).map(|x| (x, x * x)).collect();
    let (c, tree, db) = single_relation_db(&rows);
    let x = c.attr("x").unwrap();
    let mut reg: Reg = FunctionRegistry::new();
    let dynid = reg.new_dyn_param(aggforge_core::Literal::Int(5));
    let factor = UdafFactor::Kronecker {
        attr: x,
        op: CmpOp::Le,
        threshold: Param::Dynamic(dynid),
    };
    let q = AggregateQuery::new(
        "Q",
        vec![],
        vec![AggregateExpr::product(vec![factor.clone()])],
    );
    let prepared =
        aggforge_core::exec::prepare_batch(vec![q], &c, &tree, &db, None).unwrap();
    let (r1, _) = prepared.execute(&c, &db, &reg, 1).unwrap();
    assert_eq!(r1[0].value(0, 0), 6.0);
    reg.rebind_threshold(&factor, aggforge_core::Literal::Int(7)).unwrap();
    let (r2, _) = prepared.execute(&c, &db, &reg, 1).unwrap();
    // fresh plan with the new threshold as a static factor
    let q_static = AggregateQuery::new(
        "Q",
        vec![],
        vec![AggregateExpr::product(vec![UdafFactor::Kronecker {
            attr: x,
            op: CmpOp::Le,
            threshold: Param::Static(aggforge_core::Literal::Int(7)),
        }])],
    );
    let fresh = run_batch(vec![q_static], &c, &tree, &db, &reg, 1).unwrap();
    assert_eq!(r2[0].value(0, 0), fresh[0].value(0, 0));
}

#[test]
fn cart_root_split_separates_one_dimensional_data() {
    // y jumps at x = 5: the root split lands on the separating boundary
    let rows: Vec<(i64, i64)> = (0..10).flat_map(|x| {
        let y = if x < 5 { 0 } else { 100 };
        vec![(x, y), (x, y)]
    })
    .collect();
    let (c, tree, db) = single_relation_db(&rows);
    let mut reg: Reg = FunctionRegistry::new();
    let cfg = CartConfig {
        label: c.attr("y").unwrap(),
        features: vec![c.attr("x").unwrap()],
        max_depth: 1,
        min_split: 2,
        buckets: 9,
        cost: CostKind::Variance,
        threads: 1,
    };
    let t = cart_train(&c, &tree, &db, &mut reg, &cfg).unwrap();
    let split = t.root.split.as_ref().expect("root splits");
    assert_eq!(split.attr, c.attr("x").unwrap());
    match &split.cut {
        SplitCut::Le(aggforge_core::Literal::Int(t)) => assert_eq!(*t, 4),
        other => panic!("unexpected cut {other:?}"),
    }
    match (&split.yes.prediction, &split.no.prediction) {
        (Prediction::Mean(a), Prediction::Mean(b)) => {
            assert_eq!(*a, 0.0);
            assert_eq!(*b, 100.0);
        }
        _ => panic!("regression predictions expected"),
    }
}

#[test]
fn depth_zero_gives_single_leaf_with_global_mean() {
    let rows: Vec<(i64, i64)> = vec![(1, 2), (2, 4), (3, 9)];
    let (c, tree, db) = single_relation_db(&rows);
    let mut reg: Reg = FunctionRegistry::new();
    let cfg = CartConfig {
        label: c.attr("y").unwrap(),
        features: vec![c.attr("x").unwrap()],
        max_depth: 0,
        min_split: 1,
        buckets: 5,
        cost: CostKind::Variance,
        threads: 1,
    };
    let t = cart_train(&c, &tree, &db, &mut reg, &cfg).unwrap();
    assert!(t.root.split.is_none());
    assert_eq!(t.root.prediction, Prediction::Mean(5.0));
}

#[test]
fn cart_equals_oracle_cart_on_a_random_db() {
    for seed in [61u64, 62, 63] {
        let g: GeneratedDb<f64> = generate_db(&RandomDbSpec {
            seed,
            extra_attrs: 3,
            categorical_fraction: 0.3,
            fact_rows: 150,
            ..Default::default()
        });
        if g.continuous.len() < 2 {
            continue;
        }
        let label = *g.continuous.last().unwrap();
        let features: Vec<AttrId> = g
            .continuous
            .iter()
            .filter(|&&a| a != label)
            .take(2)
            .copied()
            .chain(g.categorical.iter().take(1).copied())
            .collect();
        let mut reg: Reg = FunctionRegistry::new();
        let cfg = CartConfig {
            label,
            features,
            max_depth: 3,
            min_split: 4,
            buckets: 6,
            cost: CostKind::Variance,
            threads: 1,
        };
        let splits = aggforge_core::apps::tree::build_feature_splits(
            &g.catalog, &g.tree, &g.db, &reg, &cfg,
        )
        .unwrap();
        let engine_tree = cart_train(&g.catalog, &g.tree, &g.db, &mut reg, &cfg).unwrap();
        let join = materialize_join(&g.catalog, &g.tree, &g.db);
        let oracle = oracle_cart(&join, &g.catalog, &g.db, &splits, &cfg);
        assert_eq!(
            engine_tree, oracle,
            "seed {seed}: engine tree != oracle tree\nengine {:?}\noracle {:?}",
            tree_shape(&engine_tree.root),
            tree_shape(&oracle.root)
        );
    }
}

#[test]
fn merged_and_unmerged_pipelines_agree() {
    // run each query alone vs the whole batch together
    for seed in [71u64, 72] {
        let g: GeneratedDb<f64> = generate_db(&RandomDbSpec {
            seed,
            ..Default::default()
        });
        let mut items: Vec<Feature> = vec![Feature::Intercept];
        items.extend(g.continuous.iter().take(2).map(|&a| Feature::Attr(a)));
        let label = Feature::Attr(*g.continuous.last().unwrap());
        let b = covar_batch::<f64>(&g.catalog, &items, label);
        let reg: Reg = FunctionRegistry::new();
        let together =
            run_batch(b.queries.clone(), &g.catalog, &g.tree, &g.db, &reg, 1).unwrap();
        for (qi, q) in b.queries.iter().enumerate() {
            let alone =
                run_batch(vec![q.clone()], &g.catalog, &g.tree, &g.db, &reg, 1).unwrap();
            assert!(
                tables_match(&together[qi], &alone[0], 1e-9),
                "query {qi} differs between merged and solo execution"
            );
        }
    }
}

#[test]
fn generated_dbs_feed_every_application_batch() {
    let g: GeneratedDb<f64> = generate_db(&RandomDbSpec {
        seed: 81,
        extra_attrs: 3,
        categorical_fraction: 0.4,
        ..Default::default()
    });
    let reg: Reg = FunctionRegistry::new();
    let mut all: Vec<AggregateQuery<f64>> = Vec::new();
    let mut items: Vec<Feature> = vec![Feature::Intercept];
    items.extend(g.continuous.iter().take(2).map(|&a| Feature::Attr(a)));
    all.extend(
        covar_batch::<f64>(&g.catalog, &items, Feature::Attr(*g.continuous.last().unwrap()))
            .queries,
    );
    if g.continuous.len() >= 2 {
        all.extend(
            poly_regression_batch::<f64>(
                &g.catalog,
                &g.continuous[..2].to_vec(),
                2,
            )
            .queries,
        );
    }
    let dims: Vec<AttrId> = g.keys.iter().take(2).copied().collect();
    all.extend(data_cube_batch::<f64>(&dims, &g.continuous[..1].to_vec()).queries);
    all.extend(mutual_information_batch::<f64>(&g.keys[..2.min(g.keys.len())].to_vec()).queries);
    let out = run_batch(all.clone(), &g.catalog, &g.tree, &g.db, &reg, 2).unwrap();
    assert_eq!(out.len(), all.len());
}

#[test]
fn f32_engine_smoke_test() {
    // the engine is generic over the scalar; a small f32 instance works
    let mut c = Catalog::new();
    let r = c.add_relation("R", &["a", "v"]).unwrap();
    let tree = validate_join_tree(&c, &JoinTree::new(vec![r], vec![])).unwrap();
    let mut db: Database<f32> = Database::new();
    db.from_columns(
        r,
        vec![c.attr("a").unwrap(), c.attr("v").unwrap()],
        vec![
            Column::Int(vec![1, 1, 2]),
            Column::Float(vec![0.5f32, 1.5, 2.0]),
        ],
    );
    let reg: FunctionRegistry<f32> = FunctionRegistry::new();
    let q: AggregateQuery<f32> = AggregateQuery::new(
        "Q",
        vec![c.attr("a").unwrap()],
        vec![aggforge_core::query::AggregateExpr::sum_of(c.attr("v").unwrap())],
    );
    let out: Vec<Arc<ResultTable<f32>>> =
        run_batch(vec![q], &c, &tree, &db, &reg, 1).unwrap();
    assert_eq!(out[0].rows(), 2);
    assert_eq!(out[0].value(0, 0), 2.0f32);
    assert_eq!(out[0].value(1, 0), 2.0f32);
}

#[test]
fn chain_count_queries_share_directional_views() {
    // a path of relations with one count query per attribute: after merging,
    // each edge carries at most one view per direction, far fewer than
    // queries x edges
    let mut c = Catalog::new();
    let n = 5usize;
    let mut rels = Vec::new();
    for i in 1..n {
        rels.push(
            c.add_relation(&format!("S{i}"), &[&format!("x{i}"), &format!("x{}", i + 1)])
                .unwrap(),
        );
    }
    let edges: Vec<_> = (1..rels.len()).map(|i| (rels[i - 1], rels[i])).collect();
    let tree = validate_join_tree(&c, &JoinTree::new(rels.clone(), edges)).unwrap();
    let mut db: Database<f64> = Database::new();
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    for &r in &rels {
        let attrs = c.rel_schema(r).attrs.clone();
        let rows = 40;
        let cols = attrs
            .iter()
            .map(|_| Column::Int((0..rows).map(|_| rng.gen_range(0..6)).collect()))
            .collect();
        db.from_columns(r, attrs, cols);
    }
    let batch: Vec<AggregateQuery<f64>> = (1..=n)
        .map(|i| {
            AggregateQuery::new(
                &format!("Q{i}"),
                vec![c.attr(&format!("x{i}")).unwrap()],
                vec![aggforge_core::query::AggregateExpr::count()],
            )
        })
        .collect();
    let reg: Reg = FunctionRegistry::new();
    let prepared =
        aggforge_core::exec::prepare_batch(batch.clone(), &c, &tree, &db, None).unwrap();
    let n_edges = tree.edges.len();
    let merged = prepared.opt.merged_view_count();
    assert!(
        merged <= 2 * n_edges,
        "expected at most one view per edge direction, got {merged}"
    );
    assert!(merged < batch.len() * n_edges);
    assert!(prepared.opt.pre_merge_view_count >= merged);
    let (out, _) = prepared.execute(&c, &db, &reg, 1).unwrap();
    let oracle = brute_force_oracle(&batch, &c, &tree, &db, &reg);
    for (qi, o) in oracle.iter().enumerate() {
        assert!(tables_match(&out[qi], o, 1e-9), "chain query {qi}");
    }
}
