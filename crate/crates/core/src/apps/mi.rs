//! Pairwise mutual information from shared count queries, and Chow-Liu
//! structure learning (maximum-total-MI spanning tree).
//!
//! One count query per subset of every attribute pair: the empty subset, the
//! n marginals (shared across pairs), and the n(n-1)/2 pair counts. MI is
//! then `sum f(a,b,c,d)` with `f = d/a * ln(a*d/(b*c))` in natural log.

use super::AppError;
use crate::catalog::AttrId;
use crate::exec::ResultTable;
use crate::query::{AggregateExpr, AggregateQuery};
use crate::Scalar;
use std::sync::Arc;

#[derive(Debug, Clone)]
pub struct MiBatch<S> {
    pub attrs: Vec<AttrId>,
    /// Layout: [total, marginal(attr 0..n), pair(i,j) for i<j in order].
    pub queries: Vec<AggregateQuery<S>>,
}

impl<S: Scalar> MiBatch<S> {
    pub fn pair_count(&self) -> usize {
        let n = self.attrs.len();
        n * (n - 1) / 2
    }

    pub fn pair_index(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        let n = self.attrs.len();
        // rows of the strictly-upper triangle before row i, plus offset
        1 + n + (i * (2 * n - i - 1)) / 2 + (j - i - 1)
    }
}

/// Count queries for every subset of every pair: marginals computed once.
pub fn mutual_information_batch<S: Scalar>(attrs: &[AttrId]) -> MiBatch<S> {
    let mut queries = Vec::new();
    queries.push(AggregateQuery::new("MI_total", vec![], vec![AggregateExpr::count()]));
    for (i, &a) in attrs.iter().enumerate() {
        queries.push(AggregateQuery::new(
            &format!("MI_m{i}"),
            vec![a],
            vec![AggregateExpr::count()],
        ));
    }
    for i in 0..attrs.len() {
        for j in i + 1..attrs.len() {
            queries.push(AggregateQuery::new(
                &format!("MI_p{i}_{j}"),
                vec![attrs[i], attrs[j]],
                vec![AggregateExpr::count()],
            ));
        }
    }
    MiBatch {
        attrs: attrs.to_vec(),
        queries,
    }
}

/// Symmetric pairwise mutual-information matrix (natural log).
#[derive(Debug, Clone)]
pub struct MiMatrix<S> {
    pub n: usize,
    /// Strictly-upper triangle, row-major.
    vals: Vec<S>,
}

impl<S: Scalar> MiMatrix<S> {
    pub fn from_upper(n: usize, vals: Vec<S>) -> MiMatrix<S> {
        assert_eq!(vals.len(), n * (n - 1) / 2);
        MiMatrix { n, vals }
    }

    pub fn get(&self, i: usize, j: usize) -> S {
        assert_ne!(i, j);
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        self.vals[(i * (2 * self.n - i - 1)) / 2 + (j - i - 1)]
    }
}

fn lookup_count<S: Scalar>(rt: &ResultTable<S>, key: i64) -> S {
    let (lo, hi) = rt.narrow(0, (0, rt.rows()), key);
    if lo < hi {
        rt.value(lo, 0)
    } else {
        S::zero()
    }
}

/// Computes the MI matrix from the batch results: for each pair,
/// `MI = sum over (x_i, x_j) of d/a * ln(a*d / (b*c))`.
pub fn mi_matrix<S: Scalar>(
    batch: &MiBatch<S>,
    results: &[Arc<ResultTable<S>>],
) -> Result<MiMatrix<S>, AppError> {
    let n = batch.attrs.len();
    let total = results[0].value(0, 0);
    if total <= S::zero() {
        return Err(AppError::EmptyJoin);
    }
    let mut vals = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let pair = &results[batch.pair_index(i, j)];
            // the pair table's key columns are in canonical attr order
            let (ci, cj) = {
                let pos_i = pair
                    .key_attrs
                    .iter()
                    .position(|&a| a == batch.attrs[i])
                    .unwrap();
                (pos_i, 1 - pos_i)
            };
            let mi_res = &results[1 + i];
            let mj_res = &results[1 + j];
            let mut mi = S::zero();
            for row in 0..pair.rows() {
                let delta = pair.value(row, 0);
                if delta <= S::zero() {
                    continue;
                }
                let beta = lookup_count(mi_res, pair.key(row, ci));
                let gamma = lookup_count(mj_res, pair.key(row, cj));
                mi += delta / total * (total * delta / (beta * gamma)).ln();
            }
            vals.push(mi);
        }
    }
    Ok(MiMatrix { n, vals })
}

/// Maximum-weight spanning tree over the MI matrix: in each round, add the
/// highest-MI edge joining two components (ties broken by lexicographic pair
/// order). Returns n-1 edges as index pairs.
pub fn chow_liu<S: Scalar>(mi: &MiMatrix<S>) -> Vec<(usize, usize)> {
    let n = mi.n;
    let mut edges: Vec<(usize, usize)> = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            edges.push((i, j));
        }
    }
    edges.sort_by(|&(a1, b1), &(a2, b2)| {
        mi.get(a2, b2)
            .partial_cmp(&mi.get(a1, b1))
            .unwrap()
            .then(a1.cmp(&a2))
            .then(b1.cmp(&b2))
    });
    let mut dsu: Vec<usize> = (0..n).collect();
    fn find(dsu: &mut Vec<usize>, x: usize) -> usize {
        if dsu[x] != x {
            let r = find(dsu, dsu[x]);
            dsu[x] = r;
        }
        dsu[x]
    }
    let mut out = Vec::with_capacity(n.saturating_sub(1));
    for (a, b) in edges {
        let (ra, rb) = (find(&mut dsu, a), find(&mut dsu, b));
        if ra != rb {
            dsu[ra] = rb;
            out.push((a, b));
            if out.len() + 1 == n {
                break;
            }
        }
    }
    out
}

/// Canonical-order total MI of an edge set (sorted before summing so equal
/// trees sum identically).
pub fn tree_total_mi<S: Scalar>(mi: &MiMatrix<S>, edges: &[(usize, usize)]) -> S {
    let mut es: Vec<(usize, usize)> = edges
        .iter()
        .map(|&(a, b)| if a < b { (a, b) } else { (b, a) })
        .collect();
    es.sort_unstable();
    es.iter().fold(S::zero(), |acc, &(a, b)| acc + mi.get(a, b))
}
