//! Covar aggregates for polynomial regression of degree d: one query per
//! unordered pair of degree-<=d monomials over the features, giving the
//! `(B^2 + B)/2` upper-triangle entries for `B = C(n+d, d)`.

use crate::catalog::{AttrId, AttrKind, Catalog};
use crate::query::{AggregateExpr, AggregateQuery, UdafFactor};
use crate::Scalar;

#[derive(Debug, Clone)]
pub struct PolyBatch<S> {
    pub features: Vec<AttrId>,
    pub degree: u32,
    /// Exponent vectors of all monomials with total degree <= d.
    pub monomials: Vec<Vec<u32>>,
    pub queries: Vec<AggregateQuery<S>>,
    pub pairs: Vec<(usize, usize)>,
}

impl<S: Scalar> PolyBatch<S> {
    pub fn aggregate_value_count(&self) -> usize {
        self.queries.len()
    }
}

/// All exponent vectors over `n` variables with total degree <= d, in
/// lexicographic order.
pub fn monomials(n: usize, d: u32) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut cur = vec![0u32; n];
    fn rec(out: &mut Vec<Vec<u32>>, cur: &mut Vec<u32>, at: usize, left: u32) {
        if at == cur.len() {
            out.push(cur.clone());
            return;
        }
        for e in 0..=left {
            cur[at] = e;
            rec(out, cur, at + 1, left - e);
        }
        cur[at] = 0;
    }
    rec(&mut out, &mut cur, 0, d);
    out
}

pub fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut r = 1u64;
    for i in 0..k {
        r = r * (n - i) / (i + 1);
    }
    r
}

/// One query per monomial pair (i <= j): the product monomial
/// `prod X_a^(e_i[a] + e_j[a])`. Categorical attributes with a positive
/// exponent become group-by attributes instead.
pub fn poly_regression_batch<S: Scalar>(
    catalog: &Catalog,
    features: &[AttrId],
    degree: u32,
) -> PolyBatch<S> {
    assert!(degree >= 1, "degree must be at least 1");
    let mono = monomials(features.len(), degree);
    let mut queries = Vec::new();
    let mut pairs = Vec::new();
    for i in 0..mono.len() {
        for j in i..mono.len() {
            let mut group_by: Vec<AttrId> = Vec::new();
            let mut factors: Vec<UdafFactor<S>> = Vec::new();
            for (fi, &attr) in features.iter().enumerate() {
                let e = mono[i][fi] + mono[j][fi];
                if e == 0 {
                    continue;
                }
                match catalog.attr_info(attr).kind {
                    AttrKind::Categorical => group_by.push(attr),
                    AttrKind::Continuous => factors.push(if e == 1 {
                        UdafFactor::Identity(attr)
                    } else {
                        UdafFactor::Power(attr, e)
                    }),
                }
            }
            if factors.is_empty() {
                factors.push(UdafFactor::Constant(S::one()));
            }
            queries.push(AggregateQuery::new(
                &format!("PR_{i}_{j}"),
                group_by,
                vec![AggregateExpr::product(factors)],
            ));
            pairs.push((i, j));
        }
    }
    PolyBatch {
        features: features.to_vec(),
        degree,
        monomials: mono,
        queries,
        pairs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn catalog2() -> Catalog {
        let mut c = Catalog::new();
        c.add_relation("R", &["x1", "x2", "y"]).unwrap();
        c
    }

    #[test]
    fn degree_one_reduces_to_the_linear_covar_batch_size() {
        let c = catalog2();
        let feats = vec![c.attr("x1").unwrap(), c.attr("x2").unwrap()];
        let b = poly_regression_batch::<f64>(&c, &feats, 1);
        // monomials {1, x1, x2}: pairs = 6 = (n+1)(n+2)/2 with n = 2
        assert_eq!(b.monomials.len(), 3);
        assert_eq!(b.aggregate_value_count(), 6);
    }

    #[test]
    fn count_matches_upper_triangle_formula() {
        let c = catalog2();
        let feats = vec![c.attr("x1").unwrap(), c.attr("x2").unwrap()];
        let b = poly_regression_batch::<f64>(&c, &feats, 2);
        let bb = binomial(4, 2) as usize; // C(n+d, d) = 6
        assert_eq!(b.aggregate_value_count(), (bb * bb + bb) / 2); // 21
    }

    #[test]
    fn exponents_respect_the_2d_bound() {
        let c = catalog2();
        let feats = vec![c.attr("x1").unwrap(), c.attr("x2").unwrap()];
        let b = poly_regression_batch::<f64>(&c, &feats, 3);
        for (qi, &(i, j)) in b.pairs.iter().enumerate() {
            let total: u32 = b.monomials[i].iter().chain(&b.monomials[j]).sum();
            assert!(total <= 2 * 3);
            let _ = &b.queries[qi];
        }
    }
}
