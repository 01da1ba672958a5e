//! Data cubes: the 2^k group-by queries over every subset of the dimension
//! attributes, each carrying the same v measure aggregates, rendered in 1NF
//! with an ALL sentinel for rolled-up dimensions.

use crate::catalog::{AttrId, Catalog};
use crate::exec::ResultTable;
use crate::query::{AggregateExpr, AggregateQuery};
use crate::storage::{Column, Database};
use crate::Scalar;
use std::sync::Arc;

#[derive(Debug, Clone)]
pub struct CubeBatch<S> {
    pub dims: Vec<AttrId>,
    pub measures: Vec<AttrId>,
    /// Queries indexed by dimension-subset bitmask (0 = grand total).
    pub queries: Vec<AggregateQuery<S>>,
}

impl<S: Scalar> CubeBatch<S> {
    /// 2^k cuboids x v measures.
    pub fn aggregate_value_count(&self) -> usize {
        self.queries.len() * self.measures.len().max(1)
    }
}

/// One query per subset of the dimensions, each summing every measure.
pub fn data_cube_batch<S: Scalar>(dims: &[AttrId], measures: &[AttrId]) -> CubeBatch<S> {
    assert!(!measures.is_empty(), "at least one measure");
    assert!(dims.len() < 20, "dimension count is bounded");
    let mut queries = Vec::with_capacity(1 << dims.len());
    for mask in 0u32..(1 << dims.len()) {
        let group_by: Vec<AttrId> = dims
            .iter()
            .enumerate()
            .filter(|(i, _)| mask >> i & 1 == 1)
            .map(|(_, &a)| a)
            .collect();
        let aggs: Vec<AggregateExpr<S>> = measures
            .iter()
            .map(|&m| AggregateExpr::sum_of(m))
            .collect();
        queries.push(AggregateQuery::new(&format!("Cube_{mask}"), group_by, aggs));
    }
    CubeBatch {
        dims: dims.to_vec(),
        measures: measures.to_vec(),
        queries,
    }
}

/// Decodes a key of `attr` for display.
pub fn display_key<S: Scalar>(db: &Database<S>, catalog: &Catalog, attr: AttrId, key: i64) -> String {
    if let Some(d) = db.dict(attr) {
        return d.decode(key as u32).to_string();
    }
    for t in db.tables.values() {
        if let Some(col) = t.column(attr) {
            return match col {
                Column::Float(_) => format!("{}", crate::decode_key(key)),
                _ => format!("{key}"),
            };
        }
    }
    let _ = catalog;
    format!("{key}")
}

/// All cuboids as one 1NF CSV: dimension columns (ALL when rolled up), then
/// the measures. Cuboids appear in bitmask order, rows in key order.
pub fn render_1nf<S: Scalar>(
    batch: &CubeBatch<S>,
    results: &[Arc<ResultTable<S>>],
    catalog: &Catalog,
    db: &Database<S>,
) -> String {
    let mut out = String::new();
    let dim_names: Vec<&str> = batch.dims.iter().map(|&a| catalog.attr_name(a)).collect();
    let measure_names: Vec<&str> = batch
        .measures
        .iter()
        .map(|&a| catalog.attr_name(a))
        .collect();
    out.push_str(&dim_names.join(","));
    if !dim_names.is_empty() {
        out.push(',');
    }
    out.push_str(&measure_names.join(","));
    out.push('\n');
    for (mask, rt) in results.iter().enumerate() {
        let rows = if rt.key_attrs.is_empty() { 1 } else { rt.rows() };
        for row in 0..rows {
            let mut cells: Vec<String> = Vec::with_capacity(batch.dims.len() + rt.arity);
            for (di, &dim) in batch.dims.iter().enumerate() {
                if mask >> di & 1 == 1 {
                    let col = rt.key_attrs.iter().position(|&a| a == dim).unwrap();
                    cells.push(display_key(db, catalog, dim, rt.key(row, col)));
                } else {
                    cells.push("ALL".to_string());
                }
            }
            for agg in 0..rt.arity {
                let v = if rt.key_attrs.is_empty() && rt.values.is_empty() {
                    S::zero()
                } else {
                    rt.value(row, agg)
                };
                cells.push(format!("{v}"));
            }
            out.push_str(&cells.join(","));
            out.push('\n');
        }
    }
    out
}
