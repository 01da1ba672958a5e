//! Columnar in-memory tables with dictionary-encoded categoricals and
//! trie-style range scans over sorted join-attribute prefixes.
//!
//! Every cell maps to an order-preserving `i64` key (see [`crate::keys`]);
//! sorting, grouping, and range narrowing all compare keys. Tables are
//! immutable after load/sort, so range scans over disjoint partitions may run
//! concurrently.

use crate::catalog::{AttrId, AttrKind, Catalog, RelId};
use crate::keys::{decode_key, encode_key};
use crate::{Literal, Scalar};
use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("io error reading `{path}`: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {msg}")]
    ParseError { line: usize, msg: String },
    #[error("arity mismatch at line {line}: expected {expected} columns, found {found}")]
    ArityMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),
    #[error("table is not sorted by the requested prefix")]
    NotSorted,
}

/// Per-attribute dictionary for categorical values, shared across all tables
/// of a database so that codes are join-compatible.
#[derive(Debug, Clone, Default)]
pub struct Dictionary {
    values: Vec<String>,
    codes: HashMap<String, u32>,
}

impl Dictionary {
    pub fn encode(&mut self, v: &str) -> u32 {
        if let Some(&c) = self.codes.get(v) {
            return c;
        }
        let c = self.values.len() as u32;
        self.values.push(v.to_string());
        self.codes.insert(v.to_string(), c);
        c
    }

    pub fn lookup(&self, v: &str) -> Option<u32> {
        self.codes.get(v).copied()
    }

    pub fn decode(&self, code: u32) -> &str {
        &self.values[code as usize]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone)]
pub enum Column<S> {
    Int(Vec<i64>),
    Float(Vec<S>),
    Cat(Vec<u32>),
}

impl<S: Scalar> Column<S> {
    pub fn len(&self) -> usize {
        match self {
            Column::Int(v) => v.len(),
            Column::Float(v) => v.len(),
            Column::Cat(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Order-preserving key of the cell at `row`.
    pub fn key(&self, row: usize) -> i64 {
        match self {
            Column::Int(v) => v[row],
            Column::Float(v) => encode_key(v[row].to_f64().unwrap()),
            Column::Cat(v) => v[row] as i64,
        }
    }

    /// Numeric value of the cell at `row` (categorical codes numerify).
    pub fn value(&self, row: usize) -> S {
        match self {
            Column::Int(v) => S::from_i64(v[row]).unwrap(),
            Column::Float(v) => v[row],
            Column::Cat(v) => S::from_u32(v[row]).unwrap(),
        }
    }

    fn permuted(&self, perm: &[u32]) -> Column<S> {
        match self {
            Column::Int(v) => Column::Int(perm.iter().map(|&i| v[i as usize]).collect()),
            Column::Float(v) => Column::Float(perm.iter().map(|&i| v[i as usize]).collect()),
            Column::Cat(v) => Column::Cat(perm.iter().map(|&i| v[i as usize]).collect()),
        }
    }
}

/// Decodes a column-typed key back to a numeric scalar.
pub fn key_to_value<S: Scalar>(col: &Column<S>, key: i64) -> S {
    match col {
        Column::Int(_) => S::from_i64(key).unwrap(),
        Column::Float(_) => S::from_f64(decode_key(key)).unwrap(),
        Column::Cat(_) => S::from_i64(key).unwrap(),
    }
}

/// Converts a literal to key space for a given column type, using the
/// database dictionary for categoricals. Unknown categories get a sentinel
/// key that matches no row.
pub fn literal_to_key<S: Scalar>(
    col: &Column<S>,
    dict: Option<&Dictionary>,
    lit: &Literal,
) -> i64 {
    match (col, lit) {
        (Column::Int(_), Literal::Int(v)) => *v,
        (Column::Int(_), Literal::Float(v)) => *v as i64,
        (Column::Float(_), Literal::Int(v)) => encode_key(*v as f64),
        (Column::Float(_), Literal::Float(v)) => encode_key(*v),
        (Column::Cat(_), Literal::Str(s)) => dict
            .and_then(|d| d.lookup(s))
            .map(|c| c as i64)
            .unwrap_or(-1),
        (Column::Cat(_), Literal::Int(v)) => *v,
        _ => -1,
    }
}

/// A contiguous run of rows sharing a fixed prefix of attribute values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrieRange {
    pub lo: usize,
    pub hi: usize,
}

impl TrieRange {
    pub fn len(&self) -> usize {
        self.hi - self.lo
    }

    pub fn is_empty(&self) -> bool {
        self.lo >= self.hi
    }
}

#[derive(Debug, Clone)]
pub struct Table<S> {
    pub rel: RelId,
    pub attrs: Vec<AttrId>,
    pub columns: Vec<Column<S>>,
    pub row_count: usize,
    /// Attributes the rows are lexicographically sorted by, outermost first.
    pub sort_order: Vec<AttrId>,
    /// Exact distinct count per column, measured at load.
    pub distinct: Vec<usize>,
}

impl<S: Scalar> Table<S> {
    pub fn col_index(&self, attr: AttrId) -> Option<usize> {
        self.attrs.iter().position(|&a| a == attr)
    }

    pub fn column(&self, attr: AttrId) -> Option<&Column<S>> {
        self.col_index(attr).map(|i| &self.columns[i])
    }

    pub fn key_at(&self, col: usize, row: usize) -> i64 {
        self.columns[col].key(row)
    }

    fn recompute_distinct(&mut self) {
        self.distinct = self
            .columns
            .iter()
            .map(|c| {
                let mut keys: Vec<i64> = (0..c.len()).map(|r| c.key(r)).collect();
                keys.sort_unstable();
                keys.dedup();
                keys.len()
            })
            .collect();
    }

    /// Rows `[lo, hi)` restricted to `col == key`, by binary search. Requires
    /// the column to be sorted within the range (a trie level).
    pub fn narrow(&self, col: usize, range: TrieRange, key: i64) -> TrieRange {
        let c = &self.columns[col];
        let lo = lower_bound(range.lo, range.hi, |r| c.key(r) < key);
        let hi = lower_bound(lo, range.hi, |r| c.key(r) <= key);
        TrieRange { lo, hi }
    }

    pub fn full_range(&self) -> TrieRange {
        TrieRange {
            lo: 0,
            hi: self.row_count,
        }
    }
}

fn lower_bound(mut lo: usize, mut hi: usize, pred: impl Fn(usize) -> bool) -> usize {
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if pred(mid) {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Stable lexicographic sort of a table by the given attribute order.
pub fn sort_table<S: Scalar>(t: &Table<S>, order: &[AttrId]) -> Result<Table<S>, StorageError> {
    let mut cols = Vec::with_capacity(order.len());
    for &a in order {
        cols.push(
            t.col_index(a)
                .ok_or_else(|| StorageError::UnknownAttribute(format!("{a:?}")))?,
        );
    }
    let mut perm: Vec<u32> = (0..t.row_count as u32).collect();
    perm.sort_by(|&x, &y| {
        for &c in &cols {
            let (kx, ky) = (t.key_at(c, x as usize), t.key_at(c, y as usize));
            match kx.cmp(&ky) {
                std::cmp::Ordering::Equal => continue,
                other => return other,
            }
        }
        std::cmp::Ordering::Equal
    });
    let columns = t.columns.iter().map(|c| c.permuted(&perm)).collect();
    Ok(Table {
        rel: t.rel,
        attrs: t.attrs.clone(),
        columns,
        row_count: t.row_count,
        sort_order: order.to_vec(),
        distinct: t.distinct.clone(),
    })
}

/// Iterates the distinct values of `attr` within `range`, yielding each value
/// key with its contiguous sub-range. The table must be sorted with `attr`
/// next after the prefix attributes that produced `range`.
pub struct DistinctRanges<'a, S> {
    table: &'a Table<S>,
    col: usize,
    at: usize,
    hi: usize,
}

impl<'a, S: Scalar> Iterator for DistinctRanges<'a, S> {
    type Item = (i64, TrieRange);

    fn next(&mut self) -> Option<Self::Item> {
        if self.at >= self.hi {
            return None;
        }
        let key = self.table.key_at(self.col, self.at);
        let c = &self.table.columns[self.col];
        let end = lower_bound(self.at, self.hi, |r| c.key(r) <= key);
        let range = TrieRange {
            lo: self.at,
            hi: end,
        };
        self.at = end;
        Some((key, range))
    }
}

/// See [`DistinctRanges`]. `prefix_depth` is how many sort_order attributes
/// produced `range`; `attr` must be the next one.
pub fn distinct_ranges<'a, S: Scalar>(
    t: &'a Table<S>,
    prefix_depth: usize,
    range: TrieRange,
    attr: AttrId,
) -> Result<DistinctRanges<'a, S>, StorageError> {
    if t.sort_order.get(prefix_depth) != Some(&attr) {
        return Err(StorageError::NotSorted);
    }
    let col = t
        .col_index(attr)
        .ok_or_else(|| StorageError::UnknownAttribute(format!("{attr:?}")))?;
    Ok(DistinctRanges {
        table: t,
        col,
        at: range.lo,
        hi: range.hi,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct CsvOptions {
    pub delimiter: char,
    pub has_header: bool,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions {
            delimiter: ',',
            has_header: false,
        }
    }
}

/// A loaded database: one table per relation plus the shared categorical
/// dictionaries, keyed by attribute.
#[derive(Debug, Clone, Default)]
pub struct Database<S> {
    pub tables: HashMap<RelId, Arc<Table<S>>>,
    pub dicts: HashMap<AttrId, Dictionary>,
}

impl<S: Scalar> Database<S> {
    pub fn new() -> Database<S> {
        Database {
            tables: HashMap::new(),
            dicts: HashMap::new(),
        }
    }

    pub fn table(&self, rel: RelId) -> &Table<S> {
        &self.tables[&rel]
    }

    pub fn insert(&mut self, table: Table<S>) {
        self.tables.insert(table.rel, Arc::new(table));
    }

    pub fn dict(&self, attr: AttrId) -> Option<&Dictionary> {
        self.dicts.get(&attr)
    }

    /// Measured distinct count for an attribute, preferring the catalog hint.
    pub fn domain_size(&self, catalog: &Catalog, attr: AttrId) -> usize {
        if let Some(h) = catalog.attr_info(attr).domain_size_hint {
            return h;
        }
        self.tables
            .values()
            .filter_map(|t| t.col_index(attr).map(|c| t.distinct[c]))
            .max()
            .unwrap_or(1)
    }

    /// Loads a CSV file into a table for `rel`. Column types are inferred:
    /// categorical attributes (per catalog) are dictionary-encoded; remaining
    /// columns become Int when every value parses as i64, Float otherwise.
    pub fn load_csv(
        &mut self,
        catalog: &Catalog,
        rel: RelId,
        path: &Path,
        options: CsvOptions,
    ) -> Result<(), StorageError> {
        let text = std::fs::read_to_string(path).map_err(|source| StorageError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.load_csv_text(catalog, rel, &text, options)
    }

    pub fn load_csv_text(
        &mut self,
        catalog: &Catalog,
        rel: RelId,
        text: &str,
        options: CsvOptions,
    ) -> Result<(), StorageError> {
        let schema = catalog.rel_schema(rel);
        let ncols = schema.attrs.len();
        let mut cells: Vec<Vec<&str>> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            if i == 0 && options.has_header {
                continue;
            }
            if raw.trim().is_empty() {
                continue;
            }
            let row: Vec<&str> = raw.split(options.delimiter).map(str::trim).collect();
            if row.len() != ncols {
                return Err(StorageError::ArityMismatch {
                    line: i + 1,
                    expected: ncols,
                    found: row.len(),
                });
            }
            cells.push(row);
        }
        let mut columns = Vec::with_capacity(ncols);
        for (c, &attr) in schema.attrs.iter().enumerate() {
            let kind = catalog.attr_info(attr).kind;
            if kind == AttrKind::Categorical {
                let dict = self.dicts.entry(attr).or_default();
                let col: Vec<u32> = cells.iter().map(|row| dict.encode(row[c])).collect();
                columns.push(Column::Cat(col));
                continue;
            }
            let all_int = cells.iter().all(|row| row[c].parse::<i64>().is_ok());
            if all_int {
                columns.push(Column::Int(
                    cells.iter().map(|row| row[c].parse::<i64>().unwrap()).collect(),
                ));
            } else {
                let mut vals = Vec::with_capacity(cells.len());
                for (r, row) in cells.iter().enumerate() {
                    let v: S = row[c].parse().map_err(|_| StorageError::ParseError {
                        line: r + 1 + options.has_header as usize,
                        msg: format!(
                            "cannot parse `{}` in column `{}`",
                            row[c],
                            catalog.attr_name(attr)
                        ),
                    })?;
                    if v.is_nan() {
                        return Err(StorageError::ParseError {
                            line: r + 1 + options.has_header as usize,
                            msg: format!("NaN in column `{}`", catalog.attr_name(attr)),
                        });
                    }
                    // normalize -0.0 so equal values share one key
                    vals.push(if v == S::zero() { S::zero() } else { v });
                }
                columns.push(Column::Float(vals));
            }
        }
        let row_count = cells.len();
        let mut table = Table {
            rel,
            attrs: schema.attrs.clone(),
            columns,
            row_count,
            sort_order: Vec::new(),
            distinct: Vec::new(),
        };
        table.recompute_distinct();
        self.insert(table);
        Ok(())
    }

    /// Builds a table straight from typed columns (used by the test kit).
    pub fn from_columns(
        &mut self,
        rel: RelId,
        attrs: Vec<AttrId>,
        columns: Vec<Column<S>>,
    ) {
        let row_count = columns.first().map_or(0, |c| c.len());
        debug_assert!(columns.iter().all(|c| c.len() == row_count));
        let mut table = Table {
            rel,
            attrs,
            columns,
            row_count,
            sort_order: Vec::new(),
            distinct: Vec::new(),
        };
        table.recompute_distinct();
        self.insert(table);
    }

    /// Re-sorts the stored table for `rel` by `order` (no-op if already so).
    pub fn ensure_sorted(&mut self, rel: RelId, order: &[AttrId]) -> Result<(), StorageError> {
        let t = self.table(rel);
        if t.sort_order.len() >= order.len() && t.sort_order[..order.len()] == *order {
            return Ok(());
        }
        let sorted = sort_table(t, order)?;
        self.insert(sorted);
        Ok(())
    }
}
