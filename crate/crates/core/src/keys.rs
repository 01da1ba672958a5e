//! Order-preserving i64 encoding of cell values.
//!
//! Every cell of a table, whatever its column type, maps to an `i64` key such
//! that comparing keys is equivalent to comparing the underlying values. All
//! sorting, range scans, group-by hashing, and selection conditions work in
//! key space; the numeric value is decoded only when a UDAF needs it.

/// A literal value as written in a query or config, before it is bound to a
/// column type.
#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Int(i64),
    Float(f64),
    Str(String),
}

impl Literal {
    pub fn parse(text: &str) -> Literal {
        if let Ok(i) = text.parse::<i64>() {
            Literal::Int(i)
        } else if let Ok(f) = text.parse::<f64>() {
            Literal::Float(f)
        } else {
            Literal::Str(text.to_string())
        }
    }
}

impl std::fmt::Display for Literal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Literal::Int(v) => write!(f, "{v}"),
            Literal::Float(v) => write!(f, "{v}"),
            Literal::Str(v) => write!(f, "{v}"),
        }
    }
}

/// Encode an f64 into an i64 whose signed order matches numeric order.
/// `-0.0` must be normalized to `0.0` by the caller; NaN is rejected upstream.
pub fn encode_key(v: f64) -> i64 {
    let bits = v.to_bits();
    let ordered = if bits >> 63 == 1 { !bits } else { bits ^ (1 << 63) };
    (ordered ^ (1 << 63)) as i64
}

/// Inverse of [`encode_key`].
pub fn decode_key(k: i64) -> f64 {
    let ordered = (k as u64) ^ (1 << 63);
    let bits = if ordered >> 63 == 1 { ordered ^ (1 << 63) } else { !ordered };
    f64::from_bits(bits)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_key_order_matches_value_order() {
        let samples = [
            f64::NEG_INFINITY,
            -1e300,
            -2.5,
            -1.0,
            -1e-300,
            0.0,
            1e-300,
            0.5,
            1.0,
            2.5,
            1e300,
            f64::INFINITY,
        ];
        for (i, a) in samples.iter().enumerate() {
            for b in &samples[i + 1..] {
                assert!(encode_key(*a) < encode_key(*b), "{a} vs {b}");
            }
            assert_eq!(decode_key(encode_key(*a)), *a);
        }
    }

    #[test]
    fn zero_is_canonical() {
        assert_eq!(encode_key(0.0), encode_key(-0.0 + 0.0));
    }
}
