//! Small dense-vector helpers shared across modules.
//!
//! Everything operates on `&[f64]` slices with plain ascending loops so
//! results are bit-reproducible across runs.

use crate::error::{Error, Result};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for i in 0..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

pub fn l2_norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity; errors on a zero-norm operand.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dimension(format!(
            "cosine: {} vs {} entries",
            a.len(),
            b.len()
        )));
    }
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::invalid("cosine of a zero-norm vector"));
    }
    Ok(dot(a, b) / (na * nb))
}

/// Mean of each coordinate over a set of equal-length vectors.
pub fn mean_vector(rows: &[Vec<f64>]) -> Vec<f64> {
    assert!(!rows.is_empty());
    let dim = rows[0].len();
    let mut out = vec![0.0; dim];
    for row in rows {
        for (o, v) in out.iter_mut().zip(row.iter()) {
            *o += v;
        }
    }
    let inv = 1.0 / rows.len() as f64;
    for o in &mut out {
        *o *= inv;
    }
    out
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for i in 0..a.len() {
        let d = a[i] - b[i];
        acc += d * d;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_of_parallel_vectors_is_one() {
        let v = vec![1.0, 2.0, 3.0];
        let w = vec![2.0, 4.0, 6.0];
        assert!((cosine(&v, &w).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cosine_rejects_zero_vector() {
        assert!(cosine(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn mean_vector_averages_componentwise() {
        let rows = vec![vec![1.0, 1.0], vec![3.0, 3.0]];
        assert_eq!(mean_vector(&rows), vec![2.0, 2.0]);
    }
}
