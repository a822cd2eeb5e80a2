//! Deterministic seeded k-means.
//!
//! Used both for building the knowledge matrix from attribute-model
//! embeddings and for clustering the prototype bank. k-means++ seeding
//! with an explicit RNG seed, a fixed iteration cap, and a relative SSE
//! convergence tolerance; the same seed always yields bitwise-identical
//! centers.

use rand::Rng;

use crate::error::{Error, Result};
use crate::math::squared_distance;
use crate::rng::seeded_rng;

pub const MAX_ITERATIONS: usize = 300;
pub const SSE_RELATIVE_TOLERANCE: f64 = 1e-8;

/// Clusters `points` into `k` centers. Preconditions: `k >= 1` and at
/// least `k` points, all sharing one dimension.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if k == 0 {
        return Err(Error::invalid("k-means requires k >= 1"));
    }
    if points.len() < k {
        return Err(Error::invalid(format!(
            "k-means requires at least {} points, got {}",
            k,
            points.len()
        )));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::dimension("k-means points differ in dimension"));
    }

    // K=1 is exactly the arithmetic mean; skip seeding noise.
    if k == 1 {
        return Ok(vec![crate::math::mean_vector(points)]);
    }

    let mut rng = seeded_rng(seed);
    let mut centers = plus_plus_init(points, k, &mut rng);
    let mut assignment = vec![0usize; points.len()];
    let mut prev_sse = f64::INFINITY;

    for _ in 0..MAX_ITERATIONS {
        // Assignment step; ties go to the lowest center index.
        let mut sse = 0.0;
        for (i, p) in points.iter().enumerate() {
            let mut best = 0usize;
            let mut best_d = squared_distance(p, &centers[0]);
            for (c, center) in centers.iter().enumerate().skip(1) {
                let d = squared_distance(p, center);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            assignment[i] = best;
            sse += best_d;
        }

        // Update step.
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter().enumerate() {
            counts[assignment[i]] += 1;
            for (s, v) in sums[assignment[i]].iter_mut().zip(p.iter()) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // Reseed an emptied cluster at the point farthest from its
                // current center; deterministic (first max wins).
                let far = farthest_point(points, &centers);
                centers[c] = points[far].clone();
            } else {
                let inv = 1.0 / counts[c] as f64;
                for (dst, s) in centers[c].iter_mut().zip(sums[c].iter()) {
                    *dst = s * inv;
                }
            }
        }

        if prev_sse.is_finite() {
            let denom = prev_sse.max(f64::MIN_POSITIVE);
            if (prev_sse - sse).abs() / denom < SSE_RELATIVE_TOLERANCE {
                break;
            }
        }
        prev_sse = sse;
    }

    Ok(centers)
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(points[rng.gen_range(0..points.len())].clone());
    let mut dists: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &centers[0]))
        .collect();
    while centers.len() < k {
        let total: f64 = dists.iter().sum();
        let next = if total <= 0.0 {
            // All remaining points coincide with existing centers.
            rng.gen_range(0..points.len())
        } else {
            let mut target = rng.gen_range(0.0..total);
            let mut chosen = points.len() - 1;
            for (i, d) in dists.iter().enumerate() {
                if target < *d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        };
        centers.push(points[next].clone());
        for (i, p) in points.iter().enumerate() {
            let d = squared_distance(p, centers.last().unwrap());
            if d < dists[i] {
                dists[i] = d;
            }
        }
    }
    centers
}

fn farthest_point(points: &[Vec<f64>], centers: &[Vec<f64>]) -> usize {
    let mut best = 0usize;
    let mut best_d = -1.0;
    for (i, p) in points.iter().enumerate() {
        let d = centers
            .iter()
            .map(|c| squared_distance(p, c))
            .fold(f64::INFINITY, f64::min);
        if d > best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Total within-cluster squared error of `points` against `centers`.
pub fn sse(points: &[Vec<f64>], centers: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .map(|p| {
            centers
                .iter()
                .map(|c| squared_distance(p, c))
                .fold(f64::INFINITY, f64::min)
        })
        .sum()
}
