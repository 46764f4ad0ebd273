//! Spherical k-means (cosine assignment, normalized-mean update) with
//! k-means++ seeding.

use alloc::vec;
use alloc::vec::Vec;
#[cfg(not(any(feature = "std", test)))]
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;

use crate::rng::seeded;

pub const MAX_ITERATIONS: usize = 50;
pub const SHIFT_TOLERANCE: f64 = 1e-4;

/// Row-major `n x dim` data; rows are unit length.
pub(crate) struct Rows<'a> {
    pub data: &'a [f64],
    pub dim: usize,
}

impl Rows<'_> {
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Index of the most similar centroid; ties go to the lower index.
pub(crate) fn nearest(centroids: &[Vec<f64>], v: &[f64]) -> usize {
    let mut best = 0;
    let mut best_sim = f64::NEG_INFINITY;
    for (c, centroid) in centroids.iter().enumerate() {
        let s = dot(centroid, v);
        if s > best_sim {
            best = c;
            best_sim = s;
        }
    }
    best
}

fn normalize_in_place(v: &mut [f64]) -> bool {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 || !n.is_finite() {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= n);
    true
}

fn plus_plus_init(rows: &Rows<'_>, k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = seeded(seed);
    let n = rows.len();
    let mut centroids = Vec::with_capacity(k);
    centroids.push(rows.row(rng.random_range(0..n)).to_vec());
    // squared Euclidean distance between unit vectors is 2 - 2cos
    let mut d2: Vec<f64> = (0..n)
        .map(|i| (2.0 - 2.0 * dot(&centroids[0], rows.row(i))).max(0.0))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total <= 0.0 {
            rng.random_range(0..n)
        } else {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        };
        let c = rows.row(pick).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min((2.0 - 2.0 * dot(&c, rows.row(i))).max(0.0));
        }
        centroids.push(c);
    }
    centroids
}

/// Runs Lloyd iterations until the largest centroid move drops below
/// [`SHIFT_TOLERANCE`] or [`MAX_ITERATIONS`] is reached. `k` must not exceed
/// the row count.
pub(crate) fn spherical_kmeans(rows: &Rows<'_>, k: usize, seed: u64) -> Vec<Vec<f64>> {
    debug_assert!(k >= 1 && k <= rows.len());
    let dim = rows.dim;
    let mut centroids = plus_plus_init(rows, k, seed);
    let mut assign = vec![0usize; rows.len()];
    for _ in 0..MAX_ITERATIONS {
        for (i, a) in assign.iter_mut().enumerate() {
            *a = nearest(&centroids, rows.row(i));
        }
        let mut sums = vec![vec![0.0f64; dim]; k];
        for (i, &a) in assign.iter().enumerate() {
            for (s, x) in sums[a].iter_mut().zip(rows.row(i)) {
                *s += x;
            }
        }
        let mut shift = 0.0f64;
        for (c, mut sum) in sums.into_iter().enumerate() {
            // empty or degenerate clusters keep their previous centroid
            if !normalize_in_place(&mut sum) {
                continue;
            }
            let moved = sum
                .iter()
                .zip(&centroids[c])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            shift = shift.max(moved);
            centroids[c] = sum;
        }
        if shift < SHIFT_TOLERANCE {
            break;
        }
    }
    centroids
}
