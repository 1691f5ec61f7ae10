use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::math::dist_sq;

pub const DEFAULT_MAX_ITER: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Inertia after each Lloyd iteration.
    pub inertia_history: Vec<f64>,
}

impl ClusterAssignment {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    /// Point indices in cluster `c`, ascending.
    pub fn members(&self, c: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == c).collect()
    }
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, centroid) in centroids.iter().enumerate() {
        let d = dist_sq(point, centroid);
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    best
}

fn plus_plus_seeds(points: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = points.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = points.iter().map(|p| dist_sq(p, points[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, w) in d2.iter().enumerate() {
                acc += w;
                if *w > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            pick.unwrap_or_else(|| d2.iter().rposition(|w| *w > 0.0).unwrap())
        } else {
            (0..n).find(|i| !chosen.contains(i)).unwrap()
        };
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(dist_sq(p, points[next]));
        }
    }
    chosen
}

fn means(points: &[&[f64]], labels: &[usize], k: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for (s, x) in sums[l].iter_mut().zip(p.iter()) {
            *s += x;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        for x in s.iter_mut() {
            *x /= c as f64;
        }
    }
    sums
}

fn inertia(points: &[&[f64]], labels: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points.iter().zip(labels).map(|(p, &l)| dist_sq(p, &centroids[l])).sum()
}

/// Give every empty cluster the point farthest from its current centroid,
/// taken from a cluster that still has more than one member. Returns whether
/// anything moved.
fn repair_empty(points: &[&[f64]], labels: &mut [usize], centroids: &mut [Vec<f64>]) -> bool {
    let k = centroids.len();
    let mut moved = false;
    loop {
        let mut counts = vec![0usize; k];
        for &l in labels.iter() {
            counts[l] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return moved;
        };
        let mut far = None;
        let mut far_d = -1.0;
        for (i, p) in points.iter().enumerate() {
            if counts[labels[i]] < 2 {
                continue;
            }
            let d = dist_sq(p, &centroids[labels[i]]);
            if d > far_d {
                far = Some(i);
                far_d = d;
            }
        }
        // k <= n guarantees a cluster with two or more members exists.
        let i = far.expect("an over-full cluster exists when one is empty");
        labels[i] = empty;
        centroids[empty] = points[i].to_vec();
        moved = true;
    }
}

/// Lloyd's algorithm with k-means++ seeding. Deterministic for a given seed;
/// ties in assignment go to the lowest cluster index.
pub fn kmeans<V: AsRef<[f64]>>(vectors: &[V], k: usize, seed: u64, max_iter: usize) -> Result<ClusterAssignment> {
    let points: Vec<&[f64]> = vectors.iter().map(AsRef::as_ref).collect();
    let n = points.len();
    if n == 0 {
        return Err(invalid("kmeans needs at least one vector"));
    }
    if k == 0 || k > n {
        return Err(invalid(format!("kmeans K={k} must be in 1..={n}")));
    }
    if max_iter == 0 {
        return Err(invalid("kmeans max_iter must be positive"));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(invalid("kmeans vectors differ in dimension"));
    }
    if points.iter().any(|p| p.iter().any(|x| !x.is_finite())) {
        return Err(invalid("kmeans vectors must be finite"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<Vec<f64>> = plus_plus_seeds(&points, k, &mut rng)
        .into_iter()
        .map(|i| points[i].to_vec())
        .collect();
    let mut labels: Vec<usize> = Vec::new();
    let mut history = Vec::new();
    for _ in 0..max_iter {
        let mut next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
        let repaired = repair_empty(&points, &mut next, &mut centroids);
        let stable = !repaired && next == labels;
        labels = next;
        centroids = means(&points, &labels, k, dim);
        history.push(inertia(&points, &labels, &centroids));
        if stable {
            break;
        }
    }
    Ok(ClusterAssignment {
        inertia: *history.last().unwrap(),
        labels,
        centroids,
        inertia_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn blobs() -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        for i in 0..6 {
            let j = i as f64 * 0.01;
            out.push(vec![j, -j]);
            out.push(vec![10.0 + j, 10.0 - j]);
        }
        out
    }

    #[test]
    fn k_equals_n_gives_singletons() {
        let pts = vec![vec![0.0], vec![1.0], vec![5.0], vec![5.5]];
        let a = kmeans(&pts, 4, 3, 20).unwrap();
        let mut labels = a.labels.clone();
        labels.sort();
        assert_eq!(labels, vec![0, 1, 2, 3]);
        assert_eq!(a.inertia, 0.0);
    }

    #[test]
    fn k_equals_n_with_duplicates_repairs_empties() {
        let pts = vec![vec![1.0], vec![1.0], vec![1.0]];
        let a = kmeans(&pts, 3, 0, 20).unwrap();
        for c in 0..3 {
            assert_eq!(a.members(c).len(), 1);
        }
        assert_eq!(a.inertia, 0.0);
    }

    #[test]
    fn separates_two_blobs() {
        let pts = blobs();
        for seed in 0..20 {
            let a = kmeans(&pts, 2, seed, 20).unwrap();
            for i in (0..pts.len()).step_by(2) {
                assert_eq!(a.labels[i], a.labels[0]);
                assert_eq!(a.labels[i + 1], a.labels[1]);
            }
            assert_ne!(a.labels[0], a.labels[1]);
        }
    }

    #[test]
    fn blob_partition_is_inertia_optimal() {
        // Brute force over all 2-partitions.
        let pts = blobs();
        let n = pts.len();
        let a = kmeans(&pts, 2, 7, 20).unwrap();
        let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
        let mut best = f64::INFINITY;
        for mask in 1u32..(1 << n) - 1 {
            let labels: Vec<usize> = (0..n).map(|i| (mask >> i & 1) as usize).collect();
            let c = means(&refs, &labels, 2, 2);
            best = best.min(inertia(&refs, &labels, &c));
        }
        assert!((a.inertia - best).abs() < 1e-9, "{} vs {best}", a.inertia);
    }

    #[test]
    fn k_one_centroid_is_mean() {
        let pts = vec![vec![1.0, 2.0], vec![3.0, -2.0], vec![-1.0, 6.0]];
        let a = kmeans(&pts, 1, 0, 20).unwrap();
        let mean = [1.0, 2.0];
        assert!((a.centroids[0][0] - mean[0]).abs() < 1e-12);
        assert!((a.centroids[0][1] - mean[1]).abs() < 1e-12);
        let total: f64 = pts.iter().map(|p| dist_sq(p, &mean)).sum();
        assert!((a.inertia - total).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_k() {
        let pts = vec![vec![0.0], vec![1.0]];
        assert!(kmeans(&pts, 3, 0, 20).is_err());
        assert!(kmeans(&pts, 0, 0, 20).is_err());
        assert!(kmeans::<Vec<f64>>(&[], 1, 0, 20).is_err());
    }

    fn point_set() -> impl Strategy<Value = (Vec<Vec<f64>>, usize)> {
        (1usize..5, 1usize..25).prop_flat_map(|(d, n)| {
            (
                proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, d), n),
                1..=n,
            )
        })
    }

    proptest! {
        #[test]
        fn invariants_hold((pts, k) in point_set(), seed in 0u64..1000) {
            let a = kmeans(&pts, k, seed, 20).unwrap();
            prop_assert_eq!(a.labels.len(), pts.len());
            prop_assert_eq!(a.centroids.len(), k);
            for c in 0..k {
                prop_assert!(!a.members(c).is_empty());
            }
            for w in a.inertia_history.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9, "{:?}", a.inertia_history);
            }
            let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
            let direct = inertia(&refs, &a.labels, &a.centroids);
            prop_assert!((direct - a.inertia).abs() < 1e-9);
            prop_assert_eq!(kmeans(&pts, k, seed, 20).unwrap(), a);
        }
    }
}
