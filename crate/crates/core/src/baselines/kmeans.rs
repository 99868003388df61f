//! Lloyd's k-means with k-means++ seeding.

use crate::error::{Error, Result};
use crate::scalar::Real;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult<T> {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<T>>,
    pub inertia: T,
    pub iterations: usize,
}

fn sq_dist<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

fn nearest<T: Real>(x: &[T], centroids: &[Vec<T>]) -> (usize, T) {
    let mut best = (0, sq_dist(x, &centroids[0]));
    for (c, m) in centroids.iter().enumerate().skip(1) {
        let d = sq_dist(x, m);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Columns rescaled to zero mean and unit variance; constant columns become 0.
pub fn standardize_columns<T: Real>(x: &[Vec<T>]) -> Vec<Vec<T>> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let d = x[0].len();
    let nf = T::from_usize(n).unwrap();
    let mut out = x.to_vec();
    for j in 0..d {
        let mu = x.iter().map(|r| r[j]).sum::<T>() / nf;
        let var = x.iter().map(|r| (r[j] - mu) * (r[j] - mu)).sum::<T>() / nf;
        let sd = var.sqrt();
        for r in &mut out {
            r[j] = if sd > T::zero() { (r[j] - mu) / sd } else { T::zero() };
        }
    }
    out
}

fn seed_plus_plus<T: Real>(x: &[Vec<T>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<T>> {
    let n = x.len();
    let mut centroids = vec![x[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = x.iter().map(|p| sq_dist(p, &centroids[0]).as_f64()).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let r = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if d > 0.0 && r < acc {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.push(x[pick].clone());
        for (i, p) in x.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &centroids[centroids.len() - 1]).as_f64());
        }
    }
    centroids
}

/// Clusters the rows of `x`. Empty clusters are repaired by moving in the
/// point farthest from its centroid (taken from a cluster with at least two
/// members). Stops when labels repeat, the inertia change is at most 1e-9,
/// or after `max_iters` Lloyd steps.
pub fn kmeans<T: Real>(x: &[Vec<T>], k: usize, seed: u64, max_iters: usize) -> Result<KMeansResult<T>> {
    let n = x.len();
    if k == 0 || k > n {
        return Err(Error::InvalidConfig(format!("k-means needs 1 <= K <= N, got K={k}, N={n}")));
    }
    let d = x[0].len();
    if x.iter().any(|r| r.len() != d) {
        return Err(Error::DimensionMismatch("feature rows differ in length".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_plus_plus(x, k, &mut rng);
    let mut labels = vec![usize::MAX; n];
    let mut inertia = T::infinity();
    let mut iterations = 0;
    for it in 1..=max_iters.max(1) {
        iterations = it;
        let mut next = Vec::with_capacity(n);
        let mut dist = Vec::with_capacity(n);
        for p in x {
            let (c, dd) = nearest(p, &centroids);
            next.push(c);
            dist.push(dd);
        }
        let mut sizes = vec![0usize; k];
        for &c in &next {
            sizes[c] += 1;
        }
        for c in 0..k {
            if sizes[c] > 0 {
                continue;
            }
            let mut far: Option<usize> = None;
            for i in 0..n {
                if sizes[next[i]] > 1 && far.is_none_or(|f| dist[i] > dist[f]) {
                    far = Some(i);
                }
            }
            let i = far.expect("K <= N leaves a cluster with two or more members");
            sizes[next[i]] -= 1;
            next[i] = c;
            sizes[c] = 1;
            dist[i] = T::zero();
        }
        for (c, m) in centroids.iter_mut().enumerate() {
            let cnt = T::from_usize(sizes[c]).unwrap();
            m.iter_mut().for_each(|v| *v = T::zero());
            for (i, p) in x.iter().enumerate() {
                if next[i] == c {
                    for (a, &b) in m.iter_mut().zip(p) {
                        *a += b;
                    }
                }
            }
            m.iter_mut().for_each(|v| *v /= cnt);
        }
        let new_inertia: T = x.iter().zip(&next).map(|(p, &c)| sq_dist(p, &centroids[c])).sum();
        let stable = next == labels || (inertia - new_inertia).abs().as_f64() <= TOL;
        labels = next;
        inertia = new_inertia;
        if stable {
            break;
        }
    }
    Ok(KMeansResult { labels, centroids, inertia, iterations })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_equals_n_gives_zero_inertia() {
        let x: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let r = kmeans(&x, 5, 3, 100).unwrap();
        let mut l = r.labels.clone();
        l.sort();
        assert_eq!(l, vec![0, 1, 2, 3, 4]);
        assert_eq!(r.inertia, 0.0);
    }

    #[test]
    fn identical_points_repair_to_singleton() {
        let x = vec![vec![1.0f64, 1.0]; 6];
        let r = kmeans(&x, 2, 0, 100).unwrap();
        let ones = r.labels.iter().filter(|&&c| c == 1).count();
        assert_eq!(ones.min(6 - ones), 1);
        assert_eq!(r.inertia, 0.0);
    }

    #[test]
    fn too_many_clusters_is_an_error() {
        assert!(kmeans(&[vec![0.0f64]], 2, 0, 10).is_err());
    }

    #[test]
    fn standardized_columns_have_unit_variance() {
        let x = vec![vec![1.0f64, 5.0], vec![3.0, 5.0], vec![5.0, 5.0]];
        let z = standardize_columns(&x);
        let m: f64 = z.iter().map(|r| r[0]).sum::<f64>() / 3.0;
        let v: f64 = z.iter().map(|r| r[0] * r[0]).sum::<f64>() / 3.0;
        assert!(m.abs() < 1e-15 && (v - 1.0).abs() < 1e-12);
        assert!(z.iter().all(|r| r[1] == 0.0));
    }
}
