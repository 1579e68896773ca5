use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

const MAX_ITER: usize = 100;

/// Rescales every column to zero mean and unit variance. Constant columns
/// become all zeros.
pub fn standardize(features: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let Some(dim) = features.first().map(Vec::len) else {
        return Vec::new();
    };
    let n = features.len() as f64;
    let mut mean = vec![0.0; dim];
    for row in features {
        mean.iter_mut().zip(row).for_each(|(m, x)| *m += x / n);
    }
    let mut sd = vec![0.0; dim];
    for row in features {
        sd.iter_mut().zip(row).zip(&mean).for_each(|((s, x), m)| *s += (x - m).powi(2) / n);
    }
    sd.iter_mut().for_each(|s| *s = s.sqrt());
    features
        .iter()
        .map(|row| {
            row.iter()
                .zip(&mean)
                .zip(&sd)
                .map(|((x, m), s)| if *s > 1e-12 { (x - m) / s } else { 0.0 })
                .collect()
        })
        .collect()
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn nearest(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = dist2(point, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn seed_centers<R: Rng + ?Sized>(x: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centers = vec![x[rng.random_range(0..x.len())].clone()];
    let mut d: Vec<f64> = x.iter().map(|p| dist2(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d.iter().sum();
        let pick = if total > 0.0 {
            crate::lda::sample_categorical(&d, rng)
        } else {
            rng.random_range(0..x.len())
        };
        centers.push(x[pick].clone());
        let c = centers.last().expect("just pushed");
        d.iter_mut().zip(x).for_each(|(di, p)| *di = di.min(dist2(p, c)));
    }
    centers
}

/// k-means with k-means++ seeding on standardized features. Deterministic
/// for a given seed; clusters that empty out are re-seeded at the point
/// farthest from its current center.
pub fn kmeans_cluster(features: &[Vec<f64>], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::Cluster("k must be >= 1".into()));
    }
    if features.len() < k {
        return Err(Error::Cluster(format!(
            "cannot form {k} clusters from {} users",
            features.len()
        )));
    }
    let dim = features[0].len();
    if features.iter().any(|r| r.len() != dim || r.iter().any(|v| !v.is_finite())) {
        return Err(Error::Cluster("feature rows must share one length and be finite".into()));
    }
    let x = standardize(features);
    let mut r = rng::stream(seed, &[0xc1, 0]);
    let mut centers = seed_centers(&x, k, &mut r);
    let mut labels = vec![usize::MAX; x.len()];

    let mut dist = vec![0.0; x.len()];
    for _ in 0..MAX_ITER {
        let mut changed = false;
        for (i, p) in x.iter().enumerate() {
            let (c, d) = nearest(p, &centers);
            if labels[i] != c {
                labels[i] = c;
                changed = true;
            }
            dist[i] = d;
        }
        let mut counts = vec![0usize; k];
        labels.iter().for_each(|&c| counts[c] += 1);
        let mut reseeded = false;
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            // farthest point whose cluster can spare it
            let mut pick: Option<usize> = None;
            for i in 0..x.len() {
                if counts[labels[i]] > 1 && pick.is_none_or(|p| dist[i] > dist[p]) {
                    pick = Some(i);
                }
            }
            let i = pick.expect("more users than clusters");
            counts[labels[i]] -= 1;
            labels[i] = c;
            counts[c] = 1;
            dist[i] = -1.0;
            reseeded = true;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        for (p, &c) in x.iter().zip(&labels) {
            sums[c].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        for c in 0..k {
            centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
        }
        if !changed && !reseeded {
            break;
        }
    }
    Ok(labels)
}
