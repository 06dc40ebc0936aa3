//! Lloyd's k-means with k-means++ seeding.

use rand::Rng;

use crate::error::{Error, Result};
use crate::vector::{mean, sq_dist};

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    /// Cluster index per input point.
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
}

impl Clustering {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    /// Within-cluster sum of squared distances.
    pub fn inertia(&self, points: &[Vec<f64>]) -> f64 {
        points
            .iter()
            .zip(&self.assignments)
            .map(|(p, &c)| sq_dist(p, &self.centroids[c]))
            .sum()
    }
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn seed_plus_plus<R: Rng + ?Sized>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if *d > 0.0 && u < *d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            // all remaining points coincide with a centre
            (0..n).find(|i| !chosen.contains(i)).expect("k < n")
        };
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &points[next]));
        }
    }
    chosen.into_iter().map(|i| points[i].clone()).collect()
}

/// Clusters `points` into `k` groups. When `k >= points.len()` every point is
/// its own cluster and the surplus clusters are dropped.
pub fn kmeans_cluster<R: Rng + ?Sized>(points: &[Vec<f64>], k: usize, iters: usize, rng: &mut R) -> Result<Clustering> {
    if points.is_empty() {
        return Err(Error::invalid("cannot cluster an empty point set"));
    }
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let n = points.len();
    if k >= n {
        return Ok(Clustering {
            assignments: (0..n).collect(),
            centroids: points.to_vec(),
        });
    }

    let mut centroids = seed_plus_plus(points, k, rng);
    let mut assignments: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
    for _ in 0..iters.max(1) {
        let mut members: Vec<Vec<Vec<f64>>> = vec![Vec::new(); k];
        for (p, &c) in points.iter().zip(&assignments) {
            members[c].push(p.clone());
        }
        for c in 0..k {
            if members[c].is_empty() {
                // reseed to the point farthest from its current centre
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = sq_dist(&points[a], &centroids[assignments[a]]);
                        let db = sq_dist(&points[b], &centroids[assignments[b]]);
                        da.total_cmp(&db).then(b.cmp(&a))
                    })
                    .expect("non-empty");
                centroids[c] = points[far].clone();
                assignments[far] = c;
            } else {
                centroids[c] = mean(&members[c]);
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
        if next == assignments {
            break;
        }
        assignments = next;
    }

    // drop clusters that ended up empty (only possible with duplicate points)
    let mut remap: Vec<Option<usize>> = vec![None; k];
    let mut kept = 0;
    for &c in &assignments {
        if remap[c].is_none() {
            remap[c] = Some(kept);
            kept += 1;
        }
    }
    let assignments: Vec<usize> = assignments.iter().map(|&c| remap[c].expect("assigned")).collect();
    let mut members: Vec<Vec<Vec<f64>>> = vec![Vec::new(); kept];
    for (p, &c) in points.iter().zip(&assignments) {
        members[c].push(p.clone());
    }
    Ok(Clustering {
        assignments,
        centroids: members.iter().map(|m| mean(m)).collect(),
    })
}
