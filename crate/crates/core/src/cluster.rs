//! k-means clustering of chunks by their feature vectors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::trajectory::{ChunkFeatures, FEATURE_LEN};

type Vector = [f64; FEATURE_LEN];

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    /// Cluster id of every chunk, indexed by chunk id.
    pub assignment: Vec<usize>,
    /// Centroid chunk of every cluster.
    pub centroids: Vec<usize>,
    /// Cluster means in normalized feature space.
    pub means: Vec<Vector>,
    pub norm_mean: Vector,
    pub norm_std: Vector,
    /// k-means objective after each assignment step.
    pub objective: Vec<f64>,
}

impl ClusterAssignment {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&c| self.assignment[c] == cluster)
            .collect()
    }

    pub fn normalize(&self, f: &ChunkFeatures) -> Vector {
        normalize(&f.0, &self.norm_mean, &self.norm_std)
    }

    /// Cluster whose mean is closest to `f`; ties go to the lower id.
    pub fn nearest_centroid(&self, f: &ChunkFeatures) -> usize {
        nearest(&self.normalize(f), &self.means)
    }
}

fn normalize(v: &Vector, mean: &Vector, std: &Vector) -> Vector {
    let mut out = [0.0; FEATURE_LEN];
    for i in 0..FEATURE_LEN {
        out[i] = if std[i] > 0.0 { (v[i] - mean[i]) / std[i] } else { 0.0 };
    }
    out
}

fn dist2(a: &Vector, b: &Vector) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(v: &Vector, means: &[Vector]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (i, m) in means.iter().enumerate() {
        let d = dist2(v, m);
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

/// Number of clusters needed for centroids to cover `coverage` of the chunks.
pub fn cluster_count(chunks: usize, coverage: f64) -> usize {
    ((coverage * chunks as f64).ceil() as usize).clamp(1, chunks.max(1))
}

/// Cluster chunks with k-means on z-normalized features.
///
/// Chunks are visited in a canonical order (sorted by feature vector) so the
/// resulting partition does not depend on chunk order.
pub fn cluster_chunks(features: &[ChunkFeatures], coverage: f64, seed: u64, max_iterations: u32) -> ClusterAssignment {
    let n = features.len();
    assert!(n > 0, "clustering needs at least one chunk");
    let k = cluster_count(n, coverage);

    // Sorting raw vectors gives the same order as sorting normalized ones,
    // and summing in that order keeps the statistics bit-identical under
    // any permutation of the input.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        features[a].0
            .iter()
            .zip(&features[b].0)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut norm_mean = [0.0; FEATURE_LEN];
    let mut norm_std = [0.0; FEATURE_LEN];
    for d in 0..FEATURE_LEN {
        let m = order.iter().map(|&i| features[i].0[d]).sum::<f64>() / n as f64;
        let var = order.iter().map(|&i| (features[i].0[d] - m).powi(2)).sum::<f64>() / n as f64;
        norm_mean[d] = m;
        norm_std[d] = var.sqrt();
    }
    let points: Vec<Vector> = features.iter().map(|f| normalize(&f.0, &norm_mean, &norm_std)).collect();
    let sorted: Vec<Vector> = order.iter().map(|&i| points[i]).collect();

    // k-means++ seeding.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<Vector> = vec![sorted[rng.gen_range(0..n)]];
    while centers.len() < k {
        let d: Vec<f64> = sorted
            .iter()
            .map(|p| centers.iter().map(|c| dist2(p, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d.iter().sum();
        if total <= 0.0 {
            centers.push(sorted[rng.gen_range(0..n)]);
            continue;
        }
        let mut target = rng.gen::<f64>() * total;
        let mut pick = n - 1;
        for (i, &w) in d.iter().enumerate() {
            if target < w {
                pick = i;
                break;
            }
            target -= w;
        }
        centers.push(sorted[pick]);
    }

    let mut labels = vec![usize::MAX; n];
    let mut objective = Vec::new();
    for _ in 0..max_iterations.max(1) {
        let next: Vec<usize> = sorted.iter().map(|p| nearest(p, &centers)).collect();
        objective.push(sorted.iter().zip(&next).map(|(p, &c)| dist2(p, &centers[c])).sum());
        let stable = next == labels;
        labels = next;
        if stable {
            break;
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&Vector> = sorted.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(p, _)| p).collect();
            if members.is_empty() {
                continue;
            }
            let mut m = [0.0; FEATURE_LEN];
            for p in &members {
                for d in 0..FEATURE_LEN {
                    m[d] += p[d];
                }
            }
            m.iter_mut().for_each(|v| *v /= members.len() as f64);
            *center = m;
        }
    }

    // Back to chunk order; clusters numbered by their lowest chunk id, empty
    // clusters dropped.
    let mut by_chunk = vec![0; n];
    for (s, &chunk) in order.iter().enumerate() {
        by_chunk[chunk] = labels[s];
    }
    let mut relabel: Vec<Option<usize>> = vec![None; k];
    let mut means = Vec::new();
    let mut assignment = vec![0; n];
    for chunk in 0..n {
        let old = by_chunk[chunk];
        let id = *relabel[old].get_or_insert_with(|| {
            means.push(centers[old]);
            means.len() - 1
        });
        assignment[chunk] = id;
    }
    let centroids = means
        .iter()
        .enumerate()
        .map(|(c, mean)| {
            let mut best = (f64::INFINITY, 0);
            for chunk in (0..n).filter(|&i| assignment[i] == c) {
                let d = dist2(&points[chunk], mean);
                if d < best.0 {
                    best = (d, chunk);
                }
            }
            best.1
        })
        .collect();
    ClusterAssignment {
        assignment,
        centroids,
        means,
        norm_mean,
        norm_std,
        objective,
    }
}
