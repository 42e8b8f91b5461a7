//! Seeded k-means over response embeddings, with frequency-based topic
//! labels per cluster.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::text::clean_token;
use crate::vecmath::l2_distance;

/// English stop-word list (179 words) excluded from cluster labels.
pub const STOPWORDS: &str = include_str!("../../assets/stopwords.txt");

pub fn stopword_set() -> std::collections::BTreeSet<&'static str> {
    STOPWORDS.lines().map(str::trim).filter(|l| !l.is_empty()).collect()
}

/// K-means parameters: k-means++ initialization, 10 restarts keeping the
/// lowest inertia, at most 100 iterations each, all seeded.
#[derive(Debug, Clone, Copy)]
pub struct KMeansParams {
    pub k: usize,
    pub max_iterations: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl KMeansParams {
    pub fn new(k: usize, seed: u64) -> Self {
        KMeansParams {
            k,
            max_iterations: 100,
            restarts: 10,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Sum of squared distances to assigned centroids.
    pub inertia: f64,
}

/// Nearest centroid by L2; ties break to the lowest cluster index.
pub fn nearest_centroid(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = 0usize;
    let mut best_distance = f64::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let d = l2_distance(point, c);
        if d < best_distance {
            best = i;
            best_distance = d;
        }
    }
    (best, best_distance)
}

fn kmeans_once(points: &[Vec<f64>], k: usize, max_iterations: usize, rng: &mut ChaCha8Rng) -> KMeansFit {
    let n = points.len();
    let dim = points[0].len();

    // k-means++ seeding
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(points[rng.gen_range(0..n)].clone());
    while centroids.len() < k {
        let weights: Vec<f64> = points
            .iter()
            .map(|p| {
                let (_, d) = nearest_centroid(p, &centroids);
                d * d
            })
            .collect();
        let total: f64 = weights.iter().sum();
        let next = if total > 0.0 {
            WeightedIndex::new(&weights).expect("positive weights").sample(rng)
        } else {
            rng.gen_range(0..n)
        };
        centroids.push(points[next].clone());
    }

    let mut assignments = vec![0usize; n];
    for _ in 0..max_iterations {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let (best, _) = nearest_centroid(p, &centroids);
            if assignments[i] != best {
                assignments[i] = best;
                changed = true;
            }
        }
        // recompute centroids; an empty cluster takes the point farthest
        // from its current centroid
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter().enumerate() {
            counts[assignments[i]] += 1;
            for (acc, x) in sums[assignments[i]].iter_mut().zip(p) {
                *acc += x;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let farthest = (0..n)
                    .max_by(|&a, &b| {
                        let da = l2_distance(&points[a], &centroids[assignments[a]]);
                        let db = l2_distance(&points[b], &centroids[assignments[b]]);
                        da.partial_cmp(&db).unwrap()
                    })
                    .expect("non-empty points");
                centroids[c] = points[farthest].clone();
                assignments[farthest] = c;
                changed = true;
            } else {
                for (j, acc) in sums[c].iter().enumerate() {
                    centroids[c][j] = acc / counts[c] as f64;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let inertia = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let d = l2_distance(p, &centroids[assignments[i]]);
            d * d
        })
        .sum();
    KMeansFit {
        centroids,
        assignments,
        inertia,
    }
}

/// Fit k-means with restarts, keeping the lowest-inertia fit.
pub fn kmeans(points: &[Vec<f64>], params: &KMeansParams) -> KMeansFit {
    assert!(params.k >= 1 && points.len() >= params.k);
    let mut best: Option<KMeansFit> = None;
    for restart in 0..params.restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed.wrapping_add(restart as u64));
        let fit = kmeans_once(points, params.k, params.max_iterations, &mut rng);
        if best.as_ref().map_or(true, |b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    best.expect("at least one restart")
}

/// One group's fitted clusters with topic labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    /// Value of the segregation column this model belongs to.
    pub segregation_value: String,
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    /// Top terms per cluster, highest frequency first.
    pub labels: Vec<Vec<String>>,
    pub inertia: f64,
}

impl ClusterModel {
    pub fn label_text(&self, cluster: usize) -> String {
        self.labels[cluster].join("/")
    }
}

/// Label each cluster with the 3 most frequent non-stop-word terms among the
/// member sentences lying within the median point-to-centroid radius.
pub fn label_clusters(
    sentences: &[String],
    embeddings: &[Vec<f64>],
    fit: &KMeansFit,
) -> Vec<Vec<String>> {
    let stopwords = stopword_set();
    let mut labels = Vec::with_capacity(fit.centroids.len());
    for cluster in 0..fit.centroids.len() {
        let member_distances: Vec<(usize, f64)> = (0..sentences.len())
            .filter(|&i| fit.assignments[i] == cluster)
            .map(|i| (i, l2_distance(&embeddings[i], &fit.centroids[cluster])))
            .collect();
        let mut sorted: Vec<f64> = member_distances.iter().map(|(_, d)| *d).collect();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let radius = if sorted.is_empty() {
            0.0
        } else {
            crate::diagnoser::stats::quantile(&sorted, 0.5)
        };

        let count_terms = |indices: &[usize]| {
            let mut counts: std::collections::BTreeMap<String, usize> =
                std::collections::BTreeMap::new();
            for &i in indices {
                for token in sentences[i].split_whitespace() {
                    if let Some(term) = clean_token(token) {
                        if !stopwords.contains(term.as_str()) {
                            *counts.entry(term).or_insert(0) += 1;
                        }
                    }
                }
            }
            let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
            ranked.sort_by(|(ta, ca), (tb, cb)| cb.cmp(ca).then_with(|| ta.cmp(tb)));
            ranked.into_iter().take(3).map(|(t, _)| t).collect::<Vec<_>>()
        };

        let within: Vec<usize> = member_distances
            .iter()
            .filter(|(_, d)| *d <= radius)
            .map(|(i, _)| *i)
            .collect();
        let mut label = count_terms(&within);
        if label.is_empty() {
            let all: Vec<usize> = member_distances.iter().map(|(i, _)| *i).collect();
            label = count_terms(&all);
        }
        if label.is_empty() {
            label.push(format!("cluster_{cluster}"));
        }
        labels.push(label);
    }
    labels
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stopword_list_has_179_entries() {
        assert_eq!(stopword_set().len(), 179);
    }

    #[test]
    fn k_one_centroid_is_the_mean() {
        let points = vec![
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 1.0],
        ];
        let fit = kmeans(&points, &KMeansParams::new(1, 42));
        assert!((fit.centroids[0][0] - 0.5).abs() < 1e-9);
        assert!((fit.centroids[0][1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn two_cloud_fixture_matches_nearest_centroid_assignment() {
        let points = vec![
            vec![0.0, 0.0],
            vec![0.1, 0.0],
            vec![0.0, 0.1],
            vec![5.0, 5.0],
            vec![5.1, 5.0],
            vec![5.0, 5.1],
        ];
        let fit = kmeans(&points, &KMeansParams::new(2, 42));
        // brute-force nearest-centroid check
        for (i, p) in points.iter().enumerate() {
            let (expect, _) = nearest_centroid(p, &fit.centroids);
            assert_eq!(fit.assignments[i], expect);
        }
        // the clouds separate
        assert_eq!(fit.assignments[0], fit.assignments[1]);
        assert_eq!(fit.assignments[0], fit.assignments[2]);
        assert_eq!(fit.assignments[3], fit.assignments[4]);
        assert_ne!(fit.assignments[0], fit.assignments[3]);
    }

    #[test]
    fn fixed_seed_is_bit_reproducible() {
        let points: Vec<Vec<f64>> = (0..30)
            .map(|i| vec![(i % 7) as f64 * 0.31, (i % 5) as f64 * 0.17])
            .collect();
        let a = kmeans(&points, &KMeansParams::new(3, 7));
        let b = kmeans(&points, &KMeansParams::new(3, 7));
        assert_eq!(a.centroids, b.centroids);
        assert_eq!(a.assignments, b.assignments);
        assert_eq!(a.inertia.to_bits(), b.inertia.to_bits());
    }

    #[test]
    fn labels_skip_stopwords_and_rank_by_frequency() {
        let sentences = vec![
            "the hydro dam powers the whole region".to_string(),
            "the hydro plant near the dam".to_string(),
            "a dam for hydro power".to_string(),
        ];
        let embeddings = vec![vec![0.0, 0.0], vec![0.1, 0.0], vec![0.0, 0.1]];
        let fit = kmeans(&embeddings, &KMeansParams::new(1, 1));
        let labels = label_clusters(&sentences, &embeddings, &fit);
        assert_eq!(labels.len(), 1);
        assert!(labels[0].contains(&"dam".to_string()) || labels[0].contains(&"hydro".to_string()));
        assert!(!labels[0].contains(&"the".to_string()));
    }
}
