//! PAM k-medoids: greedy BUILD followed by best-improvement SWAP.
//!
//! Ties break toward the lowest index everywhere, so the result is a pure
//! function of the distance matrix.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::dataset::TrajectoryDataset;
use super::schema::{SchemaAction, SCHEMA_DIM};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum KMedoidsError {
    #[error("k = {k} exceeds dataset size {n}")]
    KTooLarge { k: usize, n: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("k must be at least 1")]
    ZeroK,
}

/// Improvements smaller than this are treated as ties.
const EPS: f64 = 1e-12;

/// Dense symmetric distance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    d: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let v = f(i, j);
                d[i * n + j] = v;
                d[j * n + i] = v;
            }
        }
        Self { n, d }
    }

    pub fn euclidean<const D: usize>(points: &[[f64; D]]) -> Self {
        Self::from_fn(points.len(), |i, j| {
            points[i]
                .iter()
                .zip(points[j].iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }

    /// Sum over points of the distance to the nearest medoid.
    pub fn cost(&self, medoids: &[usize]) -> f64 {
        (0..self.n)
            .map(|p| {
                medoids
                    .iter()
                    .map(|&m| self.get(p, m))
                    .fold(f64::INFINITY, f64::min)
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PamResult {
    /// Dataset indices, in BUILD order with swaps applied in place.
    pub medoids: Vec<usize>,
    pub cost: f64,
    pub build_cost: f64,
    /// Cost after BUILD and after each accepted swap.
    pub cost_history: Vec<f64>,
}

pub fn pam(dist: &DistanceMatrix, k: usize) -> Result<PamResult, KMedoidsError> {
    let n = dist.len();
    if n == 0 {
        return Err(KMedoidsError::EmptyDataset);
    }
    if k == 0 {
        return Err(KMedoidsError::ZeroK);
    }
    if k > n {
        return Err(KMedoidsError::KTooLarge { k, n });
    }

    // BUILD: nearest[p] tracks the distance to the closest chosen medoid.
    let mut medoids = Vec::with_capacity(k);
    let mut is_medoid = vec![false; n];
    let mut nearest = vec![f64::INFINITY; n];
    for _ in 0..k {
        let mut best: Option<(f64, usize)> = None;
        for c in (0..n).filter(|&c| !is_medoid[c]) {
            let total: f64 = (0..n).map(|p| nearest[p].min(dist.get(p, c))).sum();
            if best.is_none_or(|(b, _)| total < b - EPS) {
                best = Some((total, c));
            }
        }
        let (_, c) = best.expect("k <= n leaves a candidate");
        medoids.push(c);
        is_medoid[c] = true;
        for (p, near) in nearest.iter_mut().enumerate() {
            *near = near.min(dist.get(p, c));
        }
    }
    let build_cost = dist.cost(&medoids);
    let mut cost = build_cost;
    let mut cost_history = vec![cost];

    // SWAP: apply the single best (medoid, non-medoid) exchange until none
    // lowers the total cost.
    loop {
        let (first, second) = nearest_two(dist, &medoids);
        let mut best: Option<(f64, usize, usize)> = None;
        for slot in 0..k {
            let m = medoids[slot];
            for h in (0..n).filter(|&h| !is_medoid[h]) {
                let mut delta = 0.0;
                for p in 0..n {
                    let dh = dist.get(p, h);
                    let (d1, owner) = first[p];
                    if owner == m {
                        delta += dh.min(second[p]) - d1;
                    } else if dh < d1 {
                        delta += dh - d1;
                    }
                }
                if delta < -EPS && best.is_none_or(|(b, _, _)| delta < b - EPS) {
                    best = Some((delta, slot, h));
                }
            }
        }
        let Some((_, slot, h)) = best else { break };
        is_medoid[medoids[slot]] = false;
        is_medoid[h] = true;
        medoids[slot] = h;
        let next = dist.cost(&medoids);
        debug_assert!(next <= cost + 1e-9);
        cost = next;
        cost_history.push(cost);
    }
    Ok(PamResult {
        medoids,
        cost,
        build_cost,
        cost_history,
    })
}

/// Per point: (distance, index) of the nearest medoid and the distance to the
/// second nearest (infinite when k = 1).
fn nearest_two(dist: &DistanceMatrix, medoids: &[usize]) -> (Vec<(f64, usize)>, Vec<f64>) {
    let n = dist.len();
    let mut first = vec![(f64::INFINITY, usize::MAX); n];
    let mut second = vec![f64::INFINITY; n];
    for p in 0..n {
        for &m in medoids {
            let d = dist.get(p, m);
            if d < first[p].0 {
                second[p] = first[p].0;
                first[p] = (d, m);
            } else if d < second[p] {
                second[p] = d;
            }
        }
    }
    (first, second)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibraryProvenance {
    pub dataset_hash: String,
    pub dataset_size: usize,
    pub k: usize,
    pub seed: u64,
    pub cost: f64,
    pub build_cost: f64,
}

/// Discrete acquisition actions: medoids of the expert dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionLibrary {
    pub medoids: Vec<SchemaAction>,
    /// Dataset index of each medoid.
    pub medoid_indices: Vec<usize>,
    pub provenance: LibraryProvenance,
}

/// Number of library actions in the feeding system.
pub const NUM_ACTIONS: usize = 11;

impl ActionLibrary {
    pub fn len(&self) -> usize {
        self.medoids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.medoids.is_empty()
    }

    pub fn get(&self, arm: usize) -> Option<&SchemaAction> {
        self.medoids.get(arm)
    }

    /// Index of the medoid closest to `action` in normalized space.
    pub fn nearest(&self, action: &SchemaAction) -> usize {
        let u = action.normalized();
        let mut best = (f64::INFINITY, 0);
        for (i, m) in self.medoids.iter().enumerate() {
            let v = m.normalized();
            let d: f64 = (0..SCHEMA_DIM).map(|j| (u[j] - v[j]).powi(2)).sum();
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }
}

/// Cluster the dataset in box-normalized schema space. PAM is deterministic,
/// so `seed` is recorded for provenance only.
pub fn k_medoids(
    data: &TrajectoryDataset,
    k: usize,
    seed: u64,
) -> Result<ActionLibrary, KMedoidsError> {
    let dist = DistanceMatrix::euclidean(&data.normalized());
    let res = pam(&dist, k)?;
    Ok(ActionLibrary {
        medoids: res.medoids.iter().map(|&i| data.points[i].action).collect(),
        medoid_indices: res.medoids.clone(),
        provenance: LibraryProvenance {
            dataset_hash: data.hash(),
            dataset_size: data.len(),
            k,
            seed,
            cost: res.cost,
            build_cost: res.build_cost,
        },
    })
}
