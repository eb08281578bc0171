use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DistanceMatrix;
use crate::error::{Error, Result};

const RESTARTS: usize = 50;
const MAX_LLOYD: usize = 300;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterMethod {
    /// K-means on a classical MDS embedding of the distances.
    #[default]
    Kmeans,
    /// K-medoids directly on the distances.
    Kmedoids,
}

/// Points in `dim` dimensions, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    pub dim: usize,
    pub coords: Vec<f64>,
}

impl Embedding {
    fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Clustering {
    pub labels: BTreeMap<String, usize>,
    pub inertia: f64,
    /// Embedding dimension actually used (k-means only).
    pub embed_dim: Option<usize>,
}

/// Classical (Torgerson) MDS. Soft-DTW distances can be negative and carry a
/// nonzero self-distance, so off-diagonal entries are shifted to make the
/// smallest one zero and the diagonal is zeroed first. The dimension drops
/// to the number of clearly positive eigenvalues if that is smaller.
pub fn classical_mds(d: &DistanceMatrix, dim: usize) -> Result<Embedding> {
    let n = d.len();
    if n == 0 || dim == 0 {
        return Err(Error::invalid("MDS needs at least one region and dimension"));
    }
    let mut min_off = f64::INFINITY;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                min_off = min_off.min(d.get(i, j));
            }
        }
    }
    let shift = if min_off.is_finite() && min_off < 0.0 { -min_off } else { 0.0 };
    let mut sq = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let v = d.get(i, j) + shift;
                sq[(i, j)] = v * v;
            }
        }
    }
    let row_mean: Vec<f64> = (0..n).map(|i| sq.row(i).sum() / n as f64).collect();
    let grand = row_mean.iter().sum::<f64>() / n as f64;
    let b = DMatrix::from_fn(n, n, |i, j| -0.5 * (sq[(i, j)] - row_mean[i] - row_mean[j] + grand));
    let eig = SymmetricEigen::new(b);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &c| eig.eigenvalues[c].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&c)));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let keep: Vec<usize> = order
        .into_iter()
        .filter(|&k| eig.eigenvalues[k] > 1e-10 * top.max(1e-300))
        .take(dim)
        .collect();
    let used = keep.len().max(1);
    if keep.len() < dim {
        log::warn!("MDS embedding reduced from {dim} to {used} dimension(s)");
    }
    let mut coords = vec![0.0; n * used];
    for (c, &k) in keep.iter().enumerate() {
        let s = eig.eigenvalues[k].sqrt();
        // Fix the eigenvector sign so the embedding is reproducible.
        let v = eig.eigenvectors.column(k);
        let mut pivot = 0;
        for i in 0..n {
            if v[i].abs() > v[pivot].abs() + 1e-12 {
                pivot = i;
            }
        }
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            coords[i * used + c] = sign * v[i] * s;
        }
    }
    Ok(Embedding { dim: used, coords })
}

fn sqdist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Draw an index with probability proportional to `w`; uniform if all zero.
fn weighted_pick(rng: &mut ChaCha8Rng, w: &[f64]) -> usize {
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return rng.random_range(0..w.len());
    }
    let mut u = rng.random::<f64>() * total;
    for (i, &x) in w.iter().enumerate() {
        if u < x {
            return i;
        }
        u -= x;
    }
    w.iter().rposition(|&x| x > 0.0).unwrap_or(0)
}

/// Initial centre indices by k-means++ seeding on an arbitrary dissimilarity.
fn plus_plus(rng: &mut ChaCha8Rng, n: usize, k: usize, dist: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    let mut centres = vec![rng.random_range(0..n)];
    let mut best: Vec<f64> = (0..n).map(|i| dist(i, centres[0])).collect();
    while centres.len() < k {
        let c = weighted_pick(rng, &best);
        centres.push(c);
        for i in 0..n {
            best[i] = best[i].min(dist(i, c));
        }
    }
    centres
}

fn lloyd(e: &Embedding, n: usize, k: usize, init: &[usize]) -> (Vec<usize>, f64) {
    let dim = e.dim;
    let mut centres: Vec<f64> = init.iter().flat_map(|&i| e.point(i).to_vec()).collect();
    let mut labels = vec![usize::MAX; n];
    for _ in 0..MAX_LLOYD {
        let mut changed = false;
        for (i, label) in labels.iter_mut().enumerate() {
            let p = e.point(i);
            let mut bc = 0;
            let mut bd = f64::INFINITY;
            for c in 0..k {
                let d = sqdist(p, &centres[c * dim..(c + 1) * dim]);
                if d < bd {
                    bd = d;
                    bc = c;
                }
            }
            if *label != bc {
                *label = bc;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[labels[i]] += 1;
            for (s, x) in sums[labels[i] * dim..(labels[i] + 1) * dim].iter_mut().zip(e.point(i)) {
                *s += x;
            }
        }
        for c in 0..k {
            // An emptied cluster keeps its previous centre.
            if counts[c] > 0 {
                for t in 0..dim {
                    centres[c * dim + t] = sums[c * dim + t] / counts[c] as f64;
                }
            }
        }
    }
    let inertia = (0..n)
        .map(|i| sqdist(e.point(i), &centres[labels[i] * dim..(labels[i] + 1) * dim]))
        .sum();
    (labels, inertia)
}

fn medoids(d: &DistanceMatrix, k: usize, init: &[usize]) -> (Vec<usize>, f64) {
    let n = d.len();
    let mut meds = init.to_vec();
    let mut labels = vec![0; n];
    for _ in 0..MAX_LLOYD {
        for (i, label) in labels.iter_mut().enumerate() {
            *label = (0..k)
                .min_by(|&a, &b| d.get(i, meds[a]).total_cmp(&d.get(i, meds[b])).then(a.cmp(&b)))
                .expect("k > 0");
        }
        let mut changed = false;
        for (c, med) in meds.iter_mut().enumerate() {
            let members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
            if members.is_empty() {
                continue;
            }
            let cost = |m: usize| members.iter().map(|&i| d.get(i, m)).sum::<f64>();
            let best = members
                .iter()
                .copied()
                .min_by(|&a, &b| cost(a).total_cmp(&cost(b)).then(a.cmp(&b)))
                .expect("non-empty");
            if cost(best) < cost(*med) - 1e-12 {
                *med = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    for (i, label) in labels.iter_mut().enumerate() {
        *label = (0..k)
            .min_by(|&a, &b| d.get(i, meds[a]).total_cmp(&d.get(i, meds[b])).then(a.cmp(&b)))
            .expect("k > 0");
    }
    let inertia = (0..n).map(|i| d.get(i, meds[labels[i]])).sum();
    (labels, inertia)
}

/// Relabel so clusters are numbered by first appearance in region order.
fn canonical(labels: &[usize]) -> Vec<usize> {
    let mut map = BTreeMap::new();
    labels
        .iter()
        .map(|&l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect()
}

/// Cluster regions into `k` groups, keeping the best of 50 seeded restarts.
pub fn cluster_regions(
    d: &DistanceMatrix,
    k: usize,
    embed_dim: usize,
    seed: u64,
    method: ClusterMethod,
) -> Result<Clustering> {
    let n = d.len();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("cannot form {k} clusters from {n} regions")));
    }
    let finish = |labels: Vec<usize>, inertia: f64, dim: Option<usize>| Clustering {
        labels: d.regions.iter().cloned().zip(canonical(&labels)).collect(),
        inertia,
        embed_dim: dim,
    };
    if k == n {
        return Ok(finish((0..n).collect(), 0.0, None));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match method {
        ClusterMethod::Kmeans => {
            let e = classical_mds(d, embed_dim)?;
            let mut best: Option<(Vec<usize>, f64)> = None;
            for _ in 0..RESTARTS {
                let init = plus_plus(&mut rng, n, k, |i, j| sqdist(e.point(i), e.point(j)));
                let (labels, inertia) = lloyd(&e, n, k, &init);
                if best.as_ref().is_none_or(|b| inertia < b.1) {
                    best = Some((labels, inertia));
                }
            }
            let (labels, inertia) = best.expect("at least one restart");
            Ok(finish(labels, inertia, Some(e.dim)))
        }
        ClusterMethod::Kmedoids => {
            let shift = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| d.get(i, j))
                .fold(0.0f64, f64::min);
            let mut best: Option<(Vec<usize>, f64)> = None;
            for _ in 0..RESTARTS {
                let init = plus_plus(&mut rng, n, k, |i, j| {
                    if i == j {
                        0.0
                    } else {
                        (d.get(i, j) - shift).powi(2)
                    }
                });
                let (labels, inertia) = medoids(d, k, &init);
                if best.as_ref().is_none_or(|b| inertia < b.1) {
                    best = Some((labels, inertia));
                }
            }
            let (labels, inertia) = best.expect("at least one restart");
            Ok(finish(labels, inertia, None))
        }
    }
}
