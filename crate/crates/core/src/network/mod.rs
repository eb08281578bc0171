//! Epidemic networks: soft-DTW distances between growth-rate histories,
//! nearest-neighbour graphs, neighbour aggregation and clustering.

mod cluster;
mod dtw;

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calendar::Day;
use crate::error::{Error, Result};
use crate::regression::{FitSeries, RegressionFit};
use crate::stats::{mean, normal_sf, spearman, variance_pop};
use crate::timeseries::RegionMetaSet;

pub use cluster::{classical_mds, cluster_regions, ClusterMethod, Clustering, Embedding};
pub use dtw::{soft_dtw, softmin};

/// Mean Earth radius in km.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;
/// Added to edge weights before inverting them into distances.
pub const EDGE_EPS: f64 = 1e-9;

/// Symmetric pairwise distances over an ordered set of regions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    pub regions: Vec<String>,
    /// Row-major `n × n`.
    pub values: Vec<f64>,
    pub gamma: Option<f64>,
}

impl DistanceMatrix {
    pub fn new(regions: Vec<String>, values: Vec<f64>, gamma: Option<f64>) -> Result<Self> {
        let n = regions.len();
        if values.len() != n * n {
            return Err(Error::invalid(format!(
                "distance matrix over {n} regions needs {} entries, got {}",
                n * n,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("distance matrix has non-finite entries".into()));
        }
        let uniq: BTreeSet<&String> = regions.iter().collect();
        if uniq.len() != n {
            return Err(Error::invalid("duplicate region ids in distance matrix"));
        }
        Ok(DistanceMatrix { regions, values, gamma })
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.len() + j]
    }

    pub fn index_of(&self, region: &str) -> Option<usize> {
        self.regions.iter().position(|r| r == region)
    }

    pub fn between(&self, a: &str, b: &str) -> Option<f64> {
        Some(self.get(self.index_of(a)?, self.index_of(b)?))
    }

    fn symmetrize(&mut self) {
        let n = self.len();
        for i in 0..n {
            for j in i + 1..n {
                let v = 0.5 * (self.values[i * n + j] + self.values[j * n + i]);
                self.values[i * n + j] = v;
                self.values[j * n + i] = v;
            }
        }
    }
}

/// What to do with a β history that has a gap longer than the
/// interpolation limit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistoryPolicy {
    #[default]
    TruncateToLongestBlock,
    Fail,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkOptions {
    pub gamma: f64,
    pub policy: HistoryPolicy,
    /// Interior gaps up to this many days are linearly interpolated.
    pub max_gap: usize,
    pub min_history: usize,
    /// z-score each region's β sequence before comparing.
    pub standardize: bool,
    /// Only use fits ending on or before this day.
    pub history_end: Option<Day>,
}

impl Default for NetworkOptions {
    fn default() -> Self {
        NetworkOptions {
            gamma: 1.0,
            policy: HistoryPolicy::TruncateToLongestBlock,
            max_gap: 7,
            min_history: 60,
            standardize: true,
            history_end: None,
        }
    }
}

/// Distances plus the regions that could not be used.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkDistances {
    pub matrix: DistanceMatrix,
    pub excluded: BTreeMap<String, String>,
}

/// Dense β history of one fit series after gap handling.
pub fn beta_history(fits: &FitSeries, options: &NetworkOptions) -> Result<Vec<f64>> {
    let pts: Vec<(Day, f64)> = fits
        .converged()
        .filter(|(d, f)| f.beta_hat.is_finite() && options.history_end.is_none_or(|e| *d <= e))
        .map(|(d, f)| (d, f.beta_hat))
        .collect();
    if pts.is_empty() {
        return Err(Error::InsufficientHistory {
            needed: options.min_history,
            available: 0,
        });
    }
    // Split into blocks separated by gaps too long to interpolate.
    let mut blocks: Vec<Vec<f64>> = vec![vec![pts[0].1]];
    for w in pts.windows(2) {
        let (d0, b0) = w[0];
        let (d1, b1) = w[1];
        let missing = (d1 - d0 - 1) as usize;
        if missing > options.max_gap {
            if options.policy == HistoryPolicy::Fail {
                return Err(Error::Gap {
                    start: d0.succ().to_string(),
                    length: missing,
                });
            }
            blocks.push(vec![b1]);
            continue;
        }
        let block = blocks.last_mut().expect("non-empty");
        for k in 1..=missing {
            let t = k as f64 / (missing + 1) as f64;
            block.push(b0 + t * (b1 - b0));
        }
        block.push(b1);
    }
    // Longest block, earliest on ties.
    let mut best = 0;
    for (i, b) in blocks.iter().enumerate() {
        if b.len() > blocks[best].len() {
            best = i;
        }
    }
    let mut seq = blocks.swap_remove(best);
    if seq.len() < options.min_history {
        return Err(Error::InsufficientHistory {
            needed: options.min_history,
            available: seq.len(),
        });
    }
    if options.standardize {
        let m = mean(&seq);
        let sd = variance_pop(&seq).sqrt();
        let scale = if sd > 0.0 { 1.0 / sd } else { 1.0 };
        for v in &mut seq {
            *v = (*v - m) * scale;
        }
    }
    Ok(seq)
}

/// Pairwise soft-DTW distances between regions' β histories. Regions whose
/// history is too short are excluded and reported rather than failing the
/// whole matrix.
pub fn distance_matrix(fits: &[FitSeries], options: &NetworkOptions) -> Result<NetworkDistances> {
    if !(options.gamma > 0.0) {
        return Err(Error::invalid(format!("gamma must be positive, got {}", options.gamma)));
    }
    let mut by_region: BTreeMap<&str, &FitSeries> = BTreeMap::new();
    for f in fits {
        if by_region.insert(f.region_id.as_str(), f).is_some() {
            return Err(Error::invalid(format!(
                "distance_matrix got two series for region `{}`",
                f.region_id
            )));
        }
    }
    let mut regions = Vec::new();
    let mut seqs = Vec::new();
    let mut excluded = BTreeMap::new();
    for (id, f) in by_region {
        match beta_history(f, options) {
            Ok(s) => {
                regions.push(id.to_string());
                seqs.push(s);
            }
            Err(e) => {
                log::warn!("region {id} excluded from the network: {e}");
                excluded.insert(id.to_string(), e.to_string());
            }
        }
    }
    let n = regions.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let vals: Vec<((usize, usize), f64, f64)> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let dij = soft_dtw(&seqs[i], &seqs[j], options.gamma)?;
            let dji = if i == j || seqs[i].len() == seqs[j].len() {
                dij
            } else {
                soft_dtw(&seqs[j], &seqs[i], options.gamma)?
            };
            Ok(((i, j), dij, dji))
        })
        .collect::<Result<_>>()?;
    let mut values = vec![0.0; n * n];
    for ((i, j), dij, dji) in vals {
        values[i * n + j] = dij;
        values[j * n + i] = dji;
    }
    let mut matrix = DistanceMatrix::new(regions, values, Some(options.gamma))?;
    matrix.symmetrize();
    Ok(NetworkDistances { matrix, excluded })
}

/// Neighbour candidate pool.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborScope {
    #[default]
    All,
    InState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub region_id: String,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborGraph {
    pub k: usize,
    pub scope: NeighborScope,
    pub neighbors: BTreeMap<String, Vec<Neighbor>>,
    /// Regions that received fewer than `k` neighbours.
    pub short: BTreeSet<String>,
}

impl NeighborGraph {
    pub fn of(&self, region: &str) -> Option<&[Neighbor]> {
        self.neighbors.get(region).map(|v| v.as_slice())
    }
}

/// The `k` nearest other regions per region, ties broken by region id.
pub fn knn_graph(
    d: &DistanceMatrix,
    k: usize,
    scope: NeighborScope,
    meta: Option<&RegionMetaSet>,
) -> Result<NeighborGraph> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let state = |id: &str| -> Result<&str> {
        meta.and_then(|m| m.get(id))
            .map(|m| m.state_code.as_str())
            .ok_or_else(|| Error::NotFound {
                kind: "state code for region",
                id: id.to_string(),
            })
    };
    let n = d.len();
    let mut neighbors = BTreeMap::new();
    let mut short = BTreeSet::new();
    for i in 0..n {
        let me = &d.regions[i];
        let my_state = match scope {
            NeighborScope::InState => Some(state(me)?),
            NeighborScope::All => None,
        };
        let mut cand: Vec<(f64, &String)> = Vec::new();
        for j in 0..n {
            if j == i {
                continue;
            }
            if let Some(s) = my_state {
                if state(&d.regions[j])? != s {
                    continue;
                }
            }
            cand.push((d.get(i, j), &d.regions[j]));
        }
        cand.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
        if cand.len() < k {
            short.insert(me.clone());
        }
        let list = cand
            .into_iter()
            .take(k)
            .map(|(dist, id)| Neighbor {
                region_id: id.clone(),
                distance: dist,
            })
            .collect();
        neighbors.insert(me.clone(), list);
    }
    if !short.is_empty() {
        log::warn!("{} region(s) have fewer than {k} candidate neighbours", short.len());
    }
    Ok(NeighborGraph {
        k,
        scope,
        neighbors,
        short,
    })
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct AggregateOptions {
    /// Per-region weights; missing regions weigh 1.
    pub weights: BTreeMap<String, f64>,
    /// Include the region's own fit alongside its neighbours.
    pub include_self: bool,
}

/// Neighbour-averaged growth estimates. At each date only neighbours with a
/// converged fit contribute and the weights are renormalised over them; the
/// aggregate variance is `Σ w² se² / (Σ w)²`.
pub fn aggregate_growth(
    fits: &[FitSeries],
    graph: &NeighborGraph,
    options: &AggregateOptions,
) -> Result<Vec<FitSeries>> {
    let by_region: BTreeMap<&str, &FitSeries> = fits.iter().map(|f| (f.region_id.as_str(), f)).collect();
    for (r, list) in &graph.neighbors {
        if !by_region.contains_key(r.as_str()) {
            return Err(Error::NotFound {
                kind: "fit series for region",
                id: r.clone(),
            });
        }
        for nb in list {
            if !by_region.contains_key(nb.region_id.as_str()) {
                return Err(Error::NotFound {
                    kind: "fit series for region",
                    id: nb.region_id.clone(),
                });
            }
        }
    }
    let weight = |id: &str| -> Result<f64> {
        let w = options.weights.get(id).copied().unwrap_or(1.0);
        if !(w > 0.0) || !w.is_finite() {
            return Err(Error::invalid(format!("weight of {id} must be positive")));
        }
        Ok(w)
    };
    graph
        .neighbors
        .par_iter()
        .map(|(r, list)| {
            let own = by_region[r.as_str()];
            let mut members: Vec<(&FitSeries, f64)> = Vec::new();
            if options.include_self {
                members.push((own, weight(r)?));
            }
            for nb in list {
                members.push((by_region[nb.region_id.as_str()], weight(&nb.region_id)?));
            }
            let mut out = FitSeries::new(r, &own.stream_id, own.window_n, own.model);
            let days: BTreeSet<Day> = members.iter().flat_map(|(f, _)| f.fits.keys().copied()).collect();
            for day in days {
                let avail: Vec<(&RegressionFit, f64)> = members
                    .iter()
                    .filter_map(|(f, w)| f.get(day).filter(|x| x.converged).map(|x| (x, *w)))
                    .collect();
                if avail.is_empty() {
                    continue;
                }
                let sw: f64 = avail.iter().map(|(_, w)| w).sum();
                let avg = |g: &dyn Fn(&RegressionFit) -> f64| avail.iter().map(|(f, w)| w * g(f)).sum::<f64>() / sw;
                let beta = avg(&|f| f.beta_hat);
                let var = avail.iter().map(|(f, w)| w * w * f.se_beta * f.se_beta).sum::<f64>() / (sw * sw);
                let se = var.sqrt();
                let z = if se > 0.0 {
                    beta / se
                } else if beta == 0.0 {
                    0.0
                } else {
                    beta.signum() * f64::INFINITY
                };
                out.fits.insert(
                    day,
                    RegressionFit {
                        model: own.model,
                        alpha_hat: avg(&|f| f.alpha_hat),
                        beta_hat: beta,
                        se_beta: se,
                        z_score: z,
                        p_one_sided: normal_sf(z),
                        n: own.window_n,
                        dispersion_c: avg(&|f| f.dispersion_c),
                        converged: true,
                        iterations: 0,
                    },
                );
            }
            Ok(out)
        })
        .collect()
}

/// Great-circle distance in km.
pub fn haversine_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * a.sqrt().min(1.0).asin()
}

/// Great-circle distances between all regions with coordinates.
pub fn coordinate_network(meta: &RegionMetaSet) -> Result<DistanceMatrix> {
    let mut regions = Vec::new();
    let mut coords = Vec::new();
    for (id, m) in meta {
        match (m.latitude, m.longitude) {
            (Some(lat), Some(lon)) => {
                regions.push(id.clone());
                coords.push((lat, lon));
            }
            _ => {
                return Err(Error::invalid(format!("region {id} has no coordinates")));
            }
        }
    }
    let n = regions.len();
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = haversine_km(coords[i].0, coords[i].1, coords[j].0, coords[j].1);
            values[i * n + j] = d;
            values[j * n + i] = d;
        }
    }
    DistanceMatrix::new(regions, values, None)
}

/// One weighted edge of an external network (mobility, commuting, ...).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub source: String,
    pub target: String,
    pub weight: f64,
}

/// Distances `1/(w + ε)` from an undirected weighted edge list. Pairs with
/// no edge get weight 0; an edge listed in both directions uses the mean
/// weight. `regions` fixes the region set; edges naming other ids fail.
pub fn edge_network(regions: &[String], edges: &[Edge]) -> Result<DistanceMatrix> {
    let mut sorted = regions.to_vec();
    sorted.sort();
    sorted.dedup();
    let n = sorted.len();
    let idx = |id: &str| -> Result<usize> {
        sorted.binary_search_by(|r| r.as_str().cmp(id)).map_err(|_| Error::NotFound {
            kind: "region",
            id: id.to_string(),
        })
    };
    let mut wsum = vec![0.0; n * n];
    let mut wcnt = vec![0u32; n * n];
    for e in edges {
        if !(e.weight >= 0.0) || !e.weight.is_finite() {
            return Err(Error::invalid(format!(
                "edge {}-{} has invalid weight {}",
                e.source, e.target, e.weight
            )));
        }
        let (i, j) = (idx(&e.source)?, idx(&e.target)?);
        if i == j {
            continue;
        }
        let (a, b) = (i.min(j), i.max(j));
        wsum[a * n + b] += e.weight;
        wcnt[a * n + b] += 1;
    }
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let w = if wcnt[i * n + j] > 0 {
                wsum[i * n + j] / wcnt[i * n + j] as f64
            } else {
                0.0
            };
            let d = 1.0 / (w + EDGE_EPS);
            values[i * n + j] = d;
            values[j * n + i] = d;
        }
    }
    DistanceMatrix::new(sorted, values, None)
}

pub fn read_edges_csv<R: Read>(reader: R) -> Result<Vec<Edge>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() < 3 {
            return Err(Error::Schema(vec!["region_id,region_id,weight".into()]));
        }
        let weight: f64 = rec[2]
            .parse()
            .map_err(|_| Error::invalid(format!("bad edge weight `{}`", &rec[2])))?;
        out.push(Edge {
            source: rec[0].to_string(),
            target: rec[1].to_string(),
            weight,
        });
    }
    Ok(out)
}

/// Spearman correlation of the upper-triangle distances over the regions
/// both matrices share.
pub fn network_correlation(a: &DistanceMatrix, b: &DistanceMatrix) -> Result<f64> {
    let common: Vec<(usize, usize)> = a
        .regions
        .iter()
        .enumerate()
        .filter_map(|(i, r)| b.index_of(r).map(|j| (i, j)))
        .collect();
    let mut xa = Vec::new();
    let mut xb = Vec::new();
    for p in 0..common.len() {
        for q in p + 1..common.len() {
            xa.push(a.get(common[p].0, common[q].0));
            xb.push(b.get(common[p].1, common[q].1));
        }
    }
    if xa.len() < 10 {
        return Err(Error::InsufficientHistory {
            needed: 10,
            available: xa.len(),
        });
    }
    Ok(spearman(&xa, &xb))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StateFraction {
    pub n_regions: usize,
    pub mean_fraction: f64,
    pub mean_count: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InStateSummary {
    pub per_state: BTreeMap<String, StateFraction>,
    /// Mean over states of the per-state mean fraction.
    pub mean_fraction: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub mean_count: f64,
}

/// Fraction (and count) of each region's neighbours in its own state,
/// averaged within states, then across states with a normal 95% interval.
pub fn in_state_fraction(graph: &NeighborGraph, meta: &RegionMetaSet) -> Result<InStateSummary> {
    let state = |id: &str| -> Result<&str> {
        meta.get(id).map(|m| m.state_code.as_str()).ok_or_else(|| Error::NotFound {
            kind: "state code for region",
            id: id.to_string(),
        })
    };
    let mut acc: BTreeMap<String, (usize, f64, f64)> = BTreeMap::new();
    for (r, list) in &graph.neighbors {
        if list.is_empty() {
            continue;
        }
        let s = state(r)?;
        let mut same = 0usize;
        for nb in list {
            if state(&nb.region_id)? == s {
                same += 1;
            }
        }
        let e = acc.entry(s.to_string()).or_insert((0, 0.0, 0.0));
        e.0 += 1;
        e.1 += same as f64 / list.len() as f64;
        e.2 += same as f64;
    }
    if acc.is_empty() {
        return Err(Error::invalid("graph has no regions with neighbours"));
    }
    let per_state: BTreeMap<String, StateFraction> = acc
        .into_iter()
        .map(|(s, (n, f, c))| {
            (
                s,
                StateFraction {
                    n_regions: n,
                    mean_fraction: f / n as f64,
                    mean_count: c / n as f64,
                },
            )
        })
        .collect();
    let fr: Vec<f64> = per_state.values().map(|s| s.mean_fraction).collect();
    let counts: Vec<f64> = per_state.values().map(|s| s.mean_count).collect();
    let m = mean(&fr);
    let half = if fr.len() > 1 {
        1.959963984540054 * (crate::stats::variance(&fr) / fr.len() as f64).sqrt()
    } else {
        0.0
    };
    Ok(InStateSummary {
        per_state,
        mean_fraction: m,
        ci_low: m - half,
        ci_high: m + half,
        mean_count: mean(&counts),
    })
}

/// CSV with header `region_id,neighbor_id,rank,distance`.
pub fn write_graph_csv<W: Write>(graph: &NeighborGraph, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["region_id", "neighbor_id", "rank", "distance"])?;
    for (r, list) in &graph.neighbors {
        for (k, nb) in list.iter().enumerate() {
            w.write_record([r.as_str(), nb.region_id.as_str(), &(k + 1).to_string(), &nb.distance.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io("<graph csv>", e))?;
    Ok(())
}

pub fn read_graph_csv<R: Read>(reader: R) -> Result<NeighborGraph> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut rows: BTreeMap<String, Vec<(usize, Neighbor)>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() < 4 {
            return Err(Error::Schema(vec!["region_id,neighbor_id,rank,distance".into()]));
        }
        let rank: usize = rec[2].parse().map_err(|_| Error::invalid(format!("bad rank `{}`", &rec[2])))?;
        let distance: f64 = rec[3]
            .parse()
            .map_err(|_| Error::invalid(format!("bad distance `{}`", &rec[3])))?;
        rows.entry(rec[0].to_string()).or_default().push((
            rank,
            Neighbor {
                region_id: rec[1].to_string(),
                distance,
            },
        ));
    }
    let k = rows.values().map(|v| v.len()).max().unwrap_or(0);
    let mut short = BTreeSet::new();
    let neighbors = rows
        .into_iter()
        .map(|(r, mut v)| {
            v.sort_by_key(|(rank, _)| *rank);
            if v.len() < k {
                short.insert(r.clone());
            }
            (r, v.into_iter().map(|(_, n)| n).collect())
        })
        .collect();
    Ok(NeighborGraph {
        k,
        scope: NeighborScope::All,
        neighbors,
        short,
    })
}

/// Matrix CSV: header `region_id,<id1>,<id2>,...` then one row per region.
pub fn write_matrix_csv<W: Write>(d: &DistanceMatrix, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["region_id".to_string()];
    header.extend(d.regions.iter().cloned());
    w.write_record(&header)?;
    for (i, r) in d.regions.iter().enumerate() {
        let mut row = vec![r.clone()];
        row.extend((0..d.len()).map(|j| d.get(i, j).to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<matrix csv>", e))?;
    Ok(())
}

pub fn read_matrix_csv<R: Read>(reader: R) -> Result<DistanceMatrix> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    let regions: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let n = regions.len();
    let mut values = Vec::with_capacity(n * n);
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if i >= n || rec.get(0) != Some(regions[i].as_str()) || rec.len() != n + 1 {
            return Err(Error::invalid("matrix rows must follow the header order"));
        }
        for v in rec.iter().skip(1) {
            values.push(v.parse().map_err(|_| Error::invalid(format!("bad distance `{v}`")))?);
        }
    }
    DistanceMatrix::new(regions, values, None)
}

/// CSV with header `region_id,cluster`.
pub fn write_cluster_csv<W: Write>(labels: &BTreeMap<String, usize>, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["region_id", "cluster"])?;
    for (r, c) in labels {
        w.write_record([r.as_str(), &c.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<cluster csv>", e))?;
    Ok(())
}
