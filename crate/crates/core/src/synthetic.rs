//! Reproducible synthetic panels with planted waves, weekday effects,
//! overdispersion and cluster structure.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::calendar::Day;
use crate::error::{Error, Result};
use crate::ground_truth::{runs, RegionTruth, TrendIntervalSet};
use crate::ground_truth::{Interval, Provenance};
use crate::timeseries::{RegionMeta, RegionMetaSet, StreamKind, StreamPanel};

/// A linear ramp in log space: `rate` per day for `duration` days starting
/// at day offset `start`, followed by a linear return to the baseline over
/// `decline_days`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wave {
    pub regions: Vec<usize>,
    pub start: usize,
    pub duration: usize,
    pub rate: f64,
    #[serde(default)]
    pub decline_days: usize,
}

impl Wave {
    /// Contribution to `log μ` on day offset `t`.
    pub fn log_effect(&self, t: usize) -> f64 {
        let peak = self.rate * self.duration as f64;
        if t <= self.start {
            0.0
        } else if t <= self.start + self.duration {
            self.rate * (t - self.start) as f64
        } else if self.decline_days == 0 {
            peak
        } else {
            let after = (t - self.start - self.duration) as f64;
            (peak * (1.0 - after / self.decline_days as f64)).max(0.0)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub start: Day,
    pub n_regions: usize,
    pub n_streams: usize,
    pub n_days: usize,
    pub baseline_mu: Vec<f64>,
    pub waves: Vec<Wave>,
    /// Monday first; sums to zero.
    pub weekday_alpha: [f64; 7],
    /// `c = 1/r` of the Negative Binomial; zero gives Poisson counts.
    pub dispersion_c: f64,
    pub cluster: Vec<usize>,
    /// Per-stream multipliers on `dispersion_c`.
    pub stream_noise: Vec<f64>,
}

impl ScenarioSpec {
    pub fn region_id(&self, r: usize) -> String {
        format!("R{:03}", r + 1)
    }

    pub fn stream_id(&self, s: usize) -> String {
        format!("s{}", s + 1)
    }

    pub fn region_ids(&self) -> Vec<String> {
        (0..self.n_regions).map(|r| self.region_id(r)).collect()
    }

    pub fn stream_ids(&self) -> Vec<String> {
        (0..self.n_streams).map(|s| self.stream_id(s)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.n_regions == 0 || self.n_streams == 0 || self.n_days == 0 {
            return bad("scenario needs regions, streams and days".into());
        }
        if self.baseline_mu.len() != self.n_regions || self.cluster.len() != self.n_regions {
            return bad("baseline_mu and cluster need one entry per region".into());
        }
        if self.stream_noise.len() != self.n_streams {
            return bad("stream_noise needs one entry per stream".into());
        }
        if self.baseline_mu.iter().any(|m| !(*m > 0.0) || !m.is_finite()) {
            return bad("baselines must be positive".into());
        }
        if self.weekday_alpha.iter().sum::<f64>().abs() > 1e-9 {
            return bad("weekday_alpha must sum to zero".into());
        }
        if !(self.dispersion_c >= 0.0) || self.stream_noise.iter().any(|m| !(*m > 0.0)) {
            return bad("dispersion and noise multipliers must be non-negative".into());
        }
        for w in &self.waves {
            if !(w.rate > 0.0) {
                return bad(format!("wave rate {} must be positive", w.rate));
            }
            if w.duration == 0 || w.start + w.duration >= self.n_days {
                return bad(format!("wave at day {} does not fit in the range", w.start));
            }
            if let Some(r) = w.regions.iter().find(|&&r| r >= self.n_regions) {
                return bad(format!("wave refers to unknown region index {r}"));
            }
        }
        Ok(())
    }

    /// Planted `log μ` of region `r` without weekday effects.
    pub fn log_trend(&self, r: usize) -> Vec<f64> {
        let base = self.baseline_mu[r].ln();
        let waves: Vec<&Wave> = self.waves.iter().filter(|w| w.regions.contains(&r)).collect();
        (0..self.n_days)
            .map(|t| base + waves.iter().map(|w| w.log_effect(t)).sum::<f64>())
            .collect()
    }

    /// Synthetic region metadata: a 10 × 10 grid of coordinates and a state
    /// per grid block, independent of the cluster structure.
    pub fn region_meta(&self) -> RegionMetaSet {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed_3e7a);
        let mut out = RegionMetaSet::new();
        for r in 0..self.n_regions {
            let lat = 30.0 + 15.0 * rng.random::<f64>();
            let lon = -120.0 + 45.0 * rng.random::<f64>();
            let row = ((lat - 30.0) / 15.0 * 4.0) as usize;
            let col = ((lon + 120.0) / 45.0 * 5.0) as usize;
            let k = row.min(3) * 5 + col.min(4);
            let state = format!("{}{}", (b'A' + (k / 26) as u8) as char, (b'A' + (k % 26) as u8) as char);
            out.insert(
                self.region_id(r),
                RegionMeta {
                    region_id: self.region_id(r),
                    state_code: state,
                    latitude: Some(lat),
                    longitude: Some(lon),
                    population: Some((self.baseline_mu[r] * 5000.0).round() as u64),
                },
            );
        }
        out
    }
}

/// Knobs for the desk benchmark family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeskParams {
    pub seed: u64,
    pub start: Day,
    pub n_regions: usize,
    pub n_streams: usize,
    pub n_days: usize,
    pub n_clusters: usize,
    pub baseline_range: (f64, f64),
    pub waves_per_region: (usize, usize),
    pub rate_range: (f64, f64),
    pub duration_range: (usize, usize),
    /// Decline length as a multiple of the growth duration.
    pub decline_factor: f64,
    pub jitter_days: usize,
    pub weekday_amplitude: f64,
    pub dispersion_c: f64,
    pub stream_noise: Vec<f64>,
}

impl Default for DeskParams {
    fn default() -> Self {
        DeskParams {
            seed: 20240101,
            start: Day::from_ymd(2021, 1, 7).expect("valid date"),
            n_regions: 100,
            n_streams: 3,
            n_days: 540,
            n_clusters: 10,
            baseline_range: (20.0, 200.0),
            waves_per_region: (2, 3),
            rate_range: (0.04, 0.07),
            duration_range: (25, 40),
            decline_factor: 1.5,
            jitter_days: 5,
            weekday_amplitude: 0.2,
            dispersion_c: 0.1,
            stream_noise: vec![1.0, 4.0, 16.0],
        }
    }
}

/// The default benchmark scenario.
pub fn desk540() -> ScenarioSpec {
    desk_scenario(&DeskParams::default())
}

/// Regions are dealt round-robin into clusters. Each cluster gets 2–3 waves
/// placed in disjoint slots of the date range; each member region follows
/// them with its own start jitter.
pub fn desk_scenario(p: &DeskParams) -> ScenarioSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let (lo, hi) = p.baseline_range;
    let baseline_mu: Vec<f64> = (0..p.n_regions)
        .map(|_| (lo.ln() + (hi.ln() - lo.ln()) * rng.random::<f64>()).exp())
        .collect();
    let n_clusters = p.n_clusters.max(1);
    let cluster: Vec<usize> = (0..p.n_regions).map(|r| r % n_clusters).collect();
    let max_waves = p.waves_per_region.1.max(1);
    let slot = p.n_days / max_waves;
    let mut waves = Vec::new();
    for c in 0..n_clusters {
        let k = rng.random_range(p.waves_per_region.0..=p.waves_per_region.1).min(max_waves);
        // Choose k of the slots.
        let mut slots: Vec<usize> = (0..max_waves).collect();
        for i in (1..slots.len()).rev() {
            let j = rng.random_range(0..=i);
            slots.swap(i, j);
        }
        let mut chosen: Vec<usize> = slots[..k].to_vec();
        chosen.sort_unstable();
        for s in chosen {
            let duration = rng.random_range(p.duration_range.0..=p.duration_range.1);
            let rate = rng.random_range(p.rate_range.0..p.rate_range.1);
            let decline = (duration as f64 * p.decline_factor).round() as usize;
            let span = duration + decline + 2 * p.jitter_days;
            let room = slot.saturating_sub(span).max(1);
            // Keep clear of the first month so local windows have history.
            let min_off = 30.min(room - 1);
            let off = rng.random_range(min_off..room.max(min_off + 1));
            let base_start = s * slot + off + p.jitter_days;
            for r in (0..p.n_regions).filter(|&r| cluster[r] == c) {
                let j = rng.random_range(0..=2 * p.jitter_days) as i64 - p.jitter_days as i64;
                let start = (base_start as i64 + j).max(1) as usize;
                waves.push(Wave {
                    regions: vec![r],
                    start,
                    duration,
                    rate,
                    decline_days: decline,
                });
            }
        }
    }
    let weekday_alpha = std::array::from_fn(|d| {
        p.weekday_amplitude * (2.0 * std::f64::consts::PI * d as f64 / 7.0).cos()
    });
    let mut alpha: [f64; 7] = weekday_alpha;
    let m = alpha.iter().sum::<f64>() / 7.0;
    for a in alpha.iter_mut() {
        *a -= m;
    }
    ScenarioSpec {
        seed: p.seed,
        start: p.start,
        n_regions: p.n_regions,
        n_streams: p.n_streams,
        n_days: p.n_days,
        baseline_mu,
        waves,
        weekday_alpha: alpha,
        dispersion_c: p.dispersion_c,
        cluster,
        stream_noise: p.stream_noise.clone(),
    }
}

/// Negative Binomial draw with mean `mu` and `Var = μ + cμ²`, as a
/// Gamma–Poisson mixture.
pub fn draw_negbin<R: Rng + ?Sized>(rng: &mut R, mu: f64, c: f64) -> f64 {
    let lambda = if c > 0.0 {
        let shape = 1.0 / c;
        Gamma::new(shape, mu * c).expect("valid gamma").sample(rng)
    } else {
        mu
    };
    if lambda <= 0.0 {
        return 0.0;
    }
    Poisson::new(lambda).expect("valid poisson").sample(rng)
}

/// Draws the panel and returns it with the planted truth: runs of positive
/// planted log growth `L_{t+1} − L_t`, dated at `t`.
pub fn generate_panel(spec: &ScenarioSpec) -> Result<(StreamPanel, TrendIntervalSet)> {
    spec.validate()?;
    let mut builder = StreamPanel::builder();
    let mut truth = TrendIntervalSet {
        provenance: Provenance {
            models: vec!["planted".into()],
            ..Provenance::default()
        },
        ..TrendIntervalSet::default()
    };
    let streams = spec.stream_ids();
    for s in &streams {
        builder.stream_kind(s, StreamKind::Count);
    }
    for r in 0..spec.n_regions {
        let id = spec.region_id(r);
        let trend = spec.log_trend(r);
        // One generator stream per region, so generation order is irrelevant.
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(r as u64 + 1);
        for (s, sid) in streams.iter().enumerate() {
            let c = spec.dispersion_c * spec.stream_noise[s];
            for (t, l) in trend.iter().enumerate() {
                let day = spec.start + t as i32;
                let mu = (l + spec.weekday_alpha[day.weekday()]).exp();
                builder.insert(&id, sid, day, draw_negbin(&mut rng, mu, c))?;
            }
        }
        let growth: Vec<f64> = trend.windows(2).map(|w| w[1] - w[0]).collect();
        let up: Vec<bool> = growth.iter().map(|&g| g > 0.0).collect();
        let down: Vec<bool> = growth.iter().map(|&g| g <= 0.0).collect();
        truth.regions.insert(
            id,
            RegionTruth {
                span: Some(Interval::new(spec.start, spec.start + (growth.len() as i32 - 1))),
                increasing: runs(spec.start, &up),
                null: runs(spec.start, &down),
            },
        );
    }
    Ok((builder.build()?, truth))
}

/// Cluster label per region id.
pub fn cluster_labels(spec: &ScenarioSpec) -> BTreeMap<String, usize> {
    (0..spec.n_regions)
        .map(|r| (spec.region_id(r), spec.cluster[r]))
        .collect()
}
