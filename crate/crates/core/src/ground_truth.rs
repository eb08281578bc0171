//! Consensus ground truth: a day belongs to an increasing trend only when
//! every smoothing configuration agrees that the latent trend is growing.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calendar::Day;
use crate::error::{Error, Result};
use crate::smoother::{
    growth_series, region_inputs, smooth_multivariate, smooth_univariate, GrowthSeries, PenaltyKind,
    SeriesInput, SmoothConfig,
};
use crate::timeseries::StreamPanel;

/// Inclusive date range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Interval {
    pub start: Day,
    pub end: Day,
}

impl Interval {
    pub fn new(start: Day, end: Day) -> Self {
        debug_assert!(start <= end);
        Interval { start, end }
    }

    pub fn len(&self) -> usize {
        (self.end - self.start + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, day: Day) -> bool {
        self.start <= day && day <= self.end
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrendLabel {
    Increasing,
}

/// A flattened interval record, as written to CSV.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrendInterval {
    pub region_id: String,
    pub start: Day,
    pub end: Day,
    pub label: TrendLabel,
}

/// Increasing and null intervals of one region over the span `[start, end]`
/// on which the growth was evaluated.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RegionTruth {
    pub span: Option<Interval>,
    pub increasing: Vec<Interval>,
    pub null: Vec<Interval>,
}

impl RegionTruth {
    pub fn is_increasing(&self, day: Day) -> bool {
        self.increasing.iter().any(|i| i.contains(day))
    }

    pub fn is_null(&self, day: Day) -> bool {
        self.null.iter().any(|i| i.contains(day))
    }

    pub fn null_days(&self) -> impl Iterator<Item = Day> + '_ {
        self.null.iter().flat_map(|i| i.start.range_inclusive(i.end))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub lambdas: Vec<f64>,
    pub penalties: Vec<PenaltyKind>,
    pub models: Vec<String>,
    pub mode: Option<ConsensusMode>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrendIntervalSet {
    pub regions: BTreeMap<String, RegionTruth>,
    /// Regions left out, with the reason.
    pub excluded: BTreeMap<String, String>,
    pub provenance: Provenance,
}

impl TrendIntervalSet {
    pub fn region(&self, id: &str) -> Option<&RegionTruth> {
        self.regions.get(id)
    }

    pub fn n_intervals(&self) -> usize {
        self.regions.values().map(|r| r.increasing.len()).sum()
    }

    /// Rebuild a set from increasing and null interval lists, as read back
    /// from the two interval CSVs.
    pub fn from_intervals(
        increasing: BTreeMap<String, Vec<Interval>>,
        null: BTreeMap<String, Vec<Interval>>,
    ) -> Self {
        let mut regions: BTreeMap<String, RegionTruth> = BTreeMap::new();
        for (id, list) in increasing {
            regions.entry(id).or_default().increasing = list;
        }
        for (id, list) in null {
            regions.entry(id).or_default().null = list;
        }
        for r in regions.values_mut() {
            let lo = r.increasing.iter().chain(&r.null).map(|i| i.start).min();
            let hi = r.increasing.iter().chain(&r.null).map(|i| i.end).max();
            r.span = lo.zip(hi).map(|(a, b)| Interval::new(a, b));
        }
        TrendIntervalSet {
            regions,
            ..TrendIntervalSet::default()
        }
    }

    /// All increasing intervals, ordered by region then date.
    pub fn intervals(&self) -> Vec<TrendInterval> {
        self.regions
            .iter()
            .flat_map(|(id, r)| {
                r.increasing.iter().map(move |i| TrendInterval {
                    region_id: id.clone(),
                    start: i.start,
                    end: i.end,
                    label: TrendLabel::Increasing,
                })
            })
            .collect()
    }
}

/// Maximal runs of `true` in `flags`, dated from `start`.
pub fn runs(start: Day, flags: &[bool]) -> Vec<Interval> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < flags.len() {
        if !flags[i] {
            i += 1;
            continue;
        }
        let j = (i..flags.len()).find(|&k| !flags[k]).unwrap_or(flags.len());
        out.push(Interval::new(start + i as i32, start + (j as i32 - 1)));
        i = j;
    }
    out
}

/// Consensus of several growth series on one date axis. A day is increasing
/// when every `g_t > eps`, null when every `g_t ≤ eps`; increasing runs
/// shorter than `min_duration` are dropped.
pub fn consensus_trends(growth_sets: &[GrowthSeries], min_duration: usize, eps: f64) -> Result<RegionTruth> {
    let Some(first) = growth_sets.first() else {
        return Err(Error::invalid("consensus needs at least one growth series"));
    };
    let n = first.values.len();
    if growth_sets
        .iter()
        .any(|g| g.start != first.start || g.values.len() != n)
    {
        return Err(Error::invalid("growth series do not share a date axis"));
    }
    let up: Vec<bool> = (0..n)
        .map(|t| growth_sets.iter().all(|g| g.values[t] > eps))
        .collect();
    let down: Vec<bool> = (0..n)
        .map(|t| growth_sets.iter().all(|g| g.values[t] <= eps))
        .collect();
    let increasing = runs(first.start, &up)
        .into_iter()
        .filter(|i| i.len() >= min_duration)
        .collect();
    Ok(RegionTruth {
        span: (n > 0).then(|| Interval::new(first.start, first.end())),
        increasing,
        null: runs(first.start, &down),
    })
}

/// Whether consensus uses the shared trend of the joint smoother or the
/// trend of each stream smoothed on its own.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsensusMode {
    #[default]
    SharedPhi,
    PerStream,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthOptions {
    pub min_duration: usize,
    pub eps: f64,
    /// Regions where any ground-truth stream totals less than this are
    /// excluded.
    pub count_floor: f64,
    pub mode: ConsensusMode,
}

impl Default for GroundTruthOptions {
    fn default() -> Self {
        GroundTruthOptions {
            min_duration: 7,
            eps: 0.0,
            count_floor: 100.0,
            mode: ConsensusMode::SharedPhi,
        }
    }
}

/// Penalty grid used for ground truth by default.
pub fn default_lambda_grid(penalty: PenaltyKind) -> Vec<f64> {
    match penalty {
        PenaltyKind::L1 => vec![1e3, 1e4, 1e5],
        PenaltyKind::L2 => vec![10.0, 1e3, 3e4],
    }
}

/// One config per λ of the default grid, sharing everything else with
/// `base`.
pub fn default_configs(base: &SmoothConfig) -> Vec<SmoothConfig> {
    default_lambda_grid(base.penalty)
        .into_iter()
        .map(|lambda| SmoothConfig {
            lambda,
            ..base.clone()
        })
        .collect()
}

fn region_growth(
    inputs: &[SeriesInput],
    start: Day,
    configs: &[SmoothConfig],
    mode: ConsensusMode,
) -> Result<Vec<GrowthSeries>> {
    let mut out = Vec::new();
    for cfg in configs {
        match mode {
            ConsensusMode::SharedPhi => {
                let r = smooth_multivariate(start, inputs, cfg)?;
                out.push(growth_series(&r)?);
            }
            ConsensusMode::PerStream => {
                for (s, input) in inputs.iter().enumerate() {
                    let mut c = cfg.clone();
                    c.default_series = cfg.options_for(s);
                    c.series.clear();
                    let r = smooth_univariate(start, &input.values, &c)?;
                    out.push(growth_series(&r)?);
                }
            }
        }
    }
    Ok(out)
}

/// Ground truth for one region, or the reason it was excluded.
pub fn region_ground_truth(
    panel: &StreamPanel,
    region: &str,
    gt_streams: &[String],
    configs: &[SmoothConfig],
    options: &GroundTruthOptions,
) -> std::result::Result<RegionTruth, String> {
    let (start, inputs) = region_inputs(panel, region, gt_streams).map_err(|e| e.to_string())?;
    for input in &inputs {
        let total: f64 = input.values.iter().flatten().sum();
        if total < options.count_floor {
            return Err(format!(
                "stream `{}` totals {total}, below the floor of {}",
                input.name, options.count_floor
            ));
        }
    }
    let growth = region_growth(&inputs, start, configs, options.mode).map_err(|e| e.to_string())?;
    consensus_trends(&growth, options.min_duration, options.eps).map_err(|e| e.to_string())
}

/// Smooths each region's ground-truth streams under every config and takes
/// the consensus of the resulting growth rates.
pub fn build_ground_truth(
    panel: &StreamPanel,
    gt_streams: &[String],
    configs: &[SmoothConfig],
    options: &GroundTruthOptions,
) -> Result<TrendIntervalSet> {
    if configs.is_empty() {
        return Err(Error::invalid("no smoothing configurations"));
    }
    for s in gt_streams {
        if !panel.has_stream(s) {
            return Err(Error::NotFound {
                kind: "stream",
                id: s.clone(),
            });
        }
    }
    let regions = panel.regions();
    let results: Vec<(String, std::result::Result<RegionTruth, String>)> = regions
        .par_iter()
        .map(|r| {
            (
                r.clone(),
                region_ground_truth(panel, r, gt_streams, configs, options),
            )
        })
        .collect();
    let mut set = TrendIntervalSet {
        provenance: Provenance {
            lambdas: configs.iter().map(|c| c.lambda).collect(),
            penalties: configs.iter().map(|c| c.penalty).collect(),
            models: (0..gt_streams.len())
                .map(|s| format!("{:?}", configs[0].options_for(s).model).to_lowercase())
                .collect(),
            mode: Some(options.mode),
        },
        ..TrendIntervalSet::default()
    };
    for (region, res) in results {
        match res {
            Ok(truth) => {
                set.regions.insert(region, truth);
            }
            Err(reason) => {
                log::warn!("ground truth: excluding {region}: {reason}");
                set.excluded.insert(region, reason);
            }
        }
    }
    Ok(set)
}

/// Whether to write the increasing or the null intervals.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IntervalKind {
    Increasing,
    Null,
}

/// CSV with header `region_id,start,end`.
pub fn write_intervals_csv<W: Write>(set: &TrendIntervalSet, kind: IntervalKind, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["region_id", "start", "end"])?;
    for (id, truth) in &set.regions {
        let list = match kind {
            IntervalKind::Increasing => &truth.increasing,
            IntervalKind::Null => &truth.null,
        };
        for i in list {
            w.write_record([id.as_str(), &i.start.to_string(), &i.end.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io("<interval csv>", e))?;
    Ok(())
}

/// Reads `region_id,start,end` rows into per-region interval lists, sorted
/// and checked for overlaps.
pub fn read_intervals_csv<R: Read>(reader: R) -> Result<BTreeMap<String, Vec<Interval>>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (Some(ri), Some(si), Some(ei)) = (col("region_id"), col("start"), col("end")) else {
        let missing = ["region_id", "start", "end"]
            .iter()
            .filter(|c| col(c).is_none())
            .map(|c| c.to_string())
            .collect();
        return Err(Error::Schema(missing));
    };
    let mut out: BTreeMap<String, Vec<Interval>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let start = Day::parse(rec.get(si).unwrap_or("").trim())?;
        let end = Day::parse(rec.get(ei).unwrap_or("").trim())?;
        if end < start {
            return Err(Error::invalid(format!("interval {start}..{end} ends before it starts")));
        }
        out.entry(rec.get(ri).unwrap_or("").trim().to_string())
            .or_default()
            .push(Interval::new(start, end));
    }
    for (id, list) in out.iter_mut() {
        list.sort();
        if list.windows(2).any(|w| w[1].start <= w[0].end) {
            return Err(Error::invalid(format!("overlapping intervals for region `{id}`")));
        }
    }
    Ok(out)
}
