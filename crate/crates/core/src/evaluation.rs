//! Threshold calibration at a target false-positive rate, alarms, and
//! power/delay scoring against ground-truth intervals.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calendar::Day;
use crate::error::{Error, Result};
use crate::fusion::fuse_all;
use crate::ground_truth::{Interval, TrendIntervalSet};
use crate::network::{aggregate_growth, AggregateOptions, NeighborGraph};
use crate::regression::{rolling_fit_all, FitSeries, Model, RegressionFit};
use crate::timeseries::{GapPolicy, StreamPanel};

/// Per-region, per-date detection statistic.
pub type StatPanel = BTreeMap<String, BTreeMap<Day, f64>>;

/// Minimum number of null statistics needed to calibrate.
pub const MIN_NULL: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationScope {
    #[default]
    Pooled,
    PerRegion,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionConfig {
    pub fpr_target: f64,
    pub window_sizes: Vec<usize>,
    pub max_delay: i32,
    pub calibration_scope: CalibrationScope,
    /// Real-time mode: calibrate only on null dates up to this day.
    pub calibration_end: Option<Day>,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        DetectionConfig {
            fpr_target: 0.05,
            window_sizes: vec![7, 14, 21, 28, 35],
            max_delay: 60,
            calibration_scope: CalibrationScope::Pooled,
            calibration_end: None,
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fpr_target > 0.0 && self.fpr_target < 1.0) {
            return Err(Error::invalid(format!("fpr_target {} not in (0,1)", self.fpr_target)));
        }
        if let Some(w) = self.window_sizes.iter().find(|&&w| w < 3) {
            return Err(Error::invalid(format!("window size {w} < 3")));
        }
        if self.max_delay < 0 {
            return Err(Error::invalid("max_delay must be non-negative"));
        }
        Ok(())
    }
}

/// The smallest observed value `q` with at most `floor(fpr·N)` values
/// strictly above it.
pub fn quantile_threshold(values: &[f64], fpr: f64) -> Result<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.len() < MIN_NULL {
        return Err(Error::InsufficientHistory {
            needed: MIN_NULL,
            available: v.len(),
        });
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let allowed = ((fpr * n as f64) + 1e-9).floor() as usize;
    Ok(if allowed >= n { v[0] } else { v[n - 1 - allowed] })
}

/// Calibrated thresholds: one pooled value or one per region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub scope: CalibrationScope,
    pub pooled: Option<f64>,
    pub per_region: BTreeMap<String, f64>,
    pub n_null: usize,
}

impl Thresholds {
    pub fn for_region(&self, region: &str) -> Option<f64> {
        self.pooled.or_else(|| self.per_region.get(region).copied())
    }
}

fn null_stats<'a>(
    series: &'a BTreeMap<Day, f64>,
    nulls: &'a [Interval],
    cutoff: Option<Day>,
) -> impl Iterator<Item = f64> + 'a {
    series
        .iter()
        .filter(move |(d, v)| {
            !v.is_nan() && cutoff.is_none_or(|c| **d <= c) && nulls.iter().any(|i| i.contains(**d))
        })
        .map(|(_, v)| *v)
}

/// Threshold at the `1 − fpr` empirical quantile of the statistic over the
/// null dates of `truth`.
pub fn calibrate_threshold(stats: &StatPanel, truth: &TrendIntervalSet, config: &DetectionConfig) -> Result<Thresholds> {
    config.validate()?;
    let cutoff = config.calibration_end;
    match config.calibration_scope {
        CalibrationScope::Pooled => {
            let mut all = Vec::new();
            for (r, series) in stats {
                if let Some(t) = truth.region(r) {
                    all.extend(null_stats(series, &t.null, cutoff));
                }
            }
            let q = quantile_threshold(&all, config.fpr_target)?;
            Ok(Thresholds {
                scope: CalibrationScope::Pooled,
                pooled: Some(q),
                per_region: BTreeMap::new(),
                n_null: all.len(),
            })
        }
        CalibrationScope::PerRegion => {
            let mut per_region = BTreeMap::new();
            let mut n_null = 0;
            for (r, series) in stats {
                let Some(t) = truth.region(r) else { continue };
                let vals: Vec<f64> = null_stats(series, &t.null, cutoff).collect();
                match quantile_threshold(&vals, config.fpr_target) {
                    Ok(q) => {
                        n_null += vals.len();
                        per_region.insert(r.clone(), q);
                    }
                    Err(e) => log::warn!("no threshold for {r}: {e}"),
                }
            }
            if per_region.is_empty() {
                return Err(Error::InsufficientHistory {
                    needed: MIN_NULL,
                    available: 0,
                });
            }
            Ok(Thresholds {
                scope: CalibrationScope::PerRegion,
                pooled: None,
                per_region,
                n_null,
            })
        }
    }
}

/// Dates whose statistic is strictly above `threshold`.
pub fn emit_alarms(series: &BTreeMap<Day, f64>, threshold: f64) -> Vec<Day> {
    series.iter().filter(|(_, v)| **v > threshold).map(|(d, _)| *d).collect()
}

/// Alarms for every region that has a threshold.
pub fn emit_all_alarms(stats: &StatPanel, thresholds: &Thresholds) -> BTreeMap<String, Vec<Day>> {
    stats
        .iter()
        .filter_map(|(r, s)| thresholds.for_region(r).map(|q| (r.clone(), emit_alarms(s, q))))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalRecord {
    pub region_id: String,
    pub start: Day,
    pub end: Day,
    pub detected: bool,
    pub delay: i32,
    pub first_alarm: Option<Day>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Percent of truth intervals detected.
    pub power: f64,
    pub mean_delay: f64,
    pub realized_fpr: f64,
    pub n_intervals: usize,
    pub n_detected: usize,
    pub n_null_dates: usize,
    pub thresholds: Option<Thresholds>,
    pub records: Vec<IntervalRecord>,
}

/// Score alarms against truth. An interval `[s, e]` is detected by the first
/// alarm in `[s, min(e, s + max_delay)]`; undetected intervals count a delay
/// of `max_delay`. Realized FPR is over the null dates where `stats` has a
/// value.
pub fn score_power_delay(
    alarms: &BTreeMap<String, Vec<Day>>,
    truth: &TrendIntervalSet,
    max_delay: i32,
    stats: &StatPanel,
) -> Result<EvalReport> {
    let mut records = Vec::new();
    let mut null_dates = 0usize;
    let mut false_pos = 0usize;
    let empty = Vec::new();
    for (r, t) in &truth.regions {
        let mut a = alarms.get(r).unwrap_or(&empty).clone();
        a.sort();
        a.dedup();
        for iv in &t.increasing {
            let last = iv.end.min(iv.start + max_delay);
            let first = a.iter().copied().find(|d| *d >= iv.start && *d <= last);
            records.push(IntervalRecord {
                region_id: r.clone(),
                start: iv.start,
                end: iv.end,
                detected: first.is_some(),
                delay: first.map_or(max_delay, |d| d - iv.start),
                first_alarm: first,
            });
        }
        if let Some(s) = stats.get(r) {
            for d in s.iter().filter(|(_, v)| !v.is_nan()).map(|(d, _)| *d) {
                if t.is_null(d) {
                    null_dates += 1;
                    if a.binary_search(&d).is_ok() {
                        false_pos += 1;
                    }
                }
            }
        }
    }
    if records.is_empty() {
        return Err(Error::invalid("ground truth has no increasing intervals"));
    }
    let n = records.len();
    let detected = records.iter().filter(|r| r.detected).count();
    Ok(EvalReport {
        power: 100.0 * detected as f64 / n as f64,
        mean_delay: records.iter().map(|r| r.delay as f64).sum::<f64>() / n as f64,
        realized_fpr: if null_dates > 0 {
            false_pos as f64 / null_dates as f64
        } else {
            0.0
        },
        n_intervals: n,
        n_detected: detected,
        n_null_dates: null_dates,
        thresholds: None,
        records,
    })
}

/// `log MA_n(t) − log MA_n(t−1)` over the trailing `n`-day mean. When any
/// of the `n + 1` values involved is zero, 0.5 is added to all of them.
/// Dates whose span has a missing value are skipped.
pub fn moving_average_stat(start: Day, values: &[Option<f64>], n: usize) -> Result<BTreeMap<Day, f64>> {
    if n < 2 {
        return Err(Error::invalid(format!("moving-average width {n} < 2")));
    }
    if values.len() < n + 1 {
        return Err(Error::InsufficientHistory {
            needed: n + 1,
            available: values.len(),
        });
    }
    let mut out = BTreeMap::new();
    for t in n..values.len() {
        let span = &values[t - n..=t];
        if span.iter().any(|v| v.is_none()) {
            continue;
        }
        let v: Vec<f64> = span.iter().map(|x| x.unwrap_or(0.0)).collect();
        let shift = if v.contains(&0.0) { 0.5 } else { 0.0 };
        let prev: f64 = v[..n].iter().sum::<f64>() / n as f64 + shift;
        let cur: f64 = v[1..].iter().sum::<f64>() / n as f64 + shift;
        out.insert(start + t as i32, cur.ln() - prev.ln());
    }
    Ok(out)
}

/// Which number of a fit is thresholded.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    /// The growth-rate estimate.
    #[default]
    Beta,
    Z,
}

impl Statistic {
    fn of(self, f: &RegressionFit) -> f64 {
        match self {
            Statistic::Beta => f.beta_hat,
            Statistic::Z => f.z_score,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    #[default]
    LocalRegression,
    MovingAverage,
}

/// What to run between the panel and the alarms.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectorSpec {
    pub kind: DetectorKind,
    pub streams: Vec<String>,
    pub regions: Option<Vec<String>>,
    pub model: Model,
    pub statistic: Statistic,
    /// Combine the streams' p-values per region. The fused z is the statistic.
    pub fuse: bool,
    /// Replace each region's fits by its neighbours' average before fusing.
    pub network: Option<NeighborGraph>,
    pub aggregate: AggregateOptions,
    pub gap_policy: GapPolicy,
}

impl DetectorSpec {
    pub fn single(stream: &str, model: Model) -> Self {
        DetectorSpec {
            kind: DetectorKind::LocalRegression,
            streams: vec![stream.to_string()],
            regions: None,
            model,
            statistic: Statistic::Beta,
            fuse: false,
            network: None,
            aggregate: AggregateOptions::default(),
            gap_policy: GapPolicy::default(),
        }
    }
}

fn stats_from_fits(fits: &[FitSeries], statistic: Statistic) -> StatPanel {
    fits.iter()
        .map(|f| {
            let s = f.converged().map(|(d, x)| (d, statistic.of(x))).collect();
            (f.region_id.clone(), s)
        })
        .collect()
}

/// Compute the detection statistic for every region.
pub fn detector_stats(panel: &StreamPanel, spec: &DetectorSpec, window_n: usize) -> Result<StatPanel> {
    if spec.streams.is_empty() {
        return Err(Error::invalid("detector needs at least one stream"));
    }
    for s in &spec.streams {
        if !panel.has_stream(s) {
            return Err(Error::NotFound {
                kind: "stream",
                id: s.clone(),
            });
        }
    }
    let regions = match &spec.regions {
        Some(r) => {
            for id in r {
                if !panel.has_region(id) {
                    return Err(Error::NotFound {
                        kind: "region",
                        id: id.clone(),
                    });
                }
            }
            r.clone()
        }
        None => panel.regions(),
    };
    match spec.kind {
        DetectorKind::MovingAverage => {
            if spec.streams.len() != 1 {
                return Err(Error::invalid("the moving-average detector takes one stream"));
            }
            let stream = &spec.streams[0];
            regions
                .par_iter()
                .filter_map(|r| panel.series(r, stream).map(|s| (r, s)))
                .map(|(r, s)| Ok((r.clone(), moving_average_stat(s.start(), s.raw(), window_n)?)))
                .collect()
        }
        DetectorKind::LocalRegression => {
            let mut fits = rolling_fit_all(panel, &regions, &spec.streams, window_n, spec.model, spec.gap_policy)?;
            if let Some(graph) = &spec.network {
                let mut agg = Vec::new();
                for s in &spec.streams {
                    let one: Vec<FitSeries> = fits.iter().filter(|f| &f.stream_id == s).cloned().collect();
                    agg.extend(aggregate_growth(&one, graph, &spec.aggregate)?);
                }
                fits = agg;
            }
            if spec.fuse {
                let fused = fuse_all(&fits, &BTreeMap::new())?;
                Ok(fused
                    .into_iter()
                    .map(|f| (f.region_id, f.points.into_iter().map(|(d, p)| (d, p.z)).collect()))
                    .collect())
            } else if spec.streams.len() == 1 {
                Ok(stats_from_fits(&fits, spec.statistic))
            } else {
                Err(Error::invalid("several streams need fuse = true"))
            }
        }
    }
}

/// Everything one detector run produced.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectionRun {
    pub stats: StatPanel,
    pub thresholds: Thresholds,
    pub alarms: BTreeMap<String, Vec<Day>>,
    pub report: EvalReport,
}

/// Calibrate on `stats`, emit alarms and score them.
pub fn evaluate_stats(stats: StatPanel, truth: &TrendIntervalSet, config: &DetectionConfig) -> Result<DetectionRun> {
    let thresholds = calibrate_threshold(&stats, truth, config)?;
    let alarms = emit_all_alarms(&stats, &thresholds);
    let mut report = score_power_delay(&alarms, truth, config.max_delay, &stats)?;
    report.thresholds = Some(thresholds.clone());
    Ok(DetectionRun {
        stats,
        thresholds,
        alarms,
        report,
    })
}

pub fn run_detector(
    panel: &StreamPanel,
    spec: &DetectorSpec,
    window_n: usize,
    truth: &TrendIntervalSet,
    config: &DetectionConfig,
) -> Result<DetectionRun> {
    let stats = detector_stats(panel, spec, window_n)?;
    evaluate_stats(stats, truth, config)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub window: usize,
    pub power: Option<f64>,
    pub mean_delay: Option<f64>,
    pub realized_fpr: Option<f64>,
}

/// Run the detector once per window size. A failing cell is logged and left
/// empty.
pub fn window_sweep(
    panel: &StreamPanel,
    spec: &DetectorSpec,
    truth: &TrendIntervalSet,
    config: &DetectionConfig,
) -> Result<Vec<SweepRow>> {
    config.validate()?;
    Ok(config
        .window_sizes
        .iter()
        .map(|&w| match run_detector(panel, spec, w, truth, config) {
            Ok(run) => SweepRow {
                window: w,
                power: Some(run.report.power),
                mean_delay: Some(run.report.mean_delay),
                realized_fpr: Some(run.report.realized_fpr),
            },
            Err(e) => {
                log::warn!("window {w}: {e}");
                SweepRow {
                    window: w,
                    power: None,
                    mean_delay: None,
                    realized_fpr: None,
                }
            }
        })
        .collect())
}

/// CSV with header `window,power,mean_delay,realized_fpr`; empty cells for
/// failed windows.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["window", "power", "mean_delay", "realized_fpr"])?;
    let cell = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.window.to_string(),
            cell(r.power),
            cell(r.mean_delay),
            cell(r.realized_fpr),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<sweep csv>", e))?;
    Ok(())
}

/// CSV with header `region_id,date,statistic`.
pub fn write_alarms_csv<W: Write>(alarms: &BTreeMap<String, Vec<Day>>, stats: &StatPanel, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["region_id", "date", "statistic"])?;
    for (r, days) in alarms {
        for d in days {
            let v = stats.get(r).and_then(|s| s.get(d)).copied().unwrap_or(f64::NAN);
            w.write_record([r.as_str(), &d.to_string(), &v.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io("<alarm csv>", e))?;
    Ok(())
}
