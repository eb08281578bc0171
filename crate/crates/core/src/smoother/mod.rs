//! Retrospective smoothing with weekday effects.
//!
//! Each series `s` is modelled as `log μ_{s,t} = θ_s + α_{s,wd(t)} + z_t`
//! with a shared latent trend `z = log φ`. The objective is the sum of the
//! per-series negative log-likelihoods (Poisson on counts or Gaussian on log
//! counts) plus `λ·pen(Δ³z)`. It is minimised by block coordinate descent:
//! an exact weekday/scale block, a proximal Newton step on the trend, and an
//! exact variance update for log-normal series.

mod trend_filter;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::calendar::{Day, WEEKDAY_NAMES};
use crate::error::{Error, Result};
use crate::timeseries::StreamPanel;

pub use trend_filter::{prox_l1, prox_l2, BandedCholesky, BandedDiff, L1Solution};

/// Minimum series length accepted by the smoother.
pub const MIN_LENGTH: usize = 21;
const SIGMA2_FLOOR: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObsModel {
    Poisson,
    Lognormal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyKind {
    L1,
    L2,
}

/// Whether the difference penalty acts on `log φ` (convex) or on `φ`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltySpace {
    #[default]
    LogPhi,
    Phi,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeriesOptions {
    pub model: ObsModel,
    pub correct_weekday: bool,
}

impl Default for SeriesOptions {
    fn default() -> Self {
        SeriesOptions {
            model: ObsModel::Poisson,
            correct_weekday: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothConfig {
    pub penalty: PenaltyKind,
    pub lambda: f64,
    #[serde(default)]
    pub space: PenaltySpace,
    pub max_iter: usize,
    pub tol: f64,
    /// Options for series without an entry in `series`.
    pub default_series: SeriesOptions,
    /// Per-series options, by position.
    #[serde(default)]
    pub series: Vec<SeriesOptions>,
}

impl Default for SmoothConfig {
    fn default() -> Self {
        SmoothConfig {
            penalty: PenaltyKind::L1,
            lambda: 1000.0,
            space: PenaltySpace::LogPhi,
            max_iter: 500,
            tol: 1e-8,
            default_series: SeriesOptions::default(),
            series: Vec::new(),
        }
    }
}

impl SmoothConfig {
    pub fn new(penalty: PenaltyKind, lambda: f64) -> Self {
        SmoothConfig {
            penalty,
            lambda,
            ..SmoothConfig::default()
        }
    }

    pub fn with_series(mut self, options: SeriesOptions) -> Self {
        self.default_series = options;
        self
    }

    pub fn options_for(&self, s: usize) -> SeriesOptions {
        self.series.get(s).copied().unwrap_or(self.default_series)
    }

    fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::invalid(format!("lambda {} must be > 0", self.lambda)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid(format!("tol {} must be > 0", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be positive"));
        }
        Ok(())
    }
}

/// One daily series on the shared date axis; `None` marks a missing day.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesInput {
    pub name: String,
    pub values: Vec<Option<f64>>,
}

impl SeriesInput {
    pub fn new(name: impl Into<String>, values: Vec<Option<f64>>) -> Self {
        SeriesInput {
            name: name.into(),
            values,
        }
    }

    pub fn complete(name: impl Into<String>, values: &[f64]) -> Self {
        SeriesInput::new(name, values.iter().map(|&v| Some(v)).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothResult {
    pub start: Day,
    pub lambda: f64,
    pub penalty: PenaltyKind,
    pub space: PenaltySpace,
    pub series: Vec<String>,
    /// Weekday effects per series, Monday first.
    pub alpha: Vec<[f64; 7]>,
    pub theta: Vec<f64>,
    pub log_phi: Vec<f64>,
    pub corrected_xi: Vec<Vec<Option<f64>>>,
    /// Residual variance of log-normal series.
    pub sigma2: Vec<Option<f64>>,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl SmoothResult {
    pub fn len(&self) -> usize {
        self.log_phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_phi.is_empty()
    }

    pub fn end(&self) -> Day {
        self.start + (self.log_phi.len() as i32 - 1)
    }

    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().unwrap_or(&f64::NAN)
    }
}

/// Per-date growth `g_t = log φ_{t+1} − log φ_t`, dated at `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthSeries {
    pub start: Day,
    pub values: Vec<f64>,
}

impl GrowthSeries {
    pub fn end(&self) -> Day {
        self.start + (self.values.len() as i32 - 1)
    }

    pub fn get(&self, day: Day) -> Option<f64> {
        let i = day - self.start;
        if i < 0 {
            return None;
        }
        self.values.get(i as usize).copied()
    }
}

pub fn growth_series(smooth: &SmoothResult) -> Result<GrowthSeries> {
    growth_from_log(smooth.start, &smooth.log_phi)
}

pub fn growth_from_log(start: Day, log_phi: &[f64]) -> Result<GrowthSeries> {
    if log_phi.len() < 2 {
        return Err(Error::invalid("growth needs at least two trend values"));
    }
    Ok(GrowthSeries {
        start,
        values: log_phi.windows(2).map(|w| w[1] - w[0]).collect(),
    })
}

/// `ξ_t = y_t · exp(−α_{wd(t)})`.
pub fn weekday_correct(start: Day, values: &[Option<f64>], alpha: &[f64; 7]) -> Vec<Option<f64>> {
    values
        .iter()
        .enumerate()
        .map(|(t, v)| v.map(|y| y * (-alpha[(start + t as i32).weekday()]).exp()))
        .collect()
}

/// Inverse of [`weekday_correct`].
pub fn weekday_uncorrect(start: Day, values: &[Option<f64>], alpha: &[f64; 7]) -> Vec<Option<f64>> {
    values
        .iter()
        .enumerate()
        .map(|(t, v)| v.map(|y| y * alpha[(start + t as i32).weekday()].exp()))
        .collect()
}

pub fn smooth_univariate(start: Day, values: &[Option<f64>], config: &SmoothConfig) -> Result<SmoothResult> {
    smooth_multivariate(start, &[SeriesInput::new("y", values.to_vec())], config)
}

/// Joint smoothing of `S ≥ 1` series on one date axis with `θ_1 = 0`.
pub fn smooth_multivariate(start: Day, inputs: &[SeriesInput], config: &SmoothConfig) -> Result<SmoothResult> {
    let problem = Problem::new(start, inputs, config)?;
    problem.solve()
}

/// Smooths the given streams of one region over their common date span.
/// Missing days inside the span are left out of the likelihood.
pub fn smooth_region(
    panel: &StreamPanel,
    region: &str,
    streams: &[String],
    config: &SmoothConfig,
) -> Result<SmoothResult> {
    let (start, inputs) = region_inputs(panel, region, streams)?;
    smooth_multivariate(start, &inputs, config)
}

/// The streams of one region cut to their common span.
pub fn region_inputs(panel: &StreamPanel, region: &str, streams: &[String]) -> Result<(Day, Vec<SeriesInput>)> {
    if streams.is_empty() {
        return Err(Error::invalid("no streams to smooth"));
    }
    let mut lo = Day::from_epoch_days(i32::MIN / 2);
    let mut hi = Day::from_epoch_days(i32::MAX / 2);
    let mut all = Vec::new();
    for s in streams {
        let series = panel.series_checked(region, s)?;
        lo = lo.max(series.start());
        hi = hi.min(series.end());
        all.push(series);
    }
    if hi < lo {
        return Err(Error::InsufficientHistory {
            needed: MIN_LENGTH,
            available: 0,
        });
    }
    let inputs = streams
        .iter()
        .zip(all)
        .map(|(name, series)| {
            SeriesInput::new(name.clone(), lo.range_inclusive(hi).map(|d| series.get(d)).collect())
        })
        .collect();
    Ok((lo, inputs))
}

/// Minimises the objective over the trend alone, with `θ`, `α` and `σ²`
/// held fixed.
pub fn solve_trend_block(
    start: Day,
    inputs: &[SeriesInput],
    config: &SmoothConfig,
    theta: &[f64],
    alpha: &[[f64; 7]],
    sigma2: &[f64],
) -> Result<Vec<f64>> {
    let problem = Problem::new(start, inputs, config)?;
    let s = problem.series.len();
    if theta.len() != s || alpha.len() != s || sigma2.len() != s {
        return Err(Error::invalid("fixed parameters must have one entry per series"));
    }
    let mut state = problem.initial_state();
    state.theta = theta.to_vec();
    state.alpha = alpha.to_vec();
    state.sigma2 = sigma2.to_vec();
    let mut f = problem.objective(&state);
    let mut warm = None;
    for _ in 0..config.max_iter {
        let (moved, nf) = problem.trend_step(&mut state, f, &mut warm)?;
        let done = !moved || (f - nf) <= 1e-15 * f.abs().max(1.0);
        f = nf;
        if done {
            break;
        }
    }
    Ok(state.z)
}

struct Series {
    name: String,
    options: SeriesOptions,
    raw: Vec<Option<f64>>,
    /// Counts for Poisson series, logs for log-normal ones.
    resp: Vec<Option<f64>>,
    /// Σ log(y!) over observed days; constant in the parameters.
    log_factorials: f64,
}

struct Problem<'a> {
    start: Day,
    t: usize,
    weekday: Vec<usize>,
    series: Vec<Series>,
    config: &'a SmoothConfig,
    diff: BandedDiff,
}

#[derive(Clone)]
struct State {
    theta: Vec<f64>,
    alpha: Vec<[f64; 7]>,
    z: Vec<f64>,
    sigma2: Vec<f64>,
}

impl<'a> Problem<'a> {
    fn new(start: Day, inputs: &[SeriesInput], config: &'a SmoothConfig) -> Result<Self> {
        config.validate()?;
        let Some(first) = inputs.first() else {
            return Err(Error::invalid("no series to smooth"));
        };
        let t = first.values.len();
        if inputs.iter().any(|s| s.values.len() != t) {
            return Err(Error::invalid("series must share one date axis"));
        }
        if t < MIN_LENGTH {
            return Err(Error::InsufficientHistory {
                needed: MIN_LENGTH,
                available: t,
            });
        }
        let weekday: Vec<usize> = (0..t).map(|i| (start + i as i32).weekday()).collect();
        let mut series = Vec::with_capacity(inputs.len());
        for (s, input) in inputs.iter().enumerate() {
            let options = config.options_for(s);
            if let Some(v) = input.values.iter().flatten().find(|v| !v.is_finite() || **v < 0.0) {
                return Err(Error::invalid(format!(
                    "series `{}` has invalid value {v}",
                    input.name
                )));
            }
            let observed: Vec<usize> = (0..t).filter(|&i| input.values[i].is_some()).collect();
            if observed.is_empty() {
                return Err(Error::Degenerate(format!("series `{}` has no observations", input.name)));
            }
            if options.correct_weekday {
                for d in 0..7 {
                    if !observed.iter().any(|&i| weekday[i] == d) {
                        return Err(Error::Degenerate(format!(
                            "series `{}` has no {} observations",
                            input.name, WEEKDAY_NAMES[d]
                        )));
                    }
                }
            }
            let (resp, log_factorials) = match options.model {
                ObsModel::Poisson => {
                    if let Some(v) = input.values.iter().flatten().find(|v| (*v - v.round()).abs() > 1e-9) {
                        return Err(Error::invalid(format!(
                            "series `{}` is Poisson but has non-integer value {v}",
                            input.name
                        )));
                    }
                    let lf = input.values.iter().flatten().map(|&y| libm::lgamma(y + 1.0)).sum();
                    (input.values.clone(), lf)
                }
                ObsModel::Lognormal => {
                    let shift = if input.values.iter().flatten().any(|&v| v == 0.0) {
                        0.5
                    } else {
                        0.0
                    };
                    let resp = input.values.iter().map(|v| v.map(|y| (y + shift).ln())).collect();
                    (resp, 0.0)
                }
            };
            series.push(Series {
                name: input.name.clone(),
                options,
                raw: input.values.clone(),
                resp,
                log_factorials,
            });
        }
        Ok(Problem {
            start,
            t,
            weekday,
            series,
            config,
            diff: BandedDiff::third(t),
        })
    }

    fn initial_state(&self) -> State {
        let s = self.series.len();
        // Centred 7-day mean of the first series, widened where a window has
        // no observations.
        let raw = &self.series[0].raw;
        let mut z = vec![0.0; self.t];
        for (i, zi) in z.iter_mut().enumerate() {
            let mut half = 3usize;
            loop {
                let lo = i.saturating_sub(half);
                let hi = (i + half).min(self.t - 1);
                let vals: Vec<f64> = raw[lo..=hi].iter().flatten().copied().collect();
                if !vals.is_empty() {
                    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                    *zi = (mean + 0.5).ln();
                    break;
                }
                half *= 2;
            }
        }
        let mut state = State {
            theta: vec![0.0; s],
            alpha: vec![[0.0; 7]; s],
            z,
            sigma2: vec![1.0; s],
        };
        self.update_sigma2(&mut state);
        state
    }

    fn eta(&self, state: &State, s: usize, t: usize) -> f64 {
        state.theta[s] + state.alpha[s][self.weekday[t]] + state.z[t]
    }

    fn nll(&self, state: &State) -> f64 {
        let mut total = 0.0;
        for (s, ser) in self.series.iter().enumerate() {
            match ser.options.model {
                ObsModel::Poisson => {
                    let mut acc = ser.log_factorials;
                    for (t, y) in ser.resp.iter().enumerate() {
                        if let Some(y) = y {
                            let eta = self.eta(state, s, t);
                            acc += eta.exp() - y * eta;
                        }
                    }
                    total += acc;
                }
                ObsModel::Lognormal => {
                    let s2 = state.sigma2[s];
                    let mut rss = 0.0;
                    let mut n = 0usize;
                    for (t, l) in ser.resp.iter().enumerate() {
                        if let Some(l) = l {
                            let r = l - self.eta(state, s, t);
                            rss += r * r;
                            n += 1;
                        }
                    }
                    total += rss / (2.0 * s2) + 0.5 * n as f64 * (2.0 * std::f64::consts::PI * s2).ln();
                }
            }
        }
        total
    }

    fn penalty(&self, z: &[f64]) -> f64 {
        let dz = match self.config.space {
            PenaltySpace::LogPhi => self.diff.apply(z),
            PenaltySpace::Phi => {
                let phi: Vec<f64> = z.iter().map(|v| v.exp()).collect();
                self.diff.apply(&phi)
            }
        };
        match self.config.penalty {
            PenaltyKind::L1 => dz.iter().map(|v| v.abs()).sum(),
            PenaltyKind::L2 => dz.iter().map(|v| v * v).sum(),
        }
    }

    fn objective(&self, state: &State) -> f64 {
        self.nll(state) + self.config.lambda * self.penalty(&state.z)
    }

    fn update_sigma2(&self, state: &mut State) {
        for (s, ser) in self.series.iter().enumerate() {
            if ser.options.model != ObsModel::Lognormal {
                continue;
            }
            let mut rss = 0.0;
            let mut n = 0usize;
            for (t, l) in ser.resp.iter().enumerate() {
                if let Some(l) = l {
                    let r = l - self.eta(state, s, t);
                    rss += r * r;
                    n += 1;
                }
            }
            state.sigma2[s] = (rss / n as f64).max(SIGMA2_FLOOR);
        }
    }

    /// Exact minimisation over `(θ_s, α_s)` for every series.
    fn update_weekday(&self, state: &mut State) -> Result<()> {
        for (s, ser) in self.series.iter().enumerate() {
            let free_theta = s > 0;
            let correct = ser.options.correct_weekday;
            if !free_theta && !correct {
                continue;
            }
            match ser.options.model {
                ObsModel::Poisson => {
                    let mut y = [0.0; 7];
                    let mut m = [0.0; 7];
                    for (t, v) in ser.resp.iter().enumerate() {
                        if let Some(v) = v {
                            y[self.weekday[t]] += v;
                            m[self.weekday[t]] += state.z[t].exp();
                        }
                    }
                    if correct && free_theta {
                        let mut a = [0.0; 7];
                        for d in 0..7 {
                            if y[d] == 0.0 {
                                return Err(Error::Degenerate(format!(
                                    "series `{}` has no counts on {}",
                                    ser.name, WEEKDAY_NAMES[d]
                                )));
                            }
                            a[d] = (y[d] / m[d]).ln();
                        }
                        let theta = a.iter().sum::<f64>() / 7.0;
                        state.theta[s] = theta;
                        state.alpha[s] = a.map(|ad| ad - theta);
                    } else if correct {
                        state.alpha[s] = constrained_poisson_alpha(&y, &m);
                    } else {
                        let (ys, ms): (f64, f64) = (y.iter().sum(), m.iter().sum());
                        if ys == 0.0 {
                            return Err(Error::Degenerate(format!("series `{}` is all zero", ser.name)));
                        }
                        state.theta[s] = (ys / ms).ln();
                    }
                }
                ObsModel::Lognormal => {
                    let mut r = [0.0; 7];
                    let mut n = [0.0; 7];
                    for (t, v) in ser.resp.iter().enumerate() {
                        if let Some(l) = v {
                            r[self.weekday[t]] += l - state.z[t];
                            n[self.weekday[t]] += 1.0;
                        }
                    }
                    if correct && free_theta {
                        let a: [f64; 7] = std::array::from_fn(|d| r[d] / n[d]);
                        let theta = a.iter().sum::<f64>() / 7.0;
                        state.theta[s] = theta;
                        state.alpha[s] = a.map(|ad| ad - theta);
                    } else if correct {
                        // min Σ_d n_d(α_d − r̄_d)² subject to Σα = 0.
                        let rbar: [f64; 7] = std::array::from_fn(|d| r[d] / n[d]);
                        let kappa = rbar.iter().sum::<f64>() / n.iter().map(|v| 1.0 / v).sum::<f64>();
                        let mut a: [f64; 7] = std::array::from_fn(|d| rbar[d] - kappa / n[d]);
                        center(&mut a);
                        state.alpha[s] = a;
                    } else {
                        state.theta[s] = r.iter().sum::<f64>() / n.iter().sum::<f64>();
                    }
                }
            }
        }
        Ok(())
    }

    /// Exact move along the level direction: `z += δ` with `θ_s −= δ` for the
    /// free scales. Only the anchor series' likelihood changes, and the
    /// penalty is blind to constants in log space. Without this block the
    /// anchor level and the free scales converge by slow zig-zagging.
    fn update_level(&self, state: &mut State) {
        if self.config.space != PenaltySpace::LogPhi {
            return;
        }
        let ser = &self.series[0];
        let delta = match ser.options.model {
            ObsModel::Poisson => {
                let (mut y, mut m) = (0.0, 0.0);
                for (t, v) in ser.resp.iter().enumerate() {
                    if let Some(v) = v {
                        y += v;
                        m += self.eta(state, 0, t).exp();
                    }
                }
                if y > 0.0 {
                    (y / m).ln()
                } else {
                    0.0
                }
            }
            ObsModel::Lognormal => {
                let (mut r, mut n) = (0.0, 0.0);
                for (t, v) in ser.resp.iter().enumerate() {
                    if let Some(l) = v {
                        r += l - self.eta(state, 0, t);
                        n += 1.0;
                    }
                }
                r / n
            }
        };
        if !delta.is_finite() {
            return;
        }
        for z in state.z.iter_mut() {
            *z += delta;
        }
        for theta in state.theta.iter_mut().skip(1) {
            *theta -= delta;
        }
    }

    /// Gradient and curvature of the likelihood in `z`, per day.
    fn trend_derivatives(&self, state: &State) -> (Vec<f64>, Vec<f64>) {
        let mut g = vec![0.0; self.t];
        let mut h = vec![0.0; self.t];
        for (s, ser) in self.series.iter().enumerate() {
            for (t, v) in ser.resp.iter().enumerate() {
                let Some(v) = v else { continue };
                let eta = self.eta(state, s, t);
                match ser.options.model {
                    ObsModel::Poisson => {
                        let mu = eta.exp();
                        g[t] += mu - v;
                        h[t] += mu;
                    }
                    ObsModel::Lognormal => {
                        let s2 = state.sigma2[s];
                        g[t] -= (v - eta) / s2;
                        h[t] += 1.0 / s2;
                    }
                }
            }
        }
        let hmax = h.iter().cloned().fold(0.0, f64::max);
        let floor = (1e-8 * hmax).max(1e-12);
        for hv in h.iter_mut() {
            *hv = hv.max(floor);
        }
        (g, h)
    }

    /// One proximal Newton step on `z` with backtracking on the full
    /// objective. Returns whether `z` moved and the new objective.
    fn trend_step(&self, state: &mut State, f0: f64, warm: &mut Option<Vec<f64>>) -> Result<(bool, f64)> {
        let lambda = self.config.lambda;
        let (g, h) = self.trend_derivatives(state);
        let z = &state.z;
        let u: Vec<f64> = z.iter().zip(&g).zip(&h).map(|((zi, gi), hi)| zi - gi / hi).collect();
        // Penalty operator and offset, linearised around z in φ space.
        let (d, c) = match self.config.space {
            PenaltySpace::LogPhi => (self.diff.clone(), vec![0.0; self.diff.rows()]),
            PenaltySpace::Phi => {
                let phi: Vec<f64> = z.iter().map(|v| v.exp()).collect();
                let d = BandedDiff::third_scaled(&phi);
                let dz = d.apply(z);
                let dphi = self.diff.apply(&phi);
                let c = dz.iter().zip(&dphi).map(|(a, b)| a - b).collect();
                (d, c)
            }
        };
        let x = match self.config.penalty {
            PenaltyKind::L1 => {
                let sol = prox_l1(&h, &u, &d, &c, lambda, warm.as_deref())?;
                *warm = Some(sol.dual);
                sol.x
            }
            PenaltyKind::L2 => prox_l2(&h, &u, &d, &c, lambda)?,
        };
        let lin_pen = |v: &[f64]| -> f64 {
            let r = d.apply(v);
            match self.config.penalty {
                PenaltyKind::L1 => r.iter().zip(&c).map(|(a, b)| (a - b).abs()).sum(),
                PenaltyKind::L2 => r.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum(),
            }
        };
        let dir: Vec<f64> = x.iter().zip(z).map(|(a, b)| a - b).collect();
        let decrease = g.iter().zip(&dir).map(|(a, b)| a * b).sum::<f64>() + lambda * (lin_pen(&x) - lin_pen(z));
        if !(decrease < 0.0) {
            return Ok((false, f0));
        }
        let mut step = 1.0;
        let mut trial = state.clone();
        for _ in 0..40 {
            if step == 1.0 {
                trial.z.copy_from_slice(&x);
            } else {
                for (tz, (zi, di)) in trial.z.iter_mut().zip(state.z.iter().zip(&dir)) {
                    *tz = zi + step * di;
                }
            }
            let f = self.objective(&trial);
            if f.is_finite() && f <= f0 + 1e-4 * step * decrease {
                if f < f0 {
                    state.z = trial.z;
                    return Ok((true, f));
                }
                return Ok((false, f0));
            }
            step *= 0.5;
        }
        Ok((false, f0))
    }

    fn solve(&self) -> Result<SmoothResult> {
        let mut state = self.initial_state();
        let mut f = self.objective(&state);
        if !f.is_finite() {
            return Err(Error::Numeric("objective is not finite at the starting point".into()));
        }
        let mut trace = vec![f];
        let mut warm = None;
        let mut converged = false;
        let mut iterations = 0;
        for it in 1..=self.config.max_iter {
            iterations = it;
            let f_start = f;
            // Closed-form blocks. A rounding-level increase is rejected so the
            // recorded trace stays monotone.
            let mut next = state.clone();
            self.update_weekday(&mut next)?;
            let fw = self.objective(&next);
            if fw <= f {
                state = next;
                f = fw;
            }
            let mut next = state.clone();
            self.update_level(&mut next);
            let fl = self.objective(&next);
            if fl <= f {
                state = next;
                f = fl;
            }
            let mut next = state.clone();
            self.update_sigma2(&mut next);
            let fs = self.objective(&next);
            if fs <= f {
                state = next;
                f = fs;
            }
            let mut moved = false;
            for _ in 0..2 {
                let (m, nf) = self.trend_step(&mut state, f, &mut warm)?;
                f = nf;
                moved |= m;
                if !m {
                    break;
                }
            }
            trace.push(f);
            if !f.is_finite() {
                return Err(Error::Numeric("objective diverged".into()));
            }
            if f_start - f <= self.config.tol * f.abs().max(1.0) || (!moved && f == f_start) {
                converged = true;
                break;
            }
        }
        Ok(self.result(state, trace, iterations, converged))
    }

    fn result(&self, mut state: State, trace: Vec<f64>, iterations: usize, converged: bool) -> SmoothResult {
        for a in state.alpha.iter_mut() {
            center(a);
        }
        let corrected_xi = self
            .series
            .iter()
            .zip(&state.alpha)
            .map(|(ser, a)| weekday_correct(self.start, &ser.raw, a))
            .collect();
        let sigma2 = self
            .series
            .iter()
            .zip(&state.sigma2)
            .map(|(ser, &s2)| (ser.options.model == ObsModel::Lognormal).then_some(s2))
            .collect();
        SmoothResult {
            start: self.start,
            lambda: self.config.lambda,
            penalty: self.config.penalty,
            space: self.config.space,
            series: self.series.iter().map(|s| s.name.clone()).collect(),
            alpha: state.alpha,
            theta: state.theta,
            log_phi: state.z,
            corrected_xi,
            sigma2,
            objective_trace: trace,
            iterations,
            converged,
        }
    }
}

/// Removes the mean so the effects sum to zero.
fn center(a: &mut [f64; 7]) {
    let m = a.iter().sum::<f64>() / 7.0;
    for v in a.iter_mut() {
        *v -= m;
    }
}

/// Minimises `Σ_d (m_d e^{α_d} − y_d α_d)` subject to `Σ α_d = 0`. The
/// stationarity condition gives `α_d = log((y_d − ν)/m_d)` with `ν` the root
/// of `Σ log(y_d − ν) = Σ log m_d`.
fn constrained_poisson_alpha(y: &[f64; 7], m: &[f64; 7]) -> [f64; 7] {
    let target: f64 = m.iter().map(|v| v.ln()).sum();
    let g = |nu: f64| y.iter().map(|yd| (yd - nu).ln()).sum::<f64>() - target;
    let hi = y.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut width = hi.abs().max(1.0);
    while g(hi - width) <= 0.0 {
        width *= 2.0;
    }
    let (mut lo, mut up) = (hi - width, hi);
    // g is decreasing on (−∞, min y).
    for _ in 0..300 {
        let mid = 0.5 * (lo + up);
        if mid <= lo || mid >= up {
            break;
        }
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            up = mid;
        }
    }
    let nu = lo;
    let mut a: [f64; 7] = std::array::from_fn(|d| ((y[d] - nu) / m[d]).ln());
    center(&mut a);
    a
}

/// CSV with header `date,log_phi,xi_<series>...`.
pub fn write_smooth_csv<W: Write>(result: &SmoothResult, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["date".to_string(), "log_phi".to_string()];
    header.extend(result.series.iter().map(|s| format!("xi_{s}")));
    w.write_record(&header)?;
    for (t, z) in result.log_phi.iter().enumerate() {
        let mut row = vec![(result.start + t as i32).to_string(), z.to_string()];
        for xi in &result.corrected_xi {
            row.push(xi[t].map(|v| v.to_string()).unwrap_or_default());
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<smooth csv>", e))?;
    Ok(())
}

#[derive(Serialize)]
struct Sidecar<'a> {
    lambda: f64,
    penalty: PenaltyKind,
    space: PenaltySpace,
    series: &'a [String],
    alpha: Vec<std::collections::BTreeMap<&'static str, f64>>,
    theta: &'a [f64],
    sigma2: &'a [Option<f64>],
    objective_trace: &'a [f64],
    iterations: usize,
    converged: bool,
}

/// JSON sidecar with the fitted parameters and solver diagnostics.
pub fn write_smooth_sidecar<W: Write>(result: &SmoothResult, writer: W) -> Result<()> {
    let alpha = result
        .alpha
        .iter()
        .map(|a| WEEKDAY_NAMES.iter().copied().zip(a.iter().copied()).collect())
        .collect();
    let sidecar = Sidecar {
        lambda: result.lambda,
        penalty: result.penalty,
        space: result.space,
        series: &result.series,
        alpha,
        theta: &result.theta,
        sigma2: &result.sigma2,
        objective_trace: &result.objective_trace,
        iterations: result.iterations,
        converged: result.converged,
    };
    serde_json::to_writer_pretty(writer, &sidecar)?;
    Ok(())
}
