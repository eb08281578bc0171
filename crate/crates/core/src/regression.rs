//! Local growth-rate regression over a trailing window.
//!
//! Three observation models share the log-linear mean `log μ_i = α + iβ`
//! for day indices `i = 1..n`: Gaussian noise on `log y`, Poisson counts, and
//! Negative Binomial counts with a plug-in dispersion.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calendar::Day;
use crate::error::{Error, Result};
use crate::stats::normal_sf;
use crate::timeseries::{extract_window, GapPolicy, StreamKind, StreamPanel, Window};

const SCORE_TOL: f64 = 1e-8;
const MAX_ITER: usize = 50;
const INTEGER_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    LinearLog,
    Poisson,
    Negbin,
}

impl Model {
    pub fn as_str(self) -> &'static str {
        match self {
            Model::LinearLog => "linear_log",
            Model::Poisson => "poisson",
            Model::Negbin => "negbin",
        }
    }

    /// Whether the model needs integer counts.
    pub fn needs_counts(self) -> bool {
        !matches!(self, Model::LinearLog)
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "linear_log" | "linear" | "lognormal" => Ok(Model::LinearLog),
            "poisson" => Ok(Model::Poisson),
            "negbin" | "negative_binomial" | "nb" => Ok(Model::Negbin),
            _ => Err(Error::invalid(format!("unknown model `{s}`"))),
        }
    }
}

/// One local fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub model: Model,
    pub alpha_hat: f64,
    pub beta_hat: f64,
    pub se_beta: f64,
    pub z_score: f64,
    pub p_one_sided: f64,
    pub n: usize,
    /// `c = 1/r`; zero outside the Negative Binomial model.
    pub dispersion_c: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl RegressionFit {
    #[allow(clippy::too_many_arguments)]
    fn finish(
        model: Model,
        alpha: f64,
        beta: f64,
        se: f64,
        n: usize,
        c: f64,
        converged: bool,
        iterations: usize,
    ) -> Self {
        let z = z_score(beta, se);
        RegressionFit {
            model,
            alpha_hat: alpha,
            beta_hat: beta,
            se_beta: se,
            z_score: z,
            p_one_sided: normal_sf(z),
            n,
            dispersion_c: c,
            converged,
            iterations,
        }
    }

    /// Fitted means `exp(α + iβ)` for `i = 1..n`.
    pub fn fitted_means(&self) -> Vec<f64> {
        (1..=self.n)
            .map(|i| (self.alpha_hat + self.beta_hat * i as f64).exp())
            .collect()
    }
}

/// β/se with the zero-variance cases pinned: a flat fit gives z = 0 and a
/// noiseless nonzero slope gives ±∞.
fn z_score(beta: f64, se: f64) -> f64 {
    if se > 0.0 {
        beta / se
    } else if beta == 0.0 {
        0.0
    } else {
        beta.signum() * f64::INFINITY
    }
}

/// One-sided p-value for H0: β ≤ 0. `None` for a fit that did not converge.
pub fn growth_pvalue(fit: &RegressionFit) -> Option<f64> {
    fit.converged.then(|| normal_sf(z_score(fit.beta_hat, fit.se_beta)))
}

/// Log-transformed window values, with `y + 0.5` applied to every value
/// when any value is zero.
pub fn log_values(values: &[f64]) -> Vec<f64> {
    let shift = if values.contains(&0.0) { 0.5 } else { 0.0 };
    values.iter().map(|&v| (v + shift).ln()).collect()
}

/// Ordinary least squares of `log y` on the day index.
pub fn fit_linear_log(window: &Window) -> Result<RegressionFit> {
    let n = window.len();
    let l = log_values(window.values());
    let nf = n as f64;
    let mid = (nf + 1.0) / 2.0;
    // Pair i with n+1-i so that reversing the window negates β bit for bit.
    let mut sxy = 0.0;
    for k in 0..n / 2 {
        let c = (k + 1) as f64 - mid;
        sxy += c * (l[k] - l[n - 1 - k]);
    }
    let sxx = nf * (nf * nf - 1.0) / 12.0;
    let beta = sxy / sxx;
    let lbar = l.iter().sum::<f64>() / nf;
    let alpha = lbar - beta * mid;
    let rss: f64 = l
        .iter()
        .enumerate()
        .map(|(i, &li)| {
            let r = li - alpha - beta * (i + 1) as f64;
            r * r
        })
        .sum();
    let sigma2 = rss / (nf - 2.0);
    let se = (12.0 * sigma2 / (nf * nf * nf - nf)).sqrt();
    Ok(RegressionFit::finish(
        Model::LinearLog,
        alpha,
        beta,
        se,
        n,
        0.0,
        true,
        0,
    ))
}

fn check_counts(window: &Window) -> Result<()> {
    if let Some(v) = window
        .values()
        .iter()
        .find(|v| (**v - v.round()).abs() > INTEGER_TOL)
    {
        return Err(Error::invalid(format!(
            "count model needs integer values, got {v}"
        )));
    }
    if window.values().iter().all(|&v| v == 0.0) {
        return Err(Error::Degenerate("all-zero window".into()));
    }
    Ok(())
}

/// Log-linear GLM fit with centred time `x_i = i − (n+1)/2`. `c = 0` is
/// Poisson; `c > 0` is the Negative Binomial likelihood at fixed `c`.
struct GlmFit {
    a: f64,
    b: f64,
    se: f64,
    converged: bool,
    iterations: usize,
}

fn loglik(y: &[f64], x: &[f64], a: f64, b: f64, c: f64) -> f64 {
    y.iter()
        .zip(x)
        .map(|(&yi, &xi)| {
            let eta = a + b * xi;
            if c > 0.0 {
                yi * eta - (yi + 1.0 / c) * (c * eta.exp()).ln_1p()
            } else {
                yi * eta - eta.exp()
            }
        })
        .sum()
}

/// Score in the original `(α, β)` parametrisation, which is what the
/// convergence criterion is stated on.
fn score(y: &[f64], x: &[f64], a: f64, b: f64, c: f64, mid: f64) -> (f64, f64) {
    let mut ua = 0.0;
    let mut ub = 0.0;
    for (&yi, &xi) in y.iter().zip(x) {
        let mu = (a + b * xi).exp();
        let r = (yi - mu) / (1.0 + c * mu);
        ua += r;
        ub += r * (xi + mid);
    }
    (ua, ub)
}

fn glm_fit(y: &[f64], c: f64, init: (f64, f64)) -> GlmFit {
    let n = y.len();
    let mid = (n as f64 + 1.0) / 2.0;
    let x: Vec<f64> = (1..=n).map(|i| i as f64 - mid).collect();
    let (mut a, mut b) = init;
    let mut ll = loglik(y, &x, a, b, c);
    let mut iterations = 0;
    let mut converged = false;
    for it in 0..=MAX_ITER {
        let (ua, ub) = score(y, &x, a, b, c, mid);
        if ua.abs().max(ub.abs()) < SCORE_TOL {
            converged = true;
            iterations = it;
            break;
        }
        if it == MAX_ITER {
            iterations = it;
            break;
        }
        // Newton step with the observed information, which stays positive
        // definite for both likelihoods: w = μ(1 + c·y)/(1 + cμ)².
        let (mut h00, mut h01, mut h11, mut g0, mut g1) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&yi, &xi) in y.iter().zip(&x) {
            let mu = (a + b * xi).exp();
            let d = 1.0 + c * mu;
            let w = mu * (1.0 + c * yi) / (d * d);
            let r = (yi - mu) / d;
            h00 += w;
            h01 += w * xi;
            h11 += w * xi * xi;
            g0 += r;
            g1 += r * xi;
        }
        let det = h00 * h11 - h01 * h01;
        if !(det > 0.0) || !det.is_finite() {
            iterations = it;
            break;
        }
        let da = (h11 * g0 - h01 * g1) / det;
        let db = (h00 * g1 - h01 * g0) / det;
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let (na, nb) = (a + step * da, b + step * db);
            let nll = loglik(y, &x, na, nb, c);
            // Allow rounding-level decreases so the final polishing steps
            // near the optimum are not rejected.
            if nll.is_finite() && nll >= ll - 1e-12 * ll.abs().max(1.0) {
                a = na;
                b = nb;
                ll = nll;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            iterations = it + 1;
            let (ua, ub) = score(y, &x, a, b, c, mid);
            converged = ua.abs().max(ub.abs()) < SCORE_TOL;
            break;
        }
    }
    // Expected information Σ μ/(1+cμ) x xᵀ; var(β) is its inverse's (1,1)
    // entry, identical in centred and original time.
    let (mut i00, mut i01, mut i11) = (0.0, 0.0, 0.0);
    for &xi in &x {
        let mu = (a + b * xi).exp();
        let w = mu / (1.0 + c * mu);
        i00 += w;
        i01 += w * xi;
        i11 += w * xi * xi;
    }
    let var_b = 1.0 / (i11 - i01 * i01 / i00);
    let se = var_b.sqrt();
    // With a single nonzero day the likelihood has no maximiser; the
    // iterations merely drive β off towards ±∞ until the score underflows.
    let support = y.iter().filter(|&&v| v > 0.0).count();
    GlmFit {
        a,
        b,
        se,
        converged: converged && support >= 2 && se.is_finite() && se > 0.0,
        iterations,
    }
}

/// Starting point from the log-linear fit, with the intercept chosen so the
/// Poisson intercept score is zero.
fn glm_init(y: &[f64]) -> (f64, f64) {
    let n = y.len();
    let mid = (n as f64 + 1.0) / 2.0;
    let l = log_values(y);
    let sxx = n as f64 * ((n * n) as f64 - 1.0) / 12.0;
    let mut b = l
        .iter()
        .enumerate()
        .map(|(i, li)| (i as f64 + 1.0 - mid) * li)
        .sum::<f64>()
        / sxx;
    if !b.is_finite() {
        b = 0.0;
    }
    let denom: f64 = (1..=n).map(|i| (b * (i as f64 - mid)).exp()).sum();
    let a = (y.iter().sum::<f64>() / denom).ln();
    (a, b)
}

/// Poisson maximum likelihood by Newton iterations with step halving.
pub fn fit_poisson(window: &Window) -> Result<RegressionFit> {
    check_counts(window)?;
    let y = window.values();
    let n = y.len();
    let fit = glm_fit(y, 0.0, glm_init(y));
    let mid = (n as f64 + 1.0) / 2.0;
    Ok(RegressionFit::finish(
        Model::Poisson,
        fit.a - fit.b * mid,
        fit.b,
        fit.se,
        n,
        0.0,
        fit.converged,
        fit.iterations,
    ))
}

/// Plug-in dispersion `ĉ = (V̂(y) − Ê(μ) + Ê²(μ)) / Ê(μ²) − 1` from window
/// moments (divisor n), clamped at zero.
pub fn estimate_dispersion(window: &Window, mu: &[f64]) -> f64 {
    let y = window.values();
    let n = y.len() as f64;
    let ey = y.iter().sum::<f64>() / n;
    let vy = y.iter().map(|v| (v - ey) * (v - ey)).sum::<f64>() / n;
    let emu = mu.iter().sum::<f64>() / mu.len() as f64;
    let emu2 = mu.iter().map(|m| m * m).sum::<f64>() / mu.len() as f64;
    let c = (vy - emu + emu * emu) / emu2 - 1.0;
    if c.is_finite() {
        c.max(0.0)
    } else {
        0.0
    }
}

/// Negative Binomial fit at the plug-in dispersion from a Poisson fit.
pub fn fit_negbin(window: &Window) -> Result<RegressionFit> {
    let pois = fit_poisson(window)?;
    let c = estimate_dispersion(window, &pois.fitted_means());
    fit_negbin_with(window, c, Some(&pois))
}

/// Negative Binomial fit at a fixed dispersion `c`.
pub fn fit_negbin_fixed(window: &Window, c: f64) -> Result<RegressionFit> {
    if !(c >= 0.0) || !c.is_finite() {
        return Err(Error::invalid(format!("dispersion {c} must be finite and >= 0")));
    }
    check_counts(window)?;
    fit_negbin_with(window, c, None)
}

fn fit_negbin_with(window: &Window, c: f64, pois: Option<&RegressionFit>) -> Result<RegressionFit> {
    let y = window.values();
    let n = y.len();
    let mid = (n as f64 + 1.0) / 2.0;
    if c == 0.0 {
        let mut fit = match pois {
            Some(p) => p.clone(),
            None => fit_poisson(window)?,
        };
        fit.model = Model::Negbin;
        return Ok(fit);
    }
    let init = match pois {
        Some(p) => (p.alpha_hat + p.beta_hat * mid, p.beta_hat),
        None => glm_init(y),
    };
    let fit = glm_fit(y, c, init);
    Ok(RegressionFit::finish(
        Model::Negbin,
        fit.a - fit.b * mid,
        fit.b,
        fit.se,
        n,
        c,
        fit.converged,
        fit.iterations,
    ))
}

pub fn fit_window(window: &Window, model: Model) -> Result<RegressionFit> {
    match model {
        Model::LinearLog => fit_linear_log(window),
        Model::Poisson => fit_poisson(window),
        Model::Negbin => fit_negbin(window),
    }
}

/// Rolling fits for one (region, stream) pair. Dates whose window could not
/// be built or fitted are recorded in `failures`.
#[derive(Clone, Debug, PartialEq)]
pub struct FitSeries {
    pub region_id: String,
    pub stream_id: String,
    pub window_n: usize,
    pub model: Model,
    pub fits: BTreeMap<Day, RegressionFit>,
    pub failures: BTreeMap<Day, String>,
}

impl FitSeries {
    pub fn new(region_id: &str, stream_id: &str, window_n: usize, model: Model) -> Self {
        FitSeries {
            region_id: region_id.to_string(),
            stream_id: stream_id.to_string(),
            window_n,
            model,
            fits: BTreeMap::new(),
            failures: BTreeMap::new(),
        }
    }

    pub fn get(&self, day: Day) -> Option<&RegressionFit> {
        self.fits.get(&day)
    }

    /// Converged fits only.
    pub fn converged(&self) -> impl Iterator<Item = (Day, &RegressionFit)> + '_ {
        self.fits
            .iter()
            .filter(|(_, f)| f.converged)
            .map(|(d, f)| (*d, f))
    }

    pub fn len(&self) -> usize {
        self.fits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fits.is_empty()
    }
}

/// One fit per end date with `window_n` days of trailing history.
pub fn rolling_fit(
    panel: &StreamPanel,
    region: &str,
    stream: &str,
    window_n: usize,
    model: Model,
    policy: GapPolicy,
) -> Result<FitSeries> {
    if window_n < 3 {
        return Err(Error::invalid(format!("window size {window_n} < 3")));
    }
    let series = panel.series_checked(region, stream)?;
    if model.needs_counts() && panel.stream_kind(stream) == Some(StreamKind::Rate) {
        return Err(Error::invalid(format!(
            "stream `{stream}` holds rates; the {model} model needs counts"
        )));
    }
    let mut out = FitSeries::new(region, stream, window_n, model);
    let first = series.start() + (window_n as i32 - 1);
    if first > series.end() {
        return Ok(out);
    }
    let days: Vec<Day> = first.range_inclusive(series.end()).collect();
    let results: Vec<(Day, Result<RegressionFit>)> = days
        .par_iter()
        .map(|&end| {
            let fit = extract_window(panel, region, stream, end, window_n, policy)
                .and_then(|w| fit_window(&w, model));
            (end, fit)
        })
        .collect();
    for (day, res) in results {
        match res {
            Ok(fit) => {
                out.fits.insert(day, fit);
            }
            Err(e) => {
                out.failures.insert(day, e.to_string());
            }
        }
    }
    Ok(out)
}

/// Rolling fits for every (region, stream) pair requested, in sorted order.
pub fn rolling_fit_all(
    panel: &StreamPanel,
    regions: &[String],
    streams: &[String],
    window_n: usize,
    model: Model,
    policy: GapPolicy,
) -> Result<Vec<FitSeries>> {
    for s in streams {
        if !panel.has_stream(s) {
            return Err(Error::NotFound {
                kind: "stream",
                id: s.clone(),
            });
        }
    }
    let pairs: Vec<(&String, &String)> = regions
        .iter()
        .flat_map(|r| streams.iter().map(move |s| (r, s)))
        .filter(|(r, s)| panel.series(r, s).is_some())
        .collect();
    pairs
        .par_iter()
        .map(|(r, s)| rolling_fit(panel, r, s, window_n, model, policy))
        .collect()
}

/// CSV with header `region_id,stream_id,date,model,beta,se,z,p,converged`.
pub fn write_fit_series_csv<W: Write>(series: &[FitSeries], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "region_id",
        "stream_id",
        "date",
        "model",
        "beta",
        "se",
        "z",
        "p",
        "converged",
    ])?;
    for s in series {
        for (day, f) in &s.fits {
            w.write_record([
                s.region_id.as_str(),
                s.stream_id.as_str(),
                &day.to_string(),
                f.model.as_str(),
                &f.beta_hat.to_string(),
                &f.se_beta.to_string(),
                &f.z_score.to_string(),
                &f.p_one_sided.to_string(),
                if f.converged { "true" } else { "false" },
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<fit csv>", e))?;
    Ok(())
}
