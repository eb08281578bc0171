//! Stouffer combination of per-stream one-sided p-values.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::Serialize;

use crate::calendar::Day;
use crate::error::{Error, Result};
use crate::regression::FitSeries;
use crate::stats::{normal_isf, normal_sf};

/// p-values are clipped to `[P_CLIP, 1 - P_CLIP]` before the quantile transform.
pub const P_CLIP: f64 = 1e-15;

/// Combined z and p for `(p_i, w_i)` pairs: `Z = Σ w_i Z_i / sqrt(Σ w_i²)`.
pub fn stouffer_combine(pvalues: &[f64], weights: &[f64]) -> Result<(f64, f64)> {
    if pvalues.is_empty() {
        return Err(Error::invalid("stouffer_combine needs at least one p-value"));
    }
    if pvalues.len() != weights.len() {
        return Err(Error::invalid(format!(
            "{} p-values but {} weights",
            pvalues.len(),
            weights.len()
        )));
    }
    let mut num = 0.0;
    let mut ss = 0.0;
    for (&p, &w) in pvalues.iter().zip(weights) {
        if !(w > 0.0) || !w.is_finite() {
            return Err(Error::invalid(format!("weight {w} is not positive")));
        }
        if p.is_nan() {
            return Err(Error::invalid("p-value is NaN"));
        }
        let p = p.clamp(P_CLIP, 1.0 - P_CLIP);
        num += w * normal_isf(p);
        ss += w * w;
    }
    let z = num / ss.sqrt();
    Ok((z, normal_sf(z)))
}

/// One fused date.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FusedPoint {
    pub z: f64,
    pub p: f64,
    pub streams: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FusedSeries {
    pub region_id: String,
    pub weights: BTreeMap<String, f64>,
    pub points: BTreeMap<Day, FusedPoint>,
}

impl FusedSeries {
    pub fn get(&self, day: Day) -> Option<&FusedPoint> {
        self.points.get(&day)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Fuse all streams of one region. `weights` maps stream id to weight;
/// streams absent from it get weight 1. Each date combines only the streams
/// with a converged fit on that date, so the normalisation follows the
/// number of available streams.
pub fn fuse_region(series: &[FitSeries], weights: &BTreeMap<String, f64>) -> Result<FusedSeries> {
    let region = match series.first() {
        Some(s) => s.region_id.clone(),
        None => return Err(Error::invalid("fuse_region needs at least one stream")),
    };
    if let Some(s) = series.iter().find(|s| s.region_id != region) {
        return Err(Error::invalid(format!(
            "fuse_region got streams of `{region}` and `{}`",
            s.region_id
        )));
    }
    let w: BTreeMap<String, f64> = series
        .iter()
        .map(|s| (s.stream_id.clone(), weights.get(&s.stream_id).copied().unwrap_or(1.0)))
        .collect();
    let days: BTreeSet<Day> = series.iter().flat_map(|s| s.fits.keys().copied()).collect();
    let mut points = BTreeMap::new();
    for day in days {
        let mut ps = Vec::new();
        let mut ws = Vec::new();
        let mut names = Vec::new();
        for s in series {
            if let Some(f) = s.get(day).filter(|f| f.converged) {
                ps.push(f.p_one_sided);
                ws.push(w[&s.stream_id]);
                names.push(s.stream_id.clone());
            }
        }
        if ps.is_empty() {
            continue;
        }
        let (z, p) = stouffer_combine(&ps, &ws)?;
        points.insert(day, FusedPoint { z, p, streams: names });
    }
    Ok(FusedSeries {
        region_id: region,
        weights: w,
        points,
    })
}

/// Group fit series by region and fuse each group.
pub fn fuse_all(series: &[FitSeries], weights: &BTreeMap<String, f64>) -> Result<Vec<FusedSeries>> {
    let mut groups: BTreeMap<&str, Vec<FitSeries>> = BTreeMap::new();
    for s in series {
        groups.entry(s.region_id.as_str()).or_default().push(s.clone());
    }
    groups.values().map(|g| fuse_region(g, weights)).collect()
}

/// CSV with header `region_id,date,z,p,n_streams`.
pub fn write_fused_csv<W: Write>(fused: &[FusedSeries], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["region_id", "date", "z", "p", "n_streams"])?;
    for f in fused {
        for (day, pt) in &f.points {
            w.write_record([
                f.region_id.as_str(),
                &day.to_string(),
                &pt.z.to_string(),
                &pt.p.to_string(),
                &pt.streams.len().to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<fused csv>", e))?;
    Ok(())
}
