use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calendar::Day;
use crate::error::{Error, Result};

/// How a stream's values should be interpreted by the regression models.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamKind {
    Count,
    Rate,
}

/// A dense daily series with explicit missing entries.
#[derive(Clone, Debug, PartialEq)]
pub struct DailySeries {
    start: Day,
    values: Vec<Option<f64>>,
}

impl DailySeries {
    pub fn new(start: Day, values: Vec<Option<f64>>) -> Self {
        DailySeries { start, values }
    }

    /// Fully observed series starting at `start`.
    pub fn complete(start: Day, values: &[f64]) -> Self {
        DailySeries {
            start,
            values: values.iter().map(|&v| Some(v)).collect(),
        }
    }

    pub fn start(&self) -> Day {
        self.start
    }

    pub fn end(&self) -> Day {
        self.start + self.values.len() as i32 - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, day: Day) -> Option<f64> {
        let offset = day - self.start;
        if offset < 0 {
            return None;
        }
        self.values.get(offset as usize).copied().flatten()
    }

    pub fn raw(&self) -> &[Option<f64>] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (Day, Option<f64>)> + '_ {
        self.values
            .iter()
            .enumerate()
            .map(move |(i, v)| (self.start + i as i32, *v))
    }

    pub fn observed(&self) -> impl Iterator<Item = (Day, f64)> + '_ {
        self.iter().filter_map(|(d, v)| v.map(|v| (d, v)))
    }

    pub fn n_observed(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    /// Values over `[from, to]` with gaps resolved by `policy`. Interpolation
    /// only uses observations inside `[self.start, to]`, so a window never
    /// reads data from after its last day.
    pub fn resolve(&self, from: Day, to: Day, policy: GapPolicy) -> Result<Vec<f64>> {
        if to < from {
            return Err(Error::invalid(format!("empty range {from}..{to}")));
        }
        let needed = (to - from + 1) as usize;
        if from < self.start || to > self.end() {
            let available = if to < self.start || from > self.end() {
                0
            } else {
                ((to.min(self.end()) - from.max(self.start)) + 1) as usize
            };
            return Err(Error::InsufficientHistory { needed, available });
        }
        let base = (from - self.start) as usize;
        let last = (to - self.start) as usize;
        let mut out = Vec::with_capacity(needed);
        let mut i = base;
        while i <= last {
            if let Some(v) = self.values[i] {
                out.push(v);
                i += 1;
                continue;
            }
            // Missing run [i, j).
            let mut j = i;
            while j <= last && self.values[j].is_none() {
                j += 1;
            }
            let run = j - i;
            let gap_err = || Error::Gap {
                start: (self.start + i as i32).to_string(),
                length: run,
            };
            let max_gap = match policy {
                GapPolicy::Fail => return Err(gap_err()),
                GapPolicy::Interpolate { max_gap } => max_gap,
            };
            if run > max_gap || j > last {
                return Err(gap_err());
            }
            let prev = (0..i).rev().find(|&k| self.values[k].is_some());
            let Some(p) = prev else {
                return Err(gap_err());
            };
            // The run may have started before `from`.
            if j - p - 1 > max_gap {
                return Err(gap_err());
            }
            let vp = self.values[p].unwrap();
            let vq = self.values[j].unwrap();
            let span = (j - p) as f64;
            for k in i..j {
                let frac = (k - p) as f64 / span;
                out.push(vp + (vq - vp) * frac);
            }
            i = j;
        }
        Ok(out)
    }
}

/// Treatment of missing days inside a requested range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy")]
pub enum GapPolicy {
    Fail,
    /// Linearly interpolate interior runs of at most `max_gap` missing days.
    Interpolate { max_gap: usize },
}

impl Default for GapPolicy {
    fn default() -> Self {
        GapPolicy::Interpolate { max_gap: 7 }
    }
}

/// Multi-region, multi-stream daily observations.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StreamPanel {
    series: BTreeMap<(String, String), DailySeries>,
    kinds: BTreeMap<String, StreamKind>,
}

impl StreamPanel {
    pub fn builder() -> PanelBuilder {
        PanelBuilder::default()
    }

    pub fn regions(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.series.keys().map(|(r, _)| r).collect();
        set.into_iter().cloned().collect()
    }

    pub fn streams(&self) -> Vec<String> {
        self.kinds.keys().cloned().collect()
    }

    pub fn has_region(&self, region: &str) -> bool {
        self.series.keys().any(|(r, _)| r == region)
    }

    pub fn has_stream(&self, stream: &str) -> bool {
        self.kinds.contains_key(stream)
    }

    pub fn stream_kind(&self, stream: &str) -> Option<StreamKind> {
        self.kinds.get(stream).copied()
    }

    pub fn set_stream_kind(&mut self, stream: &str, kind: StreamKind) {
        if let Some(k) = self.kinds.get_mut(stream) {
            *k = kind;
        }
    }

    pub fn series(&self, region: &str, stream: &str) -> Option<&DailySeries> {
        self.series.get(&(region.to_string(), stream.to_string()))
    }

    pub fn series_checked(&self, region: &str, stream: &str) -> Result<&DailySeries> {
        if !self.has_stream(stream) {
            return Err(Error::NotFound {
                kind: "stream",
                id: stream.to_string(),
            });
        }
        self.series(region, stream).ok_or_else(|| Error::NotFound {
            kind: "region",
            id: region.to_string(),
        })
    }

    pub fn get(&self, region: &str, stream: &str, day: Day) -> Option<f64> {
        self.series(region, stream).and_then(|s| s.get(day))
    }

    /// Inclusive date span covering every series.
    pub fn date_range(&self) -> Option<(Day, Day)> {
        let start = self.series.values().map(DailySeries::start).min()?;
        let end = self.series.values().map(DailySeries::end).max()?;
        Some((start, end))
    }

    pub fn n_observations(&self) -> usize {
        self.series.values().map(DailySeries::n_observed).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.n_observations() == 0
    }

    /// All observations ordered by (region, stream, date).
    pub fn observations(&self) -> impl Iterator<Item = (&str, &str, Day, f64)> + '_ {
        self.series.iter().flat_map(|((r, s), series)| {
            series
                .observed()
                .map(move |(d, v)| (r.as_str(), s.as_str(), d, v))
        })
    }

    /// Keeps only the listed regions (unknown names are ignored).
    pub fn retain_regions(&mut self, keep: &[String]) {
        let keep: BTreeSet<&String> = keep.iter().collect();
        self.series.retain(|(r, _), _| keep.contains(r));
    }
}

/// Accumulates observations and reports duplicates at build time.
#[derive(Debug, Default)]
pub struct PanelBuilder {
    cells: HashMap<(String, String), BTreeMap<Day, f64>>,
    duplicates: BTreeSet<String>,
    kinds: BTreeMap<String, StreamKind>,
}

impl PanelBuilder {
    /// Adds one observation. Negative or non-finite values are rejected.
    pub fn insert(&mut self, region: &str, stream: &str, day: Day, value: f64) -> Result<()> {
        if !value.is_finite() || value < 0.0 {
            return Err(Error::invalid(format!(
                "value {value} for ({region}, {stream}, {day}) must be finite and non-negative"
            )));
        }
        let cell = self
            .cells
            .entry((region.to_string(), stream.to_string()))
            .or_default();
        if cell.insert(day, value).is_some() {
            self.duplicates.insert(format!("{region},{stream},{day}"));
        }
        Ok(())
    }

    pub fn stream_kind(&mut self, stream: &str, kind: StreamKind) -> &mut Self {
        self.kinds.insert(stream.to_string(), kind);
        self
    }

    /// Finalizes the panel. Streams without an explicit kind are `count`
    /// when every value is integral and `rate` otherwise.
    pub fn build(self) -> Result<StreamPanel> {
        if !self.duplicates.is_empty() {
            return Err(Error::Duplicate(self.duplicates.into_iter().collect()));
        }
        let mut kinds = self.kinds;
        let mut integral: BTreeMap<String, bool> = BTreeMap::new();
        for ((_, s), cell) in &self.cells {
            let all_int = cell.values().all(|v| (v - v.round()).abs() <= 1e-9);
            let e = integral.entry(s.clone()).or_insert(true);
            *e &= all_int;
        }
        for (s, int) in integral {
            kinds.entry(s).or_insert(if int {
                StreamKind::Count
            } else {
                StreamKind::Rate
            });
        }
        let series = self
            .cells
            .into_iter()
            .filter(|(_, cell)| !cell.is_empty())
            .map(|(key, cell)| {
                let start = *cell.keys().next().unwrap();
                let end = *cell.keys().next_back().unwrap();
                let mut values = vec![None; (end - start + 1) as usize];
                for (d, v) in cell {
                    values[(d - start) as usize] = Some(v);
                }
                (key, DailySeries::new(start, values))
            })
            .collect();
        Ok(StreamPanel { series, kinds })
    }
}

/// Column names for panel CSV ingestion.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PanelSchema {
    pub region: String,
    pub stream: String,
    pub date: String,
    pub value: String,
}

impl Default for PanelSchema {
    fn default() -> Self {
        PanelSchema {
            region: "region_id".into(),
            stream: "stream_id".into(),
            date: "date".into(),
            value: "value".into(),
        }
    }
}

/// A CSV row that failed validation and was not loaded.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RowIssue {
    /// 1-based line number in the file (the header is line 1).
    pub line: u64,
    pub reason: String,
}

#[derive(Debug)]
pub struct PanelLoad {
    pub panel: StreamPanel,
    pub rejected: Vec<RowIssue>,
}

pub fn load_panel_csv(path: impl AsRef<Path>, schema: &PanelSchema) -> Result<PanelLoad> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_panel_csv(file, schema)
}

pub fn read_panel_csv<R: Read>(reader: R, schema: &PanelSchema) -> Result<PanelLoad> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let wanted = [&schema.region, &schema.stream, &schema.date, &schema.value];
    let missing: Vec<String> = wanted
        .iter()
        .filter(|c| col(c).is_none())
        .map(|c| c.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Schema(missing));
    }
    let (ri, si, di, vi) = (
        col(&schema.region).unwrap(),
        col(&schema.stream).unwrap(),
        col(&schema.date).unwrap(),
        col(&schema.value).unwrap(),
    );
    let mut builder = StreamPanel::builder();
    let mut rejected = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let record = record?;
        let field = |k: usize| record.get(k).unwrap_or("");
        let region = field(ri);
        let stream = field(si);
        if region.is_empty() || stream.is_empty() {
            rejected.push(RowIssue {
                line,
                reason: "empty region or stream id".into(),
            });
            continue;
        }
        let day = match Day::parse(field(di)) {
            Ok(d) => d,
            Err(e) => {
                rejected.push(RowIssue {
                    line,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let raw = field(vi);
        let value: f64 = match raw.parse() {
            Ok(v) => v,
            Err(_) => {
                rejected.push(RowIssue {
                    line,
                    reason: format!("unparseable value `{raw}`"),
                });
                continue;
            }
        };
        if let Err(e) = builder.insert(region, stream, day, value) {
            rejected.push(RowIssue {
                line,
                reason: e.to_string(),
            });
        }
    }
    Ok(PanelLoad {
        panel: builder.build()?,
        rejected,
    })
}

pub fn write_panel_csv<W: Write>(panel: &StreamPanel, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["region_id", "stream_id", "date", "value"])?;
    for (r, s, d, v) in panel.observations() {
        w.write_record([r, s, &d.to_string(), &v.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<panel csv>", e))?;
    Ok(())
}

/// Static attributes of a region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionMeta {
    pub region_id: String,
    pub state_code: String,
    pub latitude: Option<f64>,
    pub longitude: Option<f64>,
    pub population: Option<u64>,
}

impl RegionMeta {
    pub fn validate(&self) -> Result<()> {
        if let Some(lat) = self.latitude {
            if !(-90.0..=90.0).contains(&lat) {
                return Err(Error::invalid(format!(
                    "latitude {lat} of {} out of range",
                    self.region_id
                )));
            }
        }
        if let Some(lon) = self.longitude {
            if !(-180.0..=180.0).contains(&lon) {
                return Err(Error::invalid(format!(
                    "longitude {lon} of {} out of range",
                    self.region_id
                )));
            }
        }
        if self.population == Some(0) {
            return Err(Error::invalid(format!(
                "population of {} must be positive",
                self.region_id
            )));
        }
        Ok(())
    }
}

/// Region metadata keyed by region id.
pub type RegionMetaSet = BTreeMap<String, RegionMeta>;

pub fn load_region_meta_csv(path: impl AsRef<Path>) -> Result<RegionMetaSet> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_region_meta_csv(file)
}

pub fn read_region_meta_csv<R: Read>(reader: R) -> Result<RegionMetaSet> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let missing: Vec<String> = ["region_id", "state_code"]
        .iter()
        .filter(|c| !headers.iter().any(|h| h == **c))
        .map(|c| c.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Schema(missing));
    }
    let mut out = RegionMetaSet::new();
    let mut dups = Vec::new();
    for row in rdr.deserialize::<RegionMeta>() {
        let meta = row?;
        meta.validate()?;
        if out.contains_key(&meta.region_id) {
            dups.push(meta.region_id.clone());
        }
        out.insert(meta.region_id.clone(), meta);
    }
    if !dups.is_empty() {
        return Err(Error::Duplicate(dups));
    }
    Ok(out)
}

pub fn write_region_meta_csv<W: Write>(meta: &RegionMetaSet, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for m in meta.values() {
        w.serialize(m)?;
    }
    w.flush().map_err(|e| Error::io("<region csv>", e))?;
    Ok(())
}
