use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::Args;
use serde::{Deserialize, Serialize};

use trendwatch::evaluation::{
    detector_stats, evaluate_stats, window_sweep, write_alarms_csv, write_sweep_csv, CalibrationScope,
    DetectionConfig, DetectorKind, DetectorSpec, Statistic,
};
use trendwatch::fusion::{fuse_all, write_fused_csv};
use trendwatch::ground_truth::{
    build_ground_truth, default_lambda_grid, read_intervals_csv, write_intervals_csv, ConsensusMode,
    GroundTruthOptions, IntervalKind, TrendIntervalSet,
};
use trendwatch::network::{
    cluster_regions, coordinate_network, distance_matrix, edge_network, in_state_fraction, knn_graph,
    read_edges_csv, read_graph_csv, read_matrix_csv, write_cluster_csv, write_graph_csv, write_matrix_csv,
    AggregateOptions, ClusterMethod, DistanceMatrix, HistoryPolicy, NeighborScope, NetworkOptions,
};
use trendwatch::regression::{rolling_fit_all, write_fit_series_csv, Model};
use trendwatch::smoother::{
    smooth_region, write_smooth_csv, write_smooth_sidecar, ObsModel, PenaltyKind, PenaltySpace, SeriesOptions,
    SmoothConfig,
};
use trendwatch::synthetic::{cluster_labels, desk_scenario, generate_panel, DeskParams};
use trendwatch::timeseries::epidata::{fetch_epidata, EpidataQuery, FetchOptions, UreqTransport};
use trendwatch::timeseries::{
    load_panel_csv, load_region_meta_csv, write_panel_csv, write_region_meta_csv, GapPolicy, PanelSchema,
    StreamPanel,
};
use trendwatch::Day;

use crate::config::{merge, parse_enum};
use crate::run::Run;
use crate::CliError;

pub struct Ctx {
    pub file: Option<toml::Table>,
    pub jobs: usize,
    pub out_dir: PathBuf,
    pub run_dir: Option<PathBuf>,
}

impl Ctx {
    fn args<T: Serialize + serde::de::DeserializeOwned>(&self, cli: &T, command: &str) -> Result<T, CliError> {
        merge(cli, self.file.as_ref(), command)
    }

    fn run<T: Serialize>(&self, command: &str, args: &T, seed: Option<u64>) -> Result<Run, CliError> {
        let snapshot = serde_json::to_value(args).map_err(|e| CliError::Usage(e.to_string()))?;
        Run::create(&self.out_dir, self.run_dir.as_deref(), command, snapshot, seed, self.jobs)
    }
}

fn need<T: Clone>(v: &Option<T>, flag: &str) -> Result<T, CliError> {
    v.clone().ok_or_else(|| CliError::Usage(format!("missing --{flag}")))
}

fn lib<T>(r: trendwatch::Result<T>) -> Result<T, CliError> {
    r.map_err(CliError::Lib)
}

fn load_panel(run: &mut Run, path: &Path) -> Result<StreamPanel, CliError> {
    run.input(path)?;
    let load = lib(load_panel_csv(path, &PanelSchema::default()))?;
    if !load.rejected.is_empty() {
        log::warn!("{}: {} row(s) rejected", path.display(), load.rejected.len());
    }
    Ok(load.panel)
}

fn load_truth(run: &mut Run, truth: &Path, null: &Path) -> Result<TrendIntervalSet, CliError> {
    let mut read = |p: &Path| -> Result<_, CliError> {
        run.input(p)?;
        let f = File::open(p).map_err(|e| CliError::io(p, e))?;
        lib(read_intervals_csv(f))
    };
    let inc = read(truth)?;
    let nul = read(null)?;
    Ok(TrendIntervalSet::from_intervals(inc, nul))
}

fn parse_day(s: &str) -> Result<Day, CliError> {
    Day::parse(s).map_err(|e| CliError::Usage(e.to_string()))
}

fn csv_out<F>(run: &mut Run, name: &str, f: F) -> Result<(), CliError>
where
    F: FnOnce(&mut dyn std::io::Write) -> trendwatch::Result<()>,
{
    run.write(name, |w| lib(f(w)))?;
    Ok(())
}

// ---------------------------------------------------------------- ingest

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestArgs {
    /// Panel CSV to validate.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub region_col: Option<String>,
    #[arg(long)]
    pub stream_col: Option<String>,
    #[arg(long)]
    pub date_col: Option<String>,
    #[arg(long)]
    pub value_col: Option<String>,
    /// Fail when any row is rejected.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub strict: Option<bool>,
}

#[derive(Serialize)]
struct IngestSummary {
    n_observations: usize,
    regions: Vec<String>,
    streams: Vec<String>,
    first_date: Option<Day>,
    last_date: Option<Day>,
    rejected: Vec<trendwatch::timeseries::RowIssue>,
}

pub fn ingest(ctx: &Ctx, cli: IngestArgs) -> Result<PathBuf, CliError> {
    let a = ctx.args(&cli, "ingest")?;
    let input = need(&a.input, "input")?;
    let d = PanelSchema::default();
    let schema = PanelSchema {
        region: a.region_col.clone().unwrap_or(d.region),
        stream: a.stream_col.clone().unwrap_or(d.stream),
        date: a.date_col.clone().unwrap_or(d.date),
        value: a.value_col.clone().unwrap_or(d.value),
    };
    let mut run = ctx.run("ingest", &a, None)?;
    run.input(&input)?;
    let load = lib(load_panel_csv(&input, &schema))?;
    if a.strict.unwrap_or(false) && !load.rejected.is_empty() {
        let first = &load.rejected[0];
        return Err(CliError::Lib(trendwatch::Error::InvalidInput(format!(
            "{} row(s) rejected; first at line {}: {}",
            load.rejected.len(),
            first.line,
            first.reason
        ))));
    }
    run.stage("load");
    let range = load.panel.date_range();
    csv_out(&mut run, "panel.csv", |w| write_panel_csv(&load.panel, w))?;
    run.write_json(
        "ingest.json",
        &IngestSummary {
            n_observations: load.panel.n_observations(),
            regions: load.panel.regions(),
            streams: load.panel.streams(),
            first_date: range.map(|r| r.0),
            last_date: range.map(|r| r.1),
            rejected: load.rejected,
        },
    )?;
    run.stage("write");
    run.finish()
}

// ----------------------------------------------------------------- fetch

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FetchArgs {
    #[arg(long)]
    pub base_url: Option<String>,
    /// Data source, e.g. `hhs`.
    #[arg(long)]
    pub source: Option<String>,
    #[arg(long)]
    pub signal: Option<String>,
    #[arg(long)]
    pub geo_type: Option<String>,
    /// Comma-separated geo values; `*` for all.
    #[arg(long, value_delimiter = ',')]
    pub geo_values: Option<Vec<String>>,
    #[arg(long)]
    pub start: Option<String>,
    #[arg(long)]
    pub end: Option<String>,
    #[arg(long)]
    pub page_days: Option<usize>,
    #[arg(long)]
    pub timeout_secs: Option<u64>,
}

pub fn fetch(ctx: &Ctx, cli: FetchArgs) -> Result<PathBuf, CliError> {
    let a = ctx.args(&cli, "fetch")?;
    let query = EpidataQuery {
        data_source: need(&a.source, "source")?,
        signal: need(&a.signal, "signal")?,
        geo_type: a.geo_type.clone().unwrap_or_else(|| "hrr".into()),
        geo_values: a.geo_values.clone().unwrap_or_else(|| vec!["*".into()]),
        start: parse_day(&need(&a.start, "start")?)?,
        end: parse_day(&need(&a.end, "end")?)?,
    };
    let base = a
        .base_url
        .clone()
        .unwrap_or_else(|| "https://api.delphi.cmu.edu/epidata/covidcast/".into());
    let opts = FetchOptions {
        page_days: a.page_days.unwrap_or(FetchOptions::default().page_days),
        ..FetchOptions::default()
    };
    let mut run = ctx.run("fetch", &a, None)?;
    let transport = UreqTransport::new(Duration::from_secs(a.timeout_secs.unwrap_or(60)));
    let res = lib(fetch_epidata(&base, &query, &opts, &transport))?;
    run.stage("fetch");
    csv_out(&mut run, "panel.csv", |w| write_panel_csv(&res.panel, w))?;
    run.write_json("fetch.json", &serde_json::json!({ "warnings": res.warnings }))?;
    run.stage("write");
    run.finish()
}

// -------------------------------------------------------------- simulate

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateArgs {
    /// TOML or JSON scenario parameters; missing keys take the desk540
    /// defaults.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub regions: Option<usize>,
    #[arg(long)]
    pub days: Option<usize>,
}

pub fn simulate(ctx: &Ctx, cli: SimulateArgs) -> Result<PathBuf, CliError> {
    let a = ctx.args(&cli, "simulate")?;
    let mut params = match &a.scenario {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            if p.extension().is_some_and(|e| e == "json") {
                serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
            } else {
                toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
            }
        }
        None => DeskParams::default(),
    };
    if let Some(s) = a.seed {
        params.seed = s;
    }
    if let Some(r) = a.regions {
        params.n_regions = r;
    }
    if let Some(d) = a.days {
        params.n_days = d;
    }
    let mut run = ctx.run("simulate", &a, Some(params.seed))?;
    if let Some(p) = &a.scenario {
        run.input(p)?;
    }
    let spec = desk_scenario(&params);
    let (panel, truth) = lib(generate_panel(&spec))?;
    run.stage("generate");
    csv_out(&mut run, "panel.csv", |w| write_panel_csv(&panel, w))?;
    csv_out(&mut run, "truth.csv", |w| write_intervals_csv(&truth, IntervalKind::Increasing, w))?;
    csv_out(&mut run, "null.csv", |w| write_intervals_csv(&truth, IntervalKind::Null, w))?;
    csv_out(&mut run, "regions.csv", |w| write_region_meta_csv(&spec.region_meta(), w))?;
    csv_out(&mut run, "clusters.csv", |w| write_cluster_csv(&cluster_labels(&spec), w))?;
    run.write_json("scenario.json", &spec)?;
    run.stage("write");
    run.finish()
}

// ---------------------------------------------------------------- detect

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorArgs {
    #[arg(long)]
    pub panel: Option<PathBuf>,
    /// Increasing intervals, `region_id,start,end`.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Null intervals used for calibration.
    #[arg(long)]
    pub null: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub regions: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    pub streams: Option<Vec<String>>,
    /// linear_log, poisson or negbin.
    #[arg(long)]
    pub model: Option<String>,
    /// beta or z (single-stream and aggregated detectors).
    #[arg(long)]
    pub statistic: Option<String>,
    /// local_regression or moving_average.
    #[arg(long)]
    pub detector: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub fuse: Option<bool>,
    /// Neighbour graph CSV; each region's fits are replaced by its
    /// neighbours' average.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub include_self: Option<bool>,
    #[arg(long)]
    pub fpr: Option<f64>,
    /// pooled or per_region.
    #[arg(long)]
    pub scope: Option<String>,
    #[arg(long)]
    pub max_delay: Option<i32>,
    /// Calibrate only on null dates up to this day.
    #[arg(long)]
    pub calibration_end: Option<String>,
    #[arg(long)]
    pub max_gap: Option<usize>,
}

struct Detector {
    panel: StreamPanel,
    truth: TrendIntervalSet,
    spec: DetectorSpec,
    config: DetectionConfig,
}

fn build_detector(run: &mut Run, a: &DetectorArgs) -> Result<Detector, CliError> {
    let panel = load_panel(run, &need(&a.panel, "panel")?)?;
    let truth = load_truth(run, &need(&a.truth, "truth")?, &need(&a.null, "null")?)?;
    let fuse = a.fuse.unwrap_or(false);
    let streams = match &a.streams {
        Some(s) => s.clone(),
        None if fuse || panel.streams().len() == 1 => panel.streams(),
        None => return Err(CliError::Usage("several streams in the panel; pick one with --streams".into())),
    };
    let graph = match &a.graph {
        Some(p) => {
            run.input(p)?;
            let f = File::open(p).map_err(|e| CliError::io(p, e))?;
            Some(lib(read_graph_csv(f))?)
        }
        None => None,
    };
    let spec = DetectorSpec {
        kind: a
            .detector
            .as_deref()
            .map(|s| parse_enum::<DetectorKind>("detector", s))
            .transpose()?
            .unwrap_or_default(),
        streams,
        regions: a.regions.clone(),
        model: match &a.model {
            Some(m) => m.parse::<Model>().map_err(|e| CliError::Usage(e.to_string()))?,
            None => Model::LinearLog,
        },
        statistic: a
            .statistic
            .as_deref()
            .map(|s| parse_enum::<Statistic>("statistic", s))
            .transpose()?
            .unwrap_or_default(),
        fuse,
        network: graph,
        aggregate: AggregateOptions {
            weights: BTreeMap::new(),
            include_self: a.include_self.unwrap_or(false),
        },
        gap_policy: GapPolicy::Interpolate {
            max_gap: a.max_gap.unwrap_or(7),
        },
    };
    let config = DetectionConfig {
        fpr_target: a.fpr.unwrap_or(0.05),
        calibration_scope: a
            .scope
            .as_deref()
            .map(|s| parse_enum::<CalibrationScope>("scope", s))
            .transpose()?
            .unwrap_or_default(),
        max_delay: a.max_delay.unwrap_or(60),
        calibration_end: a.calibration_end.as_deref().map(parse_day).transpose()?,
        ..DetectionConfig::default()
    };
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    run.stage("load");
    Ok(Detector {
        panel,
        truth,
        spec,
        config,
    })
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: DetectorArgs,
    #[arg(long)]
    pub window: Option<usize>,
}

pub fn detect(ctx: &Ctx, cli: DetectArgs) -> Result<PathBuf, CliError> {
    let a = ctx.args(&cli, "detect")?;
    let mut run = ctx.run("detect", &a, None)?;
    let d = build_detector(&mut run, &a.common)?;
    let window = a.window.unwrap_or(21);
    let stats = lib(detector_stats(&d.panel, &d.spec, window))?;
    run.stage("statistic");
    let res = lib(evaluate_stats(stats, &d.truth, &d.config))?;
    run.stage("calibrate");
    csv_out(&mut run, "alarms.csv", |w| write_alarms_csv(&res.alarms, &res.stats, w))?;
    run.write_json("report.json", &res.report)?;
    run.stage("write");
    run.finish()
}

// -------------------------------------------------------------- evaluate

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: DetectorArgs,
    /// Window sizes to sweep.
    #[arg(long, value_delimiter = ',')]
    pub windows: Option<Vec<usize>>,
}

pub fn evaluate(ctx: &Ctx, cli: EvaluateArgs) -> Result<PathBuf, CliError> {
    let a = ctx.args(&cli, "evaluate")?;
    let mut run = ctx.run("evaluate", &a, None)?;
    let mut d = build_detector(&mut run, &a.common)?;
    if let Some(w) = &a.windows {
        d.config.window_sizes = w.clone();
    }
    d.config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let rows = lib(window_sweep(&d.panel, &d.spec, &d.truth, &d.config))?;
    run.stage("sweep");
    csv_out(&mut run, "sweep.csv", |w| write_sweep_csv(&rows, w))?;
    run.write_json(
        "report.json",
        &serde_json::json!({
            "fpr_target": d.config.fpr_target,
            "max_delay": d.config.max_delay,
            "rows": rows,
        }),
    )?;
    run.stage("write");
    run.finish()
}

// ---------------------------------------------------------------- smooth

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoothArgs {
    #[arg(long)]
    pub panel: Option<PathBuf>,
    #[arg(long)]
    pub region: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub streams: Option<Vec<String>>,
    /// l1 or l2.
    #[arg(long)]
    pub penalty: Option<String>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Observation model per stream (poisson or lognormal); one value
    /// applies to all.
    #[arg(long, value_delimiter = ',')]
    pub models: Option<Vec<String>>,
    /// Skip the weekday correction.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub no_weekday: Option<bool>,
    /// log_phi or phi.
    #[arg(long)]
    pub space: Option<String>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
}

fn smooth_config(
    penalty: Option<&str>,
    lambda: f64,
    models: Option<&[String]>,
    n_streams: usize,
    no_weekday: bool,
) -> Result<SmoothConfig, CliError> {
    let penalty = penalty
        .map(|s| parse_enum::<PenaltyKind>("penalty", s))
        .transpose()?
        .unwrap_or(PenaltyKind::L1);
    let parse = |s: &str| parse_enum::<ObsModel>("model", s);
    let mut cfg = SmoothConfig::new(penalty, lambda);
    let one = |m: ObsModel| SeriesOptions {
        model: m,
        correct_weekday: !no_weekday,
    };
    match models {
        None => cfg.default_series = one(ObsModel::Poisson),
        Some([m]) => cfg.default_series = one(parse(m)?),
        Some(ms) if ms.len() == n_streams => {
            cfg.series = ms.iter().map(|m| parse(m).map(one)).collect::<Result<_, _>>()?;
        }
        Some(ms) => {
            return Err(CliError::Usage(format!(
                "{} models given for {n_streams} streams",
                ms.len()
            )))
        }
    }
    Ok(cfg)
}

pub fn smooth(ctx: &Ctx, cli: SmoothArgs) -> Result<PathBuf, CliError> {
    let a = ctx.args(&cli, "smooth")?;
    let mut run = ctx.run("smooth", &a, None)?;
    let panel = load_panel(&mut run, &need(&a.panel, "panel")?)?;
    let region = need(&a.region, "region")?;
    let streams = a.streams.clone().unwrap_or_else(|| panel.streams());
    let mut cfg = smooth_config(
        a.penalty.as_deref(),
        a.lambda.unwrap_or(1000.0),
        a.models.as_deref(),
        streams.len(),
        a.no_weekday.unwrap_or(false),
    )?;
    if let Some(s) = &a.space {
        cfg.space = parse_enum::<PenaltySpace>("space", s)?;
    }
    if let Some(m) = a.max_iter {
        cfg.max_iter = m;
    }
    if let Some(t) = a.tol {
        cfg.tol = t;
    }
    run.stage("load");
    let res = lib(smooth_region(&panel, &region, &streams, &cfg))?;
    if !res.converged {
        log::warn!("smoother stopped after {} iterations without converging", res.iterations);
    }
    run.stage("smooth");
    csv_out(&mut run, "smooth.csv", |w| write_smooth_csv(&res, w))?;
    run.write("smooth.json", |w| lib(write_smooth_sidecar(&res, w)))?;
    run.stage("write");
    run.finish()
}

// ----------------------------------------------------------- groundtruth

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroundtruthArgs {
    #[arg(long)]
    pub panel: Option<PathBuf>,
    /// Gold-standard streams smoothed jointly.
    #[arg(long, value_delimiter = ',')]
    pub streams: Option<Vec<String>>,
    #[arg(long)]
    pub penalty: Option<String>,
    /// Penalty grid; defaults depend on the penalty kind.
    #[arg(long, value_delimiter = ',')]
    pub lambdas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub models: Option<Vec<String>>,
    /// shared_phi or per_stream.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub min_duration: Option<usize>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub count_floor: Option<f64>,
}

pub fn groundtruth(ctx: &Ctx, cli: GroundtruthArgs) -> Result<PathBuf, CliError> {
    let a = ctx.args(&cli, "groundtruth")?;
    let mut run = ctx.run("groundtruth", &a, None)?;
    let panel = load_panel(&mut run, &need(&a.panel, "panel")?)?;
    let streams = a.streams.clone().unwrap_or_else(|| panel.streams());
    let base = smooth_config(a.penalty.as_deref(), 1.0, a.models.as_deref(), streams.len(), false)?;
    let lambdas = a.lambdas.clone().unwrap_or_else(|| default_lambda_grid(base.penalty));
    if lambdas.is_empty() {
        return Err(CliError::Usage("empty --lambdas".into()));
    }
    let configs: Vec<SmoothConfig> = lambdas
        .iter()
        .map(|&lambda| SmoothConfig {
            lambda,
            ..base.clone()
        })
        .collect();
    let d = GroundTruthOptions::default();
    let options = GroundTruthOptions {
        min_duration: a.min_duration.unwrap_or(d.min_duration),
        eps: a.eps.unwrap_or(d.eps),
        count_floor: a.count_floor.unwrap_or(d.count_floor),
        mode: a
            .mode
            .as_deref()
            .map(|s| parse_enum::<ConsensusMode>("mode", s))
            .transpose()?
            .unwrap_or_default(),
    };
    run.stage("load");
    let set = lib(build_ground_truth(&panel, &streams, &configs, &options))?;
    run.stage("smooth");
    csv_out(&mut run, "truth.csv", |w| write_intervals_csv(&set, IntervalKind::Increasing, w))?;
    csv_out(&mut run, "null.csv", |w| write_intervals_csv(&set, IntervalKind::Null, w))?;
    run.write_json(
        "groundtruth.json",
        &serde_json::json!({
            "n_intervals": set.n_intervals(),
            "n_regions": set.regions.len(),
            "excluded": set.excluded,
            "provenance": set.provenance,
        }),
    )?;
    run.stage("write");
    run.finish()
}

// ------------------------------------------------------------------ fuse

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FuseArgs {
    #[arg(long)]
    pub panel: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub regions: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    pub streams: Option<Vec<String>>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub model: Option<String>,
    /// Stream weights as `stream=weight`; unlisted streams weigh 1.
    #[arg(long, value_delimiter = ',')]
    pub weights: Option<Vec<String>>,
}

pub fn fuse(ctx: &Ctx, cli: FuseArgs) -> Result<PathBuf, CliError> {
    let a = ctx.args(&cli, "fuse")?;
    let mut run = ctx.run("fuse", &a, None)?;
    let panel = load_panel(&mut run, &need(&a.panel, "panel")?)?;
    let streams = a.streams.clone().unwrap_or_else(|| panel.streams());
    let regions = a.regions.clone().unwrap_or_else(|| panel.regions());
    let model = match &a.model {
        Some(m) => m.parse::<Model>().map_err(|e| CliError::Usage(e.to_string()))?,
        None => Model::LinearLog,
    };
    let mut weights = BTreeMap::new();
    for kv in a.weights.iter().flatten() {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("weight `{kv}` is not stream=value")))?;
        let w: f64 = v
            .parse()
            .map_err(|_| CliError::Usage(format!("weight `{kv}` is not a number")))?;
        weights.insert(k.to_string(), w);
    }
    for r in &regions {
        if !panel.has_region(r) {
            return Err(CliError::Lib(trendwatch::Error::NotFound {
                kind: "region",
                id: r.clone(),
            }));
        }
    }
    run.stage("load");
    let fits = lib(rolling_fit_all(
        &panel,
        &regions,
        &streams,
        a.window.unwrap_or(21),
        model,
        GapPolicy::default(),
    ))?;
    run.stage("fit");
    let fused = lib(fuse_all(&fits, &weights))?;
    run.stage("fuse");
    csv_out(&mut run, "fits.csv", |w| write_fit_series_csv(&fits, w))?;
    csv_out(&mut run, "fused.csv", |w| write_fused_csv(&fused, w))?;
    run.stage("write");
    run.finish()
}

// --------------------------------------------------------------- network

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkArgs {
    #[arg(long)]
    pub panel: Option<PathBuf>,
    /// Stream whose growth-rate history defines the distances.
    #[arg(long)]
    pub stream: Option<String>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    /// all or in_state.
    #[arg(long)]
    pub scope: Option<String>,
    /// Region metadata CSV (state codes, coordinates).
    #[arg(long)]
    pub meta: Option<PathBuf>,
    /// truncate_to_longest_block or fail.
    #[arg(long)]
    pub history_policy: Option<String>,
    #[arg(long)]
    pub min_history: Option<usize>,
    /// Use only fits ending on or before this day.
    #[arg(long)]
    pub history_end: Option<String>,
    /// Build a baseline network instead: `edges` or `coordinates`.
    #[arg(long)]
    pub baseline: Option<String>,
    /// Edge list CSV `region_id,region_id,weight` for `--baseline edges`.
    #[arg(long)]
    pub edges: Option<PathBuf>,
}

pub fn network(ctx: &Ctx, cli: NetworkArgs) -> Result<PathBuf, CliError> {
    let a = ctx.args(&cli, "network")?;
    let mut run = ctx.run("network", &a, None)?;
    let meta = match &a.meta {
        Some(p) => {
            run.input(p)?;
            Some(lib(load_region_meta_csv(p))?)
        }
        None => None,
    };
    let mut excluded = BTreeMap::new();
    let matrix: DistanceMatrix = match a.baseline.as_deref() {
        Some("coordinates") => {
            let m = meta
                .as_ref()
                .ok_or_else(|| CliError::Usage("--baseline coordinates needs --meta".into()))?;
            lib(coordinate_network(m))?
        }
        Some("edges") => {
            let p = need(&a.edges, "edges")?;
            run.input(&p)?;
            let f = File::open(&p).map_err(|e| CliError::io(&p, e))?;
            let edges = lib(read_edges_csv(f))?;
            let regions: Vec<String> = match (&meta, &a.panel) {
                (Some(m), _) => m.keys().cloned().collect(),
                (None, Some(pp)) => load_panel(&mut run, pp)?.regions(),
                (None, None) => {
                    let mut ids: Vec<String> =
                        edges.iter().flat_map(|e| [e.source.clone(), e.target.clone()]).collect();
                    ids.sort();
                    ids.dedup();
                    ids
                }
            };
            lib(edge_network(&regions, &edges))?
        }
        Some(other) => return Err(CliError::Usage(format!("unknown baseline `{other}`"))),
        None => {
            let panel = load_panel(&mut run, &need(&a.panel, "panel")?)?;
            let stream = match &a.stream {
                Some(s) => s.clone(),
                None if panel.streams().len() == 1 => panel.streams()[0].clone(),
                None => return Err(CliError::Usage("pick the network stream with --stream".into())),
            };
            let model = match &a.model {
                Some(m) => m.parse::<Model>().map_err(|e| CliError::Usage(e.to_string()))?,
                None => Model::LinearLog,
            };
            run.stage("load");
            let fits = lib(rolling_fit_all(
                &panel,
                &panel.regions(),
                std::slice::from_ref(&stream),
                a.window.unwrap_or(21),
                model,
                GapPolicy::default(),
            ))?;
            run.stage("fit");
            let d = NetworkOptions::default();
            let options = NetworkOptions {
                gamma: a.gamma.unwrap_or(d.gamma),
                policy: a
                    .history_policy
                    .as_deref()
                    .map(|s| parse_enum::<HistoryPolicy>("history policy", s))
                    .transpose()?
                    .unwrap_or_default(),
                min_history: a.min_history.unwrap_or(d.min_history),
                history_end: a.history_end.as_deref().map(parse_day).transpose()?,
                ..d
            };
            let nd = lib(distance_matrix(&fits, &options))?;
            excluded = nd.excluded;
            nd.matrix
        }
    };
    run.stage("distances");
    let scope = a
        .scope
        .as_deref()
        .map(|s| parse_enum::<NeighborScope>("scope", s))
        .transpose()?
        .unwrap_or_default();
    let graph = lib(knn_graph(&matrix, a.k.unwrap_or(3), scope, meta.as_ref()))?;
    let in_state = match &meta {
        Some(m) => Some(lib(in_state_fraction(&graph, m))?),
        None => None,
    };
    run.stage("graph");
    csv_out(&mut run, "matrix.csv", |w| write_matrix_csv(&matrix, w))?;
    csv_out(&mut run, "graph.csv", |w| write_graph_csv(&graph, w))?;
    run.write_json(
        "network.json",
        &serde_json::json!({
            "regions": matrix.regions.len(),
            "gamma": matrix.gamma,
            "k": graph.k,
            "excluded": excluded,
            "short_neighbor_lists": graph.short,
            "in_state": in_state,
        }),
    )?;
    run.stage("write");
    run.finish()
}

// --------------------------------------------------------------- cluster

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterArgs {
    /// Distance matrix CSV written by `network`.
    #[arg(long)]
    pub matrix: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    /// MDS embedding dimension.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// kmeans or kmedoids.
    #[arg(long)]
    pub method: Option<String>,
}

pub fn cluster(ctx: &Ctx, cli: ClusterArgs) -> Result<PathBuf, CliError> {
    let a = ctx.args(&cli, "cluster")?;
    let seed = a.seed.unwrap_or(0);
    let mut run = ctx.run("cluster", &a, Some(seed))?;
    let p = need(&a.matrix, "matrix")?;
    run.input(&p)?;
    let f = File::open(&p).map_err(|e| CliError::io(&p, e))?;
    let matrix = lib(read_matrix_csv(f))?;
    let method = a
        .method
        .as_deref()
        .map(|s| parse_enum::<ClusterMethod>("method", s))
        .transpose()?
        .unwrap_or_default();
    run.stage("load");
    let c = lib(cluster_regions(&matrix, a.k.unwrap_or(10), a.dim.unwrap_or(10), seed, method))?;
    run.stage("cluster");
    csv_out(&mut run, "clusters.csv", |w| write_cluster_csv(&c.labels, w))?;
    run.write_json(
        "clustering.json",
        &serde_json::json!({ "inertia": c.inertia, "embed_dim": c.embed_dim, "method": method }),
    )?;
    run.stage("write");
    run.finish()
}
