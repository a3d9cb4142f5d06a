use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use frontcast::checkpoint::{self, AnyModel, ModelSpec};
use frontcast::grid::{load_sequence, save_sequence, split_train_test, window_dataset, Dataset, GridSpec, StateFrame, CONTEXT_LEN};
use frontcast::model::Forecaster;
use frontcast::physics::{advective_residual_ratio, compute_terms, masked_stats};
use frontcast::synthdata::{generate, SynthConfig, SynthDynamics};
use frontcast::train::{self as trainer, classify_metrics, evaluate, rollout as roll, write_csv, BoxStats, MetricsReport, TrainConfig, CSV_HEADER, DEFAULT_THRESHOLD};

use crate::manifest::RunManifest;
use crate::options::{read_json, TrainOptions};
use crate::Failure;

pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const BOXPLOT_FILE: &str = "boxplot.json";

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::runtime(format!("{}: {e}", dir.display())))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(Failure::runtime)?;
    write_file(path, text + "\n")
}

fn load_frames(dir: &Path) -> Result<Vec<StateFrame>, Failure> {
    let frames = load_sequence(dir).map_err(Failure::usage)?;
    if frames.is_empty() {
        return Err(Failure::usage(format!("{} contains no frame files", dir.display())));
    }
    Ok(frames)
}

fn load_windows(dir: &Path) -> Result<Dataset, Failure> {
    window_dataset(&load_frames(dir)?, CONTEXT_LEN, 1).map_err(Failure::usage)
}

fn parse_list(raw: &str, what: &str) -> Result<Vec<usize>, Failure> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| Failure::usage(format!("bad {what} value {s:?}"))))
        .collect()
}

/// Synthetic data description; grid geometry fields other than the size
/// default to the ocean presets.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthFile {
    pub height: usize,
    pub width: usize,
    pub dx_meters: Option<f64>,
    pub dt_seconds: Option<f64>,
    pub nu: Option<f64>,
    pub num_days: usize,
    #[serde(default)]
    pub seed: u64,
    pub num_gyres: Option<usize>,
    pub max_speed: Option<f64>,
    pub front_threshold: Option<f64>,
    #[serde(default)]
    pub dynamics: SynthDynamics,
}

impl SynthFile {
    pub fn to_config(&self) -> Result<SynthConfig, Failure> {
        let ocean = GridSpec::ocean(self.height, self.width).map_err(Failure::usage)?;
        let grid = GridSpec::new(
            self.height,
            self.width,
            self.dx_meters.unwrap_or(ocean.dx_meters),
            self.dt_seconds.unwrap_or(ocean.dt_seconds),
            self.nu.unwrap_or(ocean.nu),
        )
        .map_err(Failure::usage)?;
        let base = SynthConfig::new(grid, self.num_days, self.seed);
        let cfg = SynthConfig {
            num_gyres: self.num_gyres.unwrap_or(base.num_gyres),
            max_speed: self.max_speed.unwrap_or(base.max_speed),
            front_threshold: self.front_threshold.unwrap_or(base.front_threshold),
            dynamics: self.dynamics,
            ..base
        };
        cfg.validate().map_err(Failure::usage)?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub num_days: Option<usize>,
}

pub fn synth(a: SynthArgs) -> Result<(), Failure> {
    let mut file: SynthFile = read_json(&a.config)?;
    if let Some(seed) = a.seed {
        file.seed = seed;
    }
    if let Some(n) = a.num_days {
        file.num_days = n;
    }
    let cfg = file.to_config()?;
    if a.out.is_dir() && !load_sequence(&a.out).map_err(Failure::runtime)?.is_empty() {
        return Err(Failure::usage(format!("{} already holds frames; choose an empty directory", a.out.display())));
    }
    let out = generate(&cfg).map_err(Failure::from_core)?;
    let paths = save_sequence(&out.frames, &a.out).map_err(Failure::from_core)?;
    let resolved = a.out.join("synth_config.json");
    write_json(&resolved, &cfg)?;

    let mut m = RunManifest::new("synth");
    m.config_paths.push(a.config.clone());
    m.seed("synth", cfg.seed);
    m.artifacts.extend(paths);
    m.artifact(resolved);
    m.write(&a.out)?;
    println!(
        "wrote {} frames to {} (front fraction {:.4})",
        out.frames.len(),
        a.out.display(),
        out.front_fraction()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Raster directory produced by `synth`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub options: TrainOptions,
}

#[derive(Debug, Serialize)]
struct ResolvedRun<'a> {
    model: &'a ModelSpec,
    train: &'a TrainConfig,
    split: f64,
}

struct TrainedRun {
    model: AnyModel,
    wall_seconds: f64,
    artifacts: Vec<PathBuf>,
}

/// Trains one configuration and writes its checkpoint, log and resolved
/// configuration into `out`.
fn train_one(opts: &TrainOptions, data: &Path, train_set: &Dataset, out: &Path) -> Result<TrainedRun, Failure> {
    let (spec, cfg) = opts.build(*train_set.spec(), data)?;
    let mut model = AnyModel::build(&spec).map_err(Failure::from_core)?;
    create_dir(out)?;
    let mut artifacts = Vec::new();
    let mut wall_seconds = 0.0;
    if let Some(net) = model.network_mut() {
        let history = trainer::train(net, train_set, &cfg).map_err(Failure::from_core)?;
        wall_seconds = history.wall_seconds;
        let log = out.join(TRAIN_LOG_FILE);
        let f = fs::File::create(&log).map_err(|e| Failure::runtime(format!("{}: {e}", log.display())))?;
        history.write_jsonl(BufWriter::new(f)).map_err(Failure::runtime)?;
        artifacts.push(log);
        if let (Some(first), Some(last)) = (history.epochs.first(), history.epochs.last()) {
            println!(
                "{}: epoch 1 loss {:.6}, epoch {} loss {:.6}, {:.1}s",
                spec.name(),
                first.loss.total,
                last.epoch,
                last.loss.total,
                history.wall_seconds
            );
        }
    }
    let ckpt = out.join(CHECKPOINT_FILE);
    checkpoint::save(&model, &ckpt).map_err(Failure::from_core)?;
    artifacts.push(ckpt);
    let resolved = out.join("train_config.json");
    write_json(
        &resolved,
        &ResolvedRun {
            model: &spec,
            train: &cfg,
            split: opts.split()?,
        },
    )?;
    artifacts.push(resolved);
    Ok(TrainedRun {
        model,
        wall_seconds,
        artifacts,
    })
}

pub fn train(a: TrainArgs) -> Result<(), Failure> {
    let opts = a.options.resolve_file()?;
    let (train_set, _) = split_train_test(&load_windows(&a.data)?, opts.split()?).map_err(Failure::usage)?;
    let run = train_one(&opts, &a.data, &train_set, &a.out)?;

    let mut m = RunManifest::new("train");
    m.config_paths.extend(opts.config.clone());
    m.inputs.push(a.data.clone());
    m.seed("train", opts.seed.unwrap_or(0));
    m.artifacts.extend(run.artifacts);
    m.write(&a.out)?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated rollout horizons.
    #[arg(long, default_value = "1,3,7")]
    pub horizons: String,
    /// Training fraction; evaluation uses the windows after it.
    #[arg(long, conflicts_with = "all")]
    pub split: Option<f64>,
    /// Evaluate on every window instead of the test split.
    #[arg(long)]
    pub all: bool,
    /// Dataset label in the reports; defaults to the data directory name.
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Serialize)]
struct HorizonBox {
    dataset: String,
    step: usize,
    f1: Option<BoxStats>,
}

fn test_split(windows: Dataset, split: Option<f64>, all: bool) -> Result<Dataset, Failure> {
    if all {
        return Ok(windows);
    }
    let opts = TrainOptions {
        split,
        ..Default::default()
    };
    let (_, test) = split_train_test(&windows, opts.split()?).map_err(Failure::usage)?;
    if test.is_empty() {
        return Err(Failure::usage("test split is empty; lower --split or pass --all"));
    }
    Ok(test)
}

fn score(model: &AnyModel, test: &Dataset, horizons: &[usize], name: &str) -> Result<Vec<MetricsReport>, Failure> {
    if model.grid() != test.spec() {
        return Err(Failure::usage(format!(
            "checkpoint grid {:?} does not match data grid {:?}",
            model.grid(),
            test.spec()
        )));
    }
    evaluate(model, test, horizons, name).map_err(Failure::from_core)
}

fn write_reports(out: &Path, reports: &[MetricsReport], m: &mut RunManifest) -> Result<(), Failure> {
    let json = out.join(METRICS_JSON);
    write_json(&json, &reports)?;
    let csv = out.join(METRICS_CSV);
    let mut buf = Vec::new();
    write_csv(reports, &mut buf).map_err(Failure::runtime)?;
    write_file(&csv, &buf)?;
    let boxes: Vec<HorizonBox> = reports
        .iter()
        .map(|r| HorizonBox {
            dataset: r.dataset.clone(),
            step: r.step,
            f1: r.box_stats(),
        })
        .collect();
    let bx = out.join(BOXPLOT_FILE);
    write_json(&bx, &boxes)?;
    m.artifacts.extend([json, csv, bx]);
    print!("{}", String::from_utf8_lossy(&buf));
    Ok(())
}

fn dataset_name(name: Option<String>, data: &Path) -> String {
    name.unwrap_or_else(|| {
        data.file_name()
            .map_or_else(|| "data".to_string(), |n| n.to_string_lossy().into_owned())
    })
}

pub fn eval(a: EvalArgs) -> Result<(), Failure> {
    let horizons = parse_list(&a.horizons, "horizon")?;
    if horizons.is_empty() {
        return Err(Failure::usage("--horizons is empty"));
    }
    let model = checkpoint::load(&a.checkpoint).map_err(Failure::usage)?;
    let test = test_split(load_windows(&a.data)?, a.split, a.all)?;
    let name = dataset_name(a.name, &a.data);
    let reports = score(&model, &test, &horizons, &name)?;
    create_dir(&a.out)?;
    let mut m = RunManifest::new("eval");
    m.inputs.extend([a.checkpoint.clone(), a.data.clone()]);
    write_reports(&a.out, &reports, &mut m)?;
    m.write(&a.out)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    CnnLayers,
    TransformerLayers,
    LossVariant,
}

impl SweepAxis {
    fn name(self) -> &'static str {
        match self {
            SweepAxis::CnnLayers => "cnn-layers",
            SweepAxis::TransformerLayers => "transformer-layers",
            SweepAxis::LossVariant => "loss-variant",
        }
    }

    fn apply(self, opts: &TrainOptions, value: usize) -> Result<TrainOptions, Failure> {
        let mut o = opts.clone();
        match self {
            SweepAxis::CnnLayers => o.cnn_layers = Some(value),
            SweepAxis::TransformerLayers => o.transformer_layers = Some(value),
            SweepAxis::LossVariant => {
                o.loss_variant =
                    Some(u8::try_from(value).map_err(|_| Failure::usage(format!("loss variant {value} out of range")))?)
            }
        }
        Ok(o)
    }
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub axis: SweepAxis,
    /// Comma-separated values along the axis.
    #[arg(long)]
    pub values: String,
    #[arg(long, default_value = "1")]
    pub horizons: String,
    #[command(flatten)]
    pub options: TrainOptions,
}

#[derive(Debug, Serialize)]
struct SweepRow {
    axis: &'static str,
    value: usize,
    #[serde(flatten)]
    report: MetricsReport,
}

pub fn sweep(a: SweepArgs) -> Result<(), Failure> {
    let values = parse_list(&a.values, a.axis.name())?;
    if values.is_empty() {
        return Err(Failure::usage("sweep axis has no values"));
    }
    let horizons = parse_list(&a.horizons, "horizon")?;
    if horizons.is_empty() {
        return Err(Failure::usage("--horizons is empty"));
    }
    let opts = a.options.resolve_file()?;
    let (train_set, test) = split_train_test(&load_windows(&a.data)?, opts.split()?).map_err(Failure::usage)?;
    // validate every configuration before spending time on training
    let runs = values
        .iter()
        .map(|&v| {
            let o = a.axis.apply(&opts, v)?;
            o.build(*train_set.spec(), &a.data)?;
            Ok((v, o))
        })
        .collect::<Result<Vec<_>, Failure>>()?;
    let name = dataset_name(None, &a.data);
    let mut m = RunManifest::new("sweep");
    m.config_paths.extend(opts.config.clone());
    m.inputs.push(a.data.clone());
    m.seed("train", opts.seed.unwrap_or(0));
    let mut rows = Vec::new();
    for (v, o) in runs {
        let dir = a.out.join(format!("{}-{v}", a.axis.name()));
        let run = train_one(&o, &a.data, &train_set, &dir)?;
        m.artifacts.extend(run.artifacts);
        for mut report in score(&run.model, &test, &horizons, &name)? {
            report.wall_seconds = Some(run.wall_seconds);
            rows.push(SweepRow {
                axis: a.axis.name(),
                value: v,
                report,
            });
        }
    }
    let mut csv = format!("axis,value,{CSV_HEADER}\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{}\n", r.axis, r.value, trainer::csv_row(&r.report)));
    }
    let csv_path = a.out.join("sweep.csv");
    write_file(&csv_path, &csv)?;
    let json_path = a.out.join("sweep.json");
    write_json(&json_path, &rows)?;
    m.artifacts.extend([csv_path, json_path]);
    m.write(&a.out)?;
    print!("{csv}");
    Ok(())
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// JSON destination; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Serialize)]
struct TermSummary {
    /// Mean over valid cells of all frame pairs.
    mean: f64,
    max_abs: f64,
}

#[derive(Debug, Serialize)]
struct AuditReport {
    pairs: usize,
    valid_cells_per_pair: usize,
    terms: BTreeMap<&'static str, TermSummary>,
    /// Mean over pairs of ‖ddt + conv‖ / ‖conv‖.
    advective_residual_u: f64,
    advective_residual_v: f64,
}

pub fn physics_audit(a: AuditArgs) -> Result<(), Failure> {
    let frames = load_frames(&a.data)?;
    if frames.len() < 2 {
        return Err(Failure::usage("physics audit needs at least two frames"));
    }
    let mut terms: BTreeMap<&'static str, TermSummary> = BTreeMap::new();
    let (mut ru, mut rv) = (0.0, 0.0);
    let mut valid = 0;
    let pairs = frames.len() - 1;
    for pair in frames.windows(2) {
        let t = compute_terms(&pair[0], &pair[1]).map_err(Failure::usage)?;
        valid = t.valid_mask.iter().filter(|&&k| k).count();
        for (name, field) in t.fields() {
            let s = masked_stats(field, &t.valid_mask);
            let e = terms.entry(name).or_default();
            e.mean += s.mean / pairs as f64;
            e.max_abs = e.max_abs.max(s.max_abs);
        }
        let [u, v] = advective_residual_ratio(&t);
        ru += u / pairs as f64;
        rv += v / pairs as f64;
    }
    let report = AuditReport {
        pairs,
        valid_cells_per_pair: valid,
        terms,
        advective_residual_u: ru,
        advective_residual_v: rv,
    };
    let text = serde_json::to_string_pretty(&report).map_err(Failure::runtime)? + "\n";
    match a.out {
        Some(path) => write_file(&path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

#[derive(Debug, Args)]
pub struct RolloutArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Index of the first frame of the seed window.
    #[arg(long, default_value_t = 0)]
    pub start: usize,
    #[arg(long, default_value_t = 7)]
    pub steps: usize,
}

#[derive(Debug, Serialize)]
struct RolloutStep {
    step: usize,
    day_index: i64,
    /// Against the true frame of the same day, when the data has it.
    f1: Option<f64>,
}

pub fn rollout(a: RolloutArgs) -> Result<(), Failure> {
    if a.steps == 0 {
        return Err(Failure::usage("--steps must be at least 1"));
    }
    let model = checkpoint::load(&a.checkpoint).map_err(Failure::usage)?;
    let frames = load_frames(&a.data)?;
    let end = a.start + CONTEXT_LEN;
    if end > frames.len() {
        return Err(Failure::usage(format!(
            "seed window {}..{end} exceeds the {} frames in {}",
            a.start,
            frames.len(),
            a.data.display()
        )));
    }
    let preds = roll(&model, &frames[a.start..end], a.steps).map_err(Failure::from_core)?;
    let mut steps = Vec::with_capacity(preds.len());
    for (k, p) in preds.iter().enumerate() {
        let f1 = match frames.get(end + k) {
            Some(truth) if truth.day_index == p.day_index => {
                Some(classify_metrics(&p.front, &truth.front, DEFAULT_THRESHOLD).map_err(Failure::from_core)?.f1)
            }
            _ => None,
        };
        steps.push(RolloutStep {
            step: k + 1,
            day_index: p.day_index,
            f1,
        });
    }
    let mut m = RunManifest::new("rollout");
    m.inputs.extend([a.checkpoint.clone(), a.data.clone()]);
    m.artifacts.extend(save_sequence(&preds, &a.out).map_err(Failure::from_core)?);
    let summary = a.out.join("rollout.json");
    write_json(&summary, &steps)?;
    m.artifact(summary);
    m.write(&a.out)?;
    for s in &steps {
        match s.f1 {
            Some(f1) => println!("step {} day {} f1 {f1:.2}", s.step, s.day_index),
            None => println!("step {} day {}", s.step, s.day_index),
        }
    }
    Ok(())
}
