//! Argument parsing and command implementations.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use thzct::baselines::{AmpMode, MlModel, DEFAULT_LAMBDA};
use thzct::dlct::{read_model, write_model, Hyper, Sidecar};
use thzct::metrics::compare;
use thzct::radon::FilterWindow;
use thzct::saliency::{saliency_map, temporal_spread};
use thzct::sim::ScanConfig;
use thzct::tensor::{read_checkpoint, write_checkpoint, write_tensor};

use crate::exit::{MissingInput, Usage};
use crate::manifest::{manifest_path, RunManifest};
use crate::pgm::export_pgm;
use crate::pipeline::{self, ModelKind, Method, Predictor};
use crate::store::{self, read_cross_section, Dataset};

#[derive(Parser, Debug)]
#[command(name = "thzct", version, about = "Terahertz CT simulation and reconstruction pipeline")]
pub struct Cli {
    /// Worker threads (1 gives the reference deterministic mode).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a deterministic phantom suite.
    GenPhantoms(GenPhantomsArgs),
    /// Simulate scans of every phantom in a suite.
    Simulate(SimulateArgs),
    /// Train a model on one leave-one-out fold.
    Train(TrainArgs),
    /// Reconstruct one phantom with a given method.
    Reconstruct(ReconstructArgs),
    /// Score reconstructions against ground truth.
    Evaluate(EvaluateArgs),
    /// Export the input-gradient saliency of a trained model.
    Saliency(SaliencyArgs),
}

#[derive(Args, Debug)]
pub struct GenPhantomsArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub count: usize,
    #[arg(long, default_value_t = thzct::phantom::DEFAULT_WIDTH)]
    pub width: usize,
    #[arg(long, default_value_t = thzct::phantom::DEFAULT_PITCH_MM)]
    pub pitch: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Append the multi-material phantom (never used for training).
    #[arg(long)]
    pub composite: bool,
}

/// Scan settings; flags win over `--config`, which wins over defaults.
#[derive(Args, Debug, Default)]
pub struct ScanOverrides {
    /// `key = value` file of scan settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "n_angles")]
    pub n_angles: Option<String>,
    #[arg(long = "angle_step_deg")]
    pub angle_step_deg: Option<String>,
    #[arg(long = "width")]
    pub width: Option<String>,
    #[arg(long = "pitch_mm")]
    pub pitch_mm: Option<String>,
    #[arg(long = "n_time")]
    pub n_time: Option<String>,
    #[arg(long = "dt_ps")]
    pub dt_ps: Option<String>,
    #[arg(long = "pulse_fwhm_ps")]
    pub pulse_fwhm_ps: Option<String>,
    #[arg(long = "t0_ps")]
    pub t0_ps: Option<String>,
    #[arg(long = "beam_fwhm_mm")]
    pub beam_fwhm_mm: Option<String>,
    #[arg(long = "noise_db")]
    pub noise_db: Option<String>,
    #[arg(long = "echo_enabled")]
    pub echo_enabled: Option<String>,
    #[arg(long = "seed")]
    pub seed: Option<String>,
}

impl ScanOverrides {
    fn flags(&self) -> [(&'static str, &Option<String>); 12] {
        [
            ("n_angles", &self.n_angles),
            ("angle_step_deg", &self.angle_step_deg),
            ("width", &self.width),
            ("pitch_mm", &self.pitch_mm),
            ("n_time", &self.n_time),
            ("dt_ps", &self.dt_ps),
            ("pulse_fwhm_ps", &self.pulse_fwhm_ps),
            ("t0_ps", &self.t0_ps),
            ("beam_fwhm_mm", &self.beam_fwhm_mm),
            ("noise_db", &self.noise_db),
            ("echo_enabled", &self.echo_enabled),
            ("seed", &self.seed),
        ]
    }

    /// Defaults, then the config file, then flags.
    pub fn resolve(&self, base: ScanConfig) -> Result<ScanConfig> {
        let mut cfg = base;
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            for (k, v) in Sidecar::parse(&text)?.pairs {
                cfg.set(&k, &v)?;
            }
        }
        for (k, v) in self.flags() {
            if let Some(v) = v {
                cfg.set(k, v)?;
            }
        }
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub phantoms: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub scan: ScanOverrides,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// dlct (last-block spatial kernel), v11, v41 or mlct.
    #[arg(long)]
    pub model: String,
    #[arg(long, default_value_t = 0)]
    pub fold: usize,
    #[arg(long, default_value_t = 40)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Ridge coefficient of the polynomial regression.
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    pub lambda: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReconstructArgs {
    /// amp, ml or dl.
    #[arg(long)]
    pub method: String,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub phantom: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Label used in output file names (defaults to the method).
    #[arg(long)]
    pub tag: Option<String>,
    /// neg-log or raw.
    #[arg(long, default_value = "neg-log")]
    pub amp_mode: String,
    /// hann or ram-lak.
    #[arg(long, default_value = "hann")]
    pub window: String,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Args, Debug)]
pub struct SaliencyArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub phantom: String,
    #[arg(long = "angle-index")]
    pub angle_index: usize,
    #[arg(long)]
    pub out: PathBuf,
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(Usage(msg.into()))
}

fn parse_usage<T: std::str::FromStr>(s: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    s.parse::<T>().map_err(|e| usage(e.to_string()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be ≥ 1"));
        }
        // a second call in the same process keeps the existing pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::GenPhantoms(a) => gen_phantoms(&a),
        Command::Simulate(a) => simulate(&a),
        Command::Train(a) => train(&a),
        Command::Reconstruct(a) => reconstruct(&a),
        Command::Evaluate(a) => evaluate(&a),
        Command::Saliency(a) => saliency(&a),
    }
}

pub fn gen_phantoms(a: &GenPhantomsArgs) -> Result<()> {
    if a.count < 2 {
        return Err(usage(format!("--count must be ≥ 2, got {}", a.count)));
    }
    let mut m = RunManifest::start("gen-phantoms");
    m.seed = Some(a.seed);
    m.set("count", a.count);
    m.set("width", a.width);
    m.set("pitch_mm", a.pitch);
    m.set("composite", a.composite);
    let suite = pipeline::suite(a.seed, a.count, a.width, a.pitch, a.composite)?;
    m.outputs = store::write_phantoms(&a.out, &suite)?;
    m.write(&manifest_path(&a.out, true))
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    let entries = store::read_phantom_manifest(&a.phantoms).map_err(|e| {
        let missing = MissingInput(format!("no phantom manifest in {}", a.phantoms.display()));
        e.context(missing)
    })?;
    let first = entries.first().ok_or_else(|| usage("phantom manifest is empty"))?;
    let base = ScanConfig {
        width: store::load_phantom(first)?.width(),
        pitch_mm: first.pitch_mm,
        ..ScanConfig::default()
    };
    let cfg = a.scan.resolve(base)?;
    cfg.validate()?;
    create_dir(&a.out)?;
    let mut m = RunManifest::start("simulate");
    m.seed = Some(cfg.seed);
    for (k, v) in cfg.to_pairs() {
        m.set(k, v);
    }
    let mut written = Vec::new();
    let mut names = Vec::new();
    for (i, e) in entries.iter().enumerate() {
        let phantom = store::load_phantom(e)?;
        m.inputs.push(e.grid.clone());
        let sample = pipeline::simulate_sample(&phantom, &e.name, &cfg, i)?;
        written.push(store::write_sample(&a.out, &sample)?);
        names.push(e.name.clone());
    }
    let splits = pipeline::leave_one_out(&names);
    store::write_dataset_manifest(&a.out, &written, &splits)?;
    for e in &written {
        m.outputs.extend([e.scan.clone(), e.sinogram.clone(), e.truth.clone()]);
    }
    m.write(&manifest_path(&a.out, true))
}

fn loss_log_path(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".loss.txt");
    PathBuf::from(s)
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let kind: ModelKind = parse_usage(&a.model)?;
    let data = Dataset::open(&a.data)?;
    let split = data.split(a.fold)?.clone();
    let samples = split
        .train
        .iter()
        .map(|n| data.sample(n))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&pipeline::Sample> = samples.iter().collect();
    let mut m = RunManifest::start("train");
    m.seed = Some(a.seed);
    m.set("model", &a.model);
    m.set("fold", a.fold);
    m.set("test", split.test.join(","));
    m.inputs = split.train.iter().map(|n| data.entry(n).map(|e| e.scan.clone())).collect::<Result<_>>()?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let log_path = loss_log_path(&a.out);
    match kind {
        ModelKind::Ml => {
            m.set("lambda", a.lambda);
            let grams = refs.iter().map(|s| pipeline::gram_of(s)).collect::<Result<Vec<_>>>()?;
            let model = pipeline::fit_ml(&grams.iter().collect::<Vec<_>>(), a.lambda)?;
            write_checkpoint(&model.to_entries(), &a.out)?;
            let mse = training_mse(&model, &refs);
            fs::write(&log_path, format!("1\t{mse:e}\n"))
                .with_context(|| format!("writing {}", log_path.display()))?;
        }
        ModelKind::Dl(variant) => {
            let hyper = Hyper {
                lr: a.lr,
                epochs: a.epochs,
                seed: a.seed,
                ..Hyper::default()
            };
            hyper.validate().map_err(|e| usage(e.to_string()))?;
            for (k, v) in hyper.to_pairs() {
                m.set(&k, v);
            }
            let out = pipeline::train_dl(&refs, variant, &hyper, |epoch, loss| {
                eprintln!("epoch {}/{}: loss {loss:.6e}", epoch + 1, hyper.epochs);
            })?;
            let mut extra = hyper.to_pairs();
            extra.push(("fold".into(), a.fold.to_string()));
            extra.push(("train".into(), split.train.join(",")));
            write_model(&a.out, &out.params, &extra)?;
            let log: String = out
                .epoch_losses
                .iter()
                .enumerate()
                .map(|(e, l)| format!("{}\t{l:e}\n", e + 1))
                .collect();
            fs::write(&log_path, log).with_context(|| format!("writing {}", log_path.display()))?;
            m.outputs.push(Sidecar::path_for(&a.out));
        }
    }
    m.outputs.push(a.out.clone());
    m.outputs.push(log_path);
    m.write(&manifest_path(&a.out, false))
}

fn training_mse(model: &MlModel, samples: &[&pipeline::Sample]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for s in samples {
        let cfg = &s.scan.config;
        for k in 0..cfg.n_angles {
            for (trace, y) in s.scan.frame(k).chunks_exact(cfg.n_time).zip(s.sinogram.row(k)) {
                sum += (model.predict_trace(trace) - y).powi(2);
                n += 1;
            }
        }
    }
    sum / n.max(1) as f64
}

fn require_ckpt<'a>(ckpt: &'a Option<PathBuf>, method: Method) -> Result<&'a Path> {
    let path = ckpt
        .as_deref()
        .ok_or_else(|| anyhow::Error::new(MissingInput(format!("--method {method} needs --ckpt"))))?;
    if !path.exists() {
        return Err(anyhow::Error::new(MissingInput(format!("checkpoint {} not found", path.display()))));
    }
    Ok(path)
}

pub fn reconstruct(a: &ReconstructArgs) -> Result<()> {
    let method: Method = parse_usage(&a.method)?;
    let window: FilterWindow = parse_usage(&a.window)?;
    let amp_mode: AmpMode = parse_usage(&a.amp_mode)?;
    let data = Dataset::open(&a.data)?;
    let scan = data.scan(&a.phantom)?;
    let mut m = RunManifest::start("reconstruct");
    m.set("method", method);
    m.set("phantom", &a.phantom);
    m.set("window", &a.window);
    m.inputs.push(data.entry(&a.phantom)?.scan.clone());
    let ml_model;
    let dl_model;
    let predictor = match method {
        Method::Amp => {
            if a.ckpt.is_some() {
                eprintln!("warning: --ckpt is ignored by --method amp");
            }
            m.set("amp_mode", &a.amp_mode);
            Predictor::Amp(amp_mode)
        }
        Method::Ml => {
            let path = require_ckpt(&a.ckpt, method)?;
            m.inputs.push(path.to_path_buf());
            ml_model = MlModel::from_entries(&read_checkpoint(path)?)?;
            Predictor::Ml(&ml_model)
        }
        Method::Dl => {
            let path = require_ckpt(&a.ckpt, method)?;
            m.inputs.push(path.to_path_buf());
            dl_model = read_model(path)?.0;
            Predictor::Dl(&dl_model)
        }
    };
    let (sino, img) = pipeline::reconstruct(&scan, &predictor, window)?;
    create_dir(&a.out)?;
    let tag = a.tag.clone().unwrap_or_else(|| method.to_string());
    let stem = format!("{}.{tag}", a.phantom);
    let sino_path = a.out.join(format!("{stem}.sino.tzt"));
    let xs_path = a.out.join(format!("{stem}.xs.tzt"));
    let pgm_path = a.out.join(format!("{stem}.pgm"));
    write_tensor(&sino.tensor(), &sino_path)?;
    write_tensor(&img.tensor(), &xs_path)?;
    export_pgm(&img.data, img.width, img.width, &pgm_path)?;
    m.outputs = vec![sino_path, xs_path.clone(), pgm_path];
    m.write(&manifest_path(&xs_path, false))
}

/// Cross-section files `<name>.<method>.xs.tzt` in a directory, keyed by
/// `(name, method)`.
fn cross_sections(dir: &Path) -> Result<BTreeMap<(String, String), PathBuf>> {
    let mut out = BTreeMap::new();
    let rd = fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))?;
    for entry in rd {
        let entry = entry.with_context(|| format!("listing {}", dir.display()))?;
        let file = entry.file_name().to_string_lossy().into_owned();
        let Some(stem) = file.strip_suffix(".xs.tzt") else { continue };
        let Some((name, method)) = stem.rsplit_once('.') else { continue };
        out.insert((name.to_string(), method.to_string()), entry.path());
    }
    Ok(out)
}

/// One line of an evaluation report; `None` scores mark a missing pair.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub object: String,
    pub method: String,
    pub scores: Option<(f64, f64)>,
}

/// Rows for every (truth phantom ∪ predicted phantom) × method, sorted, and
/// the number of missing pairs.
pub fn evaluate_dirs(pred: &Path, truth: &Path) -> Result<(Vec<ReportRow>, usize)> {
    let preds = cross_sections(pred)?;
    let truths: BTreeMap<String, PathBuf> = cross_sections(truth)?
        .into_iter()
        .filter(|((_, m), _)| m == "truth")
        .map(|((n, _), p)| (n, p))
        .collect();
    let methods: BTreeSet<&String> = preds.keys().map(|(_, m)| m).collect();
    let names: BTreeSet<&String> = truths.keys().chain(preds.keys().map(|(n, _)| n)).collect();
    let mut rows = Vec::new();
    let mut missing = 0;
    for name in &names {
        for method in &methods {
            let key = ((*name).clone(), (*method).clone());
            let scores = match (preds.get(&key), truths.get(*name)) {
                (Some(p), Some(t)) => Some(compare(&read_cross_section(p)?, &read_cross_section(t)?)?),
                _ => {
                    missing += 1;
                    None
                }
            };
            rows.push(ReportRow {
                object: (*name).clone(),
                method: (*method).clone(),
                scores,
            });
        }
    }
    Ok((rows, missing))
}

/// Per-method means over rows with scores, in method order.
pub fn method_means(rows: &[ReportRow]) -> Vec<(String, f64, f64)> {
    let mut acc: BTreeMap<&str, (f64, f64, usize)> = BTreeMap::new();
    for r in rows {
        if let Some((rmse, ssim)) = r.scores {
            let e = acc.entry(&r.method).or_default();
            e.0 += rmse;
            e.1 += ssim;
            e.2 += 1;
        }
    }
    acc.into_iter()
        .map(|(m, (r, s, n))| (m.to_string(), r / n as f64, s / n as f64))
        .collect()
}

pub fn render_report(rows: &[ReportRow]) -> String {
    let mut s = String::from("object\tmethod\trmse\tssim\n");
    for r in rows {
        match r.scores {
            Some((rmse, ssim)) => s.push_str(&format!("{}\t{}\t{rmse:.6}\t{ssim:.6}\n", r.object, r.method)),
            None => s.push_str(&format!("{}\t{}\tmissing\tmissing\n", r.object, r.method)),
        }
    }
    for (m, rmse, ssim) in method_means(rows) {
        s.push_str(&format!("mean\t{m}\t{rmse:.6}\t{ssim:.6}\n"));
    }
    s
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    for dir in [&a.pred, &a.truth] {
        if !dir.is_dir() {
            return Err(anyhow::Error::new(MissingInput(format!("{} is not a directory", dir.display()))));
        }
    }
    let (rows, missing) = evaluate_dirs(&a.pred, &a.truth)?;
    let text = render_report(&rows);
    if let Some(dir) = a.report.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    fs::write(&a.report, &text).with_context(|| format!("writing {}", a.report.display()))?;
    if missing > 0 {
        eprintln!("warning: {missing} missing prediction/truth pairs");
    }
    let mut m = RunManifest::start("evaluate");
    m.inputs = vec![a.pred.clone(), a.truth.clone()];
    m.outputs = vec![a.report.clone()];
    m.set("rows", rows.len());
    m.set("missing", missing);
    m.write(&manifest_path(&a.report, false))
}

pub fn saliency(a: &SaliencyArgs) -> Result<()> {
    if !a.ckpt.exists() {
        return Err(anyhow::Error::new(MissingInput(format!("checkpoint {} not found", a.ckpt.display()))));
    }
    let (params, _) = read_model(&a.ckpt)?;
    let data = Dataset::open(&a.data)?;
    let scan = data.scan(&a.phantom)?;
    if a.angle_index >= scan.config.n_angles {
        return Err(usage(format!(
            "--angle-index {} out of range (scan has {} angles)",
            a.angle_index, scan.config.n_angles
        )));
    }
    let frame: Vec<f64> = scan.frame(a.angle_index).iter().map(|&v| f64::from(v)).collect();
    let frame_ref = format!("{}#{}", a.phantom, a.angle_index);
    let map = saliency_map(&params.cast::<f64>(), &frame, &frame_ref)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    export_pgm(&map.data, map.width, map.n_time, &a.out)?;
    let tzt = a.out.with_extension("tzt");
    write_tensor(&map.tensor(), &tzt)?;
    match temporal_spread(&map, scan.config.dt_ps) {
        Ok(s) => println!("spread_ps={s}"),
        Err(thzct::Error::Undefined(msg)) => {
            eprintln!("warning: {msg}");
            println!("spread_ps=undefined");
        }
        Err(e) => return Err(anyhow!(e)),
    }
    let mut m = RunManifest::start("saliency");
    m.set("phantom", &a.phantom);
    m.set("angle_index", a.angle_index);
    m.inputs = vec![a.ckpt.clone(), data.entry(&a.phantom)?.scan.clone()];
    m.outputs = vec![a.out.clone(), tzt];
    m.write(&manifest_path(&a.out, false))
}
