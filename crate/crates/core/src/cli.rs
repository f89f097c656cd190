//! The `ecg-ensemble` command line.
//!
//! Every subcommand writes a JSON manifest (tool version, seed and the full
//! effective configuration) next to its primary output. Settings come from
//! built-in defaults, then an optional `--config` file of `key=value`
//! lines, then command-line flags.

use std::collections::{BTreeMap, HashSet};
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::ensemble::{
    apply_pseudo_labels, binarize, load_predictions, postprocess, relabel_pseudo, save_predictions,
    ModelPredictor, PostprocessConfig, Prediction, Predictor, Probs, DEFAULT_THRESHOLD,
    ORIGINAL_LABEL_SPACE, PSEUDO_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::exec;
use crate::nn::{checkpoint, train, LossKind, SeResNet, SeResNetConfig, TrainConfig};
use crate::preprocess::{make_examples, PreprocessConfig};
use crate::record_io::{
    labels_from_codes, list_records, load_dx_codes, load_record, save_record, save_record_csv,
    ClassMap, EcgRecord, LabelVector, TRAINING_LEADS,
};
use crate::rpeak_rules::{brady_rule, detect_rpeaks};
use crate::scoring::{bar_chart_data, evaluate, per_class_csv, per_class_metrics, RewardMatrix};
use crate::synth::{generate, SynthSpec};

/// Everything a run can be configured with.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preprocess: PreprocessConfig,
    /// `input_length` and `seed` are derived in [`RunConfig::finalize`].
    pub model: SeResNetConfig,
    pub train: TrainConfig,
    pub threshold: f64,
    pub brady_veto: bool,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            preprocess: PreprocessConfig::default(),
            model: SeResNetConfig::default(),
            train: TrainConfig::default(),
            threshold: DEFAULT_THRESHOLD,
            brady_veto: true,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = || Error::Config(format!("invalid {key} '{value}'"));
        match key {
            "seed" => self.seed = value.parse().map_err(|_| bad())?,
            "threshold" => self.threshold = value.parse().map_err(|_| bad())?,
            "brady_veto" => self.brady_veto = value.parse().map_err(|_| bad())?,
            "epochs" => self.train.epochs = value.parse().map_err(|_| bad())?,
            "batch_size" => self.train.batch_size = value.parse().map_err(|_| bad())?,
            "loss" => self.train.loss = LossKind::parse(value)?,
            "lr_initial" => self.train.schedule.initial = value.parse().map_err(|_| bad())?,
            "lr_decayed" => self.train.schedule.decayed = value.parse().map_err(|_| bad())?,
            "lr_drop_epoch" => self.train.schedule.drop_epoch = value.parse().map_err(|_| bad())?,
            "input_length" => {
                return Err(Error::Config(
                    "input_length follows target_fs * window_seconds; set those instead".into(),
                ))
            }
            _ => {
                if !self.preprocess.set(key, value)? && !self.model.set(key, value)? {
                    return Err(Error::Config(format!("unknown configuration key '{key}'")));
                }
            }
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path)?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(lineno + 1, "expected key=value"))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Derives dependent fields and validates the whole configuration.
    pub fn finalize(&mut self) -> Result<()> {
        self.preprocess.validate()?;
        self.model.input_length = self.preprocess.window_len();
        self.model.input_leads = TRAINING_LEADS.len();
        self.model.seed = self.seed;
        self.train.seed = self.seed;
        self.model.validate()?;
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!(
                "threshold {} outside (0, 1)",
                self.threshold
            )));
        }
        if self.train.epochs == 0 || self.train.batch_size == 0 {
            return Err(Error::Config(
                "epochs and batch_size must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn to_map(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        for text in [self.preprocess.to_key_values(), self.model.to_key_values()] {
            for line in text.lines() {
                if let Some((k, v)) = line.split_once('=') {
                    m.insert(k.to_string(), v.to_string());
                }
            }
        }
        let t = &self.train;
        for (k, v) in [
            ("epochs", t.epochs.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("loss", t.loss.as_str().to_string()),
            ("lr_initial", t.schedule.initial.to_string()),
            ("lr_decayed", t.schedule.decayed.to_string()),
            ("lr_drop_epoch", t.schedule.drop_epoch.to_string()),
            ("threshold", self.threshold.to_string()),
            ("brady_veto", self.brady_veto.to_string()),
            ("seed", self.seed.to_string()),
        ] {
            m.insert(k.to_string(), v);
        }
        m
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "ecg-ensemble",
    version,
    about = "12-lead ECG abnormality classification pipeline",
    arg_required_else_help = true
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// File of key=value settings; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Binarization threshold.
    #[arg(long, global = true)]
    threshold: Option<f64>,
    /// Input window in seconds.
    #[arg(long, global = true, value_parser = ["10", "30"])]
    window: Option<String>,
    /// Run per-record work on one thread.
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write synthetic records with known beats and labels.
    Synth(SynthArgs),
    /// Write conditioned 8-lead model inputs as CSV records.
    Preprocess(DataOut),
    /// Detect R-peaks on one record and evaluate the bradycardia rule.
    Rpeaks(RpeaksArgs),
    /// Train a model on a directory of labelled records.
    Train(TrainArgs),
    /// Predict, fuse and post-process a directory of records.
    Predict(PredictArgs),
    /// Propose pseudo labels outside the original label space.
    Relabel(RelabelArgs),
    /// Challenge score of a predictions file against labelled records.
    Score(ScoreArgs),
    /// Per-class AUC/F1 table and bar-chart data.
    Report(ScoreArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value_t = 60.0)]
    bpm: f64,
    /// When set, rates are spaced evenly from --bpm to this value.
    #[arg(long)]
    bpm_max: Option<f64>,
    #[arg(long, default_value_t = 500)]
    fs: u32,
    #[arg(long, default_value_t = 10.0)]
    duration: f64,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0.0)]
    ectopic_rate: f64,
    #[arg(long, default_value_t = 0.0)]
    jitter_ms: f64,
    /// Write CSV signal files instead of int16 binaries.
    #[arg(long)]
    csv: bool,
}

#[derive(Debug, Args)]
struct DataOut {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RpeaksArgs {
    /// Record stem or any of its files.
    record: PathBuf,
    #[arg(long, default_value = "I")]
    lead: String,
    /// Output CSV; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint path; history and manifest are written alongside.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, value_parser = ["sign", "bce"])]
    loss: Option<String>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    data: PathBuf,
    /// Short-window model checkpoint.
    #[arg(long)]
    short: Option<PathBuf>,
    /// Long-window model checkpoint.
    #[arg(long)]
    long: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    no_brady_veto: bool,
}

#[derive(Debug, Args)]
struct RelabelArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Report CSV.
    #[arg(long)]
    out: PathBuf,
    /// Strict lower bound on probability for an added label.
    #[arg(long, default_value_t = PSEUDO_THRESHOLD)]
    min_prob: f64,
    /// Comma-separated codes of the original label space.
    #[arg(long)]
    original_codes: Option<String>,
    /// Also write relabelled records here.
    #[arg(long)]
    write_records: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    /// Directory of labelled records.
    #[arg(long)]
    truth: PathBuf,
    /// Predictions CSV.
    #[arg(long)]
    pred: PathBuf,
    /// Reward matrix CSV; the bundled matrix when omitted.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    config: BTreeMap<String, String>,
    inputs: Vec<String>,
    outputs: Vec<String>,
}

/// Writes to standard output, ignoring a closed pipe.
fn emit(text: &str) {
    use std::io::Write as _;
    let _ = std::io::stdout().write_all(text.as_bytes());
}

macro_rules! say {
    ($($arg:tt)*) => {
        emit(&format!("{}\n", format_args!($($arg)*)))
    };
}

struct Run {
    config: RunConfig,
    map: ClassMap,
}

impl Run {
    fn manifest(&self, command: &str, inputs: &[&Path], outputs: &[&Path]) -> Result<String> {
        let show = |ps: &[&Path]| ps.iter().map(|p| p.display().to_string()).collect();
        let m = Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed: self.config.seed,
            config: self.config.to_map(),
            inputs: show(inputs),
            outputs: show(outputs),
        };
        Ok(serde_json::to_string_pretty(&m)? + "\n")
    }

    fn write_manifest(
        &self,
        path: &Path,
        command: &str,
        inputs: &[&Path],
        outputs: &[&Path],
    ) -> Result<()> {
        fs::write(path, self.manifest(command, inputs, outputs)?)?;
        Ok(())
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn load_dir(dir: &Path) -> Result<Vec<EcgRecord>> {
    let stems = list_records(dir)?;
    if stems.is_empty() {
        return Err(Error::Validation(format!(
            "no records in {}",
            dir.display()
        )));
    }
    exec::map(&stems, |s| load_record(s)).into_iter().collect()
}

fn load_truths(dir: &Path, map: &ClassMap) -> Result<Vec<(String, LabelVector)>> {
    let stems = list_records(dir)?;
    if stems.is_empty() {
        return Err(Error::Validation(format!(
            "no records in {}",
            dir.display()
        )));
    }
    stems
        .iter()
        .map(|s| load_dx_codes(s).map(|(id, codes)| (id, labels_from_codes(&codes, map))))
        .collect()
}

fn cmd_synth(run: &Run, a: &SynthArgs) -> Result<()> {
    if a.count == 0 {
        return Err(Error::Validation("count must be positive".into()));
    }
    let mut outputs = Vec::new();
    for i in 0..a.count {
        let bpm = match a.bpm_max {
            Some(hi) if a.count > 1 => a.bpm + (hi - a.bpm) * i as f64 / (a.count - 1) as f64,
            _ => a.bpm,
        };
        let spec = SynthSpec {
            record_id: format!("rec{i}"),
            bpm,
            fs: a.fs,
            duration: a.duration,
            noise_sigma: a.noise,
            ectopic_rate: a.ectopic_rate,
            jitter_ms: a.jitter_ms,
            seed: run.config.seed.wrapping_add(i as u64),
        };
        let s = generate(&spec, &run.map)?;
        let stem = if a.csv {
            save_record_csv(&a.out, &s.record)?
        } else {
            save_record(&a.out, &s.record)?
        };
        outputs.push(stem);
    }
    let outs: Vec<&Path> = outputs.iter().map(|p| p.as_path()).collect();
    run.write_manifest(&a.out.join("manifest.json"), "synth", &[], &outs)?;
    say!("wrote {} records to {}", a.count, a.out.display());
    Ok(())
}

fn cmd_preprocess(run: &Run, a: &DataOut) -> Result<()> {
    let records = load_dir(&a.data)?;
    let cfg = &run.config.preprocess;
    let examples = make_examples(&records, cfg, &run.map)?;
    let names: Vec<String> = TRAINING_LEADS.iter().map(|s| s.to_string()).collect();
    for (rec, (x, _)) in records.iter().zip(&examples) {
        let signals = x
            .data()
            .chunks(cfg.window_len())
            .map(<[f64]>::to_vec)
            .collect();
        save_record_csv(
            &a.out,
            &rec.with_signals(signals, names.clone(), cfg.target_fs)?,
        )?;
    }
    run.write_manifest(
        &a.out.join("manifest.json"),
        "preprocess",
        &[&a.data],
        &[&a.out],
    )?;
    say!(
        "conditioned {} records into {}",
        records.len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_rpeaks(run: &Run, a: &RpeaksArgs) -> Result<()> {
    let rec = load_record(&a.record)?;
    let lead = rec
        .lead(&a.lead)
        .ok_or_else(|| Error::MissingLead(a.lead.clone()))?;
    let res = detect_rpeaks(lead, rec.fs())?;
    let rule = brady_rule(&res.rr_intervals)?;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "# record={} lead={} fs={} beats={} mean_rr_s={} brady_rule={rule}",
        rec.record_id(),
        a.lead,
        rec.fs(),
        res.peak_indices.len(),
        res.mean_rr()
            .map_or("NA".to_string(), |v| format!("{v:.4}")),
    );
    s.push_str("beat,sample,time_s,rr_s\n");
    for (k, &p) in res.peak_indices.iter().enumerate() {
        let rr = if k == 0 {
            String::new()
        } else {
            format!("{:.4}", res.rr_intervals[k - 1])
        };
        let _ = writeln!(s, "{k},{p},{:.4},{rr}", p as f64 / rec.fs() as f64);
    }
    match &a.out {
        Some(path) => {
            fs::write(path, &s)?;
            run.write_manifest(
                &sibling(path, ".manifest.json"),
                "rpeaks",
                &[&a.record],
                &[path],
            )?;
        }
        None => {
            emit(&s);
            eprint!("{}", run.manifest("rpeaks", &[&a.record], &[])?);
        }
    }
    Ok(())
}

fn cmd_train(run: &Run, a: &TrainArgs) -> Result<()> {
    let records = load_dir(&a.data)?;
    let data = make_examples(&records, &run.config.preprocess, &run.map)?;
    let mut model = SeResNet::new(run.config.model.clone())?;
    log::info!(
        "training {} parameters on {} records",
        model.parameter_count(),
        data.len()
    );
    let history = train(&mut model, &data, &run.config.train)?;
    checkpoint::save(&a.out, &model)?;
    let hist_path = sibling(&a.out, ".history.json");
    fs::write(&hist_path, serde_json::to_string_pretty(&history)? + "\n")?;
    run.write_manifest(
        &sibling(&a.out, ".manifest.json"),
        "train",
        &[&a.data],
        &[&a.out, &hist_path],
    )?;
    if let Some(last) = history.epochs.last() {
        say!(
            "trained {} epochs, final loss {:.6}",
            last.epoch,
            last.mean_loss
        );
    }
    Ok(())
}

/// Preprocessing for a stored model: its input length fixes the window.
fn preprocess_for(model: &SeResNet, base: &PreprocessConfig) -> Result<PreprocessConfig> {
    let len = model.config().input_length;
    let fs = base.target_fs as usize;
    if !len.is_multiple_of(fs) {
        return Err(Error::Config(format!(
            "model input length {len} is not a whole number of seconds at {fs} Hz"
        )));
    }
    Ok(PreprocessConfig {
        window_seconds: (len / fs) as u32,
        ..base.clone()
    })
}

fn model_probs(run: &Run, path: &Path, records: &[EcgRecord]) -> Result<Vec<Probs>> {
    let model = checkpoint::load(path)?;
    let predictor = ModelPredictor {
        preprocess: preprocess_for(&model, &run.config.preprocess)?,
        model: &model,
        map: &run.map,
        batch_size: 16,
    };
    predictor.predict(records)
}

fn cmd_predict(run: &Run, a: &PredictArgs) -> Result<()> {
    let records = load_dir(&a.data)?;
    let (short, long) = match (&a.short, &a.long) {
        (None, None) => return Err(Error::Config("predict needs --short and/or --long".into())),
        (Some(s), None) | (None, Some(s)) => {
            let p = model_probs(run, s, &records)?;
            (p.clone(), p)
        }
        (Some(s), Some(l)) => (
            model_probs(run, s, &records)?,
            model_probs(run, l, &records)?,
        ),
    };
    let cfg = PostprocessConfig {
        threshold: run.config.threshold,
        weights: None,
        brady_veto: run.config.brady_veto && !a.no_brady_veto,
    };
    let idx: Vec<usize> = (0..records.len()).collect();
    let preds: Vec<Prediction> = exec::map(&idx, |&i| {
        let rec = &records[i];
        postprocess(
            rec.record_id(),
            &short[i],
            &long[i],
            Some(rec),
            &cfg,
            &run.map,
        )
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let comments = vec![
        format!("seed={}", run.config.seed),
        format!("threshold={}", cfg.threshold),
        format!("brady_veto={}", cfg.brady_veto),
    ];
    save_predictions(&a.out, &preds, &run.map, &comments)?;
    let mut inputs: Vec<&Path> = vec![&a.data];
    inputs.extend(a.short.as_deref());
    inputs.extend(a.long.as_deref());
    run.write_manifest(
        &sibling(&a.out, ".manifest.json"),
        "predict",
        &inputs,
        &[&a.out],
    )?;
    say!(
        "wrote predictions for {} records to {}",
        preds.len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_relabel(run: &Run, a: &RelabelArgs) -> Result<()> {
    let records = load_dir(&a.data)?;
    let model = checkpoint::load(&a.model)?;
    let predictor = ModelPredictor {
        preprocess: preprocess_for(&model, &run.config.preprocess)?,
        model: &model,
        map: &run.map,
        batch_size: 16,
    };
    let original: HashSet<&str> = match &a.original_codes {
        Some(list) => list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .collect(),
        None => ORIGINAL_LABEL_SPACE.into_iter().collect(),
    };
    let report = relabel_pseudo(&predictor, &records, &original, a.min_prob, &run.map)?;
    fs::write(&a.out, report.to_csv())?;
    let mut outputs: Vec<&Path> = vec![&a.out];
    if let Some(dir) = &a.write_records {
        for rec in apply_pseudo_labels(&records, &report) {
            save_record(dir, &rec)?;
        }
        outputs.push(dir);
    }
    run.write_manifest(
        &sibling(&a.out, ".manifest.json"),
        "relabel",
        &[&a.data, &a.model],
        &outputs,
    )?;
    let review = report.added.iter().filter(|p| p.needs_review).count();
    say!(
        "{} pseudo labels proposed, {review} flagged for review",
        report.added.len()
    );
    Ok(())
}

/// Predictions reordered to match the truth records, by record id.
fn align(truths: &[(String, LabelVector)], preds: Vec<Prediction>) -> Result<Vec<Prediction>> {
    let mut by_id: BTreeMap<String, Prediction> = BTreeMap::new();
    for p in preds {
        if by_id.insert(p.record_id.clone(), p).is_some() {
            return Err(Error::Validation(
                "duplicate record id in predictions".into(),
            ));
        }
    }
    let aligned = truths
        .iter()
        .map(|(id, _)| {
            by_id
                .remove(id)
                .ok_or_else(|| Error::Validation(format!("no prediction for record {id}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(extra) = by_id.keys().next() {
        return Err(Error::Validation(format!(
            "prediction for unknown record {extra}"
        )));
    }
    Ok(aligned)
}

fn cmd_score(run: &Run, a: &ScoreArgs, report_only: bool) -> Result<()> {
    let truths = load_truths(&a.truth, &run.map)?;
    let preds = align(&truths, load_predictions(&a.pred, &run.map)?)?;
    let probs: Vec<Probs> = preds.iter().map(|p| p.probs).collect();
    let truth_labels: Vec<LabelVector> = truths.iter().map(|t| t.1).collect();
    fs::create_dir_all(&a.out)?;
    let class_csv = a.out.join("per_class.csv");
    let bars = a.out.join("per_class_bars.dat");
    let mut outputs: Vec<PathBuf> = vec![class_csv.clone(), bars.clone()];
    let metrics = if report_only {
        let labels: Vec<LabelVector> = probs
            .iter()
            .map(|p| binarize(p, run.config.threshold))
            .collect::<Result<_>>()?;
        per_class_metrics(&probs, &labels, &truth_labels, &run.map)?
    } else {
        let labels: Vec<LabelVector> = preds.iter().map(|p| p.labels).collect();
        let w = match &a.weights {
            Some(path) => RewardMatrix::load(path, &run.map)?,
            None => RewardMatrix::default_matrix(&run.map)?,
        };
        let report = evaluate(&probs, &labels, &truth_labels, &w, &run.map)?;
        let json = serde_json::to_string_pretty(&report)? + "\n";
        let score_path = a.out.join("score.json");
        fs::write(&score_path, &json)?;
        outputs.push(score_path);
        say!("{json}");
        report.per_class
    };
    fs::write(&class_csv, per_class_csv(&metrics))?;
    fs::write(&bars, bar_chart_data(&metrics))?;
    let mut inputs: Vec<&Path> = vec![&a.truth, &a.pred];
    inputs.extend(a.weights.as_deref());
    let outs: Vec<&Path> = outputs.iter().map(|p| p.as_path()).collect();
    let command = if report_only { "report" } else { "score" };
    run.write_manifest(&a.out.join("manifest.json"), command, &inputs, &outs)?;
    if report_only {
        say!("wrote per-class metrics to {}", a.out.display());
    }
    Ok(())
}

fn build_config(common: &Common, command: &Command) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        cfg.apply_file(path)?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(t) = common.threshold {
        cfg.threshold = t;
    }
    if let Some(w) = &common.window {
        cfg.preprocess.window_seconds = w
            .parse()
            .map_err(|_| Error::Config(format!("bad window {w}")))?;
    }
    if let Command::Train(t) = command {
        if let Some(e) = t.epochs {
            cfg.train.epochs = e;
        }
        if let Some(b) = t.batch_size {
            cfg.train.batch_size = b;
        }
        if let Some(l) = &t.loss {
            cfg.train.loss = LossKind::parse(l)?;
        }
    }
    cfg.finalize()?;
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<()> {
    if cli.common.sequential {
        exec::set_parallel(false);
    }
    let run = Run {
        config: build_config(&cli.common, &cli.command)?,
        map: ClassMap::default_map(),
    };
    match &cli.command {
        Command::Synth(a) => cmd_synth(&run, a),
        Command::Preprocess(a) => cmd_preprocess(&run, a),
        Command::Rpeaks(a) => cmd_rpeaks(&run, a),
        Command::Train(a) => cmd_train(&run, a),
        Command::Predict(a) => cmd_predict(&run, a),
        Command::Relabel(a) => cmd_relabel(&run, a),
        Command::Score(a) => cmd_score(&run, a, false),
        Command::Report(a) => cmd_score(&run, a, true),
    }
}

/// Parses `argv` (including the program name) and runs the subcommand.
/// Returns 0 on success, 1 on validation or runtime failure and 2 on usage
/// errors.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(
            &path,
            "# demo\nseed=5\nthreshold=0.5\nwindow_seconds=10\nstem_channels=16\n",
        )
        .unwrap();
        let common = Common {
            config: Some(path),
            seed: Some(9),
            threshold: None,
            window: Some("30".into()),
            sequential: false,
        };
        let cfg = build_config(
            &common,
            &Command::Rpeaks(RpeaksArgs {
                record: "x".into(),
                lead: "I".into(),
                out: None,
            }),
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.model.seed, 9);
        assert_eq!(cfg.threshold, 0.5);
        assert_eq!(cfg.preprocess.window_seconds, 30);
        assert_eq!(cfg.model.input_length, 15_000);
        assert_eq!(cfg.model.stem_channels, 16);
    }

    #[test]
    fn unknown_and_derived_keys_are_rejected() {
        let mut cfg = RunConfig::default();
        assert!(cfg.set("nonsense", "1").is_err());
        assert!(cfg.set("input_length", "100").is_err());
        assert!(cfg.set("loss", "mse").is_err());
        cfg.set("loss", "bce").unwrap();
        assert_eq!(cfg.train.loss, LossKind::Bce);
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(dispatch(["ecg-ensemble"]), 2);
        assert_eq!(dispatch(["ecg-ensemble", "frobnicate"]), 2);
        assert_eq!(
            dispatch(["ecg-ensemble", "rpeaks", "x", "--window", "20"]),
            2
        );
    }

    #[test]
    fn runtime_errors_exit_one() {
        assert_eq!(dispatch(["ecg-ensemble", "rpeaks", "/nonexistent/rec"]), 1);
        assert_eq!(
            dispatch(["ecg-ensemble", "--threshold", "2", "rpeaks", "x"]),
            1
        );
    }
}
