//! Two-window ensembling, post-processing and pseudo-label relabelling.
//!
//! The fixed per-record order is fuse, binarize, bradycardia veto, then the
//! sinus-rhythm default, so every output carries at least one label.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec;
use crate::nn::{predict_probs, SeResNet};
use crate::preprocess::{make_example, PreprocessConfig};
use crate::record_io::{labels_from_codes, ClassMap, EcgRecord, LabelVector, N_SCORED};
use crate::rpeak_rules::{brady_rule, detect_rpeaks, final_brady};
use crate::tensor::Tensor;

pub const DEFAULT_THRESHOLD: f64 = 0.36;
/// Pseudo labels need a probability strictly above this.
pub const PSEUDO_THRESHOLD: f64 = 0.8;
/// Added pseudo labels above this are flagged for manual review.
pub const REVIEW_THRESHOLD: f64 = 0.95;

/// The nine diagnosis codes of the source that pseudo-labelling targets:
/// normal rhythm, AF, first-degree AV block, LBBB, RBBB, PAC, ventricular
/// ectopics, ST depression and ST elevation.
pub const ORIGINAL_LABEL_SPACE: [&str; 9] = [
    "426783006",
    "164889003",
    "270492004",
    "164909002",
    "59118001",
    "284470004",
    "164884008",
    "429622005",
    "164931005",
];

pub type Probs = [f64; N_SCORED];

fn check_len(p: &[f64]) -> Result<()> {
    if p.len() != N_SCORED {
        return Err(Error::Shape(format!(
            "probability vector has {} entries, expected {N_SCORED}",
            p.len()
        )));
    }
    Ok(())
}

/// Elementwise mean of the short- and long-window probabilities.
pub fn fuse(p_short: &[f64], p_long: &[f64]) -> Result<Probs> {
    fuse_weighted(&[p_short, p_long], None)
}

/// Weighted mean of any number of member outputs. Weights default to equal
/// and are normalized to sum to one.
pub fn fuse_weighted(members: &[&[f64]], weights: Option<&[f64]>) -> Result<Probs> {
    if members.is_empty() {
        return Err(Error::Validation("nothing to fuse".into()));
    }
    for m in members {
        check_len(m)?;
    }
    let uniform = vec![1.0; members.len()];
    let w = weights.unwrap_or(&uniform);
    if w.len() != members.len() || w.iter().any(|&x| x.is_nan() || x < 0.0) {
        return Err(Error::Config(format!(
            "{} fusion weights for {} members, all must be non-negative",
            w.len(),
            members.len()
        )));
    }
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return Err(Error::Config("fusion weights sum to zero".into()));
    }
    let mut out = [0.0; N_SCORED];
    for (i, o) in out.iter_mut().enumerate() {
        *o = members.iter().zip(w).map(|(m, wk)| wk * m[i]).sum::<f64>() / total;
    }
    Ok(out)
}

/// Positive iff `prob >= threshold`.
pub fn binarize(probs: &[f64], threshold: f64) -> Result<LabelVector> {
    check_len(probs)?;
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!(
            "threshold {threshold} outside (0, 1)"
        )));
    }
    let mut v = LabelVector::zeros();
    for (i, &p) in probs.iter().enumerate() {
        v.set(i, p >= threshold);
    }
    Ok(v)
}

/// Sets the sinus-rhythm bit when nothing else is positive.
pub fn snr_postprocess(mut labels: LabelVector, map: &ClassMap) -> LabelVector {
    if labels.is_empty() {
        labels.set(map.sinus_rhythm_index(), true);
    }
    labels
}

/// Combines the bradycardia bit with an already evaluated rule outcome.
pub fn apply_brady_rule(mut labels: LabelVector, rule_brady: bool, map: &ClassMap) -> LabelVector {
    if let Some(i) = map.bradycardia_index() {
        labels.set(i, final_brady(labels.get(i), rule_brady));
    }
    labels
}

/// Runs the R-peak rule on lead I of `record` and vetoes an unsupported
/// bradycardia call. Records without a positive bradycardia bit are
/// returned untouched, without running the detector.
pub fn apply_brady_veto(
    labels: LabelVector,
    record: &EcgRecord,
    map: &ClassMap,
) -> Result<LabelVector> {
    match map.bradycardia_index() {
        Some(i) if labels.get(i) => {
            let lead = record
                .lead("I")
                .ok_or_else(|| Error::MissingLead("I".into()))?;
            let rule = brady_rule(&detect_rpeaks(lead, record.fs())?.rr_intervals)?;
            Ok(apply_brady_rule(labels, rule, map))
        }
        _ => Ok(labels),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PostprocessConfig {
    pub threshold: f64,
    /// Short- and long-window weights; `None` means an unweighted mean.
    pub weights: Option<[f64; 2]>,
    pub brady_veto: bool,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        PostprocessConfig {
            threshold: DEFAULT_THRESHOLD,
            weights: None,
            brady_veto: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub record_id: String,
    pub probs: Probs,
    pub labels: LabelVector,
}

/// Full per-record post-processing. `record` is needed only for the veto.
pub fn postprocess(
    record_id: &str,
    p_short: &[f64],
    p_long: &[f64],
    record: Option<&EcgRecord>,
    config: &PostprocessConfig,
    map: &ClassMap,
) -> Result<Prediction> {
    let probs = match &config.weights {
        Some(w) => fuse_weighted(&[p_short, p_long], Some(w))?,
        None => fuse(p_short, p_long)?,
    };
    let mut labels = binarize(&probs, config.threshold)?;
    if config.brady_veto {
        if let Some(rec) = record {
            labels = apply_brady_veto(labels, rec, map)?;
        }
    }
    Ok(Prediction {
        record_id: record_id.to_string(),
        probs,
        labels: snr_postprocess(labels, map),
    })
}

/// Anything that maps records to per-class probabilities.
pub trait Predictor: Sync {
    fn predict(&self, records: &[EcgRecord]) -> Result<Vec<Probs>>;
}

/// A trained network together with the preprocessing it was trained on.
pub struct ModelPredictor<'a> {
    pub model: &'a SeResNet,
    pub preprocess: PreprocessConfig,
    pub map: &'a ClassMap,
    pub batch_size: usize,
}

impl Predictor for ModelPredictor<'_> {
    fn predict(&self, records: &[EcgRecord]) -> Result<Vec<Probs>> {
        let examples: Vec<Tensor> = exec::map(records, |r| {
            make_example(r, &self.preprocess, self.map).map(|(x, _)| x)
        })
        .into_iter()
        .collect::<Result<_>>()?;
        let inputs: Vec<&Tensor> = examples.iter().collect();
        predict_probs(self.model, &inputs, self.batch_size)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PseudoLabel {
    pub record_id: String,
    pub code: String,
    pub abbreviation: String,
    pub prob: f64,
    pub needs_review: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RelabelReport {
    pub threshold: f64,
    pub added: Vec<PseudoLabel>,
}

impl RelabelReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("record_id,code,abbreviation,prob,needs_review\n");
        for a in &self.added {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                a.record_id, a.code, a.abbreviation, a.prob, a.needs_review
            );
        }
        s
    }
}

/// Proposes pseudo labels from precomputed probabilities. A class is added
/// when its probability exceeds `threshold`, its code is outside
/// `original_space`, and the record does not already carry it.
pub fn relabel_from_probs(
    records: &[EcgRecord],
    probs: &[Probs],
    original_space: &HashSet<&str>,
    threshold: f64,
    map: &ClassMap,
) -> Result<RelabelReport> {
    if records.len() != probs.len() {
        return Err(Error::Shape(format!(
            "{} records but {} probability rows",
            records.len(),
            probs.len()
        )));
    }
    let mut added = Vec::new();
    for (rec, p) in records.iter().zip(probs) {
        let existing = labels_from_codes(rec.dx_codes(), map);
        for (i, entry) in map.entries().iter().enumerate() {
            if p[i] > threshold && !original_space.contains(entry.code.as_str()) && !existing.get(i)
            {
                added.push(PseudoLabel {
                    record_id: rec.record_id().to_string(),
                    code: entry.code.clone(),
                    abbreviation: entry.abbreviation.clone(),
                    prob: p[i],
                    needs_review: p[i] > REVIEW_THRESHOLD,
                });
            }
        }
    }
    Ok(RelabelReport { threshold, added })
}

pub fn relabel_pseudo(
    predictor: &dyn Predictor,
    records: &[EcgRecord],
    original_space: &HashSet<&str>,
    threshold: f64,
    map: &ClassMap,
) -> Result<RelabelReport> {
    let probs = predictor.predict(records)?;
    relabel_from_probs(records, &probs, original_space, threshold, map)
}

/// Returns copies of `records` with the report's codes appended.
pub fn apply_pseudo_labels(records: &[EcgRecord], report: &RelabelReport) -> Vec<EcgRecord> {
    records
        .iter()
        .map(|rec| {
            let extra = report
                .added
                .iter()
                .filter(|a| a.record_id == rec.record_id())
                .map(|a| a.code.clone());
            let codes: Vec<String> = rec.dx_codes().iter().cloned().chain(extra).collect();
            rec.clone().with_dx_codes(codes)
        })
        .collect()
}

/// Predictions CSV: a `record_id` column, 27 binary label columns and 27
/// probability columns, both blocks headed by the class abbreviations.
/// Lines starting with `#` are comments.
pub fn write_predictions(preds: &[Prediction], map: &ClassMap, comments: &[String]) -> String {
    let mut s = String::new();
    for c in comments {
        let _ = writeln!(s, "# {c}");
    }
    let abbr = map.abbreviations().join(",");
    let _ = writeln!(s, "record_id,{abbr},{abbr}");
    for p in preds {
        s.push_str(&p.record_id);
        for b in p.labels.0 {
            s.push_str(if b { ",1" } else { ",0" });
        }
        for v in p.probs {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

pub fn parse_predictions(text: &str, map: &ClassMap) -> Result<Vec<Prediction>> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    let (hline, header) = lines
        .next()
        .ok_or_else(|| Error::parse(1, "missing header row"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let abbr = map.abbreviations();
    if cols.len() != 1 + 2 * N_SCORED
        || cols[1..=N_SCORED] != abbr[..]
        || cols[N_SCORED + 1..] != abbr[..]
    {
        return Err(Error::parse(
            hline + 1,
            "header must be record_id followed by the class abbreviations twice",
        ));
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != cols.len() {
            return Err(Error::parse(
                i + 1,
                format!("expected {} fields, got {}", cols.len(), f.len()),
            ));
        }
        let mut labels = LabelVector::zeros();
        let mut probs = [0.0; N_SCORED];
        for k in 0..N_SCORED {
            labels.set(
                k,
                match f[1 + k] {
                    "1" => true,
                    "0" => false,
                    other => {
                        return Err(Error::parse(i + 1, format!("label '{other}' is not 0/1")))
                    }
                },
            );
            let p: f64 = f[1 + N_SCORED + k].parse().map_err(|_| {
                Error::parse(i + 1, format!("bad probability '{}'", f[1 + N_SCORED + k]))
            })?;
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::parse(
                    i + 1,
                    format!("probability {p} outside [0, 1]"),
                ));
            }
            probs[k] = p;
        }
        out.push(Prediction {
            record_id: f[0].to_string(),
            probs,
            labels,
        });
    }
    Ok(out)
}

pub fn save_predictions(
    path: impl AsRef<Path>,
    preds: &[Prediction],
    map: &ClassMap,
    comments: &[String],
) -> Result<()> {
    std::fs::write(path, write_predictions(preds, map, comments))?;
    Ok(())
}

pub fn load_predictions(path: impl AsRef<Path>, map: &ClassMap) -> Result<Vec<Prediction>> {
    parse_predictions(&std::fs::read_to_string(path)?, map)
}
