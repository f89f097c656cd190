//! Reward-weighted challenge score and per-class AUC/F1.
//!
//! Labels are first merged into the 24 scoring categories. For each record
//! with truth set `G` and prediction set `P`, every pair `(i in P, j in G)`
//! receives `1 / |G ∪ P|` in the confusion matrix `A`. The score is
//! `sum(W ∘ A)`, normalized so that the always-sinus-rhythm classifier scores
//! 0 and the oracle classifier scores 1.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::record_io::{ClassMap, LabelVector, N_MERGED, N_SCORED};

const DEFAULT_WEIGHTS: &str = include_str!("../assets/weights.csv");

pub type MergedLabels = [bool; N_MERGED];

/// Square reward matrix over merged categories; `w[i][j]` rewards predicting
/// category `i` when `j` is true.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardMatrix {
    names: Vec<String>,
    w: Vec<f64>,
}

impl RewardMatrix {
    /// The matrix bundled with the crate.
    pub fn default_matrix(map: &ClassMap) -> Result<Self> {
        Self::from_csv(DEFAULT_WEIGHTS, map)
    }

    pub fn load(path: impl AsRef<Path>, map: &ClassMap) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?, map)
    }

    /// Parses a CSV whose first row and first column carry the merged
    /// category names (`|`-joined for merged pairs) in class-map order.
    pub fn from_csv(text: &str, map: &ClassMap) -> Result<Self> {
        let mut rows = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
        let (hline, header) = rows
            .next()
            .ok_or_else(|| Error::parse(1, "empty weights file"))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.is_empty() || !cols[0].is_empty() {
            return Err(Error::parse(
                hline + 1,
                "header must start with an empty cell",
            ));
        }
        let names: Vec<String> = cols[1..].iter().map(|s| s.to_string()).collect();
        let mut w = Vec::with_capacity(names.len() * names.len());
        let mut row_names = Vec::new();
        for (i, line) in rows {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != names.len() + 1 {
                return Err(Error::parse(
                    i + 1,
                    format!("expected {} fields", names.len() + 1),
                ));
            }
            row_names.push(f[0].to_string());
            for v in &f[1..] {
                w.push(
                    v.parse::<f64>()
                        .map_err(|_| Error::parse(i + 1, format!("bad weight '{v}'")))?,
                );
            }
        }
        if row_names != names {
            return Err(Error::Validation(
                "weight row labels differ from column labels".into(),
            ));
        }
        Self::new(names, w, map)
    }

    /// Checks names against the class map, a unit diagonal and entries ≤ 1.
    pub fn new(names: Vec<String>, w: Vec<f64>, map: &ClassMap) -> Result<Self> {
        if names != map.merged_names() {
            return Err(Error::Validation(format!(
                "weight labels {:?} do not match merged classes {:?}",
                names,
                map.merged_names()
            )));
        }
        let n = names.len();
        if w.len() != n * n {
            return Err(Error::Shape(format!(
                "reward matrix needs {n}x{n} entries, got {}",
                w.len()
            )));
        }
        for i in 0..n {
            for j in 0..n {
                let v = w[i * n + j];
                if !v.is_finite() || v > 1.0 {
                    return Err(Error::Validation(format!(
                        "w[{i}][{j}] = {v} is not a finite value <= 1"
                    )));
                }
                if i == j && v != 1.0 {
                    return Err(Error::Validation(format!(
                        "diagonal w[{i}][{i}] = {v}, expected 1"
                    )));
                }
            }
        }
        Ok(RewardMatrix { names, w })
    }

    pub fn identity(map: &ClassMap) -> Self {
        let n = N_MERGED;
        let w = (0..n * n)
            .map(|k| if k / n == k % n { 1.0 } else { 0.0 })
            .collect();
        Self::new(map.merged_names().to_vec(), w, map).expect("identity is valid")
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.w[i * self.names.len() + j]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// ORs equivalent classes into their merged category.
pub fn merge_pairs(labels: &LabelVector, map: &ClassMap) -> MergedLabels {
    let mut out = [false; N_MERGED];
    for i in labels.positives() {
        out[map.merged_index(i)] = true;
    }
    out
}

fn check_aligned(preds: &[MergedLabels], truths: &[MergedLabels]) -> Result<()> {
    if preds.len() != truths.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} truths",
            preds.len(),
            truths.len()
        )));
    }
    Ok(())
}

/// Multilabel confusion matrix `[pred x truth]`, row-major.
pub fn confusion(preds: &[MergedLabels], truths: &[MergedLabels]) -> Result<Vec<f64>> {
    check_aligned(preds, truths)?;
    let mut a = vec![0.0; N_MERGED * N_MERGED];
    for (k, (p, g)) in preds.iter().zip(truths).enumerate() {
        let union = (0..N_MERGED).filter(|&i| p[i] || g[i]).count();
        if union == 0 {
            log::warn!("record {k} has no true and no predicted class; skipped");
            continue;
        }
        let share = 1.0 / union as f64;
        for i in (0..N_MERGED).filter(|&i| p[i]) {
            for j in (0..N_MERGED).filter(|&j| g[j]) {
                a[i * N_MERGED + j] += share;
            }
        }
    }
    Ok(a)
}

fn weighted_sum(a: &[f64], w: &RewardMatrix) -> f64 {
    a.iter().zip(&w.w).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChallengeScore {
    pub unnormalized: f64,
    pub inactive: f64,
    pub correct: f64,
    pub normalized: f64,
}

pub fn challenge_score(
    preds: &[MergedLabels],
    truths: &[MergedLabels],
    w: &RewardMatrix,
    map: &ClassMap,
) -> Result<ChallengeScore> {
    check_aligned(preds, truths)?;
    let unnormalized = weighted_sum(&confusion(preds, truths)?, w);
    let correct = weighted_sum(&confusion(truths, truths)?, w);
    let mut snr = [false; N_MERGED];
    snr[map.merged_index(map.sinus_rhythm_index())] = true;
    let inactive_preds = vec![snr; truths.len()];
    let inactive = weighted_sum(&confusion(&inactive_preds, truths)?, w);
    if correct == inactive {
        return Err(Error::DegenerateDataset(correct));
    }
    Ok(ChallengeScore {
        unnormalized,
        inactive,
        correct,
        normalized: (unnormalized - inactive) / (correct - inactive),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub abbreviation: String,
    /// `None` when the class lacks positive or negative examples.
    pub auc: Option<f64>,
    pub f1: f64,
    /// Set when precision and recall are both undefined and `f1` is reported as 0.
    pub f1_undefined: bool,
    pub precision: f64,
    pub recall: f64,
    pub support: usize,
}

/// Mann-Whitney AUC with midranks for ties.
pub fn auc(scores: &[f64], truths: &[bool]) -> Option<f64> {
    let n_pos = truths.iter().filter(|&&t| t).count();
    let n_neg = truths.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share their mean
        let mid = (i + j + 2) as f64 / 2.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| truths[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

/// Per scored class: AUC from `probs`, F1 from binarized `preds`.
pub fn per_class_metrics(
    probs: &[[f64; N_SCORED]],
    preds: &[LabelVector],
    truths: &[LabelVector],
    map: &ClassMap,
) -> Result<Vec<ClassMetrics>> {
    if probs.len() != truths.len() || preds.len() != truths.len() {
        return Err(Error::Shape(
            "probabilities, predictions and truths must align".into(),
        ));
    }
    Ok(map
        .entries()
        .iter()
        .enumerate()
        .map(|(c, entry)| {
            let scores: Vec<f64> = probs.iter().map(|p| p[c]).collect();
            let t: Vec<bool> = truths.iter().map(|l| l.get(c)).collect();
            let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
            for (p, &y) in preds.iter().zip(&t) {
                match (p.get(c), y) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fneg += 1,
                    _ => {}
                }
            }
            let ratio = |num: usize, den: usize| {
                if den == 0 {
                    0.0
                } else {
                    num as f64 / den as f64
                }
            };
            let denom = 2 * tp + fp + fneg;
            ClassMetrics {
                abbreviation: entry.abbreviation.clone(),
                auc: auc(&scores, &t),
                f1: ratio(2 * tp, denom),
                f1_undefined: denom == 0,
                precision: ratio(tp, tp + fp),
                recall: ratio(tp, tp + fneg),
                support: tp + fneg,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreReport {
    #[serde(flatten)]
    pub score: ChallengeScore,
    pub n_records: usize,
    pub per_class: Vec<ClassMetrics>,
}

/// Challenge score plus per-class metrics for aligned records.
pub fn evaluate(
    probs: &[[f64; N_SCORED]],
    preds: &[LabelVector],
    truths: &[LabelVector],
    w: &RewardMatrix,
    map: &ClassMap,
) -> Result<ScoreReport> {
    let merged_p: Vec<MergedLabels> = preds.iter().map(|l| merge_pairs(l, map)).collect();
    let merged_t: Vec<MergedLabels> = truths.iter().map(|l| merge_pairs(l, map)).collect();
    Ok(ScoreReport {
        score: challenge_score(&merged_p, &merged_t, w, map)?,
        n_records: truths.len(),
        per_class: per_class_metrics(probs, preds, truths, map)?,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

pub fn per_class_csv(metrics: &[ClassMetrics]) -> String {
    let mut s = String::from("class,auc,f1,f1_undefined,precision,recall,support\n");
    for m in metrics {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            m.abbreviation,
            fmt_opt(m.auc),
            m.f1,
            m.f1_undefined,
            m.precision,
            m.recall,
            m.support
        );
    }
    s
}

/// Whitespace-separated columns for a grouped bar chart, e.g. with gnuplot
/// `plot 'bars.dat' using 3:xtic(2) with histogram, '' using 4`.
pub fn bar_chart_data(metrics: &[ClassMetrics]) -> String {
    let mut s = String::from("# index class auc f1\n");
    for (i, m) in metrics.iter().enumerate() {
        let _ = writeln!(s, "{i} {} {} {}", m.abbreviation, fmt_opt(m.auc), m.f1);
    }
    s
}
