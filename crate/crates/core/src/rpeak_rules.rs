//! Pan-Tompkins R-peak detection and the rule-based bradycardia classifier.

use crate::error::{Error, Result};

/// Detector constants. Defaults follow the original Pan-Tompkins design.
#[derive(Debug, Clone, PartialEq)]
pub struct PanTompkinsConfig {
    pub low_hz: f64,
    pub high_hz: f64,
    pub integration_ms: f64,
    pub refractory_ms: f64,
    /// Running-estimate weight of a new signal or noise peak.
    pub peak_weight: f64,
    /// Running-estimate weight of a peak found by search-back.
    pub searchback_weight: f64,
    /// THRESHOLD1 = NPKI + fraction * (SPKI - NPKI).
    pub threshold_fraction: f64,
    /// Search back once no beat is seen for this multiple of the mean RR.
    pub searchback_rr_factor: f64,
    pub learning_seconds: f64,
    /// Half-width of the window around an integrator peak searched for the
    /// R wave.
    pub locate_ms: f64,
}

impl Default for PanTompkinsConfig {
    fn default() -> Self {
        PanTompkinsConfig {
            low_hz: 5.0,
            high_hz: 15.0,
            integration_ms: 150.0,
            refractory_ms: 200.0,
            peak_weight: 0.125,
            searchback_weight: 0.25,
            threshold_fraction: 0.25,
            searchback_rr_factor: 1.66,
            learning_seconds: 2.0,
            locate_ms: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RPeakResult {
    pub peak_indices: Vec<usize>,
    /// Seconds; one fewer than peaks.
    pub rr_intervals: Vec<f64>,
    pub fs: u32,
}

impl RPeakResult {
    fn from_peaks(peak_indices: Vec<usize>, fs: u32) -> Self {
        let rr_intervals = peak_indices
            .windows(2)
            .map(|w| (w[1] - w[0]) as f64 / fs as f64)
            .collect();
        RPeakResult {
            peak_indices,
            rr_intervals,
            fs,
        }
    }

    pub fn mean_rr(&self) -> Option<f64> {
        (!self.rr_intervals.is_empty())
            .then(|| self.rr_intervals.iter().sum::<f64>() / self.rr_intervals.len() as f64)
    }
}

/// Second-order section, direct form I.
#[derive(Clone, Copy)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    fn butterworth(fs: f64, cutoff: f64, highpass: bool) -> Self {
        let w0 = 2.0 * std::f64::consts::PI * cutoff / fs;
        let alpha = w0.sin() / std::f64::consts::SQRT_2;
        let c = w0.cos();
        let a0 = 1.0 + alpha;
        let b = if highpass {
            [(1.0 + c) / 2.0, -(1.0 + c), (1.0 + c) / 2.0]
        } else {
            [(1.0 - c) / 2.0, 1.0 - c, (1.0 - c) / 2.0]
        };
        Biquad {
            b: b.map(|v| v / a0),
            a: [-2.0 * c / a0, (1.0 - alpha) / a0],
        }
    }

    fn run(&self, x: &mut [f64]) {
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        for v in x.iter_mut() {
            let y =
                self.b[0] * *v + self.b[1] * x1 + self.b[2] * x2 - self.a[0] * y1 - self.a[1] * y2;
            x2 = x1;
            x1 = *v;
            y2 = y1;
            y1 = y;
            *v = y;
        }
    }
}

/// Zero-phase band-pass: forward and backward passes over an
/// odd-reflection padded copy so edges do not ring.
fn bandpass(x: &[f64], fs: f64, cfg: &PanTompkinsConfig) -> Vec<f64> {
    let n = x.len();
    let pad = (fs as usize).min(n - 1);
    let mut buf = Vec::with_capacity(n + 2 * pad);
    buf.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    buf.extend_from_slice(x);
    buf.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

    let sections = [
        Biquad::butterworth(fs, cfg.low_hz, true),
        Biquad::butterworth(fs, cfg.high_hz, false),
    ];
    for s in &sections {
        s.run(&mut buf);
    }
    buf.reverse();
    for s in &sections {
        s.run(&mut buf);
    }
    buf.reverse();
    buf[pad..pad + n].to_vec()
}

/// Five-point derivative, squaring and centred moving-window integration.
fn integrated_energy(filtered: &[f64], fs: f64, cfg: &PanTompkinsConfig) -> Vec<f64> {
    let n = filtered.len();
    let at = |i: isize| filtered[i.clamp(0, n as isize - 1) as usize];
    let squared: Vec<f64> = (0..n as isize)
        .map(|i| {
            let d = (2.0 * at(i + 1) + at(i + 2) - at(i - 2) - 2.0 * at(i - 1)) * fs / 8.0;
            d * d
        })
        .collect();
    let width = ((cfg.integration_ms / 1000.0 * fs).round() as usize).max(1);
    let before = width / 2;
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + squared[i];
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(before);
            let hi = (lo + width).min(n);
            (prefix[hi] - prefix[lo]) / width as f64
        })
        .collect()
}

/// Local maxima of `y` that are also the largest value within
/// `radius` samples on either side.
fn candidate_peaks(y: &[f64], radius: usize) -> Vec<usize> {
    let n = y.len();
    (1..n.saturating_sub(1))
        .filter(|&i| y[i] > y[i - 1] && y[i] >= y[i + 1] && y[i] > 0.0)
        .filter(|&i| {
            let lo = i.saturating_sub(radius);
            let hi = (i + radius + 1).min(n);
            // ties resolve to the earliest index
            y[lo..i].iter().all(|&v| v < y[i]) && y[i + 1..hi].iter().all(|&v| v <= y[i])
        })
        .collect()
}

struct Thresholds {
    spki: f64,
    npki: f64,
    fraction: f64,
}

impl Thresholds {
    fn primary(&self) -> f64 {
        self.npki + self.fraction * (self.spki - self.npki)
    }

    fn secondary(&self) -> f64 {
        0.5 * self.primary()
    }
}

/// Detects R peaks on a single lead.
pub fn detect_rpeaks(lead: &[f64], fs: u32) -> Result<RPeakResult> {
    detect_rpeaks_with(lead, fs, &PanTompkinsConfig::default())
}

pub fn detect_rpeaks_with(lead: &[f64], fs: u32, cfg: &PanTompkinsConfig) -> Result<RPeakResult> {
    if !(100..=1000).contains(&fs) {
        return Err(Error::Validation(format!(
            "sampling frequency {fs} Hz outside the supported 100-1000 Hz"
        )));
    }
    let needed = 2 * fs as usize;
    if lead.len() < needed {
        return Err(Error::TooShort {
            needed,
            got: lead.len(),
        });
    }
    if let Some(v) = lead.iter().find(|v| !v.is_finite()) {
        return Err(Error::Validation(format!("non-finite sample {v}")));
    }
    if lead.iter().all(|&v| v == lead[0]) {
        return Ok(RPeakResult::from_peaks(Vec::new(), fs));
    }

    let fs_f = fs as f64;
    let mean = lead.iter().sum::<f64>() / lead.len() as f64;
    let centred: Vec<f64> = lead.iter().map(|v| v - mean).collect();
    let filtered = bandpass(&centred, fs_f, cfg);
    let energy = integrated_energy(&filtered, fs_f, cfg);
    let refractory = (cfg.refractory_ms / 1000.0 * fs_f).round() as usize;
    let candidates = candidate_peaks(&energy, refractory);

    let learn = ((cfg.learning_seconds * fs_f) as usize).min(energy.len());
    let learn_max = energy[..learn].iter().cloned().fold(0.0, f64::max);
    let learn_mean = energy[..learn].iter().sum::<f64>() / learn as f64;
    if learn_max <= 0.0 {
        return Ok(RPeakResult::from_peaks(Vec::new(), fs));
    }
    let mut th = Thresholds {
        spki: 0.25 * learn_max,
        npki: 0.5 * learn_mean,
        fraction: cfg.threshold_fraction,
    };

    let mut qrs: Vec<usize> = Vec::new();
    let mut skipped: Vec<usize> = Vec::new();
    let mean_rr = |qrs: &[usize]| -> Option<f64> {
        let k = qrs.len().min(9);
        (k >= 2).then(|| (qrs[qrs.len() - 1] - qrs[qrs.len() - k]) as f64 / (k - 1) as f64)
    };
    let search_back =
        |now: usize, qrs: &mut Vec<usize>, skipped: &mut Vec<usize>, th: &mut Thresholds| {
            let (Some(&last), Some(rr)) = (qrs.last(), mean_rr(qrs)) else {
                return;
            };
            if (now - last) as f64 <= cfg.searchback_rr_factor * rr {
                return;
            }
            let best = skipped
                .iter()
                .copied()
                .filter(|&i| {
                    i - last >= refractory && now - i >= refractory && energy[i] > th.secondary()
                })
                .max_by(|&a, &b| energy[a].total_cmp(&energy[b]));
            if let Some(i) = best {
                th.spki =
                    cfg.searchback_weight * energy[i] + (1.0 - cfg.searchback_weight) * th.spki;
                qrs.push(i);
                skipped.retain(|&s| s > i);
            }
        };

    for &i in &candidates {
        search_back(i, &mut qrs, &mut skipped, &mut th);
        let clear = qrs.last().is_none_or(|&last| i - last >= refractory);
        if energy[i] > th.primary() && clear {
            th.spki = cfg.peak_weight * energy[i] + (1.0 - cfg.peak_weight) * th.spki;
            qrs.push(i);
            skipped.clear();
        } else {
            th.npki = cfg.peak_weight * energy[i] + (1.0 - cfg.peak_weight) * th.npki;
            skipped.push(i);
        }
    }
    search_back(energy.len() - 1, &mut qrs, &mut skipped, &mut th);
    qrs.sort_unstable();

    // place each beat on the largest band-passed deflection nearby
    let radius = (cfg.locate_ms / 1000.0 * fs_f).round() as usize;
    let mut peaks: Vec<usize> = Vec::with_capacity(qrs.len());
    for &i in &qrs {
        let lo = i.saturating_sub(radius);
        let hi = (i + radius + 1).min(filtered.len());
        let r = (lo..hi)
            .max_by(|&a, &b| {
                filtered[a]
                    .abs()
                    .total_cmp(&filtered[b].abs())
                    .then(b.cmp(&a))
            })
            .unwrap_or(i);
        if peaks.last().is_none_or(|&p| r > p) {
            peaks.push(r);
        }
    }
    Ok(RPeakResult::from_peaks(peaks, fs))
}

/// Lower and upper bound (seconds, inclusive) of a bradycardic R-R interval.
pub const BRADY_BAND: (f64, f64) = (1.0, 1.6);
/// Minimum fraction of bradycardic intervals.
pub const BRADY_RATIO: f64 = 0.5;

/// True iff at least half of the intervals fall in `[1.0, 1.6]` s.
/// An empty list is not bradycardic.
pub fn brady_rule(rr_intervals: &[f64]) -> Result<bool> {
    if let Some(&bad) = rr_intervals.iter().find(|v| v.is_nan() || **v < 0.0) {
        return Err(Error::NegativeInterval(bad));
    }
    if rr_intervals.is_empty() {
        return Ok(false);
    }
    let brady_beats = rr_intervals
        .iter()
        .filter(|&&rr| (BRADY_BAND.0..=BRADY_BAND.1).contains(&rr))
        .count();
    Ok(brady_beats as f64 / rr_intervals.len() as f64 >= BRADY_RATIO)
}

/// The rule vetoes a positive ensemble call; it never creates one.
pub fn final_brady(ensemble_brady: bool, rule_brady: bool) -> bool {
    if !rule_brady {
        return false;
    }
    ensemble_brady
}
