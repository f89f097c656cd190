//! Biorthogonal spline (Cohen-Daubechies-Feauveau) wavelets, multilevel
//! decomposition with half-sample symmetric extension, and threshold
//! denoising.
//!
//! Filters are generated from their closed form rather than tabulated. For
//! `biorN.M` the synthesis low-pass is the B-spline filter
//! `sqrt(2) * ((1 + z) / 2)^N` and the analysis low-pass is
//! `sqrt(2) * cos^M(w/2) * sum_{k<K} C(K-1+k, k) sin^{2k}(w/2)` with
//! `K = (N + M) / 2`. The analysis high-pass is the modulated synthesis
//! low-pass, so it has `N` vanishing moments; the synthesis high-pass is the
//! modulated analysis low-pass and has `M`.

use crate::error::{Error, Result};

/// A biorthogonal filter bank. All four filters are odd-length and
/// symmetric about their centre tap.
#[derive(Debug, Clone, PartialEq)]
pub struct Wavelet {
    name: String,
    dec_lo: Vec<f64>,
    dec_hi: Vec<f64>,
    rec_lo: Vec<f64>,
    rec_hi: Vec<f64>,
}

/// Names accepted by [`Wavelet::from_name`].
pub const SUPPORTED_WAVELETS: [&str; 6] = [
    "bior2.2", "bior2.4", "bior2.6", "bior2.8", "bior4.4", "bior4.6",
];

impl Wavelet {
    pub fn from_name(name: &str) -> Result<Self> {
        let (primal, dual) = name
            .strip_prefix("bior")
            .and_then(|s| s.split_once('.'))
            .and_then(|(a, b)| Some((a.parse::<usize>().ok()?, b.parse::<usize>().ok()?)))
            .filter(|_| SUPPORTED_WAVELETS.contains(&name))
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown wavelet '{name}' (supported: {})",
                    SUPPORTED_WAVELETS.join(", ")
                ))
            })?;
        Ok(Self::spline(primal, dual, name))
    }

    fn spline(primal: usize, dual: usize, name: &str) -> Self {
        let rec_lo = spline_lowpass(primal);
        let dec_lo = dual_lowpass(primal, dual);
        let modulate = |f: &[f64], sign: f64| -> Vec<f64> {
            f.iter()
                .enumerate()
                .map(|(n, v)| if n % 2 == 0 { sign * v } else { -sign * v })
                .collect()
        };
        let dec_hi = modulate(&rec_lo, 1.0);
        let rec_hi = modulate(&dec_lo, -1.0);
        Wavelet {
            name: name.to_string(),
            dec_lo,
            dec_hi,
            rec_lo,
            rec_hi,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dec_lo(&self) -> &[f64] {
        &self.dec_lo
    }

    pub fn dec_hi(&self) -> &[f64] {
        &self.dec_hi
    }

    pub fn rec_lo(&self) -> &[f64] {
        &self.rec_lo
    }

    pub fn rec_hi(&self) -> &[f64] {
        &self.rec_hi
    }

    /// Combined group delay of an analysis/synthesis pair.
    fn delay(&self) -> usize {
        (self.dec_lo.len() - 1) / 2 + (self.rec_lo.len() - 1) / 2
    }
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `sqrt(2) * ((1 + z) / 2)^order`
fn spline_lowpass(order: usize) -> Vec<f64> {
    let mut taps = vec![1.0];
    for _ in 0..order {
        taps = poly_mul(&taps, &[0.5, 0.5]);
    }
    taps.iter().map(|t| t * std::f64::consts::SQRT_2).collect()
}

fn dual_lowpass(primal: usize, dual: usize) -> Vec<f64> {
    // cos^2(w/2) = (z^-1 + 2 + z) / 4 and sin^2(w/2) = (-z^-1 + 2 - z) / 4
    let cos2 = [0.25, 0.5, 0.25];
    let sin2 = [-0.25, 0.5, -0.25];
    let k_terms = (primal + dual) / 2;

    let mut cos_part = vec![1.0];
    for _ in 0..dual / 2 {
        cos_part = poly_mul(&cos_part, &cos2);
    }
    let width = 2 * (k_terms - 1) + 1;
    let mut series = vec![0.0; width];
    let mut sin_pow = vec![1.0];
    for k in 0..k_terms {
        let c = binomial(k_terms - 1 + k, k);
        let off = (width - sin_pow.len()) / 2;
        for (i, v) in sin_pow.iter().enumerate() {
            series[off + i] += c * v;
        }
        sin_pow = poly_mul(&sin_pow, &sin2);
    }
    poly_mul(&cos_part, &series)
        .iter()
        .map(|t| t * std::f64::consts::SQRT_2)
        .collect()
}

/// Half-sample symmetric extension: `x[-1] = x[0]`, `x[n] = x[n-1]`.
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// Multilevel decomposition. `details[0]` is the finest level.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub approx: Vec<f64>,
    pub details: Vec<Vec<f64>>,
    /// Input length at each level, finest first.
    lengths: Vec<usize>,
}

impl Decomposition {
    pub fn level(&self) -> usize {
        self.details.len()
    }

    pub fn signal_len(&self) -> usize {
        self.lengths[0]
    }
}

fn ceil_half(v: isize) -> isize {
    -(-v).div_euclid(2)
}

/// Range of coefficient indices needed to rebuild `n` samples. Indices may
/// be negative: the extension is applied on the fly, so every coefficient is
/// exact.
fn coeff_range(w: &Wavelet, n: usize) -> (isize, isize) {
    let delay = w.delay() as isize;
    let synth_len = w.rec_lo.len().max(w.rec_hi.len()) as isize;
    let k0 = ceil_half(delay - synth_len + 1);
    let k1 = (delay + n as isize - 1).div_euclid(2);
    (k0, k1)
}

fn analysis_step(x: &[f64], w: &Wavelet) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let (k0, k1) = coeff_range(w, n);
    let filter = |f: &[f64], k: isize| -> f64 {
        f.iter()
            .enumerate()
            .map(|(j, h)| h * x[reflect(2 * k - j as isize, n)])
            .sum()
    };
    let approx = (k0..=k1).map(|k| filter(&w.dec_lo, k)).collect();
    let detail = (k0..=k1).map(|k| filter(&w.dec_hi, k)).collect();
    (approx, detail)
}

fn synthesis_step(approx: &[f64], detail: &[f64], n: usize, w: &Wavelet) -> Vec<f64> {
    let (k0, _) = coeff_range(w, n);
    let delay = w.delay() as isize;
    let mut out = vec![0.0; n];
    for (m, o) in out.iter_mut().enumerate() {
        let pos = delay + m as isize;
        let mut acc = 0.0;
        for (coeffs, filt) in [(approx, &w.rec_lo), (detail, &w.rec_hi)] {
            // pos - 2k must land inside the filter
            let k_lo = ceil_half(pos - filt.len() as isize + 1);
            for k in k_lo..=pos.div_euclid(2) {
                acc += filt[(pos - 2 * k) as usize] * coeffs[(k - k0) as usize];
            }
        }
        *o = acc;
    }
    out
}

pub fn wavedec(signal: &[f64], wavelet: &Wavelet, level: usize) -> Result<Decomposition> {
    if signal.is_empty() {
        return Err(Error::Validation("cannot decompose an empty signal".into()));
    }
    if level == 0 {
        return Err(Error::Config(
            "decomposition level must be at least 1".into(),
        ));
    }
    let mut approx = signal.to_vec();
    let mut details = Vec::with_capacity(level);
    let mut lengths = Vec::with_capacity(level);
    for _ in 0..level {
        lengths.push(approx.len());
        let (a, d) = analysis_step(&approx, wavelet);
        details.push(d);
        approx = a;
    }
    Ok(Decomposition {
        approx,
        details,
        lengths,
    })
}

pub fn waverec(dec: &Decomposition, wavelet: &Wavelet) -> Vec<f64> {
    let mut approx = dec.approx.clone();
    for lvl in (0..dec.level()).rev() {
        approx = synthesis_step(&approx, &dec.details[lvl], dec.lengths[lvl], wavelet);
    }
    approx
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdMode {
    Soft,
    Hard,
}

impl ThresholdMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ThresholdMode::Soft => "soft",
            ThresholdMode::Hard => "hard",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "soft" => Ok(ThresholdMode::Soft),
            "hard" => Ok(ThresholdMode::Hard),
            other => Err(Error::Config(format!("unknown threshold mode '{other}'"))),
        }
    }

    fn apply(self, v: f64, thr: f64) -> f64 {
        match self {
            ThresholdMode::Soft => v.signum() * (v.abs() - thr).max(0.0),
            ThresholdMode::Hard => {
                if v.abs() > thr {
                    v
                } else {
                    0.0
                }
            }
        }
    }
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

/// Universal threshold `sigma * sqrt(2 ln n)` with `sigma` the median
/// absolute finest-level detail divided by 0.6745.
pub fn universal_threshold(finest_detail: &[f64], n: usize) -> f64 {
    let mut abs: Vec<f64> = finest_detail.iter().map(|v| v.abs()).collect();
    let sigma = median(&mut abs) / 0.6745;
    sigma * (2.0 * (n.max(2) as f64).ln()).sqrt()
}

/// Decomposes, thresholds every detail level, and reconstructs. The
/// approximation coefficients are left untouched.
pub fn denoise(
    signal: &[f64],
    wavelet: &Wavelet,
    level: usize,
    mode: ThresholdMode,
) -> Result<Vec<f64>> {
    let mut dec = wavedec(signal, wavelet, level)?;
    let thr = universal_threshold(&dec.details[0], signal.len());
    for d in &mut dec.details {
        for v in d.iter_mut() {
            *v = mode.apply(*v, thr);
        }
    }
    Ok(waverec(&dec, wavelet))
}
