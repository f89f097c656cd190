use crate::error::{Error, Result};

/// Taps per side of the anti-alias filter, per unit of decimation factor.
const HALF_TAPS_PER_FACTOR: usize = 16;
/// Cut-off as a fraction of the target Nyquist frequency.
const CUTOFF_FRACTION: f64 = 0.9;

/// Zero-phase Blackman-windowed sinc low-pass, unit DC gain.
fn antialias_filter(factor: usize) -> Vec<f64> {
    let half = HALF_TAPS_PER_FACTOR * factor;
    let len = 2 * half + 1;
    // cycles per input sample
    let fc = CUTOFF_FRACTION * 0.5 / factor as f64;
    let mut taps: Vec<f64> = (0..len)
        .map(|i| {
            let m = i as f64 - half as f64;
            let sinc = if m == 0.0 {
                2.0 * fc
            } else {
                (2.0 * std::f64::consts::PI * fc * m).sin() / (std::f64::consts::PI * m)
            };
            let phase = 2.0 * std::f64::consts::PI * i as f64 / (len - 1) as f64;
            let window = 0.42 - 0.5 * phase.cos() + 0.08 * (2.0 * phase).cos();
            sinc * window
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// Decimates by an integer factor after low-pass filtering below the target
/// Nyquist frequency. Output length is `floor(n * to_fs / from_fs)`.
pub fn resample(signal: &[f64], from_fs: u32, to_fs: u32) -> Result<Vec<f64>> {
    if from_fs == 0 || to_fs == 0 {
        return Err(Error::Validation(
            "sampling frequencies must be positive".into(),
        ));
    }
    if from_fs == to_fs {
        return Ok(signal.to_vec());
    }
    if from_fs < to_fs || !from_fs.is_multiple_of(to_fs) {
        return Err(Error::UnsupportedRatio {
            from: from_fs,
            to: to_fs,
        });
    }
    let factor = (from_fs / to_fs) as usize;
    let n = signal.len();
    let out_len = n / factor;
    if n == 0 {
        return Ok(Vec::new());
    }
    let taps = antialias_filter(factor);
    let half = (taps.len() / 2) as isize;
    Ok((0..out_len)
        .map(|k| {
            let centre = (k * factor) as isize;
            taps.iter()
                .enumerate()
                .map(|(j, h)| h * signal[reflect(centre + j as isize - half, n)])
                .sum()
        })
        .collect())
}
