//! Signal conditioning: decimation, fixed-length windows, wavelet denoising
//! and assembly of model inputs.

mod resample;
pub mod wavelet;

use std::fmt::Write as _;

pub use resample::resample;
pub use wavelet::{ThresholdMode, Wavelet, SUPPORTED_WAVELETS};

use crate::error::{Error, Result};
use crate::exec;
use crate::record_io::{
    labels_from_codes, select_training_leads, ClassMap, EcgRecord, LabelVector,
};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessConfig {
    pub target_fs: u32,
    pub window_seconds: u32,
    pub wavelet: String,
    pub decomposition_level: usize,
    pub denoise_enabled: bool,
    pub threshold_mode: ThresholdMode,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            target_fs: 500,
            window_seconds: 30,
            wavelet: "bior2.6".to_string(),
            decomposition_level: 8,
            denoise_enabled: true,
            threshold_mode: ThresholdMode::Soft,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target_fs == 0 {
            return Err(Error::Config("target_fs must be positive".into()));
        }
        if self.window_seconds == 0 {
            return Err(Error::Config("window_seconds must be positive".into()));
        }
        if self.decomposition_level == 0 {
            return Err(Error::Config(
                "decomposition_level must be at least 1".into(),
            ));
        }
        Wavelet::from_name(&self.wavelet)?;
        Ok(())
    }

    /// Samples per lead after [`fix_length`].
    pub fn window_len(&self) -> usize {
        self.target_fs as usize * self.window_seconds as usize
    }

    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "target_fs={}", self.target_fs);
        let _ = writeln!(s, "window_seconds={}", self.window_seconds);
        let _ = writeln!(s, "wavelet={}", self.wavelet);
        let _ = writeln!(s, "decomposition_level={}", self.decomposition_level);
        let _ = writeln!(s, "denoise_enabled={}", self.denoise_enabled);
        let _ = writeln!(s, "threshold_mode={}", self.threshold_mode.as_str());
        s
    }

    /// Applies one `key=value` setting. Returns `Ok(false)` for keys this
    /// config does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let bad = |what: &str| Error::Config(format!("invalid {what} '{value}'"));
        match key {
            "target_fs" => self.target_fs = value.parse().map_err(|_| bad(key))?,
            "window_seconds" => self.window_seconds = value.parse().map_err(|_| bad(key))?,
            "wavelet" => self.wavelet = value.to_string(),
            "decomposition_level" => {
                self.decomposition_level = value.parse().map_err(|_| bad(key))?
            }
            "denoise_enabled" => self.denoise_enabled = value.parse().map_err(|_| bad(key))?,
            "threshold_mode" => self.threshold_mode = ThresholdMode::parse(value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn from_key_values(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(lineno + 1, "expected key=value"))?;
            if !cfg.set(k.trim(), v.trim())? {
                return Err(Error::parse(
                    lineno + 1,
                    format!("unknown key '{}'", k.trim()),
                ));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Truncates each lead to its first `fs * window_seconds` samples, or pads
/// the end with zeros.
pub fn fix_length(signals: &[Vec<f64>], fs: u32, window_seconds: u32) -> Vec<Vec<f64>> {
    let len = fs as usize * window_seconds as usize;
    signals
        .iter()
        .map(|lead| {
            let mut out: Vec<f64> = lead.iter().take(len).copied().collect();
            out.resize(len, 0.0);
            out
        })
        .collect()
}

pub fn wavelet_denoise(signal: &[f64], config: &PreprocessConfig) -> Result<Vec<f64>> {
    let w = Wavelet::from_name(&config.wavelet)?;
    wavelet::denoise(
        signal,
        &w,
        config.decomposition_level,
        config.threshold_mode,
    )
}

/// Builds a `[8 x target_fs*window_seconds]` model input and its labels:
/// lead selection, decimation, optional denoising, then truncation/padding.
pub fn make_example(
    record: &EcgRecord,
    config: &PreprocessConfig,
    map: &ClassMap,
) -> Result<(Tensor, LabelVector)> {
    config.validate()?;
    let rec = select_training_leads(record)?;
    let wavelet = Wavelet::from_name(&config.wavelet)?;
    let mut leads = Vec::with_capacity(rec.n_leads());
    for lead in rec.signals() {
        let mut x = resample(lead, rec.fs(), config.target_fs)?;
        if config.denoise_enabled && !x.is_empty() {
            x = wavelet::denoise(
                &x,
                &wavelet,
                config.decomposition_level,
                config.threshold_mode,
            )?;
        }
        leads.push(x);
    }
    let fixed = fix_length(&leads, config.target_fs, config.window_seconds);
    let n_leads = fixed.len();
    let len = config.window_len();
    let tensor = Tensor::new(vec![n_leads, len], fixed.concat())?;
    Ok((tensor, labels_from_codes(rec.dx_codes(), map)))
}

/// [`make_example`] over many records, in parallel when enabled.
pub fn make_examples(
    records: &[EcgRecord],
    config: &PreprocessConfig,
    map: &ClassMap,
) -> Result<Vec<(Tensor, LabelVector)>> {
    exec::map(records, |r| make_example(r, config, map))
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record_io::TRAINING_LEADS;

    #[test]
    fn truncates_to_first_window() {
        let lead: Vec<f64> = (0..20_000).map(f64::from).collect();
        let out = fix_length(&[lead], 500, 30);
        assert_eq!(out[0].len(), 15_000);
        assert_eq!(out[0][14_999], 14_999.0);
    }

    #[test]
    fn pads_short_leads_at_the_end() {
        let out = fix_length(&[vec![1.0; 7500]], 500, 30);
        assert_eq!(out[0].len(), 15_000);
        assert!(out[0][..7500].iter().all(|&v| v == 1.0));
        assert!(out[0][7500..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn exact_window_unchanged_and_idempotent() {
        let lead: Vec<f64> = (0..15_000).map(|i| (i as f64).sin()).collect();
        let once = fix_length(std::slice::from_ref(&lead), 500, 30);
        assert_eq!(once[0], lead);
        assert_eq!(fix_length(&once, 500, 30), once);
    }

    #[test]
    fn config_key_values_round_trip() {
        let cfg = PreprocessConfig {
            window_seconds: 10,
            wavelet: "bior2.2".into(),
            denoise_enabled: false,
            threshold_mode: ThresholdMode::Hard,
            ..Default::default()
        };
        let back = PreprocessConfig::from_key_values(&cfg.to_key_values()).unwrap();
        assert_eq!(back, cfg);
        assert!(PreprocessConfig::from_key_values("wavelet=db4\n").is_err());
        assert!(PreprocessConfig::from_key_values("nope=1\n").is_err());
        assert!(PreprocessConfig::from_key_values("decomposition_level=0\n").is_err());
    }

    #[test]
    fn already_conditioned_record_passes_through() {
        let signals: Vec<Vec<f64>> = (0..8)
            .map(|l| {
                (0..15_000)
                    .map(|i| ((i * (l + 1)) as f64 * 0.01).sin())
                    .collect()
            })
            .collect();
        let rec = EcgRecord::new(
            "x",
            signals.clone(),
            TRAINING_LEADS.iter().map(|s| s.to_string()).collect(),
            500,
        )
        .unwrap();
        let cfg = PreprocessConfig {
            denoise_enabled: false,
            ..Default::default()
        };
        let (t, labels) = make_example(&rec, &cfg, &ClassMap::default_map()).unwrap();
        assert_eq!(t.shape(), &[8, 15_000]);
        assert_eq!(t.data(), signals.concat().as_slice());
        assert!(labels.is_empty());
    }
}
