use indexmap::IndexSet;

use super::class_map::{ClassMap, N_SCORED};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sex {
    Male,
    Female,
    Unknown,
}

impl Sex {
    pub fn as_str(self) -> &'static str {
        match self {
            Sex::Male => "Male",
            Sex::Female => "Female",
            Sex::Unknown => "Unknown",
        }
    }

    pub fn parse(s: &str) -> Sex {
        match s.trim().to_ascii_lowercase().as_str() {
            "male" | "m" => Sex::Male,
            "female" | "f" => Sex::Female,
            _ => Sex::Unknown,
        }
    }
}

/// Storage scaling of one lead: `millivolts = (raw - offset) / gain`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeadFormat {
    pub gain: f64,
    pub offset: f64,
}

impl Default for LeadFormat {
    fn default() -> Self {
        LeadFormat {
            gain: 1000.0,
            offset: 0.0,
        }
    }
}

/// A multi-lead ECG recording in millivolts.
///
/// Construction validates shape and finiteness; the value is immutable
/// afterwards except through methods that return a new record.
#[derive(Debug, Clone, PartialEq)]
pub struct EcgRecord {
    record_id: String,
    signals: Vec<Vec<f64>>,
    lead_names: Vec<String>,
    formats: Vec<LeadFormat>,
    fs: u32,
    age: Option<u32>,
    sex: Option<Sex>,
    dx_codes: IndexSet<String>,
    comments: Vec<String>,
}

impl EcgRecord {
    pub fn new(
        record_id: impl Into<String>,
        signals: Vec<Vec<f64>>,
        lead_names: Vec<String>,
        fs: u32,
    ) -> Result<Self> {
        let formats = vec![LeadFormat::default(); signals.len()];
        Self::with_formats(record_id, signals, lead_names, formats, fs)
    }

    pub fn with_formats(
        record_id: impl Into<String>,
        signals: Vec<Vec<f64>>,
        lead_names: Vec<String>,
        formats: Vec<LeadFormat>,
        fs: u32,
    ) -> Result<Self> {
        let record_id = record_id.into();
        if record_id.is_empty() || record_id.contains(char::is_whitespace) {
            return Err(Error::Validation(format!(
                "record id '{record_id}' must be non-empty without whitespace"
            )));
        }
        if fs == 0 {
            return Err(Error::Validation(
                "sampling frequency must be positive".into(),
            ));
        }
        if signals.is_empty() {
            return Err(Error::Validation("record has no leads".into()));
        }
        if lead_names.len() != signals.len() || formats.len() != signals.len() {
            return Err(Error::Validation(format!(
                "{} signal rows but {} lead names and {} formats",
                signals.len(),
                lead_names.len(),
                formats.len()
            )));
        }
        let n = signals[0].len();
        if n == 0 {
            return Err(Error::Validation(
                "leads must have at least one sample".into(),
            ));
        }
        for (name, row) in lead_names.iter().zip(&signals) {
            if row.len() != n {
                return Err(Error::Validation(format!(
                    "lead {name} has {} samples, expected {n}",
                    row.len()
                )));
            }
            if let Some(v) = row.iter().find(|v| !v.is_finite()) {
                return Err(Error::Validation(format!(
                    "lead {name} has non-finite sample {v}"
                )));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for name in &lead_names {
            if name.is_empty() || name.contains(char::is_whitespace) {
                return Err(Error::Validation(format!("invalid lead name '{name}'")));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::Validation(format!("duplicate lead {name}")));
            }
        }
        for f in &formats {
            if !(f.gain.is_finite() && f.gain > 0.0 && f.offset.is_finite()) {
                return Err(Error::Validation(format!("invalid gain/offset {f:?}")));
            }
        }
        Ok(EcgRecord {
            record_id,
            signals,
            lead_names,
            formats,
            fs,
            age: None,
            sex: None,
            dx_codes: IndexSet::new(),
            comments: Vec::new(),
        })
    }

    pub fn with_demographics(mut self, age: Option<u32>, sex: Option<Sex>) -> Self {
        self.age = age;
        self.sex = sex;
        self
    }

    pub fn with_dx_codes<I, S>(mut self, codes: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.dx_codes = codes.into_iter().map(Into::into).collect();
        self
    }

    pub(crate) fn with_comments(mut self, comments: Vec<String>) -> Self {
        self.comments = comments;
        self
    }

    pub fn with_record_id(mut self, id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() || id.contains(char::is_whitespace) {
            return Err(Error::Validation(format!("invalid record id '{id}'")));
        }
        self.record_id = id;
        Ok(self)
    }

    /// Returns a copy carrying different signals (same metadata and labels).
    pub fn with_signals(
        &self,
        signals: Vec<Vec<f64>>,
        lead_names: Vec<String>,
        fs: u32,
    ) -> Result<Self> {
        let formats = lead_names
            .iter()
            .map(|name| {
                self.lead_index(name)
                    .map(|i| self.formats[i])
                    .unwrap_or_default()
            })
            .collect();
        let mut out = Self::with_formats(self.record_id.clone(), signals, lead_names, formats, fs)?;
        out.age = self.age;
        out.sex = self.sex;
        out.dx_codes = self.dx_codes.clone();
        out.comments = self.comments.clone();
        Ok(out)
    }

    pub fn record_id(&self) -> &str {
        &self.record_id
    }

    pub fn signals(&self) -> &[Vec<f64>] {
        &self.signals
    }

    pub fn lead_names(&self) -> &[String] {
        &self.lead_names
    }

    pub fn formats(&self) -> &[LeadFormat] {
        &self.formats
    }

    pub fn fs(&self) -> u32 {
        self.fs
    }

    pub fn n_leads(&self) -> usize {
        self.signals.len()
    }

    pub fn n_samples(&self) -> usize {
        self.signals[0].len()
    }

    pub fn age(&self) -> Option<u32> {
        self.age
    }

    pub fn sex(&self) -> Option<Sex> {
        self.sex
    }

    pub fn dx_codes(&self) -> &IndexSet<String> {
        &self.dx_codes
    }

    pub fn comments(&self) -> &[String] {
        &self.comments
    }

    pub fn lead_index(&self, name: &str) -> Option<usize> {
        self.lead_names.iter().position(|n| n == name)
    }

    pub fn lead(&self, name: &str) -> Option<&[f64]> {
        self.lead_index(name).map(|i| self.signals[i].as_slice())
    }
}

/// Binary indicator vector over the scored classes, in class-map order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LabelVector(pub [bool; N_SCORED]);

impl LabelVector {
    pub fn zeros() -> Self {
        LabelVector([false; N_SCORED])
    }

    pub fn from_indices(indices: &[usize]) -> Self {
        let mut v = Self::zeros();
        for &i in indices {
            v.0[i] = true;
        }
        v
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn set(&mut self, i: usize, value: bool) {
        self.0[i] = value;
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn positives(&self) -> impl Iterator<Item = usize> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| i)
    }

    pub fn as_f64(&self) -> [f64; N_SCORED] {
        self.0.map(|b| if b { 1.0 } else { 0.0 })
    }

    pub fn codes<'a>(&self, map: &'a ClassMap) -> Vec<&'a str> {
        self.positives()
            .map(|i| map.entries()[i].code.as_str())
            .collect()
    }
}

impl Default for LabelVector {
    fn default() -> Self {
        Self::zeros()
    }
}

/// Sets bit `i` iff any code of scored class `i` appears in `dx_codes`.
/// Codes outside the map are ignored.
pub fn labels_from_codes<S: AsRef<str>>(
    dx_codes: impl IntoIterator<Item = S>,
    map: &ClassMap,
) -> LabelVector {
    let mut v = LabelVector::zeros();
    for code in dx_codes {
        if let Some(i) = map.index_of_code(code.as_ref().trim()) {
            v.set(i, true);
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map() -> ClassMap {
        ClassMap::default_map()
    }

    #[test]
    fn empty_codes_give_zero_vector() {
        let v = labels_from_codes(Vec::<String>::new(), &map());
        assert!(v.is_empty());
    }

    #[test]
    fn unknown_codes_are_dropped() {
        let m = map();
        let v = labels_from_codes(["164889003", "999"], &m);
        assert_eq!(v.count(), 1);
        assert!(v.get(m.index_of_abbreviation("AF").unwrap()));
    }

    #[test]
    fn both_pair_members_keep_their_own_bits() {
        let m = map();
        let v = labels_from_codes(["713427006", "59118001"], &m);
        assert!(v.get(m.index_of_abbreviation("CRBBB").unwrap()));
        assert!(v.get(m.index_of_abbreviation("RBBB").unwrap()));
        assert_eq!(v.count(), 2);
    }

    #[test]
    fn repeated_code_sets_bit_once() {
        let v = labels_from_codes(["164889003", "164889003"], &map());
        assert_eq!(v.count(), 1);
    }

    #[test]
    fn record_validation() {
        let names = vec!["I".to_string(), "II".to_string()];
        assert!(EcgRecord::new("r", vec![vec![0.0; 3], vec![0.0; 3]], names.clone(), 0).is_err());
        assert!(EcgRecord::new("r", vec![vec![0.0; 3], vec![0.0; 2]], names.clone(), 500).is_err());
        assert!(EcgRecord::new(
            "r",
            vec![vec![f64::NAN; 3], vec![0.0; 3]],
            names.clone(),
            500
        )
        .is_err());
        assert!(EcgRecord::new("r", vec![vec![], vec![]], names.clone(), 500).is_err());
        let dup = vec!["I".to_string(), "I".to_string()];
        assert!(EcgRecord::new("r", vec![vec![0.0; 3], vec![0.0; 3]], dup, 500).is_err());
        let ok = EcgRecord::new("r", vec![vec![0.0; 3], vec![1.0; 3]], names, 500).unwrap();
        assert_eq!(ok.n_samples(), 3);
        assert_eq!(ok.lead("II"), Some(&[1.0, 1.0, 1.0][..]));
    }
}
