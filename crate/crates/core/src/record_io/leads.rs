//! Limb-lead arithmetic (Einthoven and Goldberger identities).

use super::record::EcgRecord;
use crate::error::{Error, Result};

pub const STANDARD_LEADS: [&str; 12] = [
    "I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6",
];
pub const DERIVED_LEADS: [&str; 4] = ["III", "aVR", "aVL", "aVF"];
pub const TRAINING_LEADS: [&str; 8] = ["I", "II", "V1", "V2", "V3", "V4", "V5", "V6"];

/// Computes III, aVR, aVL and aVF from leads I and II, sample by sample.
pub fn limb_leads(lead_i: &[f64], lead_ii: &[f64]) -> [Vec<f64>; 4] {
    let zip = || lead_i.iter().zip(lead_ii);
    [
        zip().map(|(i, ii)| ii - i).collect(),
        zip().map(|(i, ii)| -(i + ii) / 2.0).collect(),
        zip().map(|(i, ii)| i - ii / 2.0).collect(),
        zip().map(|(i, ii)| ii - i / 2.0).collect(),
    ]
}

/// Returns the record with III, aVR, aVL and aVF set from leads I and II.
///
/// Existing derived leads are overwritten in place; missing ones are
/// inserted at their standard positions (after the last present lead that
/// precedes them in the standard order).
pub fn derive_limb_leads(record: &EcgRecord) -> Result<EcgRecord> {
    let lead_i = record
        .lead("I")
        .ok_or_else(|| Error::MissingLead("I".into()))?;
    let lead_ii = record
        .lead("II")
        .ok_or_else(|| Error::MissingLead("II".into()))?;
    let derived = limb_leads(lead_i, lead_ii);

    let mut names: Vec<String> = record.lead_names().to_vec();
    let mut signals: Vec<Vec<f64>> = record.signals().to_vec();
    for (name, values) in DERIVED_LEADS.iter().zip(derived) {
        if let Some(i) = names.iter().position(|n| n == name) {
            signals[i] = values;
            continue;
        }
        let rank = standard_rank(name);
        let pos = names
            .iter()
            .rposition(|n| standard_rank(n) < rank)
            .map_or(0, |p| p + 1);
        names.insert(pos, name.to_string());
        signals.insert(pos, values);
    }
    record.with_signals(signals, names, record.fs())
}

fn standard_rank(name: &str) -> usize {
    STANDARD_LEADS
        .iter()
        .position(|s| *s == name)
        .unwrap_or(usize::MAX)
}

/// Keeps the eight independent leads (I, II, V1..V6) in their current order.
pub fn select_training_leads(record: &EcgRecord) -> Result<EcgRecord> {
    for lead in TRAINING_LEADS {
        if record.lead_index(lead).is_none() {
            return Err(Error::MissingLead(lead.to_string()));
        }
    }
    let (names, signals): (Vec<String>, Vec<Vec<f64>>) = record
        .lead_names()
        .iter()
        .zip(record.signals())
        .filter(|(n, _)| TRAINING_LEADS.contains(&n.as_str()))
        .map(|(n, s)| (n.clone(), s.clone()))
        .unzip();
    record.with_signals(signals, names, record.fs())
}
