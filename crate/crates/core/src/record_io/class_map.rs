//! The scored diagnosis classes and their equivalence groups.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

/// Number of scored classes.
pub const N_SCORED: usize = 27;
/// Number of categories after equivalent pairs are merged.
pub const N_MERGED: usize = 24;

/// SNOMED CT code of normal sinus rhythm, the default positive class.
pub const SINUS_RHYTHM_CODE: &str = "426783006";
/// SNOMED CT code of bradycardia, the class the rule-based veto acts on.
pub const BRADYCARDIA_CODE: &str = "426627000";

const DEFAULT_CLASS_MAP: &str = include_str!("../../assets/class_map.csv");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassEntry {
    pub code: String,
    pub abbreviation: String,
    pub group: u32,
}

/// Ordered table of the 27 scored classes.
///
/// Three pairs share an equivalence group and are merged for scoring, which
/// leaves 24 merged categories ordered by first appearance of their group.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMap {
    entries: Vec<ClassEntry>,
    by_code: HashMap<String, usize>,
    merged_of: Vec<usize>,
    merged_names: Vec<String>,
}

impl ClassMap {
    /// The table shipped with the crate.
    pub fn default_map() -> Self {
        Self::from_csv(DEFAULT_CLASS_MAP).expect("bundled class map is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }

    /// Parses `code,abbreviation,group` rows. A header row is optional.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(Error::parse(i + 1, "expected code,abbreviation,group"));
            }
            if i == 0 && fields[0].eq_ignore_ascii_case("code") {
                continue;
            }
            let group = fields[2]
                .parse::<u32>()
                .map_err(|_| Error::parse(i + 1, format!("bad group '{}'", fields[2])))?;
            entries.push(ClassEntry {
                code: fields[0].to_string(),
                abbreviation: fields[1].to_string(),
                group,
            });
        }
        Self::from_entries(entries)
    }

    pub fn from_entries(entries: Vec<ClassEntry>) -> Result<Self> {
        if entries.len() != N_SCORED {
            return Err(Error::Validation(format!(
                "class map must have {N_SCORED} entries, found {}",
                entries.len()
            )));
        }
        let mut by_code = HashMap::new();
        let mut abbrevs = std::collections::HashSet::new();
        for (i, e) in entries.iter().enumerate() {
            if by_code.insert(e.code.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate code {}", e.code)));
            }
            if !abbrevs.insert(e.abbreviation.clone()) {
                return Err(Error::Validation(format!(
                    "duplicate abbreviation {}",
                    e.abbreviation
                )));
            }
        }

        let mut group_slot: HashMap<u32, usize> = HashMap::new();
        let mut members: Vec<Vec<&str>> = Vec::new();
        let mut merged_of = Vec::with_capacity(N_SCORED);
        for e in &entries {
            let slot = *group_slot.entry(e.group).or_insert_with(|| {
                members.push(Vec::new());
                members.len() - 1
            });
            members[slot].push(&e.abbreviation);
            merged_of.push(slot);
        }
        let pairs = members.iter().filter(|m| m.len() == 2).count();
        if members.iter().any(|m| m.len() > 2) || pairs != 3 || members.len() != N_MERGED {
            return Err(Error::Validation(format!(
                "class map must have exactly 3 two-member groups and {N_MERGED} merged categories, found {pairs} pairs and {} categories",
                members.len()
            )));
        }
        let merged_names = members.iter().map(|m| m.join("|")).collect();
        let map = ClassMap {
            entries,
            by_code,
            merged_of,
            merged_names,
        };
        if map.index_of_code(SINUS_RHYTHM_CODE).is_none() {
            return Err(Error::Validation("class map lacks sinus rhythm".into()));
        }
        Ok(map)
    }

    pub fn entries(&self) -> &[ClassEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn index_of_code(&self, code: &str) -> Option<usize> {
        self.by_code.get(code).copied()
    }

    pub fn index_of_abbreviation(&self, abbreviation: &str) -> Option<usize> {
        self.entries
            .iter()
            .position(|e| e.abbreviation == abbreviation)
    }

    pub fn abbreviations(&self) -> Vec<&str> {
        self.entries
            .iter()
            .map(|e| e.abbreviation.as_str())
            .collect()
    }

    pub fn sinus_rhythm_index(&self) -> usize {
        self.index_of_code(SINUS_RHYTHM_CODE)
            .expect("validated at construction")
    }

    pub fn bradycardia_index(&self) -> Option<usize> {
        self.index_of_code(BRADYCARDIA_CODE)
    }

    /// Merged category of scored class `i`.
    pub fn merged_index(&self, i: usize) -> usize {
        self.merged_of[i]
    }

    /// `|`-joined abbreviations of each merged category.
    pub fn merged_names(&self) -> &[String] {
        &self.merged_names
    }
}

impl Default for ClassMap {
    fn default() -> Self {
        Self::default_map()
    }
}
