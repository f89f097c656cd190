//! On-disk record format.
//!
//! A record is a text header plus a signal file. Header grammar:
//!
//! ```text
//! <record_id> <n_leads> <fs> <n_samples>
//! <gain> <offset> <lead_name>        (one line per lead)
//! # Age: <years>
//! # Sex: <Male|Female|Unknown>
//! # Dx: <code>,<code>,...
//! # any other comment
//! ```
//!
//! The binary signal file holds little-endian `i16` samples interleaved by
//! sample (all leads of sample 0, then all leads of sample 1, ...). Samples
//! convert to millivolts as `(raw - offset) / gain`. The CSV fallback stores
//! millivolts directly, one column per lead, with an optional header row of
//! lead names.

use std::fs;
use std::path::{Path, PathBuf};

use super::record::{EcgRecord, LeadFormat, Sex};
use crate::error::{Error, Result};

#[derive(Debug)]
struct Header {
    record_id: String,
    fs: u32,
    n_samples: usize,
    leads: Vec<(LeadFormat, String)>,
    age: Option<u32>,
    sex: Option<Sex>,
    dx: Vec<String>,
    comments: Vec<String>,
}

fn parse_header(text: &str) -> Result<Header> {
    let mut record_line: Option<(usize, Vec<&str>)> = None;
    let mut n_leads = 0usize;
    let mut header = Header {
        record_id: String::new(),
        fs: 0,
        n_samples: 0,
        leads: Vec::new(),
        age: None,
        sex: None,
        dx: Vec::new(),
        comments: Vec::new(),
    };

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if let Some(comment) = line.trim_start().strip_prefix('#') {
            let body = comment.trim();
            if let Some(codes) = body.strip_prefix("Dx:") {
                header.dx.extend(
                    codes
                        .split(',')
                        .map(str::trim)
                        .filter(|c| !c.is_empty())
                        .map(String::from),
                );
            } else if let Some(age) = body.strip_prefix("Age:") {
                match age.trim().parse::<u32>() {
                    Ok(a) => header.age = Some(a),
                    Err(_) => header.comments.push(line.to_string()),
                }
            } else if let Some(sex) = body.strip_prefix("Sex:") {
                header.sex = Some(Sex::parse(sex));
            } else {
                header.comments.push(line.to_string());
            }
            continue;
        }

        let fields: Vec<&str> = line.split_whitespace().collect();
        if record_line.is_none() {
            if fields.len() != 4 {
                return Err(Error::parse(
                    lineno,
                    "record line must be '<record_id> <n_leads> <fs> <n_samples>'",
                ));
            }
            n_leads = fields[1]
                .parse()
                .map_err(|_| Error::parse(lineno, format!("bad lead count '{}'", fields[1])))?;
            let fs: i64 = fields[2].parse().map_err(|_| {
                Error::parse(lineno, format!("bad sampling frequency '{}'", fields[2]))
            })?;
            if fs <= 0 || fs > u32::MAX as i64 {
                return Err(Error::Validation(format!(
                    "sampling frequency must be positive, got {fs}"
                )));
            }
            header.fs = fs as u32;
            header.n_samples = fields[3]
                .parse()
                .map_err(|_| Error::parse(lineno, format!("bad sample count '{}'", fields[3])))?;
            header.record_id = fields[0].to_string();
            record_line = Some((lineno, fields));
            continue;
        }

        if header.leads.len() == n_leads {
            return Err(Error::parse(lineno, "more lead lines than declared"));
        }
        if fields.len() != 3 {
            return Err(Error::parse(
                lineno,
                "lead line must be '<gain> <offset> <lead_name>'",
            ));
        }
        let gain: f64 = fields[0]
            .parse()
            .map_err(|_| Error::parse(lineno, format!("bad gain '{}'", fields[0])))?;
        let offset: f64 = fields[1]
            .parse()
            .map_err(|_| Error::parse(lineno, format!("bad offset '{}'", fields[1])))?;
        if !(gain.is_finite() && gain > 0.0) || !offset.is_finite() {
            return Err(Error::parse(
                lineno,
                "gain must be positive and offset finite",
            ));
        }
        header
            .leads
            .push((LeadFormat { gain, offset }, fields[2].to_string()));
    }

    let Some((lineno, _)) = record_line else {
        return Err(Error::parse(1, "missing record line"));
    };
    if header.leads.len() != n_leads {
        return Err(Error::parse(
            lineno,
            format!(
                "declared {n_leads} leads but found {} lead lines",
                header.leads.len()
            ),
        ));
    }
    if header.n_samples == 0 {
        return Err(Error::Validation(
            "record must have at least one sample".into(),
        ));
    }
    Ok(header)
}

fn build(header: Header, signals: Vec<Vec<f64>>) -> Result<EcgRecord> {
    let (formats, names): (Vec<_>, Vec<_>) = header.leads.into_iter().unzip();
    Ok(
        EcgRecord::with_formats(header.record_id, signals, names, formats, header.fs)?
            .with_demographics(header.age, header.sex)
            .with_dx_codes(header.dx)
            .with_comments(header.comments),
    )
}

/// Parses a header and its binary `i16` signal block.
pub fn parse_record(header_text: &str, signal_bytes: &[u8]) -> Result<EcgRecord> {
    let header = parse_header(header_text)?;
    let n_leads = header.leads.len();
    let expected = n_leads * header.n_samples * 2;
    if signal_bytes.len() != expected {
        return Err(Error::Truncated {
            expected,
            actual: signal_bytes.len(),
        });
    }
    let mut signals = vec![Vec::with_capacity(header.n_samples); n_leads];
    for (k, pair) in signal_bytes.chunks_exact(2).enumerate() {
        let raw = i16::from_le_bytes([pair[0], pair[1]]) as f64;
        let lead = k % n_leads;
        let fmt = header.leads[lead].0;
        signals[lead].push((raw - fmt.offset) / fmt.gain);
    }
    build(header, signals)
}

/// Parses a header and a CSV block of millivolt samples.
pub fn parse_record_csv(header_text: &str, csv_text: &str) -> Result<EcgRecord> {
    let header = parse_header(header_text)?;
    let n_leads = header.leads.len();
    let mut signals = vec![Vec::with_capacity(header.n_samples); n_leads];
    let mut first = true;
    for (idx, raw) in csv_text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if first {
            first = false;
            if fields.first().is_some_and(|f| f.parse::<f64>().is_err()) {
                let names: Vec<&str> = header.leads.iter().map(|(_, n)| n.as_str()).collect();
                if fields != names {
                    return Err(Error::parse(
                        idx + 1,
                        "CSV header does not match lead names",
                    ));
                }
                continue;
            }
        }
        if fields.len() != n_leads {
            return Err(Error::parse(
                idx + 1,
                format!("expected {n_leads} columns, found {}", fields.len()),
            ));
        }
        for (lead, f) in fields.iter().enumerate() {
            let v: f64 = f
                .parse()
                .map_err(|_| Error::parse(idx + 1, format!("bad sample '{f}'")))?;
            signals[lead].push(v);
        }
    }
    let got = signals[0].len();
    if got != header.n_samples {
        return Err(Error::Validation(format!(
            "header declares {} samples but CSV holds {got}",
            header.n_samples
        )));
    }
    build(header, signals)
}

/// Renders the canonical header text of a record.
pub fn write_header(record: &EcgRecord) -> String {
    let mut out = format!(
        "{} {} {} {}\n",
        record.record_id(),
        record.n_leads(),
        record.fs(),
        record.n_samples()
    );
    for (fmt, name) in record.formats().iter().zip(record.lead_names()) {
        out.push_str(&format!("{} {} {}\n", fmt.gain, fmt.offset, name));
    }
    if let Some(age) = record.age() {
        out.push_str(&format!("# Age: {age}\n"));
    }
    if let Some(sex) = record.sex() {
        out.push_str(&format!("# Sex: {}\n", sex.as_str()));
    }
    if !record.dx_codes().is_empty() {
        let codes: Vec<&str> = record.dx_codes().iter().map(String::as_str).collect();
        out.push_str(&format!("# Dx: {}\n", codes.join(",")));
    }
    for c in record.comments() {
        out.push_str(c);
        out.push('\n');
    }
    out
}

/// Inverse of [`parse_record`]. Samples outside the `i16` range after
/// scaling are an error.
pub fn write_record(record: &EcgRecord) -> Result<(String, Vec<u8>)> {
    let n_leads = record.n_leads();
    let n = record.n_samples();
    let mut bytes = Vec::with_capacity(n_leads * n * 2);
    for t in 0..n {
        for (lead, fmt) in record.formats().iter().enumerate() {
            let raw = (record.signals()[lead][t] * fmt.gain + fmt.offset).round();
            if !(i16::MIN as f64..=i16::MAX as f64).contains(&raw) {
                return Err(Error::Validation(format!(
                    "sample {t} of lead {} overflows int16 at gain {}",
                    record.lead_names()[lead],
                    fmt.gain
                )));
            }
            bytes.extend_from_slice(&(raw as i16).to_le_bytes());
        }
    }
    Ok((write_header(record), bytes))
}

/// Renders the CSV fallback signal block (header row plus one row per sample).
pub fn write_record_csv(record: &EcgRecord) -> (String, String) {
    let mut csv = record.lead_names().join(",");
    csv.push('\n');
    for t in 0..record.n_samples() {
        let row: Vec<String> = record
            .signals()
            .iter()
            .map(|s| format!("{}", s[t]))
            .collect();
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    (write_header(record), csv)
}

fn stem_of(path: &Path) -> PathBuf {
    match path.extension().and_then(|e| e.to_str()) {
        Some("hea" | "dat" | "csv") => path.with_extension(""),
        _ => path.to_path_buf(),
    }
}

fn with_suffix(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_os_string();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// Loads `<stem>.hea` with `<stem>.dat`, falling back to `<stem>.csv`.
/// `path` may name the stem or any of the three files.
pub fn load_record(path: impl AsRef<Path>) -> Result<EcgRecord> {
    let stem = stem_of(path.as_ref());
    let header = fs::read_to_string(with_suffix(&stem, "hea"))?;
    let dat = with_suffix(&stem, "dat");
    if dat.exists() {
        parse_record(&header, &fs::read(dat)?)
    } else {
        parse_record_csv(&header, &fs::read_to_string(with_suffix(&stem, "csv"))?)
    }
}

/// Reads only the header of a record (signals are not loaded).
pub fn load_dx_codes(path: impl AsRef<Path>) -> Result<(String, Vec<String>)> {
    let stem = stem_of(path.as_ref());
    let header = parse_header(&fs::read_to_string(with_suffix(&stem, "hea"))?)?;
    Ok((header.record_id, header.dx))
}

/// Writes `<dir>/<record_id>.hea` and `.dat`; returns the stem path.
pub fn save_record(dir: impl AsRef<Path>, record: &EcgRecord) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let stem = dir.join(record.record_id());
    let (header, bytes) = write_record(record)?;
    fs::write(with_suffix(&stem, "hea"), header)?;
    fs::write(with_suffix(&stem, "dat"), bytes)?;
    Ok(stem)
}

/// Writes `<dir>/<record_id>.hea` and `.csv`; returns the stem path.
pub fn save_record_csv(dir: impl AsRef<Path>, record: &EcgRecord) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let stem = dir.join(record.record_id());
    let (header, csv) = write_record_csv(record);
    fs::write(with_suffix(&stem, "hea"), header)?;
    fs::write(with_suffix(&stem, "csv"), csv)?;
    Ok(stem)
}

/// Record stems (`*.hea` without extension) in a directory, sorted by name.
pub fn list_records(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let mut stems: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("hea"))
        .map(|p| p.with_extension(""))
        .collect();
    stems.sort();
    Ok(stems)
}
