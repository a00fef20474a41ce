use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use psahara::envelope::{concave_envelope, concave_envelope_of, is_concave, EnvelopeResult};
use psahara::market::MarketModel;
use psahara::utility::{PiecewiseUtility, RawUtility};
use psahara::{PsaharaError, Result};
use serde::Serialize;
use serde_json::Value;

/// A utility file in any of the three accepted shapes.
pub enum UtilityFile {
    Raw(RawUtility),
    Piecewise(PiecewiseUtility),
    Envelope(EnvelopeResult),
}

impl UtilityFile {
    /// Concave envelope, building it when the file holds a raw or non-concave utility.
    pub fn into_envelope(self) -> Result<EnvelopeResult> {
        match self {
            UtilityFile::Raw(raw) => concave_envelope(&raw),
            UtilityFile::Piecewise(u) => concave_envelope_of(&u),
            UtilityFile::Envelope(e) => {
                if is_concave(&e.envelope).concave {
                    Ok(e)
                } else {
                    concave_envelope_of(&e.envelope)
                }
            }
        }
    }
}

pub fn open(path: &Path) -> Result<BufReader<File>> {
    let file = File::open(path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    Ok(BufReader::new(file))
}

pub fn read_json(path: &Path) -> Result<Value> {
    Ok(serde_json::from_reader(open(path)?)?)
}

pub fn read_utility(path: &Path) -> Result<UtilityFile> {
    let v = read_json(path)?;
    if v.get("segments").is_some() {
        Ok(UtilityFile::Raw(serde_json::from_value(v)?))
    } else if v.get("envelope").is_some() {
        Ok(UtilityFile::Envelope(serde_json::from_value(v)?))
    } else if v.get("pieces").is_some() {
        Ok(UtilityFile::Piecewise(serde_json::from_value(v)?))
    } else {
        Err(PsaharaError::InvalidUtility(format!(
            "{} has none of the keys segments, pieces, envelope",
            path.display()
        )))
    }
}

pub fn read_market(path: &Path) -> Result<MarketModel> {
    Ok(serde_json::from_value(read_json(path)?)?)
}

/// Writes `text` to `out`, or to stdout when no path is given.
pub fn emit(out: Option<&PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
        }
    }
    Ok(())
}

pub fn emit_json<T: Serialize>(out: Option<&PathBuf>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    emit(out, &text)
}

/// Parses `k1=v1,k2=v2` into pairs.
pub fn key_values(s: &str) -> std::result::Result<Vec<(String, f64)>, String> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| format!("expected key=value, got {p:?}"))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| format!("{v:?} is not a number"))?;
            Ok((k.trim().to_string(), v))
        })
        .collect()
}
