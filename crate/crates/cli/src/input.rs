//! Reading molecule files into featurized samples.

use std::path::{Path, PathBuf};

use geognn_core::mol::{parse_jsonl_records, parse_sdf_records};
use geognn_core::{FeatureConfig, Molecule, Sample};
use rayon::prelude::*;
use serde::Serialize;

use crate::failure::{io_error, CliResult, Failure};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Sdf,
    Jsonl,
}

fn format_of(path: &Path) -> CliResult<Format> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    match ext.as_str() {
        "sdf" | "sd" | "mol" => Ok(Format::Sdf),
        "jsonl" | "ndjson" | "json" => Ok(Format::Jsonl),
        _ => Err(Failure::usage(format!(
            "{}: unknown molecule format (expected .sdf, .sd, .mol, .jsonl or .ndjson)",
            path.display()
        ))),
    }
}

/// A record that could not be read or featurized.
#[derive(Debug, Clone, Serialize)]
pub struct Rejected {
    pub file: PathBuf,
    /// 1-based record number within the file.
    pub record: usize,
    pub message: String,
}

pub struct Loaded {
    pub samples: Vec<Sample>,
    pub rejected: Vec<Rejected>,
}

/// Checks that every input exists before any work starts.
pub fn check_inputs(paths: &[PathBuf]) -> CliResult<()> {
    if paths.is_empty() {
        return Err(Failure::usage("no --input files given"));
    }
    for p in paths {
        if !p.is_file() {
            return Err(Failure::usage(format!("input {} does not exist", p.display())));
        }
        format_of(p)?;
    }
    Ok(())
}

pub fn read_molecules(path: &Path) -> CliResult<Vec<(usize, geognn_core::Result<Molecule>)>> {
    let format = format_of(path)?;
    let bytes = std::fs::read(path).map_err(|e| io_error(path, e))?;
    let text = String::from_utf8(bytes).map_err(|e| Failure::data(format!("{}: not UTF-8 text: {e}", path.display())))?;
    let records = match format {
        Format::Sdf => parse_sdf_records(&text),
        Format::Jsonl => parse_jsonl_records(&text),
    };
    Ok(records.into_iter().enumerate().map(|(i, r)| (i + 1, r)).collect())
}

/// Parses and featurizes every record of every input, in order. With
/// `strict` the first bad record aborts; otherwise it is skipped and
/// reported.
pub fn load(paths: &[PathBuf], features: &FeatureConfig, strict: bool) -> CliResult<Loaded> {
    check_inputs(paths)?;
    let mut samples = Vec::new();
    let mut rejected = Vec::new();
    for path in paths {
        let records = read_molecules(path)?;
        let featurized: Vec<(usize, geognn_core::Result<Sample>)> = records
            .into_par_iter()
            .map(|(i, r)| (i, r.and_then(|m| Sample::new(m, features))))
            .collect();
        for (record, r) in featurized {
            match r {
                Ok(s) => samples.push(s),
                Err(e) => {
                    let failure = Failure::from(e).context(format!("{} record {record}", path.display()));
                    if strict {
                        return Err(failure);
                    }
                    log::warn!("skipping {failure}");
                    rejected.push(Rejected {
                        file: path.clone(),
                        record,
                        message: failure.message,
                    });
                }
            }
        }
    }
    Ok(Loaded { samples, rejected })
}
