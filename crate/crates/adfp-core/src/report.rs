//! Result artifacts: long-format CSV rows (one per trial and mode
//! combination), the run summary JSON, and the per-directory manifest
//! that records provenance for everything a run emits.

use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::pipeline::TrialOutcome;

pub const CSV_HEADER: &str =
    "trial,method,strength,alpha,mode,n,g_obs,log10_p,quality_nll,kl_per_step";

/// One CSV row. Floats print in shortest round-trip form, so identical
/// results serialize to identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub trial: usize,
    pub method: String,
    pub strength: f64,
    pub alpha: u32,
    /// "{eval_mode}_{weight_mode}".
    pub mode: String,
    pub n: usize,
    pub g_obs: f64,
    pub log10_p: f64,
    pub quality_nll: f64,
    pub kl_per_step: f64,
}

impl TrialRow {
    fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.trial,
            self.method,
            self.strength,
            self.alpha,
            self.mode,
            self.n,
            self.g_obs,
            self.log10_p,
            self.quality_nll,
            self.kl_per_step
        )
    }
}

/// Expands a trial into four rows, one per mode combination.
pub fn rows_from_outcome(o: &TrialOutcome) -> Vec<TrialRow> {
    o.reports
        .iter()
        .map(|mr| TrialRow {
            trial: o.trial,
            method: o.method.name().to_string(),
            strength: o.strength,
            alpha: o.alpha,
            mode: format!("{}_{}", mr.eval_mode.name(), mr.weight_mode.name()),
            n: mr.report.n,
            g_obs: mr.report.g_obs,
            log10_p: mr.report.log10_p,
            quality_nll: o.quality_nll,
            kl_per_step: o.kl_per_step,
        })
        .collect()
}

pub fn rows_from_outcomes(outcomes: &[TrialOutcome]) -> Vec<TrialRow> {
    outcomes.iter().flat_map(rows_from_outcome).collect()
}

pub fn write_csv(path: &Path, rows: &[TrialRow]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(CSV_HEADER.as_bytes())?;
    out.write_all(b"\n")?;
    for row in rows {
        out.write_all(row.csv_line().as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<TrialRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let field = |j: usize| -> &str { f.get(j).copied().unwrap_or_default() };
        let parse_err = |what: &str| crate::error::Error::InvalidEvalSet(format!(
            "csv line {}: bad {what}",
            i + 1
        ));
        rows.push(TrialRow {
            trial: field(0).parse().map_err(|_| parse_err("trial"))?,
            method: field(1).to_string(),
            strength: field(2).parse().map_err(|_| parse_err("strength"))?,
            alpha: field(3).parse().map_err(|_| parse_err("alpha"))?,
            mode: field(4).to_string(),
            n: field(5).parse().map_err(|_| parse_err("n"))?,
            g_obs: field(6).parse().map_err(|_| parse_err("g_obs"))?,
            log10_p: field(7).parse().map_err(|_| parse_err("log10_p"))?,
            quality_nll: field(8).parse().map_err(|_| parse_err("quality_nll"))?,
            kl_per_step: field(9).parse().map_err(|_| parse_err("kl_per_step"))?,
        });
    }
    Ok(rows)
}

/// Summary artifact: resolved config and version plus a verb-specific
/// payload (sweep points, mixture medians, roc curve, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub version: String,
    pub verb: String,
    pub config: ExperimentConfig,
    pub payload: serde_json::Value,
}

pub fn write_summary(path: &Path, summary: &RunSummary) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, summary)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn read_summary(path: &Path) -> Result<RunSummary> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// Provenance record written next to every run's artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub verb: String,
    pub config: ExperimentConfig,
    /// File names (relative to the manifest) the run produced.
    pub artifacts: Vec<String>,
}

pub fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<()> {
    let mut out = BufWriter::new(File::create(dir.join("run_manifest.json"))?);
    serde_json::to_writer_pretty(&mut out, manifest)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest> {
    Ok(serde_json::from_str(&std::fs::read_to_string(
        dir.join("run_manifest.json"),
    )?)?)
}
