//! File formats: trace and corpus JSON-lines, evaluation datasets with a
//! metadata header, and JSON model checkpoints.

use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::detect::EvalDataset;
use crate::error::{Error, Result};
use crate::greenlist::HashKey;
use crate::model::{Arch, ToyLm};
use crate::perturb::Method;
use crate::tokenizer::TokenizerKind;
use crate::trace::Trace;

/// One serialized trace line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceLine {
    pub prompt: Vec<u32>,
    pub generated: Vec<u32>,
    /// 0/1 per generated token; empty when the trace was not
    /// fingerprinted (or predates the hash window).
    pub green_flags: Vec<u8>,
    pub method: Option<Method>,
    pub strength: f64,
    pub key_id: Option<String>,
}

impl TraceLine {
    pub fn from_trace(
        t: &Trace,
        method: Option<Method>,
        strength: f64,
        key: Option<HashKey>,
    ) -> Self {
        TraceLine {
            prompt: t.prompt.clone(),
            generated: t.generated.clone(),
            green_flags: t
                .steps
                .as_deref()
                .map(|steps| steps.iter().map(|s| s.green as u8).collect())
                .unwrap_or_default(),
            method,
            strength,
            key_id: key.map(|k| k.id()),
        }
    }
}

pub fn write_traces(
    path: &Path,
    traces: &[Trace],
    method: Option<Method>,
    strength: f64,
    key: Option<HashKey>,
) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for t in traces {
        serde_json::to_writer(&mut out, &TraceLine::from_trace(t, method, strength, key))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_traces(path: &Path) -> Result<Vec<TraceLine>> {
    let mut lines = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        lines.push(serde_json::from_str(&line)?);
    }
    Ok(lines)
}

/// Plain corpora: one JSON token-id array per line.
pub fn write_token_lines(path: &Path, rows: &[Vec<u32>]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for row in rows {
        serde_json::to_writer(&mut out, row)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_token_lines(path: &Path) -> Result<Vec<Vec<u32>>> {
    let mut rows = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line)?);
    }
    Ok(rows)
}

/// First line of an evaluation-dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalHeader {
    pub w: usize,
    /// Student vocabulary the contexts live in.
    pub vocab: usize,
    pub teacher_tokenizer: TokenizerKind,
    pub student_tokenizer: TokenizerKind,
}

pub fn write_eval_dataset(path: &Path, ds: &EvalDataset, header: &EvalHeader) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut out, header)?;
    out.write_all(b"\n")?;
    for ctx in ds.contexts() {
        serde_json::to_writer(&mut out, ctx)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_eval_dataset(path: &Path) -> Result<(EvalDataset, EvalHeader)> {
    let mut lines = BufReader::new(File::open(path)?).lines();
    let header: EvalHeader = match lines.next() {
        Some(line) => serde_json::from_str(&line?)?,
        None => return Err(Error::InvalidEvalSet("missing header line".into())),
    };
    let mut contexts = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        contexts.push(serde_json::from_str(&line)?);
    }
    Ok((EvalDataset::new(contexts, header.w)?, header))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    arch: Arch,
    vocab_size: usize,
    context_order: usize,
    hidden: usize,
    /// Named row-major parameter blocks, in the model's canonical order.
    params: Vec<(String, Vec<f64>)>,
}

pub fn save_checkpoint(path: &Path, model: &ToyLm) -> Result<()> {
    let file = CheckpointFile {
        version: 1,
        arch: model.arch(),
        vocab_size: model.vocab_size(),
        context_order: model.context_order(),
        hidden: model.hidden(),
        params: model
            .matrices()
            .into_iter()
            .map(|(name, block)| (name.to_string(), block.to_vec()))
            .collect(),
    };
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, &file)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ToyLm> {
    let file: CheckpointFile = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    if file.version != 1 {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {}",
            file.version
        )));
    }
    let probe = ToyLm::zeroed(file.arch, file.vocab_size, file.context_order, file.hidden)?;
    let expected: Vec<&'static str> = probe.matrices().iter().map(|(name, _)| *name).collect();
    let got: Vec<&str> = file.params.iter().map(|(name, _)| name.as_str()).collect();
    if expected != got {
        return Err(Error::Checkpoint(format!(
            "parameter blocks {got:?} do not match {expected:?} for {:?}",
            file.arch
        )));
    }
    let mut theta = Vec::with_capacity(probe.param_len());
    for (_, block) in &file.params {
        theta.extend_from_slice(block);
    }
    ToyLm::from_parts(file.arch, file.vocab_size, file.context_order, file.hidden, theta)
}
