//! Command-line driver: wires a JSON experiment config into the
//! pipeline stages and emits traces, checkpoints, CSVs and summaries.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use adfp_core::io::{save_checkpoint, write_token_lines, write_traces};
use adfp_core::report::{
    read_csv, rows_from_outcome, rows_from_outcomes, write_csv, write_manifest, write_summary,
    RunManifest, RunSummary, TrialRow,
};
use adfp_core::{
    build_eval_sets, derive_seed, median, partial_experiment, roc_experiment, run_stage1,
    run_stage3, sweep_strength, train_student, Error, ExperimentConfig, Result, World,
};

const VERSION: &str = env!("ADFP_BUILD_VERSION");

#[derive(Parser)]
#[command(name = "adfp", version = VERSION, about = "Fingerprinted generation and distillation detection harness")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Pretrain teacher and proxy, derive the key, emit checkpoints
    Prepare(CommonArgs),
    /// Generate fingerprinted, clean and evaluation corpora
    Generate(CommonArgs),
    /// Fine-tune a student on the configured data mixture
    Finetune(CommonArgs),
    /// Run detection on a freshly trained student, print the report
    Detect(CommonArgs),
    /// Sweep perturbation strengths under matched distortion budgets
    Sweep(CommonArgs),
    /// Vary the fingerprinted fraction of the fine-tuning mixture
    Partial(CommonArgs),
    /// Balanced detection study over fingerprinted and null runs
    Roc(CommonArgs),
    /// Aggregate result CSVs already in the output directory
    Report(CommonArgs),
}

impl Verb {
    fn parts(&self) -> (&'static str, &CommonArgs) {
        match self {
            Verb::Prepare(a) => ("prepare", a),
            Verb::Generate(a) => ("generate", a),
            Verb::Finetune(a) => ("finetune", a),
            Verb::Detect(a) => ("detect", a),
            Verb::Sweep(a) => ("sweep", a),
            Verb::Partial(a) => ("partial", a),
            Verb::Roc(a) => ("roc", a),
            Verb::Report(a) => ("report", a),
        }
    }
}

#[derive(Args)]
struct CommonArgs {
    /// JSON experiment configuration
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Directory receiving every artifact of this run
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// KEY=VALUE override applied on top of the config file
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(msg) = cap_threads() {
        eprintln!("adfp: {msg}");
        return ExitCode::from(1);
    }
    let (name, args) = cli.verb.parts();
    let cfg = match load_config(&args.config, &args.set) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("adfp: {e}");
            return ExitCode::from(1);
        }
    };
    match dispatch(name, &cfg, &args.out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("adfp: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}

/// Prints one line to stdout. A reader that hangs up early (report piped
/// into head) is not an error: the line is dropped and the run carries on
/// so summaries and manifests still land on disk.
fn emit(line: &str) -> Result<()> {
    let mut out = io::stdout().lock();
    match out.write_fmt(format_args!("{line}\n")) {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

/// ADFP_THREADS caps the worker pool before any parallel work starts.
fn cap_threads() -> std::result::Result<(), String> {
    let Ok(raw) = std::env::var("ADFP_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .map_err(|_| format!("ADFP_THREADS = {raw:?} is not a positive integer"))?;
    if n == 0 {
        return Err("ADFP_THREADS must be at least 1".into());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| format!("thread pool: {e}"))
}

fn load_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path).map_err(|e| Error::Config {
        field: "config".into(),
        message: format!("{}: {e}", path.display()),
    })?;
    for pair in overrides {
        let (key, value) = pair.split_once('=').ok_or_else(|| Error::Config {
            field: pair.clone(),
            message: "override must be KEY=VALUE".into(),
        })?;
        cfg.apply_override(key.trim(), value.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn dispatch(verb: &str, cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let artifacts = match verb {
        "prepare" => cmd_prepare(cfg, out)?,
        "generate" => cmd_generate(cfg, out)?,
        "finetune" => cmd_finetune(cfg, out)?,
        "detect" => cmd_detect(cfg, out)?,
        "sweep" => cmd_sweep(cfg, out)?,
        "partial" => cmd_partial(cfg, out)?,
        "roc" => cmd_roc(cfg, out)?,
        "report" => cmd_report(cfg, out)?,
        other => unreachable!("verb {other} rejected by the parser"),
    };
    write_manifest(
        out,
        &RunManifest {
            version: VERSION.into(),
            verb: verb.into(),
            config: cfg.clone(),
            artifacts,
        },
    )
}

fn summary(verb: &str, cfg: &ExperimentConfig, payload: serde_json::Value) -> RunSummary {
    RunSummary {
        version: VERSION.into(),
        verb: verb.into(),
        config: cfg.clone(),
        payload,
    }
}

/// Root seed for the single-run verbs; the batch experiments manage
/// their own per-trial roots.
fn run_root(cfg: &ExperimentConfig) -> u64 {
    derive_seed(cfg.seed, "run", 0)
}

fn cmd_prepare(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<String>> {
    let world = World::prepare(cfg.clone())?;
    save_checkpoint(&out.join("teacher.json"), &world.teacher)?;
    save_checkpoint(&out.join("proxy.json"), &world.proxy)?;
    write_token_lines(&out.join("prompts.jsonl"), &world.prompts)?;
    write_summary(
        &out.join("prepare_summary.json"),
        &summary(
            "prepare",
            cfg,
            json!({
                "key_id": world.key.id(),
                "teacher_vocab": world.tok_teacher.vocab_size(),
                "student_vocab": world.tok_student.vocab_size(),
                "prompts": world.prompts.len(),
            }),
        ),
    )?;
    Ok(vec![
        "teacher.json".into(),
        "proxy.json".into(),
        "prompts.jsonl".into(),
        "prepare_summary.json".into(),
    ])
}

fn cmd_generate(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<String>> {
    let world = World::prepare(cfg.clone())?;
    let sc = cfg.strength_config();
    let corpora = run_stage1(&world, &sc, world.key, run_root(cfg))?;
    write_traces(
        &out.join("traces_fingerprinted.jsonl"),
        &corpora.fingerprinted,
        Some(sc.method),
        sc.strength(),
        Some(world.key),
    )?;
    write_traces(
        &out.join("traces_unfingerprinted.jsonl"),
        &corpora.unfingerprinted,
        None,
        0.0,
        None,
    )?;
    write_traces(
        &out.join("traces_eval.jsonl"),
        &corpora.eval_source,
        Some(sc.method),
        sc.strength(),
        Some(world.key),
    )?;
    let (mut green, mut steps) = (0usize, 0usize);
    for t in &corpora.fingerprinted {
        for s in t.steps.as_deref().unwrap_or(&[]) {
            green += s.green as usize;
            steps += 1;
        }
    }
    write_summary(
        &out.join("generate_summary.json"),
        &summary(
            "generate",
            cfg,
            json!({
                "key_id": world.key.id(),
                "traces_per_corpus": corpora.fingerprinted.len(),
                "green_fraction": if steps == 0 { 0.0 } else { green as f64 / steps as f64 },
            }),
        ),
    )?;
    Ok(vec![
        "traces_fingerprinted.jsonl".into(),
        "traces_unfingerprinted.jsonl".into(),
        "traces_eval.jsonl".into(),
        "generate_summary.json".into(),
    ])
}

fn cmd_finetune(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<String>> {
    let world = World::prepare(cfg.clone())?;
    let sc = cfg.strength_config();
    let root = run_root(cfg);
    let corpora = run_stage1(&world, &sc, world.key, root)?;
    let (student, losses, mixture) = train_student(&world, cfg.alpha, root, &corpora)?;
    save_checkpoint(&out.join("student.json"), &student)?;
    write_summary(
        &out.join("finetune_summary.json"),
        &summary(
            "finetune",
            cfg,
            json!({
                "alpha": cfg.alpha,
                "mixture_traces": mixture.len(),
                "epoch_losses": losses,
            }),
        ),
    )?;
    Ok(vec!["student.json".into(), "finetune_summary.json".into()])
}

fn cmd_detect(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<String>> {
    let world = World::prepare(cfg.clone())?;
    let sc = cfg.strength_config();
    let root = run_root(cfg);
    let corpora = run_stage1(&world, &sc, world.key, root)?;
    let (student, _losses, mixture) = train_student(&world, cfg.alpha, root, &corpora)?;
    let eval_sets = build_eval_sets(&world, &corpora, &mixture)?;
    let (reports, tradeoff) = run_stage3(
        &world,
        &student,
        world.key,
        &eval_sets,
        &corpora,
        &sc,
        derive_seed(root, "detect", cfg.alpha as u64),
    )?;
    let configured = reports
        .iter()
        .find(|r| r.eval_mode == cfg.eval_mode && r.weight_mode == cfg.weight_mode)
        .expect("configured mode combination present");
    emit(&serde_json::to_string(&configured.report)?)?;
    write_summary(
        &out.join("detect_report.json"),
        &summary(
            "detect",
            cfg,
            json!({
                "configured": configured,
                "all_modes": reports,
                "tradeoff": tradeoff,
            }),
        ),
    )?;
    Ok(vec!["detect_report.json".into()])
}

fn cmd_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<String>> {
    let world = World::prepare(cfg.clone())?;
    let outcome = sweep_strength(&world)?;
    write_csv(&out.join("sweep.csv"), &rows_from_outcomes(&outcome.trials))?;
    write_summary(
        &out.join("sweep_summary.json"),
        &summary(
            "sweep",
            cfg,
            json!({
                "points": outcome.points,
                "budgets": outcome.budgets,
            }),
        ),
    )?;
    Ok(vec!["sweep.csv".into(), "sweep_summary.json".into()])
}

fn cmd_partial(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<String>> {
    let world = World::prepare(cfg.clone())?;
    let outcome = partial_experiment(&world)?;
    write_csv(
        &out.join("partial.csv"),
        &rows_from_outcomes(&outcome.trials),
    )?;
    write_summary(
        &out.join("partial_summary.json"),
        &summary("partial", cfg, json!({ "medians": outcome.medians })),
    )?;
    Ok(vec!["partial.csv".into(), "partial_summary.json".into()])
}

fn cmd_roc(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<String>> {
    let world = World::prepare(cfg.clone())?;
    let outcome = roc_experiment(&world)?;
    let mut rows = Vec::new();
    for o in outcome.positives.iter().chain(&outcome.negatives) {
        rows.extend(rows_from_outcome(o));
    }
    write_csv(&out.join("roc.csv"), &rows)?;
    write_summary(
        &out.join("roc_summary.json"),
        &summary(
            "roc",
            cfg,
            json!({
                "auc": outcome.roc.auc,
                "points": outcome.roc.points,
                "thresholds": outcome.roc.thresholds,
                "fpr_table": outcome.fpr_table,
            }),
        ),
    )?;
    Ok(vec!["roc.csv".into(), "roc_summary.json".into()])
}

/// Groups rows by (method, strength, alpha, mode) and reports medians.
fn aggregate(rows: &[TrialRow]) -> Vec<serde_json::Value> {
    let mut keys: Vec<(String, f64, u32, String)> = rows
        .iter()
        .map(|r| (r.method.clone(), r.strength, r.alpha, r.mode.clone()))
        .collect();
    keys.sort_by(|a, b| {
        a.0.cmp(&b.0)
            .then(a.1.total_cmp(&b.1))
            .then(a.2.cmp(&b.2))
            .then(a.3.cmp(&b.3))
    });
    keys.dedup();
    keys.iter()
        .map(|(method, strength, alpha, mode)| {
            let group: Vec<&TrialRow> = rows
                .iter()
                .filter(|r| {
                    r.method == *method
                        && r.strength == *strength
                        && r.alpha == *alpha
                        && r.mode == *mode
                })
                .collect();
            let pick = |f: &dyn Fn(&TrialRow) -> f64| {
                median(&group.iter().map(|r| f(r)).collect::<Vec<_>>())
            };
            json!({
                "method": method,
                "strength": strength,
                "alpha": alpha,
                "mode": mode,
                "trials": group.len(),
                "median_log10_p": pick(&|r| r.log10_p),
                "median_quality_nll": pick(&|r| r.quality_nll),
                "median_kl_per_step": pick(&|r| r.kl_per_step),
            })
        })
        .collect()
}

fn cmd_report(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<String>> {
    let mut tables = serde_json::Map::new();
    for name in ["sweep.csv", "partial.csv", "roc.csv"] {
        let path = out.join(name);
        if !path.exists() {
            continue;
        }
        let rows = read_csv(&path)?;
        let groups = aggregate(&rows);
        emit(&format!("{name} ({} rows)", rows.len()))?;
        emit("  method strength alpha mode median_log10_p trials")?;
        for g in &groups {
            emit(&format!(
                "  {} {} {} {} {:.4} {}",
                g["method"].as_str().unwrap_or("?"),
                g["strength"],
                g["alpha"],
                g["mode"].as_str().unwrap_or("?"),
                g["median_log10_p"].as_f64().unwrap_or(f64::NAN),
                g["trials"],
            ))?;
        }
        tables.insert(name.into(), serde_json::Value::Array(groups));
    }
    if tables.is_empty() {
        return Err(Error::Config {
            field: "out".into(),
            message: "no result CSVs found to report on".into(),
        });
    }
    write_summary(
        &out.join("report_summary.json"),
        &summary("report", cfg, serde_json::Value::Object(tables)),
    )?;
    Ok(vec!["report_summary.json".into()])
}
