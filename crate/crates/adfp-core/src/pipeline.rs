//! The three-stage experiment: fingerprinted generation, student
//! fine-tuning, and detection, plus the strength-sweep, partial-mixture,
//! and ROC studies built on top of it.

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::detect::{detect, DetectionReport, EvalDataset, EvalMode, WeightMode};
use crate::detect::build_eval_dataset;
use crate::error::{Error, Result};
use crate::greenlist::HashKey;
use crate::markov::MarkovSource;
use crate::model::ToyLm;
use crate::perturb::{generate_trace, step_distributions, Method, StrengthConfig};
use crate::sampling::kl_divergence;
use crate::seeds::derive_seed;
use crate::tokenizer::Tokenizer;
use crate::trace::Trace;

/// Everything the experiments share: tokenizers, the data source, the
/// pretrained teacher and proxy, the default key, and the prompt set.
#[derive(Debug, Clone)]
pub struct World {
    pub cfg: ExperimentConfig,
    pub tok_teacher: Tokenizer,
    pub tok_student: Tokenizer,
    pub source: MarkovSource,
    pub teacher: ToyLm,
    pub proxy: ToyLm,
    pub key: HashKey,
    /// Prompts in teacher tokens, shared by every corpus of a trial.
    pub prompts: Vec<Vec<u32>>,
}

impl World {
    /// Builds the world from a validated config: pretrains teacher and
    /// proxy on separate samples of the same synthetic source, derives
    /// the default key, and draws the prompt set.
    pub fn prepare(cfg: ExperimentConfig) -> Result<World> {
        cfg.validate()?;
        let tok_teacher = Tokenizer::unit(cfg.alphabet_size)?;
        let tok_student = Tokenizer::new(cfg.student_tokenizer, cfg.alphabet_size)?;
        let source = MarkovSource::random(
            cfg.alphabet_size,
            cfg.markov_order,
            cfg.markov_sharpness,
            derive_seed(cfg.seed, "source", 0),
        );

        let mut teacher = ToyLm::new(
            cfg.teacher_arch,
            tok_teacher.vocab_size(),
            cfg.context_order,
            cfg.teacher_hidden,
            derive_seed(cfg.seed, "teacher-init", 0),
        )?;
        let corpus = pretrain_corpus(&source, &tok_teacher, &cfg, "pretrain-teacher")?;
        teacher.train(&corpus, &cfg.pretrain_config(derive_seed(cfg.seed, "teacher-train", 0)))?;

        let mut proxy = ToyLm::new(
            cfg.proxy_arch,
            tok_teacher.vocab_size(),
            cfg.context_order,
            cfg.proxy_hidden,
            derive_seed(cfg.seed, "proxy-init", 0),
        )?;
        let corpus = pretrain_corpus(&source, &tok_teacher, &cfg, "pretrain-proxy")?;
        proxy.train(&corpus, &cfg.pretrain_config(derive_seed(cfg.seed, "proxy-train", 0)))?;

        let key = HashKey(derive_seed(cfg.seed, "key", 0));
        let prompts: Vec<Vec<u32>> = source
            .sequences(
                cfg.n_prompts,
                cfg.prompt_len,
                derive_seed(cfg.seed, "prompts", 0),
            )
            .iter()
            .map(|s| tok_teacher.encode(s))
            .collect::<Result<_>>()?;
        Ok(World {
            cfg,
            tok_teacher,
            tok_student,
            source,
            teacher,
            proxy,
            key,
            prompts,
        })
    }

    fn proxy_for(&self, sc: &StrengthConfig) -> Option<&ToyLm> {
        match sc.method {
            Method::Ads => Some(&self.proxy),
            Method::Rgl => None,
        }
    }
}

fn pretrain_corpus(
    source: &MarkovSource,
    tok: &Tokenizer,
    cfg: &ExperimentConfig,
    label: &str,
) -> Result<Vec<Trace>> {
    source
        .sequences(
            cfg.pretrain_traces,
            cfg.pretrain_len,
            derive_seed(cfg.seed, label, 0),
        )
        .iter()
        .map(|s| Ok(Trace::plain(vec![], tok.encode(s)?)))
        .collect()
}

/// Stage-1 output: the two training corpora plus the fresh fingerprinted
/// generations that unsupervised detection evaluates on.
#[derive(Debug, Clone)]
pub struct Corpora {
    pub fingerprinted: Vec<Trace>,
    pub unfingerprinted: Vec<Trace>,
    pub eval_source: Vec<Trace>,
}

/// Generates the fingerprinted and clean corpora over the same prompts,
/// and the evaluation corpus under a different stream of the same seed
/// discipline. `gen_root` isolates trials from one another.
pub fn run_stage1(
    world: &World,
    sc: &StrengthConfig,
    key: HashKey,
    gen_root: u64,
) -> Result<Corpora> {
    let gen = |label: &str, key: Option<HashKey>| -> Result<Vec<Trace>> {
        world
            .prompts
            .par_iter()
            .enumerate()
            .map(|(i, prompt)| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(gen_root, label, i as u64));
                generate_trace(
                    &world.teacher,
                    world.proxy_for(sc),
                    prompt,
                    key,
                    sc,
                    world.cfg.max_new_tokens,
                    &mut rng,
                )
            })
            .collect()
    };
    Ok(Corpora {
        fingerprinted: gen("gen-fp", Some(key))?,
        unfingerprinted: gen("gen-clean", None)?,
        eval_source: gen("gen-eval", Some(key))?,
    })
}

/// Per-trace Bernoulli(alpha/100) selection between the two corpora's
/// trace for each prompt; alignment by index is preserved.
pub fn mix_partial<R: Rng>(
    fingerprinted: &[Trace],
    unfingerprinted: &[Trace],
    alpha: u32,
    rng: &mut R,
) -> Result<Vec<Trace>> {
    if alpha > 100 {
        return Err(Error::Config {
            field: "alpha".into(),
            message: "is a percentage, at most 100".into(),
        });
    }
    if fingerprinted.len() != unfingerprinted.len() {
        return Err(Error::LengthMismatch {
            got: unfingerprinted.len(),
            want: fingerprinted.len(),
        });
    }
    let p = alpha as f64 / 100.0;
    Ok(fingerprinted
        .iter()
        .zip(unfingerprinted)
        .map(|(fp, clean)| {
            if rng.random::<f64>() < p {
                fp.clone()
            } else {
                clean.clone()
            }
        })
        .collect())
}

/// Re-expresses teacher-token traces in the student's vocabulary. The
/// whole sequence becomes training targets; positions keep left-padded
/// contexts, mirroring how the teacher was trained.
pub fn reencode(traces: &[Trace], from: &Tokenizer, to: &Tokenizer) -> Result<Vec<Trace>> {
    traces
        .iter()
        .map(|t| Ok(Trace::plain(vec![], to.encode(&from.decode(&t.full())?)?)))
        .collect()
}

/// Fine-tunes a fresh student on the mixture corpus; returns the model
/// and its per-epoch loss curve.
pub fn run_stage2(
    cfg: &ExperimentConfig,
    mut student: ToyLm,
    corpus: &[Trace],
    train_seed: u64,
) -> Result<(ToyLm, Vec<f64>)> {
    let losses = student.train(corpus, &cfg.student_config(train_seed))?;
    Ok((student, losses))
}

/// The detection datasets for both evaluation modes of one trial.
#[derive(Debug, Clone)]
pub struct EvalSets {
    pub unsupervised: EvalDataset,
    pub supervised: EvalDataset,
}

/// Builds both evaluation datasets: unsupervised from the fresh
/// fingerprinted generations, supervised from the student's own
/// fine-tuning mixture.
pub fn build_eval_sets(world: &World, corpora: &Corpora, mixture: &[Trace]) -> Result<EvalSets> {
    let build = |traces: &[Trace]| -> Result<EvalDataset> {
        let texts: Vec<Vec<u32>> = traces.iter().map(|t| t.full()).collect();
        Ok(
            build_eval_dataset(&texts, world.tok_teacher, world.tok_student, world.cfg.w)?
                .truncated(world.cfg.eval_max_contexts),
        )
    };
    Ok(EvalSets {
        unsupervised: build(&corpora.eval_source)?,
        supervised: build(mixture)?,
    })
}

/// One aggregate point on the strength-tradeoff curve: detection result
/// in the configured modes against the two costs of fingerprinting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub method: Method,
    pub strength: f64,
    pub log10_p: f64,
    /// NLL of the fingerprinted traces under the unfingerprinted teacher.
    pub quality_nll: f64,
    /// Mean KL(perturbed || base) per generation step.
    pub kl_per_step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub eval_mode: EvalMode,
    pub weight_mode: WeightMode,
    pub report: DetectionReport,
}

/// Everything one end-to-end trial produces: detection reports for all
/// four mode combinations plus the trial's quality and distortion costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub trial: usize,
    pub method: Method,
    pub strength: f64,
    pub alpha: u32,
    pub reports: Vec<ModeReport>,
    pub quality_nll: f64,
    pub kl_per_step: f64,
    /// Green fraction of the fingerprinted corpus's sampled tokens.
    pub green_fraction: f64,
}

impl TrialOutcome {
    pub fn report(&self, eval_mode: EvalMode, weight_mode: WeightMode) -> &DetectionReport {
        self.reports
            .iter()
            .find(|r| r.eval_mode == eval_mode && r.weight_mode == weight_mode)
            .map(|r| &r.report)
            .expect("all four mode combinations are always produced")
    }

    pub fn configured_report(&self, cfg: &ExperimentConfig) -> &DetectionReport {
        self.report(cfg.eval_mode, cfg.weight_mode)
    }
}

/// Evaluates a trained student: detection reports for all four mode
/// combinations plus the trial's tradeoff coordinates.
pub fn run_stage3(
    world: &World,
    student: &ToyLm,
    key: HashKey,
    eval_sets: &EvalSets,
    corpora: &Corpora,
    sc: &StrengthConfig,
    detect_root: u64,
) -> Result<(Vec<ModeReport>, TradeoffPoint)> {
    let mut reports = Vec::with_capacity(4);
    for (eval_mode, ds) in [
        (EvalMode::Unsupervised, &eval_sets.unsupervised),
        (EvalMode::Supervised, &eval_sets.supervised),
    ] {
        for weight_mode in [WeightMode::Open, WeightMode::Closed] {
            let seed = derive_seed(detect_root, eval_mode.name(), weight_mode as u64);
            reports.push(ModeReport {
                eval_mode,
                weight_mode,
                report: detect(student, ds, key, world.cfg.gamma, weight_mode, seed)?,
            });
        }
    }
    let quality_nll = world.teacher.nll(&corpora.fingerprinted)?;
    let (mut kl_sum, mut kl_n) = (0.0, 0usize);
    for t in &corpora.fingerprinted {
        for s in t.steps.as_deref().unwrap_or(&[]) {
            kl_sum += s.kl;
            kl_n += 1;
        }
    }
    let kl_per_step = if kl_n == 0 { 0.0 } else { kl_sum / kl_n as f64 };
    let configured = reports
        .iter()
        .find(|r| r.eval_mode == world.cfg.eval_mode && r.weight_mode == world.cfg.weight_mode)
        .expect("configured mode combination present");
    let tradeoff = TradeoffPoint {
        method: sc.method,
        strength: sc.strength(),
        log10_p: configured.report.log10_p,
        quality_nll,
        kl_per_step,
    };
    Ok((reports, tradeoff))
}

/// Runs one full trial: generate, mix, fine-tune, evaluate. Pure in
/// (world, sc, alpha, key, trial_root), so trial order never matters.
pub fn run_trial(
    world: &World,
    sc: &StrengthConfig,
    alpha: u32,
    trial: usize,
    key: HashKey,
    trial_root: u64,
) -> Result<TrialOutcome> {
    let corpora = run_stage1(world, sc, key, trial_root)?;
    trial_from_corpora(world, sc, alpha, trial, key, trial_root, &corpora)
}

/// Mixes the corpora at `alpha`, re-encodes for the student tokenizer
/// and fine-tunes a fresh student. Returns the student, its loss curve
/// and the mixture it saw.
pub fn train_student(
    world: &World,
    alpha: u32,
    trial_root: u64,
    corpora: &Corpora,
) -> Result<(ToyLm, Vec<f64>, Vec<Trace>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(trial_root, "mix", alpha as u64));
    let mixture = mix_partial(
        &corpora.fingerprinted,
        &corpora.unfingerprinted,
        alpha,
        &mut rng,
    )?;
    let student_corpus = reencode(&mixture, &world.tok_teacher, &world.tok_student)?;
    let init = ToyLm::new(
        world.cfg.student_arch,
        world.tok_student.vocab_size(),
        world.cfg.context_order,
        world.cfg.student_hidden,
        derive_seed(trial_root, "student-init", alpha as u64),
    )?;
    let (student, losses) = run_stage2(
        &world.cfg,
        init,
        &student_corpus,
        derive_seed(trial_root, "student-train", alpha as u64),
    )?;
    Ok((student, losses, mixture))
}

/// The post-generation half of a trial, reusable when several mixture
/// fractions share one corpus set.
pub fn trial_from_corpora(
    world: &World,
    sc: &StrengthConfig,
    alpha: u32,
    trial: usize,
    key: HashKey,
    trial_root: u64,
    corpora: &Corpora,
) -> Result<TrialOutcome> {
    let (student, _losses, mixture) = train_student(world, alpha, trial_root, corpora)?;
    let eval_sets = build_eval_sets(world, corpora, &mixture)?;
    let (reports, tradeoff) = run_stage3(
        world,
        &student,
        key,
        &eval_sets,
        corpora,
        sc,
        derive_seed(trial_root, "detect", alpha as u64),
    )?;
    let (mut green, mut steps) = (0usize, 0usize);
    for t in &corpora.fingerprinted {
        for s in t.steps.as_deref().unwrap_or(&[]) {
            green += s.green as usize;
            steps += 1;
        }
    }
    Ok(TrialOutcome {
        trial,
        method: sc.method,
        strength: sc.strength(),
        alpha,
        reports,
        quality_nll: tradeoff.quality_nll,
        kl_per_step: tradeoff.kl_per_step,
        green_fraction: if steps == 0 {
            0.0
        } else {
            green as f64 / steps as f64
        },
    })
}

fn trial_key(cfg: &ExperimentConfig, label: &str, trial: usize) -> HashKey {
    HashKey(derive_seed(cfg.seed, label, trial as u64))
}

fn trial_root(cfg: &ExperimentConfig, label: &str, trial: usize) -> u64 {
    derive_seed(cfg.seed, label, trial as u64)
}

pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty());
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    }
}

/// One grid point of the strength sweep: the rgl delta, the per-step KL
/// budget it spends at the pilot contexts, and the ads lambda calibrated
/// to the same budget (with the budget it actually reaches).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetPoint {
    pub grid_delta: f64,
    pub target_kl: f64,
    pub ads_lambda: f64,
    pub ads_kl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    /// Median tradeoff per (method, grid point), grid-major.
    pub points: Vec<TradeoffPoint>,
    pub budgets: Vec<BudgetPoint>,
    pub trials: Vec<TrialOutcome>,
}

/// Contexts at which calibration measures per-step KL: every sampling
/// position of a few clean teacher generations.
fn pilot_contexts(world: &World) -> Result<Vec<Vec<u32>>> {
    let sc = world.cfg.strength_config();
    let mut contexts = Vec::new();
    for i in 0..world.cfg.kl_pilot_traces {
        let prompt = &world.prompts[i % world.prompts.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(world.cfg.seed, "kl-pilot", i as u64));
        let t = generate_trace(
            &world.teacher,
            None,
            prompt,
            None,
            &StrengthConfig {
                method: Method::Rgl,
                delta: 0.0,
                lambda: 0.0,
                ..sc
            },
            world.cfg.max_new_tokens,
            &mut rng,
        )?;
        let full = t.full();
        for j in 0..t.generated.len() {
            let end = t.prompt.len() + j;
            if end >= world.cfg.w {
                contexts.push(full[..end].to_vec());
            }
        }
    }
    if contexts.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(contexts)
}

/// Teacher-forced mean KL(perturbed || base) over fixed contexts; the
/// distortion budget a strength setting spends.
pub fn mean_pilot_kl(
    world: &World,
    sc: &StrengthConfig,
    key: HashKey,
    contexts: &[Vec<u32>],
) -> Result<f64> {
    let terms: Vec<f64> = contexts
        .par_iter()
        .map(|ctx| {
            let step = step_distributions(&world.teacher, world.proxy_for(sc), ctx, Some(key), sc)?;
            kl_divergence(&step.perturbed, &step.base)
        })
        .collect::<Result<_>>()?;
    Ok(terms.iter().sum::<f64>() / terms.len() as f64)
}

/// Finds the ads lambda whose pilot KL matches `target` by bisection;
/// the pilot KL is nondecreasing in lambda. If even a huge lambda cannot
/// spend the target budget the search returns that cap.
fn calibrate_lambda(
    world: &World,
    template: &StrengthConfig,
    key: HashKey,
    contexts: &[Vec<u32>],
    target: f64,
) -> Result<(f64, f64)> {
    let kl_at = |lambda: f64| -> Result<f64> {
        mean_pilot_kl(world, &template.with_strength(lambda), key, contexts)
    };
    if target <= 0.0 {
        return Ok((0.0, kl_at(0.0)?));
    }
    let mut hi = 1.0;
    while kl_at(hi)? < target {
        hi *= 2.0;
        if hi > 1e9 {
            return Ok((hi, kl_at(hi)?));
        }
    }
    let mut lo = 0.0;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if kl_at(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((hi, kl_at(hi)?))
}

/// Sweeps the delta grid with both methods at matched per-step KL
/// budgets (paired trials share keys and streams), and aggregates
/// median tradeoff points per grid value and method.
pub fn sweep_strength(world: &World) -> Result<SweepOutcome> {
    let cfg = &world.cfg;
    let contexts = pilot_contexts(world)?;
    let rgl_template = StrengthConfig {
        method: Method::Rgl,
        ..cfg.strength_config()
    }
    .with_strength(0.0);
    let ads_template = StrengthConfig {
        method: Method::Ads,
        ..cfg.strength_config()
    }
    .with_strength(0.0);

    let mut budgets = Vec::new();
    let mut trials = Vec::new();
    let mut points = Vec::new();
    for &delta in &cfg.delta_grid {
        let sc_rgl = rgl_template.with_strength(delta);
        let target = mean_pilot_kl(world, &sc_rgl, world.key, &contexts)?;
        let (lambda, ads_kl) = if cfg.match_kl_budgets {
            calibrate_lambda(world, &ads_template, world.key, &contexts, target)?
        } else {
            let kl = mean_pilot_kl(world, &ads_template.with_strength(delta), world.key, &contexts)?;
            (delta, kl)
        };
        let sc_ads = ads_template.with_strength(lambda);
        budgets.push(BudgetPoint {
            grid_delta: delta,
            target_kl: target,
            ads_lambda: lambda,
            ads_kl,
        });

        for sc in [&sc_rgl, &sc_ads] {
            let mut grid_trials = Vec::with_capacity(cfg.trials);
            for t in 0..cfg.trials {
                grid_trials.push(run_trial(
                    world,
                    sc,
                    cfg.alpha,
                    t,
                    trial_key(cfg, "trial-key", t),
                    trial_root(cfg, "trial", t),
                )?);
            }
            let pick = |f: &dyn Fn(&TrialOutcome) -> f64| {
                median(&grid_trials.iter().map(|o| f(o)).collect::<Vec<_>>())
            };
            points.push(TradeoffPoint {
                method: sc.method,
                strength: sc.strength(),
                log10_p: pick(&|o| o.configured_report(cfg).log10_p),
                quality_nll: pick(&|o| o.quality_nll),
                kl_per_step: pick(&|o| o.kl_per_step),
            });
            trials.extend(grid_trials);
        }
    }
    Ok(SweepOutcome {
        points,
        budgets,
        trials,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialOutcome {
    /// (alpha, median log10 p in the configured modes), grid order.
    pub medians: Vec<(u32, f64)>,
    pub trials: Vec<TrialOutcome>,
}

/// Runs the mixture-fraction study: per trial one corpus set, one
/// student per alpha on the corresponding mixture.
pub fn partial_experiment(world: &World) -> Result<PartialOutcome> {
    let cfg = &world.cfg;
    let sc = cfg.strength_config();
    let mut trials = Vec::new();
    for t in 0..cfg.trials {
        let key = trial_key(cfg, "trial-key", t);
        let root = trial_root(cfg, "trial", t);
        let corpora = run_stage1(world, &sc, key, root)?;
        for &alpha in &cfg.alpha_grid {
            trials.push(trial_from_corpora(world, &sc, alpha, t, key, root, &corpora)?);
        }
    }
    let medians = cfg
        .alpha_grid
        .iter()
        .map(|&alpha| {
            let ps: Vec<f64> = trials
                .iter()
                .filter(|o| o.alpha == alpha)
                .map(|o| o.configured_report(cfg).log10_p)
                .collect();
            (alpha, median(&ps))
        })
        .collect();
    Ok(PartialOutcome { medians, trials })
}

/// Stepwise ROC over the detector's p-values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocResult {
    /// (fpr, tpr) per threshold, in threshold order.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
    /// Sorted unique p-values plus the interval bounds 0 and 1.
    pub thresholds: Vec<f64>,
}

/// Builds the ROC from p-value scores of the two classes; a trial is
/// flagged when its p-value is at most the threshold.
pub fn roc_from_scores(positive: &[f64], negative: &[f64]) -> Result<RocResult> {
    if positive.is_empty() || negative.is_empty() {
        return Err(Error::RocClasses(
            "both classes need at least one trial".into(),
        ));
    }
    let mut thresholds: Vec<f64> = positive
        .iter()
        .chain(negative)
        .copied()
        .chain([0.0, 1.0])
        .collect();
    thresholds.sort_by(|a, b| a.partial_cmp(b).expect("finite p-values"));
    thresholds.dedup();
    let rate = |scores: &[f64], theta: f64| {
        scores.iter().filter(|p| **p <= theta).count() as f64 / scores.len() as f64
    };
    let points: Vec<(f64, f64)> = thresholds
        .iter()
        .map(|&theta| (rate(negative, theta), rate(positive, theta)))
        .collect();
    let mut auc = 0.0;
    for pair in points.windows(2) {
        let ((f0, t0), (f1, t1)) = (pair[0], pair[1]);
        auc += (f1 - f0) * (t0 + t1) / 2.0;
    }
    Ok(RocResult {
        points,
        auc,
        thresholds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocOutcome {
    pub roc: RocResult,
    /// (threshold p-value, empirical fpr among null trials).
    pub fpr_table: Vec<(f64, f64)>,
    pub positives: Vec<TrialOutcome>,
    pub negatives: Vec<TrialOutcome>,
}

/// Null pipelines: fresh key per trial, student trained purely on
/// unfingerprinted data, detection run against that key.
pub fn null_trials(world: &World, count: usize, label: &str) -> Result<Vec<TrialOutcome>> {
    let sc = world.cfg.strength_config();
    (0..count)
        .map(|t| {
            run_trial(
                world,
                &sc,
                0,
                t,
                trial_key(&world.cfg, &format!("{label}-key"), t),
                trial_root(&world.cfg, label, t),
            )
        })
        .collect()
}

/// Balanced ROC study: `trials` fingerprinted and `trials` null
/// pipelines, each with a fresh random key.
pub fn roc_experiment(world: &World) -> Result<RocOutcome> {
    let cfg = &world.cfg;
    if cfg.trials < 20 {
        return Err(Error::Config {
            field: "trials".into(),
            message: format!("roc needs at least 20 trials per class, got {}", cfg.trials),
        });
    }
    let sc = cfg.strength_config();
    let alpha = if cfg.alpha == 0 { 100 } else { cfg.alpha };
    let positives: Vec<TrialOutcome> = (0..cfg.trials)
        .map(|t| {
            run_trial(
                world,
                &sc,
                alpha,
                t,
                trial_key(cfg, "roc-pos-key", t),
                trial_root(cfg, "roc-pos", t),
            )
        })
        .collect::<Result<_>>()?;
    let negatives = null_trials(world, cfg.trials, "roc-neg")?;
    let score = |o: &TrialOutcome| o.configured_report(cfg).p_value;
    let pos_scores: Vec<f64> = positives.iter().map(score).collect();
    let neg_scores: Vec<f64> = negatives.iter().map(score).collect();
    let roc = roc_from_scores(&pos_scores, &neg_scores)?;
    let mut fpr_table = Vec::with_capacity(roc.thresholds.len());
    for &theta in &roc.thresholds {
        let fpr = neg_scores.iter().filter(|p| **p <= theta).count() as f64
            / neg_scores.len() as f64;
        fpr_table.push((theta, fpr));
    }
    Ok(RocOutcome {
        roc,
        fpr_table,
        positives,
        negatives,
    })
}
