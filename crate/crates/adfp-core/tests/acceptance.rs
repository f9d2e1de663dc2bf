//! The acceptance gate. Ten criteria, each printed as one pass/fail
//! line; the process exits nonzero if any fails. Tolerances are pinned
//! as constants next to each criterion.
//!
//! This target runs without the libtest harness so the lines always
//! appear in plain `cargo test` output.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::OnceLock;
use std::time::Instant;

use adfp_core::config::ExperimentConfig;
use adfp_core::detect::{gtp_closed, gtp_open, EvalMode, WeightMode};
use adfp_core::greenlist::{realized_gamma, GreenList, HashKey};
use adfp_core::model::{Arch, ToyLm};
use adfp_core::perturb::{delta_ads, delta_ads_exact, gram_matrix, per_step_loss};
use adfp_core::pipeline::{
    build_eval_sets, median, null_trials, partial_experiment, reencode, run_stage1, run_stage2,
    sweep_strength, SweepOutcome, World,
};
use adfp_core::report::{rows_from_outcomes, write_csv};
use adfp_core::sampling::softmax_temp;
use adfp_core::seeds::derive_seed;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let criteria: Vec<(&str, fn() -> String)> = vec![
        ("01 gradient identity", criterion_01_gradient_identity),
        ("02 gram matrix exactness", criterion_02_gram_exactness),
        ("03 oracle equivalence", criterion_03_oracle_equivalence),
        ("04 null calibration", criterion_04_null_calibration),
        ("05 conservative p-value", criterion_05_conservative_p),
        ("06 transfer effect", criterion_06_transfer_effect),
        ("07 pareto direction", criterion_07_pareto_direction),
        ("08 partial-fraction trend", criterion_08_partial_trend),
        ("09 supervised strength", criterion_09_supervised_strength),
        ("10 determinism", criterion_10_determinism),
    ];
    // development hook: ADFP_ACCEPT_ONLY=01,07 runs a subset
    let only: Vec<String> = std::env::var("ADFP_ACCEPT_ONLY")
        .map(|v| v.split(',').map(|s| s.trim().to_string()).collect())
        .unwrap_or_default();
    let mut failures = 0;
    for (name, run) in criteria {
        if !only.is_empty() && !only.iter().any(|o| name.starts_with(o.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run));
        let elapsed = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {name}: PASS ({elapsed:.1} s) {detail}"),
            Err(cause) => {
                failures += 1;
                let msg = cause
                    .downcast_ref::<String>()
                    .map(String::as_str)
                    .or_else(|| cause.downcast_ref::<&str>().copied())
                    .unwrap_or("panic");
                println!("criterion {name}: FAIL ({elapsed:.1} s) {msg}");
            }
        }
    }
    if failures > 0 {
        println!("acceptance: {failures} criterion(s) failed");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}

/// Criterion 1: the likelihood-weighted score equals the finite
/// difference of the per-step green loss with respect to the logits.
const C1_CASES: usize = 100;
const C1_VOCAB: usize = 16;
const C1_TOL_ABS: f64 = 1e-6;
const C1_BUDGET_S: f64 = 1.0;

fn criterion_01_gradient_identity() -> String {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..C1_CASES {
        let z: Vec<f64> = (0..C1_VOCAB).map(|_| rng.random_range(-4.0..4.0)).collect();
        let size = rng.random_range(1..C1_VOCAB);
        let mut members: Vec<u32> = (0..C1_VOCAB as u32).collect();
        for i in (1..members.len()).rev() {
            members.swap(i, rng.random_range(0..i + 1));
        }
        members.truncate(size);
        members.sort_unstable();
        let list = GreenList::from_members(members, C1_VOCAB).unwrap();
        let q = softmax_temp(&z, 1.0).unwrap();
        let scores = delta_ads(&q, &list).unwrap().scores;
        let h = 1e-5;
        for i in 0..C1_VOCAB {
            let mut z_hi = z.clone();
            z_hi[i] += h;
            let mut z_lo = z.clone();
            z_lo[i] -= h;
            let l_hi = per_step_loss(&softmax_temp(&z_hi, 1.0).unwrap(), &list).unwrap();
            let l_lo = per_step_loss(&softmax_temp(&z_lo, 1.0).unwrap(), &list).unwrap();
            let fd = (l_hi - l_lo) / (2.0 * h);
            worst = worst.max((scores[i] - fd).abs());
        }
    }
    assert!(
        worst <= C1_TOL_ABS,
        "worst |score - finite difference| = {worst:e}"
    );
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < C1_BUDGET_S, "took {elapsed:.2} s");
    format!("worst abs err {worst:.2e} over {C1_CASES} cases")
}

/// Criterion 2: for linear-softmax models the parameter-space Gram
/// matrix is exactly (context_order + 1) times the identity.
const C2_CONTEXTS: usize = 50;
const C2_TOL_REL_FRO: f64 = 1e-9;
const C2_BUDGET_S: f64 = 5.0;

fn criterion_02_gram_exactness() -> String {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let vocab = 16;
    let mut worst: f64 = 0.0;
    for case in 0..C2_CONTEXTS {
        let order = 1 + case % 3;
        let mut proxy = ToyLm::new(Arch::LinearSoftmax, vocab, order, 0, case as u64).unwrap();
        // random biases too: the gram must not depend on the parameters
        let mut theta = proxy.params().to_vec();
        for v in &mut theta {
            *v += rng.random_range(-0.5..0.5);
        }
        proxy = ToyLm::from_parts(Arch::LinearSoftmax, vocab, order, 0, theta).unwrap();
        let ctx: Vec<u32> = (0..order + 2)
            .map(|_| rng.random_range(0..vocab as u32))
            .collect();
        let k = gram_matrix(&proxy, &ctx).unwrap();
        let c = (order + 1) as f64;
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..vocab {
            for j in 0..vocab {
                let expect = if i == j { c } else { 0.0 };
                num += (k[i][j] - expect) * (k[i][j] - expect);
                den += expect * expect;
            }
        }
        worst = worst.max((num / den).sqrt());
    }
    assert!(
        worst <= C2_TOL_REL_FRO,
        "worst relative Frobenius error {worst:e}"
    );
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < C2_BUDGET_S, "took {elapsed:.2} s");
    format!("worst rel Frobenius err {worst:.2e} over {C2_CONTEXTS} contexts")
}

/// Criterion 3: on linear-softmax models the exact parameter-space
/// score's pairwise differences equal (context_order + 1) times the
/// likelihood-weighted score's pairwise differences.
const C3_CASES: usize = 50;
const C3_TOL_REL: f64 = 1e-6;
const C3_BUDGET_S: f64 = 10.0;

fn criterion_03_oracle_equivalence() -> String {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let vocab = 16;
    let mut worst: f64 = 0.0;
    for case in 0..C3_CASES {
        let order = 1 + case % 3;
        let proxy = ToyLm::new(Arch::LinearSoftmax, vocab, order, 0, 900 + case as u64).unwrap();
        let ctx: Vec<u32> = (0..order)
            .map(|_| rng.random_range(0..vocab as u32))
            .collect();
        let list = adfp_core::green_list(
            &ctx[ctx.len().saturating_sub(2)..],
            HashKey(rng.random()),
            0.5,
            vocab,
        )
        .unwrap();
        let exact = delta_ads_exact(&proxy, &ctx, &list).unwrap().scores;
        let q = proxy.probs(&ctx).unwrap();
        let approx = delta_ads(&q, &list).unwrap().scores;
        let c = (order + 1) as f64;
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..vocab {
            for j in 0..vocab {
                let de = exact[i] - exact[j];
                let da = c * (approx[i] - approx[j]);
                num += (de - da) * (de - da);
                den += de * de;
            }
        }
        worst = worst.max((num / den.max(1e-300)).sqrt());
    }
    assert!(worst <= C3_TOL_REL, "worst relative error {worst:e}");
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < C3_BUDGET_S, "took {elapsed:.2} s");
    format!("worst pairwise rel err {worst:.2e} over {C3_CASES} cases")
}

/// Shared small world for criteria 4 and 5: modest sizes, strong default
/// fingerprinting, everything else at defaults.
fn small_cfg() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.seed = 1001;
    cfg.alphabet_size = 16;
    cfg.n_prompts = 64;
    cfg.prompt_len = 4;
    cfg.max_new_tokens = 24;
    cfg.teacher_hidden = 32;
    cfg.proxy_hidden = 32;
    cfg.student_hidden = 32;
    cfg.pretrain_traces = 128;
    cfg.pretrain_len = 32;
    cfg.pretrain_epochs = 2;
    cfg.eval_max_contexts = 512;
    cfg
}

fn small_world() -> &'static World {
    static WORLD: OnceLock<World> = OnceLock::new();
    WORLD.get_or_init(|| World::prepare(small_cfg()).expect("small world prepares"))
}

/// Criterion 4: a student trained only on clean data has mean green
/// probability equal to the realized green fraction across random keys,
/// in both query modes.
const C4_KEYS: usize = 500;
const C4_SIGMAS: f64 = 3.0;
const C4_BUDGET_S: f64 = 120.0;

fn criterion_04_null_calibration() -> String {
    let start = Instant::now();
    let world = small_world();
    let sc = world.cfg.strength_config();
    let corpora = run_stage1(world, &sc, world.key, derive_seed(world.cfg.seed, "c4", 0)).unwrap();
    let clean = reencode(
        &corpora.unfingerprinted,
        &world.tok_teacher,
        &world.tok_student,
    )
    .unwrap();
    let init = ToyLm::new(
        world.cfg.student_arch,
        world.tok_student.vocab_size(),
        world.cfg.context_order,
        world.cfg.student_hidden,
        derive_seed(world.cfg.seed, "c4-init", 0),
    )
    .unwrap();
    let (student, _) = run_stage2(&world.cfg, init, &clean, derive_seed(world.cfg.seed, "c4-train", 0)).unwrap();
    let ds = build_eval_sets(world, &corpora, &corpora.unfingerprinted)
        .unwrap()
        .unsupervised;
    let gamma_real = realized_gamma(world.cfg.gamma, world.tok_student.vocab_size());

    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut detail = String::new();
    for mode in [WeightMode::Open, WeightMode::Closed] {
        let values: Vec<f64> = (0..C4_KEYS)
            .map(|i| {
                let key = HashKey(rng.random());
                match mode {
                    WeightMode::Open => gtp_open(&student, &ds, key, world.cfg.gamma).unwrap(),
                    WeightMode::Closed => {
                        gtp_closed(&student, &ds, key, world.cfg.gamma, i as u64).unwrap()
                    }
                }
            })
            .collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (values.len() - 1) as f64;
        let sigma_mean = (var / values.len() as f64).sqrt();
        let dev = (mean - gamma_real).abs();
        assert!(
            dev <= C4_SIGMAS * sigma_mean,
            "{} mode: mean {mean:.5} vs {gamma_real:.5}, sigma {sigma_mean:.5}",
            mode.name()
        );
        detail.push_str(&format!(
            "{} mean {mean:.4} (target {gamma_real:.4}, sigma {sigma_mean:.4}); ",
            mode.name()
        ));
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < C4_BUDGET_S, "took {elapsed:.2} s");
    detail
}

/// Criterion 5: over repeated null pipelines, the empirical false
/// positive rate never exceeds the p-value threshold beyond Monte Carlo
/// noise.
const C5_TRIALS: usize = 200;
const C5_SIGMAS: f64 = 3.0;
const C5_BUDGET_S: f64 = 1800.0;

fn criterion_05_conservative_p() -> String {
    let start = Instant::now();
    let world = small_world();
    let nulls = null_trials(world, C5_TRIALS, "null").unwrap();
    let ps: Vec<f64> = nulls
        .iter()
        .map(|o| o.configured_report(&world.cfg).p_value)
        .collect();
    let mut thresholds = ps.clone();
    thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    thresholds.dedup();
    let n = ps.len() as f64;
    let mut worst_margin = f64::INFINITY;
    for &theta in &thresholds {
        let fpr = ps.iter().filter(|p| **p <= theta).count() as f64 / n;
        let sigma = (theta * (1.0 - theta) / n).sqrt();
        let bound = theta + C5_SIGMAS * sigma;
        worst_margin = worst_margin.min(bound - fpr);
        assert!(
            fpr <= bound,
            "threshold {theta:.4}: fpr {fpr:.4} exceeds bound {bound:.4}"
        );
    }
    let min_p = thresholds.first().copied().unwrap_or(1.0);
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < C5_BUDGET_S, "took {elapsed:.2} s");
    format!(
        "{} null trials, {} thresholds, min p {min_p:.3}, worst margin {worst_margin:.4}",
        C5_TRIALS,
        thresholds.len()
    )
}

/// Criterion 6: the full pipeline at saturating strength transfers the
/// fingerprint into the student.
const C6_TRIALS: usize = 10;
const C6_P_CUT: f64 = 1e-3;
const C6_MIN_HITS: usize = 8;
const C6_BUDGET_S: f64 = 1200.0;

fn criterion_06_transfer_effect() -> String {
    let start = Instant::now();
    let mut cfg = ExperimentConfig::default();
    cfg.seed = 6001;
    cfg.trials = C6_TRIALS;
    // pinned by the criterion: vocab 64, 512 prompts, 64 new tokens,
    // one fine-tuning epoch; strength stays at the saturating default
    assert_eq!(cfg.alphabet_size, 64);
    assert_eq!(cfg.n_prompts, 512);
    assert_eq!(cfg.max_new_tokens, 64);
    assert_eq!(cfg.student_epochs, 1);
    let world = World::prepare(cfg).unwrap();
    let sc = world.cfg.strength_config();
    let mut hits = 0;
    let mut ps = Vec::new();
    for t in 0..C6_TRIALS {
        let outcome = adfp_core::pipeline::run_trial(
            &world,
            &sc,
            100,
            t,
            HashKey(derive_seed(world.cfg.seed, "trial-key", t as u64)),
            derive_seed(world.cfg.seed, "trial", t as u64),
        )
        .unwrap();
        let p = outcome
            .report(EvalMode::Unsupervised, WeightMode::Open)
            .p_value;
        hits += (p < C6_P_CUT) as usize;
        ps.push(p);
    }
    assert!(
        hits >= C6_MIN_HITS,
        "only {hits}/{C6_TRIALS} trials below {C6_P_CUT:e}: {ps:?}"
    );
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < C6_BUDGET_S, "took {elapsed:.2} s");
    let log10s: Vec<f64> = ps.iter().map(|p| p.log10().round()).collect();
    format!("{hits}/{C6_TRIALS} trials with p < {C6_P_CUT:e}; log10 p per trial {log10s:?}")
}

/// Shared sweep for criteria 7 and 9.
const SWEEP_TRIALS: usize = 10;
const SWEEP_BUDGET_S: f64 = 7200.0;

fn sweep_cfg() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.seed = 7001;
    cfg.alphabet_size = 64;
    cfg.n_prompts = 192;
    cfg.prompt_len = 6;
    cfg.max_new_tokens = 48;
    cfg.teacher_hidden = 48;
    cfg.proxy_hidden = 48;
    cfg.student_hidden = 64;
    cfg.student_epochs = 2;
    cfg.pretrain_traces = 192;
    cfg.pretrain_len = 48;
    cfg.pretrain_epochs = 3;
    cfg.eval_max_contexts = 4096;
    cfg.trials = SWEEP_TRIALS;
    cfg.kl_pilot_traces = 24;
    cfg
}

fn shared_sweep() -> &'static (ExperimentConfig, SweepOutcome) {
    static SWEEP: OnceLock<(ExperimentConfig, SweepOutcome)> = OnceLock::new();
    SWEEP.get_or_init(|| {
        let cfg = sweep_cfg();
        let world = World::prepare(cfg.clone()).expect("sweep world prepares");
        let outcome = sweep_strength(&world).expect("sweep runs");
        (cfg, outcome)
    })
}

/// Criterion 7: at every KL-matched budget the likelihood-weighted
/// method detects at least as strongly as the flat boost, strictly
/// better at two or more budgets.
const C7_MIN_STRICT: usize = 2;

fn criterion_07_pareto_direction() -> String {
    let start = Instant::now();
    let (cfg, sweep) = shared_sweep();
    let mut strict = 0;
    let mut detail = String::new();
    for (gi, &delta) in cfg.delta_grid.iter().enumerate() {
        let rgl = &sweep.points[2 * gi];
        let ads = &sweep.points[2 * gi + 1];
        assert_eq!(rgl.method, adfp_core::Method::Rgl);
        assert_eq!(ads.method, adfp_core::Method::Ads);
        detail.push_str(&format!(
            "d{delta}: rgl {:.2} ads {:.2}; ",
            rgl.log10_p, ads.log10_p
        ));
        assert!(
            ads.log10_p <= rgl.log10_p,
            "budget {delta}: ads median log10 p {} above rgl {}",
            ads.log10_p,
            rgl.log10_p
        );
        strict += (ads.log10_p < rgl.log10_p) as usize;
    }
    assert!(
        strict >= C7_MIN_STRICT,
        "strict improvement at only {strict} budget(s): {detail}"
    );
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < SWEEP_BUDGET_S, "took {elapsed:.2} s");
    format!("strict at {strict}/{} budgets; {detail}", cfg.delta_grid.len())
}

/// Criterion 8: detection weakens monotonically as the fingerprinted
/// fraction of the fine-tuning mixture shrinks.
const C8_BUDGET_S: f64 = 7200.0;

fn criterion_08_partial_trend() -> String {
    let start = Instant::now();
    let mut cfg = sweep_cfg();
    cfg.seed = 8001;
    assert!(cfg.trials >= 10);
    let world = World::prepare(cfg).unwrap();
    let outcome = partial_experiment(&world).unwrap();
    let detail: String = outcome
        .medians
        .iter()
        .map(|(a, m)| format!("a{a}: {m:.2}; "))
        .collect();
    for pair in outcome.medians.windows(2) {
        let ((a0, m0), (a1, m1)) = (pair[0], pair[1]);
        assert!(
            m1 <= m0,
            "median log10 p rose from {m0} (alpha {a0}) to {m1} (alpha {a1}): {detail}"
        );
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < C8_BUDGET_S, "took {elapsed:.2} s");
    detail
}

/// Criterion 9: the suspect's own fine-tuning data is at least as
/// strong an evaluation set as fresh generations.
fn criterion_09_supervised_strength() -> String {
    let start = Instant::now();
    let (cfg, sweep) = shared_sweep();
    let t = cfg.trials;
    let mut detail = String::new();
    for (ci, cell) in sweep.trials.chunks(t).enumerate() {
        let sup: Vec<f64> = cell
            .iter()
            .map(|o| o.report(EvalMode::Supervised, WeightMode::Open).log10_p)
            .collect();
        let unsup: Vec<f64> = cell
            .iter()
            .map(|o| o.report(EvalMode::Unsupervised, WeightMode::Open).log10_p)
            .collect();
        let (m_sup, m_unsup) = (median(&sup), median(&unsup));
        detail.push_str(&format!(
            "{:?} d{}: sup {m_sup:.3} unsup {m_unsup:.3}; ",
            cell[0].method, cfg.delta_grid[ci / 2]
        ));
    }
    let all_sup: Vec<f64> = sweep
        .trials
        .iter()
        .map(|o| o.report(EvalMode::Supervised, WeightMode::Open).log10_p)
        .collect();
    let all_unsup: Vec<f64> = sweep
        .trials
        .iter()
        .map(|o| o.report(EvalMode::Unsupervised, WeightMode::Open).log10_p)
        .collect();
    let (m_sup, m_unsup) = (median(&all_sup), median(&all_unsup));
    assert!(
        m_sup <= m_unsup,
        "median supervised log10 p {m_sup} above unsupervised {m_unsup}: {detail}"
    );
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < SWEEP_BUDGET_S, "took {elapsed:.2} s");
    format!("median log10 p supervised {m_sup:.3} vs unsupervised {m_unsup:.3}; {detail}")
}

/// Criterion 10: the same seed reproduces byte-identical CSV artifacts.
const C10_BUDGET_S: f64 = 120.0;

fn criterion_10_determinism() -> String {
    let start = Instant::now();
    let mut cfg = ExperimentConfig::default();
    cfg.seed = 10001;
    cfg.alphabet_size = 8;
    cfg.n_prompts = 16;
    cfg.prompt_len = 4;
    cfg.max_new_tokens = 8;
    cfg.teacher_hidden = 8;
    cfg.proxy_hidden = 8;
    cfg.student_hidden = 8;
    cfg.pretrain_traces = 32;
    cfg.pretrain_len = 16;
    cfg.pretrain_epochs = 1;
    cfg.trials = 2;
    cfg.alpha_grid = vec![0, 100];
    cfg.eval_max_contexts = 64;
    cfg.kl_pilot_traces = 4;
    let dir = tempfile::tempdir().unwrap();
    let mut paths = Vec::new();
    for run in 0..2 {
        let world = World::prepare(cfg.clone()).unwrap();
        let outcome = partial_experiment(&world).unwrap();
        let path = dir.path().join(format!("run{run}.csv"));
        write_csv(&path, &rows_from_outcomes(&outcome.trials)).unwrap();
        paths.push(path);
    }
    let a = std::fs::read(&paths[0]).unwrap();
    let b = std::fs::read(&paths[1]).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b, "re-run CSV bytes differ");
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < C10_BUDGET_S, "took {elapsed:.2} s");
    format!("{} identical bytes across runs", a.len())
}
