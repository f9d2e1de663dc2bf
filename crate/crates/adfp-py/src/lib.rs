//! Python bindings: keyed green lists, logit perturbations, the
//! detection statistic and a single-run pipeline entry point.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use adfp_core::io::TraceLine;
use adfp_core::{
    build_eval_sets, derive_seed, run_stage1, run_stage3, train_student, Arch, DetectionReport,
    ExperimentConfig, HashKey, ProbVector, ToyLm as CoreLm, World,
};

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_arch(name: &str) -> PyResult<Arch> {
    match name {
        "linearsoftmax" => Ok(Arch::LinearSoftmax),
        "mlp" => Ok(Arch::Mlp),
        other => Err(err(format!(
            "unknown arch {other:?}: expected \"linearsoftmax\" or \"mlp\""
        ))),
    }
}

fn prob_vector(q: Vec<f64>) -> PyResult<ProbVector> {
    ProbVector::new(q).map_err(err)
}

/// splitmix64 finalizer underlying every keyed hash.
#[pyfunction]
fn mix64(x: u64) -> u64 {
    adfp_core::mix64(x)
}

/// Keyed digest of a context window.
#[pyfunction]
fn context_digest(window: Vec<u32>, key: u64) -> u64 {
    adfp_core::context_digest(&window, HashKey(key))
}

/// Sorted member tokens of the green list for one window.
#[pyfunction]
fn green_list(window: Vec<u32>, key: u64, gamma: f64, vocab_size: usize) -> PyResult<Vec<u32>> {
    Ok(adfp_core::green_list(&window, HashKey(key), gamma, vocab_size)
        .map_err(err)?
        .members()
        .to_vec())
}

/// floor(gamma * vocab) / vocab, the exact null mean of the test.
#[pyfunction]
fn realized_gamma(gamma: f64, vocab_size: usize) -> f64 {
    adfp_core::realized_gamma(gamma, vocab_size)
}

/// Tempered softmax over raw logits.
#[pyfunction]
fn softmax_temp(logits: Vec<f64>, tau: f64) -> PyResult<Vec<f64>> {
    Ok(adfp_core::softmax_temp(&logits, tau).map_err(err)?.into_vec())
}

/// Green mass of a distribution under one window's list.
#[pyfunction]
fn per_step_loss(q: Vec<f64>, window: Vec<u32>, key: u64, gamma: f64) -> PyResult<f64> {
    let q = prob_vector(q)?;
    let list = adfp_core::green_list(&window, HashKey(key), gamma, q.len()).map_err(err)?;
    adfp_core::per_step_loss(&q, &list).map_err(err)
}

/// Flat green-token boost direction (1 on members, 0 elsewhere).
#[pyfunction]
fn delta_rgl(window: Vec<u32>, key: u64, gamma: f64, vocab_size: usize) -> PyResult<Vec<f64>> {
    let list = adfp_core::green_list(&window, HashKey(key), gamma, vocab_size).map_err(err)?;
    Ok(adfp_core::delta_rgl(&list).scores)
}

/// Likelihood-weighted perturbation q_t (1{t green} - L); sums to zero.
#[pyfunction]
fn delta_ads(q: Vec<f64>, window: Vec<u32>, key: u64, gamma: f64) -> PyResult<Vec<f64>> {
    let q = prob_vector(q)?;
    let list = adfp_core::green_list(&window, HashKey(key), gamma, q.len()).map_err(err)?;
    Ok(adfp_core::delta_ads(&q, &list).map_err(err)?.scores)
}

/// One-sided Hoeffding p-value for an observed green fraction.
#[pyfunction]
fn p_value(g_obs: f64, n: usize, gamma: f64) -> PyResult<f64> {
    adfp_core::p_value(g_obs, n, gamma).map_err(err)
}

/// Natural-log p-value, stable far past float underflow.
#[pyfunction]
fn log_p_value(g_obs: f64, n: usize, gamma: f64) -> PyResult<f64> {
    adfp_core::log_p_value(g_obs, n, gamma).map_err(err)
}

/// Tiny autoregressive model over the last `context_order` tokens.
#[pyclass]
struct ToyLm {
    inner: CoreLm,
}

#[pymethods]
impl ToyLm {
    #[new]
    fn new(
        arch: &str,
        vocab_size: usize,
        context_order: usize,
        hidden: usize,
        seed: u64,
    ) -> PyResult<Self> {
        Ok(ToyLm {
            inner: CoreLm::new(parse_arch(arch)?, vocab_size, context_order, hidden, seed)
                .map_err(err)?,
        })
    }

    fn vocab_size(&self) -> usize {
        self.inner.vocab_size()
    }

    fn logits(&self, context: Vec<u32>) -> PyResult<Vec<f64>> {
        self.inner.logits(&context).map_err(err)
    }

    fn probs(&self, context: Vec<u32>) -> PyResult<Vec<f64>> {
        Ok(self.inner.probs(&context).map_err(err)?.into_vec())
    }
}

fn parse_config(config_json: &str) -> PyResult<ExperimentConfig> {
    let cfg: ExperimentConfig = serde_json::from_str(config_json).map_err(err)?;
    cfg.validate().map_err(err)?;
    Ok(cfg)
}

fn report_dict<'py>(py: Python<'py>, r: &DetectionReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("g_obs", r.g_obs)?;
    d.set_item("n", r.n)?;
    d.set_item("gamma", r.gamma)?;
    d.set_item("p_value", r.p_value)?;
    d.set_item("log10_p", r.log10_p)?;
    d.set_item("mode", r.mode.name())?;
    d.set_item("key_id", &r.key_id)?;
    Ok(d)
}

/// Generates the fingerprinted corpus for a JSON config and returns one
/// dict per trace: prompt, generated, green_flags.
#[pyfunction]
fn generate_traces(py: Python<'_>, config_json: &str) -> PyResult<Py<PyList>> {
    let cfg = parse_config(config_json)?;
    let world = World::prepare(cfg.clone()).map_err(err)?;
    let sc = cfg.strength_config();
    let root = derive_seed(cfg.seed, "run", 0);
    let corpora = run_stage1(&world, &sc, world.key, root).map_err(err)?;
    let out = PyList::empty(py);
    for t in &corpora.fingerprinted {
        let line = TraceLine::from_trace(t, Some(sc.method), sc.strength(), Some(world.key));
        let d = PyDict::new(py);
        d.set_item("prompt", line.prompt)?;
        d.set_item("generated", line.generated)?;
        d.set_item("green_flags", line.green_flags)?;
        out.append(d)?;
    }
    Ok(out.unbind())
}

/// Runs the full single-run pipeline (generate, mix, fine-tune, detect)
/// and returns the configured detection report as a dict.
#[pyfunction]
fn run_detect(py: Python<'_>, config_json: &str) -> PyResult<Py<PyDict>> {
    let cfg = parse_config(config_json)?;
    let world = World::prepare(cfg.clone()).map_err(err)?;
    let sc = cfg.strength_config();
    let root = derive_seed(cfg.seed, "run", 0);
    let corpora = run_stage1(&world, &sc, world.key, root).map_err(err)?;
    let (student, _losses, mixture) = train_student(&world, cfg.alpha, root, &corpora).map_err(err)?;
    let eval_sets = build_eval_sets(&world, &corpora, &mixture).map_err(err)?;
    let (reports, _tradeoff) = run_stage3(
        &world,
        &student,
        world.key,
        &eval_sets,
        &corpora,
        &sc,
        derive_seed(root, "detect", cfg.alpha as u64),
    )
    .map_err(err)?;
    let configured = reports
        .iter()
        .find(|r| r.eval_mode == cfg.eval_mode && r.weight_mode == cfg.weight_mode)
        .expect("configured mode combination present");
    Ok(report_dict(py, &configured.report)?.unbind())
}

#[pymodule]
fn adfp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(mix64, m)?)?;
    m.add_function(wrap_pyfunction!(context_digest, m)?)?;
    m.add_function(wrap_pyfunction!(green_list, m)?)?;
    m.add_function(wrap_pyfunction!(realized_gamma, m)?)?;
    m.add_function(wrap_pyfunction!(softmax_temp, m)?)?;
    m.add_function(wrap_pyfunction!(per_step_loss, m)?)?;
    m.add_function(wrap_pyfunction!(delta_rgl, m)?)?;
    m.add_function(wrap_pyfunction!(delta_ads, m)?)?;
    m.add_function(wrap_pyfunction!(p_value, m)?)?;
    m.add_function(wrap_pyfunction!(log_p_value, m)?)?;
    m.add_function(wrap_pyfunction!(generate_traces, m)?)?;
    m.add_function(wrap_pyfunction!(run_detect, m)?)?;
    m.add_class::<ToyLm>()?;
    Ok(())
}
