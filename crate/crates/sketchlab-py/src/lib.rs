//! Python bindings. Structured results cross the boundary as JSON strings.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use sketchlab::attack::{run_attack, verify_certificate, AttackConfig};
use sketchlab::dgauss::DiscreteGaussian1d;
use sketchlab::harddist::{calibrate, gen_hard_instance, verify_gap_event, HardFamily, Side};
use sketchlab::seed::SeedTree;
use sketchlab::sketch::{build_sketch, sketch_info, SketchSpec};

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_json<T: serde::Serialize>(v: &T) -> PyResult<String> {
    serde_json::to_string(v).map_err(err)
}

/// Normalizer `Σ_k exp(-k²/2σ²)`.
#[pyfunction]
pub fn normalizer(sigma2: f64) -> PyResult<f64> {
    sketchlab::dgauss::normalizer(sigma2).map_err(err)
}

/// Discrete Gaussian pmf at `k`.
#[pyfunction]
pub fn pmf_dgauss(k: i64, sigma2: f64) -> PyResult<f64> {
    sketchlab::dgauss::pmf_dgauss_1d(k, sigma2).map_err(err)
}

/// `count` seeded draws from the 1-D discrete Gaussian.
#[pyfunction]
pub fn sample_dgauss(sigma2: f64, count: usize, seed: u64) -> PyResult<Vec<i64>> {
    let d = DiscreteGaussian1d::new(sigma2).map_err(err)?;
    let mut rng = SeedTree::new(seed).rng();
    Ok((0..count).map(|_| d.sample(&mut rng)).collect())
}

/// Builds a sketch from a JSON spec and returns its summary as JSON.
#[pyfunction]
pub fn sketch_summary(spec_json: &str) -> PyResult<String> {
    let spec: SketchSpec = serde_json::from_str(spec_json).map_err(err)?;
    let oracle = build_sketch(&spec).map_err(err)?;
    to_json(&sketch_info(&spec, &oracle))
}

/// Runs the attack on the sketch of `spec_json` and returns the result, plus verification, as JSON.
#[pyfunction]
pub fn attack(spec_json: &str, config_json: &str, r_budget: usize, seed: u64) -> PyResult<String> {
    let spec: SketchSpec = serde_json::from_str(spec_json).map_err(err)?;
    let config: AttackConfig = serde_json::from_str(config_json).map_err(err)?;
    let oracle = build_sketch(&spec).map_err(err)?;
    let result = run_attack(&oracle, r_budget, &config, seed).map_err(err)?;
    let exploits = match &result.certificate {
        Some(c) => verify_certificate(&oracle, c, config.params, config.verification_trials, seed)
            .map(|v| v.exploits.len())
            .unwrap_or(0),
        None => 0,
    };
    to_json(&serde_json::json!({ "result": result, "exploits": exploits }))
}

/// Calibrates a desk-parameter family and returns one instance with its gap event as JSON.
#[pyfunction]
pub fn hard_instance(family: &str, side: &str, seed: u64) -> PyResult<String> {
    let side = match side {
        "d1" => Side::D1,
        "d2" => Side::D2,
        other => return Err(PyValueError::new_err(format!("side must be d1 or d2, got {other}"))),
    };
    let cal = calibrate(&HardFamily::desk(family).map_err(err)?, seed).map_err(err)?;
    let inst = gen_hard_instance(&cal, side, seed).map_err(err)?;
    let event = verify_gap_event(&cal, &inst).map_err(err)?;
    to_json(&serde_json::json!({ "instance": inst, "event": event }))
}

/// Runs one acceptance criterion; returns `(pass, detail)`.
#[pyfunction]
pub fn run_criterion(id: u8, seed: u64) -> PyResult<(bool, String)> {
    let o = sketchlab::suite::run_criterion(id, seed).map_err(err)?;
    Ok((o.pass, o.detail))
}

#[pymodule]
fn sketchlab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(normalizer, m)?)?;
    m.add_function(wrap_pyfunction!(pmf_dgauss, m)?)?;
    m.add_function(wrap_pyfunction!(sample_dgauss, m)?)?;
    m.add_function(wrap_pyfunction!(sketch_summary, m)?)?;
    m.add_function(wrap_pyfunction!(attack, m)?)?;
    m.add_function(wrap_pyfunction!(hard_instance, m)?)?;
    m.add_function(wrap_pyfunction!(run_criterion, m)?)?;
    Ok(())
}
