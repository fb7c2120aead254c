//! Python bindings: configs travel as TOML, traces as CSV, workload specs and
//! reports as JSON, so the Python side needs nothing beyond the stdlib.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use zonesim_core::trace::{parse_trace, write_trace};
use zonesim_core::workload::{generate_workload, WorkloadSpec};
use zonesim_core::{emit_report, run_trace, ReportFormat, SimConfig, SimError};

fn err(e: SimError) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn config(toml: Option<&str>) -> PyResult<SimConfig> {
    match toml {
        Some(s) => SimConfig::from_toml_str(s).map_err(err),
        None => Ok(SimConfig::default()),
    }
}

/// The built-in configuration as TOML.
#[pyfunction]
fn default_config() -> String {
    SimConfig::default().to_toml_string()
}

/// Generates a workload trace (CSV) from a JSON spec such as
/// `{"kind": "SEQ_WRITE", "ns": 1, ...}`.
#[pyfunction]
#[pyo3(signature = (spec_json, config_toml=None))]
fn generate(spec_json: &str, config_toml: Option<&str>) -> PyResult<String> {
    let spec: WorkloadSpec = serde_json::from_str(spec_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let records = generate_workload(&spec, &config(config_toml)?).map_err(err)?;
    let mut out = Vec::new();
    write_trace(&records, &mut out).map_err(err)?;
    String::from_utf8(out).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Replays a CSV trace and returns the JSON report.
#[pyfunction]
#[pyo3(signature = (trace_csv, config_toml=None))]
fn run(py: Python<'_>, trace_csv: &str, config_toml: Option<&str>) -> PyResult<String> {
    let cfg = config(config_toml)?;
    let records = parse_trace(trace_csv.as_bytes()).map_err(err)?;
    let report = py.detach(|| run_trace(cfg, &records, false)).map_err(err)?.report;
    String::from_utf8(emit_report(&report, ReportFormat::Json)).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
fn zonesim(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
