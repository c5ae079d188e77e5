//! Python bindings for the distribution access auction.
//!
//! Structured inputs and outputs cross the boundary as JSON strings using the
//! same file formats as the command-line tool.

use access_auction::auction::{self, AuctionInstance, DsoCost, ResultFile};
use access_auction::dera::{self, DeraBids, DeraConfig, DeraPortfolio};
use access_auction::net_model::{self, BoundsOn, RadialNetwork, SensitivityOptions};
use access_auction::prosumer::{self, NemTariff, ProsumerParams, UtilityFn};
use access_auction::scenario::{self, ScenarioConfig, SweepParam};
use access_auction::Error;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

create_exception!(access_auction_py, InfeasibleError, PyException);

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Infeasible { .. } => InfeasibleError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(format!("json: {e}"))
}

fn from_json<T: serde::de::DeserializeOwned>(text: &str) -> PyResult<T> {
    serde_json::from_str(text).map_err(json_err)
}

fn to_json<T: serde::Serialize>(v: &T) -> PyResult<String> {
    serde_json::to_string(v).map_err(json_err)
}

fn options(voltage_dev: f64, bounds_on: &str) -> PyResult<SensitivityOptions> {
    let bounds_on = match bounds_on {
        "u" => BoundsOn::U,
        "v" => BoundsOn::V,
        other => return Err(PyValueError::new_err(format!("bounds_on must be 'u' or 'v', got {other:?}"))),
    };
    Ok(SensitivityOptions {
        voltage_dev,
        bounds_on,
        ..SensitivityOptions::default()
    })
}

/// Radial distribution feeder.
#[pyclass(name = "Network", frozen)]
struct PyNetwork {
    inner: RadialNetwork,
}

#[pymethods]
impl PyNetwork {
    #[staticmethod]
    #[pyo3(signature = (text, power_factor = 0.98))]
    fn from_matpower(text: &str, power_factor: f64) -> PyResult<Self> {
        let inner = net_model::parse_matpower_case(text, power_factor).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = RadialNetwork::from_json(text).map_err(py_err)?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn bus_count(&self) -> usize {
        self.inner.bus_count()
    }

    /// `(from_bus, to_bus, flow_limit_mw)` per line, child to parent.
    #[getter]
    fn lines(&self) -> Vec<(usize, usize, Option<f64>)> {
        self.inner.lines().iter().map(|l| (l.from_bus, l.to_bus, l.flow_limit_mw)).collect()
    }

    /// Indices into `lines` from `bus` up to the substation.
    fn root_path(&self, bus: usize) -> PyResult<Vec<usize>> {
        if bus == 0 || bus > self.inner.bus_count() {
            return Err(PyValueError::new_err(format!("bus {bus} out of range")));
        }
        Ok(self.inner.root_path(bus))
    }

    /// Row-major sensitivity matrix: line flows first, then squared voltages.
    #[pyo3(signature = (voltage_dev = 0.05, bounds_on = "u"))]
    fn sensitivity(&self, voltage_dev: f64, bounds_on: &str) -> PyResult<Vec<Vec<f64>>> {
        let b = net_model::build_sensitivity(&self.inner, &options(voltage_dev, bounds_on)?).map_err(py_err)?;
        let a = b.a_matrix();
        Ok((0..a.nrows()).map(|r| a.row(r).iter().copied().collect()).collect())
    }

    fn __repr__(&self) -> String {
        format!("Network(buses={}, lines={})", self.inner.bus_count(), self.inner.lines().len())
    }
}

/// Auction outcome with the same fields as the result file.
#[pyclass(name = "ClearingOutcome", frozen)]
struct PyOutcome {
    file: ResultFile,
}

#[pymethods]
impl PyOutcome {
    #[getter]
    fn social_surplus(&self) -> f64 {
        self.file.surplus
    }

    /// `(λ̄, λ̲)` per non-reference bus, $/MW.
    #[getter]
    fn prices(&self) -> Vec<(usize, f64, f64)> {
        self.file.per_bus.iter().map(|b| (b.bus, b.lambda_hi, b.lambda_lo)).collect()
    }

    /// `[(dera_id, [(bus, c_lo, c_hi), ...]), ...]`.
    #[getter]
    fn allocations(&self) -> Vec<(String, Vec<(usize, f64, f64)>)> {
        self.file
            .allocations()
            .into_iter()
            .map(|a| (a.id, a.per_bus.into_iter().map(|(bus, c)| (bus, c.c_lo, c.c_hi)).collect()))
            .collect()
    }

    #[getter]
    fn payments(&self) -> Vec<(String, f64)> {
        self.file.per_dera.iter().map(|d| (d.id.clone(), d.payment)).collect()
    }

    #[getter]
    fn certified(&self) -> Option<bool> {
        self.file.robust_certificate.as_ref().map(|c| c.passed())
    }

    fn to_json(&self) -> PyResult<String> {
        to_json(&self.file)
    }

    fn prices_csv(&self) -> String {
        self.file.prices_csv()
    }

    fn allocations_csv(&self) -> String {
        self.file.allocations_csv()
    }
}

/// Consumption a household chooses under net metering, kWh.
#[pyfunction]
#[pyo3(signature = (a_hat, b_hat, d_min, d_max, r, pi_plus = 0.06, pi_minus = 0.03, pi_zero = 0.0))]
#[allow(clippy::too_many_arguments)]
fn nem_consumption(a_hat: f64, b_hat: f64, d_min: f64, d_max: f64, r: f64, pi_plus: f64, pi_minus: f64, pi_zero: f64) -> PyResult<f64> {
    let u = UtilityFn::new(a_hat, b_hat).map_err(py_err)?;
    let t = NemTariff::new(pi_plus, pi_minus, pi_zero).map_err(py_err)?;
    let p = ProsumerParams::new(d_min, d_max, r).map_err(py_err)?;
    prosumer::nem_consumption(&u, &t, &p).map_err(py_err)
}

/// Household surplus under net metering, $.
#[pyfunction]
#[pyo3(signature = (a_hat, b_hat, d_min, d_max, r, pi_plus = 0.06, pi_minus = 0.03, pi_zero = 0.0))]
#[allow(clippy::too_many_arguments)]
fn nem_surplus(a_hat: f64, b_hat: f64, d_min: f64, d_max: f64, r: f64, pi_plus: f64, pi_minus: f64, pi_zero: f64) -> PyResult<f64> {
    let u = UtilityFn::new(a_hat, b_hat).map_err(py_err)?;
    let t = NemTariff::new(pi_plus, pi_minus, pi_zero).map_err(py_err)?;
    let p = ProsumerParams::new(d_min, d_max, r).map_err(py_err)?;
    prosumer::nem_surplus(&u, &t, &p).map_err(py_err)
}

/// Aggregator surplus for a DERA config JSON under `[(c_lo, c_hi), ...]` in MW, one per prosumer.
#[pyfunction]
fn dera_surplus(config_json: &str, access: Vec<(f64, f64)>) -> PyResult<f64> {
    let port = DeraPortfolio::from_config(&from_json::<DeraConfig>(config_json)?).map_err(py_err)?;
    let access = access
        .into_iter()
        .map(|(lo, hi)| dera::AccessInterval::new(lo, hi))
        .collect::<Result<Vec<_>, _>>()
        .map_err(py_err)?;
    dera::optimal_decision(&port, &access).map(|d| d.phi_total).map_err(py_err)
}

/// Bid curves for a DERA config JSON; returns the bids as JSON.
#[pyfunction]
#[pyo3(signature = (config_json, segments = 10))]
fn bids(config_json: &str, segments: usize) -> PyResult<String> {
    let port = DeraPortfolio::from_config(&from_json::<DeraConfig>(config_json)?).map_err(py_err)?;
    to_json(&dera::bid_curves(&port, None, segments).map_err(py_err)?)
}

/// Clears the auction. `bids_json` is a JSON array of aggregator bids.
#[pyfunction]
#[pyo3(signature = (
    network, bids_json, dso = (-0.096, 0.2), utility_lo = None, utility_hi = None,
    j_segments = 20, samples = 0, seed = 0, voltage_dev = 0.05, bounds_on = "u"
))]
#[allow(clippy::too_many_arguments)]
fn clear(
    network: &PyNetwork,
    bids_json: &str,
    dso: (f64, f64),
    utility_lo: Option<Vec<f64>>,
    utility_hi: Option<Vec<f64>>,
    j_segments: usize,
    samples: usize,
    seed: u64,
    voltage_dev: f64,
    bounds_on: &str,
) -> PyResult<PyOutcome> {
    let bids: Vec<DeraBids> = from_json(bids_json)?;
    let bundle = net_model::build_sensitivity(&network.inner, &options(voltage_dev, bounds_on)?).map_err(py_err)?;
    let n = bundle.dim();
    let cost = DsoCost::new(dso.0, dso.1).map_err(py_err)?;
    let mut inst = AuctionInstance::new(
        bundle,
        bids,
        utility_lo.unwrap_or_else(|| vec![0.0; n]),
        utility_hi.unwrap_or_else(|| vec![0.0; n]),
        cost,
    )
    .map_err(py_err)?;
    inst.options.j_segments = j_segments;
    let res = auction::clear(&inst).map_err(py_err)?;
    let cert = if samples > 0 {
        Some(auction::verify_robust(&res.allocations, &inst.bundle, &inst.utility_lo, &inst.utility_hi, samples, seed).map_err(py_err)?)
    } else {
        None
    };
    Ok(PyOutcome {
        file: ResultFile::new(&res, &inst, cert),
    })
}

/// Re-checks a result JSON against the network; returns whether the certificate passes.
#[pyfunction]
#[pyo3(signature = (network, result_json, samples = 10_000, seed = 0, voltage_dev = 0.05, bounds_on = "u"))]
fn verify(network: &PyNetwork, result_json: &str, samples: usize, seed: u64, voltage_dev: f64, bounds_on: &str) -> PyResult<bool> {
    let file: ResultFile = from_json(result_json)?;
    let bundle = net_model::build_sensitivity(&network.inner, &options(voltage_dev, bounds_on)?).map_err(py_err)?;
    let cert = auction::verify_robust(&file.allocations(), &bundle, &file.utility_lo, &file.utility_hi, samples, seed).map_err(py_err)?;
    Ok(cert.passed())
}

/// Default scenario configuration as JSON.
#[pyfunction]
fn preset() -> PyResult<String> {
    to_json(&ScenarioConfig::preset())
}

/// Runs a scenario; `config_json` defaults to the preset.
#[pyfunction]
#[pyo3(signature = (network, config_json = None))]
fn run_scenario(network: &PyNetwork, config_json: Option<&str>) -> PyResult<PyOutcome> {
    let cfg = match config_json {
        Some(text) => from_json(text)?,
        None => ScenarioConfig::preset(),
    };
    let out = scenario::run_scenario(&network.inner, &cfg).map_err(py_err)?;
    Ok(PyOutcome {
        file: ResultFile::new(&out.result, &out.instance, None),
    })
}

/// Sweeps `"dg_level"` or `"dera_ratio"`; returns `(value, social_surplus, dera_surplus)` rows.
#[pyfunction]
#[pyo3(signature = (network, param, values = None, config_json = None))]
fn sweep(network: &PyNetwork, param: &str, values: Option<Vec<f64>>, config_json: Option<&str>) -> PyResult<Vec<(f64, f64, f64)>> {
    let param: SweepParam = param.parse().map_err(py_err)?;
    let cfg = match config_json {
        Some(text) => from_json(text)?,
        None => ScenarioConfig::preset(),
    };
    let values = values.unwrap_or_else(|| param.default_values());
    let rows = scenario::sweep(&network.inner, &cfg, param, &values).map_err(py_err)?;
    Ok(rows.into_iter().map(|r| (r.value, r.social_surplus, r.dera_surplus)).collect())
}

#[pymodule]
fn access_auction_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNetwork>()?;
    m.add_class::<PyOutcome>()?;
    m.add("InfeasibleError", m.py().get_type::<InfeasibleError>())?;
    m.add_function(wrap_pyfunction!(nem_consumption, m)?)?;
    m.add_function(wrap_pyfunction!(nem_surplus, m)?)?;
    m.add_function(wrap_pyfunction!(dera_surplus, m)?)?;
    m.add_function(wrap_pyfunction!(bids, m)?)?;
    m.add_function(wrap_pyfunction!(clear, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(preset, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    Ok(())
}
