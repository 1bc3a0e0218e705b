//! Python bindings for the proxtrace core.

use std::collections::HashMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use proxtrace::classify::{self, Dataset, Hyper, Impurity, ModelKind, TrainedModel};
use proxtrace::features::{self, Feature, Label, Observation, RiskPolicy, WindowingPolicy};
use proxtrace::protocol::{self, DeviceId, InfectedBundle, Payload, ProtocolTimings};
use proxtrace::radio::{self, ChannelParams, Geometry};
use proxtrace::sim::{self, LabeledDataset, Scenario};
use proxtrace::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn geometry(name: &str) -> PyResult<Geometry> {
    match name {
        "direct" => Ok(Geometry::Direct),
        "crosswise" => Ok(Geometry::Crosswise),
        _ => Err(PyValueError::new_err(format!("unknown geometry {name:?}"))),
    }
}

fn labels(y: &[i8]) -> PyResult<Vec<Label>> {
    y.iter()
        .map(|&v| Label::from_i8(v).ok_or_else(|| PyValueError::new_err(format!("label must be 1 or -1, got {v}"))))
        .collect()
}

fn hyper(max_depth: usize, min_leaf: usize, impurity: &str, k: usize) -> PyResult<Hyper> {
    Ok(Hyper {
        max_depth,
        min_leaf,
        impurity: impurity.parse::<Impurity>().map_err(py_err)?,
        k,
    })
}

/// Log-distance channel with Gaussian shadowing.
#[pyclass(name = "Channel", from_py_object)]
#[derive(Clone)]
struct PyChannel {
    inner: ChannelParams,
}

#[pymethods]
impl PyChannel {
    #[new]
    #[pyo3(signature = (ref_rss_dbm=None, path_loss_exp=None, shadow_sigma_db=None, body_atten_db=None, range_m=None))]
    fn new(
        ref_rss_dbm: Option<f64>,
        path_loss_exp: Option<f64>,
        shadow_sigma_db: Option<f64>,
        body_atten_db: Option<f64>,
        range_m: Option<f64>,
    ) -> PyResult<Self> {
        let d = ChannelParams::default();
        let inner = ChannelParams {
            ref_rss_dbm: ref_rss_dbm.unwrap_or(d.ref_rss_dbm),
            path_loss_exp: path_loss_exp.unwrap_or(d.path_loss_exp),
            shadow_sigma_db: shadow_sigma_db.unwrap_or(d.shadow_sigma_db),
            body_atten_db: body_atten_db.unwrap_or(d.body_atten_db),
            broadcast_range_m: range_m.unwrap_or(d.broadcast_range_m),
            ..d
        };
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }

    #[pyo3(signature = (distance_m, geometry="direct"))]
    fn mean_rss(&self, distance_m: f64, geometry: &str) -> PyResult<f64> {
        radio::mean_rss_at(&self.inner, distance_m, self::geometry(geometry)?).map_err(py_err)
    }

    #[pyo3(signature = (rss_dbm, geometry="direct"))]
    fn distance_for_rss(&self, rss_dbm: f64, geometry: &str) -> PyResult<f64> {
        Ok(radio::distance_for_rss(&self.inner, rss_dbm, self::geometry(geometry)?))
    }

    /// `n` shadowed readings at a fixed distance.
    #[pyo3(signature = (distance_m, n, seed, geometry="direct"))]
    fn sample(&self, distance_m: f64, n: usize, seed: u64, geometry: &str) -> PyResult<Vec<f64>> {
        let g = self::geometry(geometry)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| radio::sample_rss(&self.inner, distance_m, g, &mut rng).map_err(py_err))
            .collect()
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

#[pyfunction]
fn moving_average(series: Vec<f64>, window: usize) -> PyResult<Vec<f64>> {
    radio::moving_average(&series, window).map_err(py_err)
}

/// One handset running the exposure protocol.
#[pyclass(name = "Device")]
struct PyDevice {
    inner: protocol::Device,
    rng: ChaCha8Rng,
}

#[pymethods]
impl PyDevice {
    #[new]
    #[pyo3(signature = (id, seed=0, t_gen_ms=600_000, t_adv_ms=100, t_scan_ms=1000, t_window_ms=500))]
    fn new(id: u64, seed: u64, t_gen_ms: u64, t_adv_ms: u64, t_scan_ms: u64, t_window_ms: u64) -> PyResult<Self> {
        let timings = ProtocolTimings {
            t_gen_ms,
            t_adv_ms,
            t_scan_ms,
            t_window_ms,
        };
        Ok(Self {
            inner: protocol::Device::new(DeviceId(id), timings).map_err(py_err)?,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Rotates to a fresh signature and returns its payload as hex.
    fn generate_signature(&mut self, now_ms: u64) -> String {
        self.inner.generate_signature(now_ms, &mut self.rng).payload.to_hex()
    }

    fn is_listening(&self, t_ms: u64) -> bool {
        self.inner.is_listening(t_ms)
    }

    /// Returns True if the packet was logged.
    fn receive(&mut self, payload: &[u8], rss_dbm: f64, now_ms: u64) -> PyResult<bool> {
        let out = self.inner.receive(payload, rss_dbm, now_ms).map_err(py_err)?;
        Ok(out == protocol::ReceiveOutcome::Logged)
    }

    /// `(payload_hex, rss_dbm, timestamp_ms)` for every retained log entry.
    fn contact_log(&self) -> Vec<(String, f64, u64)> {
        self.inner
            .contact_log()
            .iter()
            .map(|e| (e.observed_payload.to_hex(), e.rss_dbm, e.timestamp_ms))
            .collect()
    }

    fn own_signatures(&self) -> Vec<String> {
        self.inner.own_signatures().iter().map(|s| s.payload.to_hex()).collect()
    }

    /// Bundle text, one `payload_hex,generated_at_ms,valid_for_ms` record per line.
    fn publish_infected(&self, now_ms: u64) -> String {
        String::from_utf8(self.inner.publish_infected(now_ms).to_bytes()).expect("bundle records are ascii")
    }

    /// `(payload_hex, first_seen_ms, last_seen_ms, samples)` per matched signature.
    fn match_exposure(&self, bundle: &str) -> PyResult<Vec<(String, u64, u64, usize)>> {
        let bundle = InfectedBundle::read_records(bundle.as_bytes()).map_err(py_err)?;
        Ok(self
            .inner
            .match_exposure(&bundle)
            .into_iter()
            .map(|m| (m.payload.to_hex(), m.first_seen_ms, m.last_seen_ms, m.samples))
            .collect())
    }
}

#[pyfunction]
fn payload_from_hex(text: &str) -> PyResult<Vec<u8>> {
    let p: Payload = text.parse().map_err(py_err)?;
    Ok(p.as_bytes().to_vec())
}

fn feature_dict(f: &features::FeatureVector) -> HashMap<&'static str, f64> {
    let mut d: HashMap<&'static str, f64> = Feature::ALL.iter().map(|&k| (k.name(), f.get(k))).collect();
    if let Some(l) = f.label {
        d.insert("label", l.as_i8() as f64);
    }
    d
}

/// Feature windows over one receiver/sender stream.
#[pyfunction]
#[pyo3(signature = (timestamps_ms, rss_dbm, distances_m=None, window_ms=10_000, stride_ms=None, min_samples=1, max_samples=None, threshold_m=None))]
#[allow(clippy::too_many_arguments)]
fn extract_features(
    timestamps_ms: Vec<u64>,
    rss_dbm: Vec<f64>,
    distances_m: Option<Vec<f64>>,
    window_ms: u64,
    stride_ms: Option<u64>,
    min_samples: usize,
    max_samples: Option<usize>,
    threshold_m: Option<f64>,
) -> PyResult<Vec<HashMap<&'static str, f64>>> {
    if timestamps_ms.len() != rss_dbm.len() || distances_m.as_ref().is_some_and(|d| d.len() != rss_dbm.len()) {
        return Err(PyValueError::new_err("input sequences differ in length"));
    }
    let obs: Vec<Observation> = timestamps_ms
        .iter()
        .zip(&rss_dbm)
        .enumerate()
        .map(|(i, (&t, &r))| Observation {
            timestamp_ms: t,
            rss_dbm: r,
            distance_m: distances_m.as_ref().map(|d| d[i]),
        })
        .collect();
    let policy = WindowingPolicy {
        window_ms,
        stride_ms: stride_ms.unwrap_or(window_ms),
        min_samples,
        max_samples,
        ..WindowingPolicy::default()
    };
    let rows = match threshold_m {
        Some(t) => {
            let risk = RiskPolicy::new(t).map_err(py_err)?;
            features::build_labeled(&[obs], &policy, &risk).map_err(py_err)?
        }
        None => features::extract_features(&obs, &policy).map_err(py_err)?,
    };
    Ok(rows.iter().map(feature_dict).collect())
}

/// A fitted classifier.
#[pyclass(name = "Model")]
struct PyModel {
    inner: TrainedModel,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    #[pyo3(signature = (kind, x, y, max_depth=12, min_leaf=5, impurity="gini", k=5))]
    fn train(
        kind: &str,
        x: Vec<Vec<f64>>,
        y: Vec<i8>,
        max_depth: usize,
        min_leaf: usize,
        impurity: &str,
        k: usize,
    ) -> PyResult<Self> {
        let kind: ModelKind = kind.parse().map_err(py_err)?;
        let data = Dataset::new(x, labels(&y)?).map_err(py_err)?;
        let h = hyper(max_depth, min_leaf, impurity, k)?;
        Ok(Self {
            inner: classify::train(kind, &data, &h).map_err(py_err)?,
        })
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind().name()
    }

    fn predict(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<i8>> {
        Ok(self.inner.predict(&x).map_err(py_err)?.into_iter().map(Label::as_i8).collect())
    }

    /// Higher means more likely High.
    fn scores(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        self.inner.scores(&x).map_err(py_err)
    }

    fn to_json(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        self.inner.save(&mut buf).map_err(py_err)?;
        Ok(String::from_utf8(buf).expect("model json is utf-8"))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: TrainedModel::load(text.as_bytes()).map_err(py_err)?,
        })
    }
}

/// Repeated random-split evaluation. Returns metric -> (mean, ci_lo, ci_hi).
#[pyfunction]
#[pyo3(signature = (kind, x, y, reps=100, split=0.8, seed=0, max_depth=12, min_leaf=5, impurity="gini", k=5))]
#[allow(clippy::too_many_arguments)]
fn evaluate(
    kind: &str,
    x: Vec<Vec<f64>>,
    y: Vec<i8>,
    reps: usize,
    split: f64,
    seed: u64,
    max_depth: usize,
    min_leaf: usize,
    impurity: &str,
    k: usize,
) -> PyResult<HashMap<&'static str, (f64, f64, f64)>> {
    let kind: ModelKind = kind.parse().map_err(py_err)?;
    let data = Dataset::new(x, labels(&y)?).map_err(py_err)?;
    let h = hyper(max_depth, min_leaf, impurity, k)?;
    let report = classify::evaluate_repeated(&data, kind, &h, split, reps, seed).map_err(py_err)?;
    Ok(report
        .rows()
        .into_iter()
        .map(|(name, s)| (name, (s.mean, s.ci_lo, s.ci_hi)))
        .collect())
}

type Table = (Vec<Vec<f64>>, Vec<i8>);

fn table(ds: &LabeledDataset) -> Table {
    let x = ds.rows.iter().map(|r| r.values().to_vec()).collect();
    let y = ds.rows.iter().map(|r| r.label.map_or(0, Label::as_i8)).collect();
    (x, y)
}

/// Stepped-distance experiment for both geometries. Feature columns follow
/// `FEATURES`; labels are 1 (High) or -1 (Low).
#[pyfunction]
#[pyo3(signature = (scenario=None, seed=None))]
fn simulate(scenario: Option<PathBuf>, seed: Option<u64>) -> PyResult<HashMap<&'static str, Table>> {
    let s = match scenario {
        Some(p) => Scenario::load(&p).map_err(py_err)?,
        None => Scenario::replication_default(),
    };
    let seed = seed.unwrap_or(s.seed);
    let data = sim::run_paper_replication(&s, &s.windowing, &s.risk, seed).map_err(py_err)?;
    Ok(HashMap::from([("direct", table(&data.direct)), ("crosswise", table(&data.crosswise))]))
}

/// Runs a free-form scenario and reports `(agent, alerted, matched_signatures, samples)`.
#[pyfunction]
#[pyo3(signature = (scenario, infected, seed=None))]
fn drill(scenario: PathBuf, infected: u64, seed: Option<u64>) -> PyResult<Vec<(u64, bool, usize, usize)>> {
    let s = Scenario::load(&scenario).map_err(py_err)?;
    let seed = seed.unwrap_or(s.seed);
    let report = sim::run_outbreak_drill(&s, infected, seed).map_err(py_err)?;
    Ok(report
        .alerts
        .into_iter()
        .map(|a| (a.agent, a.alerted, a.matched_signatures, a.samples))
        .collect())
}

#[pymodule]
fn proxtrace_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyChannel>()?;
    m.add_class::<PyDevice>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(moving_average, m)?)?;
    m.add_function(wrap_pyfunction!(payload_from_hex, m)?)?;
    m.add_function(wrap_pyfunction!(extract_features, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(drill, m)?)?;
    m.add("FEATURES", Feature::ALL.iter().map(|f| f.name()).collect::<Vec<_>>())?;
    Ok(())
}
