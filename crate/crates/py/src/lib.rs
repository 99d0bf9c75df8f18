//! Python bindings: corpus generation, feature extraction, selection,
//! training, prediction and cross-route evaluation.

use std::fs;
use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;

use wetroad::dataset::{extract_trip, features_to_csv, join_manifest, parse_feature_csv, stack, FeatureSet};
use wetroad::eval::{cross_route_eval as run_cross_route, ConfusionMatrix, TripData, LOW_SPEED_MPH};
use wetroad::features::{asf_features as asf, default_filterbank, FeatureMatrix, FrameSpec};
use wetroad::ingest::{parse_manifest, AudioClip};
use wetroad::pipeline::{fit_rnn, fit_svm, predict_with, Model as CoreModel, RnnLearner, SvmLearner};
use wetroad::rnn::NetworkSpec;
use wetroad::select::{Discretization, SelectionReport};
use wetroad::svm::{Kernel, SvmParams};
use wetroad::synth::{generate_corpus, SynthSpec};
use wetroad::ErrorKind;

fn py_err(e: wetroad::Error) -> PyErr {
    match (&e, e.kind()) {
        (wetroad::Error::Io { .. }, _) => PyOSError::new_err(e.to_string()),
        (_, ErrorKind::Numeric) => PyArithmeticError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn feature_set(name: &str) -> PyResult<FeatureSet> {
    name.parse().map_err(|_| PyValueError::new_err(format!("unknown feature set '{name}'")))
}

/// Feature CSV text joined with a manifest, or with route 0 when none is given.
fn trips(csv: &str, manifest: Option<PathBuf>) -> PyResult<Vec<TripData>> {
    let features = parse_feature_csv(csv).map_err(py_err)?;
    match manifest {
        Some(p) => join_manifest(features, &parse_manifest(p).map_err(py_err)?).map_err(py_err),
        None => features
            .into_iter()
            .map(|t| {
                let condition = wetroad::dataset::condition_of(&t.labels)
                    .ok_or_else(|| PyValueError::new_err(format!("trip {} has no frames", t.trip_id)))?;
                Ok(TripData {
                    trip_id: t.trip_id,
                    route_id: 0,
                    condition,
                    features: t.features,
                    labels: t.labels,
                    speeds: t.speeds,
                })
            })
            .collect(),
    }
}

fn network_spec(
    layout: Vec<usize>,
    bidirectional: bool,
    learning_rate: f64,
    max_epochs: usize,
    patience: usize,
    seed: u64,
) -> NetworkSpec {
    let mut spec = NetworkSpec::new(0, layout, bidirectional);
    spec.learning_rate = learning_rate;
    spec.max_epochs = max_epochs;
    spec.patience = patience;
    spec.seed = seed;
    spec
}

fn svm_params(c: f64, kernel: &str, gamma: f64) -> PyResult<SvmParams> {
    let kernel = match kernel {
        "linear" => Kernel::Linear,
        "rbf" => Kernel::Rbf { gamma },
        other => return Err(PyValueError::new_err(format!("unknown kernel '{other}'"))),
    };
    Ok(SvmParams {
        c,
        kernel,
        ..SvmParams::default()
    })
}

/// Per-frame features: column names, frame start times and one row per frame.
#[pyclass(frozen, get_all)]
pub struct Features {
    names: Vec<String>,
    frame_times: Vec<f64>,
    rows: Vec<Vec<f64>>,
}

impl From<FeatureMatrix> for Features {
    fn from(fm: FeatureMatrix) -> Self {
        Self {
            names: fm.feature_names().to_vec(),
            frame_times: fm.frame_times().to_vec(),
            rows: fm.rows().map(<[f64]>::to_vec).collect(),
        }
    }
}

#[pymethods]
impl Features {
    fn __len__(&self) -> usize {
        self.rows.len()
    }

    #[getter]
    fn dims(&self) -> usize {
        self.names.len()
    }
}

/// A trained RNN or SVM classifier.
#[pyclass(frozen)]
pub struct Model {
    inner: CoreModel,
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: CoreModel::load(path).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: CoreModel::from_json(text).map_err(py_err)?,
        })
    }

    /// Trains an LSTM (or BLSTM) on every trip of a feature CSV, validating
    /// on the training data.
    #[staticmethod]
    #[pyo3(signature = (features_csv, layout, bidirectional=true, learning_rate=1e-5, max_epochs=100, patience=10, seed=0))]
    fn train_rnn(
        features_csv: &str,
        layout: Vec<usize>,
        bidirectional: bool,
        learning_rate: f64,
        max_epochs: usize,
        patience: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let data = trips(features_csv, None)?;
        let refs: Vec<&TripData> = data.iter().collect();
        let spec = network_spec(layout, bidirectional, learning_rate, max_epochs, patience, seed);
        let (model, _) = fit_rnn(&spec, &refs, &[]).map_err(py_err)?;
        Ok(Self {
            inner: CoreModel::Rnn(model),
        })
    }

    #[staticmethod]
    #[pyo3(signature = (features_csv, c=1e-3, kernel="linear", gamma=1.0))]
    fn train_svm(features_csv: &str, c: f64, kernel: &str, gamma: f64) -> PyResult<Self> {
        let data = trips(features_csv, None)?;
        let refs: Vec<&TripData> = data.iter().collect();
        let model = fit_svm(&svm_params(c, kernel, gamma)?, &refs).map_err(py_err)?;
        Ok(Self {
            inner: CoreModel::Svm(model),
        })
    }

    #[getter]
    fn kind(&self) -> &'static str {
        match self.inner {
            CoreModel::Rnn(_) => "rnn",
            CoreModel::Svm(_) => "svm",
        }
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    /// Classes (1 = wet) and wet posteriors for a sequence of frames.
    fn predict(&self, rows: Vec<Vec<f64>>) -> PyResult<(Vec<usize>, Vec<f64>)> {
        let dim = self.inner.input_dim();
        let names = (0..dim).map(|j| format!("f{j}")).collect();
        let times = (0..rows.len()).map(|t| t as f64).collect();
        let fm = FeatureMatrix::from_rows(names, times, &rows).map_err(py_err)?;
        let p = predict_with(&self.inner, &fm).map_err(py_err)?;
        Ok((p.classes, p.posterior_wet))
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(py_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        let text = self.to_json()?;
        fs::write(&path, text).map_err(|e| PyOSError::new_err(format!("{}: {e}", path.display())))
    }
}

/// Writes a synthetic corpus into `out_dir` and returns the manifest path.
#[pyfunction]
#[pyo3(signature = (out_dir, seed=None, trip_seconds=None))]
fn synthesize_corpus(out_dir: PathBuf, seed: Option<u64>, trip_seconds: Option<f64>) -> PyResult<PathBuf> {
    let mut spec = SynthSpec::default();
    if let Some(s) = seed {
        spec.seed = s;
    }
    if let Some(t) = trip_seconds {
        spec.trip_seconds = t;
    }
    generate_corpus(&spec, out_dir).map_err(py_err)
}

/// 54-dimensional auditory spectral features of a mono signal in [-1, 1].
#[pyfunction]
fn asf_features(samples: Vec<f64>, sample_rate: u32) -> PyResult<Features> {
    let clip = AudioClip::new(samples, sample_rate).map_err(py_err)?;
    let spec = FrameSpec::default();
    let bank = default_filterbank(&spec, sample_rate).map_err(py_err)?;
    Ok(asf(&clip, &spec, &bank).map_err(py_err)?.into())
}

/// Feature CSV text for every trip of a manifest.
#[pyfunction]
#[pyo3(signature = (manifest_path, feature_set="asf"))]
fn extract_features(manifest_path: PathBuf, feature_set: &str) -> PyResult<String> {
    let set = self::feature_set(feature_set)?;
    let manifest = parse_manifest(&manifest_path).map_err(py_err)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let trips = manifest
        .iter()
        .map(|t| extract_trip(t, base, set))
        .collect::<wetroad::Result<Vec<_>>>()
        .map_err(py_err)?;
    features_to_csv(&trips).map_err(py_err)
}

/// Selection report (JSON) for a feature CSV: `"ig"` ranks and keeps the
/// top `top_k`, `"cfs"` runs best-first subset search.
#[pyfunction]
#[pyo3(signature = (features_csv, method="ig", top_k=20, max_stale=5))]
fn select_features(features_csv: &str, method: &str, top_k: usize, max_stale: usize) -> PyResult<String> {
    let data = trips(features_csv, None)?;
    let refs: Vec<&TripData> = data.iter().collect();
    let (fm, labels) = stack(&refs).map_err(py_err)?;
    let report = match method {
        "ig" => SelectionReport::ig(&fm, &labels, top_k, Discretization::Mdl),
        "cfs" => SelectionReport::cfs(&fm, &labels, max_stale, Discretization::Mdl),
        other => return Err(PyValueError::new_err(format!("unknown method '{other}'"))),
    };
    report.map_err(py_err)?.to_json().map_err(py_err)
}

/// Leave-route-out evaluation; returns the report as JSON.
#[pyfunction]
#[pyo3(signature = (
    features_csv, manifest_path, arch="blstm", layout=vec![216, 216, 216], learning_rate=1e-5,
    max_epochs=100, patience=10, seed=0, c=1e-3, kernel="linear", gamma=1.0, speed_threshold=LOW_SPEED_MPH,
))]
#[allow(clippy::too_many_arguments)]
fn cross_route_eval(
    py: Python<'_>,
    features_csv: &str,
    manifest_path: PathBuf,
    arch: &str,
    layout: Vec<usize>,
    learning_rate: f64,
    max_epochs: usize,
    patience: usize,
    seed: u64,
    c: f64,
    kernel: &str,
    gamma: f64,
    speed_threshold: f64,
) -> PyResult<String> {
    let data = trips(features_csv, Some(manifest_path))?;
    let report = match arch {
        "lstm" | "blstm" => {
            let spec = network_spec(layout, arch == "blstm", learning_rate, max_epochs, patience, seed);
            py.detach(|| run_cross_route(&data, &RnnLearner { spec }, arch, speed_threshold))
        }
        "svm" => {
            let params = svm_params(c, kernel, gamma)?;
            py.detach(|| run_cross_route(&data, &SvmLearner { params }, arch, speed_threshold))
        }
        other => return Err(PyValueError::new_err(format!("unknown arch '{other}'"))),
    };
    report.map_err(py_err)?.to_json().map_err(py_err)
}

/// Unweighted average recall of binary predictions.
#[pyfunction]
fn uar(truth: Vec<usize>, predicted: Vec<usize>) -> PyResult<f64> {
    ConfusionMatrix::from_pairs(2, &truth, &predicted)
        .and_then(|cm| cm.uar())
        .map_err(py_err)
}

#[pymodule]
#[pyo3(name = "wetroad")]
fn wetroad_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Features>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(synthesize_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(asf_features, m)?)?;
    m.add_function(wrap_pyfunction!(extract_features, m)?)?;
    m.add_function(wrap_pyfunction!(select_features, m)?)?;
    m.add_function(wrap_pyfunction!(cross_route_eval, m)?)?;
    m.add_function(wrap_pyfunction!(uar, m)?)?;
    Ok(())
}
