//! Python bindings. Images cross the boundary as flat `float` lists plus a shape.

use std::path::PathBuf;

use carddeck::deck::{evaluate_deck, Card, Deck, DeckMode};
use carddeck::gate::{self, SignatureIndex};
use carddeck::harness::{
    corrupted_suite, generate_dataset, run_experiment, AugmentationSpec, Augmenter, GridConfig,
    SyntheticSpec,
};
use carddeck::nn::{self, checkpoint};
use carddeck::prune::{GmpSchedule, Method, PruneManifest, PruneScope, TrainInput, TrainSpec};
use carddeck::spectral::{self, HeatmapConfig};
use carddeck::Tensor;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

fn err(e: carddeck::Error) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn parse<T: std::str::FromStr>(s: &str, what: &str) -> PyResult<T> {
    s.parse()
        .map_err(|_| PyValueError::new_err(format!("unknown {what} {s:?}")))
}

fn to_dict(py: Python<'_>, value: &impl serde::Serialize) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn tensor(data: Vec<f32>, shape: Vec<usize>) -> PyResult<Tensor> {
    Tensor::new(shape, data).map_err(err)
}

#[pyclass(name = "Network", module = "carddeck", from_py_object)]
#[derive(Clone)]
struct PyNetwork(nn::Network);

#[pymethods]
impl PyNetwork {
    #[staticmethod]
    fn mlp(input_shape: Vec<usize>, hidden: Vec<usize>, classes: usize) -> PyResult<Self> {
        nn::Network::mlp(input_shape, &hidden, classes)
            .map(Self)
            .map_err(err)
    }

    #[staticmethod]
    fn conv2(input_shape: Vec<usize>, channels: usize, classes: usize) -> PyResult<Self> {
        nn::Network::conv2(input_shape, channels, classes)
            .map(Self)
            .map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        checkpoint::load(path).map(Self).map_err(err)
    }

    #[staticmethod]
    fn from_bytes(bytes: &[u8]) -> PyResult<Self> {
        checkpoint::decode(bytes).map(Self).map_err(err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        checkpoint::save(&self.0, path).map_err(err)
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &checkpoint::encode(&self.0))
    }

    #[getter]
    fn input_shape(&self) -> Vec<usize> {
        self.0.input_shape().to_vec()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.0.num_classes()
    }

    #[getter]
    fn total_weights(&self) -> usize {
        self.0.total_weights()
    }

    #[getter]
    fn surviving_weights(&self) -> usize {
        self.0.surviving_weights()
    }

    #[getter]
    fn sparsity(&self) -> f64 {
        self.0.sparsity()
    }

    #[getter]
    fn memory_bits(&self) -> u64 {
        carddeck::deck::memory_bits(&self.0)
    }

    /// Class probabilities, one row per image.
    fn predict_proba(&self, images: Vec<f32>, shape: Vec<usize>) -> PyResult<Vec<Vec<f32>>> {
        let out = self.0.predict_proba(&tensor(images, shape)?).map_err(err)?;
        Ok(out
            .data()
            .chunks(out.row_len())
            .map(<[f32]>::to_vec)
            .collect())
    }

    fn evaluate(&self, data: &PyDataset) -> PyResult<f64> {
        nn::evaluate(&self.0, &data.0).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Network(weights={}, sparsity={:.4})",
            self.0.total_weights(),
            self.0.sparsity()
        )
    }
}

#[pyclass(name = "Dataset", module = "carddeck", from_py_object)]
#[derive(Clone)]
struct PyDataset(nn::Dataset);

#[pymethods]
impl PyDataset {
    #[new]
    fn new(
        images: Vec<f32>,
        shape: Vec<usize>,
        labels: Vec<usize>,
        classes: usize,
    ) -> PyResult<Self> {
        nn::Dataset::new(tensor(images, shape)?, labels, classes)
            .map(Self)
            .map_err(err)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    #[getter]
    fn sample_shape(&self) -> Vec<usize> {
        self.0.sample_shape().to_vec()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.0.num_classes()
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.0.labels().to_vec()
    }

    fn image(&self, i: usize) -> PyResult<Vec<f32>> {
        if i >= self.0.len() {
            return Err(PyValueError::new_err(format!("image {i} out of range")));
        }
        Ok(self.0.image(i).to_vec())
    }

    /// Images `indices` as a flat list, with their batch shape.
    fn batch(&self, indices: Vec<usize>) -> PyResult<(Vec<f32>, Vec<usize>)> {
        if let Some(&i) = indices.iter().find(|&&i| i >= self.0.len()) {
            return Err(PyValueError::new_err(format!("image {i} out of range")));
        }
        let (t, _) = self.0.batch(&indices);
        Ok((t.data().to_vec(), t.shape().to_vec()))
    }
}

/// Seeded synthetic classification data, returned as `(train, test)`.
#[pyfunction]
#[pyo3(signature = (seed=0, classes=10, count=2000, channels=3, height=16, width=16, test_fraction=0.25))]
fn synthetic_dataset(
    seed: u64,
    classes: usize,
    count: usize,
    channels: usize,
    height: usize,
    width: usize,
    test_fraction: f64,
) -> PyResult<(PyDataset, PyDataset)> {
    let spec = SyntheticSpec {
        seed,
        classes,
        count,
        channels,
        height,
        width,
        test_fraction,
    };
    let (a, b) = generate_dataset(&spec).map_err(err)?;
    Ok((PyDataset(a), PyDataset(b)))
}

fn augmenter(id: &str, data: &nn::Dataset) -> PyResult<Option<Augmenter>> {
    let spec = AugmentationSpec::by_id(id).map_err(err)?;
    let shape: [usize; 3] = data
        .sample_shape()
        .try_into()
        .map_err(|_| PyValueError::new_err("augmentation needs [c, h, w] images"))?;
    match spec {
        AugmentationSpec::Clean => Ok(None),
        s => Augmenter::new(s, shape, (-1.0, 1.0)).map(Some).map_err(err),
    }
}

/// Compress `network` on `train` and return `(network, report)`.
#[pyfunction]
#[pyo3(signature = (network, train, method, sparsity, scope="global", epochs=20, lr=0.01, seed=0, augmentation="clean"))]
#[allow(clippy::too_many_arguments)]
fn prune(
    py: Python<'_>,
    network: &PyNetwork,
    train: &PyDataset,
    method: &str,
    sparsity: f64,
    scope: &str,
    epochs: usize,
    lr: f64,
    seed: u64,
    augmentation: &str,
) -> PyResult<(PyNetwork, Py<PyAny>)> {
    let method: Method = parse(method, "method")?;
    let scope: PruneScope = parse(scope, "scope")?;
    let spec = TrainSpec {
        epochs,
        lr,
        ..Default::default()
    };
    let m = PruneManifest::new(method, scope, sparsity, spec, seed);
    let aug = augmenter(augmentation, &train.0)?;
    let input = TrainInput {
        data: &train.0,
        transform: aug.as_ref().map(|a| a as _),
    };
    let net = network.0.clone();
    let out = py.detach(|| m.run(net, input)).map_err(err)?;
    Ok((PyNetwork(out.network), to_dict(py, &out.report)?))
}

/// Cubic gradual-magnitude-pruning sparsity at iteration `t`.
#[pyfunction]
fn gmp_sparsity(
    initial: f64,
    final_sparsity: f64,
    t0: usize,
    steps: usize,
    interval: usize,
    t: usize,
) -> PyResult<f64> {
    GmpSchedule {
        initial,
        final_sparsity,
        t0,
        steps,
        interval,
    }
    .sparsity_at(t)
    .map_err(err)
}

#[pyfunction]
fn radial_power_spectrum(image: Vec<f32>, shape: Vec<usize>) -> PyResult<Vec<f64>> {
    spectral::radial_power_spectrum(&image, &shape)
        .map(|s| s.power)
        .map_err(err)
}

#[pyfunction]
fn signature(image: Vec<f32>, shape: Vec<usize>) -> PyResult<Vec<f64>> {
    spectral::signature(&image, &shape).map_err(err)
}

/// Fourier heatmap of test error as rows of `(i, j, error)`.
#[pyfunction]
#[pyo3(signature = (network, data, eps=4.0, seed=0))]
fn heatmap(
    py: Python<'_>,
    network: &PyNetwork,
    data: &PyDataset,
    eps: f64,
    seed: u64,
) -> PyResult<Vec<(i64, i64, f64)>> {
    let cfg = HeatmapConfig {
        eps,
        seed,
        value_range: None,
        model_id: String::new(),
    };
    let h = py
        .detach(|| spectral::heatmap(&network.0, &data.0, &cfg))
        .map_err(err)?;
    Ok(h.cells().collect())
}

#[pyclass(name = "SignatureIndex", module = "carddeck", from_py_object)]
#[derive(Clone)]
struct PyIndex(SignatureIndex);

#[pymethods]
impl PyIndex {
    /// Spectral signatures of `points` training images, augmented by `augmentation`.
    #[staticmethod]
    #[pyo3(signature = (data, augmentation, points, seed=0))]
    fn build(data: &PyDataset, augmentation: &str, points: usize, seed: u64) -> PyResult<Self> {
        let aug = augmenter(augmentation, &data.0)?;
        gate::build_index(
            &data.0,
            augmentation,
            points,
            seed,
            aug.as_ref().map(|a| a as _),
        )
        .map(Self)
        .map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        SignatureIndex::load(path).map(Self).map_err(err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(path).map_err(err)
    }

    #[getter]
    fn augmentation(&self) -> String {
        self.0.augmentation_id.clone()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    /// Distance from the batch's mean signature to the nearest stored point.
    fn d_ss(&self, images: Vec<f32>, shape: Vec<usize>) -> PyResult<f64> {
        gate::d_ss(&self.0, &tensor(images, shape)?).map_err(err)
    }
}

/// Augmentations whose index is nearest to the batch, and every distance.
#[pyfunction]
fn select(
    py: Python<'_>,
    indexes: Vec<PyIndex>,
    images: Vec<f32>,
    shape: Vec<usize>,
) -> PyResult<Py<PyAny>> {
    let idx: Vec<SignatureIndex> = indexes.into_iter().map(|i| i.0).collect();
    let d = gate::select(&idx, &tensor(images, shape)?).map_err(err)?;
    to_dict(py, &d)
}

#[pyclass(name = "Deck", module = "carddeck")]
struct PyDeck(Deck);

#[pymethods]
impl PyDeck {
    /// `cards` holds `(network, augmentation, method)` triples.
    #[new]
    #[pyo3(signature = (cards, gate=None))]
    fn new(cards: Vec<(PyNetwork, String, String)>, gate: Option<Vec<PyIndex>>) -> PyResult<Self> {
        let cards = cards
            .into_iter()
            .map(|(n, aug, m)| {
                Ok(Card::new(
                    n.0,
                    aug,
                    parse(&m, "method")?,
                    PruneScope::Global,
                ))
            })
            .collect::<PyResult<Vec<_>>>()?;
        let gate = gate.map(|g| g.into_iter().map(|i| i.0).collect());
        Deck::new(cards, gate).map(Self).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.0.cards().len()
    }

    #[getter]
    fn memory_bits(&self) -> u64 {
        self.0.memory_bits()
    }

    #[getter]
    fn forward_passes(&self) -> usize {
        self.0.forward_passes()
    }

    fn reset_counter(&self) {
        self.0.reset_counter()
    }

    /// Averaged probabilities and the augmentations the gate picked.
    #[pyo3(signature = (images, shape, mode="agnostic"))]
    fn predict(
        &self,
        images: Vec<f32>,
        shape: Vec<usize>,
        mode: &str,
    ) -> PyResult<(Vec<Vec<f32>>, Vec<String>)> {
        let mode: DeckMode = parse(mode, "deck mode")?;
        let (out, d) = self.0.predict(mode, &tensor(images, shape)?).map_err(err)?;
        let rows = out
            .data()
            .chunks(out.row_len())
            .map(<[f32]>::to_vec)
            .collect();
        Ok((rows, d.map(|d| d.selected).unwrap_or_default()))
    }

    /// Clean and corrupted accuracy over the severities given.
    #[pyo3(signature = (test, mode="agnostic", severities=vec![1, 2, 3, 4, 5], batch=32, seed=0))]
    fn evaluate(
        &self,
        py: Python<'_>,
        test: &PyDataset,
        mode: &str,
        severities: Vec<u8>,
        batch: usize,
        seed: u64,
    ) -> PyResult<Py<PyAny>> {
        let mode: DeckMode = parse(mode, "deck mode")?;
        let report = py
            .detach(|| {
                let suite = corrupted_suite(&test.0, (-1.0, 1.0), &severities, seed)?;
                evaluate_deck(&self.0, mode, &test.0, &suite, batch)
            })
            .map_err(err)?;
        to_dict(py, &report)
    }
}

/// `(cells, computed, failures)`.
type GridRun = (usize, usize, Vec<(String, String)>);

/// Run a TOML experiment grid into `out`.
#[pyfunction]
fn run_grid(py: Python<'_>, config: &str, out: PathBuf) -> PyResult<GridRun> {
    let cfg = GridConfig::from_toml(config).map_err(err)?;
    let s = py.detach(|| run_experiment(&cfg, &out)).map_err(err)?;
    Ok((s.cells, s.computed, s.failures))
}

#[pymodule]
#[pyo3(name = "carddeck")]
fn carddeck_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNetwork>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyIndex>()?;
    m.add_class::<PyDeck>()?;
    m.add_function(wrap_pyfunction!(synthetic_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(prune, m)?)?;
    m.add_function(wrap_pyfunction!(gmp_sparsity, m)?)?;
    m.add_function(wrap_pyfunction!(radial_power_spectrum, m)?)?;
    m.add_function(wrap_pyfunction!(signature, m)?)?;
    m.add_function(wrap_pyfunction!(heatmap, m)?)?;
    m.add_function(wrap_pyfunction!(select, m)?)?;
    m.add_function(wrap_pyfunction!(run_grid, m)?)?;
    Ok(())
}
