//! Python bindings: meshes, the synthetic benchmark, segmentation, baselines,
//! metrics, label files and the gradient suite.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use texseg::eval::{self, BaselineMethod, Mask, Pattern, SynthSpec};
use texseg::labels::{read_labels, write_labels};
use texseg::mesh::{self, MeshFormat};
use texseg::models::{gradient_suite, ModelPair};
use texseg::pipeline::{self, PipelineError};
use texseg::trainer::{variant_config, IpcMethod};
use texseg::LabelState;

fn value_err(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn pipeline_err(e: PipelineError) -> PyErr {
    match e {
        PipelineError::Mesh(m) => PyIOError::new_err(m.to_string()),
        other => value_err(other),
    }
}

/// Triangle mesh.
#[pyclass(name = "Mesh", module = "pytexseg", skip_from_py_object)]
#[derive(Clone)]
pub struct PyMesh {
    inner: texseg::Mesh,
}

#[pymethods]
impl PyMesh {
    #[new]
    fn new(vertices: Vec<[f64; 3]>, facets: Vec<[usize; 3]>) -> PyResult<Self> {
        let v = vertices.into_iter().map(|[x, y, z]| nalgebra::Point3::new(x, y, z)).collect();
        texseg::Mesh::new(v, facets).map(|inner| Self { inner }).map_err(value_err)
    }

    /// Loads an OBJ or PLY file; `format` is "obj", "ply" or "auto".
    #[staticmethod]
    #[pyo3(signature = (path, format = "auto"))]
    fn load(path: &str, format: &str) -> PyResult<Self> {
        let fmt: MeshFormat = format.parse().map_err(value_err)?;
        mesh::load_mesh(path, fmt)
            .map(|inner| Self { inner })
            .map_err(|e| PyIOError::new_err(e.to_string()))
    }

    fn save_obj(&self, path: &str) -> PyResult<()> {
        mesh::write_obj(&self.inner, path).map_err(|e| PyIOError::new_err(e.to_string()))
    }

    fn save_ply(&self, path: &str) -> PyResult<()> {
        mesh::write_ply(&self.inner, path).map_err(|e| PyIOError::new_err(e.to_string()))
    }

    /// Writes a PLY with per-facet label colours.
    fn save_labeled_ply(&self, labels: Vec<i8>, path: &str) -> PyResult<()> {
        if labels.len() != self.inner.facet_count() {
            return Err(value_err(format!(
                "{} labels for {} facets",
                labels.len(),
                self.inner.facet_count()
            )));
        }
        mesh::write_labeled_ply(&self.inner, &LabelState::from_labels(labels), path)
            .map_err(|e| PyIOError::new_err(e.to_string()))
    }

    #[getter]
    fn vertex_count(&self) -> usize {
        self.inner.vertex_count()
    }

    #[getter]
    fn facet_count(&self) -> usize {
        self.inner.facet_count()
    }

    fn vertices(&self) -> Vec<[f64; 3]> {
        self.inner.vertices().iter().map(|p| [p.x, p.y, p.z]).collect()
    }

    fn facets(&self) -> Vec<[usize; 3]> {
        self.inner.facets().to_vec()
    }

    fn __repr__(&self) -> String {
        format!("Mesh(vertices={}, facets={})", self.inner.vertex_count(), self.inner.facet_count())
    }
}

/// Segmentation settings. Unset keyword arguments keep the library defaults.
#[pyclass(name = "SegmentConfig", module = "pytexseg", skip_from_py_object)]
#[derive(Clone, Default)]
pub struct PyConfig {
    inner: pipeline::SegmentConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (*, grid = None, dim = None, tokens = None, seed = None, max_epochs = None,
        clusters = None, ipc = None, batch_size = None, beta_c = None, lr = None, pair = None,
        variant = None, generator_steps = None, cleaner_steps = None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        grid: Option<usize>,
        dim: Option<usize>,
        tokens: Option<usize>,
        seed: Option<u64>,
        max_epochs: Option<usize>,
        clusters: Option<usize>,
        ipc: Option<&str>,
        batch_size: Option<usize>,
        beta_c: Option<f64>,
        lr: Option<f64>,
        pair: Option<&str>,
        variant: Option<&str>,
        generator_steps: Option<usize>,
        cleaner_steps: Option<usize>,
    ) -> PyResult<Self> {
        let mut c = pipeline::SegmentConfig::default();
        if let Some(v) = grid {
            c.patch.grid = v;
        }
        if let Some(v) = dim {
            c.dim = v;
        }
        if let Some(v) = tokens {
            c.tokens.tokens = v;
        }
        let t = &mut c.train;
        if let Some(v) = seed {
            t.seed = v;
        }
        if let Some(v) = max_epochs {
            t.max_epochs = v;
        }
        if let Some(v) = clusters {
            t.clusters = v;
        }
        if let Some(v) = ipc {
            t.ipc_method = v.parse::<IpcMethod>().map_err(value_err)?;
        }
        if let Some(v) = batch_size {
            t.batch_size = v;
        }
        if let Some(v) = beta_c {
            t.beta_c = v;
        }
        if let Some(v) = lr {
            t.adam.lr = v;
        }
        if let Some(v) = generator_steps {
            t.generator_steps = v;
        }
        if let Some(v) = cleaner_steps {
            t.cleaner_steps = v;
        }
        match pair {
            None => {}
            Some("transformer") => t.pair = ModelPair::Transformer,
            Some("dense") => t.pair = ModelPair::Dense,
            Some(other) => return Err(value_err(format!("unknown model pair {other:?}"))),
        }
        if let Some(v) = variant {
            c.train = variant_config(v, &c.train).map_err(value_err)?;
        }
        c.validate().map_err(value_err)?;
        Ok(Self { inner: c })
    }

    #[getter]
    fn grid(&self) -> usize {
        self.inner.patch.grid
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.train.seed
    }

    #[getter]
    fn max_epochs(&self) -> usize {
        self.inner.train.max_epochs
    }

    #[getter]
    fn beta_c(&self) -> f64 {
        self.inner.train.beta_c
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

/// Result of a segmentation run.
#[pyclass(name = "Segmentation", module = "pytexseg", get_all)]
pub struct PySegmentation {
    /// Per-facet labels: 1 texture, 0 non-texture, -1 excluded.
    labels: Vec<i8>,
    excluded: usize,
    converged: bool,
    epochs: usize,
    /// `(epoch, generator loss, cleaner loss, texture count, change fraction)`
    history: Vec<(usize, Option<f64>, Option<f64>, usize, f64)>,
}

#[pyclass(name = "Metrics", module = "pytexseg", get_all)]
pub struct PyMetrics {
    precision: f64,
    recall: f64,
    f1: f64,
    miou: f64,
}

#[pymethods]
impl PyMetrics {
    fn __repr__(&self) -> String {
        format!(
            "Metrics(precision={:.4}, recall={:.4}, f1={:.4}, miou={:.4})",
            self.precision, self.recall, self.f1, self.miou
        )
    }
}

/// Planar grid with a displaced textured region. Returns the mesh and its
/// ground-truth labels.
#[pyfunction]
#[pyo3(signature = (side = 64, pattern = "sine", mask = "half-plane", amplitude = None, frequency = None, seed = 0))]
fn synth_mesh(
    side: usize,
    pattern: &str,
    mask: &str,
    amplitude: Option<f64>,
    frequency: Option<f64>,
    seed: u64,
) -> PyResult<(PyMesh, Vec<i8>)> {
    let mut spec = SynthSpec {
        side,
        pattern: pattern.parse::<Pattern>().map_err(value_err)?,
        mask: mask.parse::<Mask>().map_err(value_err)?,
        seed,
        ..SynthSpec::default()
    };
    if let Some(a) = amplitude {
        spec.amplitude = a;
    }
    if let Some(f) = frequency {
        spec.frequency = f;
    }
    let (m, gt) = eval::synth_textured_mesh(&spec).map_err(value_err)?;
    Ok((PyMesh { inner: m }, gt.labels().to_vec()))
}

/// Unsupervised texture segmentation of a mesh.
#[pyfunction]
#[pyo3(signature = (mesh, config = None))]
fn segment(py: Python<'_>, mesh: &PyMesh, config: Option<&PyConfig>) -> PyResult<PySegmentation> {
    let cfg = config.map(|c| c.inner.clone()).unwrap_or_default();
    let m = mesh.inner.clone();
    let seg = py
        .detach(move || pipeline::segment_mesh(&m, &cfg, &mut |_| {}))
        .map_err(pipeline_err)?;
    Ok(PySegmentation {
        labels: seg.labels.labels().to_vec(),
        excluded: seg.excluded,
        converged: seg.outcome.converged,
        epochs: seg.outcome.records.len(),
        history: seg
            .outcome
            .records
            .iter()
            .map(|r| (r.epoch, r.tlg_loss, r.tlc_loss, r.texture, r.change_fraction))
            .collect(),
    })
}

/// Two-cluster baseline on the same frozen features: "kmeans2", "gmm2" or
/// "dbscan".
#[pyfunction]
#[pyo3(signature = (mesh, method = "kmeans2", config = None, eps = 1.0, min_pts = 5))]
fn baseline(mesh: &PyMesh, method: &str, config: Option<&PyConfig>, eps: f64, min_pts: usize) -> PyResult<Vec<i8>> {
    let cfg = config.map(|c| c.inner.clone()).unwrap_or_default();
    let method = match method {
        "kmeans2" => BaselineMethod::KMeans2,
        "gmm2" => BaselineMethod::Gmm2,
        "dbscan" => BaselineMethod::Dbscan { eps, min_pts },
        other => return Err(value_err(format!("unknown baseline {other:?}"))),
    };
    let (features, _) = pipeline::mesh_features(&mesh.inner, &cfg).map_err(pipeline_err)?;
    let labels = eval::baseline_segment(&features, mesh.inner.facet_count(), method, cfg.train.seed)
        .map_err(value_err)?;
    Ok(labels.labels().to_vec())
}

/// Metrics of `pred` against `truth`; excluded facets on either side are
/// skipped. With `align`, the prediction is flipped first if that agrees
/// better with the truth.
#[pyfunction]
#[pyo3(signature = (pred, truth, align = false))]
fn evaluate(pred: Vec<i8>, truth: Vec<i8>, align: bool) -> PyResult<PyMetrics> {
    let mut p = LabelState::from_labels(pred);
    let t = LabelState::from_labels(truth);
    if align {
        p = eval::align_to_truth(&p, &t).map_err(value_err)?.0;
    }
    let m = eval::evaluate(&p, &t).map_err(value_err)?;
    Ok(PyMetrics {
        precision: m.precision,
        recall: m.recall,
        f1: m.f1,
        miou: m.miou,
    })
}

#[pyfunction]
fn load_labels(path: &str) -> PyResult<Vec<i8>> {
    read_labels(path)
        .map(|l| l.labels().to_vec())
        .map_err(|e| PyIOError::new_err(e.to_string()))
}

#[pyfunction]
fn save_labels(labels: Vec<i8>, path: &str) -> PyResult<()> {
    write_labels(&LabelState::from_labels(labels), path).map_err(|e| PyIOError::new_err(e.to_string()))
}

/// Finite-difference checks of the model building blocks and both losses.
/// Returns `(name, max relative error, coordinates)` per entry.
#[pyfunction]
#[pyo3(signature = (samples = 100, seed = 0))]
fn gradcheck(samples: usize, seed: u64) -> PyResult<Vec<(String, f64, usize)>> {
    let suite = gradient_suite(samples, seed).map_err(value_err)?;
    Ok(suite
        .into_iter()
        .map(|e| (e.name.to_string(), e.max_rel_error, e.coordinates))
        .collect())
}

/// Runs the command-line tool in-process. Returns `(exit code, stdout,
/// stderr)`.
#[pyfunction]
fn run_cli(args: Vec<String>) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let argv = std::iter::once("texseg".to_string()).chain(args);
    let code = texseg::cli::run_cli(argv, &mut out, &mut err);
    (
        code,
        String::from_utf8_lossy(&out).into_owned(),
        String::from_utf8_lossy(&err).into_owned(),
    )
}

#[pymodule]
fn pytexseg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMesh>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PySegmentation>()?;
    m.add_class::<PyMetrics>()?;
    m.add_function(wrap_pyfunction!(synth_mesh, m)?)?;
    m.add_function(wrap_pyfunction!(segment, m)?)?;
    m.add_function(wrap_pyfunction!(baseline, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(load_labels, m)?)?;
    m.add_function(wrap_pyfunction!(save_labels, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    m.add("VARIANTS", texseg::trainer::VARIANTS.to_vec())?;
    Ok(())
}
