//! Python bindings: point sets, network configuration, training,
//! prediction and mesh extraction.

use std::path::PathBuf;

use pyo3::exceptions::{PyFileNotFoundError, PyIOError, PyValueError};
use pyo3::prelude::*;

use neusurf::checkpoint::Checkpoint;
use neusurf::grad::{frobenius_norm, mse_loss, norm_stability};
use neusurf::isosurface::{
    evaluate_grid, export_mesh, marching_cubes, mesh_metrics, topology, MeshFormat, Reference,
    TriangleMesh,
};
use neusurf::linalg::Matrix;
use neusurf::network::{init_params, predict};
use neusurf::optim::{train, LbfgsOptions, Snapshot, TrainOptions};
use neusurf::pointset::{
    label_points, read_labeled, synth_sphere_with_exterior, write_labeled, Category, LabeledPoint,
    Point3,
};

fn to_py(e: neusurf::Error) -> PyErr {
    match e {
        neusurf::Error::FileNotFound(p) | neusurf::Error::MissingArtifact(p) => {
            PyFileNotFoundError::new_err(p.display().to_string())
        }
        neusurf::Error::Io(e) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn points_of(raw: Vec<(f64, f64, f64)>) -> Vec<Point3> {
    raw.into_iter().map(|(x, y, z)| Point3::new(x, y, z)).collect()
}

fn tuples(points: &[Point3]) -> Vec<(f64, f64, f64)> {
    points.iter().map(|p| (p.x, p.y, p.z)).collect()
}

#[pyclass(name = "NetworkConfig", frozen)]
struct PyNetworkConfig {
    inner: neusurf::NetworkConfig,
}

#[pymethods]
impl PyNetworkConfig {
    #[new]
    #[pyo3(signature = (kind, hidden_layers=5, width=50, skip_period=2, seed=0))]
    fn new(kind: &str, hidden_layers: usize, width: usize, skip_period: usize, seed: u64) -> PyResult<Self> {
        let kind = kind.parse().map_err(to_py)?;
        let inner = neusurf::NetworkConfig {
            skip_period,
            ..neusurf::NetworkConfig::surface(kind, hidden_layers, width, seed)
        };
        inner.validate().map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind.name()
    }

    #[getter]
    fn hidden_layers(&self) -> usize {
        self.inner.hidden_layers
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width
    }

    #[getter]
    fn skip_period(&self) -> usize {
        self.inner.skip_period
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.inner.num_params()
    }

    fn __repr__(&self) -> String {
        let c = &self.inner;
        format!(
            "NetworkConfig(kind='{}', hidden_layers={}, width={}, skip_period={}, seed={})",
            c.kind, c.hidden_layers, c.width, c.skip_period, c.seed
        )
    }
}

#[pyclass(name = "PointSet", frozen)]
struct PyPointSet {
    inner: neusurf::PointSet,
}

#[pymethods]
impl PyPointSet {
    /// Builds a set from surface, interior and exterior coordinates.
    #[new]
    #[pyo3(signature = (surface, interior=vec![], exterior=vec![]))]
    fn new(
        surface: Vec<(f64, f64, f64)>,
        interior: Vec<(f64, f64, f64)>,
        exterior: Vec<(f64, f64, f64)>,
    ) -> PyResult<Self> {
        let inner = label_points(&points_of(surface), &points_of(interior), &points_of(exterior))
            .map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (n_s=200, n_i=20, n_e=0, radius=1.0, seed=0))]
    fn sphere(n_s: usize, n_i: usize, n_e: usize, radius: f64, seed: u64) -> PyResult<Self> {
        Ok(Self { inner: synth_sphere_with_exterior(n_s, n_i, n_e, radius, seed).map_err(to_py)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: read_labeled(path).map_err(to_py)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        write_labeled(path, &self.inner).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// (surface, interior, exterior) counts.
    fn counts(&self) -> (usize, usize, usize) {
        (self.inner.n_surface(), self.inner.n_interior(), self.inner.n_exterior())
    }

    fn positions(&self) -> Vec<(f64, f64, f64)> {
        tuples(&self.inner.positions())
    }

    fn labels(&self) -> Vec<i8> {
        self.inner.points().iter().map(LabeledPoint::label).collect()
    }

    fn normalized(&self) -> PyResult<Self> {
        Ok(Self { inner: self.inner.normalized().map_err(to_py)? })
    }

    fn surface(&self) -> Vec<(f64, f64, f64)> {
        tuples(&self.inner.positions_of(Category::Surface))
    }
}

/// A network with its parameters and the input frame it was trained in.
#[pyclass(name = "Model", frozen)]
struct PyModel {
    inner: Checkpoint,
}

#[pymethods]
impl PyModel {
    /// Untrained network with initial parameters over `[-1, 1]^3`.
    #[staticmethod]
    fn initial(config: PyRef<'_, PyNetworkConfig>) -> PyResult<Self> {
        let params = init_params(&config.inner).map_err(to_py)?;
        Ok(Self {
            inner: Checkpoint {
                config: config.inner.clone(),
                params,
                normalization: Default::default(),
                bounds: neusurf::pointset::Aabb::cube(1.0),
            },
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: Checkpoint::load(path).map_err(to_py)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    /// Field values at points given in input coordinates.
    fn predict(&self, points: Vec<(f64, f64, f64)>) -> PyResult<Vec<f64>> {
        if points.is_empty() {
            return Ok(Vec::new());
        }
        let n = self.inner.normalization;
        let pts: Vec<Point3> = points_of(points).into_iter().map(|p| n.apply(p)).collect();
        let batch = Matrix::from_fn(3, pts.len(), |r, c| pts[c].to_array()[r]);
        let out = predict(&self.inner.config, &self.inner.params, &batch).map_err(to_py)?;
        Ok(out.into_vec())
    }

    /// Zero level set on a grid over the training bounds plus a 10% margin,
    /// in input coordinates.
    #[pyo3(signature = (resolution=64))]
    fn reconstruct(&self, resolution: usize) -> PyResult<PyMesh> {
        let c = &self.inner;
        let bounds = c.bounds.inflated(0.1);
        let field =
            evaluate_grid(&c.config, &c.params, bounds, [resolution; 3]).map_err(to_py)?;
        let mut mesh = marching_cubes(&field, 0.0);
        let n = c.normalization;
        mesh.map_vertices(|p| n.invert(p));
        Ok(PyMesh { inner: mesh })
    }

    #[getter]
    fn frobenius_norm(&self) -> f64 {
        frobenius_norm(&self.inner.params)
    }

    #[getter]
    fn config(&self) -> PyNetworkConfig {
        PyNetworkConfig { inner: self.inner.config.clone() }
    }
}

#[pyclass(name = "TrainResult", frozen, get_all)]
struct PyTrainResult {
    model: Py<PyModel>,
    epochs: usize,
    termination: String,
    initial_loss: f64,
    final_loss: f64,
    losses: Vec<f64>,
    norms: Vec<f64>,
}

/// Full-batch L-BFGS training; the point set is rescaled into `[-1, 1]^3`
/// first unless `normalize` is false.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (config, points, epochs=1000, grad_tol=1e-8, loss_tol=1e-10, memory=10, normalize=true))]
fn train_model(
    py: Python<'_>,
    config: PyRef<'_, PyNetworkConfig>,
    points: PyRef<'_, PyPointSet>,
    epochs: usize,
    grad_tol: f64,
    loss_tol: f64,
    memory: usize,
    normalize: bool,
) -> PyResult<PyTrainResult> {
    let data = if normalize { points.inner.normalized().map_err(to_py)? } else { points.inner.clone() };
    let opts = TrainOptions {
        lbfgs: LbfgsOptions { max_epochs: epochs, grad_tol, loss_tol, memory, ..Default::default() },
        snapshots: vec![Snapshot::Last],
        histogram_bins: 50,
    };
    let config = config.inner.clone();
    let report = py.detach(|| train(&config, &data, &opts)).map_err(to_py)?;
    let bounds = data
        .bbox()
        .ok_or_else(|| PyValueError::new_err("point set is empty"))?;
    let model = PyModel {
        inner: Checkpoint { config, params: report.params, normalization: data.normalization(), bounds },
    };
    Ok(PyTrainResult {
        model: Py::new(py, model)?,
        epochs: report.epochs,
        termination: format!("{:?}", report.termination),
        initial_loss: report.initial_loss,
        final_loss: report.final_loss,
        losses: report.log.losses(),
        norms: report.log.norms(),
    })
}

#[pyclass(name = "Mesh", frozen)]
struct PyMesh {
    inner: TriangleMesh,
}

#[pymethods]
impl PyMesh {
    #[getter]
    fn vertices(&self) -> Vec<(f64, f64, f64)> {
        tuples(&self.inner.vertices)
    }

    #[getter]
    fn triangles(&self) -> Vec<(u32, u32, u32)> {
        self.inner.triangles.iter().map(|t| (t[0], t[1], t[2])).collect()
    }

    #[getter]
    fn watertight(&self) -> bool {
        topology(&self.inner).is_watertight()
    }

    #[getter]
    fn euler_characteristic(&self) -> i64 {
        topology(&self.inner).euler_characteristic()
    }

    fn __len__(&self) -> usize {
        self.inner.triangles.len()
    }

    /// Mean and max distance of the vertices from a sphere about the origin.
    fn sphere_error(&self, radius: f64) -> PyResult<(f64, f64)> {
        let m = mesh_metrics(&self.inner, &Reference::SphereRadius(radius)).map_err(to_py)?;
        Ok((m.mean_error, m.max_error))
    }

    #[pyo3(signature = (path, format="obj"))]
    fn export(&self, path: PathBuf, format: &str) -> PyResult<()> {
        let fmt: MeshFormat = format.parse().map_err(to_py)?;
        export_mesh(&self.inner, path, fmt).map_err(to_py)
    }
}

#[pyfunction]
fn mse(predictions: Vec<f64>, labels: Vec<f64>) -> PyResult<f64> {
    mse_loss(&predictions, &labels).map_err(to_py)
}

/// Std over mean of the last 10% of a weight-norm trace.
#[pyfunction(name = "norm_stability")]
fn py_norm_stability(norms: Vec<f64>) -> f64 {
    norm_stability(&norms)
}

#[pymodule]
fn neusurf_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNetworkConfig>()?;
    m.add_class::<PyPointSet>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyTrainResult>()?;
    m.add_class::<PyMesh>()?;
    m.add_function(wrap_pyfunction!(train_model, m)?)?;
    m.add_function(wrap_pyfunction!(mse, m)?)?;
    m.add_function(wrap_pyfunction!(py_norm_stability, m)?)?;
    Ok(())
}
