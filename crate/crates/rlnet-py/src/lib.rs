//! Python bindings for the deraining crate: the schedule table, image
//! metrics, rain synthesis and a Network class. Images cross the boundary
//! as flat row-major f64 lists plus a (channels, height, width) shape, so
//! `numpy.asarray(pixels).reshape(shape)` recovers them with no copies on
//! the Python side beyond the list itself.

use ndarray::Array3;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use rlnet::data::{Image, RainParams};
use rlnet::network::{variant, AblationConfig, RlNet, VARIANT_NAMES};
use std::path::PathBuf;

fn py_err(e: rlnet::error::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_image(pixels: Vec<f64>, shape: (usize, usize, usize)) -> PyResult<Image> {
    let (c, h, w) = shape;
    if c != 3 {
        return Err(PyValueError::new_err(format!(
            "images are (3, height, width), got {c} channels"
        )));
    }
    if pixels.len() != c * h * w {
        return Err(PyValueError::new_err(format!(
            "shape ({c}, {h}, {w}) needs {} values, got {}",
            c * h * w,
            pixels.len()
        )));
    }
    Array3::from_shape_vec((c, h, w), pixels).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn flatten(img: &Image) -> Vec<f64> {
    img.iter().copied().collect()
}

/// The full two-stage hyperparameter schedule as CSV text. `desk_scale`
/// in (0, 1] compresses both stages while keeping every annealing event.
#[pyfunction]
#[pyo3(signature = (desk_scale=1.0))]
fn schedule_csv(desk_scale: f64) -> PyResult<String> {
    if !(desk_scale > 0.0 && desk_scale <= 1.0) {
        return Err(PyValueError::new_err(format!(
            "desk_scale must be in (0, 1], got {desk_scale}"
        )));
    }
    Ok(rlnet::schedule::schedule_csv(desk_scale))
}

/// Peak signal-to-noise ratio in dB over all channels jointly, unit dynamic
/// range, capped at 100 for identical images.
#[pyfunction]
fn psnr(a: Vec<f64>, b: Vec<f64>, shape: (usize, usize, usize)) -> PyResult<f64> {
    let a = to_image(a, shape)?;
    let b = to_image(b, shape)?;
    rlnet::eval::psnr(&a, &b).map_err(py_err)
}

/// Mean SSIM over valid 11x11 Gaussian windows, averaged across channels.
#[pyfunction]
fn ssim(a: Vec<f64>, b: Vec<f64>, shape: (usize, usize, usize)) -> PyResult<f64> {
    let a = to_image(a, shape)?;
    let b = to_image(b, shape)?;
    rlnet::eval::ssim_metric(&a, &b).map_err(py_err)
}

/// Draw rain streaks over a clean image. Returns (rainy, residual) as flat
/// lists with the input shape; rainy == clip(clean + residual, 0, 1).
#[pyfunction]
#[pyo3(signature = (clean, shape, seed=0, streak_count=None, intensity=None))]
fn synthesize_rain(
    clean: Vec<f64>,
    shape: (usize, usize, usize),
    seed: u64,
    streak_count: Option<usize>,
    intensity: Option<(f64, f64)>,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let clean = to_image(clean, shape)?;
    let mut params = RainParams { seed, ..RainParams::default() };
    if let Some(n) = streak_count {
        params.streak_count = n;
    }
    if let Some(range) = intensity {
        params.intensity = range;
    }
    let sample = rlnet::data::synthesize_rain(&clean, &params).map_err(py_err)?;
    Ok((flatten(&sample.rainy), flatten(&sample.residual)))
}

/// Match a loaded config back to its lattice name; configs assembled from
/// individual flags fall back to "custom".
fn variant_name(cfg: &AblationConfig) -> String {
    for name in VARIANT_NAMES {
        let v = variant(name).expect("lattice names are valid");
        if (v.use_ffrb, v.use_multistream, v.use_embedding, v.use_detector, v.use_le2, v.use_compensator)
            == (cfg.use_ffrb, cfg.use_multistream, cfg.use_embedding, cfg.use_detector, cfg.use_le2, cfg.use_compensator)
        {
            return name.to_string();
        }
    }
    "custom".to_string()
}

/// A deraining network. Construction is deterministic in the seed; spatial
/// dimensions of inputs must be multiples of 32. The graph uses unsynchronized
/// reference counting internally, so instances stay on their creating thread.
#[pyclass(unsendable)]
struct Network {
    model: RlNet,
}

#[pymethods]
impl Network {
    #[new]
    #[pyo3(signature = (variant_name="M7", width=8, seed=0))]
    fn new(variant_name: &str, width: usize, seed: u64) -> PyResult<Network> {
        let cfg = variant(variant_name).map_err(py_err)?.with_width(width);
        let model = RlNet::new(&cfg, seed).map_err(py_err)?;
        Ok(Network { model })
    }

    /// Remove rain: returns clip(rainy - predicted residual, 0, 1) as a
    /// flat list with the input shape.
    fn derain(&self, pixels: Vec<f64>, shape: (usize, usize, usize)) -> PyResult<Vec<f64>> {
        let img = to_image(pixels, shape)?;
        let clean = self.model.derain(&img).map_err(py_err)?;
        Ok(flatten(&clean))
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.model.save(&path).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Network> {
        Ok(Network { model: RlNet::load(&path).map_err(py_err)? })
    }

    #[getter]
    fn variant(&self) -> String {
        variant_name(&self.model.cfg)
    }

    #[getter]
    fn width(&self) -> usize {
        self.model.cfg.block.base_channels
    }

    fn parameter_count(&self) -> usize {
        self.model.params().iter().map(|(_, t)| t.value().len()).sum()
    }

    fn __repr__(&self) -> String {
        format!(
            "Network(variant='{}', width={}, parameters={})",
            self.variant(),
            self.width(),
            self.parameter_count()
        )
    }
}

#[pymodule]
fn rlnet_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(schedule_csv, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize_rain, m)?)?;
    m.add_class::<Network>()?;
    Ok(())
}
