//! Python bindings: clips, channels, the noise schedule, models, training
//! and simulation.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use wvsc_core::channel::{snr_to_sigma2, ChannelRealization};
use wvsc_core::data::{self, MotionSpec, VideoClip};
use wvsc_core::diffusion::NoiseSchedule;
use wvsc_core::metrics::{self, MsSsimOptions};
use wvsc_core::models::Wvsc;
use wvsc_core::pipeline::{self, Compensation, ExperimentConfig, FrameRecord, SimulationConfig, Stage};
use wvsc_core::rng::seeded;
use wvsc_core::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::InvalidArgument(_) | Error::Config(_) | Error::Format(_) => PyValueError::new_err(e.to_string()),
        Error::Io(_) => PyOSError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Experiment configuration, built from TOML text or defaults.
#[pyclass(name = "Config", module = "wvsc")]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (toml = None))]
    fn new(toml: Option<&str>) -> PyResult<Self> {
        let inner = match toml {
            Some(t) => ExperimentConfig::from_toml(t).map_err(py_err)?,
            None => ExperimentConfig::default(),
        };
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: ExperimentConfig::load(&path).map_err(py_err)? })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.model.width
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.model.height
    }
}

/// Raw RGB video clip.
#[pyclass(name = "Clip", module = "wvsc", frozen)]
struct PyClip {
    inner: VideoClip,
}

#[pymethods]
impl PyClip {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: data::read_clip(&path).map_err(py_err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        data::write_clip(&self.inner, &path).map_err(py_err)
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height
    }

    fn __len__(&self) -> usize {
        self.inner.frame_count
    }

    /// Planar RGB bytes of frame `i`.
    fn frame<'py>(&self, py: Python<'py>, i: usize) -> PyResult<Bound<'py, PyBytes>> {
        if i >= self.inner.frame_count {
            return Err(PyValueError::new_err(format!("frame {i} out of range")));
        }
        Ok(PyBytes::new(py, self.inner.frame(i)))
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, self.inner.as_bytes())
    }

    fn __repr__(&self) -> String {
        format!("Clip({}x{}, {} frames)", self.inner.width, self.inner.height, self.inner.frame_count)
    }
}

/// Synthetic clip from a motion spec such as `"rect:2,0:gradient"`.
#[pyfunction]
#[pyo3(signature = (motion, width, height, frames, seed = 0))]
fn generate_clip(motion: &str, width: usize, height: usize, frames: usize, seed: u64) -> PyResult<PyClip> {
    let spec = MotionSpec { seed, ..motion.parse::<MotionSpec>().map_err(py_err)? };
    Ok(PyClip { inner: data::generate_clip(&spec, width, height, frames).map_err(py_err)? })
}

/// Rayleigh block-fading realization with MMSE equalizer gains.
#[pyclass(name = "Channel", module = "wvsc", frozen)]
struct PyChannel {
    inner: ChannelRealization,
}

#[pymethods]
impl PyChannel {
    #[new]
    #[pyo3(signature = (length, snr_db, seed = 0))]
    fn new(length: usize, snr_db: f64, seed: u64) -> PyResult<Self> {
        let inner = ChannelRealization::sample(&mut seeded(seed), length, snr_to_sigma2(snr_db)).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn sigma2(&self) -> f64 {
        self.inner.sigma2()
    }

    #[getter]
    fn hs(&self) -> Vec<f64> {
        self.inner.hs().to_vec()
    }

    #[getter]
    fn hn(&self) -> Vec<f64> {
        self.inner.hn().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Linear-beta diffusion schedule.
#[pyclass(name = "Schedule", module = "wvsc", frozen)]
struct PySchedule {
    inner: NoiseSchedule,
}

#[pymethods]
impl PySchedule {
    #[new]
    #[pyo3(signature = (total_steps = 1000, beta_start = 1e-4, beta_end = 0.02))]
    fn new(total_steps: usize, beta_start: f64, beta_end: f64) -> PyResult<Self> {
        Ok(Self { inner: NoiseSchedule::linear(total_steps, beta_start, beta_end).map_err(py_err)? })
    }

    fn alpha_bar(&self, t: usize) -> PyResult<f64> {
        if t > self.inner.total_steps() {
            return Err(PyValueError::new_err(format!("t = {t} exceeds {}", self.inner.total_steps())));
        }
        Ok(self.inner.alpha_bar(t))
    }

    /// Step whose cumulative signal level best matches the channel noise.
    fn start_step(&self, sigma2: f64) -> usize {
        self.inner.find_start_step(sigma2)
    }
}

fn record_dict<'py>(py: Python<'py>, r: &FrameRecord) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("gop", r.gop)?;
    d.set_item("frame", r.frame)?;
    d.set_item("role", format!("{:?}", r.role))?;
    d.set_item("psnr_db", r.psnr_db)?;
    d.set_item("ms_ssim", r.ms_ssim)?;
    d.set_item("snr_db", r.snr_db)?;
    d.set_item("m", r.m)?;
    d.set_item("lambda", r.lambda)?;
    d.set_item("k", r.k)?;
    d.set_item("seed", r.seed)?;
    Ok(d)
}

/// Transmitter and receiver networks.
#[pyclass(name = "Model", module = "wvsc")]
struct PyModel {
    inner: Wvsc,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (config = None))]
    fn new(config: Option<&PyConfig>) -> PyResult<Self> {
        let cfg = config.map(|c| c.inner.model).unwrap_or_default();
        Ok(Self { inner: Wvsc::new(cfg).map_err(py_err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: Wvsc::load(&path).map_err(py_err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(py_err)
    }

    /// Highest training stage completed so far (0 for a fresh model).
    #[getter]
    fn stage(&self) -> u8 {
        pipeline::completed_stage(&self.inner)
    }

    /// Runs one training stage and returns the per-step losses.
    fn train(&mut self, stage: u8, clips: Vec<PyRef<'_, PyClip>>, config: &PyConfig) -> PyResult<Vec<f64>> {
        let stage = Stage::try_from(stage).map_err(py_err)?;
        let clips: Vec<VideoClip> = clips.iter().map(|c| c.inner.clone()).collect();
        let report = pipeline::train_stage(&mut self.inner, stage, &clips, &config.inner).map_err(py_err)?;
        Ok(report.losses)
    }

    /// Sends `clip` GoP by GoP and returns one dict per decoded frame.
    #[pyo3(signature = (
        clip, snr_db, *, config = None, gop_size = None, m = None, lam = None, k = None, seed = 0, oracle = false
    ))]
    #[allow(clippy::too_many_arguments)]
    fn simulate<'py>(
        &self,
        py: Python<'py>,
        clip: &PyClip,
        snr_db: f64,
        config: Option<&PyConfig>,
        gop_size: Option<usize>,
        m: Option<usize>,
        lam: Option<f64>,
        k: Option<f64>,
        seed: u64,
        oracle: bool,
    ) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let cfg = config.map(|c| c.inner.clone()).unwrap_or_default();
        let mut sim = SimulationConfig { snr_db, ..SimulationConfig::from_experiment(&cfg, seed) };
        if let Some(v) = gop_size {
            sim.gop_size = v;
        }
        if let Some(v) = m {
            sim.diffusion.start_step = v;
        }
        if let Some(v) = lam {
            sim.diffusion.lambda = v;
        }
        if let Some(v) = k {
            sim.diffusion.k = v;
        }
        if oracle {
            sim.compensation = Compensation::Oracle;
        }
        let records = pipeline::simulate(&self.inner, &clip.inner, &sim).map_err(py_err)?;
        records.iter().map(|r| record_dict(py, r)).collect()
    }
}

/// PSNR in dB between two equal-length byte buffers, capped at 99.
#[pyfunction]
#[pyo3(signature = (a, b, peak = 255.0))]
fn psnr(a: &[u8], b: &[u8], peak: f64) -> PyResult<f64> {
    metrics::psnr(a, b, peak).map_err(py_err)
}

/// MS-SSIM between two planar RGB frames.
#[pyfunction]
fn ms_ssim(a: &[u8], b: &[u8], width: usize, height: usize) -> PyResult<f64> {
    metrics::ms_ssim(a, b, width, height, MsSsimOptions::default()).map_err(py_err)
}

#[pymodule]
fn wvsc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyClip>()?;
    m.add_class::<PyChannel>()?;
    m.add_class::<PySchedule>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(generate_clip, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ms_ssim, m)?)?;
    Ok(())
}
