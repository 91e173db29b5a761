//! Python bindings: resampling, features, losses and metrics, corpus
//! synthesis, training, and synthesis from checkpoints.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use msrnv::bench;
use msrnv::checkpoint::Checkpoint;
use msrnv::data::{make_synthetic_corpus, CorpusSpec};
use msrnv::features::{extract_logmel, read_features};
use msrnv::generator::GeneratorCascade;
use msrnv::loss::ResolutionConfig;
use msrnv::resample::resample_to;
use msrnv::signal::Waveform;
use msrnv::train::{TrainConfig, Trainer};

fn py_err(e: msrnv::Error) -> PyErr {
    match e {
        msrnv::Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn preset(name: &str) -> PyResult<TrainConfig> {
    TrainConfig::preset(name).map_err(py_err)
}

#[pyfunction]
fn resample(samples: Vec<f64>, from_rate: u32, to_rate: u32) -> PyResult<Vec<f64>> {
    let w = Waveform::new(samples, from_rate).map_err(py_err)?;
    Ok(resample_to(&w, to_rate).map_err(py_err)?.samples)
}

/// Log-mel frames (`frames x bands`) of audio already at the preset's
/// analysis rate.
#[pyfunction]
#[pyo3(signature = (samples, rate, preset_name = "paper"))]
fn extract_features(samples: Vec<f64>, rate: u32, preset_name: &str) -> PyResult<Vec<Vec<f64>>> {
    let cfg = preset(preset_name)?.features;
    let mel = extract_logmel(&Waveform::new(samples, rate).map_err(py_err)?, &cfg).map_err(py_err)?;
    Ok((0..mel.frames()).map(|t| mel.data.row_slice(t).to_vec()).collect())
}

#[pyfunction]
fn mr_stft_loss(generated: Vec<f64>, reference: Vec<f64>, rate: u32) -> PyResult<f64> {
    bench::mr_stft_distance(&generated, &reference, &ResolutionConfig::default(), rate).map_err(py_err)
}

#[pyfunction]
fn log_spectral_distance(generated: Vec<f64>, reference: Vec<f64>) -> PyResult<f64> {
    bench::log_spectral_distance(&generated, &reference).map_err(py_err)
}

/// Generator parameters of a preset cascade, or of the 30-layer
/// single-stage model at its top rate.
#[pyfunction]
#[pyo3(signature = (preset_name = "paper", baseline = false))]
fn parameter_count(preset_name: &str, baseline: bool) -> PyResult<usize> {
    let cfg = preset(preset_name)?;
    let c = if baseline {
        GeneratorCascade::baseline(cfg.ladder.top(), cfg.generator, 0)
    } else {
        GeneratorCascade::new(cfg.ladder, cfg.generator, 0)
    };
    Ok(c.map_err(py_err)?.count_parameters())
}

#[pyfunction]
#[pyo3(signature = (preset_name = "paper"))]
fn default_config(preset_name: &str) -> PyResult<String> {
    serde_json::to_string_pretty(&preset(preset_name)?).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pyfunction]
#[pyo3(signature = (out_dir, utterances = 20, heldout = 4, seconds = 2.0, f0_min = 100.0, f0_max = 400.0, seed = 0, preset_name = "desk"))]
#[allow(clippy::too_many_arguments)]
fn make_corpus<'py>(
    py: Python<'py>,
    out_dir: PathBuf,
    utterances: usize,
    heldout: usize,
    seconds: f64,
    f0_min: f64,
    f0_max: f64,
    seed: u64,
    preset_name: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = preset(preset_name)?;
    let spec = CorpusSpec { utterances, heldout, seconds, f0_range: (f0_min, f0_max), seed };
    let files = make_synthetic_corpus(&out_dir, &spec, &cfg.ladder, &cfg.features).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("train", files.train)?;
    d.set_item("heldout", files.heldout)?;
    d.set_item("stats", files.stats)?;
    Ok(d)
}

/// Trains from scratch and returns the final checkpoint path.
#[pyfunction]
#[pyo3(signature = (out_dir, manifest, heldout = None, steps = None, seed = 0, preset_name = "desk"))]
fn train(out_dir: PathBuf, manifest: PathBuf, heldout: Option<PathBuf>, steps: Option<u64>, seed: u64, preset_name: &str) -> PyResult<PathBuf> {
    let mut cfg = preset(preset_name)?;
    if let Some(s) = steps {
        cfg = cfg.with_total_steps(s);
    }
    cfg.seed = seed;
    cfg.manifest = Some(manifest);
    cfg.heldout_manifest = heldout;
    let out = msrnv::train::train(&cfg, &out_dir, None, |_| {}).map_err(py_err)?;
    Ok(out.checkpoint)
}

/// A trained cascade loaded from a checkpoint.
#[pyclass]
struct Vocoder {
    model: Trainer,
}

#[pymethods]
impl Vocoder {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ck = Checkpoint::load(path).map_err(py_err)?;
        Ok(Self { model: Trainer::from_checkpoint(ck).map_err(py_err)? })
    }

    #[getter]
    fn rates(&self) -> Vec<u32> {
        self.model.generator.ladder.rates().to_vec()
    }

    #[getter]
    fn step(&self) -> u64 {
        self.model.step
    }

    fn parameter_count(&self) -> usize {
        self.model.generator.count_parameters()
    }

    /// `(rate, samples)` for every stage, from a feature file.
    #[pyo3(signature = (features, seed = 0))]
    fn synthesize(&self, features: PathBuf, seed: u64) -> PyResult<Vec<(u32, Vec<f64>)>> {
        let mel = self.model.stats.apply(&read_features(features).map_err(py_err)?).map_err(py_err)?;
        let outs = self.model.generator.synthesize(&mel, None, None, seed).map_err(py_err)?;
        Ok(outs.into_iter().map(|w| (w.rate, w.samples)).collect())
    }
}

#[pymodule]
fn msrnv_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(resample, m)?)?;
    m.add_function(wrap_pyfunction!(extract_features, m)?)?;
    m.add_function(wrap_pyfunction!(mr_stft_loss, m)?)?;
    m.add_function(wrap_pyfunction!(log_spectral_distance, m)?)?;
    m.add_function(wrap_pyfunction!(parameter_count, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(make_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_class::<Vocoder>()?;
    Ok(())
}
