//! Python bindings for the mixworld crate: task streams, episodes, the
//! mixture world model, the numeric ops, and the full pipeline runner.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use std::path::Path;

use mixworld::behavior::lambda_returns_f64;
use mixworld::config::RunConfig;
use mixworld::envs::{make_task_stream, reset_state, step, TaskSpec, Trajectory};
use mixworld::substrate::{gaussian_kl, DiagGaussian, RngStream, Tensor};
use mixworld::worldmodel::{ModelConfig, WorldModel};

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn spec_dict<'py>(py: Python<'py>, spec: &TaskSpec) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new_bound(py);
    d.set_item("k", spec.k)?;
    d.set_item("gravity", spec.gravity)?;
    d.set_item("drag", spec.drag)?;
    d.set_item("action_mask", spec.action_mask)?;
    d.set_item("background_id", spec.background_id)?;
    d.set_item("goal", spec.goal)?;
    Ok(d)
}

/// Task specifications for a named preset stream.
#[pyfunction]
fn task_stream(py: Python<'_>, preset: &str, k: usize, seed: u64) -> PyResult<Vec<Py<PyDict>>> {
    let specs = make_task_stream(preset, k, seed).map_err(err)?;
    specs.iter().map(|s| Ok(spec_dict(py, s)?.into())).collect()
}

/// One random-policy episode on a preset task; observations are flattened
/// 16x16 frames in row-major order.
#[pyfunction]
fn random_episode(
    py: Python<'_>,
    preset: &str,
    task_index: usize,
    seed: u64,
    length: usize,
) -> PyResult<Py<PyDict>> {
    let specs = make_task_stream(preset, task_index + 1, seed).map_err(err)?;
    let spec = specs
        .get(task_index)
        .ok_or_else(|| PyValueError::new_err("task_index out of range"))?;
    let mut rng = RngStream::new(seed).derive("py-episode");
    let mut state = reset_state(&mut rng);
    let (mut obs, mut actions, mut rewards) = (Vec::new(), Vec::new(), Vec::new());
    for t in 0..length {
        let a = if t == 0 {
            [0.0, 0.0]
        } else {
            [rng.uniform_range(-1.0, 1.0), rng.uniform_range(-1.0, 1.0)]
        };
        let (next, o, r) = step::<f64>(&state, a, spec);
        state = next;
        obs.push(o.data().to_vec());
        actions.push(a);
        rewards.push(r);
    }
    let d = PyDict::new_bound(py);
    d.set_item("k", spec.k)?;
    d.set_item("obs", obs)?;
    d.set_item("actions", actions)?;
    d.set_item("rewards", rewards)?;
    Ok(d.into())
}

/// KL divergence between two diagonal Gaussians given as flat vectors.
#[pyfunction(name = "gaussian_kl")]
fn gaussian_kl_py(
    mean_q: Vec<f64>,
    std_q: Vec<f64>,
    mean_p: Vec<f64>,
    std_p: Vec<f64>,
) -> PyResult<f64> {
    if mean_q.len() != std_q.len() || mean_p.len() != std_p.len() || mean_q.len() != mean_p.len() {
        return Err(PyValueError::new_err("all four vectors must share one length"));
    }
    let n = mean_q.len();
    let q = DiagGaussian::new(
        Tensor::from_vec(vec![1, n], mean_q),
        Tensor::from_vec(vec![1, n], std_q),
    );
    let p = DiagGaussian::new(
        Tensor::from_vec(vec![1, n], mean_p),
        Tensor::from_vec(vec![1, n], std_p),
    );
    Ok(gaussian_kl(&q, &p))
}

/// Lambda-returns by backward recursion (V_L bootstraps on values[L-1]).
#[pyfunction]
fn lambda_returns(
    rewards: Vec<f64>,
    values: Vec<f64>,
    gamma: f64,
    lam: f64,
) -> PyResult<Vec<f64>> {
    if rewards.len() != values.len() || rewards.is_empty() {
        return Err(PyValueError::new_err("rewards/values must be equal-length and non-empty"));
    }
    if !(0.0..=1.0).contains(&gamma) || !(0.0..=1.0).contains(&lam) {
        return Err(PyValueError::new_err("gamma and lam must be in [0, 1]"));
    }
    Ok(lambda_returns_f64(&rewards, &values, gamma, lam))
}

fn episode_from_dict(d: &Bound<'_, PyDict>) -> PyResult<Trajectory<f64>> {
    let k: usize = d
        .get_item("k")?
        .ok_or_else(|| PyValueError::new_err("episode missing 'k'"))?
        .extract()?;
    let obs: Vec<Vec<f64>> = d
        .get_item("obs")?
        .ok_or_else(|| PyValueError::new_err("episode missing 'obs'"))?
        .extract()?;
    let actions: Vec<[f64; 2]> = d
        .get_item("actions")?
        .ok_or_else(|| PyValueError::new_err("episode missing 'actions'"))?
        .extract()?;
    let rewards: Vec<f64> = d
        .get_item("rewards")?
        .ok_or_else(|| PyValueError::new_err("episode missing 'rewards'"))?
        .extract()?;
    let side = mixworld::envs::OBS_SIZE;
    let obs = obs
        .into_iter()
        .map(|flat| {
            if flat.len() != side * side {
                return Err(PyValueError::new_err("each frame must have 256 pixels"));
            }
            Ok(Tensor::from_vec(vec![side, side], flat))
        })
        .collect::<PyResult<Vec<_>>>()?;
    let t = Trajectory { k, obs, actions, rewards };
    if t.obs.len() != t.actions.len() || t.obs.len() != t.rewards.len() {
        return Err(PyValueError::new_err("obs/actions/rewards lengths differ"));
    }
    Ok(t)
}

/// Task-conditioned mixture world model over pixel episodes.
#[pyclass(name = "WorldModel")]
struct PyWorldModel {
    model: WorldModel<f64>,
    rng: RngStream,
}

#[pymethods]
impl PyWorldModel {
    /// A fresh desk-scale model for `num_tasks` mixture components.
    #[new]
    fn new(num_tasks: usize, seed: u64) -> Self {
        let rng = RngStream::new(seed).derive("py-model");
        let model = WorldModel::new(ModelConfig::desk(num_tasks), &rng.derive("init"));
        PyWorldModel { model, rng: rng.derive("loss") }
    }

    /// Eq. dynamic loss on a batch of episode dicts.
    fn world_loss(&mut self, episodes: Vec<Bound<'_, PyDict>>, alpha: f64) -> PyResult<f64> {
        let batch = episodes
            .iter()
            .map(episode_from_dict)
            .collect::<PyResult<Vec<_>>>()?;
        if batch.is_empty() {
            return Err(PyValueError::new_err("need at least one episode"));
        }
        Ok(self.model.world_loss(&batch, alpha, &mut self.rng))
    }

    /// Filtered (posterior-mean) reward predictions along one episode.
    fn filter_rewards(&self, episode: Bound<'_, PyDict>) -> PyResult<Vec<f64>> {
        let t = episode_from_dict(&episode)?;
        let mut lat = self.model.initial_latent(1);
        let mut out = Vec::with_capacity(t.len());
        for i in 0..t.len() {
            lat = self.model.posterior_mean_step(
                std::slice::from_ref(&t.obs[i]),
                &lat,
                &[t.actions[i]],
                &[t.k],
            );
            out.push(self.model.reward_values(&lat, &[t.k])[0]);
        }
        Ok(out)
    }
}

/// Run a full pipeline described by a JSON config string; artifacts land in
/// `out_dir` exactly as with the CLI.
#[pyfunction]
#[pyo3(signature = (config_json, out_dir, emit_plots = false))]
fn run_pipeline(config_json: &str, out_dir: &str, emit_plots: bool) -> PyResult<()> {
    let cfg = RunConfig::from_json(config_json).map_err(err)?;
    mixworld::pipeline::execute(&cfg, config_json, Path::new(out_dir), emit_plots).map_err(err)
}

#[pymodule]
fn mixworld_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(task_stream, m)?)?;
    m.add_function(wrap_pyfunction!(random_episode, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_kl_py, m)?)?;
    m.add_function(wrap_pyfunction!(lambda_returns, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_class::<PyWorldModel>()?;
    Ok(())
}
