//! Python bindings: link arithmetic, the environment, networks and training.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use v2vlink::agent::{encode_state, DuelingNet, NetDims};
use v2vlink::channel::{sample_taps, ProfileTable, ScenarioKind};
use v2vlink::env::{self, Action, EnvConfig, Game, LinkEnv, LinkModel, OfdmParams, State};
use v2vlink::harness::{self, ExperimentConfig, Variant};
use v2vlink::phy::{self, FrameTiming};
use v2vlink::LinkError;

fn to_py(err: LinkError) -> PyErr {
    match err {
        LinkError::Io { .. } => PyIOError::new_err(err.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn game(n: u8) -> PyResult<Game> {
    Game::from_number(n).map_err(to_py)
}

fn mcs(index: usize) -> PyResult<phy::McsEntry> {
    phy::mcs_table()
        .get(index)
        .copied()
        .ok_or_else(|| PyValueError::new_err(format!("MCS index {index} out of range 0..8")))
}

/// `(index, label, data_rate_mbps, bits_per_symbol)` for the eight MCSs.
#[pyfunction]
fn mcs_table() -> Vec<(usize, String, f64, u32)> {
    phy::mcs_table()
        .iter()
        .map(|m| (m.index, m.to_string(), m.data_rate_mbps, m.data_bits_per_symbol()))
        .collect()
}

#[pyfunction]
fn per(mcs_index: usize, snr_db: f64) -> PyResult<f64> {
    Ok(LinkModel::default().per_model.per(&mcs(mcs_index)?, snr_db))
}

#[pyfunction]
#[pyo3(signature = (mcs_index, per, n_data_symbols=100, overhead_s=40e-6))]
fn throughput(mcs_index: usize, per: f64, n_data_symbols: u32, overhead_s: f64) -> PyResult<f64> {
    let timing = FrameTiming {
        n_data_symbols,
        overhead_time_s: overhead_s,
        ..FrameTiming::default()
    };
    timing.validate().map_err(to_py)?;
    Ok(phy::throughput(&timing.frame_for(&mcs(mcs_index)?), per))
}

#[pyfunction]
fn energy_efficiency(throughput_mbps: f64, power_w: f64) -> PyResult<f64> {
    phy::energy_efficiency(throughput_mbps, power_w).map_err(to_py)
}

/// One LTS-based SNR estimate over a fresh channel draw.
#[pyfunction]
#[pyo3(signature = (true_snr_db, scenario="U-NLOS", seed=0))]
fn measure_snr(true_snr_db: f64, scenario: &str, seed: u64) -> PyResult<f64> {
    let kind: ScenarioKind = scenario.parse().map_err(to_py)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let taps = sample_taps(ProfileTable::builtin().get(kind), &mut rng);
    env::measure_snr(&OfdmParams::default(), &taps, 0.0, true_snr_db, &mut rng).map_err(to_py)
}

/// Flat action index -> `(mcs_index, power_w)`.
#[pyfunction]
fn action_space() -> Vec<(usize, f64)> {
    env::action_space().iter().map(|a| (a.mcs_index, a.power_w())).collect()
}

/// Best flat action and its expected reward at a known SNR.
#[pyfunction]
#[pyo3(signature = (true_snr_db, game_number=2))]
fn oracle_best(true_snr_db: f64, game_number: u8) -> PyResult<(usize, f64)> {
    let cfg = EnvConfig::for_game(game(game_number)?);
    let (a, r) = env::oracle_best(&cfg.model, &cfg.game, true_snr_db);
    Ok((a.flat(), r))
}

#[pyclass(name = "Env")]
struct PyEnv {
    inner: LinkEnv,
}

impl PyEnv {
    fn encode(&self, s: &State) -> Vec<f64> {
        let cfg = self.inner.config();
        encode_state(s, &cfg.snr, cfg.game.episode_len)
    }
}

#[pymethods]
impl PyEnv {
    #[new]
    #[pyo3(signature = (game_number=2, seed=0))]
    fn new(game_number: u8, seed: u64) -> PyResult<Self> {
        let inner = LinkEnv::new(EnvConfig::for_game(game(game_number)?), seed).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Encoded state vector for the first transmission.
    fn reset(&mut self) -> PyResult<Vec<f64>> {
        let s = self.inner.reset().map_err(to_py)?;
        Ok(self.encode(&s))
    }

    fn step<'py>(&mut self, py: Python<'py>, action: usize) -> PyResult<Bound<'py, PyDict>> {
        let a = Action::from_flat(action).map_err(to_py)?;
        let out = self.inner.step(a).map_err(to_py)?;
        let d = PyDict::new(py);
        d.set_item("state", self.encode(&out.next_state))?;
        d.set_item("reward", out.reward)?;
        d.set_item("terminal", out.terminal)?;
        d.set_item("true_snr_db", out.true_snr_db)?;
        d.set_item("per", out.per_realized)?;
        d.set_item("throughput_mbps", out.throughput_mbps)?;
        d.set_item("ee_mbps_per_w", out.ee_mbps_per_w)?;
        d.set_item("violated", out.constraint_violated)?;
        d.set_item("valid", out.was_valid_action)?;
        d.set_item("oracle_reward", out.oracle_reward)?;
        Ok(d)
    }

    #[getter]
    fn state_dim(&self) -> usize {
        v2vlink::agent::STATE_DIM
    }

    #[getter]
    fn action_count(&self) -> usize {
        env::ACTION_COUNT
    }
}

#[pyclass(name = "DuelingNet")]
struct PyNet {
    inner: DuelingNet,
}

#[pymethods]
impl PyNet {
    #[new]
    #[pyo3(signature = (input=v2vlink::agent::STATE_DIM, actions=env::ACTION_COUNT, seed=0))]
    fn new(input: usize, actions: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            inner: DuelingNet::new(NetDims::new(input, actions), &mut rng),
        }
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: DuelingNet::load(&path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(to_py)
    }

    fn q_values(&self, state: Vec<f64>) -> PyResult<Vec<f64>> {
        if state.len() != self.inner.dims().input {
            return Err(PyValueError::new_err(format!(
                "state has {} features, network expects {}",
                state.len(),
                self.inner.dims().input
            )));
        }
        Ok(self.inner.q_values(&state))
    }

    fn greedy(&self, state: Vec<f64>) -> PyResult<usize> {
        self.q_values(state.clone())?;
        Ok(self.inner.greedy(&state))
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.params().len()
    }
}

/// Trains one learner and writes its artifacts to `out`. Returns the net and
/// the run record as JSON.
#[pyfunction]
#[pyo3(signature = (out, game_number=2, seed=0, episodes=None, variant="d3qn", config=None))]
fn train(
    py: Python<'_>,
    out: PathBuf,
    game_number: u8,
    seed: u64,
    episodes: Option<usize>,
    variant: &str,
    config: Option<PathBuf>,
) -> PyResult<(PyNet, String)> {
    let base = match config {
        Some(p) => harness::load_config(&p).map_err(to_py)?,
        None => ExperimentConfig::default(),
    };
    let mut cfg = base.with_game(game(game_number)?);
    if let Some(n) = episodes {
        cfg.train.episodes = n;
        cfg.derive_schedule();
        cfg.validate().map_err(to_py)?;
    }
    let variant: Variant = variant.parse().map_err(to_py)?;
    let run = py
        .detach(|| harness::run_training(&cfg, variant, seed, &out))
        .map_err(to_py)?;
    let record = serde_json::to_string(&run.record).expect("run record serializes");
    Ok((PyNet { inner: run.net }, record))
}

#[pymodule]
fn pyv2vlink(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(mcs_table, m)?)?;
    m.add_function(wrap_pyfunction!(per, m)?)?;
    m.add_function(wrap_pyfunction!(throughput, m)?)?;
    m.add_function(wrap_pyfunction!(energy_efficiency, m)?)?;
    m.add_function(wrap_pyfunction!(measure_snr, m)?)?;
    m.add_function(wrap_pyfunction!(action_space, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_best, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_class::<PyEnv>()?;
    m.add_class::<PyNet>()?;
    Ok(())
}
