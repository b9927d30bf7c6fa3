//! Experiment configuration and the file-producing runs behind the CLI.
//!
//! Every output name is derived from `(name, game, seed)`, so `compare` can
//! find the checkpoints written by `train` in the same directory.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::{
    gradient_check, train, BlockCheck, DuelingNet, EpisodeMetrics, NetDims, TargetRule, TrainConfig,
    STATE_DIM,
};
use crate::baselines::{
    evaluate_policy, FixedPolicy, GreedyPolicy, OraclePolicy, Policy, PolicyEvaluation, PolicySummary,
    PsoParams, PsoPolicy, RandomPolicy, SaParams, SaPolicy,
};
use crate::channel::{ProfileTable, ScenarioKind, SnrRange};
use crate::env::{
    generate_traces, Action, EnvConfig, EpisodeTrace, Game, GameSpec, LinkEnv, LinkModel, Observation,
    OfdmParams, PacketMode, ACTION_COUNT,
};
use crate::error::{LinkError, Result};
use crate::phy::{FrameTiming, PerModel, SiMode};

pub const RUN_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelSection {
    pub scenarios: Vec<ScenarioKind>,
    pub snr_min_db: f64,
    pub snr_max_db: f64,
    /// Replaces the built-in scenario table.
    pub profiles_path: Option<PathBuf>,
    pub si: SiMode,
    pub packet_mode: PacketMode,
}

impl Default for ChannelSection {
    fn default() -> Self {
        let snr = SnrRange::default();
        Self {
            scenarios: vec![ScenarioKind::UrbanNlos],
            snr_min_db: snr.min_db,
            snr_max_db: snr.max_db,
            profiles_path: None,
            si: SiMode::default(),
            packet_mode: PacketMode::Expected,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhySection {
    pub per: PerModel,
    pub frame: FrameTiming,
    pub ofdm: OfdmParams,
}

impl Default for PhySection {
    fn default() -> Self {
        Self {
            per: PerModel::default(),
            frame: FrameTiming::default(),
            ofdm: OfdmParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub episodes: usize,
    /// Offset added to the run seed when generating evaluation traces.
    pub trace_seed: u64,
    pub fixed_mcs: usize,
    pub fixed_power: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            episodes: 100,
            trace_seed: 1_000_000,
            fixed_mcs: 2,
            fixed_power: 2,
        }
    }
}

/// Everything a run depends on; serialized canonically for the config hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub game: GameSpec,
    pub channel: ChannelSection,
    pub phy: PhySection,
    pub train: TrainConfig,
    pub pso: PsoParams,
    pub sa: SaParams,
    pub eval: EvalSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut cfg = Self {
            seeds: vec![0, 1, 2],
            output_dir: PathBuf::from("runs"),
            game: GameSpec::default(),
            channel: ChannelSection::default(),
            phy: PhySection::default(),
            train: TrainConfig::default(),
            pso: PsoParams::default(),
            sa: SaParams::default(),
            eval: EvalSection::default(),
        };
        cfg.derive_schedule();
        cfg
    }
}

impl ExperimentConfig {
    /// Parses TOML. A missing `train.epsilon_decay_rate` is derived from the
    /// training length.
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        let parse_err = |e: toml::de::Error| LinkError::Parse {
            origin: origin.to_string(),
            message: e.to_string(),
        };
        let mut cfg: Self = toml::from_str(text).map_err(parse_err)?;
        let table: toml::Table = toml::from_str(text).map_err(parse_err)?;
        let explicit = table
            .get("train")
            .and_then(|t| t.as_table())
            .is_some_and(|t| t.contains_key("epsilon_decay_rate"));
        if !explicit {
            cfg.derive_schedule();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| LinkError::Parse {
            origin: "config serialization".into(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_toml_string()?)
    }

    /// Sets the exploration decay so epsilon reaches its midpoint value halfway
    /// through training.
    pub fn derive_schedule(&mut self) {
        let steps = (self.train.episodes * self.game.episode_len) as u64;
        self.train = self.train.clone().with_schedule_for(steps);
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(LinkError::validation("seeds", "at least one seed"));
        }
        self.game.validate()?;
        SnrRange {
            min_db: self.channel.snr_min_db,
            max_db: self.channel.snr_max_db,
        }
        .validate()?;
        if self.channel.scenarios.is_empty() {
            return Err(LinkError::validation("channel.scenarios", "at least one scenario"));
        }
        if let SiMode::NearestProfile { feature_noise } = self.channel.si {
            if !(feature_noise >= 0.0 && feature_noise.is_finite()) {
                return Err(LinkError::validation("channel.si.feature_noise", "must be nonnegative"));
            }
        }
        self.phy.per.validate()?;
        self.phy.frame.validate()?;
        self.phy.ofdm.validate()?;
        self.train.validate()?;
        self.pso.validate()?;
        self.sa.validate()?;
        if self.eval.episodes == 0 {
            return Err(LinkError::validation("eval.episodes", "must be >= 1"));
        }
        Action::new(self.eval.fixed_mcs, self.eval.fixed_power)
            .map_err(|_| LinkError::validation("eval.fixed_mcs", "fixed action outside the grid"))?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes to JSON");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn with_game(&self, game: Game) -> Self {
        let mut cfg = self.clone();
        cfg.game.kind = game;
        cfg
    }

    pub fn env_config(&self) -> Result<EnvConfig> {
        let profiles = match &self.channel.profiles_path {
            Some(p) => ProfileTable::load(p)?,
            None => ProfileTable::builtin(),
        };
        let cfg = EnvConfig {
            game: self.game,
            scenarios: self.channel.scenarios.clone(),
            snr: SnrRange {
                min_db: self.channel.snr_min_db,
                max_db: self.channel.snr_max_db,
            },
            model: LinkModel::new(self.phy.per.clone(), self.phy.frame),
            ofdm: self.phy.ofdm,
            si_mode: self.channel.si,
            packet_mode: self.channel.packet_mode,
            profiles,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn fixed_action(&self) -> Action {
        Action::new(self.eval.fixed_mcs, self.eval.fixed_power).expect("validated")
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| LinkError::io(path, e))?;
    ExperimentConfig::from_toml_str(&text, &path.display().to_string())
}

/// Learner variants: the full agent and its two ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Dueling head, double-DQN targets.
    D3qn,
    /// Plain head, double-DQN targets.
    Ddqn,
    /// Plain head, max targets.
    Dqn,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::D3qn, Variant::Ddqn, Variant::Dqn];

    pub fn label(self) -> &'static str {
        match self {
            Variant::D3qn => "d3qn",
            Variant::Ddqn => "ddqn",
            Variant::Dqn => "dqn",
        }
    }

    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        let (dueling, rule) = match self {
            Variant::D3qn => (true, TargetRule::Double),
            Variant::Ddqn => (false, TargetRule::Double),
            Variant::Dqn => (false, TargetRule::Max),
        };
        cfg.dueling = dueling;
        cfg.target_rule = rule;
        cfg
    }
}

impl std::str::FromStr for Variant {
    type Err = LinkError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.label() == s)
            .ok_or_else(|| LinkError::validation("variant", format!("unknown variant `{s}`")))
    }
}

pub fn stem(name: &str, game: Game, seed: u64) -> String {
    format!("{name}_g{}_s{seed}", game.number())
}

pub fn checkpoint_path(dir: &Path, variant: Variant, game: Game, seed: u64) -> PathBuf {
    dir.join(format!("{}.qnet", stem(variant.label(), game, seed)))
}

/// Independent RNG streams derived from one run seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ stream.wrapping_mul(0xBF58_476D_1CE4_E5B9)
}

const ENV_STREAM: u64 = 1;
const AGENT_STREAM: u64 = 2;
const POLICY_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub format_version: u32,
    pub variant: Variant,
    pub game: u8,
    pub seed: u64,
    pub config_hash: String,
    pub episodes: usize,
    pub total_steps: u64,
    pub target_syncs: u64,
    pub final_epsilon: f64,
    /// Cumulative over oracle reward across the last tenth of training.
    pub tail_reward_ratio: f64,
    pub checkpoint: String,
    pub metrics_csv: String,
}

pub struct TrainedRun {
    pub record: RunRecord,
    pub net: DuelingNet,
    pub metrics: Vec<EpisodeMetrics>,
}

/// Trains one learner and writes its metrics CSV, checkpoint and run record.
pub fn run_training(cfg: &ExperimentConfig, variant: Variant, seed: u64, out: &Path) -> Result<TrainedRun> {
    cfg.validate()?;
    let env_cfg = cfg.env_config()?;
    let game = cfg.game.kind;
    let mut env = LinkEnv::new(env_cfg, derive_seed(seed, ENV_STREAM))?;
    let train_cfg = variant.apply(&cfg.train);
    let outcome = train(&mut env, &train_cfg, derive_seed(seed, AGENT_STREAM))?;

    ensure_dir(out)?;
    let name = stem(variant.label(), game, seed);
    let metrics_csv = format!("train_{name}.csv");
    write_csv(&out.join(&metrics_csv), &outcome.metrics)?;
    let ckpt = checkpoint_path(out, variant, game, seed);
    let policy = outcome.agent.policy_net();
    policy.save(&ckpt)?;

    let tail = (outcome.metrics.len() / 10).max(1);
    let tail_rows = &outcome.metrics[outcome.metrics.len() - tail..];
    let got: f64 = tail_rows.iter().map(|m| m.cumulative_reward).sum();
    let best: f64 = tail_rows.iter().map(|m| m.oracle_reward).sum();
    let record = RunRecord {
        format_version: RUN_FORMAT_VERSION,
        variant,
        game: game.number(),
        seed,
        config_hash: cfg.hash(),
        episodes: outcome.metrics.len(),
        total_steps: outcome.agent.global_step,
        target_syncs: outcome.agent.target_syncs,
        final_epsilon: outcome.metrics.last().map_or(0.0, |m| m.epsilon),
        tail_reward_ratio: if best > 0.0 { got / best } else { 0.0 },
        checkpoint: ckpt.file_name().unwrap().to_string_lossy().into_owned(),
        metrics_csv,
    };
    let json = serde_json::to_string_pretty(&record).expect("run record serializes");
    write_text(&out.join(format!("run_{name}.json")), &(json + "\n"))?;
    Ok(TrainedRun {
        record,
        net: policy,
        metrics: outcome.metrics,
    })
}

pub fn load_checkpoint(dir: &Path, variant: Variant, game: Game, seed: u64) -> Result<DuelingNet> {
    let path = checkpoint_path(dir, variant, game, seed);
    if !path.exists() {
        return Err(LinkError::Checkpoint(format!(
            "no checkpoint at {}; run `train` for game {} seed {seed} first",
            path.display(),
            game.number()
        )));
    }
    let net = DuelingNet::load(&path)?;
    let d = net.dims();
    if d.input != STATE_DIM || d.actions != ACTION_COUNT {
        return Err(LinkError::Checkpoint(format!(
            "{}: network shape {}x{} does not match the link environment",
            path.display(),
            d.input,
            d.actions
        )));
    }
    Ok(net)
}

pub const POLICY_NAMES: [&str; 8] = ["d3qn", "ddqn", "dqn", "pso", "sa", "random", "fixed", "oracle"];

/// Builds a named policy; learned ones are read from checkpoints in `dir`.
pub fn make_policy(name: &str, cfg: &ExperimentConfig, seed: u64, dir: &Path) -> Result<Box<dyn Policy>> {
    let pseed = derive_seed(seed, POLICY_STREAM);
    Ok(match name {
        "pso" => Box::new(PsoPolicy::new(cfg.pso, pseed)),
        "sa" => Box::new(SaPolicy::new(cfg.sa, pseed)),
        "random" => Box::new(RandomPolicy::new(pseed)),
        "fixed" => Box::new(FixedPolicy {
            choice: cfg.fixed_action(),
        }),
        "oracle" => Box::new(OraclePolicy),
        other => {
            let variant: Variant = other.parse().map_err(|_| {
                LinkError::validation(
                    "policy",
                    format!("unknown policy `{other}`; expected one of {}", POLICY_NAMES.join(", ")),
                )
            })?;
            Box::new(GreedyPolicy {
                name: variant.label().to_string(),
                net: load_checkpoint(dir, variant, cfg.game.kind, seed)?,
            })
        }
    })
}

pub fn eval_traces(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<EpisodeTrace>> {
    generate_traces(&cfg.env_config()?, cfg.eval.episodes, cfg.eval.trace_seed.wrapping_add(seed))
}

/// Evaluates one policy on the frozen evaluation traces, writing its
/// per-episode and per-step CSVs.
pub fn run_evaluation(cfg: &ExperimentConfig, policy: &str, seed: u64, out: &Path) -> Result<PolicyEvaluation> {
    let mut p = make_policy(policy, cfg, seed, out)?;
    let traces = eval_traces(cfg, seed)?;
    let eval = evaluate_policy(p.as_mut(), &cfg.env_config()?, &traces, seed)?;
    ensure_dir(out)?;
    let name = stem(policy, cfg.game.kind, seed);
    write_csv(&out.join(format!("eval_{name}.csv")), &eval.episodes)?;
    write_csv(&out.join(format!("steps_{name}.csv")), &eval.steps)?;
    Ok(eval)
}

/// Scores the trained agent against every baseline on shared traces. The
/// `d3qn` checkpoint is required; ablation checkpoints are used when present.
pub fn run_comparison(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<Vec<PolicySummary>> {
    let game = cfg.game.kind;
    load_checkpoint(out, Variant::D3qn, game, seed)?;
    let env_cfg = cfg.env_config()?;
    let traces = eval_traces(cfg, seed)?;
    let names = POLICY_NAMES.iter().filter(|n| match n.parse::<Variant>() {
        Ok(Variant::D3qn) | Err(_) => true,
        Ok(v) => checkpoint_path(out, v, game, seed).exists(),
    });
    let mut summaries = Vec::new();
    for name in names {
        let mut p = make_policy(name, cfg, seed, out)?;
        let eval = evaluate_policy(p.as_mut(), &env_cfg, &traces, seed)?;
        write_csv(&out.join(format!("eval_{}.csv", stem(name, game, seed))), &eval.episodes)?;
        summaries.push(eval.summary);
    }
    write_csv(&out.join(format!("compare_{}.csv", stem("all", game, seed))), &summaries)?;
    Ok(summaries)
}

/// One row of an exported trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub episode: usize,
    pub step: usize,
    pub scenario: ScenarioKind,
    pub true_snr_db: f64,
    pub est_snr_db: f64,
    pub identified: ScenarioKind,
}

pub fn export_traces(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<PathBuf> {
    let traces = eval_traces(cfg, seed)?;
    ensure_dir(out)?;
    let path = out.join(format!("traces_{}.csv", stem("eval", cfg.game.kind, seed)));
    write_traces(&path, &traces)?;
    Ok(path)
}

pub fn write_traces(path: &Path, traces: &[EpisodeTrace]) -> Result<()> {
    let rows: Vec<TraceRow> = traces
        .iter()
        .enumerate()
        .flat_map(|(e, t)| {
            t.steps.iter().enumerate().map(move |(n, o)| TraceRow {
                episode: e,
                step: n + 1,
                scenario: t.scenario,
                true_snr_db: o.true_snr_db,
                est_snr_db: o.est_snr_db,
                identified: o.identified,
            })
        })
        .collect();
    write_csv(path, &rows)
}

pub fn load_traces(path: &Path) -> Result<Vec<EpisodeTrace>> {
    let rows: Vec<TraceRow> = read_csv(path)?;
    let mut traces: Vec<EpisodeTrace> = Vec::new();
    for r in rows {
        if r.episode == traces.len() {
            traces.push(EpisodeTrace {
                scenario: r.scenario,
                steps: Vec::new(),
            });
        }
        let count = traces.len();
        let t = match traces.last_mut() {
            Some(t) if r.episode + 1 == count && r.step == t.steps.len() + 1 => t,
            _ => {
                return Err(LinkError::Parse {
                    origin: path.display().to_string(),
                    message: format!("rows out of order at episode {} step {}", r.episode, r.step),
                })
            }
        };
        t.steps.push(Observation {
            true_snr_db: r.true_snr_db,
            est_snr_db: r.est_snr_db,
            identified: r.identified,
        });
    }
    Ok(traces)
}

/// Finite-difference check on `cases` random networks and batches.
pub fn run_gradcheck(seed: u64, cases: usize, h: f64) -> Vec<Vec<BlockCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..cases)
        .map(|_| {
            let dims = NetDims::new(STATE_DIM, ACTION_COUNT);
            let n = DuelingNet::new(dims, &mut rng).params().len();
            let params = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
            let net = DuelingNet::from_params(dims, params).expect("sized from dims");
            let batch = 16;
            let states: Vec<Vec<f64>> = (0..batch)
                .map(|_| (0..STATE_DIM).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let actions: Vec<usize> = (0..batch).map(|_| rng.random_range(0..ACTION_COUNT)).collect();
            let targets: Vec<f64> = (0..batch)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    5.0 * z
                })
                .collect();
            let refs: Vec<&[f64]> = states.iter().map(Vec::as_slice).collect();
            gradient_check(&net, &refs, &actions, &targets, h)
        })
        .collect()
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| LinkError::csv(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| LinkError::csv(path, e))?;
    }
    w.flush().map_err(|e| LinkError::io(path, e))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| LinkError::csv(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| LinkError::csv(path, e))).collect()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| LinkError::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| LinkError::io(dir, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        let cfg = ExperimentConfig::from_toml_str("", "empty").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.train.episodes, 4000);
        assert!(cfg.train.epsilon_decay_rate > 0.0);
    }

    #[test]
    fn schedule_follows_episode_count_unless_pinned() {
        let short = ExperimentConfig::from_toml_str("[train]\nepisodes = 10\n", "t").unwrap();
        let expected = short.train.decay_rate_for(1000);
        assert_eq!(short.train.epsilon_decay_rate, expected);
        let pinned =
            ExperimentConfig::from_toml_str("[train]\nepisodes = 10\nepsilon_decay_rate = 0.5\n", "t").unwrap();
        assert_eq!(pinned.train.epsilon_decay_rate, 0.5);
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        b.train.learning_rate = 0.02;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn variants_parse() {
        for v in Variant::ALL {
            assert_eq!(v.label().parse::<Variant>().unwrap(), v);
        }
        assert!("d4qn".parse::<Variant>().is_err());
        assert!(!Variant::Dqn.apply(&TrainConfig::default()).dueling);
    }

    #[test]
    fn seed_streams_differ() {
        assert_ne!(derive_seed(0, 1), derive_seed(0, 2));
        assert_ne!(derive_seed(1, 1), derive_seed(2, 1));
    }
}
