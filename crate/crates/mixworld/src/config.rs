//! Run configuration: a single versioned JSON file fully determines an
//! experiment. Unknown keys are rejected so a typo cannot silently fall back
//! to a default, and `--override key=value` edits the parsed JSON by dotted
//! path before validation.

use crate::behavior::BehaviorConfig;
use crate::generator::{GenConfig, GEN_BETA};
use crate::replay::EPSILON_EXPLORE;
use crate::training::{Ablation, ContinualConfig, ForecastConfig};
use crate::worldmodel::ModelConfig;
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum Pipeline {
    Control,
    Forecast,
    Ablation,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationToggles {
    #[serde(default = "yes")]
    pub mixture: bool,
    #[serde(default = "yes")]
    pub replay: bool,
    #[serde(default = "yes")]
    pub eps_explore: bool,
    #[serde(default = "yes")]
    pub action_aug: bool,
    #[serde(default = "yes")]
    pub v_reg: bool,
}

fn yes() -> bool {
    true
}

impl Default for AblationToggles {
    fn default() -> Self {
        AblationToggles { mixture: true, replay: true, eps_explore: true, action_aug: true, v_reg: true }
    }
}

impl From<AblationToggles> for Ablation {
    fn from(t: AblationToggles) -> Ablation {
        Ablation {
            mixture: t.mixture,
            replay: t.replay,
            eps_explore: t.eps_explore,
            action_aug: t.action_aug,
            v_reg: t.v_reg,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "d_z_dim")]
    pub z_dim: usize,
    #[serde(default = "d_h_dim")]
    pub h_dim: usize,
    #[serde(default = "d_embed_dim")]
    pub embed_dim: usize,
    #[serde(default = "d_enc_hidden")]
    pub enc_hidden: [usize; 2],
    #[serde(default = "d_head_hidden")]
    pub head_hidden: usize,
    #[serde(default = "d_std_floor")]
    pub std_floor: f64,
}

fn d_z_dim() -> usize {
    8
}
fn d_h_dim() -> usize {
    32
}
fn d_embed_dim() -> usize {
    4
}
fn d_enc_hidden() -> [usize; 2] {
    [256, 128]
}
fn d_head_hidden() -> usize {
    128
}
fn d_std_floor() -> f64 {
    0.1
}

impl Default for ModelSection {
    fn default() -> Self {
        serde_json::from_str("{}").unwrap()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSection {
    #[serde(default = "d_env_steps")]
    pub env_steps_per_task: usize,
    #[serde(default = "d_episode_length")]
    pub episode_length: usize,
    #[serde(default = "d_train_every")]
    pub train_every: usize,
    #[serde(default = "d_one")]
    pub updates_per_round: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_seq_len")]
    pub seq_len: usize,
    #[serde(default = "d_lr")]
    pub model_lr: f64,
    #[serde(default = "d_lr")]
    pub gen_lr: f64,
    #[serde(default = "d_alpha")]
    pub alpha: f64,
    #[serde(default = "d_delta")]
    pub delta: f64,
    #[serde(default = "d_beta")]
    pub beta: f64,
    #[serde(default = "d_epsilon")]
    pub epsilon: f64,
    #[serde(default = "d_epsilon")]
    pub env_epsilon: f64,
    #[serde(default = "d_replay_per_task")]
    pub replay_per_task: usize,
    #[serde(default = "d_gen_group")]
    pub gen_group: usize,
    #[serde(default = "d_eval_episodes")]
    pub eval_episodes: usize,
    #[serde(default = "d_recent")]
    pub recent_buffer: usize,
    #[serde(default = "d_prefill")]
    pub prefill: usize,
    #[serde(default)]
    pub reference_return: Option<f64>,
    #[serde(default = "d_horizon")]
    pub horizon: usize,
    #[serde(default = "d_gamma")]
    pub gamma: f64,
    #[serde(default = "d_lambda")]
    pub lambda: f64,
    #[serde(default = "d_entropy")]
    pub entropy_weight: f64,
    #[serde(default = "d_actor_lr")]
    pub actor_lr: f64,
    #[serde(default = "d_actor_lr")]
    pub critic_lr: f64,
    #[serde(default)]
    pub successor_bootstrap: bool,
}

fn d_env_steps() -> usize {
    20_000
}
fn d_episode_length() -> usize {
    crate::envs::EPISODE_LENGTH
}
fn d_prefill() -> usize {
    crate::training::ContinualConfig::desk(1, crate::training::Ablation::full()).prefill
}
fn d_train_every() -> usize {
    crate::training::ContinualConfig::desk(1, crate::training::Ablation::full()).train_every
}
fn d_one() -> usize {
    1
}
fn d_batch() -> usize {
    16
}
fn d_seq_len() -> usize {
    10
}
fn d_lr() -> f64 {
    1e-3
}
fn d_alpha() -> f64 {
    crate::training::DESK_ALPHA
}
fn d_delta() -> f64 {
    0.5
}
fn d_beta() -> f64 {
    GEN_BETA
}
fn d_epsilon() -> f64 {
    EPSILON_EXPLORE
}
fn d_replay_per_task() -> usize {
    20
}
fn d_gen_group() -> usize {
    16
}
fn d_eval_episodes() -> usize {
    5
}
fn d_recent() -> usize {
    100
}
fn d_horizon() -> usize {
    10
}
fn d_gamma() -> f64 {
    crate::behavior::BehaviorConfig::desk().gamma
}
fn d_lambda() -> f64 {
    0.95
}
fn d_entropy() -> f64 {
    1e-3
}
fn d_actor_lr() -> f64 {
    3e-4
}

impl Default for ControlSection {
    fn default() -> Self {
        serde_json::from_str("{}").unwrap()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecastSection {
    #[serde(default = "d_fc_episodes")]
    pub episodes_per_task: usize,
    #[serde(default = "d_fc_seq_total")]
    pub seq_total: usize,
    #[serde(default = "d_fc_updates")]
    pub updates_per_task: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_fc_seq_len")]
    pub seq_len: usize,
    #[serde(default = "d_lr")]
    pub model_lr: f64,
    #[serde(default = "d_lr")]
    pub gen_lr: f64,
    #[serde(default = "d_alpha")]
    pub alpha: f64,
    #[serde(default = "d_beta")]
    pub beta: f64,
    #[serde(default = "d_fc_replay")]
    pub replay_per_task: usize,
    #[serde(default = "d_gen_group")]
    pub gen_group: usize,
    #[serde(default = "d_fc_eval")]
    pub eval_episodes: usize,
}

fn d_fc_episodes() -> usize {
    100
}
fn d_fc_seq_total() -> usize {
    16
}
fn d_fc_updates() -> usize {
    600
}
fn d_fc_seq_len() -> usize {
    8
}
fn d_fc_replay() -> usize {
    40
}
fn d_fc_eval() -> usize {
    20
}

impl Default for ForecastSection {
    fn default() -> Self {
        serde_json::from_str("{}").unwrap()
    }
}

/// Top-level run configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub pipeline: Pipeline,
    #[serde(default)]
    pub seed: u64,
    /// Additional seeds; the run repeats once per seed when non-empty.
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default = "d_num_tasks")]
    pub num_tasks: usize,
    #[serde(default = "d_preset")]
    pub preset: String,
    #[serde(default)]
    pub ablation: AblationToggles,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub control: ControlSection,
    #[serde(default)]
    pub forecast: ForecastSection,
}

fn d_num_tasks() -> usize {
    4
}
fn d_preset() -> String {
    "slope4".to_string()
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = serde_json::from_str(text).context("invalid config")?;
        if cfg.version != CONFIG_VERSION {
            bail!("unsupported config version {} (expected {})", cfg.version, CONFIG_VERSION);
        }
        if cfg.num_tasks == 0 {
            bail!("num_tasks must be at least 1");
        }
        Ok(cfg)
    }

    pub fn all_seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.seed]
        } else {
            self.seeds.clone()
        }
    }

    fn model_config(&self, ablation: Ablation) -> ModelConfig {
        let mut m = ModelConfig::desk(self.num_tasks);
        m.z_dim = self.model.z_dim;
        m.h_dim = self.model.h_dim;
        m.embed_dim = self.model.embed_dim;
        m.enc_hidden = self.model.enc_hidden;
        m.head_hidden = self.model.head_hidden;
        m.std_floor = self.model.std_floor;
        m.mixture = ablation.mixture;
        m
    }

    pub fn continual(&self, ablation: Ablation) -> ContinualConfig {
        let c = &self.control;
        let mut behavior = BehaviorConfig::desk();
        behavior.horizon = c.horizon;
        behavior.gamma = c.gamma;
        behavior.lambda = c.lambda;
        behavior.entropy_weight = c.entropy_weight;
        behavior.batch = c.batch_size;
        behavior.successor_bootstrap = c.successor_bootstrap;
        behavior.actor_lr = c.actor_lr;
        behavior.critic_lr = c.critic_lr;
        let mut out = ContinualConfig::desk(self.num_tasks, ablation);
        out.model = self.model_config(ablation);
        out.gen = GenConfig::desk(self.num_tasks);
        out.behavior = behavior;
        out.env_steps_per_task = c.env_steps_per_task;
        out.episode_length = c.episode_length;
        out.train_every = c.train_every;
        out.updates_per_round = c.updates_per_round;
        out.batch_size = c.batch_size;
        out.seq_len = c.seq_len;
        out.model_lr = c.model_lr;
        out.gen_lr = c.gen_lr;
        out.alpha = c.alpha;
        out.delta = c.delta;
        out.beta = c.beta;
        out.epsilon = c.epsilon;
        out.env_epsilon = c.env_epsilon;
        out.replay_per_task = c.replay_per_task;
        out.gen_group = c.gen_group;
        out.eval_episodes = c.eval_episodes;
        out.recent_buffer = c.recent_buffer;
        out.prefill = c.prefill;
        out.reference_return = c.reference_return;
        out
    }

    pub fn forecasting(&self, ablation: Ablation) -> ForecastConfig {
        let f = &self.forecast;
        let mut out = ForecastConfig::desk(self.num_tasks, ablation);
        out.model = self.model_config(ablation);
        out.gen = GenConfig::desk(self.num_tasks);
        out.episodes_per_task = f.episodes_per_task;
        out.seq_total = f.seq_total;
        out.updates_per_task = f.updates_per_task;
        out.batch_size = f.batch_size;
        out.seq_len = f.seq_len;
        out.model_lr = f.model_lr;
        out.gen_lr = f.gen_lr;
        out.alpha = f.alpha;
        out.beta = f.beta;
        out.replay_per_task = f.replay_per_task;
        out.gen_group = f.gen_group;
        out.eval_episodes = f.eval_episodes;
        out
    }
}

/// Apply `key=value` overrides to a JSON document by dotted path; values are
/// parsed as JSON first and fall back to strings.
pub fn apply_overrides(text: &str, overrides: &[String]) -> Result<String> {
    let mut doc: serde_json::Value = serde_json::from_str(text).context("invalid config JSON")?;
    for ov in overrides {
        let (path, raw) = ov
            .split_once('=')
            .with_context(|| format!("override {:?} is not key=value", ov))?;
        let value = serde_json::from_str(raw)
            .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
        let mut cur = &mut doc;
        let parts: Vec<&str> = path.split('.').collect();
        for part in &parts[..parts.len() - 1] {
            cur = cur
                .as_object_mut()
                .with_context(|| format!("override path {:?}: {:?} is not an object", path, part))?
                .entry(part.to_string())
                .or_insert_with(|| serde_json::json!({}));
        }
        cur.as_object_mut()
            .with_context(|| format!("override path {:?} does not end in an object", path))?
            .insert(parts[parts.len() - 1].to_string(), value);
    }
    Ok(serde_json::to_string_pretty(&doc)?)
}

/// FNV-1a hash of the canonical config text, recorded in the manifest.
pub fn config_hash(text: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in text.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}
