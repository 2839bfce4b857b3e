//! Experiment configuration, stored as TOML.
//!
//! ```toml
//! seeds = [0, 1, 2]
//! training_steps = 50000
//!
//! [env]
//! id = "bottleneck"
//!
//! [monitor]
//! kind = "button"
//! rho = 0.05
//!
//! [agent]
//! kind = "monitored-mbie-eb"
//! known_monitor = true
//! ```
//!
//! Optional fields fall back to per-environment defaults. [`ExperimentConfig::resolve`]
//! fills every one of them in, and the resolved document is what gets written
//! to a run's manifest.

use std::path::Path;
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{
    Agent, De2Params, DirectedE2, MbieAgent, MbieParams, MbieVariant, ObserveSchedule, RewardInit,
};
use crate::env::{self, EnvDynamics, EnvId, EnvOptions, RiverSwimParams};
use crate::error::{Error, Result};
use crate::mdp::MonMdp;
use crate::monitor::{Monitor, MonitorKind, MonitorSpec};
use crate::planning::{BonusParams, ZeroCountRule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub id: EnvId,
    /// Map file replacing the shipped layout.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    /// Let the monitor reveal rewards on ⊥ cells.
    #[serde(default)]
    pub observable_bot_cells: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub river_swim: Option<RiverSwimParams>,
}

impl EnvConfig {
    pub fn new(id: EnvId) -> Self {
        EnvConfig {
            id,
            map: None,
            horizon: None,
            observable_bot_cells: false,
            river_swim: None,
        }
    }

    pub fn build(&self) -> Result<EnvDynamics> {
        let map = match &self.map {
            Some(path) => Some(std::fs::read_to_string(path).map_err(|e| Error::io(Path::new(path), e))?),
            None => None,
        };
        env::build(
            self.id,
            &EnvOptions {
                map,
                horizon: self.horizon,
                observable_bot_cells: self.observable_bot_cells,
                river_swim: self.river_swim.unwrap_or_default(),
            },
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorConfig {
    pub kind: MonitorKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
}

impl MonitorConfig {
    pub fn new(kind: MonitorKind) -> Self {
        MonitorConfig {
            kind,
            rho: None,
            n: None,
        }
    }

    pub fn spec(&self) -> MonitorSpec {
        let mut spec = MonitorSpec::new(self.kind);
        if let Some(rho) = self.rho {
            spec = spec.with_rho(rho);
        }
        if let Some(n) = self.n {
            spec = spec.with_n(n);
        }
        spec
    }
}

/// Bonus settings derived from the sample-complexity analysis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryConfig {
    pub epsilon: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MbieConfig {
    #[serde(default)]
    pub known_monitor: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theory: Option<TheoryConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_opt_init: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_obs_init: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_env: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_mon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_obs: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_klucb: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub growth: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zero_count: Option<ZeroCountRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_count_growth: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observe_unseen_only: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observe: Option<ObserveSchedule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweeps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refresh_opt: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct De2Config {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_init: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi_init: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward_init: Option<RewardInit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_start: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_end: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anneal_steps: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AgentConfig {
    MonitoredMbieEb(MbieConfig),
    MbieEb(MbieConfig),
    PessimisticMbieEb(MbieConfig),
    DirectedE2(De2Config),
}

impl AgentConfig {
    pub fn name(&self) -> &'static str {
        match self {
            AgentConfig::MonitoredMbieEb(_) => "monitored-mbie-eb",
            AgentConfig::MbieEb(_) => "mbie-eb",
            AgentConfig::PessimisticMbieEb(_) => "pessimistic-mbie-eb",
            AgentConfig::DirectedE2(_) => "directed-e2",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "monitored-mbie-eb" => AgentConfig::MonitoredMbieEb(MbieConfig::default()),
            "mbie-eb" => AgentConfig::MbieEb(MbieConfig::default()),
            "pessimistic-mbie-eb" => AgentConfig::PessimisticMbieEb(MbieConfig::default()),
            "directed-e2" => AgentConfig::DirectedE2(De2Config::default()),
            other => return Err(Error::Config(format!("unknown agent kind `{other}`"))),
        })
    }

    fn mbie(&self) -> Option<(MbieVariant, &MbieConfig)> {
        match self {
            AgentConfig::MonitoredMbieEb(c) => Some((MbieVariant::Monitored, c)),
            AgentConfig::MbieEb(c) => Some((MbieVariant::Plain, c)),
            AgentConfig::PessimisticMbieEb(c) => Some((MbieVariant::Pessimistic, c)),
            AgentConfig::DirectedE2(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CiMethod {
    /// `1.96 * sd / sqrt(n)` over seeds.
    #[default]
    Normal,
    /// Percentile bootstrap over seeds.
    Bootstrap,
}

fn default_eval_every() -> u64 {
    100
}

fn default_eval_episodes() -> usize {
    100
}

fn default_gamma() -> f64 {
    0.99
}

fn default_threshold() -> f64 {
    0.9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub training_steps: u64,
    #[serde(default = "default_eval_every")]
    pub eval_every: u64,
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Fraction of the oracle return that counts as solved.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub ci: CiMethod,
    /// Require the standard cadence: evaluate every 100 steps over 100 episodes.
    #[serde(default)]
    pub strict_protocol: bool,
    pub env: EnvConfig,
    pub monitor: MonitorConfig,
    pub agent: AgentConfig,
}

impl ExperimentConfig {
    pub fn new(env: EnvId, monitor: MonitorKind, agent: AgentConfig) -> Self {
        ExperimentConfig {
            seeds: (0..10).collect(),
            training_steps: 10_000,
            eval_every: default_eval_every(),
            eval_episodes: default_eval_episodes(),
            gamma: default_gamma(),
            threshold: default_threshold(),
            ci: CiMethod::Normal,
            strict_protocol: false,
            env: EnvConfig::new(env),
            monitor: MonitorConfig::new(monitor),
            agent,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment config always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if self.eval_every == 0 || self.eval_episodes == 0 {
            return Err(Error::Config("eval_every and eval_episodes must be positive".into()));
        }
        if self.strict_protocol && (self.eval_every != 100 || self.eval_episodes != 100) {
            return Err(Error::Config(
                "strict_protocol requires eval_every = 100 and eval_episodes = 100".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("discount {} outside [0, 1)", self.gamma)));
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::Config(format!("threshold {} outside (0, 1]", self.threshold)));
        }
        self.monitor.spec().validate()?;
        if let AgentConfig::MbieEb(c) | AgentConfig::PessimisticMbieEb(c) = &self.agent {
            if c.observe.is_some_and(|o| o != ObserveSchedule::Never) {
                return Err(Error::Config(format!(
                    "{} never runs observe episodes",
                    self.agent.name()
                )));
            }
        }
        Ok(())
    }

    pub fn build_mdp(&self) -> Result<MonMdp> {
        let env = Arc::new(self.env.build()?);
        let monitor = Monitor::new(self.monitor.spec(), &env)?;
        MonMdp::new(env, monitor, self.gamma)
    }

    /// Copy of the config with every optional hyperparameter filled in.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        self.validate()?;
        let mdp = self.build_mdp()?;
        let mut out = self.clone();
        let spec = self.monitor.spec();
        out.monitor.rho = Some(spec.rho);
        out.monitor.n = Some(spec.n);
        out.env.horizon = Some(mdp.spec().horizon);
        out.agent = match self.agent {
            AgentConfig::DirectedE2(c) => {
                let p = de2_params(self, &c);
                AgentConfig::DirectedE2(De2Config {
                    q_init: Some(p.q_init),
                    psi_init: Some(p.psi_init),
                    reward_init: Some(p.reward_init),
                    threshold: Some(p.threshold),
                    alpha_start: Some(p.alpha_start),
                    alpha_end: Some(p.alpha_end),
                    anneal_steps: Some(p.anneal_steps),
                })
            }
            _ => {
                let (_, c) = self.agent.mbie().expect("non-DE2 agents are MBIE variants");
                let p = mbie_params(self, &mdp)?;
                let resolved = MbieConfig {
                    known_monitor: c.known_monitor,
                    theory: c.theory,
                    q_opt_init: Some(p.q_opt_init),
                    q_obs_init: Some(p.q_obs_init),
                    beta: Some(p.bonus.beta),
                    beta_env: Some(p.bonus.beta_env),
                    beta_mon: Some(p.bonus.beta_mon),
                    beta_obs: Some(p.bonus.beta_obs),
                    beta_klucb: Some(p.bonus.beta_klucb),
                    growth: Some(p.bonus.growth),
                    zero_count: Some(p.bonus.zero_count),
                    raw_count_growth: Some(p.bonus.raw_count_growth),
                    observe_unseen_only: Some(p.bonus.observe_unseen_only),
                    observe: Some(p.schedule),
                    sweeps: Some(p.sweeps),
                    refresh_opt: Some(p.refresh_opt),
                };
                match self.agent {
                    AgentConfig::MonitoredMbieEb(_) => AgentConfig::MonitoredMbieEb(resolved),
                    AgentConfig::MbieEb(_) => AgentConfig::MbieEb(resolved),
                    _ => AgentConfig::PessimisticMbieEb(resolved),
                }
            }
        };
        Ok(out)
    }

    /// A fresh agent for one seed. `rng` is the agent's own stream.
    pub fn build_agent(&self, mdp: &MonMdp, rng: &mut ChaCha8Rng) -> Result<Box<dyn Agent>> {
        match &self.agent {
            AgentConfig::DirectedE2(c) => Ok(Box::new(DirectedE2::new(mdp, de2_params(self, c), rng)?)),
            _ => Ok(Box::new(MbieAgent::new(mdp, mbie_params(self, mdp)?)?)),
        }
    }
}

fn mbie_params(config: &ExperimentConfig, mdp: &MonMdp) -> Result<MbieParams> {
    let (variant, c) = config.agent.mbie().expect("MBIE agent config");
    let mut p = MbieParams::defaults(variant, config.env.id);
    if let Some(t) = c.theory {
        p = p.with_theory(mdp.shape(), config.gamma, mdp.monitor().spec().rho, t.epsilon, t.delta)?;
    }
    p.known_monitor = c.known_monitor;
    let b: &mut BonusParams = &mut p.bonus;
    b.beta = c.beta.unwrap_or(b.beta);
    b.beta_env = c.beta_env.unwrap_or(b.beta_env);
    b.beta_mon = c.beta_mon.unwrap_or(b.beta_mon);
    b.beta_obs = c.beta_obs.unwrap_or(b.beta_obs);
    b.beta_klucb = c.beta_klucb.unwrap_or(b.beta_klucb);
    b.growth = c.growth.unwrap_or(b.growth);
    b.zero_count = c.zero_count.unwrap_or(b.zero_count);
    b.raw_count_growth = c.raw_count_growth.unwrap_or(b.raw_count_growth);
    b.observe_unseen_only = c.observe_unseen_only.unwrap_or(b.observe_unseen_only);
    p.q_opt_init = c.q_opt_init.unwrap_or(p.q_opt_init);
    p.q_obs_init = c.q_obs_init.unwrap_or(p.q_obs_init);
    p.schedule = c.observe.unwrap_or(p.schedule);
    p.sweeps = c.sweeps.unwrap_or(p.sweeps);
    p.refresh_opt = c.refresh_opt.unwrap_or(p.refresh_opt);
    Ok(p)
}

fn de2_params(config: &ExperimentConfig, c: &De2Config) -> De2Params {
    let mut p = De2Params::defaults(config.env.id, config.monitor.kind, config.training_steps);
    p.q_init = c.q_init.unwrap_or(p.q_init);
    p.psi_init = c.psi_init.unwrap_or(p.psi_init);
    p.reward_init = c.reward_init.unwrap_or(p.reward_init);
    p.threshold = c.threshold.unwrap_or(p.threshold);
    p.alpha_start = c.alpha_start.unwrap_or(p.alpha_start);
    p.alpha_end = c.alpha_end.unwrap_or(p.alpha_end);
    p.anneal_steps = c.anneal_steps.unwrap_or(p.anneal_steps);
    p
}
