//! Learning agents.
//!
//! [`MbieAgent`] covers Monitored MBIE-EB and its two ablations (plain
//! MBIE-EB and pessimistic MBIE-EB), each optionally with a known monitor.
//! [`DirectedE2`] is the successor-representation baseline.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::EnvId;
use crate::error::{Error, Result};
use crate::mdp::{JointAction, JointState, MonMdp, SpaceShape};
use crate::model::{theory_parameters, Tables, Transition};
use crate::monitor::{Monitor, MonitorKind};
use crate::planning::{
    build_known_monitor_models, build_r_basic, build_r_obs, build_r_opt, empirical_transitions,
    known_monitor_transitions, value_iteration, BonusParams, ModelMdp, RewardTable, Stop,
    Transitions, ValueTable, ZeroCountRule,
};

/// The interface the harness drives. Agents see joint states, proxy rewards
/// and monitor rewards only.
pub trait Agent: Send {
    /// Called once at the start of every training episode.
    fn begin_episode(&mut self, state: JointState);
    /// Training-time action.
    fn act(&mut self, state: JointState) -> JointAction;
    fn record(&mut self, transition: &Transition);
    /// Exploration-free action used for evaluation. Must not change any state.
    fn greedy_action(&self, state: JointState) -> JointAction;
    /// Digest of all learned state.
    fn fingerprint(&self) -> u64;
}

/// How many of the first `k` episodes may be observe episodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ObserveSchedule {
    /// `log_base(k)`.
    Log { base: f64 },
    Constant { episodes: f64 },
    Never,
}

impl ObserveSchedule {
    pub fn budget(&self, k: u64) -> f64 {
        match *self {
            ObserveSchedule::Log { base } => (k as f64).ln() / base.ln(),
            ObserveSchedule::Constant { episodes } => episodes,
            ObserveSchedule::Never => f64::NEG_INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MbieVariant {
    /// Observe and optimize episodes.
    Monitored,
    /// Optimistic about every unknown quantity, never observes on purpose.
    Plain,
    /// Pessimistic about unobserved rewards, never observes on purpose.
    Pessimistic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MbieParams {
    pub variant: MbieVariant,
    pub q_opt_init: f64,
    pub q_obs_init: f64,
    pub bonus: BonusParams,
    pub schedule: ObserveSchedule,
    pub sweeps: usize,
    pub known_monitor: bool,
    /// Also refresh the optimize table during observe episodes, so that the
    /// evaluation policy tracks the latest model.
    pub refresh_opt: bool,
}

impl MbieParams {
    /// Hyperparameter defaults per environment.
    pub fn defaults(variant: MbieVariant, env: EnvId) -> Self {
        let q_opt_init = match (variant, env) {
            (MbieVariant::Plain | MbieVariant::Pessimistic, _) => 50.0,
            (MbieVariant::Monitored, EnvId::RiverSwim) => 30.0,
            (MbieVariant::Monitored, _) => 1.0,
        };
        MbieParams {
            variant,
            q_opt_init,
            q_obs_init: 100.0,
            bonus: BonusParams {
                beta: 5e-4,
                beta_env: 5e-4,
                beta_mon: 5e-4,
                beta_obs: 5e-4,
                beta_klucb: 5e-2,
                growth: true,
                zero_count: ZeroCountRule::OptimisticInit,
                raw_count_growth: false,
                observe_unseen_only: true,
            },
            schedule: match variant {
                MbieVariant::Monitored => ObserveSchedule::Log { base: 1.005 },
                _ => ObserveSchedule::Never,
            },
            sweeps: 50,
            known_monitor: false,
            refresh_opt: true,
        }
    }

    /// Replace bonuses and the observe budget with the values backed by the
    /// sample-complexity analysis.
    pub fn with_theory(mut self, shape: SpaceShape, gamma: f64, rho: f64, epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0 && delta > 0.0 && delta < 1.0) {
            return Err(Error::Config(format!(
                "theory mode needs epsilon, delta in (0, 1); got {epsilon}, {delta}"
            )));
        }
        let t = theory_parameters(shape.n_states(), shape.n_actions(), epsilon, delta, gamma, rho);
        self.bonus.beta = t.beta;
        self.bonus.beta_env = t.beta_env;
        self.bonus.beta_mon = t.beta_mon;
        self.bonus.beta_obs = t.beta_obs;
        self.bonus.beta_klucb = t.beta_klucb;
        self.bonus.growth = false;
        if self.variant == MbieVariant::Monitored {
            self.schedule = ObserveSchedule::Constant {
                episodes: t.observe_episodes,
            };
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Observe,
    Optimize,
}

/// Monitored MBIE-EB and its ablations.
#[derive(Debug, Clone)]
pub struct MbieAgent {
    shape: SpaceShape,
    gamma: f64,
    r_env_min: f64,
    params: MbieParams,
    monitor: Option<Monitor>,
    tables: Tables,
    q_opt: ValueTable,
    q_obs: ValueTable,
    kappa: u64,
    episodes: u64,
    mode: Mode,
}

impl MbieAgent {
    pub fn new(mdp: &MonMdp, params: MbieParams) -> Result<Self> {
        if params.sweeps == 0 {
            return Err(Error::Config("value iteration needs at least one sweep".into()));
        }
        if let ObserveSchedule::Log { base } = params.schedule {
            if !(base > 1.0) {
                return Err(Error::Config(format!("observe schedule base {base} must exceed 1")));
            }
        }
        let shape = mdp.shape();
        let spec = mdp.spec();
        Ok(MbieAgent {
            shape,
            gamma: spec.gamma,
            r_env_min: spec.env_reward.min,
            params,
            monitor: params.known_monitor.then(|| mdp.monitor().clone()),
            tables: Tables::new(shape),
            q_opt: ValueTable::new(shape.n_states(), shape.n_actions(), params.q_opt_init),
            q_obs: ValueTable::new(shape.n_states(), shape.n_actions(), params.q_obs_init),
            kappa: 0,
            episodes: 0,
            mode: Mode::Optimize,
        })
    }

    pub fn tables(&self) -> &Tables {
        &self.tables
    }

    pub fn q_opt(&self) -> &ValueTable {
        &self.q_opt
    }

    pub fn q_obs(&self) -> &ValueTable {
        &self.q_obs
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Observe episodes started so far.
    pub fn observe_episodes(&self) -> u64 {
        self.kappa
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    /// `(transitions, basic, optimize, observe)` reward models for the
    /// current tables.
    fn models(&self) -> (Transitions, RewardTable, RewardTable, Option<RewardTable>) {
        let p = &self.params.bonus;
        match &self.monitor {
            Some(monitor) => {
                let (basic, opt, obs) =
                    build_known_monitor_models(&self.tables, monitor, p, self.r_env_min);
                (known_monitor_transitions(&self.tables, monitor), basic, opt, Some(obs))
            }
            None => {
                let observing = self.params.variant == MbieVariant::Monitored;
                (
                    empirical_transitions(&self.tables),
                    build_r_basic(&self.tables, p),
                    build_r_opt(&self.tables, p, self.r_env_min),
                    observing.then(|| build_r_obs(&self.tables, p)),
                )
            }
        }
    }

    fn solve(&self, transitions: Transitions, rewards: RewardTable, pin: f64, q: &mut ValueTable) {
        let model = ModelMdp::new(transitions, rewards, self.gamma, pin)
            .expect("model built from the agent's own tables");
        value_iteration(&model, q, Stop::Sweeps(self.params.sweeps));
    }

    fn current(&self) -> &ValueTable {
        match self.mode {
            Mode::Observe => &self.q_obs,
            Mode::Optimize => &self.q_opt,
        }
    }
}

impl Agent for MbieAgent {
    fn begin_episode(&mut self, _state: JointState) {
        self.episodes += 1;
        let observe = self.params.variant == MbieVariant::Monitored
            && self.kappa as f64 <= self.params.schedule.budget(self.episodes);
        let (transitions, basic, opt, obs) = self.models();
        let mut q_opt = std::mem::replace(&mut self.q_opt, ValueTable::new(0, 0, 0.0));
        let mut q_obs = std::mem::replace(&mut self.q_obs, ValueTable::new(0, 0, 0.0));
        if observe {
            let obs = obs.expect("observe model exists for the monitored variant");
            self.solve(transitions.clone(), obs, self.params.q_obs_init, &mut q_obs);
            self.kappa += 1;
            self.mode = Mode::Observe;
        } else {
            self.mode = Mode::Optimize;
        }
        if !observe || self.params.refresh_opt {
            let rewards = match self.params.variant {
                MbieVariant::Plain => basic,
                MbieVariant::Monitored | MbieVariant::Pessimistic => opt,
            };
            self.solve(transitions, rewards, self.params.q_opt_init, &mut q_opt);
        }
        self.q_opt = q_opt;
        self.q_obs = q_obs;
    }

    fn act(&mut self, state: JointState) -> JointAction {
        let s = self.shape.s(state);
        self.shape.split_action(self.current().greedy(s))
    }

    fn record(&mut self, transition: &Transition) {
        self.tables.record(transition);
    }

    fn greedy_action(&self, state: JointState) -> JointAction {
        self.shape.split_action(self.q_opt.greedy(self.shape.s(state)))
    }

    fn fingerprint(&self) -> u64 {
        self.tables.counts.checksum() ^ self.q_opt.checksum().rotate_left(21) ^ self.q_obs.checksum().rotate_left(42)
    }
}

/// Initial value of the learned environment-reward model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RewardInit {
    Uniform { low: f64, high: f64 },
    Constant { value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct De2Params {
    pub q_init: f64,
    pub psi_init: f64,
    pub reward_init: RewardInit,
    /// Exploration threshold on `ln t / N(goal)`.
    pub threshold: f64,
    pub alpha_start: f64,
    pub alpha_end: f64,
    /// Steps over which the learning rate anneals linearly.
    pub anneal_steps: u64,
}

impl De2Params {
    pub fn defaults(env: EnvId, monitor: MonitorKind, anneal_steps: u64) -> Self {
        let annealed = matches!(monitor, MonitorKind::NSupporters | MonitorKind::NExperts);
        let (alpha_start, alpha_end) = match env {
            EnvId::RiverSwim => (0.5, 0.05),
            EnvId::Hazard if annealed => (0.5, 0.1),
            EnvId::Hazard => (0.5, 0.5),
            _ if annealed => (1.0, 0.1),
            _ => (1.0, 1.0),
        };
        let reward_init = match env {
            EnvId::Bottleneck => RewardInit::Constant { value: -10.0 },
            _ => RewardInit::Uniform {
                low: -0.1,
                high: 0.1,
            },
        };
        De2Params {
            q_init: -10.0,
            psi_init: 1.0,
            reward_init,
            threshold: 1e-2,
            alpha_start,
            alpha_end,
            anneal_steps,
        }
    }
}

/// Directed exploration-exploitation with goal-conditioned visitation values.
///
/// Each step the least-visited joint pair becomes the goal. When
/// `ln t / N(goal)` exceeds the threshold the agent follows the visitation
/// values toward that goal; otherwise it exploits its Q-values. Q-values
/// learn from a running-mean reward model, so rewards it never observes keep
/// their initial guess.
#[derive(Debug, Clone)]
pub struct DirectedE2 {
    shape: SpaceShape,
    gamma: f64,
    params: De2Params,
    q: Vec<f64>,
    /// `psi[pair * n_pairs + goal]`.
    psi: Vec<f64>,
    counts: Vec<u64>,
    reward_model: Vec<f64>,
    reward_seen: Vec<u64>,
    mon_reward_sum: Vec<f64>,
    mon_reward_seen: Vec<u64>,
    steps: u64,
    scratch: Vec<f64>,
}

impl DirectedE2 {
    pub fn new(mdp: &MonMdp, params: De2Params, rng: &mut ChaCha8Rng) -> Result<Self> {
        if !(params.alpha_start > 0.0 && params.alpha_start <= 1.0 && params.alpha_end > 0.0 && params.alpha_end <= 1.0) {
            return Err(Error::Config("learning rates must lie in (0, 1]".into()));
        }
        if let RewardInit::Uniform { low, high } = params.reward_init {
            if !(low <= high) {
                return Err(Error::Config(format!("empty reward-init range [{low}, {high}]")));
            }
        }
        let shape = mdp.shape();
        let pairs = shape.n_pairs();
        let env_pairs = shape.env_states * shape.env_actions;
        let reward_model = (0..env_pairs)
            .map(|_| match params.reward_init {
                RewardInit::Uniform { low, high } if low < high => rng.gen_range(low..high),
                RewardInit::Uniform { low, .. } => low,
                RewardInit::Constant { value } => value,
            })
            .collect();
        Ok(DirectedE2 {
            shape,
            gamma: mdp.spec().gamma,
            params,
            q: vec![params.q_init; pairs],
            psi: vec![params.psi_init; pairs * pairs],
            counts: vec![0; pairs],
            reward_model,
            reward_seen: vec![0; env_pairs],
            mon_reward_sum: vec![0.0; shape.mon_states * shape.mon_actions],
            mon_reward_seen: vec![0; shape.mon_states * shape.mon_actions],
            steps: 0,
            scratch: vec![0.0; pairs],
        })
    }

    pub fn alpha(&self) -> f64 {
        let p = &self.params;
        let frac = if p.anneal_steps == 0 {
            1.0
        } else {
            (self.steps as f64 / p.anneal_steps as f64).min(1.0)
        };
        p.alpha_start + (p.alpha_end - p.alpha_start) * frac
    }

    pub fn q(&self, state: usize, action: usize) -> f64 {
        self.q[state * self.shape.n_actions() + action]
    }

    pub fn reward_estimate(&self, env_state: usize, env_action: usize) -> f64 {
        self.reward_model[env_state * self.shape.env_actions + env_action]
    }

    /// The least-visited pair, lowest index on ties.
    pub fn goal(&self) -> usize {
        let mut best = 0;
        for (i, &n) in self.counts.iter().enumerate() {
            if n < self.counts[best] {
                best = i;
            }
        }
        best
    }

    /// Whether the next action explores toward the goal.
    pub fn exploring(&self) -> bool {
        let goal = self.goal();
        let n = self.counts[goal];
        if n == 0 {
            return true;
        }
        let t = (self.steps + 1) as f64;
        t.ln() / n as f64 > self.params.threshold
    }

    fn row_argmax(values: impl Iterator<Item = f64>) -> usize {
        let mut best = 0;
        let mut best_v = f64::NEG_INFINITY;
        for (i, v) in values.enumerate() {
            if v > best_v {
                best = i;
                best_v = v;
            }
        }
        best
    }
}

impl Agent for DirectedE2 {
    fn begin_episode(&mut self, _state: JointState) {}

    fn act(&mut self, state: JointState) -> JointAction {
        let s = self.shape.s(state);
        let na = self.shape.n_actions();
        let a = if self.exploring() {
            let goal = self.goal();
            let pairs = self.shape.n_pairs();
            Self::row_argmax((0..na).map(|a| self.psi[(s * na + a) * pairs + goal]))
        } else {
            Self::row_argmax(self.q[s * na..(s + 1) * na].iter().copied())
        };
        self.shape.split_action(a)
    }

    fn record(&mut self, t: &Transition) {
        let shape = self.shape;
        let na = shape.n_actions();
        let pairs = shape.n_pairs();
        let s = shape.s(t.state);
        let pair = s * na + shape.a(t.action);
        let env_pair = t.state.env * shape.env_actions + t.action.env;
        let mon_pair = t.state.mon * shape.mon_actions + t.action.mon;
        let alpha = self.alpha();
        self.counts[pair] += 1;
        self.steps += 1;

        if let Some(r) = t.proxy.value() {
            let n = self.reward_seen[env_pair] + 1;
            self.reward_seen[env_pair] = n;
            let old = if n == 1 { 0.0 } else { self.reward_model[env_pair] };
            self.reward_model[env_pair] = old + (r - old) / n as f64;
        }
        self.mon_reward_seen[mon_pair] += 1;
        self.mon_reward_sum[mon_pair] += t.mon_reward;
        let mon_reward = self.mon_reward_sum[mon_pair] / self.mon_reward_seen[mon_pair] as f64;

        let next = shape.s(t.next_state);
        let future = if t.terminated {
            0.0
        } else {
            self.q[next * na..(next + 1) * na]
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let target = self.reward_model[env_pair] + mon_reward + self.gamma * future;
        self.q[pair] += alpha * (target - self.q[pair]);

        // Visitation values toward every goal at once.
        let scratch = &mut self.scratch;
        if t.terminated {
            scratch.iter_mut().for_each(|v| *v = 0.0);
        } else {
            scratch.iter_mut().for_each(|v| *v = f64::NEG_INFINITY);
            for a in 0..na {
                let row = &self.psi[(next * na + a) * pairs..(next * na + a + 1) * pairs];
                for (m, &v) in scratch.iter_mut().zip(row) {
                    if v > *m {
                        *m = v;
                    }
                }
            }
        }
        let row = &mut self.psi[pair * pairs..(pair + 1) * pairs];
        for (g, (psi, &best)) in row.iter_mut().zip(scratch.iter()).enumerate() {
            let hit = if g == pair { 1.0 } else { 0.0 };
            *psi += alpha * (hit + self.gamma * best - *psi);
        }
    }

    fn greedy_action(&self, state: JointState) -> JointAction {
        let s = self.shape.s(state);
        let na = self.shape.n_actions();
        self.shape
            .split_action(Self::row_argmax(self.q[s * na..(s + 1) * na].iter().copied()))
    }

    fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in self.q.iter().chain(&self.reward_model) {
            h = (h ^ v.to_bits()).wrapping_mul(0x100_0000_01b3);
        }
        for &c in &self.counts {
            h = (h ^ c).wrapping_mul(0x100_0000_01b3);
        }
        h
    }
}

/// Plays a fixed joint policy given by flat action indices. Learns nothing.
#[derive(Debug, Clone)]
pub struct FixedPolicy {
    shape: SpaceShape,
    policy: Vec<usize>,
}

impl FixedPolicy {
    pub fn new(shape: SpaceShape, policy: Vec<usize>) -> Result<Self> {
        if policy.len() != shape.n_states() || policy.iter().any(|&a| a >= shape.n_actions()) {
            return Err(Error::Contract("policy does not match the joint spaces".into()));
        }
        Ok(FixedPolicy { shape, policy })
    }
}

impl Agent for FixedPolicy {
    fn begin_episode(&mut self, _state: JointState) {}

    fn act(&mut self, state: JointState) -> JointAction {
        self.greedy_action(state)
    }

    fn record(&mut self, _transition: &Transition) {}

    fn greedy_action(&self, state: JointState) -> JointAction {
        self.shape.split_action(self.policy[self.shape.s(state)])
    }

    fn fingerprint(&self) -> u64 {
        0
    }
}
