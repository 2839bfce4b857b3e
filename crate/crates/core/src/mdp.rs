//! The Mon-MDP data model and the single-step interaction contract.
//!
//! At every step the agent picks a joint action `(env_action, mon_action)` in
//! a joint state `(env_state, mon_state)`. The environment moves and produces
//! its reward, the monitor moves and produces its own reward, and the monitor
//! function decides whether the environment reward is shown to the agent.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::env::EnvDynamics;
use crate::error::{Error, Result};
use crate::monitor::Monitor;
use crate::rng::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct JointState {
    pub env: usize,
    pub mon: usize,
}

impl JointState {
    pub fn new(env: usize, mon: usize) -> Self {
        JointState { env, mon }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct JointAction {
    pub env: usize,
    pub mon: usize,
}

impl JointAction {
    pub fn new(env: usize, mon: usize) -> Self {
        JointAction { env, mon }
    }
}

/// What the agent sees in place of the environment reward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProxyReward {
    Observed(f64),
    Unobserved,
}

impl ProxyReward {
    pub fn is_observed(&self) -> bool {
        matches!(self, ProxyReward::Observed(_))
    }

    pub fn value(&self) -> Option<f64> {
        match *self {
            ProxyReward::Observed(v) => Some(v),
            ProxyReward::Unobserved => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub next_state: JointState,
    /// Ground truth. Only the harness may look at this.
    pub env_reward: f64,
    pub proxy_reward: ProxyReward,
    pub mon_reward: f64,
    pub terminated: bool,
    pub truncated: bool,
}

/// Sizes of the four component spaces and the row-major flattening of
/// joint states and actions: `env * |mon| + mon`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpaceShape {
    pub env_states: usize,
    pub mon_states: usize,
    pub env_actions: usize,
    pub mon_actions: usize,
}

impl SpaceShape {
    pub fn n_states(&self) -> usize {
        self.env_states * self.mon_states
    }

    pub fn n_actions(&self) -> usize {
        self.env_actions * self.mon_actions
    }

    pub fn n_pairs(&self) -> usize {
        self.n_states() * self.n_actions()
    }

    pub fn state_index(&self, s: JointState) -> Result<usize> {
        if s.env >= self.env_states || s.mon >= self.mon_states {
            return Err(Error::Contract(format!(
                "state {s:?} outside {}x{} state space",
                self.env_states, self.mon_states
            )));
        }
        Ok(s.env * self.mon_states + s.mon)
    }

    pub fn state_from_index(&self, index: usize) -> Result<JointState> {
        if index >= self.n_states() {
            return Err(Error::Contract(format!(
                "state index {index} outside [0, {})",
                self.n_states()
            )));
        }
        Ok(JointState::new(index / self.mon_states, index % self.mon_states))
    }

    pub fn action_index(&self, a: JointAction) -> Result<usize> {
        if a.env >= self.env_actions || a.mon >= self.mon_actions {
            return Err(Error::Contract(format!(
                "action {a:?} outside {}x{} action space",
                self.env_actions, self.mon_actions
            )));
        }
        Ok(a.env * self.mon_actions + a.mon)
    }

    pub fn action_from_index(&self, index: usize) -> Result<JointAction> {
        if index >= self.n_actions() {
            return Err(Error::Contract(format!(
                "action index {index} outside [0, {})",
                self.n_actions()
            )));
        }
        Ok(JointAction::new(index / self.mon_actions, index % self.mon_actions))
    }

    // Unchecked variants for hot loops over indices the caller built itself.

    #[inline]
    pub(crate) fn s(&self, s: JointState) -> usize {
        s.env * self.mon_states + s.mon
    }

    #[inline]
    pub(crate) fn a(&self, a: JointAction) -> usize {
        a.env * self.mon_actions + a.mon
    }

    #[inline]
    pub(crate) fn split_state(&self, index: usize) -> JointState {
        JointState::new(index / self.mon_states, index % self.mon_states)
    }

    #[inline]
    pub(crate) fn split_action(&self, index: usize) -> JointAction {
        JointAction::new(index / self.mon_actions, index % self.mon_actions)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBounds {
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonMdpSpec {
    pub shape: SpaceShape,
    pub gamma: f64,
    pub horizon: usize,
    pub env_reward: RewardBounds,
    pub mon_reward: RewardBounds,
}

/// An environment and a monitor wired together.
///
/// Immutable once built; all per-episode state lives with the caller, so one
/// instance can drive training and evaluation episodes side by side.
#[derive(Debug, Clone)]
pub struct MonMdp {
    env: Arc<EnvDynamics>,
    monitor: Monitor,
    spec: MonMdpSpec,
}

impl MonMdp {
    pub fn new(env: Arc<EnvDynamics>, monitor: Monitor, gamma: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::Config(format!("discount {gamma} outside [0, 1)")));
        }
        let (mon_states, mon_actions) = monitor.spec().spaces();
        let (env_min, env_max) = env.reward_bounds();
        let (mon_min, mon_max) = monitor.reward_bounds();
        let spec = MonMdpSpec {
            shape: SpaceShape {
                env_states: env.n_states(),
                mon_states,
                env_actions: env.n_actions(),
                mon_actions,
            },
            gamma,
            horizon: env.horizon(),
            env_reward: RewardBounds {
                min: env_min,
                max: env_max,
            },
            mon_reward: RewardBounds {
                min: mon_min,
                max: mon_max,
            },
        };
        Ok(MonMdp { env, monitor, spec })
    }

    pub fn spec(&self) -> &MonMdpSpec {
        &self.spec
    }

    pub fn shape(&self) -> SpaceShape {
        self.spec.shape
    }

    pub fn env(&self) -> &Arc<EnvDynamics> {
        &self.env
    }

    pub fn monitor(&self) -> &Monitor {
        &self.monitor
    }

    /// Start a new episode. The monitor's initial state is drawn from the
    /// environment stream.
    pub fn reset(&self, rng: &mut SimRng) -> JointState {
        let mon = self.monitor.sample_initial_state(&mut rng.env);
        JointState::new(self.env.start(), mon)
    }

    /// Start an episode with the monitor forced into `mon_state`.
    pub fn reset_with_monitor(&self, mon_state: usize) -> Result<JointState> {
        let state = JointState::new(self.env.start(), mon_state);
        self.spec.shape.state_index(state)?;
        Ok(state)
    }

    /// Advance one step. `elapsed` is the number of steps already taken in
    /// the current episode; the step that reaches the horizon is truncated.
    pub fn step(
        &self,
        state: JointState,
        action: JointAction,
        elapsed: usize,
        rng: &mut SimRng,
    ) -> Result<StepOutcome> {
        let shape = &self.spec.shape;
        shape.state_index(state)?;
        shape.action_index(action)?;
        if elapsed >= self.spec.horizon {
            return Err(Error::Contract(format!(
                "episode already ended at step {elapsed}"
            )));
        }
        let outcome = self.env.sample(state.env, action.env, &mut rng.env);
        let mon = self.monitor.transition(
            state.mon,
            action.mon,
            state.env,
            action.env,
            outcome.reward,
            &mut rng.monitor,
        )?;
        let terminated = outcome.terminal;
        Ok(StepOutcome {
            next_state: JointState::new(outcome.next, mon.next_mon_state),
            env_reward: outcome.reward,
            proxy_reward: mon.proxy,
            mon_reward: mon.mon_reward,
            terminated,
            truncated: !terminated && elapsed + 1 >= self.spec.horizon,
        })
    }
}
