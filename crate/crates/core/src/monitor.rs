//! The eight monitor processes.
//!
//! A monitor has its own states, actions, rewards and dynamics, and decides
//! each step whether the agent gets to see the environment reward. Every
//! monitor except Full hides the reward of never-observable environment pairs
//! unconditionally.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::EnvDynamics;
use crate::error::{Error, Result};
use crate::mdp::ProxyReward;

/// Cost of asking, of a lit button, of a consulted supporter or expert, and
/// of any Level-Up move.
pub const QUERY_COST: f64 = -0.2;
pub const SUPPORTER_DISTRACTION: f64 = 0.001;
pub const EXPERT_MISS: f64 = -0.001;
const SEMI_RANDOM_SHOW: f64 = 0.5;

pub const BUTTON_OFF: usize = 0;
pub const BUTTON_ON: usize = 1;
pub const ASK: usize = 0;
pub const ASK_NO_OP: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MonitorKind {
    Full,
    SemiRandom,
    FullRandom,
    Ask,
    Button,
    NSupporters,
    NExperts,
    LevelUp,
}

impl MonitorKind {
    pub const ALL: [MonitorKind; 8] = [
        MonitorKind::Full,
        MonitorKind::SemiRandom,
        MonitorKind::FullRandom,
        MonitorKind::Ask,
        MonitorKind::Button,
        MonitorKind::NSupporters,
        MonitorKind::NExperts,
        MonitorKind::LevelUp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MonitorKind::Full => "full",
            MonitorKind::SemiRandom => "semi-random",
            MonitorKind::FullRandom => "full-random",
            MonitorKind::Ask => "ask",
            MonitorKind::Button => "button",
            MonitorKind::NSupporters => "n-supporters",
            MonitorKind::NExperts => "n-experts",
            MonitorKind::LevelUp => "level-up",
        }
    }

    /// Default size parameter: 4 supporters or experts, 3 levels.
    pub fn default_n(self) -> usize {
        match self {
            MonitorKind::NSupporters | MonitorKind::NExperts => 4,
            MonitorKind::LevelUp => 3,
            _ => 1,
        }
    }

    fn sized(self) -> bool {
        matches!(
            self,
            MonitorKind::NSupporters | MonitorKind::NExperts | MonitorKind::LevelUp
        )
    }
}

impl fmt::Display for MonitorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MonitorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MonitorKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown monitor '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorSpec {
    pub kind: MonitorKind,
    /// Probability of showing an observable reward.
    pub rho: f64,
    /// Number of supporters, experts or levels.
    pub n: usize,
}

impl MonitorSpec {
    pub fn new(kind: MonitorKind) -> Self {
        MonitorSpec {
            kind,
            rho: 1.0,
            n: kind.default_n(),
        }
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::Config(format!(
                "{} monitor: rho {} outside (0, 1]",
                self.kind, self.rho
            )));
        }
        if self.kind.sized() && self.n == 0 {
            return Err(Error::Config(format!("{} monitor: n must be positive", self.kind)));
        }
        if !self.kind.sized() && self.n != 1 {
            return Err(Error::Config(format!(
                "{} monitor takes no size parameter (got n = {})",
                self.kind, self.n
            )));
        }
        Ok(())
    }

    /// `(monitor states, monitor actions)`.
    pub fn spaces(&self) -> (usize, usize) {
        match self.kind {
            MonitorKind::Full | MonitorKind::SemiRandom | MonitorKind::FullRandom => (1, 1),
            MonitorKind::Ask => (1, 2),
            MonitorKind::Button => (2, 1),
            MonitorKind::NSupporters => (self.n, self.n),
            MonitorKind::NExperts | MonitorKind::LevelUp => (self.n, self.n + 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonitorStep {
    pub next_mon_state: usize,
    pub mon_reward: f64,
    pub proxy: ProxyReward,
}

/// A monitor bound to an environment's never-observable and button masks.
#[derive(Debug, Clone)]
pub struct Monitor {
    spec: MonitorSpec,
    n_env_actions: usize,
    never_observable: Vec<bool>,
    bump: Vec<bool>,
}

impl Monitor {
    pub fn new(spec: MonitorSpec, env: &EnvDynamics) -> Result<Self> {
        spec.validate()?;
        let (ns, na) = (env.n_states(), env.n_actions());
        let mut never_observable = Vec::with_capacity(ns * na);
        let mut bump = Vec::with_capacity(ns * na);
        for s in 0..ns {
            for a in 0..na {
                never_observable.push(spec.kind != MonitorKind::Full && env.never_observable(s, a));
                bump.push(env.bumps_button(s, a));
            }
        }
        Ok(Monitor {
            spec,
            n_env_actions: na,
            never_observable,
            bump,
        })
    }

    pub fn spec(&self) -> &MonitorSpec {
        &self.spec
    }

    /// Whether this monitor hides the pair's reward no matter what.
    pub fn masked(&self, env_state: usize, env_action: usize) -> bool {
        self.never_observable[env_state * self.n_env_actions + env_action]
    }

    fn bumps(&self, env_state: usize, env_action: usize) -> bool {
        self.bump[env_state * self.n_env_actions + env_action]
    }

    pub fn reward(&self, mon_state: usize, mon_action: usize) -> f64 {
        let n = self.spec.n;
        match self.spec.kind {
            MonitorKind::Full | MonitorKind::SemiRandom | MonitorKind::FullRandom => 0.0,
            MonitorKind::Ask if mon_action == ASK => QUERY_COST,
            MonitorKind::Ask => 0.0,
            MonitorKind::Button if mon_state == BUTTON_ON => QUERY_COST,
            MonitorKind::Button => 0.0,
            MonitorKind::NSupporters if mon_state == mon_action => QUERY_COST,
            MonitorKind::NSupporters => SUPPORTER_DISTRACTION,
            MonitorKind::NExperts if mon_state == mon_action => QUERY_COST,
            MonitorKind::NExperts if mon_action == n => 0.0,
            MonitorKind::NExperts => EXPERT_MISS,
            MonitorKind::LevelUp if mon_action == n => 0.0,
            MonitorKind::LevelUp => QUERY_COST,
        }
    }

    pub fn reward_bounds(&self) -> (f64, f64) {
        let (ns, na) = self.spec.spaces();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for s in 0..ns {
            for a in 0..na {
                let r = self.reward(s, a);
                lo = lo.min(r);
                hi = hi.max(r);
            }
        }
        (lo, hi)
    }

    /// Distribution of the monitor state at the start of an episode.
    pub fn initial_distribution(&self) -> Vec<f64> {
        let (ns, _) = self.spec.spaces();
        match self.spec.kind {
            MonitorKind::LevelUp => {
                let mut d = vec![0.0; ns];
                d[0] = 1.0;
                d
            }
            _ => vec![1.0 / ns as f64; ns],
        }
    }

    pub fn sample_initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match self.spec.kind {
            MonitorKind::LevelUp => 0,
            _ => rng.gen_range(0..self.spec.spaces().0),
        }
    }

    /// Exact `p(next monitor state | ...)` as `(state, probability)` pairs.
    pub fn next_state_distribution(
        &self,
        mon_state: usize,
        mon_action: usize,
        env_state: usize,
        env_action: usize,
    ) -> Vec<(usize, f64)> {
        let n = self.spec.n;
        match self.spec.kind {
            MonitorKind::Button if self.bumps(env_state, env_action) => {
                vec![(1 - mon_state, 1.0)]
            }
            MonitorKind::NSupporters | MonitorKind::NExperts => {
                (0..n).map(|s| (s, 1.0 / n as f64)).collect()
            }
            MonitorKind::LevelUp => vec![(self.level_up_next(mon_state, mon_action), 1.0)],
            _ => vec![(mon_state, 1.0)],
        }
    }

    fn level_up_next(&self, mon_state: usize, mon_action: usize) -> usize {
        let n = self.spec.n;
        if mon_action == n {
            mon_state
        } else if mon_action == mon_state {
            (mon_state + 1).min(n - 1)
        } else {
            0
        }
    }

    /// Probability that a reward passes the monitor, given that it is not
    /// masked and that the environment reward is `env_reward`.
    fn show_probability(&self, mon_state: usize, mon_action: usize, env_reward: Option<f64>) -> f64 {
        let rho = self.spec.rho;
        let n = self.spec.n;
        match self.spec.kind {
            MonitorKind::Full => 1.0,
            MonitorKind::SemiRandom => match env_reward {
                Some(r) if r == 0.0 => 1.0,
                _ => SEMI_RANDOM_SHOW,
            },
            MonitorKind::FullRandom => rho,
            MonitorKind::Ask if mon_action == ASK => rho,
            MonitorKind::Button if mon_state == BUTTON_ON => rho,
            MonitorKind::NSupporters | MonitorKind::NExperts if mon_state == mon_action => rho,
            MonitorKind::LevelUp if mon_state == n - 1 => rho,
            _ => 0.0,
        }
    }

    /// Probability that the environment reward is shown for this joint pair.
    /// Semi-Random depends on the reward itself; this returns its guaranteed
    /// lower bound for non-zero rewards.
    pub fn observation_probability(
        &self,
        mon_state: usize,
        mon_action: usize,
        env_state: usize,
        env_action: usize,
    ) -> f64 {
        if self.masked(env_state, env_action) {
            0.0
        } else {
            self.show_probability(mon_state, mon_action, None)
        }
    }

    /// One monitor step. Draws a single uniform per call for the show/hide
    /// decision, plus one for the next state of Supporters and Experts.
    pub fn transition<R: Rng + ?Sized>(
        &self,
        mon_state: usize,
        mon_action: usize,
        env_state: usize,
        env_action: usize,
        env_reward: f64,
        rng: &mut R,
    ) -> Result<MonitorStep> {
        let (ns, na) = self.spec.spaces();
        if mon_state >= ns || mon_action >= na {
            return Err(Error::Contract(format!(
                "{} monitor: state {mon_state} / action {mon_action} outside {ns}x{na}",
                self.spec.kind
            )));
        }
        if env_state * self.n_env_actions + env_action >= self.never_observable.len()
            || env_action >= self.n_env_actions
        {
            return Err(Error::Contract(format!(
                "environment pair ({env_state}, {env_action}) outside the monitor's masks"
            )));
        }
        let x: f64 = rng.gen();
        let shown = !self.masked(env_state, env_action)
            && x <= self.show_probability(mon_state, mon_action, Some(env_reward));
        let next_mon_state = match self.spec.kind {
            MonitorKind::NSupporters | MonitorKind::NExperts => rng.gen_range(0..self.spec.n),
            _ => self.next_state_distribution(mon_state, mon_action, env_state, env_action)[0].0,
        };
        Ok(MonitorStep {
            next_mon_state,
            mon_reward: self.reward(mon_state, mon_action),
            proxy: if shown {
                ProxyReward::Observed(env_reward)
            } else {
                ProxyReward::Unobserved
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{self, EnvId, EnvOptions};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bottleneck() -> EnvDynamics {
        env::build(EnvId::Bottleneck, &EnvOptions::default()).unwrap()
    }

    fn monitor(kind: MonitorKind) -> Monitor {
        Monitor::new(MonitorSpec::new(kind), &bottleneck()).unwrap()
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn spaces_per_kind() {
        let sp = |k| MonitorSpec::new(k).spaces();
        assert_eq!(sp(MonitorKind::Full), (1, 1));
        assert_eq!(sp(MonitorKind::SemiRandom), (1, 1));
        assert_eq!(sp(MonitorKind::FullRandom), (1, 1));
        assert_eq!(sp(MonitorKind::Ask), (1, 2));
        assert_eq!(sp(MonitorKind::Button), (2, 1));
        assert_eq!(sp(MonitorKind::NSupporters), (4, 4));
        assert_eq!(sp(MonitorKind::NExperts), (4, 5));
        assert_eq!(sp(MonitorKind::LevelUp), (3, 4));
    }

    #[test]
    fn invalid_specs_are_config_errors() {
        assert!(MonitorSpec::new(MonitorKind::Button).with_rho(0.0).validate().is_err());
        assert!(MonitorSpec::new(MonitorKind::Button).with_rho(1.5).validate().is_err());
        assert!(MonitorSpec::new(MonitorKind::LevelUp).with_n(0).validate().is_err());
        assert!(MonitorSpec::new(MonitorKind::Ask).with_n(3).validate().is_err());
        assert!(MonitorSpec::new(MonitorKind::NExperts).with_n(2).validate().is_ok());
    }

    #[test]
    fn full_shows_everything() {
        let m = monitor(MonitorKind::Full);
        let step = m.transition(0, 0, 0, env::STAY, 0.1, &mut rng()).unwrap();
        assert_eq!(step.proxy, ProxyReward::Observed(0.1));
        assert_eq!(step.mon_reward, 0.0);
    }

    #[test]
    fn full_ignores_the_never_observable_mask() {
        let env = bottleneck();
        let (s, a) = masked_pair(&env);
        let m = Monitor::new(MonitorSpec::new(MonitorKind::Full), &env).unwrap();
        assert!(!m.masked(s, a));
        let step = m.transition(0, 0, s, a, -10.0, &mut rng()).unwrap();
        assert_eq!(step.proxy, ProxyReward::Observed(-10.0));
    }

    fn masked_pair(env: &EnvDynamics) -> (usize, usize) {
        (0..env.n_states())
            .flat_map(|s| (0..env.n_actions()).map(move |a| (s, a)))
            .find(|&(s, a)| env.never_observable(s, a))
            .unwrap()
    }

    #[test]
    fn semi_random_passes_zero_rewards() {
        let m = monitor(MonitorKind::SemiRandom);
        let mut r = rng();
        for _ in 0..1000 {
            let step = m.transition(0, 0, 0, env::LEFT, 0.0, &mut r).unwrap();
            assert_eq!(step.proxy, ProxyReward::Observed(0.0));
        }
        let shown = (0..10_000)
            .filter(|_| m.transition(0, 0, 0, env::LEFT, 1.0, &mut r).unwrap().proxy.is_observed())
            .count();
        assert!((4700..5300).contains(&shown), "{shown}");
    }

    #[test]
    fn ask_costs_and_no_op_hides() {
        let m = monitor(MonitorKind::Ask);
        let mut r = rng();
        let noop = m.transition(0, ASK_NO_OP, 0, env::LEFT, 0.0, &mut r).unwrap();
        assert_eq!(noop.proxy, ProxyReward::Unobserved);
        assert_eq!(noop.mon_reward, 0.0);
        let ask = m.transition(0, ASK, 0, env::LEFT, 0.0, &mut r).unwrap();
        assert_eq!(ask.proxy, ProxyReward::Observed(0.0));
        assert_eq!(ask.mon_reward, -0.2);
    }

    #[test]
    fn button_off_hides_and_on_costs() {
        let m = monitor(MonitorKind::Button);
        let mut r = rng();
        let off = m.transition(BUTTON_OFF, 0, 0, env::LEFT, 1.0, &mut r).unwrap();
        assert_eq!(off.proxy, ProxyReward::Unobserved);
        assert_eq!((off.mon_reward, off.next_mon_state), (0.0, BUTTON_OFF));
        let on = m.transition(BUTTON_ON, 0, 0, env::LEFT, 1.0, &mut r).unwrap();
        assert_eq!(on.proxy, ProxyReward::Observed(1.0));
        assert_eq!((on.mon_reward, on.next_mon_state), (-0.2, BUTTON_ON));
    }

    #[test]
    fn button_bumps_toggle_twice_back() {
        let env = bottleneck();
        let (s, a) = (0..env.n_states())
            .flat_map(|s| (0..env.n_actions()).map(move |a| (s, a)))
            .find(|&(s, a)| env.bumps_button(s, a))
            .unwrap();
        let m = Monitor::new(MonitorSpec::new(MonitorKind::Button), &env).unwrap();
        let mut r = rng();
        for start in [BUTTON_OFF, BUTTON_ON] {
            let once = m.transition(start, 0, s, a, 0.0, &mut r).unwrap().next_mon_state;
            assert_ne!(once, start);
            let twice = m.transition(once, 0, s, a, 0.0, &mut r).unwrap().next_mon_state;
            assert_eq!(twice, start);
        }
    }

    #[test]
    fn supporters_reward_wrong_choices() {
        let m = monitor(MonitorKind::NSupporters);
        let mut r = rng();
        let wrong = m.transition(0, 1, 0, env::LEFT, 1.0, &mut r).unwrap();
        assert_eq!(wrong.mon_reward, 0.001);
        assert_eq!(wrong.proxy, ProxyReward::Unobserved);
        let right = m.transition(2, 2, 0, env::LEFT, 1.0, &mut r).unwrap();
        assert_eq!(right.mon_reward, -0.2);
        assert_eq!(right.proxy, ProxyReward::Observed(1.0));
    }

    #[test]
    fn experts_rewards() {
        let m = monitor(MonitorKind::NExperts);
        assert_eq!(m.reward(1, 1), -0.2);
        assert_eq!(m.reward(1, 4), 0.0);
        assert_eq!(m.reward(1, 2), -0.001);
        assert_eq!(m.reward_bounds(), (-0.2, 0.0));
    }

    #[test]
    fn level_up_climbs_resets_and_waits() {
        let m = monitor(MonitorKind::LevelUp);
        let mut r = rng();
        let mut step = |s, a| m.transition(s, a, 0, env::LEFT, 0.5, &mut r).unwrap();
        assert_eq!(step(0, 0).next_mon_state, 1);
        assert_eq!(step(1, 1).next_mon_state, 2);
        assert_eq!(step(2, 2).next_mon_state, 2);
        assert_eq!(step(2, 0).next_mon_state, 0);
        let wait = step(1, 3);
        assert_eq!((wait.next_mon_state, wait.mon_reward), (1, 0.0));
        assert_eq!(wait.proxy, ProxyReward::Unobserved);
        assert_eq!(step(0, 0).mon_reward, -0.2);
        assert_eq!(step(2, 3).proxy, ProxyReward::Observed(0.5));
        assert_eq!(m.initial_distribution(), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn masked_pairs_are_never_shown() {
        let env = bottleneck();
        let (s, a) = masked_pair(&env);
        let mut r = rng();
        for kind in MonitorKind::ALL.into_iter().filter(|&k| k != MonitorKind::Full) {
            let m = Monitor::new(MonitorSpec::new(kind), &env).unwrap();
            let (ns, na) = m.spec().spaces();
            for ms in 0..ns {
                for ma in 0..na {
                    assert_eq!(m.observation_probability(ms, ma, s, a), 0.0);
                    for _ in 0..50 {
                        let step = m.transition(ms, ma, s, a, -10.0, &mut r).unwrap();
                        assert_eq!(step.proxy, ProxyReward::Unobserved, "{kind}");
                    }
                }
            }
        }
    }

    #[test]
    fn transition_distributions_are_normalized() {
        let env = bottleneck();
        for kind in MonitorKind::ALL {
            let m = Monitor::new(MonitorSpec::new(kind), &env).unwrap();
            let (ns, na) = m.spec().spaces();
            assert!((m.initial_distribution().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for ms in 0..ns {
                for ma in 0..na {
                    for s in 0..env.n_states() {
                        for a in 0..env.n_actions() {
                            let d = m.next_state_distribution(ms, ma, s, a);
                            assert!((d.iter().map(|p| p.1).sum::<f64>() - 1.0).abs() < 1e-12);
                            assert!(d.iter().all(|&(n, _)| n < ns));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn out_of_range_indices_are_rejected() {
        let m = monitor(MonitorKind::Ask);
        assert!(m.transition(0, 2, 0, 0, 0.0, &mut rng()).is_err());
        assert!(m.transition(1, 0, 0, 0, 0.0, &mut rng()).is_err());
        assert!(m.transition(0, 0, 0, 5, 0.0, &mut rng()).is_err());
    }

    #[test]
    fn kinds_round_trip() {
        for k in MonitorKind::ALL {
            assert_eq!(k.as_str().parse::<MonitorKind>().unwrap(), k);
        }
    }
}
