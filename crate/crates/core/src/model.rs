//! Visit counts, maximum-likelihood estimates and exploration bonuses.

use crate::mdp::{JointAction, JointState, ProxyReward, SpaceShape};

/// Successor marker for transitions that ended the episode.
pub const TERMINAL: u32 = u32::MAX;

/// One step of experience as seen by an agent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: JointState,
    pub action: JointAction,
    pub proxy: ProxyReward,
    pub mon_reward: f64,
    pub next_state: JointState,
    pub terminated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CountTables {
    shape: SpaceShape,
    joint: Vec<u64>,
    state: Vec<u64>,
    env_observed: Vec<u64>,
    env_state_observed: Vec<u64>,
    mon: Vec<u64>,
    env_visits: Vec<u64>,
    env_state_visits: Vec<u64>,
}

impl CountTables {
    pub fn new(shape: SpaceShape) -> Self {
        let env_pairs = shape.env_states * shape.env_actions;
        CountTables {
            shape,
            joint: vec![0; shape.n_pairs()],
            state: vec![0; shape.n_states()],
            env_observed: vec![0; env_pairs],
            env_state_observed: vec![0; shape.env_states],
            mon: vec![0; shape.mon_states * shape.mon_actions],
            env_visits: vec![0; env_pairs],
            env_state_visits: vec![0; shape.env_states],
        }
    }

    pub fn shape(&self) -> SpaceShape {
        self.shape
    }

    fn env_pair(&self, env_state: usize, env_action: usize) -> usize {
        env_state * self.shape.env_actions + env_action
    }

    /// `N(s, a)` by flat joint indices.
    pub fn joint(&self, state: usize, action: usize) -> u64 {
        self.joint[state * self.shape.n_actions() + action]
    }

    /// `N(s) = sum_a N(s, a)`.
    pub fn state(&self, state: usize) -> u64 {
        self.state[state]
    }

    /// Visits to the environment pair in which its reward was observed.
    pub fn env_observed(&self, env_state: usize, env_action: usize) -> u64 {
        self.env_observed[self.env_pair(env_state, env_action)]
    }

    /// Observed visits summed over environment actions.
    pub fn env_state_observed(&self, env_state: usize) -> u64 {
        self.env_state_observed[env_state]
    }

    pub fn mon(&self, mon_state: usize, mon_action: usize) -> u64 {
        self.mon[mon_state * self.shape.mon_actions + mon_action]
    }

    /// All visits to the environment pair, observed or not.
    pub fn env_visits(&self, env_state: usize, env_action: usize) -> u64 {
        self.env_visits[self.env_pair(env_state, env_action)]
    }

    pub fn env_state_visits(&self, env_state: usize) -> u64 {
        self.env_state_visits[env_state]
    }

    pub fn total_steps(&self) -> u64 {
        self.state.iter().sum()
    }

    /// Order-independent digest, used to check that evaluation leaves the
    /// tables untouched.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for table in [
            &self.joint,
            &self.state,
            &self.env_observed,
            &self.env_state_observed,
            &self.mon,
            &self.env_visits,
            &self.env_state_visits,
        ] {
            for &v in table.iter() {
                h = (h ^ v).wrapping_mul(0x100_0000_01b3);
            }
        }
        h
    }
}

/// Running sums and successor tallies behind the maximum-likelihood model.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalModel {
    shape: SpaceShape,
    env_reward_sum: Vec<f64>,
    env_reward_lo: Vec<f64>,
    env_reward_hi: Vec<f64>,
    mon_reward_sum: Vec<f64>,
    successors: Vec<Vec<(u32, u32)>>,
    env_successors: Vec<Vec<(u32, u32)>>,
}

impl EmpiricalModel {
    pub fn new(shape: SpaceShape) -> Self {
        let env_pairs = shape.env_states * shape.env_actions;
        EmpiricalModel {
            shape,
            env_reward_sum: vec![0.0; env_pairs],
            env_reward_lo: vec![f64::INFINITY; env_pairs],
            env_reward_hi: vec![f64::NEG_INFINITY; env_pairs],
            mon_reward_sum: vec![0.0; shape.mon_states * shape.mon_actions],
            successors: vec![Vec::new(); shape.n_pairs()],
            env_successors: vec![Vec::new(); env_pairs],
        }
    }

    /// Successor tallies of a joint pair: `(next joint state or TERMINAL, count)`.
    pub fn successors(&self, state: usize, action: usize) -> &[(u32, u32)] {
        &self.successors[state * self.shape.n_actions() + action]
    }

    /// Successor tallies over environment states only.
    pub fn env_successors(&self, env_state: usize, env_action: usize) -> &[(u32, u32)] {
        &self.env_successors[env_state * self.shape.env_actions + env_action]
    }

    /// Smallest and largest observed reward of an environment pair.
    pub fn env_reward_range(&self, env_state: usize, env_action: usize) -> Option<(f64, f64)> {
        let i = env_state * self.shape.env_actions + env_action;
        (self.env_reward_lo[i] <= self.env_reward_hi[i])
            .then(|| (self.env_reward_lo[i], self.env_reward_hi[i]))
    }
}

fn tally(list: &mut Vec<(u32, u32)>, key: u32) {
    match list.iter_mut().find(|(k, _)| *k == key) {
        Some((_, n)) => *n += 1,
        None => list.push((key, 1)),
    }
}

/// Counts plus the empirical model, updated together.
#[derive(Debug, Clone, PartialEq)]
pub struct Tables {
    pub counts: CountTables,
    pub model: EmpiricalModel,
}

impl Tables {
    pub fn new(shape: SpaceShape) -> Self {
        Tables {
            counts: CountTables::new(shape),
            model: EmpiricalModel::new(shape),
        }
    }

    pub fn shape(&self) -> SpaceShape {
        self.counts.shape
    }

    /// Record one step. Indices must come from the same space shape.
    pub fn record(&mut self, t: &Transition) {
        let shape = self.counts.shape;
        let s = shape.s(t.state);
        let a = shape.a(t.action);
        let pair = s * shape.n_actions() + a;
        let env_pair = t.state.env * shape.env_actions + t.action.env;
        let mon_pair = t.state.mon * shape.mon_actions + t.action.mon;
        let c = &mut self.counts;
        c.joint[pair] += 1;
        c.state[s] += 1;
        c.mon[mon_pair] += 1;
        c.env_visits[env_pair] += 1;
        c.env_state_visits[t.state.env] += 1;

        let m = &mut self.model;
        m.mon_reward_sum[mon_pair] += t.mon_reward;
        if let ProxyReward::Observed(r) = t.proxy {
            c.env_observed[env_pair] += 1;
            c.env_state_observed[t.state.env] += 1;
            m.env_reward_sum[env_pair] += r;
            m.env_reward_lo[env_pair] = m.env_reward_lo[env_pair].min(r);
            m.env_reward_hi[env_pair] = m.env_reward_hi[env_pair].max(r);
        }
        let (next, next_env) = if t.terminated {
            (TERMINAL, TERMINAL)
        } else {
            (shape.s(t.next_state) as u32, t.next_state.env as u32)
        };
        tally(&mut m.successors[pair], next);
        tally(&mut m.env_successors[env_pair], next_env);
    }

    /// Mean observed environment reward, if the pair was ever observed.
    pub fn env_reward_mean(&self, env_state: usize, env_action: usize) -> Option<f64> {
        let n = self.counts.env_observed(env_state, env_action);
        let i = env_state * self.shape().env_actions + env_action;
        (n > 0).then(|| self.model.env_reward_sum[i] / n as f64)
    }

    pub fn mon_reward_mean(&self, mon_state: usize, mon_action: usize) -> Option<f64> {
        let n = self.counts.mon(mon_state, mon_action);
        let i = mon_state * self.shape().mon_actions + mon_action;
        (n > 0).then(|| self.model.mon_reward_sum[i] / n as f64)
    }

    /// `P̂(· | s, a)` as `(next joint state or TERMINAL, probability)`, or
    /// `None` for an unvisited pair.
    pub fn transition_probabilities(&self, state: usize, action: usize) -> Option<Vec<(u32, f64)>> {
        let n = self.counts.joint(state, action);
        (n > 0).then(|| {
            self.model
                .successors(state, action)
                .iter()
                .map(|&(k, c)| (k, c as f64 / n as f64))
                .collect()
        })
    }
}

/// `g(x) = 1 + x ln²(x)`, with `g(0) = 1` by continuity.
pub fn growth(x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        let l = x.ln();
        1.0 + x * l * l
    }
}

/// The factor `√g(ln N(s))` that widens confidence bonuses as a state is
/// visited more often.
pub fn growth_scale(state_total: f64) -> f64 {
    if state_total <= 1.0 {
        1.0
    } else {
        growth(state_total.ln()).sqrt()
    }
}

/// Exploration bonus `β/√count`, scaled by `√g(ln state_total)` when growth
/// is enabled. Returns `None` for a zero count: such pairs take their
/// optimistic initial value instead.
pub fn bonus(beta: f64, count: u64, state_total: f64, growth_enabled: bool) -> Option<f64> {
    if count == 0 {
        return None;
    }
    let scale = if growth_enabled {
        growth_scale(state_total)
    } else {
        1.0
    };
    Some(beta * scale / (count as f64).sqrt())
}

/// Parameter settings backed by the sample-complexity analysis. Constants
/// hidden by the asymptotic notation are taken as 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryParameters {
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
    pub beta: f64,
    pub beta_mon: f64,
    pub beta_env: f64,
    pub beta_obs: f64,
    pub beta_klucb: f64,
    /// Constant observe-episode budget.
    pub observe_episodes: f64,
}

/// `ln(2^n - 2)` without overflow; zero when `n <= 1`.
fn ln_two_pow_minus_two(n: usize) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    // ln(2^n - 2) = n ln 2 + ln(1 - 2^(1-n))
    let n = n as f64;
    n * std::f64::consts::LN_2 + (-(2f64.powf(1.0 - n))).ln_1p()
}

/// Least `m ≥ 1` with `m ≥ rhs(m)`, for `rhs` increasing and concave in `m`.
pub fn least_fixed_point(rhs: impl Fn(f64) -> f64) -> f64 {
    let mut m: f64 = 1.0;
    for _ in 0..10_000 {
        let next = rhs(m).max(1.0);
        if (next - m).abs() <= 1e-9 * m.max(1.0) {
            return next.ceil();
        }
        m = next;
    }
    m.ceil()
}

/// Visit thresholds for observe episodes (`m1`).
pub fn observe_visits(n_states: usize, n_actions: usize, epsilon: f64, delta: f64, gamma: f64) -> f64 {
    let (s, a) = (n_states as f64, n_actions as f64);
    let tau = (epsilon / 2.0) * (1.0 - gamma).powi(2) / 2.0;
    let delta1 = delta / 2.0;
    let ln_sets = ln_two_pow_minus_two(n_states);
    least_fixed_point(|m| 8.0 * (ln_sets + (2.0 * s * a * m / delta1).ln()) / (tau * tau))
}

/// Visit thresholds for optimize episodes (`m2`).
pub fn optimize_visits(
    n_states: usize,
    n_actions: usize,
    epsilon: f64,
    delta: f64,
    gamma: f64,
    rho: f64,
) -> f64 {
    let (s, a) = (n_states as f64, n_actions as f64);
    let tau = (epsilon / 2.0) * (1.0 - gamma).powi(2) / 6.0;
    let delta2 = delta / 2.0;
    let ln_sets = ln_two_pow_minus_two(n_states);
    least_fixed_point(|m| {
        let transitions = 8.0 * (ln_sets + (3.0 * s * a * m / delta2).ln()) / (tau * tau);
        let rewards = 8.0 * (6.0 * s * a * rho * m / delta2).ln().max(0.0) / (rho * tau * tau);
        transitions.max(rewards)
    })
}

pub fn theory_parameters(
    n_states: usize,
    n_actions: usize,
    epsilon: f64,
    delta: f64,
    gamma: f64,
    rho: f64,
) -> TheoryParameters {
    let (s, a) = (n_states as f64, n_actions as f64);
    let m1 = observe_visits(n_states, n_actions, epsilon, delta, gamma);
    let m2 = optimize_visits(n_states, n_actions, epsilon, delta, gamma, rho);
    let m3 = (m1 * s * a / ((epsilon / 2.0) * (1.0 - gamma))).ceil();
    let conf = (2.0 * (5.0 * s * a * m2 / delta).ln()).sqrt();
    let obs_log = (10.0 * s * a * m1 / (3.0 * delta)).ln();
    TheoryParameters {
        m1,
        m2,
        m3,
        beta: 2.0 * gamma / (1.0 - gamma) * conf,
        beta_mon: conf,
        beta_env: conf,
        beta_obs: (0.5 * obs_log).sqrt() / (1.0 - gamma),
        beta_klucb: obs_log,
        observe_episodes: m3,
    }
}
