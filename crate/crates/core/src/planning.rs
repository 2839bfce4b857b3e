//! Value iteration, KL-UCB, reward-model construction and the minimax oracle.

use crate::env::EnvDynamics;
use crate::error::{Error, Result};
use crate::mdp::SpaceShape;
use crate::model::{bonus, growth, growth_scale, Tables, TERMINAL};
use crate::monitor::Monitor;

/// Sparse transition rows, one per `(state, action)` pair in row-major order.
/// A successor of [`TERMINAL`] contributes no future value.
#[derive(Debug, Clone, PartialEq)]
pub struct Transitions {
    n_states: usize,
    n_actions: usize,
    offsets: Vec<usize>,
    next: Vec<u32>,
    prob: Vec<f64>,
}

impl Transitions {
    pub fn new(n_states: usize, n_actions: usize) -> Self {
        Transitions {
            n_states,
            n_actions,
            offsets: vec![0],
            next: Vec::new(),
            prob: Vec::new(),
        }
    }

    /// Append the row of the next pair. Rows must be pushed in pair order.
    pub fn push_row(&mut self, row: impl IntoIterator<Item = (u32, f64)>) {
        for (n, p) in row {
            self.next.push(n);
            self.prob.push(p);
        }
        self.offsets.push(self.next.len());
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_pairs(&self) -> usize {
        self.n_states * self.n_actions
    }

    pub fn row(&self, pair: usize) -> impl Iterator<Item = (u32, f64)> + '_ {
        let range = self.offsets[pair]..self.offsets[pair + 1];
        self.next[range.clone()]
            .iter()
            .copied()
            .zip(self.prob[range].iter().copied())
    }

    fn validate(&self) -> Result<()> {
        if self.offsets.len() != self.n_pairs() + 1 {
            return Err(Error::Contract(format!(
                "transition table has {} rows, expected {}",
                self.offsets.len() - 1,
                self.n_pairs()
            )));
        }
        if let Some(&n) = self
            .next
            .iter()
            .find(|&&n| n != TERMINAL && n as usize >= self.n_states)
        {
            return Err(Error::Contract(format!("successor {n} out of range")));
        }
        Ok(())
    }
}

/// Rewards per pair, plus the pairs whose value is held at the optimistic
/// initial constant instead of being backed up.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardTable {
    pub reward: Vec<f64>,
    pub pinned: Vec<bool>,
}

impl RewardTable {
    pub fn new(n_pairs: usize) -> Self {
        RewardTable {
            reward: vec![0.0; n_pairs],
            pinned: vec![false; n_pairs],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelMdp {
    pub transitions: Transitions,
    pub rewards: RewardTable,
    pub gamma: f64,
    pub pin_value: f64,
}

impl ModelMdp {
    pub fn new(transitions: Transitions, rewards: RewardTable, gamma: f64, pin_value: f64) -> Result<Self> {
        transitions.validate()?;
        if rewards.reward.len() != transitions.n_pairs() || rewards.pinned.len() != transitions.n_pairs() {
            return Err(Error::Contract("reward table does not match transitions".into()));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::Config(format!("discount {gamma} outside [0, 1)")));
        }
        Ok(ModelMdp {
            transitions,
            rewards,
            gamma,
            pin_value,
        })
    }

    pub fn n_states(&self) -> usize {
        self.transitions.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.transitions.n_actions
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    n_states: usize,
    n_actions: usize,
    q: Vec<f64>,
}

impl ValueTable {
    pub fn new(n_states: usize, n_actions: usize, init: f64) -> Self {
        ValueTable {
            n_states,
            n_actions,
            q: vec![init; n_states * n_actions],
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn q(&self, state: usize, action: usize) -> f64 {
        self.q[state * self.n_actions + action]
    }

    pub fn set(&mut self, state: usize, action: usize, value: f64) {
        self.q[state * self.n_actions + action] = value;
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.q[state * self.n_actions..(state + 1) * self.n_actions]
    }

    pub fn values(&self) -> &[f64] {
        &self.q
    }

    pub fn value(&self, state: usize) -> f64 {
        self.row(state).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Greedy action; ties go to the lowest index.
    pub fn greedy(&self, state: usize) -> usize {
        argmax(self.row(state))
    }

    pub fn checksum(&self) -> u64 {
        self.q
            .iter()
            .fold(0xcbf2_9ce4_8422_2325u64, |h, v| (h ^ v.to_bits()).wrapping_mul(0x100_0000_01b3))
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// One synchronous Bellman-optimality backup from `q` into `out`. Returns
/// the sup-norm change.
pub fn bellman_sweep(model: &ModelMdp, q: &ValueTable, out: &mut ValueTable, v: &mut Vec<f64>) -> f64 {
    let ns = model.n_states();
    v.clear();
    v.extend((0..ns).map(|s| q.value(s)));
    let mut residual: f64 = 0.0;
    let t = &model.transitions;
    for pair in 0..t.n_pairs() {
        let new = if model.rewards.pinned[pair] {
            model.pin_value
        } else {
            let mut future = 0.0;
            for i in t.offsets[pair]..t.offsets[pair + 1] {
                let n = t.next[i];
                if n != TERMINAL {
                    future += t.prob[i] * v[n as usize];
                }
            }
            model.rewards.reward[pair] + model.gamma * future
        };
        residual = residual.max((new - q.q[pair]).abs());
        out.q[pair] = new;
    }
    residual
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Stop {
    Sweeps(usize),
    Residual { tolerance: f64, max_sweeps: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViReport {
    pub sweeps: usize,
    pub residual: f64,
}

/// Synchronous value iteration warm-started from `q`, which is updated in
/// place.
pub fn value_iteration(model: &ModelMdp, q: &mut ValueTable, stop: Stop) -> ViReport {
    assert_eq!(q.q.len(), model.transitions.n_pairs(), "value table shape mismatch");
    let (max_sweeps, tolerance) = match stop {
        Stop::Sweeps(n) => (n, None),
        Stop::Residual {
            tolerance,
            max_sweeps,
        } => (max_sweeps, Some(tolerance)),
    };
    let mut scratch = q.clone();
    let mut v = Vec::with_capacity(model.n_states());
    let mut report = ViReport {
        sweeps: 0,
        residual: f64::INFINITY,
    };
    while report.sweeps < max_sweeps {
        report.residual = bellman_sweep(model, q, &mut scratch, &mut v);
        std::mem::swap(q, &mut scratch);
        report.sweeps += 1;
        if tolerance.is_some_and(|tol| report.residual <= tol) {
            break;
        }
    }
    report
}

/// Bernoulli relative entropy `KL(p || q)`.
pub fn bernoulli_kl(p: f64, q: f64) -> f64 {
    let term = |a: f64, b: f64| if a <= 0.0 { 0.0 } else { a * (a / b).ln() };
    term(p, q) + term(1.0 - p, 1.0 - q)
}

const KL_MAX_ITERS: usize = 50;
const KL_GAP: f64 = 1e-5;

/// Largest `q ∈ [mean, 1]` with `KL(mean || q) ≤ radius`.
///
/// Safeguarded Newton iteration on `z = ln(1 - q)`, which keeps the problem
/// well conditioned when the answer is close to 1. Stops after 50
/// iterations or once successive iterates differ by at most 1e-5.
pub fn kl_ucb(mean: f64, radius: f64) -> f64 {
    let p = mean.clamp(0.0, 1.0);
    if radius <= 0.0 || p >= 1.0 {
        return p;
    }
    let q_of = |z: f64| -(z.exp_m1());
    let f = |z: f64| bernoulli_kl(p, q_of(z)) - radius;
    // f decreases in z; it is -radius at z_hi and non-negative at z_lo.
    let z_hi = (-p).ln_1p();
    let entropy_p = if p > 0.0 { p * p.ln() } else { 0.0 };
    let z_lo = z_hi - (radius - entropy_p) / (1.0 - p);
    let (mut lo, mut hi) = (z_lo, z_hi);
    let mut z = z_lo;
    let mut q = q_of(z);
    for _ in 0..KL_MAX_ITERS {
        let fz = f(z);
        if fz > 0.0 {
            lo = z;
        } else {
            hi = z;
        }
        let qz = q_of(z);
        let slope = -(qz - p) / qz;
        let mut next = z - fz / slope;
        if !next.is_finite() || next <= lo || next >= hi {
            next = 0.5 * (lo + hi);
        }
        let q_next = q_of(next);
        let gap = (q_next - q).abs();
        z = next;
        q = q_next;
        if gap <= KL_GAP {
            break;
        }
    }
    q.clamp(0.0, 1.0)
}

/// `max { μ ∈ [0, 1] : ln(1 / (1 - μ)) ≤ β / n }`.
pub fn kl_ucb_zero(beta: f64, n: u64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    kl_ucb(0.0, beta / n as f64)
}

/// How zero counts inside a bonus or mean are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZeroCountRule {
    /// Pin the pair at the table's initial value.
    #[default]
    OptimisticInit,
    /// Count from one: bonuses use `N + 1`, missing means count as zero.
    /// Pairs never visited at all are still pinned.
    DenominatorOne,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BonusParams {
    pub beta: f64,
    pub beta_env: f64,
    pub beta_mon: f64,
    pub beta_obs: f64,
    pub beta_klucb: f64,
    pub growth: bool,
    pub zero_count: ZeroCountRule,
    /// Known-monitor bonuses apply the growth function to the raw visit
    /// count instead of its logarithm.
    pub raw_count_growth: bool,
    /// Known-monitor observe reward pays the observation probability only on
    /// environment pairs whose reward was never seen.
    pub observe_unseen_only: bool,
}

/// Empirical joint transitions; unvisited pairs get an empty row.
pub fn empirical_transitions(tables: &Tables) -> Transitions {
    let shape = tables.shape();
    let mut t = Transitions::new(shape.n_states(), shape.n_actions());
    for s in 0..shape.n_states() {
        for a in 0..shape.n_actions() {
            let n = tables.counts.joint(s, a);
            if n == 0 {
                t.push_row([]);
            } else {
                let inv = 1.0 / n as f64;
                t.push_row(
                    tables
                        .model
                        .successors(s, a)
                        .iter()
                        .map(|&(k, c)| (k, c as f64 * inv)),
                );
            }
        }
    }
    t
}

struct PairCounts {
    joint: u64,
    env_observed: u64,
    mon: u64,
    scale: f64,
}

fn for_each_pair(tables: &Tables, growth_on: bool, mut f: impl FnMut(usize, usize, usize, usize, usize, PairCounts)) {
    let shape = tables.shape();
    let c = &tables.counts;
    let na = shape.n_actions();
    for s in 0..shape.n_states() {
        let js = shape.split_state(s);
        let scale = if growth_on {
            growth_scale(c.state(s) as f64)
        } else {
            1.0
        };
        for a in 0..na {
            let ja = shape.split_action(a);
            f(
                s * na + a,
                js.env,
                js.mon,
                ja.env,
                ja.mon,
                PairCounts {
                    joint: c.joint(s, a),
                    env_observed: c.env_observed(js.env, ja.env),
                    mon: c.mon(js.mon, ja.mon),
                    scale,
                },
            );
        }
    }
}

fn scaled_bonus(beta: f64, count: u64, scale: f64, rule: ZeroCountRule) -> Option<f64> {
    let count = match rule {
        ZeroCountRule::OptimisticInit => count,
        ZeroCountRule::DenominatorOne => count + 1,
    };
    bonus(beta, count, 1.0, false).map(|b| b * scale)
}

/// Optimistic model: every estimated quantity carries a bonus.
pub fn build_r_basic(tables: &Tables, p: &BonusParams) -> RewardTable {
    let shape = tables.shape();
    let mut out = RewardTable::new(shape.n_pairs());
    for_each_pair(tables, p.growth, |pair, se, sm, ae, am, n| {
        let terms = (|| {
            if n.joint == 0 {
                return None;
            }
            let env = match (tables.env_reward_mean(se, ae), p.zero_count) {
                (Some(r), _) => r,
                (None, ZeroCountRule::DenominatorOne) => 0.0,
                (None, ZeroCountRule::OptimisticInit) => return None,
            };
            let mon = tables.mon_reward_mean(sm, am)?;
            Some(
                env + scaled_bonus(p.beta_env, n.env_observed, n.scale, p.zero_count)?
                    + mon
                    + scaled_bonus(p.beta_mon, n.mon, n.scale, p.zero_count)?
                    + scaled_bonus(p.beta, n.joint, n.scale, p.zero_count)?,
            )
        })();
        match terms {
            Some(r) => out.reward[pair] = r,
            None => out.pinned[pair] = true,
        }
    });
    out
}

/// Like [`build_r_basic`], but pessimistic about environment rewards that
/// were never observed: those take `r_env_min`.
pub fn build_r_opt(tables: &Tables, p: &BonusParams, r_env_min: f64) -> RewardTable {
    let mut out = build_r_basic(tables, p);
    for_each_pair(tables, p.growth, |pair, _se, sm, _ae, am, n| {
        if n.env_observed > 0 {
            return;
        }
        let terms = (|| {
            if n.joint == 0 {
                return None;
            }
            let mon = tables.mon_reward_mean(sm, am)?;
            Some(
                r_env_min
                    + mon
                    + scaled_bonus(p.beta_mon, n.mon, n.scale, p.zero_count)?
                    + scaled_bonus(p.beta, n.joint, n.scale, p.zero_count)?,
            )
        })();
        match terms {
            Some(r) => {
                out.reward[pair] = r;
                out.pinned[pair] = false;
            }
            None => out.pinned[pair] = true,
        }
    });
    out
}

/// Reward for discovering environment rewards: a KL-UCB term on pairs whose
/// environment reward was never seen, plus a visitation bonus.
pub fn build_r_obs(tables: &Tables, p: &BonusParams) -> RewardTable {
    let shape = tables.shape();
    let mut out = RewardTable::new(shape.n_pairs());
    for_each_pair(tables, p.growth, |pair, _se, _sm, _ae, _am, n| {
        if n.joint == 0 {
            out.pinned[pair] = true;
            return;
        }
        let discovery = if n.env_observed == 0 {
            kl_ucb_zero(p.beta_klucb * n.scale * n.scale, n.joint)
        } else {
            0.0
        };
        out.reward[pair] = discovery + n.scale * p.beta_obs / (n.joint as f64).sqrt();
    });
    out
}

/// Joint transitions from the empirical environment model composed with the
/// true monitor dynamics. Pairs whose environment pair was never tried get
/// an empty row.
pub fn known_monitor_transitions(tables: &Tables, monitor: &Monitor) -> Transitions {
    let shape = tables.shape();
    let mut t = Transitions::new(shape.n_states(), shape.n_actions());
    let mut row = Vec::new();
    for s in 0..shape.n_states() {
        let js = shape.split_state(s);
        for a in 0..shape.n_actions() {
            let ja = shape.split_action(a);
            row.clear();
            let n = tables.counts.env_visits(js.env, ja.env);
            if n > 0 {
                let mon_next = monitor.next_state_distribution(js.mon, ja.mon, js.env, ja.env);
                for &(e, c) in tables.model.env_successors(js.env, ja.env) {
                    let pe = c as f64 / n as f64;
                    if e == TERMINAL {
                        row.push((TERMINAL, pe));
                    } else {
                        for &(m, pm) in &mon_next {
                            row.push(((e as usize * shape.mon_states + m) as u32, pe * pm));
                        }
                    }
                }
            }
            t.push_row(row.iter().copied());
        }
    }
    t
}

fn known_bonus(beta: f64, state_total: u64, count: u64, growth_on: bool, raw_count_growth: bool) -> Option<f64> {
    if count == 0 {
        return None;
    }
    let scale = match (growth_on, raw_count_growth) {
        (false, _) => 1.0,
        (true, false) => growth_scale(state_total as f64),
        (true, true) => growth(state_total as f64).sqrt(),
    };
    Some(beta * scale / (count as f64).sqrt())
}

/// Reward models when the monitor is known: `(basic, optimize, observe)`.
pub fn build_known_monitor_models(
    tables: &Tables,
    monitor: &Monitor,
    p: &BonusParams,
    r_env_min: f64,
) -> (RewardTable, RewardTable, RewardTable) {
    let shape = tables.shape();
    let c = &tables.counts;
    let mut basic = RewardTable::new(shape.n_pairs());
    let mut opt = RewardTable::new(shape.n_pairs());
    let mut obs = RewardTable::new(shape.n_pairs());
    for s in 0..shape.n_states() {
        let js = shape.split_state(s);
        for a in 0..shape.n_actions() {
            let ja = shape.split_action(a);
            let pair = s * shape.n_actions() + a;
            let visit_bonus = known_bonus(
                p.beta,
                c.env_state_visits(js.env),
                c.env_visits(js.env, ja.env),
                p.growth,
                p.raw_count_growth,
            );
            let Some(visit_bonus) = visit_bonus else {
                basic.pinned[pair] = true;
                opt.pinned[pair] = true;
                obs.pinned[pair] = true;
                continue;
            };
            let mon = monitor.reward(js.mon, ja.mon);
            let discovery = if p.observe_unseen_only && c.env_observed(js.env, ja.env) > 0 {
                0.0
            } else {
                monitor.observation_probability(js.mon, ja.mon, js.env, ja.env)
            };
            obs.reward[pair] = discovery + visit_bonus;
            let env_term = tables.env_reward_mean(js.env, ja.env).and_then(|r| {
                known_bonus(
                    p.beta_env,
                    c.env_state_observed(js.env),
                    c.env_observed(js.env, ja.env),
                    p.growth,
                    p.raw_count_growth,
                )
                .map(|b| r + b)
            });
            match env_term {
                Some(env) => {
                    basic.reward[pair] = env + mon + visit_bonus;
                    opt.reward[pair] = basic.reward[pair];
                }
                None => {
                    basic.pinned[pair] = true;
                    opt.reward[pair] = r_env_min + mon + visit_bonus;
                }
            }
        }
    }
    (basic, opt, obs)
}

/// The exact joint Mon-MDP. With `worst_case`, rewards of pairs the monitor
/// never reveals are replaced by the environment's minimum reward.
pub fn compose_joint(env: &EnvDynamics, monitor: &Monitor, gamma: f64, worst_case: bool) -> Result<ModelMdp> {
    let (ms, ma) = monitor.spec().spaces();
    let shape = SpaceShape {
        env_states: env.n_states(),
        mon_states: ms,
        env_actions: env.n_actions(),
        mon_actions: ma,
    };
    let (r_min, _) = env.reward_bounds();
    let mut t = Transitions::new(shape.n_states(), shape.n_actions());
    let mut rewards = RewardTable::new(shape.n_pairs());
    let mut row = Vec::new();
    for s in 0..shape.n_states() {
        let js = shape.split_state(s);
        for a in 0..shape.n_actions() {
            let ja = shape.split_action(a);
            let pair = s * shape.n_actions() + a;
            let env_reward = if worst_case && monitor.masked(js.env, ja.env) {
                r_min
            } else {
                env.mean_reward(js.env, ja.env)
            };
            rewards.reward[pair] = env_reward + monitor.reward(js.mon, ja.mon);
            let mon_next = monitor.next_state_distribution(js.mon, ja.mon, js.env, ja.env);
            row.clear();
            for o in env.outcomes(js.env, ja.env) {
                if o.terminal {
                    row.push((TERMINAL, o.prob));
                } else {
                    for &(m, pm) in &mon_next {
                        row.push(((o.next * ms + m) as u32, o.prob * pm));
                    }
                }
            }
            t.push_row(row.iter().copied());
        }
    }
    ModelMdp::new(t, rewards, gamma, 0.0)
}

#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub shape: SpaceShape,
    pub q: ValueTable,
    pub policy: Vec<usize>,
    /// Initial-state-distribution value of the worst-case Mon-MDP.
    pub start_value: f64,
    /// Expected discounted return of the minimax policy on the true Mon-MDP
    /// over one time-limited episode.
    pub test_return: f64,
    pub residual: f64,
}

impl OracleSolution {
    pub fn value(&self, state: usize) -> f64 {
        self.q.value(state)
    }
}

pub const ORACLE_TOLERANCE: f64 = 1e-10;

/// Solve the worst-case Mon-MDP to convergence.
pub fn oracle_minimax(env: &EnvDynamics, monitor: &Monitor, gamma: f64) -> Result<OracleSolution> {
    let worst = compose_joint(env, monitor, gamma, true)?;
    let mut q = ValueTable::new(worst.n_states(), worst.n_actions(), 0.0);
    let report = value_iteration(
        &worst,
        &mut q,
        Stop::Residual {
            tolerance: ORACLE_TOLERANCE,
            max_sweeps: 1_000_000,
        },
    );
    let shape = SpaceShape {
        env_states: env.n_states(),
        mon_states: monitor.spec().spaces().0,
        env_actions: env.n_actions(),
        mon_actions: monitor.spec().spaces().1,
    };
    let policy: Vec<usize> = (0..shape.n_states()).map(|s| q.greedy(s)).collect();
    let init = monitor.initial_distribution();
    let start = env.start() * shape.mon_states;
    let start_value = init
        .iter()
        .enumerate()
        .map(|(m, p)| p * q.value(start + m))
        .sum();
    let truth = compose_joint(env, monitor, gamma, false)?;
    let test_return = horizon_return(&truth, &policy, env.horizon(), start, &init);
    Ok(OracleSolution {
        shape,
        q,
        policy,
        start_value,
        test_return,
        residual: report.residual,
    })
}

/// Expected discounted return of a fixed policy over `horizon` steps, from
/// joint states `first_state + m` weighted by `init[m]`.
pub fn horizon_return(model: &ModelMdp, policy: &[usize], horizon: usize, first_state: usize, init: &[f64]) -> f64 {
    let ns = model.n_states();
    let na = model.n_actions();
    let mut v = vec![0.0; ns];
    let mut next = vec![0.0; ns];
    for _ in 0..horizon {
        for s in 0..ns {
            let pair = s * na + policy[s];
            let future: f64 = model
                .transitions
                .row(pair)
                .filter(|&(n, _)| n != TERMINAL)
                .map(|(n, p)| p * v[n as usize])
                .sum();
            next[s] = model.rewards.reward[pair] + model.gamma * future;
        }
        std::mem::swap(&mut v, &mut next);
    }
    init.iter().enumerate().map(|(m, p)| p * v[first_state + m]).sum()
}
