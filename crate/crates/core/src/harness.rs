//! Seeded training runs, greedy evaluation, aggregation and result files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::Agent;
use crate::config::{CiMethod, ExperimentConfig};
use crate::error::{Error, Result};
use crate::mdp::MonMdp;
use crate::model::Transition;
use crate::planning::{oracle_minimax, OracleSolution};
use crate::rng::{stream, SimRng, Stream};

/// Greedy-policy statistics at one point of training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    /// Mean discounted return of true environment plus monitor rewards.
    pub mean_return: f64,
    /// Mean steps per test episode spent in the goal state.
    pub goal_visits: f64,
    /// Mean steps per test episode spent in ⊥ cells.
    pub bot_visits: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub seed: u64,
    pub checkpoints: Vec<Checkpoint>,
    pub duration: Duration,
    /// Agent fingerprint after training.
    pub fingerprint: u64,
}

impl RunRecord {
    /// Same results, ignoring wall-clock time.
    pub fn same_results(&self, other: &RunRecord) -> bool {
        self.seed == other.seed && self.checkpoints == other.checkpoints && self.fingerprint == other.fingerprint
    }
}

/// Monitor start states for `episodes` test episodes, one per quantile of
/// the initial distribution, so every checkpoint sees the same mix.
pub fn stratified_monitor_starts(init: &[f64], episodes: usize) -> Vec<usize> {
    (0..episodes)
        .map(|i| {
            let u = (i as f64 + 0.5) / episodes as f64;
            let mut acc = 0.0;
            for (m, &p) in init.iter().enumerate() {
                acc += p;
                if u < acc {
                    return m;
                }
            }
            init.iter().rposition(|&p| p > 0.0).unwrap_or(0)
        })
        .collect()
}

/// Run `episodes` greedy test episodes. The agent is only read.
pub fn evaluate(mdp: &MonMdp, agent: &dyn Agent, episodes: usize, seed: u64) -> Result<(f64, f64, f64)> {
    let env = mdp.env();
    let gamma = mdp.spec().gamma;
    let horizon = mdp.spec().horizon;
    let mut rng = SimRng::evaluation(seed);
    let starts = stratified_monitor_starts(&mdp.monitor().initial_distribution(), episodes);
    let (mut total, mut goal, mut bot) = (0.0, 0u64, 0u64);
    for &m in &starts {
        let mut state = mdp.reset_with_monitor(m)?;
        let mut discount = 1.0;
        for t in 0..horizon {
            goal += u64::from(env.is_goal(state.env));
            bot += u64::from(env.is_bot(state.env));
            let action = agent.greedy_action(state);
            let o = mdp.step(state, action, t, &mut rng)?;
            total += discount * (o.env_reward + o.mon_reward);
            discount *= gamma;
            if o.terminated {
                break;
            }
            state = o.next_state;
        }
    }
    let n = episodes as f64;
    Ok((total / n, goal as f64 / n, bot as f64 / n))
}

/// Evaluation cadence of one run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub training_steps: u64,
    pub eval_every: u64,
    pub eval_episodes: usize,
}

impl Schedule {
    pub fn of(config: &ExperimentConfig) -> Self {
        Schedule {
            training_steps: config.training_steps,
            eval_every: config.eval_every,
            eval_episodes: config.eval_episodes,
        }
    }

    /// Checkpoint steps: 0, every `eval_every`, and the final step.
    pub fn checkpoints(&self) -> Vec<u64> {
        let mut steps: Vec<u64> = (0..=self.training_steps).step_by(self.eval_every as usize).collect();
        if steps.last() != Some(&self.training_steps) {
            steps.push(self.training_steps);
        }
        steps
    }
}

/// Train `agent` for the scheduled number of steps, pausing for greedy
/// evaluation at every checkpoint.
pub fn train(mdp: &MonMdp, agent: &mut dyn Agent, seed: u64, schedule: Schedule) -> Result<RunRecord> {
    if schedule.eval_every == 0 || schedule.eval_episodes == 0 {
        return Err(Error::Config("eval_every and eval_episodes must be positive".into()));
    }
    let started = Instant::now();
    let mut rng = SimRng::training(seed);
    let mut checkpoints = Vec::new();
    let mut eval = |agent: &dyn Agent, step: u64| -> Result<()> {
        let before = agent.fingerprint();
        let (mean_return, goal_visits, bot_visits) = evaluate(mdp, agent, schedule.eval_episodes, seed)?;
        if agent.fingerprint() != before {
            return Err(Error::Contract("evaluation changed the agent".into()));
        }
        checkpoints.push(Checkpoint {
            step,
            mean_return,
            goal_visits,
            bot_visits,
        });
        Ok(())
    };
    let mut step = 0u64;
    let mut state = mdp.reset(&mut rng);
    let mut elapsed = 0usize;
    eval(&*agent, 0)?;
    agent.begin_episode(state);
    while step < schedule.training_steps {
        let action = agent.act(state);
        let o = mdp.step(state, action, elapsed, &mut rng)?;
        agent.record(&Transition {
            state,
            action,
            proxy: o.proxy_reward,
            mon_reward: o.mon_reward,
            next_state: o.next_state,
            terminated: o.terminated,
        });
        step += 1;
        elapsed += 1;
        if step.is_multiple_of(schedule.eval_every) || step == schedule.training_steps {
            eval(&*agent, step)?;
        }
        if o.terminated || o.truncated {
            if step < schedule.training_steps {
                state = mdp.reset(&mut rng);
                elapsed = 0;
                agent.begin_episode(state);
            }
        } else {
            state = o.next_state;
        }
    }
    Ok(RunRecord {
        seed,
        checkpoints,
        duration: started.elapsed(),
        fingerprint: agent.fingerprint(),
    })
}

/// One seeded run of a configured experiment.
pub fn run_training(config: &ExperimentConfig, seed: u64) -> Result<RunRecord> {
    config.validate()?;
    let mdp = config.build_mdp()?;
    let mut agent = config.build_agent(&mdp, &mut stream(seed, Stream::Agent))?;
    train(&mdp, agent.as_mut(), seed, Schedule::of(config))
}

/// All seeds of a config, run in parallel. Records come back in seed order.
pub fn run_seeds(config: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    config.validate()?;
    // Surface config problems once, before any worker starts.
    let mdp = config.build_mdp()?;
    config.build_agent(&mdp, &mut stream(0, Stream::Agent))?;
    config.seeds.par_iter().map(|&seed| run_training(config, seed)).collect()
}

/// Return needed to count as solved: `threshold` of the reference when it is
/// positive, and the same relative slack below it otherwise.
pub fn threshold_target(reference: f64, threshold: f64) -> f64 {
    reference - (1.0 - threshold) * reference.abs()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRecord {
    pub steps: Vec<u64>,
    pub mean: Vec<f64>,
    /// 95% confidence half-width of the mean.
    pub ci95: Vec<f64>,
    pub mean_goal_visits: Vec<f64>,
    pub mean_bot_visits: Vec<f64>,
    /// Return that counts as solved, when a reference was given.
    pub target: Option<f64>,
    /// First checkpoint at or above `target` per seed; `None` if never.
    pub steps_to_threshold: Vec<Option<u64>>,
    /// Mean over seeds, counting seeds that never reach the target as the
    /// final checkpoint.
    pub mean_steps_to_threshold: Option<f64>,
}

impl AggregateRecord {
    pub fn final_mean(&self) -> f64 {
        *self.mean.last().expect("aggregates are never empty")
    }

    pub fn final_bot_visits(&self) -> f64 {
        *self.mean_bot_visits.last().expect("aggregates are never empty")
    }

    pub fn censored(&self) -> usize {
        self.steps_to_threshold.iter().filter(|s| s.is_none()).count()
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn normal_half_width(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    1.96 * (var / n).sqrt()
}

const BOOTSTRAP_RESAMPLES: usize = 2000;

fn bootstrap_half_width(xs: &[f64], rng: &mut ChaCha8Rng) -> f64 {
    let n = xs.len();
    let mut means: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .map(|_| (0..n).map(|_| xs[rng.gen_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let lo = means[(0.025 * BOOTSTRAP_RESAMPLES as f64) as usize];
    let hi = means[(0.975 * BOOTSTRAP_RESAMPLES as f64) as usize - 1];
    0.5 * (hi - lo)
}

/// Per-checkpoint statistics across seeds.
pub fn aggregate(
    records: &[RunRecord],
    reference: Option<f64>,
    threshold: f64,
    ci: CiMethod,
) -> Result<AggregateRecord> {
    let Some(first) = records.first() else {
        return Err(Error::Aggregate("no records".into()));
    };
    let steps: Vec<u64> = first.checkpoints.iter().map(|c| c.step).collect();
    if steps.is_empty() {
        return Err(Error::Aggregate("records have no checkpoints".into()));
    }
    for r in records {
        if r.checkpoints.len() != steps.len() || r.checkpoints.iter().zip(&steps).any(|(c, &s)| c.step != s) {
            return Err(Error::Aggregate(format!("seed {} has misaligned checkpoints", r.seed)));
        }
    }
    let mut boot = ChaCha8Rng::seed_from_u64(0);
    let column = |i: usize, f: fn(&Checkpoint) -> f64| -> Vec<f64> { records.iter().map(|r| f(&r.checkpoints[i])).collect() };
    let mut out = AggregateRecord {
        steps: steps.clone(),
        mean: Vec::with_capacity(steps.len()),
        ci95: Vec::with_capacity(steps.len()),
        mean_goal_visits: Vec::with_capacity(steps.len()),
        mean_bot_visits: Vec::with_capacity(steps.len()),
        target: reference.map(|r| threshold_target(r, threshold)),
        steps_to_threshold: Vec::new(),
        mean_steps_to_threshold: None,
    };
    for i in 0..steps.len() {
        let returns = column(i, |c| c.mean_return);
        out.mean.push(mean(&returns));
        out.ci95.push(match ci {
            CiMethod::Normal => normal_half_width(&returns),
            CiMethod::Bootstrap => bootstrap_half_width(&returns, &mut boot),
        });
        out.mean_goal_visits.push(mean(&column(i, |c| c.goal_visits)));
        out.mean_bot_visits.push(mean(&column(i, |c| c.bot_visits)));
    }
    if let Some(target) = out.target {
        out.steps_to_threshold = records
            .iter()
            .map(|r| r.checkpoints.iter().find(|c| c.mean_return >= target).map(|c| c.step))
            .collect();
        let last = *steps.last().expect("checked non-empty") as f64;
        let reached: Vec<f64> = out
            .steps_to_threshold
            .iter()
            .map(|s| s.map_or(last, |s| s as f64))
            .collect();
        out.mean_steps_to_threshold = Some(mean(&reached));
    }
    Ok(out)
}

/// The oracle for a config's Mon-MDP.
pub fn oracle(config: &ExperimentConfig) -> Result<OracleSolution> {
    let mdp = config.build_mdp()?;
    oracle_minimax(mdp.env(), mdp.monitor(), config.gamma)
}

/// A finished experiment: resolved config, per-seed records and aggregate.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub reference: f64,
    pub records: Vec<RunRecord>,
    pub aggregate: AggregateRecord,
}

/// Resolve, run every seed, and aggregate against the oracle's test return.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let config = config.resolve()?;
    let reference = oracle(&config)?.test_return;
    let records = run_seeds(&config)?;
    let aggregate = aggregate(&records, Some(reference), config.threshold, config.ci)?;
    Ok(ExperimentResult {
        config,
        reference,
        records,
        aggregate,
    })
}

pub const PER_SEED_FILE: &str = "per_seed.csv";
pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const SUMMARY_FILE: &str = "summary.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: String,
    pub config: ExperimentConfig,
}

impl Manifest {
    pub fn new(config: ExperimentConfig) -> Self {
        Manifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub reference_return: f64,
    pub target_return: Option<f64>,
    pub final_mean_return: f64,
    pub final_ci95: f64,
    pub mean_steps_to_threshold: Option<f64>,
    pub seeds_below_threshold: usize,
    pub seconds_per_seed: Vec<f64>,
}

pub fn per_seed_csv(records: &[RunRecord]) -> String {
    let mut s = String::from("seed,step,mean_return,goal_visits,bot_visits\n");
    for r in records {
        for c in &r.checkpoints {
            writeln!(s, "{},{},{},{},{}", r.seed, c.step, c.mean_return, c.goal_visits, c.bot_visits).unwrap();
        }
    }
    s
}

pub fn aggregate_csv(a: &AggregateRecord) -> String {
    let mut s = String::from("step,mean,ci95\n");
    for i in 0..a.steps.len() {
        writeln!(s, "{},{},{}", a.steps[i], a.mean[i], a.ci95[i]).unwrap();
    }
    s
}

fn write(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Write per-seed and aggregate CSVs, the manifest and a summary into `dir`.
pub fn write_results(result: &ExperimentResult, dir: &Path) -> Result<()> {
    if result.records.is_empty() {
        return Err(Error::Aggregate("no records to write".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = toml::to_string(&Manifest::new(result.config.clone())).expect("manifest serializes");
    let a = &result.aggregate;
    let summary = Summary {
        reference_return: result.reference,
        target_return: a.target,
        final_mean_return: a.final_mean(),
        final_ci95: *a.ci95.last().expect("non-empty"),
        mean_steps_to_threshold: a.mean_steps_to_threshold,
        seeds_below_threshold: a.censored(),
        seconds_per_seed: result.records.iter().map(|r| r.duration.as_secs_f64()).collect(),
    };
    write(dir, PER_SEED_FILE, &per_seed_csv(&result.records))?;
    write(dir, AGGREGATE_FILE, &aggregate_csv(a))?;
    write(dir, MANIFEST_FILE, &manifest)?;
    write(dir, SUMMARY_FILE, &toml::to_string(&summary).expect("summary serializes"))?;
    Ok(())
}

/// Re-run the experiment a manifest describes.
pub fn rerun_manifest(path: &Path) -> Result<ExperimentResult> {
    run_experiment(&Manifest::load(path)?.config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::FixedPolicy;
    use crate::config::AgentConfig;
    use crate::env::EnvId;
    use crate::monitor::MonitorKind;

    fn record(seed: u64, returns: &[(u64, f64)]) -> RunRecord {
        RunRecord {
            seed,
            checkpoints: returns
                .iter()
                .map(|&(step, r)| Checkpoint {
                    step,
                    mean_return: r,
                    goal_visits: 0.0,
                    bot_visits: 0.0,
                })
                .collect(),
            duration: Duration::ZERO,
            fingerprint: 0,
        }
    }

    #[test]
    fn aggregate_basic_cases() {
        let a = aggregate(&[record(0, &[(0, 0.0)]), record(1, &[(0, 1.0)])], None, 0.9, CiMethod::Normal).unwrap();
        assert_eq!(a.mean, vec![0.5]);
        let same = [record(0, &[(0, 0.3), (1, 0.4)]), record(1, &[(0, 0.3), (1, 0.4)])];
        for ci in [CiMethod::Normal, CiMethod::Bootstrap] {
            let a = aggregate(&same, None, 0.9, ci).unwrap();
            assert_eq!(a.ci95, vec![0.0, 0.0]);
        }
        assert!(aggregate(&[], None, 0.9, CiMethod::Normal).is_err());
        let misaligned = [record(0, &[(0, 0.0), (100, 1.0)]), record(1, &[(0, 0.0), (200, 1.0)])];
        assert!(matches!(aggregate(&misaligned, None, 0.9, CiMethod::Normal), Err(Error::Aggregate(_))));
    }

    #[test]
    fn steps_to_threshold_with_censoring() {
        let recs = [
            record(0, &[(0, 0.0), (100, 0.95), (200, 1.0)]),
            record(1, &[(0, 0.0), (100, 0.5), (200, 0.5)]),
        ];
        let a = aggregate(&recs, Some(1.0), 0.9, CiMethod::Normal).unwrap();
        assert_eq!(a.steps_to_threshold, vec![Some(100), None]);
        assert_eq!(a.mean_steps_to_threshold, Some(150.0));
        assert_eq!(a.censored(), 1);
        assert_eq!(threshold_target(-2.0, 0.9), -2.2);
        assert_eq!(threshold_target(2.0, 0.9), 1.8);
    }

    #[test]
    fn stratified_starts_follow_the_distribution() {
        assert_eq!(stratified_monitor_starts(&[0.5, 0.5], 4), vec![0, 0, 1, 1]);
        assert_eq!(stratified_monitor_starts(&[1.0, 0.0], 3), vec![0, 0, 0]);
        let s = stratified_monitor_starts(&[0.25; 4], 100);
        for m in 0..4 {
            assert_eq!(s.iter().filter(|&&x| x == m).count(), 25);
        }
    }

    #[test]
    fn checkpoint_schedule() {
        let s = Schedule {
            training_steps: 250,
            eval_every: 100,
            eval_episodes: 1,
        };
        assert_eq!(s.checkpoints(), vec![0, 100, 200, 250]);
        let s = Schedule {
            training_steps: 0,
            ..s
        };
        assert_eq!(s.checkpoints(), vec![0]);
    }

    #[test]
    fn training_produces_the_scheduled_checkpoints() {
        let mut c = ExperimentConfig::new(EnvId::Empty, MonitorKind::Button, AgentConfig::from_name("monitored-mbie-eb").unwrap());
        c.training_steps = 250;
        c.eval_episodes = 4;
        let r = run_training(&c, 3).unwrap();
        let steps: Vec<u64> = r.checkpoints.iter().map(|c| c.step).collect();
        assert_eq!(steps, Schedule::of(&c).checkpoints());
        assert!(run_training(&c, 3).unwrap().same_results(&r));
    }

    #[test]
    fn oracle_policy_scores_the_oracle_return() {
        let c = ExperimentConfig::new(EnvId::Bottleneck, MonitorKind::Button, AgentConfig::from_name("mbie-eb").unwrap());
        let mdp = c.build_mdp().unwrap();
        let o = oracle(&c).unwrap();
        let agent = FixedPolicy::new(mdp.shape(), o.policy.clone()).unwrap();
        let (ret, goal, _) = evaluate(&mdp, &agent, 100, 0).unwrap();
        assert!((ret - o.test_return).abs() < 1e-9, "{ret} vs {}", o.test_return);
        assert!(goal >= 1.0);
    }
}
