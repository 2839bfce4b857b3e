//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary. Failures are reported but only fail the process
//! when `MONMDP_ACCEPTANCE_STRICT` is set.

use std::time::Instant;

use monmdp::agent::{MbieParams, MbieVariant, RewardInit};
use monmdp::config::{AgentConfig, De2Config, ExperimentConfig, MbieConfig};
use monmdp::env::{self, EnvId, EnvOptions, RiverSwimParams};
use monmdp::harness::{self, ExperimentResult, PER_SEED_FILE};
use monmdp::mdp::{JointAction, JointState, MonMdp, ProxyReward};
use monmdp::model::{Tables, Transition};
use monmdp::monitor::{Monitor, MonitorKind, MonitorSpec, BUTTON_ON};
use monmdp::planning::{
    bellman_sweep, build_r_basic, empirical_transitions, kl_ucb_zero, oracle_minimax, value_iteration, ModelMdp,
    RewardTable, Stop, Transitions, ValueTable,
};
use monmdp::rng::SimRng;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

type Outcome = (bool, String);

fn experiment(env: EnvId, monitor: MonitorKind, agent: &str, rho: Option<f64>, steps: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(env, monitor, AgentConfig::from_name(agent).unwrap());
    c.training_steps = steps;
    c.monitor.rho = rho;
    c
}

fn run(config: &ExperimentConfig) -> ExperimentResult {
    harness::run_experiment(config).expect("experiment runs")
}

fn final_ci(r: &ExperimentResult) -> f64 {
    *r.aggregate.ci95.last().unwrap()
}

fn within(r: &ExperimentResult, tol: f64) -> bool {
    (r.aggregate.final_mean() - r.reference).abs() <= tol
}

fn kl_ucb_grid() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cases: Vec<(f64, u64)> = (0..1000)
        .map(|_| {
            let beta = 10f64.powf(rng.gen_range(-4.0..1.0));
            let n = 10f64.powf(rng.gen_range(0.0..6.0)).round() as u64;
            (beta, n.max(1))
        })
        .collect();
    let started = Instant::now();
    let worst = cases
        .iter()
        .map(|&(beta, n)| (kl_ucb_zero(beta, n) - (1.0 - (-beta / n as f64).exp())).abs())
        .fold(0.0, f64::max);
    let secs = started.elapsed().as_secs_f64();
    (worst <= 1e-5 && secs < 1.0, format!("max error {worst:.2e}, {secs:.4} s"))
}

fn value_iteration_contracts() -> Outcome {
    let gamma = 0.99;
    let mut t = Transitions::new(1, 1);
    t.push_row([(0, 1.0)]);
    let mut r = RewardTable::new(1);
    r.reward[0] = 1.0;
    let single = ModelMdp::new(t, r, gamma, 0.0).unwrap();
    let mut q = ValueTable::new(1, 1, 0.0);
    value_iteration(&single, &mut q, Stop::Residual { tolerance: 1e-13, max_sweeps: 1_000_000 });
    let single_err = (q.q(0, 0) - 1.0 / (1.0 - gamma)).abs();

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_ratio: f64 = 0.0;
    for _ in 0..3 {
        let (ns, na) = (20, 4);
        let mut t = Transitions::new(ns, na);
        let mut r = RewardTable::new(ns * na);
        for pair in 0..ns * na {
            let w: Vec<f64> = (0..ns).map(|_| rng.gen::<f64>()).collect();
            let total: f64 = w.iter().sum();
            t.push_row(w.iter().enumerate().map(|(s, x)| (s as u32, x / total)));
            r.reward[pair] = rng.gen_range(-1.0..1.0);
        }
        let m = ModelMdp::new(t, r, gamma, 0.0).unwrap();
        let mut q = ValueTable::new(ns, na, 0.0);
        let mut out = q.clone();
        let mut v = Vec::new();
        let mut prev = bellman_sweep(&m, &q, &mut out, &mut v);
        std::mem::swap(&mut q, &mut out);
        for _ in 0..200 {
            let res = bellman_sweep(&m, &q, &mut out, &mut v);
            std::mem::swap(&mut q, &mut out);
            if prev > 1e-12 {
                worst_ratio = worst_ratio.max(res / prev);
            }
            prev = res;
        }
    }
    (
        single_err <= 1e-9 && worst_ratio <= gamma + 1e-6,
        format!("single-state error {single_err:.1e}, worst residual ratio {worst_ratio:.6}"),
    )
}

fn truthful_and_masked() -> Outcome {
    let env = Arc::new(env::build(EnvId::Bottleneck, &EnvOptions::default()).unwrap());
    let mut violations = 0u64;
    let mut masked_observations = 0u64;
    let mut steps = 0u64;
    for (i, kind) in MonitorKind::ALL.into_iter().enumerate() {
        let monitor = Monitor::new(MonitorSpec::new(kind), &env).unwrap();
        let mdp = MonMdp::new(env.clone(), monitor, 0.99).unwrap();
        let shape = mdp.shape();
        let mut sim = SimRng::training(i as u64);
        let mut pick = ChaCha8Rng::seed_from_u64(100 + i as u64);
        let mut state = mdp.reset(&mut sim);
        let mut elapsed = 0;
        for _ in 0..125_000 {
            let action = JointAction::new(pick.gen_range(0..shape.env_actions), pick.gen_range(0..shape.mon_actions));
            let o = mdp.step(state, action, elapsed, &mut sim).unwrap();
            steps += 1;
            if let ProxyReward::Observed(r) = o.proxy_reward {
                violations += u64::from(r != o.env_reward);
                masked_observations += u64::from(mdp.monitor().masked(state.env, action.env));
            }
            elapsed += 1;
            if o.terminated || o.truncated {
                state = mdp.reset(&mut sim);
                elapsed = 0;
            } else {
                state = o.next_state;
            }
        }
    }
    (
        violations == 0 && masked_observations == 0 && steps == 1_000_000,
        format!("{steps} steps, {violations} untruthful, {masked_observations} observed on masked pairs"),
    )
}

fn button_rate() -> Outcome {
    let env = env::build(EnvId::Bottleneck, &EnvOptions::default()).unwrap();
    let rho = 0.05;
    let monitor = Monitor::new(MonitorSpec::new(MonitorKind::Button).with_rho(rho), &env).unwrap();
    let (se, ae) = (env.start(), 0);
    assert!(!monitor.masked(se, ae));
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let trials = 100_000;
    let shown = (0..trials)
        .filter(|_| monitor.transition(BUTTON_ON, 0, se, ae, 0.0, &mut rng).unwrap().proxy.is_observed())
        .count();
    let rate = shown as f64 / trials as f64;
    let se_rate = (rho * (1.0 - rho) / trials as f64).sqrt();
    let z = (rate - rho) / se_rate;
    (z.abs() <= 3.0, format!("rate {rate:.5}, {z:+.2} standard errors"))
}

fn river_swim() -> Outcome {
    let mbie = run(&experiment(EnvId::RiverSwim, MonitorKind::Full, "monitored-mbie-eb", None, 50_000));
    let de2 = run(&experiment(EnvId::RiverSwim, MonitorKind::Full, "directed-e2", None, 50_000));
    let target = mbie.aggregate.target.unwrap();
    let (m, d) = (mbie.aggregate.final_mean(), de2.aggregate.final_mean());
    (
        m >= target && d < m,
        format!("oracle {:.3}, target {target:.3}, Monitored MBIE-EB {m:.3}, Directed-E2 {d:.3}", mbie.reference),
    )
}

fn random_init_de2() -> ExperimentConfig {
    let mut c = experiment(EnvId::Bottleneck, MonitorKind::Button, "directed-e2", Some(1.0), 100_000);
    c.agent = AgentConfig::DirectedE2(De2Config {
        reward_init: Some(RewardInit::Uniform { low: -0.1, high: 0.1 }),
        ..Default::default()
    });
    c
}

struct Bottleneck {
    mbie: ExperimentResult,
    de2: ExperimentResult,
}

fn unsolvable_bottleneck() -> Bottleneck {
    Bottleneck {
        mbie: run(&experiment(EnvId::Bottleneck, MonitorKind::Button, "monitored-mbie-eb", Some(1.0), 100_000)),
        de2: run(&random_init_de2()),
    }
}

fn reaches_oracle(b: &Bottleneck) -> Outcome {
    (
        within(&b.mbie, 0.02) && !within(&b.de2, 0.02),
        format!(
            "oracle {:.4}, Monitored MBIE-EB {:.4}, Directed-E2 {:.4}",
            b.mbie.reference,
            b.mbie.aggregate.final_mean(),
            b.de2.aggregate.final_mean()
        ),
    )
}

fn avoids_bot(b: &Bottleneck) -> Outcome {
    let (m, d) = (b.mbie.aggregate.final_bot_visits(), b.de2.aggregate.final_bot_visits());
    (m == 0.0 && d > 0.0, format!("final ⊥ visits: Monitored MBIE-EB {m}, Directed-E2 {d}"))
}

fn rho_monotone() -> Outcome {
    let steps: Vec<f64> = [0.8, 0.2, 0.05]
        .iter()
        .map(|&rho| {
            let r = run(&experiment(EnvId::Bottleneck, MonitorKind::FullRandom, "monitored-mbie-eb", Some(rho), 100_000));
            r.aggregate.mean_steps_to_threshold.unwrap()
        })
        .collect();
    (
        steps.windows(2).all(|w| w[0] < w[1]),
        format!("mean steps to threshold at rho 0.8/0.2/0.05: {steps:?}"),
    )
}

fn censored_steps(r: &ExperimentResult) -> Vec<f64> {
    let last = *r.aggregate.steps.last().unwrap() as f64;
    r.aggregate.steps_to_threshold.iter().map(|s| s.map_or(last, |s| s as f64)).collect()
}

fn mean_and_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

fn known_monitor_speedup() -> Outcome {
    let unknown = experiment(EnvId::Bottleneck, MonitorKind::Button, "monitored-mbie-eb", Some(0.05), 100_000);
    let mut known = unknown.clone();
    known.agent = AgentConfig::MonitoredMbieEb(MbieConfig {
        known_monitor: true,
        ..Default::default()
    });
    let (u, k) = (censored_steps(&run(&unknown)), censored_steps(&run(&known)));
    let ((mu, vu), (mk, vk)) = (mean_and_var(&u), mean_and_var(&k));
    let half = 1.96 * (vu / u.len() as f64 + vk / k.len() as f64).sqrt();
    let diff = mu - mk;
    (
        diff - half > 0.0,
        format!("unknown {mu:.0}, known {mk:.0} steps; reduction {diff:.0} ± {half:.0}"),
    )
}

fn ablations(full_unsolvable: &ExperimentResult) -> Outcome {
    let solvable = |agent: &str| {
        let mut c = experiment(EnvId::Bottleneck, MonitorKind::Button, agent, Some(1.0), 100_000);
        c.env.observable_bot_cells = true;
        run(&c)
    };
    let (plain_s, full_s) = (solvable("mbie-eb"), solvable("monitored-mbie-eb"));
    let matches = (plain_s.aggregate.final_mean() - full_s.aggregate.final_mean()).abs()
        <= final_ci(&plain_s) + final_ci(&full_s) + 1e-12;
    let plain_u = run(&experiment(EnvId::Bottleneck, MonitorKind::Button, "mbie-eb", Some(1.0), 100_000));
    let pess = |rho| run(&experiment(EnvId::Bottleneck, MonitorKind::Button, "pessimistic-mbie-eb", Some(rho), 100_000));
    let (pess_1, pess_005) = (pess(1.0), pess(0.05));
    let ok = matches
        && within(full_unsolvable, 0.02)
        && !within(&plain_u, 0.02)
        && within(&pess_1, 0.02)
        && !within(&pess_005, 0.02);
    (
        ok,
        format!(
            "solvable plain {:.4} vs full {:.4}; unsolvable plain {:.4}; pessimistic rho 1 {:.4}, rho 0.05 {:.4}; oracle {:.4}",
            plain_s.aggregate.final_mean(),
            full_s.aggregate.final_mean(),
            plain_u.aggregate.final_mean(),
            pess_1.aggregate.final_mean(),
            pess_005.aggregate.final_mean(),
            pess_1.reference
        ),
    )
}

fn optimism_dominates() -> Outcome {
    let params = RiverSwimParams {
        n_states: 2,
        p_advance: 1.0,
        p_stay: 0.0,
        p_slip: 0.0,
        ..Default::default()
    };
    let options = EnvOptions {
        river_swim: params,
        ..Default::default()
    };
    let env = Arc::new(env::build(EnvId::RiverSwim, &options).unwrap());
    let monitor = Monitor::new(MonitorSpec::new(MonitorKind::Full), &env).unwrap();
    let gamma = 0.99;
    let oracle = oracle_minimax(&env, &monitor, gamma).unwrap();
    let mdp = MonMdp::new(env.clone(), monitor, gamma).unwrap();
    let shape = mdp.shape();
    // One exact sample per pair: the instance is deterministic, so the
    // empirical model equals the true one and any positive bonus suffices.
    let mut tables = Tables::new(shape);
    let mut sim = SimRng::training(0);
    for se in 0..shape.env_states {
        for ae in 0..shape.env_actions {
            let state = JointState::new(se, 0);
            let action = JointAction::new(ae, 0);
            let o = mdp.step(state, action, 0, &mut sim).unwrap();
            tables.record(&Transition {
                state,
                action,
                proxy: o.proxy_reward,
                mon_reward: o.mon_reward,
                next_state: o.next_state,
                terminated: o.terminated,
            });
        }
    }
    let bonus = MbieParams::defaults(MbieVariant::Monitored, EnvId::RiverSwim).bonus;
    let model = ModelMdp::new(empirical_transitions(&tables), build_r_basic(&tables, &bonus), gamma, 0.0).unwrap();
    let mut q = ValueTable::new(shape.n_states(), shape.n_actions(), 0.0);
    value_iteration(&model, &mut q, Stop::Residual { tolerance: 1e-12, max_sweeps: 1_000_000 });
    let gap = q
        .values()
        .iter()
        .zip(oracle.q.values())
        .map(|(a, b)| a - b)
        .fold(f64::INFINITY, f64::min);
    (gap >= 0.0, format!("smallest Q̃ - Q* over all pairs {gap:.3e}"))
}

fn reproducible() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut identical = true;
    for agent in ["monitored-mbie-eb", "directed-e2"] {
        let mut c = experiment(EnvId::Bottleneck, MonitorKind::Button, agent, Some(0.2), 3_000);
        c.seeds = vec![0, 1, 2];
        let first = dir.path().join(format!("{agent}-first"));
        let second = dir.path().join(format!("{agent}-second"));
        harness::write_results(&run(&c), &first).unwrap();
        let again = harness::rerun_manifest(&first.join(harness::MANIFEST_FILE)).unwrap();
        harness::write_results(&again, &second).unwrap();
        let a = std::fs::read(first.join(PER_SEED_FILE)).unwrap();
        let b = std::fs::read(second.join(PER_SEED_FILE)).unwrap();
        identical &= a == b;
    }
    (identical, "per-seed CSVs from manifest reruns compared byte for byte".into())
}

fn main() {
    let mut failures = 0;
    let mut report = |n: usize, (ok, detail): Outcome| {
        println!("criterion {n:>2}: {} {detail}", if ok { "PASS" } else { "FAIL" });
        failures += usize::from(!ok);
    };
    report(1, kl_ucb_grid());
    report(2, value_iteration_contracts());
    report(3, truthful_and_masked());
    report(4, button_rate());
    report(5, river_swim());
    let bottleneck = unsolvable_bottleneck();
    report(6, reaches_oracle(&bottleneck));
    report(7, avoids_bot(&bottleneck));
    report(8, rho_monotone());
    report(9, known_monitor_speedup());
    report(10, ablations(&bottleneck.mbie));
    report(11, optimism_dominates());
    report(12, reproducible());
    println!("{failures} of 12 criteria failed");
    if failures > 0 && std::env::var_os("MONMDP_ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
