use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use monmdp::config::{AgentConfig, ExperimentConfig};
use monmdp::env::EnvId;
use monmdp::harness::{self, ExperimentResult, Manifest, AGGREGATE_FILE, MANIFEST_FILE, SUMMARY_FILE};
use monmdp::monitor::MonitorKind;

/// Experiments on Monitored MDPs.
#[derive(Parser)]
#[command(name = "monmdp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate one configuration over all its seeds.
    Run(RunArgs),
    /// Re-run the experiment recorded in a manifest.
    Rerun {
        manifest: PathBuf,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Run both agents on every environment/monitor benchmark pair.
    Sweep(SweepArgs),
    /// Print the minimax value and policy of a Mon-MDP.
    Oracle(OracleArgs),
    /// Collect finished runs into one CSV per figure.
    PlotData(PlotArgs),
}

#[derive(Args)]
struct OutArgs {
    /// Output directory.
    #[arg(long, env = "MONMDP_OUT", default_value = "results")]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    /// TOML experiment config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    env: Option<EnvId>,
    #[arg(long)]
    monitor: Option<MonitorKind>,
    /// monitored-mbie-eb, mbie-eb, pessimistic-mbie-eb or directed-e2.
    #[arg(long)]
    agent: Option<String>,
    #[arg(long)]
    rho: Option<f64>,
    /// Seeds as a list (`0,1,2`) or a half-open range (`0..10`).
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    training_steps: Option<u64>,
    /// Override any config field, e.g. `--set agent.beta=0.01`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, default_value = "0..10")]
    seeds: String,
    #[arg(long, default_value_t = 50_000)]
    training_steps: u64,
    /// Restrict to these environments (comma separated).
    #[arg(long, value_delimiter = ',')]
    envs: Vec<EnvId>,
    /// Restrict to these monitors (comma separated).
    #[arg(long, value_delimiter = ',')]
    monitors: Vec<MonitorKind>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
}

#[derive(Args)]
struct PlotArgs {
    /// Figure name written into the CSV.
    #[arg(long)]
    figure: String,
    /// Run directories, each holding a manifest and aggregate CSV.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

const SWEEP_ENVS: [EnvId; 8] = [
    EnvId::Empty,
    EnvId::Hazard,
    EnvId::OneWay,
    EnvId::RiverSwim,
    EnvId::Loop,
    EnvId::Corridor,
    EnvId::TwoRoom3x5,
    EnvId::TwoRoom2x11,
];

const SWEEP_MONITORS: [MonitorKind; 6] = [
    MonitorKind::Full,
    MonitorKind::SemiRandom,
    MonitorKind::Ask,
    MonitorKind::Button,
    MonitorKind::NSupporters,
    MonitorKind::LevelUp,
];

fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = text.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
        if a >= b {
            bail!("empty seed range `{text}`");
        }
        return Ok((a..b).collect());
    }
    text.split(',')
        .map(|s| s.trim().parse().with_context(|| format!("bad seed `{s}`")))
        .collect()
}

/// Set `dotted.key = value` inside a TOML document. Values are parsed as
/// TOML and fall back to plain strings.
fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .with_context(|| format!("override `{assignment}` is not KEY=VALUE"))?;
    let value: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut table = doc;
    for part in &parts[..parts.len() - 1] {
        table = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .with_context(|| format!("`{part}` in `{key}` is not a table"))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn with_overrides(config: &ExperimentConfig, overrides: &[String]) -> Result<ExperimentConfig> {
    if overrides.is_empty() {
        return Ok(config.clone());
    }
    let mut doc: toml::Table = toml::from_str(&config.to_toml())?;
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    Ok(ExperimentConfig::from_toml(&toml::to_string(&doc)?)?)
}

fn build_config(args: &ExperimentArgs) -> Result<ExperimentConfig> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::new(
            args.env.context("--env is required without --config")?,
            args.monitor.context("--monitor is required without --config")?,
            AgentConfig::from_name(args.agent.as_deref().unwrap_or("monitored-mbie-eb"))?,
        ),
    };
    if args.config.is_some() {
        if let Some(env) = args.env {
            config.env.id = env;
        }
        if let Some(monitor) = args.monitor {
            config.monitor.kind = monitor;
        }
        if let Some(agent) = &args.agent {
            config.agent = AgentConfig::from_name(agent)?;
        }
    }
    if let Some(rho) = args.rho {
        config.monitor.rho = Some(rho);
    }
    if let Some(seeds) = &args.seeds {
        config.seeds = parse_seeds(seeds)?;
    }
    if let Some(steps) = args.training_steps {
        config.training_steps = steps;
    }
    with_overrides(&config, &args.overrides)
}

fn report(result: &ExperimentResult, dir: &Path) -> Result<()> {
    harness::write_results(result, dir)?;
    let a = &result.aggregate;
    println!(
        "{} / {} / {}: final return {:.4} ± {:.4} (oracle {:.4}); steps to threshold {}; results in {}",
        result.config.env.id,
        result.config.monitor.kind,
        result.config.agent.name(),
        a.final_mean(),
        a.ci95.last().copied().unwrap_or(0.0),
        result.reference,
        a.mean_steps_to_threshold
            .map_or("n/a".to_string(), |s| format!("{s:.0} ({} seeds never)", a.censored())),
        dir.display()
    );
    Ok(())
}

fn run(args: RunArgs) -> Result<()> {
    let config = build_config(&args.experiment)?;
    let result = harness::run_experiment(&config)?;
    report(&result, &args.out.out)
}

fn sweep(args: SweepArgs) -> Result<bool> {
    let seeds = parse_seeds(&args.seeds)?;
    let envs = if args.envs.is_empty() { SWEEP_ENVS.to_vec() } else { args.envs };
    let monitors = if args.monitors.is_empty() {
        SWEEP_MONITORS.to_vec()
    } else {
        args.monitors
    };
    let mut ok = true;
    for &env in &envs {
        for &monitor in &monitors {
            for agent in ["monitored-mbie-eb", "directed-e2"] {
                let mut config = ExperimentConfig::new(env, monitor, AgentConfig::from_name(agent)?);
                config.seeds = seeds.clone();
                config.training_steps = args.training_steps;
                let dir = args.out.out.join(format!("{env}_{monitor}_{agent}"));
                let outcome = with_overrides(&config, &args.overrides)
                    .and_then(|c| Ok(harness::run_experiment(&c)?))
                    .and_then(|r| report(&r, &dir));
                if let Err(e) = outcome {
                    eprintln!("{env} / {monitor} / {agent} failed: {e:#}");
                    ok = false;
                }
            }
        }
    }
    Ok(ok)
}

fn oracle(args: OracleArgs) -> Result<()> {
    let config = build_config(&args.experiment)?;
    let mdp = config.build_mdp()?;
    let solution = harness::oracle(&config)?;
    let env = mdp.env();
    let names = env.action_names();
    let mut table = format!(
        "minimax value at start distribution: {:.6}\nexpected test return over {} steps: {:.6}\n",
        solution.start_value,
        mdp.spec().horizon,
        solution.test_return
    );
    table.push_str("env_state\tcell\tmon_state\tenv_action\tmon_action\tvalue\n");
    for s in 0..mdp.shape().n_states() {
        let state = mdp.shape().state_from_index(s)?;
        let action = mdp.shape().action_from_index(solution.policy[s])?;
        let cell = env
            .coords(state.env)
            .map_or("-".to_string(), |(r, c)| format!("({r},{c})"));
        writeln!(
            table,
            "{}\t{}\t{}\t{}\t{}\t{:.6}",
            state.env,
            cell,
            state.mon,
            names[action.env],
            action.mon,
            solution.value(s)
        )?;
    }
    std::io::stdout().write_all(table.as_bytes())?;
    Ok(())
}

fn plot_data(args: PlotArgs) -> Result<()> {
    let mut w = csv::Writer::from_path(&args.out).with_context(|| format!("writing {}", args.out.display()))?;
    w.write_record([
        "figure", "env", "monitor", "rho", "agent", "step", "mean", "ci95", "oracle",
    ])?;
    for dir in &args.runs {
        let manifest = Manifest::load(&dir.join(MANIFEST_FILE))?;
        let summary_path = dir.join(SUMMARY_FILE);
        let summary: toml::Table = toml::from_str(
            &std::fs::read_to_string(&summary_path).with_context(|| format!("reading {}", summary_path.display()))?,
        )?;
        let oracle = summary
            .get("reference_return")
            .and_then(|v| v.as_float())
            .with_context(|| format!("{} lacks reference_return", summary_path.display()))?;
        let c = &manifest.config;
        let rho = c.monitor.spec().rho;
        let mut r = csv::Reader::from_path(dir.join(AGGREGATE_FILE))
            .with_context(|| format!("reading {}", dir.join(AGGREGATE_FILE).display()))?;
        for row in r.records() {
            let row = row?;
            w.write_record([
                args.figure.as_str(),
                c.env.id.as_str(),
                c.monitor.kind.as_str(),
                &rho.to_string(),
                c.agent.name(),
                &row[0],
                &row[1],
                &row[2],
                &oracle.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => run(args).map(|_| true),
        Command::Rerun { manifest, out } => harness::rerun_manifest(&manifest)
            .map_err(anyhow::Error::from)
            .and_then(|r| report(&r, &out.out))
            .map(|_| true),
        Command::Sweep(args) => sweep(args),
        Command::Oracle(args) => oracle(args).map(|_| true),
        Command::PlotData(args) => plot_data(args).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
