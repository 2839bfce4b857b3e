use std::path::Path;
use std::process::{Command, Output};

fn monmdp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_monmdp"))
        .args(args)
        .env_remove("MONMDP_OUT")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn small_run(out: &Path, agent: &str) -> Output {
    monmdp(&[
        "run",
        "--env",
        "empty",
        "--monitor",
        "button",
        "--agent",
        agent,
        "--seeds",
        "0,1",
        "--training-steps",
        "300",
        "--set",
        "eval_episodes=5",
        "--out",
        out.to_str().unwrap(),
    ])
}

#[test]
fn run_writes_results_and_rerun_reproduces_them() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let o = small_run(&first, "monitored-mbie-eb");
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("oracle"));
    for name in ["per_seed.csv", "aggregate.csv", "manifest.toml", "summary.toml"] {
        assert!(first.join(name).exists(), "{name}");
    }
    let second = dir.path().join("second");
    let o = monmdp(&[
        "rerun",
        first.join("manifest.toml").to_str().unwrap(),
        "--out",
        second.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        std::fs::read(first.join("per_seed.csv")).unwrap(),
        std::fs::read(second.join("per_seed.csv")).unwrap()
    );
}

#[test]
fn config_file_and_overrides_are_applied() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("exp.toml");
    std::fs::write(
        &config,
        "seeds = [3]\ntraining_steps = 200\neval_episodes = 2\n[env]\nid = \"river-swim\"\n[monitor]\nkind = \"ask\"\n[agent]\nkind = \"directed-e2\"\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = monmdp(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--set",
        "agent.threshold=0.5",
        "--rho",
        "0.5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = std::fs::read_to_string(out.join("manifest.toml")).unwrap();
    assert!(manifest.contains("threshold = 0.5"));
    assert!(manifest.contains("rho = 0.5"));
    assert!(manifest.contains("seeds = [3]"));
}

#[test]
fn oracle_prints_value_and_policy() {
    let o = monmdp(&["oracle", "--env", "bottleneck", "--monitor", "full"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("minimax value at start distribution: 0.886385"), "{text}");
    assert!(text.lines().any(|l| l.starts_with("env_state\t")));
}

#[test]
fn plot_data_collects_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(small_run(&a, "monitored-mbie-eb").status.success());
    assert!(small_run(&b, "directed-e2").status.success());
    let csv = dir.path().join("fig.csv");
    let o = monmdp(&[
        "plot-data",
        "--figure",
        "demo",
        a.to_str().unwrap(),
        b.to_str().unwrap(),
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("figure,env,monitor,rho,agent,step,mean,ci95,oracle"));
    // Checkpoints 0, 100, 200, 300 for each of the two runs.
    assert_eq!(lines.clone().count(), 8);
    assert!(lines.any(|l| l.starts_with("demo,empty,button,") && l.contains("directed-e2")));
}

#[test]
fn bad_input_fails_with_a_message() {
    let o = monmdp(&["run", "--env", "empty", "--monitor", "full", "--agent", "sarsa"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("sarsa"));
    let o = monmdp(&["rerun", "/nonexistent/manifest.toml"]);
    assert!(!o.status.success());
}
