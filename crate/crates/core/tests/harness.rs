use monmdp::config::{AgentConfig, ExperimentConfig};
use monmdp::env::EnvId;
use monmdp::harness::{self, ExperimentResult, AGGREGATE_FILE, MANIFEST_FILE, PER_SEED_FILE, SUMMARY_FILE};
use monmdp::monitor::MonitorKind;
use monmdp::Error;

fn small(agent: &str) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(EnvId::Empty, MonitorKind::Ask, AgentConfig::from_name(agent).unwrap());
    c.seeds = vec![0, 1];
    c.training_steps = 200;
    c.eval_episodes = 5;
    c
}

#[test]
fn two_seeds_three_checkpoints_give_three_aggregate_rows() {
    let result = harness::run_experiment(&small("monitored-mbie-eb")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    harness::write_results(&result, dir.path()).unwrap();
    let read = |name| std::fs::read_to_string(dir.path().join(name)).unwrap();
    let aggregate = read(AGGREGATE_FILE);
    assert_eq!(aggregate.lines().count(), 1 + 3);
    assert_eq!(aggregate.lines().next(), Some("step,mean,ci95"));
    assert_eq!(read(PER_SEED_FILE).lines().count(), 1 + 2 * 3);
    assert!(read(MANIFEST_FILE).contains("monitored-mbie-eb"));
    assert!(read(SUMMARY_FILE).contains("reference_return"));
}

#[test]
fn empty_records_write_nothing() {
    let mut result: ExperimentResult = harness::run_experiment(&small("mbie-eb")).unwrap();
    result.records.clear();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert!(matches!(harness::write_results(&result, &out), Err(Error::Aggregate(_))));
    assert!(!out.exists());
}

#[test]
fn parallel_seeds_match_serial_runs() {
    for agent in ["monitored-mbie-eb", "directed-e2"] {
        let c = small(agent);
        let parallel = harness::run_seeds(&c).unwrap();
        for (r, &seed) in parallel.iter().zip(&c.seeds) {
            assert!(r.same_results(&harness::run_training(&c, seed).unwrap()));
        }
    }
}

#[test]
fn manifest_rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    harness::write_results(&harness::run_experiment(&small("directed-e2")).unwrap(), &a).unwrap();
    harness::write_results(&harness::rerun_manifest(&a.join(MANIFEST_FILE)).unwrap(), &b).unwrap();
    for name in [PER_SEED_FILE, AGGREGATE_FILE, MANIFEST_FILE] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn different_seeds_differ() {
    let c = small("directed-e2");
    let records = harness::run_seeds(&c).unwrap();
    assert_ne!(records[0].fingerprint, records[1].fingerprint);
}

#[test]
fn config_files_round_trip_through_the_harness() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.toml");
    std::fs::write(&path, small("pessimistic-mbie-eb").to_toml()).unwrap();
    let c = ExperimentConfig::load(&path).unwrap();
    assert_eq!(c, small("pessimistic-mbie-eb"));
    assert!(ExperimentConfig::load(&dir.path().join("missing.toml")).is_err());
}
