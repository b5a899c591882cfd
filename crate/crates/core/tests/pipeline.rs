use std::fs;

use duelq_core::agents::{train_policy_eval, Architecture, SeCurve, TrainConfig};
use duelq_core::dueling::AggregatorKind;
use duelq_core::harness::{self, ExperimentConfig, Oracle, MANIFEST_FILE};

fn small_config(dir: &std::path::Path) -> ExperimentConfig {
    ExperimentConfig {
        n_actions: vec![5, 20],
        seeds: vec![1, 2, 3],
        train: TrainConfig {
            updates: 300,
            ..ExperimentConfig::default().train
        },
        output_dir: dir.to_string_lossy().into_owned(),
        ..ExperimentConfig::default()
    }
}

#[test]
fn run_and_aggregate_are_byte_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = harness::run(&small_config(a.path()), 1).unwrap();
    let mb = harness::run(&small_config(b.path()), 2).unwrap();
    assert_eq!(ma.runs.len(), 12);
    assert_eq!(ma.config_hash, mb.config_hash);
    for run in &ma.runs {
        assert_eq!(fs::read(a.path().join(&run.output)).unwrap(), fs::read(b.path().join(&run.output)).unwrap());
        assert_eq!(
            fs::read(a.path().join(&run.checkpoint)).unwrap(),
            fs::read(b.path().join(&run.checkpoint)).unwrap()
        );
    }
    assert!(a.path().join(MANIFEST_FILE).exists());

    let inputs = |dir: &std::path::Path| -> Vec<_> { ma.runs.iter().map(|r| dir.join(&r.output)).collect() };
    let out_a = harness::aggregate_files(&inputs(a.path()), &a.path().join("agg")).unwrap();
    let out_b = harness::aggregate_files(&inputs(b.path()), &b.path().join("agg")).unwrap();
    assert_eq!(out_a.len(), 4);
    for (pa, pb) in out_a.iter().zip(&out_b) {
        let text = fs::read_to_string(pa).unwrap();
        assert_eq!(text, fs::read_to_string(pb).unwrap());
        // one row per logged update plus the header
        let curve = SeCurve::from_csv(&fs::read_to_string(a.path().join(&ma.runs[0].output)).unwrap()).unwrap();
        assert_eq!(text.lines().count(), curve.points.len() + 1);
    }
    // no temporary files are left behind
    assert!(fs::read_dir(a.path()).unwrap().all(|e| !e.unwrap().file_name().to_string_lossy().ends_with(".tmp")));
}

#[test]
fn default_grid_has_thirty_runs() {
    let config = ExperimentConfig::default();
    assert_eq!(harness::run_keys(&config).len(), 30);
    assert_eq!(config.seeds, vec![1, 2, 3, 4, 5]);
}

/// The median SE of the 5-action dueling net drops at least tenfold between
/// update 100 and update 10^4 under the default learning rate.
#[test]
fn dueling_se_decays_tenfold() {
    let defaults = ExperimentConfig::default();
    let oracle = Oracle::new(5, defaults.behavior_epsilon).unwrap();
    let curves: Vec<SeCurve> = (1..=5)
        .map(|seed| {
            let mut net = Architecture::Duel.build(70, 5, AggregatorKind::Mean, seed).unwrap();
            let config = TrainConfig {
                seed,
                updates: 10_000,
                ..defaults.train
            };
            train_policy_eval(&oracle.spec, &oracle.policy, &mut net, &config, &oracle.q_pi).unwrap()
        })
        .collect();
    let median = &harness::aggregate_curves(&curves).unwrap()[0];
    let at = |u: usize| median.points.iter().find(|p| p.0 == u).unwrap().1;
    assert!(at(100) >= 10.0 * at(10_000), "{} vs {}", at(100), at(10_000));
}

#[test]
fn control_mode_writes_one_summary_per_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = ExperimentConfig {
        mode: harness::Mode::Control,
        n_actions: vec![5],
        seeds: vec![4],
        output_dir: dir.path().to_string_lossy().into_owned(),
        ..ExperimentConfig::default()
    };
    config.control.train.updates = 400;
    config.control.learning_starts = 64;
    let manifest = harness::run(&config, 1).unwrap();
    assert_eq!(manifest.runs.len(), 2);
    let text = fs::read_to_string(dir.path().join("control_duel_a5_s4.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(harness::CONTROL_HEADER));
    let fields: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(fields[..3], ["duel", "5", "4"]);
    let gap: f64 = fields[7].parse().unwrap();
    assert!((0.0..=1.0).contains(&gap));
}
