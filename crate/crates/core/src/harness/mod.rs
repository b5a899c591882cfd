//! Experiment plumbing: run grids, median curves, score normalization and
//! CSV dumps. Every file is written atomically.

mod config;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::{greedy_return, train_ddqn, train_policy_eval, AgentState, Architecture, SeCurve};
use crate::corridor::{
    build_corridor, epsilon_greedy_policy, oracle_csv, solve_q_pi, solve_q_star, CorridorSpec, ExactQ, PolicyTable,
    LAYOUT_STATES,
};
use crate::dueling::saliency;
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::nn::{load_checkpoint, save_checkpoint, DenseNet};

pub use config::{line_of_key, ExperimentConfig, Mode, POLICY_EVAL_LEARNING_RATE, POLICY_EVAL_UPDATES};

/// Convergence tolerance of the dynamic-programming oracles.
pub const ORACLE_TOL: f64 = 1e-12;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MEDIAN_HEADER: &str = "update,median_se,arch,n_actions,n_seeds";
pub const CONTROL_HEADER: &str = "arch,n_actions,seed,episodes,goal_episodes,greedy_return,v_star,relative_gap";
pub const SALIENCY_HEADER: &str = "state,value_saliency,advantage_saliency";

/// One cell of the run grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct RunKey {
    pub arch: Architecture,
    pub n_actions: usize,
    pub seed: u64,
}

impl RunKey {
    pub fn curve_file(&self) -> String {
        format!("se_{}_a{}_s{}.csv", self.arch, self.n_actions, self.seed)
    }

    pub fn control_file(&self) -> String {
        format!("control_{}_a{}_s{}.csv", self.arch, self.n_actions, self.seed)
    }

    pub fn checkpoint_file(&self) -> String {
        format!("net_{}_a{}_s{}.ckpt", self.arch, self.n_actions, self.seed)
    }
}

/// All runs of `config` in a fixed order: action count, then architecture,
/// then seed.
pub fn run_keys(config: &ExperimentConfig) -> Vec<RunKey> {
    let mut keys = Vec::new();
    for &n_actions in &config.n_actions {
        for &arch in &config.architectures {
            for &seed in &config.seeds {
                keys.push(RunKey { arch, n_actions, seed });
            }
        }
    }
    keys
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub arch: Architecture,
    pub n_actions: usize,
    pub seed: u64,
    pub output: String,
    pub checkpoint: String,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    /// See [`config_hash`].
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub wall_seconds: f64,
    pub runs: Vec<RunRecord>,
}

/// SHA-256 of the canonical JSON form of the config, with the output
/// directory left out so identical experiments hash alike wherever they run.
pub fn config_hash(config: &ExperimentConfig) -> String {
    let canonical = ExperimentConfig {
        output_dir: String::new(),
        ..config.clone()
    };
    let digest = Sha256::digest(canonical.to_json().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Exact oracles for one action count.
#[derive(Debug, Clone)]
pub struct Oracle {
    pub spec: CorridorSpec,
    pub q_star: ExactQ,
    pub policy: PolicyTable,
    pub q_pi: ExactQ,
}

impl Oracle {
    pub fn new(n_actions: usize, behavior_epsilon: f64) -> Result<Self> {
        let spec = build_corridor(n_actions)?;
        let q_star = solve_q_star(&spec, ORACLE_TOL)?;
        let policy = epsilon_greedy_policy(&q_star, behavior_epsilon)?;
        let q_pi = solve_q_pi(&spec, &policy, ORACLE_TOL)?;
        Ok(Oracle {
            spec,
            q_star,
            policy,
            q_pi,
        })
    }

    pub fn to_csv(&self) -> Result<String> {
        oracle_csv(&self.q_star, &self.q_pi, &self.policy)
    }
}

/// Runs every cell of the grid on `jobs` worker threads and writes one CSV
/// and one checkpoint per run, then the manifest. Outputs depend only on the
/// config, never on `jobs` or scheduling.
pub fn run(config: &ExperimentConfig, jobs: usize) -> Result<Manifest> {
    config.validate()?;
    let started = Instant::now();
    let out_dir = PathBuf::from(&config.output_dir);
    fs::create_dir_all(&out_dir)?;

    let mut oracles = BTreeMap::new();
    for &n in &config.n_actions {
        oracles.insert(n, Oracle::new(n, config.behavior_epsilon)?);
    }

    let keys = run_keys(config);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let records: Vec<Result<RunRecord>> = pool.install(|| {
        keys.par_iter()
            .map(|key| run_one(config, key, &oracles[&key.n_actions], &out_dir))
            .collect()
    });
    let runs = records.into_iter().collect::<Result<Vec<_>>>()?;

    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: config_hash(config),
        config: config.clone(),
        wall_seconds: started.elapsed().as_secs_f64(),
        runs,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_atomic(&out_dir.join(MANIFEST_FILE), text.as_bytes())?;
    Ok(manifest)
}

fn run_one(config: &ExperimentConfig, key: &RunKey, oracle: &Oracle, out_dir: &Path) -> Result<RunRecord> {
    let started = Instant::now();
    let net = key.arch.build(LAYOUT_STATES, key.n_actions, config.aggregator, key.seed)?;
    let (output, text, net) = match config.mode {
        Mode::PolicyEval => {
            let mut net = net;
            let train = crate::agents::TrainConfig {
                seed: key.seed,
                ..config.train
            };
            let curve = train_policy_eval(&oracle.spec, &oracle.policy, &mut net, &train, &oracle.q_pi)?;
            (key.curve_file(), curve.to_csv(), net)
        }
        Mode::Control => {
            let mut control = config.control;
            control.train.seed = key.seed;
            let mut agent = AgentState::new(net, control)?;
            let stats = train_ddqn(&oracle.spec, &mut agent)?;
            let ret = greedy_return(&oracle.spec, &agent.online)?;
            let v_star = oracle.q_star.state_value(oracle.spec.start());
            let text = format!(
                "{CONTROL_HEADER}\n{},{},{},{},{},{ret:?},{v_star:?},{:?}\n",
                key.arch,
                key.n_actions,
                key.seed,
                stats.episodes,
                stats.goal_episodes,
                (v_star - ret) / v_star
            );
            (key.control_file(), text, agent.online)
        }
    };
    write_atomic(&out_dir.join(&output), text.as_bytes())?;
    let checkpoint = key.checkpoint_file();
    save_checkpoint(&net, &out_dir.join(&checkpoint))?;
    Ok(RunRecord {
        arch: key.arch,
        n_actions: key.n_actions,
        seed: key.seed,
        output,
        checkpoint,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Median of a non-empty sample; the mean of the middle pair for even sizes.
pub fn median(xs: &[f64]) -> f64 {
    assert!(!xs.is_empty(), "median of an empty sample");
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Per-index median of the SE curves sharing an architecture and action
/// count.
#[derive(Debug, Clone, PartialEq)]
pub struct MedianCurve {
    pub arch: Architecture,
    pub n_actions: usize,
    pub n_seeds: usize,
    pub points: Vec<(usize, f64)>,
}

impl MedianCurve {
    pub fn final_se(&self) -> Option<f64> {
        self.points.last().map(|p| p.1)
    }

    pub fn file_name(&self) -> String {
        format!("median_{}_a{}.csv", self.arch, self.n_actions)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(MEDIAN_HEADER);
        out.push('\n');
        for (u, se) in &self.points {
            let _ = writeln!(out, "{u},{se:?},{},{},{}", self.arch, self.n_actions, self.n_seeds);
        }
        out
    }
}

/// Groups curves by (architecture, action count) and takes the median at
/// each logged index. Curves in a group must share their index grid.
pub fn aggregate_curves(curves: &[SeCurve]) -> Result<Vec<MedianCurve>> {
    if curves.is_empty() {
        return Err(Error::Domain("no curves to aggregate".into()));
    }
    let mut groups: BTreeMap<(Architecture, usize), Vec<&SeCurve>> = BTreeMap::new();
    for c in curves {
        groups.entry((c.arch, c.n_actions)).or_default().push(c);
    }
    let mut out = Vec::with_capacity(groups.len());
    for ((arch, n_actions), group) in groups {
        let grid: Vec<usize> = group[0].points.iter().map(|p| p.0).collect();
        for c in &group[1..] {
            if c.points.len() != grid.len() || c.points.iter().zip(&grid).any(|(p, &u)| p.0 != u) {
                return Err(Error::Domain(format!(
                    "misaligned update indices: {arch} with {n_actions} actions, seed {} vs seed {}",
                    group[0].seed, c.seed
                )));
            }
        }
        let points = grid
            .iter()
            .enumerate()
            .map(|(i, &u)| {
                let at: Vec<f64> = group.iter().map(|c| c.points[i].1).collect();
                (u, median(&at))
            })
            .collect();
        out.push(MedianCurve {
            arch,
            n_actions,
            n_seeds: group.len(),
            points,
        });
    }
    Ok(out)
}

/// Reads SE curve CSVs, aggregates them and writes one median CSV per group
/// into `out_dir`. Returns the written paths.
pub fn aggregate_files(inputs: &[PathBuf], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut curves = Vec::with_capacity(inputs.len());
    for path in inputs {
        let text = fs::read_to_string(path)?;
        let curve = SeCurve::from_csv(&text).map_err(|e| Error::Domain(format!("{}: {e}", path.display())))?;
        curves.push(curve);
    }
    let medians = aggregate_curves(&curves)?;
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::with_capacity(medians.len());
    for m in &medians {
        let path = out_dir.join(m.file_name());
        write_atomic(&path, m.to_csv().as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

/// Final-index ratio SE(single) / SE(duel) per action count, for every
/// action count with both architectures present.
pub fn final_ratios(medians: &[MedianCurve]) -> BTreeMap<usize, f64> {
    let mut ratios = BTreeMap::new();
    for duel in medians.iter().filter(|m| m.arch == Architecture::Duel) {
        let single = medians
            .iter()
            .find(|m| m.arch == Architecture::Single && m.n_actions == duel.n_actions);
        if let (Some(s), Some(d)) = (single.and_then(MedianCurve::final_se), duel.final_se()) {
            ratios.insert(duel.n_actions, s / d);
        }
    }
    ratios
}

/// The four scores entering the normalized improvement metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub agent: f64,
    pub baseline: f64,
    pub human: f64,
    pub random: f64,
}

/// `(agent - baseline) / (max(human, baseline) - random)`.
pub fn improvement_metric(rec: &ScoreRecord) -> Result<f64> {
    let denom = rec.human.max(rec.baseline) - rec.random;
    if !(denom > 0.0) || !denom.is_finite() || !rec.agent.is_finite() || !rec.baseline.is_finite() {
        return Err(Error::Domain(format!(
            "max(human, baseline) - random must be positive, got {denom}"
        )));
    }
    Ok((rec.agent - rec.baseline) / denom)
}

/// Value and advantage saliency of each layout state at its own one-hot
/// input dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaliencyRow {
    pub state: usize,
    pub value: f64,
    pub advantage: f64,
}

pub fn saliency_rows(net: &DenseNet) -> Result<Vec<SaliencyRow>> {
    if net.input_dim() != LAYOUT_STATES {
        return Err(Error::Shape(format!(
            "corridor saliency needs {LAYOUT_STATES} inputs, network has {}",
            net.input_dim()
        )));
    }
    let mut rows = Vec::with_capacity(LAYOUT_STATES);
    let mut x = vec![0.0; LAYOUT_STATES];
    for state in 0..LAYOUT_STATES {
        x[state] = 1.0;
        let s = saliency(net, &x)?;
        x[state] = 0.0;
        rows.push(SaliencyRow {
            state,
            value: s.value[state],
            advantage: s.advantage[state],
        });
    }
    Ok(rows)
}

pub fn saliency_csv(rows: &[SaliencyRow]) -> String {
    let mut out = String::from(SALIENCY_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{},{:?},{:?}", r.state, r.value, r.advantage);
    }
    out
}

/// Loads a dueling checkpoint and writes its per-state saliency CSV.
pub fn dump_saliency(checkpoint: &Path, output: &Path) -> Result<Vec<SaliencyRow>> {
    let net = load_checkpoint(checkpoint)?;
    let rows = saliency_rows(&net)?;
    write_atomic(output, saliency_csv(&rows).as_bytes())?;
    Ok(rows)
}

/// Writes the exact Q*, Q^pi, V^pi and A^pi table for one action count.
pub fn dump_oracle(n_actions: usize, behavior_epsilon: f64, output: &Path) -> Result<()> {
    let oracle = Oracle::new(n_actions, behavior_epsilon)?;
    write_atomic(output, oracle.to_csv()?.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dueling::{build_dueling, build_single_stream};

    fn curve(arch: Architecture, seed: u64, points: Vec<(usize, f64)>) -> SeCurve {
        SeCurve {
            arch,
            n_actions: 5,
            seed,
            points,
        }
    }

    #[test]
    fn metric_examples() {
        let m = |agent, baseline, human, random| {
            improvement_metric(&ScoreRecord {
                agent,
                baseline,
                human,
                random,
            })
        };
        assert_eq!(m(100.0, 50.0, 80.0, 0.0).unwrap(), 0.625);
        assert_eq!(m(50.0, 50.0, 80.0, 0.0).unwrap(), 0.0);
        assert_eq!(m(20.0, 10.0, 5.0, 0.0).unwrap(), 1.0);
        assert!(matches!(m(1.0, 0.0, 0.0, 0.0), Err(Error::Domain(_))));
        assert!(m(1.0, 0.0, 1.0, 2.0).is_err());
    }

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(&[9.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0]), 2.5);
        assert_eq!(median(&[7.0]), 7.0);
    }

    #[test]
    fn single_seed_median_is_identity() {
        let c = curve(Architecture::Duel, 1, vec![(0, 3.0), (1, 2.0), (2, 0.5)]);
        let m = aggregate_curves(std::slice::from_ref(&c)).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].points, c.points);
        assert_eq!(m[0].n_seeds, 1);
    }

    #[test]
    fn median_across_three_seeds() {
        let cs = [
            curve(Architecture::Single, 1, vec![(0, 1.0), (5, 4.0)]),
            curve(Architecture::Single, 2, vec![(0, 2.0), (5, 5.0)]),
            curve(Architecture::Single, 3, vec![(0, 9.0), (5, 6.0)]),
        ];
        let m = aggregate_curves(&cs).unwrap();
        assert_eq!(m[0].points, vec![(0, 2.0), (5, 5.0)]);
        assert!(m[0].to_csv().starts_with("update,median_se,arch,n_actions,n_seeds\n0,2.0,single,5,3\n"));
    }

    #[test]
    fn misaligned_grids_are_rejected() {
        let cs = [
            curve(Architecture::Single, 1, vec![(0, 1.0), (5, 4.0)]),
            curve(Architecture::Single, 2, vec![(0, 2.0), (6, 5.0)]),
        ];
        assert!(matches!(aggregate_curves(&cs), Err(Error::Domain(_))));
        let short = [
            curve(Architecture::Single, 1, vec![(0, 1.0), (5, 4.0)]),
            curve(Architecture::Single, 2, vec![(0, 2.0)]),
        ];
        assert!(aggregate_curves(&short).is_err());
        assert!(aggregate_curves(&[]).is_err());
    }

    #[test]
    fn ratios_pair_architectures() {
        let cs = [
            curve(Architecture::Single, 1, vec![(0, 4.0)]),
            curve(Architecture::Duel, 1, vec![(0, 2.0)]),
        ];
        let r = final_ratios(&aggregate_curves(&cs).unwrap());
        assert_eq!(r[&5], 2.0);
    }

    #[test]
    fn saliency_rows_match_module_saliency() {
        let net = build_dueling(70, 5, 3).unwrap();
        let rows = saliency_rows(&net).unwrap();
        assert_eq!(rows.len(), 70);
        for r in &rows {
            assert!(r.value >= 0.0 && r.advantage >= 0.0);
            let mut x = vec![0.0; 70];
            x[r.state] = 1.0;
            let s = saliency(&net, &x).unwrap();
            assert_eq!((r.value, r.advantage), (s.value[r.state], s.advantage[r.state]));
        }
        let single = build_single_stream(70, 5, 3).unwrap();
        assert!(matches!(saliency_rows(&single), Err(Error::UnsupportedTopology(_))));
    }

    #[test]
    fn small_grid_writes_curves_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let config = ExperimentConfig {
            seeds: vec![1, 2],
            n_actions: vec![5],
            train: crate::agents::TrainConfig {
                updates: 50,
                ..ExperimentConfig::default().train
            },
            output_dir: dir.path().to_string_lossy().into_owned(),
            ..ExperimentConfig::default()
        };
        let manifest = run(&config, 2).unwrap();
        assert_eq!(manifest.runs.len(), 4);
        assert_eq!(manifest.config_hash, config_hash(&config));
        let first = fs::read(dir.path().join("se_duel_a5_s2.csv")).unwrap();
        run(&config, 1).unwrap();
        assert_eq!(fs::read(dir.path().join("se_duel_a5_s2.csv")).unwrap(), first);
        let ckpt = dir.path().join("net_duel_a5_s2.ckpt");
        let rows = dump_saliency(&ckpt, &dir.path().join("sal.csv")).unwrap();
        assert_eq!(rows.len(), 70);
    }
}
