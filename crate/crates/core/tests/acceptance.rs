//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so the lines are always printed; exits non-zero if any fails.

use std::f64::consts::SQRT_2;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use duelq_core::agents::{
    bootstrap_mean_lower_bound, greedy_return, overestimation_trial, train_ddqn, AgentState, Architecture,
};
use duelq_core::corridor::{
    advantage_of, build_corridor, epsilon_greedy_policy, rollout_return, solve_q_pi, solve_q_star, BEHAVIOR_EPSILON,
    LAYOUT_STATES, VALID_ACTION_COUNTS,
};
use duelq_core::dueling::{aggregate, build_dueling_with, build_single_stream, AggregatorKind};
use duelq_core::harness::{self, final_ratios, improvement_metric, ExperimentConfig, ScoreRecord};
use duelq_core::nn::{finite_diff_grad, BackwardOptions, DenseNet, Stream, FD_STEP};
use duelq_core::replay::{anneal_beta, PrioritizedBuffer, Transition, BETA_END, BETA_START};

/// Relative-error floor for gradient entries near zero.
const GRAD_FLOOR: f64 = 1e-3;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("oracle validity", oracle_validity),
        ("advantage identity", advantage_identity),
        ("gradient exactness", gradient_exactness),
        ("aggregator algebra", aggregator_algebra),
        ("single vs dueling ordering", se_ratio_ordering),
        ("prioritized replay statistics", prioritized_replay),
        ("double-q overestimation", overestimation),
        ("ddqn control convergence", ddqn_convergence),
        ("improvement metric", metric_examples),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let started = Instant::now();
        let out = check();
        let verdict = if out.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {} {name}: {verdict} ({}; {:.1}s)",
            i + 1,
            out.detail,
            started.elapsed().as_secs_f64()
        );
        if !out.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

fn oracle_validity() -> Outcome {
    let mut worst_residual: f64 = 0.0;
    for n in VALID_ACTION_COUNTS {
        let spec = build_corridor(n).unwrap();
        let q_star = solve_q_star(&spec, 1e-12).unwrap();
        let pi = epsilon_greedy_policy(&q_star, BEHAVIOR_EPSILON).unwrap();
        let q_pi = solve_q_pi(&spec, &pi, 1e-12).unwrap();
        worst_residual = worst_residual.max(q_star.bellman_residual(&spec)).max(q_pi.bellman_residual(&spec));
    }

    const ROLLOUTS: usize = 100_000;
    let spec = build_corridor(5).unwrap();
    let q_star = solve_q_star(&spec, 1e-12).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst_z: f64 = 0.0;
    let mut probes = 0;
    for epsilon in [BEHAVIOR_EPSILON, 0.3] {
        let pi = epsilon_greedy_policy(&q_star, epsilon).unwrap();
        let q_pi = solve_q_pi(&spec, &pi, 1e-12).unwrap();
        for (s, a) in [(0, 0), (0, 2), (5, 1), (35, 3), (35, 4), (69, 0)] {
            let returns: Vec<f64> = (0..ROLLOUTS)
                .map(|_| rollout_return(&spec, &pi, s, a, 20_000, &mut rng).unwrap())
                .collect();
            let mean = returns.iter().sum::<f64>() / ROLLOUTS as f64;
            let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (ROLLOUTS - 1) as f64;
            let se = (var / ROLLOUTS as f64).sqrt();
            let gap = (mean - q_pi.get(s, a)).abs();
            // identical returns give se = 0; allow rounding in the sum
            worst_z = worst_z.max(if gap <= 1e-12 { 0.0 } else { gap / se });
            probes += 1;
        }
    }
    outcome(
        worst_residual < 1e-10 && worst_z <= 3.0,
        format!(
            "max Bellman residual {worst_residual:.2e} < 1e-10; worst MC deviation {worst_z:.2} standard errors over {probes} probes x {ROLLOUTS} rollouts"
        ),
    )
}

fn advantage_identity() -> Outcome {
    let mut worst: f64 = 0.0;
    for n in VALID_ACTION_COUNTS {
        let spec = build_corridor(n).unwrap();
        let q_star = solve_q_star(&spec, 1e-12).unwrap();
        let pi = epsilon_greedy_policy(&q_star, BEHAVIOR_EPSILON).unwrap();
        let q_pi = solve_q_pi(&spec, &pi, 1e-12).unwrap();
        let adv = advantage_of(&q_pi, &pi).unwrap();
        for s in 0..LAYOUT_STATES {
            worst = worst.max(pi.expectation(s, adv.row(s)).abs());
        }
    }
    outcome(
        worst < 1e-9,
        format!("max |E_pi[A(s, a)]| = {worst:.2e} over 70 states x 3 action counts"),
    )
}

fn random_instance(rng: &mut ChaCha8Rng, n_actions: usize) -> (Vec<f64>, Vec<f64>) {
    let x = (0..LAYOUT_STATES).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let dq = (0..n_actions).map(|_| rng.gen_range(-1.0..1.0)).collect();
    (x, dq)
}

/// Largest relative error of the exact backward pass and of the training
/// pass (trunk gradient scaled back by sqrt(2)) against central differences.
fn grad_errors(net: &DenseNet, x: &[f64], dq: &[f64]) -> (f64, f64, usize) {
    let loss = |q: &[f64]| q.iter().zip(dq).map(|(a, b)| a * b).sum::<f64>();
    let fd = finite_diff_grad(net, x, loss, FD_STEP).unwrap();
    let (_, trace) = net.forward(x).unwrap();
    let exact = net.backward(&trace, dq).unwrap();
    let mut train = net.backward_with(&trace, dq, BackwardOptions::training()).unwrap();
    if net.topology().is_dueling() {
        for g in train.grads.stream_mut(Stream::Trunk) {
            g.weights.iter_mut().chain(g.bias.iter_mut()).for_each(|v| *v *= SQRT_2);
        }
    }
    (
        exact.grads.max_relative_error(&fd, GRAD_FLOOR),
        train.grads.max_relative_error(&fd, GRAD_FLOOR),
        train.junction_rescales,
    )
}

fn gradient_exactness() -> Outcome {
    const INSTANCES: u64 = 20;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_single: f64 = 0.0;
    let mut worst_duel: f64 = 0.0;
    let mut rescales_ok = true;
    for seed in 0..INSTANCES {
        let n = VALID_ACTION_COUNTS[seed as usize % 3];
        let (x, dq) = random_instance(&mut rng, n);
        let single = build_single_stream(LAYOUT_STATES, n, seed).unwrap();
        let (e, t, r) = grad_errors(&single, &x, &dq);
        worst_single = worst_single.max(e).max(t);
        rescales_ok &= r == 0;
        for kind in [AggregatorKind::Mean, AggregatorKind::Max, AggregatorKind::Naive] {
            let duel = build_dueling_with(LAYOUT_STATES, n, kind, seed).unwrap();
            let (e, t, r) = grad_errors(&duel, &x, &dq);
            worst_duel = worst_duel.max(e).max(t);
            rescales_ok &= r == 1;
        }
    }
    outcome(
        worst_single < 1e-6 && worst_duel < 1e-6 && rescales_ok,
        format!(
            "max relative error single {worst_single:.2e}, dueling {worst_duel:.2e} (mean/max/naive) over {INSTANCES} instances each; one junction rescale per dueling pass: {rescales_ok}"
        ),
    )
}

fn aggregator_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut shift_err, mut mean_err, mut max_err): (f64, f64, f64) = (0.0, 0.0, 0.0);
    let mut naive_min_change = f64::INFINITY;
    for trial in 0..1000 {
        let n = VALID_ACTION_COUNTS[trial % 3];
        let v: f64 = rng.gen_range(-2.0..2.0);
        let adv: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let c: f64 = rng.gen_range(-5.0..5.0);
        let shifted: Vec<f64> = adv.iter().map(|a| a + c).collect();

        let q = aggregate(AggregatorKind::Mean, v, &adv).unwrap();
        let qs = aggregate(AggregatorKind::Mean, v, &shifted).unwrap();
        shift_err = shift_err.max(q.iter().zip(&qs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        mean_err = mean_err.max((q.iter().sum::<f64>() / n as f64 - v).abs());

        let qm = aggregate(AggregatorKind::Max, v, &adv).unwrap();
        let best = duelq_core::argmax(&adv);
        max_err = max_err.max((qm[best] - v).abs());

        let qn = aggregate(AggregatorKind::Naive, v, &adv).unwrap();
        let qns = aggregate(AggregatorKind::Naive, v, &shifted).unwrap();
        let change = qn.iter().zip(&qns).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        naive_min_change = naive_min_change.min(change);
    }
    outcome(
        shift_err <= 1e-12 && mean_err <= 1e-12 && max_err == 0.0 && naive_min_change > 0.0,
        format!(
            "mean shift error {shift_err:.1e}, |mean_a Q - V| {mean_err:.1e}, max |Q(a*) - V| {max_err:.1e}, smallest naive shift response {naive_min_change:.2e}"
        ),
    )
}

fn se_ratio_ordering() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = ExperimentConfig {
        output_dir: dir.path().to_string_lossy().into_owned(),
        ..ExperimentConfig::default()
    };
    let manifest = harness::run(&config, 1).unwrap();
    let curves: Vec<_> = manifest
        .runs
        .iter()
        .map(|r| duelq_core::agents::SeCurve::from_csv(&std::fs::read_to_string(dir.path().join(&r.output)).unwrap()).unwrap())
        .collect();
    let medians = harness::aggregate_curves(&curves).unwrap();
    let ratios = final_ratios(&medians);
    let final_of = |arch: Architecture, n: usize| {
        medians
            .iter()
            .find(|m| m.arch == arch && m.n_actions == n)
            .and_then(|m| m.final_se())
            .unwrap()
    };
    let duel_wins = [10, 20]
        .iter()
        .all(|&n| final_of(Architecture::Duel, n) <= final_of(Architecture::Single, n));
    let monotone = ratios[&5] <= ratios[&10] && ratios[&10] <= ratios[&20];
    let near_five = (0.5..=2.0).contains(&ratios[&5]);
    let se = |arch, n| format!("{:.3}", final_of(arch, n));
    outcome(
        duel_wins && monotone && near_five,
        format!(
            "{} seeds, {} updates, lr {}; final median SE single/duel: 5 actions {}/{}, 10 actions {}/{}, 20 actions {}/{}; ratios {:.2}, {:.2}, {:.2}; duel <= single at 10 and 20: {duel_wins}; ratio non-decreasing: {monotone}; 5-action ratio in [0.5, 2]: {near_five}",
            config.seeds.len(),
            config.train.updates,
            config.train.learning_rate,
            se(Architecture::Single, 5),
            se(Architecture::Duel, 5),
            se(Architecture::Single, 10),
            se(Architecture::Duel, 10),
            se(Architecture::Single, 20),
            se(Architecture::Duel, 20),
            ratios[&5],
            ratios[&10],
            ratios[&20],
        ),
    )
}

fn prioritized_replay() -> Outcome {
    const N: usize = 100;
    const DRAWS: usize = 1_000_000;
    const ALPHA: f64 = 0.7;
    let t = Transition {
        state: 0,
        action: 0,
        reward: 0.0,
        next: None,
    };
    let mut buffer = PrioritizedBuffer::new(N, ALPHA).unwrap();
    for _ in 0..N {
        buffer.push(t);
    }
    // distinct priorities in scrambled slot order
    let indices: Vec<usize> = (0..N).collect();
    let td: Vec<f64> = (0..N).map(|i| ((i * 37) % N) as f64 + 0.5).collect();
    buffer.update_priorities(&indices, &td).unwrap();

    // exact rank-based probabilities from the priorities alone
    let mut by_priority: Vec<usize> = (0..N).collect();
    by_priority.sort_by(|&a, &b| td[b].total_cmp(&td[a]));
    let mut exact = vec![0.0; N];
    for (rank, &slot) in by_priority.iter().enumerate() {
        exact[slot] = ((rank + 1) as f64).powf(-ALPHA);
    }
    let z: f64 = exact.iter().sum();
    exact.iter_mut().for_each(|p| *p /= z);

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut counts = vec![0usize; N];
    let mut weights_ok = true;
    for chunk in 0..DRAWS / 10_000 {
        let beta = anneal_beta(chunk, DRAWS / 10_000);
        for s in buffer.sample_prioritized(10_000, beta, &mut rng).unwrap() {
            counts[s.index] += 1;
            weights_ok &= s.weight > 0.0 && s.weight <= 1.0;
        }
    }
    let max_dev = counts
        .iter()
        .zip(&exact)
        .map(|(&c, p)| (c as f64 / DRAWS as f64 - p).abs())
        .fold(0.0, f64::max);
    let chi2: f64 = counts
        .iter()
        .zip(&exact)
        .map(|(&c, p)| {
            let e = p * DRAWS as f64;
            (c as f64 - e).powi(2) / e
        })
        .sum();
    let p_value = 1.0 - ChiSquared::new((N - 1) as f64).unwrap().cdf(chi2);

    let endpoints = anneal_beta(0, 1000) == BETA_START
        && anneal_beta(1000, 1000) == BETA_END
        && BETA_START == 0.5
        && BETA_END == 1.0;

    let mut flat = PrioritizedBuffer::new(N, ALPHA).unwrap();
    for _ in 0..N {
        flat.push(t);
    }
    let all_ones = [0.5, 0.75, 1.0].iter().all(|&beta| {
        flat.sample_prioritized(1000, beta, &mut rng)
            .unwrap()
            .iter()
            .all(|s| s.weight == 1.0)
    });

    outcome(
        max_dev <= 0.01 && endpoints && weights_ok && all_ones && p_value > 1e-3,
        format!(
            "max |freq - P(i)| {max_dev:.2e} over {DRAWS} draws; chi-square {chi2:.1} on {} dof, p = {p_value:.3}; beta endpoints 0.5/1.0: {endpoints}; weights in (0, 1]: {weights_ok}; equal priorities give unit weights: {all_ones}",
            N - 1
        ),
    )
}

fn overestimation() -> Outcome {
    const TRIALS: usize = 1000;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let diffs: Vec<f64> = (0..TRIALS)
        .map(|_| {
            let t = overestimation_trial(10, 10, &mut rng);
            t.single - t.double
        })
        .collect();
    let mean = diffs.iter().sum::<f64>() / TRIALS as f64;
    let lower = bootstrap_mean_lower_bound(&diffs, 0.99, 10_000, &mut rng);
    outcome(
        lower > 0.0,
        format!("mean (single - double) estimate {mean:.4}, 99% bootstrap lower bound {lower:.4} over {TRIALS} trials"),
    )
}

fn ddqn_convergence() -> Outcome {
    let spec = build_corridor(5).unwrap();
    let v_star = solve_q_star(&spec, 1e-12).unwrap().state_value(spec.start());
    let defaults = ExperimentConfig::default().control;
    let mut hits = 0;
    let mut returns = Vec::new();
    let mut goal_episodes = 0;
    for seed in 1..=5u64 {
        let mut control = defaults;
        control.train.seed = seed;
        let net = Architecture::Duel
            .build(LAYOUT_STATES, 5, AggregatorKind::Mean, seed)
            .unwrap();
        let mut agent = AgentState::new(net, control).unwrap();
        goal_episodes += train_ddqn(&spec, &mut agent).unwrap().goal_episodes;
        let ret = greedy_return(&spec, &agent.online).unwrap();
        if (v_star - ret).abs() <= 0.05 * v_star {
            hits += 1;
        }
        returns.push(format!("{ret:.4}"));
    }
    outcome(
        hits >= 4,
        format!(
            "{hits}/5 seeds within 5% of V*(start) = {v_star:.4} after {} steps; greedy returns [{}]; training episodes reaching the goal: {goal_episodes}",
            defaults.train.updates,
            returns.join(", ")
        ),
    )
}

fn metric_examples() -> Outcome {
    let m = |agent, baseline, human, random| {
        improvement_metric(&ScoreRecord {
            agent,
            baseline,
            human,
            random,
        })
        .unwrap()
    };
    let got = [m(100.0, 50.0, 80.0, 0.0), m(50.0, 50.0, 80.0, 0.0), m(20.0, 10.0, 5.0, 0.0)];
    let degenerate = improvement_metric(&ScoreRecord {
        agent: 1.0,
        baseline: 0.0,
        human: 0.0,
        random: 0.0,
    })
    .is_err();
    outcome(
        got == [0.625, 0.0, 1.0] && degenerate,
        format!("examples give {got:?}; zero denominator rejected: {degenerate}"),
    )
}
