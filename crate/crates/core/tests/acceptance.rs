//! Acceptance suite. Prints one `[k] name: PASS|FAIL (details)` line per
//! criterion and exits non-zero if any fail.

use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use caws::environment::{DriftSpec, MuMap, RewardModel};
use caws::evaluation::{
    run_episode, run_sweep, theorem1_bound, write_step_log, BoundInputs, ExperimentConfig,
    InstanceSource, SweepOutput, TraceSource,
};
use caws::knapsack::{brute_force_bkp, density_greedy, round_down, solve_fbkp};
use caws::model::{TaskInstance, WorkerSpec};
use caws::partition::{cube_index, holder_delta, PartitionGrid};
use caws::policies::{bkube_init, caws_init, Granularity, Policy, PolicyKind};
use caws::rng::SimRng;
use rand::{Rng, SeedableRng};

fn report(k: u32, name: &str, pass: bool, details: String) {
    println!(
        "[{k}] {name}: {} ({details})",
        if pass { "PASS" } else { "FAIL" }
    );
}

/// Exhaustive optimum by recursion over per-worker counts.
fn enumerate_optimum(values: &[f64], costs: &[f64], caps: &[u32], budget: f64) -> f64 {
    fn go(i: usize, left: f64, values: &[f64], costs: &[f64], caps: &[u32]) -> f64 {
        if i == values.len() {
            return 0.0;
        }
        let mut best = 0.0f64;
        for x in 0..=caps[i] {
            let spend = x as f64 * costs[i];
            if spend > left {
                break;
            }
            best = best.max(x as f64 * values[i] + go(i + 1, left - spend, values, costs, caps));
        }
        best
    }
    go(0, budget, values, costs, caps)
}

fn knapsack_greedy_and_sandwich() -> bool {
    let start = Instant::now();
    let mut rng = SimRng::seed_from_u64(2024);
    let mut greedy_failures = 0;
    let mut sandwich_failures = 0;
    let mut brute_mismatches = 0;
    let mut worst_ratio = f64::INFINITY;
    // Summation order differs between the enumerator and the solvers; allow
    // rounding noise only.
    let tol = 1e-12;
    for _ in 0..500 {
        let n = rng.gen_range(1..=8);
        let values: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let costs: Vec<f64> = (0..n).map(|_| rng.gen_range(1.0..=3.0)).collect();
        let caps: Vec<u32> = (0..n).map(|_| rng.gen_range(1..=3)).collect();
        let full: f64 = costs.iter().zip(&caps).map(|(c, &t)| c * t as f64).sum();
        let budget = rng.gen_range(0.0..=full);

        let opt = enumerate_optimum(&values, &costs, &caps, budget);
        let brute = brute_force_bkp(&values, &costs, &caps, budget).unwrap();
        if (brute.expected_value - opt).abs() > tol {
            brute_mismatches += 1;
        }
        let greedy = density_greedy(&values, &costs, &caps, budget).unwrap();
        let frac = solve_fbkp(&values, &costs, &caps, budget).unwrap();
        let floor = round_down(&frac, &costs, &values);
        let split = frac.split_value(&values);

        if opt > 0.0 {
            worst_ratio = worst_ratio.min(greedy.expected_value / opt);
        }
        if greedy.expected_value < 0.5 * opt - tol {
            greedy_failures += 1;
        }
        let sandwich = floor.expected_value <= opt + tol
            && opt <= frac.value + tol
            && frac.value <= floor.expected_value + split + tol;
        if !sandwich {
            sandwich_failures += 1;
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass =
        brute_mismatches == 0 && greedy_failures == 0 && sandwich_failures == 0 && elapsed < 10.0;
    report(
        1,
        "knapsack greedy bound and sandwich",
        pass,
        format!("brute force mismatches {brute_mismatches}, greedy failures {greedy_failures}, sandwich failures {sandwich_failures}, worst greedy/opt {worst_ratio:.4}, {elapsed:.2}s"),
    );
    pass
}

fn within_cube_gap() -> bool {
    let mut rng = SimRng::seed_from_u64(7);
    let map = MuMap::CoordinateMean;
    let m = 2;
    let l = 1.0 / (m as f64).sqrt();
    let mut violations = 0;
    let mut worst_slack = f64::INFINITY;
    for d in [2u32, 5, 10, 47] {
        let grid = PartitionGrid::new(d, m).unwrap();
        let gap = holder_delta(l, 1.0, m, d);
        // For the coordinate mean with L = M^(-1/2), alpha = 1 the gap is 1/d.
        assert!((gap - 1.0 / d as f64).abs() < 1e-15);
        let mut pairs = 0;
        while pairs < 10_000 {
            let cell: Vec<u32> = (0..m).map(|_| rng.gen_range(0..d)).collect();
            let point = |rng: &mut SimRng| -> Vec<f64> {
                cell.iter()
                    .map(|&k| (k as f64 + rng.gen::<f64>()) / d as f64)
                    .collect()
            };
            let a = point(&mut rng);
            let b = point(&mut rng);
            if cube_index(&a, &grid).unwrap() != cube_index(&b, &grid).unwrap() {
                continue;
            }
            pairs += 1;
            let diff = (map.eval(&a) - map.eval(&b)).abs();
            worst_slack = worst_slack.min(gap - diff);
            if diff > gap + 1e-12 {
                violations += 1;
            }
        }
    }
    let pass = violations == 0;
    report(
        2,
        "within-cube mean gap",
        pass,
        format!("violations {violations}, smallest slack {worst_slack:.3e}"),
    );
    pass
}

const LEARNERS: [PolicyKind; 3] = [
    PolicyKind::EpsilonFirst,
    PolicyKind::Bkube,
    PolicyKind::Random,
];

fn synthetic_standard() -> InstanceSource {
    InstanceSource::Synthetic {
        dimension: 2,
        cost_range: (1.0, 1.5),
        capacity_range: (20, 40),
        mu_map: MuMap::CoordinateMean,
    }
}

fn budget_sweep() -> &'static SweepOutput {
    static OUT: OnceLock<SweepOutput> = OnceLock::new();
    OUT.get_or_init(|| {
        let config = ExperimentConfig {
            instance: synthetic_standard(),
            policies: PolicyKind::ALL.to_vec(),
            epsilon: 0.1,
            granularity: Granularity::Auto,
            budgets: (1..=10).map(|k| 2000.0 * k as f64).collect(),
            worker_counts: vec![20_000],
            replications: 10,
            seed: 1,
            reward_model: RewardModel::Bernoulli,
            trace: None,
            log_steps: false,
        };
        run_sweep(&config, 1).unwrap()
    })
}

fn row(
    out: &SweepOutput,
    policy: PolicyKind,
    budget: f64,
    n: usize,
) -> &caws::evaluation::SummaryRow {
    out.rows
        .iter()
        .find(|r| r.policy == policy && r.budget == budget && r.n == n)
        .expect("row present")
}

fn budget_sweep_ordering() -> bool {
    let out = budget_sweep();
    let budgets: Vec<f64> = (1..=10).map(|k| 2000.0 * k as f64).collect();
    let mut good_points = 0;
    for &b in &budgets {
        let caws = row(out, PolicyKind::Caws, b, 20_000).mean_expected_revenue;
        let oracle = row(out, PolicyKind::Oracle, b, 20_000).mean_expected_revenue;
        let beats_all = LEARNERS
            .iter()
            .all(|&p| caws > row(out, p, b, 20_000).mean_expected_revenue);
        if oracle >= caws && beats_all {
            good_points += 1;
        }
    }
    let caws_regret = row(out, PolicyKind::Caws, 20_000.0, 20_000).mean_regret;
    let others: Vec<f64> = LEARNERS
        .iter()
        .map(|&p| row(out, p, 20_000.0, 20_000).mean_regret)
        .collect();
    let lowest_regret = others.iter().all(|&r| caws_regret < r);
    let min_other = others.iter().copied().fold(f64::INFINITY, f64::min);
    let pass = good_points >= 9 && lowest_regret;
    report(
        3,
        "budget sweep ordering",
        pass,
        format!(
            "ordering holds at {good_points}/10 budgets; regret at B=20000: caws {caws_regret:.1}, best other {min_other:.1}, ratio {:.2}",
            min_other / caws_regret
        ),
    );
    pass
}

fn worker_count_stability() -> bool {
    let config = ExperimentConfig {
        instance: synthetic_standard(),
        policies: vec![PolicyKind::Caws, PolicyKind::Bkube],
        epsilon: 0.1,
        granularity: Granularity::Auto,
        budgets: vec![10_000.0],
        worker_counts: vec![5_000, 10_000, 20_000],
        replications: 10,
        seed: 1,
        reward_model: RewardModel::Bernoulli,
        trace: None,
        log_steps: false,
    };
    let out = run_sweep(&config, 1).unwrap();
    let ns = [5_000usize, 10_000, 20_000];
    let caws: Vec<f64> = ns
        .iter()
        .map(|&n| row(&out, PolicyKind::Caws, 10_000.0, n).mean_regret)
        .collect();
    let bkube: Vec<f64> = ns
        .iter()
        .map(|&n| row(&out, PolicyKind::Bkube, 10_000.0, n).mean_regret)
        .collect();
    let lo = caws.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = caws.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let spread = (hi - lo) / lo;
    let increasing = bkube.windows(2).all(|w| w[1] > w[0]);
    let pass = spread < 0.25 && increasing;
    report(
        4,
        "worker-count stability",
        pass,
        format!(
            "caws regret {caws:.1?} spread (max-min)/min {:.1}%; bkube regret {bkube:.1?}",
            spread * 100.0
        ),
    );
    pass
}

fn sublinear_regret_growth() -> bool {
    let out = budget_sweep();
    let points: Vec<(f64, f64)> = out
        .rows
        .iter()
        .filter(|r| r.policy == PolicyKind::Caws)
        .map(|r| (r.budget.ln(), r.mean_regret.ln()))
        .collect();
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let slope = sxy / sxx;
    let pass = points.len() == 10 && slope <= 0.85;
    report(
        5,
        "sublinear regret growth",
        pass,
        format!("fitted exponent {slope:.4}"),
    );
    pass
}

fn bound_evaluator() -> bool {
    let inputs = BoundInputs {
        budget: 16.0,
        dimension: 1,
        alpha: 1.0,
        l: 1.0,
        c_min: 1.0,
        c_max: 1.0,
        tau_max: 1,
        delta_min: Some(1.0),
    };
    let value = theorem1_bound(&inputs).unwrap().bound.unwrap();
    // Independent evaluation: xi = 9, h = 9 ln 16 + pi^2/3 + 1,
    // bound = (1 + 2 * 4 * h + 1) + 4 * 4 + 1.
    let expected = 252.945_333_070_835_86;
    let example_ok = (value - expected).abs() <= 1e-6;

    let out = budget_sweep();
    let mut checked = 0;
    let mut violations = 0;
    for r in out.rows.iter().filter(|r| r.policy == PolicyKind::Caws) {
        if let Some(b) = r.theorem1_bound {
            checked += 1;
            if r.mean_regret > b {
                violations += 1;
            }
        }
    }
    let pass = example_ok && violations == 0;
    report(
        6,
        "bound evaluator",
        pass,
        format!("worked example {value:.9}; regret above bound at {violations} of {checked} finite grid points"),
    );
    pass
}

fn singleton_degeneration() -> bool {
    let mut rng = SimRng::seed_from_u64(99);
    let workers: Vec<WorkerSpec> = (0..200)
        .map(|i| {
            WorkerSpec::new(
                i,
                vec![rng.gen(), rng.gen()],
                rng.gen_range(1.0..1.5),
                rng.gen_range(2..6),
                rng.gen(),
            )
        })
        .collect();
    let budget = 600.0;
    let instance = TaskInstance::new(workers, budget, 2, 1.0 / 2f64.sqrt(), 1.0).unwrap();
    let render = |policy: &mut dyn Policy, seed: u64| -> Vec<u8> {
        let result = run_episode(&instance, policy, RewardModel::Bernoulli, seed, None).unwrap();
        let log = caws::evaluation::EpisodeLog {
            policy: PolicyKind::Bkube,
            seed,
            steps: result.steps,
        };
        let mut bytes = Vec::new();
        write_step_log(&mut bytes, &[log], "-").unwrap();
        bytes
    };
    let mut identical = 0;
    for seed in 0..20 {
        let mut a = bkube_init(&instance.view(), budget).unwrap();
        let mut b = caws_init(&instance.view(), budget, Granularity::Singleton).unwrap();
        if render(&mut a, seed) == render(&mut b, seed) {
            identical += 1;
        }
    }
    let pass = identical == 20;
    report(
        7,
        "singleton degeneration",
        pass,
        format!("{identical}/20 seeds byte-identical"),
    );
    pass
}

fn time_varying_contexts() -> bool {
    let budgets = [300.0, 600.0, 900.0, 1200.0, 1500.0];
    let mut winning_seeds = 0;
    let mut margins = Vec::new();
    for seed in 1..=10u64 {
        let config = ExperimentConfig {
            instance: InstanceSource::Synthetic {
                dimension: 2,
                cost_range: (1.0, 1.5),
                capacity_range: (20, 40),
                mu_map: MuMap::gaussian(),
            },
            policies: vec![PolicyKind::Caws, PolicyKind::Bkube, PolicyKind::Random],
            epsilon: 0.1,
            granularity: Granularity::Auto,
            budgets: budgets.to_vec(),
            worker_counts: vec![500],
            replications: 10,
            seed,
            reward_model: RewardModel::Bernoulli,
            trace: Some(TraceSource::Drift {
                spec: DriftSpec {
                    decay_rate: 0.05,
                    ..DriftSpec::default()
                },
            }),
            log_steps: false,
        };
        let out = run_sweep(&config, 1).unwrap();
        let mut wins = true;
        for &b in &budgets {
            let caws = row(&out, PolicyKind::Caws, b, 500).mean_expected_revenue;
            let best_other = [PolicyKind::Bkube, PolicyKind::Random]
                .iter()
                .map(|&p| row(&out, p, b, 500).mean_expected_revenue)
                .fold(f64::NEG_INFINITY, f64::max);
            margins.push(caws / best_other);
            wins &= caws > best_other;
        }
        if wins {
            winning_seeds += 1;
        }
    }
    let min_margin = margins.iter().copied().fold(f64::INFINITY, f64::min);
    let pass = winning_seeds >= 9;
    report(
        8,
        "time-varying contexts",
        pass,
        format!("caws ahead at every budget in {winning_seeds}/10 seeds; smallest revenue ratio {min_margin:.3}"),
    );
    pass
}

/// A policy state reached by a random partial episode, sometimes with moved
/// contexts.
fn random_state(rng: &mut SimRng) -> caws::policies::Caws {
    let n = rng.gen_range(1..60);
    let m = rng.gen_range(1..=3);
    let levels = [1.0, 1.2, 1.5, 2.0, 2.5];
    let workers: Vec<WorkerSpec> = (0..n)
        .map(|i| {
            let ctx = (0..m).map(|_| rng.gen()).collect();
            let cost = if rng.gen_bool(0.7) {
                levels[rng.gen_range(0..levels.len())]
            } else {
                rng.gen_range(1.0..3.0)
            };
            WorkerSpec::new(i, ctx, cost, rng.gen_range(0..6), rng.gen())
        })
        .collect();
    let budget = rng.gen_range(0.5..120.0);
    let instance = TaskInstance::new(workers, budget, m, 1.0, 1.0).unwrap();
    let granularity = match rng.gen_range(0..4) {
        0 => Granularity::Auto,
        1 => Granularity::Singleton,
        _ => Granularity::Fixed(rng.gen_range(1..6)),
    };
    let mut policy = caws_init(&instance.view(), budget, granularity).unwrap();
    let moving = rng.gen_bool(0.3);
    let steps = rng.gen_range(0..80);
    for t in 1..=steps {
        if moving {
            let ctx: Vec<f64> = (0..n * m).map(|_| rng.gen()).collect();
            policy.refresh_contexts(&ctx);
        }
        if !policy.resources().can_select() {
            break;
        }
        let w = policy.select(t, rng).unwrap();
        let reward = if rng.gen::<f64>() < instance.workers()[w].true_mean() {
            1.0
        } else {
            0.0
        };
        policy.observe(w, reward).unwrap();
    }
    policy
}

fn grouped_subroutine_matches_reference() -> bool {
    let mut rng = SimRng::seed_from_u64(31);
    let mut mismatches = 0;
    let mut nonzero = 0;
    for _ in 0..1000 {
        let mut policy = random_state(&mut rng);
        let t = rng.gen_range(1..5000);
        let grouped = policy.caws_subroutine(t);
        let naive = policy.caws_subroutine_naive(t);
        if grouped.iter().any(|&x| x > 0) {
            nonzero += 1;
        }
        if grouped != naive {
            mismatches += 1;
        }
    }
    let pass = mismatches == 0;
    report(
        9,
        "grouped subroutine equivalence",
        pass,
        format!("{mismatches} mismatches over 1000 states ({nonzero} with non-zero weights)"),
    );
    pass
}

fn cli(dir: &std::path::Path, args: &[&str]) {
    let output = Command::new(env!("CARGO_BIN_EXE_caws"))
        .arg("--output-dir")
        .arg(dir)
        .args(args)
        .output()
        .unwrap();
    assert!(output.status.success(), "caws {args:?} failed");
}

fn repeated_invocations_are_identical() -> bool {
    let root = tempfile::tempdir().unwrap();
    let invocations: [&[&str]; 3] = [
        &[
            "run",
            "--policy",
            "caws",
            "--budget",
            "300",
            "--n",
            "200",
            "--seed",
            "4",
            "--replications",
            "3",
            "--log-steps",
        ],
        &[
            "sweep",
            "--policies",
            "caws,oracle,epsilon_first,bkube,random",
            "--budgets",
            "100,200",
            "--worker-counts",
            "100,150",
            "--replications",
            "2",
            "--seed",
            "9",
            "--log-steps",
            "--jobs",
            "2",
        ],
        &[
            "run",
            "--policy",
            "caws",
            "--budget",
            "200",
            "--n",
            "80",
            "--mu-map",
            "gaussian",
            "--trace",
            "drift",
            "--log-steps",
        ],
    ];
    let mut identical = 0;
    for (k, args) in invocations.iter().enumerate() {
        let a = root.path().join(format!("{k}a"));
        let b = root.path().join(format!("{k}b"));
        cli(&a, args);
        cli(&b, args);
        let same = ["summary.csv", "steps.csv", "config.json"]
            .iter()
            .all(|f| std::fs::read(a.join(f)).unwrap() == std::fs::read(b.join(f)).unwrap());
        if same {
            identical += 1;
        }
    }
    let pass = identical == invocations.len();
    report(
        10,
        "determinism",
        pass,
        format!(
            "{identical}/{} invocations byte-identical",
            invocations.len()
        ),
    );
    pass
}

fn main() {
    let criteria: [fn() -> bool; 10] = [
        knapsack_greedy_and_sandwich,
        within_cube_gap,
        budget_sweep_ordering,
        worker_count_stability,
        sublinear_regret_growth,
        bound_evaluator,
        singleton_degeneration,
        time_varying_contexts,
        grouped_subroutine_matches_reference,
        repeated_invocations_are_identical,
    ];
    let mut failed = 0;
    for run in criteria {
        let ok = std::panic::catch_unwind(run).unwrap_or(false);
        if !ok {
            failed += 1;
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
