//! Episode simulation, offline baselines, regret estimates, the regret bound
//! and multi-run sweeps.

mod bound;
mod sweep;

use std::cmp::Ordering;

use thiserror::Error;

use crate::environment::{ContextTrace, EnvironmentError, MuMap, RewardModel};
use crate::knapsack::{affordable_units, density_cmp, round_down, solve_fbkp, KnapsackError};
use crate::model::{Allocation, ModelError, RunResult, StepRecord, TaskInstance};
use crate::policies::{Policy, PolicyError};
use crate::rng::{stream, STREAM_POLICY, STREAM_REWARD};

pub use bound::{delta_min, instance_bound_inputs, theorem1_bound, BoundInputs, BoundReport};
pub use sweep::{
    config_digest, run_sweep, write_atomic, write_step_log, write_summary, EpisodeLog,
    ExperimentConfig, InstanceSource, SummaryRow, SweepOutput, TraceSource, VERSION,
};

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Environment(#[from] EnvironmentError),
    #[error(transparent)]
    Knapsack(#[from] KnapsackError),
    #[error("{0}")]
    Invalid(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Per-round contexts and the map that turns them into means. Without a map
/// the workers keep their static means while their contexts move.
#[derive(Debug, Clone, Copy)]
pub struct Dynamics<'a> {
    pub trace: &'a ContextTrace,
    pub mu_map: Option<&'a MuMap>,
}

impl Dynamics<'_> {
    fn check(&self, instance: &TaskInstance) -> Result<(), EvaluationError> {
        if self.trace.n_workers() != instance.len()
            || self.trace.dimension() != instance.dimension()
        {
            return Err(EvaluationError::Invalid(format!(
                "trace covers {} workers in M = {}, instance has {} in M = {}",
                self.trace.n_workers(),
                self.trace.dimension(),
                instance.len(),
                instance.dimension()
            )));
        }
        if let Some(map) = self.mu_map {
            map.check_dimension(instance.dimension())?;
        }
        Ok(())
    }

    /// Means of all workers at round `t`.
    pub fn means_at(&self, t: u64, static_means: &[f64], out: &mut Vec<f64>) {
        out.clear();
        match self.mu_map {
            Some(map) => {
                let m = self.trace.dimension();
                out.extend(
                    self.trace
                        .round(t)
                        .chunks_exact(m)
                        .map(|c| map.eval(c).clamp(0.0, 1.0)),
                );
            }
            None => out.extend_from_slice(static_means),
        }
    }
}

/// Runs one episode until no worker is both available and affordable.
///
/// Policy randomness and reward draws come from two streams derived from
/// `seed`, so policies run with the same seed face the same reward noise for
/// the same sequence of means.
pub fn run_episode(
    instance: &TaskInstance,
    policy: &mut dyn Policy,
    reward_model: RewardModel,
    seed: u64,
    dynamics: Option<Dynamics<'_>>,
) -> Result<RunResult, EvaluationError> {
    if let Some(dy) = &dynamics {
        dy.check(instance)?;
    }
    let mut policy_rng = stream(seed, &[STREAM_POLICY]);
    let mut reward_rng = stream(seed, &[STREAM_REWARD]);
    let static_means = instance.true_means();
    let mut means = static_means.clone();
    let mut steps = Vec::new();
    let mut t = 1u64;
    while policy.resources().can_select() {
        if let Some(dy) = &dynamics {
            policy.refresh_contexts(dy.trace.round(t));
            dy.means_at(t, &static_means, &mut means);
            policy.refresh_means(&means);
        }
        let worker = policy.select(t, &mut policy_rng)?;
        let mean = means[worker];
        let reward = reward_model.sample(mean, &mut reward_rng);
        let cube = policy.cell_of(worker);
        let cost = instance.workers()[worker].cost;
        policy.observe(worker, reward)?;
        steps.push(StepRecord {
            t,
            worker,
            cube,
            cost,
            reward,
            expected: mean,
        });
        t += 1;
    }
    Ok(RunResult::from_steps(steps, instance.len()))
}

/// `round_down(solve_fbkp(mu, c, tau, B))`.
pub fn static_baseline(
    means: &[f64],
    costs: &[f64],
    capacities: &[u32],
    budget: f64,
) -> Result<Allocation, EvaluationError> {
    let frac = solve_fbkp(means, costs, capacities, budget)?;
    Ok(round_down(&frac, costs, means))
}

/// The floored fractional optimum over the instance's true means.
pub fn baseline_allocation(instance: &TaskInstance) -> Result<Allocation, EvaluationError> {
    static_baseline(
        &instance.true_means(),
        &instance.costs(),
        &instance.capacities(),
        instance.budget(),
    )
}

/// Floored fractional optimum over worker-round pairs.
///
/// Every pair `(i, t)` for `t` up to the longest possible episode is an item
/// with value `mu_i(t)`, cost `c_i` and capacity 1; worker `i` may be used at
/// most `tau_i` times in total. Items are walked in density order (ties by
/// cost, worker, round); exhausted workers are skipped and the walk stops at
/// the first item that no longer fits. `counts` are per worker and
/// `expected_value` sums the instant means.
pub fn dynamic_baseline(
    instance: &TaskInstance,
    dynamics: Dynamics<'_>,
) -> Result<Allocation, EvaluationError> {
    dynamics.check(instance)?;
    let costs = instance.costs();
    let caps = instance.capacities();
    let static_means = instance.true_means();
    let rounds = affordable_units(instance.budget(), instance.c_min()).max(1);
    let mut items: Vec<(f64, usize, u64)> = Vec::new();
    let mut means = Vec::new();
    for t in 1..=rounds {
        dynamics.means_at(t, &static_means, &mut means);
        items.extend(
            means
                .iter()
                .enumerate()
                .filter(|&(i, _)| caps[i] > 0)
                .map(|(i, &mu)| (mu, i, t)),
        );
    }
    items.sort_by(
        |a, b| match density_cmp(a.0, costs[a.1], a.1, b.0, costs[b.1], b.1) {
            Ordering::Equal => a.2.cmp(&b.2),
            o => o,
        },
    );
    let mut counts = vec![0u64; instance.len()];
    let mut residual = instance.budget();
    let mut total_cost = 0.0;
    let mut expected_value = 0.0;
    for (mu, i, _) in items {
        if counts[i] >= caps[i] as u64 {
            continue;
        }
        if costs[i] > residual {
            break;
        }
        counts[i] += 1;
        residual -= costs[i];
        total_cost += costs[i];
        expected_value += mu;
    }
    Ok(Allocation {
        counts,
        total_cost,
        expected_value,
    })
}

/// Baseline value minus the mean over replications of `sum_i mu_i x_i`.
pub fn empirical_regret(
    results: &[RunResult],
    baseline: &Allocation,
    means: &[f64],
) -> Result<f64, EvaluationError> {
    if results.is_empty() {
        return Err(EvaluationError::Invalid("no episodes to average".into()));
    }
    let total: f64 = results
        .iter()
        .map(|r| counts_value(&r.final_counts, means))
        .sum();
    Ok(baseline.expected_value - total / results.len() as f64)
}

/// `sum_i mu_i x_i`.
pub fn counts_value(counts: &[u64], means: &[f64]) -> f64 {
    counts.iter().zip(means).map(|(&x, mu)| x as f64 * mu).sum()
}

/// Sample mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}
