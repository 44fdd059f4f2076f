//! Replicated runs over a grid of worker counts and budgets, summary rows
//! and CSV output.

use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::environment::{
    gen_drift_trace, gen_synthetic, ContextTrace, DriftSpec, MuMap, RewardModel, SyntheticSpec,
    TraceTable,
};
use crate::evaluation::{
    baseline_allocation, counts_value, dynamic_baseline, instance_bound_inputs, mean_std,
    run_episode, theorem1_bound, Dynamics, EvaluationError,
};
use crate::knapsack::affordable_units;
use crate::model::{StepRecord, TaskInstance, WorkerTable};
use crate::policies::{build_policy, Granularity, PolicyKind, PolicyParams};
use crate::rng::mix_seed;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Seed coordinates reserved for instance and trace generation; grid indices
/// never get this large.
const INSTANCE_STREAM: u64 = u64::MAX - 1;
const TRACE_STREAM: u64 = u64::MAX - 2;

/// Where workers come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InstanceSource {
    /// Uniform contexts, costs and capacities; the worker count comes from the
    /// sweep's worker-count grid.
    Synthetic {
        #[serde(default = "default_dimension")]
        dimension: usize,
        #[serde(default = "default_cost_range")]
        cost_range: (f64, f64),
        #[serde(default = "default_capacity_range")]
        capacity_range: (u32, u32),
        #[serde(default = "default_mu_map")]
        mu_map: MuMap,
    },
    /// A worker CSV. Rows without `mu` need `mu_map`.
    File {
        path: PathBuf,
        #[serde(default)]
        mu_map: Option<MuMap>,
        #[serde(default)]
        holder_l: Option<f64>,
        #[serde(default)]
        holder_alpha: Option<f64>,
    },
}

fn default_dimension() -> usize {
    2
}

fn default_cost_range() -> (f64, f64) {
    (1.0, 1.5)
}

fn default_capacity_range() -> (u32, u32) {
    (20, 40)
}

fn default_mu_map() -> MuMap {
    MuMap::CoordinateMean
}

impl InstanceSource {
    /// The context-to-mean map, when there is one.
    pub fn mu_map(&self) -> Option<&MuMap> {
        match self {
            InstanceSource::Synthetic { mu_map, .. } => Some(mu_map),
            InstanceSource::File { mu_map, .. } => mu_map.as_ref(),
        }
    }

    /// Loads or generates the full worker pool. Synthetic pools get `n`
    /// workers; `budget` is attached to the instance.
    pub fn build(&self, n: usize, budget: f64, seed: u64) -> Result<TaskInstance, EvaluationError> {
        match self {
            InstanceSource::Synthetic {
                dimension,
                cost_range,
                capacity_range,
                mu_map,
            } => {
                let spec = SyntheticSpec {
                    n,
                    dimension: *dimension,
                    cost_range: *cost_range,
                    capacity_range: *capacity_range,
                    mu_map: mu_map.clone(),
                    budget,
                };
                Ok(gen_synthetic(&spec, seed)?)
            }
            InstanceSource::File {
                path,
                mu_map,
                holder_l,
                holder_alpha,
            } => {
                let file = File::open(path)
                    .map_err(|e| EvaluationError::Invalid(format!("{}: {e}", path.display())))?;
                let table = WorkerTable::read_csv(BufReader::new(file), None)?;
                let declared = mu_map.as_ref().map(|m| m.declared_holder(table.dimension));
                let l = holder_l.or(declared.map(|h| h.l)).unwrap_or(1.0);
                let alpha = holder_alpha.or(declared.map(|h| h.alpha)).unwrap_or(1.0);
                if let Some(map) = mu_map {
                    map.check_dimension(table.dimension)?;
                }
                let eval = mu_map
                    .as_ref()
                    .map(|m| move |ctx: &[f64]| m.eval(ctx).clamp(0.0, 1.0));
                let eval_ref: Option<&dyn Fn(&[f64]) -> f64> =
                    eval.as_ref().map(|f| f as &dyn Fn(&[f64]) -> f64);
                Ok(table.into_instance(budget, l, alpha, eval_ref)?)
            }
        }
    }
}

/// Time-varying contexts for every episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceSource {
    /// Drifting distance/battery contexts, regenerated per worker count.
    Drift {
        #[serde(flatten)]
        spec: DriftSpec,
    },
    /// A `t,id,ctx_*` file; workers beyond the grid's count are dropped.
    File { path: PathBuf },
}

/// A full experiment: one instance source, a grid of worker counts and
/// budgets, a set of policies and `replications` seeds per grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub instance: InstanceSource,
    pub policies: Vec<PolicyKind>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub granularity: Granularity,
    pub budgets: Vec<f64>,
    /// Worker counts; for file instances an empty list means all workers.
    #[serde(default)]
    pub worker_counts: Vec<usize>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub reward_model: RewardModel,
    #[serde(default)]
    pub trace: Option<TraceSource>,
    #[serde(default)]
    pub log_steps: bool,
}

fn default_epsilon() -> f64 {
    0.1
}

fn default_replications() -> usize {
    10
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), EvaluationError> {
        let bad = |m: String| Err(EvaluationError::Invalid(m));
        if self.policies.is_empty() {
            return bad("no policies given".into());
        }
        if self.budgets.is_empty() {
            return bad("budget grid is empty".into());
        }
        if let Some(b) = self.budgets.iter().find(|b| !(b.is_finite() && **b > 0.0)) {
            return bad(format!("budget {b} must be positive"));
        }
        if self.replications == 0 {
            return bad("replications must be at least 1".into());
        }
        if matches!(self.instance, InstanceSource::Synthetic { .. })
            && self.worker_counts.is_empty()
        {
            return bad("synthetic instances need a worker-count grid".into());
        }
        if self.worker_counts.contains(&0) {
            return bad("worker counts must be positive".into());
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad(format!("epsilon must lie in (0, 1), got {}", self.epsilon));
        }
        Ok(())
    }

    fn params(&self) -> PolicyParams {
        PolicyParams {
            epsilon: self.epsilon,
            granularity: self.granularity,
        }
    }
}

/// Short hex digest of the effective configuration.
pub fn config_digest(config: &ExperimentConfig) -> String {
    let json = serde_json::to_string(config).expect("config serializes");
    let hash = Sha256::digest(json.as_bytes());
    hash.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// One row per (grid point, policy).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub policy: PolicyKind,
    pub budget: f64,
    pub n: usize,
    pub dimension: usize,
    pub alpha: f64,
    pub replications: usize,
    pub mean_revenue: f64,
    pub std_revenue: f64,
    pub mean_expected_revenue: f64,
    pub mean_regret: f64,
    pub std_regret: f64,
    /// `None` when the bound is not finite.
    pub theorem1_bound: Option<f64>,
    /// Per-replication expected revenue, in replication order.
    #[serde(skip)]
    pub expected_revenues: Vec<f64>,
    /// Per-replication regret, in replication order.
    #[serde(skip)]
    pub regrets: Vec<f64>,
}

/// Step log of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub policy: PolicyKind,
    pub seed: u64,
    pub steps: Vec<StepRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    pub rows: Vec<SummaryRow>,
    /// Filled when `log_steps` is set, in row order then replication order.
    pub logs: Vec<EpisodeLog>,
}

struct GridPoint {
    instance: TaskInstance,
    trace: Option<usize>,
    baseline_value: f64,
    bound: Option<f64>,
    means: Vec<f64>,
}

struct Outcome {
    realized: f64,
    expected: f64,
    regret: f64,
    log: Option<EpisodeLog>,
}

/// Runs every (grid point, policy, replication) episode and aggregates.
///
/// Grid points are worker counts (outer) by budgets (inner). Episode seeds are
/// `mix_seed(seed, [grid index, replication])` and are shared by all policies
/// at a grid point. Work is spread over `jobs` threads; results do not depend
/// on scheduling.
pub fn run_sweep(config: &ExperimentConfig, jobs: usize) -> Result<SweepOutput, EvaluationError> {
    config.validate()?;
    let max_budget = config.budgets.iter().copied().fold(0.0, f64::max);
    let max_n = config.worker_counts.iter().copied().max().unwrap_or(0);
    let instance_seed = mix_seed(config.seed, &[INSTANCE_STREAM]);
    let pool = config.instance.build(max_n, max_budget, instance_seed)?;
    let counts: Vec<usize> = if config.worker_counts.is_empty() {
        vec![pool.len()]
    } else {
        config.worker_counts.clone()
    };
    if let Some(&n) = counts.iter().find(|&&n| n > pool.len()) {
        return Err(EvaluationError::Invalid(format!(
            "worker count {n} exceeds the {} workers available",
            pool.len()
        )));
    }
    let mu_map = config.instance.mu_map();

    let mut traces: Vec<ContextTrace> = Vec::new();
    let mut points = Vec::new();
    for &n in &counts {
        let base = if n == pool.len() {
            pool.clone()
        } else {
            pool.truncated(n)?
        };
        let trace = match &config.trace {
            None => None,
            Some(source) => {
                traces.push(load_trace(source, &base, max_budget, config.seed)?);
                Some(traces.len() - 1)
            }
        };
        for &b in &config.budgets {
            let instance = base.with_budget(b)?;
            let (baseline_value, bound) = match trace {
                None => {
                    let baseline = baseline_allocation(&instance)?;
                    let granularity = match config.granularity {
                        Granularity::Fixed(d) => Some(d),
                        _ => None,
                    };
                    let bound =
                        theorem1_bound(&instance_bound_inputs(&instance, granularity)?)?.bound;
                    (baseline.expected_value, bound)
                }
                Some(k) => {
                    let dy = Dynamics {
                        trace: &traces[k],
                        mu_map,
                    };
                    (dynamic_baseline(&instance, dy)?.expected_value, None)
                }
            };
            let means = instance.true_means();
            points.push(GridPoint {
                instance,
                trace,
                baseline_value,
                bound,
                means,
            });
        }
    }

    let work: Vec<(usize, usize, usize)> = (0..points.len())
        .flat_map(|g| {
            (0..config.policies.len())
                .flat_map(move |p| (0..config.replications).map(move |r| (g, p, r)))
        })
        .collect();
    let params = config.params();
    let run_one = |&(g, p, r): &(usize, usize, usize)| -> Result<Outcome, EvaluationError> {
        let point = &points[g];
        let kind = config.policies[p];
        let seed = mix_seed(config.seed, &[g as u64, r as u64]);
        let view = point.instance.view();
        let mut policy = build_policy(
            kind,
            &view,
            point.instance.budget(),
            Some(&point.means),
            &params,
        )?;
        let dynamics = point.trace.map(|k| Dynamics {
            trace: &traces[k],
            mu_map,
        });
        let result = run_episode(
            &point.instance,
            policy.as_mut(),
            config.reward_model,
            seed,
            dynamics,
        )?;
        let achieved = match dynamics {
            None => counts_value(&result.final_counts, &point.means),
            Some(_) => result.expected_revenue,
        };
        Ok(Outcome {
            realized: result.realized_revenue,
            expected: result.expected_revenue,
            regret: point.baseline_value - achieved,
            log: config.log_steps.then(|| EpisodeLog {
                policy: kind,
                seed,
                steps: result.steps,
            }),
        })
    };
    let threads = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| EvaluationError::Invalid(format!("thread pool: {e}")))?;
    let outcomes: Vec<Outcome> =
        threads.install(|| work.par_iter().map(run_one).collect::<Result<_, _>>())?;

    let mut rows = Vec::new();
    let mut logs = Vec::new();
    let mut it = outcomes.into_iter();
    for point in &points {
        for &kind in &config.policies {
            let batch: Vec<Outcome> = it.by_ref().take(config.replications).collect();
            let realized: Vec<f64> = batch.iter().map(|o| o.realized).collect();
            let expected: Vec<f64> = batch.iter().map(|o| o.expected).collect();
            let regrets: Vec<f64> = batch.iter().map(|o| o.regret).collect();
            let (mean_revenue, std_revenue) = mean_std(&realized);
            let (mean_regret, std_regret) = mean_std(&regrets);
            rows.push(SummaryRow {
                policy: kind,
                budget: point.instance.budget(),
                n: point.instance.len(),
                dimension: point.instance.dimension(),
                alpha: point.instance.holder_alpha(),
                replications: config.replications,
                mean_revenue,
                std_revenue,
                mean_expected_revenue: mean_std(&expected).0,
                mean_regret,
                std_regret,
                theorem1_bound: point.bound,
                expected_revenues: expected,
                regrets,
            });
            logs.extend(batch.into_iter().filter_map(|o| o.log));
        }
    }
    Ok(SweepOutput { rows, logs })
}

fn load_trace(
    source: &TraceSource,
    base: &TaskInstance,
    max_budget: f64,
    seed: u64,
) -> Result<ContextTrace, EvaluationError> {
    match source {
        TraceSource::Drift { spec } => {
            if base.dimension() != 2 {
                return Err(EvaluationError::Invalid(format!(
                    "drift traces are two-dimensional, instance has M = {}",
                    base.dimension()
                )));
            }
            let rounds = affordable_units(max_budget, base.c_min()) as usize + 1;
            let trace_seed = mix_seed(seed, &[TRACE_STREAM, base.len() as u64]);
            Ok(gen_drift_trace(base.len(), rounds, spec, trace_seed)?)
        }
        TraceSource::File { path } => {
            let file = File::open(path)
                .map_err(|e| EvaluationError::Invalid(format!("{}: {e}", path.display())))?;
            let mut table = TraceTable::read_csv(BufReader::new(file), Some(base.dimension()))?;
            table.entries.retain(|e| e.1 < base.len());
            Ok(table.into_trace(base)?)
        }
    }
}

fn header_comment(digest: &str) -> String {
    format!("# caws {VERSION} config={digest}\n")
}

fn fmt_bound(b: Option<f64>) -> String {
    b.map_or_else(|| "inf".to_string(), |v| v.to_string())
}

/// Summary CSV with a leading version/config comment.
pub fn write_summary<W: Write>(
    mut out: W,
    rows: &[SummaryRow],
    digest: &str,
) -> std::io::Result<()> {
    out.write_all(header_comment(digest).as_bytes())?;
    writeln!(
        out,
        "policy,B,N,M,alpha,replications,mean_revenue,std_revenue,mean_expected_revenue,mean_regret,std_regret,theorem1_bound"
    )?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.policy,
            r.budget,
            r.n,
            r.dimension,
            r.alpha,
            r.replications,
            r.mean_revenue,
            r.std_revenue,
            r.mean_expected_revenue,
            r.mean_regret,
            r.std_regret,
            fmt_bound(r.theorem1_bound)
        )?;
    }
    Ok(())
}

/// Per-step CSV; `cube` is empty for policies without a partition.
pub fn write_step_log<W: Write>(
    mut out: W,
    logs: &[EpisodeLog],
    digest: &str,
) -> std::io::Result<()> {
    out.write_all(header_comment(digest).as_bytes())?;
    writeln!(out, "policy,seed,t,worker_id,cube,cost,reward")?;
    for log in logs {
        for s in &log.steps {
            write!(out, "{},{},{},{},", log.policy, log.seed, s.t, s.worker)?;
            if let Some(c) = s.cube {
                write!(out, "{c}")?;
            }
            writeln!(out, ",{},{}", s.cost, s.reward)?;
        }
    }
    Ok(())
}

/// Writes `bytes` next to `path` and renames it into place, so readers never
/// see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let name = path.file_name().ok_or_else(|| {
        std::io::Error::new(
            std::io::ErrorKind::InvalidInput,
            "output path has no file name",
        )
    })?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".{}.tmp", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let result = (|| {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            instance: InstanceSource::Synthetic {
                dimension: 2,
                cost_range: (1.0, 1.5),
                capacity_range: (2, 4),
                mu_map: MuMap::CoordinateMean,
            },
            policies: PolicyKind::ALL.to_vec(),
            epsilon: 0.1,
            granularity: Granularity::Auto,
            budgets: vec![20.0, 40.0],
            worker_counts: vec![30],
            replications: 3,
            seed: 5,
            reward_model: RewardModel::Bernoulli,
            trace: None,
            log_steps: true,
        }
    }

    #[test]
    fn row_count_and_determinism() {
        let config = small_config();
        let a = run_sweep(&config, 1).unwrap();
        assert_eq!(a.rows.len(), 2 * 5);
        assert_eq!(a.logs.len(), 2 * 5 * 3);
        let b = run_sweep(&config, 3).unwrap();
        assert_eq!(a, b);
        let digest = config_digest(&config);
        let mut x = Vec::new();
        let mut y = Vec::new();
        write_summary(&mut x, &a.rows, &digest).unwrap();
        write_summary(&mut y, &b.rows, &digest).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn single_replication_row_equals_episode() {
        let config = ExperimentConfig {
            policies: vec![PolicyKind::Caws],
            budgets: vec![25.0],
            replications: 1,
            ..small_config()
        };
        let out = run_sweep(&config, 1).unwrap();
        assert_eq!(out.rows.len(), 1);
        let row = &out.rows[0];
        let steps = &out.logs[0].steps;
        assert_eq!(
            row.mean_revenue,
            steps.iter().map(|s| s.reward).sum::<f64>()
        );
        assert_eq!(row.std_revenue, 0.0);
    }

    #[test]
    fn config_json_round_trip() {
        let config = ExperimentConfig {
            granularity: Granularity::Fixed(4),
            trace: Some(TraceSource::Drift {
                spec: DriftSpec::default(),
            }),
            ..small_config()
        };
        let json = serde_json::to_string_pretty(&config).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, config);
        let minimal: ExperimentConfig = serde_json::from_str(
            r#"{"instance": {"kind": "synthetic"}, "policies": ["caws"], "budgets": [10], "worker_counts": [5]}"#,
        )
        .unwrap();
        assert_eq!(minimal.replications, 10);
        assert_eq!(minimal.epsilon, 0.1);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = small_config();
        c.budgets.clear();
        assert!(run_sweep(&c, 1).is_err());
        let mut c = small_config();
        c.replications = 0;
        assert!(run_sweep(&c, 1).is_err());
        let mut c = small_config();
        c.worker_counts = vec![];
        assert!(run_sweep(&c, 1).is_err());
    }

    #[test]
    fn atomic_write_leaves_only_the_target() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("summary.csv");
        write_atomic(&path, b"a,b\n").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"a,b\n");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn drift_sweep_runs() {
        let config = ExperimentConfig {
            instance: InstanceSource::Synthetic {
                dimension: 2,
                cost_range: (1.0, 1.5),
                capacity_range: (2, 4),
                mu_map: MuMap::gaussian(),
            },
            policies: vec![PolicyKind::Caws, PolicyKind::Oracle],
            trace: Some(TraceSource::Drift {
                spec: DriftSpec::default(),
            }),
            ..small_config()
        };
        let out = run_sweep(&config, 1).unwrap();
        assert!(out.rows.iter().all(|r| r.theorem1_bound.is_none()));
        assert!(out.rows.iter().all(|r| r.mean_expected_revenue > 0.0));
    }
}
