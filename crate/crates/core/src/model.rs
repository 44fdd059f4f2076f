//! Domain types shared by every module: workers, task instances, allocations
//! and episode logs.
//!
//! A worker's hidden mean reward lives on [`WorkerSpec`] but is only reachable
//! through [`WorkerSpec::true_mean`]. Learners receive a [`PolicyView`], which
//! carries no means at all.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("instance has no workers")]
    Empty,
    #[error("budget must be positive and finite, got {0}")]
    Budget(f64),
    #[error("dimension must be positive")]
    Dimension,
    #[error("holder parameters must be positive (L = {l}, alpha = {alpha})")]
    Holder { l: f64, alpha: f64 },
    #[error("worker {id}: context out of range (coordinate {axis} = {value})")]
    ContextOutOfRange { id: usize, axis: usize, value: f64 },
    #[error("worker {id}: context has {got} coordinates, expected {expected}")]
    DimensionMismatch {
        id: usize,
        got: usize,
        expected: usize,
    },
    #[error("worker {id}: cost must be positive and finite, got {cost}")]
    Cost { id: usize, cost: f64 },
    #[error("worker {id}: true mean {mean} outside [0, 1]")]
    Mean { id: usize, mean: f64 },
    #[error("duplicate id {0}")]
    DuplicateId(usize),
    #[error("ids are not contiguous from 0 (missing {0})")]
    NonContiguousIds(usize),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("worker csv line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error("worker {0} has no mean and no mu-map was supplied")]
    MissingMean(usize),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for ModelError {
    fn from(e: std::io::Error) -> Self {
        ModelError::Io(e.to_string())
    }
}

/// One worker: public attributes plus the hidden mean reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerSpec {
    pub id: usize,
    pub context: Vec<f64>,
    pub cost: f64,
    pub capacity: u32,
    true_mean: f64,
}

impl WorkerSpec {
    pub fn new(id: usize, context: Vec<f64>, cost: f64, capacity: u32, true_mean: f64) -> Self {
        WorkerSpec {
            id,
            context,
            cost,
            capacity,
            true_mean,
        }
    }

    /// The hidden mean reward. Only the environment, the oracle baseline and
    /// the evaluator should call this.
    pub fn true_mean(&self) -> f64 {
        self.true_mean
    }
}

/// What a learning policy may see of one worker.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkerView {
    pub id: usize,
    pub context: Vec<f64>,
    pub cost: f64,
    pub capacity: u32,
}

/// A task instance stripped of true means.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyView {
    pub workers: Vec<WorkerView>,
    pub dimension: usize,
    pub holder_l: f64,
    pub holder_alpha: f64,
}

impl PolicyView {
    pub fn len(&self) -> usize {
        self.workers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.workers.is_empty()
    }

    pub fn costs(&self) -> Vec<f64> {
        self.workers.iter().map(|w| w.cost).collect()
    }

    pub fn capacities(&self) -> Vec<u32> {
        self.workers.iter().map(|w| w.capacity).collect()
    }

    pub fn contexts(&self) -> Vec<Vec<f64>> {
        self.workers.iter().map(|w| w.context.clone()).collect()
    }
}

/// A validated worker-selection problem: workers, budget `B`, context
/// dimension `M` and the Hölder parameters `(L, alpha)` handed to the learner.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskInstance {
    workers: Vec<WorkerSpec>,
    budget: f64,
    dimension: usize,
    holder_l: f64,
    holder_alpha: f64,
    c_min: f64,
    c_max: f64,
    tau_max: u32,
}

impl TaskInstance {
    /// Builds and validates an instance. Workers may arrive in any order; they
    /// are stored sorted by id.
    pub fn new(
        mut workers: Vec<WorkerSpec>,
        budget: f64,
        dimension: usize,
        holder_l: f64,
        holder_alpha: f64,
    ) -> Result<Self, ModelError> {
        if workers.is_empty() {
            return Err(ModelError::Empty);
        }
        if !(budget.is_finite() && budget > 0.0) {
            return Err(ModelError::Budget(budget));
        }
        if dimension == 0 {
            return Err(ModelError::Dimension);
        }
        if !(holder_l > 0.0
            && holder_alpha > 0.0
            && holder_l.is_finite()
            && holder_alpha.is_finite())
        {
            return Err(ModelError::Holder {
                l: holder_l,
                alpha: holder_alpha,
            });
        }
        for w in &workers {
            if w.context.len() != dimension {
                return Err(ModelError::DimensionMismatch {
                    id: w.id,
                    got: w.context.len(),
                    expected: dimension,
                });
            }
            if let Some((axis, &value)) = w
                .context
                .iter()
                .enumerate()
                .find(|(_, v)| !(0.0..=1.0).contains(*v))
            {
                return Err(ModelError::ContextOutOfRange {
                    id: w.id,
                    axis,
                    value,
                });
            }
            if !(w.cost.is_finite() && w.cost > 0.0) {
                return Err(ModelError::Cost {
                    id: w.id,
                    cost: w.cost,
                });
            }
            if !(0.0..=1.0).contains(&w.true_mean) {
                return Err(ModelError::Mean {
                    id: w.id,
                    mean: w.true_mean,
                });
            }
        }
        workers.sort_by_key(|w| w.id);
        for pair in workers.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(ModelError::DuplicateId(pair[0].id));
            }
        }
        if let Some((expected, _)) = workers.iter().enumerate().find(|(i, w)| w.id != *i) {
            return Err(ModelError::NonContiguousIds(expected));
        }

        let c_min = workers.iter().map(|w| w.cost).fold(f64::INFINITY, f64::min);
        let c_max = workers.iter().map(|w| w.cost).fold(0.0, f64::max);
        let tau_max = workers.iter().map(|w| w.capacity).max().unwrap_or(0);
        Ok(TaskInstance {
            workers,
            budget,
            dimension,
            holder_l,
            holder_alpha,
            c_min,
            c_max,
            tau_max,
        })
    }

    /// Same workers under a different budget.
    pub fn with_budget(&self, budget: f64) -> Result<Self, ModelError> {
        if !(budget.is_finite() && budget > 0.0) {
            return Err(ModelError::Budget(budget));
        }
        Ok(TaskInstance {
            budget,
            ..self.clone()
        })
    }

    /// The first `n` workers (ids `0..n`) under the same budget.
    pub fn truncated(&self, n: usize) -> Result<Self, ModelError> {
        let workers = self.workers.iter().take(n).cloned().collect();
        TaskInstance::new(
            workers,
            self.budget,
            self.dimension,
            self.holder_l,
            self.holder_alpha,
        )
    }

    pub fn workers(&self) -> &[WorkerSpec] {
        &self.workers
    }

    pub fn len(&self) -> usize {
        self.workers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.workers.is_empty()
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn holder_l(&self) -> f64 {
        self.holder_l
    }

    pub fn holder_alpha(&self) -> f64 {
        self.holder_alpha
    }

    pub fn c_min(&self) -> f64 {
        self.c_min
    }

    pub fn c_max(&self) -> f64 {
        self.c_max
    }

    pub fn tau_max(&self) -> u32 {
        self.tau_max
    }

    pub fn costs(&self) -> Vec<f64> {
        self.workers.iter().map(|w| w.cost).collect()
    }

    pub fn capacities(&self) -> Vec<u32> {
        self.workers.iter().map(|w| w.capacity).collect()
    }

    pub fn true_means(&self) -> Vec<f64> {
        self.workers.iter().map(|w| w.true_mean).collect()
    }

    pub fn view(&self) -> PolicyView {
        PolicyView {
            workers: self
                .workers
                .iter()
                .map(|w| WorkerView {
                    id: w.id,
                    context: w.context.clone(),
                    cost: w.cost,
                    capacity: w.capacity,
                })
                .collect(),
            dimension: self.dimension,
            holder_l: self.holder_l,
            holder_alpha: self.holder_alpha,
        }
    }
}

/// Checks an instance's invariants; the constructor already enforces them, so
/// this re-runs validation on the parts.
pub fn validate_instance(instance: TaskInstance) -> Result<TaskInstance, ModelError> {
    let TaskInstance {
        workers,
        budget,
        dimension,
        holder_l,
        holder_alpha,
        ..
    } = instance;
    TaskInstance::new(workers, budget, dimension, holder_l, holder_alpha)
}

/// `sum_i means_i * counts_i`.
pub fn allocation_value(counts: &[f64], means: &[f64]) -> Result<f64, ModelError> {
    if counts.len() != means.len() {
        return Err(ModelError::LengthMismatch {
            left: counts.len(),
            right: means.len(),
        });
    }
    Ok(counts.iter().zip(means).map(|(x, m)| x * m).sum())
}

/// An integral allocation of selections to workers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub counts: Vec<u64>,
    pub total_cost: f64,
    pub expected_value: f64,
}

impl Allocation {
    pub fn from_counts(counts: Vec<u64>, costs: &[f64], values: &[f64]) -> Self {
        debug_assert_eq!(counts.len(), costs.len());
        debug_assert_eq!(counts.len(), values.len());
        let total_cost = counts.iter().zip(costs).map(|(&x, c)| x as f64 * c).sum();
        let expected_value = counts.iter().zip(values).map(|(&x, v)| x as f64 * v).sum();
        Allocation {
            counts,
            total_cost,
            expected_value,
        }
    }

    pub fn zeros(n: usize) -> Self {
        Allocation {
            counts: vec![0; n],
            total_cost: 0.0,
            expected_value: 0.0,
        }
    }

    pub fn counts_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&x| x as f64).collect()
    }

    pub fn is_feasible(&self, costs: &[f64], capacities: &[u32], budget: f64) -> bool {
        self.counts
            .iter()
            .zip(capacities)
            .all(|(&x, &cap)| x <= cap as u64)
            && self.total_cost <= budget * (1.0 + 1e-12) + 1e-12
            && (self.total_cost
                - self
                    .counts
                    .iter()
                    .zip(costs)
                    .map(|(&x, c)| x as f64 * c)
                    .sum::<f64>())
            .abs()
                <= 1e-9 * self.total_cost.abs().max(1.0)
    }
}

/// One iteration of an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: u64,
    pub worker: usize,
    /// Cell of the selecting policy's partition, when it has one.
    pub cube: Option<usize>,
    pub cost: f64,
    pub reward: f64,
    /// Mean reward of the selected worker at selection time.
    pub expected: f64,
}

/// Full log and summary of one simulated episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub steps: Vec<StepRecord>,
    pub realized_revenue: f64,
    pub expected_revenue: f64,
    pub final_counts: Vec<u64>,
    pub budget_spent: f64,
    pub iterations: u64,
}

impl RunResult {
    pub fn from_steps(steps: Vec<StepRecord>, n_workers: usize) -> Self {
        let mut final_counts = vec![0u64; n_workers];
        let mut realized_revenue = 0.0;
        let mut expected_revenue = 0.0;
        let mut budget_spent = 0.0;
        for s in &steps {
            final_counts[s.worker] += 1;
            realized_revenue += s.reward;
            expected_revenue += s.expected;
            budget_spent += s.cost;
        }
        RunResult {
            iterations: steps.len() as u64,
            steps,
            realized_revenue,
            expected_revenue,
            final_counts,
            budget_spent,
        }
    }

    /// Recomputes the summaries from the log and compares them exactly.
    pub fn is_consistent(&self) -> bool {
        let again = RunResult::from_steps(self.steps.clone(), self.final_counts.len());
        again == *self
    }
}

const WORKER_HEADER_FIXED: [&str; 4] = ["id", "cost", "capacity", "mu"];

/// A parsed worker CSV. `mu` may be missing per row; a mu-map fills it in.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkerTable {
    pub dimension: usize,
    pub rows: Vec<WorkerRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkerRow {
    pub id: usize,
    pub cost: f64,
    pub capacity: u32,
    pub mu: Option<f64>,
    pub context: Vec<f64>,
}

impl WorkerTable {
    pub fn from_instance(instance: &TaskInstance) -> Self {
        WorkerTable {
            dimension: instance.dimension(),
            rows: instance
                .workers()
                .iter()
                .map(|w| WorkerRow {
                    id: w.id,
                    cost: w.cost,
                    capacity: w.capacity,
                    mu: Some(w.true_mean()),
                    context: w.context.clone(),
                })
                .collect(),
        }
    }

    /// Builds an instance; rows without `mu` take `mean_of(context)`.
    pub fn into_instance(
        self,
        budget: f64,
        holder_l: f64,
        holder_alpha: f64,
        mean_of: Option<&dyn Fn(&[f64]) -> f64>,
    ) -> Result<TaskInstance, ModelError> {
        let mut workers = Vec::with_capacity(self.rows.len());
        for r in self.rows {
            let mu = match (r.mu, mean_of) {
                (Some(m), _) => m,
                (None, Some(f)) => f(&r.context),
                (None, None) => return Err(ModelError::MissingMean(r.id)),
            };
            workers.push(WorkerSpec::new(r.id, r.context, r.cost, r.capacity, mu));
        }
        TaskInstance::new(workers, budget, self.dimension, holder_l, holder_alpha)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut header: Vec<String> = WORKER_HEADER_FIXED.iter().map(|s| s.to_string()).collect();
        header.extend((0..self.dimension).map(|j| format!("ctx_{j}")));
        writeln!(out, "{}", header.join(","))?;
        for r in &self.rows {
            write!(out, "{},{},{},", r.id, r.cost, r.capacity)?;
            if let Some(mu) = r.mu {
                write!(out, "{mu}")?;
            }
            for c in &r.context {
                write!(out, ",{c}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    /// Parses the worker CSV. Lines starting with `#` are comments. When
    /// `dimension` is given, the header must carry exactly that many context
    /// columns.
    pub fn read_csv<R: BufRead>(input: R, dimension: Option<usize>) -> Result<Self, ModelError> {
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .flexible(true)
            .from_reader(input);
        let headers = reader
            .headers()
            .map_err(|e| ModelError::Csv {
                line: 1,
                msg: e.to_string(),
            })?
            .clone();
        let header_line = headers.position().map(|p| p.line() as usize).unwrap_or(1);
        let names: Vec<&str> = headers.iter().map(str::trim).collect();
        let dim = parse_worker_header(&names).map_err(|msg| ModelError::Csv {
            line: header_line,
            msg,
        })?;
        if let Some(expected) = dimension {
            if expected != dim {
                return Err(ModelError::Csv {
                    line: header_line,
                    msg: format!("header has {dim} context columns, expected {expected}"),
                });
            }
        }
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| ModelError::Csv {
                line: e.position().map(|p| p.line() as usize).unwrap_or(0),
                msg: e.to_string(),
            })?;
            let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
            let bad = |msg: String| ModelError::Csv { line, msg };
            if record.len() != 4 + dim {
                return Err(bad(format!(
                    "expected {} fields, found {}",
                    4 + dim,
                    record.len()
                )));
            }
            let id = record[0]
                .trim()
                .parse::<usize>()
                .map_err(|e| bad(format!("id: {e}")))?;
            let cost = parse_real(&record[1]).map_err(|e| bad(format!("cost: {e}")))?;
            let capacity = record[2]
                .trim()
                .parse::<u32>()
                .map_err(|e| bad(format!("capacity: {e}")))?;
            let mu = match record[3].trim() {
                "" => None,
                s => Some(parse_real(s).map_err(|e| bad(format!("mu: {e}")))?),
            };
            let mut context = Vec::with_capacity(dim);
            for j in 0..dim {
                let v = parse_real(&record[4 + j]).map_err(|e| bad(format!("ctx_{j}: {e}")))?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(bad(format!("context out of range: ctx_{j} = {v}")));
                }
                context.push(v);
            }
            rows.push(WorkerRow {
                id,
                cost,
                capacity,
                mu,
                context,
            });
        }
        Ok(WorkerTable {
            dimension: dim,
            rows,
        })
    }
}

pub(crate) fn parse_real(s: &str) -> Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|e| format!("{e} ({s:?})"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("non-finite value {s:?}"))
    }
}

/// Returns the context dimension declared by a worker header.
pub(crate) fn parse_worker_header(names: &[&str]) -> Result<usize, String> {
    if names.len() < 4 || names[..4] != WORKER_HEADER_FIXED {
        return Err(format!("unknown header {:?}", names.join(",")));
    }
    for (j, name) in names[4..].iter().enumerate() {
        if *name != format!("ctx_{j}") {
            return Err(format!("unknown header column {name:?}"));
        }
    }
    if names.len() == 4 {
        return Err("header has no context columns".into());
    }
    Ok(names.len() - 4)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn worker(id: usize, ctx: Vec<f64>) -> WorkerSpec {
        WorkerSpec::new(id, ctx, 1.0, 1, 0.5)
    }

    #[test]
    fn minimal_instance_is_accepted() {
        let inst = TaskInstance::new(vec![worker(0, vec![0.5, 0.5])], 10.0, 2, 1.0, 1.0).unwrap();
        assert_eq!(inst.c_min(), 1.0);
        assert_eq!(inst.c_max(), 1.0);
        assert_eq!(inst.tau_max(), 1);
        assert!(validate_instance(inst).is_ok());
    }

    #[test]
    fn out_of_range_context_is_rejected() {
        let err =
            TaskInstance::new(vec![worker(0, vec![1.2, 0.5])], 10.0, 2, 1.0, 1.0).unwrap_err();
        assert!(matches!(err, ModelError::ContextOutOfRange { axis: 0, .. }));
        assert!(err.to_string().contains("context out of range"));
    }

    #[test]
    fn duplicate_id_is_rejected() {
        let err = TaskInstance::new(
            vec![worker(0, vec![0.1, 0.1]), worker(0, vec![0.2, 0.2])],
            10.0,
            2,
            1.0,
            1.0,
        )
        .unwrap_err();
        assert_eq!(err, ModelError::DuplicateId(0));
        assert!(err.to_string().contains("duplicate id"));
    }

    #[test]
    fn other_invariants() {
        let dim = TaskInstance::new(vec![worker(0, vec![0.1])], 10.0, 2, 1.0, 1.0).unwrap_err();
        assert!(matches!(dim, ModelError::DimensionMismatch { .. }));
        let cost = TaskInstance::new(
            vec![WorkerSpec::new(0, vec![0.1], 0.0, 1, 0.5)],
            1.0,
            1,
            1.0,
            1.0,
        )
        .unwrap_err();
        assert!(matches!(cost, ModelError::Cost { .. }));
        let gap = TaskInstance::new(vec![worker(1, vec![0.1])], 1.0, 1, 1.0, 1.0).unwrap_err();
        assert_eq!(gap, ModelError::NonContiguousIds(0));
        assert_eq!(
            TaskInstance::new(vec![worker(0, vec![0.1])], 0.0, 1, 1.0, 1.0).unwrap_err(),
            ModelError::Budget(0.0)
        );
    }

    #[test]
    fn allocation_value_examples() {
        assert_eq!(
            allocation_value(&[0.0, 0.0, 0.0], &[0.3, 0.2, 0.9]).unwrap(),
            0.0
        );
        assert!((allocation_value(&[2.0, 2.0], &[0.8, 0.6]).unwrap() - 2.8).abs() < 1e-12);
        assert!((allocation_value(&[2.0, 2.5], &[0.8, 0.6]).unwrap() - 3.1).abs() < 1e-12);
        assert!(allocation_value(&[1.0], &[0.1, 0.2]).is_err());
    }

    #[test]
    fn view_hides_means() {
        let inst = TaskInstance::new(vec![worker(0, vec![0.5])], 3.0, 1, 1.0, 1.0).unwrap();
        let view = inst.view();
        assert_eq!(view.workers[0].cost, 1.0);
        assert_eq!(view.workers[0].context, vec![0.5]);
    }

    #[test]
    fn csv_without_mu_needs_a_map() {
        let text = "id,cost,capacity,mu,ctx_0,ctx_1\n0,1,2,,0.2,0.8\n1,1.5,3,0.9,0.1,0.1\n";
        let table = WorkerTable::read_csv(text.as_bytes(), Some(2)).unwrap();
        assert_eq!(table.rows.len(), 2);
        assert_eq!(table.rows[0].mu, None);
        assert!(matches!(
            table.clone().into_instance(5.0, 1.0, 1.0, None),
            Err(ModelError::MissingMean(0))
        ));
        let mean = |c: &[f64]| c.iter().sum::<f64>() / c.len() as f64;
        let inst = table.into_instance(5.0, 1.0, 1.0, Some(&mean)).unwrap();
        assert!((inst.workers()[0].true_mean() - 0.5).abs() < 1e-12);
        assert_eq!(inst.workers()[1].true_mean(), 0.9);
    }

    #[test]
    fn csv_row_with_wrong_width_names_the_line() {
        let text = "id,cost,capacity,mu,ctx_0,ctx_1\n0,1,2,0.5,0.2,0.8\n1,1,2,0.5,0.2,0.8,0.3\n";
        let err = WorkerTable::read_csv(text.as_bytes(), Some(2)).unwrap_err();
        match err {
            ModelError::Csv { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_rejects_unknown_header() {
        let text = "id,price,capacity,mu,ctx_0\n";
        assert!(WorkerTable::read_csv(text.as_bytes(), None).is_err());
    }

    #[test]
    fn run_result_recomputes() {
        let steps = vec![
            StepRecord {
                t: 1,
                worker: 1,
                cube: None,
                cost: 1.5,
                reward: 1.0,
                expected: 0.7,
            },
            StepRecord {
                t: 2,
                worker: 0,
                cube: None,
                cost: 1.0,
                reward: 0.0,
                expected: 0.2,
            },
        ];
        let r = RunResult::from_steps(steps, 3);
        assert_eq!(r.final_counts, vec![1, 1, 0]);
        assert_eq!(r.budget_spent, 2.5);
        assert_eq!(r.iterations, 2);
        assert!(r.is_consistent());
    }
}
