//! Reward generation, synthetic instances, context-to-mean maps, drifting
//! context traces and trace file ingestion.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    parse_real, parse_worker_header, ModelError, TaskInstance, WorkerSpec, WorkerTable,
};

#[derive(Debug, Error)]
pub enum EnvironmentError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0}")]
    Invalid(String),
    #[error("trace csv line {line}: {msg}")]
    Trace { line: usize, msg: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// How a worker's reward is drawn around its mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RewardModel {
    /// `r ~ Bernoulli(mu)`.
    #[default]
    Bernoulli,
    /// `r ~ Uniform[mu - w, mu + w]` with `w = min(mu, 1 - mu)`.
    BoundedContinuous,
}

impl RewardModel {
    pub fn sample<R: Rng + ?Sized>(&self, mean: f64, rng: &mut R) -> f64 {
        let mean = mean.clamp(0.0, 1.0);
        match self {
            RewardModel::Bernoulli => {
                // One uniform per draw keeps streams aligned across means.
                let u: f64 = rng.gen();
                if u < mean {
                    1.0
                } else {
                    0.0
                }
            }
            RewardModel::BoundedContinuous => {
                let u: f64 = rng.gen();
                let half = mean.min(1.0 - mean);
                (mean + half * (2.0 * u - 1.0)).clamp(0.0, 1.0)
            }
        }
    }
}

pub fn sample_reward<R: Rng + ?Sized>(worker: &WorkerSpec, model: RewardModel, rng: &mut R) -> f64 {
    model.sample(worker.true_mean(), rng)
}

/// A Hölder pair `(L, alpha)` for a mean map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HolderCertificate {
    pub l: f64,
    pub alpha: f64,
}

/// Context-to-mean map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MuMap {
    /// Average of the context coordinates.
    CoordinateMean,
    /// Distance/battery model on `M = 2`: `exp(-x0^2 / (2 s^2)) sqrt(x1)`,
    /// i.e. the Gaussian density in distance times the square root of battery,
    /// divided by its supremum so the image is `[0, 1]`.
    GaussianDistanceBattery {
        #[serde(default = "one")]
        sigma: f64,
    },
    /// Piecewise-constant means over a uniform grid (`d` cells per axis,
    /// axis 0 fastest).
    CustomTable {
        d: u32,
        dimension: usize,
        means: Vec<f64>,
    },
}

fn one() -> f64 {
    1.0
}

impl MuMap {
    pub fn gaussian() -> Self {
        MuMap::GaussianDistanceBattery { sigma: 1.0 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MuMap::CoordinateMean => "coordinate_mean",
            MuMap::GaussianDistanceBattery { .. } => "gaussian_distance_battery",
            MuMap::CustomTable { .. } => "custom_table",
        }
    }

    pub fn parse(name: &str) -> Result<Self, EnvironmentError> {
        match name.replace('-', "_").as_str() {
            "coordinate_mean" => Ok(MuMap::CoordinateMean),
            "gaussian_distance_battery" | "gaussian" => Ok(MuMap::gaussian()),
            other => Err(EnvironmentError::Invalid(format!(
                "unknown mu-map {other:?}"
            ))),
        }
    }

    pub fn check_dimension(&self, dimension: usize) -> Result<(), EnvironmentError> {
        match self {
            MuMap::GaussianDistanceBattery { .. } if dimension != 2 => {
                Err(EnvironmentError::Invalid(format!(
                    "gaussian distance/battery map needs M = 2, got {dimension}"
                )))
            }
            MuMap::CustomTable {
                dimension: m,
                d,
                means,
            } => {
                if *m != dimension {
                    return Err(EnvironmentError::Invalid(format!(
                        "table map has M = {m}, instance has {dimension}"
                    )));
                }
                let expected = (*d as usize).pow(*m as u32);
                if means.len() != expected || means.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(EnvironmentError::Invalid(format!(
                        "table map needs {expected} means in [0, 1]"
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Evaluates the map. Panics on a dimension mismatch; use
    /// [`eval_mu_map`] for a checked call.
    pub fn eval(&self, context: &[f64]) -> f64 {
        match self {
            MuMap::CoordinateMean => context.iter().sum::<f64>() / context.len() as f64,
            MuMap::GaussianDistanceBattery { sigma } => {
                assert_eq!(
                    context.len(),
                    2,
                    "gaussian distance/battery map needs M = 2"
                );
                let x0 = context[0];
                (-(x0 * x0) / (2.0 * sigma * sigma)).exp() * context[1].max(0.0).sqrt()
            }
            MuMap::CustomTable { d, means, .. } => {
                let d = *d as usize;
                let mut index = 0;
                let mut stride = 1;
                for &x in context {
                    index += ((x * d as f64).floor() as usize).min(d - 1) * stride;
                    stride *= d;
                }
                means[index]
            }
        }
    }

    /// Hölder parameters handed to the learner with instances built from this
    /// map. The distance/battery map uses the exponent 2 it is usually tuned
    /// with; [`MuMap::certificate`] gives a pair that provably holds.
    pub fn declared_holder(&self, dimension: usize) -> HolderCertificate {
        match self {
            MuMap::CoordinateMean => self
                .certificate(dimension)
                .expect("coordinate mean is Lipschitz"),
            MuMap::GaussianDistanceBattery { .. } => HolderCertificate {
                l: self.certificate(dimension).map_or(1.0, |c| c.l),
                alpha: 2.0,
            },
            MuMap::CustomTable { .. } => HolderCertificate { l: 1.0, alpha: 1.0 },
        }
    }

    /// A Hölder pair valid for every pair of contexts, when one exists.
    ///
    /// Coordinate mean: `|mean(s) - mean(s')| <= M^(-1/2) |s - s'|`.
    /// Distance/battery: the Gaussian factor is Lipschitz with constant
    /// `e^(-1/2) / sigma` and `sqrt` is 1/2-Hölder with constant 1, so with
    /// `|s - s'| <= sqrt(2)` the pair `(e^(-1/2) 2^(1/4) / sigma + 1, 1/2)` holds.
    /// No finite constant exists at exponent 2.
    pub fn certificate(&self, dimension: usize) -> Option<HolderCertificate> {
        match self {
            MuMap::CoordinateMean => Some(HolderCertificate {
                l: 1.0 / (dimension as f64).sqrt(),
                alpha: 1.0,
            }),
            MuMap::GaussianDistanceBattery { sigma } => Some(HolderCertificate {
                l: (-0.5f64).exp() * 2f64.powf(0.25) / sigma.min(1.0) + 1.0,
                alpha: 0.5,
            }),
            MuMap::CustomTable { .. } => None,
        }
    }
}

/// Un-normalized distance/battery density with `sigma`.
pub fn gaussian_raw(context: &[f64], sigma: f64) -> f64 {
    (1.0 / (sigma * (2.0 * PI).sqrt()))
        * (-(context[0] * context[0]) / (2.0 * sigma * sigma)).exp()
        * context[1].sqrt()
}

pub fn eval_mu_map(map: &MuMap, context: &[f64]) -> Result<f64, EnvironmentError> {
    map.check_dimension(context.len())?;
    if let Some(v) = context.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(EnvironmentError::Invalid(format!(
            "context coordinate {v} outside [0, 1]"
        )));
    }
    Ok(map.eval(context))
}

/// Parameters for [`gen_synthetic`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub dimension: usize,
    pub cost_range: (f64, f64),
    pub capacity_range: (u32, u32),
    pub mu_map: MuMap,
    /// Budget attached to the generated instance.
    #[serde(default = "one")]
    pub budget: f64,
}

impl SyntheticSpec {
    /// Costs in `[1, 1.5]`, capacities in `{20..40}`, coordinate-mean map.
    pub fn standard(n: usize, dimension: usize, budget: f64) -> Self {
        SyntheticSpec {
            n,
            dimension,
            cost_range: (1.0, 1.5),
            capacity_range: (20, 40),
            mu_map: MuMap::CoordinateMean,
            budget,
        }
    }
}

/// Draws `n` workers with uniform contexts, uniform costs and uniform integer
/// capacities; means come from the map. Worker `i` depends only on the seed
/// and `i`, so smaller instances are prefixes of larger ones.
pub fn gen_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<TaskInstance, EnvironmentError> {
    let (c_lo, c_hi) = spec.cost_range;
    let (t_lo, t_hi) = spec.capacity_range;
    if spec.n == 0 || spec.dimension == 0 {
        return Err(EnvironmentError::Invalid(
            "need at least one worker and one dimension".into(),
        ));
    }
    if !(c_lo > 0.0 && c_lo <= c_hi && c_hi.is_finite()) {
        return Err(EnvironmentError::Invalid(format!(
            "bad cost range [{c_lo}, {c_hi}]"
        )));
    }
    if t_lo > t_hi {
        return Err(EnvironmentError::Invalid(format!(
            "bad capacity range [{t_lo}, {t_hi}]"
        )));
    }
    spec.mu_map.check_dimension(spec.dimension)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut workers = Vec::with_capacity(spec.n);
    for id in 0..spec.n {
        let context: Vec<f64> = (0..spec.dimension).map(|_| rng.gen::<f64>()).collect();
        let u: f64 = rng.gen();
        let cost = c_lo + (c_hi - c_lo) * u;
        let capacity = rng.gen_range(t_lo..=t_hi);
        let mu = spec.mu_map.eval(&context).clamp(0.0, 1.0);
        workers.push(WorkerSpec::new(id, context, cost, capacity, mu));
    }
    let holder = spec.mu_map.declared_holder(spec.dimension);
    Ok(TaskInstance::new(
        workers,
        spec.budget,
        spec.dimension,
        holder.l,
        holder.alpha,
    )?)
}

/// Per-round worker contexts. Round `t` (1-based) is stored densely; rounds
/// past the end repeat the last one.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextTrace {
    n: usize,
    dimension: usize,
    rounds: usize,
    data: Vec<f64>,
}

impl ContextTrace {
    pub fn new(
        n: usize,
        dimension: usize,
        rounds: usize,
        data: Vec<f64>,
    ) -> Result<Self, EnvironmentError> {
        if rounds == 0 || n == 0 || dimension == 0 {
            return Err(EnvironmentError::Invalid(
                "trace needs at least one round, worker and axis".into(),
            ));
        }
        if data.len() != n * dimension * rounds {
            return Err(EnvironmentError::Invalid(
                "trace data has the wrong length".into(),
            ));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(EnvironmentError::Invalid(
                "trace context outside [0, 1]".into(),
            ));
        }
        Ok(ContextTrace {
            n,
            dimension,
            rounds,
            data,
        })
    }

    /// A trace that repeats the instance's static contexts.
    pub fn constant(instance: &TaskInstance) -> Self {
        let data = instance
            .workers()
            .iter()
            .flat_map(|w| w.context.iter().copied())
            .collect();
        ContextTrace {
            n: instance.len(),
            dimension: instance.dimension(),
            rounds: 1,
            data,
        }
    }

    pub fn n_workers(&self) -> usize {
        self.n
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    fn offset(&self, t: u64) -> usize {
        let r = (t.max(1) as usize).min(self.rounds) - 1;
        r * self.n * self.dimension
    }

    /// Context of worker `id` at round `t`.
    pub fn context(&self, t: u64, id: usize) -> &[f64] {
        let start = self.offset(t) + id * self.dimension;
        &self.data[start..start + self.dimension]
    }

    /// All contexts at round `t`, worker-major.
    pub fn round(&self, t: u64) -> &[f64] {
        let start = self.offset(t);
        &self.data[start..start + self.n * self.dimension]
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut header = vec!["t".to_string(), "id".to_string()];
        header.extend((0..self.dimension).map(|j| format!("ctx_{j}")));
        writeln!(out, "{}", header.join(","))?;
        for t in 1..=self.rounds as u64 {
            for id in 0..self.n {
                write!(out, "{t},{id}")?;
                for c in self.context(t, id) {
                    write!(out, ",{c}")?;
                }
                writeln!(out)?;
            }
        }
        Ok(())
    }
}

/// Parameters for [`gen_drift_trace`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftSpec {
    /// Battery lost per round.
    pub decay_rate: f64,
    /// Largest per-round move of the distance coordinate.
    pub step_size: f64,
    /// Starting battery for every worker; `None` draws it uniformly.
    #[serde(default)]
    pub initial_battery: Option<f64>,
}

impl Default for DriftSpec {
    fn default() -> Self {
        DriftSpec {
            decay_rate: 0.05,
            step_size: 0.05,
            initial_battery: None,
        }
    }
}

/// Two-axis drifting contexts: axis 0 is distance to the task spot and does a
/// reflected random walk, axis 1 is battery, which drops by `decay_rate` each
/// round and resets to 1 when it would fall below 0.
pub fn gen_drift_trace(
    n: usize,
    rounds: usize,
    spec: &DriftSpec,
    seed: u64,
) -> Result<ContextTrace, EnvironmentError> {
    if rounds == 0 || n == 0 {
        return Err(EnvironmentError::Invalid(
            "drift trace needs rounds >= 1 and n >= 1".into(),
        ));
    }
    if !(spec.decay_rate > 0.0 && spec.decay_rate < 1.0) {
        return Err(EnvironmentError::Invalid(format!(
            "decay rate {} outside (0, 1)",
            spec.decay_rate
        )));
    }
    if !(spec.step_size >= 0.0 && spec.step_size.is_finite()) {
        return Err(EnvironmentError::Invalid(format!(
            "bad step size {}",
            spec.step_size
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut distance: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
    // Battery is `anchor - k * decay` so long runs do not accumulate error.
    let mut anchor: Vec<f64> = (0..n)
        .map(|_| {
            let u: f64 = rng.gen();
            spec.initial_battery.unwrap_or(u).clamp(0.0, 1.0)
        })
        .collect();
    let mut since = vec![0u32; n];
    let mut data = Vec::with_capacity(n * 2 * rounds);
    for t in 0..rounds {
        for i in 0..n {
            if t > 0 {
                let u: f64 = rng.gen();
                distance[i] = reflect(distance[i] + spec.step_size * (2.0 * u - 1.0));
                since[i] += 1;
                if anchor[i] - since[i] as f64 * spec.decay_rate < -1e-12 {
                    anchor[i] = 1.0;
                    since[i] = 0;
                }
            }
            let battery = (anchor[i] - since[i] as f64 * spec.decay_rate).clamp(0.0, 1.0);
            data.push(distance[i]);
            data.push(battery);
        }
    }
    ContextTrace::new(n, 2, rounds, data)
}

fn reflect(mut x: f64) -> f64 {
    // Steps are small, but fold repeatedly to stay correct for any size.
    loop {
        if x < 0.0 {
            x = -x;
        } else if x > 1.0 {
            x = 2.0 - x;
        } else {
            return x;
        }
    }
}

/// A parsed time-varying trace: sparse `(t, id) -> context` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceTable {
    pub dimension: usize,
    pub entries: Vec<(u64, usize, Vec<f64>)>,
}

impl TraceTable {
    pub fn read_csv<R: BufRead>(
        input: R,
        dimension: Option<usize>,
    ) -> Result<Self, EnvironmentError> {
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .flexible(true)
            .from_reader(input);
        let headers = reader
            .headers()
            .map_err(|e| EnvironmentError::Trace {
                line: 1,
                msg: e.to_string(),
            })?
            .clone();
        let header_line = headers.position().map(|p| p.line() as usize).unwrap_or(1);
        let names: Vec<&str> = headers.iter().map(str::trim).collect();
        let dim = parse_trace_header(&names).map_err(|msg| EnvironmentError::Trace {
            line: header_line,
            msg,
        })?;
        if let Some(expected) = dimension {
            if expected != dim {
                return Err(EnvironmentError::Trace {
                    line: header_line,
                    msg: format!("header has {dim} context columns, expected {expected}"),
                });
            }
        }
        let mut entries = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| EnvironmentError::Trace {
                line: e.position().map(|p| p.line() as usize).unwrap_or(0),
                msg: e.to_string(),
            })?;
            let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
            let bad = |msg: String| EnvironmentError::Trace { line, msg };
            if record.len() != 2 + dim {
                return Err(bad(format!(
                    "expected {} fields, found {}",
                    2 + dim,
                    record.len()
                )));
            }
            let t = record[0]
                .trim()
                .parse::<u64>()
                .map_err(|e| bad(format!("t: {e}")))?;
            if t == 0 {
                return Err(bad("rounds start at 1".into()));
            }
            let id = record[1]
                .trim()
                .parse::<usize>()
                .map_err(|e| bad(format!("id: {e}")))?;
            let mut ctx = Vec::with_capacity(dim);
            for j in 0..dim {
                let v = parse_real(&record[2 + j]).map_err(|e| bad(format!("ctx_{j}: {e}")))?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(bad(format!("context out of range: ctx_{j} = {v}")));
                }
                ctx.push(v);
            }
            entries.push((t, id, ctx));
        }
        Ok(TraceTable {
            dimension: dim,
            entries,
        })
    }

    /// Densifies the table. Workers missing at a round keep their previous
    /// context; before their first entry they use `base` (the static contexts).
    pub fn into_trace(self, base: &TaskInstance) -> Result<ContextTrace, EnvironmentError> {
        if self.dimension != base.dimension() {
            return Err(EnvironmentError::Invalid(format!(
                "trace has M = {}, instance has M = {}",
                self.dimension,
                base.dimension()
            )));
        }
        let n = base.len();
        let m = self.dimension;
        let rounds = self.entries.iter().map(|e| e.0).max().unwrap_or(1) as usize;
        let mut by_round: Vec<Vec<(usize, Vec<f64>)>> = vec![Vec::new(); rounds];
        for (t, id, ctx) in self.entries {
            if id >= n {
                return Err(EnvironmentError::Invalid(format!(
                    "trace references unknown worker {id}"
                )));
            }
            by_round[t as usize - 1].push((id, ctx));
        }
        let mut current: Vec<f64> = base
            .workers()
            .iter()
            .flat_map(|w| w.context.iter().copied())
            .collect();
        let mut data = Vec::with_capacity(n * m * rounds);
        for updates in by_round {
            for (id, ctx) in updates {
                current[id * m..(id + 1) * m].copy_from_slice(&ctx);
            }
            data.extend_from_slice(&current);
        }
        ContextTrace::new(n, m, rounds, data)
    }
}

fn parse_trace_header(names: &[&str]) -> Result<usize, String> {
    if names.len() < 3 || names[0] != "t" || names[1] != "id" {
        return Err(format!("unknown header {:?}", names.join(",")));
    }
    for (j, name) in names[2..].iter().enumerate() {
        if *name != format!("ctx_{j}") {
            return Err(format!("unknown header column {name:?}"));
        }
    }
    Ok(names.len() - 2)
}

/// Either kind of file [`load_worker_trace`] accepts.
#[derive(Debug, Clone, PartialEq)]
pub enum LoadedTrace {
    Workers(WorkerTable),
    Contexts(TraceTable),
}

/// Loads a worker CSV or a time-varying trace CSV, told apart by header.
pub fn load_worker_trace(
    path: &Path,
    dimension: Option<usize>,
) -> Result<LoadedTrace, EnvironmentError> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    parse_worker_trace(&text, dimension)
}

pub fn parse_worker_trace(
    text: &str,
    dimension: Option<usize>,
) -> Result<LoadedTrace, EnvironmentError> {
    let first = text
        .lines()
        .find(|l| !l.starts_with('#'))
        .ok_or_else(|| EnvironmentError::Invalid("empty file".into()))?;
    let names: Vec<&str> = first.split(',').map(str::trim).collect();
    if parse_worker_header(&names).is_ok() {
        Ok(LoadedTrace::Workers(WorkerTable::read_csv(
            BufReader::new(text.as_bytes()),
            dimension,
        )?))
    } else if parse_trace_header(&names).is_ok() {
        Ok(LoadedTrace::Contexts(TraceTable::read_csv(
            BufReader::new(text.as_bytes()),
            dimension,
        )?))
    } else {
        Err(EnvironmentError::Trace {
            line: text.lines().position(|l| !l.starts_with('#')).unwrap_or(0) + 1,
            msg: format!("unknown header {first:?}"),
        })
    }
}
