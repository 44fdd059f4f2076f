//! Closed-form regret bound of the context-aware policy and the cube-level
//! separation constant it depends on.

use std::f64::consts::PI;

use serde::Serialize;

use crate::evaluation::{static_baseline, EvaluationError};
use crate::model::TaskInstance;
use crate::partition::{choose_granularity, cube_index, holder_delta, PartitionGrid};

/// Everything the bound depends on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundInputs {
    pub budget: f64,
    pub dimension: usize,
    pub alpha: f64,
    pub l: f64,
    pub c_min: f64,
    pub c_max: f64,
    pub tau_max: u32,
    /// `None` when the separation is zero or undefined.
    pub delta_min: Option<f64>,
}

/// Intermediate quantities and the bound itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundReport {
    pub d: u32,
    /// Largest within-cube mean gap, `L (sqrt(M)/d)^alpha`.
    pub holder_gap: f64,
    pub delta_min: Option<f64>,
    pub xi: Option<f64>,
    pub h: Option<f64>,
    /// `None` means not finite.
    pub bound: Option<f64>,
}

impl BoundInputs {
    fn validate(&self) -> Result<(), EvaluationError> {
        let ok = self.budget > 0.0
            && self.budget.is_finite()
            && self.dimension > 0
            && self.alpha > 0.0
            && self.l > 0.0
            && self.c_min > 0.0
            && self.c_min <= self.c_max
            && self.c_max.is_finite()
            && self.delta_min.is_none_or(|d| d > 0.0 && d.is_finite());
        if ok {
            Ok(())
        } else {
            Err(EvaluationError::Invalid(format!(
                "invalid bound inputs {self:?}"
            )))
        }
    }
}

/// Evaluates
/// `(tau_max + 2^M B^(M/(alpha+M)) h + 1) c_max/c_min + 4 L M^(alpha/2) B^(M/(alpha+M)) / c_min + 1`
/// with `h = xi ln(B/c_min) + pi^2/3 + 1` and
/// `xi = 8 / (c_min^2 delta_min^2) + (c_max/c_min)^2`.
pub fn theorem1_bound(inputs: &BoundInputs) -> Result<BoundReport, EvaluationError> {
    inputs.validate()?;
    let BoundInputs {
        budget: b,
        dimension,
        alpha,
        l,
        c_min,
        c_max,
        tau_max,
        delta_min,
    } = *inputs;
    let m = dimension as f64;
    let d = choose_granularity(b, alpha, dimension);
    let holder_gap = holder_delta(l, alpha, dimension, d);
    let ratio = c_max / c_min;
    let xi = delta_min.map(|dm| 8.0 / (c_min * c_min * dm * dm) + ratio * ratio);
    let h = xi.map(|xi| xi * (b / c_min).ln() + PI * PI / 3.0 + 1.0);
    let growth = b.powf(m / (alpha + m));
    let bound = h
        .map(|h| {
            (tau_max as f64 + 2f64.powf(m) * growth * h + 1.0) * ratio
                + 4.0 * l * m.powf(alpha / 2.0) * growth / c_min
                + 1.0
        })
        .filter(|v| v.is_finite());
    Ok(BoundReport {
        d,
        holder_gap,
        delta_min,
        xi,
        h,
        bound,
    })
}

/// Smallest density gap between an unselected part of one cube and a
/// selected part of another.
///
/// Each worker is valued at its cube's average mean; the floored fractional
/// optimum over those values splits every cube `Q` into selected workers
/// `N+_Q` and the rest `N-_Q`. The result is the minimum over cube pairs
/// `Q != Q'` of `|mu_Q / c_min(N-_Q) - mu_Q' / c_max(N+_Q')|`, or `None` when
/// no pair has both sets non-empty or the minimum is zero.
pub fn delta_min(
    instance: &TaskInstance,
    grid: &PartitionGrid,
) -> Result<Option<f64>, EvaluationError> {
    let workers = instance.workers();
    let cubes: Vec<usize> = workers
        .iter()
        .map(|w| cube_index(&w.context, grid))
        .collect::<Result<_, _>>()
        .map_err(|e| EvaluationError::Invalid(e.to_string()))?;
    let mut occupied = cubes.clone();
    occupied.sort_unstable();
    occupied.dedup();
    let slot = |q: usize| occupied.binary_search(&q).expect("occupied cube");
    let k = occupied.len();
    let mut sums = vec![0.0; k];
    let mut sizes = vec![0usize; k];
    for (w, &q) in workers.iter().zip(&cubes) {
        let s = slot(q);
        sums[s] += w.true_mean();
        sizes[s] += 1;
    }
    let cube_means: Vec<f64> = sums
        .iter()
        .zip(&sizes)
        .map(|(s, &n)| s / n as f64)
        .collect();
    let values: Vec<f64> = cubes.iter().map(|&q| cube_means[slot(q)]).collect();
    let alloc = static_baseline(
        &values,
        &instance.costs(),
        &instance.capacities(),
        instance.budget(),
    )?;

    let mut min_unselected = vec![f64::INFINITY; k];
    let mut max_selected = vec![f64::NEG_INFINITY; k];
    for ((w, &q), &x) in workers.iter().zip(&cubes).zip(&alloc.counts) {
        let s = slot(q);
        if x >= 1 {
            max_selected[s] = max_selected[s].max(w.cost);
        } else {
            min_unselected[s] = min_unselected[s].min(w.cost);
        }
    }
    // a_Q = mu_Q / c_min(N-_Q), b_Q' = mu_Q' / c_max(N+_Q'); nearest b to each
    // a from a different cube, via binary search over the sorted b's.
    let mut b: Vec<(f64, usize)> = (0..k)
        .filter(|&s| max_selected[s].is_finite())
        .map(|s| (cube_means[s] / max_selected[s], s))
        .collect();
    b.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    let mut best: Option<f64> = None;
    for s in (0..k).filter(|&s| min_unselected[s].is_finite()) {
        let a = cube_means[s] / min_unselected[s];
        let pos = b.partition_point(|&(v, _)| v < a);
        // At most one entry belongs to cube `s`, so two neighbours per side suffice.
        let lo = pos.saturating_sub(2);
        let hi = (pos + 2).min(b.len());
        for &(v, other) in &b[lo..hi] {
            if other != s {
                let gap = (a - v).abs();
                best = Some(best.map_or(gap, |g| g.min(gap)));
            }
        }
    }
    Ok(best.filter(|&g| g > 0.0))
}

/// Bound inputs for an instance at its own budget, with the learner's grid.
pub fn instance_bound_inputs(
    instance: &TaskInstance,
    granularity: Option<u32>,
) -> Result<BoundInputs, EvaluationError> {
    let d = granularity.unwrap_or_else(|| {
        choose_granularity(
            instance.budget(),
            instance.holder_alpha(),
            instance.dimension(),
        )
    });
    let grid = PartitionGrid::new(d, instance.dimension())
        .map_err(|e| EvaluationError::Invalid(e.to_string()))?;
    Ok(BoundInputs {
        budget: instance.budget(),
        dimension: instance.dimension(),
        alpha: instance.holder_alpha(),
        l: instance.holder_l(),
        c_min: instance.c_min(),
        c_max: instance.c_max(),
        tau_max: instance.tau_max(),
        delta_min: delta_min(instance, &grid)?,
    })
}
