//! Offline bounded-knapsack machinery: density ordering, the fractional
//! relaxation's closed form, downward rounding, the density-ordered greedy
//! and an exhaustive oracle for small instances.

use std::cmp::Ordering;

use thiserror::Error;

use crate::model::Allocation;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KnapsackError {
    #[error("length mismatch: {0} values, {1} costs, {2} capacities")]
    LengthMismatch(usize, usize, usize),
    #[error("cost of worker {0} is not positive")]
    NonPositiveCost(usize),
    #[error("value of worker {0} is negative or not finite")]
    BadValue(usize),
    #[error("budget must be non-negative, got {0}")]
    NegativeBudget(f64),
    #[error("instance too large for enumeration ({0} candidate allocations)")]
    TooLarge(f64),
}

/// Largest search space [`brute_force_bkp`] will enumerate.
pub const BRUTE_FORCE_LIMIT: f64 = 1e7;

/// Orders `a` before `b` when `a` is denser. Densities are compared by
/// cross-multiplication (`v_a * c_b` vs `v_b * c_a`); ties fall back to
/// ascending cost, then ascending id.
#[inline]
pub fn density_cmp(v_a: f64, c_a: f64, id_a: usize, v_b: f64, c_b: f64, id_b: usize) -> Ordering {
    let lhs = v_a * c_b;
    let rhs = v_b * c_a;
    rhs.partial_cmp(&lhs)
        .unwrap_or(Ordering::Equal)
        .then_with(|| c_a.partial_cmp(&c_b).unwrap_or(Ordering::Equal))
        .then_with(|| id_a.cmp(&id_b))
}

/// Worker ids sorted by decreasing `value / cost`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DensityOrder {
    pub permutation: Vec<usize>,
}

pub fn density_order(values: &[f64], costs: &[f64]) -> Result<DensityOrder, KnapsackError> {
    if values.len() != costs.len() {
        return Err(KnapsackError::LengthMismatch(
            values.len(),
            costs.len(),
            costs.len(),
        ));
    }
    check_inputs(values, costs)?;
    let mut permutation: Vec<usize> = (0..values.len()).collect();
    permutation.sort_by(|&a, &b| density_cmp(values[a], costs[a], a, values[b], costs[b], b));
    Ok(DensityOrder { permutation })
}

fn check_inputs(values: &[f64], costs: &[f64]) -> Result<(), KnapsackError> {
    if let Some(i) = costs.iter().position(|&c| !(c > 0.0 && c.is_finite())) {
        return Err(KnapsackError::NonPositiveCost(i));
    }
    if let Some(i) = values.iter().position(|&v| !(v >= 0.0 && v.is_finite())) {
        return Err(KnapsackError::BadValue(i));
    }
    Ok(())
}

fn check_all(
    values: &[f64],
    costs: &[f64],
    capacities: &[u32],
    budget: f64,
) -> Result<(), KnapsackError> {
    if values.len() != costs.len() || values.len() != capacities.len() {
        return Err(KnapsackError::LengthMismatch(
            values.len(),
            costs.len(),
            capacities.len(),
        ));
    }
    if !(budget >= 0.0) {
        return Err(KnapsackError::NegativeBudget(budget));
    }
    check_inputs(values, costs)
}

/// Largest `k` with `k * cost <= residual`, computed so the product check
/// agrees with the floating subtraction that follows.
#[inline]
pub fn affordable_units(residual: f64, cost: f64) -> u64 {
    if residual < cost {
        return 0;
    }
    let mut k = (residual / cost).floor() as u64;
    while k > 0 && k as f64 * cost > residual {
        k -= 1;
    }
    while (k + 1) as f64 * cost <= residual {
        k += 1;
    }
    k
}

/// Optimum of the fractional relaxation.
#[derive(Debug, Clone, PartialEq)]
pub struct FractionalAllocation {
    pub counts: Vec<f64>,
    /// The worker that only partly fits, if the budget binds.
    pub split_worker: Option<usize>,
    pub value: f64,
    pub cost: f64,
}

impl FractionalAllocation {
    /// Per-unit value of the split worker, or 0 when there is none.
    pub fn split_value(&self, values: &[f64]) -> f64 {
        self.split_worker.map_or(0.0, |k| values[k])
    }
}

/// Closed-form optimum of the fractional bounded knapsack: fill workers to
/// capacity in density order, split the first one that overflows the budget.
pub fn solve_fbkp(
    values: &[f64],
    costs: &[f64],
    capacities: &[u32],
    budget: f64,
) -> Result<FractionalAllocation, KnapsackError> {
    check_all(values, costs, capacities, budget)?;
    let order = density_order(values, costs)?;
    let mut counts = vec![0.0; values.len()];
    let mut residual = budget;
    let mut split_worker = None;
    for &i in &order.permutation {
        let full = costs[i] * capacities[i] as f64;
        if full == 0.0 {
            continue;
        }
        if full <= residual {
            counts[i] = capacities[i] as f64;
            residual -= full;
        } else {
            // An exactly exhausted budget leaves nothing to split.
            if residual > 0.0 {
                counts[i] = residual / costs[i];
                split_worker = Some(i);
            }
            break;
        }
    }
    let value = counts.iter().zip(values).map(|(x, v)| x * v).sum();
    let cost = counts.iter().zip(costs).map(|(x, c)| x * c).sum();
    Ok(FractionalAllocation {
        counts,
        split_worker,
        value,
        cost,
    })
}

/// Floors every fractional count.
pub fn round_down(frac: &FractionalAllocation, costs: &[f64], values: &[f64]) -> Allocation {
    let counts = frac.counts.iter().map(|x| x.floor() as u64).collect();
    Allocation::from_counts(counts, costs, values)
}

/// Density-ordered greedy: walk workers by decreasing density, give each as
/// many units as both its capacity and the leftover budget allow.
pub fn density_greedy(
    values: &[f64],
    costs: &[f64],
    capacities: &[u32],
    budget: f64,
) -> Result<Allocation, KnapsackError> {
    check_all(values, costs, capacities, budget)?;
    let order = density_order(values, costs)?;
    let mut counts = vec![0u64; values.len()];
    let mut residual = budget;
    for &i in &order.permutation {
        if costs[i] <= residual {
            let x = (capacities[i] as u64).min(affordable_units(residual, costs[i]));
            counts[i] = x;
            residual -= costs[i] * x as f64;
        }
    }
    Ok(Allocation::from_counts(counts, costs, values))
}

/// Exact optimum by enumeration; among equal optima the lexicographically
/// smallest count vector wins.
pub fn brute_force_bkp(
    values: &[f64],
    costs: &[f64],
    capacities: &[u32],
    budget: f64,
) -> Result<Allocation, KnapsackError> {
    check_all(values, costs, capacities, budget)?;
    let space: f64 = capacities.iter().map(|&c| c as f64 + 1.0).product();
    if space > BRUTE_FORCE_LIMIT {
        return Err(KnapsackError::TooLarge(space));
    }
    let n = values.len();
    let mut current = vec![0u64; n];
    let mut best = current.clone();
    let mut best_value = 0.0f64;
    // Odometer over all count vectors in lexicographic order.
    loop {
        let cost: f64 = current.iter().zip(costs).map(|(&x, c)| x as f64 * c).sum();
        if cost <= budget {
            let value: f64 = current.iter().zip(values).map(|(&x, v)| x as f64 * v).sum();
            if value > best_value + 1e-12 * best_value.max(1.0) {
                best_value = value;
                best.copy_from_slice(&current);
            }
        }
        let mut pos = n;
        loop {
            if pos == 0 {
                return Ok(Allocation::from_counts(best, costs, values));
            }
            pos -= 1;
            if current[pos] < capacities[pos] as u64 {
                current[pos] += 1;
                for slot in current.iter_mut().skip(pos + 1) {
                    *slot = 0;
                }
                break;
            }
        }
    }
}
