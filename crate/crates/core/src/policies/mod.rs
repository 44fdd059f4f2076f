//! Sequential selection policies behind one interface: the context-aware
//! policy and the reference policies it is compared against.

mod baselines;
mod caws;
mod subroutine;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::PolicyView;
use crate::rng::SimRng;

pub use baselines::{
    epsilon_first_policy, oracle_policy, random_policy, EpsilonFirst, Oracle, RandomPolicy,
};
pub use caws::{bkube_init, caws_init, Caws, Granularity};
pub use subroutine::{greedy_weights_grouped, greedy_weights_naive, CellLayout};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("no worker is both available and affordable")]
    NothingSelectable,
    #[error("observe called for worker {got}, but the pending selection is {expected:?}")]
    NotPending { got: usize, expected: Option<usize> },
    #[error("reward {0} outside [0, 1]")]
    Reward(f64),
    #[error("epsilon must lie in (0, 1), got {0}")]
    Epsilon(f64),
    #[error("{0}")]
    Setup(String),
}

/// Policy names accepted on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Caws,
    Oracle,
    EpsilonFirst,
    Bkube,
    Random,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::Caws,
        PolicyKind::Oracle,
        PolicyKind::EpsilonFirst,
        PolicyKind::Bkube,
        PolicyKind::Random,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PolicyKind::Caws => "caws",
            PolicyKind::Oracle => "oracle",
            PolicyKind::EpsilonFirst => "epsilon_first",
            PolicyKind::Bkube => "bkube",
            PolicyKind::Random => "random",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| PolicyError::Setup(format!("unknown policy {s:?} (expected caws | oracle | epsilon_first | bkube | random)")))
    }
}

/// A sequential decision maker over a fixed worker pool.
///
/// The episode loop calls [`Policy::select`] only while
/// [`Resources::can_select`] holds, then feeds the reward back through
/// [`Policy::observe`].
pub trait Policy {
    fn resources(&self) -> &Resources;

    fn select(&mut self, t: u64, rng: &mut SimRng) -> Result<usize, PolicyError>;

    fn observe(&mut self, worker: usize, reward: f64) -> Result<(), PolicyError>;

    /// New per-round contexts, worker-major. Ignored by policies that do not
    /// use contexts.
    fn refresh_contexts(&mut self, _contexts: &[f64]) {}

    /// New per-round means. Only the oracle uses them.
    fn refresh_means(&mut self, _means: &[f64]) {}

    /// Partition cell of a worker, for policies that have one.
    fn cell_of(&self, _worker: usize) -> Option<usize> {
        None
    }
}

/// Residual budget and capacities, shared bookkeeping for every policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Resources {
    costs: Vec<f64>,
    initial_capacity: Vec<u32>,
    residual_capacity: Vec<u32>,
    budget: f64,
    residual_budget: f64,
    max_cost: f64,
    by_cost: Vec<usize>,
    cheapest: usize,
}

impl Resources {
    pub fn new(view: &PolicyView, budget: f64) -> Self {
        let costs = view.costs();
        let capacities = view.capacities();
        let mut by_cost: Vec<usize> = (0..costs.len()).collect();
        by_cost.sort_by(|&a, &b| costs[a].total_cmp(&costs[b]).then(a.cmp(&b)));
        let max_cost = costs.iter().copied().fold(0.0, f64::max);
        let mut r = Resources {
            costs,
            initial_capacity: capacities.clone(),
            residual_capacity: capacities,
            budget,
            residual_budget: budget,
            max_cost,
            by_cost,
            cheapest: 0,
        };
        r.skip_exhausted();
        r
    }

    fn skip_exhausted(&mut self) {
        while self.cheapest < self.by_cost.len()
            && self.residual_capacity[self.by_cost[self.cheapest]] == 0
        {
            self.cheapest += 1;
        }
    }

    pub fn len(&self) -> usize {
        self.costs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.costs.is_empty()
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn residual_budget(&self) -> f64 {
        self.residual_budget
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    pub fn cost(&self, i: usize) -> f64 {
        self.costs[i]
    }

    pub fn max_cost(&self) -> f64 {
        self.max_cost
    }

    pub fn residual_capacities(&self) -> &[u32] {
        &self.residual_capacity
    }

    pub fn initial_capacities(&self) -> &[u32] {
        &self.initial_capacity
    }

    pub fn residual_capacity(&self, i: usize) -> u32 {
        self.residual_capacity[i]
    }

    pub fn is_available(&self, i: usize) -> bool {
        self.residual_capacity[i] >= 1
    }

    pub fn is_selectable(&self, i: usize) -> bool {
        self.residual_capacity[i] >= 1 && self.costs[i] <= self.residual_budget
    }

    /// Cheapest cost among workers with residual capacity.
    pub fn min_available_cost(&self) -> Option<f64> {
        self.by_cost.get(self.cheapest).map(|&i| self.costs[i])
    }

    /// The loop guard: `B(t) >= min { c_i : tau_i(t) >= 1 }`.
    pub fn can_select(&self) -> bool {
        self.min_available_cost()
            .is_some_and(|c| c <= self.residual_budget)
    }

    /// Charges one selection of `i`. Returns true when `i` just ran out of
    /// capacity.
    pub fn charge(&mut self, i: usize) -> bool {
        debug_assert!(self.residual_capacity[i] >= 1);
        self.residual_capacity[i] -= 1;
        self.residual_budget -= self.costs[i];
        let exhausted = self.residual_capacity[i] == 0;
        if exhausted {
            self.skip_exhausted();
        }
        exhausted
    }
}

/// Workers that still have capacity, kept in a swap-remove list so uniform
/// draws are O(1) while the budget is loose.
#[derive(Debug, Clone)]
pub(crate) struct AvailableSet {
    items: Vec<usize>,
    position: Vec<usize>,
}

impl AvailableSet {
    pub(crate) fn new(resources: &Resources) -> Self {
        let items: Vec<usize> = (0..resources.len())
            .filter(|&i| resources.is_available(i))
            .collect();
        let mut position = vec![usize::MAX; resources.len()];
        for (p, &i) in items.iter().enumerate() {
            position[i] = p;
        }
        AvailableSet { items, position }
    }

    pub(crate) fn remove(&mut self, i: usize) {
        let p = self.position[i];
        if p == usize::MAX {
            return;
        }
        let last = *self.items.last().expect("non-empty");
        self.items.swap_remove(p);
        if last != i {
            self.position[last] = p;
        }
        self.position[i] = usize::MAX;
    }

    /// Uniform draw among available workers with cost at most `limit`.
    pub(crate) fn draw(
        &self,
        resources: &Resources,
        limit: f64,
        rng: &mut SimRng,
    ) -> Option<usize> {
        if self.items.is_empty() {
            return None;
        }
        if limit >= resources.max_cost() {
            return Some(self.items[rng.gen_range(0..self.items.len())]);
        }
        let eligible: Vec<usize> = self
            .items
            .iter()
            .copied()
            .filter(|&i| resources.cost(i) <= limit)
            .collect();
        uniform_choice(&eligible, rng)
    }
}

pub(crate) fn uniform_choice(items: &[usize], rng: &mut SimRng) -> Option<usize> {
    if items.is_empty() {
        None
    } else {
        Some(items[rng.gen_range(0..items.len())])
    }
}

pub(crate) fn check_reward(reward: f64) -> Result<(), PolicyError> {
    if (0.0..=1.0).contains(&reward) {
        Ok(())
    } else {
        Err(PolicyError::Reward(reward))
    }
}

/// Settings shared by [`build_policy`].
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub epsilon: f64,
    pub granularity: Granularity,
}

impl Default for PolicyParams {
    fn default() -> Self {
        PolicyParams {
            epsilon: 0.1,
            granularity: Granularity::Auto,
        }
    }
}

/// Builds a policy by kind. `means` is required for the oracle only.
pub fn build_policy(
    kind: PolicyKind,
    view: &PolicyView,
    budget: f64,
    means: Option<&[f64]>,
    params: &PolicyParams,
) -> Result<Box<dyn Policy + Send>, PolicyError> {
    Ok(match kind {
        PolicyKind::Caws => Box::new(caws_init(view, budget, params.granularity)?),
        PolicyKind::Bkube => Box::new(bkube_init(view, budget)?),
        PolicyKind::EpsilonFirst => Box::new(epsilon_first_policy(view, budget, params.epsilon)?),
        PolicyKind::Random => Box::new(random_policy(view, budget)),
        PolicyKind::Oracle => {
            let means =
                means.ok_or_else(|| PolicyError::Setup("oracle needs true means".into()))?;
            Box::new(oracle_policy(view, means, budget)?)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{TaskInstance, WorkerSpec};

    #[test]
    fn policy_names_round_trip() {
        for k in PolicyKind::ALL {
            assert_eq!(k.as_str().parse::<PolicyKind>().unwrap(), k);
        }
        assert!("ucb".parse::<PolicyKind>().is_err());
    }

    #[test]
    fn resources_guard_and_charge() {
        let inst = TaskInstance::new(
            vec![
                WorkerSpec::new(0, vec![0.1], 1.5, 1, 0.5),
                WorkerSpec::new(1, vec![0.2], 2.0, 2, 0.5),
                WorkerSpec::new(2, vec![0.3], 0.5, 0, 0.5),
            ],
            5.0,
            1,
            1.0,
            1.0,
        )
        .unwrap();
        let mut r = Resources::new(&inst.view(), 5.0);
        assert_eq!(r.min_available_cost(), Some(1.5));
        assert!(r.can_select());
        assert!(!r.is_selectable(2));
        assert!(r.charge(0));
        assert_eq!(r.residual_budget(), 3.5);
        assert_eq!(r.min_available_cost(), Some(2.0));
        r.charge(1);
        assert_eq!(r.residual_budget(), 1.5);
        assert!(!r.can_select());
    }
}
