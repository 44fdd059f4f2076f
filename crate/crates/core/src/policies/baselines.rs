//! Reference policies: the full-information oracle, budget-limited
//! epsilon-first, and uniform random selection.

use crate::knapsack::{density_greedy, density_order};
use crate::model::PolicyView;
use crate::policies::{check_reward, AvailableSet, Policy, PolicyError, Resources};
use crate::rng::SimRng;

/// A greedy plan unrolled into a selection queue, workers in density order.
#[derive(Debug, Clone, Default)]
struct Plan {
    queue: Vec<usize>,
    next: usize,
}

impl Plan {
    fn build(values: &[f64], resources: &Resources) -> Self {
        let costs = resources.costs();
        let alloc = density_greedy(
            values,
            costs,
            resources.residual_capacities(),
            resources.residual_budget(),
        )
        .expect("policy state holds valid knapsack inputs");
        let order = density_order(values, costs).expect("validated above");
        let mut queue = Vec::with_capacity(alloc.counts.iter().sum::<u64>() as usize);
        for &i in &order.permutation {
            queue.extend(std::iter::repeat_n(i, alloc.counts[i] as usize));
        }
        Plan { queue, next: 0 }
    }

    fn pop(&mut self) -> Option<usize> {
        let w = self.queue.get(self.next).copied();
        self.next += 1;
        w
    }

    fn is_exhausted(&self) -> bool {
        self.next >= self.queue.len()
    }

    fn clear(&mut self) {
        self.queue.clear();
        self.next = 0;
    }
}

fn take_pending(pending: &mut Option<usize>, worker: usize) -> Result<(), PolicyError> {
    match *pending {
        Some(w) if w == worker => {
            *pending = None;
            Ok(())
        }
        other => Err(PolicyError::NotPending {
            got: worker,
            expected: other,
        }),
    }
}

/// Knows the true means and replays the density-ordered greedy allocation.
#[derive(Debug, Clone)]
pub struct Oracle {
    resources: Resources,
    means: Vec<f64>,
    plan: Plan,
    pending: Option<usize>,
}

pub fn oracle_policy(view: &PolicyView, means: &[f64], budget: f64) -> Result<Oracle, PolicyError> {
    if means.len() != view.len() {
        return Err(PolicyError::Setup(format!(
            "oracle got {} means for {} workers",
            means.len(),
            view.len()
        )));
    }
    let resources = Resources::new(view, budget);
    let plan = Plan::build(means, &resources);
    Ok(Oracle {
        resources,
        means: means.to_vec(),
        plan,
        pending: None,
    })
}

impl Oracle {
    /// The planned selection sequence.
    pub fn planned_sequence(&self) -> &[usize] {
        &self.plan.queue
    }
}

impl Policy for Oracle {
    fn resources(&self) -> &Resources {
        &self.resources
    }

    fn select(&mut self, _t: u64, _rng: &mut SimRng) -> Result<usize, PolicyError> {
        if !self.resources.can_select() {
            return Err(PolicyError::NothingSelectable);
        }
        if self.plan.is_exhausted() {
            self.plan = Plan::build(&self.means, &self.resources);
        }
        let w = self.plan.pop().ok_or(PolicyError::NothingSelectable)?;
        debug_assert!(self.resources.is_selectable(w));
        self.pending = Some(w);
        Ok(w)
    }

    fn observe(&mut self, worker: usize, reward: f64) -> Result<(), PolicyError> {
        check_reward(reward)?;
        take_pending(&mut self.pending, worker)?;
        self.resources.charge(worker);
        Ok(())
    }

    fn refresh_means(&mut self, means: &[f64]) {
        self.means.copy_from_slice(means);
        self.plan.clear();
    }
}

/// Spends up to `epsilon * B` on uniform exploration, then exploits the
/// greedy plan over empirical means.
#[derive(Debug, Clone)]
pub struct EpsilonFirst {
    resources: Resources,
    available: AvailableSet,
    exploration_budget: f64,
    exploration_spent: f64,
    exploring: bool,
    sums: Vec<f64>,
    pulls: Vec<u64>,
    estimates: Vec<f64>,
    plan: Plan,
    pending: Option<usize>,
}

pub fn epsilon_first_policy(
    view: &PolicyView,
    budget: f64,
    epsilon: f64,
) -> Result<EpsilonFirst, PolicyError> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(PolicyError::Epsilon(epsilon));
    }
    let resources = Resources::new(view, budget);
    let n = view.len();
    Ok(EpsilonFirst {
        available: AvailableSet::new(&resources),
        resources,
        exploration_budget: epsilon * budget,
        exploration_spent: 0.0,
        exploring: true,
        sums: vec![0.0; n],
        pulls: vec![0; n],
        estimates: vec![0.0; n],
        plan: Plan::default(),
        pending: None,
    })
}

impl EpsilonFirst {
    pub fn is_exploring(&self) -> bool {
        self.exploring
    }

    pub fn exploration_spent(&self) -> f64 {
        self.exploration_spent
    }

    pub fn exploration_budget(&self) -> f64 {
        self.exploration_budget
    }

    /// Empirical means; zero for workers never explored.
    pub fn estimates(&self) -> &[f64] {
        &self.estimates
    }
}

impl Policy for EpsilonFirst {
    fn resources(&self) -> &Resources {
        &self.resources
    }

    fn select(&mut self, _t: u64, rng: &mut SimRng) -> Result<usize, PolicyError> {
        if !self.resources.can_select() {
            return Err(PolicyError::NothingSelectable);
        }
        if self.exploring {
            let limit = (self.exploration_budget - self.exploration_spent)
                .min(self.resources.residual_budget());
            match self.available.draw(&self.resources, limit, rng) {
                Some(w) => {
                    self.pending = Some(w);
                    return Ok(w);
                }
                None => self.exploring = false,
            }
        }
        if self.plan.is_exhausted() {
            self.plan = Plan::build(&self.estimates, &self.resources);
        }
        let w = self.plan.pop().ok_or(PolicyError::NothingSelectable)?;
        debug_assert!(self.resources.is_selectable(w));
        self.pending = Some(w);
        Ok(w)
    }

    fn observe(&mut self, worker: usize, reward: f64) -> Result<(), PolicyError> {
        check_reward(reward)?;
        take_pending(&mut self.pending, worker)?;
        if self.exploring {
            self.sums[worker] += reward;
            self.pulls[worker] += 1;
            self.estimates[worker] = self.sums[worker] / self.pulls[worker] as f64;
            self.exploration_spent += self.resources.cost(worker);
        }
        if self.resources.charge(worker) {
            self.available.remove(worker);
        }
        Ok(())
    }
}

/// Uniform over affordable available workers.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    resources: Resources,
    available: AvailableSet,
    pending: Option<usize>,
}

pub fn random_policy(view: &PolicyView, budget: f64) -> RandomPolicy {
    let resources = Resources::new(view, budget);
    RandomPolicy {
        available: AvailableSet::new(&resources),
        resources,
        pending: None,
    }
}

impl Policy for RandomPolicy {
    fn resources(&self) -> &Resources {
        &self.resources
    }

    fn select(&mut self, _t: u64, rng: &mut SimRng) -> Result<usize, PolicyError> {
        let w = self
            .available
            .draw(&self.resources, self.resources.residual_budget(), rng)
            .ok_or(PolicyError::NothingSelectable)?;
        self.pending = Some(w);
        Ok(w)
    }

    fn observe(&mut self, worker: usize, reward: f64) -> Result<(), PolicyError> {
        check_reward(reward)?;
        take_pending(&mut self.pending, worker)?;
        if self.resources.charge(worker) {
            self.available.remove(worker);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{TaskInstance, WorkerSpec};
    use rand::SeedableRng;

    fn instance(costs: &[f64], caps: &[u32], means: &[f64], budget: f64) -> TaskInstance {
        let workers = costs
            .iter()
            .zip(caps)
            .zip(means)
            .enumerate()
            .map(|(i, ((&c, &cap), &mu))| WorkerSpec::new(i, vec![0.5], c, cap, mu))
            .collect();
        TaskInstance::new(workers, budget, 1, 1.0, 1.0).unwrap()
    }

    fn drive(policy: &mut dyn Policy, rewards: &[f64], rng: &mut SimRng) -> Vec<usize> {
        let mut picks = Vec::new();
        let mut t = 1;
        while policy.resources().can_select() {
            let w = policy.select(t, rng).unwrap();
            policy.observe(w, rewards[w]).unwrap();
            picks.push(w);
            t += 1;
        }
        picks
    }

    #[test]
    fn oracle_replays_greedy_plan() {
        let inst = instance(&[1.0, 1.0], &[2, 3], &[0.9, 0.5], 4.0);
        let mut o = oracle_policy(&inst.view(), &inst.true_means(), 4.0).unwrap();
        assert_eq!(o.planned_sequence(), &[0, 0, 1, 1]);
        let mut rng = SimRng::seed_from_u64(0);
        assert_eq!(drive(&mut o, &[1.0, 1.0], &mut rng), vec![0, 0, 1, 1]);
    }

    #[test]
    fn oracle_with_tiny_budget_has_empty_plan() {
        let inst = instance(&[1.0, 2.0], &[2, 3], &[0.9, 0.5], 0.5);
        let o = oracle_policy(&inst.view(), &inst.true_means(), 0.5).unwrap();
        assert!(o.planned_sequence().is_empty());
        assert!(!o.resources().can_select());
    }

    #[test]
    fn random_frequencies_are_uniform() {
        let inst = instance(&[1.0; 4], &[100_000; 4], &[0.5; 4], 100_000.0);
        let mut p = random_policy(&inst.view(), 100_000.0);
        let mut rng = SimRng::seed_from_u64(11);
        let picks = drive(&mut p, &[0.0; 4], &mut rng);
        assert_eq!(picks.len(), 100_000);
        for w in 0..4 {
            let f = picks.iter().filter(|&&p| p == w).count() as f64 / picks.len() as f64;
            assert!((f - 0.25).abs() < 0.01, "worker {w}: {f}");
        }
    }

    #[test]
    fn random_single_worker() {
        let inst = instance(&[1.0], &[3], &[0.5], 10.0);
        let mut p = random_policy(&inst.view(), 10.0);
        let mut rng = SimRng::seed_from_u64(1);
        assert_eq!(drive(&mut p, &[1.0], &mut rng), vec![0, 0, 0]);
    }

    #[test]
    fn epsilon_rejects_out_of_range() {
        let inst = instance(&[1.0], &[3], &[0.5], 10.0);
        assert!(epsilon_first_policy(&inst.view(), 10.0, 0.0).is_err());
        assert!(epsilon_first_policy(&inst.view(), 10.0, 1.0).is_err());
    }

    #[test]
    fn epsilon_first_exploits_the_good_worker() {
        let inst = instance(&[1.0, 1.0], &[10, 10], &[1.0, 0.0], 12.0);
        // Exploration budget 6 covers both workers with high probability; a
        // fixed seed makes it certain.
        let mut p = epsilon_first_policy(&inst.view(), 12.0, 0.5).unwrap();
        let mut rng = SimRng::seed_from_u64(5);
        let picks = drive(&mut p, &[1.0, 0.0], &mut rng);
        let explored = &picks[..6];
        assert!(explored.contains(&0) && explored.contains(&1));
        let used0 = explored.iter().filter(|&&w| w == 0).count();
        let rest = &picks[6..];
        let to_fill = 10 - used0;
        assert!(rest[..to_fill.min(rest.len())].iter().all(|&w| w == 0));
        assert_eq!(p.estimates(), &[1.0, 0.0]);
    }

    #[test]
    fn epsilon_first_threshold() {
        let inst = instance(&[1.0, 1.0], &[100_000, 100_000], &[0.5, 0.5], 100_000.0);
        let mut p = epsilon_first_policy(&inst.view(), 100_000.0, 0.1).unwrap();
        assert_eq!(p.exploration_budget(), 10_000.0);
        let mut rng = SimRng::seed_from_u64(2);
        let mut t = 1;
        while p.is_exploring() {
            let w = p.select(t, &mut rng).unwrap();
            if !p.is_exploring() {
                break;
            }
            p.observe(w, 0.0).unwrap();
            t += 1;
        }
        assert_eq!(p.exploration_spent(), 10_000.0);
    }

    #[test]
    fn epsilon_first_without_exploration_is_tie_break_greedy() {
        let inst = instance(&[2.0, 1.0, 1.0], &[1, 1, 1], &[0.9, 0.1, 0.1], 4.0);
        let mut p = epsilon_first_policy(&inst.view(), 4.0, 0.1).unwrap();
        let mut rng = SimRng::seed_from_u64(3);
        assert_eq!(drive(&mut p, &[1.0, 1.0, 1.0], &mut rng), vec![1, 2, 0]);
    }
}
