//! The density-ordered greedy weight computation run on every post-warm-up
//! iteration.
//!
//! Two implementations produce identical weights. The naive one transcribes
//! the per-worker loop directly: compute every worker's UCB index, sort all
//! workers by index/cost and fill greedily. The grouped one uses the fact
//! that all workers of a cell share one index, so within a cell the density
//! order is just ascending cost. Each cell keeps its available members sorted
//! by `(cost, id)` and the global order is a k-way merge of the cells' heads.
//! A cell whose head no longer fits the leftover budget can be dropped whole,
//! and the walk stops once the leftover is below the cheapest available cost.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::knapsack::{affordable_units, density_cmp, density_greedy};
use crate::partition::{ucb_value, CubeStats};
use crate::policies::Resources;

/// Worker-to-cell assignment plus each cell's available members.
#[derive(Debug, Clone, PartialEq)]
pub struct CellLayout {
    /// Worker -> cell slot.
    pub(crate) cell_of: Vec<usize>,
    /// Cell slot -> public cell index (cube index, or worker id for singletons).
    pub(crate) slot_key: Vec<usize>,
    /// Cell slot -> workers with residual capacity, sorted by `(cost, id)`.
    pub(crate) members: Vec<Vec<usize>>,
}

impl CellLayout {
    pub fn cell_of(&self, worker: usize) -> usize {
        self.cell_of[worker]
    }

    pub fn slot_count(&self) -> usize {
        self.slot_key.len()
    }

    pub fn members(&self, slot: usize) -> &[usize] {
        &self.members[slot]
    }

    pub(crate) fn sort_members(&mut self, costs: &[f64]) {
        for m in &mut self.members {
            m.sort_by(|&a, &b| costs[a].total_cmp(&costs[b]).then(a.cmp(&b)));
        }
    }

    pub(crate) fn remove_member(&mut self, worker: usize) {
        let slot = self.cell_of[worker];
        if let Some(p) = self.members[slot].iter().position(|&w| w == worker) {
            self.members[slot].remove(p);
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Head {
    ucb: f64,
    cost: f64,
    worker: usize,
    slot: u32,
    pos: u32,
}

impl PartialEq for Head {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Head {}

impl PartialOrd for Head {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Head {
    // Max-heap: the denser head compares greater.
    fn cmp(&self, other: &Self) -> Ordering {
        density_cmp(
            other.ucb,
            other.cost,
            other.worker,
            self.ucb,
            self.cost,
            self.worker,
        )
    }
}

/// Grouped weights, written as `(worker, units)` pairs in density order.
/// Cells with no pulls are left out.
pub fn greedy_weights_grouped(
    layout: &CellLayout,
    stats: &[CubeStats],
    resources: &Resources,
    t: u64,
    out: &mut Vec<(usize, u64)>,
) {
    out.clear();
    let Some(cheapest) = resources.min_available_cost() else {
        return;
    };
    let mut residual = resources.residual_budget();
    if residual < cheapest {
        return;
    }
    let costs = resources.costs();
    let ln_t = (t as f64).ln();
    let mut heads = Vec::new();
    for (slot, members) in layout.members.iter().enumerate() {
        let s = stats[slot];
        if s.pulls == 0 {
            continue;
        }
        if let Some(&w) = members.first() {
            if costs[w] <= residual {
                heads.push(Head {
                    ucb: ucb_value(s.mean_reward, s.pulls, ln_t),
                    cost: costs[w],
                    worker: w,
                    slot: slot as u32,
                    pos: 0,
                });
            }
        }
    }
    let mut heap = BinaryHeap::from(heads);
    while let Some(head) = heap.pop() {
        if residual < cheapest {
            break;
        }
        if head.cost > residual {
            // Later members of this cell cost at least as much.
            continue;
        }
        let w = head.worker;
        let x = (resources.residual_capacity(w) as u64).min(affordable_units(residual, head.cost));
        if x > 0 {
            out.push((w, x));
            residual -= head.cost * x as f64;
        }
        let members = &layout.members[head.slot as usize];
        let next = head.pos as usize + 1;
        if let Some(&nw) = members.get(next) {
            if costs[nw] <= residual {
                heap.push(Head {
                    cost: costs[nw],
                    worker: nw,
                    pos: next as u32,
                    ..head
                });
            }
        }
    }
}

/// Reference weights by a direct per-worker transcription. Workers in cells
/// without pulls get capacity 0.
pub fn greedy_weights_naive(
    layout: &CellLayout,
    stats: &[CubeStats],
    resources: &Resources,
    t: u64,
) -> Vec<u64> {
    let n = resources.len();
    let ln_t = (t as f64).ln();
    let mut values = vec![0.0; n];
    let mut caps = vec![0u32; n];
    for i in 0..n {
        let s = stats[layout.cell_of[i]];
        if s.pulls > 0 {
            values[i] = ucb_value(s.mean_reward, s.pulls, ln_t);
            caps[i] = resources.residual_capacity(i);
        }
    }
    density_greedy(
        &values,
        resources.costs(),
        &caps,
        resources.residual_budget(),
    )
    .expect("policy state holds valid knapsack inputs")
    .counts
}

/// Dense form of grouped weights.
pub fn densify(weights: &[(usize, u64)], n: usize) -> Vec<u64> {
    let mut dense = vec![0; n];
    for &(w, x) in weights {
        dense[w] = x;
    }
    dense
}
