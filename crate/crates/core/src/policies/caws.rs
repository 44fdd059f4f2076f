//! Context-aware worker selection.
//!
//! The context space is cut into a uniform grid; exploration and exploitation
//! happen over cells rather than workers. Each non-empty cell is sampled once
//! (warm-up), then every iteration runs the density-ordered greedy over cell
//! UCB indices and draws a worker with probability proportional to its
//! greedy weight.
//!
//! With a singleton layout (one cell per worker) the same machinery is the
//! per-worker budgeted UCB baseline.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::PolicyView;
use crate::partition::{choose_granularity, cube_index, CubeStats, PartitionGrid};
use crate::policies::subroutine::{
    densify, greedy_weights_grouped, greedy_weights_naive, CellLayout,
};
use crate::policies::{check_reward, uniform_choice, Policy, PolicyError, Resources};
use crate::rng::SimRng;

/// How finely to cut the context space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    /// `d = ceil(B^(1/(alpha+M)))`.
    #[default]
    Auto,
    /// A fixed number of cells per axis.
    Fixed(u32),
    /// One cell per worker.
    Singleton,
}

impl std::str::FromStr for Granularity {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "auto" => Ok(Granularity::Auto),
            "singleton" => Ok(Granularity::Singleton),
            other => other
                .parse::<u32>()
                .ok()
                .filter(|&d| d > 0)
                .map(Granularity::Fixed)
                .ok_or_else(|| {
                    PolicyError::Setup(format!(
                        "bad granularity {other:?} (auto | singleton | positive integer)"
                    ))
                }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Cells {
    Grid {
        grid: PartitionGrid,
        /// Cube index -> slot, `u32::MAX` when the cube has no slot yet.
        slot_of_cube: Vec<u32>,
    },
    Singleton,
}

#[derive(Debug, Clone)]
pub struct Caws {
    cells: Cells,
    layout: CellLayout,
    stats: Vec<CubeStats>,
    /// Slots in ascending public index; the warm-up visits them in this order.
    warmup_order: Vec<usize>,
    /// Position in `warmup_order` below which no slot needs warm-up. Only
    /// meaningful while contexts are static.
    warmup_cursor: usize,
    dynamic: bool,
    resources: Resources,
    pending: Option<(usize, usize)>,
    weights: Vec<(usize, u64)>,
}

/// Builds the context-aware policy. With `Granularity::Auto` the grid uses
/// `d = ceil(B^(1/(alpha+M)))`.
pub fn caws_init(
    view: &PolicyView,
    budget: f64,
    granularity: Granularity,
) -> Result<Caws, PolicyError> {
    let d = match granularity {
        Granularity::Singleton => return Caws::build(view, budget, None),
        Granularity::Fixed(d) => d,
        Granularity::Auto => choose_granularity(budget.max(1.0), view.holder_alpha, view.dimension),
    };
    let grid =
        PartitionGrid::new(d, view.dimension).map_err(|e| PolicyError::Setup(e.to_string()))?;
    Caws::build(view, budget, Some(grid))
}

/// Per-worker budgeted UCB: the context-aware policy with one cell per worker.
pub fn bkube_init(view: &PolicyView, budget: f64) -> Result<Caws, PolicyError> {
    Caws::build(view, budget, None)
}

impl Caws {
    fn build(
        view: &PolicyView,
        budget: f64,
        grid: Option<PartitionGrid>,
    ) -> Result<Self, PolicyError> {
        let resources = Resources::new(view, budget);
        let n = view.len();
        let (cells, layout) = match grid {
            None => (
                Cells::Singleton,
                CellLayout {
                    cell_of: (0..n).collect(),
                    slot_key: (0..n).collect(),
                    members: (0..n)
                        .map(|i| {
                            if resources.is_available(i) {
                                vec![i]
                            } else {
                                Vec::new()
                            }
                        })
                        .collect(),
                },
            ),
            Some(grid) => {
                let cubes: Vec<usize> = view
                    .workers
                    .iter()
                    .map(|w| cube_index(&w.context, &grid))
                    .collect::<Result<_, _>>()
                    .map_err(|e| PolicyError::Setup(e.to_string()))?;
                let mut occupied = cubes.clone();
                occupied.sort_unstable();
                occupied.dedup();
                let mut slot_of_cube = vec![u32::MAX; grid.cube_count()];
                for (slot, &q) in occupied.iter().enumerate() {
                    slot_of_cube[q] = slot as u32;
                }
                let cell_of: Vec<usize> = cubes.iter().map(|&q| slot_of_cube[q] as usize).collect();
                let mut members = vec![Vec::new(); occupied.len()];
                for (i, &slot) in cell_of.iter().enumerate() {
                    if resources.is_available(i) {
                        members[slot].push(i);
                    }
                }
                (
                    Cells::Grid { grid, slot_of_cube },
                    CellLayout {
                        cell_of,
                        slot_key: occupied,
                        members,
                    },
                )
            }
        };
        let mut caws = Caws {
            cells,
            stats: vec![CubeStats::default(); layout.slot_count()],
            warmup_order: (0..layout.slot_count()).collect(),
            layout,
            warmup_cursor: 0,
            dynamic: false,
            resources,
            pending: None,
            weights: Vec::new(),
        };
        caws.layout.sort_members(caws.resources.costs());
        Ok(caws)
    }

    /// Cells per axis, or `None` for the singleton layout.
    pub fn granularity(&self) -> Option<u32> {
        match &self.cells {
            Cells::Grid { grid, .. } => Some(grid.d()),
            Cells::Singleton => None,
        }
    }

    pub fn grid(&self) -> Option<&PartitionGrid> {
        match &self.cells {
            Cells::Grid { grid, .. } => Some(grid),
            Cells::Singleton => None,
        }
    }

    /// Number of cells a worker currently occupies (non-empty cells).
    pub fn occupied_cells(&self) -> usize {
        self.layout.slot_count()
    }

    pub fn layout(&self) -> &CellLayout {
        &self.layout
    }

    /// Statistics of the cell with public index `cell`.
    pub fn cell_stats(&self, cell: usize) -> Option<CubeStats> {
        self.slot_of(cell).map(|s| self.stats[s])
    }

    fn slot_of(&self, cell: usize) -> Option<usize> {
        match &self.cells {
            Cells::Grid { slot_of_cube, .. } => slot_of_cube
                .get(cell)
                .copied()
                .filter(|&s| s != u32::MAX)
                .map(|s| s as usize),
            Cells::Singleton => (cell < self.stats.len()).then_some(cell),
        }
    }

    /// True while some cell without pulls still holds a selectable worker.
    pub fn in_warmup(&self) -> bool {
        self.next_warmup_slot().is_some()
    }

    fn slot_has_selectable(&self, slot: usize) -> bool {
        self.layout.members[slot]
            .iter()
            .any(|&w| self.resources.is_selectable(w))
    }

    fn next_warmup_slot(&self) -> Option<usize> {
        let start = if self.dynamic { 0 } else { self.warmup_cursor };
        self.warmup_order[start..]
            .iter()
            .copied()
            .find(|&s| self.stats[s].pulls == 0 && self.slot_has_selectable(s))
    }

    fn advance_warmup_cursor(&mut self) {
        if self.dynamic {
            return;
        }
        // With static contexts a passed-over cell can never become selectable
        // again: budget and capacities only shrink.
        while self.warmup_cursor < self.warmup_order.len() {
            let s = self.warmup_order[self.warmup_cursor];
            if self.stats[s].pulls == 0 && self.slot_has_selectable(s) {
                break;
            }
            self.warmup_cursor += 1;
        }
    }

    /// Greedy weights `x(t)` over cells that have been sampled, as
    /// `(worker, units)` pairs in density order.
    pub fn subroutine_weights(&mut self, t: u64) -> &[(usize, u64)] {
        let mut weights = std::mem::take(&mut self.weights);
        greedy_weights_grouped(&self.layout, &self.stats, &self.resources, t, &mut weights);
        self.weights = weights;
        &self.weights
    }

    /// Dense weight vector from the grouped computation.
    pub fn caws_subroutine(&mut self, t: u64) -> Vec<u64> {
        let n = self.resources.len();
        densify(self.subroutine_weights(t), n)
    }

    /// Dense weight vector from the per-worker reference computation.
    pub fn caws_subroutine_naive(&self, t: u64) -> Vec<u64> {
        greedy_weights_naive(&self.layout, &self.stats, &self.resources, t)
    }

    fn rebuild_members(&mut self) {
        let n = self.resources.len();
        for m in &mut self.layout.members {
            m.clear();
        }
        for i in 0..n {
            if self.resources.is_available(i) {
                let slot = self.layout.cell_of[i];
                self.layout.members[slot].push(i);
            }
        }
        self.layout.sort_members(self.resources.costs());
    }
}

/// Draws worker `i` with probability `x_i / sum x`.
pub fn draw_weighted(weights: &[(usize, u64)], rng: &mut SimRng) -> Option<usize> {
    let total: u64 = weights.iter().map(|&(_, x)| x).sum();
    if total == 0 {
        return None;
    }
    let mut draw = rng.gen_range(0..total);
    weights.iter().find_map(|&(w, x)| {
        if draw < x {
            Some(w)
        } else {
            draw -= x;
            None
        }
    })
}

impl Policy for Caws {
    fn resources(&self) -> &Resources {
        &self.resources
    }

    fn select(&mut self, t: u64, rng: &mut SimRng) -> Result<usize, PolicyError> {
        if !self.resources.can_select() {
            return Err(PolicyError::NothingSelectable);
        }
        self.advance_warmup_cursor();
        let choice = if let Some(slot) = self.next_warmup_slot() {
            let candidates: Vec<usize> = self.layout.members[slot]
                .iter()
                .copied()
                .filter(|&w| self.resources.is_selectable(w))
                .collect();
            uniform_choice(&candidates, rng)
        } else {
            draw_weighted(self.subroutine_weights(t), rng)
        };
        let worker = choice.ok_or(PolicyError::NothingSelectable)?;
        debug_assert!(self.resources.is_selectable(worker));
        self.pending = Some((worker, self.layout.cell_of[worker]));
        Ok(worker)
    }

    fn observe(&mut self, worker: usize, reward: f64) -> Result<(), PolicyError> {
        check_reward(reward)?;
        let (pending, slot) = match self.pending {
            Some((w, s)) if w == worker => (w, s),
            other => {
                return Err(PolicyError::NotPending {
                    got: worker,
                    expected: other.map(|p| p.0),
                })
            }
        };
        self.pending = None;
        self.stats[slot] = self.stats[slot]
            .update(reward)
            .map_err(|_| PolicyError::Reward(reward))?;
        if self.resources.charge(pending) {
            self.layout.remove_member(pending);
        }
        Ok(())
    }

    fn refresh_contexts(&mut self, contexts: &[f64]) {
        let Cells::Grid { grid, slot_of_cube } = &mut self.cells else {
            return;
        };
        self.dynamic = true;
        let m = grid.dimension();
        let mut new_slots = false;
        for (i, ctx) in contexts.chunks_exact(m).enumerate() {
            let q = cube_index(ctx, grid).expect("trace contexts are validated");
            if slot_of_cube[q] == u32::MAX {
                slot_of_cube[q] = self.layout.slot_key.len() as u32;
                self.layout.slot_key.push(q);
                self.layout.members.push(Vec::new());
                self.stats.push(CubeStats::default());
                new_slots = true;
            }
            self.layout.cell_of[i] = slot_of_cube[q] as usize;
        }
        if new_slots {
            let keys = &self.layout.slot_key;
            let mut order: Vec<usize> = (0..keys.len()).collect();
            order.sort_by_key(|&s| keys[s]);
            self.warmup_order = order;
        }
        self.rebuild_members();
    }

    fn cell_of(&self, worker: usize) -> Option<usize> {
        Some(self.layout.slot_key[self.layout.cell_of[worker]])
    }
}
