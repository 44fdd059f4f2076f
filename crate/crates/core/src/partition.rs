//! Uniform hypercube partition of `[0,1]^M`, per-cube reward statistics,
//! UCB indices and the within-cube Hölder gap.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PartitionError {
    #[error("granularity and dimension must be positive")]
    Degenerate,
    #[error("grid with {d}^{m} cubes is too large to index")]
    TooManyCubes { d: u32, m: usize },
    #[error("context has {got} coordinates, grid expects {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("context coordinate {axis} = {value} outside [0, 1]")]
    OutOfRange { axis: usize, value: f64 },
    #[error("reward {0} outside [0, 1]")]
    Reward(f64),
    #[error("cube has never been sampled")]
    Unsampled,
    #[error("iteration index must be at least 1")]
    Iteration,
}

/// Largest number of cubes a grid may have.
pub const MAX_CUBES: u64 = 1 << 26;

/// `d` cells per axis over `M` axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PartitionGrid {
    d: u32,
    dimension: usize,
    cube_count: usize,
}

impl PartitionGrid {
    pub fn new(d: u32, dimension: usize) -> Result<Self, PartitionError> {
        if d == 0 || dimension == 0 {
            return Err(PartitionError::Degenerate);
        }
        let count = (d as u64)
            .checked_pow(dimension as u32)
            .filter(|&c| c <= MAX_CUBES)
            .ok_or(PartitionError::TooManyCubes { d, m: dimension })?;
        Ok(PartitionGrid {
            d,
            dimension,
            cube_count: count as usize,
        })
    }

    pub fn d(&self) -> u32 {
        self.d
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn cube_count(&self) -> usize {
        self.cube_count
    }

    /// Per-axis cells of a cube index, axis 0 first.
    pub fn cells_of(&self, mut index: usize) -> Vec<u32> {
        let d = self.d as usize;
        (0..self.dimension)
            .map(|_| {
                let k = index % d;
                index /= d;
                k as u32
            })
            .collect()
    }
}

/// `ceil(B^(1 / (alpha + M)))`, guarded against `powf` landing just above an
/// exact integer root.
pub fn choose_granularity(budget: f64, alpha: f64, dimension: usize) -> u32 {
    let exponent = alpha + dimension as f64;
    if budget <= 1.0 {
        return 1;
    }
    let root = budget.powf(1.0 / exponent);
    let mut d = root.ceil().max(1.0);
    while d > 1.0 && (d - 1.0).powf(exponent) >= budget {
        d -= 1.0;
    }
    d as u32
}

/// Maps a context to its cube. Cell `k_j = min(floor(x_j * d), d - 1)`; the
/// linear index is `sum_j k_j d^j`.
pub fn cube_index(context: &[f64], grid: &PartitionGrid) -> Result<usize, PartitionError> {
    if context.len() != grid.dimension {
        return Err(PartitionError::DimensionMismatch {
            got: context.len(),
            expected: grid.dimension,
        });
    }
    let d = grid.d as usize;
    let mut index = 0usize;
    let mut stride = 1usize;
    for (axis, &x) in context.iter().enumerate() {
        if !(0.0..=1.0).contains(&x) {
            return Err(PartitionError::OutOfRange { axis, value: x });
        }
        let cell = ((x * d as f64).floor() as usize).min(d - 1);
        index += cell * stride;
        stride *= d;
    }
    Ok(index)
}

/// Largest mean-reward gap between two contexts in one cube: `L (sqrt(M)/d)^alpha`.
pub fn holder_delta(l: f64, alpha: f64, dimension: usize, d: u32) -> f64 {
    l * ((dimension as f64).sqrt() / d as f64).powf(alpha)
}

/// Selection count and running mean reward of one cube.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CubeStats {
    pub pulls: u64,
    pub mean_reward: f64,
}

impl CubeStats {
    pub fn update(self, reward: f64) -> Result<CubeStats, PartitionError> {
        update_cube_stats(self, reward)
    }
}

pub fn update_cube_stats(stats: CubeStats, reward: f64) -> Result<CubeStats, PartitionError> {
    if !(0.0..=1.0).contains(&reward) {
        return Err(PartitionError::Reward(reward));
    }
    let pulls = stats.pulls + 1;
    let mean_reward = (stats.mean_reward * stats.pulls as f64 + reward) / pulls as f64;
    Ok(CubeStats {
        pulls,
        mean_reward: mean_reward.clamp(0.0, 1.0),
    })
}

/// `mean + sqrt(2 ln t / pulls)`.
pub fn ucb_index(stats: &CubeStats, t: u64) -> Result<f64, PartitionError> {
    if stats.pulls == 0 {
        return Err(PartitionError::Unsampled);
    }
    if t == 0 {
        return Err(PartitionError::Iteration);
    }
    Ok(ucb_value(stats.mean_reward, stats.pulls, (t as f64).ln()))
}

/// UCB index with `ln t` supplied by the caller.
#[inline]
pub(crate) fn ucb_value(mean: f64, pulls: u64, ln_t: f64) -> f64 {
    mean + (2.0 * ln_t / pulls as f64).sqrt()
}
