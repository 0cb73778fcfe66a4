//! Grid abstraction of the reduced-order game: state and input partitions,
//! the absorbing state φ and the finite transition kernel.

mod grid;
mod kernel;

pub use grid::Grid;
pub use kernel::{
    build_kernel, cell_probability, noise_variances, KernelMode, TransitionKernel,
    DEFAULT_TRUNCATION,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::model::{IntervalBox, ReducedOrderGame, StochasticGame};

/// Sub-box filter selecting Û' from Û.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputFilter {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

/// Partitions of X̂_rs, Û and Ŵ together with the Û' selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbstractSpaces {
    pub grid: Grid,
    pub u_grid: Grid,
    /// Indices into the Û centres that form Û'.
    pub u_prime: Vec<usize>,
    pub w_grid: Grid,
}

impl AbstractSpaces {
    pub fn new(grid: Grid, u_grid: Grid, w_grid: Grid, filter: Option<&InputFilter>) -> Result<Self> {
        let u_prime: Vec<usize> = match filter {
            None => (0..u_grid.n_cells()).collect(),
            Some(f) => {
                if f.lo.len() != u_grid.dim() || f.hi.len() != u_grid.dim() {
                    return Err(crate::error::dim_err("U' filter", u_grid.dim(), f.lo.len()));
                }
                (0..u_grid.n_cells())
                    .filter(|&i| {
                        let c = u_grid.center(i);
                        c.iter()
                            .enumerate()
                            .all(|(k, v)| *v >= f.lo[k] - 1e-12 && *v <= f.hi[k] + 1e-12)
                    })
                    .collect()
            }
        };
        if u_prime.is_empty() {
            return Err(Error::Config("U' is empty".into()));
        }
        Ok(Self {
            grid,
            u_grid,
            u_prime,
            w_grid,
        })
    }

    pub fn check_against(&self, game: &StochasticGame, red: &ReducedOrderGame) -> Result<()> {
        if self.grid.dim() != red.n_xr() {
            return Err(crate::error::dim_err("state grid", red.n_xr(), self.grid.dim()));
        }
        if self.u_grid.dim() != red.n_ur() {
            return Err(crate::error::dim_err("input grid", red.n_ur(), self.u_grid.dim()));
        }
        if self.w_grid.dim() != game.n_w() {
            return Err(crate::error::dim_err("adversary grid", game.n_w(), self.w_grid.dim()));
        }
        Ok(())
    }

    /// Number of abstract states including φ.
    pub fn n_states(&self) -> usize {
        self.grid.n_cells() + 1
    }

    pub fn absorbing(&self) -> usize {
        self.grid.n_cells()
    }

    pub fn state_center(&self, idx: usize) -> Option<Vector> {
        (idx < self.grid.n_cells()).then(|| self.grid.center(idx))
    }

    pub fn u_center(&self, idx: usize) -> Vector {
        self.u_grid.center(idx)
    }

    pub fn u_prime_centers(&self) -> Vec<Vector> {
        self.u_prime.iter().map(|&i| self.u_grid.center(i)).collect()
    }

    pub fn w_centers(&self) -> Vec<Vector> {
        self.w_grid.centers()
    }
}

/// Abstract state of `x̂_r`: the containing cell, or φ outside X̂_rs.
pub fn rep_point(grid: &Grid, xr: &[f64]) -> usize {
    grid.index_of(xr).unwrap_or(grid.n_cells())
}

/// Π_w: representative of the adversary cell containing `w`, clamping into W first.
pub fn project_w(spaces: &AbstractSpaces, w_box: &IntervalBox, w: &Vector) -> usize {
    if !w_box.contains(w) {
        log::warn!("adversary input {:?} outside W, clamped", w.as_slice());
    }
    spaces.w_grid.nearest(w_box.clamp(w).as_slice())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FiniteAbstraction {
    pub spaces: AbstractSpaces,
    pub kernel: TransitionKernel,
}

impl FiniteAbstraction {
    pub fn build(red: &ReducedOrderGame, spaces: AbstractSpaces, mode: KernelMode) -> Result<Self> {
        let kernel = build_kernel(red, &spaces, mode)?;
        Ok(Self { spaces, kernel })
    }
}
