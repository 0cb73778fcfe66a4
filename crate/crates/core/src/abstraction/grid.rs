use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vector;

/// Uniform box partition with cells `[lo + kη, lo + (k+1)η)` and centre representatives.
/// The top face of the region belongs to the last cell. Indices are row-major
/// with the last coordinate varying fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridFile", into = "GridFile")]
pub struct Grid {
    lo: Vec<f64>,
    hi: Vec<f64>,
    eta: Vec<f64>,
    counts: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct GridFile {
    lo: Vec<f64>,
    hi: Vec<f64>,
    eta: Vec<f64>,
}

impl TryFrom<GridFile> for Grid {
    type Error = Error;
    fn try_from(f: GridFile) -> Result<Self> {
        Grid::new(f.lo, f.hi, f.eta)
    }
}

impl From<Grid> for GridFile {
    fn from(g: Grid) -> Self {
        GridFile {
            lo: g.lo,
            hi: g.hi,
            eta: g.eta,
        }
    }
}

impl Grid {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, eta: Vec<f64>) -> Result<Self> {
        let n = lo.len();
        if n == 0 || hi.len() != n || eta.len() != n {
            return Err(Error::Config("grid bounds and widths must share one dimension".into()));
        }
        let mut counts = Vec::with_capacity(n);
        for i in 0..n {
            if !(lo[i].is_finite() && hi[i].is_finite() && lo[i] < hi[i]) {
                return Err(Error::Config(format!("grid axis {i}: need finite lo < hi")));
            }
            if !(eta[i] > 0.0) {
                return Err(Error::Config(format!("grid axis {i}: width must be positive")));
            }
            let k = (hi[i] - lo[i]) / eta[i];
            let r = k.round();
            if (k - r).abs() > 1e-9 * r.max(1.0) || r < 1.0 {
                return Err(Error::Config(format!(
                    "grid axis {i}: width {} does not tile [{}, {}]",
                    eta[i], lo[i], hi[i]
                )));
            }
            counts.push(r as usize);
        }
        Ok(Self { lo, hi, eta, counts })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn eta(&self) -> &[f64] {
        &self.eta
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn n_cells(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn half_widths(&self) -> Vec<f64> {
        self.eta.iter().map(|e| e / 2.0).collect()
    }

    /// δ' = max_i η_i / 2.
    pub fn max_offset(&self) -> f64 {
        self.eta.iter().fold(0.0f64, |a, e| a.max(e / 2.0))
    }

    pub fn unravel(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        for i in (0..self.dim()).rev() {
            out[i] = idx % self.counts[i];
            idx /= self.counts[i];
        }
        out
    }

    pub fn ravel(&self, multi: &[usize]) -> usize {
        multi
            .iter()
            .zip(&self.counts)
            .fold(0, |acc, (k, n)| acc * n + k)
    }

    pub fn axis_center(&self, axis: usize, k: usize) -> f64 {
        self.lo[axis] + (k as f64 + 0.5) * self.eta[axis]
    }

    pub fn axis_cell(&self, axis: usize, k: usize) -> (f64, f64) {
        let a = self.lo[axis] + k as f64 * self.eta[axis];
        (a, a + self.eta[axis])
    }

    pub fn center(&self, idx: usize) -> Vector {
        let m = self.unravel(idx);
        Vector::from_iterator(self.dim(), m.iter().enumerate().map(|(i, &k)| self.axis_center(i, k)))
    }

    pub fn centers(&self) -> Vec<Vector> {
        (0..self.n_cells()).map(|i| self.center(i)).collect()
    }

    fn axis_index(&self, axis: usize, v: f64) -> Option<usize> {
        if !(v >= self.lo[axis] && v <= self.hi[axis]) {
            return None;
        }
        let k = ((v - self.lo[axis]) / self.eta[axis]).floor() as usize;
        Some(k.min(self.counts[axis] - 1))
    }

    /// Cell containing `x`, `None` outside the region.
    pub fn index_of(&self, x: &[f64]) -> Option<usize> {
        let mut idx = 0;
        for (i, &v) in x.iter().enumerate() {
            idx = idx * self.counts[i] + self.axis_index(i, v)?;
        }
        Some(idx)
    }

    /// Centre of the cell containing `x` on the grid extended indefinitely.
    pub fn lattice_center(&self, x: &[f64]) -> Vector {
        Vector::from_iterator(
            x.len(),
            x.iter().enumerate().map(|(i, &v)| {
                let mut k = ((v - self.lo[i]) / self.eta[i]).floor();
                if v == self.hi[i] {
                    k -= 1.0;
                }
                self.lo[i] + (k + 0.5) * self.eta[i]
            }),
        )
    }

    /// Closest representative to `x` after clamping into the region.
    pub fn nearest(&self, x: &[f64]) -> usize {
        let clamped: Vec<f64> = x
            .iter()
            .enumerate()
            .map(|(i, v)| v.clamp(self.lo[i], self.hi[i]))
            .collect();
        self.index_of(&clamped).expect("clamped point lies in the grid")
    }
}
