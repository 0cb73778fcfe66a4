use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

use super::{AbstractSpaces, Grid};
use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};
use crate::model::ReducedOrderGame;
use crate::stats::normal_interval;

pub const DEFAULT_TRUNCATION: f64 = 1e-12;
const MAGIC: &[u8; 4] = b"GDSG";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum KernelMode {
    Dense,
    Sparse { threshold: f64 },
}

#[derive(Debug, Clone, PartialEq)]
enum Storage {
    Dense(Vec<f64>),
    Sparse {
        row_ptr: Vec<usize>,
        cols: Vec<u32>,
        vals: Vec<f64>,
        truncated: Vec<f64>,
    },
}

/// T̂(x̂' | x̂, û, ŵ) over `n_states` targets (grid cells then φ).
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionKernel {
    n_states: usize,
    n_u: usize,
    n_w: usize,
    threshold: f64,
    storage: Storage,
}

impl TransitionKernel {
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_u(&self) -> usize {
        self.n_u
    }

    pub fn n_w(&self) -> usize {
        self.n_w
    }

    pub fn absorbing(&self) -> usize {
        self.n_states - 1
    }

    pub fn n_rows(&self) -> usize {
        self.n_states * self.n_u * self.n_w
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self.storage, Storage::Sparse { .. })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn row_index(&self, x: usize, u: usize, w: usize) -> usize {
        (x * self.n_u + u) * self.n_w + w
    }

    /// Stored entries of one row as `(target, probability)`.
    pub fn row(&self, r: usize) -> Box<dyn Iterator<Item = (usize, f64)> + '_> {
        match &self.storage {
            Storage::Dense(data) => {
                let n = self.n_states;
                Box::new(
                    data[r * n..(r + 1) * n]
                        .iter()
                        .enumerate()
                        .filter(|(_, p)| **p != 0.0)
                        .map(|(i, p)| (i, *p)),
                )
            }
            Storage::Sparse {
                row_ptr, cols, vals, ..
            } => {
                let (a, b) = (row_ptr[r], row_ptr[r + 1]);
                Box::new(cols[a..b].iter().zip(&vals[a..b]).map(|(c, v)| (*c as usize, *v)))
            }
        }
    }

    /// Σ T̂(x̂'|row)·f(x̂') over stored entries.
    #[inline]
    pub fn dot(&self, r: usize, f: &[f64]) -> f64 {
        match &self.storage {
            Storage::Dense(data) => {
                let n = self.n_states;
                data[r * n..(r + 1) * n]
                    .iter()
                    .zip(f)
                    .map(|(p, v)| p * v)
                    .sum()
            }
            Storage::Sparse {
                row_ptr, cols, vals, ..
            } => {
                let (a, b) = (row_ptr[r], row_ptr[r + 1]);
                cols[a..b]
                    .iter()
                    .zip(&vals[a..b])
                    .map(|(c, p)| p * f[*c as usize])
                    .sum()
            }
        }
    }

    pub fn truncated(&self, r: usize) -> f64 {
        match &self.storage {
            Storage::Dense(_) => 0.0,
            Storage::Sparse { truncated, .. } => truncated[r],
        }
    }

    pub fn prob(&self, x: usize, u: usize, w: usize, target: usize) -> f64 {
        let r = self.row_index(x, u, w);
        match &self.storage {
            Storage::Dense(data) => data[r * self.n_states + target],
            Storage::Sparse {
                row_ptr, cols, vals, ..
            } => {
                let (a, b) = (row_ptr[r], row_ptr[r + 1]);
                cols[a..b]
                    .binary_search(&(target as u32))
                    .map_or(0.0, |k| vals[a + k])
            }
        }
    }

    pub fn row_sum(&self, r: usize) -> f64 {
        self.row(r).map(|(_, p)| p).sum()
    }

    pub fn stored_entries(&self) -> usize {
        match &self.storage {
            Storage::Dense(d) => d.len(),
            Storage::Sparse { vals, .. } => vals.len(),
        }
    }

    pub fn total_truncated(&self) -> f64 {
        (0..self.n_rows()).map(|r| self.truncated(r)).sum()
    }

    pub fn max_truncated(&self) -> f64 {
        (0..self.n_rows()).map(|r| self.truncated(r)).fold(0.0, f64::max)
    }

    /// Dense-equivalent footprint in bytes at `bytes_per_entry`.
    pub fn dense_footprint(&self, bytes_per_entry: usize) -> usize {
        self.n_rows() * self.n_states * bytes_per_entry
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&[u8::from(self.is_sparse())])?;
        for d in [self.n_states, self.n_u, self.n_w] {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        w.write_all(&self.threshold.to_le_bytes())?;
        match &self.storage {
            Storage::Dense(data) => {
                for v in data {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            Storage::Sparse {
                row_ptr,
                cols,
                vals,
                truncated,
            } => {
                for r in 0..self.n_rows() {
                    let (a, b) = (row_ptr[r], row_ptr[r + 1]);
                    write_varint(&mut w, (b - a) as u64)?;
                    let mut prev = 0u64;
                    for k in a..b {
                        let c = u64::from(cols[k]);
                        write_varint(&mut w, c - prev)?;
                        prev = c;
                        w.write_all(&vals[k].to_le_bytes())?;
                    }
                    w.write_all(&truncated[r].to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad kernel magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported kernel version {version}")));
        }
        let mut mode = [0u8; 1];
        r.read_exact(&mut mode)?;
        let n_states = read_u32(&mut r)? as usize;
        let n_u = read_u32(&mut r)? as usize;
        let n_w = read_u32(&mut r)? as usize;
        let threshold = read_f64(&mut r)?;
        let n_rows = n_states * n_u * n_w;
        let storage = match mode[0] {
            0 => {
                let mut data = Vec::with_capacity(n_rows * n_states);
                let mut buf = vec![0u8; 8 * n_states];
                for _ in 0..n_rows {
                    r.read_exact(&mut buf)?;
                    data.extend(
                        buf.chunks_exact(8)
                            .map(|c| f64::from_le_bytes(c.try_into().unwrap())),
                    );
                }
                Storage::Dense(data)
            }
            1 => {
                let mut row_ptr = Vec::with_capacity(n_rows + 1);
                row_ptr.push(0);
                let (mut cols, mut vals, mut truncated) = (Vec::new(), Vec::new(), Vec::new());
                for _ in 0..n_rows {
                    let nnz = read_varint(&mut r)? as usize;
                    let mut prev = 0u64;
                    for _ in 0..nnz {
                        prev += read_varint(&mut r)?;
                        if prev as usize >= n_states {
                            return Err(Error::Format("sparse index out of range".into()));
                        }
                        cols.push(prev as u32);
                        vals.push(read_f64(&mut r)?);
                    }
                    truncated.push(read_f64(&mut r)?);
                    row_ptr.push(cols.len());
                }
                Storage::Sparse {
                    row_ptr,
                    cols,
                    vals,
                    truncated,
                }
            }
            m => return Err(Error::Format(format!("unknown kernel mode {m}"))),
        };
        Ok(Self {
            n_states,
            n_u,
            n_w,
            threshold,
            storage,
        })
    }

    /// Kernel from explicit dense rows, mostly for tests and small hand-made games.
    pub fn from_dense(n_states: usize, n_u: usize, n_w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_states * n_u * n_w * n_states {
            return Err(Error::Format("dense kernel size mismatch".into()));
        }
        Ok(Self {
            n_states,
            n_u,
            n_w,
            threshold: 0.0,
            storage: Storage::Dense(data),
        })
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn write_varint<W: Write>(w: &mut W, mut v: u64) -> std::io::Result<()> {
    loop {
        let byte = (v & 0x7f) as u8;
        v >>= 7;
        if v == 0 {
            return w.write_all(&[byte]);
        }
        w.write_all(&[byte | 0x80])?;
    }
}

fn read_varint<R: Read>(r: &mut R) -> Result<u64> {
    let mut out = 0u64;
    for shift in (0..64).step_by(7) {
        let mut b = [0u8; 1];
        r.read_exact(&mut b)?;
        out |= u64::from(b[0] & 0x7f) << shift;
        if b[0] & 0x80 == 0 {
            return Ok(out);
        }
    }
    Err(Error::Format("varint overflow".into()))
}

/// ∏_i [Φ((hi_i−μ_i)/σ_i) − Φ((lo_i−μ_i)/σ_i)] with σ_i² = `var[i]`.
pub fn cell_probability(mean: &[f64], var: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    mean.iter()
        .enumerate()
        .map(|(i, &m)| axis_probability(m, var[i], lo[i], hi[i]))
        .product()
}

fn axis_probability(mean: f64, var: f64, lo: f64, hi: f64) -> f64 {
    if var <= 0.0 {
        return if mean >= lo && mean < hi { 1.0 } else { 0.0 };
    }
    let s = var.sqrt();
    normal_interval((lo - mean) / s, (hi - mean) / s)
}

/// Diagonal of R_r R_rᵀ; rejects correlated noise.
pub fn noise_variances(r_r: &Mat) -> Result<Vec<f64>> {
    let cov = r_r * r_r.transpose();
    let scale = 1.0 + cov.diagonal().amax();
    let mut off = 0.0f64;
    for i in 0..cov.nrows() {
        for j in 0..cov.ncols() {
            if i != j {
                off = off.max(cov[(i, j)].abs());
            }
        }
    }
    if off > 1e-12 * scale {
        return Err(Error::UnsupportedCovariance(off));
    }
    Ok(cov.diagonal().iter().copied().collect())
}

// Per-axis cell probabilities plus the in-region mass along that axis.
fn axis_table(grid: &Grid, axis: usize, mean: f64, var: f64) -> (Vec<f64>, f64) {
    let n = grid.counts()[axis];
    let probs = (0..n)
        .map(|k| {
            let (a, b) = grid.axis_cell(axis, k);
            axis_probability(mean, var, a, b)
        })
        .collect();
    let inside = if var <= 0.0 {
        f64::from(u8::from(mean >= grid.lo()[axis] && mean <= grid.hi()[axis]))
    } else {
        let s = var.sqrt();
        normal_interval((grid.lo()[axis] - mean) / s, (grid.hi()[axis] - mean) / s)
    };
    (probs, inside)
}

enum RowOut {
    Dense(Vec<f64>),
    Sparse(Vec<(u32, f64)>, f64),
}

fn compute_row(grid: &Grid, mean: &Vector, var: &[f64], mode: KernelMode) -> Result<RowOut> {
    let dim = grid.dim();
    let n_cells = grid.n_cells();
    let tables: Vec<(Vec<f64>, f64)> =
        (0..dim).map(|i| axis_table(grid, i, mean[i], var[i])).collect();
    match mode {
        KernelMode::Dense => {
            let mut row = vec![0.0; n_cells + 1];
            let mut sum = 0.0;
            for (c, slot) in row.iter_mut().take(n_cells).enumerate() {
                let m = grid.unravel(c);
                let p: f64 = m.iter().enumerate().map(|(i, &k)| tables[i].0[k]).product();
                *slot = p;
                sum += p;
            }
            let rest = 1.0 - sum;
            if rest < -1e-9 {
                return Err(Error::NumericalConsistency(rest));
            }
            row[n_cells] = rest.max(0.0);
            Ok(RowOut::Dense(row))
        }
        KernelMode::Sparse { threshold } => {
            // a product can only clear the threshold if every factor does
            let keep: Vec<Vec<usize>> = tables
                .iter()
                .map(|(p, _)| (0..p.len()).filter(|&k| p[k] >= threshold).collect())
                .collect();
            let mut entries = Vec::new();
            let mut kept = 0.0;
            if keep.iter().all(|k| !k.is_empty()) {
                let total: usize = keep.iter().map(Vec::len).product();
                let mut pos = vec![0usize; dim];
                let mut multi = vec![0usize; dim];
                for _ in 0..total {
                    let mut p = 1.0;
                    for i in 0..dim {
                        multi[i] = keep[i][pos[i]];
                        p *= tables[i].0[multi[i]];
                    }
                    if p >= threshold {
                        entries.push((grid.ravel(&multi) as u32, p));
                        kept += p;
                    }
                    for i in (0..dim).rev() {
                        pos[i] += 1;
                        if pos[i] < keep[i].len() {
                            break;
                        }
                        pos[i] = 0;
                    }
                }
            }
            entries.sort_unstable_by_key(|e| e.0);
            let inside: f64 = tables.iter().map(|t| t.1).product();
            let outside = 1.0 - inside;
            let mut truncated = (inside - kept).max(0.0);
            if outside >= threshold {
                entries.push((n_cells as u32, outside));
            } else {
                truncated += outside.max(0.0);
            }
            Ok(RowOut::Sparse(entries, truncated))
        }
    }
}

pub fn build_kernel(
    red: &ReducedOrderGame,
    spaces: &AbstractSpaces,
    mode: KernelMode,
) -> Result<TransitionKernel> {
    let grid = &spaces.grid;
    if red.n_xr() != grid.dim() {
        return Err(crate::error::dim_err("grid dimension", red.n_xr(), grid.dim()));
    }
    if let KernelMode::Sparse { threshold } = mode {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::Config("sparse threshold must lie in (0, 1)".into()));
        }
    }
    let var = noise_variances(red.r_r()?)?;
    let n_cells = grid.n_cells();
    let n_states = n_cells + 1;
    let us: Vec<Vector> = spaces.u_grid.centers();
    let ws: Vec<Vector> = spaces.w_grid.centers();
    let (n_u, n_w) = (us.len(), ws.len());

    let per_source: Vec<Vec<RowOut>> = (0..n_cells)
        .into_par_iter()
        .map(|x| {
            let xc = grid.center(x);
            let mut rows = Vec::with_capacity(n_u * n_w);
            for u in &us {
                for w in &ws {
                    let mean = red.mean(&xc, u, w);
                    rows.push(compute_row(grid, &mean, &var, mode)?);
                }
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;

    let absorbing_row = || match mode {
        KernelMode::Dense => {
            let mut r = vec![0.0; n_states];
            r[n_cells] = 1.0;
            RowOut::Dense(r)
        }
        KernelMode::Sparse { .. } => RowOut::Sparse(vec![(n_cells as u32, 1.0)], 0.0),
    };
    let rows = per_source
        .into_iter()
        .flatten()
        .chain((0..n_u * n_w).map(|_| absorbing_row()));

    let storage = match mode {
        KernelMode::Dense => {
            let mut data = Vec::with_capacity(n_states * n_u * n_w * n_states);
            for r in rows {
                if let RowOut::Dense(v) = r {
                    data.extend(v);
                }
            }
            Storage::Dense(data)
        }
        KernelMode::Sparse { .. } => {
            let mut row_ptr = vec![0];
            let (mut cols, mut vals, mut truncated) = (Vec::new(), Vec::new(), Vec::new());
            for r in rows {
                if let RowOut::Sparse(e, t) = r {
                    for (c, p) in e {
                        cols.push(c);
                        vals.push(p);
                    }
                    truncated.push(t);
                    row_ptr.push(cols.len());
                }
            }
            Storage::Sparse {
                row_ptr,
                cols,
                vals,
                truncated,
            }
        }
    };
    Ok(TransitionKernel {
        n_states,
        n_u,
        n_w,
        threshold: match mode {
            KernelMode::Dense => 0.0,
            KernelMode::Sparse { threshold } => threshold,
        },
        storage,
    })
}
