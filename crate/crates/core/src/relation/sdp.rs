//! Small dense LMI solver: log-det barrier with damped Newton steps.
//!
//! Constraints are affine symmetric blocks F_j(x) = F_j0 + Σ_i x_i F_ji ⪰ 0.
//! Phase I minimises a common shift s with F_j(x) + sI ⪰ 0; phase II follows
//! the central path of max log det of one designated block.

use crate::linalg::Mat;

#[derive(Debug, Clone)]
pub struct AffineBlock {
    pub f0: Mat,
    pub terms: Vec<(usize, Mat)>,
}

impl AffineBlock {
    /// Builds the block from an affine map evaluated at 0 and at each unit vector.
    pub fn from_fn(n_vars: usize, f: impl Fn(&[f64]) -> Mat) -> Self {
        let mut x = vec![0.0; n_vars];
        let f0 = f(&x);
        let mut terms = Vec::new();
        for i in 0..n_vars {
            x[i] = 1.0;
            let fi = f(&x) - &f0;
            x[i] = 0.0;
            if fi.amax() > 0.0 {
                terms.push((i, fi));
            }
        }
        Self { f0, terms }
    }

    pub fn dim(&self) -> usize {
        self.f0.nrows()
    }

    pub fn eval(&self, x: &[f64]) -> Mat {
        let mut m = self.f0.clone();
        for (i, fi) in &self.terms {
            if x[*i] != 0.0 {
                m += fi * x[*i];
            }
        }
        m
    }

    fn shifted(&self, s_index: usize) -> Self {
        let mut b = self.clone();
        b.terms.push((s_index, Mat::identity(self.dim(), self.dim())));
        b
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BarrierOptions {
    pub newton_tol: f64,
    pub max_newton: usize,
    pub gap_tol: f64,
    pub mu: f64,
    pub phase1_margin: f64,
}

impl Default for BarrierOptions {
    fn default() -> Self {
        Self {
            newton_tol: 1e-9,
            max_newton: 80,
            gap_tol: 1e-4,
            mu: 10.0,
            phase1_margin: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmiSolution {
    pub x: Vec<f64>,
    pub newton_steps: usize,
    /// Smallest eigenvalue over all blocks at `x`.
    pub min_eig: f64,
}

// −log det via Cholesky, `None` if not positive definite.
fn neg_log_det(m: &Mat) -> Option<f64> {
    let ch = crate::linalg::symmetrize(m).cholesky()?;
    let l = ch.l();
    let mut acc = 0.0;
    for i in 0..l.nrows() {
        let d = l[(i, i)];
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        acc -= 2.0 * d.ln();
    }
    Some(acc)
}

struct Problem<'a> {
    blocks: &'a [AffineBlock],
    weights: &'a [f64],
    lin: &'a [f64],
}

impl Problem<'_> {
    fn value(&self, x: &[f64]) -> Option<f64> {
        let mut v: f64 = self.lin.iter().zip(x).map(|(c, xi)| c * xi).sum();
        for (b, w) in self.blocks.iter().zip(self.weights) {
            v += w * neg_log_det(&b.eval(x))?;
        }
        Some(v)
    }

    fn grad_hess(&self, x: &[f64]) -> Option<(Vec<f64>, Mat)> {
        let n = x.len();
        let mut g = self.lin.to_vec();
        let mut h = Mat::zeros(n, n);
        for (b, &w) in self.blocks.iter().zip(self.weights) {
            let s = crate::linalg::symmetrize(&b.eval(x));
            let inv = s.cholesky()?.inverse();
            let ws: Vec<(usize, Mat)> = b.terms.iter().map(|(i, fi)| (*i, &inv * fi)).collect();
            for (a, (i, wi)) in ws.iter().enumerate() {
                g[*i] -= w * wi.trace();
                for (k, wk) in ws.iter().skip(a) {
                    // tr(Wi Wk) = Σ Wi ∘ Wkᵀ
                    let t: f64 = wi.iter().zip(wk.transpose().iter()).map(|(p, q)| p * q).sum();
                    h[(*i, *k)] += w * t;
                    if *k != *i {
                        h[(*k, *i)] += w * t;
                    }
                }
            }
        }
        Some((g, h))
    }

    /// Damped Newton centring; `stop` may end the iteration early.
    fn center(
        &self,
        x: &mut Vec<f64>,
        opts: &BarrierOptions,
        stop: &dyn Fn(&[f64]) -> bool,
    ) -> Option<usize> {
        let n = x.len();
        let mut steps = 0;
        let mut fx = self.value(x)?;
        for _ in 0..opts.max_newton {
            if stop(x) {
                break;
            }
            let (g, mut h) = self.grad_hess(x)?;
            let scale = (0..n).map(|i| h[(i, i)].abs()).fold(1e-300, f64::max);
            for i in 0..n {
                h[(i, i)] += 1e-12 * scale;
            }
            let gv = nalgebra::DVector::from_vec(g.clone());
            let dx = match h.clone().cholesky() {
                Some(ch) => -ch.solve(&gv),
                None => -h.lu().solve(&gv)?,
            };
            let dec: f64 = -gv.dot(&dx);
            if !dec.is_finite() || dec / 2.0 < opts.newton_tol {
                break;
            }
            let mut alpha = 1.0;
            let mut accepted = false;
            while alpha > 1e-12 {
                let trial: Vec<f64> = x.iter().zip(dx.iter()).map(|(a, d)| a + alpha * d).collect();
                if let Some(ft) = self.value(&trial) {
                    if ft <= fx - 0.25 * alpha * dec {
                        *x = trial;
                        fx = ft;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            steps += 1;
            if !accepted {
                break;
            }
        }
        Some(steps)
    }
}

pub fn min_eigenvalue(blocks: &[AffineBlock], x: &[f64]) -> f64 {
    blocks
        .iter()
        .map(|b| crate::linalg::lambda_min(&b.eval(x)))
        .fold(f64::INFINITY, f64::min)
}

/// Finds a strictly feasible point, starting from `x0`. `None` when the
/// phase-I optimum certifies that no strictly feasible point exists.
pub fn find_feasible(
    blocks: &[AffineBlock],
    x0: &[f64],
    opts: &BarrierOptions,
) -> Option<(Vec<f64>, usize)> {
    let n = x0.len();
    if min_eigenvalue(blocks, x0) > opts.phase1_margin {
        return Some((x0.to_vec(), 0));
    }
    let shifted: Vec<AffineBlock> = blocks.iter().map(|b| b.shifted(n)).collect();
    let total_dim: f64 = blocks.iter().map(|b| b.dim() as f64).sum();
    let weights = vec![1.0; blocks.len()];
    let mut x = x0.to_vec();
    x.push((-min_eigenvalue(blocks, x0)).max(0.0) + 1.0);
    let mut lin = vec![0.0; n + 1];
    let mut t = 1.0;
    let mut steps = 0;
    let margin = opts.phase1_margin;
    while t < 1e10 {
        lin[n] = t;
        let prob = Problem {
            blocks: &shifted,
            weights: &weights,
            lin: &lin,
        };
        steps += prob.center(&mut x, opts, &|z: &[f64]| z[n] < -margin)?;
        let s = x[n];
        if s < 0.0 {
            x.truncate(n);
            return Some((x, steps));
        }
        if s - total_dim / t > 0.0 {
            return None;
        }
        t *= opts.mu;
    }
    None
}

/// Maximises log det of `blocks[objective]` over the strictly feasible set.
pub fn maximize_log_det(
    blocks: &[AffineBlock],
    objective: usize,
    x0: &[f64],
    opts: &BarrierOptions,
) -> Option<LmiSolution> {
    let (mut x, mut steps) = find_feasible(blocks, x0, opts)?;
    let total_dim: f64 = blocks.iter().map(|b| b.dim() as f64).sum();
    let lin = vec![0.0; x.len()];
    let mut t = 1.0;
    loop {
        let mut weights = vec![1.0; blocks.len()];
        weights[objective] += t;
        let prob = Problem {
            blocks,
            weights: &weights,
            lin: &lin,
        };
        steps += prob.center(&mut x, opts, &|_: &[f64]| false)?;
        if total_dim / t < opts.gap_tol {
            break;
        }
        t *= opts.mu;
    }
    Some(LmiSolution {
        min_eig: min_eigenvalue(blocks, &x),
        x,
        newton_steps: steps,
    })
}
