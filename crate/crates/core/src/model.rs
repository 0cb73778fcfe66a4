//! Concrete game dynamics, slope-restricted nonlinearities and reduced-order models.

use nalgebra::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::linalg::{self, check_shape, mat_serde, opt_mat_serde, pinv, Mat, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonlinKind {
    Zero,
    Sine,
    /// a·sin(v)
    ScaledSine,
    /// clamp(v, −a, a)
    Saturation,
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NonlinFile", into = "NonlinFile")]
pub struct SlopeNonlinearity {
    pub kind: NonlinKind,
    pub param: f64,
    pub b_lower: f64,
    pub b_upper: f64,
}

#[derive(Serialize, Deserialize)]
struct NonlinFile {
    kind: NonlinKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    params: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    b_lower: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    b_upper: Option<f64>,
}

impl TryFrom<NonlinFile> for SlopeNonlinearity {
    type Error = Error;

    fn try_from(f: NonlinFile) -> Result<Self> {
        let param = f.params.first().copied().unwrap_or(1.0);
        let mut nl = SlopeNonlinearity::new(f.kind, param)?;
        // user bounds may only widen the analytic sector
        if let Some(lo) = f.b_lower {
            if lo > nl.b_lower {
                return Err(Error::Config(format!(
                    "b_lower {lo} excludes the analytic slope bound {}",
                    nl.b_lower
                )));
            }
            nl.b_lower = lo;
        }
        if let Some(hi) = f.b_upper {
            if hi < nl.b_upper {
                return Err(Error::Config(format!(
                    "b_upper {hi} excludes the analytic slope bound {}",
                    nl.b_upper
                )));
            }
            nl.b_upper = hi;
        }
        Ok(nl)
    }
}

impl From<SlopeNonlinearity> for NonlinFile {
    fn from(n: SlopeNonlinearity) -> Self {
        let params = match n.kind {
            NonlinKind::ScaledSine | NonlinKind::Saturation => vec![n.param],
            _ => Vec::new(),
        };
        NonlinFile {
            kind: n.kind,
            params,
            b_lower: Some(n.b_lower),
            b_upper: Some(n.b_upper),
        }
    }
}

impl SlopeNonlinearity {
    pub fn new(kind: NonlinKind, param: f64) -> Result<Self> {
        let (lo, hi) = match kind {
            NonlinKind::Zero => (0.0, 0.0),
            NonlinKind::Sine => (-1.0, 1.0),
            NonlinKind::ScaledSine => (-param.abs(), param.abs()),
            NonlinKind::Saturation => {
                if param <= 0.0 {
                    return Err(Error::Config("saturation level must be positive".into()));
                }
                (0.0, 1.0)
            }
            NonlinKind::Tanh => (0.0, 1.0),
        };
        Ok(Self {
            kind,
            param,
            b_lower: lo,
            b_upper: hi,
        })
    }

    pub fn zero() -> Self {
        Self::new(NonlinKind::Zero, 0.0).unwrap()
    }

    pub fn sine() -> Self {
        Self::new(NonlinKind::Sine, 1.0).unwrap()
    }

    pub fn eval(&self, v: f64) -> f64 {
        match self.kind {
            NonlinKind::Zero => 0.0,
            NonlinKind::Sine => v.sin(),
            NonlinKind::ScaledSine => self.param * v.sin(),
            NonlinKind::Saturation => v.clamp(-self.param, self.param),
            NonlinKind::Tanh => v.tanh(),
        }
    }

    /// The slope values the LMI conditions are imposed at.
    pub fn extreme_slopes(&self) -> Vec<f64> {
        let mut b = vec![self.b_lower, self.b_upper, 0.0];
        b.sort_by(f64::total_cmp);
        b.dedup();
        b
    }
}

/// `A_u u ≤ b_u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputPolytope {
    #[serde(rename = "A_u", with = "mat_serde")]
    pub a_u: Mat,
    pub b_u: Vec<f64>,
}

impl InputPolytope {
    pub fn from_box(lo: &[f64], hi: &[f64]) -> Result<Self> {
        let m = lo.len();
        if hi.len() != m {
            return Err(dim_err("input box", m, hi.len()));
        }
        let a_u = linalg::vstack(&Mat::identity(m, m), &(-Mat::identity(m, m)));
        let b_u = hi.iter().copied().chain(lo.iter().map(|v| -v)).collect();
        Ok(Self { a_u, b_u })
    }

    pub fn contains(&self, u: &Vector, tol: f64) -> bool {
        let v = &self.a_u * u;
        v.iter().zip(&self.b_u).all(|(a, b)| *a <= b + tol)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl IntervalBox {
    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn clamp(&self, w: &Vector) -> Vector {
        Vector::from_iterator(
            w.len(),
            w.iter().enumerate().map(|(i, v)| v.clamp(self.lo[i], self.hi[i])),
        )
    }

    pub fn contains(&self, w: &Vector) -> bool {
        w.iter()
            .enumerate()
            .all(|(i, v)| *v >= self.lo[i] && *v <= self.hi[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GameFile", into = "GameFile")]
pub struct StochasticGame {
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub d: Mat,
    pub e: Mat,
    pub f: Mat,
    pub r: Mat,
    pub phi: SlopeNonlinearity,
    pub u_polytope: InputPolytope,
    pub w_box: IntervalBox,
    pub x0_set: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum PolytopeFile {
    Poly(InputPolytope),
    Box { box_lo: Vec<f64>, box_hi: Vec<f64> },
}

#[derive(Serialize, Deserialize)]
struct GameFile {
    #[serde(rename = "A", with = "mat_serde")]
    a: Mat,
    #[serde(rename = "B", with = "mat_serde")]
    b: Mat,
    #[serde(rename = "C", with = "mat_serde")]
    c: Mat,
    #[serde(rename = "D", with = "mat_serde")]
    d: Mat,
    #[serde(rename = "E", default, with = "opt_mat_serde")]
    e: Option<Mat>,
    #[serde(rename = "F", default, with = "opt_mat_serde")]
    f: Option<Mat>,
    #[serde(rename = "R", with = "mat_serde")]
    r: Mat,
    #[serde(default = "SlopeNonlinearity::zero")]
    phi: SlopeNonlinearity,
    u_polytope: PolytopeFile,
    w_box: IntervalBox,
    #[serde(default)]
    x0_set: Vec<Vec<f64>>,
}

impl TryFrom<GameFile> for StochasticGame {
    type Error = Error;

    fn try_from(g: GameFile) -> Result<Self> {
        let s = g.a.nrows();
        let u_polytope = match g.u_polytope {
            PolytopeFile::Poly(p) => p,
            PolytopeFile::Box { box_lo, box_hi } => InputPolytope::from_box(&box_lo, &box_hi)?,
        };
        StochasticGame::new(
            g.a,
            g.b,
            g.c,
            g.d,
            g.e.unwrap_or_else(|| Mat::zeros(s, 1)),
            g.f.unwrap_or_else(|| Mat::zeros(1, s)),
            g.r,
            g.phi,
            u_polytope,
            g.w_box,
            g.x0_set,
        )
    }
}

impl From<StochasticGame> for GameFile {
    fn from(g: StochasticGame) -> Self {
        GameFile {
            a: g.a,
            b: g.b,
            c: g.c,
            d: g.d,
            e: Some(g.e),
            f: Some(g.f),
            r: g.r,
            phi: g.phi,
            u_polytope: PolytopeFile::Poly(g.u_polytope),
            w_box: g.w_box,
            x0_set: g.x0_set,
        }
    }
}

impl StochasticGame {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a: Mat,
        b: Mat,
        c: Mat,
        d: Mat,
        e: Mat,
        f: Mat,
        r: Mat,
        phi: SlopeNonlinearity,
        u_polytope: InputPolytope,
        w_box: IntervalBox,
        x0_set: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let s = a.nrows();
        check_shape("A", &a, s, s)?;
        let m = b.ncols();
        check_shape("B", &b, s, m)?;
        check_shape("C", &c, c.nrows(), s)?;
        check_shape("D", &d, s, d.ncols())?;
        check_shape("E", &e, s, 1)?;
        check_shape("F", &f, 1, s)?;
        check_shape("R", &r, s, r.ncols())?;
        check_shape("A_u", &u_polytope.a_u, u_polytope.b_u.len(), m)?;
        if u_polytope.b_u.iter().any(|&v| v <= 0.0) {
            return Err(Error::Config("input polytope must contain the origin strictly".into()));
        }
        if w_box.lo.len() != d.ncols() || w_box.hi.len() != d.ncols() {
            return Err(dim_err("w_box", d.ncols(), w_box.lo.len()));
        }
        if w_box
            .lo
            .iter()
            .zip(&w_box.hi)
            .any(|(l, h)| !(l.is_finite() && h.is_finite() && l <= h))
        {
            return Err(Error::Config("w_box must be bounded with lo <= hi".into()));
        }
        if x0_set.iter().any(|x| x.len() != s) {
            return Err(dim_err("x0_set", s, "other"));
        }
        Ok(Self {
            a,
            b,
            c,
            d,
            e,
            f,
            r,
            phi,
            u_polytope,
            w_box,
            x0_set,
        })
    }

    pub fn n_x(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_u(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_y(&self) -> usize {
        self.c.nrows()
    }

    pub fn n_w(&self) -> usize {
        self.d.ncols()
    }

    pub fn n_noise(&self) -> usize {
        self.r.ncols()
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Ax + Bu + Eφ(Fx) + Dw, i.e. the successor without noise.
    pub fn drift(&self, x: &Vector, u: &Vector, w: &Vector) -> Result<Vector> {
        if x.len() != self.n_x() || u.len() != self.n_u() || w.len() != self.n_w() {
            return Err(dim_err(
                "eval_dynamics",
                format!("x{} u{} w{}", self.n_x(), self.n_u(), self.n_w()),
                format!("x{} u{} w{}", x.len(), u.len(), w.len()),
            ));
        }
        let fx = (&self.f * x)[0];
        Ok(&self.a * x + &self.b * u + &self.e * self.phi.eval(fx) + &self.d * w)
    }

    pub fn output(&self, x: &Vector) -> Vector {
        &self.c * x
    }
}

pub fn eval_dynamics(
    game: &StochasticGame,
    x: &Vector,
    u: &Vector,
    w: &Vector,
    noise: &Vector,
) -> Result<Vector> {
    if noise.len() != game.n_noise() {
        return Err(dim_err("noise", game.n_noise(), noise.len()));
    }
    Ok(game.drift(x, u, w)? + &game.r * noise)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedOrderGame {
    #[serde(rename = "P", with = "mat_serde")]
    pub p: Mat,
    #[serde(rename = "A_r", with = "mat_serde")]
    pub a_r: Mat,
    #[serde(rename = "B_r", with = "mat_serde")]
    pub b_r: Mat,
    #[serde(rename = "C_r", with = "mat_serde")]
    pub c_r: Mat,
    #[serde(rename = "D_r", with = "mat_serde")]
    pub d_r: Mat,
    #[serde(rename = "E_r", with = "mat_serde")]
    pub e_r: Mat,
    #[serde(rename = "F_r", with = "mat_serde")]
    pub f_r: Mat,
    #[serde(rename = "R_r", default, with = "opt_mat_serde")]
    pub r_r: Option<Mat>,
    #[serde(rename = "G", with = "mat_serde")]
    pub g: Mat,
    #[serde(rename = "Qm", with = "mat_serde")]
    pub qm: Mat,
    #[serde(rename = "S", with = "mat_serde")]
    pub s: Mat,
    pub phi: SlopeNonlinearity,
}

impl ReducedOrderGame {
    pub fn n_xr(&self) -> usize {
        self.p.ncols()
    }

    pub fn n_ur(&self) -> usize {
        self.b_r.ncols()
    }

    pub fn r_r(&self) -> Result<&Mat> {
        self.r_r
            .as_ref()
            .ok_or_else(|| Error::Config("reduced noise matrix R_r not set".into()))
    }

    /// A_r x̂ + E_r φ(F_r x̂) + B_r û + D_r ŵ.
    pub fn mean(&self, xr: &Vector, ur: &Vector, w: &Vector) -> Vector {
        let fx = (&self.f_r * xr)[0];
        &self.a_r * xr + &self.e_r * self.phi.eval(fx) + &self.b_r * ur + &self.d_r * w
    }

    /// Largest residual among the three matching equations, relative to 1 + ‖lhs‖.
    pub fn matching_residuals(&self, game: &StochasticGame) -> [f64; 3] {
        let rel = |lhs: &Mat, rhs: &Mat| (lhs - rhs).norm() / (1.0 + lhs.norm());
        [
            rel(&(&game.a * &self.p), &(&self.p * &self.a_r - &game.b * &self.qm)),
            rel(&game.e, &(&self.p * &self.e_r - &game.b * &self.g)),
            rel(&game.d, &(&self.p * &self.d_r - &game.b * &self.s)),
        ]
    }
}

/// Reduced matrices the caller wants kept instead of the minimum-norm choice.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReductionHints {
    #[serde(rename = "A_r", default, with = "opt_mat_serde", skip_serializing_if = "Option::is_none")]
    pub a_r: Option<Mat>,
    #[serde(rename = "E_r", default, with = "opt_mat_serde", skip_serializing_if = "Option::is_none")]
    pub e_r: Option<Mat>,
    #[serde(rename = "D_r", default, with = "opt_mat_serde", skip_serializing_if = "Option::is_none")]
    pub d_r: Option<Mat>,
}

const MATCH_TOL: f64 = 1e-8;

// Solves P X − B Z = Y. Without `fixed`, Z is the minimum-norm residual that brings
// Y + B Z into im P and X = P⁺(Y + B Z); with `fixed` X only Z is free.
fn solve_matching(
    which: &'static str,
    p: &Mat,
    b: &Mat,
    y: &Mat,
    fixed: Option<&Mat>,
) -> Result<(Mat, Mat)> {
    let sr = p.ncols();
    let (x, z) = match fixed {
        Some(x) => {
            check_shape(which, x, sr, y.ncols())?;
            let z = pinv(b) * (p * x - y);
            (x.clone(), z)
        }
        None => {
            let p_pinv = pinv(p);
            let proj_out = Mat::identity(p.nrows(), p.nrows()) - p * &p_pinv;
            let z = -pinv(&(&proj_out * b)) * (&proj_out * y);
            let x = p_pinv * (y + b * &z);
            (x, z)
        }
    };
    let residual = (p * &x - b * &z - y).norm() / (1.0 + y.norm());
    if residual > MATCH_TOL {
        return Err(Error::ImageConditionViolated { which, residual });
    }
    Ok((x, z))
}

pub fn reduce_model(
    game: &StochasticGame,
    p: &Mat,
    b_r: Option<&Mat>,
    hints: &ReductionHints,
) -> Result<ReducedOrderGame> {
    let s = game.n_x();
    if p.nrows() != s || p.ncols() == 0 {
        return Err(dim_err("P", format!("{s}xk"), format!("{}x{}", p.nrows(), p.ncols())));
    }
    if linalg::rank(p) < p.ncols() {
        return Err(Error::Config("P must have full column rank".into()));
    }
    let sr = p.ncols();
    let b_r = b_r.cloned().unwrap_or_else(|| Mat::identity(sr, sr));
    if b_r.nrows() != sr {
        return Err(dim_err("B_r rows", sr, b_r.nrows()));
    }
    let ap = &game.a * p;
    let (a_r, qm) = solve_matching("A P = P A_r - B Qm", p, &game.b, &ap, hints.a_r.as_ref())?;
    let (e_r, g) = solve_matching("E = P E_r - B G", p, &game.b, &game.e, hints.e_r.as_ref())?;
    let (d_r, s_mat) = solve_matching("D = P D_r - B S", p, &game.b, &game.d, hints.d_r.as_ref())?;
    Ok(ReducedOrderGame {
        p: p.clone(),
        a_r,
        b_r,
        c_r: &game.c * p,
        d_r,
        e_r,
        f_r: &game.f * p,
        r_r: None,
        g,
        qm,
        s: s_mat,
        phi: game.phi.clone(),
    })
}

pub fn slope_gain(game: &StochasticGame, red: &ReducedOrderGame, x: &Vector, xr: &Vector) -> f64 {
    let a = (&game.f * x)[0];
    let b = (&game.f * (&red.p * xr))[0];
    let den = a - b;
    if den == 0.0 {
        return 0.0;
    }
    let q = (game.phi.eval(a) - game.phi.eval(b)) / den;
    q.clamp(game.phi.b_lower, game.phi.b_upper)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilizabilityReport {
    pub slope: f64,
    pub stabilizable: bool,
    pub unstable_modes: usize,
}

/// PBH test of (A + b'EF, B) at each extreme slope.
pub fn check_stabilizability(game: &StochasticGame) -> Vec<StabilizabilityReport> {
    let s = game.n_x();
    game.phi
        .extreme_slopes()
        .into_iter()
        .map(|bp| {
            let ab = &game.a + &game.e * &game.f * bp;
            let eig = ab.complex_eigenvalues();
            let mut unstable = 0;
            let mut ok = true;
            for lam in eig.iter() {
                if lam.norm() < 1.0 - 1e-12 {
                    continue;
                }
                unstable += 1;
                let mut pbh = nalgebra::DMatrix::<Complex<f64>>::zeros(s, s + game.n_u());
                for i in 0..s {
                    for j in 0..s {
                        pbh[(i, j)] = Complex::new(ab[(i, j)], 0.0);
                    }
                    pbh[(i, i)] -= lam;
                    for j in 0..game.n_u() {
                        pbh[(i, s + j)] = Complex::new(game.b[(i, j)], 0.0);
                    }
                }
                let sv = pbh.singular_values();
                let tol = 1e-10 * sv.max().max(1.0);
                if sv.iter().filter(|v| **v > tol).count() < s {
                    ok = false;
                }
            }
            StabilizabilityReport {
                slope: bp,
                stabilizable: ok,
                unstable_modes: unstable,
            }
        })
        .collect()
}
