//! (ε, δ)-approximate probabilistic relations: γ terms, LMI conditions,
//! input-constraint intersection, the M/K/L semidefinite program, the
//! sampling search and the interface function.

pub mod sdp;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::abstraction::{rep_point, AbstractSpaces};
use crate::error::{Error, Result};
use crate::linalg::{
    self, box_vertices, inverse, lambda_max, lambda_min, m_norm, mat_serde, symmetrize, Mat,
    Vector,
};
use crate::model::{ReducedOrderGame, StochasticGame};
use crate::stats::chi2_inv;
use sdp::{AffineBlock, BarrierOptions};

/// Tolerance for self-produced certificates.
pub const STRICT_TOL: f64 = 1e-7;
/// Tolerance for matrices printed to four decimals.
pub const RELAXED_TOL: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gammas {
    pub gamma0: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub gamma4: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverInfo {
    pub method: String,
    pub newton_steps: usize,
    pub min_eig: f64,
    pub samples_tried: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub name: String,
    pub margin: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub tolerance: f64,
    pub kappa_min: f64,
    pub gammas: Gammas,
    pub conditions: Vec<Condition>,
    pub all_pass: bool,
}

impl VerificationReport {
    pub fn failed(&self) -> Vec<&Condition> {
        self.conditions.iter().filter(|c| !c.pass).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationCertificate {
    #[serde(rename = "M", with = "mat_serde")]
    pub m: Mat,
    pub eps: f64,
    pub delta: f64,
    #[serde(rename = "K", with = "mat_serde")]
    pub k: Mat,
    #[serde(rename = "L", with = "mat_serde")]
    pub l: Mat,
    #[serde(rename = "R_tilde", with = "mat_serde")]
    pub r_tilde: Mat,
    #[serde(rename = "R_r", with = "mat_serde")]
    pub r_r: Mat,
    /// `None` in hand-written certificates; then κ_min is used.
    #[serde(default)]
    pub kappa: Option<f64>,
    #[serde(rename = "M_w", with = "mat_serde")]
    pub m_w: Mat,
    pub eps_w: f64,
    #[serde(default)]
    pub gammas: Option<Gammas>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verification: Option<VerificationReport>,
}

impl RelationCertificate {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputConstraintSet {
    #[serde(with = "mat_serde")]
    pub a_tilde: Mat,
    pub b_tilde: Vec<f64>,
    /// Row i is α_i = Ã_i / b̃_i.
    #[serde(with = "mat_serde")]
    pub alphas: Mat,
}

/// R̃ = (BᵀB)⁺BᵀP·B_r.
pub fn default_r_tilde(game: &StochasticGame, red: &ReducedOrderGame) -> Mat {
    let b = &game.b;
    linalg::pinv(&(b.transpose() * b)) * b.transpose() * &red.p * &red.b_r
}

/// R̂_r = (PᵀMP)⁻¹PᵀMR.
pub fn optimal_abstract_noise(m: &Mat, p: &Mat, r: &Mat) -> Result<Mat> {
    let ptm = p.transpose() * m;
    let inv = inverse(&(&ptm * p), "PᵀMP")?;
    Ok(inv * ptm * r)
}

#[allow(clippy::too_many_arguments)]
pub fn compute_gammas(
    game: &StochasticGame,
    red: &ReducedOrderGame,
    spaces: &AbstractSpaces,
    m: &Mat,
    delta: f64,
    r_tilde: &Mat,
    r_r: &Mat,
    m_w: &Mat,
    eps_w: f64,
) -> Result<Gammas> {
    if !linalg::is_pd(m) {
        return Err(Error::CertificateInvalid("M is not positive definite".into()));
    }
    let mw_isqrt = linalg::inv_sqrt_pd(m_w)?;
    let dmd = &mw_isqrt * game.d.transpose() * m * &game.d * &mw_isqrt;
    let gamma0 = eps_w * lambda_max(&dmd).max(0.0).sqrt();

    let diff_b = &game.b * r_tilde - &red.p * &red.b_r;
    let gamma1 = spaces
        .u_prime_centers()
        .iter()
        .map(|u| m_norm(m, &(&diff_b * u)))
        .fold(0.0, f64::max);

    let a_n = &game.r - &red.p * r_r;
    let gamma2 = if delta == 0.0 {
        let mismatch = a_n.norm();
        if mismatch > 1e-12 * (1.0 + game.r.norm()) {
            return Err(Error::InfeasibleNoiseMismatch(mismatch));
        }
        0.0
    } else {
        let c = chi2_inv(1.0 - delta, game.n_noise());
        c.sqrt() * lambda_max(&(a_n.transpose() * m * &a_n)).max(0.0).sqrt()
    };

    let gamma3 = box_vertices(&spaces.grid.half_widths())
        .iter()
        .map(|beta| m_norm(m, &(&red.p * beta)))
        .fold(0.0, f64::max);

    let bs = &game.b * &red.s;
    let gamma4 = spaces
        .w_centers()
        .iter()
        .map(|w| m_norm(m, &(&bs * w)))
        .fold(0.0, f64::max);

    Ok(Gammas {
        gamma0,
        gamma1,
        gamma2,
        gamma3,
        gamma4,
        total: gamma0 + gamma1 + gamma2 + gamma3 + gamma4,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmiReport {
    pub feasible: bool,
    pub kappa_min: f64,
    /// λ_min(M − CᵀC).
    pub output_margin: f64,
    /// (1 − γ̃/ε) − √κ_min.
    pub contraction_margin: f64,
}

/// max over extreme slopes b of λ_max(N⁻ᵀ A_bᵀ M A_b N⁻¹), NᵀN = M.
pub fn kappa_min(game: &StochasticGame, m: &Mat, k: &Mat, l: &Mat) -> Result<f64> {
    let chol = symmetrize(m)
        .cholesky()
        .ok_or_else(|| Error::CertificateInvalid("M is not positive definite".into()))?;
    // M = L Lᵀ, so N = Lᵀ
    let n_inv = inverse(&chol.l().transpose(), "Cholesky factor")?;
    let mut worst = 0.0f64;
    for b in game.phi.extreme_slopes() {
        let a_b = &game.a + &game.b * k + (&game.b * l + &game.e * &game.f) * b;
        let q = n_inv.transpose() * a_b.transpose() * m * &a_b * &n_inv;
        worst = worst.max(lambda_max(&q));
    }
    Ok(worst)
}

pub fn check_lmi_conditions(
    game: &StochasticGame,
    m: &Mat,
    k: &Mat,
    l: &Mat,
    eps: f64,
    gamma_total: f64,
    tol: f64,
) -> Result<LmiReport> {
    let kmin = kappa_min(game, m, k, l)?;
    let output_margin = lambda_min(&(m - game.c.transpose() * &game.c));
    let rhs = 1.0 - gamma_total / eps;
    let contraction_margin = rhs - kmin.max(0.0).sqrt();
    Ok(LmiReport {
        feasible: output_margin >= -tol && contraction_margin >= -tol && rhs <= 1.0 + tol,
        kappa_min: kmin,
        output_margin,
        contraction_margin,
    })
}

pub fn intersect_input_constraints(
    game: &StochasticGame,
    red: &ReducedOrderGame,
    spaces: &AbstractSpaces,
    r_tilde: &Mat,
) -> Result<InputConstraintSet> {
    let a_u = &game.u_polytope.a_u;
    let rows = a_u.nrows();
    // the shift separates into a state part and an input part
    let mut state_max = vec![f64::NEG_INFINITY; rows];
    for x in spaces.grid.centers() {
        let fx = (&red.f_r * &x)[0];
        let v = a_u * (&red.qm * &x + &red.g * red.phi.eval(fx));
        for i in 0..rows {
            state_max[i] = state_max[i].max(v[i]);
        }
    }
    let mut input_max = vec![f64::NEG_INFINITY; rows];
    for u in spaces.u_prime_centers() {
        let v = a_u * (r_tilde * &u);
        for i in 0..rows {
            input_max[i] = input_max[i].max(v[i]);
        }
    }
    let b_tilde: Vec<f64> = (0..rows)
        .map(|i| game.u_polytope.b_u[i] - state_max[i] - input_max[i])
        .collect();
    if let Some((row, &value)) = b_tilde.iter().enumerate().find(|(_, v)| **v <= 0.0) {
        return Err(Error::EmptyInterior { row, value });
    }
    let alphas = Mat::from_fn(rows, a_u.ncols(), |i, j| a_u[(i, j)] / b_tilde[i]);
    Ok(InputConstraintSet {
        a_tilde: a_u.clone(),
        b_tilde,
        alphas,
    })
}

/// 1 − ε²·max_{i,b} α_i(K+bL)M⁻¹(K+bL)ᵀα_iᵀ; nonnegative when the input constraints hold.
pub fn input_constraint_margin(
    game: &StochasticGame,
    constraints: &InputConstraintSet,
    m: &Mat,
    k: &Mat,
    l: &Mat,
    eps: f64,
) -> Result<f64> {
    let m_inv = inverse(m, "M")?;
    let mut worst = 0.0f64;
    for b in game.phi.extreme_slopes() {
        let kb = k + l * b;
        let q = &kb * &m_inv * kb.transpose();
        for i in 0..constraints.alphas.nrows() {
            let a = constraints.alphas.row(i);
            worst = worst.max((a * &q * a.transpose())[(0, 0)]);
        }
    }
    Ok(1.0 - eps * eps * worst)
}

/// Re-derives the γ terms from the certificate data and checks every condition.
pub fn verify_certificate(
    game: &StochasticGame,
    red: &ReducedOrderGame,
    spaces: &AbstractSpaces,
    cert: &RelationCertificate,
    tol: f64,
) -> Result<VerificationReport> {
    let mut conditions = Vec::new();
    let mut push = |name: &str, margin: f64, pass: bool| {
        conditions.push(Condition {
            name: name.to_string(),
            margin,
            pass,
        })
    };
    let m_pd = lambda_min(&cert.m);
    push("M positive definite", m_pd, m_pd > 0.0);
    let mw_pd = lambda_min(&cert.m_w);
    push("M_w positive definite", mw_pd, mw_pd > 0.0);
    if m_pd <= 0.0 || mw_pd <= 0.0 {
        return Err(Error::CertificateInvalid("M or M_w not positive definite".into()));
    }
    let gammas = compute_gammas(
        game, red, spaces, &cert.m, cert.delta, &cert.r_tilde, &cert.r_r, &cert.m_w, cert.eps_w,
    )?;
    let lmi = check_lmi_conditions(game, &cert.m, &cert.k, &cert.l, cert.eps, gammas.total, tol)?;
    push("M >= C^T C", lmi.output_margin, lmi.output_margin >= -tol);
    push(
        "sqrt(kappa_min) <= 1 - gamma/eps",
        lmi.contraction_margin,
        lmi.contraction_margin >= -tol,
    );
    let kappa = cert.kappa.unwrap_or(lmi.kappa_min);
    let declared = (1.0 - kappa.max(0.0).sqrt()) - gammas.total / cert.eps;
    push("gamma <= eps (1 - sqrt(kappa))", declared, declared >= -tol);
    let kappa_ok = lmi.kappa_min - kappa;
    push("kappa_min <= kappa", -kappa_ok, kappa_ok <= tol);
    match intersect_input_constraints(game, red, spaces, &cert.r_tilde) {
        Ok(cs) => {
            let margin = input_constraint_margin(game, &cs, &cert.m, &cert.k, &cert.l, cert.eps)?;
            push("input constraints", margin, margin >= -tol);
        }
        Err(Error::EmptyInterior { value, .. }) => push("input constraints", value, false),
        Err(e) => return Err(e),
    }
    if let Some(stored) = &cert.gammas {
        let diff = (stored.total - gammas.total).abs();
        push("stored gamma total", -diff, diff <= tol.max(1e-9) * (1.0 + gammas.total));
    }
    let all_pass = conditions.iter().all(|c| c.pass);
    Ok(VerificationReport {
        tolerance: tol,
        kappa_min: lmi.kappa_min,
        gammas,
        conditions,
        all_pass,
    })
}

#[derive(Debug, Clone)]
pub struct MklSolution {
    pub m: Mat,
    pub k: Mat,
    pub l: Mat,
    pub newton_steps: usize,
    pub min_eig: f64,
}

const M_BAR_CAP: f64 = 1e6;

struct Layout {
    s: usize,
    m: usize,
    use_l: bool,
}

impl Layout {
    fn n_sym(&self) -> usize {
        self.s * (self.s + 1) / 2
    }

    fn n_vars(&self) -> usize {
        self.n_sym() + self.m * self.s * if self.use_l { 2 } else { 1 }
    }

    fn unpack(&self, x: &[f64]) -> (Mat, Mat, Mat) {
        let s = self.s;
        let mut mb = Mat::zeros(s, s);
        let mut k = 0;
        for i in 0..s {
            for j in i..s {
                mb[(i, j)] = x[k];
                mb[(j, i)] = x[k];
                k += 1;
            }
        }
        let kb = Mat::from_row_slice(self.m, s, &x[k..k + self.m * s]);
        let lb = if self.use_l {
            let o = k + self.m * s;
            Mat::from_row_slice(self.m, s, &x[o..o + self.m * s])
        } else {
            Mat::zeros(self.m, s)
        };
        (mb, kb, lb)
    }
}

fn block2(a: &Mat, b: &Mat, d: &Mat) -> Mat {
    linalg::vstack(&linalg::hstack(a, b), &linalg::hstack(&b.transpose(), d))
}

/// max log det M̄ subject to the four LMI families; returns M = M̄⁻¹, K = K̄M, L = L̄M.
pub fn solve_mkl_sdp(
    game: &StochasticGame,
    constraints: &InputConstraintSet,
    eps: f64,
    kappa: f64,
) -> Option<MklSolution> {
    let slopes = game.phi.extreme_slopes();
    let lay = Layout {
        s: game.n_x(),
        m: game.n_u(),
        use_l: slopes.iter().any(|b| *b != 0.0),
    };
    let n = lay.n_vars();
    let s = lay.s;
    let c = &game.c;
    let ef = &game.e * &game.f;
    let mut blocks = Vec::new();
    blocks.push(AffineBlock::from_fn(n, |x| lay.unpack(x).0));
    blocks.push(AffineBlock::from_fn(n, |x| {
        let mb = lay.unpack(x).0;
        block2(&mb, &(&mb * c.transpose()), &Mat::identity(c.nrows(), c.nrows()))
    }));
    for &b in &slopes {
        blocks.push(AffineBlock::from_fn(n, |x| {
            let (mb, kb, lb) = lay.unpack(x);
            let ab = (&game.a + &ef * b) * &mb + &game.b * (kb + lb * b);
            block2(&mb, &ab, &(&mb * kappa))
        }));
        for i in 0..constraints.alphas.nrows() {
            let alpha = constraints.alphas.rows(i, 1).into_owned();
            blocks.push(AffineBlock::from_fn(n, |x| {
                let (mb, kb, lb) = lay.unpack(x);
                let top = Mat::from_element(1, 1, 1.0 / (eps * eps));
                block2(&top, &(&alpha * (kb + lb * b)), &mb)
            }));
        }
    }
    blocks.push(AffineBlock::from_fn(n, |x| {
        Mat::identity(s, s) * M_BAR_CAP - lay.unpack(x).0
    }));

    let cc = (c * c.transpose()).amax().max(1e-12);
    let mut x0 = vec![0.0; n];
    let mut k = 0;
    for i in 0..s {
        for j in i..s {
            if i == j {
                x0[k] = 0.5 / cc;
            }
            k += 1;
        }
    }
    let sol = sdp::maximize_log_det(&blocks, 0, &x0, &BarrierOptions::default())?;
    if sol.min_eig <= 0.0 {
        return None;
    }
    let (mb, kb, lb) = lay.unpack(&sol.x);
    let m = symmetrize(&inverse(&mb, "M_bar").ok()?);
    Some(MklSolution {
        k: kb * &m,
        l: lb * &m,
        m,
        newton_steps: sol.newton_steps,
        min_eig: sol.min_eig,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationSettings {
    pub delta: f64,
    pub eps_range: (f64, f64),
    pub eps_samples: usize,
    pub kappa_samples: usize,
    #[serde(rename = "M_w", with = "mat_serde")]
    pub m_w: Mat,
    pub eps_w: f64,
    #[serde(rename = "R_tilde", default, with = "linalg::opt_mat_serde")]
    pub r_tilde: Option<Mat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub certificate: Option<RelationCertificate>,
    pub samples_tried: usize,
    pub sdp_feasible: usize,
    /// Largest ε(1−√κ) − γ̃ seen among SDP-feasible samples.
    pub best_slack: Option<f64>,
    pub noise_mismatch: Option<f64>,
    pub constraints: Option<InputConstraintSet>,
}

pub fn eps_lattice(range: (f64, f64), n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![range.0];
    }
    (0..n)
        .map(|i| range.0 + (range.1 - range.0) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Interior midpoints of [0, 1].
pub fn kappa_lattice(n: usize) -> Vec<f64> {
    (0..n).map(|j| (j as f64 + 0.5) / n as f64).collect()
}

enum SampleOutcome {
    Infeasible,
    Mismatch(f64),
    Rejected(f64),
    Found(Box<RelationCertificate>, f64),
}

/// Sampling search over (ε, κ); smallest ε first, then smallest κ.
pub fn establish_relation(
    game: &StochasticGame,
    red: &ReducedOrderGame,
    spaces: &AbstractSpaces,
    settings: &RelationSettings,
) -> Result<SearchReport> {
    spaces.check_against(game, red)?;
    if !(0.0..1.0).contains(&settings.delta) {
        return Err(Error::Config("delta must lie in [0, 1)".into()));
    }
    let r_tilde = settings
        .r_tilde
        .clone()
        .unwrap_or_else(|| default_r_tilde(game, red));
    let constraints = intersect_input_constraints(game, red, spaces, &r_tilde)?;
    let mut report = SearchReport {
        certificate: None,
        samples_tried: 0,
        sdp_feasible: 0,
        best_slack: None,
        noise_mismatch: None,
        constraints: Some(constraints.clone()),
    };
    // R ∈ im P is independent of M
    if settings.delta == 0.0 {
        let proj = &red.p * linalg::pinv(&red.p) * &game.r;
        let mismatch = (&game.r - proj).norm();
        if mismatch > 1e-12 * (1.0 + game.r.norm()) {
            report.noise_mismatch = Some(mismatch);
            return Ok(report);
        }
    }
    let kappas = kappa_lattice(settings.kappa_samples);
    for eps in eps_lattice(settings.eps_range, settings.eps_samples) {
        let outcomes: Vec<SampleOutcome> = kappas
            .par_iter()
            .map(|&kappa| {
                let Some(sol) = solve_mkl_sdp(game, &constraints, eps, kappa) else {
                    return SampleOutcome::Infeasible;
                };
                let r_r = match optimal_abstract_noise(&sol.m, &red.p, &game.r) {
                    Ok(r) => r,
                    Err(_) => return SampleOutcome::Infeasible,
                };
                let gammas = match compute_gammas(
                    game, red, spaces, &sol.m, settings.delta, &r_tilde, &r_r, &settings.m_w,
                    settings.eps_w,
                ) {
                    Ok(g) => g,
                    Err(Error::InfeasibleNoiseMismatch(v)) => return SampleOutcome::Mismatch(v),
                    Err(_) => return SampleOutcome::Infeasible,
                };
                let slack = eps * (1.0 - kappa.sqrt()) - gammas.total;
                if slack < 0.0 {
                    return SampleOutcome::Rejected(slack);
                }
                let mut cert = RelationCertificate {
                    m: sol.m,
                    eps,
                    delta: settings.delta,
                    k: sol.k,
                    l: sol.l,
                    r_tilde: r_tilde.clone(),
                    r_r,
                    kappa: Some(kappa),
                    m_w: settings.m_w.clone(),
                    eps_w: settings.eps_w,
                    gammas: Some(gammas),
                    solver: Some(SolverInfo {
                        method: "log-det barrier".into(),
                        newton_steps: sol.newton_steps,
                        min_eig: sol.min_eig,
                        samples_tried: 0,
                    }),
                    verification: None,
                };
                match verify_certificate(game, red, spaces, &cert, STRICT_TOL) {
                    Ok(v) if v.all_pass => {
                        cert.verification = Some(v);
                        SampleOutcome::Found(Box::new(cert), slack)
                    }
                    _ => SampleOutcome::Rejected(slack),
                }
            })
            .collect();
        for out in outcomes {
            report.samples_tried += 1;
            match out {
                SampleOutcome::Infeasible => {}
                SampleOutcome::Mismatch(v) => report.noise_mismatch = Some(v),
                SampleOutcome::Rejected(slack) => {
                    report.sdp_feasible += 1;
                    report.best_slack = Some(report.best_slack.map_or(slack, |b| b.max(slack)));
                }
                SampleOutcome::Found(mut cert, slack) => {
                    report.sdp_feasible += 1;
                    report.best_slack = Some(report.best_slack.map_or(slack, |b| b.max(slack)));
                    if let Some(info) = cert.solver.as_mut() {
                        info.samples_tried = report.samples_tried;
                    }
                    report.certificate = Some(*cert);
                    return Ok(report);
                }
            }
        }
    }
    Ok(report)
}

pub fn in_relation(cert: &RelationCertificate, p: &Mat, x: &Vector, xr: &Vector) -> bool {
    let d = x - p * xr;
    let v = (d.transpose() * &cert.m * &d)[(0, 0)];
    v <= cert.eps * cert.eps * (1.0 + 1e-12)
}

/// x̂0 = Π_x((PᵀMP)⁻¹PᵀMx0) with the membership post-check.
pub fn initial_abstract_state(
    cert: &RelationCertificate,
    red: &ReducedOrderGame,
    spaces: &AbstractSpaces,
    x0: &Vector,
) -> Result<usize> {
    let proj = optimal_abstract_noise(&cert.m, &red.p, &Mat::from_column_slice(x0.len(), 1, x0.as_slice()))?;
    let xr = proj.column(0).into_owned();
    let idx = rep_point(&spaces.grid, xr.as_slice());
    let Some(center) = spaces.state_center(idx) else {
        return Err(Error::NoInitialAbstractState {
            distance: f64::INFINITY,
            eps: cert.eps,
        });
    };
    if !in_relation(cert, &red.p, x0, &center) {
        let d = x0 - &red.p * &center;
        return Err(Error::NoInitialAbstractState {
            distance: (d.transpose() * &cert.m * &d)[(0, 0)].sqrt(),
            eps: cert.eps,
        });
    }
    Ok(idx)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterfaceOutput {
    pub u: Vector,
    pub within_polytope: bool,
}

/// ν = (K + b(x,x̂)L)(x − Px̂) + Qm·x̂ + R̃û + G·φ(F_r x̂).
pub fn interface_input(
    cert: &RelationCertificate,
    game: &StochasticGame,
    red: &ReducedOrderGame,
    x: &Vector,
    xr: &Vector,
    ur: &Vector,
) -> InterfaceOutput {
    let b = crate::model::slope_gain(game, red, x, xr);
    let err = x - &red.p * xr;
    let fx = (&red.f_r * xr)[0];
    let u = (&cert.k + &cert.l * b) * err
        + &red.qm * xr
        + &cert.r_tilde * ur
        + &red.g * red.phi.eval(fx);
    let within_polytope = game.u_polytope.contains(&u, 1e-9);
    InterfaceOutput { u, within_polytope }
}
