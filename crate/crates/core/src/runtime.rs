//! Refined controller (memory, abstract tracking by shared noise, interface output)
//! and the Monte Carlo closed-loop harness.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::abstraction::{project_w, rep_point, AbstractSpaces};
use crate::dfa::{dfa_step, initial_product_state, Dfa, LabelMap, State};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};
use crate::model::{eval_dynamics, ReducedOrderGame, StochasticGame};
use crate::relation::{in_relation, initial_abstract_state, interface_input, RelationCertificate};
use crate::synthesis::{PolicyTable, Problem};

const RESIDUAL_WARN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerMemory {
    pub x: Vector,
    /// Abstract state index, φ outside the gridded region.
    pub x_hat: usize,
    /// Lattice centre of the reduced state; stays meaningful after leaving the region.
    pub x_hat_center: Vector,
    pub q: State,
    pub w: Option<Vector>,
    pub w_hat: Option<Vector>,
    pub k: usize,
    last_u: Option<(usize, Vector)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerOutput {
    pub u: Vector,
    pub u_hat: usize,
    pub within_polytope: bool,
}

/// Everything the refined controller needs at run time.
#[derive(Debug, Clone, Copy)]
pub struct Controller<'a> {
    pub game: &'a StochasticGame,
    pub red: &'a ReducedOrderGame,
    pub spaces: &'a AbstractSpaces,
    pub cert: &'a RelationCertificate,
    pub dfa: &'a Dfa,
    pub map: &'a LabelMap,
    pub policy: &'a PolicyTable,
}

/// ς = R⁺(x_next − drift); needs R with full column rank.
pub fn recover_noise(
    game: &StochasticGame,
    x: &Vector,
    u: &Vector,
    w: &Vector,
    x_next: &Vector,
) -> Result<Vector> {
    if linalg::rank(&game.r) < game.n_noise() {
        return Err(Error::LiftingUnavailable);
    }
    let resid = x_next - game.drift(x, u, w)?;
    let noise = linalg::pinv(&game.r) * &resid;
    let miss = (&resid - &game.r * &noise).norm();
    if miss > RESIDUAL_WARN * (1.0 + resid.norm()) {
        log::warn!("state update leaves im R by {miss:.3e}; model mismatch");
    }
    Ok(noise)
}

/// Reduced successor driven by the same noise as the concrete state.
pub fn abstract_successor(
    red: &ReducedOrderGame,
    r_r: &Mat,
    x_hat: &Vector,
    u_hat: &Vector,
    w_hat: &Vector,
    noise: &Vector,
) -> Vector {
    red.mean(x_hat, u_hat, w_hat) + r_r * noise
}

/// One coupled transition from `(x, x̂)`: concrete successor under ν and the
/// lattice-quantized abstract successor sharing the same noise.
#[allow(clippy::too_many_arguments)]
pub fn coupled_step(
    game: &StochasticGame,
    red: &ReducedOrderGame,
    spaces: &AbstractSpaces,
    cert: &RelationCertificate,
    x: &Vector,
    x_hat: &Vector,
    u_hat: &Vector,
    w: &Vector,
    noise: &Vector,
) -> Result<(Vector, Vector)> {
    let u = interface_input(cert, game, red, x, x_hat, u_hat).u;
    let x_next = eval_dynamics(game, x, &u, w, noise)?;
    let w_hat = spaces.w_grid.center(project_w(spaces, &game.w_box, w));
    let next = abstract_successor(red, &cert.r_r, x_hat, u_hat, &w_hat, noise);
    Ok((x_next, spaces.grid.lattice_center(next.as_slice())))
}

impl<'a> Controller<'a> {
    pub fn init(&self, x0: &Vector) -> Result<ControllerMemory> {
        let x_hat = initial_abstract_state(self.cert, self.red, self.spaces, x0)?;
        let center = self.spaces.state_center(x_hat).expect("initial state lies in the grid");
        let q = initial_product_state(self.dfa, self.map, self.game.output(x0).as_slice())?;
        Ok(ControllerMemory {
            x: x0.clone(),
            x_hat,
            x_hat_center: center,
            q,
            w: None,
            w_hat: None,
            k: 0,
            last_u: None,
        })
    }

    pub fn output(&self, mem: &mut ControllerMemory) -> Result<ControllerOutput> {
        let u_hat = self.policy.choice(mem.k, mem.x_hat, mem.q)?;
        let ur = self.spaces.u_center(u_hat);
        let out = interface_input(self.cert, self.game, self.red, &mem.x, &mem.x_hat_center, &ur);
        mem.last_u = Some((u_hat, out.u.clone()));
        Ok(ControllerOutput {
            u: out.u,
            u_hat,
            within_polytope: out.within_polytope,
        })
    }

    /// Advances the memory; `noise` is recovered from `x_next` when not supplied.
    /// Returns whether the new pair lies in the relation.
    pub fn update(
        &self,
        mem: &mut ControllerMemory,
        x_next: &Vector,
        w_prev: &Vector,
        noise: Option<&Vector>,
    ) -> Result<bool> {
        let (u_hat, u) = match mem.last_u.take() {
            Some(v) => v,
            None => {
                let o = self.output(mem)?;
                mem.last_u = None;
                (o.u_hat, o.u)
            }
        };
        let noise = match noise {
            Some(n) => n.clone(),
            None => recover_noise(self.game, &mem.x, &u, w_prev, x_next)?,
        };
        let w_idx = project_w(self.spaces, &self.game.w_box, w_prev);
        let w_hat = self.spaces.w_grid.center(w_idx);
        let ur = self.spaces.u_center(u_hat);
        let next = abstract_successor(self.red, &self.cert.r_r, &mem.x_hat_center, &ur, &w_hat, &noise);
        mem.x_hat_center = self.spaces.grid.lattice_center(next.as_slice());
        mem.x_hat = rep_point(&self.spaces.grid, next.as_slice());
        mem.x = x_next.clone();
        let s = self.map.label_of(self.game.output(x_next).as_slice())?;
        mem.q = dfa_step(self.dfa, mem.q, s);
        mem.w = Some(w_prev.clone());
        mem.w_hat = Some(w_hat);
        mem.k += 1;
        Ok(in_relation(self.cert, &self.red.p, &mem.x, &mem.x_hat_center))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AdversarySpec {
    /// Uniform over the box W.
    Uniform,
    Constant { w: Vec<f64> },
    /// Row k is played at step k; the last row repeats.
    Scripted { table: Vec<Vec<f64>> },
}

impl AdversarySpec {
    fn pick<R: Rng>(&self, game: &StochasticGame, k: usize, rng: &mut R) -> Result<Vector> {
        let w = match self {
            AdversarySpec::Uniform => Vector::from_iterator(
                game.n_w(),
                (0..game.n_w()).map(|i| rng.random_range(game.w_box.lo[i]..=game.w_box.hi[i])),
            ),
            AdversarySpec::Constant { w } => Vector::from_column_slice(w),
            AdversarySpec::Scripted { table } => {
                let row = table
                    .get(k)
                    .or(table.last())
                    .ok_or_else(|| Error::Config("scripted adversary table is empty".into()))?;
                Vector::from_column_slice(row)
            }
        };
        if w.len() != game.n_w() {
            return Err(crate::error::dim_err("adversary input", game.n_w(), w.len()));
        }
        Ok(w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSettings {
    pub runs: usize,
    pub seed: u64,
    pub horizon: usize,
    pub adversary: AdversarySpec,
    #[serde(default)]
    pub record_trajectories: bool,
    #[serde(default)]
    pub timing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub run: usize,
    pub k: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub u: Vec<f64>,
    pub w: Vec<f64>,
    pub q: State,
    pub x_hat: usize,
    pub in_relation: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileRow {
    pub k: usize,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub x0: Vec<f64>,
    pub problem: Problem,
    pub runs: usize,
    pub seed: u64,
    pub horizon: usize,
    /// Runs meeting the objective: accepted for satisfaction, never accepted for violation.
    pub satisfied: usize,
    pub rate: f64,
    pub ci95: (f64, f64),
    /// Lower bound on satisfaction from the synthesis step.
    pub guarantee: Option<f64>,
    pub guarantee_respected: Option<bool>,
    pub acceptance_steps: Vec<Option<usize>>,
    /// Steps whose pre-pair was related, and how many of them left the relation.
    pub relation_checks: usize,
    pub relation_violations: usize,
    pub input_violations: usize,
    /// Per-step quantiles of the first output coordinate.
    pub quantiles: Vec<QuantileRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_step_ms: Option<f64>,
}

/// Wilson score interval at 95%.
pub fn wilson_interval(successes: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959963984540054;
    let n_f = n as f64;
    let p = successes as f64 / n_f;
    let den = 1.0 + z * z / n_f;
    let centre = (p + z * z / (2.0 * n_f)) / den;
    let half = z * (p * (1.0 - p) / n_f + z * z / (4.0 * n_f * n_f)).sqrt() / den;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Empirical satisfaction must not fall below the guarantee by more than three standard errors.
pub fn guarantee_holds(rate: f64, guarantee: f64, runs: usize) -> bool {
    let se = (guarantee * (1.0 - guarantee) / runs.max(1) as f64).sqrt();
    rate >= guarantee - 3.0 * se - 1e-12
}

pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

struct RunOutcome {
    accepted_at: Option<usize>,
    checks: usize,
    violations: usize,
    input_violations: usize,
    outputs: Vec<f64>,
    rows: Vec<TrajectoryRow>,
    step_ns: u128,
}

fn run_once(ctrl: &Controller, x0: &Vector, s: &SimulationSettings, run: usize) -> Result<RunOutcome> {
    let game = ctrl.game;
    let mut rng = ChaCha20Rng::seed_from_u64(s.seed);
    rng.set_stream(run as u64);
    let mut mem = ctrl.init(x0)?;
    let mut out = RunOutcome {
        accepted_at: ctrl.dfa.is_accepting(mem.q).then_some(0),
        checks: 0,
        violations: 0,
        input_violations: 0,
        outputs: Vec::with_capacity(s.horizon + 1),
        rows: Vec::new(),
        step_ns: 0,
    };
    out.outputs.push(game.output(x0)[0]);
    let mut related = in_relation(ctrl.cert, &ctrl.red.p, &mem.x, &mem.x_hat_center);
    for k in 0..s.horizon {
        let t0 = s.timing.then(Instant::now);
        let o = ctrl.output(&mut mem)?;
        let t_out = t0.map(|t| t.elapsed().as_nanos()).unwrap_or(0);
        if !o.within_polytope {
            out.input_violations += 1;
        }
        let w = s.adversary.pick(game, k, &mut rng)?;
        let noise = Vector::from_iterator(game.n_noise(), (0..game.n_noise()).map(|_| rng.sample(StandardNormal)));
        let x_prev = mem.x.clone();
        let x_next = eval_dynamics(game, &mem.x, &o.u, &w, &noise)?;
        let t1 = s.timing.then(Instant::now);
        let now_related = ctrl.update(&mut mem, &x_next, &w, Some(&noise))?;
        out.step_ns += t_out + t1.map(|t| t.elapsed().as_nanos()).unwrap_or(0);
        if related {
            out.checks += 1;
            if !now_related {
                out.violations += 1;
            }
        }
        related = now_related;
        if out.accepted_at.is_none() && ctrl.dfa.is_accepting(mem.q) {
            out.accepted_at = Some(k + 1);
        }
        out.outputs.push(game.output(&mem.x)[0]);
        if s.record_trajectories {
            out.rows.push(TrajectoryRow {
                run,
                k,
                x: x_prev.as_slice().to_vec(),
                y: game.output(&x_prev).as_slice().to_vec(),
                u: o.u.as_slice().to_vec(),
                w: w.as_slice().to_vec(),
                q: mem.q,
                x_hat: mem.x_hat,
                in_relation: now_related,
            });
        }
    }
    Ok(out)
}

/// Runs independent closed-loop trajectories; reports are reproducible for a fixed seed.
pub fn simulate_closed_loop(
    ctrl: &Controller,
    x0: &Vector,
    settings: &SimulationSettings,
    guarantee: Option<f64>,
) -> Result<(SimulationReport, Vec<TrajectoryRow>)> {
    if settings.horizon > ctrl.policy.horizon {
        return Err(Error::HorizonMismatch {
            policy: ctrl.policy.horizon,
            requested: settings.horizon,
        });
    }
    let outcomes: Vec<RunOutcome> = (0..settings.runs)
        .into_par_iter()
        .map(|run| run_once(ctrl, x0, settings, run))
        .collect::<Result<_>>()?;
    let problem = ctrl.policy.problem;
    let satisfied = outcomes
        .iter()
        .filter(|o| match problem {
            Problem::Satisfaction => o.accepted_at.is_some(),
            Problem::Violation => o.accepted_at.is_none(),
        })
        .count();
    let rate = if settings.runs == 0 {
        0.0
    } else {
        satisfied as f64 / settings.runs as f64
    };
    let mut quantiles = Vec::new();
    if !outcomes.is_empty() {
        for k in 0..=settings.horizon {
            let mut col: Vec<f64> = outcomes.iter().map(|o| o.outputs[k]).collect();
            col.sort_by(f64::total_cmp);
            quantiles.push(QuantileRow {
                k,
                q05: quantile(&col, 0.05),
                q50: quantile(&col, 0.5),
                q95: quantile(&col, 0.95),
            });
        }
    }
    let steps = (settings.runs * settings.horizon).max(1) as f64;
    let report = SimulationReport {
        x0: x0.as_slice().to_vec(),
        problem,
        runs: settings.runs,
        seed: settings.seed,
        horizon: settings.horizon,
        satisfied,
        rate,
        ci95: wilson_interval(satisfied, settings.runs),
        guarantee,
        guarantee_respected: guarantee.map(|g| guarantee_holds(rate, g, settings.runs)),
        acceptance_steps: outcomes.iter().map(|o| o.accepted_at).collect(),
        relation_checks: outcomes.iter().map(|o| o.checks).sum(),
        relation_violations: outcomes.iter().map(|o| o.violations).sum(),
        input_violations: outcomes.iter().map(|o| o.input_violations).sum(),
        quantiles,
        mean_step_ms: settings
            .timing
            .then(|| outcomes.iter().map(|o| o.step_ns).sum::<u128>() as f64 / steps / 1e6),
    };
    let rows = outcomes.into_iter().flat_map(|o| o.rows).collect();
    Ok((report, rows))
}
