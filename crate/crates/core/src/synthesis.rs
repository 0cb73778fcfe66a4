//! Max-min / min-max value iteration over the abstraction-DFA product.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::abstraction::{AbstractSpaces, TransitionKernel};
use crate::dfa::{initial_product_state, q_eps_set, Dfa, LabelMap, State};
use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::model::{ReducedOrderGame, StochasticGame};
use crate::relation::{initial_abstract_state, RelationCertificate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Problem {
    /// Lower bound on reaching F (robust satisfaction).
    Satisfaction,
    /// Upper bound on reaching F (worst-case violation).
    Violation,
}

/// V(x̂, q) stored row-major with q fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueTable {
    pub n_states: usize,
    pub n_q: usize,
    pub values: Vec<f64>,
}

impl ValueTable {
    pub fn initial(n_states: usize, dfa: &Dfa) -> Self {
        let n_q = dfa.n_states();
        let values = (0..n_states * n_q)
            .map(|i| if dfa.is_accepting(i % n_q) { 1.0 } else { 0.0 })
            .collect();
        Self {
            n_states,
            n_q,
            values,
        }
    }

    pub fn get(&self, x: usize, q: State) -> f64 {
        self.values[x * self.n_q + q]
    }
}

/// Time-indexed look-up table of Û indices (entries always lie in Û').
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    pub horizon: usize,
    pub n_states: usize,
    pub n_q: usize,
    pub problem: Problem,
    pub choices: Vec<u32>,
    /// Worst-case Ŵ index against the chosen input, same layout.
    pub adversary: Option<Vec<u32>>,
}

const POLICY_MAGIC: &[u8; 4] = b"GPOL";

impl PolicyTable {
    fn offset(&self, k: usize, x: usize, q: State) -> usize {
        (k * self.n_states + x) * self.n_q + q
    }

    pub fn choice(&self, k: usize, x: usize, q: State) -> Result<usize> {
        if k >= self.horizon {
            return Err(Error::HorizonExhausted(k));
        }
        Ok(self.choices[self.offset(k, x, q)] as usize)
    }

    pub fn worst_adversary(&self, k: usize, x: usize, q: State) -> Option<usize> {
        let off = self.offset(k, x, q);
        self.adversary.as_ref().map(|a| a[off] as usize)
    }

    pub fn footprint_bytes(&self) -> usize {
        self.choices.len() * 4
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(POLICY_MAGIC)?;
        for d in [self.horizon, self.n_states, self.n_q] {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for c in &self.choices {
            w.write_all(&c.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R, problem: Problem) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != POLICY_MAGIC {
            return Err(Error::Format("bad policy magic".into()));
        }
        let mut dims = [0usize; 3];
        let mut buf = [0u8; 4];
        for d in dims.iter_mut() {
            r.read_exact(&mut buf)?;
            *d = u32::from_le_bytes(buf) as usize;
        }
        let [horizon, n_states, n_q] = dims;
        let len = horizon
            .checked_mul(n_states)
            .and_then(|v| v.checked_mul(n_q))
            .ok_or_else(|| Error::Format("policy dimensions overflow".into()))?;
        let mut choices = Vec::with_capacity(len);
        for _ in 0..len {
            r.read_exact(&mut buf)?;
            choices.push(u32::from_le_bytes(buf));
        }
        if r.read(&mut buf)? != 0 {
            return Err(Error::Format("trailing bytes after policy".into()));
        }
        Ok(Self {
            horizon,
            n_states,
            n_q,
            problem,
            choices,
            adversary: None,
        })
    }
}

/// Geometry of the product: Q'_ε sets per (x̂', q), fixed across sweeps.
#[derive(Debug, Clone)]
pub struct ProductContext {
    pub n_states: usize,
    pub n_q: usize,
    pub delta: f64,
    pub accepting: Vec<bool>,
    q_eps: Vec<Vec<State>>,
}

impl ProductContext {
    pub fn new(
        spaces: &AbstractSpaces,
        red: &ReducedOrderGame,
        dfa: &Dfa,
        map: &LabelMap,
        eps: f64,
        delta: f64,
    ) -> Self {
        let n_states = spaces.n_states();
        let n_q = dfa.n_states();
        let q_eps = (0..n_states * n_q)
            .into_par_iter()
            .map(|i| {
                let (x, q) = (i / n_q, i % n_q);
                let y = spaces.state_center(x).map(|c| &red.c_r * c);
                q_eps_set(dfa, map, q, y.as_ref().map(|v| v.as_slice()), eps)
            })
            .collect();
        Self::from_sets(n_states, dfa, delta, q_eps)
    }

    /// Direct construction; `q_eps[x * n_q + q]` must be nonempty.
    pub fn from_sets(n_states: usize, dfa: &Dfa, delta: f64, q_eps: Vec<Vec<State>>) -> Self {
        let n_q = dfa.n_states();
        assert_eq!(q_eps.len(), n_states * n_q);
        Self {
            n_states,
            n_q,
            delta,
            accepting: (0..n_q).map(|q| dfa.is_accepting(q)).collect(),
            q_eps,
        }
    }

    pub fn successors(&self, x: usize, q: State) -> &[State] {
        &self.q_eps[x * self.n_q + q]
    }
}

fn pick_q(ctx: &ProductContext, v: &ValueTable, x: usize, q: State, want_max: bool) -> State {
    let mut best = None::<(State, f64)>;
    for &c in ctx.successors(x, q) {
        let val = v.get(x, c);
        let better = match best {
            None => true,
            Some((_, b)) => {
                if want_max {
                    val > b
                } else {
                    val < b
                }
            }
        };
        if better || best.is_some_and(|(bq, b)| val == b && c < bq) {
            best = Some((c, val));
        }
    }
    best.expect("Q'_eps is nonempty").0
}

/// q̲(x̂', q): minimiser of V_n over Q'_ε, smallest index on ties.
pub fn successor_q_min(ctx: &ProductContext, v: &ValueTable, x: usize, q: State) -> State {
    pick_q(ctx, v, x, q, false)
}

/// q̄(x̂', q): maximiser of V_n over Q'_ε, smallest index on ties.
pub fn successor_q_max(ctx: &ProductContext, v: &ValueTable, x: usize, q: State) -> State {
    pick_q(ctx, v, x, q, true)
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub values: ValueTable,
    /// Chosen Û index per (x̂, q).
    pub inputs: Vec<u32>,
    /// Worst Ŵ index against the chosen input per (x̂, q).
    pub adversary: Vec<u32>,
}

// f_q(x̂') = V_n(x̂', q̲ or q̄) for every q
fn continuation(ctx: &ProductContext, v: &ValueTable, problem: Problem) -> Vec<Vec<f64>> {
    (0..ctx.n_q)
        .map(|q| {
            (0..ctx.n_states)
                .map(|x| {
                    let qn = match problem {
                        Problem::Satisfaction => successor_q_min(ctx, v, x, q),
                        Problem::Violation => successor_q_max(ctx, v, x, q),
                    };
                    v.get(x, qn)
                })
                .collect()
        })
        .collect()
}

fn row_value(kernel: &TransitionKernel, r: usize, f: &[f64], delta: f64, problem: Problem) -> f64 {
    let s = kernel.dot(r, f);
    match problem {
        Problem::Satisfaction => (1.0 - delta) * s,
        Problem::Violation => (1.0 - delta) * (s + kernel.truncated(r)) + delta,
    }
}

// Adversary response to one input: (value, argmin/argmax ŵ).
fn adversary_response(
    kernel: &TransitionKernel,
    x: usize,
    u: usize,
    f: &[f64],
    delta: f64,
    problem: Problem,
) -> (f64, u32) {
    let mut best = (row_value(kernel, kernel.row_index(x, u, 0), f, delta, problem), 0u32);
    for w in 1..kernel.n_w() {
        let val = row_value(kernel, kernel.row_index(x, u, w), f, delta, problem);
        let better = match problem {
            Problem::Satisfaction => val < best.0,
            Problem::Violation => val > best.0,
        };
        if better {
            best = (val, w as u32);
        }
    }
    best
}

/// One sweep of the satisfaction (max-min) or violation (min-max + δ) operator.
pub fn bellman_step(
    kernel: &TransitionKernel,
    ctx: &ProductContext,
    u_prime: &[usize],
    v: &ValueTable,
    problem: Problem,
) -> StepResult {
    let f = continuation(ctx, v, problem);
    let n_q = ctx.n_q;
    let cells: Vec<(f64, u32, u32)> = (0..ctx.n_states * n_q)
        .into_par_iter()
        .map(|i| {
            let (x, q) = (i / n_q, i % n_q);
            if ctx.accepting[q] {
                return (1.0, u_prime[0] as u32, 0);
            }
            let mut best: Option<(f64, u32, u32)> = None;
            for &u in u_prime {
                let (val, w) = adversary_response(kernel, x, u, &f[q], ctx.delta, problem);
                let better = match (best, problem) {
                    (None, _) => true,
                    (Some(b), Problem::Satisfaction) => val > b.0,
                    (Some(b), Problem::Violation) => val < b.0,
                };
                if better {
                    best = Some((val, u as u32, w));
                }
            }
            let (val, u, w) = best.expect("U' is nonempty");
            (val.clamp(0.0, 1.0), u, w)
        })
        .collect();
    let mut values = Vec::with_capacity(cells.len());
    let mut inputs = Vec::with_capacity(cells.len());
    let mut adversary = Vec::with_capacity(cells.len());
    for (val, u, w) in cells {
        values.push(val);
        inputs.push(u);
        adversary.push(w);
    }
    StepResult {
        values: ValueTable {
            n_states: ctx.n_states,
            n_q,
            values,
        },
        inputs,
        adversary,
    }
}

pub fn bellman_sat_step(kernel: &TransitionKernel, ctx: &ProductContext, u_prime: &[usize], v: &ValueTable) -> StepResult {
    bellman_step(kernel, ctx, u_prime, v, Problem::Satisfaction)
}

pub fn bellman_vio_step(kernel: &TransitionKernel, ctx: &ProductContext, u_prime: &[usize], v: &ValueTable) -> StepResult {
    bellman_step(kernel, ctx, u_prime, v, Problem::Violation)
}

#[derive(Debug, Clone)]
pub struct SynthesisResult {
    pub problem: Problem,
    pub policy: PolicyTable,
    /// V_H.
    pub values: ValueTable,
    pub eps: f64,
    pub delta: f64,
}

fn check_kernel(kernel: &TransitionKernel, ctx: &ProductContext, u_prime: &[usize]) -> Result<()> {
    if kernel.n_states() != ctx.n_states {
        return Err(crate::error::dim_err("kernel states", ctx.n_states, kernel.n_states()));
    }
    if u_prime.is_empty() || u_prime.iter().any(|&u| u >= kernel.n_u()) {
        return Err(Error::Config("U' indices outside the kernel's input set".into()));
    }
    Ok(())
}

pub fn synthesize(
    kernel: &TransitionKernel,
    ctx: &ProductContext,
    u_prime: &[usize],
    dfa: &Dfa,
    horizon: usize,
    problem: Problem,
    eps: f64,
) -> Result<SynthesisResult> {
    check_kernel(kernel, ctx, u_prime)?;
    let cells = ctx.n_states * ctx.n_q;
    let mut choices = vec![0u32; horizon * cells];
    let mut adversary = vec![0u32; horizon * cells];
    let mut v = ValueTable::initial(ctx.n_states, dfa);
    for n in 0..horizon {
        let step = bellman_step(kernel, ctx, u_prime, &v, problem);
        let k = horizon - n - 1;
        choices[k * cells..(k + 1) * cells].copy_from_slice(&step.inputs);
        adversary[k * cells..(k + 1) * cells].copy_from_slice(&step.adversary);
        v = step.values;
    }
    Ok(SynthesisResult {
        problem,
        policy: PolicyTable {
            horizon,
            n_states: ctx.n_states,
            n_q: ctx.n_q,
            problem,
            choices,
            adversary: Some(adversary),
        },
        values: v,
        eps,
        delta: ctx.delta,
    })
}

/// Value of a fixed Player-I policy against the per-step worst adversary.
pub fn evaluate_fixed_policy(
    kernel: &TransitionKernel,
    ctx: &ProductContext,
    dfa: &Dfa,
    policy: &PolicyTable,
    horizon: usize,
) -> Result<ValueTable> {
    if policy.horizon != horizon {
        return Err(Error::HorizonMismatch {
            policy: policy.horizon,
            requested: horizon,
        });
    }
    if policy.n_states != ctx.n_states || policy.n_q != ctx.n_q {
        return Err(Error::Config("policy does not match the product".into()));
    }
    let problem = policy.problem;
    let n_q = ctx.n_q;
    let mut v = ValueTable::initial(ctx.n_states, dfa);
    for n in 0..horizon {
        let k = horizon - n - 1;
        let f = continuation(ctx, &v, problem);
        let values = (0..ctx.n_states * n_q)
            .into_par_iter()
            .map(|i| {
                let (x, q) = (i / n_q, i % n_q);
                if ctx.accepting[q] {
                    return 1.0;
                }
                let u = policy.choices[policy.offset(k, x, q)] as usize;
                adversary_response(kernel, x, u, &f[q], ctx.delta, problem).0.clamp(0.0, 1.0)
            })
            .collect();
        v = ValueTable {
            n_states: ctx.n_states,
            n_q,
            values,
        };
    }
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Guarantee {
    pub problem: Problem,
    pub x_hat: usize,
    pub q0: State,
    /// V_H(x̂0, q̄0): lower bound on satisfaction or upper bound on violation.
    pub value: f64,
    /// Lower bound on satisfying the property in both cases.
    pub satisfaction: f64,
}

pub fn guarantee_at(
    result: &SynthesisResult,
    cert: &RelationCertificate,
    game: &StochasticGame,
    red: &ReducedOrderGame,
    spaces: &AbstractSpaces,
    dfa: &Dfa,
    map: &LabelMap,
    x0: &Vector,
) -> Result<Guarantee> {
    let x_hat = initial_abstract_state(cert, red, spaces, x0)?;
    let q0 = initial_product_state(dfa, map, game.output(x0).as_slice())?;
    let value = result.values.get(x_hat, q0);
    let satisfaction = match result.problem {
        Problem::Satisfaction => value,
        Problem::Violation => 1.0 - value,
    };
    Ok(Guarantee {
        problem: result.problem,
        x_hat,
        q0,
        value,
        satisfaction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    // two abstract states (the second is φ), two DFA states with q1 accepting
    fn toy() -> (TransitionKernel, ProductContext, Dfa) {
        let dfa = Dfa::new(
            2,
            0,
            &[1],
            vec!["a".into(), "b".into()],
            &[(0, 0, 0), (0, 1, 1), (1, 0, 1), (1, 1, 1)],
        )
        .unwrap();
        // x0 → x0 w.p. 0.7, φ w.p. 0.3; φ absorbing
        let k = TransitionKernel::from_dense(2, 1, 1, vec![0.7, 0.3, 0.0, 1.0]).unwrap();
        // x0 carries label a, φ carries b
        let sets = vec![vec![0], vec![1], vec![1], vec![1]];
        let ctx = ProductContext::from_sets(2, &dfa, 0.0, sets);
        (k, ctx, dfa)
    }

    #[test]
    fn hand_one_step() {
        let (k, ctx, dfa) = toy();
        let v0 = ValueTable::initial(2, &dfa);
        let s = bellman_sat_step(&k, &ctx, &[0], &v0);
        // V1(x0,q0) = 0.7·V0(x0,q0) + 0.3·V0(φ,q1) = 0.3
        assert_eq!(s.values.get(0, 0), 0.3);
        assert_eq!(s.values.get(1, 0), 1.0);
        assert_eq!(s.values.get(0, 1), 1.0);
        let s2 = bellman_sat_step(&k, &ctx, &[0], &s.values);
        assert!((s2.values.get(0, 0) - (0.7 * 0.3 + 0.3)).abs() < 1e-15);
    }

    #[test]
    fn hand_violation_with_delta() {
        let (k, mut ctx, dfa) = toy();
        ctx.delta = 0.1;
        let v0 = ValueTable::initial(2, &dfa);
        let s = bellman_vio_step(&k, &ctx, &[0], &v0);
        assert!((s.values.get(0, 0) - (0.9 * 0.3 + 0.1)).abs() < 1e-15);
    }

    #[test]
    fn delta_one_extremes() {
        let (k, mut ctx, dfa) = toy();
        ctx.delta = 1.0;
        let v0 = ValueTable::initial(2, &dfa);
        assert_eq!(bellman_sat_step(&k, &ctx, &[0], &v0).values.get(0, 0), 0.0);
        assert_eq!(bellman_vio_step(&k, &ctx, &[0], &v0).values.get(0, 0), 1.0);
    }

    #[test]
    fn tie_break_and_extremes() {
        let (_, _, dfa) = toy();
        let ctx = ProductContext::from_sets(2, &dfa, 0.0, vec![vec![0, 1]; 4]);
        let flat = ValueTable {
            n_states: 2,
            n_q: 2,
            values: vec![0.5; 4],
        };
        assert_eq!(successor_q_min(&ctx, &flat, 0, 0), 0);
        assert_eq!(successor_q_max(&ctx, &flat, 0, 0), 0);
        let v = ValueTable {
            n_states: 2,
            n_q: 2,
            values: vec![0.7, 0.3, 0.0, 0.0],
        };
        assert_eq!(successor_q_min(&ctx, &v, 0, 0), 1);
        assert_eq!(successor_q_max(&ctx, &v, 0, 0), 0);
    }

    #[test]
    fn policy_roundtrip() {
        let p = PolicyTable {
            horizon: 2,
            n_states: 3,
            n_q: 2,
            problem: Problem::Violation,
            choices: (0..12).collect(),
            adversary: None,
        };
        let mut buf = Vec::new();
        p.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"GPOL");
        assert_eq!(PolicyTable::read_from(&buf[..], Problem::Violation).unwrap(), p);
        assert!(PolicyTable::read_from(&buf[..buf.len() - 1], Problem::Violation).is_err());
        assert!(matches!(p.choice(2, 0, 0), Err(Error::HorizonExhausted(2))));
    }

    #[test]
    fn bad_policy_hand_value() {
        // input 0 stays (0.7 / 0.3), input 1 jumps straight to φ
        let (_, ctx, dfa) = toy();
        let k = TransitionKernel::from_dense(2, 2, 1, vec![0.7, 0.3, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]).unwrap();
        let best = synthesize(&k, &ctx, &[0, 1], &dfa, 2, Problem::Satisfaction, 0.0).unwrap();
        assert_eq!(best.values.get(0, 0), 1.0);
        let mut bad = best.policy.clone();
        bad.choices.iter_mut().for_each(|c| *c = 0);
        let v = evaluate_fixed_policy(&k, &ctx, &dfa, &bad, 2).unwrap();
        assert!((v.get(0, 0) - 0.51).abs() < 1e-15);
        let same = evaluate_fixed_policy(&k, &ctx, &dfa, &best.policy, 2).unwrap();
        assert_eq!(same.values, best.values.values);
        assert!(matches!(
            evaluate_fixed_policy(&k, &ctx, &dfa, &bad, 3),
            Err(Error::HorizonMismatch { .. })
        ));
    }
}
