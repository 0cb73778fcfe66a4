//! Exhaustive Markov-policy enumeration on micro games.

use gamesynth::abstraction::TransitionKernel;
use gamesynth::dfa::Dfa;
use gamesynth::synthesis::{Problem, ProductContext};
use rand::Rng;

#[derive(Debug, Clone)]
pub struct MicroGame {
    pub n_s: usize,
    pub n_u: usize,
    pub n_w: usize,
    pub n_q: usize,
    pub accepting: Vec<bool>,
    /// Rows indexed (x·n_u + u)·n_w + w, each of length n_s.
    pub rows: Vec<f64>,
    pub q_eps: Vec<Vec<usize>>,
    pub delta: f64,
}

pub fn pair_count(n_s: usize, n_u: usize, n_w: usize, n_q: usize, h: usize) -> f64 {
    let cells = (h * n_s * n_q) as f64;
    (n_u as f64).powf(cells) * (n_w as f64).powf(cells * n_u as f64)
}

impl MicroGame {
    pub fn random<R: Rng>(rng: &mut R, h: usize, delta: f64, max_pairs: f64) -> Self {
        loop {
            let n_s = rng.random_range(1..=4);
            let n_u = rng.random_range(1..=2);
            let n_w = rng.random_range(1..=2);
            let n_q = rng.random_range(1..=2);
            if pair_count(n_s, n_u, n_w, n_q, h) > max_pairs {
                continue;
            }
            let mut rows = Vec::with_capacity(n_s * n_u * n_w * n_s);
            for _ in 0..n_s * n_u * n_w {
                let mut r: Vec<f64> = (0..n_s)
                    .map(|_| if rng.random_bool(0.25) { 0.0 } else { rng.random::<f64>() })
                    .collect();
                if r.iter().all(|v| *v == 0.0) {
                    r[rng.random_range(0..n_s)] = 1.0;
                }
                let s: f64 = r.iter().sum();
                rows.extend(r.into_iter().map(|v| v / s));
            }
            let accepting: Vec<bool> = (0..n_q).map(|_| rng.random_bool(0.4)).collect();
            let q_eps = (0..n_s * n_q)
                .map(|_| {
                    let mut set: Vec<usize> = (0..n_q).filter(|_| rng.random_bool(0.6)).collect();
                    if set.is_empty() {
                        set.push(rng.random_range(0..n_q));
                    }
                    set
                })
                .collect();
            return Self {
                n_s,
                n_u,
                n_w,
                n_q,
                accepting,
                rows,
                q_eps,
                delta,
            };
        }
    }

    pub fn kernel(&self) -> TransitionKernel {
        TransitionKernel::from_dense(self.n_s, self.n_u, self.n_w, self.rows.clone()).unwrap()
    }

    pub fn dfa(&self) -> Dfa {
        let acc: Vec<usize> = (0..self.n_q).filter(|&q| self.accepting[q]).collect();
        let trans: Vec<(usize, usize, usize)> = (0..self.n_q).map(|q| (q, 0, q)).collect();
        Dfa::new(self.n_q, 0, &acc, vec!["a".into()], &trans).unwrap()
    }

    pub fn ctx(&self) -> ProductContext {
        ProductContext::from_sets(self.n_s, &self.dfa(), self.delta, self.q_eps.clone())
    }

    fn row(&self, x: usize, u: usize, w: usize) -> &[f64] {
        let r = (x * self.n_u + u) * self.n_w + w;
        &self.rows[r * self.n_s..(r + 1) * self.n_s]
    }

    fn evaluate(&self, h: usize, rho: &[usize], lam: &[usize], problem: Problem) -> Vec<f64> {
        let (n_s, n_q) = (self.n_s, self.n_q);
        let cells = n_s * n_q;
        let mut v: Vec<f64> = (0..cells)
            .map(|i| if self.accepting[i % n_q] { 1.0 } else { 0.0 })
            .collect();
        for n in 0..h {
            let k = h - n - 1;
            let mut next = vec![0.0; cells];
            for x in 0..n_s {
                for q in 0..n_q {
                    if self.accepting[q] {
                        next[x * n_q + q] = 1.0;
                        continue;
                    }
                    let c = k * cells + x * n_q + q;
                    let u = rho[c];
                    let w = lam[c * self.n_u + u];
                    let row = self.row(x, u, w);
                    let mut s = 0.0;
                    for (xn, t) in row.iter().enumerate() {
                        let cont = self.q_eps[xn * n_q + q].iter().map(|&qn| v[xn * n_q + qn]);
                        let f = match problem {
                            Problem::Satisfaction => cont.fold(f64::INFINITY, f64::min),
                            Problem::Violation => cont.fold(f64::NEG_INFINITY, f64::max),
                        };
                        s += t * f;
                    }
                    next[x * n_q + q] = match problem {
                        Problem::Satisfaction => (1.0 - self.delta) * s,
                        Problem::Violation => (1.0 - self.delta) * s + self.delta,
                    }
                    .clamp(0.0, 1.0);
                }
            }
            v = next;
        }
        v
    }

    /// Pointwise max-min (satisfaction) or min-max (violation) over all deterministic
    /// Markov pairs, the adversary seeing the current input.
    pub fn brute_force(&self, h: usize, problem: Problem) -> Vec<f64> {
        let cells = self.n_s * self.n_q;
        let rho_len = h * cells;
        let lam_len = rho_len * self.n_u;
        let mut rho = vec![0usize; rho_len];
        let sat = problem == Problem::Satisfaction;
        let mut outer = vec![if sat { f64::NEG_INFINITY } else { f64::INFINITY }; cells];
        loop {
            let mut lam = vec![0usize; lam_len];
            let mut inner = vec![if sat { f64::INFINITY } else { f64::NEG_INFINITY }; cells];
            loop {
                let v = self.evaluate(h, &rho, &lam, problem);
                for i in 0..cells {
                    inner[i] = if sat { inner[i].min(v[i]) } else { inner[i].max(v[i]) };
                }
                if !increment(&mut lam, self.n_w) {
                    break;
                }
            }
            for i in 0..cells {
                outer[i] = if sat { outer[i].max(inner[i]) } else { outer[i].min(inner[i]) };
            }
            if !increment(&mut rho, self.n_u) {
                break;
            }
        }
        outer
    }
}

fn increment(digits: &mut [usize], base: usize) -> bool {
    for d in digits.iter_mut() {
        *d += 1;
        if *d < base {
            return true;
        }
        *d = 0;
    }
    false
}
