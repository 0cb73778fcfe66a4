//! Total DFAs over a finite alphabet and box-based labelling of the output space.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::path::Path;

use crate::error::{Error, Result};

pub type State = usize;
pub type Symbol = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct Dfa {
    n_states: usize,
    initial: State,
    accepting: Vec<bool>,
    alphabet: Vec<String>,
    /// `table[q * |Π| + σ]`
    table: Vec<State>,
}

impl Dfa {
    pub fn new(
        n_states: usize,
        initial: State,
        accepting: &[State],
        alphabet: Vec<String>,
        transitions: &[(State, Symbol, State)],
    ) -> Result<Self> {
        if n_states == 0 || alphabet.is_empty() {
            return Err(Error::Config("DFA needs at least one state and symbol".into()));
        }
        if initial >= n_states {
            return Err(Error::Config(format!("initial state {initial} out of range")));
        }
        let mut acc = vec![false; n_states];
        for &q in accepting {
            *acc.get_mut(q)
                .ok_or_else(|| Error::Config(format!("accepting state {q} out of range")))? = true;
        }
        let k = alphabet.len();
        let mut table = vec![usize::MAX; n_states * k];
        for &(q, s, q2) in transitions {
            if q >= n_states || q2 >= n_states || s >= k {
                return Err(Error::Config(format!("transition ({q}, {s}, {q2}) out of range")));
            }
            let slot = &mut table[q * k + s];
            if *slot != usize::MAX && *slot != q2 {
                return Err(Error::Config(format!(
                    "nondeterministic transition from {q} on {}",
                    alphabet[s]
                )));
            }
            *slot = q2;
        }
        if let Some(pos) = table.iter().position(|&t| t == usize::MAX) {
            return Err(Error::Config(format!(
                "DFA is not total: missing transition from {} on {}",
                pos / k,
                alphabet[pos % k]
            )));
        }
        Ok(Self {
            n_states,
            initial,
            accepting: acc,
            alphabet,
            table,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_symbols(&self) -> usize {
        self.alphabet.len()
    }

    pub fn initial(&self) -> State {
        self.initial
    }

    pub fn is_accepting(&self, q: State) -> bool {
        self.accepting[q]
    }

    pub fn alphabet(&self) -> &[String] {
        &self.alphabet
    }

    pub fn symbol(&self, name: &str) -> Result<Symbol> {
        self.alphabet
            .iter()
            .position(|s| s == name)
            .ok_or_else(|| Error::Config(format!("unknown symbol {name:?}")))
    }

    pub fn step(&self, q: State, s: Symbol) -> State {
        self.table[q * self.alphabet.len() + s]
    }

    /// Runs a symbol trace from `q` and returns whether F was visited on the way.
    pub fn visits_accepting(&self, q: State, trace: &[Symbol]) -> bool {
        let mut q = q;
        if self.is_accepting(q) {
            return true;
        }
        for &s in trace {
            q = self.step(q, s);
            if self.is_accepting(q) {
                return true;
            }
        }
        false
    }
}

/// Interval endpoint that accepts numbers or the strings "inf" / "-inf".
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bound(pub f64);

impl Serialize for Bound {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0 == f64::INFINITY {
            s.serialize_str("inf")
        } else if self.0 == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Bound {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Bound(v)),
            Raw::Str(s) => match s.trim() {
                "inf" | "+inf" | "Infinity" => Ok(Bound(f64::INFINITY)),
                "-inf" | "-Infinity" => Ok(Bound(f64::NEG_INFINITY)),
                other => other
                    .parse()
                    .map(Bound)
                    .map_err(|_| serde::de::Error::custom(format!("bad bound {other:?}"))),
            },
        }
    }
}

/// Axis-aligned box; each side is closed or open.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub lo_closed: Vec<bool>,
    pub hi_closed: Vec<bool>,
}

impl LabelBox {
    /// Half-open box `[lo, hi)` in every coordinate.
    pub fn half_open(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        let n = lo.len();
        Self {
            lo,
            hi,
            lo_closed: vec![true; n],
            hi_closed: vec![false; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, y: &[f64]) -> bool {
        y.iter().enumerate().all(|(i, &v)| {
            let above = if self.lo_closed[i] { v >= self.lo[i] } else { v > self.lo[i] };
            let below = if self.hi_closed[i] { v <= self.hi[i] } else { v < self.hi[i] };
            above && below
        })
    }

    fn project(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .enumerate()
            .map(|(i, &v)| v.clamp(self.lo[i], self.hi[i]))
            .collect()
    }

    /// Euclidean distance from `y` to the closure of the box.
    pub fn distance(&self, y: &[f64]) -> f64 {
        y.iter()
            .zip(self.project(y))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Does the closed ball of radius `eps` around `y` meet the box?
    pub fn meets_ball(&self, y: &[f64], eps: f64) -> bool {
        let d = self.distance(y);
        d < eps || (d <= eps && self.contains(&self.project(y)))
    }

    fn intersects(&self, other: &LabelBox) -> bool {
        (0..self.dim()).all(|i| {
            let (lo, lo_c) = max_end(
                (self.lo[i], self.lo_closed[i]),
                (other.lo[i], other.lo_closed[i]),
                true,
            );
            let (hi, hi_c) = max_end(
                (self.hi[i], self.hi_closed[i]),
                (other.hi[i], other.hi_closed[i]),
                false,
            );
            lo < hi || (lo == hi && lo_c && hi_c && lo.is_finite())
        })
    }
}

// Tighter of two endpoints: larger lower bound (`lower`) or smaller upper bound.
fn max_end(a: (f64, bool), b: (f64, bool), lower: bool) -> (f64, bool) {
    if a.0 == b.0 {
        return (a.0, a.1 && b.1);
    }
    let a_tighter = if lower { a.0 > b.0 } else { a.0 < b.0 };
    if a_tighter {
        a
    } else {
        b
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    dim: usize,
    regions: Vec<(LabelBox, Symbol)>,
    absorbing_symbol: Symbol,
}

impl LabelMap {
    pub fn new(
        dim: usize,
        regions: Vec<(LabelBox, Symbol)>,
        absorbing_symbol: Symbol,
        n_symbols: usize,
    ) -> Result<Self> {
        if absorbing_symbol >= n_symbols {
            return Err(Error::Config("absorbing symbol not in alphabet".into()));
        }
        for (b, s) in &regions {
            if b.dim() != dim || b.hi.len() != dim {
                return Err(crate::error::dim_err("label box", dim, b.dim()));
            }
            if *s >= n_symbols {
                return Err(Error::Config(format!("label symbol {s} not in alphabet")));
            }
            if b.lo.iter().zip(&b.hi).any(|(l, h)| l > h || l.is_nan() || h.is_nan()) {
                return Err(Error::Config("label box with lo > hi".into()));
            }
        }
        for i in 0..regions.len() {
            for j in i + 1..regions.len() {
                if regions[i].0.intersects(&regions[j].0) {
                    return Err(Error::Config(format!("label boxes {i} and {j} overlap")));
                }
            }
        }
        let map = Self {
            dim,
            regions,
            absorbing_symbol,
        };
        map.check_coverage()?;
        Ok(map)
    }

    // Every boundary value, midpoints between them and points beyond the extremes.
    fn check_coverage(&self) -> Result<()> {
        let mut axes: Vec<Vec<f64>> = Vec::with_capacity(self.dim);
        for i in 0..self.dim {
            let mut cuts: Vec<f64> = self
                .regions
                .iter()
                .flat_map(|(b, _)| [b.lo[i], b.hi[i]])
                .filter(|v| v.is_finite())
                .collect();
            cuts.sort_by(f64::total_cmp);
            cuts.dedup();
            let mut pts = cuts.clone();
            for w in cuts.windows(2) {
                pts.push(0.5 * (w[0] + w[1]));
            }
            match (cuts.first(), cuts.last()) {
                (Some(&a), Some(&b)) => {
                    pts.push(a - 1.0 - a.abs());
                    pts.push(b + 1.0 + b.abs());
                }
                _ => pts.push(0.0),
            }
            axes.push(pts);
        }
        let total: usize = axes.iter().map(Vec::len).product();
        if total > 2_000_000 {
            return Ok(());
        }
        let mut idx = vec![0usize; self.dim];
        let mut y = vec![0.0; self.dim];
        for _ in 0..total {
            for i in 0..self.dim {
                y[i] = axes[i][idx[i]];
            }
            if self.regions.iter().filter(|(b, _)| b.contains(&y)).count() != 1 {
                return Err(Error::LabelCoverage(y.clone()));
            }
            for i in 0..self.dim {
                idx[i] += 1;
                if idx[i] < axes[i].len() {
                    break;
                }
                idx[i] = 0;
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn absorbing_symbol(&self) -> Symbol {
        self.absorbing_symbol
    }

    pub fn regions(&self) -> &[(LabelBox, Symbol)] {
        &self.regions
    }

    pub fn label_of(&self, y: &[f64]) -> Result<Symbol> {
        self.regions
            .iter()
            .find(|(b, _)| b.contains(y))
            .map(|(_, s)| *s)
            .ok_or_else(|| Error::LabelCoverage(y.to_vec()))
    }

    /// Symbols whose region meets the closed Euclidean ball of radius `eps` around `y`,
    /// sorted and deduplicated.
    pub fn labels_within_ball(&self, y: &[f64], eps: f64) -> Vec<Symbol> {
        let mut out: Vec<Symbol> = self
            .regions
            .iter()
            .filter(|(b, _)| b.meets_ball(y, eps))
            .map(|(_, s)| *s)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

pub fn dfa_step(dfa: &Dfa, q: State, s: Symbol) -> State {
    dfa.step(q, s)
}

pub fn initial_product_state(dfa: &Dfa, map: &LabelMap, y0: &[f64]) -> Result<State> {
    Ok(dfa.step(dfa.initial(), map.label_of(y0)?))
}

/// Q'_ε: successors of `q` reachable under any label within `eps` of `y_hat`.
/// `None` stands for the absorbing output.
pub fn q_eps_set(dfa: &Dfa, map: &LabelMap, q: State, y_hat: Option<&[f64]>, eps: f64) -> Vec<State> {
    let mut out: Vec<State> = match y_hat {
        Some(y) => map
            .labels_within_ball(y, eps)
            .into_iter()
            .map(|s| dfa.step(q, s))
            .collect(),
        None => vec![dfa.step(q, map.absorbing_symbol())],
    };
    out.sort_unstable();
    out.dedup();
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelSpec {
    pub box_lo: Vec<Bound>,
    pub box_hi: Vec<Bound>,
    pub symbol: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lo_closed: Option<Vec<bool>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hi_closed: Option<Vec<bool>>,
}

/// File form of a DFA plus its labelling.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DfaSpec {
    pub states: usize,
    pub initial: usize,
    pub accepting: Vec<usize>,
    pub alphabet: Vec<String>,
    pub transitions: Vec<(usize, String, usize)>,
    pub labels: Vec<LabelSpec>,
    pub absorbing_symbol: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl DfaSpec {
    pub fn build(&self) -> Result<(Dfa, LabelMap)> {
        let sym = |name: &str| {
            self.alphabet
                .iter()
                .position(|s| s == name)
                .ok_or_else(|| Error::Config(format!("unknown symbol {name:?}")))
        };
        let transitions = self
            .transitions
            .iter()
            .map(|(q, s, q2)| Ok((*q, sym(s)?, *q2)))
            .collect::<Result<Vec<_>>>()?;
        let dfa = Dfa::new(
            self.states,
            self.initial,
            &self.accepting,
            self.alphabet.clone(),
            &transitions,
        )?;
        let dim = self.labels.first().map_or(1, |l| l.box_lo.len());
        let regions = self
            .labels
            .iter()
            .map(|l| {
                let n = l.box_lo.len();
                let b = LabelBox {
                    lo: l.box_lo.iter().map(|b| b.0).collect(),
                    hi: l.box_hi.iter().map(|b| b.0).collect(),
                    lo_closed: l.lo_closed.clone().unwrap_or_else(|| vec![true; n]),
                    hi_closed: l.hi_closed.clone().unwrap_or_else(|| vec![false; n]),
                };
                if b.lo_closed.len() != n || b.hi_closed.len() != n || b.hi.len() != n {
                    return Err(crate::error::dim_err("label closedness", n, b.hi.len()));
                }
                Ok((b, sym(&l.symbol)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let map = LabelMap::new(dim, regions, sym(&self.absorbing_symbol)?, self.alphabet.len())?;
        Ok((dfa, map))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}
