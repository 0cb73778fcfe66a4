mod common;

use std::sync::OnceLock;

use common::oracle::MicroGame;
use gamesynth::abstraction::{rep_point, FiniteAbstraction, Grid, KernelMode};
use gamesynth::dfa::{dfa_step, q_eps_set};
use gamesynth::linalg::Vector;
use gamesynth::model::{eval_dynamics, slope_gain, NonlinKind, SlopeNonlinearity};
use gamesynth::relation::in_relation;
use gamesynth::synthesis::{bellman_step, Problem, ValueTable};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn running() -> &'static common::Case {
    static CASE: OnceLock<common::Case> = OnceLock::new();
    CASE.get_or_init(common::running)
}

fn small_abstraction() -> &'static FiniteAbstraction {
    static ABS: OnceLock<FiniteAbstraction> = OnceLock::new();
    ABS.get_or_init(|| {
        let c = running();
        let mut spaces = c.spaces.clone();
        spaces.u_grid = Grid::new(vec![-1.5], vec![1.5], vec![0.5]).unwrap();
        spaces.u_prime = (0..6).collect();
        FiniteAbstraction::build(&c.red, spaces, KernelMode::Dense).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn ball_labels_monotone_in_eps(y in -3.0f64..3.0, e1 in 0.0f64..1.0, extra in 0.0f64..1.0) {
        let map = &running().map;
        let small = map.labels_within_ball(&[y], e1);
        let big = map.labels_within_ball(&[y], e1 + extra);
        prop_assert!(small.iter().all(|s| big.contains(s)));
    }

    #[test]
    fn zero_eps_matches_label_of(y in -3.0f64..3.0, q in 0usize..4) {
        let c = running();
        let s = c.map.label_of(&[y]).unwrap();
        prop_assert_eq!(c.map.labels_within_ball(&[y], 0.0), vec![s]);
        prop_assert_eq!(q_eps_set(&c.dfa, &c.map, q, Some(&[y]), 0.0), vec![dfa_step(&c.dfa, q, s)]);
    }

    #[test]
    fn slope_gain_in_sector(
        kind in 0usize..5,
        param in 0.1f64..3.0,
        x in prop::collection::vec(-20.0f64..20.0, 3),
        xr in -12.0f64..12.0,
    ) {
        let c = running();
        let mut game = c.game.clone();
        let kinds = [NonlinKind::Zero, NonlinKind::Sine, NonlinKind::ScaledSine, NonlinKind::Saturation, NonlinKind::Tanh];
        game.phi = SlopeNonlinearity::new(kinds[kind], param).unwrap();
        let b = slope_gain(&game, &c.red, &Vector::from_vec(x), &Vector::from_vec(vec![xr]));
        prop_assert!(b == 0.0 || (game.phi.b_lower..=game.phi.b_upper).contains(&b));
    }

    #[test]
    fn dynamics_affine_in_inputs(
        x in prop::collection::vec(-5.0f64..5.0, 3),
        u1 in prop::collection::vec(-2.0f64..2.0, 3),
        u2 in prop::collection::vec(-2.0f64..2.0, 3),
        w1 in -0.5f64..0.5, w2 in -0.5f64..0.5,
        n1 in -3.0f64..3.0, n2 in -3.0f64..3.0,
        t in 0.0f64..1.0,
    ) {
        let g = &running().game;
        let x = Vector::from_vec(x);
        let (u1, u2) = (Vector::from_vec(u1), Vector::from_vec(u2));
        let f = |u: &Vector, w: f64, n: f64| {
            eval_dynamics(g, &x, u, &Vector::from_vec(vec![w]), &Vector::from_vec(vec![n])).unwrap()
        };
        let mix = f(&(&u1 * t + &u2 * (1.0 - t)), t * w1 + (1.0 - t) * w2, t * n1 + (1.0 - t) * n2);
        let sep = f(&u1, w1, n1) * t + f(&u2, w2, n2) * (1.0 - t);
        prop_assert!((mix - sep).amax() < 1e-11);
    }

    #[test]
    fn quantization_within_half_cell(xr in -12.0f64..12.0) {
        let grid = &running().spaces.grid;
        let idx = rep_point(grid, &[xr]);
        let c = grid.center(idx);
        prop_assert!((c[0] - xr).abs() <= 0.12 + 1e-12);
    }

    #[test]
    fn relation_scale_invariant(x in prop::collection::vec(-5.0f64..5.0, 3), xr in -6.0f64..6.0, s in 0.01f64..100.0) {
        let c = running();
        let mut scaled = c.cert.clone();
        scaled.m *= s;
        scaled.eps *= s.sqrt();
        let (x, xr) = (Vector::from_vec(x), Vector::from_vec(vec![xr]));
        let d = &x - &c.red.p * &xr;
        let v = (d.transpose() * &c.cert.m * &d)[(0, 0)];
        let e2 = c.cert.eps * c.cert.eps;
        // skip pairs within rounding distance of the boundary
        prop_assume!((v - e2).abs() > 1e-9 * e2);
        prop_assert_eq!(in_relation(&c.cert, &c.red.p, &x, &xr), in_relation(&scaled, &c.red.p, &x, &xr));
    }

    #[test]
    fn kernel_rows_stochastic(x in 0usize..101, u in 0usize..6, w in 0usize..10) {
        let k = &small_abstraction().kernel;
        let r = k.row_index(x, u, w);
        prop_assert!((k.row_sum(r) - 1.0).abs() < 1e-9);
        if x == k.absorbing() {
            prop_assert_eq!(k.prob(x, u, w, x), 1.0);
            prop_assert!(k.row(r).all(|(j, p)| j == x || p == 0.0));
        }
    }

    #[test]
    fn value_iteration_properties(seed in any::<u64>(), h in 1usize..6, delta in prop::sample::select(vec![0.0, 0.05, 0.1])) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let g = MicroGame::random(&mut rng, 1, delta, f64::INFINITY);
        let (k, ctx, dfa) = (g.kernel(), g.ctx(), g.dfa());
        let up: Vec<usize> = (0..g.n_u).collect();
        for problem in [Problem::Satisfaction, Problem::Violation] {
            let mut v = ValueTable::initial(g.n_s, &dfa);
            for _ in 0..h {
                let next = bellman_step(&k, &ctx, &up, &v, problem).values;
                for x in 0..g.n_s {
                    for q in 0..g.n_q {
                        let (a, b) = (v.get(x, q), next.get(x, q));
                        prop_assert!((0.0..=1.0).contains(&b));
                        prop_assert!(b >= a - 1e-15, "horizon monotonicity {a} > {b}");
                        if g.accepting[q] {
                            prop_assert_eq!(b, 1.0);
                        }
                    }
                }
                v = next;
            }
        }
    }

    #[test]
    fn operator_monotone(seed in any::<u64>(), lo in prop::collection::vec(0.0f64..1.0, 8), bump in prop::collection::vec(0.0f64..1.0, 8)) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let g = MicroGame::random(&mut rng, 1, 0.1, f64::INFINITY);
        let (k, ctx) = (g.kernel(), g.ctx());
        let up: Vec<usize> = (0..g.n_u).collect();
        let n = g.n_s * g.n_q;
        let v1 = ValueTable { n_states: g.n_s, n_q: g.n_q, values: lo[..n].to_vec() };
        let v2 = ValueTable {
            n_states: g.n_s,
            n_q: g.n_q,
            values: lo[..n].iter().zip(&bump).map(|(a, b)| (a + b * (1.0 - a)).min(1.0)).collect(),
        };
        for problem in [Problem::Satisfaction, Problem::Violation] {
            let a = bellman_step(&k, &ctx, &up, &v1, problem).values;
            let b = bellman_step(&k, &ctx, &up, &v2, problem).values;
            for (x, y) in a.values.iter().zip(&b.values) {
                prop_assert!(x <= &(y + 1e-15));
            }
        }
    }
}
