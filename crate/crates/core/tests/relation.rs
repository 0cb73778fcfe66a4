mod common;

use gamesynth::linalg::{Mat, Vector};
use gamesynth::relation::*;
use gamesynth::Error;

#[test]
fn running_bundled_certificate_relaxed() {
    let c = common::running();
    let rep = verify_certificate(&c.game, &c.red, &c.spaces, &c.cert, RELAXED_TOL).unwrap();
    for cond in &rep.conditions {
        println!("{:40} {:+.6} {}", cond.name, cond.margin, cond.pass);
    }
    println!("{:?} kmin {}", rep.gammas, rep.kappa_min);
    assert!(rep.all_pass);
    assert!((rep.gammas.total - 0.045183).abs() < 5e-5);
    assert!((rep.kappa_min.sqrt() - 0.5493).abs() < 5e-4);
}

#[test]
fn quadrotor_bundled_certificate_relaxed() {
    let c = common::quadrotor(0.02);
    let rep = verify_certificate(&c.game, &c.red, &c.spaces, &c.cert, RELAXED_TOL).unwrap();
    for cond in &rep.conditions {
        println!("{:40} {:+.6} {}", cond.name, cond.margin, cond.pass);
    }
    assert!(rep.all_pass);
    assert_eq!(rep.gammas.gamma1, 0.0);
    assert_eq!(rep.gammas.gamma2, 0.0);
    assert_eq!(rep.gammas.gamma4, 0.0);
}

#[test]
fn halved_eps_fails_contraction() {
    let mut c = common::running();
    c.cert.eps /= 2.0;
    let rep = verify_certificate(&c.game, &c.red, &c.spaces, &c.cert, RELAXED_TOL).unwrap();
    assert!(!rep.all_pass);
    let failed: Vec<_> = rep.failed().iter().map(|f| f.name.clone()).collect();
    assert!(failed.iter().any(|n| n.contains("kappa_min) <=")), "{failed:?}");
}

#[test]
fn running_default_r_tilde_matches_printed() {
    let c = common::running();
    let rt = default_r_tilde(&c.game, &c.red);
    for (a, b) in rt.iter().zip([0.0422, 0.0213, 0.0562]) {
        assert!((a - b).abs() < 1e-4, "{a} vs {b}");
    }
}

#[test]
fn optimal_r_r_matches_printed() {
    let c = common::running();
    let rr = optimal_abstract_noise(&c.cert.m, &c.red.p, &c.game.r).unwrap();
    assert!((rr[(0, 0)] - 0.8256).abs() < 2e-3, "{}", rr[(0, 0)]);
}

#[test]
fn zero_delta_mismatch_reported() {
    let c = common::running();
    let err = compute_gammas(
        &c.game, &c.red, &c.spaces, &c.cert.m, 0.0, &c.cert.r_tilde, &c.cert.r_r, &c.cert.m_w, 0.05,
    )
    .unwrap_err();
    assert!(matches!(err, Error::InfeasibleNoiseMismatch(_)));
}

#[test]
fn initial_state_running() {
    let c = common::running();
    let x0 = Vector::from_vec(vec![3.8, 4.1, 2.9]);
    let idx = initial_abstract_state(&c.cert, &c.red, &c.spaces, &x0).unwrap();
    let xr = c.spaces.state_center(idx).unwrap();
    assert!(in_relation(&c.cert, &c.red.p, &x0, &xr));
    let far = Vector::from_vec(vec![100.0, -100.0, 100.0]);
    assert!(matches!(
        initial_abstract_state(&c.cert, &c.red, &c.spaces, &far),
        Err(Error::NoInitialAbstractState { .. })
    ));
}

#[test]
fn interface_reduces_to_r_tilde_on_p_image() {
    let c = common::quadrotor(0.05);
    let xr = Vector::from_vec(vec![0.1, -0.2]);
    let x = &c.red.p * &xr;
    let ur = Vector::from_vec(vec![0.08]);
    let out = interface_input(&c.cert, &c.game, &c.red, &x, &xr, &ur);
    assert!((out.u[0] - 0.08).abs() < 1e-15);
    assert!(out.within_polytope);
    let _ = Mat::zeros(1, 1);
}

fn settings(delta: f64, range: (f64, f64)) -> RelationSettings {
    RelationSettings {
        delta,
        eps_range: range,
        eps_samples: 24,
        kappa_samples: 20,
        m_w: Mat::from_element(1, 1, 1.0),
        eps_w: 0.05,
        r_tilde: None,
    }
}

#[test]
fn search_running() {
    let c = common::running();
    let rep = establish_relation(&c.game, &c.red, &c.spaces, &settings(0.001, (0.05, 1.0))).unwrap();
    println!("tried {} feasible {} best {:?}", rep.samples_tried, rep.sdp_feasible, rep.best_slack);
    let cert = rep.certificate.expect("certificate");
    println!("eps {} kappa {:?} M {} K {} L {} gammas {:?}", cert.eps, cert.kappa, cert.m, cert.k, cert.l, cert.gammas);
    assert!(cert.eps <= 0.3);
}

#[test]
fn search_quadrotor() {
    let c = common::quadrotor(0.02);
    let mut s = settings(0.0, (0.05, 0.4));
    s.r_tilde = Some(Mat::from_element(1, 1, 1.0));
    let rep = establish_relation(&c.game, &c.red, &c.spaces, &s).unwrap();
    println!("tried {} feasible {} best {:?}", rep.samples_tried, rep.sdp_feasible, rep.best_slack);
    let cert = rep.certificate.expect("certificate");
    println!("eps {} kappa {:?} M {} K {} gammas {:?}", cert.eps, cert.kappa, cert.m, cert.k, cert.gammas);
    assert!(cert.eps <= 0.35);
}

#[test]
fn desk_grid_needs_narrow_inputs() {
    let found = |up: f64| {
        let mut c = common::quadrotor(0.05);
        c.spaces = gamesynth::abstraction::AbstractSpaces::new(
            c.spaces.grid.clone(),
            c.spaces.u_grid.clone(),
            c.spaces.w_grid.clone(),
            Some(&gamesynth::abstraction::InputFilter { lo: vec![-up - 1e-9], hi: vec![up + 1e-9] }),
        )
        .unwrap();
        let mut s = settings(0.0, (0.05, 1.5));
        s.r_tilde = Some(Mat::from_element(1, 1, 1.0));
        establish_relation(&c.game, &c.red, &c.spaces, &s).unwrap().certificate
    };
    assert!(found(0.12).is_none());
    let cert = found(0.02).unwrap();
    assert!(cert.eps > 0.6 && cert.eps <= 1.5);
}
