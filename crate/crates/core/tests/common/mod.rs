#![allow(dead_code)]
pub mod oracle;

use std::path::PathBuf;

use gamesynth::abstraction::{AbstractSpaces, Grid, InputFilter};
use gamesynth::dfa::{Dfa, DfaSpec, LabelMap};
use gamesynth::linalg::Mat;
use gamesynth::model::{reduce_model, ReducedOrderGame, ReductionHints, StochasticGame};
use gamesynth::relation::RelationCertificate;

pub struct Case {
    pub game: StochasticGame,
    pub red: ReducedOrderGame,
    pub spaces: AbstractSpaces,
    pub dfa: Dfa,
    pub map: LabelMap,
    pub cert: RelationCertificate,
}

pub fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn finish(game: StochasticGame, mut red: ReducedOrderGame, spaces: AbstractSpaces, dfa: &str, cert: &str) -> Case {
    let (dfa, map) = DfaSpec::load(&configs().join(dfa)).unwrap().build().unwrap();
    let cert = RelationCertificate::load(&configs().join(cert)).unwrap();
    red.r_r = Some(cert.r_r.clone());
    Case {
        game,
        red,
        spaces,
        dfa,
        map,
        cert,
    }
}

pub fn running() -> Case {
    let game = StochasticGame::load(&configs().join("running/game.json")).unwrap();
    let p = Mat::from_column_slice(3, 1, &[0.6199, 0.4443, 0.6219]);
    let hints = ReductionHints {
        a_r: Some(Mat::from_element(1, 1, 0.55)),
        e_r: Some(Mat::from_element(1, 1, 0.32)),
        d_r: Some(Mat::from_element(1, 1, 1.0)),
    };
    let red = reduce_model(&game, &p, None, &hints).unwrap();
    let spaces = AbstractSpaces::new(
        Grid::new(vec![-12.0], vec![12.0], vec![0.24]).unwrap(),
        Grid::new(vec![-1.5], vec![1.5], vec![0.06]).unwrap(),
        Grid::new(vec![-0.5], vec![0.5], vec![0.1]).unwrap(),
        None,
    )
    .unwrap();
    finish(game, red, spaces, "running/psi.json", "running/certificate.json")
}

pub fn quadrotor(eta: f64) -> Case {
    let game = StochasticGame::load(&configs().join("quadrotor/game.json")).unwrap();
    let p = Mat::identity(2, 2);
    let red = reduce_model(&game, &p, Some(&game.b.clone()), &ReductionHints::default()).unwrap();
    let spaces = AbstractSpaces::new(
        Grid::new(vec![-0.7, -0.5], vec![0.7, 0.5], vec![eta, eta]).unwrap(),
        Grid::new(vec![-0.25], vec![0.25], vec![0.02]).unwrap(),
        Grid::new(vec![-0.6], vec![0.6], vec![0.1]).unwrap(),
        Some(&InputFilter {
            lo: vec![-0.12],
            hi: vec![0.12],
        }),
    )
    .unwrap();
    finish(game, red, spaces, "quadrotor/psi1.json", "quadrotor/certificate.json")
}
