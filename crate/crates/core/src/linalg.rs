//! Dense linear-algebra helpers and JSON encoding for matrices.
//!
//! Matrices travel as row-major nested arrays. For convenience a bare number
//! decodes as a 1×1 matrix and a flat array as a column vector.

use nalgebra::{DMatrix, DVector};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum MatRepr {
    Scalar(f64),
    Flat(Vec<f64>),
    Rows(Vec<Vec<f64>>),
}

pub fn rows_of(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

pub fn mat_from_rows(rows: &[Vec<f64>]) -> Result<Mat> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::Config("ragged matrix rows".into()));
    }
    Ok(Mat::from_fn(r, c, |i, j| rows[i][j]))
}

pub mod mat_serde {
    use super::*;

    pub fn serialize<S: Serializer>(m: &Mat, s: S) -> std::result::Result<S::Ok, S::Error> {
        rows_of(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Mat, D::Error> {
        match MatRepr::deserialize(d)? {
            MatRepr::Scalar(v) => Ok(Mat::from_element(1, 1, v)),
            MatRepr::Flat(v) => Ok(Mat::from_column_slice(v.len(), 1, &v)),
            MatRepr::Rows(rows) => mat_from_rows(&rows).map_err(D::Error::custom),
        }
    }
}

pub mod opt_mat_serde {
    use super::*;

    pub fn serialize<S: Serializer>(m: &Option<Mat>, s: S) -> std::result::Result<S::Ok, S::Error> {
        m.as_ref().map(rows_of).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<Option<Mat>, D::Error> {
        #[derive(Deserialize)]
        struct Wrap(#[serde(with = "super::mat_serde")] Mat);
        Ok(Option::<Wrap>::deserialize(d)?.map(|w| w.0))
    }
}

pub mod vec_serde {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Vector, s: S) -> std::result::Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vector, D::Error> {
        match MatRepr::deserialize(d)? {
            MatRepr::Scalar(v) => Ok(Vector::from_element(1, v)),
            MatRepr::Flat(v) => Ok(Vector::from_vec(v)),
            MatRepr::Rows(rows) => {
                let m = mat_from_rows(&rows).map_err(D::Error::custom)?;
                if m.ncols() != 1 {
                    return Err(D::Error::custom("expected a column vector"));
                }
                Ok(m.column(0).into_owned())
            }
        }
    }
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

pub fn eig_sym(m: &Mat) -> (Vector, Mat) {
    let e = symmetrize(m).symmetric_eigen();
    (e.eigenvalues, e.eigenvectors)
}

pub fn lambda_max(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    eig_sym(m).0.max()
}

pub fn lambda_min(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    eig_sym(m).0.min()
}

/// `f(M)` for symmetric `M` through its eigendecomposition.
pub fn sym_fn(m: &Mat, f: impl Fn(f64) -> f64) -> Mat {
    let (vals, vecs) = eig_sym(m);
    let d = Mat::from_diagonal(&vals.map(f));
    &vecs * d * vecs.transpose()
}

pub fn inv_sqrt_pd(m: &Mat) -> Result<Mat> {
    if lambda_min(m) <= 0.0 {
        return Err(Error::CertificateInvalid("matrix not positive definite".into()));
    }
    Ok(sym_fn(m, |v| 1.0 / v.sqrt()))
}

pub fn is_pd(m: &Mat) -> bool {
    m.nrows() == m.ncols() && symmetrize(m).cholesky().is_some()
}

pub fn inverse(m: &Mat, what: &'static str) -> Result<Mat> {
    m.clone().try_inverse().ok_or(Error::Singular(what))
}

/// ‖v‖_M = sqrt(vᵀ M v).
pub fn m_norm(m: &Mat, v: &Vector) -> f64 {
    (v.transpose() * m * v)[(0, 0)].max(0.0).sqrt()
}

pub fn pinv(m: &Mat) -> Mat {
    if m.is_empty() {
        return Mat::zeros(m.ncols(), m.nrows());
    }
    let scale = m.amax().max(1.0);
    let eps = 1e-12 * scale * (m.nrows().max(m.ncols()) as f64);
    m.clone()
        .pseudo_inverse(eps)
        .unwrap_or_else(|_| Mat::zeros(m.ncols(), m.nrows()))
}

pub fn rank(m: &Mat) -> usize {
    if m.is_empty() {
        return 0;
    }
    let scale = m.amax().max(1e-300);
    let tol = 1e-10 * scale * (m.nrows().max(m.ncols()) as f64);
    m.clone().svd(false, false).rank(tol)
}

pub fn hstack(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.nrows(), b.nrows());
    let mut out = Mat::zeros(a.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((0, a.ncols()), b.shape()).copy_from(b);
    out
}

pub fn vstack(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.ncols(), b.ncols());
    let mut out = Mat::zeros(a.nrows() + b.nrows(), a.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((a.nrows(), 0), b.shape()).copy_from(b);
    out
}

pub fn check_shape(
    context: &'static str,
    m: &Mat,
    rows: usize,
    cols: usize,
) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(crate::error::dim_err(
            context,
            format!("{rows}x{cols}"),
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    Ok(())
}

/// All 2^n sign patterns scaled per coordinate.
pub fn box_vertices(half: &[f64]) -> Vec<Vector> {
    let n = half.len();
    (0..1usize << n)
        .map(|mask| {
            Vector::from_iterator(
                n,
                (0..n).map(|i| if mask >> i & 1 == 1 { half[i] } else { -half[i] }),
            )
        })
        .collect()
}
