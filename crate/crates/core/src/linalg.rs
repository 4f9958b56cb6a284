//! Dense linear-algebra helpers shared by the oracle, metric and coupling code.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Symmetric tolerance used when validating covariance-like inputs.
pub const SYMMETRY_TOL: f64 = 1e-10;

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.amax().max(1.0);
    let n = m.nrows();
    (0..n).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol * scale))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = symmetrize(m).symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Checks symmetry and strict positivity of the spectrum.
pub fn check_spd(what: &str, m: &DMatrix<f64>) -> Result<()> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite {
            what: what.to_string(),
        });
    }
    if !is_symmetric(m, SYMMETRY_TOL) || sym_eigenvalues(m).first().is_none_or(|&l| l <= 0.0) {
        return Err(Error::NotSpd {
            what: what.to_string(),
        });
    }
    Ok(())
}

/// Square root of a symmetric positive semidefinite matrix.
///
/// Eigenvalues below `1e-12 · trace` are floored to that value before taking
/// roots, which keeps nearly singular covariances well conditioned.
pub fn sqrtm_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    map_spectrum(m, |l, floor| l.max(floor).sqrt())
}

/// Inverse square root with the same eigenvalue floor as [`sqrtm_psd`].
pub fn inv_sqrtm_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    map_spectrum(m, |l, floor| 1.0 / l.max(floor).sqrt())
}

fn map_spectrum(m: &DMatrix<f64>, f: impl Fn(f64, f64) -> f64) -> DMatrix<f64> {
    let eig = symmetrize(m).symmetric_eigen();
    let floor = 1e-12 * m.trace().abs().max(f64::MIN_POSITIVE);
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| f(l, floor)));
    let out = &eig.eigenvectors * d * eig.eigenvectors.transpose();
    symmetrize(&out)
}

/// Nodes and weights of the 5-point Gauss–Legendre rule on [-1, 1].
const GL5: [(f64, f64); 5] = [
    (0.0, 0.568_888_888_888_888_9),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
];

/// Composite 5-point Gauss–Legendre quadrature of a matrix-valued integrand.
pub fn integrate_matrix(
    a: f64,
    b: f64,
    panels: usize,
    rows: usize,
    cols: usize,
    f: impl Fn(f64) -> DMatrix<f64>,
) -> DMatrix<f64> {
    let panels = panels.max(1);
    let h = (b - a) / panels as f64;
    let mut acc = DMatrix::zeros(rows, cols);
    for p in 0..panels {
        let lo = a + h * p as f64;
        let mid = lo + 0.5 * h;
        for &(x, w) in &GL5 {
            acc += f(mid + 0.5 * h * x) * (0.5 * h * w);
        }
    }
    acc
}

/// Scalar version of [`integrate_matrix`].
pub fn integrate_scalar(a: f64, b: f64, panels: usize, f: impl Fn(f64) -> f64) -> f64 {
    let panels = panels.max(1);
    let h = (b - a) / panels as f64;
    let mut acc = 0.0;
    for p in 0..panels {
        let mid = a + h * (p as f64 + 0.5);
        for &(x, w) in &GL5 {
            acc += f(mid + 0.5 * h * x) * (0.5 * h * w);
        }
    }
    acc
}

pub fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().exp()
}

/// Pairwise (cascade) summation; order is fixed by the slice order only.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let (l, r) = values.split_at(values.len() / 2);
    pairwise_sum(l) + pairwise_sum(r)
}

pub fn vector_from(values: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(values)
}

/// Serde adapter storing a `DMatrix` as row-major nested arrays.
pub mod serde_matrix {
    use nalgebra::DMatrix;
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        from_rows(&rows).map_err(D::Error::custom)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, String> {
        let nrows = rows.len();
        if nrows == 0 {
            return Err("matrix must have at least one row".into());
        }
        let ncols = rows[0].len();
        if ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
            return Err("matrix rows must be non-empty and of equal length".into());
        }
        Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
    }
}

/// Serde adapter storing a `DVector` as a flat array.
pub mod serde_vector {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}
