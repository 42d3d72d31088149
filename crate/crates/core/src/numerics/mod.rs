//! Dense linear algebra and seeded randomness shared by the model code.
//!
//! Matrices are `nalgebra::DMatrix<f64>`; whenever a matrix crosses a file
//! boundary it is written row by row (see [`serde_matrix`]).

mod rng;
pub mod serde_matrix;

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{LvmError, Result};

pub use rng::RngStream;

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative tolerance for accepting a matrix as symmetric.
pub const SYMMETRY_TOL: f64 = 1e-12;

const EIGEN_MAX_ITER: usize = 10_000;

pub fn ensure_finite(a: &Matrix) -> Result<()> {
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            if !a[(i, j)].is_finite() {
                return Err(LvmError::NonFinite { row: i, col: j });
            }
        }
    }
    Ok(())
}

fn ensure_square(a: &Matrix) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(LvmError::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    Ok(())
}

/// Largest |a_ij - a_ji| relative to the largest |a_ij|.
pub fn asymmetry(a: &Matrix) -> f64 {
    let scale = a.amax().max(f64::MIN_POSITIVE);
    let mut worst = 0.0_f64;
    for i in 0..a.nrows() {
        for j in 0..i {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst / scale
}

/// Checks symmetry within [`SYMMETRY_TOL`] and returns `(A + Aᵀ)/2`.
pub fn symmetrize(a: &Matrix) -> Result<Matrix> {
    ensure_square(a)?;
    ensure_finite(a)?;
    let deviation = asymmetry(a);
    if deviation > SYMMETRY_TOL {
        return Err(LvmError::NotSymmetric { deviation });
    }
    Ok((a + a.transpose()) * 0.5)
}

/// Symmetric positive definite matrix together with its lower Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    matrix: Matrix,
    factor: Matrix,
}

impl SpdMatrix {
    pub fn new(a: Matrix) -> Result<Self> {
        let matrix = symmetrize(&a)?;
        let factor = cholesky(&matrix)?;
        Ok(SpdMatrix { matrix, factor })
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_diagonal(&vec![1.0; dim]).expect("identity is positive definite")
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(Matrix::from_diagonal(&Vector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    /// Lower-triangular `L` with `L Lᵀ = A`.
    pub fn cholesky(&self) -> &Matrix {
        &self.factor
    }

    pub fn into_matrix(self) -> Matrix {
        self.matrix
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.factor.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// Solves `A x = b` through the Cholesky factor.
    pub fn solve(&self, b: &Matrix) -> Matrix {
        let y = self
            .factor
            .solve_lower_triangular(b)
            .expect("Cholesky factor has positive diagonal");
        self.factor
            .transpose()
            .solve_upper_triangular(&y)
            .expect("Cholesky factor has positive diagonal")
    }

    pub fn inverse(&self) -> Matrix {
        self.solve(&Matrix::identity(self.dim(), self.dim()))
    }

    pub fn is_diagonal(&self) -> bool {
        is_diagonal(&self.matrix)
    }
}

impl Serialize for SpdMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        serde_matrix::rows::serialize(&self.matrix, s)
    }
}

impl<'de> Deserialize<'de> for SpdMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let m = serde_matrix::rows::deserialize(d)?;
        SpdMatrix::new(m).map_err(serde::de::Error::custom)
    }
}

pub fn is_diagonal(a: &Matrix) -> bool {
    (0..a.nrows()).all(|i| (0..a.ncols()).all(|j| i == j || a[(i, j)] == 0.0))
}

/// Kronecker product; block `(i, j)` of the result is `a[i,j] * b`.
pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    let (br, bc) = b.shape();
    let mut out = Matrix::zeros(a.nrows() * br, a.ncols() * bc);
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            let s = a[(i, j)];
            out.view_mut((i * br, j * bc), (br, bc)).copy_from(&(b * s));
        }
    }
    out
}

/// Column-stacking vectorization.
pub fn vec(a: &Matrix) -> Vec<f64> {
    // nalgebra storage is column-major, so the raw slice is already vec(A).
    a.as_slice().to_vec()
}

/// Inverse of [`vec`].
pub fn unvec(v: &[f64], rows: usize, cols: usize) -> Matrix {
    Matrix::from_column_slice(rows, cols, v)
}

/// Stacks the lower triangle (diagonal included) column by column.
pub fn vech(a: &Matrix) -> Result<Vec<f64>> {
    let a = symmetrize(a)?;
    let n = a.nrows();
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for j in 0..n {
        for i in j..n {
            out.push(a[(i, j)]);
        }
    }
    Ok(out)
}

/// Free parameters of the matrix normal model over an `n x p` matrix:
/// `vec(M)`, `vech(Σ)` and `vech(Ω)`.
pub fn matrix_normal_param_count(n: u64, p: u64) -> u64 {
    assert!(n >= 1 && p >= 1, "matrix dimensions must be positive");
    let count = (2 * n * p + n * (n + 1) + p * (p + 1)) / 2;
    debug_assert!(count > n * p);
    count
}

/// Lower Cholesky factor of a symmetric matrix.
///
/// Fails with the index of the first non-positive pivot.
pub fn cholesky(a: &Matrix) -> Result<Matrix> {
    let a = symmetrize(a)?;
    let n = a.nrows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(LvmError::NotPositiveDefinite { pivot: j, value: d });
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// Eigendecomposition of a symmetric matrix, eigenvalues in descending order.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub values: Vector,
    /// Orthonormal eigenvectors stored as columns, matching `values`.
    pub vectors: Matrix,
}

pub fn sym_eig(a: &Matrix) -> Result<SymEig> {
    let a = symmetrize(a)?;
    let eig = SymmetricEigen::try_new(a, f64::EPSILON, EIGEN_MAX_ITER).ok_or(LvmError::EigenNoConvergence {
        iterations: EIGEN_MAX_ITER,
    })?;
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = Vector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = Matrix::from_columns(
        &order
            .iter()
            .map(|&i| eig.eigenvectors.column(i).into_owned())
            .collect::<Vec<_>>(),
    );
    Ok(SymEig { values, vectors })
}

/// Thin SVD with singular values in descending order.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub singular_values: Vector,
    pub v_t: Matrix,
}

pub fn svd(a: &Matrix) -> Result<Svd> {
    ensure_finite(a)?;
    let mut s = SVD::try_new(a.clone(), true, true, f64::EPSILON, 0).ok_or(LvmError::SvdNoConvergence)?;
    s.sort_by_singular_values();
    Ok(Svd {
        u: s.u.expect("u requested"),
        singular_values: s.singular_values,
        v_t: s.v_t.expect("v_t requested"),
    })
}

/// Dense inverse through LU.
pub fn inverse(a: &Matrix, context: &str) -> Result<Matrix> {
    ensure_square(a)?;
    a.clone().lu().try_inverse().ok_or_else(|| LvmError::Singular {
        context: context.to_string(),
    })
}

/// 2-norm condition number; infinite for singular input.
pub fn condition_number(a: &Matrix) -> Result<f64> {
    let s = svd(a)?;
    let max = s.singular_values.max();
    let min = s.singular_values.min();
    Ok(if min == 0.0 { f64::INFINITY } else { max / min })
}

pub fn relative_frobenius(estimate: &Matrix, reference: &Matrix) -> f64 {
    (estimate - reference).norm() / reference.norm()
}

/// Orthonormal basis of the column span (thin QR).
pub fn orthonormal_basis(a: &Matrix) -> Matrix {
    a.clone().qr().q()
}

/// Principal angles (radians, ascending) between the column spans of `a` and `b`.
pub fn principal_angles(a: &Matrix, b: &Matrix) -> Result<Vec<f64>> {
    if a.nrows() != b.nrows() {
        return Err(LvmError::mismatch("principal angles", a.nrows(), b.nrows()));
    }
    let qa = orthonormal_basis(a);
    let qb = orthonormal_basis(b);
    let s = svd(&(qa.transpose() * qb))?;
    Ok(s.singular_values.iter().map(|c| c.clamp(-1.0, 1.0).acos()).collect())
}

pub fn column_means(data: &Matrix) -> Vector {
    let n = data.nrows() as f64;
    Vector::from_iterator(data.ncols(), data.column_iter().map(|c| c.sum() / n))
}

/// Covariance with divisor `N - ddof`.
pub fn sample_covariance(data: &Matrix, ddof: usize) -> Matrix {
    let mean = column_means(data);
    let mut centered = data.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let denom = (data.nrows() - ddof) as f64;
    let cov = centered.transpose() * &centered / denom;
    (&cov + cov.transpose()) * 0.5
}

pub fn block_diagonal(blocks: &[&Matrix]) -> Matrix {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), b.shape()).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Stacks matrices with equal column counts vertically.
pub fn vstack(blocks: &[&Matrix]) -> Matrix {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        out.view_mut((r, 0), b.shape()).copy_from(*b);
        r += b.nrows();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_matrix(rows: usize, cols: usize, rng: &mut RngStream) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.standard_normal())
    }

    fn random_spd(dim: usize, rng: &mut RngStream) -> Matrix {
        let a = random_matrix(dim, dim, rng);
        &a * a.transpose() + Matrix::identity(dim, dim) * 0.5
    }

    #[test]
    fn kron_dims_and_blocks() {
        let mut rng = RngStream::new(3);
        let a = random_matrix(2, 3, &mut rng);
        let b = random_matrix(4, 5, &mut rng);
        let k = kron(&a, &b);
        assert_eq!(k.shape(), (8, 15));
        assert_eq!(k.view((4, 10), (4, 5)).into_owned(), &b * a[(1, 2)]);

        let m = random_matrix(2, 2, &mut rng);
        let z = Matrix::zeros(2, 2);
        assert_eq!(kron(&Matrix::identity(2, 2), &m), block_diagonal(&[&m, &m]));
        assert_ne!(m, z);

        let scalar = Matrix::from_row_slice(1, 1, &[2.0]);
        assert_eq!(
            kron(&scalar, &Matrix::identity(2, 2)),
            Matrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 2.0])
        );
    }

    #[test]
    fn vec_stacks_columns() {
        let a = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(vec(&a), vec![1.0, 3.0, 2.0, 4.0]);
        assert_eq!(vec(&Matrix::from_row_slice(1, 1, &[7.0])), vec![7.0]);
        assert_eq!(vec(&Matrix::zeros(2, 2)), vec![0.0; 4]);
        assert_eq!(unvec(&vec(&a), 2, 2), a);
    }

    #[test]
    fn vech_lower_triangle() {
        let mut rng = RngStream::new(1);
        assert_eq!(vech(&random_spd(3, &mut rng)).unwrap().len(), 6);
        let a = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 5.0]);
        assert_eq!(vech(&a).unwrap(), vec![1.0, 2.0, 5.0]);
        assert_eq!(vech(&Matrix::identity(2, 2)).unwrap(), vec![1.0, 0.0, 1.0]);
        let asym = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 2.5, 5.0]);
        assert!(matches!(vech(&asym), Err(LvmError::NotSymmetric { .. })));
    }

    #[test]
    fn param_count_examples() {
        assert_eq!(matrix_normal_param_count(2, 2), 10);
        assert_eq!(matrix_normal_param_count(1, 1), 3);
        // (2·15 + 3·4 + 5·6) / 2
        assert_eq!(matrix_normal_param_count(3, 5), 36);
        assert!(matrix_normal_param_count(3, 5) > 15);
    }

    #[test]
    fn cholesky_examples() {
        assert_eq!(cholesky(&Matrix::identity(3, 3)).unwrap(), Matrix::identity(3, 3));
        let d = Matrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 9.0]);
        assert_eq!(
            cholesky(&d).unwrap(),
            Matrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0])
        );
        let mut rng = RngStream::new(5);
        let a = random_spd(5, &mut rng);
        let l = cholesky(&a).unwrap();
        assert!(relative_frobenius(&(&l * l.transpose()), &a) < 1e-10);
    }

    #[test]
    fn cholesky_reports_pivot() {
        let a = Matrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0]);
        match cholesky(&a) {
            Err(LvmError::NotPositiveDefinite { pivot, .. }) => assert_eq!(pivot, 2),
            other => panic!("expected pivot failure, got {other:?}"),
        }
        assert!(SpdMatrix::new(-Matrix::identity(2, 2)).is_err());
    }

    #[test]
    fn spd_symmetrizes_within_tolerance() {
        let mut a = Matrix::identity(2, 2) * 2.0;
        a[(0, 1)] = 0.5;
        a[(1, 0)] = 0.5 + 1e-14;
        let s = SpdMatrix::new(a).unwrap();
        assert_eq!(s.matrix()[(0, 1)], s.matrix()[(1, 0)]);
    }

    #[test]
    fn sym_eig_examples() {
        let e = sym_eig(&Matrix::identity(4, 4)).unwrap();
        assert!(e.values.iter().all(|v| (v - 1.0).abs() < 1e-14));

        let e = sym_eig(&Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 3.0])).unwrap();
        assert_eq!(e.values.as_slice(), &[3.0, 1.0]);
        assert!((e.vectors[(1, 0)].abs() - 1.0).abs() < 1e-14);
        assert!((e.vectors[(0, 1)].abs() - 1.0).abs() < 1e-14);

        let mut rng = RngStream::new(9);
        let a = random_spd(6, &mut rng);
        let e = sym_eig(&a).unwrap();
        let recon = &e.vectors * Matrix::from_diagonal(&e.values) * e.vectors.transpose();
        assert!(relative_frobenius(&recon, &a) < 1e-8);
        for i in 0..6 {
            let v = e.vectors.column(i);
            assert!((&a * v - v * e.values[i]).norm() < 1e-8);
        }
        let vtv = e.vectors.transpose() * &e.vectors;
        assert!((vtv - Matrix::identity(6, 6)).amax() < 1e-10);
        assert!(e.values.as_slice().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn sym_eig_reconstruction_up_to_dim_50() {
        let mut rng = RngStream::new(50);
        for dim in [1, 2, 7, 20, 50] {
            let a = random_spd(dim, &mut rng);
            let e = sym_eig(&a).unwrap();
            let recon = &e.vectors * Matrix::from_diagonal(&e.values) * e.vectors.transpose();
            assert!(relative_frobenius(&recon, &a) < 1e-8, "dim {dim}");
        }
    }

    #[test]
    fn principal_angles_of_equal_and_orthogonal_spans() {
        let a = Matrix::from_row_slice(3, 1, &[1.0, 0.0, 0.0]);
        let b = Matrix::from_row_slice(3, 1, &[3.0, 0.0, 0.0]);
        let c = Matrix::from_row_slice(3, 1, &[0.0, 1.0, 0.0]);
        assert!(principal_angles(&a, &b).unwrap()[0] < 1e-7);
        assert!((principal_angles(&a, &c).unwrap()[0] - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn spd_solve_and_logdet() {
        let mut rng = RngStream::new(11);
        let a = random_spd(4, &mut rng);
        let s = SpdMatrix::new(a.clone()).unwrap();
        let inv = s.inverse();
        assert!((&a * inv - Matrix::identity(4, 4)).amax() < 1e-10);
        assert!((s.log_det() - a.determinant().ln()).abs() < 1e-10);
    }

    proptest! {
        #[test]
        fn kron_vec_identity(seed in any::<u64>()) {
            let mut rng = RngStream::new(seed);
            let a = random_matrix(3, 3, &mut rng);
            let b = random_matrix(3, 3, &mut rng);
            let x = random_matrix(3, 3, &mut rng);
            let lhs = Vector::from_vec(vec(&(&b * &x * a.transpose())));
            let rhs = kron(&a, &b) * Vector::from_vec(vec(&x));
            prop_assert!((lhs - rhs).amax() < 1e-10);
        }

        #[test]
        fn cholesky_inverts_lower_factor(seed in any::<u64>(), dim in 1usize..8) {
            let mut rng = RngStream::new(seed);
            let mut l = Matrix::zeros(dim, dim);
            for i in 0..dim {
                for j in 0..i {
                    l[(i, j)] = rng.standard_normal();
                }
                l[(i, i)] = 0.5 + rng.uniform() * 2.0;
            }
            let back = cholesky(&(&l * l.transpose())).unwrap();
            prop_assert!((back - l).amax() < 1e-10);
        }

        #[test]
        fn equal_seeds_bit_identical(seed in any::<u64>()) {
            let mut a = RngStream::new(seed);
            let mut b = RngStream::new(seed);
            for _ in 0..64 {
                prop_assert_eq!(a.standard_normal().to_bits(), b.standard_normal().to_bits());
            }
        }
    }
}
