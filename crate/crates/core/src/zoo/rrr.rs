use crate::error::{LvmError, Result};
use crate::numerics::{svd, Matrix};

/// Thin factors of a rank-`d` coefficient matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RankFactors {
    /// `P x d`
    pub w: Matrix,
    /// `d x M`
    pub d: Matrix,
}

impl RankFactors {
    pub fn product(&self) -> Matrix {
        &self.w * &self.d
    }
}

/// Best rank-`d` approximation of `b_full` in Frobenius norm, split as
/// `W = U_d S_d^{1/2}`, `D = S_d^{1/2} V_dᵀ`.
///
/// Any `(W R, R⁻¹ D)` gives the same product; the split above is fixed and
/// the sign of each column of `W` is chosen so its largest-magnitude entry
/// is positive.
pub fn reduce_rank_regression(b_full: &Matrix, d: usize) -> Result<RankFactors> {
    let (p, m) = b_full.shape();
    if d == 0 || d >= p.min(m) {
        return Err(LvmError::invalid(
            "rank",
            format!("must satisfy 1 <= d < min(P, M) = {}, found {d}", p.min(m)),
        ));
    }
    let dec = svd(b_full)?;
    let mut w = Matrix::zeros(p, d);
    let mut dm = Matrix::zeros(d, m);
    for k in 0..d {
        let root = dec.singular_values[k].sqrt();
        let u = dec.u.column(k);
        let pivot = u
            .iter()
            .copied()
            .fold(0.0_f64, |a, x| if x.abs() > a.abs() { x } else { a });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        w.set_column(k, &(u * (root * sign)));
        dm.set_row(k, &(dec.v_t.row(k) * (root * sign)));
    }
    Ok(RankFactors { w, d: dm })
}
