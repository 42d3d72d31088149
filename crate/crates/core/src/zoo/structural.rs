use log::warn;
use serde::{Deserialize, Serialize};

use crate::distributions::MultivariateNormal;
use crate::error::{LvmError, Result};
use crate::numerics::{condition_number, inverse, serde_matrix, Matrix, RngStream, Vector};

/// Condition number of `B` above which sampling and moments log a warning.
pub const B_CONDITION_WARNING: f64 = 1e8;

/// LISREL structural equation model.
///
/// Measurement part: `y₁ = W₁ z₁ + ε₁`, `y₂ = W₂ z₂ + ε₂`.
/// Structural part: `B z₂ = C z₁ + ξ`, with `z₁ ~ N(0, Φ_z1)`,
/// `ξ ~ N(0, Φ_ξ)`, and every covariance diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralSpec {
    /// `P₁ x D₁`
    #[serde(with = "serde_matrix::rows")]
    pub w1: Matrix,
    /// `P₂ x D₂`
    #[serde(with = "serde_matrix::rows")]
    pub w2: Matrix,
    /// `D₂ x D₂`, non-singular
    #[serde(with = "serde_matrix::rows")]
    pub b: Matrix,
    /// `D₂ x D₁`
    #[serde(with = "serde_matrix::rows")]
    pub c: Matrix,
    pub psi1: Vec<f64>,
    pub psi2: Vec<f64>,
    pub phi_z1: Vec<f64>,
    pub phi_xi: Vec<f64>,
}

/// Dimensions for [`StructuralSpec::random`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LisrelDims {
    pub d1: usize,
    pub d2: usize,
    pub p1: usize,
    pub p2: usize,
}

impl Default for LisrelDims {
    fn default() -> Self {
        LisrelDims {
            d1: 2,
            d2: 2,
            p1: 3,
            p2: 3,
        }
    }
}

fn check_positive(field: &str, values: &[f64], len: usize) -> Result<()> {
    if values.len() != len {
        return Err(LvmError::invalid(
            field,
            format!("expected {len} entries, found {}", values.len()),
        ));
    }
    if let Some(i) = values.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(LvmError::invalid(format!("{field}[{i}]"), "must be positive"));
    }
    Ok(())
}

fn diag(values: &[f64]) -> Matrix {
    Matrix::from_diagonal(&Vector::from_column_slice(values))
}

impl StructuralSpec {
    /// Random well-posed spec.
    ///
    /// Loadings and `C` are standard normal; `B = I + 0.3 G` with `G`
    /// standard normal, redrawn until `cond(B) < 50`; every variance is
    /// uniform on `[0.3, 1.3)`.
    pub fn random(dims: LisrelDims, rng: &mut RngStream) -> Self {
        let LisrelDims { d1, d2, p1, p2 } = dims;
        let mut normal = |r: usize, c: usize| Matrix::from_fn(r, c, |_, _| rng.standard_normal());
        let w1 = normal(p1, d1);
        let w2 = normal(p2, d2);
        let c = normal(d2, d1);
        let b = loop {
            let b = Matrix::identity(d2, d2) + normal(d2, d2) * 0.3;
            if condition_number(&b).is_ok_and(|k| k < 50.0) {
                break b;
            }
        };
        let mut variances = |n: usize| (0..n).map(|_| 0.3 + rng.uniform()).collect::<Vec<_>>();
        StructuralSpec {
            w1,
            w2,
            b,
            c,
            psi1: variances(p1),
            psi2: variances(p2),
            phi_z1: variances(d1),
            phi_xi: variances(d2),
        }
    }

    pub fn dims(&self) -> LisrelDims {
        LisrelDims {
            d1: self.w1.ncols(),
            d2: self.w2.ncols(),
            p1: self.w1.nrows(),
            p2: self.w2.nrows(),
        }
    }

    pub fn observed_dim(&self) -> usize {
        self.w1.nrows() + self.w2.nrows()
    }

    pub fn latent_dim(&self) -> usize {
        self.w1.ncols() + self.w2.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let LisrelDims { d1, d2, p1, p2 } = self.dims();
        if d1 == 0 || d2 == 0 || p1 == 0 || p2 == 0 {
            return Err(LvmError::invalid("w1/w2", "all block dimensions must be positive"));
        }
        if self.b.shape() != (d2, d2) {
            return Err(LvmError::invalid("b", format!("expected {d2}x{d2}")));
        }
        if self.c.shape() != (d2, d1) {
            return Err(LvmError::invalid("c", format!("expected {d2}x{d1}")));
        }
        for (name, m) in [("w1", &self.w1), ("w2", &self.w2), ("b", &self.b), ("c", &self.c)] {
            crate::numerics::ensure_finite(m).map_err(|e| LvmError::invalid(name, e.to_string()))?;
        }
        check_positive("psi1", &self.psi1, p1)?;
        check_positive("psi2", &self.psi2, p2)?;
        check_positive("phi_z1", &self.phi_z1, d1)?;
        check_positive("phi_xi", &self.phi_xi, d2)?;
        Ok(())
    }

    pub fn b_condition_number(&self) -> Result<f64> {
        condition_number(&self.b)
    }

    fn b_inverse(&self) -> Result<Matrix> {
        let kappa = self.b_condition_number()?;
        if !kappa.is_finite() {
            return Err(LvmError::Singular {
                context: "structural matrix B".into(),
            });
        }
        if kappa > B_CONDITION_WARNING {
            warn!("structural matrix B is ill-conditioned (cond = {kappa:e})");
        }
        inverse(&self.b, "structural matrix B")
    }

    /// Covariance of `(z₁, z₂)`.
    pub fn latent_covariance(&self) -> Result<Matrix> {
        let b_inv = self.b_inverse()?;
        let phi = diag(&self.phi_z1);
        let cross = &phi * self.c.transpose() * b_inv.transpose();
        let z2 = &b_inv * (&self.c * &phi * self.c.transpose() + diag(&self.phi_xi)) * b_inv.transpose();
        let (d1, d2) = (self.w1.ncols(), self.w2.ncols());
        let mut out = Matrix::zeros(d1 + d2, d1 + d2);
        out.view_mut((0, 0), (d1, d1)).copy_from(&phi);
        out.view_mut((0, d1), (d1, d2)).copy_from(&cross);
        out.view_mut((d1, 0), (d2, d1)).copy_from(&cross.transpose());
        out.view_mut((d1, d1), (d2, d2)).copy_from(&z2);
        Ok(out)
    }

    /// Implied `Σ_yy`:
    ///
    /// ```text
    /// [ W₁ Φ W₁ᵀ + Ψ₁              W₁ Φ Cᵀ B⁻ᵀ W₂ᵀ                       ]
    /// [ W₂ B⁻¹ C Φ W₁ᵀ             W₂ (B⁻¹ C Φ Cᵀ B⁻ᵀ + B⁻¹ Φ_ξ B⁻ᵀ) W₂ᵀ + Ψ₂ ]
    /// ```
    pub fn implied_covariance(&self) -> Result<Matrix> {
        let b_inv = self.b_inverse()?;
        let phi = diag(&self.phi_z1);
        let top_left = &self.w1 * &phi * self.w1.transpose() + diag(&self.psi1);
        let top_right = &self.w1 * &phi * self.c.transpose() * b_inv.transpose() * self.w2.transpose();
        let z2_cov = &b_inv * &self.c * &phi * self.c.transpose() * b_inv.transpose()
            + &b_inv * diag(&self.phi_xi) * b_inv.transpose();
        let bottom_right = &self.w2 * z2_cov * self.w2.transpose() + diag(&self.psi2);
        let (p1, p2) = (self.w1.nrows(), self.w2.nrows());
        let mut out = Matrix::zeros(p1 + p2, p1 + p2);
        out.view_mut((0, 0), (p1, p1)).copy_from(&top_left);
        out.view_mut((0, p1), (p1, p2)).copy_from(&top_right);
        out.view_mut((p1, 0), (p2, p1)).copy_from(&top_right.transpose());
        out.view_mut((p1, p1), (p2, p2)).copy_from(&bottom_right);
        Ok((&out + out.transpose()) * 0.5)
    }

    /// Draws `z₁`, `ξ`, solves `z₂ = B⁻¹(C z₁ + ξ)`, then emits `y`.
    /// Returns `(latents [z₁ z₂], observations [y₁ y₂])`.
    pub fn sample(&self, n: usize, rng: &mut RngStream) -> Result<(Matrix, Matrix)> {
        let b_inv = self.b_inverse()?;
        let LisrelDims { d1, d2, p1, p2 } = self.dims();
        let sd = |v: &[f64]| v.iter().map(|x| x.sqrt()).collect::<Vec<_>>();
        let (sd_z1, sd_xi, sd_e1, sd_e2) = (sd(&self.phi_z1), sd(&self.phi_xi), sd(&self.psi1), sd(&self.psi2));
        let mut latents = Matrix::zeros(n, d1 + d2);
        let mut obs = Matrix::zeros(n, p1 + p2);
        for i in 0..n {
            let z1 = Vector::from_fn(d1, |k, _| sd_z1[k] * rng.standard_normal());
            let xi = Vector::from_fn(d2, |k, _| sd_xi[k] * rng.standard_normal());
            let z2 = &b_inv * (&self.c * &z1 + xi);
            let y1 = &self.w1 * &z1;
            let y2 = &self.w2 * &z2;
            for k in 0..d1 {
                latents[(i, k)] = z1[k];
            }
            for k in 0..d2 {
                latents[(i, d1 + k)] = z2[k];
            }
            for k in 0..p1 {
                obs[(i, k)] = y1[k] + sd_e1[k] * rng.standard_normal();
            }
            for k in 0..p2 {
                obs[(i, p1 + k)] = y2[k] + sd_e2[k] * rng.standard_normal();
            }
        }
        Ok((latents, obs))
    }
}

/// Generalized structured component analysis.
///
/// Component scores come from the weighted relation `z = W y`, and the
/// structural identity `[I; W] y = [C; B] W y + [ε; ξ]` defines the
/// residuals. Observations are drawn from a user-supplied Gaussian; the
/// residual covariances are derived from it rather than specified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GscaSpec {
    /// `D x P` component weights.
    #[serde(with = "serde_matrix::rows")]
    pub weights: Matrix,
    /// `P x D` loadings.
    #[serde(with = "serde_matrix::rows")]
    pub c: Matrix,
    /// `D x D` path coefficients.
    #[serde(with = "serde_matrix::rows")]
    pub b: Matrix,
    pub observation: MultivariateNormal,
}

impl GscaSpec {
    pub fn observed_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn latent_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let (d, p) = self.weights.shape();
        if d == 0 || p == 0 {
            return Err(LvmError::invalid("weights", "dimensions must be positive"));
        }
        if self.c.shape() != (p, d) {
            return Err(LvmError::invalid("c", format!("expected {p}x{d}")));
        }
        if self.b.shape() != (d, d) {
            return Err(LvmError::invalid("b", format!("expected {d}x{d}")));
        }
        if self.observation.dim() != p {
            return Err(LvmError::invalid("observation", format!("expected dimension {p}")));
        }
        Ok(())
    }

    /// `(ε, ξ) = (y − C W y, W y − B W y)`.
    pub fn residual(&self, y: &Vector) -> Result<(Vector, Vector)> {
        if y.len() != self.observed_dim() {
            return Err(LvmError::mismatch("GSCA observation", self.observed_dim(), y.len()));
        }
        let z = &self.weights * y;
        let eps = y - &self.c * &z;
        let xi = &z - &self.b * &z;
        Ok((eps, xi))
    }

    /// `Cov(ε)` and `Cov(ξ)` induced by the observation distribution.
    pub fn residual_covariances(&self) -> (Matrix, Matrix) {
        let sigma = self.observation.covariance().matrix();
        let p = self.observed_dim();
        let eps_map = Matrix::identity(p, p) - &self.c * &self.weights;
        let xi_map = &self.weights - &self.b * &self.weights;
        (
            &eps_map * sigma * eps_map.transpose(),
            &xi_map * sigma * xi_map.transpose(),
        )
    }

    /// Returns `(component scores z = W y, observations y)`.
    pub fn sample(&self, n: usize, rng: &mut RngStream) -> (Matrix, Matrix) {
        let y = self.observation.sample(n, rng);
        let z = &y * self.weights.transpose();
        (z, y)
    }
}

/// Residual helper mirroring [`GscaSpec::residual`].
pub fn gsca_residual(spec: &GscaSpec, y: &Vector) -> Result<(Vector, Vector)> {
    spec.residual(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SpdMatrix;
    use proptest::prelude::*;

    #[test]
    fn zero_path_gives_zero_cross_block() {
        let mut rng = RngStream::new(1);
        let mut spec = StructuralSpec::random(LisrelDims::default(), &mut rng);
        spec.c = Matrix::zeros(2, 2);
        let cov = spec.implied_covariance().unwrap();
        assert_eq!(cov.view((0, 3), (3, 3)).amax(), 0.0);
    }

    #[test]
    fn implied_covariance_matches_latent_route() {
        // Independent route: Σ_yy = Λ Σ_z Λᵀ + Ψ with Λ = blockdiag(W₁, W₂).
        let mut rng = RngStream::new(2);
        let spec = StructuralSpec::random(
            LisrelDims {
                d1: 1,
                d2: 3,
                p1: 2,
                p2: 4,
            },
            &mut rng,
        );
        let lambda = crate::numerics::block_diagonal(&[&spec.w1, &spec.w2]);
        let psi: Vec<f64> = spec.psi1.iter().chain(&spec.psi2).copied().collect();
        let expected = &lambda * spec.latent_covariance().unwrap() * lambda.transpose() + diag(&psi);
        let got = spec.implied_covariance().unwrap();
        assert!((got - expected).amax() < 1e-12);
    }

    #[test]
    fn singular_b_is_rejected() {
        let mut rng = RngStream::new(3);
        let mut spec = StructuralSpec::random(LisrelDims::default(), &mut rng);
        spec.b = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(matches!(spec.implied_covariance(), Err(LvmError::Singular { .. })));
    }

    #[test]
    fn validation_names_field() {
        let mut rng = RngStream::new(4);
        let mut spec = StructuralSpec::random(LisrelDims::default(), &mut rng);
        spec.phi_xi[1] = 0.0;
        match spec.validate() {
            Err(LvmError::InvalidSpec { field, .. }) => assert_eq!(field, "phi_xi[1]"),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn gsca(rng: &mut RngStream, d: usize, p: usize) -> GscaSpec {
        let mut normal = |r: usize, c: usize| Matrix::from_fn(r, c, |_, _| rng.standard_normal());
        GscaSpec {
            weights: normal(d, p),
            c: normal(p, d),
            b: normal(d, d),
            observation: MultivariateNormal::standard(p),
        }
    }

    #[test]
    fn gsca_zero_weights() {
        let mut rng = RngStream::new(5);
        let mut spec = gsca(&mut rng, 2, 4);
        spec.weights = Matrix::zeros(2, 4);
        let y = Vector::from_vec(vec![1.0, -2.0, 3.0, 0.5]);
        let (eps, xi) = spec.residual(&y).unwrap();
        assert_eq!(eps, y);
        assert_eq!(xi, Vector::zeros(2));
    }

    #[test]
    fn gsca_exact_fit() {
        let mut rng = RngStream::new(6);
        let mut spec = gsca(&mut rng, 2, 3);
        spec.b = Matrix::zeros(2, 2);
        let y = Vector::from_vec(vec![0.3, 1.0, -1.0]);
        let z = &spec.weights * &y;
        let (eps, xi) = spec.residual(&y).unwrap();
        assert_eq!(eps, &y - &spec.c * &z);
        assert_eq!(xi, z);
        assert!(spec.residual(&Vector::zeros(2)).is_err());
    }

    #[test]
    fn gsca_residual_covariances_psd() {
        let mut rng = RngStream::new(7);
        let mut spec = gsca(&mut rng, 2, 3);
        spec.observation = MultivariateNormal::zero_mean(SpdMatrix::from_diagonal(&[1.0, 2.0, 3.0]).unwrap());
        let (e, x) = spec.residual_covariances();
        assert!(crate::numerics::sym_eig(&e).unwrap().values.min() > -1e-10);
        assert!(crate::numerics::sym_eig(&x).unwrap().values.min() > -1e-10);
    }

    proptest! {
        #[test]
        fn gsca_identity_reassembles(seed in any::<u64>()) {
            let mut rng = RngStream::new(seed);
            let spec = gsca(&mut rng, 3, 5);
            let y = Vector::from_vec(rng.standard_normals(5));
            let (eps, xi) = spec.residual(&y).unwrap();
            let z = &spec.weights * &y;
            let lhs_top = &y;
            let lhs_bottom = &z;
            let rhs_top = &spec.c * &z + &eps;
            let rhs_bottom = &spec.b * &z + &xi;
            prop_assert!((lhs_top - rhs_top).amax() < 1e-12);
            prop_assert!((lhs_bottom - rhs_bottom).amax() < 1e-12);
        }
    }
}
