use serde::{Deserialize, Serialize};

use crate::distributions::GeneralizedGaussian;
use crate::error::{LvmError, Result};
use crate::numerics::{serde_matrix, Matrix, RngStream, SpdMatrix, Vector};

/// Observation noise `ε` in `y = W z + μ + ε`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NoiseModel {
    /// `σ² I`
    Isotropic {
        variance: f64,
    },
    /// `diag(σ²)`
    Diagonal {
        variances: Vec<f64>,
    },
    Full {
        covariance: SpdMatrix,
    },
    Noiseless,
}

impl NoiseModel {
    pub fn validate(&self, field: &str, dim: usize) -> Result<()> {
        match self {
            NoiseModel::Isotropic { variance } => {
                if !(*variance >= 0.0 && variance.is_finite()) {
                    return Err(LvmError::invalid(
                        format!("{field}.variance"),
                        "must be finite and non-negative",
                    ));
                }
            }
            NoiseModel::Diagonal { variances } => {
                if variances.len() != dim {
                    return Err(LvmError::invalid(
                        format!("{field}.variances"),
                        format!("expected {dim} entries, found {}", variances.len()),
                    ));
                }
                if let Some(i) = variances.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
                    return Err(LvmError::invalid(format!("{field}.variances[{i}]"), "must be positive"));
                }
            }
            NoiseModel::Full { covariance } => {
                if covariance.dim() != dim {
                    return Err(LvmError::invalid(
                        format!("{field}.covariance"),
                        format!("expected {dim}x{dim}, found {0}x{0}", covariance.dim()),
                    ));
                }
            }
            NoiseModel::Noiseless => {}
        }
        Ok(())
    }

    pub fn covariance(&self, dim: usize) -> Matrix {
        match self {
            NoiseModel::Isotropic { variance } => Matrix::identity(dim, dim) * *variance,
            NoiseModel::Diagonal { variances } => Matrix::from_diagonal(&Vector::from_column_slice(variances)),
            NoiseModel::Full { covariance } => covariance.matrix().clone(),
            NoiseModel::Noiseless => Matrix::zeros(dim, dim),
        }
    }

    /// `Some(variances)` when the noise covariance is diagonal.
    pub fn diagonal_variances(&self, dim: usize) -> Option<Vec<f64>> {
        match self {
            NoiseModel::Full { covariance } if !covariance.is_diagonal() => None,
            other => Some(other.covariance(dim).diagonal().iter().copied().collect()),
        }
    }

    /// Largest off-diagonal magnitude of the noise covariance.
    pub fn off_diagonal_magnitude(&self, dim: usize) -> f64 {
        let c = self.covariance(dim);
        let mut worst = 0.0_f64;
        for i in 0..dim {
            for j in 0..dim {
                if i != j {
                    worst = worst.max(c[(i, j)].abs());
                }
            }
        }
        worst
    }

    pub fn is_positive_definite(&self) -> bool {
        match self {
            NoiseModel::Isotropic { variance } => *variance > 0.0,
            NoiseModel::Diagonal { .. } | NoiseModel::Full { .. } => true,
            NoiseModel::Noiseless => false,
        }
    }

    /// Adds one noise draw to each row of `y`.
    pub fn add_to(&self, y: &mut Matrix, rng: &mut RngStream) {
        let (n, p) = y.shape();
        match self {
            NoiseModel::Isotropic { variance } => {
                let sd = variance.sqrt();
                for i in 0..n {
                    for j in 0..p {
                        y[(i, j)] += sd * rng.standard_normal();
                    }
                }
            }
            NoiseModel::Diagonal { variances } => {
                let sd: Vec<f64> = variances.iter().map(|v| v.sqrt()).collect();
                for i in 0..n {
                    for j in 0..p {
                        y[(i, j)] += sd[j] * rng.standard_normal();
                    }
                }
            }
            NoiseModel::Full { covariance } => {
                let l = covariance.cholesky();
                for i in 0..n {
                    let eps = l * Vector::from_vec(rng.standard_normals(p));
                    for j in 0..p {
                        y[(i, j)] += eps[j];
                    }
                }
            }
            NoiseModel::Noiseless => {}
        }
    }
}

/// Prior over each latent coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LatentPrior {
    #[default]
    StandardNormal,
    /// Independent unit-variance generalized Gaussians, one shape per coordinate.
    GeneralizedGaussian { shapes: Vec<f64> },
}

impl LatentPrior {
    pub fn is_gaussian(&self) -> bool {
        match self {
            LatentPrior::StandardNormal => true,
            LatentPrior::GeneralizedGaussian { shapes } => shapes.iter().all(|a| *a == 2.0),
        }
    }

    /// `n x d` latent draws.
    pub fn sample(&self, n: usize, d: usize, rng: &mut RngStream) -> Result<Matrix> {
        match self {
            LatentPrior::StandardNormal => Ok(Matrix::from_fn(n, d, |_, _| rng.standard_normal())),
            LatentPrior::GeneralizedGaussian { shapes } => {
                let dists = shapes
                    .iter()
                    .map(|a| GeneralizedGaussian::unit_variance(*a))
                    .collect::<Result<Vec<_>>>()?;
                let mut z = Matrix::zeros(n, d);
                for i in 0..n {
                    for (j, g) in dists.iter().enumerate() {
                        z[(i, j)] = g.sample_one(rng);
                    }
                }
                Ok(z)
            }
        }
    }
}

/// Single-view linear latent model `y = W z + μ + ε`.
///
/// PPCA, FA and ICA are the same record with different noise and prior
/// choices; the enclosing [`ModelSpec`](super::ModelSpec) tag decides which
/// combination is legal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearGaussianLvmSpec {
    /// `P x D` loading matrix.
    #[serde(with = "serde_matrix::rows")]
    pub loading: Matrix,
    pub noise: NoiseModel,
    #[serde(default)]
    pub latent_prior: LatentPrior,
    #[serde(
        default,
        with = "serde_matrix::option_vector",
        skip_serializing_if = "Option::is_none"
    )]
    pub mean: Option<Vector>,
}

impl LinearGaussianLvmSpec {
    pub fn ppca(loading: Matrix, variance: f64) -> Self {
        LinearGaussianLvmSpec {
            loading,
            noise: NoiseModel::Isotropic { variance },
            latent_prior: LatentPrior::StandardNormal,
            mean: None,
        }
    }

    pub fn fa(loading: Matrix, variances: Vec<f64>) -> Self {
        LinearGaussianLvmSpec {
            loading,
            noise: NoiseModel::Diagonal { variances },
            latent_prior: LatentPrior::StandardNormal,
            mean: None,
        }
    }

    pub fn ica(loading: Matrix, variances: Vec<f64>, shapes: Vec<f64>) -> Self {
        LinearGaussianLvmSpec {
            loading,
            noise: NoiseModel::Diagonal { variances },
            latent_prior: LatentPrior::GeneralizedGaussian { shapes },
            mean: None,
        }
    }

    pub fn observed_dim(&self) -> usize {
        self.loading.nrows()
    }

    pub fn latent_dim(&self) -> usize {
        self.loading.ncols()
    }

    pub fn mean_vector(&self) -> Vector {
        self.mean.clone().unwrap_or_else(|| Vector::zeros(self.observed_dim()))
    }

    pub fn validate(&self) -> Result<()> {
        let (p, d) = self.loading.shape();
        if p == 0 || d == 0 {
            return Err(LvmError::invalid("loading", "must have at least one row and column"));
        }
        crate::numerics::ensure_finite(&self.loading).map_err(|e| LvmError::invalid("loading", e.to_string()))?;
        self.noise.validate("noise", p)?;
        if let Some(mean) = &self.mean {
            if mean.len() != p {
                return Err(LvmError::invalid(
                    "mean",
                    format!("expected {p} entries, found {}", mean.len()),
                ));
            }
        }
        if let LatentPrior::GeneralizedGaussian { shapes } = &self.latent_prior {
            if shapes.len() != d {
                return Err(LvmError::invalid(
                    "latent_prior.shapes",
                    format!("expected {d} entries, found {}", shapes.len()),
                ));
            }
            if let Some(i) = shapes.iter().position(|a| !(*a > 0.0 && a.is_finite())) {
                return Err(LvmError::invalid(
                    format!("latent_prior.shapes[{i}]"),
                    "must be positive",
                ));
            }
        }
        Ok(())
    }

    /// `W Wᵀ + Cov(ε)`; unit-variance sources make this hold for every prior.
    pub fn implied_covariance(&self) -> Matrix {
        let cov = &self.loading * self.loading.transpose() + self.noise.covariance(self.observed_dim());
        (&cov + cov.transpose()) * 0.5
    }

    /// Returns `(latents n x D, observations n x P)`.
    pub fn sample(&self, n: usize, rng: &mut RngStream) -> Result<(Matrix, Matrix)> {
        let z = self.latent_prior.sample(n, self.latent_dim(), rng)?;
        let mut y = &z * self.loading.transpose();
        let mean = self.mean_vector();
        for mut row in y.row_iter_mut() {
            row += mean.transpose();
        }
        self.noise.add_to(&mut y, rng);
        Ok((z, y))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_covariances() {
        assert_eq!(
            NoiseModel::Isotropic { variance: 2.0 }.covariance(2),
            Matrix::identity(2, 2) * 2.0
        );
        let diag = NoiseModel::Diagonal {
            variances: vec![1.0, 3.0],
        };
        assert_eq!(diag.diagonal_variances(2), Some(vec![1.0, 3.0]));
        let full = NoiseModel::Full {
            covariance: SpdMatrix::new(Matrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0])).unwrap(),
        };
        assert_eq!(full.diagonal_variances(2), None);
        assert_eq!(full.off_diagonal_magnitude(2), 0.5);
        assert!(crate::numerics::is_diagonal(&diag.covariance(2)));
    }

    #[test]
    fn validation_names_field() {
        let mut spec = LinearGaussianLvmSpec::fa(Matrix::from_element(3, 1, 1.0), vec![1.0, -1.0, 1.0]);
        match spec.validate() {
            Err(LvmError::InvalidSpec { field, .. }) => assert_eq!(field, "noise.variances[1]"),
            other => panic!("unexpected {other:?}"),
        }
        spec.noise = NoiseModel::Diagonal {
            variances: vec![1.0; 2],
        };
        assert!(spec.validate().is_err());
        let ica = LinearGaussianLvmSpec::ica(Matrix::from_element(3, 2, 1.0), vec![1.0; 3], vec![1.0]);
        assert!(ica.validate().is_err());
    }

    #[test]
    fn gaussian_prior_detection() {
        assert!(LatentPrior::StandardNormal.is_gaussian());
        assert!(LatentPrior::GeneralizedGaussian { shapes: vec![2.0, 2.0] }.is_gaussian());
        assert!(!LatentPrior::GeneralizedGaussian { shapes: vec![2.0, 1.0] }.is_gaussian());
    }

    #[test]
    fn noiseless_sampling_is_exactly_linear() {
        let spec = LinearGaussianLvmSpec {
            loading: Matrix::from_row_slice(2, 1, &[1.0, -2.0]),
            noise: NoiseModel::Noiseless,
            latent_prior: LatentPrior::GeneralizedGaussian { shapes: vec![1.0] },
            mean: Some(Vector::from_vec(vec![3.0, 0.0])),
        };
        let mut rng = RngStream::new(1);
        let (z, y) = spec.sample(10, &mut rng).unwrap();
        for i in 0..10 {
            assert_eq!(y[(i, 0)], z[(i, 0)] + 3.0);
            assert_eq!(y[(i, 1)], -2.0 * z[(i, 0)]);
        }
    }
}
