//! Samplers and densities used by the model zoo.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{LvmError, Result};
use crate::numerics::{serde_matrix, Matrix, RngStream, SpdMatrix, Vector};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultivariateNormal {
    #[serde(with = "serde_matrix::vector")]
    mean: Vector,
    covariance: SpdMatrix,
}

impl MultivariateNormal {
    pub fn new(mean: Vector, covariance: SpdMatrix) -> Result<Self> {
        if mean.len() != covariance.dim() {
            return Err(LvmError::mismatch(
                "multivariate normal mean",
                covariance.dim(),
                mean.len(),
            ));
        }
        Ok(MultivariateNormal { mean, covariance })
    }

    pub fn zero_mean(covariance: SpdMatrix) -> Self {
        let mean = Vector::zeros(covariance.dim());
        MultivariateNormal { mean, covariance }
    }

    pub fn standard(dim: usize) -> Self {
        Self::zero_mean(SpdMatrix::identity(dim))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &Vector {
        &self.mean
    }

    pub fn covariance(&self) -> &SpdMatrix {
        &self.covariance
    }

    pub fn sample_one(&self, rng: &mut RngStream) -> Vector {
        let eps = Vector::from_vec(rng.standard_normals(self.dim()));
        &self.mean + self.covariance.cholesky() * eps
    }

    /// `n` iid draws as the rows of an `n x P` matrix.
    pub fn sample(&self, n: usize, rng: &mut RngStream) -> Matrix {
        let p = self.dim();
        let eps = Matrix::from_fn(p, n, |_, _| rng.standard_normal());
        let mut draws = self.covariance.cholesky() * eps;
        for mut col in draws.column_iter_mut() {
            col += &self.mean;
        }
        draws.transpose()
    }

    pub fn logpdf(&self, x: &Vector) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(LvmError::mismatch("logpdf argument", self.dim(), x.len()));
        }
        let diff = x - &self.mean;
        let white = self
            .covariance
            .cholesky()
            .solve_lower_triangular(&diff)
            .expect("Cholesky factor has positive diagonal");
        Ok(-0.5 * (self.dim() as f64 * LN_2PI + self.covariance.log_det() + white.norm_squared()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dirichlet {
    concentration: Vec<f64>,
}

impl Dirichlet {
    pub fn new(concentration: Vec<f64>) -> Result<Self> {
        if concentration.is_empty() {
            return Err(LvmError::invalid("concentration", "must have at least one component"));
        }
        if let Some(i) = concentration.iter().position(|a| !(*a > 0.0 && a.is_finite())) {
            return Err(LvmError::invalid(
                format!("concentration[{i}]"),
                "must be positive and finite",
            ));
        }
        Ok(Dirichlet { concentration })
    }

    /// Symmetric prior `(α/K, …, α/K)`; `α` acts as a pseudo-observation count.
    pub fn symmetric(total: f64, k: usize) -> Result<Self> {
        Self::new(vec![total / k as f64; k])
    }

    pub fn concentration(&self) -> &[f64] {
        &self.concentration
    }

    pub fn k(&self) -> usize {
        self.concentration.len()
    }

    pub fn total(&self) -> f64 {
        self.concentration.iter().sum()
    }

    pub fn mean(&self) -> Vec<f64> {
        let a0 = self.total();
        self.concentration.iter().map(|a| a / a0).collect()
    }

    /// Normalized independent Gamma(α_k, 1) draws.
    pub fn sample(&self, rng: &mut RngStream) -> Categorical {
        let draws: Vec<f64> = self.concentration.iter().map(|&a| rng.gamma(a, 1.0)).collect();
        let total: f64 = draws.iter().sum();
        let probabilities = if total > 0.0 && total.is_finite() {
            normalize(draws)
        } else {
            // Every Gamma draw underflowed (tiny concentrations): all mass
            // lands on one vertex, chosen in proportion to α.
            let pick = Categorical {
                probabilities: self.mean(),
            }
            .sample(rng);
            let mut one_hot = vec![0.0; self.k()];
            one_hot[pick] = 1.0;
            one_hot
        };
        Categorical { probabilities }
    }

    /// Conjugate update with per-category counts.
    pub fn posterior(&self, counts: &[u64]) -> Result<Dirichlet> {
        if counts.len() != self.k() {
            return Err(LvmError::mismatch("category counts", self.k(), counts.len()));
        }
        Ok(Dirichlet {
            concentration: self
                .concentration
                .iter()
                .zip(counts)
                .map(|(a, &c)| a + c as f64)
                .collect(),
        })
    }
}

pub fn dirichlet_categorical_posterior(prior: &Dirichlet, counts: &[u64]) -> Result<Dirichlet> {
    prior.posterior(counts)
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let total: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= total);
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Categorical {
    probabilities: Vec<f64>,
}

impl Categorical {
    pub fn new(probabilities: Vec<f64>) -> Result<Self> {
        if probabilities.is_empty() {
            return Err(LvmError::invalid("probabilities", "must be non-empty"));
        }
        if let Some(i) = probabilities.iter().position(|p| !(0.0..=1.0).contains(p)) {
            return Err(LvmError::invalid(format!("probabilities[{i}]"), "outside [0, 1]"));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(LvmError::invalid(
                "probabilities",
                format!("sum to {total}, expected 1"),
            ));
        }
        Ok(Categorical { probabilities })
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    /// Zero-based category index.
    pub fn sample(&self, rng: &mut RngStream) -> usize {
        let u = rng.uniform();
        let mut acc = 0.0;
        for (k, p) in self.probabilities.iter().enumerate() {
            acc += p;
            if u < acc {
                return k;
            }
        }
        // u landed in the rounding gap above the last partial sum
        self.probabilities.iter().rposition(|p| *p > 0.0).unwrap_or(0)
    }
}

/// Symmetric generalized Gaussian with density ∝ exp(−|(x − location)/scale|^shape).
///
/// `shape = 2` is a normal with variance `scale²/2`, `shape = 1` is Laplace,
/// and `shape < 2` gives the peaked super-Gaussian family used as ICA source
/// priors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneralizedGaussian {
    pub shape: f64,
    pub scale: f64,
    #[serde(default)]
    pub location: f64,
}

impl GeneralizedGaussian {
    pub fn new(shape: f64, scale: f64, location: f64) -> Result<Self> {
        if !(shape > 0.0 && shape.is_finite()) {
            return Err(LvmError::invalid("shape", "must be positive"));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(LvmError::invalid("scale", "must be positive"));
        }
        Ok(GeneralizedGaussian { shape, scale, location })
    }

    /// Zero-location member of the family with unit variance.
    pub fn unit_variance(shape: f64) -> Result<Self> {
        Self::new(shape, 1.0, 0.0)?;
        let scale = (gamma(1.0 / shape) / gamma(3.0 / shape)).sqrt();
        Self::new(shape, scale, 0.0)
    }

    pub fn variance(&self) -> f64 {
        self.scale * self.scale * gamma(3.0 / self.shape) / gamma(1.0 / self.shape)
    }

    pub fn excess_kurtosis(&self) -> f64 {
        let a = self.shape;
        gamma(5.0 / a) * gamma(1.0 / a) / gamma(3.0 / a).powi(2) - 3.0
    }

    /// Gamma transform: `|x − location|/scale = G^(1/shape)` with
    /// `G ~ Gamma(1/shape, 1)`, sign drawn independently.
    pub fn sample_one(&self, rng: &mut RngStream) -> f64 {
        let magnitude = rng.gamma(1.0 / self.shape, 1.0).powf(1.0 / self.shape);
        let sign = if rng.bernoulli(0.5) { 1.0 } else { -1.0 };
        self.location + sign * self.scale * magnitude
    }

    pub fn sample(&self, n: usize, rng: &mut RngStream) -> Vec<f64> {
        (0..n).map(|_| self.sample_one(rng)).collect()
    }
}

/// Truncated stick-breaking realization of a Dirichlet process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StickBreakingDP {
    pub concentration: f64,
    #[serde(default = "StickBreakingDP::default_truncation")]
    pub truncation: usize,
}

impl StickBreakingDP {
    pub const DEFAULT_TRUNCATION: usize = 200;

    fn default_truncation() -> usize {
        Self::DEFAULT_TRUNCATION
    }

    pub fn new(concentration: f64, truncation: usize) -> Result<Self> {
        if !(concentration > 0.0 && concentration.is_finite()) {
            return Err(LvmError::invalid("concentration", "must be positive"));
        }
        if truncation == 0 {
            return Err(LvmError::invalid("truncation", "must be at least 1"));
        }
        Ok(StickBreakingDP {
            concentration,
            truncation,
        })
    }

    /// Expected mass left beyond the truncation point, `(α/(1+α))^T`.
    pub fn expected_residual(&self) -> f64 {
        (self.concentration / (1.0 + self.concentration)).powi(self.truncation as i32)
    }

    /// `w_k = v_k ∏_{j<k} (1 − v_j)` with `v_k ~ Beta(1, α)`.
    pub fn weights(&self, rng: &mut RngStream) -> Vec<f64> {
        let mut remaining = 1.0;
        (0..self.truncation)
            .map(|_| {
                let v = rng.beta(1.0, self.concentration);
                let w = v * remaining;
                remaining *= 1.0 - v;
                w
            })
            .collect()
    }

    /// Weights paired with atoms drawn iid from `base`.
    pub fn sample_measure<T>(&self, rng: &mut RngStream, mut base: impl FnMut(&mut RngStream) -> T) -> Vec<(f64, T)> {
        let weights = self.weights(rng);
        weights.into_iter().map(|w| (w, base(rng))).collect()
    }
}
