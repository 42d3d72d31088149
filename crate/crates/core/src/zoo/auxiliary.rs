use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::distributions::{Categorical, Dirichlet, MultivariateNormal};
use crate::error::{LvmError, Result};
use crate::numerics::{kron, serde_matrix, vec, Matrix, RngStream, SpdMatrix, Vector};

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Matrix normal over an `N x P` matrix `Y` with row covariance `Σ`
/// (`N x N`) and column covariance `Ω` (`P x P`).
///
/// One draw is one whole matrix, flattened with column-stacking `vec`.
/// Under that ordering `Cov(vec Y) = Ω ⊗ Σ`; the `Σ ⊗ Ω` form belongs to
/// the row-stacked ordering `vec(Yᵀ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixNormalSpec {
    #[serde(with = "serde_matrix::rows")]
    pub mean: Matrix,
    pub row_covariance: SpdMatrix,
    pub column_covariance: SpdMatrix,
}

impl MatrixNormalSpec {
    pub fn validate(&self) -> Result<()> {
        let (n, p) = self.mean.shape();
        if n == 0 || p == 0 {
            return Err(LvmError::invalid("mean", "must be non-empty"));
        }
        if self.row_covariance.dim() != n {
            return Err(LvmError::invalid("row_covariance", format!("expected {n}x{n}")));
        }
        if self.column_covariance.dim() != p {
            return Err(LvmError::invalid("column_covariance", format!("expected {p}x{p}")));
        }
        Ok(())
    }

    pub fn observed_dim(&self) -> usize {
        self.mean.nrows() * self.mean.ncols()
    }

    pub fn vec_mean(&self) -> Vector {
        Vector::from_vec(vec(&self.mean))
    }

    /// `Cov(vec Y) = Ω ⊗ Σ`.
    pub fn vec_covariance(&self) -> Matrix {
        kron(self.column_covariance.matrix(), self.row_covariance.matrix())
    }

    /// `Y = M + A Z Bᵀ` with `A Aᵀ = Σ`, `B Bᵀ = Ω`, `Z` standard normal.
    pub fn sample_matrix(&self, rng: &mut RngStream) -> Matrix {
        let (n, p) = self.mean.shape();
        let z = Matrix::from_fn(n, p, |_, _| rng.standard_normal());
        &self.mean + self.row_covariance.cholesky() * z * self.column_covariance.cholesky().transpose()
    }

    /// `draws x NP` matrix of flattened samples.
    pub fn sample(&self, draws: usize, rng: &mut RngStream) -> Matrix {
        let mut out = Matrix::zeros(draws, self.observed_dim());
        for i in 0..draws {
            let y = self.sample_matrix(rng);
            out.row_mut(i).copy_from_slice(y.as_slice());
        }
        out
    }
}

/// Censored regression `y* = β x + ε`, `y = max(0, y*)`, `ε ~ N(0, σ²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TobitSpec {
    pub beta: f64,
    /// Covariate values, cycled when more draws than values are requested.
    pub covariates: Vec<f64>,
    pub noise_variance: f64,
}

impl TobitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.covariates.is_empty() {
            return Err(LvmError::invalid("covariates", "must be non-empty"));
        }
        if !(self.noise_variance > 0.0 && self.noise_variance.is_finite()) {
            return Err(LvmError::invalid("noise_variance", "must be positive"));
        }
        if !self.beta.is_finite() || self.covariates.iter().any(|x| !x.is_finite()) {
            return Err(LvmError::invalid("beta", "beta and covariates must be finite"));
        }
        Ok(())
    }

    /// `P(y = 0 | x) = Φ(−βx/σ)`.
    pub fn censoring_probability(&self, x: f64) -> f64 {
        normal_cdf(-self.beta * x / self.noise_variance.sqrt())
    }

    /// Returns `(latent y*, observed y)`.
    pub fn sample(&self, n: usize, rng: &mut RngStream) -> (Vec<f64>, Vec<f64>) {
        let sd = self.noise_variance.sqrt();
        (0..n)
            .map(|i| {
                let x = self.covariates[i % self.covariates.len()];
                let latent = self.beta * x + sd * rng.standard_normal();
                (latent, latent.max(0.0))
            })
            .unzip()
    }
}

/// Returns `(latent y*, observed y)` for `n` draws.
pub fn sample_tobit(spec: &TobitSpec, n: usize, rng: &mut RngStream) -> Result<(Vec<f64>, Vec<f64>)> {
    spec.validate()?;
    Ok(spec.sample(n, rng))
}

/// Balanced variance-components model for `P` repeated measurements per unit:
/// `z_n ~ N(0, σ_z²)`, `y_n | z_n ~ N(1μ + 1z_n, σ_ε² I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AirySpec {
    pub mu: f64,
    pub var_z: f64,
    pub var_eps: f64,
    pub repeats: usize,
}

impl AirySpec {
    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(LvmError::invalid("repeats", "must be at least 1"));
        }
        if !(self.var_z >= 0.0 && self.var_z.is_finite()) {
            return Err(LvmError::invalid("var_z", "must be non-negative"));
        }
        if !(self.var_eps > 0.0 && self.var_eps.is_finite()) {
            return Err(LvmError::invalid("var_eps", "must be positive"));
        }
        if !self.mu.is_finite() {
            return Err(LvmError::invalid("mu", "must be finite"));
        }
        Ok(())
    }

    /// `σ_z² 11ᵀ + σ_ε² I`.
    pub fn implied_covariance(&self) -> Matrix {
        let p = self.repeats;
        Matrix::from_element(p, p, self.var_z) + Matrix::identity(p, p) * self.var_eps
    }

    /// Returns `(random effects n x 1, measurements n x P)`.
    pub fn sample(&self, n: usize, rng: &mut RngStream) -> (Matrix, Matrix) {
        let (sz, se) = (self.var_z.sqrt(), self.var_eps.sqrt());
        let z = Matrix::from_fn(n, 1, |_, _| sz * rng.standard_normal());
        let mut y = Matrix::zeros(n, self.repeats);
        for i in 0..n {
            for j in 0..self.repeats {
                y[(i, j)] = self.mu + z[(i, 0)] + se * rng.standard_normal();
            }
        }
        (z, y)
    }
}

/// Initial state distribution of a temporal rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitialState {
    /// Stationary distribution of the latent recursion (needs spectral radius < 1).
    Stationary,
    Given {
        distribution: MultivariateNormal,
    },
}

/// Linear-Gaussian state-space model, the linear member of the generative
/// temporal family: `z_t = A z_{t−1} + η_t`, `y_t = H z_t + ε_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalSpec {
    /// `K x K`
    #[serde(with = "serde_matrix::rows")]
    pub transition: Matrix,
    /// `P x K`
    #[serde(with = "serde_matrix::rows")]
    pub emission: Matrix,
    pub innovation: SpdMatrix,
    /// `None` means noiseless emission.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emission_noise: Option<SpdMatrix>,
    #[serde(default = "TemporalSpec::default_initial")]
    pub initial: InitialState,
}

impl TemporalSpec {
    fn default_initial() -> InitialState {
        InitialState::Stationary
    }

    pub fn state_dim(&self) -> usize {
        self.transition.nrows()
    }

    pub fn observed_dim(&self) -> usize {
        self.emission.nrows()
    }

    pub fn spectral_radius(&self) -> f64 {
        self.transition
            .complex_eigenvalues()
            .iter()
            .map(|c| c.norm())
            .fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.state_dim();
        if k == 0 || self.transition.ncols() != k {
            return Err(LvmError::invalid("transition", "must be square and non-empty"));
        }
        if self.emission.ncols() != k || self.emission.nrows() == 0 {
            return Err(LvmError::invalid("emission", format!("expected P x {k}")));
        }
        if self.innovation.dim() != k {
            return Err(LvmError::invalid("innovation", format!("expected {k}x{k}")));
        }
        if let Some(r) = &self.emission_noise {
            if r.dim() != self.observed_dim() {
                return Err(LvmError::invalid(
                    "emission_noise",
                    format!("expected {0}x{0}", self.observed_dim()),
                ));
            }
        }
        match &self.initial {
            InitialState::Stationary => {
                let rho = self.spectral_radius();
                if rho >= 1.0 {
                    return Err(LvmError::invalid(
                        "initial",
                        format!("stationary start needs spectral radius < 1, found {rho}"),
                    ));
                }
            }
            InitialState::Given { distribution } => {
                if distribution.dim() != k {
                    return Err(LvmError::invalid(
                        "initial.distribution",
                        format!("expected dimension {k}"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Solves `Σ = A Σ Aᵀ + Q` through `(I − A ⊗ A) vec Σ = vec Q`.
    pub fn stationary_covariance(&self) -> Result<Matrix> {
        let k = self.state_dim();
        let a = &self.transition;
        let system = Matrix::identity(k * k, k * k) - kron(a, a);
        let rhs = Vector::from_vec(vec(self.innovation.matrix()));
        let sol = system.lu().solve(&rhs).ok_or_else(|| LvmError::Singular {
            context: "stationary covariance system".into(),
        })?;
        let s = Matrix::from_column_slice(k, k, sol.as_slice());
        Ok((&s + s.transpose()) * 0.5)
    }

    /// Ancestral rollout of length `horizon`; returns `(states, observations)`.
    pub fn sample(&self, horizon: usize, rng: &mut RngStream) -> Result<(Matrix, Matrix)> {
        let k = self.state_dim();
        let p = self.observed_dim();
        let initial = match &self.initial {
            InitialState::Stationary => MultivariateNormal::zero_mean(SpdMatrix::new(self.stationary_covariance()?)?),
            InitialState::Given { distribution } => distribution.clone(),
        };
        let innovation = MultivariateNormal::zero_mean(self.innovation.clone());
        let emission_noise = self.emission_noise.clone().map(MultivariateNormal::zero_mean);
        let mut states = Matrix::zeros(horizon, k);
        let mut obs = Matrix::zeros(horizon, p);
        let mut z = initial.sample_one(rng);
        for t in 0..horizon {
            if t > 0 {
                z = &self.transition * &z + innovation.sample_one(rng);
            }
            let mut y = &self.emission * &z;
            if let Some(noise) = &emission_noise {
                y += noise.sample_one(rng);
            }
            states.row_mut(t).copy_from(&z.transpose());
            obs.row_mut(t).copy_from(&y.transpose());
        }
        Ok((states, obs))
    }
}

/// Two-level regression: `β_j ~ N(b₀, Σ_β)` per cluster, then
/// `y_n = x_nᵀ β_{c(n)} + ε_n` with `ε_n ~ N(0, σ²)`.
///
/// The hyperparameters are fixed inputs. One draw is the whole response
/// vector for the given design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchicalRegressionSpec {
    /// `N x M` design matrix.
    #[serde(with = "serde_matrix::rows")]
    pub design: Matrix,
    /// Cluster label in `0..J` for each row of the design.
    pub clusters: Vec<usize>,
    #[serde(with = "serde_matrix::vector")]
    pub coef_mean: Vector,
    pub coef_covariance: SpdMatrix,
    pub noise_variance: f64,
}

impl HierarchicalRegressionSpec {
    pub fn n_clusters(&self) -> usize {
        self.clusters.iter().max().map_or(0, |m| m + 1)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m) = self.design.shape();
        if n == 0 || m == 0 {
            return Err(LvmError::invalid("design", "must be non-empty"));
        }
        if self.clusters.len() != n {
            return Err(LvmError::invalid("clusters", format!("expected {n} labels")));
        }
        super::dataset::check_cluster_labels(&self.clusters).map_err(|r| LvmError::invalid("clusters", r))?;
        if self.coef_mean.len() != m {
            return Err(LvmError::invalid("coef_mean", format!("expected {m} entries")));
        }
        if self.coef_covariance.dim() != m {
            return Err(LvmError::invalid("coef_covariance", format!("expected {m}x{m}")));
        }
        if !(self.noise_variance > 0.0 && self.noise_variance.is_finite()) {
            return Err(LvmError::invalid("noise_variance", "must be positive"));
        }
        Ok(())
    }

    pub fn implied_mean(&self) -> Vector {
        &self.design * &self.coef_mean
    }

    /// `Cov(y_i, y_j) = x_iᵀ Σ_β x_j [c(i) = c(j)] + σ² [i = j]`.
    pub fn implied_covariance(&self) -> Matrix {
        let n = self.design.nrows();
        let shared = &self.design * self.coef_covariance.matrix() * self.design.transpose();
        Matrix::from_fn(n, n, |i, j| {
            let within = if self.clusters[i] == self.clusters[j] {
                shared[(i, j)]
            } else {
                0.0
            };
            within + if i == j { self.noise_variance } else { 0.0 }
        })
    }

    /// Returns `(coefficients draws x (J·M), responses draws x N)`;
    /// coefficient rows are cluster-major.
    pub fn sample(&self, draws: usize, rng: &mut RngStream) -> Result<(Matrix, Matrix)> {
        let (n, m) = self.design.shape();
        let j = self.n_clusters();
        let prior = MultivariateNormal::new(self.coef_mean.clone(), self.coef_covariance.clone())?;
        let sd = self.noise_variance.sqrt();
        let mut coefs = Matrix::zeros(draws, j * m);
        let mut ys = Matrix::zeros(draws, n);
        for d in 0..draws {
            let betas: Vec<Vector> = (0..j).map(|_| prior.sample_one(rng)).collect();
            for (c, b) in betas.iter().enumerate() {
                for k in 0..m {
                    coefs[(d, c * m + k)] = b[k];
                }
            }
            for i in 0..n {
                let mean = self.design.row(i).dot(&betas[self.clusters[i]].transpose());
                ys[(d, i)] = mean + sd * rng.standard_normal();
            }
        }
        Ok((coefs, ys))
    }
}

/// Exchangeable categorical sequence: `p ~ Dirichlet(α)` once, then
/// `y_i | p ~ Categorical(p)` iid. Categories are reported as `1..=K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirichletCategoricalSpec {
    pub prior: Dirichlet,
}

impl DirichletCategoricalSpec {
    /// Returns `(p repeated on every row n x K, categories n x 1)`.
    pub fn sample(&self, n: usize, rng: &mut RngStream) -> (Matrix, Matrix) {
        let p: Categorical = self.prior.sample(rng);
        let k = self.prior.k();
        let latents = Matrix::from_fn(n, k, |_, c| p.probabilities()[c]);
        let obs = Matrix::from_fn(n, 1, |_, _| (p.sample(rng) + 1) as f64);
        (latents, obs)
    }
}

/// Independent probability vectors `p_n ~ Dirichlet(α)`, one per row;
/// suited to plotting draws on the simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirichletSimplexSpec {
    pub prior: Dirichlet,
}

impl DirichletSimplexSpec {
    pub fn sample(&self, n: usize, rng: &mut RngStream) -> Matrix {
        let k = self.prior.k();
        let mut out = Matrix::zeros(n, k);
        for i in 0..n {
            let p = self.prior.sample(rng);
            for c in 0..k {
                out[(i, c)] = p.probabilities()[c];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{relative_frobenius, sample_covariance};

    fn fraction_zero(y: &[f64]) -> f64 {
        y.iter().filter(|v| **v == 0.0).count() as f64 / y.len() as f64
    }

    #[test]
    fn tobit_censoring_fractions() {
        let mut rng = RngStream::new(1);
        let n = 100_000;
        let spec = TobitSpec {
            beta: 1.0,
            covariates: vec![0.0],
            noise_variance: 1.0,
        };
        let (_, y) = sample_tobit(&spec, n, &mut rng).unwrap();
        assert!((fraction_zero(&y) - 0.5).abs() < 0.01);

        let spec = TobitSpec {
            beta: 1.644_853_6,
            covariates: vec![1.0],
            noise_variance: 1.0,
        };
        assert!((spec.censoring_probability(1.0) - 0.05).abs() < 1e-7);
        let (_, y) = sample_tobit(&spec, n, &mut rng).unwrap();
        assert!((fraction_zero(&y) - 0.05).abs() < 0.005);

        let spec = TobitSpec {
            beta: 1e6,
            covariates: vec![1.0],
            noise_variance: 1.0,
        };
        let (_, y) = sample_tobit(&spec, 10_000, &mut rng).unwrap();
        assert_eq!(fraction_zero(&y), 0.0);
    }

    #[test]
    fn tobit_observed_is_censored_latent() {
        let mut rng = RngStream::new(2);
        let spec = TobitSpec {
            beta: 0.5,
            covariates: vec![-1.0, 0.0, 2.0],
            noise_variance: 2.0,
        };
        let (latent, obs) = spec.sample(1000, &mut rng);
        for (l, o) in latent.iter().zip(&obs) {
            assert_eq!(*o, l.max(0.0));
        }
        assert!(fraction_zero(&obs) > 0.0);
        assert!(TobitSpec {
            noise_variance: 0.0,
            ..spec
        }
        .validate()
        .is_err());
    }

    #[test]
    fn airy_compound_symmetry() {
        let spec = AirySpec {
            mu: 0.0,
            var_z: 2.0,
            var_eps: 1.0,
            repeats: 3,
        };
        let mut rng = RngStream::new(3);
        let (_, y) = spec.sample(200_000, &mut rng);
        let expected = Matrix::from_element(3, 3, 2.0) + Matrix::identity(3, 3);
        assert_eq!(spec.implied_covariance(), expected);
        assert!(relative_frobenius(&sample_covariance(&y, 1), &expected) < 0.02);
    }

    fn scalar_temporal(a: f64, emission_noise: Option<f64>) -> TemporalSpec {
        TemporalSpec {
            transition: Matrix::from_element(1, 1, a),
            emission: Matrix::identity(1, 1),
            innovation: SpdMatrix::identity(1),
            emission_noise: emission_noise.map(|v| SpdMatrix::from_diagonal(&[v]).unwrap()),
            initial: InitialState::Stationary,
        }
    }

    fn lag1_autocorrelation(x: &[f64]) -> f64 {
        let m = x.iter().sum::<f64>() / x.len() as f64;
        let var: f64 = x.iter().map(|v| (v - m).powi(2)).sum();
        let cov: f64 = x.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
        cov / var
    }

    #[test]
    fn temporal_zero_transition_is_iid() {
        let mut rng = RngStream::new(4);
        let spec = scalar_temporal(0.0, Some(0.5));
        let (_, y) = spec.sample(100_000, &mut rng).unwrap();
        assert!(lag1_autocorrelation(y.as_slice()).abs() < 0.01);
    }

    #[test]
    fn temporal_ar1_stationary_variance() {
        let spec = scalar_temporal(0.9, None);
        let expected = 1.0 / (1.0 - 0.81);
        assert!((spec.stationary_covariance().unwrap()[(0, 0)] - expected).abs() < 1e-12);
        let mut rng = RngStream::new(5);
        let (z, _) = spec.sample(400_000, &mut rng).unwrap();
        let xs = z.as_slice();
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|v| (v - m).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!((var - expected).abs() / expected < 0.03, "variance {var}");
    }

    #[test]
    fn temporal_identity_emission_copies_state() {
        let mut rng = RngStream::new(6);
        let spec = scalar_temporal(0.5, None);
        let (z, y) = spec.sample(500, &mut rng).unwrap();
        assert_eq!(z, y);
        assert!((spec.spectral_radius() - 0.5).abs() < 1e-12);
        assert!(scalar_temporal(1.2, None).validate().is_err());
    }

    #[test]
    fn matrix_normal_vec_covariance() {
        let spec = MatrixNormalSpec {
            mean: Matrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
            row_covariance: SpdMatrix::new(Matrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0])).unwrap(),
            column_covariance: SpdMatrix::new(Matrix::from_row_slice(
                3,
                3,
                &[1.0, 0.3, 0.0, 0.3, 1.5, 0.2, 0.0, 0.2, 0.7],
            ))
            .unwrap(),
        };
        spec.validate().unwrap();
        let mut rng = RngStream::new(7);
        let draws = spec.sample(200_000, &mut rng);
        let cov = sample_covariance(&draws, 1);
        assert!(relative_frobenius(&cov, &spec.vec_covariance()) < 0.02);
        // Entry check: Cov(Y[0,0], Y[1,1]) = Σ[0,1] Ω[0,1]
        assert!((cov[(0, 3)] - 0.5 * 0.3).abs() < 0.02);
    }

    #[test]
    fn hierarchical_covariance_blocks() {
        let spec = HierarchicalRegressionSpec {
            design: Matrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, -1.0]),
            clusters: vec![0, 0, 1, 1],
            coef_mean: Vector::from_vec(vec![1.0, -0.5]),
            coef_covariance: SpdMatrix::from_diagonal(&[0.5, 0.25]).unwrap(),
            noise_variance: 0.1,
        };
        spec.validate().unwrap();
        let cov = spec.implied_covariance();
        assert_eq!(cov[(0, 2)], 0.0);
        assert!((cov[(0, 1)] - 0.5).abs() < 1e-15);
        let mut rng = RngStream::new(8);
        let (coefs, ys) = spec.sample(200_000, &mut rng).unwrap();
        assert_eq!(coefs.ncols(), 4);
        assert!(relative_frobenius(&sample_covariance(&ys, 1), &cov) < 0.02);
    }

    #[test]
    fn dirichlet_categorical_shares_probabilities() {
        let mut rng = RngStream::new(9);
        let spec = DirichletCategoricalSpec {
            prior: Dirichlet::new(vec![1.0, 2.0, 3.0]).unwrap(),
        };
        let (p, y) = spec.sample(50, &mut rng);
        assert!(p.row_iter().all(|r| r == p.row(0)));
        assert!(y.iter().all(|c| (1.0..=3.0).contains(c) && c.fract() == 0.0));
    }
}
