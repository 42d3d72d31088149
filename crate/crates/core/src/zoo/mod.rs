//! Declarative model specs, generative samplers and closed-form moments.
//!
//! Every spec serializes to JSON with a `model` tag naming the variant.
//! A spec's fingerprint is the FNV-1a 64-bit hash of its compact JSON
//! serialization (fields in declaration order, shortest round-trip floats),
//! printed as 16 lowercase hex digits.

mod auxiliary;
mod dataset;
mod linear;
mod multiview;
mod reduction;
mod rrr;
mod structural;

use std::hash::Hasher;

use serde::{Deserialize, Serialize};

pub use auxiliary::{
    normal_cdf, sample_tobit, AirySpec, DirichletCategoricalSpec, DirichletSimplexSpec, HierarchicalRegressionSpec,
    InitialState, MatrixNormalSpec, TemporalSpec, TobitSpec,
};
pub use dataset::Dataset;
pub use linear::{LatentPrior, LinearGaussianLvmSpec, NoiseModel};
pub use multiview::{sample_gfa_loadings, ArdPrior, IbfaMask, MultiViewSpec, ViewBlock};
pub use reduction::{check_reduction, ConditionCheck, ReductionReport, EXACT_TOLERANCE};
pub use rrr::{reduce_rank_regression, RankFactors};
pub use structural::{gsca_residual, GscaSpec, LisrelDims, StructuralSpec, B_CONDITION_WARNING};

use crate::deep::{dlgm_sample, DlgmSpec};
use crate::error::{LvmError, Result};
use crate::numerics::{cholesky, serde_matrix, Matrix, RngStream, Vector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum ModelSpec {
    Ppca(LinearGaussianLvmSpec),
    Fa(LinearGaussianLvmSpec),
    Ica(LinearGaussianLvmSpec),
    Cca(MultiViewSpec),
    Ibfa(MultiViewSpec),
    Mbfa(MultiViewSpec),
    Gfa(MultiViewSpec),
    Lisrel(StructuralSpec),
    Gsca(GscaSpec),
    MatrixNormal(MatrixNormalSpec),
    Tobit(TobitSpec),
    Airy(AirySpec),
    Temporal(TemporalSpec),
    HierarchicalRegression(HierarchicalRegressionSpec),
    DirichletCategorical(DirichletCategoricalSpec),
    DirichletSimplex(DirichletSimplexSpec),
    Dlgm(DlgmSpec),
}

impl ModelSpec {
    pub fn tag(&self) -> &'static str {
        match self {
            ModelSpec::Ppca(_) => "ppca",
            ModelSpec::Fa(_) => "fa",
            ModelSpec::Ica(_) => "ica",
            ModelSpec::Cca(_) => "cca",
            ModelSpec::Ibfa(_) => "ibfa",
            ModelSpec::Mbfa(_) => "mbfa",
            ModelSpec::Gfa(_) => "gfa",
            ModelSpec::Lisrel(_) => "lisrel",
            ModelSpec::Gsca(_) => "gsca",
            ModelSpec::MatrixNormal(_) => "matrix-normal",
            ModelSpec::Tobit(_) => "tobit",
            ModelSpec::Airy(_) => "airy",
            ModelSpec::Temporal(_) => "temporal",
            ModelSpec::HierarchicalRegression(_) => "hierarchical-regression",
            ModelSpec::DirichletCategorical(_) => "dirichlet-categorical",
            ModelSpec::DirichletSimplex(_) => "dirichlet-simplex",
            ModelSpec::Dlgm(_) => "dlgm",
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ModelSpec = serde_json::from_str(text).map_err(|e| LvmError::invalid("spec", e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).unwrap_or_default()
    }

    pub fn fingerprint(&self) -> String {
        let mut h = fnv::FnvHasher::default();
        h.write(self.to_json().as_bytes());
        format!("{:016x}", h.finish())
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::Ppca(s) => {
                s.validate()?;
                if !matches!(s.noise, NoiseModel::Isotropic { .. }) {
                    return Err(LvmError::invalid("noise", "ppca needs isotropic noise"));
                }
                if s.latent_prior != LatentPrior::StandardNormal {
                    return Err(LvmError::invalid("latent_prior", "ppca needs a standard normal prior"));
                }
                Ok(())
            }
            ModelSpec::Fa(s) => {
                s.validate()?;
                match &s.noise {
                    NoiseModel::Diagonal { .. } => {}
                    NoiseModel::Isotropic { variance } if *variance > 0.0 => {}
                    _ => return Err(LvmError::invalid("noise", "fa needs positive diagonal noise")),
                }
                if s.latent_prior != LatentPrior::StandardNormal {
                    return Err(LvmError::invalid("latent_prior", "fa needs a standard normal prior"));
                }
                Ok(())
            }
            ModelSpec::Ica(s) => {
                s.validate()?;
                if !matches!(s.latent_prior, LatentPrior::GeneralizedGaussian { .. }) {
                    return Err(LvmError::invalid(
                        "latent_prior",
                        "ica needs generalized Gaussian sources",
                    ));
                }
                if matches!(s.noise, NoiseModel::Full { .. }) {
                    return Err(LvmError::invalid("noise", "ica noise must be diagonal or absent"));
                }
                Ok(())
            }
            ModelSpec::Cca(s) => {
                s.validate()?;
                if s.views.len() != 2 {
                    return Err(LvmError::invalid("views", "cca needs exactly two views"));
                }
                Ok(())
            }
            ModelSpec::Ibfa(s) => {
                s.validate()?;
                if s.views.len() != 2 {
                    return Err(LvmError::invalid("views", "ibfa needs exactly two views"));
                }
                if s.ibfa_mask.is_none() {
                    return Err(LvmError::invalid("ibfa_mask", "ibfa needs a block mask"));
                }
                Ok(())
            }
            ModelSpec::Mbfa(s) => s.validate(),
            ModelSpec::Gfa(s) => {
                s.validate()?;
                if let Some(g) = s
                    .views
                    .iter()
                    .position(|v| !matches!(v.noise, NoiseModel::Isotropic { .. }))
                {
                    return Err(LvmError::invalid(
                        format!("views[{g}].noise"),
                        "gfa needs isotropic noise per view",
                    ));
                }
                Ok(())
            }
            ModelSpec::Lisrel(s) => s.validate(),
            ModelSpec::Gsca(s) => s.validate(),
            ModelSpec::MatrixNormal(s) => s.validate(),
            ModelSpec::Tobit(s) => s.validate(),
            ModelSpec::Airy(s) => s.validate(),
            ModelSpec::Temporal(s) => s.validate(),
            ModelSpec::HierarchicalRegression(s) => s.validate(),
            ModelSpec::DirichletCategorical(_) | ModelSpec::DirichletSimplex(_) => Ok(()),
            ModelSpec::Dlgm(s) => s.validate(),
        }
    }
}

/// Closed-form mean and covariance of the observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpliedMoments {
    #[serde(with = "serde_matrix::vector")]
    pub mean: Vector,
    #[serde(with = "serde_matrix::rows")]
    pub covariance: Matrix,
    /// `false` when the covariance is only semidefinite (noiseless limits).
    pub positive_definite: bool,
    /// Set when the observations are not Gaussian and only the first two
    /// moments are reported.
    pub covariance_only: bool,
}

impl ImpliedMoments {
    fn new(mean: Vector, covariance: Matrix, covariance_only: bool) -> Self {
        let covariance = (&covariance + covariance.transpose()) * 0.5;
        let positive_definite = cholesky(&covariance).is_ok();
        ImpliedMoments {
            mean,
            covariance,
            positive_definite,
            covariance_only,
        }
    }
}

pub fn implied_moments(spec: &ModelSpec) -> Result<ImpliedMoments> {
    spec.validate()?;
    let not_gaussian = |reason: &str| LvmError::NotLinearGaussian {
        model: spec.tag().into(),
        reason: reason.into(),
    };
    Ok(match spec {
        ModelSpec::Ppca(s) | ModelSpec::Fa(s) | ModelSpec::Ica(s) => {
            ImpliedMoments::new(s.mean_vector(), s.implied_covariance(), !s.latent_prior.is_gaussian())
        }
        ModelSpec::Cca(s) | ModelSpec::Ibfa(s) | ModelSpec::Mbfa(s) | ModelSpec::Gfa(s) => {
            ImpliedMoments::new(Vector::zeros(s.observed_dim()), s.implied_covariance(), false)
        }
        ModelSpec::Lisrel(s) => ImpliedMoments::new(Vector::zeros(s.observed_dim()), s.implied_covariance()?, false),
        ModelSpec::Gsca(s) => ImpliedMoments::new(
            s.observation.mean().clone(),
            s.observation.covariance().matrix().clone(),
            false,
        ),
        ModelSpec::MatrixNormal(s) => ImpliedMoments::new(s.vec_mean(), s.vec_covariance(), false),
        ModelSpec::Airy(s) => ImpliedMoments::new(Vector::from_element(s.repeats, s.mu), s.implied_covariance(), false),
        ModelSpec::Temporal(s) => {
            if !matches!(s.initial, InitialState::Stationary) {
                return Err(not_gaussian(
                    "marginal moments vary over time without a stationary start",
                ));
            }
            let state = s.stationary_covariance()?;
            let mut cov = &s.emission * state * s.emission.transpose();
            if let Some(r) = &s.emission_noise {
                cov += r.matrix();
            }
            ImpliedMoments::new(Vector::zeros(s.observed_dim()), cov, false)
        }
        ModelSpec::HierarchicalRegression(s) => ImpliedMoments::new(s.implied_mean(), s.implied_covariance(), false),
        ModelSpec::Tobit(_) => return Err(not_gaussian("censoring is not linear")),
        ModelSpec::DirichletCategorical(_) | ModelSpec::DirichletSimplex(_) => {
            return Err(not_gaussian("observations are categorical or simplex-valued"))
        }
        ModelSpec::Dlgm(_) => return Err(not_gaussian("layers pass through nonlinear networks")),
    })
}

/// Named column range of the latent record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentBlock {
    pub name: String,
    pub width: usize,
}

/// Paired latent and observed draws with their provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBatch {
    pub model: String,
    #[serde(with = "serde_matrix::rows")]
    pub latents: Matrix,
    #[serde(with = "serde_matrix::rows")]
    pub observations: Matrix,
    pub seed: u64,
    pub fingerprint: String,
    pub latent_layout: Vec<LatentBlock>,
}

impl SampleBatch {
    pub fn new(
        spec: &ModelSpec,
        latents: Matrix,
        observations: Matrix,
        seed: u64,
        latent_layout: Vec<LatentBlock>,
    ) -> Self {
        debug_assert_eq!(latents.nrows(), observations.nrows());
        debug_assert_eq!(latent_layout.iter().map(|b| b.width).sum::<usize>(), latents.ncols());
        SampleBatch {
            model: spec.tag().to_string(),
            latents,
            observations,
            seed,
            fingerprint: spec.fingerprint(),
            latent_layout,
        }
    }

    pub fn n(&self) -> usize {
        self.observations.nrows()
    }
}

fn block(name: &str, width: usize) -> Vec<LatentBlock> {
    if width == 0 {
        Vec::new()
    } else {
        vec![LatentBlock {
            name: name.to_string(),
            width,
        }]
    }
}

fn column(values: Vec<f64>) -> Matrix {
    Matrix::from_vec(values.len(), 1, values)
}

/// Ancestral sampling: latents from the prior, then observations from the
/// conditional. Deterministic in `(spec, rng state)`.
pub fn sample_lvm(spec: &ModelSpec, n: usize, rng: &mut RngStream) -> Result<SampleBatch> {
    if n == 0 {
        return Err(LvmError::invalid("n", "must be at least 1"));
    }
    spec.validate()?;
    let seed = rng.seed();
    let (latents, obs, layout) = match spec {
        ModelSpec::Ppca(s) | ModelSpec::Fa(s) | ModelSpec::Ica(s) => {
            let (z, y) = s.sample(n, rng)?;
            (z, y, block("z", s.latent_dim()))
        }
        ModelSpec::Cca(s) | ModelSpec::Ibfa(s) | ModelSpec::Mbfa(s) | ModelSpec::Gfa(s) => {
            let (z, y) = s.sample(n, rng);
            (z, y, block("z", s.latent_dim()))
        }
        ModelSpec::Lisrel(s) => {
            let (z, y) = s.sample(n, rng)?;
            let dims = s.dims();
            let mut layout = block("z1", dims.d1);
            layout.extend(block("z2", dims.d2));
            (z, y, layout)
        }
        ModelSpec::Gsca(s) => {
            let (z, y) = s.sample(n, rng);
            (z, y, block("z", s.latent_dim()))
        }
        ModelSpec::MatrixNormal(s) => (Matrix::zeros(n, 0), s.sample(n, rng), Vec::new()),
        ModelSpec::Tobit(s) => {
            let (latent, y) = s.sample(n, rng);
            (column(latent), column(y), block("y_star", 1))
        }
        ModelSpec::Airy(s) => {
            let (z, y) = s.sample(n, rng);
            (z, y, block("z", 1))
        }
        ModelSpec::Temporal(s) => {
            let (z, y) = s.sample(n, rng)?;
            (z, y, block("z", s.state_dim()))
        }
        ModelSpec::HierarchicalRegression(s) => {
            let (b, y) = s.sample(n, rng)?;
            let width = b.ncols();
            (b, y, block("beta", width))
        }
        ModelSpec::DirichletCategorical(s) => {
            let (p, y) = s.sample(n, rng);
            (p, y, block("p", s.prior.k()))
        }
        ModelSpec::DirichletSimplex(s) => (Matrix::zeros(n, 0), s.sample(n, rng), Vec::new()),
        ModelSpec::Dlgm(s) => return dlgm_sample(s, n, rng),
    };
    Ok(SampleBatch::new(spec, latents, obs, seed, layout))
}

/// Time-indexed rollout: row `t` of the batch is time step `t`.
pub fn sample_temporal(spec: &TemporalSpec, horizon: usize, rng: &mut RngStream) -> Result<SampleBatch> {
    sample_lvm(&ModelSpec::Temporal(spec.clone()), horizon, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::Dirichlet;
    use crate::numerics::{relative_frobenius, sample_covariance, SpdMatrix};

    fn fa_spec() -> ModelSpec {
        ModelSpec::Fa(LinearGaussianLvmSpec::fa(
            Matrix::from_element(2, 1, 1.0),
            vec![1.0, 1.0],
        ))
    }

    #[test]
    fn fa_monte_carlo_covariance() {
        let mut rng = RngStream::new(1);
        let batch = sample_lvm(&fa_spec(), 200_000, &mut rng).unwrap();
        let expected = Matrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        assert!(relative_frobenius(&sample_covariance(&batch.observations, 1), &expected) < 0.02);
        assert_eq!(batch.latents.nrows(), batch.observations.nrows());
        assert_eq!(batch.fingerprint, fa_spec().fingerprint());
    }

    #[test]
    fn ppca_monte_carlo_covariance() {
        let w = Matrix::from_row_slice(4, 2, &[1.0, 1.0, 1.0, -1.0, 1.0, 1.0, 1.0, -1.0]);
        let spec = ModelSpec::Ppca(LinearGaussianLvmSpec::ppca(w, 0.1));
        let oracle = implied_moments(&spec).unwrap();
        let batch = sample_lvm(&spec, 200_000, &mut RngStream::new(2)).unwrap();
        assert!(relative_frobenius(&sample_covariance(&batch.observations, 1), &oracle.covariance) < 0.02);
        let means = crate::numerics::column_means(&batch.observations);
        assert!(means.amax() < 0.01);
    }

    #[test]
    fn cca_block_formula() {
        let view = |w: f64| ViewBlock {
            loading: Matrix::from_element(1, 1, w),
            noise: NoiseModel::Full {
                covariance: SpdMatrix::identity(1),
            },
        };
        let spec = ModelSpec::Cca(MultiViewSpec::new(vec![view(1.0), view(1.0)]));
        let m = implied_moments(&spec).unwrap();
        assert_eq!(m.covariance, Matrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]));
        assert!(m.positive_definite && !m.covariance_only);
    }

    #[test]
    fn ica_moments_are_flagged() {
        let w = Matrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        let ica = ModelSpec::Ica(LinearGaussianLvmSpec::ica(w.clone(), vec![0.2, 0.3], vec![1.0, 2.0]));
        assert!(implied_moments(&ica).unwrap().covariance_only);
        let gaussian = ModelSpec::Ica(LinearGaussianLvmSpec::ica(w.clone(), vec![0.2, 0.3], vec![2.0, 2.0]));
        let fa = ModelSpec::Fa(LinearGaussianLvmSpec::fa(w, vec![0.2, 0.3]));
        let (a, b) = (implied_moments(&gaussian).unwrap(), implied_moments(&fa).unwrap());
        assert!(!a.covariance_only);
        assert_eq!(a.covariance, b.covariance);
    }

    #[test]
    fn non_linear_models_have_no_moments() {
        let tobit = ModelSpec::Tobit(TobitSpec {
            beta: 1.0,
            covariates: vec![1.0],
            noise_variance: 1.0,
        });
        assert!(matches!(
            implied_moments(&tobit),
            Err(LvmError::NotLinearGaussian { .. })
        ));
    }

    #[test]
    fn tags_round_trip_through_json() {
        let specs = [
            fa_spec(),
            ModelSpec::Airy(AirySpec {
                mu: 1.0,
                var_z: 2.0,
                var_eps: 1.0,
                repeats: 3,
            }),
            ModelSpec::DirichletSimplex(DirichletSimplexSpec {
                prior: Dirichlet::new(vec![1.0, 1.0, 1.0]).unwrap(),
            }),
        ];
        for spec in specs {
            let text = spec.to_json();
            assert!(text.starts_with(&format!("{{\"model\":\"{}\"", spec.tag())));
            let back = ModelSpec::from_json(&text).unwrap();
            assert_eq!(back, spec);
            assert_eq!(back.fingerprint(), spec.fingerprint());
        }
    }

    #[test]
    fn tag_legality() {
        let s = LinearGaussianLvmSpec::fa(Matrix::from_element(2, 1, 1.0), vec![1.0, 2.0]);
        assert!(ModelSpec::Ppca(s.clone()).validate().is_err());
        assert!(ModelSpec::Ica(s).validate().is_err());
        let err = ModelSpec::from_json(
            r#"{"model":"fa","loading":[[1.0],[1.0]],"noise":{"kind":"diagonal","variances":[1.0,0.0]}}"#,
        )
        .unwrap_err();
        assert!(matches!(err, LvmError::InvalidSpec { ref field, .. } if field == "noise.variances[1]"));
    }

    #[test]
    fn sampling_is_deterministic_and_validated() {
        let a = sample_lvm(&fa_spec(), 100, &mut RngStream::new(5)).unwrap();
        let b = sample_lvm(&fa_spec(), 100, &mut RngStream::new(5)).unwrap();
        assert_eq!(a, b);
        assert!(sample_lvm(&fa_spec(), 0, &mut RngStream::new(5)).is_err());
    }

    #[test]
    fn stationary_temporal_moments() {
        let spec = TemporalSpec {
            transition: Matrix::from_row_slice(2, 2, &[0.5, 0.2, -0.1, 0.3]),
            emission: Matrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]),
            innovation: SpdMatrix::identity(2),
            emission_noise: Some(SpdMatrix::from_diagonal(&[0.1, 0.1, 0.1]).unwrap()),
            initial: InitialState::Stationary,
        };
        let m = implied_moments(&ModelSpec::Temporal(spec.clone())).unwrap();
        let s = spec.stationary_covariance().unwrap();
        let a = &spec.transition;
        assert!((a * &s * a.transpose() + spec.innovation.matrix() - &s).amax() < 1e-12);
        let batch = sample_temporal(&spec, 400_000, &mut RngStream::new(6)).unwrap();
        assert!(relative_frobenius(&sample_covariance(&batch.observations, 1), &m.covariance) < 0.03);
    }
}
