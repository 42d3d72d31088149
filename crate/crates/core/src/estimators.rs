//! Closed-form and EM estimators for the Gaussian members of the zoo.
//!
//! All fits are deterministic functions of the data; FA's EM starts from
//! the PPCA closed form.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::distributions::Dirichlet;
use crate::error::{LvmError, Result};
use crate::numerics::{
    cholesky, column_means, sample_covariance, serde_matrix, svd, sym_eig, Matrix, SpdMatrix, Vector,
};
use crate::zoo::{AirySpec, Dataset, LinearGaussianLvmSpec, ModelSpec, MultiViewSpec, NoiseModel, ViewBlock};

/// Floor applied to FA noise variances (Heywood cases).
pub const NOISE_FLOOR: f64 = 1e-6;

/// A noise variance below this fraction of its observed variance is
/// reported as a Heywood case; EM approaches that boundary only sublinearly.
pub const HEYWOOD_RATIO: f64 = 1e-3;

/// Default ridge added to within-view covariances by the CCA fit.
pub const DEFAULT_CCA_REGULARIZATION: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum FittedParams {
    Ppca {
        #[serde(with = "serde_matrix::rows")]
        loading: Matrix,
        noise_variance: f64,
        #[serde(with = "serde_matrix::vector")]
        mean: Vector,
    },
    Fa {
        #[serde(with = "serde_matrix::rows")]
        loading: Matrix,
        noise_variances: Vec<f64>,
        #[serde(with = "serde_matrix::vector")]
        mean: Vector,
    },
    Cca {
        #[serde(with = "serde_matrix::rows")]
        loading_1: Matrix,
        #[serde(with = "serde_matrix::rows")]
        loading_2: Matrix,
        #[serde(with = "serde_matrix::rows")]
        noise_1: Matrix,
        #[serde(with = "serde_matrix::rows")]
        noise_2: Matrix,
        #[serde(with = "serde_matrix::vector")]
        mean: Vector,
        canonical_correlations: Vec<f64>,
    },
    Airy {
        mu: f64,
        var_z: f64,
        var_eps: f64,
    },
    DirichletCategorical {
        posterior: Dirichlet,
        predictive: Vec<f64>,
    },
}

impl FittedParams {
    /// The fitted parameters as a zoo spec, where one exists.
    pub fn to_spec(&self) -> Result<ModelSpec> {
        match self {
            FittedParams::Ppca {
                loading,
                noise_variance,
                mean,
            } => Ok(ModelSpec::Ppca(LinearGaussianLvmSpec {
                mean: Some(mean.clone()),
                ..LinearGaussianLvmSpec::ppca(loading.clone(), *noise_variance)
            })),
            FittedParams::Fa {
                loading,
                noise_variances,
                mean,
            } => Ok(ModelSpec::Fa(LinearGaussianLvmSpec {
                mean: Some(mean.clone()),
                ..LinearGaussianLvmSpec::fa(loading.clone(), noise_variances.clone())
            })),
            FittedParams::Cca {
                loading_1,
                loading_2,
                noise_1,
                noise_2,
                ..
            } => {
                let view = |loading: &Matrix, noise: &Matrix| -> Result<ViewBlock> {
                    Ok(ViewBlock {
                        loading: loading.clone(),
                        noise: NoiseModel::Full {
                            covariance: SpdMatrix::new(noise.clone())?,
                        },
                    })
                };
                Ok(ModelSpec::Cca(MultiViewSpec::new(vec![
                    view(loading_1, noise_1)?,
                    view(loading_2, noise_2)?,
                ])))
            }
            FittedParams::Airy { mu, var_z, var_eps } => Err(LvmError::Precondition(format!(
                "airy fit ({mu}, {var_z}, {var_eps}) needs the number of repeats to form a spec"
            ))),
            FittedParams::DirichletCategorical { .. } => Err(LvmError::Precondition(
                "a Dirichlet posterior is not a generative spec".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: String,
    pub estimate: FittedParams,
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub diagnostics: BTreeMap<String, f64>,
}

/// `−N/2 (P log 2π + log|C| + tr(C⁻¹ S))` with `S` the MLE covariance.
pub fn gaussian_loglik(n: usize, cov: &SpdMatrix, s: &Matrix) -> f64 {
    let p = cov.dim() as f64;
    let trace = cov.solve(s).trace();
    -0.5 * n as f64 * (p * (2.0 * PI).ln() + cov.log_det() + trace)
}

fn sign_gauge(w: &mut Matrix) {
    for mut col in w.column_iter_mut() {
        let pivot = col
            .iter()
            .copied()
            .fold(0.0_f64, |a, x| if x.abs() > a.abs() { x } else { a });
        if pivot < 0.0 {
            col.neg_mut();
        }
    }
}

fn check_latent_dim(d: usize, p: usize) -> Result<()> {
    if d == 0 || d >= p {
        return Err(LvmError::Precondition(format!(
            "latent dimension must satisfy 1 <= d < P = {p}, found {d}"
        )));
    }
    Ok(())
}

struct PpcaClosedForm {
    loading: Matrix,
    noise_variance: f64,
    positive: usize,
}

fn ppca_closed_form(s: &Matrix, d: usize) -> Result<PpcaClosedForm> {
    let p = s.nrows();
    let eig = sym_eig(s)?;
    let top = eig.values[0].max(0.0);
    let cutoff = top * p as f64 * f64::EPSILON * 16.0;
    let positive = eig.values.iter().filter(|v| **v > cutoff).count();
    if positive < d {
        return Err(LvmError::Numerical(format!(
            "sample covariance has {positive} positive eigenvalues, fewer than d = {d}"
        )));
    }
    let trailing = &eig.values.as_slice()[d..];
    let noise_variance = (trailing.iter().sum::<f64>() / trailing.len() as f64).max(0.0);
    let mut loading = eig.vectors.columns(0, d).into_owned();
    for k in 0..d {
        let scale = (eig.values[k] - noise_variance).max(0.0).sqrt();
        loading.column_mut(k).scale_mut(scale);
    }
    sign_gauge(&mut loading);
    Ok(PpcaClosedForm {
        loading,
        noise_variance,
        positive,
    })
}

/// Closed-form PPCA maximum likelihood.
///
/// The noise variance is the mean of the trailing `P − d` eigenvalues of
/// the sample covariance and `W = U_d (Λ_d − σ²I)^{1/2}`, so the columns of
/// `W` are orthogonal. Data confined to a `d`-dimensional subspace gives
/// `σ² = 0` and ordinary PCA.
pub fn fit_ppca_mle(data: &Dataset, d: usize) -> Result<FitResult> {
    data.validate()?;
    let (n, p) = (data.n(), data.p());
    check_latent_dim(d, p)?;
    if n <= p {
        warn!("ppca fit with N = {n} <= P = {p}; estimates are poorly determined");
    }
    let y = &data.observations;
    let s = sample_covariance(y, 0);
    let fit = ppca_closed_form(&s, d)?;
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("noise_variance".into(), fit.noise_variance);
    diagnostics.insert("positive_eigenvalues".into(), fit.positive as f64);
    diagnostics.insert("low_sample_size".into(), f64::from(u8::from(n <= p)));
    let total = s.trace();
    let explained = fit.loading.norm_squared() + d as f64 * fit.noise_variance;
    diagnostics.insert(
        "explained_variance_ratio".into(),
        if total > 0.0 { explained / total } else { 0.0 },
    );
    let mut trace = Vec::new();
    if fit.noise_variance > 0.0 {
        let cov = &fit.loading * fit.loading.transpose() + Matrix::identity(p, p) * fit.noise_variance;
        trace.push(gaussian_loglik(n, &SpdMatrix::new(cov)?, &s));
    } else {
        diagnostics.insert("degenerate_noise".into(), 1.0);
    }
    Ok(FitResult {
        model: "ppca".into(),
        estimate: FittedParams::Ppca {
            loading: fit.loading,
            noise_variance: fit.noise_variance,
            mean: column_means(y),
        },
        loglik_trace: trace,
        converged: true,
        iterations: 1,
        diagnostics,
    })
}

/// Factor analysis by EM.
///
/// E-step: `β = Wᵀ(WWᵀ + Ψ)⁻¹`, `E[zzᵀ]` averaged as `I − βW + βSβᵀ`.
/// M-step: `W ← Sβᵀ(I − βW + βSβᵀ)⁻¹`, `Ψ ← diag(S − WβS)` floored at
/// [`NOISE_FLOOR`]. Stops when the log-likelihood gain drops below `tol`.
pub fn fit_fa_em(data: &Dataset, d: usize, max_iter: usize, tol: f64) -> Result<FitResult> {
    data.validate()?;
    let (n, p) = (data.n(), data.p());
    check_latent_dim(d, p)?;
    if max_iter == 0 {
        return Err(LvmError::Precondition("max_iter must be at least 1".into()));
    }
    let y = &data.observations;
    let s = sample_covariance(y, 0);
    let init = ppca_closed_form(&s, d)?;
    let mut w = init.loading;
    let residual = &s - &w * w.transpose();
    let mut psi: Vec<f64> = residual.diagonal().iter().map(|v| v.max(NOISE_FLOOR)).collect();

    let implied = |w: &Matrix, psi: &[f64]| -> Result<SpdMatrix> {
        SpdMatrix::new(w * w.transpose() + Matrix::from_diagonal(&Vector::from_column_slice(psi)))
    };
    let mut cov = implied(&w, &psi)?;
    let mut trace = vec![gaussian_loglik(n, &cov, &s)];
    let mut converged = false;
    let mut iterations = 0;
    let eye = Matrix::identity(d, d);
    while iterations < max_iter {
        iterations += 1;
        let beta = cov.solve(&w).transpose();
        let second = &eye - &beta * &w + &beta * &s * beta.transpose();
        let second = SpdMatrix::new(second)?;
        let s_beta_t = &s * beta.transpose();
        let w_new = second.solve(&s_beta_t.transpose()).transpose();
        let update = &w_new * &beta * &s;
        psi = (0..p).map(|i| (s[(i, i)] - update[(i, i)]).max(NOISE_FLOOR)).collect();
        w = w_new;
        cov = implied(&w, &psi)?;
        let ll = gaussian_loglik(n, &cov, &s);
        let gain = ll - trace[trace.len() - 1];
        trace.push(ll);
        if gain.abs() < tol {
            converged = true;
            break;
        }
    }
    let floored = psi.iter().filter(|v| **v <= NOISE_FLOOR).count();
    let heywood = (0..p)
        .filter(|&i| psi[i] <= HEYWOOD_RATIO * s[(i, i)].max(NOISE_FLOOR))
        .count();
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("heywood_cases".into(), heywood as f64);
    diagnostics.insert("floored_variances".into(), floored as f64);
    diagnostics.insert("final_loglik".into(), trace[trace.len() - 1]);
    if heywood > 0 {
        warn!("{heywood} noise variance(s) near zero; {floored} clamped at {NOISE_FLOOR}");
    }
    Ok(FitResult {
        model: "fa".into(),
        estimate: FittedParams::Fa {
            loading: w,
            noise_variances: psi,
            mean: column_means(y),
        },
        loglik_trace: trace,
        converged,
        iterations,
        diagnostics,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CcaOptions {
    /// Ridge `γ` added to each within-view covariance before factorizing.
    pub regularization: f64,
}

impl Default for CcaOptions {
    fn default() -> Self {
        CcaOptions {
            regularization: DEFAULT_CCA_REGULARIZATION,
        }
    }
}

fn lower_solve(l: &Matrix, b: &Matrix) -> Matrix {
    l.clone()
        .solve_lower_triangular(b)
        .expect("Cholesky factor has a positive diagonal")
}

/// Probabilistic CCA maximum likelihood from classical canonical directions.
///
/// With `S₁₁ = L₁L₁ᵀ`, `S₂₂ = L₂L₂ᵀ` and `L₁⁻¹S₁₂L₂⁻ᵀ = U P Vᵀ`, the
/// directions are `U₁ = L₁⁻ᵀU_d`, `U₂ = L₂⁻ᵀV_d` and the loadings
/// `W_g = S_gg U_g P_d^{1/2}`, `Ψ_g = S_gg − W_g W_gᵀ`. The fitted
/// cross-covariance `W₁W₂ᵀ = S₁₁U₁P_dU₂ᵀS₂₂` has rank `d`.
pub fn fit_cca_mle(data: &Dataset, d: usize) -> Result<FitResult> {
    fit_cca_mle_with(data, d, CcaOptions::default())
}

pub fn fit_cca_mle_with(data: &Dataset, d: usize, options: CcaOptions) -> Result<FitResult> {
    data.validate()?;
    let groups = data
        .column_groups
        .as_ref()
        .filter(|g| g.len() == 2)
        .ok_or_else(|| LvmError::Precondition("cca needs exactly two column groups".into()))?;
    let (p1, p2) = (groups[0], groups[1]);
    if d == 0 || d > p1.min(p2) {
        return Err(LvmError::Precondition(format!(
            "shared dimension must satisfy 1 <= d <= {}, found {d}",
            p1.min(p2)
        )));
    }
    let y = &data.observations;
    let s = sample_covariance(y, 0);
    let gamma = options.regularization;
    let s11 = s.view((0, 0), (p1, p1)) + Matrix::identity(p1, p1) * gamma;
    let s22 = s.view((p1, p1), (p2, p2)) + Matrix::identity(p2, p2) * gamma;
    let s12 = s.view((0, p1), (p1, p2)).into_owned();
    let singular = |view: usize| {
        move |_| {
            LvmError::Numerical(format!(
                "within-view covariance of view {view} is singular; raise the regularization"
            ))
        }
    };
    let l1 = cholesky(&s11).map_err(singular(1))?;
    let l2 = cholesky(&s22).map_err(singular(2))?;
    let k = lower_solve(&l2, &lower_solve(&l1, &s12).transpose()).transpose();
    let dec = svd(&k)?;
    let rho: Vec<f64> = dec.singular_values.iter().copied().collect();
    let ud = dec.u.columns(0, d).into_owned();
    let vd = dec.v_t.rows(0, d).transpose();
    let l1t = l1.transpose();
    let l2t = l2.transpose();
    let u1 = l1t.solve_upper_triangular(&ud).expect("positive diagonal");
    let u2 = l2t.solve_upper_triangular(&vd).expect("positive diagonal");
    let root = Matrix::from_diagonal(&Vector::from_iterator(d, rho[..d].iter().map(|r| r.sqrt())));
    let mut w1 = &s11 * &u1 * &root;
    let mut w2 = &s22 * &u2 * &root;
    // Joint sign flips leave W₁W₂ᵀ unchanged; fix them by W₁.
    for c in 0..d {
        let col = w1.column(c);
        let pivot = col
            .iter()
            .copied()
            .fold(0.0_f64, |a, x| if x.abs() > a.abs() { x } else { a });
        if pivot < 0.0 {
            w1.column_mut(c).neg_mut();
            w2.column_mut(c).neg_mut();
        }
    }
    let sym = |m: Matrix| (&m + m.transpose()) * 0.5;
    let noise_1 = sym(&s11 - &w1 * w1.transpose());
    let noise_2 = sym(&s22 - &w2 * w2.transpose());
    let cross = &w1 * w2.transpose();
    let cross_sv = svd(&cross)?.singular_values;
    let rank_tol = cross_sv[0].max(f64::MIN_POSITIVE) * 1e-10;
    let mut diagnostics = BTreeMap::new();
    for (i, r) in rho.iter().enumerate() {
        diagnostics.insert(format!("canonical_correlation_{}", i + 1), *r);
    }
    diagnostics.insert(
        "cross_covariance_rank".into(),
        cross_sv.iter().filter(|v| **v > rank_tol).count() as f64,
    );
    diagnostics.insert("regularization".into(), gamma);
    let mut trace = Vec::new();
    let full = crate::numerics::block_diagonal(&[&noise_1, &noise_2])
        + crate::numerics::vstack(&[&w1, &w2]) * crate::numerics::vstack(&[&w1, &w2]).transpose();
    if let Ok(cov) = SpdMatrix::new(full) {
        trace.push(gaussian_loglik(data.n(), &cov, &s));
    }
    Ok(FitResult {
        model: "cca".into(),
        estimate: FittedParams::Cca {
            loading_1: w1,
            loading_2: w2,
            noise_1,
            noise_2,
            mean: column_means(y),
            canonical_correlations: rho[..d].to_vec(),
        },
        loglik_trace: trace,
        converged: true,
        iterations: 1,
        diagnostics,
    })
}

/// Canonical correlations between the first `p1` coordinates and the rest
/// of a covariance matrix, largest first.
pub fn canonical_correlations(cov: &Matrix, p1: usize) -> Result<Vec<f64>> {
    let p = cov.nrows();
    if p1 == 0 || p1 >= p || cov.ncols() != p {
        return Err(LvmError::Precondition(format!(
            "split {p1} must leave both blocks of a {p}x{} covariance non-empty",
            cov.ncols()
        )));
    }
    let p2 = p - p1;
    let l1 = cholesky(&cov.view((0, 0), (p1, p1)).into_owned())?;
    let l2 = cholesky(&cov.view((p1, p1), (p2, p2)).into_owned())?;
    let s12 = cov.view((0, p1), (p1, p2)).into_owned();
    let k = lower_solve(&l2, &lower_solve(&l1, &s12).transpose()).transpose();
    Ok(svd(&k)?.singular_values.iter().copied().collect())
}

/// Balanced one-way ANOVA moment estimator for `N` units with `P` repeats.
///
/// `σ̂²_ε = MSW`, `σ̂²_z = max(0, (MSB − MSW)/P)`, `μ̂` the grand mean.
pub fn fit_airy_anova(data: &Dataset) -> Result<FitResult> {
    data.validate()?;
    let (n, p) = (data.n(), data.p());
    if p < 2 {
        return Err(LvmError::Precondition(
            "need at least two repeats per unit to separate within and between variation".into(),
        ));
    }
    if n < 2 {
        return Err(LvmError::Precondition("need at least two units".into()));
    }
    let y = &data.observations;
    let unit_means: Vec<f64> = y.row_iter().map(|r| r.sum() / p as f64).collect();
    let grand = unit_means.iter().sum::<f64>() / n as f64;
    let within: f64 = y
        .row_iter()
        .zip(&unit_means)
        .map(|(r, m)| r.iter().map(|v| (v - m).powi(2)).sum::<f64>())
        .sum();
    let between: f64 = unit_means.iter().map(|m| (m - grand).powi(2)).sum();
    let msw = within / (n * (p - 1)) as f64;
    let msb = p as f64 * between / (n - 1) as f64;
    let raw = (msb - msw) / p as f64;
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("ms_within".into(), msw);
    diagnostics.insert("ms_between".into(), msb);
    diagnostics.insert("var_z_floored".into(), f64::from(u8::from(raw < 0.0)));
    Ok(FitResult {
        model: "airy".into(),
        estimate: FittedParams::Airy {
            mu: grand,
            var_z: raw.max(0.0),
            var_eps: msw,
        },
        loglik_trace: Vec::new(),
        converged: true,
        iterations: 1,
        diagnostics,
    })
}

impl FitResult {
    /// Airy estimates as a spec with `repeats` measurements per unit.
    pub fn airy_spec(&self, repeats: usize) -> Option<AirySpec> {
        match self.estimate {
            FittedParams::Airy { mu, var_z, var_eps } => Some(AirySpec {
                mu,
                var_z,
                var_eps,
                repeats,
            }),
            _ => None,
        }
    }
}

/// Conjugate update from categories in `1..=K`; the predictive is
/// `(α_k + c_k)/(α₀ + n)`.
pub fn fit_dirichlet_categorical(prior: &Dirichlet, observations: &[usize]) -> Result<FitResult> {
    let k = prior.k();
    let mut counts = vec![0u64; k];
    for (i, &y) in observations.iter().enumerate() {
        if y == 0 || y > k {
            return Err(LvmError::invalid(
                format!("observations[{i}]"),
                format!("category {y} outside 1..={k}"),
            ));
        }
        counts[y - 1] += 1;
    }
    let posterior = prior.posterior(&counts)?;
    let predictive = posterior.mean();
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("observations".into(), observations.len() as f64);
    diagnostics.insert("posterior_total".into(), posterior.total());
    Ok(FitResult {
        model: "dirichlet-categorical".into(),
        estimate: FittedParams::DirichletCategorical { posterior, predictive },
        loglik_trace: Vec::new(),
        converged: true,
        iterations: 1,
        diagnostics,
    })
}
