use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use lvm_core::distributions::Dirichlet;
use lvm_core::estimators::{
    fit_airy_anova, fit_cca_mle_with, fit_dirichlet_categorical, fit_fa_em, fit_ppca_mle, CcaOptions, FitResult,
    DEFAULT_CCA_REGULARIZATION,
};
use lvm_core::numerics::serde_matrix;
use lvm_core::zoo::{check_reduction, implied_moments, sample_lvm, Dataset, ImpliedMoments, LatentBlock, ModelSpec};
use lvm_core::{Matrix, RngStream};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::io::{column_names, matrix_to_csv, read_csv, read_spec, to_json, write_atomic};

pub const OBSERVATIONS_FILE: &str = "observations.csv";
pub const METADATA_FILE: &str = "metadata.json";
pub const FIT_FILE: &str = "fit.json";
pub const MOMENTS_FILE: &str = "moments.json";
pub const REDUCTION_FILE: &str = "reduction.json";
pub const REPLICATE_FILE: &str = "replicate.json";

pub const DEFAULT_MAX_ITER: usize = 1000;
pub const DEFAULT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    PpcaMle,
    FaEm,
    CcaMle,
    AiryAnova,
    DirichletCategorical,
}

impl Estimator {
    pub const ALL: [Estimator; 5] = [
        Estimator::PpcaMle,
        Estimator::FaEm,
        Estimator::CcaMle,
        Estimator::AiryAnova,
        Estimator::DirichletCategorical,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::PpcaMle => "ppca-mle",
            Estimator::FaEm => "fa-em",
            Estimator::CcaMle => "cca-mle",
            Estimator::AiryAnova => "airy-anova",
            Estimator::DirichletCategorical => "dirichlet-categorical",
        }
    }

    /// Spec tags whose samples this estimator can be scored against.
    pub fn models(self) -> &'static [&'static str] {
        match self {
            Estimator::PpcaMle => &["ppca", "fa"],
            Estimator::FaEm => &["fa", "ppca"],
            Estimator::CcaMle => &["cca", "ibfa"],
            Estimator::AiryAnova => &["airy"],
            Estimator::DirichletCategorical => &["dirichlet-categorical"],
        }
    }

    /// Accepts the estimator name or the bare model name (`fa` for `fa-em`).
    pub fn parse(name: &str) -> CliResult<Self> {
        Estimator::ALL
            .into_iter()
            .find(|e| e.name() == name || e.models()[0] == name)
            .ok_or_else(|| CliError::input(format!("unknown estimator `{name}`; {}", Self::pairs())))
    }

    pub fn pairs() -> String {
        let pairs: Vec<String> = Estimator::ALL
            .iter()
            .map(|e| format!("{} <- {}", e.name(), e.models().join(", ")))
            .collect();
        format!("supported estimator <- model pairs: {}", pairs.join("; "))
    }

    pub fn check_model(self, tag: &str) -> CliResult<()> {
        if self.models().contains(&tag) {
            Ok(())
        } else {
            Err(CliError::input(format!(
                "estimator `{}` does not apply to model `{tag}`; {}",
                self.name(),
                Self::pairs()
            )))
        }
    }
}

/// Estimator settings drawn from the run config.
#[derive(Debug, Clone, Default)]
pub struct FitOptions {
    pub latent_dim: Option<usize>,
    pub groups: Option<Vec<usize>>,
    pub prior: Option<Vec<f64>>,
    pub max_iter: Option<usize>,
    pub tol: Option<f64>,
    pub regularization: Option<f64>,
}

impl FitOptions {
    pub fn from_config(config: &RunConfig) -> Self {
        FitOptions {
            latent_dim: config.latent_dim,
            groups: config.groups.clone(),
            prior: config.prior.clone(),
            max_iter: config.max_iter,
            tol: config.tol,
            regularization: config.regularization,
        }
    }

    fn latent_dim(&self) -> CliResult<usize> {
        RunConfig::require(&self.latent_dim, "latent-dim").copied()
    }
}

fn categories(data: &Matrix) -> CliResult<Vec<usize>> {
    if data.ncols() != 1 {
        return Err(CliError::input(format!(
            "dirichlet-categorical expects one column of categories, found {}",
            data.ncols()
        )));
    }
    data.iter()
        .enumerate()
        .map(|(i, &x)| {
            if x >= 1.0 && x.fract() == 0.0 && x <= u32::MAX as f64 {
                Ok(x as usize)
            } else {
                Err(CliError::input(format!(
                    "row {}: category `{x}` is not an integer >= 1",
                    i + 1
                )))
            }
        })
        .collect()
}

/// Run one estimator on an in-memory data matrix.
pub fn fit_matrix(estimator: Estimator, data: Matrix, options: &FitOptions) -> CliResult<FitResult> {
    let fit = match estimator {
        Estimator::PpcaMle => fit_ppca_mle(&Dataset::new(data)?, options.latent_dim()?)?,
        Estimator::FaEm => fit_fa_em(
            &Dataset::new(data)?,
            options.latent_dim()?,
            options.max_iter.unwrap_or(DEFAULT_MAX_ITER),
            options.tol.unwrap_or(DEFAULT_TOL),
        )?,
        Estimator::CcaMle => {
            let groups = RunConfig::require(&options.groups, "groups")?.clone();
            let cca = CcaOptions {
                regularization: options.regularization.unwrap_or(DEFAULT_CCA_REGULARIZATION),
            };
            fit_cca_mle_with(&Dataset::new(data)?.with_groups(groups)?, options.latent_dim()?, cca)?
        }
        Estimator::AiryAnova => fit_airy_anova(&Dataset::new(data)?)?,
        Estimator::DirichletCategorical => {
            let obs = categories(&data)?;
            let prior = match &options.prior {
                Some(alpha) => Dirichlet::new(alpha.clone())?,
                None => Dirichlet::new(vec![1.0; obs.iter().copied().max().unwrap_or(1)])?,
            };
            fit_dirichlet_categorical(&prior, &obs)?
        }
    };
    Ok(fit)
}

/// Sidecar written next to the simulated observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationMetadata {
    pub model: String,
    pub seed: u64,
    pub fingerprint: String,
    pub n: usize,
    pub columns: Vec<String>,
    /// Column counts per view for multi-view models.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub column_groups: Option<Vec<usize>>,
    /// DLGM latent widths, bottom layer first.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub layer_dims: Option<Vec<usize>>,
    pub latent_layout: Vec<LatentBlock>,
    #[serde(with = "serde_matrix::rows")]
    pub latents: Matrix,
}

pub fn column_groups(spec: &ModelSpec) -> Option<Vec<usize>> {
    match spec {
        ModelSpec::Cca(s) | ModelSpec::Ibfa(s) | ModelSpec::Mbfa(s) | ModelSpec::Gfa(s) => Some(s.view_dims()),
        _ => None,
    }
}

fn emit(out: Option<&Path>, file: &str, text: &str, stdout: &mut dyn Write) -> CliResult<()> {
    match out {
        Some(dir) => write_atomic(&dir.join(file), text.as_bytes()),
        None => stdout.write_all(text.as_bytes()).map_err(|source| CliError::Write {
            path: "<stdout>".into(),
            source,
        }),
    }
}

pub fn cmd_simulate(config: &RunConfig) -> CliResult<()> {
    let spec = read_spec(RunConfig::require(&config.spec, "spec")?)?;
    let n = *RunConfig::require(&config.n, "n")?;
    let seed = *RunConfig::require(&config.seed, "seed")?;
    let out = RunConfig::require(&config.out, "out")?;
    let batch = sample_lvm(&spec, n, &mut RngStream::new(seed))?;
    let columns = column_names(batch.observations.ncols());
    let metadata = SimulationMetadata {
        model: batch.model.clone(),
        seed,
        fingerprint: batch.fingerprint.clone(),
        n,
        columns: columns.clone(),
        column_groups: column_groups(&spec),
        layer_dims: match &spec {
            ModelSpec::Dlgm(s) => Some(s.layer_dims()),
            _ => None,
        },
        latent_layout: batch.latent_layout,
        latents: batch.latents,
    };
    log::info!(
        "simulated {n} rows of `{}` (fingerprint {})",
        metadata.model,
        metadata.fingerprint
    );
    write_atomic(
        &out.join(OBSERVATIONS_FILE),
        &matrix_to_csv(&batch.observations, &columns),
    )?;
    write_atomic(&out.join(METADATA_FILE), to_json(&metadata).as_bytes())
}

pub fn cmd_fit(config: &RunConfig, stdout: &mut dyn Write) -> CliResult<()> {
    let data_path = RunConfig::require(&config.data, "data")?;
    let estimator = Estimator::parse(RunConfig::require(&config.model, "model")?)?;
    let (_, data) = read_csv(data_path)?;
    let fit = fit_matrix(estimator, data, &FitOptions::from_config(config))?;
    log::info!("{} finished after {} iterations", estimator.name(), fit.iterations);
    emit(config.out.as_deref(), FIT_FILE, &to_json(&fit), stdout)?;
    if !fit.converged {
        return Err(CliError::Numerical(format!(
            "{} did not converge within {} iterations",
            estimator.name(),
            fit.iterations
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentsReport {
    pub model: String,
    pub fingerprint: String,
    #[serde(flatten)]
    pub moments: ImpliedMoments,
}

pub fn cmd_implied_moments(config: &RunConfig, stdout: &mut dyn Write) -> CliResult<()> {
    let spec = read_spec(RunConfig::require(&config.spec, "spec")?)?;
    let report = MomentsReport {
        model: spec.tag().to_string(),
        fingerprint: spec.fingerprint(),
        moments: implied_moments(&spec)?,
    };
    emit(config.out.as_deref(), MOMENTS_FILE, &to_json(&report), stdout)
}

pub fn cmd_check_reduction(config: &RunConfig, stdout: &mut dyn Write) -> CliResult<()> {
    let from = read_spec(RunConfig::require(&config.from, "from")?)?;
    let to = read_spec(RunConfig::require(&config.to, "to")?)?;
    let report = check_reduction(&from, &to)?;
    emit(config.out.as_deref(), REDUCTION_FILE, &to_json(&report), stdout)
}

/// Summary statistics of one metric across replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    /// `None` for a single replication.
    pub std_error: Option<f64>,
}

pub fn summarize(values: &[f64]) -> MetricSummary {
    let r = values.len() as f64;
    let mean = values.iter().sum::<f64>() / r;
    let std_error = (values.len() > 1).then(|| {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1.0);
        (var / r).sqrt()
    });
    MetricSummary { mean, std_error }
}

pub type Metrics = BTreeMap<String, f64>;
