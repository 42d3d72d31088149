//! Repeated simulate-then-fit runs scored against the generating spec.
//!
//! Replication `r` draws its data from `RngStream::new(seed + r)`, exactly
//! as `simulate --seed <seed + r>` would, so a single replication can be
//! reproduced from the two commands. Replications run on the rayon pool and
//! are reassembled in seed order.

use std::collections::BTreeMap;
use std::io::Write;

use lvm_core::estimators::{canonical_correlations, FitResult, FittedParams};
use lvm_core::numerics::{principal_angles, relative_frobenius};
use lvm_core::zoo::{implied_moments, sample_lvm, ModelSpec, NoiseModel, SampleBatch};
use lvm_core::RngStream;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::commands::{
    column_groups, fit_matrix, summarize, Estimator, FitOptions, MetricSummary, Metrics, REPLICATE_FILE,
};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::io::{read_spec, to_json, write_atomic};

pub const DEFAULT_ROWS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub seed: u64,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateReport {
    pub model: String,
    pub fingerprint: String,
    pub estimator: String,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub replications: Vec<Replication>,
    pub summary: BTreeMap<String, MetricSummary>,
}

/// Fill estimator settings the user left open from the generating spec.
fn defaults_from_spec(spec: &ModelSpec, options: &FitOptions) -> FitOptions {
    let mut options = options.clone();
    match spec {
        ModelSpec::Ppca(s) | ModelSpec::Fa(s) => {
            options.latent_dim.get_or_insert(s.latent_dim());
        }
        ModelSpec::Cca(s) | ModelSpec::Ibfa(s) => {
            let shared = s.ibfa_mask.as_ref().map_or(s.latent_dim(), |m| m.shared);
            options.latent_dim.get_or_insert(shared);
            if options.groups.is_none() {
                options.groups = column_groups(spec);
            }
        }
        ModelSpec::DirichletCategorical(s) => {
            options.prior.get_or_insert_with(|| s.prior.concentration().to_vec());
        }
        _ => {}
    }
    options
}

fn fitted_covariance(fit: &FitResult) -> CliResult<lvm_core::Matrix> {
    Ok(implied_moments(&fit.estimate.to_spec()?)?.covariance)
}

/// Estimator error statistics for one replication.
pub fn score(spec: &ModelSpec, batch: &SampleBatch, fit: &FitResult) -> CliResult<Metrics> {
    let mut m = Metrics::new();
    match (&fit.estimate, spec) {
        (
            FittedParams::Ppca {
                loading,
                noise_variance,
                ..
            },
            ModelSpec::Ppca(s) | ModelSpec::Fa(s),
        ) => {
            m.insert("noise_variance".into(), *noise_variance);
            if let NoiseModel::Isotropic { variance } = s.noise {
                m.insert(
                    "noise_variance_rel_error".into(),
                    (noise_variance - variance).abs() / variance,
                );
            }
            if loading.ncols() == s.latent_dim() {
                let angles = principal_angles(loading, &s.loading)?;
                let worst = angles.iter().copied().fold(0.0, f64::max);
                m.insert("max_principal_angle_deg".into(), worst.to_degrees());
            }
            m.insert(
                "implied_cov_rel_error".into(),
                relative_frobenius(&fitted_covariance(fit)?, &s.implied_covariance()),
            );
        }
        (FittedParams::Fa { .. }, ModelSpec::Ppca(s) | ModelSpec::Fa(s)) => {
            m.insert(
                "implied_cov_rel_error".into(),
                relative_frobenius(&fitted_covariance(fit)?, &s.implied_covariance()),
            );
            m.insert("iterations".into(), fit.iterations as f64);
            m.insert("converged".into(), f64::from(u8::from(fit.converged)));
            if let Some(ll) = fit.loglik_trace.last() {
                m.insert("final_loglik".into(), *ll);
            }
            if let Some(h) = fit.diagnostics.get("heywood_cases") {
                m.insert("heywood_cases".into(), *h);
            }
        }
        (
            FittedParams::Cca {
                canonical_correlations: rho,
                ..
            },
            ModelSpec::Cca(s) | ModelSpec::Ibfa(s),
        ) => {
            let p1 = s.view_dims()[0];
            let truth = canonical_correlations(&s.implied_covariance(), p1)?[0];
            m.insert("canonical_correlation_1".into(), rho[0]);
            m.insert("population_correlation_1".into(), truth);
            m.insert("top_correlation_rel_error".into(), (rho[0] - truth).abs() / truth);
        }
        (FittedParams::Airy { mu, var_z, var_eps }, ModelSpec::Airy(s)) => {
            m.insert("mu".into(), *mu);
            m.insert("var_z".into(), *var_z);
            m.insert("var_eps".into(), *var_eps);
            m.insert("mu_abs_error".into(), (mu - s.mu).abs());
            m.insert("var_z_rel_error".into(), (var_z - s.var_z).abs() / s.var_z);
            m.insert("var_eps_rel_error".into(), (var_eps - s.var_eps).abs() / s.var_eps);
        }
        (FittedParams::DirichletCategorical { posterior, predictive }, ModelSpec::DirichletCategorical(_)) => {
            let p = batch.latents.row(0);
            let worst = predictive
                .iter()
                .zip(p.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            m.insert("max_abs_error".into(), worst);
            m.insert("posterior_total".into(), posterior.total());
        }
        _ => {
            return Err(CliError::input(format!(
                "cannot score a `{}` fit against model `{}`",
                fit.model,
                spec.tag()
            )))
        }
    }
    Ok(m)
}

pub fn run_one(
    spec: &ModelSpec,
    estimator: Estimator,
    n: usize,
    seed: u64,
    options: &FitOptions,
) -> CliResult<Replication> {
    let batch = sample_lvm(spec, n, &mut RngStream::new(seed))?;
    let fit = fit_matrix(estimator, batch.observations.clone(), options)?;
    Ok(Replication {
        seed,
        metrics: score(spec, &batch, &fit)?,
    })
}

pub fn replicate(
    spec: &ModelSpec,
    estimator: Estimator,
    n: usize,
    reps: usize,
    seed: u64,
    options: &FitOptions,
) -> CliResult<ReplicateReport> {
    if reps == 0 {
        return Err(CliError::input("replication count must be at least 1"));
    }
    estimator.check_model(spec.tag())?;
    let options = defaults_from_spec(spec, options);
    let replications = (0..reps as u64)
        .into_par_iter()
        .map(|r| run_one(spec, estimator, n, seed.wrapping_add(r), &options))
        .collect::<CliResult<Vec<_>>>()?;
    let mut columns: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for rep in &replications {
        for (k, v) in &rep.metrics {
            columns.entry(k.clone()).or_default().push(*v);
        }
    }
    Ok(ReplicateReport {
        model: spec.tag().to_string(),
        fingerprint: spec.fingerprint(),
        estimator: estimator.name().to_string(),
        n,
        reps,
        seed,
        replications,
        summary: columns.iter().map(|(k, v)| (k.clone(), summarize(v))).collect(),
    })
}

pub fn cmd_replicate(config: &RunConfig, stdout: &mut dyn Write) -> CliResult<()> {
    let spec = read_spec(RunConfig::require(&config.spec, "spec")?)?;
    let estimator = Estimator::parse(RunConfig::require(&config.estimator, "estimator")?)?;
    let reps = *RunConfig::require(&config.reps, "reps")?;
    let seed = *RunConfig::require(&config.seed, "seed")?;
    let n = config.n.unwrap_or(DEFAULT_ROWS);
    let report = replicate(&spec, estimator, n, reps, seed, &FitOptions::from_config(config))?;
    let text = to_json(&report);
    match &config.out {
        Some(dir) => write_atomic(&dir.join(REPLICATE_FILE), text.as_bytes()),
        None => stdout.write_all(text.as_bytes()).map_err(|source| CliError::Write {
            path: "<stdout>".into(),
            source,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use lvm_core::zoo::AirySpec;

    fn airy() -> ModelSpec {
        ModelSpec::Airy(AirySpec {
            mu: 1.0,
            var_z: 2.0,
            var_eps: 0.5,
            repeats: 4,
        })
    }

    #[test]
    fn single_replication_matches_direct_run() {
        let options = FitOptions::default();
        let report = replicate(&airy(), Estimator::AiryAnova, 300, 1, 9, &options).unwrap();
        let direct = run_one(&airy(), Estimator::AiryAnova, 300, 9, &options).unwrap();
        for (k, v) in &direct.metrics {
            assert_eq!(report.summary[k].mean, *v);
            assert_eq!(report.summary[k].std_error, None);
        }
    }

    #[test]
    fn replications_are_ordered_and_deterministic() {
        let options = FitOptions::default();
        let a = replicate(&airy(), Estimator::AiryAnova, 200, 6, 100, &options).unwrap();
        let b = replicate(&airy(), Estimator::AiryAnova, 200, 6, 100, &options).unwrap();
        assert_eq!(to_json(&a), to_json(&b));
        let seeds: Vec<u64> = a.replications.iter().map(|r| r.seed).collect();
        assert_eq!(seeds, (100..106).collect::<Vec<_>>());
    }

    #[test]
    fn incompatible_pair_is_rejected() {
        let err = replicate(&airy(), Estimator::FaEm, 10, 1, 0, &FitOptions::default()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("supported estimator"));
    }

    #[test]
    fn zero_replications_is_rejected() {
        assert!(replicate(&airy(), Estimator::AiryAnova, 10, 0, 0, &FitOptions::default()).is_err());
    }
}
