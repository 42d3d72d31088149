use serde::{Deserialize, Serialize};

use super::{implied_moments, LatentPrior, ModelSpec, MultiViewSpec, NoiseModel};
use crate::error::Result;

/// Largest moment discrepancy accepted as "identical".
pub const EXACT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub name: String,
    pub passed: bool,
    pub deviation: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl ConditionCheck {
    fn measured(name: &str, deviation: f64, tolerance: f64, failure: &str) -> Self {
        let passed = deviation <= tolerance;
        ConditionCheck {
            name: name.to_string(),
            passed,
            deviation,
            failure: (!passed).then(|| failure.to_string()),
        }
    }

    fn flag(name: &str, passed: bool, failure: &str) -> Self {
        ConditionCheck {
            name: name.to_string(),
            passed,
            deviation: if passed { 0.0 } else { f64::INFINITY },
            failure: (!passed).then(|| failure.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionReport {
    pub from: String,
    pub to: String,
    /// Known relation between the two families, or `"no known reduction"`.
    pub relation: String,
    pub holds: bool,
    pub conditions: Vec<ConditionCheck>,
    pub max_deviation: f64,
}

pub const NO_KNOWN_REDUCTION: &str = "no known reduction";

/// Checks whether the more specific of two specs is an instance of the
/// more general one: structural conditions on the specific spec plus
/// equality of the implied moments. Argument order does not matter.
pub fn check_reduction(from: &ModelSpec, to: &ModelSpec) -> Result<ReductionReport> {
    from.validate()?;
    to.validate()?;
    let (specific, general) = match (rank(from, to), rank(to, from)) {
        (Some(_), _) => (from, to),
        (None, Some(_)) => (to, from),
        (None, None) => {
            return Ok(ReductionReport {
                from: from.tag().into(),
                to: to.tag().into(),
                relation: NO_KNOWN_REDUCTION.into(),
                holds: false,
                conditions: Vec::new(),
                max_deviation: f64::NAN,
            })
        }
    };
    let relation = rank(specific, general).unwrap_or(NO_KNOWN_REDUCTION);
    let mut conditions = structural_conditions(specific, general);
    let a = implied_moments(specific)?;
    let b = implied_moments(general)?;
    if a.covariance.shape() != b.covariance.shape() {
        conditions.push(ConditionCheck::flag(
            "observed dimensions equal",
            false,
            "observed dimensions differ",
        ));
    } else {
        conditions.push(ConditionCheck::measured(
            "implied mean equal",
            (&a.mean - &b.mean).amax(),
            EXACT_TOLERANCE,
            "implied means differ",
        ));
        conditions.push(ConditionCheck::measured(
            "implied covariance equal",
            (&a.covariance - &b.covariance).amax(),
            EXACT_TOLERANCE,
            "implied covariances differ",
        ));
    }
    let max_deviation = conditions.iter().map(|c| c.deviation).fold(0.0, f64::max);
    Ok(ReductionReport {
        from: from.tag().into(),
        to: to.tag().into(),
        relation: relation.into(),
        holds: conditions.iter().all(|c| c.passed),
        conditions,
        max_deviation,
    })
}

/// Relation name when `specific` is a known special case of `general`.
fn rank(specific: &ModelSpec, general: &ModelSpec) -> Option<&'static str> {
    use ModelSpec::*;
    match (specific, general) {
        (Ppca(_), Fa(_)) => Some("ppca is factor analysis with isotropic noise"),
        (Cca(_), Fa(_)) => Some("cca with diagonal noise is factor analysis on stacked views"),
        (Mbfa(_), Fa(_)) => Some("mbfa with diagonal noise is factor analysis on stacked views"),
        (Ibfa(_), Cca(_)) => Some("ibfa is cca with a block-masked loading matrix"),
        (Gfa(_), Mbfa(_)) => Some("gfa is mbfa with isotropic noise per view"),
        (Ica(_), Fa(_)) => Some("ica with Gaussian sources is factor analysis"),
        _ => None,
    }
}

fn noise_off_diagonal(spec: &MultiViewSpec) -> f64 {
    spec.views
        .iter()
        .map(|v| v.noise.off_diagonal_magnitude(v.loading.nrows()))
        .fold(0.0, f64::max)
}

fn isotropy_spread(noise: &NoiseModel, dim: usize) -> f64 {
    match noise.diagonal_variances(dim) {
        Some(v) => {
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            hi - lo + noise.off_diagonal_magnitude(dim)
        }
        None => f64::INFINITY,
    }
}

fn structural_conditions(specific: &ModelSpec, general: &ModelSpec) -> Vec<ConditionCheck> {
    use ModelSpec::*;
    match (specific, general) {
        (Ppca(_), Fa(fa)) => vec![ConditionCheck::measured(
            "noise isotropic",
            isotropy_spread(&fa.noise, fa.observed_dim()),
            0.0,
            "noise not isotropic",
        )],
        (Cca(mv), Fa(_)) | (Mbfa(mv), Fa(_)) => vec![ConditionCheck::measured(
            "noise diagonal",
            noise_off_diagonal(mv),
            0.0,
            "noise not diagonal",
        )],
        (Ibfa(ibfa), Cca(cca)) => {
            let mask = ibfa.ibfa_mask.expect("validated ibfa has a mask");
            let loadings: Vec<_> = cca.views.iter().map(|v| &v.loading).collect();
            let shapes_match = cca.latent_dim() == mask.latent_dim() && cca.views.len() == 2;
            let mut checks = vec![ConditionCheck::flag(
                "latent layout matches mask",
                shapes_match,
                "cca latent dimension differs from the mask",
            )];
            if shapes_match {
                checks.push(ConditionCheck::measured(
                    "loading zero pattern",
                    mask.violation(&loadings),
                    0.0,
                    "loading violates the block mask",
                ));
            }
            checks
        }
        (Gfa(_), Mbfa(mv)) => vec![ConditionCheck::measured(
            "noise isotropic per view",
            mv.views
                .iter()
                .map(|v| isotropy_spread(&v.noise, v.loading.nrows()))
                .fold(0.0, f64::max),
            0.0,
            "noise not isotropic per view",
        )],
        (Ica(ica), Fa(_)) => {
            let spread = match &ica.latent_prior {
                LatentPrior::StandardNormal => 0.0,
                LatentPrior::GeneralizedGaussian { shapes } => {
                    shapes.iter().map(|a| (a - 2.0).abs()).fold(0.0, f64::max)
                }
            };
            vec![ConditionCheck::measured(
                "sources Gaussian",
                spread,
                0.0,
                "sources not Gaussian",
            )]
        }
        _ => Vec::new(),
    }
}
