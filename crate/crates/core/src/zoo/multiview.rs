use serde::{Deserialize, Serialize};

use super::linear::NoiseModel;
use crate::error::{LvmError, Result};
use crate::numerics::{block_diagonal, serde_matrix, vstack, Matrix, RngStream, Vector};

/// One group of observed variables and its loading onto the shared latent vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewBlock {
    /// `p_g x D`
    #[serde(with = "serde_matrix::rows")]
    pub loading: Matrix,
    pub noise: NoiseModel,
}

/// Column layout of an inter-battery loading matrix: `shared` columns load
/// on both views, the next `first_specific` only on view 1 and the last
/// `second_specific` only on view 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IbfaMask {
    pub shared: usize,
    pub first_specific: usize,
    pub second_specific: usize,
}

impl IbfaMask {
    pub fn latent_dim(&self) -> usize {
        self.shared + self.first_specific + self.second_specific
    }

    /// Latent columns view `g` must not load on.
    pub fn masked_columns(&self, view: usize) -> std::ops::Range<usize> {
        let first_end = self.shared + self.first_specific;
        match view {
            0 => first_end..self.latent_dim(),
            1 => self.shared..first_end,
            _ => 0..0,
        }
    }

    /// Largest magnitude found where the mask requires an exact zero.
    pub fn violation(&self, views: &[&Matrix]) -> f64 {
        views
            .iter()
            .enumerate()
            .flat_map(|(g, w)| {
                self.masked_columns(g)
                    .flat_map(move |c| w.column(c).iter().map(|x| x.abs()).collect::<Vec<_>>())
            })
            .fold(0.0, f64::max)
    }
}

/// Shared latent vector `z ~ N(0, I_D)` loading on `G` groups of variables,
/// each with its own noise block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiViewSpec {
    pub views: Vec<ViewBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ibfa_mask: Option<IbfaMask>,
}

impl MultiViewSpec {
    pub fn new(views: Vec<ViewBlock>) -> Self {
        MultiViewSpec { views, ibfa_mask: None }
    }

    /// Assembles `[[W10, W11, 0], [W20, 0, W22]]` with the matching mask.
    pub fn ibfa(
        w10: &Matrix,
        w11: &Matrix,
        w20: &Matrix,
        w22: &Matrix,
        noise1: NoiseModel,
        noise2: NoiseModel,
    ) -> Result<Self> {
        if w10.nrows() != w11.nrows() || w20.nrows() != w22.nrows() || w10.ncols() != w20.ncols() {
            return Err(LvmError::invalid("ibfa blocks", "inconsistent block shapes"));
        }
        let mask = IbfaMask {
            shared: w10.ncols(),
            first_specific: w11.ncols(),
            second_specific: w22.ncols(),
        };
        let d = mask.latent_dim();
        let mut top = Matrix::zeros(w10.nrows(), d);
        top.view_mut((0, 0), w10.shape()).copy_from(w10);
        top.view_mut((0, mask.shared), w11.shape()).copy_from(w11);
        let mut bottom = Matrix::zeros(w20.nrows(), d);
        bottom.view_mut((0, 0), w20.shape()).copy_from(w20);
        bottom
            .view_mut((0, mask.shared + mask.first_specific), w22.shape())
            .copy_from(w22);
        Ok(MultiViewSpec {
            views: vec![
                ViewBlock {
                    loading: top,
                    noise: noise1,
                },
                ViewBlock {
                    loading: bottom,
                    noise: noise2,
                },
            ],
            ibfa_mask: Some(mask),
        })
    }

    pub fn view_dims(&self) -> Vec<usize> {
        self.views.iter().map(|v| v.loading.nrows()).collect()
    }

    pub fn observed_dim(&self) -> usize {
        self.view_dims().iter().sum()
    }

    pub fn latent_dim(&self) -> usize {
        self.views.first().map_or(0, |v| v.loading.ncols())
    }

    pub fn validate(&self) -> Result<()> {
        if self.views.is_empty() {
            return Err(LvmError::invalid("views", "at least one view required"));
        }
        let d = self.latent_dim();
        if d == 0 {
            return Err(LvmError::invalid(
                "views[0].loading",
                "latent dimension must be positive",
            ));
        }
        for (g, view) in self.views.iter().enumerate() {
            if view.loading.nrows() == 0 {
                return Err(LvmError::invalid(format!("views[{g}].loading"), "view has no rows"));
            }
            if view.loading.ncols() != d {
                return Err(LvmError::invalid(
                    format!("views[{g}].loading"),
                    format!("expected {d} columns, found {}", view.loading.ncols()),
                ));
            }
            crate::numerics::ensure_finite(&view.loading)
                .map_err(|e| LvmError::invalid(format!("views[{g}].loading"), e.to_string()))?;
            view.noise
                .validate(&format!("views[{g}].noise"), view.loading.nrows())?;
        }
        if let Some(mask) = &self.ibfa_mask {
            if self.views.len() != 2 {
                return Err(LvmError::invalid("ibfa_mask", "requires exactly two views"));
            }
            if mask.latent_dim() != d {
                return Err(LvmError::invalid(
                    "ibfa_mask",
                    format!("mask covers {} columns, loadings have {d}", mask.latent_dim()),
                ));
            }
            for (g, view) in self.views.iter().enumerate() {
                for c in mask.masked_columns(g) {
                    if let Some(r) = view.loading.column(c).iter().position(|x| *x != 0.0) {
                        return Err(LvmError::invalid(
                            format!("views[{g}].loading[{r}][{c}]"),
                            "must be zero under the inter-battery mask",
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Stacked `P x D` loading `[W(1); …; W(G)]`.
    pub fn stacked_loading(&self) -> Matrix {
        vstack(&self.views.iter().map(|v| &v.loading).collect::<Vec<_>>())
    }

    /// Block-diagonal noise covariance.
    pub fn noise_covariance(&self) -> Matrix {
        let blocks: Vec<Matrix> = self
            .views
            .iter()
            .map(|v| v.noise.covariance(v.loading.nrows()))
            .collect();
        block_diagonal(&blocks.iter().collect::<Vec<_>>())
    }

    pub fn implied_covariance(&self) -> Matrix {
        let w = self.stacked_loading();
        let cov = &w * w.transpose() + self.noise_covariance();
        (&cov + cov.transpose()) * 0.5
    }

    /// `W(g) W(h)ᵀ`
    pub fn cross_covariance(&self, g: usize, h: usize) -> Matrix {
        &self.views[g].loading * self.views[h].loading.transpose()
    }

    pub fn noise_is_positive_definite(&self) -> bool {
        self.views.iter().all(|v| v.noise.is_positive_definite())
    }

    pub fn sample(&self, n: usize, rng: &mut RngStream) -> (Matrix, Matrix) {
        let d = self.latent_dim();
        let z = Matrix::from_fn(n, d, |_, _| rng.standard_normal());
        let mut blocks = Vec::with_capacity(self.views.len());
        for view in &self.views {
            let mut y = &z * view.loading.transpose();
            view.noise.add_to(&mut y, rng);
            blocks.push(y);
        }
        let mut y = Matrix::zeros(n, self.observed_dim());
        let mut c = 0;
        for b in &blocks {
            y.view_mut((0, c), b.shape()).copy_from(b);
            c += b.ncols();
        }
        (z, y)
    }
}

/// Low-rank ARD prior on the `G x D` group/column precisions:
/// `log α = U Vᵀ + μ_u 1ᵀ + 1 μ_vᵀ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArdPrior {
    /// `G x R`
    #[serde(with = "serde_matrix::rows")]
    pub u: Matrix,
    /// `D x R`
    #[serde(with = "serde_matrix::rows")]
    pub v: Matrix,
    #[serde(with = "serde_matrix::vector")]
    pub mu_u: Vector,
    #[serde(with = "serde_matrix::vector")]
    pub mu_v: Vector,
    #[serde(default = "ArdPrior::default_lambda")]
    pub lambda: f64,
}

impl ArdPrior {
    pub const DEFAULT_LAMBDA: f64 = 0.1;

    fn default_lambda() -> f64 {
        Self::DEFAULT_LAMBDA
    }

    /// Draws `U` and `V` entrywise from `N(0, 1/λ)`.
    pub fn draw(
        groups: usize,
        latent_dim: usize,
        rank: usize,
        mu_u: Vector,
        mu_v: Vector,
        lambda: f64,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let sd = (1.0 / lambda).sqrt();
        let prior = ArdPrior {
            u: Matrix::from_fn(groups, rank, |_, _| sd * rng.standard_normal()),
            v: Matrix::from_fn(latent_dim, rank, |_, _| sd * rng.standard_normal()),
            mu_u,
            mu_v,
            lambda,
        };
        prior.validate()?;
        Ok(prior)
    }

    pub fn groups(&self) -> usize {
        self.u.nrows()
    }

    pub fn latent_dim(&self) -> usize {
        self.v.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let (g, r) = self.u.shape();
        let d = self.v.nrows();
        if self.v.ncols() != r {
            return Err(LvmError::invalid("v", format!("expected {r} columns to match u")));
        }
        if r > g.min(d) {
            return Err(LvmError::invalid(
                "u",
                format!("rank {r} exceeds min(G, D) = {}", g.min(d)),
            ));
        }
        if self.mu_u.len() != g {
            return Err(LvmError::invalid("mu_u", format!("expected {g} entries")));
        }
        if self.mu_v.len() != d {
            return Err(LvmError::invalid("mu_v", format!("expected {d} entries")));
        }
        if self.lambda.is_nan() || self.lambda <= 0.0 {
            return Err(LvmError::invalid("lambda", "must be positive"));
        }
        Ok(())
    }

    /// `G x D` matrix of `log α`.
    pub fn log_precision(&self) -> Matrix {
        let (g, d) = (self.groups(), self.latent_dim());
        let mut out = &self.u * self.v.transpose();
        for i in 0..g {
            for j in 0..d {
                out[(i, j)] += self.mu_u[i] + self.mu_v[j];
            }
        }
        out
    }
}

/// Draws per-view loadings: column `d` of `W(g)` is `N(0, α_gd⁻¹ I)`.
pub fn sample_gfa_loadings(prior: &ArdPrior, view_dims: &[usize], rng: &mut RngStream) -> Result<Vec<Matrix>> {
    prior.validate()?;
    if view_dims.len() != prior.groups() {
        return Err(LvmError::mismatch("GFA view count", prior.groups(), view_dims.len()));
    }
    let log_alpha = prior.log_precision();
    Ok(view_dims
        .iter()
        .enumerate()
        .map(|(g, &p)| {
            let sds: Vec<f64> = (0..prior.latent_dim())
                .map(|d| (-log_alpha[(g, d)]).exp().sqrt())
                .collect();
            Matrix::from_fn(p, prior.latent_dim(), |_, d| sds[d] * rng.standard_normal())
        })
        .collect())
}
