use serde::{Deserialize, Serialize};

use crate::error::{LvmError, Result};
use crate::numerics::{serde_matrix, Matrix};

/// `N x P` observations with optional column grouping and row clustering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    #[serde(with = "serde_matrix::rows")]
    pub observations: Matrix,
    /// Sizes of contiguous column groups, summing to `P`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column_groups: Option<Vec<usize>>,
    /// Cluster label in `0..J` for each row; every label must occur.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row_clusters: Option<Vec<usize>>,
}

/// Labels must cover `0..J` with every label used at least once.
pub(crate) fn check_cluster_labels(labels: &[usize]) -> std::result::Result<(), String> {
    let j = labels.iter().max().map_or(0, |m| m + 1);
    let mut seen = vec![false; j];
    for &l in labels {
        seen[l] = true;
    }
    match seen.iter().position(|s| !s) {
        Some(missing) => Err(format!("cluster {missing} has no members")),
        None => Ok(()),
    }
}

impl Dataset {
    pub fn new(observations: Matrix) -> Result<Self> {
        let ds = Dataset {
            observations,
            column_groups: None,
            row_clusters: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn with_groups(mut self, sizes: Vec<usize>) -> Result<Self> {
        self.column_groups = Some(sizes);
        self.validate()?;
        Ok(self)
    }

    pub fn with_clusters(mut self, labels: Vec<usize>) -> Result<Self> {
        self.row_clusters = Some(labels);
        self.validate()?;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.observations.nrows()
    }

    pub fn p(&self) -> usize {
        self.observations.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, p) = self.observations.shape();
        if n == 0 || p == 0 {
            return Err(LvmError::invalid("observations", "need at least one row and column"));
        }
        crate::numerics::ensure_finite(&self.observations)?;
        if let Some(groups) = &self.column_groups {
            if groups.contains(&0) {
                return Err(LvmError::invalid("column_groups", "groups must be non-empty"));
            }
            let total: usize = groups.iter().sum();
            if total != p {
                return Err(LvmError::invalid(
                    "column_groups",
                    format!("group sizes sum to {total}, expected {p}"),
                ));
            }
        }
        if let Some(labels) = &self.row_clusters {
            if labels.len() != n {
                return Err(LvmError::invalid("row_clusters", format!("expected {n} labels")));
            }
            check_cluster_labels(labels).map_err(|r| LvmError::invalid("row_clusters", r))?;
        }
        Ok(())
    }

    /// Column block of group `g`; the whole matrix when ungrouped.
    pub fn view(&self, g: usize) -> Result<Matrix> {
        let Some(groups) = &self.column_groups else {
            return if g == 0 {
                Ok(self.observations.clone())
            } else {
                Err(LvmError::invalid("column_groups", "dataset has a single group"))
            };
        };
        let size = *groups
            .get(g)
            .ok_or_else(|| LvmError::invalid("column_groups", format!("no group {g}")))?;
        let start: usize = groups[..g].iter().sum();
        Ok(self.observations.columns(start, size).into_owned())
    }

    /// Measurement density `N / P`.
    pub fn measurement_density(&self) -> f64 {
        self.n() as f64 / self.p() as f64
    }
}
