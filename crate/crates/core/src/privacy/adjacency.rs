use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{selection_matrix, Mat};

/// Adjacency for one participant: two state trajectories are adjacent when
/// they differ only in the selected coordinates and `‖T x − T x′‖₂ ≤ ρ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Adjacency {
    pub rho: f64,
    /// Protected state coordinates (0-based).
    pub selection: Vec<usize>,
}

impl Adjacency {
    pub fn new(rho: f64, selection: Vec<usize>) -> Result<Self> {
        let a = Self { rho, selection };
        a.validate(None)?;
        Ok(a)
    }

    pub fn validate(&self, state_dim: Option<usize>) -> Result<()> {
        if !(self.rho.is_finite() && self.rho >= 0.0) {
            return Err(Error::Domain(format!("rho must be nonnegative, got {}", self.rho)));
        }
        let mut sorted = self.selection.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.selection.len() {
            return Err(Error::Invalid("selection lists a coordinate twice".into()));
        }
        if let Some(n) = state_dim {
            if let Some(&bad) = self.selection.iter().find(|&&i| i >= n) {
                return Err(Error::Dimension(format!(
                    "selection index {bad} outside state dimension {n}"
                )));
            }
        }
        Ok(())
    }

    /// Diagonal 0/1 matrix `T`.
    pub fn selection_matrix(&self, state_dim: usize) -> Result<Mat> {
        selection_matrix(state_dim, &self.selection)
    }
}

/// Per-participant adjacency bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjacencyPolicy {
    pub participants: Vec<Adjacency>,
}

impl AdjacencyPolicy {
    pub fn new(participants: Vec<Adjacency>) -> Result<Self> {
        for (i, a) in participants.iter().enumerate() {
            a.validate(None)
                .map_err(|e| Error::Invalid(format!("participant {i}: {e}")))?;
        }
        Ok(Self { participants })
    }

    /// The same bound for `n` participants.
    pub fn uniform(n: usize, rho: f64, selection: Vec<usize>) -> Result<Self> {
        let a = Adjacency::new(rho, selection)?;
        Ok(Self {
            participants: vec![a; n],
        })
    }

    pub fn len(&self) -> usize {
        self.participants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.participants.is_empty()
    }

    pub fn get(&self, i: usize) -> Result<&Adjacency> {
        self.participants
            .get(i)
            .ok_or_else(|| Error::Dimension(format!("no adjacency entry for participant {i}")))
    }
}
