//! Draws of the random matrices driving the dynamics: one-hot adaptation
//! matrices A(t), Bernoulli susceptibility diagonals Λ(t), and one-hot
//! mutation matrices C(t). Rows are sampled independently, each from its own
//! counter-based sub-stream, so draws are reproducible and parallel-safe.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Domain, StepStream};
use crate::stochastic::{StochasticMatrix, StochasticVector};

/// A binary row-stochastic matrix with exactly one 1 per row, stored as the
/// selected column index of each row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSelection", into = "RawSelection")]
pub struct SelectionMatrix {
    n: usize,
    select: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct RawSelection {
    n: usize,
    select: Vec<usize>,
}

impl TryFrom<RawSelection> for SelectionMatrix {
    type Error = Error;
    fn try_from(raw: RawSelection) -> Result<Self> {
        SelectionMatrix::new(raw.n, raw.select)
    }
}

impl From<SelectionMatrix> for RawSelection {
    fn from(m: SelectionMatrix) -> Self {
        RawSelection {
            n: m.n,
            select: m.select,
        }
    }
}

impl SelectionMatrix {
    /// Validates that every selected index is in range (the one-hot
    /// invariant holds by construction of the representation).
    pub fn new(n: usize, select: Vec<usize>) -> Result<Self> {
        if select.is_empty() {
            return Err(Error::DimensionError {
                expected: 1,
                found: 0,
            });
        }
        if let Some(&bad) = select.iter().find(|&&j| j >= n) {
            return Err(Error::DimensionError {
                expected: n,
                found: bad,
            });
        }
        Ok(Self { n, select })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n,
            select: (0..n).collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.select.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// The column selected by row `i`.
    pub fn selected(&self, i: usize) -> usize {
        self.select[i]
    }

    pub fn select(&self) -> &[usize] {
        &self.select
    }
}

/// One realization of the susceptibility diagonal Λ(t).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SusceptibilityDraw {
    pub lambda: Vec<u8>,
}

impl SusceptibilityDraw {
    pub fn all_ones(n: usize) -> Self {
        Self {
            lambda: vec![1; n],
        }
    }

    pub fn all_zeros(n: usize) -> Self {
        Self {
            lambda: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda.is_empty()
    }

    pub fn is_set(&self, i: usize) -> bool {
        self.lambda[i] == 1
    }
}

/// Draws A(t): row i selects column j with probability q_ij, rows
/// independent, one uniform per row.
pub fn sample_adaptation(q: &StochasticMatrix, stream: StepStream) -> SelectionMatrix {
    let n = q.n();
    let select = (0..n)
        .map(|i| {
            let mut rng = stream.row(Domain::Adaptation, i as u64);
            rng.next_categorical(q.row(i))
        })
        .collect();
    SelectionMatrix { n, select }
}

/// Draws Λ(t): independent Bernoulli(γ_i) per coordinate.
pub fn sample_susceptibility(gamma: &[f64], stream: StepStream) -> Result<SusceptibilityDraw> {
    for &g in gamma {
        if !(0.0..=1.0).contains(&g) {
            return Err(Error::ParamOutOfRange {
                name: "gamma",
                value: g,
                expected: "in [0, 1]",
            });
        }
    }
    let lambda = gamma
        .iter()
        .enumerate()
        .map(|(i, &g)| {
            let mut rng = stream.row(Domain::Susceptibility, i as u64);
            u8::from(rng.next_f64() < g)
        })
        .collect();
    Ok(SusceptibilityDraw { lambda })
}

/// Draws C(t): each of the n rows independently selects its column from the
/// mutation distribution `q`.
pub fn sample_mutation(q: &StochasticVector, n: usize, stream: StepStream) -> SelectionMatrix {
    let select = (0..n)
        .map(|i| {
            let mut rng = stream.row(Domain::Mutation, i as u64);
            rng.next_categorical(q.entries())
        })
        .collect();
    SelectionMatrix {
        n: q.len(),
        select,
    }
}
