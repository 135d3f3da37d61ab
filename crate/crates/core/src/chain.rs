//! Finite-horizon chains of stochastic matrices, backward products, the
//! rank-one ergodicity diagnostic, and absolute probability sequences.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stochastic::{StochasticMatrix, StochasticVector};

/// Where a chain came from; serialized into reports so runs are replayable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Provenance {
    /// Built from an explicit formula (static chains, constant matrices).
    ClosedForm { descriptor: String },
    /// Produced by a seeded generator.
    GeneratedWithSeed { descriptor: String, seed: u64 },
    /// Deserialized from a materialized chain file.
    LoadedFromFile { path: String },
}

enum Storage {
    /// One matrix repeated at every time step.
    Constant(StochasticMatrix),
    Explicit(Vec<StochasticMatrix>),
}

/// Deterministic sequence {Q(t)} for t in 0..horizon, all of one dimension.
pub struct ChainSource {
    n: usize,
    horizon: usize,
    provenance: Provenance,
    storage: Storage,
}

impl ChainSource {
    /// A chain whose every matrix equals `q`.
    pub fn constant(q: StochasticMatrix, horizon: usize, provenance: Provenance) -> Self {
        Self {
            n: q.n(),
            horizon,
            provenance,
            storage: Storage::Constant(q),
        }
    }

    pub fn from_matrices(matrices: Vec<StochasticMatrix>, provenance: Provenance) -> Result<Self> {
        let n = match matrices.first() {
            Some(m) => m.n(),
            None => {
                return Err(Error::DimensionError {
                    expected: 1,
                    found: 0,
                })
            }
        };
        for m in &matrices {
            if m.n() != n {
                return Err(Error::DimensionError {
                    expected: n,
                    found: m.n(),
                });
            }
        }
        Ok(Self {
            n,
            horizon: matrices.len(),
            provenance,
            storage: Storage::Explicit(matrices),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// Q(t); total on t in 0..horizon.
    pub fn matrix_at(&self, t: usize) -> Result<&StochasticMatrix> {
        if t >= self.horizon {
            return Err(Error::OutOfHorizon {
                t,
                horizon: self.horizon,
            });
        }
        Ok(match &self.storage {
            Storage::Constant(q) => q,
            Storage::Explicit(ms) => &ms[t],
        })
    }

    /// Materialized matrices, for serialization.
    pub fn materialize(&self) -> Vec<StochasticMatrix> {
        match &self.storage {
            Storage::Constant(q) => vec![q.clone(); self.horizon],
            Storage::Explicit(ms) => ms.clone(),
        }
    }
}

/// Backward product Q(t2:t1) = Q(t2−1)Q(t2−2)···Q(t1), with Q(t:t) = I.
pub fn backward_product(chain: &ChainSource, t1: usize, t2: usize) -> Result<StochasticMatrix> {
    if t1 > t2 {
        return Err(Error::ParamOutOfRange {
            name: "t1",
            value: t1 as f64,
            expected: "t1 <= t2",
        });
    }
    if t2 > chain.horizon() {
        return Err(Error::OutOfHorizon {
            t: t2,
            horizon: chain.horizon(),
        });
    }
    let mut acc = StochasticMatrix::identity(chain.n());
    for s in t1..t2 {
        acc = chain.matrix_at(s)?.matmul(&acc);
    }
    Ok(acc)
}

/// Outcome of scanning Q(t:t0) for convergence to a rank-one matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    /// Column spread of the product dropped below the tolerance.
    RankOneWithinTol,
    /// The spread plateaued above the tolerance; more horizon would not help.
    NotRankOne,
    /// The spread was still contracting when the scan ran out of horizon.
    HorizonExhausted,
}

/// Evidence from one forward scan of backward products.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErgodicityDiagnostic {
    pub t0: usize,
    /// End time of the last product formed: the final product is Q(t_used:t0).
    pub t_used: usize,
    /// Column spread of the final product.
    pub spread: f64,
    /// Column means of the final product, renormalized to sum 1.
    pub psi_estimate: StochasticVector,
    pub verdict: Verdict,
}

impl ErgodicityDiagnostic {
    pub fn is_rank_one(&self) -> bool {
        self.verdict == Verdict::RankOneWithinTol
    }
}

/// Spread ratio above which a finished scan counts as plateaued rather than
/// still contracting.
pub const PLATEAU_RATIO: f64 = 0.99;

/// Forms Q(t:t0) incrementally for t up to `t_max`, stopping early once the
/// column spread drops below `tol`.
///
/// A scan that ends above tolerance reports `NotRankOne` when the spread has
/// plateaued (final spread within [`PLATEAU_RATIO`] of its value at the scan
/// midpoint) and `HorizonExhausted` when it was still contracting.
pub fn ergodicity_diagnostic(
    chain: &ChainSource,
    t0: usize,
    tol: f64,
    t_max: usize,
) -> Result<ErgodicityDiagnostic> {
    if tol <= 0.0 {
        return Err(Error::ParamOutOfRange {
            name: "tol",
            value: tol,
            expected: "> 0",
        });
    }
    if t0 >= t_max {
        return Err(Error::ParamOutOfRange {
            name: "t0",
            value: t0 as f64,
            expected: "t0 < t_max",
        });
    }
    if t_max > chain.horizon() {
        return Err(Error::OutOfHorizon {
            t: t_max,
            horizon: chain.horizon(),
        });
    }

    let midpoint = t0 + (t_max - t0) / 2;
    let mut product = StochasticMatrix::identity(chain.n());
    let mut spread = product.column_spread();
    let mut spread_at_midpoint = spread;
    for s in t0..t_max {
        product = chain.matrix_at(s)?.matmul(&product);
        spread = product.column_spread();
        if spread < tol {
            return Ok(ErgodicityDiagnostic {
                t0,
                t_used: s + 1,
                spread,
                psi_estimate: product.column_means(),
                verdict: Verdict::RankOneWithinTol,
            });
        }
        if s + 1 == midpoint {
            spread_at_midpoint = spread;
        }
    }
    let verdict = if spread >= PLATEAU_RATIO * spread_at_midpoint {
        Verdict::NotRankOne
    } else {
        Verdict::HorizonExhausted
    };
    Ok(ErgodicityDiagnostic {
        t0,
        t_used: t_max,
        spread,
        psi_estimate: product.column_means(),
        verdict,
    })
}

/// Absolute probability sequence over a window [t0, anchor]: vectors with
/// ψᵀ(t+1) Q(t) = ψᵀ(t), anchored where the backward product first becomes
/// rank-one within tolerance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AbsoluteProbabilitySequence {
    pub t0: usize,
    /// `vectors[k]` is ψ(t0 + k); the last entry is the anchor ψ(anchor).
    pub vectors: Vec<StochasticVector>,
}

impl AbsoluteProbabilitySequence {
    pub fn anchor(&self) -> usize {
        self.t0 + self.vectors.len() - 1
    }

    /// ψ(t) for t in [t0, anchor].
    pub fn at(&self, t: usize) -> Option<&StochasticVector> {
        t.checked_sub(self.t0).and_then(|k| self.vectors.get(k))
    }
}

/// Computes the absolute probability sequence for an ergodic chain window.
///
/// ψ(anchor) is the diagnostic's rank-one row estimate; earlier vectors come
/// from the backward recursion ψᵀ(t) = ψᵀ(t+1) Q(t). For ergodic chains the
/// anchor error contracts backward through the products.
pub fn absolute_probability_sequence(
    chain: &ChainSource,
    t0: usize,
    tol: f64,
    t_max: usize,
) -> Result<AbsoluteProbabilitySequence> {
    let diag = ergodicity_diagnostic(chain, t0, tol, t_max)?;
    if !diag.is_rank_one() {
        return Err(Error::NotErgodicWithinHorizon {
            t0,
            t_max,
            spread: diag.spread,
        });
    }
    let anchor = diag.t_used;
    let mut vectors = vec![diag.psi_estimate];
    for t in (t0..anchor).rev() {
        let prev = vectors.last().expect("nonempty").entries();
        let next = chain.matrix_at(t)?.vec_mul(prev);
        vectors.push(StochasticVector::new(next)?);
    }
    vectors.reverse();
    Ok(AbsoluteProbabilitySequence { t0, vectors })
}
