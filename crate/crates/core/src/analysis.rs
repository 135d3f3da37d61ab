//! Monte Carlo estimators, closed-form limit oracles, and finite-horizon
//! divergence diagnostics.
//!
//! Estimators split trials into fixed chunks distributed over a thread pool;
//! chunk results are merged in chunk order, so reports are bit-identical no
//! matter how the chunks were scheduled.

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::chain::{absolute_probability_sequence, ChainSource, Provenance};
use crate::dynamics::{
    run_base, run_fj, run_rank_one, run_time_reversed, GammaSchedule, RunOptions,
};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::sampling::sample_adaptation;
use crate::stochastic::{StochasticMatrix, StochasticVector};

/// Tolerance used when computing absolute-probability-sequence oracles.
pub const APS_ORACLE_TOL: f64 = 1e-12;

/// Residual and row-sum tolerance of the closed-form limit matrices.
pub const LIMIT_MATRIX_TOL: f64 = 1e-9;

const TRIAL_CHUNK: u64 = 256;

fn fold_trials<T, Make, Body, Merge>(trials: u64, make: Make, body: Body, merge: Merge) -> T
where
    T: Send,
    Make: Fn() -> T + Sync,
    Body: Fn(&mut T, u64) + Sync,
    Merge: Fn(&mut T, T),
{
    let n_chunks = trials.div_ceil(TRIAL_CHUNK);
    let parts: Vec<T> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * TRIAL_CHUNK;
            let hi = ((c + 1) * TRIAL_CHUNK).min(trials);
            let mut acc = make();
            for trial in lo..hi {
                body(&mut acc, trial);
            }
            acc
        })
        .collect();
    let mut out = make();
    for part in parts {
        merge(&mut out, part);
    }
    out
}

pub fn binomial_std_err(p: f64, n: u64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Point estimates of one estimator run: a probability vector or matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Estimate {
    Vector(Vec<f64>),
    Matrix(Vec<Vec<f64>>),
}

impl Estimate {
    pub fn flat(&self) -> Vec<f64> {
        match self {
            Estimate::Vector(v) => v.clone(),
            Estimate::Matrix(m) => m.concat(),
        }
    }

    fn rows(&self) -> Vec<Vec<f64>> {
        match self {
            Estimate::Vector(v) => vec![v.clone()],
            Estimate::Matrix(m) => m.clone(),
        }
    }
}

/// Reference values an estimate is compared against.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleValues {
    /// Where the reference comes from (e.g. "aps", "fj-limit").
    pub label: String,
    pub values: Estimate,
}

/// Aggregated result of a trial ensemble, with binomial standard errors and
/// an optional closed-form oracle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub estimator: String,
    pub trials: u64,
    /// Trials that could not contribute fully (never agreed / unabsorbed).
    pub excluded_trials: u64,
    pub master_seed: u64,
    pub estimate: Estimate,
    pub std_err: Estimate,
    pub oracle: Option<OracleValues>,
    pub max_abs_deviation: Option<f64>,
}

impl EnsembleReport {
    fn finish(mut self) -> Self {
        self.max_abs_deviation = self.recompute_max_abs_deviation();
        self
    }

    pub fn recompute_max_abs_deviation(&self) -> Option<f64> {
        let oracle = self.oracle.as_ref()?;
        let est = self.estimate.flat();
        let orac = oracle.values.flat();
        debug_assert_eq!(est.len(), orac.len());
        est.iter()
            .zip(&orac)
            .map(|(a, b)| (a - b).abs())
            .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |m| m.max(d))))
    }

    /// True when every coordinate sits within `k` standard errors of the
    /// oracle. Reports without an oracle never pass.
    pub fn within_oracle(&self, k: f64) -> bool {
        let Some(oracle) = self.oracle.as_ref() else {
            return false;
        };
        let est = self.estimate.flat();
        let se = self.std_err.flat();
        let orac = oracle.values.flat();
        est.iter()
            .zip(&se)
            .zip(&orac)
            .all(|((e, s), o)| (e - o).abs() <= k * s)
    }

    pub fn max_std_err(&self) -> f64 {
        self.std_err.flat().into_iter().fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Flattens the report row-major with header `i,j,estimate,std_err,oracle`;
    /// a vector estimate is written as a single row (i = 0).
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "i,j,estimate,std_err,oracle")?;
        let rows = self.estimate.rows();
        let ses = self.std_err.rows();
        let oracle_rows = self.oracle.as_ref().map(|o| o.values.rows());
        for (i, row) in rows.iter().enumerate() {
            for (j, &e) in row.iter().enumerate() {
                let se = ses[i][j];
                match &oracle_rows {
                    Some(o) => writeln!(w, "{i},{j},{e},{se},{}", o[i][j])?,
                    None => writeln!(w, "{i},{j},{e},{se},")?,
                }
            }
        }
        Ok(())
    }
}

/// True when some coordinate of the two estimates differs by more than
/// `k`·(combined standard error); the disagreement test for
/// expected-negative checks.
pub fn estimates_differ_beyond(a: &EnsembleReport, b: &EnsembleReport, k: f64) -> bool {
    let (ea, eb) = (a.estimate.flat(), b.estimate.flat());
    let (sa, sb) = (a.std_err.flat(), b.std_err.flat());
    ea.iter()
        .zip(&eb)
        .zip(sa.iter().zip(&sb))
        .any(|((x, y), (s, t))| (x - y).abs() > k * (s * s + t * t).sqrt())
}

fn check_distinct(values: &[f64], name: &'static str) -> Result<()> {
    for (i, a) in values.iter().enumerate() {
        for b in &values[i + 1..] {
            if a == b {
                return Err(Error::ParamOutOfRange {
                    name,
                    value: *a,
                    expected: "pairwise distinct values",
                });
            }
        }
    }
    Ok(())
}

/// Estimates the distribution of the agreed value's origin over `trials`
/// seeded runs of the base dynamics, with the absolute probability sequence
/// ψ(t0) as the oracle.
pub fn agreement_distribution(
    chain: &ChainSource,
    x0: &[f64],
    t0: usize,
    trials: u64,
    master_seed: u64,
) -> Result<EnsembleReport> {
    check_distinct(x0, "x0")?;
    let n = chain.n();
    let horizon = chain.horizon();
    let aps = absolute_probability_sequence(chain, t0, APS_ORACLE_TOL, horizon)?;
    let psi = aps.at(t0).expect("t0 anchors the sequence").clone();

    struct Acc {
        counts: Vec<u64>,
        excluded: u64,
    }
    let opts = RunOptions {
        record_cap: 0,
        stop_at_agreement: true,
        track_absorption: false,
    };
    let acc = fold_trials(
        trials,
        || Acc {
            counts: vec![0; n],
            excluded: 0,
        },
        |acc, trial| {
            let traj = run_base(chain, x0, t0, horizon, RngStream::new(master_seed, trial), opts)
                .expect("validated arguments");
            if traj.agreement_time.is_some() {
                acc.counts[traj.terminal[0].origin] += 1;
            } else {
                acc.excluded += 1;
            }
        },
        |out, part| {
            for (a, b) in out.counts.iter_mut().zip(part.counts) {
                *a += b;
            }
            out.excluded += part.excluded;
        },
    );

    let included = trials - acc.excluded;
    if included == 0 {
        return Err(Error::NonAgreeingTrial {
            failed: acc.excluded,
            total: trials,
        });
    }
    let estimate: Vec<f64> = acc
        .counts
        .iter()
        .map(|&c| c as f64 / included as f64)
        .collect();
    let std_err = estimate
        .iter()
        .map(|&p| binomial_std_err(p, included))
        .collect();
    Ok(EnsembleReport {
        estimator: "agreement-distribution".into(),
        trials,
        excluded_trials: acc.excluded,
        master_seed,
        estimate: Estimate::Vector(estimate),
        std_err: Estimate::Vector(std_err),
        oracle: Some(OracleValues {
            label: "aps".into(),
            values: Estimate::Vector(psi.entries().to_vec()),
        }),
        max_abs_deviation: None,
    }
    .finish())
}

fn check_gamma_below_one(gamma: &[f64]) -> Result<()> {
    for &g in gamma {
        if !(0.0..1.0).contains(&g) {
            return Err(Error::ParamOutOfRange {
                name: "gamma",
                value: g,
                expected: "in [0, 1)",
            });
        }
    }
    Ok(())
}

/// The Friedkin-Johnsen opinion-limit matrix V = (I − ΓQ)⁻¹(I − Γ), by
/// direct linear solve. Row sums and the defining residual are asserted to
/// within [`LIMIT_MATRIX_TOL`].
pub fn fj_limit_matrix(q: &StochasticMatrix, gamma: &[f64]) -> Result<Vec<Vec<f64>>> {
    let n = q.n();
    if gamma.len() != n {
        return Err(Error::DimensionError {
            expected: n,
            found: gamma.len(),
        });
    }
    check_gamma_below_one(gamma)?;
    let a = DMatrix::from_fn(n, n, |i, j| {
        let delta = if i == j { 1.0 } else { 0.0 };
        delta - gamma[i] * q.get(i, j)
    });
    let b = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 - gamma[i] } else { 0.0 });
    let v = a.clone().lu().solve(&b).ok_or(Error::SingularSystem)?;

    let residual = (&a * &v - &b).abs().max();
    assert!(
        residual < LIMIT_MATRIX_TOL,
        "limit-matrix residual {residual} out of tolerance"
    );
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| v[(i, j)]).collect())
        .collect();
    for row in &rows {
        let sum: f64 = row.iter().sum();
        assert!(
            (sum - 1.0).abs() < LIMIT_MATRIX_TOL,
            "limit-matrix row sum {sum} out of tolerance"
        );
    }
    Ok(rows)
}

/// Truncated Neumann series Σ_{k<K} (ΓQ)^k (I−Γ) 1 qᵀ, truncated where
/// γ_maxᴷ < `tail_tol`; the independent route against the closed form.
pub fn rank_one_limit_neumann(
    q: &StochasticMatrix,
    gamma: &[f64],
    mutation: &StochasticVector,
    tail_tol: f64,
) -> Result<Vec<Vec<f64>>> {
    let n = q.n();
    if gamma.len() != n || mutation.len() != n {
        return Err(Error::DimensionError {
            expected: n,
            found: gamma.len().min(mutation.len()),
        });
    }
    check_gamma_below_one(gamma)?;
    let gamma_max = gamma.iter().cloned().fold(0.0f64, f64::max);
    let terms = if gamma_max == 0.0 {
        1
    } else {
        (tail_tol.ln() / gamma_max.ln()).ceil() as usize + 1
    };
    // column accumulator s = Σ (ΓQ)^k (I−Γ)1
    let mut term: Vec<f64> = gamma.iter().map(|&g| 1.0 - g).collect();
    let mut sum = term.clone();
    for _ in 1..terms {
        let next: Vec<f64> = (0..n)
            .map(|i| {
                gamma[i]
                    * q.row(i)
                        .iter()
                        .zip(&term)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
            })
            .collect();
        for (s, t) in sum.iter_mut().zip(&next) {
            *s += t;
        }
        term = next;
    }
    Ok(sum
        .iter()
        .map(|&w| mutation.entries().iter().map(|&qj| w * qj).collect())
        .collect())
}

/// The rank-one-mutation opinion-limit matrix V = (I − ΓQ)⁻¹(I − Γ) 1 qᵀ,
/// computed as (column) · (row) from the FJ limit matrix and cross-checked
/// against the truncated Neumann series.
pub fn rank_one_limit_matrix(
    q: &StochasticMatrix,
    gamma: &[f64],
    mutation: &StochasticVector,
) -> Result<Vec<Vec<f64>>> {
    let n = q.n();
    if mutation.len() != n {
        return Err(Error::DimensionError {
            expected: n,
            found: mutation.len(),
        });
    }
    let fj = fj_limit_matrix(q, gamma)?;
    let weights: Vec<f64> = fj.iter().map(|row| row.iter().sum()).collect();
    let v: Vec<Vec<f64>> = weights
        .iter()
        .map(|&w| mutation.entries().iter().map(|&qj| w * qj).collect())
        .collect();

    let series = rank_one_limit_neumann(q, gamma, mutation, 1e-12)?;
    let max_diff = v
        .iter()
        .flatten()
        .zip(series.iter().flatten())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    assert!(
        max_diff < LIMIT_MATRIX_TOL,
        "closed form and Neumann series disagree by {max_diff}"
    );
    for row in &v {
        let sum: f64 = row.iter().sum();
        assert!((sum - 1.0).abs() < LIMIT_MATRIX_TOL);
    }
    Ok(v)
}

/// Which prejudice mechanism an opinion ensemble runs.
#[derive(Debug, Clone)]
pub enum OpinionVariant {
    /// Fixed prejudice u_i per agent.
    FixedPrejudice,
    /// Rank-one mutation: resets draw a prejudice from this distribution.
    RankOneMutation(StochasticVector),
}

/// Estimates Pr(agent i holds prejudice u_j at `t_probe`) for the i.i.d.
/// dynamics with static `q_static` and `gamma`, against the matching
/// closed-form limit matrix.
///
/// Rows sum to at most 1; the missing mass is the not-yet-absorbed fraction
/// (reported through `excluded_trials`, the number of trials with any
/// unabsorbed agent), never renormalized away.
#[allow(clippy::too_many_arguments)]
pub fn fj_opinion_distribution(
    q_static: &StochasticMatrix,
    gamma: &[f64],
    u: &[f64],
    x0: &[f64],
    t_probe: usize,
    trials: u64,
    master_seed: u64,
    variant: OpinionVariant,
) -> Result<EnsembleReport> {
    let n = q_static.n();
    check_distinct(u, "u")?;
    for a in x0 {
        if u.iter().any(|b| a == b) {
            return Err(Error::OverlapError);
        }
    }
    if t_probe == 0 {
        return Err(Error::ParamOutOfRange {
            name: "t_probe",
            value: 0.0,
            expected: ">= 1",
        });
    }
    let chain = ChainSource::constant(
        q_static.clone(),
        t_probe,
        Provenance::ClosedForm {
            descriptor: "iid-static".into(),
        },
    );
    let opts = RunOptions {
        record_cap: 0,
        stop_at_agreement: false,
        track_absorption: true,
    };
    let schedule = GammaSchedule::Constant(gamma.to_vec());

    struct Acc {
        counts: Vec<u64>,
        excluded: u64,
    }
    let acc = fold_trials(
        trials,
        || Acc {
            counts: vec![0; n * n],
            excluded: 0,
        },
        |acc, trial| {
            let stream = RngStream::new(master_seed, trial);
            let traj = match &variant {
                OpinionVariant::FixedPrejudice => {
                    run_fj(&chain, &schedule, u, x0, 0, t_probe, stream, opts)
                }
                OpinionVariant::RankOneMutation(q_mut) => {
                    run_rank_one(&chain, gamma, q_mut, u, x0, 0, t_probe, stream, opts)
                }
            }
            .expect("validated arguments");
            let mut any_unabsorbed = false;
            for (i, s) in traj.terminal.iter().enumerate() {
                if s.origin >= n {
                    acc.counts[i * n + (s.origin - n)] += 1;
                } else {
                    any_unabsorbed = true;
                }
            }
            if any_unabsorbed {
                acc.excluded += 1;
            }
        },
        |out, part| {
            for (a, b) in out.counts.iter_mut().zip(part.counts) {
                *a += b;
            }
            out.excluded += part.excluded;
        },
    );

    let estimate: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| acc.counts[i * n + j] as f64 / trials as f64)
                .collect()
        })
        .collect();
    let std_err = estimate
        .iter()
        .map(|row| row.iter().map(|&p| binomial_std_err(p, trials)).collect())
        .collect();
    let (label, oracle_values) = match &variant {
        OpinionVariant::FixedPrejudice => ("fj-limit", fj_limit_matrix(q_static, gamma)?),
        OpinionVariant::RankOneMutation(q_mut) => (
            "rank-one-limit",
            rank_one_limit_matrix(q_static, gamma, q_mut)?,
        ),
    };
    Ok(EnsembleReport {
        estimator: "opinion-distribution".into(),
        trials,
        excluded_trials: acc.excluded,
        master_seed,
        estimate: Estimate::Matrix(estimate),
        std_err: Estimate::Matrix(std_err),
        oracle: Some(OracleValues {
            label: label.into(),
            values: Estimate::Matrix(oracle_values),
        }),
        max_abs_deviation: None,
    }
    .finish())
}

/// Estimates the distribution of the time-reversed walk's position at
/// `t_probe`, started at `t_inf` from `p_inf`. The oracle is ψ(t_probe) when
/// the chain admits one within the horizon, absent otherwise.
pub fn time_reversed_distribution(
    chain: &ChainSource,
    t_probe: usize,
    p_inf: &StochasticVector,
    t_inf: usize,
    trials: u64,
    master_seed: u64,
) -> Result<EnsembleReport> {
    if t_probe > t_inf {
        return Err(Error::ParamOutOfRange {
            name: "t_probe",
            value: t_probe as f64,
            expected: "t_probe <= t_inf",
        });
    }
    if t_inf > chain.horizon() {
        return Err(Error::OutOfHorizon {
            t: t_inf,
            horizon: chain.horizon(),
        });
    }
    let n = chain.n();
    let counts = fold_trials(
        trials,
        || vec![0u64; n],
        |acc, trial| {
            let walk = run_time_reversed(chain, t_inf, p_inf, RngStream::new(master_seed, trial))
                .expect("validated arguments");
            acc[walk.at(t_probe)] += 1;
        },
        |out, part| {
            for (a, b) in out.iter_mut().zip(part) {
                *a += b;
            }
        },
    );
    let estimate: Vec<f64> = counts.iter().map(|&c| c as f64 / trials as f64).collect();
    let std_err = estimate
        .iter()
        .map(|&p| binomial_std_err(p, trials))
        .collect();
    let oracle = absolute_probability_sequence(chain, t_probe, APS_ORACLE_TOL, chain.horizon())
        .ok()
        .map(|aps| OracleValues {
            label: "aps".into(),
            values: Estimate::Vector(aps.at(t_probe).expect("anchored").entries().to_vec()),
        });
    Ok(EnsembleReport {
        estimator: "time-reversed-distribution".into(),
        trials,
        excluded_trials: 0,
        master_seed,
        estimate: Estimate::Vector(estimate),
        std_err: Estimate::Vector(std_err),
        oracle,
        max_abs_deviation: None,
    }
    .finish())
}

/// Trial-averaged state versus the deterministic averaging dynamics
/// Q(t:t0) x0, per time step and agent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeanComparison {
    pub t0: usize,
    pub trials: u64,
    pub master_seed: u64,
    /// `empirical[k][i]`: trial mean of agent i's value at time t0 + k.
    pub empirical: Vec<Vec<f64>>,
    /// `oracle[k][i]`: (Q(t0+k : t0) x0)_i.
    pub oracle: Vec<Vec<f64>>,
    pub max_abs_deviation: f64,
}

impl MeanComparison {
    /// CSV with header `t,agent,empirical_mean,oracle`.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "t,agent,empirical_mean,oracle")?;
        for (k, (emp, ora)) in self.empirical.iter().zip(&self.oracle).enumerate() {
            for (i, (e, o)) in emp.iter().zip(ora).enumerate() {
                writeln!(w, "{},{},{},{}", self.t0 + k, i, e, o)?;
            }
        }
        Ok(())
    }
}

/// Averages the base-case dynamics over `trials` runs and pairs it with the
/// deterministic dynamics of the expected chain.
pub fn mean_trajectory(
    chain: &ChainSource,
    x0: &[f64],
    t0: usize,
    t_max: usize,
    trials: u64,
    master_seed: u64,
) -> Result<MeanComparison> {
    if t_max > chain.horizon() {
        return Err(Error::OutOfHorizon {
            t: t_max,
            horizon: chain.horizon(),
        });
    }
    if t0 >= t_max {
        return Err(Error::ParamOutOfRange {
            name: "t0",
            value: t0 as f64,
            expected: "t0 < t_max",
        });
    }
    let n = chain.n();
    if x0.len() != n {
        return Err(Error::DimensionError {
            expected: n,
            found: x0.len(),
        });
    }
    if trials == 0 {
        return Err(Error::ParamOutOfRange {
            name: "trials",
            value: 0.0,
            expected: ">= 1",
        });
    }
    let steps = t_max - t0;

    let sums = fold_trials(
        trials,
        || vec![0.0f64; (steps + 1) * n],
        |acc, trial| {
            let stream = RngStream::new(master_seed, trial);
            let mut x: Vec<f64> = x0.to_vec();
            for (i, &v) in x.iter().enumerate() {
                acc[i] += v;
            }
            for t in t0..t_max {
                let sel =
                    sample_adaptation(chain.matrix_at(t).expect("in horizon"), stream.at(t as u64));
                x = sel.select().iter().map(|&j| x[j]).collect();
                let base = (t - t0 + 1) * n;
                for (i, &v) in x.iter().enumerate() {
                    acc[base + i] += v;
                }
            }
        },
        |out, part| {
            for (a, b) in out.iter_mut().zip(part) {
                *a += b;
            }
        },
    );

    let empirical: Vec<Vec<f64>> = (0..=steps)
        .map(|k| (0..n).map(|i| sums[k * n + i] / trials as f64).collect())
        .collect();
    let mut oracle = Vec::with_capacity(steps + 1);
    let mut v = x0.to_vec();
    oracle.push(v.clone());
    for t in t0..t_max {
        v = chain.matrix_at(t)?.mul_vec(&v);
        oracle.push(v.clone());
    }
    let max_abs_deviation = empirical
        .iter()
        .flatten()
        .zip(oracle.iter().flatten())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    Ok(MeanComparison {
        t0,
        trials,
        master_seed,
        empirical,
        oracle,
        max_abs_deviation,
    })
}

/// Finite-horizon trend of a non-negative series' partial sums.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classification {
    DivergingTrend,
    ConvergingTrend,
    Inconclusive,
}

/// Partial sums of a non-negative summand sequence with a trend label. The
/// label is a finite-horizon heuristic, never a proof of (non-)summability.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DivergenceDiagnostic {
    pub partial_sums: Vec<f64>,
    pub classification: Classification,
}

/// Growth in the last decade below this is treated as vanished.
pub const CONVERGED_GROWTH_FLOOR: f64 = 1e-9;
/// Decade-growth ratios at or above this classify as diverging.
pub const DIVERGING_RATIO: f64 = 0.8;
/// Decade-growth ratios at or below this classify as converging.
pub const CONVERGING_RATIO: f64 = 0.4;

/// Classifies by the ratio of partial-sum growth over the last decade
/// (H/10, H] to the decade before it (H/100, H/10]: power-law summands t^−p
/// give a ratio near 10^(1−p), so summable tails land well below 1 and
/// non-summable ones at or above it.
fn classify(partial_sums: &[f64]) -> Classification {
    let h = partial_sums.len();
    if h < 100 {
        return Classification::Inconclusive;
    }
    let growth_last = partial_sums[h - 1] - partial_sums[h / 10 - 1];
    let growth_prev = partial_sums[h / 10 - 1] - partial_sums[h / 100 - 1];
    if growth_last < CONVERGED_GROWTH_FLOOR {
        return Classification::ConvergingTrend;
    }
    if growth_prev <= 0.0 {
        return Classification::Inconclusive;
    }
    let ratio = growth_last / growth_prev;
    if ratio >= DIVERGING_RATIO {
        Classification::DivergingTrend
    } else if ratio <= CONVERGING_RATIO {
        Classification::ConvergingTrend
    } else {
        Classification::Inconclusive
    }
}

fn diagnostic_from_summands(summands: impl Iterator<Item = f64>) -> DivergenceDiagnostic {
    let mut acc = 0.0;
    let partial_sums: Vec<f64> = summands
        .map(|s| {
            debug_assert!(s >= 0.0);
            acc += s;
            acc
        })
        .collect();
    let classification = classify(&partial_sums);
    DivergenceDiagnostic {
        partial_sums,
        classification,
    }
}

/// Both cross-block influence traces for a subset S.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DominanceDiagnostic {
    /// Partial sums of 1ᵀ Q_{S̄S}(t) 1: influence of S on the complement.
    pub on_complement: DivergenceDiagnostic,
    /// Partial sums of 1ᵀ Q_{SS̄}(t) 1: influence of the complement on S.
    pub from_complement: DivergenceDiagnostic,
}

impl DominanceDiagnostic {
    /// The trend signature of dominance in expectation: outgoing influence
    /// diverging, incoming influence converging.
    pub fn indicates_dominance(&self) -> bool {
        self.on_complement.classification == Classification::DivergingTrend
            && self.from_complement.classification == Classification::ConvergingTrend
    }
}

fn complement(n: usize, s: &[usize]) -> Vec<usize> {
    let mut in_s = vec![false; n];
    for &i in s {
        in_s[i] = true;
    }
    (0..n).filter(|&i| !in_s[i]).collect()
}

fn check_subset(n: usize, s: &[usize], proper: bool) -> Result<()> {
    if s.is_empty() {
        return Err(Error::BadSubset("subset is empty"));
    }
    let mut seen = vec![false; n];
    for &i in s {
        if i >= n {
            return Err(Error::BadSubset("index out of range"));
        }
        if seen[i] {
            return Err(Error::BadSubset("duplicate index"));
        }
        seen[i] = true;
    }
    if proper && s.len() == n {
        return Err(Error::BadSubset("subset must be proper"));
    }
    Ok(())
}

/// Partial-sum traces of the two cross-block masses for subset `s`.
pub fn dominance_diagnostic(
    chain: &ChainSource,
    s: &[usize],
    horizon: usize,
) -> Result<DominanceDiagnostic> {
    check_subset(chain.n(), s, true)?;
    if horizon > chain.horizon() {
        return Err(Error::OutOfHorizon {
            t: horizon,
            horizon: chain.horizon(),
        });
    }
    let comp = complement(chain.n(), s);
    let mut on_sums = Vec::with_capacity(horizon);
    let mut from_sums = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let q = chain.matrix_at(t)?;
        on_sums.push(q.block_mass(&comp, s));
        from_sums.push(q.block_mass(s, &comp));
    }
    Ok(DominanceDiagnostic {
        on_complement: diagnostic_from_summands(on_sums.into_iter()),
        from_complement: diagnostic_from_summands(from_sums.into_iter()),
    })
}

/// Partial sums of Π_{i∈S}(1 − γ_i(t)): the simultaneous-reset mass of S.
pub fn malleability_diagnostic(
    gamma: &GammaSchedule,
    s: &[usize],
    horizon: usize,
) -> Result<DivergenceDiagnostic> {
    check_subset(gamma.n(), s, false)?;
    let summands: Result<Vec<f64>> = (0..horizon)
        .map(|t| {
            let g = gamma.at(t)?;
            Ok(s.iter().map(|&i| 1.0 - g[i]).product())
        })
        .collect();
    Ok(diagnostic_from_summands(summands?.into_iter()))
}

/// Result of the chi-square goodness-of-fit of agreement times against the
/// geometric law.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeometricFit {
    pub theta: f64,
    pub samples: u64,
    /// Interior bins 1..=bins, plus one tail bin.
    pub bins: usize,
    pub statistic: f64,
    pub degrees_of_freedom: usize,
    pub alpha: f64,
    pub critical_value: f64,
    pub passes: bool,
}

/// Chi-square fit of positive integer samples to Geometric(theta) (support
/// 1, 2, …) at significance level `alpha`. Bins are 1..=K plus a tail, with
/// K chosen so every expected count stays at least 5.
pub fn geometric_chi_square_fit(samples: &[u64], theta: f64, alpha: f64) -> Result<GeometricFit> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::ParamOutOfRange {
            name: "theta",
            value: theta,
            expected: "in (0, 1)",
        });
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::ParamOutOfRange {
            name: "alpha",
            value: alpha,
            expected: "in (0, 1)",
        });
    }
    if samples.is_empty() || samples.contains(&0) {
        return Err(Error::ParamOutOfRange {
            name: "samples",
            value: 0.0,
            expected: "nonempty, all >= 1",
        });
    }
    let n = samples.len() as f64;
    // largest K with expected tail n(1-θ)^K >= 5 and last interior bin
    // nθ(1-θ)^(K-1) >= 5
    let mut k = 1usize;
    loop {
        let next = k + 1;
        let tail = n * (1.0 - theta).powi(next as i32);
        let last_bin = n * theta * (1.0 - theta).powi(next as i32 - 1);
        if tail >= 5.0 && last_bin >= 5.0 && next < 64 {
            k = next;
        } else {
            break;
        }
    }
    let mut observed = vec![0u64; k + 1];
    for &s in samples {
        let idx = (s as usize - 1).min(k);
        observed[idx] += 1;
    }
    let mut statistic = 0.0;
    for (idx, &obs) in observed.iter().enumerate() {
        let expected = if idx < k {
            n * theta * (1.0 - theta).powi(idx as i32)
        } else {
            n * (1.0 - theta).powi(k as i32)
        };
        let diff = obs as f64 - expected;
        statistic += diff * diff / expected;
    }
    let degrees_of_freedom = k;
    let critical_value = ChiSquared::new(degrees_of_freedom as f64)
        .expect("positive dof")
        .inverse_cdf(1.0 - alpha);
    Ok(GeometricFit {
        theta,
        samples: samples.len() as u64,
        bins: k,
        statistic,
        degrees_of_freedom,
        alpha,
        critical_value,
        passes: statistic <= critical_value,
    })
}

/// Agreement-time samples (T − t0) from `trials` seeded base-case runs; the
/// second element counts trials that never agreed (dropped from the sample).
pub fn agreement_time_samples(
    chain: &ChainSource,
    x0: &[f64],
    t0: usize,
    trials: u64,
    master_seed: u64,
) -> Result<(Vec<u64>, u64)> {
    check_distinct(x0, "x0")?;
    let horizon = chain.horizon();
    let opts = RunOptions {
        record_cap: 0,
        stop_at_agreement: true,
        track_absorption: false,
    };
    struct Acc {
        times: Vec<u64>,
        failed: u64,
    }
    let acc = fold_trials(
        trials,
        || Acc {
            times: Vec::new(),
            failed: 0,
        },
        |acc, trial| {
            let traj = run_base(chain, x0, t0, horizon, RngStream::new(master_seed, trial), opts)
                .expect("validated arguments");
            match traj.agreement_time {
                Some(t) => acc.times.push((t - t0) as u64),
                None => acc.failed += 1,
            }
        },
        |out, mut part| {
            out.times.append(&mut part.times);
            out.failed += part.failed;
        },
    );
    Ok((acc.times, acc.failed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::{
        random_irreducible_chain, random_stochastic_matrix, static_two_state_chain,
    };
    use crate::rng::CounterRng;
    use crate::stochastic::make_stochastic;
    use approx::assert_abs_diff_eq;

    #[test]
    fn agreement_distribution_rank_one_chain_matches_q() {
        let q = StochasticVector::new(vec![0.3, 0.7]).unwrap();
        let chain = ChainSource::constant(
            StochasticMatrix::rank_one(&q),
            500,
            Provenance::ClosedForm {
                descriptor: "rank-one".into(),
            },
        );
        let report = agreement_distribution(&chain, &[0.0, 1.0], 0, 20_000, 5).unwrap();
        assert_eq!(report.excluded_trials, 0);
        assert!(report.within_oracle(3.0), "report {:?}", report.estimate);
        let est = report.estimate.flat();
        assert_abs_diff_eq!(est[0] + est[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn agreement_distribution_static_chain_matches_stationary() {
        let chain = static_two_state_chain(0.9, 0.8, 1000).unwrap();
        let report = agreement_distribution(&chain, &[0.0, 1.0], 0, 20_000, 9).unwrap();
        let oracle = report.oracle.as_ref().unwrap().values.flat();
        assert_abs_diff_eq!(oracle[0], 2.0 / 3.0, epsilon = 1e-9);
        assert!(report.within_oracle(3.0));
    }

    #[test]
    fn agreement_distribution_requires_distinct_values() {
        let chain = static_two_state_chain(0.5, 0.5, 100).unwrap();
        assert!(matches!(
            agreement_distribution(&chain, &[1.0, 1.0], 0, 10, 1),
            Err(Error::ParamOutOfRange { name: "x0", .. })
        ));
    }

    #[test]
    fn agreement_distribution_rejects_non_ergodic_chains() {
        let chain = ChainSource::constant(
            StochasticMatrix::identity(2),
            200,
            Provenance::ClosedForm {
                descriptor: "identity".into(),
            },
        );
        assert!(matches!(
            agreement_distribution(&chain, &[0.0, 1.0], 0, 10, 1),
            Err(Error::NotErgodicWithinHorizon { .. })
        ));
    }

    #[test]
    fn fj_limit_identity_when_gamma_zero() {
        let q = make_stochastic(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let v = fj_limit_matrix(&q, &[0.0, 0.0]).unwrap();
        assert_eq!(v, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    }

    #[test]
    fn fj_limit_hand_inverted_2x2() {
        // (I - 0.5 Q)⁻¹ (0.5 I) with uniform Q: hand inversion gives
        // [[0.75, 0.25], [0.25, 0.75]]
        let q = make_stochastic(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let v = fj_limit_matrix(&q, &[0.5, 0.5]).unwrap();
        for (row, expected) in v.iter().zip([[0.75, 0.25], [0.25, 0.75]]) {
            for (a, b) in row.iter().zip(expected) {
                assert_abs_diff_eq!(a, &b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn fj_limit_rows_sum_to_one_on_random_instances() {
        for seed in 0..20 {
            let mut rng = CounterRng::from_key(seed);
            let n = 2 + (rng.next_u64() % 4) as usize;
            let q = random_stochastic_matrix(n, &mut rng);
            let gamma: Vec<f64> = (0..n).map(|_| rng.next_f64() * 0.95).collect();
            let v = fj_limit_matrix(&q, &gamma).unwrap();
            for row in &v {
                assert_abs_diff_eq!(row.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn fj_limit_rejects_gamma_one() {
        let q = make_stochastic(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        assert!(fj_limit_matrix(&q, &[1.0, 0.5]).is_err());
    }

    #[test]
    fn rank_one_limit_is_rank_one_in_q() {
        let mutation = StochasticVector::new(vec![0.2, 0.5, 0.3]).unwrap();
        let mut rng = CounterRng::from_key(77);
        let q = random_stochastic_matrix(3, &mut rng);
        // identical susceptibility: V collapses to 1qᵀ
        let v = rank_one_limit_matrix(&q, &[0.6, 0.6, 0.6], &mutation).unwrap();
        for row in &v {
            for (a, b) in row.iter().zip(mutation.entries()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-9);
            }
        }
        // gamma = 0 reduces immediately
        let v = rank_one_limit_matrix(&q, &[0.0, 0.0, 0.0], &mutation).unwrap();
        for row in &v {
            for (a, b) in row.iter().zip(mutation.entries()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn rank_one_closed_form_matches_neumann_series() {
        let mutation = StochasticVector::new(vec![0.1, 0.6, 0.3]).unwrap();
        for seed in 0..20 {
            let mut rng = CounterRng::from_key(seed ^ 0xabcd);
            let q = random_stochastic_matrix(3, &mut rng);
            let gamma: Vec<f64> = (0..3).map(|_| rng.next_f64() * 0.9).collect();
            let closed = rank_one_limit_matrix(&q, &gamma, &mutation).unwrap();
            let series = rank_one_limit_neumann(&q, &gamma, &mutation, 1e-12).unwrap();
            for (a, b) in closed.iter().flatten().zip(series.iter().flatten()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn opinion_distribution_gamma_zero_is_identity_matrix() {
        let q = make_stochastic(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let report = fj_opinion_distribution(
            &q,
            &[0.0, 0.0],
            &[21.0, 22.0],
            &[1.0, 2.0],
            5,
            2_000,
            3,
            OpinionVariant::FixedPrejudice,
        )
        .unwrap();
        assert_eq!(
            report.estimate,
            Estimate::Matrix(vec![vec![1.0, 0.0], vec![0.0, 1.0]])
        );
        assert_eq!(report.excluded_trials, 0);
    }

    #[test]
    fn opinion_distribution_rejects_overlap() {
        let q = make_stochastic(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        assert!(matches!(
            fj_opinion_distribution(
                &q,
                &[0.5, 0.5],
                &[21.0, 22.0],
                &[21.0, 2.0],
                5,
                10,
                3,
                OpinionVariant::FixedPrejudice,
            ),
            Err(Error::OverlapError)
        ));
    }

    #[test]
    fn opinion_distribution_matches_fj_limit() {
        let q = make_stochastic(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let report = fj_opinion_distribution(
            &q,
            &[0.5, 0.5],
            &[21.0, 22.0],
            &[1.0, 2.0],
            100,
            20_000,
            11,
            OpinionVariant::FixedPrejudice,
        )
        .unwrap();
        assert!(report.within_oracle(3.0), "estimate {:?}", report.estimate);
    }

    #[test]
    fn time_reversed_static_chain_matches_stationary() {
        let chain = static_two_state_chain(0.9, 0.8, 400).unwrap();
        let report = time_reversed_distribution(
            &chain,
            50,
            &StochasticVector::uniform(2),
            400,
            20_000,
            13,
        )
        .unwrap();
        assert!(report.oracle.is_some());
        assert!(report.within_oracle(3.0));
    }

    #[test]
    fn time_reversed_is_invariant_to_p_inf_on_ergodic_chains() {
        let chain = random_irreducible_chain(5, 300, 3).unwrap();
        let uniform =
            time_reversed_distribution(&chain, 40, &StochasticVector::uniform(5), 300, 20_000, 17)
                .unwrap();
        let point =
            time_reversed_distribution(&chain, 40, &StochasticVector::basis(5, 0), 300, 20_000, 19)
                .unwrap();
        assert!(uniform.within_oracle(3.0));
        assert!(point.within_oracle(3.0));
        assert!(!estimates_differ_beyond(&uniform, &point, 3.0));
    }

    #[test]
    fn mean_trajectory_identity_chain_is_exact() {
        let chain = ChainSource::constant(
            StochasticMatrix::identity(3),
            50,
            Provenance::ClosedForm {
                descriptor: "identity".into(),
            },
        );
        let cmp = mean_trajectory(&chain, &[1.0, 2.0, 3.0], 0, 50, 100, 7).unwrap();
        assert_eq!(cmp.max_abs_deviation, 0.0);
    }

    #[test]
    fn mean_trajectory_tracks_backward_product() {
        let chain = random_irreducible_chain(4, 60, 23).unwrap();
        let cmp = mean_trajectory(&chain, &[1.0, 2.0, 3.0, 4.0], 0, 60, 20_000, 29).unwrap();
        // CLT bound: 3 * range / sqrt(N) with margin
        assert!(cmp.max_abs_deviation < 0.15, "dev {}", cmp.max_abs_deviation);
    }

    #[test]
    fn dominance_constant_cross_mass_diverges() {
        let m = make_stochastic(&[
            vec![0.8, 0.1, 0.1],
            vec![0.1, 0.8, 0.1],
            vec![0.1, 0.1, 0.8],
        ])
        .unwrap();
        let chain = ChainSource::constant(
            m,
            1000,
            Provenance::ClosedForm {
                descriptor: "mixing".into(),
            },
        );
        let diag = dominance_diagnostic(&chain, &[0], 1000).unwrap();
        assert_eq!(
            diag.on_complement.classification,
            Classification::DivergingTrend
        );
        assert_eq!(
            diag.from_complement.classification,
            Classification::DivergingTrend
        );
        assert!(!diag.indicates_dominance());
    }

    #[test]
    fn dominance_block_chain_cross_sums_converge() {
        let chain = crate::generators::block_nonergodic_chain(10, 1000, 11).unwrap();
        let first_block: Vec<usize> = (0..5).collect();
        let diag = dominance_diagnostic(&chain, &first_block, 1000).unwrap();
        assert_eq!(
            diag.on_complement.classification,
            Classification::ConvergingTrend
        );
        assert_eq!(
            diag.from_complement.classification,
            Classification::ConvergingTrend
        );
    }

    #[test]
    fn dominance_rejects_improper_subsets() {
        let chain = static_two_state_chain(0.5, 0.5, 100).unwrap();
        assert!(matches!(
            dominance_diagnostic(&chain, &[0, 1], 100),
            Err(Error::BadSubset(_))
        ));
        assert!(dominance_diagnostic(&chain, &[], 100).is_err());
    }

    #[test]
    fn malleability_constant_gamma_diverges() {
        let gamma = GammaSchedule::Constant(vec![0.9; 10]);
        let diag = malleability_diagnostic(&gamma, &(0..10).collect::<Vec<_>>(), 1000).unwrap();
        assert_eq!(diag.classification, Classification::DivergingTrend);
    }

    #[test]
    fn malleability_fast_growing_gamma_converges() {
        // gamma_i(t) = 1 - 2^-t: summand 2^(-t|S|), geometric
        let per_step: Vec<Vec<f64>> = (0..1000)
            .map(|t| vec![1.0 - 0.5f64.powi(t.min(60)); 3])
            .collect();
        let gamma = GammaSchedule::PerStep(per_step);
        let diag = malleability_diagnostic(&gamma, &[0, 1, 2], 1000).unwrap();
        assert_eq!(diag.classification, Classification::ConvergingTrend);
    }

    #[test]
    fn malleability_gamma_one_converges() {
        let gamma = GammaSchedule::Constant(vec![1.0, 0.5]);
        let diag = malleability_diagnostic(&gamma, &[0, 1], 500).unwrap();
        assert_eq!(diag.classification, Classification::ConvergingTrend);
        assert!(diag.partial_sums.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn partial_sums_are_non_decreasing() {
        let gamma = GammaSchedule::Constant(vec![0.25, 0.75]);
        let diag = malleability_diagnostic(&gamma, &[0, 1], 300).unwrap();
        for w in diag.partial_sums.windows(2) {
            assert!(w[1] >= w[0]);
        }
    }

    #[test]
    fn geometric_fit_accepts_true_geometric_samples() {
        let mut rng = CounterRng::from_key(99);
        let samples: Vec<u64> = (0..100_000)
            .map(|_| {
                let mut k = 1;
                while rng.next_f64() >= 0.5 {
                    k += 1;
                }
                k
            })
            .collect();
        let fit = geometric_chi_square_fit(&samples, 0.5, 0.01).unwrap();
        assert!(
            fit.passes,
            "statistic {} vs critical {}",
            fit.statistic, fit.critical_value
        );
    }

    #[test]
    fn geometric_fit_rejects_constant_samples() {
        let samples = vec![2u64; 10_000];
        let fit = geometric_chi_square_fit(&samples, 0.5, 0.01).unwrap();
        assert!(!fit.passes);
    }

    #[test]
    fn report_deviation_recompute_matches_stored() {
        let chain = static_two_state_chain(0.9, 0.8, 500).unwrap();
        let report = agreement_distribution(&chain, &[0.0, 1.0], 0, 5_000, 31).unwrap();
        assert_eq!(report.max_abs_deviation, report.recompute_max_abs_deviation());
    }

    #[test]
    fn report_csv_flattens_matrices_row_major() {
        let report = EnsembleReport {
            estimator: "test".into(),
            trials: 10,
            excluded_trials: 0,
            master_seed: 1,
            estimate: Estimate::Matrix(vec![vec![0.25, 0.75], vec![0.5, 0.5]]),
            std_err: Estimate::Matrix(vec![vec![0.01, 0.01], vec![0.02, 0.02]]),
            oracle: Some(OracleValues {
                label: "x".into(),
                values: Estimate::Matrix(vec![vec![0.2, 0.8], vec![0.5, 0.5]]),
            }),
            max_abs_deviation: Some(0.05),
        };
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "i,j,estimate,std_err,oracle");
        assert_eq!(lines[1], "0,0,0.25,0.01,0.2");
        assert_eq!(lines[4], "1,1,0.5,0.02,0.5");
    }

    #[test]
    fn report_json_round_trips() {
        let chain = static_two_state_chain(0.6, 0.7, 500).unwrap();
        let report = agreement_distribution(&chain, &[0.0, 1.0], 0, 1_000, 37).unwrap();
        let json = report.to_json().unwrap();
        let back: EnsembleReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.estimate, report.estimate);
        assert_eq!(back.max_abs_deviation, report.max_abs_deviation);
    }
}
