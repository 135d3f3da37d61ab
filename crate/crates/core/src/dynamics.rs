//! The four update rules: base-case copying, the time-reversed walk, the
//! random Friedkin-Johnsen variant, and its rank-one mutation variant.
//!
//! States carry an origin tag (0..n for initial states, n..2n for
//! prejudices) alongside the value, and every update copies tags together
//! with values. Agreement and absorption are therefore exact set membership
//! checks; no arithmetic ever mixes values and no float tolerance is needed.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::chain::ChainSource;
use crate::error::{Error, Result};
use crate::rng::{Domain, RngStream};
use crate::sampling::{
    sample_adaptation, sample_mutation, sample_susceptibility, SelectionMatrix, SusceptibilityDraw,
};
use crate::stochastic::StochasticVector;

/// State of one agent: which initial value or prejudice it currently holds.
/// Origins 0..n denote x_i(t0); origins n..2n denote u_i.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaggedState {
    pub origin: usize,
    pub value: f64,
}

/// Tags initial values with origins 0..n.
pub fn tag_initial(x0: &[f64]) -> Vec<TaggedState> {
    x0.iter()
        .enumerate()
        .map(|(i, &value)| TaggedState { origin: i, value })
        .collect()
}

/// Tags prejudices with origins n..2n.
pub fn tag_prejudices(u: &[f64]) -> Vec<TaggedState> {
    let n = u.len();
    u.iter()
        .enumerate()
        .map(|(i, &value)| TaggedState {
            origin: n + i,
            value,
        })
        .collect()
}

fn values_all_equal(x: &[TaggedState]) -> bool {
    x.windows(2).all(|w| w[0].value == w[1].value)
}

fn all_origins_in_prejudice_range(x: &[TaggedState], n: usize) -> bool {
    x.iter().all(|s| s.origin >= n)
}

/// Recording and stopping knobs for the run_* drivers.
#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    /// Number of post-start snapshots kept in `states`; later steps update
    /// only the summary fields and the terminal state.
    pub record_cap: usize,
    /// Stop stepping once agreement is reached (base case only; the state is
    /// provably constant afterwards).
    pub stop_at_agreement: bool,
    /// Track prejudice-set absorption; requires initial values and
    /// prejudices to be disjoint.
    pub track_absorption: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            record_cap: 2000,
            stop_at_agreement: false,
            track_absorption: true,
        }
    }
}

/// One realized run: recorded snapshots plus summary times.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub t0: usize,
    /// `states[k]` is the state at time t0 + k, for k up to the record cap.
    pub states: Vec<Vec<TaggedState>>,
    /// First time at which all agents hold one value.
    pub agreement_time: Option<usize>,
    /// First time from which every origin lies in the prejudice range.
    pub absorption_time: Option<usize>,
    /// State at `t_end` (always present, even past the record cap).
    pub terminal: Vec<TaggedState>,
    /// Last time stepped to.
    pub t_end: usize,
}

impl Trajectory {
    pub fn terminal_origins(&self) -> Vec<usize> {
        self.terminal.iter().map(|s| s.origin).collect()
    }

    pub fn terminal_values(&self) -> Vec<f64> {
        self.terminal.iter().map(|s| s.value).collect()
    }

    /// CSV export of the recorded snapshots: `t,agent,origin,value`.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "t,agent,origin,value")?;
        for (k, state) in self.states.iter().enumerate() {
            for (agent, s) in state.iter().enumerate() {
                writeln!(w, "{},{},{},{}", self.t0 + k, agent, s.origin, s.value)?;
            }
        }
        Ok(())
    }
}

/// Per-trial summary for ensemble outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialReport {
    pub trial: u64,
    pub agreement_time: Option<usize>,
    pub absorption_time: Option<usize>,
    pub terminal_origins: Vec<usize>,
}

impl TrialReport {
    pub fn from_trajectory(trial: u64, traj: &Trajectory) -> Self {
        Self {
            trial,
            agreement_time: traj.agreement_time,
            absorption_time: traj.absorption_time,
            terminal_origins: traj.terminal_origins(),
        }
    }
}

fn check_dims(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionError { expected, found })
    }
}

fn check_window(chain: &ChainSource, t0: usize, t_max: usize) -> Result<()> {
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
    Ok(())
}

/// x(t+1) = A(t) x(t): agent i copies the state selected by row i.
pub fn step_base(x: &[TaggedState], sel: &SelectionMatrix) -> Result<Vec<TaggedState>> {
    check_dims(x.len(), sel.rows())?;
    check_dims(x.len(), sel.n())?;
    Ok(sel.select().iter().map(|&j| x[j]).collect())
}

/// x(t+1) = Λ(t) A(t) x(t) + (I − Λ(t)) u, componentwise: copy when
/// susceptible, reset to the own prejudice otherwise.
pub fn step_fj(
    x: &[TaggedState],
    sel: &SelectionMatrix,
    lam: &SusceptibilityDraw,
    u: &[TaggedState],
) -> Result<Vec<TaggedState>> {
    check_dims(x.len(), sel.rows())?;
    check_dims(x.len(), lam.len())?;
    check_dims(x.len(), u.len())?;
    Ok((0..x.len())
        .map(|i| {
            if lam.is_set(i) {
                x[sel.selected(i)]
            } else {
                u[i]
            }
        })
        .collect())
}

/// x(t+1) = Λ(t) A(t) x(t) + (I − Λ(t)) C(t) u: non-susceptible agents adopt
/// a prejudice drawn by their mutation row.
pub fn step_rank_one(
    x: &[TaggedState],
    sel_a: &SelectionMatrix,
    lam: &SusceptibilityDraw,
    sel_c: &SelectionMatrix,
    u: &[TaggedState],
) -> Result<Vec<TaggedState>> {
    check_dims(x.len(), sel_a.rows())?;
    check_dims(x.len(), lam.len())?;
    check_dims(x.len(), sel_c.rows())?;
    check_dims(x.len(), u.len())?;
    Ok((0..x.len())
        .map(|i| {
            if lam.is_set(i) {
                x[sel_a.selected(i)]
            } else {
                u[sel_c.selected(i)]
            }
        })
        .collect())
}

struct Recorder {
    traj: Trajectory,
    cap: usize,
}

impl Recorder {
    fn new(t0: usize, initial: Vec<TaggedState>, cap: usize) -> Self {
        Self {
            traj: Trajectory {
                t0,
                states: vec![initial.clone()],
                agreement_time: None,
                absorption_time: None,
                terminal: initial,
                t_end: t0,
            },
            cap,
        }
    }

    fn push(&mut self, t: usize, state: Vec<TaggedState>) {
        if self.traj.states.len() <= self.cap {
            self.traj.states.push(state.clone());
        }
        self.traj.terminal = state;
        self.traj.t_end = t;
    }
}

/// Runs the base-case dynamics from (t0, x0) to t_max.
pub fn run_base(
    chain: &ChainSource,
    x0: &[f64],
    t0: usize,
    t_max: usize,
    stream: RngStream,
    opts: RunOptions,
) -> Result<Trajectory> {
    check_window(chain, t0, t_max)?;
    check_dims(chain.n(), x0.len())?;
    let mut x = tag_initial(x0);
    let mut rec = Recorder::new(t0, x.clone(), opts.record_cap);
    if values_all_equal(&x) {
        rec.traj.agreement_time = Some(t0);
    }
    for t in t0..t_max {
        let sel = sample_adaptation(chain.matrix_at(t)?, stream.at(t as u64));
        let next = step_base(&x, &sel)?;
        if rec.traj.agreement_time.is_some() {
            // once an agreement exists the state can never change again
            assert_eq!(next, x, "state changed after agreement at time {}", t + 1);
        } else if values_all_equal(&next) {
            rec.traj.agreement_time = Some(t + 1);
        }
        x = next;
        rec.push(t + 1, x.clone());
        if opts.stop_at_agreement && rec.traj.agreement_time.is_some() {
            break;
        }
    }
    Ok(rec.traj)
}

/// A realized backward walk z(t), stored as its position index per time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackwardWalk {
    pub t_inf: usize,
    /// `positions[t]` for t in 0..=t_inf; `positions[t_inf]` is the start.
    pub positions: Vec<usize>,
}

impl BackwardWalk {
    pub fn at(&self, t: usize) -> usize {
        self.positions[t]
    }
}

/// Runs the time-reversed walk zᵀ(t) = zᵀ(t+1) A(t) from a start drawn from
/// `p_inf` at `t_inf` down to time 0: from position i at t+1, the position
/// at t is drawn from row i of Q(t).
pub fn run_time_reversed(
    chain: &ChainSource,
    t_inf: usize,
    p_inf: &StochasticVector,
    stream: RngStream,
) -> Result<BackwardWalk> {
    if t_inf > chain.horizon() {
        return Err(Error::OutOfHorizon {
            t: t_inf,
            horizon: chain.horizon(),
        });
    }
    check_dims(chain.n(), p_inf.len())?;
    let mut positions = vec![0usize; t_inf + 1];
    positions[t_inf] = stream
        .at(t_inf as u64)
        .row(Domain::WalkInit, 0)
        .next_categorical(p_inf.entries());
    for t in (0..t_inf).rev() {
        let i = positions[t + 1];
        let q = chain.matrix_at(t)?;
        positions[t] = stream
            .at(t as u64)
            .row(Domain::Adaptation, i as u64)
            .next_categorical(q.row(i));
    }
    Ok(BackwardWalk { t_inf, positions })
}

/// Susceptibility probabilities over time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GammaSchedule {
    /// The same γ vector at every step.
    Constant(Vec<f64>),
    /// γ(t) indexed by absolute time.
    PerStep(Vec<Vec<f64>>),
}

impl GammaSchedule {
    pub fn at(&self, t: usize) -> Result<&[f64]> {
        match self {
            GammaSchedule::Constant(g) => Ok(g),
            GammaSchedule::PerStep(gs) => gs.get(t).map(|g| g.as_slice()).ok_or(Error::OutOfHorizon {
                t,
                horizon: gs.len(),
            }),
        }
    }

    pub fn n(&self) -> usize {
        match self {
            GammaSchedule::Constant(g) => g.len(),
            GammaSchedule::PerStep(gs) => gs.first().map_or(0, Vec::len),
        }
    }
}

fn check_disjoint(x0: &[f64], u: &[f64]) -> Result<()> {
    for a in x0 {
        if u.iter().any(|b| a == b) {
            return Err(Error::OverlapError);
        }
    }
    Ok(())
}

fn run_prejudice_dynamics<F>(
    chain: &ChainSource,
    u: &[f64],
    x0: &[f64],
    t0: usize,
    t_max: usize,
    opts: RunOptions,
    mut step: F,
) -> Result<Trajectory>
where
    F: FnMut(usize, &[TaggedState], &[TaggedState]) -> Result<Vec<TaggedState>>,
{
    check_window(chain, t0, t_max)?;
    let n = chain.n();
    check_dims(n, x0.len())?;
    check_dims(n, u.len())?;
    if opts.track_absorption {
        check_disjoint(x0, u)?;
    }
    let u_tagged = tag_prejudices(u);
    let mut x = tag_initial(x0);
    let mut rec = Recorder::new(t0, x.clone(), opts.record_cap);
    for t in t0..t_max {
        x = step(t, &x, &u_tagged)?;
        if opts.track_absorption {
            if rec.traj.absorption_time.is_some() {
                // copies among prejudice-tagged states and resets both stay
                // in the prejudice range
                assert!(
                    all_origins_in_prejudice_range(&x, n),
                    "origin left the prejudice range after absorption at time {}",
                    t + 1
                );
            } else if all_origins_in_prejudice_range(&x, n) {
                rec.traj.absorption_time = Some(t + 1);
            }
        }
        if values_all_equal(&x) && rec.traj.agreement_time.is_none() {
            rec.traj.agreement_time = Some(t + 1);
        }
        rec.push(t + 1, x.clone());
    }
    Ok(rec.traj)
}

/// Runs the random Friedkin-Johnsen dynamics with a γ schedule and fixed
/// per-agent prejudices.
#[allow(clippy::too_many_arguments)]
pub fn run_fj(
    chain: &ChainSource,
    gamma: &GammaSchedule,
    u: &[f64],
    x0: &[f64],
    t0: usize,
    t_max: usize,
    stream: RngStream,
    opts: RunOptions,
) -> Result<Trajectory> {
    check_dims(chain.n(), gamma.n())?;
    run_prejudice_dynamics(chain, u, x0, t0, t_max, opts, |t, x, u_tagged| {
        let step_stream = stream.at(t as u64);
        let sel = sample_adaptation(chain.matrix_at(t)?, step_stream);
        let lam = sample_susceptibility(gamma.at(t)?, step_stream)?;
        step_fj(x, &sel, &lam, u_tagged)
    })
}

/// Runs the rank-one mutation variant: constant γ in (0,1), prejudice drawn
/// from the mutation distribution `q` on every reset.
#[allow(clippy::too_many_arguments)]
pub fn run_rank_one(
    chain: &ChainSource,
    gamma: &[f64],
    q: &StochasticVector,
    u: &[f64],
    x0: &[f64],
    t0: usize,
    t_max: usize,
    stream: RngStream,
    opts: RunOptions,
) -> Result<Trajectory> {
    let n = chain.n();
    check_dims(n, gamma.len())?;
    check_dims(n, q.len())?;
    for &g in gamma {
        if !(g > 0.0 && g < 1.0) {
            return Err(Error::ParamOutOfRange {
                name: "gamma",
                value: g,
                expected: "in (0, 1)",
            });
        }
    }
    run_prejudice_dynamics(chain, u, x0, t0, t_max, opts, |t, x, u_tagged| {
        let step_stream = stream.at(t as u64);
        let sel_a = sample_adaptation(chain.matrix_at(t)?, step_stream);
        let lam = sample_susceptibility(gamma, step_stream)?;
        let sel_c = sample_mutation(q, n, step_stream);
        step_rank_one(x, &sel_a, &lam, &sel_c, u_tagged)
    })
}
