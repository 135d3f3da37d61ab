//! Counter-based random number streams.
//!
//! Every random draw in this crate is keyed by `(master seed, domain, trial,
//! time, row)`. Identical keys reproduce identical draws, so trials can run
//! in parallel (or be replayed one at a time) with bit-identical results and
//! no stream coordination. Streams are SplitMix64 sequences whose starting
//! state is derived by absorbing the key fields through the SplitMix64
//! finalizer.

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer; full-avalanche bijection on u64.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn absorb(state: u64, field: u64) -> u64 {
    mix64(state ^ field.wrapping_add(GOLDEN))
}

/// Key-domain separators so that draws for different purposes never share a
/// stream even under the same (seed, trial, time, row).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    /// Chain generation (matrix entries).
    ChainGen,
    /// Adaptation matrix A(t) rows.
    Adaptation,
    /// Susceptibility diagonal entries.
    Susceptibility,
    /// Mutation matrix C(t) rows.
    Mutation,
    /// Initial draw of a backward walk.
    WalkInit,
    /// Test fixtures and ad-hoc instance generation.
    Instance,
}

impl Domain {
    fn tag(self) -> u64 {
        match self {
            Domain::ChainGen => 1,
            Domain::Adaptation => 2,
            Domain::Susceptibility => 3,
            Domain::Mutation => 4,
            Domain::WalkInit => 5,
            Domain::Instance => 6,
        }
    }
}

/// Per-trial handle: (master seed, trial index). The key prefix is mixed
/// once here so per-row stream derivation inside hot loops stays cheap.
#[derive(Debug, Clone, Copy)]
pub struct RngStream {
    master_seed: u64,
    trial: u64,
    prefix: u64,
}

impl RngStream {
    pub fn new(master_seed: u64, trial: u64) -> Self {
        Self {
            master_seed,
            trial,
            prefix: absorb(mix64(master_seed), trial),
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn trial(&self) -> u64 {
        self.trial
    }

    /// The stream narrowed to one time step.
    pub fn at(&self, time: u64) -> StepStream {
        StepStream {
            prefix: absorb(self.prefix, time),
        }
    }
}

/// Per-(trial, time) handle; sampling operations split it by domain and row.
#[derive(Debug, Clone, Copy)]
pub struct StepStream {
    prefix: u64,
}

impl StepStream {
    pub fn row(&self, domain: Domain, row: u64) -> CounterRng {
        CounterRng {
            state: absorb(absorb(self.prefix, domain.tag()), row),
        }
    }
}

/// Stream for chain generation, keyed by (seed, t, attempt, row) under the
/// `ChainGen` domain. The attempt index keeps rejection re-draws disjoint
/// from earlier draws at the same (t, row).
pub fn chain_gen_stream(seed: u64, time: u64, attempt: u64, row: u64) -> CounterRng {
    let mut k = mix64(seed);
    k = absorb(k, Domain::ChainGen.tag());
    k = absorb(k, time);
    k = absorb(k, attempt);
    k = absorb(k, row);
    CounterRng { state: k }
}

/// A SplitMix64 sequence: `state += GOLDEN; output = mix64(state)`.
#[derive(Debug, Clone)]
pub struct CounterRng {
    state: u64,
}

impl CounterRng {
    pub fn from_key(key: u64) -> Self {
        Self { state: mix64(key) }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }

    /// Uniform draw in the open interval (0, 1); never exactly 0 or 1, so
    /// logs and inverse-CDF walks are always safe.
    pub fn next_f64(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Exponential(1) draw via inversion.
    pub fn next_exp(&mut self) -> f64 {
        -self.next_f64().ln()
    }

    /// Index drawn from the categorical distribution given by `weights`
    /// (assumed non-negative, summing to ~1) with a single uniform draw and
    /// an inverse-CDF walk.
    pub fn next_categorical(&mut self, weights: &[f64]) -> usize {
        let u = self.next_f64();
        let mut acc = 0.0;
        for (j, w) in weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return j;
            }
        }
        // Rounding left u above the accumulated sum; the last index is the
        // only consistent choice.
        weights.len() - 1
    }
}
