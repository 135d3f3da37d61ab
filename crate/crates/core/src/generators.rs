//! Chain families used by the simulations: the 2-state static chain, random
//! irreducible chains, the two-block nearly-decoupled chain, and constant
//! matrices, all reproducible from a 64-bit seed.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::chain::{ChainSource, Provenance};
use crate::error::{Error, Result};
use crate::rng::{chain_gen_stream, CounterRng};
use crate::stochastic::{make_stochastic, StochasticMatrix};

/// Rejection cap per chain index before generation gives up.
pub const REJECTION_CAP: usize = 10_000;

/// Amplitude of the off-diagonal coupling in the block chain: Δ entries are
/// uniform on [0, this]. Kept small so the two blocks are effectively
/// decoupled from t = 0 on while the coupling still decays as 1/(t+1)².
pub const BLOCK_COUPLING_AMPLITUDE: f64 = 1e-6;

/// Which family to generate, with the family-specific parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum GeneratorKind {
    StaticTwoState { p: f64, q: f64 },
    RandomIrreducible,
    BlockNonergodic,
    ConstantMatrix { matrix: Vec<Vec<f64>> },
}

/// A seeded, serializable recipe for a chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    #[serde(flatten)]
    pub kind: GeneratorKind,
    pub n: usize,
    pub horizon: usize,
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::ParamOutOfRange {
                name: "horizon",
                value: 0.0,
                expected: ">= 1",
            });
        }
        match &self.kind {
            GeneratorKind::StaticTwoState { p, q } => {
                if self.n != 2 {
                    return Err(Error::DimensionError {
                        expected: 2,
                        found: self.n,
                    });
                }
                check_open_unit("p", *p)?;
                check_open_unit("q", *q)?;
            }
            GeneratorKind::RandomIrreducible => {
                if self.n < 2 {
                    return Err(Error::ParamOutOfRange {
                        name: "n",
                        value: self.n as f64,
                        expected: ">= 2",
                    });
                }
            }
            GeneratorKind::BlockNonergodic => {
                if !self.n.is_multiple_of(2) {
                    return Err(Error::DimensionError {
                        expected: self.n + 1,
                        found: self.n,
                    });
                }
                if self.n < 4 {
                    return Err(Error::ParamOutOfRange {
                        name: "n",
                        value: self.n as f64,
                        expected: "even, >= 4",
                    });
                }
            }
            GeneratorKind::ConstantMatrix { matrix } => {
                if matrix.len() != self.n {
                    return Err(Error::DimensionError {
                        expected: self.n,
                        found: matrix.len(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Short human-readable descriptor used in provenance records.
    pub fn descriptor(&self) -> String {
        match &self.kind {
            GeneratorKind::StaticTwoState { p, q } => format!("static:p={p},q={q}"),
            GeneratorKind::RandomIrreducible => format!("irreducible:n={}", self.n),
            GeneratorKind::BlockNonergodic => format!(
                "block:n={},coupling={}",
                self.n, BLOCK_COUPLING_AMPLITUDE
            ),
            GeneratorKind::ConstantMatrix { .. } => format!("constant:n={}", self.n),
        }
    }

    pub fn build(&self) -> Result<ChainSource> {
        self.validate()?;
        match &self.kind {
            GeneratorKind::StaticTwoState { p, q } => static_two_state_chain(*p, *q, self.horizon),
            GeneratorKind::RandomIrreducible => {
                random_irreducible_chain(self.n, self.horizon, self.seed)
            }
            GeneratorKind::BlockNonergodic => {
                block_nonergodic_chain(self.n, self.horizon, self.seed)
            }
            GeneratorKind::ConstantMatrix { matrix } => {
                let m = make_stochastic(matrix)?;
                Ok(ChainSource::constant(
                    m,
                    self.horizon,
                    Provenance::ClosedForm {
                        descriptor: self.descriptor(),
                    },
                ))
            }
        }
    }
}

fn check_open_unit(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::ParamOutOfRange {
            name,
            value: v,
            expected: "in (0, 1)",
        })
    }
}

/// The static chain [[p, 1−p], [1−q, q]] repeated over the horizon.
pub fn static_two_state_chain(p: f64, q: f64, horizon: usize) -> Result<ChainSource> {
    check_open_unit("p", p)?;
    check_open_unit("q", q)?;
    let m = make_stochastic(&[vec![p, 1.0 - p], vec![1.0 - q, q]])?;
    Ok(ChainSource::constant(
        m,
        horizon,
        Provenance::ClosedForm {
            descriptor: format!("static:p={p},q={q}"),
        },
    ))
}

/// One row drawn uniformly from the probability simplex (normalized
/// exponentials of the stream's uniforms).
fn simplex_row(n: usize, rng: &mut CounterRng) -> Vec<f64> {
    let mut row: Vec<f64> = (0..n).map(|_| rng.next_exp()).collect();
    let sum: f64 = row.iter().sum();
    for v in row.iter_mut() {
        *v /= sum;
    }
    row
}

/// A random stochastic matrix with rows uniform on the simplex. Keyed by the
/// caller-provided stream; used for test fixtures and random verification
/// instances.
pub fn random_stochastic_matrix(n: usize, rng: &mut CounterRng) -> StochasticMatrix {
    let rows: Vec<Vec<f64>> = (0..n).map(|_| simplex_row(n, rng)).collect();
    make_stochastic(&rows).expect("simplex rows are valid")
}

/// Strong connectivity of the positive-support digraph (edge i→j iff
/// q_ij > 0), checked by forward and backward reachability from node 0.
pub fn is_irreducible(m: &StochasticMatrix) -> bool {
    let n = m.n();
    let reach = |transpose: bool| -> usize {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                let edge = if transpose {
                    m.get(j, i) > 0.0
                } else {
                    m.get(i, j) > 0.0
                };
                if edge && !seen[j] {
                    seen[j] = true;
                    count += 1;
                    stack.push(j);
                }
            }
        }
        count
    };
    reach(false) == n && reach(true) == n
}

fn rejection_sample_irreducible(
    n: usize,
    seed: u64,
    t: usize,
    row_offset: u64,
    index_label: usize,
) -> Result<Vec<Vec<f64>>> {
    for attempt in 0..REJECTION_CAP {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|r| {
                let mut rng = chain_gen_stream(seed, t as u64, attempt as u64, row_offset + r as u64);
                simplex_row(n, &mut rng)
            })
            .collect();
        let m = make_stochastic(&rows)?;
        if is_irreducible(&m) {
            return Ok(rows);
        }
    }
    Err(Error::GenerationFailed {
        index: index_label,
        attempts: REJECTION_CAP,
    })
}

/// A chain of independent random irreducible matrices, rows uniform on the
/// simplex, rejection-resampled until the support graph is strongly
/// connected. Identical (n, horizon, seed) give bit-identical chains.
pub fn random_irreducible_chain(n: usize, horizon: usize, seed: u64) -> Result<ChainSource> {
    if n < 2 {
        return Err(Error::ParamOutOfRange {
            name: "n",
            value: n as f64,
            expected: ">= 2",
        });
    }
    if horizon == 0 {
        return Err(Error::ParamOutOfRange {
            name: "horizon",
            value: 0.0,
            expected: ">= 1",
        });
    }
    let matrices: Result<Vec<StochasticMatrix>> = (0..horizon)
        .map(|t| {
            let rows = rejection_sample_irreducible(n, seed, t, 0, t)?;
            make_stochastic(&rows)
        })
        .collect();
    ChainSource::from_matrices(
        matrices?,
        Provenance::GeneratedWithSeed {
            descriptor: format!("irreducible:n={n}"),
            seed,
        },
    )
}

/// Two independent random irreducible diagonal blocks with off-diagonal
/// coupling δ(t)·Δ(t), δ(t) = 1/(t+1)², Δ entries i.i.d. uniform on
/// [0, [`BLOCK_COUPLING_AMPLITUDE`]]; each row then normalized.
///
/// The coupling mass is summable in t, so the two blocks almost surely stop
/// exchanging states after finitely many steps while each block's sub-chain
/// stays ergodic.
pub fn block_nonergodic_chain(n: usize, horizon: usize, seed: u64) -> Result<ChainSource> {
    if !n.is_multiple_of(2) {
        return Err(Error::DimensionError {
            expected: n + 1,
            found: n,
        });
    }
    if n < 4 {
        return Err(Error::ParamOutOfRange {
            name: "n",
            value: n as f64,
            expected: "even, >= 4",
        });
    }
    if horizon == 0 {
        return Err(Error::ParamOutOfRange {
            name: "horizon",
            value: 0.0,
            expected: ">= 1",
        });
    }
    let half = n / 2;
    let mut matrices = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let upper = rejection_sample_irreducible(half, seed, t, 0, t)?;
        let lower = rejection_sample_irreducible(half, seed, t, half as u64, t)?;
        let delta = 1.0 / ((t + 1) * (t + 1)) as f64;
        // coupling rows use a row-key range disjoint from the block rows
        let coupling: Vec<Vec<f64>> = (0..n)
            .map(|r| {
                let mut rng = chain_gen_stream(seed, t as u64, 0, (n + r) as u64);
                (0..half)
                    .map(|_| delta * BLOCK_COUPLING_AMPLITUDE * rng.next_f64())
                    .collect()
            })
            .collect();
        let mut rows = Vec::with_capacity(n);
        for i in 0..half {
            let mut row = upper[i].clone();
            row.extend_from_slice(&coupling[i]);
            rows.push(row);
        }
        for i in 0..half {
            let mut row: Vec<f64> = coupling[half + i].clone();
            row.extend_from_slice(&lower[i]);
            rows.push(row);
        }
        matrices.push(make_stochastic(&rows)?);
    }
    ChainSource::from_matrices(
        matrices,
        Provenance::GeneratedWithSeed {
            descriptor: format!("block:n={n},coupling={BLOCK_COUPLING_AMPLITUDE}"),
            seed,
        },
    )
}

/// The chain of row-normalized principal sub-matrices Q_S(t) for an index
/// subset S, e.g. one diagonal block of the block chain.
pub fn restricted_chain(chain: &ChainSource, indices: &[usize]) -> Result<ChainSource> {
    if indices.is_empty() || indices.iter().any(|&i| i >= chain.n()) {
        return Err(Error::BadSubset("indices must be nonempty and in range"));
    }
    let k = indices.len();
    let matrices: Result<Vec<StochasticMatrix>> = (0..chain.horizon())
        .map(|t| {
            let q = chain.matrix_at(t)?;
            let data = q.block(indices, indices);
            StochasticMatrix::from_raw(k, data)
        })
        .collect();
    ChainSource::from_matrices(
        matrices?,
        Provenance::ClosedForm {
            descriptor: format!("restriction:k={k}"),
        },
    )
}

/// Materialized chain file: `{"n": .., "horizon": .., "matrices": [..]}` with
/// matrices as nested row-major arrays.
#[derive(Debug, Serialize, Deserialize)]
struct ChainFile {
    n: usize,
    horizon: usize,
    matrices: Vec<Vec<Vec<f64>>>,
}

/// Serializes a chain to JSON: generated chains keep their descriptor and
/// seed; everything else materializes its matrices.
pub fn chain_to_json(chain: &ChainSource) -> Result<String> {
    match chain.provenance() {
        Provenance::GeneratedWithSeed { descriptor, seed } => {
            let spec = parse_generator_descriptor(descriptor, chain.horizon(), *seed)?;
            Ok(serde_json::to_string_pretty(&spec)?)
        }
        _ => chain_to_json_materialized(chain),
    }
}

/// Serializes the materialized matrix form regardless of provenance.
pub fn chain_to_json_materialized(chain: &ChainSource) -> Result<String> {
    let matrices = chain
        .materialize()
        .iter()
        .map(|m| (0..m.n()).map(|i| m.row(i).to_vec()).collect())
        .collect();
    let file = ChainFile {
        n: chain.n(),
        horizon: chain.horizon(),
        matrices,
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

/// Parses a chain from JSON: either a [`GeneratorSpec`] (rebuilt from its
/// seed) or a materialized `{"n", "horizon", "matrices"}` document.
pub fn chain_from_json(text: &str, origin: &str) -> Result<ChainSource> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    if value.get("matrices").is_some() {
        let file: ChainFile = serde_json::from_value(value)?;
        if file.matrices.len() != file.horizon {
            return Err(Error::DimensionError {
                expected: file.horizon,
                found: file.matrices.len(),
            });
        }
        let matrices: Result<Vec<StochasticMatrix>> = file
            .matrices
            .iter()
            .map(|rows| {
                let m = make_stochastic(rows)?;
                if m.n() != file.n {
                    return Err(Error::DimensionError {
                        expected: file.n,
                        found: m.n(),
                    });
                }
                Ok(m)
            })
            .collect();
        ChainSource::from_matrices(
            matrices?,
            Provenance::LoadedFromFile {
                path: origin.to_string(),
            },
        )
    } else {
        let spec: GeneratorSpec = serde_json::from_value(value)?;
        spec.build()
    }
}

pub fn load_chain_file(path: &Path) -> Result<ChainSource> {
    let text = std::fs::read_to_string(path)?;
    chain_from_json(&text, &path.display().to_string())
}

/// Parses the CLI chain grammar into a generator spec:
/// `static:p=0.9,q=0.8 | irreducible:n=10 | block:n=10 | identity[:n=K] | constant` —
/// `file:PATH` is handled by [`parse_chain_descriptor`].
pub fn parse_generator_descriptor(desc: &str, horizon: usize, seed: u64) -> Result<GeneratorSpec> {
    let (head, params) = match desc.split_once(':') {
        Some((h, p)) => (h, p),
        None => (desc, ""),
    };
    let mut kv = std::collections::BTreeMap::new();
    for part in params.split(',').filter(|s| !s.is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| Error::BadDescriptor(desc.to_string()))?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    let get_f64 = |kv: &std::collections::BTreeMap<String, String>, key: &str| -> Result<f64> {
        kv.get(key)
            .ok_or_else(|| Error::BadDescriptor(format!("{desc}: missing {key}")))?
            .parse::<f64>()
            .map_err(|_| Error::BadDescriptor(format!("{desc}: bad {key}")))
    };
    let get_n = |kv: &std::collections::BTreeMap<String, String>, default: Option<usize>| -> Result<usize> {
        match kv.get("n") {
            Some(v) => v
                .parse::<usize>()
                .map_err(|_| Error::BadDescriptor(format!("{desc}: bad n"))),
            None => default.ok_or_else(|| Error::BadDescriptor(format!("{desc}: missing n"))),
        }
    };
    let spec = match head {
        "static" => GeneratorSpec {
            kind: GeneratorKind::StaticTwoState {
                p: get_f64(&kv, "p")?,
                q: get_f64(&kv, "q")?,
            },
            n: 2,
            horizon,
            seed,
        },
        "irreducible" => GeneratorSpec {
            kind: GeneratorKind::RandomIrreducible,
            n: get_n(&kv, None)?,
            horizon,
            seed,
        },
        "block" => GeneratorSpec {
            kind: GeneratorKind::BlockNonergodic,
            n: get_n(&kv, None)?,
            horizon,
            seed,
        },
        "identity" => {
            let n = get_n(&kv, Some(2))?;
            let matrix = (0..n)
                .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                .collect();
            GeneratorSpec {
                kind: GeneratorKind::ConstantMatrix { matrix },
                n,
                horizon,
                seed,
            }
        }
        _ => return Err(Error::BadDescriptor(desc.to_string())),
    };
    spec.validate()?;
    Ok(spec)
}

/// Resolves a full chain descriptor, including `file:PATH`.
pub fn parse_chain_descriptor(desc: &str, horizon: usize, seed: u64) -> Result<ChainSource> {
    if let Some(path) = desc.strip_prefix("file:") {
        return load_chain_file(Path::new(path));
    }
    parse_generator_descriptor(desc, horizon, seed)?.build()
}
