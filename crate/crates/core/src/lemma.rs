//! Exact verification of the positive-correlation inequality for backward
//! products of adaptation draws:
//!
//!   Pr( ∩_{i∈S} (A(t+Δ:t))_{iℓ} = 1 ) ≥ ∏_{i∈S} Q_{iℓ}(t+Δ:t)
//!
//! The left side is computed by exhaustive enumeration of the selection
//! draws, level by level. Rows outside the currently occupied position set
//! marginalize to 1, so only occupied rows are branched on; coalescing
//! walkers shrink that set as the recursion descends.

use serde::{Deserialize, Serialize};

use crate::chain::{backward_product, ChainSource};
use crate::error::{Error, Result};
use crate::stochastic::StochasticMatrix;

/// Numerical slack allotted to the inequality check.
pub const LEMMA_SLACK: f64 = 1e-12;

/// Branches whose accumulated path probability falls below this are dropped.
const PRUNE_THRESHOLD: f64 = 1e-18;

/// Result of one exhaustive inequality check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LemmaCheck {
    /// Exact joint probability from the enumeration.
    pub lhs: f64,
    /// Product of the backward-product entries.
    pub rhs: f64,
    /// lhs ≥ rhs − [`LEMMA_SLACK`].
    pub holds: bool,
}

fn mask_of(indices: &[usize]) -> u32 {
    indices.iter().fold(0u32, |m, &i| m | (1 << i))
}

/// Joint probability that every walker starting in `start_mask` at the top
/// level ends exactly at {ell}, enumerated over all assignments of the
/// occupied rows, newest matrix first.
fn enumerate_mass(levels: &[&StochasticMatrix], mask: u32, ell: usize, prob: f64, total: &mut f64) {
    if prob < PRUNE_THRESHOLD {
        return;
    }
    let Some((q, rest)) = levels.split_first() else {
        if mask == 1 << ell {
            *total += prob;
        }
        return;
    };
    let occupied: Vec<usize> = (0..q.n()).filter(|&i| mask & (1 << i) != 0).collect();
    let n = q.n();
    let combos = n.pow(occupied.len() as u32);
    for combo in 0..combos {
        let mut c = combo;
        let mut factor = 1.0;
        let mut next_mask = 0u32;
        for &row in &occupied {
            let target = c % n;
            c /= n;
            factor *= q.get(row, target);
            next_mask |= 1 << target;
        }
        if factor > 0.0 {
            enumerate_mass(rest, next_mask, ell, prob * factor, total);
        }
    }
}

/// Checks the inequality for one (S, ℓ, t, Δ) instance by exhaustive
/// enumeration (left side) against backward-product entries (right side).
pub fn verify_correlation_lemma(
    chain: &ChainSource,
    s: &[usize],
    ell: usize,
    t: usize,
    delta: usize,
) -> Result<LemmaCheck> {
    let n = chain.n();
    if n > 4 || delta > 4 {
        return Err(Error::TooLargeToEnumerate { n, delta });
    }
    if delta == 0 {
        return Err(Error::ParamOutOfRange {
            name: "delta",
            value: 0.0,
            expected: ">= 1",
        });
    }
    if s.is_empty() || s.iter().any(|&i| i >= n) || ell >= n {
        return Err(Error::BadSubset("S and ell must be nonempty and in range"));
    }
    if t + delta > chain.horizon() {
        return Err(Error::OutOfHorizon {
            t: t + delta,
            horizon: chain.horizon(),
        });
    }

    // newest-first: the walker from time t+Δ consumes A(t+Δ−1) first
    let levels: Vec<&StochasticMatrix> = (t..t + delta)
        .rev()
        .map(|s| chain.matrix_at(s))
        .collect::<Result<_>>()?;
    let mut lhs = 0.0;
    enumerate_mass(&levels, mask_of(s), ell, 1.0, &mut lhs);

    let product = backward_product(chain, t, t + delta)?;
    let mut rhs = 1.0;
    let mut seen = 0u32;
    for &i in s {
        // duplicate indices in S contribute once, as in the set intersection
        if seen & (1 << i) == 0 {
            rhs *= product.get(i, ell);
            seen |= 1 << i;
        }
    }
    Ok(LemmaCheck {
        lhs,
        rhs,
        holds: lhs >= rhs - LEMMA_SLACK,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::Provenance;
    use crate::generators::{random_stochastic_matrix, static_two_state_chain};
    use crate::rng::CounterRng;
    use crate::sampling::SelectionMatrix;
    use approx::assert_abs_diff_eq;

    fn random_chain(n: usize, horizon: usize, key: u64) -> ChainSource {
        let mut rng = CounterRng::from_key(key);
        let mats = (0..horizon)
            .map(|_| random_stochastic_matrix(n, &mut rng))
            .collect();
        ChainSource::from_matrices(
            mats,
            Provenance::ClosedForm {
                descriptor: "test".into(),
            },
        )
        .unwrap()
    }

    /// Literal oracle: enumerate every selection-matrix sequence with its
    /// product probability and evaluate the event by composing selections.
    fn brute_force_lhs(chain: &ChainSource, s: &[usize], ell: usize, t: usize, delta: usize) -> f64 {
        let n = chain.n();
        let per_matrix = n.pow(n as u32);
        let mut total = 0.0;
        let mut stack = vec![(t, 1.0, Vec::<SelectionMatrix>::new())];
        while let Some((level, prob, sels)) = stack.pop() {
            if level == t + delta {
                // walker from i at the top consumes the newest matrix first
                let all_reach = s.iter().all(|&i| {
                    let mut pos = i;
                    for sel in sels.iter().rev() {
                        pos = sel.selected(pos);
                    }
                    pos == ell
                });
                if all_reach {
                    total += prob;
                }
                continue;
            }
            let q = chain.matrix_at(level).unwrap();
            for combo in 0..per_matrix {
                let mut c = combo;
                let mut select = Vec::with_capacity(n);
                let mut factor = 1.0;
                for row in 0..n {
                    let target = c % n;
                    c /= n;
                    factor *= q.get(row, target);
                    select.push(target);
                }
                if factor > 0.0 {
                    let mut next = sels.clone();
                    next.push(SelectionMatrix::new(n, select).unwrap());
                    stack.push((level + 1, prob * factor, next));
                }
            }
        }
        total
    }

    #[test]
    fn delta_one_achieves_equality() {
        let chain = random_chain(3, 4, 1);
        for ell in 0..3 {
            let check = verify_correlation_lemma(&chain, &[0, 2], ell, 1, 1).unwrap();
            let q = chain.matrix_at(1).unwrap();
            let expected = q.get(0, ell) * q.get(2, ell);
            assert_abs_diff_eq!(check.lhs, expected, epsilon = 1e-14);
            assert_abs_diff_eq!(check.rhs, expected, epsilon = 1e-14);
            assert!(check.holds);
        }
    }

    #[test]
    fn static_two_state_case_holds() {
        let chain = static_two_state_chain(0.9, 0.8, 10).unwrap();
        let check = verify_correlation_lemma(&chain, &[0, 1], 0, 0, 2).unwrap();
        assert!(check.holds, "lhs {} rhs {}", check.lhs, check.rhs);
        assert!(check.lhs > 0.0);
    }

    #[test]
    fn enumeration_matches_literal_selection_sequences() {
        for key in 0..6 {
            let chain = random_chain(3, 3, 100 + key);
            for (s, ell, delta) in [(vec![0, 1], 2, 2), (vec![0, 1, 2], 0, 2), (vec![1], 1, 3)] {
                let check = verify_correlation_lemma(&chain, &s, ell, 0, delta).unwrap();
                let brute = brute_force_lhs(&chain, &s, ell, 0, delta);
                assert_abs_diff_eq!(check.lhs, brute, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn inequality_holds_on_random_instances() {
        for key in 0..30 {
            let chain = random_chain(3, 4, 200 + key);
            let mut rng = CounterRng::from_key(999 + key);
            let s: Vec<usize> = (0..3).filter(|_| rng.next_f64() < 0.6).collect();
            let s = if s.is_empty() { vec![0] } else { s };
            let ell = (rng.next_u64() % 3) as usize;
            let delta = 1 + (rng.next_u64() % 3) as usize;
            let check = verify_correlation_lemma(&chain, &s, ell, 0, delta).unwrap();
            assert!(
                check.holds,
                "violated at key {key}: lhs {} rhs {}",
                check.lhs, check.rhs
            );
        }
    }

    #[test]
    fn oversized_instances_are_rejected() {
        let chain = random_chain(3, 8, 7);
        assert!(matches!(
            verify_correlation_lemma(&chain, &[0], 0, 0, 5),
            Err(Error::TooLargeToEnumerate { .. })
        ));
        let big = random_chain(5, 2, 7);
        assert!(verify_correlation_lemma(&big, &[0], 0, 0, 1).is_err());
    }

    #[test]
    fn horizon_and_subset_guards() {
        let chain = random_chain(3, 3, 7);
        assert!(matches!(
            verify_correlation_lemma(&chain, &[0], 0, 2, 2),
            Err(Error::OutOfHorizon { .. })
        ));
        assert!(verify_correlation_lemma(&chain, &[], 0, 0, 1).is_err());
        assert!(verify_correlation_lemma(&chain, &[0], 3, 0, 1).is_err());
    }
}
