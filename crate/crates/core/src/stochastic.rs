//! Validated row-stochastic matrices and stochastic vectors.
//!
//! Rows are normalized once, at construction; everything downstream may
//! assume entries in [0, 1] and row sums within [`ROW_SUM_TOL`] of 1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on row/vector sums after construction normalization.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// Row-stochastic n×n matrix, stored dense row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix", into = "RawMatrix")]
pub struct StochasticMatrix {
    n: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawMatrix(Vec<Vec<f64>>);

impl TryFrom<RawMatrix> for StochasticMatrix {
    type Error = Error;
    fn try_from(raw: RawMatrix) -> Result<Self> {
        StochasticMatrix::from_rows(&raw.0)
    }
}

impl From<StochasticMatrix> for RawMatrix {
    fn from(m: StochasticMatrix) -> Self {
        RawMatrix((0..m.n).map(|i| m.row(i).to_vec()).collect())
    }
}

impl StochasticMatrix {
    /// Builds a stochastic matrix from a non-negative square array by
    /// dividing each row by its sum.
    ///
    /// This is the single normalization point: constructed matrices satisfy
    /// the type invariants exactly (entries in `[0,1]`, row sums within
    /// [`ROW_SUM_TOL`] of 1).
    pub fn from_raw(n: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || data.len() != n * n {
            return Err(Error::DimensionError {
                expected: n * n,
                found: data.len(),
            });
        }
        let mut data = data;
        for i in 0..n {
            let row = &mut data[i * n..(i + 1) * n];
            for (j, &v) in row.iter().enumerate() {
                if v < 0.0 || !v.is_finite() {
                    return Err(Error::NegativeEntry {
                        row: i,
                        col: j,
                        value: v,
                    });
                }
            }
            let sum: f64 = row.iter().sum();
            if sum <= 0.0 {
                return Err(Error::ZeroRow { row: i });
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        Ok(Self { n, data })
    }

    /// `from_raw` over nested rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        for r in rows {
            if r.len() != n {
                return Err(Error::DimensionError {
                    expected: n,
                    found: r.len(),
                });
            }
        }
        Self::from_raw(n, rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self { n, data }
    }

    /// The rank-one matrix with every row equal to `v`.
    pub fn rank_one(v: &StochasticVector) -> Self {
        let n = v.len();
        let mut data = Vec::with_capacity(n * n);
        for _ in 0..n {
            data.extend_from_slice(v.entries());
        }
        Self { n, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn entries(&self) -> &[f64] {
        &self.data
    }

    /// Matrix product `self * rhs` (no renormalization; the product of
    /// stochastic matrices is stochastic up to rounding).
    pub fn matmul(&self, rhs: &StochasticMatrix) -> StochasticMatrix {
        assert_eq!(self.n, rhs.n, "dimension mismatch in matmul");
        let n = self.n;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == 0.0 {
                    continue;
                }
                let rhs_row = &rhs.data[k * n..(k + 1) * n];
                let out_row = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    out_row[j] += a * rhs_row[j];
                }
            }
        }
        StochasticMatrix { n, data: out }
    }

    /// Row-vector product `vᵀ * self`.
    pub fn vec_mul(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.n, v.len(), "dimension mismatch in vec_mul");
        let n = self.n;
        let mut out = vec![0.0; n];
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            let row = &self.data[i * n..(i + 1) * n];
            for j in 0..n {
                out[j] += vi * row[j];
            }
        }
        out
    }

    /// Matrix-vector product `self * x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.n, x.len(), "dimension mismatch in mul_vec");
        (0..self.n)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Max over columns of (column max − column min): distance from the
    /// identical-rows form. Monotone non-increasing under left-multiplication
    /// by stochastic matrices.
    pub fn column_spread(&self) -> f64 {
        let n = self.n;
        let mut spread = 0.0f64;
        for j in 0..n {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for i in 0..n {
                let v = self.data[i * n + j];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            spread = spread.max(hi - lo);
        }
        spread
    }

    /// Column means, renormalized to sum 1.
    pub fn column_means(&self) -> StochasticVector {
        let n = self.n;
        let mut means = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                means[j] += self.data[i * n + j];
            }
        }
        let total: f64 = means.iter().sum();
        for m in means.iter_mut() {
            *m /= total;
        }
        StochasticVector { entries: means }
    }

    /// Sum of entries over a rows × cols block.
    pub fn block_mass(&self, rows: &[usize], cols: &[usize]) -> f64 {
        rows.iter()
            .map(|&i| cols.iter().map(|&j| self.get(i, j)).sum::<f64>())
            .sum()
    }

    /// The (rows × cols) sub-block as raw row-major data.
    pub fn block(&self, rows: &[usize], cols: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(rows.len() * cols.len());
        for &i in rows {
            for &j in cols {
                out.push(self.get(i, j));
            }
        }
        out
    }

    pub fn max_row_sum_error(&self) -> f64 {
        (0..self.n)
            .map(|i| (self.row(i).iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Builds a stochastic matrix from a non-negative array by row normalization.
pub fn make_stochastic(rows: &[Vec<f64>]) -> Result<StochasticMatrix> {
    StochasticMatrix::from_rows(rows)
}

/// Stochastic vector: non-negative entries summing to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct StochasticVector {
    entries: Vec<f64>,
}

impl TryFrom<Vec<f64>> for StochasticVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        StochasticVector::new(v)
    }
}

impl From<StochasticVector> for Vec<f64> {
    fn from(v: StochasticVector) -> Self {
        v.entries
    }
}

impl StochasticVector {
    /// Validates non-negativity and a positive sum, then normalizes to sum 1.
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::DimensionError {
                expected: 1,
                found: 0,
            });
        }
        for (j, &v) in entries.iter().enumerate() {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::NegativeEntry {
                    row: 0,
                    col: j,
                    value: v,
                });
            }
        }
        let sum: f64 = entries.iter().sum();
        if sum <= 0.0 {
            return Err(Error::ZeroRow { row: 0 });
        }
        let mut entries = entries;
        for v in entries.iter_mut() {
            *v /= sum;
        }
        Ok(Self { entries })
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            entries: vec![1.0 / n as f64; n],
        }
    }

    /// The point mass e^(i).
    pub fn basis(n: usize, i: usize) -> Self {
        let mut entries = vec![0.0; n];
        entries[i] = 1.0;
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.entries[i]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn make_stochastic_keeps_already_stochastic_rows() {
        let m = make_stochastic(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(m.entries(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn make_stochastic_normalizes_rows() {
        let m = make_stochastic(&[vec![2.0, 2.0], vec![1.0, 3.0]]).unwrap();
        assert_eq!(m.entries(), &[0.5, 0.5, 0.25, 0.75]);
    }

    #[test]
    fn make_stochastic_rejects_negative_entries() {
        let err = make_stochastic(&[vec![1.0, -1.0], vec![1.0, 1.0]]).unwrap_err();
        assert!(matches!(err, Error::NegativeEntry { row: 0, col: 1, .. }));
    }

    #[test]
    fn make_stochastic_rejects_zero_rows() {
        let err = make_stochastic(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap_err();
        assert!(matches!(err, Error::ZeroRow { row: 0 }));
    }

    #[test]
    fn rows_sum_to_one_after_normalization() {
        let m = make_stochastic(&[vec![0.3, 0.7, 1.2], vec![5.0, 0.1, 0.2], vec![1e-8, 2.0, 0.0]])
            .unwrap();
        assert!(m.max_row_sum_error() < ROW_SUM_TOL);
    }

    #[test]
    fn matmul_identity_is_neutral() {
        let m = make_stochastic(&[vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
        let id = StochasticMatrix::identity(2);
        assert_eq!(m.matmul(&id), m);
        assert_eq!(id.matmul(&m), m);
    }

    #[test]
    fn column_spread_of_rank_one_is_zero() {
        let v = StochasticVector::new(vec![0.3, 0.7]).unwrap();
        let m = StochasticMatrix::rank_one(&v);
        assert_eq!(m.column_spread(), 0.0);
        assert_eq!(StochasticMatrix::identity(4).column_spread(), 1.0);
    }

    #[test]
    fn column_means_of_rank_one_recover_the_row() {
        let v = StochasticVector::new(vec![0.3, 0.7]).unwrap();
        let m = StochasticMatrix::rank_one(&v);
        let means = m.column_means();
        assert_abs_diff_eq!(means.get(0), 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(means.get(1), 0.7, epsilon = 1e-15);
    }

    #[test]
    fn vector_normalizes_and_validates() {
        let v = StochasticVector::new(vec![1.0, 3.0]).unwrap();
        assert_eq!(v.entries(), &[0.25, 0.75]);
        assert!(StochasticVector::new(vec![-0.1, 1.1]).is_err());
        assert!(StochasticVector::new(vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn serde_round_trip_validates() {
        let m = make_stochastic(&[vec![0.5, 0.5], vec![0.25, 0.75]]).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        let back: StochasticMatrix = serde_json::from_str(&json).unwrap();
        assert_eq!(m, back);
        let bad: std::result::Result<StochasticMatrix, _> =
            serde_json::from_str("[[0.5,-0.5],[0.2,0.8]]");
        assert!(bad.is_err());
    }
}
