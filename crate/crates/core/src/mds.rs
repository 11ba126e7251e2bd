//! Real-valued `(n, k)`-MDS code with a Vandermonde generation matrix.
//!
//! Encoded partition `j` is `sum_i g_j^(k-1-i) x_i` with nodes `g_j = j + 1`.
//! Any `k` distinct rows form an invertible Vandermonde matrix, so any `k`
//! coded results determine the `k` sources. All arithmetic runs in `f64`;
//! payloads are converted at the boundary.
//!
//! Integer nodes make the entries exact but the submatrices get badly
//! conditioned as `k` grows. [`GenerationMatrix::condition_estimate`] exposes
//! the 1-norm condition number so callers can warn; `n <= 16` is the
//! supported range.

use crate::error::{Error, Result};
use crate::linalg::{norm1, Lu};
use crate::scalar::Scalar;

/// Largest `n` for which decode accuracy is considered acceptable.
pub const MAX_RECOMMENDED_N: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationMatrix {
    n: usize,
    k: usize,
    nodes: Vec<f64>,
    /// Row-major `n x k`.
    entries: Vec<f64>,
}

impl GenerationMatrix {
    /// Vandermonde matrix on nodes `1, 2, ..., n`.
    pub fn vandermonde(n: usize, k: usize) -> Result<Self> {
        if k == 0 || k > n {
            return Err(Error::InvalidArgument(format!("need 1 <= k <= n, got n={n}, k={k}")));
        }
        Self::from_nodes((1..=n).map(|g| g as f64).collect(), k)
    }

    /// Vandermonde matrix on arbitrary pairwise-distinct nodes.
    pub fn from_nodes(nodes: Vec<f64>, k: usize) -> Result<Self> {
        let n = nodes.len();
        if k == 0 || k > n {
            return Err(Error::InvalidArgument(format!("need 1 <= k <= n, got n={n}, k={k}")));
        }
        for (i, a) in nodes.iter().enumerate() {
            if !a.is_finite() || nodes[..i].contains(a) {
                return Err(Error::InvalidArgument(format!("node {a} is repeated or not finite")));
            }
        }
        let mut entries = Vec::with_capacity(n * k);
        for &g in &nodes {
            let mut row = vec![1.0; k];
            for col in (0..k.saturating_sub(1)).rev() {
                row[col] = row[col + 1] * g;
            }
            entries.extend(row);
        }
        Ok(Self { n, k, nodes, entries })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.entries[j * self.k..(j + 1) * self.k]
    }

    pub fn entry(&self, j: usize, i: usize) -> f64 {
        self.entries[j * self.k + i]
    }

    /// Encodes `k` equal-length source vectors into `n` coded vectors.
    pub fn encode<T: Scalar, S: AsRef<[T]>>(&self, parts: &[S]) -> Result<Vec<Vec<T>>> {
        let len = self.check_rows(parts, self.k, "sources")?;
        let parts64: Vec<Vec<f64>> = parts
            .iter()
            .map(|p| p.as_ref().iter().map(|v| v.to_f64_lossless()).collect())
            .collect();
        Ok((0..self.n).map(|j| self.encode_row_f64(j, &parts64, len)).collect())
    }

    /// Coded vector `j` alone, for per-worker encoding.
    pub fn encode_one<T: Scalar, S: AsRef<[T]>>(&self, j: usize, parts: &[S]) -> Result<Vec<T>> {
        if j >= self.n {
            return Err(Error::OutOfRange(format!("row {j} of {}", self.n)));
        }
        let len = self.check_rows(parts, self.k, "sources")?;
        let parts64: Vec<Vec<f64>> = parts
            .iter()
            .map(|p| p.as_ref().iter().map(|v| v.to_f64_lossless()).collect())
            .collect();
        Ok(self.encode_row_f64(j, &parts64, len))
    }

    fn encode_row_f64<T: Scalar>(&self, j: usize, parts: &[Vec<f64>], len: usize) -> Vec<T> {
        let mut acc = vec![0.0f64; len];
        for (g, part) in self.row(j).iter().zip(parts) {
            acc.iter_mut().zip(part).for_each(|(a, x)| *a += g * x);
        }
        acc.into_iter().map(T::from_f64_lossy).collect()
    }

    /// Recovers the `k` sources from the coded outputs of rows `subset`
    /// (zero-based, distinct, in the same order as `outputs`).
    pub fn decode<T: Scalar, S: AsRef<[T]>>(&self, subset: &[usize], outputs: &[S]) -> Result<Vec<Vec<T>>> {
        self.check_subset(subset)?;
        self.check_rows(outputs, self.k, "outputs")?;
        let lu = Lu::factor(self.submatrix(subset), self.k)?;
        let rhs: Vec<Vec<f64>> = outputs
            .iter()
            .map(|o| o.as_ref().iter().map(|v| v.to_f64_lossless()).collect())
            .collect();
        Ok(lu
            .solve_rows(&rhs)
            .into_iter()
            .map(|row| row.into_iter().map(T::from_f64_lossy).collect())
            .collect())
    }

    /// `||G_S||_1 * ||G_S^-1||_1` for the rows in `subset`.
    pub fn condition_estimate(&self, subset: &[usize]) -> Result<f64> {
        self.check_subset(subset)?;
        let sub = self.submatrix(subset);
        let inv = Lu::factor(sub.clone(), self.k)?.inverse();
        Ok(norm1(&sub, self.k) * norm1(&inv, self.k))
    }

    /// Worst condition number over all `k`-subsets (exhaustive; small `n` only).
    pub fn worst_condition(&self) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for subset in combinations(self.n, self.k) {
            worst = worst.max(self.condition_estimate(&subset)?);
        }
        Ok(worst)
    }

    fn submatrix(&self, subset: &[usize]) -> Vec<f64> {
        subset.iter().flat_map(|&j| self.row(j).iter().copied()).collect()
    }

    fn check_subset(&self, subset: &[usize]) -> Result<()> {
        if subset.len() != self.k {
            return Err(Error::InvalidArgument(format!("need {} rows, got {}", self.k, subset.len())));
        }
        for (i, &j) in subset.iter().enumerate() {
            if j >= self.n {
                return Err(Error::OutOfRange(format!("row {j} of {}", self.n)));
            }
            if subset[..i].contains(&j) {
                return Err(Error::InvalidArgument(format!("row {j} repeated")));
            }
        }
        Ok(())
    }

    fn check_rows<T, S: AsRef<[T]>>(&self, rows: &[S], want: usize, what: &str) -> Result<usize> {
        if rows.len() != want {
            return Err(Error::InvalidArgument(format!("expected {want} {what}, got {}", rows.len())));
        }
        let len = rows[0].as_ref().len();
        if rows.iter().any(|r| r.as_ref().len() != len) {
            return Err(Error::DimMismatch(format!("{what} have unequal lengths")));
        }
        Ok(len)
    }
}

/// All `k`-subsets of `0..n` in lexicographic order.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let Some(pos) = (0..k).rev().find(|&i| idx[i] != i + n - k) else {
            return out;
        };
        idx[pos] += 1;
        for j in pos + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}
