//! Small dense LU factorisation with partial pivoting, shared by the MDS and
//! LT decoders. Right-hand sides are whole payload rows, so one factorisation
//! serves every column of the stacked outputs.

use crate::error::{Error, Result};

/// Pivots with magnitude below this are treated as singular.
pub const PIVOT_EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
pub(crate) struct Lu {
    n: usize,
    /// Packed `L` (unit diagonal, below) and `U` (on and above), row-major.
    lu: Vec<f64>,
    /// `perm[i]` is the original row now in position `i`.
    perm: Vec<usize>,
}

impl Lu {
    pub(crate) fn factor(mut a: Vec<f64>, n: usize) -> Result<Self> {
        assert_eq!(a.len(), n * n);
        let mut perm: Vec<usize> = (0..n).collect();
        for col in 0..n {
            let (pivot_row, pivot) = (col..n)
                .map(|r| (r, a[r * n + col].abs()))
                .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pivot < PIVOT_EPS {
                return Err(Error::SingularSubmatrix { pivot });
            }
            if pivot_row != col {
                for j in 0..n {
                    a.swap(col * n + j, pivot_row * n + j);
                }
                perm.swap(col, pivot_row);
            }
            let d = a[col * n + col];
            for r in col + 1..n {
                let f = a[r * n + col] / d;
                a[r * n + col] = f;
                if f != 0.0 {
                    for j in col + 1..n {
                        a[r * n + j] -= f * a[col * n + j];
                    }
                }
            }
        }
        Ok(Self { n, lu: a, perm })
    }

    /// Solves `A X = B` where `B` is given as `n` rows; returns the rows of `X`.
    pub(crate) fn solve_rows(&self, rhs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = self.n;
        assert_eq!(rhs.len(), n);
        let mut x: Vec<Vec<f64>> = self.perm.iter().map(|&p| rhs[p].clone()).collect();
        for i in 0..n {
            let (done, rest) = x.split_at_mut(i);
            let row = &mut rest[0];
            for (j, prev) in done.iter().enumerate() {
                let f = self.lu[i * n + j];
                if f != 0.0 {
                    row.iter_mut().zip(prev).for_each(|(r, p)| *r -= f * p);
                }
            }
        }
        for i in (0..n).rev() {
            let (head, tail) = x.split_at_mut(i + 1);
            let row = &mut head[i];
            for (off, later) in tail.iter().enumerate() {
                let u = self.lu[i * n + i + 1 + off];
                if u != 0.0 {
                    row.iter_mut().zip(later).for_each(|(r, l)| *r -= u * l);
                }
            }
            let d = self.lu[i * n + i];
            row.iter_mut().for_each(|r| *r /= d);
        }
        x
    }

    pub(crate) fn inverse(&self) -> Vec<f64> {
        let n = self.n;
        let identity: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        self.solve_rows(&identity).concat()
    }
}

/// Maximum absolute column sum of a row-major `n x n` matrix.
pub(crate) fn norm1(a: &[f64], n: usize) -> f64 {
    (0..n)
        .map(|j| (0..n).map(|i| a[i * n + j].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}
