//! Equal width-wise split of a layer's output and the overlapping input
//! ranges each piece depends on.
//!
//! All ranges are zero-based and half-open. A piece producing output columns
//! `[a_O, b_O)` reads input columns `[a_O * S, (b_O - 1) * S + K)`.

use serde::{Deserialize, Serialize};

use crate::conv::output_len;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PieceRange {
    pub out_start: usize,
    pub out_end: usize,
    pub in_start: usize,
    pub in_end: usize,
}

impl PieceRange {
    /// Range for output columns `[out_start, out_end)`.
    pub fn for_output(out_start: usize, out_end: usize, kernel: usize, stride: usize) -> Self {
        debug_assert!(out_start < out_end);
        Self {
            out_start,
            out_end,
            in_start: out_start * stride,
            in_end: (out_end - 1) * stride + kernel,
        }
    }

    pub fn out_width(&self) -> usize {
        self.out_end - self.out_start
    }

    pub fn in_width(&self) -> usize {
        self.in_end - self.in_start
    }
}

/// `k` equal-width pieces plus the optional master-side remainder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub k: usize,
    pub kernel: usize,
    pub stride: usize,
    /// Padded input width.
    pub in_width: usize,
    pub out_width: usize,
    pub pieces: Vec<PieceRange>,
    /// The last `W_O mod k` output columns, computed by the master.
    pub remainder: Option<PieceRange>,
}

impl SplitPlan {
    /// Output width of every distributed piece, `floor(W_O / k)` (the widest
    /// piece for balanced plans).
    pub fn piece_out_width(&self) -> usize {
        self.pieces[0].out_width()
    }

    /// Input width of every distributed piece, `K + (W_O^p - 1) S` (the widest
    /// piece for balanced plans).
    pub fn piece_in_width(&self) -> usize {
        self.pieces[0].in_width()
    }

    /// Cuts the padded input into the `k` piece inputs.
    pub fn split_input<T: Scalar>(&self, x_padded: &Tensor4<T>) -> Result<Vec<Tensor4<T>>> {
        self.check_input(x_padded)?;
        self.pieces.iter().map(|p| x_padded.slice_width(p.in_start, p.in_end)).collect()
    }

    /// Input of the remainder piece, if any.
    pub fn remainder_input<T: Scalar>(&self, x_padded: &Tensor4<T>) -> Result<Option<Tensor4<T>>> {
        self.check_input(x_padded)?;
        self.remainder.map(|r| x_padded.slice_width(r.in_start, r.in_end)).transpose()
    }

    fn check_input<T: Scalar>(&self, x: &Tensor4<T>) -> Result<()> {
        if x.width() != self.in_width {
            return Err(Error::DimMismatch(format!("input width {} but plan expects {}", x.width(), self.in_width)));
        }
        Ok(())
    }
}

/// Plans a `k`-way split of a layer with the given kernel and stride on a
/// padded input of width `in_width`.
pub fn plan_split(kernel: usize, stride: usize, in_width: usize, k: usize) -> Result<SplitPlan> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let out_width = output_len(in_width, kernel, stride)?;
    if k > out_width {
        return Err(Error::InfeasibleSplit { k, w_out: out_width });
    }
    let piece = out_width / k;
    let pieces = (0..k)
        .map(|i| PieceRange::for_output(i * piece, (i + 1) * piece, kernel, stride))
        .collect();
    let covered = k * piece;
    let remainder = (covered < out_width).then(|| PieceRange::for_output(covered, out_width, kernel, stride));
    Ok(SplitPlan { k, kernel, stride, in_width, out_width, pieces, remainder })
}

/// Splits the output into `parts` contiguous pieces whose widths differ by at
/// most one (wider pieces first), with no remainder. For uncoded execution,
/// where pieces need not share a shape.
pub fn plan_balanced(kernel: usize, stride: usize, in_width: usize, parts: usize) -> Result<SplitPlan> {
    if parts == 0 {
        return Err(Error::InvalidArgument("parts must be at least 1".into()));
    }
    let out_width = output_len(in_width, kernel, stride)?;
    if parts > out_width {
        return Err(Error::InfeasibleSplit { k: parts, w_out: out_width });
    }
    let (base, extra) = (out_width / parts, out_width % parts);
    let mut start = 0;
    let pieces = (0..parts)
        .map(|i| {
            let end = start + base + usize::from(i < extra);
            let piece = PieceRange::for_output(start, end, kernel, stride);
            start = end;
            piece
        })
        .collect();
    Ok(SplitPlan { k: parts, kernel, stride, in_width, out_width, pieces, remainder: None })
}

/// Minimal input-column interval read by the kernel placements producing
/// output columns `[out_start, out_end)`, found by enumerating placements.
pub fn dependency_oracle(kernel: usize, stride: usize, out_start: usize, out_end: usize) -> (usize, usize) {
    let mut lo = usize::MAX;
    let mut hi = 0;
    for placement in out_start..out_end {
        for tap in 0..kernel {
            let col = placement * stride + tap;
            lo = lo.min(col);
            hi = hi.max(col + 1);
        }
    }
    (lo, hi)
}
