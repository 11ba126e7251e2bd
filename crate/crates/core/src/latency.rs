//! Shift-exponential latency model and per-phase workload scales.
//!
//! A phase with workload `N` (FLOPs or bytes), straggling coefficient `mu`
//! (units per second) and shift `theta` (seconds per unit) has CDF
//! `1 - exp(-(mu / N)(t - N theta))` for `t >= N theta`: a deterministic
//! floor `N theta` plus an exponential tail with mean `N / mu`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conv::LayerGeometry;
use crate::error::{Error, Result};
use crate::splitter::SplitPlan;

/// Bytes per transmitted element.
pub const BYTES_PER_ELEMENT: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftExp {
    pub mu: f64,
    pub theta: f64,
    #[serde(rename = "N")]
    pub scale: f64,
}

impl ShiftExp {
    pub fn new(mu: f64, theta: f64, scale: f64) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) || !(theta >= 0.0 && theta.is_finite()) || !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidArgument(format!("need mu>0, theta>=0, N>0; got mu={mu}, theta={theta}, N={scale}")));
        }
        Ok(Self { mu, theta, scale })
    }

    /// Minimum completion time `N theta`.
    pub fn shift(&self) -> f64 {
        self.scale * self.theta
    }

    /// Mean of the exponential tail, `N / mu`.
    pub fn tail_mean(&self) -> f64 {
        self.scale / self.mu
    }

    pub fn mean(&self) -> f64 {
        self.shift() + self.tail_mean()
    }

    pub fn cdf(&self, t: f64) -> f64 {
        if t < self.shift() {
            0.0
        } else {
            -(-(self.mu / self.scale) * (t - self.shift())).exp_m1()
        }
    }

    pub fn quantile(&self, q: f64) -> Result<f64> {
        if !(0.0..1.0).contains(&q) {
            return Err(Error::InvalidArgument(format!("quantile needs 0 <= q < 1, got {q}")));
        }
        Ok(self.shift() - self.tail_mean() * (-q).ln_1p())
    }

    /// Inverse-CDF draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        self.quantile(u).expect("uniform draw lies in [0, 1)")
    }

    /// Moment/minimum fit: `theta = min / N`, `mu = N / (mean - min)`.
    ///
    /// The fitted distribution reproduces the sample mean exactly.
    pub fn fit(samples: &[f64], scale: f64) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 samples, got {}", samples.len())));
        }
        if !(scale > 0.0) {
            return Err(Error::InvalidArgument(format!("scale must be positive, got {scale}")));
        }
        if samples.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::InvalidArgument("samples must be finite and non-negative".into()));
        }
        let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let spread = mean - min;
        if !(spread > 0.0) {
            return Err(Error::DegenerateFit);
        }
        Self::new(scale / spread, min / scale, scale)
    }
}

/// `H_m = 1 + 1/2 + ... + 1/m`, with `H_0 = 0`.
pub fn harmonic(m: usize) -> f64 {
    (1..=m).rev().map(|i| 1.0 / i as f64).sum()
}

/// Exact mean of the `k`-th smallest of `n` i.i.d. draws:
/// `N theta + (N / mu)(H_n - H_{n-k})`.
pub fn expected_kth_order_stat(n: usize, k: usize, p: &ShiftExp) -> Result<f64> {
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("need 1 <= k <= n, got n={n}, k={k}")));
    }
    Ok(p.shift() + p.tail_mean() * (harmonic(n) - harmonic(n - k)))
}

/// Log approximation `N theta + (N / mu) ln(n / (n - k))`, defined for `k < n`.
pub fn approx_kth_order_stat(n: usize, k: usize, p: &ShiftExp) -> Result<f64> {
    if k == 0 || k >= n {
        return Err(Error::InvalidArgument(format!("need 1 <= k < n, got n={n}, k={k}")));
    }
    Ok(p.shift() + p.tail_mean() * (n as f64 / (n - k) as f64).ln())
}

/// Straggling/shift coefficients for every phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseProfile {
    pub mu_m: f64,
    pub theta_m: f64,
    pub mu_cmp: f64,
    pub theta_cmp: f64,
    pub mu_rec: f64,
    pub theta_rec: f64,
    pub mu_sen: f64,
    pub theta_sen: f64,
}

/// One phase's `(mu, theta)` pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseCoeffs {
    pub mu: f64,
    pub theta: f64,
}

impl PhaseCoeffs {
    /// Distribution at workload `n_units`; `None` for an empty phase.
    pub fn at(&self, n_units: f64) -> Option<ShiftExp> {
        (n_units > 0.0).then(|| ShiftExp { mu: self.mu, theta: self.theta, scale: n_units })
    }

    /// Mean latency per unit, `theta + 1 / mu`.
    pub fn unit_mean(&self) -> f64 {
        self.theta + 1.0 / self.mu
    }
}

impl PhaseProfile {
    pub fn validate(&self) -> Result<()> {
        for (name, mu, theta) in [
            ("m", self.mu_m, self.theta_m),
            ("cmp", self.mu_cmp, self.theta_cmp),
            ("rec", self.mu_rec, self.theta_rec),
            ("sen", self.mu_sen, self.theta_sen),
        ] {
            if !(mu > 0.0 && mu.is_finite()) || !(theta >= 0.0 && theta.is_finite()) {
                return Err(Error::InvalidArgument(format!("phase {name}: need mu>0 and theta>=0, got mu={mu}, theta={theta}")));
            }
        }
        Ok(())
    }

    pub fn master(&self) -> PhaseCoeffs {
        PhaseCoeffs { mu: self.mu_m, theta: self.theta_m }
    }

    pub fn compute(&self) -> PhaseCoeffs {
        PhaseCoeffs { mu: self.mu_cmp, theta: self.theta_cmp }
    }

    pub fn receive(&self) -> PhaseCoeffs {
        PhaseCoeffs { mu: self.mu_rec, theta: self.theta_rec }
    }

    pub fn send(&self) -> PhaseCoeffs {
        PhaseCoeffs { mu: self.mu_sen, theta: self.theta_sen }
    }
}

/// Workload scales of one coded layer execution.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WorkloadSizes {
    /// Encoding FLOPs at the master.
    pub n_enc: f64,
    /// Per-worker compute FLOPs.
    pub n_cmp: f64,
    /// Per-worker input bytes.
    pub n_rec: f64,
    /// Per-worker output bytes.
    pub n_sen: f64,
    /// Decoding FLOPs at the master.
    pub n_dec: f64,
}

impl WorkloadSizes {
    /// Sizes for piece widths `w_in_p` (input) and `w_out_p` (output), which
    /// may be fractional when the floor of `W_O / k` is relaxed. Batch size is 1.
    pub fn for_piece(geom: &LayerGeometry, w_in_p: f64, w_out_p: f64, k: f64, n: usize) -> Self {
        let in_plane = (geom.c_in * geom.h_in) as f64;
        let out_plane = (geom.c_out * geom.h_out) as f64;
        let kk = (geom.kernel * geom.kernel) as f64;
        Self {
            n_enc: 2.0 * k * n as f64 * in_plane * w_in_p,
            n_cmp: out_plane * w_out_p * 2.0 * geom.c_in as f64 * kk,
            n_rec: BYTES_PER_ELEMENT * in_plane * w_in_p,
            n_sen: BYTES_PER_ELEMENT * out_plane * w_out_p,
            n_dec: 2.0 * k * k * out_plane * w_out_p,
        }
    }

    /// Sizes for a concrete plan, using `floor(W_O / k)` wide pieces.
    pub fn from_plan(geom: &LayerGeometry, plan: &SplitPlan, n: usize) -> Self {
        Self::for_piece(geom, plan.piece_in_width() as f64, plan.piece_out_width() as f64, plan.k as f64, n)
    }

    /// Relaxed sizes at real-valued `k`: `W_O^p = W_O / k`.
    pub fn relaxed(geom: &LayerGeometry, k: f64, n: usize) -> Self {
        let w_out_p = geom.w_out as f64 / k;
        let w_in_p = geom.kernel as f64 + (w_out_p - 1.0) * geom.stride as f64;
        Self::for_piece(geom, w_in_p, w_out_p, k, n)
    }
}

/// Workload sizes of a concrete plan for `n` workers.
pub fn workload_sizes(geom: &LayerGeometry, plan: &SplitPlan, n: usize) -> WorkloadSizes {
    WorkloadSizes::from_plan(geom, plan, n)
}
