//! Expected-latency objective `L(k)` over the split count and its minimiser,
//! plus closed-form coded/uncoded comparisons.
//!
//! `L(k)` uses relaxed piece widths `W_O / k` and the log approximation of
//! the order-statistic expectation. Up to a constant it decomposes as
//! `P(k) = h1 k + h2 / k + (h3 / k) ln(n / (n - k)) + h4 ln(n / (n - k))`.

use serde::{Deserialize, Serialize};

use crate::conv::LayerGeometry;
use crate::error::{Error, Result};
use crate::latency::{harmonic, PhaseProfile, WorkloadSizes};

/// Golden-section absolute tolerance on `k`.
pub const SEARCH_TOL: f64 = 1e-6;
/// Gap kept below the divergence at `k = n`.
pub const UPPER_GAP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub n: usize,
    pub layer: LayerGeometry,
    pub profile: PhaseProfile,
}

impl SystemParams {
    pub fn new(n: usize, layer: LayerGeometry, profile: PhaseProfile) -> Result<Self> {
        let p = Self { n, layer, profile };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidArgument("n must be at least 1".into()));
        }
        self.profile.validate()
    }

    pub fn coeffs(&self) -> AnalysisCoeffs {
        AnalysisCoeffs::new(self)
    }
}

/// Layer aggregates and the `h1..h5` coefficients of the objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisCoeffs {
    pub n: usize,
    /// Input elements in the `K - S` overlap of one piece.
    pub i_ov: f64,
    /// Input elements advanced by the full output width.
    pub i_w: f64,
    /// Output elements of the layer.
    pub o: f64,
    /// Total compute FLOPs of the layer.
    pub n_cmp_t: f64,
    /// Mean master latency per FLOP, `1 / mu_m + theta_m`.
    pub master_unit: f64,
    pub h1: f64,
    pub h2: f64,
    pub h3: f64,
    pub h4: f64,
    pub h5: f64,
}

impl AnalysisCoeffs {
    pub fn new(params: &SystemParams) -> Self {
        let g = &params.layer;
        let p = &params.profile;
        let n = params.n as f64;
        let plane_in = (g.c_in * g.h_in) as f64;
        let i_ov = plane_in * (g.kernel as f64 - g.stride as f64);
        let i_w = plane_in * (g.w_out * g.stride) as f64;
        let o = (g.c_out * g.h_out * g.w_out) as f64;
        let n_cmp_t = 2.0 * (g.c_out * g.h_out * g.c_in * g.kernel * g.kernel * g.w_out) as f64;
        let master_unit = 1.0 / p.mu_m + p.theta_m;
        Self {
            n: params.n,
            i_ov,
            i_w,
            o,
            n_cmp_t,
            master_unit,
            h1: 2.0 * master_unit * (n * i_ov + o),
            h2: 4.0 * i_w * p.theta_rec + 4.0 * o * p.theta_sen + n_cmp_t * p.theta_cmp,
            h3: 4.0 * i_w / p.mu_rec + 4.0 * o / p.mu_sen + n_cmp_t / p.mu_cmp,
            h4: 4.0 * i_ov / p.mu_rec,
            h5: 4.0 * i_ov * p.theta_rec,
        }
    }

    /// Shift-to-tail ratio `h2 / h3`.
    pub fn r(&self) -> f64 {
        self.h2 / self.h3
    }

    /// `L(k) - P(k)`: the split-independent encoding share plus `h5`.
    pub fn constant(&self) -> f64 {
        2.0 * self.n as f64 * self.i_w * self.master_unit + self.h5
    }

    /// `P(k)`, the `k`-dependent part of the objective.
    pub fn p_of_k(&self, k: f64) -> f64 {
        let lg = log_ratio(self.n, k);
        self.h1 * k + self.h2 / k + self.h3 * lg / k + self.h4 * lg
    }

    /// `dP/dk`.
    pub fn derivative(&self, k: f64) -> f64 {
        let n = self.n as f64;
        let lg = log_ratio(self.n, k);
        self.h1 - self.h2 / (k * k) - self.h3 * lg / (k * k) + self.h3 / (k * (n - k)) + self.h4 / (n - k)
    }

    /// `|dP/dk|` divided by the sum of magnitudes of its terms.
    pub fn stationarity_residual(&self, k: f64) -> f64 {
        let n = self.n as f64;
        let lg = log_ratio(self.n, k);
        let terms = [
            self.h1,
            -self.h2 / (k * k),
            -self.h3 * lg / (k * k),
            self.h3 / (k * (n - k)),
            self.h4 / (n - k),
        ];
        let scale: f64 = terms.iter().map(|t| t.abs()).sum();
        if scale == 0.0 {
            0.0
        } else {
            terms.iter().sum::<f64>().abs() / scale
        }
    }
}

fn log_ratio(n: usize, k: f64) -> f64 {
    let n = n as f64;
    (n / (n - k)).ln()
}

fn check_k(k: f64, n: usize) -> Result<()> {
    if !(k >= 1.0 && k < n as f64) {
        return Err(Error::OutOfRange(format!("objective needs 1 <= k < n, got k={k}, n={n}")));
    }
    Ok(())
}

/// Approximate expected latency of a coded layer at real-valued `k`.
pub fn objective_l(k: f64, params: &SystemParams) -> Result<f64> {
    check_k(k, params.n)?;
    let s = WorkloadSizes::relaxed(&params.layer, k, params.n);
    let p = &params.profile;
    let master = (s.n_enc + s.n_dec) * (1.0 / p.mu_m + p.theta_m);
    let theta_sum = s.n_rec * p.theta_rec + s.n_cmp * p.theta_cmp + s.n_sen * p.theta_sen;
    let mu_sum = s.n_rec / p.mu_rec + s.n_cmp / p.mu_cmp + s.n_sen / p.mu_sen;
    Ok(master + theta_sum + mu_sum * log_ratio(params.n, k))
}

/// Minimiser of a unimodal function on `[lo, hi]` by golden-section search.
pub fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    while hi - lo > tol {
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
    }
    let mid = 0.5 * (lo + hi);
    [lo, mid, hi].into_iter().min_by(|a, b| f(*a).total_cmp(&f(*b))).unwrap_or(mid)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Optimum {
    /// Relaxed minimiser `k'` on `[1, n)`.
    pub k_relaxed: f64,
    /// Integer split `k°`.
    pub k_circ: usize,
    pub l_relaxed: f64,
    pub l_circ: f64,
}

/// Minimises `L` over `[1, n)` and rounds to the better neighbouring integer
/// in `{1, ..., n - 1}`.
pub fn minimize_l(params: &SystemParams) -> Result<Optimum> {
    params.validate()?;
    if params.n < 2 {
        return Err(Error::InvalidArgument(format!("optimising the split needs n >= 2, got {}", params.n)));
    }
    let c = params.coeffs();
    let hi = params.n as f64 - UPPER_GAP;
    let k_relaxed = golden_section(|k| c.p_of_k(k), 1.0, hi, SEARCH_TOL);
    let lower = (k_relaxed.floor() as usize).max(1);
    let upper = (k_relaxed.ceil() as usize).min(params.n - 1);
    let mut best = (lower, objective_l(lower as f64, params)?);
    if upper != lower {
        let l = objective_l(upper as f64, params)?;
        if l < best.1 {
            best = (upper, l);
        }
    }
    Ok(Optimum { k_relaxed, k_circ: best.0, l_relaxed: objective_l(k_relaxed, params)?, l_circ: best.1 })
}

/// `(k, L(k))` on a uniform grid of `points` values over `[1, n - 1]`.
pub fn l_curve(params: &SystemParams, points: usize) -> Result<Vec<(f64, f64)>> {
    if params.n < 2 || points < 2 {
        return Err(Error::InvalidArgument("curve needs n >= 2 and at least 2 points".into()));
    }
    let hi = (params.n - 1) as f64;
    (0..points)
        .map(|i| {
            let k = 1.0 + (hi - 1.0) * i as f64 / (points - 1) as f64;
            objective_l(k, params).map(|l| (k, l))
        })
        .collect()
}

/// Uncoded expected latency (`k = n`, no encoding) with the log approximation
/// `H_n ~ ln n`.
pub fn uncoded_expected(params: &SystemParams) -> f64 {
    let c = params.coeffs();
    let n = params.n as f64;
    let ln_n = n.ln();
    c.h2 / n + c.h3 * ln_n / n + c.h4 * ln_n + c.h5
}

/// Uncoded expected latency with the exact per-phase maximum `H_n` in place
/// of `ln n`.
pub fn uncoded_expected_harmonic(params: &SystemParams) -> f64 {
    let c = params.coeffs();
    let n = params.n as f64;
    let h = harmonic(params.n);
    c.h2 / n + c.h3 * h / n + c.h4 * h + c.h5
}

/// Coded expected latency at integer `k` with relaxed sizes, summing the
/// exact `k`-th order-statistic mean of each worker phase.
pub fn coded_expected_harmonic(k: usize, params: &SystemParams) -> Result<f64> {
    if k == 0 || k > params.n {
        return Err(Error::OutOfRange(format!("need 1 <= k <= n, got k={k}, n={}", params.n)));
    }
    let c = params.coeffs();
    let kf = k as f64;
    let dh = harmonic(params.n) - harmonic(params.n - k);
    Ok(c.h1 * kf + c.constant() + c.h2 / kf + (c.h3 / kf + c.h4) * dh)
}

/// Terms of the uncoded expectation, for the omitted-terms comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncodedTerms {
    pub shift: f64,
    pub tail: f64,
    pub overlap_tail: f64,
    pub overlap_shift: f64,
}

pub fn uncoded_terms(params: &SystemParams) -> UncodedTerms {
    let c = params.coeffs();
    let n = params.n as f64;
    UncodedTerms { shift: c.h2 / n, tail: c.h3 * n.ln() / n, overlap_tail: c.h4 * n.ln(), overlap_shift: c.h5 }
}

/// `h(n, k) = (k ln n - n ln(n / (n - k))) / (n - k)`.
pub fn straggler_gain(n: usize, k: f64) -> Result<f64> {
    check_k(k, n)?;
    let nf = n as f64;
    Ok((k * nf.ln() - nf * log_ratio(n, k)) / (nf - k))
}

/// Maximiser of `h(n, .)`: `n - e`.
pub fn k_sub_star(n: usize) -> f64 {
    n as f64 - std::f64::consts::E
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComparisonMode {
    /// Only the `h2` and `h3` terms, as in the closed-form sign condition.
    OmittedTerms,
    /// Full objective, including encoding/decoding and the overlap terms.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub k_sub_star: f64,
    pub r: f64,
    pub gain: f64,
    pub uncoded: f64,
    pub coded: f64,
    /// Uncoded minus coded expected latency.
    pub delta: f64,
    /// `delta / uncoded`.
    pub reduction: f64,
}

/// Coded (at `k = n - e`) against uncoded expected latency.
pub fn optimal_comparison(params: &SystemParams, mode: ComparisonMode) -> Result<Comparison> {
    if params.n < 3 {
        return Err(Error::InvalidArgument(format!("comparison needs n >= 3, got {}", params.n)));
    }
    let c = params.coeffs();
    let k = k_sub_star(params.n);
    let n = params.n as f64;
    let (uncoded, coded) = match mode {
        ComparisonMode::OmittedTerms => (c.h2 / n + c.h3 * n.ln() / n, c.h2 / k + c.h3 * log_ratio(params.n, k) / k),
        ComparisonMode::Full => (uncoded_expected(params), objective_l(k, params)?),
    };
    let delta = uncoded - coded;
    Ok(Comparison {
        k_sub_star: k,
        r: c.r(),
        gain: straggler_gain(params.n, k)?,
        uncoded,
        coded,
        delta,
        reduction: delta / uncoded,
    })
}

/// Omitted-terms reduction as a function of `(n, R)` alone.
pub fn reduction_at_ratio(n: usize, r: f64) -> f64 {
    let k = k_sub_star(n);
    let nf = n as f64;
    let uncoded = r / nf + nf.ln() / nf;
    let coded = r / k + log_ratio(n, k) / k;
    (uncoded - coded) / uncoded
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FailureComparison {
    pub k: usize,
    /// Increase of the `k`-th order-statistic mean when one of `n` workers
    /// is lost, in units of one piece's tail mean `N_piece / mu`.
    pub coded_increase_piece_units: f64,
    /// The same increase in units of the whole layer's tail mean `N / mu`.
    pub coded_increase_layer_units: f64,
    /// Increase in seconds under the per-phase order-statistic model.
    pub coded_increase_s: f64,
    /// Mean compute latency of one uncoded subtask, `R_cmp E[T_u]`.
    pub uncoded_increase_lower_bound_s: f64,
    pub r_cmp: f64,
    pub uncoded_s: f64,
}

/// Latency increase caused by one failed worker, coded at split `k` against
/// the uncoded re-execution lower bound.
pub fn failure_comparison(params: &SystemParams, k: usize) -> Result<FailureComparison> {
    let n = params.n;
    if k == 0 || k + 1 > n {
        return Err(Error::OutOfRange(format!("failure comparison needs 1 <= k <= n - 1, got k={k}, n={n}")));
    }
    let c = params.coeffs();
    let before = harmonic(n) - harmonic(n - k);
    let after = harmonic(n - 1) - harmonic(n - 1 - k);
    let piece_units = after - before;
    let kf = k as f64;
    let p = &params.profile;
    let cmp_i = c.n_cmp_t / n as f64 * (p.theta_cmp + 1.0 / p.mu_cmp);
    let uncoded = uncoded_expected(params);
    Ok(FailureComparison {
        k,
        coded_increase_piece_units: piece_units,
        coded_increase_layer_units: piece_units / kf,
        coded_increase_s: (c.h3 / kf + c.h4) * piece_units,
        uncoded_increase_lower_bound_s: cmp_i,
        r_cmp: cmp_i / uncoded,
        uncoded_s: uncoded,
    })
}
