//! Monte Carlo evaluation of split strategies under straggling and failures.
//!
//! Every trial owns a ChaCha8 stream selected by its index, so results do not
//! depend on thread scheduling. Each trial draws its unit exponentials in a
//! fixed order before any strategy-specific work; strategies and split counts
//! evaluated on the same `(seed, trial)` therefore see common random numbers.

pub mod models;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conv::LayerGeometry;
use crate::error::{Error, Result};
use crate::latency::{PhaseCoeffs, PhaseProfile, WorkloadSizes};
use crate::lt::{sample_encoding_vector, LtDecoder, RobustSoliton, RobustSolitonParams};
use crate::optimizer::{minimize_l, SystemParams};
use crate::splitter::{plan_balanced, plan_split, SplitPlan};

/// Compute slow-down of the designated straggler in the combined scenario.
pub const DEFAULT_SLOW_FACTOR: f64 = 1.68;
/// Default failure-detection timeout, as a multiple of the mean worker latency.
pub const DEFAULT_TIMEOUT_FACTOR: f64 = 5.0;
/// Trial count for approximation-gap studies.
pub const DEFAULT_GAP_TRIALS: usize = 300_000;
/// Trial count for quick property checks.
pub const DEFAULT_QUICK_TRIALS: usize = 10_000;

const BOOTSTRAP_BLOCKS: usize = 100;
const BOOTSTRAP_RESAMPLES: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    /// MDS-coded split into `k` pieces over `n` workers.
    Coded { k: usize },
    /// Coded with `k` chosen by the optimizer for the scenario.
    CodedAuto,
    /// `n` pieces, no redundancy.
    Uncoded,
    /// `floor(n / 2)` pieces, each on two workers.
    Replication,
    /// LT code with one output column per source symbol.
    LtFine,
    /// LT code over `k_s` equal pieces.
    LtCoarse { k_s: usize },
}

impl Strategy {
    pub fn label(&self) -> &'static str {
        match self {
            Strategy::Coded { .. } => "coded",
            Strategy::CodedAuto => "coded_auto",
            Strategy::Uncoded => "uncoded",
            Strategy::Replication => "replication",
            Strategy::LtFine => "lt_fine",
            Strategy::LtCoarse { .. } => "lt_coarse",
        }
    }
}

fn default_slow_factor() -> f64 {
    DEFAULT_SLOW_FACTOR
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scenario {
    Baseline,
    /// Extra exponential delay with mean `lambda_tr` times the phase mean on
    /// every receive and send.
    Straggling { lambda_tr: f64 },
    /// `n_f` random workers never return.
    Failure {
        n_f: usize,
        #[serde(default)]
        timeout_s: Option<f64>,
    },
    /// Failures plus one surviving worker whose compute is `slow_factor`
    /// times slower.
    StraggleAndFail {
        n_f: usize,
        #[serde(default = "default_slow_factor")]
        slow_factor: f64,
        #[serde(default)]
        timeout_s: Option<f64>,
    },
}

impl Scenario {
    pub fn validate(&self, n: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        match *self {
            Scenario::Baseline => Ok(()),
            Scenario::Straggling { lambda_tr } if !(lambda_tr >= 0.0 && lambda_tr.is_finite()) => {
                bad(format!("lambda_tr must be finite and >= 0, got {lambda_tr}"))
            }
            Scenario::Straggling { .. } => Ok(()),
            Scenario::Failure { n_f, timeout_s } | Scenario::StraggleAndFail { n_f, timeout_s, .. } => {
                if n_f >= n {
                    return bad(format!("n_f must be below n = {n}, got {n_f}"));
                }
                if let Some(t) = timeout_s {
                    if !(t > 0.0 && t.is_finite()) {
                        return bad(format!("timeout must be positive, got {t}"));
                    }
                }
                if let Scenario::StraggleAndFail { slow_factor, .. } = *self {
                    if !(slow_factor > 1.0 && slow_factor.is_finite()) {
                        return bad(format!("slow_factor must exceed 1, got {slow_factor}"));
                    }
                }
                Ok(())
            }
        }
    }

    fn lambda(&self) -> f64 {
        match *self {
            Scenario::Straggling { lambda_tr } => lambda_tr,
            _ => 0.0,
        }
    }

    fn failures(&self) -> usize {
        match *self {
            Scenario::Failure { n_f, .. } | Scenario::StraggleAndFail { n_f, .. } => n_f,
            _ => 0,
        }
    }

    fn timeout(&self) -> Option<f64> {
        match *self {
            Scenario::Failure { timeout_s, .. } | Scenario::StraggleAndFail { timeout_s, .. } => timeout_s,
            _ => None,
        }
    }

    fn slow_factor(&self) -> Option<f64> {
        match *self {
            Scenario::StraggleAndFail { slow_factor, .. } => Some(slow_factor),
            _ => None,
        }
    }
}

/// How the execution phase of a coded layer completes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Completion {
    /// Order statistic of whole-worker times `T_rec + T_cmp + T_sen`.
    #[default]
    Exact,
    /// Sum over phases of each phase's own order statistic, the structure
    /// assumed by the analytic objective.
    PerPhase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub total_s: f64,
    pub enc_s: f64,
    pub exec_s: f64,
    pub dec_s: f64,
    /// Completion time of each worker's first result; infinite if it failed.
    pub worker_s: Vec<f64>,
    pub retries: u32,
    pub failed: bool,
}

#[derive(Debug, Clone, Copy, Default)]
struct Outcome {
    total: f64,
    enc: f64,
    exec: f64,
    dec: f64,
    retries: u32,
    failed: bool,
}

impl Outcome {
    fn failed() -> Self {
        Self { total: f64::INFINITY, exec: f64::INFINITY, failed: true, ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub strategy: String,
    /// Pieces needed to finish (coded `k`, `n` for uncoded, LT source count).
    pub k: usize,
    pub trials: usize,
    pub mean_s: f64,
    pub std_s: f64,
    pub p50_s: f64,
    pub p95_s: f64,
    pub fail_rate: f64,
    pub mean_enc_s: f64,
    pub mean_exec_s: f64,
    pub mean_dec_s: f64,
    pub mean_retries: f64,
    /// Modelling assumptions that are not part of the analytic model.
    pub note: Option<String>,
}

/// Profile whose receive/send tail absorbs the mean scenario delay:
/// `1 / mu_eff = 1 / mu + lambda (theta + 1 / mu)`.
pub fn effective_profile(profile: &PhaseProfile, scenario: &Scenario) -> PhaseProfile {
    let lambda = scenario.lambda();
    let widen = |mu: f64, theta: f64| 1.0 / (1.0 / mu + lambda * (theta + 1.0 / mu));
    PhaseProfile {
        mu_rec: widen(profile.mu_rec, profile.theta_rec),
        mu_sen: widen(profile.mu_sen, profile.theta_sen),
        ..*profile
    }
}

/// Split chosen by the optimizer on the scenario-effective profile, capped
/// at `n - n_f` so that the surviving workers can always decode.
pub fn auto_k(params: &SystemParams, scenario: &Scenario) -> Result<usize> {
    let eff = SystemParams { profile: effective_profile(&params.profile, scenario), ..*params };
    Ok(minimize_l(&eff)?.k_circ.min(params.n - scenario.failures()))
}

#[derive(Debug, Clone)]
enum Kind {
    Coded,
    Uncoded,
    Replication { pairs: usize },
    Lt { soliton: RobustSoliton, enc_per_symbol: f64 },
}

#[derive(Debug, Clone)]
struct Layout {
    kind: Kind,
    /// Results needed (`k`).
    k: usize,
    /// Piece (or per-symbol) sizes; `n_enc`/`n_dec` are layer totals.
    sizes: WorkloadSizes,
    /// Sizes of the piece each worker runs.
    worker_sizes: Vec<WorkloadSizes>,
    rem_flops: f64,
    label: &'static str,
}

fn remainder_flops(geom: &LayerGeometry, plan: &SplitPlan) -> f64 {
    plan.remainder.map_or(0.0, |r| {
        2.0 * (geom.c_out * geom.h_out * r.out_width() * geom.c_in * geom.kernel * geom.kernel) as f64
    })
}

fn plan_for(geom: &LayerGeometry, k: usize) -> Result<SplitPlan> {
    plan_split(geom.kernel, geom.stride, geom.w_in, k)
}

/// Per-piece sizes of a balanced uncoded split into `parts` pieces.
fn balanced_sizes(geom: &LayerGeometry, parts: usize, n: usize) -> Result<Vec<WorkloadSizes>> {
    let plan = plan_balanced(geom.kernel, geom.stride, geom.w_in, parts)?;
    Ok(plan
        .pieces
        .iter()
        .map(|p| WorkloadSizes {
            n_enc: 0.0,
            n_dec: 0.0,
            ..WorkloadSizes::for_piece(geom, p.in_width() as f64, p.out_width() as f64, parts as f64, n)
        })
        .collect())
}

impl Layout {
    fn new(strategy: Strategy, params: &SystemParams, scenario: &Scenario) -> Result<Self> {
        params.validate()?;
        scenario.validate(params.n)?;
        let n = params.n;
        let g = &params.layer;
        let label = strategy.label();
        match strategy {
            Strategy::Coded { k } | Strategy::LtCoarse { k_s: k } if k == 0 => {
                Err(Error::InvalidArgument(format!("{label}: k must be at least 1")))
            }
            Strategy::Coded { k } => {
                if k >= n {
                    return Err(Error::InvalidArgument(format!("coded needs k <= n - 1, got k={k}, n={n}")));
                }
                let plan = plan_for(g, k)?;
                let sizes = WorkloadSizes::from_plan(g, &plan, n);
                Ok(Self { kind: Kind::Coded, k, sizes, worker_sizes: vec![sizes; n], rem_flops: remainder_flops(g, &plan), label })
            }
            Strategy::CodedAuto => {
                if n < 2 {
                    return Err(Error::InvalidArgument("coded needs n >= 2".into()));
                }
                let mut l = Self::new(Strategy::Coded { k: auto_k(params, scenario)? }, params, scenario)?;
                l.label = label;
                Ok(l)
            }
            Strategy::Uncoded => {
                let pieces = balanced_sizes(g, n, n)?;
                Ok(Self { kind: Kind::Uncoded, k: n, sizes: pieces[0], worker_sizes: pieces, rem_flops: 0.0, label })
            }
            Strategy::Replication => {
                let pairs = n / 2;
                if pairs == 0 {
                    return Err(Error::InvalidArgument("replication needs n >= 2".into()));
                }
                let pieces = balanced_sizes(g, pairs, n)?;
                let worker_sizes = (0..n).map(|w| pieces.get(w / 2).copied().unwrap_or_default()).collect();
                Ok(Self { kind: Kind::Replication { pairs }, k: pairs, sizes: pieces[0], worker_sizes, rem_flops: 0.0, label })
            }
            Strategy::LtFine | Strategy::LtCoarse { .. } => {
                let k = match strategy {
                    Strategy::LtCoarse { k_s } if k_s > n => {
                        return Err(Error::InvalidArgument(format!("lt_coarse needs k_s <= n, got {k_s}")))
                    }
                    Strategy::LtCoarse { k_s } => k_s,
                    _ => g.w_out,
                };
                let plan = plan_for(g, k)?;
                let soliton = RobustSoliton::new(RobustSolitonParams::with_defaults(k)?);
                let piece = WorkloadSizes::from_plan(g, &plan, n);
                let in_elems = (g.c_in * g.h_in * plan.piece_in_width()) as f64;
                let out_elems = (g.c_out * g.h_out * plan.piece_out_width()) as f64;
                let sizes = WorkloadSizes { n_enc: 0.0, n_dec: 2.0 * (k * k) as f64 * out_elems, ..piece };
                let enc_per_symbol = 2.0 * soliton.mean_degree() * in_elems;
                Ok(Self {
                    kind: Kind::Lt { soliton, enc_per_symbol },
                    k,
                    sizes,
                    worker_sizes: vec![sizes; n],
                    rem_flops: remainder_flops(g, &plan),
                    label,
                })
            }
        }
    }

    fn note(&self) -> Option<String> {
        match self.kind {
            Kind::Lt { .. } => Some(
                "lt timing: each worker returns symbols back to back, each costing an iid shift-exponential \
                 worker latency at one piece's sizes; encoding is charged per received symbol at \
                 2 x mean degree x piece input elements; decoding at 2 k^2 flops per piece output element"
                    .into(),
            ),
            _ => None,
        }
    }
}

/// Unit exponentials of one trial, drawn in a fixed order.
#[derive(Debug, Clone)]
struct Draws {
    enc: f64,
    dec: f64,
    rem: f64,
    /// Per worker: rec, cmp, sen, extra rec delay, extra sen delay.
    worker: Vec<[f64; 5]>,
    /// Random order of workers: the first `n_f` fail, the next one straggles.
    order: Vec<usize>,
    retry: Vec<[f64; 5]>,
}

fn unit_exp<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(Exp1)
}

fn draw5<R: Rng + ?Sized>(rng: &mut R) -> [f64; 5] {
    std::array::from_fn(|_| unit_exp(rng))
}

impl Draws {
    fn new<R: Rng + ?Sized>(rng: &mut R, n: usize, n_f: usize) -> Self {
        let enc = unit_exp(rng);
        let dec = unit_exp(rng);
        let rem = unit_exp(rng);
        let worker = (0..n).map(|_| draw5(rng)).collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let retry = (0..n_f).map(|_| draw5(rng)).collect();
        Self { enc, dec, rem, worker, order, retry }
    }
}

fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

/// Per-trial evaluation context for one layer.
struct Engine<'a> {
    n: usize,
    profile: &'a PhaseProfile,
    scenario: Scenario,
    completion: Completion,
}

fn phase_time(c: PhaseCoeffs, size: f64, e: f64) -> f64 {
    size * (c.theta + e / c.mu)
}

impl Engine<'_> {
    fn failed_mask(&self, d: &Draws) -> Vec<bool> {
        let mut mask = vec![false; self.n];
        for &w in &d.order[..self.scenario.failures()] {
            mask[w] = true;
        }
        mask
    }

    fn straggler(&self, d: &Draws) -> Option<usize> {
        self.scenario.slow_factor().map(|_| d.order[self.scenario.failures()])
    }

    /// `[rec, cmp, sen]` for one worker at `sizes`.
    fn phases(&self, e: &[f64; 5], sizes: &WorkloadSizes, slow: bool) -> [f64; 3] {
        let p = self.profile;
        let lambda = self.scenario.lambda();
        let rec = phase_time(p.receive(), sizes.n_rec, e[0]) + lambda * sizes.n_rec * p.receive().unit_mean() * e[3];
        let mut cmp = phase_time(p.compute(), sizes.n_cmp, e[1]);
        if slow {
            cmp *= self.scenario.slow_factor().unwrap_or(1.0);
        }
        let sen = phase_time(p.send(), sizes.n_sen, e[2]) + lambda * sizes.n_sen * p.send().unit_mean() * e[4];
        [rec, cmp, sen]
    }

    fn mean_worker(&self, sizes: &WorkloadSizes) -> f64 {
        let p = self.profile;
        let lambda = self.scenario.lambda();
        (1.0 + lambda) * (sizes.n_rec * p.receive().unit_mean() + sizes.n_sen * p.send().unit_mean())
            + sizes.n_cmp * p.compute().unit_mean()
    }

    fn timeout(&self, sizes: &WorkloadSizes) -> f64 {
        self.scenario.timeout().unwrap_or(DEFAULT_TIMEOUT_FACTOR * self.mean_worker(sizes))
    }

    fn master(&self, flops: f64, e: f64) -> f64 {
        phase_time(self.profile.master(), flops, e)
    }

    /// Worker phase times; failed workers get `None`.
    fn worker_phases(&self, layout: &Layout, d: &Draws) -> Vec<Option<[f64; 3]>> {
        let failed = self.failed_mask(d);
        let slow = self.straggler(d);
        (0..self.n)
            .map(|i| (!failed[i]).then(|| self.phases(&d.worker[i], &layout.worker_sizes[i], slow == Some(i))))
            .collect()
    }

    /// Coded layer with whole-worker completion: the `k`-th finish among
    /// survivors, without materialising per-phase times.
    fn coded_exact_exec(&self, layout: &Layout, d: &Draws) -> Option<f64> {
        let n_f = self.scenario.failures();
        let slow = self.straggler(d);
        let mut finishes: Vec<f64> = Vec::with_capacity(self.n);
        for i in 0..self.n {
            if d.order[..n_f].contains(&i) {
                continue;
            }
            let [rec, cmp, sen] = self.phases(&d.worker[i], &layout.worker_sizes[i], slow == Some(i));
            finishes.push(rec + cmp + sen);
        }
        (finishes.len() >= layout.k).then(|| kth_smallest(&mut finishes, layout.k))
    }

    fn evaluate<R: Rng + ?Sized>(&self, layout: &Layout, d: &Draws, rng: &mut R, workers_out: Option<&mut Vec<f64>>) -> Outcome {
        if workers_out.is_none() && matches!(layout.kind, Kind::Coded) && self.completion == Completion::Exact {
            let Some(exec) = self.coded_exact_exec(layout, d) else {
                return Outcome::failed();
            };
            let t_rem = if layout.rem_flops > 0.0 { self.master(layout.rem_flops, d.rem) } else { 0.0 };
            let enc = self.master(layout.sizes.n_enc, d.enc);
            let dec = self.master(layout.sizes.n_dec, d.dec);
            let exec = exec.max(t_rem);
            return Outcome { total: enc + exec + dec, enc, exec, dec, retries: 0, failed: false };
        }
        let phases = self.worker_phases(layout, d);
        if let Some(out) = workers_out {
            *out = phases.iter().map(|p| p.map_or(f64::INFINITY, |t| t.iter().sum())).collect();
        }
        let t_rem = if layout.rem_flops > 0.0 { self.master(layout.rem_flops, d.rem) } else { 0.0 };
        let (exec, retries, symbols) = match &layout.kind {
            Kind::Coded => match self.order_stat(&phases, layout.k) {
                Some(t) => (t, 0, 0),
                None => return Outcome::failed(),
            },
            Kind::Uncoded => match self.uncoded_exec(layout, &phases, d) {
                Some((t, r)) => (t, r, 0),
                None => return Outcome::failed(),
            },
            Kind::Replication { pairs } => match self.replication_exec(layout, *pairs, &phases, d) {
                Some((t, r)) => (t, r, 0),
                None => return Outcome::failed(),
            },
            Kind::Lt { soliton, .. } => match self.lt_exec(layout, soliton, &phases, self.straggler(d), rng) {
                Some((t, s)) => (t, 0, s),
                None => return Outcome::failed(),
            },
        };
        let exec = exec.max(t_rem);
        let enc_flops = match &layout.kind {
            Kind::Lt { enc_per_symbol, .. } => enc_per_symbol * symbols as f64,
            _ => layout.sizes.n_enc,
        };
        let enc = self.master(enc_flops, d.enc);
        let dec = self.master(layout.sizes.n_dec, d.dec);
        Outcome { total: enc + exec + dec, enc, exec, dec, retries, failed: false }
    }

    fn order_stat(&self, phases: &[Option<[f64; 3]>], k: usize) -> Option<f64> {
        let alive: Vec<[f64; 3]> = phases.iter().flatten().copied().collect();
        if alive.len() < k {
            return None;
        }
        match self.completion {
            Completion::Exact => {
                let mut t: Vec<f64> = alive.iter().map(|p| p.iter().sum()).collect();
                Some(kth_smallest(&mut t, k))
            }
            Completion::PerPhase => Some(
                (0..3)
                    .map(|j| kth_smallest(&mut alive.iter().map(|p| p[j]).collect::<Vec<_>>(), k))
                    .sum(),
            ),
        }
    }

    /// Re-runs `lost` pieces on the earliest-finishing healthy workers once
    /// the timeout has passed. Returns the latest retry finish.
    fn retry_lost(&self, lost: &[WorkloadSizes], finishes: &[f64], d: &Draws) -> Option<f64> {
        if lost.is_empty() {
            return Some(0.0);
        }
        if finishes.len() < lost.len() {
            return None;
        }
        let mut sorted = finishes.to_vec();
        sorted.sort_by(f64::total_cmp);
        Some(
            lost.iter()
                .enumerate()
                .map(|(j, sizes)| {
                    self.timeout(sizes).max(sorted[j]) + self.phases(&d.retry[j], sizes, false).iter().sum::<f64>()
                })
                .fold(0.0, f64::max),
        )
    }

    fn uncoded_exec(&self, layout: &Layout, phases: &[Option<[f64; 3]>], d: &Draws) -> Option<(f64, u32)> {
        let lost: Vec<WorkloadSizes> =
            phases.iter().zip(&layout.worker_sizes).filter(|(p, _)| p.is_none()).map(|(_, s)| *s).collect();
        let alive: Vec<[f64; 3]> = phases.iter().flatten().copied().collect();
        let finishes: Vec<f64> = alive.iter().map(|p| p.iter().sum()).collect();
        let base = match self.completion {
            Completion::Exact => finishes.iter().copied().fold(0.0, f64::max),
            Completion::PerPhase => (0..3).map(|j| alive.iter().map(|p| p[j]).fold(0.0, f64::max)).sum(),
        };
        let retry = self.retry_lost(&lost, &finishes, d)?;
        Some((base.max(retry), lost.len() as u32))
    }

    fn replication_exec(&self, layout: &Layout, pairs: usize, phases: &[Option<[f64; 3]>], d: &Draws) -> Option<(f64, u32)> {
        let total = |i: usize| phases[i].map(|p| p.iter().sum::<f64>());
        let finishes: Vec<f64> = (0..self.n).filter_map(total).collect();
        let mut lost = Vec::new();
        let mut exec: f64 = 0.0;
        for p in 0..pairs {
            match (total(2 * p), total(2 * p + 1)) {
                (None, None) => lost.push(layout.worker_sizes[2 * p]),
                (a, b) => exec = exec.max(a.unwrap_or(f64::INFINITY).min(b.unwrap_or(f64::INFINITY))),
            }
        }
        let retry = self.retry_lost(&lost, &finishes, d)?;
        Some((exec.max(retry), lost.len() as u32))
    }

    /// Time at which the received symbols first reach full rank, and the
    /// number of symbols received by then.
    fn lt_exec<R: Rng + ?Sized>(
        &self,
        layout: &Layout,
        soliton: &RobustSoliton,
        phases: &[Option<[f64; 3]>],
        slow: Option<usize>,
        rng: &mut R,
    ) -> Option<(f64, usize)> {
        let k = layout.k;
        let mut next: Vec<Option<f64>> = phases.iter().map(|p| p.map(|t| t.iter().sum())).collect();
        let mut decoder = LtDecoder::<f64>::new(k);
        let cap = 20 * k + 100;
        for received in 1..=cap {
            let (w, t) = next
                .iter()
                .enumerate()
                .filter_map(|(i, t)| t.map(|t| (i, t)))
                .min_by(|a, b| a.1.total_cmp(&b.1))?;
            decoder.push_vector(&sample_encoding_vector(soliton, rng));
            if decoder.is_complete() {
                return Some((t, received));
            }
            let e = draw5(rng);
            next[w] = Some(t + self.phases(&e, &layout.sizes, slow == Some(w)).iter().sum::<f64>());
        }
        None
    }
}

fn kth_smallest(v: &mut [f64], k: usize) -> f64 {
    *v.select_nth_unstable_by(k - 1, f64::total_cmp).1
}

fn run_parallel<T: Send>(trials: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    (0..trials).into_par_iter().map(f).collect()
}

fn check_trials(trials: usize) -> Result<()> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    Ok(())
}

/// Per-trial results including each worker's completion time.
pub fn simulate_trials(
    strategy: Strategy,
    params: &SystemParams,
    scenario: &Scenario,
    trials: usize,
    seed: u64,
    completion: Completion,
) -> Result<Vec<TrialResult>> {
    check_trials(trials)?;
    let layout = Layout::new(strategy, params, scenario)?;
    let engine = Engine { n: params.n, profile: &params.profile, scenario: *scenario, completion };
    Ok(run_parallel(trials, |t| {
        let mut rng = trial_rng(seed, t);
        let d = Draws::new(&mut rng, params.n, scenario.failures());
        let mut workers = Vec::new();
        let o = engine.evaluate(&layout, &d, &mut rng, Some(&mut workers));
        TrialResult {
            total_s: o.total,
            enc_s: o.enc,
            exec_s: o.exec,
            dec_s: o.dec,
            worker_s: workers,
            retries: o.retries,
            failed: o.failed,
        }
    }))
}

/// Summary statistics of one strategy on one layer.
pub fn simulate_layer(
    strategy: Strategy,
    params: &SystemParams,
    scenario: &Scenario,
    trials: usize,
    seed: u64,
    completion: Completion,
) -> Result<Summary> {
    check_trials(trials)?;
    let layout = Layout::new(strategy, params, scenario)?;
    let engine = Engine { n: params.n, profile: &params.profile, scenario: *scenario, completion };
    let outcomes = run_parallel(trials, |t| {
        let mut rng = trial_rng(seed, t);
        let d = Draws::new(&mut rng, params.n, scenario.failures());
        engine.evaluate(&layout, &d, &mut rng, None)
    });
    Ok(summarize(layout.label, layout.k, &outcomes, layout.note()))
}

/// Coded summaries for every `k` in `1..n`, evaluated on common draws.
/// Entry `k - 1` equals `simulate_layer(Coded { k }, ..)` exactly.
pub fn coded_sweep(params: &SystemParams, scenario: &Scenario, trials: usize, seed: u64, completion: Completion) -> Result<Vec<Summary>> {
    let per_k = coded_sweep_outcomes(params, scenario, trials, seed, completion)?;
    Ok(per_k.iter().enumerate().map(|(i, o)| summarize("coded", i + 1, o, None)).collect())
}

fn coded_sweep_outcomes(
    params: &SystemParams,
    scenario: &Scenario,
    trials: usize,
    seed: u64,
    completion: Completion,
) -> Result<Vec<Vec<Outcome>>> {
    let rows = coded_sweep_rows(params, scenario, trials, seed, completion, |o| o)?;
    Ok((0..params.n - 1).map(|i| rows.iter().map(|r| r[i]).collect()).collect())
}

/// One row per trial holding `pick` of the outcome for every `k` in `1..n`.
fn coded_sweep_rows<T: Send>(
    params: &SystemParams,
    scenario: &Scenario,
    trials: usize,
    seed: u64,
    completion: Completion,
    pick: impl Fn(Outcome) -> T + Sync + Send,
) -> Result<Vec<Vec<T>>> {
    check_trials(trials)?;
    if params.n < 2 {
        return Err(Error::InvalidArgument("coded sweep needs n >= 2".into()));
    }
    let layouts: Vec<Layout> = (1..params.n)
        .map(|k| Layout::new(Strategy::Coded { k }, params, scenario))
        .collect::<Result<_>>()?;
    let engine = Engine { n: params.n, profile: &params.profile, scenario: *scenario, completion };
    Ok(run_parallel(trials, |t| {
        let mut rng = trial_rng(seed, t);
        let d = Draws::new(&mut rng, params.n, scenario.failures());
        layouts.iter().map(|l| pick(engine.evaluate(l, &d, &mut rng, None))).collect()
    }))
}

fn summarize(label: &str, k: usize, outcomes: &[Outcome], note: Option<String>) -> Summary {
    let ok: Vec<&Outcome> = outcomes.iter().filter(|o| !o.failed).collect();
    let m = ok.len() as f64;
    let mean = |f: fn(&Outcome) -> f64| if ok.is_empty() { f64::NAN } else { ok.iter().map(|o| f(o)).sum::<f64>() / m };
    let mean_s = mean(|o| o.total);
    let var = if ok.len() > 1 { ok.iter().map(|o| (o.total - mean_s).powi(2)).sum::<f64>() / (m - 1.0) } else { 0.0 };
    let mut totals: Vec<f64> = ok.iter().map(|o| o.total).collect();
    totals.sort_by(f64::total_cmp);
    Summary {
        strategy: label.to_string(),
        k,
        trials: outcomes.len(),
        mean_s,
        std_s: var.sqrt(),
        p50_s: quantile_sorted(&totals, 0.5),
        p95_s: quantile_sorted(&totals, 0.95),
        fail_rate: (outcomes.len() - ok.len()) as f64 / outcomes.len() as f64,
        mean_enc_s: mean(|o| o.enc),
        mean_exec_s: mean(|o| o.exec),
        mean_dec_s: mean(|o| o.dec),
        mean_retries: mean(|o| o.retries as f64),
        note,
    }
}

/// Nearest-rank quantile of sorted data; NaN when empty.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalOptimum {
    pub k_star: usize,
    /// Simulated mean latency for `k = 1..n-1`.
    pub means: Vec<f64>,
    /// Share of bootstrap resamples whose argmin is `k_star`.
    pub confidence: f64,
}

fn argmin(v: &[f64]) -> usize {
    v.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map_or(0, |(i, _)| i)
}

/// Split with the lowest simulated mean latency, with a block-bootstrap
/// confidence for the argmin.
pub fn empirical_optimal_k(
    params: &SystemParams,
    scenario: &Scenario,
    trials: usize,
    seed: u64,
    completion: Completion,
) -> Result<EmpiricalOptimum> {
    let rows = coded_sweep_rows(params, scenario, trials, seed, completion, |o| if o.failed { f64::INFINITY } else { o.total })?;
    let per_k: Vec<Vec<f64>> = (0..params.n - 1).map(|i| rows.iter().map(|r| r[i]).collect()).collect();
    let means: Vec<f64> = per_k.iter().map(|o| o.iter().sum::<f64>() / trials as f64).collect();
    let k_star = argmin(&means) + 1;
    let blocks = BOOTSTRAP_BLOCKS.min(trials);
    let block_means: Vec<Vec<f64>> = per_k
        .iter()
        .map(|o| {
            (0..blocks)
                .map(|b| {
                    let (lo, hi) = (b * trials / blocks, (b + 1) * trials / blocks);
                    o[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
                })
                .collect()
        })
        .collect();
    let mut rng = trial_rng(seed, usize::MAX);
    let mut hits = 0;
    for _ in 0..BOOTSTRAP_RESAMPLES {
        let picks: Vec<usize> = (0..blocks).map(|_| rng.random_range(0..blocks)).collect();
        let resampled: Vec<f64> = block_means.iter().map(|bm| picks.iter().map(|&p| bm[p]).sum::<f64>()).collect();
        if argmin(&resampled) + 1 == k_star {
            hits += 1;
        }
    }
    Ok(EmpiricalOptimum { k_star, means, confidence: hits as f64 / BOOTSTRAP_RESAMPLES as f64 })
}

/// One stage of an inference pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PipelineLayer {
    /// High-complexity convolution, distributed across workers.
    Distributed { geometry: LayerGeometry },
    /// Low-complexity operation run on the master.
    Local { name: String, flops: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub total: Summary,
    /// Mean latency of each layer over successful trials.
    pub layer_means_s: Vec<f64>,
    /// Split used by each distributed layer (0 for local layers).
    pub layer_k: Vec<usize>,
}

/// End-to-end latency of a layer sequence.
pub fn simulate_pipeline(
    layers: &[PipelineLayer],
    strategy: Strategy,
    n: usize,
    profile: &PhaseProfile,
    scenario: &Scenario,
    trials: usize,
    seed: u64,
    completion: Completion,
) -> Result<PipelineSummary> {
    check_trials(trials)?;
    if layers.is_empty() {
        return Err(Error::InvalidArgument("pipeline needs at least one layer".into()));
    }
    let layouts: Vec<Option<Layout>> = layers
        .iter()
        .map(|l| match l {
            PipelineLayer::Distributed { geometry } => {
                Layout::new(strategy, &SystemParams::new(n, *geometry, *profile)?, scenario).map(Some)
            }
            PipelineLayer::Local { flops, .. } if !(*flops >= 0.0) => {
                Err(Error::InvalidArgument(format!("local flops must be >= 0, got {flops}")))
            }
            PipelineLayer::Local { .. } => Ok(None),
        })
        .collect::<Result<_>>()?;
    profile.validate()?;
    let engine = Engine { n, profile, scenario: *scenario, completion };
    let rows = run_parallel(trials, |t| {
        let mut rng = trial_rng(seed, t);
        let mut per_layer = Vec::with_capacity(layers.len());
        for (layer, layout) in layers.iter().zip(&layouts) {
            let o = match (layer, layout) {
                (_, Some(layout)) => {
                    let d = Draws::new(&mut rng, n, scenario.failures());
                    engine.evaluate(layout, &d, &mut rng, None)
                }
                (PipelineLayer::Local { flops, .. }, None) => {
                    let t = engine.master(*flops, unit_exp(&mut rng));
                    Outcome { total: t, exec: t, ..Default::default() }
                }
                (PipelineLayer::Distributed { .. }, None) => unreachable!("distributed layers always have a layout"),
            };
            per_layer.push(o);
        }
        per_layer
    });
    let totals: Vec<Outcome> = rows
        .iter()
        .map(|r| {
            if r.iter().any(|o| o.failed) {
                return Outcome::failed();
            }
            r.iter().fold(Outcome::default(), |acc, o| Outcome {
                total: acc.total + o.total,
                enc: acc.enc + o.enc,
                exec: acc.exec + o.exec,
                dec: acc.dec + o.dec,
                retries: acc.retries + o.retries,
                failed: false,
            })
        })
        .collect();
    let ok: Vec<&Vec<Outcome>> = rows.iter().filter(|r| !r.iter().any(|o| o.failed)).collect();
    let layer_means_s = (0..layers.len())
        .map(|i| if ok.is_empty() { f64::NAN } else { ok.iter().map(|r| r[i].total).sum::<f64>() / ok.len() as f64 })
        .collect();
    let layer_k = layouts.iter().map(|l| l.as_ref().map_or(0, |l| l.k)).collect();
    let note = layouts.iter().flatten().find_map(Layout::note);
    Ok(PipelineSummary { total: summarize(strategy.label(), n, &totals, note), layer_means_s, layer_k })
}
