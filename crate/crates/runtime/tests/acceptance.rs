//! Acceptance suite: one test per criterion, each writing a single
//! `criterion N PASS|FAIL` line to stderr (uncaptured) before asserting.

mod common;

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::thread;
use std::time::{Duration, Instant};

use coded_conv::latency::{expected_kth_order_stat, ShiftExp};
use coded_conv::lt::{combine, lt_overhead_trial, sample_encoding_vector, DecodeStatus, LtDecoder, RobustSoliton, RobustSolitonParams};
use coded_conv::optimizer::{
    failure_comparison, k_sub_star, minimize_l, objective_l, optimal_comparison, reduction_at_ratio, straggler_gain, ComparisonMode,
    SystemParams,
};
use coded_conv::simulator::models::vgg16_like;
use coded_conv::simulator::{empirical_optimal_k, simulate_layer, simulate_pipeline, Completion, Scenario, Strategy};
use coded_conv::splitter::dependency_oracle;
use coded_conv::{coded_forward, plan_split, ConvSpec, LayerGeometry, PhaseProfile, Tensor4};
use coded_conv_runtime::master::{preload, run_inference, Cluster, Mode, RunOptions};
use coded_conv_runtime::model::load_model;
use common::{spawn_workers, write_two_conv_model, BIN};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn report(id: u32, name: &str, outcome: Outcome) {
    let (tag, detail) = match &outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    let mut err = std::io::stderr().lock();
    writeln!(err, "criterion {id:>2} {tag}  {name}: {detail}").unwrap();
    drop(err);
    if let Err(d) = outcome {
        panic!("criterion {id} ({name}) failed: {d}");
    }
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo.ln()..hi.ln()).exp()
}

/// Random layer (`K >= S`) and profile spanning several orders of magnitude.
fn random_system(rng: &mut ChaCha8Rng, n: usize) -> SystemParams {
    let kernel = [1, 3, 5][rng.random_range(0..3)];
    let stride = rng.random_range(1..=2.min(kernel));
    let layer = LayerGeometry::new(
        rng.random_range(1..64),
        rng.random_range(1..64),
        kernel,
        stride,
        rng.random_range(8..64),
        rng.random_range(64..512),
    )
    .unwrap();
    let profile = PhaseProfile {
        mu_m: log_uniform(rng, 1e8, 1e11),
        theta_m: log_uniform(rng, 1e-11, 1e-8),
        mu_cmp: log_uniform(rng, 1e6, 1e9),
        theta_cmp: log_uniform(rng, 1e-10, 1e-7),
        mu_rec: log_uniform(rng, 1e6, 1e10),
        theta_rec: log_uniform(rng, 1e-9, 1e-6),
        mu_sen: log_uniform(rng, 1e6, 1e10),
        theta_sen: log_uniform(rng, 1e-9, 1e-6),
    };
    SystemParams::new(n, layer, profile).unwrap()
}

/// Parameters where transmission and compute tails are moderate and the
/// master is fast.
fn benign_profile(rng: &mut ChaCha8Rng) -> PhaseProfile {
    let mu_tr = log_uniform(rng, 1e8, 1e9);
    let theta_tr = log_uniform(rng, 1e-8, 1e-7);
    PhaseProfile {
        mu_m: log_uniform(rng, 1e9, 1e10),
        theta_m: log_uniform(rng, 1e-10, 1e-9),
        mu_cmp: log_uniform(rng, 1e7, 1e8),
        theta_cmp: log_uniform(rng, 1e-9, 1e-8),
        mu_rec: mu_tr,
        theta_rec: theta_tr,
        mu_sen: mu_tr,
        theta_sen: theta_tr,
    }
}

/// `W_O = 2520`, divisible by every `k <= 10`.
fn wide_layer() -> LayerGeometry {
    LayerGeometry::new(32, 32, 3, 1, 18, 2522).unwrap()
}

fn coding_correctness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let n = rng.random_range(2..=10);
        let k = rng.random_range(1..n);
        let (kernel, stride, padding): (usize, usize, usize) = (rng.random_range(1..=5), rng.random_range(1..=2), rng.random_range(0..=2));
        let (c_in, c_out) = (rng.random_range(1..=3), rng.random_range(1..=3));
        let height = kernel + rng.random_range(0..4);
        let w_out = rng.random_range(k..=k + 20);
        let width = ((w_out - 1) * stride + kernel).saturating_sub(2 * padding).max(1);
        let weights = Tensor4::from_fn([c_out, c_in, kernel, kernel], |_, _, _, _| rng.random_range(-1.0..1.0)).unwrap();
        let bias = rng.random_bool(0.5).then(|| (0..c_out).map(|_| rng.random_range(-1.0..1.0)).collect());
        let spec = ConvSpec::new(c_in, c_out, kernel, stride, padding, weights, bias).unwrap();
        let x = Tensor4::from_fn([1, c_in, height, width], |_, _, _, _| rng.random_range(-1.0..1.0)).unwrap();
        let subset = rand::seq::index::sample(&mut rng, n, k).into_vec();
        let want = spec.forward(&x).map_err(|e| format!("case {case}: {e}"))?;
        if want.width() < k {
            continue;
        }
        let got = coded_forward(&spec, &x, n, k, &subset).map_err(|e| format!("case {case}: {e}"))?;
        let err = got.relative_error(&want).unwrap();
        worst = worst.max(err);
        ensure(err < 1e-5, || format!("case {case} (n={n}, k={k}, subset={subset:?}): relative error {err:e}"))?;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1} s"))?;
    Ok(format!("1000 cases, worst relative error {worst:.2e}, {secs:.2} s"))
}

fn split_correctness() -> Outcome {
    let start = Instant::now();
    let mut pieces = 0;
    for kernel in [1, 3, 5, 7] {
        for stride in [1, 2] {
            for w_out in 1..=64 {
                let in_width = (w_out - 1) * stride + kernel;
                for k in 1..=w_out.min(16) {
                    let plan = plan_split(kernel, stride, in_width, k).map_err(|e| e.to_string())?;
                    for p in plan.pieces.iter().chain(plan.remainder.iter()) {
                        let want = dependency_oracle(kernel, stride, p.out_start, p.out_end);
                        ensure((p.in_start, p.in_end) == want, || format!("K={kernel} S={stride} W_O={w_out} k={k}: {p:?} vs {want:?}"))?;
                        pieces += 1;
                    }
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1} s"))?;
    Ok(format!("{pieces} pieces, 0 mismatches, {secs:.2} s"))
}

fn convexity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut points = 0;
    for n in 3..=30 {
        for set in 0..100 {
            let p = random_system(&mut rng, n);
            let hi = n as f64 - 0.1;
            let step = (hi - 1.0) / 400.0;
            let l = |k: f64| objective_l(k, &p).unwrap();
            let grid: Vec<f64> = (0..=400).map(|i| l(1.0 + step * i as f64)).collect();
            for i in 1..400 {
                let k = 1.0 + step * i as f64;
                let d2 = grid[i - 1] - 2.0 * grid[i] + grid[i + 1];
                let scale = grid[i].abs() * 1e-13;
                ensure(d2 > -scale, || format!("n={n} set={set} k={k:.3}: second difference {d2:e}"))?;
                points += 1;
            }
        }
    }
    Ok(format!("{points} second differences positive over n = 3..30, 100 systems each"))
}

fn approximation_gap() -> Outcome {
    const SYSTEMS: usize = 50;
    const TRIALS: usize = 300_000;
    let n = 20;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut close = 0;
    let mut worst_gap = 0.0f64;
    let mut far = Vec::new();
    for s in 0..SYSTEMS {
        let p = SystemParams::new(n, wide_layer(), benign_profile(&mut rng)).unwrap();
        let k_circ = minimize_l(&p).unwrap().k_circ;
        let emp = empirical_optimal_k(&p, &Scenario::Baseline, TRIALS, 1000 + s as u64, Completion::Exact).map_err(|e| e.to_string())?;
        if emp.k_star.abs_diff(k_circ) <= 1 {
            close += 1;
        } else {
            far.push((s, emp.k_star, k_circ));
        }
        let gap = emp.means[k_circ - 1] / emp.means[emp.k_star - 1] - 1.0;
        worst_gap = worst_gap.max(gap);
    }
    let share = close as f64 / SYSTEMS as f64;
    ensure(share >= 0.9, || format!("|k* - k_circ| <= 1 in {close}/{SYSTEMS}; misses {far:?}"))?;
    ensure(worst_gap <= 0.05, || format!("latency gap {:.2}% above 5%", 100.0 * worst_gap))?;
    Ok(format!("|k* - k_circ| <= 1 in {close}/{SYSTEMS}, worst latency gap {:.2}% ({TRIALS} trials, n = {n})", 100.0 * worst_gap))
}

fn sensitivity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let names = ["mu_cmp", "mu_m", "mu_rec", "mu_sen", "theta_cmp", "theta_rec", "theta_sen", "theta_m"];
    let mut sweeps = 0;
    for _ in 0..200 {
        let n = rng.random_range(3..=30);
        let base = random_system(&mut rng, n);
        for (which, name) in names.iter().enumerate() {
            let ks: Vec<usize> = (0..10)
                .map(|i| {
                    let factor = 10f64.powf(-2.0 + 4.0 * i as f64 / 9.0);
                    let mut q = base.profile;
                    let field = match which {
                        0 => &mut q.mu_cmp,
                        1 => &mut q.mu_m,
                        2 => &mut q.mu_rec,
                        3 => &mut q.mu_sen,
                        4 => &mut q.theta_cmp,
                        5 => &mut q.theta_rec,
                        6 => &mut q.theta_sen,
                        _ => &mut q.theta_m,
                    };
                    *field *= factor;
                    minimize_l(&SystemParams { profile: q, ..base }).unwrap().k_circ
                })
                .collect();
            let ok = if which == 7 { ks.windows(2).all(|w| w[1] <= w[0]) } else { ks.windows(2).all(|w| w[1] >= w[0]) };
            ensure(ok, || format!("{name} sweep gives {ks:?}"))?;
            sweeps += 1;
        }
    }
    Ok(format!("{sweeps} ten-point sweeps, 0 violations"))
}

fn prop2_constants() -> Outcome {
    let h = straggler_gain(10, k_sub_star(10)).unwrap();
    let h_ok = (h - 1.379).abs() <= 0.001;
    let mut grid_min = f64::INFINITY;
    for n in 10..=30 {
        for r in [0.25, 0.5, 0.75, 1.0] {
            grid_min = grid_min.min(reduction_at_ratio(n, r));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let p = SystemParams::new(10, wide_layer(), benign_profile(&mut rng)).unwrap();
    let closed = optimal_comparison(&p, ComparisonMode::OmittedTerms).unwrap();
    let k = k_sub_star(10).round() as usize;
    let coded = simulate_layer(Strategy::Coded { k }, &p, &Scenario::Baseline, 100_000, 6, Completion::Exact).unwrap();
    let uncoded = simulate_layer(Strategy::Uncoded, &p, &Scenario::Baseline, 100_000, 6, Completion::Exact).unwrap();
    let mc_delta = uncoded.mean_s - coded.mean_s;
    let sign_ok = (mc_delta > 0.0) == (closed.delta > 0.0);
    let detail = format!(
        "h(10, 10 - e) = {h:.6} (target 1.379 +/- 0.001); min reduction on grid {grid_min:.4}; R = {:.3}, closed-form delta {:.3e} s, Monte Carlo delta {mc_delta:.3e} s",
        closed.r, closed.delta
    );
    if h_ok && grid_min > 0.0 && sign_ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn prop3_failures() -> Outcome {
    let mut worst = 0.0f64;
    for n in 10..=200 {
        let k = k_sub_star(n).round() as usize;
        let p = SystemParams::new(n, LayerGeometry::new(4, 4, 3, 1, 8, 2 + 4 * n).unwrap(), benign_profile(&mut ChaCha8Rng::seed_from_u64(0)))
            .unwrap();
        let f = failure_comparison(&p, k).unwrap();
        worst = worst.max(f.coded_increase_layer_units);
        ensure(f.coded_increase_layer_units < 0.09, || format!("n={n} k={k}: increase {:.4} N/mu", f.coded_increase_layer_units))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut checked = 0;
    for s in 0..6 {
        let p = SystemParams::new(10, wide_layer(), benign_profile(&mut rng)).unwrap();
        let k = minimize_l(&p).unwrap().k_circ.min(9);
        let f = failure_comparison(&p, k).unwrap();
        if f.r_cmp <= 0.1 {
            continue;
        }
        let run = |strategy, sc: &Scenario| simulate_layer(strategy, &p, sc, 20_000, 70 + s, Completion::Exact).unwrap().mean_s;
        let fail = Scenario::Failure { n_f: 1, timeout_s: None };
        let u_rise = run(Strategy::Uncoded, &fail) - run(Strategy::Uncoded, &Scenario::Baseline);
        let c_rise = run(Strategy::Coded { k }, &fail) - run(Strategy::Coded { k }, &Scenario::Baseline);
        ensure(u_rise >= f.uncoded_increase_lower_bound_s, || {
            format!("system {s}: uncoded rise {u_rise:.3e} s below bound {:.3e} s", f.uncoded_increase_lower_bound_s)
        })?;
        ensure(c_rise < u_rise, || format!("system {s}: coded rise {c_rise:.3e} s not below uncoded {u_rise:.3e} s"))?;
        checked += 1;
    }
    ensure(checked >= 3, || format!("only {checked} systems had R_cmp > 0.1"))?;
    Ok(format!("max coded increase {worst:.4} N/mu over n = 10..200; {checked} Monte Carlo systems with R_cmp > 0.1 agree"))
}

fn latency_model() -> Outcome {
    let mut worst_ks = 0.0f64;
    for (mu, theta, scale) in [(2.0, 0.5, 1.0), (1e7, 3e-9, 5e5), (40.0, 0.0, 3.0)] {
        let d = ShiftExp::new(mu, theta, scale).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut xs: Vec<f64> = (0..100_000).map(|_| d.sample(&mut rng)).collect();
        xs.sort_by(f64::total_cmp);
        let m = xs.len() as f64;
        let ks = xs.iter().enumerate().fold(0.0f64, |acc, (i, &x)| {
            let f = d.cdf(x);
            acc.max((f - i as f64 / m).abs()).max(((i + 1) as f64 / m - f).abs())
        });
        worst_ks = worst_ks.max(ks);
        ensure(ks < 0.01, || format!("KS {ks:.4} at ({mu}, {theta}, {scale})"))?;
    }
    let d = ShiftExp::new(2.0, 0.5, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let xs: Vec<f64> = (0..500).map(|_| d.sample(&mut rng)).collect();
    let f = ShiftExp::fit(&xs, 1.0).unwrap();
    let (mu_err, theta_err) = ((f.mu - 2.0).abs() / 2.0, (f.theta - 0.5).abs() / 0.5);
    ensure(mu_err < 0.05 && theta_err < 0.02, || format!("fit errors mu {mu_err:.4}, theta {theta_err:.4}"))?;
    let d = ShiftExp::new(3.0, 0.2, 2.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_os = 0.0f64;
    for (n, k) in [(5, 1), (10, 7), (10, 10), (20, 13)] {
        let trials = 50_000;
        let mean = (0..trials)
            .map(|_| {
                let mut v: Vec<f64> = (0..n).map(|_| d.sample(&mut rng)).collect();
                v.sort_by(f64::total_cmp);
                v[k - 1]
            })
            .sum::<f64>()
            / trials as f64;
        let exact = expected_kth_order_stat(n, k, &d).unwrap();
        let rel = (mean - exact).abs() / exact;
        worst_os = worst_os.max(rel);
        ensure(rel < 0.02, || format!("order statistic n={n} k={k}: {mean} vs {exact}"))?;
    }
    Ok(format!(
        "worst KS {worst_ks:.4}; fit errors mu {:.2}%, theta {:.3}%; worst order-statistic error {:.2}%",
        100.0 * mu_err,
        100.0 * theta_err,
        100.0 * worst_os
    ))
}

fn lt_baseline() -> Outcome {
    let stats = lt_overhead_trial(RobustSolitonParams::new(100, 0.03, 0.5).unwrap(), 200, 1).map_err(|e| e.to_string())?;
    ensure(stats.mean <= 130.0, || format!("mean symbols to decode {:.1}", stats.mean))?;
    let k = 100;
    let dist = RobustSoliton::new(RobustSolitonParams::new(k, 0.03, 0.5).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let src: Vec<Vec<f64>> = (0..k).map(|_| (0..8).map(|_| rng.random_range(-100i32..100) as f64).collect()).collect();
    let mut dec = LtDecoder::new(k);
    while !dec.is_complete() {
        dec.push(combine(&src, sample_encoding_vector(&dist, &mut rng))).map_err(|e| e.to_string())?;
    }
    let DecodeStatus::Decoded(out) = dec.status().map_err(|e| e.to_string())? else {
        return Err("decoder complete but not decoded".into());
    };
    let err = out.iter().flatten().zip(src.iter().flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    ensure(err < 1e-9, || format!("decoded values off by {err:e}"))?;
    let rounded: Vec<Vec<f64>> = out.iter().map(|r| r.iter().map(|v| v.round()).collect()).collect();
    ensure(rounded == src, || "rounded decode differs from the integer sources".into())?;
    Ok(format!(
        "mean {:.1} symbols for k = 100 (p95 {}), decode error {err:.1e} after {} symbols",
        stats.mean,
        stats.p95,
        dec.received()
    ))
}

fn runtime_integration() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let model = load_model(&write_two_conv_model(dir.path(), 31)).map_err(|e| e.to_string())?;
    let x = model.random_input(2);
    let want = model.forward_local(&x).map_err(|e| e.to_string())?;
    let opts = |mode| RunOptions { mode, profile: None, timeout: Some(Duration::from_secs(5)) };
    let coded = Mode::Coded { k: Some(3) };

    let (_healthy, addrs) = spawn_workers(&[0, 0, 0, 0]);
    let mut cluster = Cluster::connect(&addrs, Duration::from_secs(5)).map_err(|e| e.to_string())?;
    preload(&mut cluster, &model).map_err(|e| e.to_string())?;
    let a = run_inference(&mut cluster, &model, &x, &opts(coded)).map_err(|e| e.to_string())?;
    let err_a = a.output.relative_error(&want).unwrap();
    ensure(err_a < 1e-5, || format!("(a) healthy error {err_a:e}"))?;
    cluster.shutdown();

    let (mut procs, addrs) = spawn_workers(&[0, 0, 0, 1500]);
    let mut cluster = Cluster::connect(&addrs, Duration::from_secs(5)).map_err(|e| e.to_string())?;
    preload(&mut cluster, &model).map_err(|e| e.to_string())?;
    let mut victim = procs.pop().unwrap();
    let killer = thread::spawn(move || {
        thread::sleep(Duration::from_millis(100));
        victim.kill();
    });
    let b = run_inference(&mut cluster, &model, &x, &opts(coded)).map_err(|e| e.to_string());
    killer.join().unwrap();
    let err_b = b?.output.relative_error(&want).unwrap();
    ensure(err_b < 1e-5, || format!("(b) error after a kill {err_b:e}"))?;
    let after = run_inference(&mut cluster, &model, &x, &opts(coded)).map_err(|e| format!("(b) run after the kill: {e}"))?;
    ensure(after.output.relative_error(&want).unwrap() < 1e-5, || "(b) run after the kill is wrong".into())?;
    cluster.shutdown();

    let (_slow, addrs) = spawn_workers(&[200, 0, 0, 0]);
    let mut cluster = Cluster::connect(&addrs, Duration::from_secs(5)).map_err(|e| e.to_string())?;
    preload(&mut cluster, &model).map_err(|e| e.to_string())?;
    let mut median = |mode| -> Result<f64, String> {
        let mut ts = Vec::new();
        for _ in 0..10 {
            let r = run_inference(&mut cluster, &model, &x, &opts(mode)).map_err(|e| e.to_string())?;
            ensure(r.output.relative_error(&want).unwrap() < 1e-5, || "(c) wrong output".into())?;
            ts.push(r.total_s);
        }
        ts.sort_by(f64::total_cmp);
        Ok((ts[4] + ts[5]) / 2.0)
    };
    let med_uncoded = median(Mode::Uncoded)?;
    let med_coded = median(coded)?;
    ensure(med_coded < med_uncoded, || format!("(c) coded median {med_coded:.3} s, uncoded {med_uncoded:.3} s"))?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 120.0, || format!("took {secs:.1} s"))?;
    Ok(format!(
        "(a) error {err_a:.1e}; (b) error {err_b:.1e} with a worker killed mid-layer; (c) medians coded {:.0} ms vs uncoded {:.0} ms; {secs:.1} s",
        1e3 * med_coded,
        1e3 * med_uncoded
    ))
}

/// Synthetic profile on the VGG16-like pipeline: 2x slower master, compute
/// tail 1/30 of the shift, transmission tail 1/40 of the shift.
fn vgg_profile() -> PhaseProfile {
    PhaseProfile {
        mu_m: 1e10,
        theta_m: 3e-9,
        mu_cmp: 2e10,
        theta_cmp: 1.5e-9,
        mu_rec: 40.0 / 2.8e-6,
        theta_rec: 2.8e-6,
        mu_sen: 40.0 / 2.8e-6,
        theta_sen: 2.8e-6,
    }
}

fn scenario_reproduction() -> Outcome {
    let layers = vgg16_like(224).unwrap();
    let profile = vgg_profile();
    let mean = |s: Strategy, sc: Scenario| {
        simulate_pipeline(&layers, s, 10, &profile, &sc, 10_000, 1, Completion::Exact).unwrap().total.mean_s
    };
    let mut ratios = Vec::new();
    for lambda_tr in [0.0, 0.1, 0.2, 0.4, 0.6, 1.0] {
        let sc = Scenario::Straggling { lambda_tr };
        let r = mean(Strategy::CodedAuto, sc) / mean(Strategy::Uncoded, sc);
        ratios.push(format!("{lambda_tr}: {r:.3}"));
        if lambda_tr >= 0.4 {
            ensure(r < 1.0, || format!("coded/uncoded {r:.3} at lambda_tr = {lambda_tr}"))?;
        } else {
            ensure(r > 1.0 && r < 1.15, || format!("coded/uncoded {r:.3} at lambda_tr = {lambda_tr}"))?;
        }
    }
    let f = |n_f| Scenario::Failure { n_f, timeout_s: None };
    let coded_rise = mean(Strategy::CodedAuto, f(2)) / mean(Strategy::CodedAuto, f(0)) - 1.0;
    let uncoded_rise = mean(Strategy::Uncoded, f(2)) / mean(Strategy::Uncoded, f(0)) - 1.0;
    ensure(uncoded_rise >= 0.5, || format!("uncoded rise {:.1}%", 100.0 * uncoded_rise))?;
    ensure(coded_rise <= 0.15, || format!("coded rise {:.1}%", 100.0 * coded_rise))?;
    Ok(format!(
        "coded/uncoded by lambda_tr [{}]; n_f 0 -> 2: coded +{:.1}%, uncoded +{:.0}%",
        ratios.join(", "),
        100.0 * coded_rise,
        100.0 * uncoded_rise
    ))
}

fn cli_output(args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(BIN).args(args).output().map_err(|e| e.to_string())?;
    ensure(out.status.success(), || format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))?;
    Ok(out.stdout)
}

fn determinism() -> Outcome {
    let configs = Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/configs"));
    let c = |name: &str| configs.join(name).to_string_lossy().into_owned();
    let dir = tempfile::tempdir().unwrap();
    let mut commands: Vec<Vec<String>> = vec![
        vec!["simulate".into(), "--config".into(), c("scenario.json"), "--trials".into(), "10000".into(), "--seed".into(), "7".into()],
        vec!["simulate".into(), "--config".into(), c("vgg16_failure.json"), "--trials".into(), "2000".into(), "--seed".into(), "3".into()],
        vec!["optimize".into(), "--config".into(), c("system.json")],
        vec!["compare".into(), "--config".into(), c("system.json")],
        vec!["plan".into(), "--config".into(), c("layer.json"), "--k".into(), "5".into()],
    ];
    let curve = |i: usize| dir.path().join(format!("curve{i}.csv")).to_string_lossy().into_owned();
    let mut files = Vec::new();
    for (i, cmd) in commands.iter_mut().enumerate() {
        if cmd[0] == "optimize" {
            cmd.extend(["--out".into(), curve(i)]);
        }
        let args: Vec<&str> = cmd.iter().map(String::as_str).collect();
        let first = cli_output(&args)?;
        let first_file = (cmd[0] == "optimize").then(|| std::fs::read(curve(i)).unwrap());
        let second = cli_output(&args)?;
        ensure(first == second, || format!("{} output differs between runs", cmd[0]))?;
        if let Some(f) = first_file {
            ensure(std::fs::read(curve(i)).unwrap() == f, || "L-curve CSV differs between runs".into())?;
            files.push(f.len());
        }
    }
    let p = SystemParams::new(10, wide_layer(), benign_profile(&mut ChaCha8Rng::seed_from_u64(8))).unwrap();
    let a = empirical_optimal_k(&p, &Scenario::Straggling { lambda_tr: 0.3 }, 20_000, 5, Completion::Exact).unwrap();
    let b = empirical_optimal_k(&p, &Scenario::Straggling { lambda_tr: 0.3 }, 20_000, 5, Completion::Exact).unwrap();
    ensure(a == b, || "empirical optimum differs between runs".into())?;
    Ok(format!("{} CLI commands and the empirical optimiser byte-identical across two runs", commands.len()))
}

#[test]
fn criterion_01_coding_correctness() {
    report(1, "coding correctness", coding_correctness());
}

#[test]
fn criterion_02_split_correctness() {
    report(2, "split correctness", split_correctness());
}

#[test]
fn criterion_03_convexity() {
    report(3, "convexity", convexity());
}

#[test]
fn criterion_04_approximation_gap() {
    report(4, "approximation gap", approximation_gap());
}

#[test]
fn criterion_05_sensitivity() {
    report(5, "sensitivity", sensitivity());
}

#[test]
fn criterion_06_prop2_constants() {
    report(6, "coding gain constants", prop2_constants());
}

#[test]
fn criterion_07_failure_resilience() {
    report(7, "failure resilience", prop3_failures());
}

#[test]
fn criterion_08_latency_model() {
    report(8, "latency model", latency_model());
}

#[test]
fn criterion_09_lt_baseline() {
    report(9, "LT baseline", lt_baseline());
}

#[test]
fn criterion_10_runtime_integration() {
    report(10, "runtime integration", runtime_integration());
}

#[test]
fn criterion_11_scenario_reproduction() {
    report(11, "scenario reproduction", scenario_reproduction());
}

#[test]
fn criterion_12_determinism() {
    report(12, "determinism", determinism());
}
