//! Master side: worker sessions, coded and uncoded layer execution, and
//! end-to-end inference with per-phase timing.

use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::path::Path;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::thread;
use std::time::{Duration, Instant};

use coded_conv::latency::WorkloadSizes;
use coded_conv::optimizer::minimize_l;
use coded_conv::{conv2d, plan_balanced, CodedLayer, Conv64, LayerGeometry, PhaseProfile, SplitPlan, SystemParams, Tensor64};
use log::{debug, info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RuntimeError};
use crate::model::{Layer, Model};
use crate::wire::{read_message, write_message, LayerHeader, Message};

/// Multiple of the predicted subtask mean after which missing results are
/// re-dispatched.
pub const TIMEOUT_FACTOR: f64 = 5.0;
/// Timeout used when neither a profile nor an explicit value is given.
pub const FALLBACK_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug)]
enum Event {
    Msg(usize, Message),
    Closed(usize),
}

struct Session {
    addr: String,
    writer: BufWriter<TcpStream>,
    alive: bool,
}

/// Traffic counters since the handshake finished.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct TrafficStats {
    pub frames_sent: u64,
    pub cancels_sent: u64,
    pub redispatched: u64,
}

/// Connected workers plus the channel their reader threads feed.
pub struct Cluster {
    sessions: Vec<Session>,
    events: Receiver<Event>,
    next_task: u64,
    stats: TrafficStats,
}

/// Phase durations of one distributed layer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LayerTiming {
    pub enc_s: f64,
    pub exec_s: f64,
    pub dec_s: f64,
    pub retried: bool,
    pub cancels: usize,
}

/// How distributed layers are executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mode {
    /// MDS-coded with a fixed `k`, or the optimizer's choice when `None`.
    Coded { k: Option<usize> },
    /// One balanced piece per worker, all required.
    Uncoded,
}

enum Need {
    Any(usize),
    All,
}

impl Cluster {
    /// Connects to every address and exchanges `Hello`.
    pub fn connect(addrs: &[String], timeout: Duration) -> Result<Self> {
        if addrs.is_empty() {
            return Err(RuntimeError::Config("no worker addresses".into()));
        }
        let (tx, events) = mpsc::channel();
        let mut sessions = Vec::new();
        let mut unreachable = Vec::new();
        for (i, addr) in addrs.iter().enumerate() {
            match handshake(addr, i as u32, timeout) {
                Ok(stream) => {
                    spawn_reader(i, stream.try_clone()?, tx.clone());
                    sessions.push(Session { addr: addr.clone(), writer: BufWriter::new(stream), alive: true });
                }
                Err(e) => {
                    warn!("worker {addr}: {e}");
                    unreachable.push(addr.clone());
                }
            }
        }
        if !unreachable.is_empty() {
            return Err(RuntimeError::Handshake(unreachable));
        }
        info!("connected to {} workers", sessions.len());
        Ok(Self { sessions, events, next_task: 1, stats: TrafficStats::default() })
    }

    pub fn n(&self) -> usize {
        self.sessions.len()
    }

    pub fn alive(&self) -> usize {
        self.sessions.iter().filter(|s| s.alive).count()
    }

    pub fn stats(&self) -> TrafficStats {
        self.stats
    }

    fn send(&mut self, w: usize, msg: &Message) -> bool {
        let s = &mut self.sessions[w];
        if !s.alive {
            return false;
        }
        match write_message(&mut s.writer, msg) {
            Ok(()) => {
                self.stats.frames_sent += 1;
                true
            }
            Err(e) => {
                warn!("worker {} ({}) lost: {e}", w, s.addr);
                s.alive = false;
                false
            }
        }
    }

    /// Sends a layer's weights to every live worker.
    pub fn load_layer(&mut self, layer_id: u32, spec: &Conv64) -> Result<()> {
        let msg = Message::LoadLayer {
            layer_id,
            header: LayerHeader {
                in_channels: spec.in_channels as u32,
                out_channels: spec.out_channels as u32,
                kernel_size: spec.kernel_size as u32,
                stride: spec.stride as u32,
                padding: spec.padding as u32,
            },
            weights: spec.weights.cast(),
        };
        for w in 0..self.n() {
            self.send(w, &msg);
        }
        if self.alive() == 0 {
            return Err(RuntimeError::Handshake(self.sessions.iter().map(|s| s.addr.clone()).collect()));
        }
        Ok(())
    }

    /// Coded execution: any `k` of the `n` coded results restore the output.
    pub fn run_coded(&mut self, layer_id: u32, spec: &Conv64, x: &Tensor64, k: usize, timeout: Duration) -> Result<(Tensor64, LayerTiming)> {
        let n = self.n();
        if k == 0 || k >= n {
            return Err(RuntimeError::Config(format!("coded execution needs 1 <= k < n = {n}, got k = {k}")));
        }
        let t0 = Instant::now();
        let padded = x.pad(spec.padding);
        let layer = CodedLayer::for_spec(spec, padded.width(), n, k)?;
        let inputs = layer.encode_input(&padded)?;
        let t1 = Instant::now();
        let remainder_input = layer.plan.remainder_input(&padded)?;
        let (results, retried, cancels) = self.dispatch(layer_id, &inputs, Need::Any(k), timeout, || {
            remainder_input.as_ref().map(|r| conv2d(r, spec, false)).transpose()
        })?;
        let t2 = Instant::now();
        let (got, remainder) = results;
        let (subset, outputs): (Vec<usize>, Vec<Tensor64>) = got.into_iter().take(k).unzip();
        let pieces = layer.decode_output(&subset, &outputs)?;
        let y = spec.add_bias(&layer.assemble(pieces, remainder)?)?;
        let t3 = Instant::now();
        Ok((y, timing(t0, t1, t2, t3, retried, cancels)))
    }

    /// Uncoded execution: one balanced piece per worker, all required.
    pub fn run_uncoded(&mut self, layer_id: u32, spec: &Conv64, x: &Tensor64, timeout: Duration) -> Result<(Tensor64, LayerTiming)> {
        let t0 = Instant::now();
        let padded = x.pad(spec.padding);
        let plan = plan_balanced(spec.kernel_size, spec.stride, padded.width(), self.n())?;
        let inputs = plan.split_input(&padded)?;
        let t1 = Instant::now();
        let ((got, _), retried, cancels) = self.dispatch(layer_id, &inputs, Need::All, timeout, || Ok(None))?;
        let t2 = Instant::now();
        let pieces: Vec<Tensor64> = got.into_iter().map(|(_, t)| t).collect();
        let y = spec.add_bias(&Tensor64::concat_width(&pieces)?)?;
        let t3 = Instant::now();
        Ok((y, timing(t0, t1, t2, t3, retried, cancels)))
    }

    /// Sends subtask `j` to worker `j`, runs `local` while workers compute,
    /// and collects results until `need` is met. Missing subtasks get one
    /// re-dispatch round to the earliest responders.
    #[allow(clippy::type_complexity)]
    fn dispatch(
        &mut self,
        layer_id: u32,
        inputs: &[Tensor64],
        need: Need,
        timeout: Duration,
        local: impl FnOnce() -> coded_conv::Result<Option<Tensor64>>,
    ) -> Result<((Vec<(usize, Tensor64)>, Option<Tensor64>), bool, usize)> {
        let task_id = self.next_task;
        self.next_task += 1;
        let wire: Vec<coded_conv::Tensor> = inputs.iter().map(|t| t.cast()).collect();
        let mut pending: Vec<(usize, usize)> = Vec::new();
        for (j, input) in wire.iter().enumerate() {
            let msg = Message::TaskAssign { task_id, layer_id, subtask_index: j as u32, input: input.clone() };
            if self.send(j, &msg) {
                pending.push((j, j));
            }
        }
        let local_out = local()?;
        let target = match need {
            Need::Any(k) => k,
            Need::All => inputs.len(),
        };
        let mut results: BTreeMap<usize, Tensor64> = BTreeMap::new();
        let mut responders: Vec<usize> = Vec::new();
        let mut deadline = Instant::now() + timeout;
        let mut retried = false;
        while results.len() < target {
            let wait = deadline.saturating_duration_since(Instant::now());
            let stalled = pending.is_empty() || wait.is_zero();
            if !stalled {
                match self.events.recv_timeout(wait) {
                    Ok(Event::Msg(w, Message::ResultReturn { task_id: t, subtask_index, output })) if t == task_id => {
                        let j = subtask_index as usize;
                        pending.retain(|&p| p != (w, j));
                        if j < inputs.len() && !results.contains_key(&j) {
                            results.insert(j, output.cast());
                            if !responders.contains(&w) {
                                responders.push(w);
                            }
                        }
                    }
                    Ok(Event::Msg(w, Message::Error { code, text })) => {
                        warn!("worker {w} error {code}: {text}");
                        pending.retain(|&(pw, _)| pw != w);
                    }
                    Ok(Event::Msg(w, m)) => debug!("ignoring message type {} from worker {w}", m.type_byte()),
                    Ok(Event::Closed(w)) => {
                        warn!("worker {w} disconnected");
                        self.sessions[w].alive = false;
                        pending.retain(|&(pw, _)| pw != w);
                        responders.retain(|&r| r != w);
                    }
                    Err(RecvTimeoutError::Timeout) => {}
                    Err(RecvTimeoutError::Disconnected) => pending.clear(),
                }
                continue;
            }
            let missing: Vec<usize> = (0..inputs.len()).filter(|j| !results.contains_key(j)).collect();
            let live: Vec<usize> = responders.iter().copied().filter(|&w| self.sessions[w].alive).collect();
            if retried || live.is_empty() {
                return Err(RuntimeError::LayerFailure { layer: layer_id as usize, missing });
            }
            retried = true;
            let short = target - results.len();
            info!("layer {layer_id}: re-dispatching {short} of missing subtasks {missing:?}");
            for (i, &j) in missing.iter().take(short).enumerate() {
                let w = live[i % live.len()];
                let msg = Message::TaskAssign { task_id, layer_id, subtask_index: j as u32, input: wire[j].clone() };
                if self.send(w, &msg) {
                    pending.push((w, j));
                    self.stats.redispatched += 1;
                }
            }
            deadline = Instant::now() + timeout;
        }
        let mut outstanding: Vec<usize> = pending.iter().map(|&(w, _)| w).collect();
        outstanding.sort_unstable();
        outstanding.dedup();
        let mut cancels = 0;
        for w in outstanding {
            if self.send(w, &Message::Cancel { task_id }) {
                cancels += 1;
                self.stats.cancels_sent += 1;
            }
        }
        Ok(((results.into_iter().collect(), local_out), retried, cancels))
    }

    /// Closes every connection.
    pub fn shutdown(self) {
        for s in self.sessions {
            if let Ok(stream) = s.writer.into_inner() {
                let _ = stream.shutdown(Shutdown::Both);
            }
        }
    }
}

fn timing(t0: Instant, t1: Instant, t2: Instant, t3: Instant, retried: bool, cancels: usize) -> LayerTiming {
    LayerTiming {
        enc_s: (t1 - t0).as_secs_f64(),
        exec_s: (t2 - t1).as_secs_f64(),
        dec_s: (t3 - t2).as_secs_f64(),
        retried,
        cancels,
    }
}

fn handshake(addr: &str, id: u32, timeout: Duration) -> Result<TcpStream> {
    let sock = addr
        .to_socket_addrs()?
        .next()
        .ok_or_else(|| RuntimeError::Config(format!("{addr} does not resolve")))?;
    let mut stream = TcpStream::connect_timeout(&sock, timeout)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(timeout))?;
    write_message(&mut stream, &Message::Hello { worker_id: id })?;
    match read_message(&mut stream)? {
        Some(Message::Hello { worker_id }) if worker_id == id => {}
        other => return Err(RuntimeError::Protocol(format!("unexpected handshake reply {other:?}"))),
    }
    stream.set_read_timeout(None)?;
    Ok(stream)
}

fn spawn_reader(w: usize, stream: TcpStream, tx: Sender<Event>) {
    thread::spawn(move || {
        let mut r = BufReader::new(stream);
        loop {
            match read_message(&mut r) {
                Ok(Some(m)) => {
                    if tx.send(Event::Msg(w, m)).is_err() {
                        return;
                    }
                }
                Ok(None) | Err(_) => {
                    let _ = tx.send(Event::Closed(w));
                    return;
                }
            }
        }
    });
}

/// Mean predicted time of one worker subtask under `profile`.
pub fn predicted_subtask_s(geom: &LayerGeometry, plan: &SplitPlan, n: usize, profile: &PhaseProfile) -> f64 {
    let s = WorkloadSizes::from_plan(geom, plan, n);
    s.n_rec * profile.receive().unit_mean() + s.n_cmp * profile.compute().unit_mean() + s.n_sen * profile.send().unit_mean()
}

/// Options of an end-to-end run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub mode: Mode,
    /// Latency profile for `k` selection and the default timeout.
    pub profile: Option<PhaseProfile>,
    /// Overrides the per-subtask timeout.
    pub timeout: Option<Duration>,
}

/// One row of the timing CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRow {
    pub layer_id: usize,
    pub phase: &'static str,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerReport {
    pub layer_id: usize,
    /// `0` for master-local layers.
    pub k: usize,
    pub retried: bool,
    pub cancels: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceReport {
    pub output: Tensor64,
    pub total_s: f64,
    pub timings: Vec<TimingRow>,
    pub layers: Vec<LayerReport>,
}

impl InferenceReport {
    pub fn write_timing_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for row in &self.timings {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Split for a coded layer: the fixed value, else the optimizer's `k_circ`.
pub fn choose_k(fixed: Option<usize>, n: usize, geom: &LayerGeometry, profile: Option<&PhaseProfile>) -> Result<usize> {
    let k = match (fixed, profile) {
        (Some(k), _) => k,
        (None, Some(p)) => minimize_l(&SystemParams::new(n, *geom, *p)?)?.k_circ,
        (None, None) => return Err(RuntimeError::Config("coded mode needs --k or a latency profile".into())),
    };
    Ok(k.min(geom.w_out))
}

/// Loads every distributed layer on the workers. Not part of the timed run.
pub fn preload(cluster: &mut Cluster, model: &Model) -> Result<()> {
    for (i, l) in model.layers.iter().enumerate() {
        if let Layer::Distributed(spec) = l {
            cluster.load_layer(i as u32, spec)?;
        }
    }
    Ok(())
}

/// Runs the model layer by layer, distributing the type-1 layers.
pub fn run_inference(cluster: &mut Cluster, model: &Model, x: &Tensor64, opts: &RunOptions) -> Result<InferenceReport> {
    let start = Instant::now();
    let mut h = x.clone();
    let mut timings = Vec::new();
    let mut layers = Vec::new();
    for (i, l) in model.layers.iter().enumerate() {
        match l {
            Layer::Local(op) => {
                let t = Instant::now();
                h = op.apply(&h)?;
                timings.push(TimingRow { layer_id: i, phase: "local", seconds: t.elapsed().as_secs_f64() });
                layers.push(LayerReport { layer_id: i, k: 0, retried: false, cancels: 0 });
            }
            Layer::Distributed(spec) => {
                let t = Instant::now();
                let geom = spec.geometry(h.height(), h.width())?;
                let n = cluster.n();
                let (k, plan) = match opts.mode {
                    Mode::Coded { k } => {
                        let k = choose_k(k, n, &geom, opts.profile.as_ref())?;
                        (k, coded_conv::plan_split(geom.kernel, geom.stride, geom.w_in, k)?)
                    }
                    Mode::Uncoded => (n, plan_balanced(geom.kernel, geom.stride, geom.w_in, n)?),
                };
                let timeout = opts.timeout.unwrap_or_else(|| match &opts.profile {
                    Some(p) => Duration::from_secs_f64(TIMEOUT_FACTOR * predicted_subtask_s(&geom, &plan, n, p)),
                    None => FALLBACK_TIMEOUT,
                });
                let plan_s = t.elapsed().as_secs_f64();
                let (y, lt) = match opts.mode {
                    Mode::Coded { .. } => cluster.run_coded(i as u32, spec, &h, k, timeout),
                    Mode::Uncoded => cluster.run_uncoded(i as u32, spec, &h, timeout),
                }
                .map_err(|e| match e {
                    RuntimeError::LayerFailure { missing, .. } => RuntimeError::LayerFailure { layer: i, missing },
                    other => other,
                })?;
                h = y;
                timings.push(TimingRow { layer_id: i, phase: "enc", seconds: plan_s + lt.enc_s });
                timings.push(TimingRow { layer_id: i, phase: "exec", seconds: lt.exec_s });
                timings.push(TimingRow { layer_id: i, phase: "dec", seconds: lt.dec_s });
                layers.push(LayerReport { layer_id: i, k, retried: lt.retried, cancels: lt.cancels });
            }
        }
    }
    Ok(InferenceReport { output: h, total_s: start.elapsed().as_secs_f64(), timings, layers })
}
