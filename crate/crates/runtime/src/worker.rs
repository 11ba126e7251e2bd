//! Worker process: caches layer weights and convolves coded partitions.

use std::collections::{HashMap, HashSet};
use std::io::BufReader;
use std::net::{Shutdown, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use coded_conv::conv::conv2d_cancellable;
use coded_conv::{Conv64, ConvSpec, Tensor64};
use log::{debug, info, warn};

use crate::error::{Result, RuntimeError};
use crate::wire::{codes, read_message, write_message, LayerHeader, Message};

#[derive(Debug, Clone, Copy, Default)]
pub struct WorkerOptions {
    /// Artificial sleep before every subtask, for straggler experiments.
    pub delay: Duration,
}

const SLEEP_SLICE: Duration = Duration::from_millis(2);

struct Job {
    task_id: u64,
    subtask_index: u32,
    input: Tensor64,
    spec: Arc<Conv64>,
}

type Shared<T> = Arc<Mutex<T>>;

/// Serves master connections one after another until the process ends.
pub fn run_worker(listener: TcpListener, opts: WorkerOptions) -> Result<()> {
    loop {
        let (stream, peer) = listener.accept()?;
        info!("master connected from {peer}");
        if let Err(e) = serve_connection(stream, opts) {
            warn!("connection from {peer} ended: {e}");
        }
    }
}

/// Handles one master connection until it closes or sends a malformed frame.
pub fn serve_connection(stream: TcpStream, opts: WorkerOptions) -> Result<()> {
    stream.set_nodelay(true)?;
    let writer: Shared<TcpStream> = Arc::new(Mutex::new(stream.try_clone()?));
    let cancelled: Shared<HashSet<u64>> = Arc::default();
    let closed = Arc::new(AtomicBool::new(false));
    let (jobs, queue) = mpsc::channel::<Job>();
    let compute = {
        let (writer, cancelled, closed) = (writer.clone(), cancelled.clone(), closed.clone());
        thread::spawn(move || compute_loop(queue, writer, cancelled, closed, opts))
    };
    let outcome = read_loop(BufReader::new(stream.try_clone()?), &writer, &jobs, &cancelled);
    closed.store(true, Ordering::SeqCst);
    drop(jobs);
    let _ = compute.join();
    let _ = stream.shutdown(Shutdown::Both);
    outcome
}

fn send(writer: &Shared<TcpStream>, msg: &Message) -> Result<()> {
    let mut w = writer.lock().expect("writer lock poisoned");
    write_message(&mut *w, msg)
}

fn read_loop(
    mut reader: BufReader<TcpStream>,
    writer: &Shared<TcpStream>,
    jobs: &mpsc::Sender<Job>,
    cancelled: &Shared<HashSet<u64>>,
) -> Result<()> {
    let mut layers: HashMap<u32, Arc<Conv64>> = HashMap::new();
    loop {
        let msg = match read_message(&mut reader) {
            Ok(Some(m)) => m,
            Ok(None) => return Ok(()),
            Err(RuntimeError::Protocol(text)) => {
                let _ = send(writer, &Message::Error { code: codes::MALFORMED, text: text.clone() });
                return Err(RuntimeError::Protocol(text));
            }
            Err(e) => return Err(e),
        };
        match msg {
            Message::Hello { worker_id } => send(writer, &Message::Hello { worker_id })?,
            Message::Heartbeat => send(writer, &Message::Heartbeat)?,
            Message::LoadLayer { layer_id, header, weights } => match layer_spec(header, weights) {
                Ok(spec) => {
                    debug!("loaded layer {layer_id}");
                    layers.insert(layer_id, Arc::new(spec));
                }
                Err(e) => send(writer, &Message::Error { code: codes::BAD_TASK, text: format!("layer {layer_id}: {e}") })?,
            },
            Message::TaskAssign { task_id, layer_id, subtask_index, input } => match layers.get(&layer_id) {
                Some(spec) => {
                    let job = Job { task_id, subtask_index, input: input.cast(), spec: spec.clone() };
                    if jobs.send(job).is_err() {
                        return Err(RuntimeError::Protocol("compute thread stopped".into()));
                    }
                }
                None => send(
                    writer,
                    &Message::Error { code: codes::LAYER_NOT_LOADED, text: format!("layer {layer_id} is not loaded") },
                )?,
            },
            Message::Cancel { task_id } => {
                cancelled.lock().expect("cancel set poisoned").insert(task_id);
            }
            Message::ResultReturn { .. } | Message::Error { .. } => {
                let text = format!("unexpected message type {} from master", msg.type_byte());
                send(writer, &Message::Error { code: codes::MALFORMED, text: text.clone() })?;
                return Err(RuntimeError::Protocol(text));
            }
        }
    }
}

fn layer_spec(h: LayerHeader, weights: coded_conv::Tensor) -> coded_conv::Result<Conv64> {
    ConvSpec::new(
        h.in_channels as usize,
        h.out_channels as usize,
        h.kernel_size as usize,
        h.stride as usize,
        h.padding as usize,
        weights.cast(),
        None,
    )
}

fn compute_loop(
    queue: Receiver<Job>,
    writer: Shared<TcpStream>,
    cancelled: Shared<HashSet<u64>>,
    closed: Arc<AtomicBool>,
    opts: WorkerOptions,
) {
    for job in queue {
        let stop = || closed.load(Ordering::SeqCst) || cancelled.lock().expect("cancel set poisoned").contains(&job.task_id);
        let wake = Instant::now() + opts.delay;
        while Instant::now() < wake && !stop() {
            thread::sleep(SLEEP_SLICE.min(wake.saturating_duration_since(Instant::now())));
        }
        if stop() {
            debug!("task {} cancelled before compute", job.task_id);
            continue;
        }
        let reply = match conv2d_cancellable(&job.input, &job.spec, false, stop) {
            Ok(Some(y)) => Message::ResultReturn { task_id: job.task_id, subtask_index: job.subtask_index, output: y.cast() },
            Ok(None) => {
                debug!("task {} cancelled during compute", job.task_id);
                continue;
            }
            Err(e) => Message::Error { code: codes::BAD_TASK, text: format!("task {}: {e}", job.task_id) },
        };
        if stop() {
            continue;
        }
        if let Err(e) = send(&writer, &reply) {
            warn!("reply for task {} not sent: {e}", job.task_id);
            return;
        }
    }
}
