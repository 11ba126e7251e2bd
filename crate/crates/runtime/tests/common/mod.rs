//! Shared fixtures: worker processes, a small model on disk, raw clients.
#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::thread;
use std::time::Duration;

use coded_conv_runtime::model::{load_model, ConvEntry, InputShape, LayerEntry, LocalOp, Model, ModelConfig, WeightIndex};
use coded_conv_runtime::wire::{read_message, write_message, Message};
use coded_conv_runtime::worker::{run_worker, WorkerOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const BIN: &str = env!("CARGO_BIN_EXE_coded-conv");

/// Worker subprocess, killed on drop.
pub struct WorkerProc {
    pub child: Child,
    pub addr: String,
}

impl WorkerProc {
    pub fn spawn(delay_ms: u64) -> Self {
        let mut child = Command::new(BIN)
            .args(["worker", "--listen", "127.0.0.1:0", "--delay-ms", &delay_ms.to_string()])
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .expect("worker starts");
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        let addr = line.trim().strip_prefix("listening on ").expect("address line").to_string();
        Self { child, addr }
    }

    pub fn kill(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for WorkerProc {
    fn drop(&mut self) {
        self.kill();
    }
}

pub fn spawn_workers(delays_ms: &[u64]) -> (Vec<WorkerProc>, Vec<String>) {
    let procs: Vec<WorkerProc> = delays_ms.iter().map(|&d| WorkerProc::spawn(d)).collect();
    let addrs = procs.iter().map(|p| p.addr.clone()).collect();
    (procs, addrs)
}

/// In-process worker on an ephemeral port.
pub fn thread_worker(delay_ms: u64) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    thread::spawn(move || run_worker(listener, WorkerOptions { delay: Duration::from_millis(delay_ms) }));
    addr
}

fn conv(in_c: usize, out_c: usize, k: usize, s: usize, p: usize, offset: &mut u64) -> ConvEntry {
    let mut e = ConvEntry {
        in_channels: in_c,
        out_channels: out_c,
        kernel_size: k,
        stride: s,
        padding: p,
        bias: true,
        weights: WeightIndex { offset: *offset, length: 0 },
    };
    e.weights.length = 4 * e.value_count() as u64;
    *offset += e.weights.length;
    e
}

/// Writes a model into `dir`: conv, relu, conv (stride 2), relu, pool,
/// local conv. Returns the config path.
pub fn write_model(dir: &Path, seed: u64, distributed: bool) -> PathBuf {
    let mut offset = 0;
    let c1 = conv(4, 6, 3, 1, 1, &mut offset);
    let c2 = conv(6, 5, 3, 2, 1, &mut offset);
    let c3 = conv(5, 3, 1, 1, 0, &mut offset);
    let wrap = |c: ConvEntry| if distributed { LayerEntry::Distributed { conv: c } } else { LayerEntry::Local { op: LocalOp::Conv(c) } };
    let cfg = ModelConfig {
        input: InputShape { channels: 4, height: 12, width: 44 },
        weights_file: "weights.bin".into(),
        layers: vec![
            wrap(c1),
            LayerEntry::Local { op: LocalOp::Relu },
            wrap(c2),
            LayerEntry::Local { op: LocalOp::Relu },
            LayerEntry::Local { op: LocalOp::MaxPool { size: 2 } },
            LayerEntry::Local { op: LocalOp::Conv(c3) },
        ],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blob: Vec<u8> = (0..offset / 4).flat_map(|_| rng.random_range(-0.5f32..0.5).to_le_bytes()).collect();
    std::fs::write(dir.join("weights.bin"), blob).unwrap();
    let path = dir.join("model.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

/// Two distributed 3x3 convolutions back to back.
pub fn write_two_conv_model(dir: &Path, seed: u64) -> PathBuf {
    let mut offset = 0;
    let c1 = conv(4, 8, 3, 1, 1, &mut offset);
    let c2 = conv(8, 8, 3, 1, 1, &mut offset);
    let cfg = ModelConfig {
        input: InputShape { channels: 4, height: 16, width: 60 },
        weights_file: "weights.bin".into(),
        layers: vec![LayerEntry::Distributed { conv: c1 }, LayerEntry::Distributed { conv: c2 }],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blob: Vec<u8> = (0..offset / 4).flat_map(|_| rng.random_range(-0.5f32..0.5).to_le_bytes()).collect();
    std::fs::write(dir.join("weights.bin"), blob).unwrap();
    let path = dir.join("model.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

pub fn model_in(dir: &Path, distributed: bool) -> Model {
    load_model(&write_model(dir, 11, distributed)).unwrap()
}

/// Raw protocol client.
pub struct Client {
    pub stream: TcpStream,
    reader: BufReader<TcpStream>,
}

impl Client {
    pub fn connect(addr: &str) -> Self {
        let stream = TcpStream::connect(addr).unwrap();
        stream.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
        let reader = BufReader::new(stream.try_clone().unwrap());
        Self { stream, reader }
    }

    pub fn send(&mut self, m: &Message) {
        write_message(&mut self.stream, m).unwrap();
    }

    /// Next message, or `None` on close or read timeout.
    pub fn recv(&mut self) -> Option<Message> {
        read_message(&mut self.reader).ok().flatten()
    }

    pub fn set_timeout(&self, t: Duration) {
        self.stream.set_read_timeout(Some(t)).unwrap();
    }
}
