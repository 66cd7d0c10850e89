#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::Duration;

use virtdoc::artifact::ModelArtifact;
use virtdoc::dataset::{generate_synthetic_cohort, FeatureSet};
use virtdoc::pipeline::{train_artifact, TrainOptions};

pub const BIN: &str = env!("CARGO_BIN_EXE_virtdoc");

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// A quickly trained model on a small synthetic cohort.
pub fn small_artifact(feature_set: FeatureSet, seed: u64) -> ModelArtifact {
    let cohort = generate_synthetic_cohort(800, seed, feature_set == FeatureSet::WithHba1c).unwrap();
    let mut opts = TrainOptions::new(feature_set, seed);
    opts.network.epochs = 30;
    train_artifact(&cohort, &opts).unwrap().0
}

pub fn write_artifact(dir: &Path, feature_set: FeatureSet, seed: u64) -> PathBuf {
    let path = dir.join(format!("model-{feature_set:?}-{seed}.json"));
    small_artifact(feature_set, seed).save(&path).unwrap();
    path
}

pub struct Output {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn run(args: &[&str]) -> Output {
    let out = Command::new(BIN).args(args).env_remove("VIRTDOC_PORT").output().expect("binary runs");
    Output {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

/// A running `virtdoc serve`, killed on drop.
pub struct Server {
    pub child: Child,
    pub addr: String,
}

impl Server {
    pub fn start(model: &Path, data_dir: &Path) -> Server {
        Self::start_with(model, data_dir, &["--port", "0"], None)
    }

    pub fn start_with(model: &Path, data_dir: &Path, extra: &[&str], port_env: Option<&str>) -> Server {
        let mut cmd = Command::new(BIN);
        cmd.arg("serve").arg("--model").arg(model).arg("--data-dir").arg(data_dir).args(extra);
        cmd.env_remove("VIRTDOC_PORT");
        if let Some(p) = port_env {
            cmd.env("VIRTDOC_PORT", p);
        }
        let mut child = cmd.stdout(Stdio::piped()).stderr(Stdio::piped()).spawn().expect("server spawns");
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        let addr = line.trim().strip_prefix("listening on http://").unwrap_or_else(|| {
            let mut err = String::new();
            child.stderr.take().unwrap().read_to_string(&mut err).ok();
            panic!("server did not start: {line} {err}")
        });
        Server { addr: addr.to_string(), child }
    }

    pub fn request(&self, method: &str, path: &str, body: Option<&str>) -> (u16, String) {
        http(&self.addr, method, path, body)
    }

    /// SIGKILL, no graceful shutdown.
    pub fn kill(mut self) {
        self.child.kill().unwrap();
        self.child.wait().unwrap();
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Minimal HTTP/1.1 client: one request per connection.
pub fn http(addr: &str, method: &str, path: &str, body: Option<&str>) -> (u16, String) {
    let mut stream = TcpStream::connect(addr).expect("connect");
    stream.set_read_timeout(Some(Duration::from_secs(30))).unwrap();
    let body = body.unwrap_or("");
    write!(
        stream,
        "{method} {path} HTTP/1.1\r\nHost: {addr}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
    let mut raw = Vec::new();
    stream.read_to_end(&mut raw).unwrap();
    let text = String::from_utf8(raw).unwrap();
    let (head, rest) = text.split_once("\r\n\r\n").expect("http response");
    let status = head.split_whitespace().nth(1).unwrap().parse().unwrap();
    let chunked = head.to_ascii_lowercase().contains("transfer-encoding: chunked");
    (status, if chunked { dechunk(rest) } else { rest.to_string() })
}

fn dechunk(mut s: &str) -> String {
    let mut out = String::new();
    while let Some((size, rest)) = s.split_once("\r\n") {
        let n = usize::from_str_radix(size.trim(), 16).unwrap_or(0);
        if n == 0 {
            break;
        }
        out.push_str(&rest[..n]);
        s = &rest[n + 2..];
    }
    out
}
