#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::Value;

pub const FLIGHT: &str = "LH400-2026-10-17";

pub fn stcp() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_stcp"));
    c.env_remove("STCP_LOG");
    c
}

pub fn scenarios_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

/// Last stdout line as JSON.
pub fn json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stdout);
    let line = text.lines().last().unwrap_or_else(|| panic!("no output; stderr: {}", stderr(out)));
    serde_json::from_str(line).unwrap_or_else(|e| panic!("{e}: {line}"))
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

/// `reason=` field of the error line.
pub fn reason(out: &Output) -> String {
    let err = stderr(out);
    let line = err.lines().find(|l| l.starts_with("error: ")).unwrap_or_else(|| panic!("no error line: {err}"));
    line["error: reason=".len()..].split(' ').next().unwrap().to_string()
}

pub fn keygen(dir: &Path, name: &str, profile: &str) -> Value {
    let out = stcp()
        .args(["keygen", "--profile", profile, "--name", name, "--flight-id", FLIGHT, "--out"])
        .arg(dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    json(&out)
}

pub fn edit_toml(path: &Path, f: impl FnOnce(&mut toml::Table)) {
    let mut t: toml::Table = std::fs::read_to_string(path).unwrap().parse().unwrap();
    f(&mut t);
    std::fs::write(path, toml::to_string(&t).unwrap()).unwrap();
}

/// Two devices in `root/a` and `root/b`, each listing the other.
pub struct Pair {
    pub a: PathBuf,
    pub b: PathBuf,
    pub id_a: String,
    pub id_b: String,
}

impl Pair {
    pub fn config_a(&self) -> PathBuf {
        self.a.join("node.toml")
    }

    pub fn config_b(&self) -> PathBuf {
        self.b.join("node.toml")
    }
}

pub fn pair(root: &Path, profile: &str) -> Pair {
    let a = root.join("a");
    let b = root.join("b");
    let ka = keygen(&a, "ad1", profile);
    let kb = keygen(&b, "ad2", profile);
    for (dir, other) in [(&a, "../b/bundle.toml"), (&b, "../a/bundle.toml")] {
        edit_toml(&dir.join("node.toml"), |t| {
            t.insert("timeout_ms".into(), toml::Value::Integer(3000));
            let mut peer = toml::Table::new();
            peer.insert("bundle".into(), toml::Value::String(other.into()));
            t.insert("peer".into(), toml::Value::Array(vec![toml::Value::Table(peer)]));
        });
    }
    Pair {
        a,
        b,
        id_a: ka["identity"].as_str().unwrap().into(),
        id_b: kb["identity"].as_str().unwrap().into(),
    }
}

pub struct Handshake {
    pub initiator: Output,
    pub responder: Output,
}

/// Starts `listen` on an ephemeral port, then `initiate` toward it.
pub fn handshake(listen_cfg: &Path, initiate_cfg: &Path) -> Handshake {
    let mut child = stcp()
        .args(["node", "--role", "listen", "--listen", "127.0.0.1:0", "--config"])
        .arg(listen_cfg)
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stdout = BufReader::new(child.stdout.take().unwrap());
    let mut first = String::new();
    stdout.read_line(&mut first).unwrap();
    let listening: Value = serde_json::from_str(first.trim()).unwrap_or_else(|e| panic!("{e}: {first:?}"));
    assert_eq!(listening["event"], "listening");
    let address = listening["address"].as_str().unwrap();

    let initiator = stcp()
        .args(["node", "--role", "initiate", "--address", address, "--config"])
        .arg(initiate_cfg)
        .output()
        .unwrap();
    let mut rest = Vec::new();
    stdout.read_to_end(&mut rest).unwrap();
    let mut responder = child.wait_with_output().unwrap();
    responder.stdout = rest;
    Handshake { initiator, responder }
}
