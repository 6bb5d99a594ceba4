mod common;

use std::fs;

use common::{code, edit_toml, handshake, json, pair, reason, scenarios_dir, stcp, stderr};

#[test]
fn keygen_twice_gives_distinct_devices() {
    let dir = tempfile::tempdir().unwrap();
    let a = common::keygen(&dir.path().join("a"), "ad1", "test");
    let b = common::keygen(&dir.path().join("b"), "ad2", "test");
    assert_ne!(a["identity"], b["identity"]);
    assert_ne!(a["device_key"], b["device_key"]);
    assert_ne!(a["aik_key"], b["aik_key"]);
    for f in ["device.key", "aik.key", "storage.key", "manifest.toml", "bundle.toml", "node.toml"] {
        assert!(dir.path().join("a").join(f).exists(), "{f}");
    }
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        let mode = fs::metadata(dir.path().join("a/device.key")).unwrap().permissions().mode();
        assert_eq!(mode & 0o077, 0, "private key readable by others");
    }
}

#[test]
fn keygen_keeps_an_existing_device_unless_forced() {
    let dir = tempfile::tempdir().unwrap();
    let first = common::keygen(dir.path(), "ad1", "test");
    let again = stcp().args(["keygen", "--profile", "test", "--out"]).arg(dir.path()).output().unwrap();
    assert_eq!(code(&again), 2);
    assert_eq!(reason(&again), "Usage");
    let forced = stcp()
        .args(["keygen", "--profile", "test", "--force", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(forced.status.success());
    assert_ne!(json(&forced)["identity"], first["identity"]);
}

#[test]
fn truncated_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = pair(dir.path(), "test");
    let key = p.a.join("device.key");
    let bytes = fs::read(&key).unwrap();
    fs::write(&key, &bytes[..bytes.len() / 2]).unwrap();
    let out = stcp()
        .args(["node", "--role", "initiate", "--address", "127.0.0.1:9", "--config"])
        .arg(p.config_a())
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    assert_eq!(reason(&out), "ConfigError");
}

#[test]
fn bundle_of_another_profile_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let p = pair(dir.path(), "test");
    edit_toml(&p.b.join("bundle.toml"), |t| {
        t.insert("profile".into(), toml::Value::String("full".into()));
    });
    let out = stcp()
        .args(["node", "--role", "initiate", "--config"])
        .arg(p.config_a())
        .output()
        .unwrap();
    assert_eq!(reason(&out), "ConfigError", "{}", stderr(&out));
}

#[test]
fn loopback_handshake_agrees_and_persists() {
    let dir = tempfile::tempdir().unwrap();
    let p = pair(dir.path(), "test");
    let h = handshake(&p.config_b(), &p.config_a());
    assert!(h.initiator.status.success(), "{}", stderr(&h.initiator));
    assert!(h.responder.status.success(), "{}", stderr(&h.responder));
    let i = json(&h.initiator);
    let r = json(&h.responder);
    assert_eq!(i["event"], "established");
    assert_eq!(i["keys"], r["keys"]);
    assert_eq!(i["session"], r["session"]);
    assert_eq!(i["peer"], p.id_b.as_str());
    assert_eq!(r["peer"], p.id_a.as_str());
    assert_eq!(i["frames"], 3);
    assert_eq!(i["peer_verdict"], "Trusted");
    for d in [&p.a, &p.b] {
        assert!(d.join("store-a/master.rec").exists());
        assert!(d.join("store-b/master.rec").exists());
    }
    // Fingerprints only: no 32-byte key in hex anywhere in the output.
    let all = format!("{}{}", String::from_utf8_lossy(&h.initiator.stdout), String::from_utf8_lossy(&h.responder.stdout));
    assert!(!all.split(|c: char| !c.is_ascii_hexdigit()).any(|w| w.len() >= 64));
}

#[test]
fn wrong_golden_value_aborts_with_state_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let p = pair(dir.path(), "test");
    edit_toml(&p.config_a(), |t| {
        let peer = t["peer"].as_array_mut().unwrap()[0].as_table_mut().unwrap();
        let golden = vec![toml::Value::String(format!("5:{}", "ab".repeat(32)))];
        peer.insert("golden".into(), toml::Value::Array(golden));
    });
    let h = handshake(&p.config_b(), &p.config_a());
    assert_eq!(code(&h.initiator), 3);
    assert_eq!(reason(&h.initiator), "AttestationStateMismatch");
    assert_eq!(code(&h.responder), 3);
    assert_eq!(reason(&h.responder), "PeerAborted", "{}", stderr(&h.responder));
    assert!(!p.a.join("store-a/master.rec").exists());
}

#[test]
fn unreachable_peer_times_out() {
    let dir = tempfile::tempdir().unwrap();
    let p = pair(dir.path(), "test");
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    drop(listener);
    let out = stcp()
        .args(["node", "--role", "initiate", "--address", &addr, "--config"])
        .arg(p.config_a())
        .output()
        .unwrap();
    assert_eq!(code(&out), 3);
    assert_eq!(reason(&out), "Timeout");
}

#[test]
fn unknown_peer_id_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let p = pair(dir.path(), "test");
    let out = stcp()
        .args(["node", "--role", "initiate", "--peer", &"00".repeat(16), "--config"])
        .arg(p.config_a())
        .output()
        .unwrap();
    assert_eq!(reason(&out), "UnknownPeer");
}

#[test]
fn shipped_scenarios_pass() {
    for f in ["honest.toml", "attacks.toml", "kci.toml", "network.toml"] {
        let out = stcp().args(["attack", "--json", "--scenario"]).arg(scenarios_dir().join(f)).output().unwrap();
        assert!(out.status.success(), "{f}: {}{}", String::from_utf8_lossy(&out.stdout), stderr(&out));
        assert_eq!(json(&out)["passed"], true);
    }
}

#[test]
fn attack_with_seed_batch() {
    let out = stcp()
        .args(["attack", "--seeds", "3", "--scenario"])
        .arg(scenarios_dir().join("kci.toml"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("3/3 seeds passed"));
}

const SCENARIO_HEAD: &str = r#"
[[scenario]]
name = "probe"
seed = 1
[[scenario.node]]
label = "ad1"
[[scenario.node]]
label = "ad2"
[[scenario.run]]
initiator = "ad1"
responder = "ad2"
"#;

#[test]
fn unknown_adversary_action_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("bad.toml");
    fs::write(&f, format!("{SCENARIO_HEAD}[[scenario.action]]\nkind = \"teleport\"\n")).unwrap();
    let out = stcp().args(["attack", "--scenario"]).arg(&f).output().unwrap();
    assert_eq!(code(&out), 2);
    assert_eq!(reason(&out), "ConfigError");
}

#[test]
fn unmet_expectation_fails_the_command() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("wrong.toml");
    let text = SCENARIO_HEAD.replace("seed = 1", "seed = 1\nestablished_pairs = 0");
    fs::write(&f, text).unwrap();
    let out = stcp().args(["attack", "--scenario"]).arg(&f).output().unwrap();
    assert_eq!(code(&out), 5, "{}", stderr(&out));
    assert_eq!(reason(&out), "ScenarioFailed");
}

fn resume(cfg: &std::path::Path, vl: &str, dir: &str) -> std::process::Output {
    stcp().args(["resume", "--vl", vl, "--dir", dir, "--config"]).arg(cfg).output().unwrap()
}

#[test]
fn resume_matches_peer_and_refuses_bad_state() {
    let dir = tempfile::tempdir().unwrap();
    let p = pair(dir.path(), "test");
    let h = handshake(&p.config_b(), &p.config_a());
    assert!(h.initiator.status.success(), "{}", stderr(&h.initiator));
    let keys = json(&h.initiator)["keys"].clone();

    let ra = resume(&p.config_a(), "12", "b2a");
    let rb = resume(&p.config_b(), "12", "b2a");
    assert!(ra.status.success(), "{}", stderr(&ra));
    let (ja, jb) = (json(&ra), json(&rb));
    assert_eq!(ja["vl_keys"], jb["vl_keys"]);
    assert_eq!(ja["keys"], keys);
    assert_eq!(ja["frames"], 0);
    assert_ne!(ja["vl_keys"], json(&resume(&p.config_a(), "12", "a2b"))["vl_keys"]);

    // One damaged copy: still resumes, and says so.
    let store_a = p.a.join("store-a/master.rec");
    let mut bytes = fs::read(&store_a).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x01;
    fs::write(&store_a, &bytes).unwrap();
    let one = resume(&p.config_a(), "12", "b2a");
    assert!(one.status.success(), "{}", stderr(&one));
    assert_eq!(json(&one)["vl_keys"], ja["vl_keys"]);
    assert_eq!(json(&one)["degraded"].as_array().unwrap().len(), 1);

    edit_toml(&p.config_b(), |t| {
        t.insert("flight_id".into(), toml::Value::String("LH401-2026-10-18".into()));
    });
    let expired = resume(&p.config_b(), "12", "b2a");
    assert_eq!(code(&expired), 4);
    assert_eq!(reason(&expired), "SessionExpired");

    fs::write(p.a.join("store-b/master.rec"), b"garbage").unwrap();
    let gone = resume(&p.config_a(), "12", "b2a");
    assert_eq!(code(&gone), 4);
    assert_eq!(reason(&gone), "Unrecoverable");
}

#[test]
fn bench_rejects_zero_repetitions() {
    let out = stcp().args(["bench", "--reps", "0"]).output().unwrap();
    assert_eq!(code(&out), 2);
    assert_eq!(reason(&out), "Usage");
}

#[test]
fn bench_reports_phases() {
    let out = stcp().args(["bench", "--reps", "2", "--profile", "test", "--json"]).output().unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let v = json(&out);
    assert_eq!(v["repetitions"], 2);
    assert_eq!(v["dh_group"], "modp1024");
    assert!(v["latency_ms"]["median"].as_f64().unwrap() > 0.0);
    assert!(v["initiator_phases_ms"]["dh"].as_f64().unwrap() > 0.0);
    assert_eq!(v["reference_ms"]["full"], 4582.44);
}

#[test]
fn log_goes_to_stderr_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = stcp()
        .env("STCP_LOG", "info")
        .args(["keygen", "--profile", "test", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(stderr(&out).contains("generating"));
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 1);
}

#[test]
fn profile_is_never_implied() {
    let dir = tempfile::tempdir().unwrap();
    let out = stcp().args(["keygen", "--out"]).arg(dir.path()).output().unwrap();
    assert_eq!(code(&out), 2);
    let out = stcp().args(["bench", "--reps", "1"]).output().unwrap();
    assert_eq!(reason(&out), "Usage");
    let p = pair(dir.path(), "test");
    let bench = stcp().args(["bench", "--reps", "1", "--json", "--config"]).arg(p.config_a()).output().unwrap();
    assert_eq!(json(&bench)["profile"], "test");
}
