//! `stcp`: provision devices, run handshakes over TCP, resume VL keys from
//! storage, replay adversary scenarios and measure latency.

mod commands;
mod config;
mod error;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stcp_core::vl::Direction;
use stcp_core::ParamProfile;

use commands::{attack, bench, keygen, node, resume};
use error::CliError;

#[derive(Parser)]
#[command(name = "stcp", version, about = "Trusted channel handshake for avionics wireless links")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create keys, a boot manifest, a public bundle and a starter config.
    Keygen {
        #[arg(long)]
        out: PathBuf,
        /// `full` or `test`; there is no default.
        #[arg(long)]
        profile: ParamProfile,
        #[arg(long)]
        name: Option<String>,
        #[arg(long, default_value = "unassigned")]
        flight_id: String,
        /// Replace an existing device in `--out`.
        #[arg(long)]
        force: bool,
    },
    /// Run one handshake over TCP and store the master keys.
    Node {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        role: node::NodeRole,
        /// Identity of the peer to contact (initiate only).
        #[arg(long)]
        peer: Option<String>,
        /// Overrides the peer's configured address.
        #[arg(long)]
        address: Option<String>,
        /// Overrides the configured listen address.
        #[arg(long)]
        listen: Option<String>,
    },
    /// Rebuild VL keys from stored master keys after a reset.
    Resume {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        vl: u16,
        #[arg(long = "dir")]
        direction: Direction,
        #[arg(long, value_enum, default_value = "both")]
        needs: resume::Needs,
    },
    /// Replay adversary scenarios in the deterministic simulator.
    Attack {
        #[arg(long)]
        scenario: PathBuf,
        /// Print the frame trace of each scenario to stderr.
        #[arg(long)]
        trace: bool,
        /// One JSON object per line instead of text.
        #[arg(long)]
        json: bool,
        /// Repeat each scenario over this many seeds.
        #[arg(long)]
        seeds: Option<u64>,
    },
    /// Measure handshake latency between two local devices over loopback TCP.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        reps: usize,
        /// Taken from `--config` when not given.
        #[arg(long)]
        profile: Option<ParamProfile>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        json: bool,
    },
}

fn print_json(v: &serde_json::Value) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{v}");
    let _ = out.flush();
}

fn print_attack_text(v: &serde_json::Value) {
    match v["event"].as_str() {
        Some("scenario") => {
            println!(
                "{}: {} (frames={} pairs={} seed={})",
                v["name"].as_str().unwrap_or("?"),
                if v["passed"].as_bool() == Some(true) { "PASS" } else { "FAIL" },
                v["protocol_frames"],
                v["established_pairs"],
                v["seed"]
            );
            for e in v["expectations"].as_array().into_iter().flatten() {
                if e["passed"].as_bool() != Some(true) {
                    println!("  failed check: {} {}", e["check"].as_str().unwrap_or(""), e["detail"].as_str().unwrap_or(""));
                }
            }
        }
        Some("batch") => {
            let s = &v["summary"];
            println!("{}: {}/{} seeds passed", s["scenario"].as_str().unwrap_or("?"), s["passed"], s["runs"]);
        }
        _ => {}
    }
}

fn print_bench_text(v: &serde_json::Value) {
    let l = &v["latency_ms"];
    println!(
        "profile {} ({}, RSA-{}, AES-256), {} handshakes over loopback TCP",
        v["profile"].as_str().unwrap_or("?"),
        v["dh_group"].as_str().unwrap_or("?"),
        v["rsa_bits"],
        v["repetitions"]
    );
    let f = |x: &serde_json::Value| x.as_f64().unwrap_or(0.0);
    println!(
        "latency ms: median {:.2}  min {:.2}  mean {:.2}  max {:.2}",
        f(&l["median"]),
        f(&l["min"]),
        f(&l["mean"]),
        f(&l["max"])
    );
    for side in ["initiator", "responder"] {
        let p = &v[format!("{side}_phases_ms")];
        println!(
            "{side:>9} ms: dh {:.2}  signing {:.2}  attestation {:.2}  sealing {:.2}",
            f(&p["dh"]),
            f(&p["signing"]),
            f(&p["attestation"]),
            f(&p["sealing"])
        );
    }
    println!(
        "published embedded-hardware measurements for comparison: {:.2} ms (full-size keys), {:.2} ms (reduced keys)",
        bench::REFERENCE_FULL_MS,
        bench::REFERENCE_REDUCED_MS
    );
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Keygen {
            out,
            profile,
            name,
            flight_id,
            force,
        } => {
            let v = keygen::run(keygen::KeygenArgs {
                out,
                profile,
                name,
                flight_id,
                force,
            })?;
            print_json(&v);
        }
        Command::Node {
            config,
            role,
            peer,
            address,
            listen,
        } => {
            let v = node::run(
                node::NodeArgs {
                    config: &config,
                    role,
                    peer,
                    address,
                    listen,
                },
                &mut |v| print_json(&v),
            )?;
            print_json(&v);
        }
        Command::Resume {
            config,
            vl,
            direction,
            needs,
        } => {
            let v = resume::run(resume::ResumeArgs {
                config: &config,
                vl,
                direction,
                needs,
            })?;
            print_json(&v);
        }
        Command::Attack {
            scenario,
            trace,
            json,
            seeds,
        } => {
            let mut emit = |v: serde_json::Value| {
                if json {
                    print_json(&v)
                } else {
                    print_attack_text(&v)
                }
            };
            let v = attack::run(
                attack::AttackArgs {
                    scenario: &scenario,
                    trace,
                    seeds,
                },
                &mut emit,
            )?;
            if json {
                print_json(&v);
            }
        }
        Command::Bench {
            config,
            reps,
            profile,
            seed,
            json,
        } => {
            let v = bench::run(bench::BenchArgs {
                config: config.as_deref(),
                reps,
                profile,
                seed,
            })?;
            if json {
                print_json(&v);
            } else {
                print_bench_text(&v);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("STCP_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.exit)
        }
    }
}
