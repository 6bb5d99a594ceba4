//! Moving handshake frames between devices.
//!
//! [`transport`] carries frames over TCP or in-process channels and
//! [`driver`] runs one side of a handshake over a transport. [`sim`] is a
//! deterministic virtual-time network with a scripted adversary, fed by
//! TOML scenarios from [`script`].

mod batch;
pub mod driver;
pub mod report;
pub mod script;
pub mod sim;
pub mod topology;
pub mod transport;

pub use batch::{run_batch, run_batch_sequential, BatchSummary};
pub use driver::{
    bench_handshake, bench_tcp_loopback, run_initiator, run_responder, BenchError, BenchReport, DriverOutcome,
    HandshakeFailure, LatencyStats,
};
pub use report::{ExpectationResult, FrameRecord, NodeReport, Rejection, ScenarioReport, SessionOrigin, SessionReport};
pub use script::{
    AdversaryAction, AdversaryScript, FrameEdit, FrameMatch, NodeExpectation, ScenarioFile, ScenarioSpec,
};
pub use sim::{provision_scenario, run_scenario, run_scenario_seeded, LINK_LATENCY_MS};
pub use topology::{provision, BootTamper, NodeSpec, ProvisionedNode, ProvisionedTopology, SetupError};
pub use transport::{MemoryTransport, TcpTransport, Transport, TransportError};
