#![allow(dead_code)]

use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use stcp_core::net::{provision, NodeSpec, ProvisionedTopology};
use stcp_core::protocol::{decode, encode, HandshakeState, LocalDevice, ProtocolMessage};
use stcp_core::ParamProfile;

/// Two honest test-profile nodes, `ad1` and `ad2`.
pub fn pair() -> &'static ProvisionedTopology {
    static TOPO: OnceLock<ProvisionedTopology> = OnceLock::new();
    TOPO.get_or_init(|| {
        provision(ParamProfile::Test, &[NodeSpec::honest("ad1"), NodeSpec::honest("ad2")], 0x5eed).unwrap()
    })
}

pub fn devices() -> (&'static LocalDevice, &'static LocalDevice) {
    let t = pair();
    (&t.nodes[0].device, &t.nodes[1].device)
}

pub struct Completed {
    pub initiator: HandshakeState,
    pub responder: HandshakeState,
    pub frames: Vec<Vec<u8>>,
}

fn through_wire(msg: ProtocolMessage, frames: &mut Vec<Vec<u8>>) -> ProtocolMessage {
    let bytes = encode(&msg);
    let back = decode(&bytes).unwrap();
    frames.push(bytes);
    back
}

/// Runs one honest handshake, passing every message through the codec.
pub fn handshake(a: &LocalDevice, b: &LocalDevice, seed: u64) -> Completed {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut frames = Vec::new();
    let (mut init, m1) = HandshakeState::initiate(a, b.identity, &mut rng).unwrap();
    let ProtocolMessage::Msg1(m1) = through_wire(ProtocolMessage::Msg1(m1), &mut frames) else { unreachable!() };
    let (mut resp, m2) = HandshakeState::respond(b, &m1, &mut rng).unwrap();
    let ProtocolMessage::Msg2(m2) = through_wire(ProtocolMessage::Msg2(m2), &mut frames) else { unreachable!() };
    let m3 = init.process_msg2(a, &m2, &mut rng).unwrap();
    let ProtocolMessage::Msg3(m3) = through_wire(ProtocolMessage::Msg3(m3), &mut frames) else { unreachable!() };
    resp.process_msg3(b, &m3).unwrap();
    Completed {
        initiator: init,
        responder: resp,
        frames,
    }
}
