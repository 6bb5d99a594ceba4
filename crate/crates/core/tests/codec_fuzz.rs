mod common;

use proptest::prelude::*;
use stcp_core::protocol::{decode, encode, AbortFrame, AbortReason, ProtocolMessage, SessionCookie, MAX_FRAME_LEN};

fn valid_frames() -> &'static [Vec<u8>] {
    static FRAMES: std::sync::OnceLock<Vec<Vec<u8>>> = std::sync::OnceLock::new();
    FRAMES.get_or_init(|| {
        let (a, b) = common::devices();
        let mut frames = common::handshake(a, b, 77).frames;
        frames.push(encode(&ProtocolMessage::Abort(AbortFrame {
            reason: AbortReason::Timeout,
            cookie: SessionCookie([9; 32]),
        })));
        frames
    })
}

/// Decoding never panics, and anything it accepts re-encodes to the same
/// bytes.
fn check(bytes: &[u8]) -> Result<(), TestCaseError> {
    if let Ok(msg) = decode(bytes) {
        prop_assert_eq!(encode(&msg), bytes.to_vec());
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4000))]

    #[test]
    fn random_bytes(bytes in prop::collection::vec(any::<u8>(), 0..1200)) {
        check(&bytes)?;
    }

    #[test]
    fn random_bytes_with_plausible_header(
        kind in 0u8..=0x80,
        body in prop::collection::vec(any::<u8>(), 0..1200),
    ) {
        let mut bytes = ((body.len() + 2) as u32).to_be_bytes().to_vec();
        bytes.push(1);
        bytes.push(kind);
        bytes.extend_from_slice(&body);
        check(&bytes)?;
    }

    #[test]
    fn mutated_valid_frames(
        which in 0usize..4,
        edits in prop::collection::vec((any::<prop::sample::Index>(), any::<u8>()), 1..6),
        cut in proptest::option::of(any::<prop::sample::Index>()),
    ) {
        let mut bytes = valid_frames()[which].clone();
        for (i, v) in edits {
            let i = i.index(bytes.len());
            bytes[i] = v;
        }
        if let Some(c) = cut {
            bytes.truncate(c.index(bytes.len()));
        }
        check(&bytes)?;
    }
}

#[test]
fn valid_frames_round_trip() {
    for f in valid_frames() {
        assert_eq!(&encode(&decode(f).unwrap()), f);
    }
}

#[test]
fn oversized_length_is_refused_without_allocating() {
    let mut bytes = ((MAX_FRAME_LEN + 1) as u32).to_be_bytes().to_vec();
    bytes.extend_from_slice(&[1, 1]);
    assert!(decode(&bytes).is_err());
    assert!(decode(&u32::MAX.to_be_bytes()).is_err());
}
