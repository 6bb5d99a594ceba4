mod common;

use std::fs;

use stcp_core::vl::{
    derive_vl_keys, persist, resume, CopyFault, Direction, KeyNeeds, MasterSessionRecord, StorageKey, VirtualLinkId,
    VlError,
};

const FLIGHT: &str = "AWN-2026-10-17-LH400";

fn vls() -> Vec<VirtualLinkId> {
    [3u16, 17, 4095]
        .into_iter()
        .flat_map(|n| [VirtualLinkId::new(n, Direction::AtoB), VirtualLinkId::new(n, Direction::BtoA)])
        .collect()
}

fn derive_all(r: &MasterSessionRecord) -> Vec<[u8; 32]> {
    vls()
        .into_iter()
        .flat_map(|vl| {
            let k = derive_vl_keys(r, vl, KeyNeeds::Both, FLIGHT).unwrap();
            [k.encryption.unwrap(), k.mac.unwrap()]
        })
        .collect()
}

struct Stores {
    _dir: tempfile::TempDir,
    a: std::path::PathBuf,
    b: std::path::PathBuf,
}

fn stores() -> Stores {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a/master.rec");
    let b = dir.path().join("b/master.rec");
    fs::create_dir_all(a.parent().unwrap()).unwrap();
    fs::create_dir_all(b.parent().unwrap()).unwrap();
    Stores { _dir: dir, a, b }
}

fn established_record() -> (MasterSessionRecord, MasterSessionRecord) {
    let (a, b) = common::devices();
    let done = common::handshake(a, b, 31);
    let ia = done.initiator.established().unwrap();
    let rb = done.responder.established().unwrap();
    (
        MasterSessionRecord::from_session(&ia, FLIGHT, 1_792_000_000),
        MasterSessionRecord::from_session(&rb, FLIGHT, 1_792_000_000),
    )
}

#[test]
fn resume_reproduces_vl_keys_without_frames() {
    let (ra, rb) = established_record();
    let before = derive_all(&ra);
    assert_eq!(before, derive_all(&rb), "both ends derive the same VL keys");
    let distinct: std::collections::HashSet<_> = before.iter().collect();
    assert_eq!(distinct.len(), before.len());

    let s = stores();
    let key = StorageKey::new([0x42; 32]);
    persist(&ra, &s.a, &s.b, &key).unwrap();
    drop(ra);

    // Resumption touches only the two files; there is no transport here at all.
    let resumed = resume(&s.a, &s.b, FLIGHT, &key).unwrap();
    assert!(resumed.degraded.is_empty());
    assert_eq!(derive_all(&resumed.record), before);
}

#[test]
fn one_corrupt_copy_still_resumes() {
    let (ra, _) = established_record();
    let before = derive_all(&ra);
    for victim in [0usize, 1] {
        let s = stores();
        let key = StorageKey::new([7; 32]);
        persist(&ra, &s.a, &s.b, &key).unwrap();
        let path = if victim == 0 { &s.a } else { &s.b };
        let mut bytes = fs::read(path).unwrap();
        bytes[50] ^= 0x01;
        fs::write(path, bytes).unwrap();
        let resumed = resume(&s.a, &s.b, FLIGHT, &key).unwrap();
        assert_eq!(derive_all(&resumed.record), before);
        assert_eq!(resumed.degraded.len(), 1);
        assert_eq!(&resumed.degraded[0].0, path);
        assert!(matches!(resumed.degraded[0].1, CopyFault::Corrupt(_)));
    }
}

#[test]
fn both_copies_bad_is_unrecoverable() {
    let (ra, _) = established_record();
    let s = stores();
    let key = StorageKey::new([7; 32]);
    persist(&ra, &s.a, &s.b, &key).unwrap();
    fs::remove_file(&s.a).unwrap();
    let mut bytes = fs::read(&s.b).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0x80;
    fs::write(&s.b, bytes).unwrap();
    let err = resume(&s.a, &s.b, FLIGHT, &key).unwrap_err();
    assert!(matches!(err, VlError::Unrecoverable { a: CopyFault::Missing, b: CopyFault::Corrupt(_) }));
}

#[test]
fn other_flight_is_refused() {
    let (ra, _) = established_record();
    let s = stores();
    let key = StorageKey::new([7; 32]);
    persist(&ra, &s.a, &s.b, &key).unwrap();
    let err = resume(&s.a, &s.b, "AWN-2026-10-18-LH401", &key).unwrap_err();
    assert!(matches!(err, VlError::Expired { .. }));
    assert!(derive_vl_keys(&ra, vls()[0], KeyNeeds::Both, "other").is_err());
}

#[test]
fn wrong_storage_key_is_refused() {
    let (ra, _) = established_record();
    let s = stores();
    persist(&ra, &s.a, &s.b, &StorageKey::new([1; 32])).unwrap();
    assert!(resume(&s.a, &s.b, FLIGHT, &StorageKey::new([2; 32])).is_err());
}
