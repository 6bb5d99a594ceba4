//! On-disk master session record.
//!
//! ```text
//! magic[8] = "STCPMSR\0"
//! version:u8 = 1
//! session_id[32] peer_id[16] master_ke[32] master_ka[32]
//! established_at:u64
//! flight_len:u16 flight_id[flight_len]      (UTF-8)
//! checksum[32] = HMAC-SHA256(storage_key, every preceding byte)
//! ```
//!
//! The record is written to two independent paths. Each write goes to a
//! temporary sibling file that is then renamed over the target, under an
//! advisory lock on `<path>.lock`.

use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use hmac::{Hmac, Mac};
use sha2::Sha256;
use zeroize::Zeroizing;

use super::{MasterSessionRecord, VlError};

pub const RECORD_MAGIC: &[u8; 8] = b"STCPMSR\0";
pub const RECORD_VERSION: u8 = 1;
const FIXED_LEN: usize = 8 + 1 + 32 + 16 + 32 + 32 + 8 + 2;
const CHECKSUM_LEN: usize = 32;

/// Device-local key for the record checksum.
#[derive(Clone)]
pub struct StorageKey(pub Zeroizing<[u8; 32]>);

impl StorageKey {
    pub fn new(bytes: [u8; 32]) -> Self {
        StorageKey(Zeroizing::new(bytes))
    }

    fn mac(&self) -> Hmac<Sha256> {
        Hmac::<Sha256>::new_from_slice(&self.0[..]).expect("any key length")
    }
}

impl fmt::Debug for StorageKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("StorageKey(..)")
    }
}

/// Why one copy of the record could not be used.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CopyFault {
    Missing,
    Unreadable(String),
    Corrupt(&'static str),
    /// Valid, but differs from the copy that was used.
    Diverged,
}

impl fmt::Display for CopyFault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CopyFault::Missing => f.write_str("missing"),
            CopyFault::Unreadable(e) => write!(f, "unreadable ({e})"),
            CopyFault::Corrupt(why) => write!(f, "corrupt ({why})"),
            CopyFault::Diverged => f.write_str("diverged"),
        }
    }
}

pub(crate) fn encode_record(record: &MasterSessionRecord, key: &StorageKey) -> Result<Zeroizing<Vec<u8>>, VlError> {
    let flight = record.flight_id.as_bytes();
    if flight.len() > u16::MAX as usize {
        return Err(VlError::FlightIdTooLong(flight.len()));
    }
    let mut out = Zeroizing::new(Vec::with_capacity(FIXED_LEN + flight.len() + CHECKSUM_LEN));
    out.extend_from_slice(RECORD_MAGIC);
    out.push(RECORD_VERSION);
    out.extend_from_slice(&record.session_id);
    out.extend_from_slice(&record.peer_id);
    out.extend_from_slice(&record.master_ke);
    out.extend_from_slice(&record.master_ka);
    out.extend_from_slice(&record.established_at.to_be_bytes());
    out.extend_from_slice(&(flight.len() as u16).to_be_bytes());
    out.extend_from_slice(flight);
    let mut mac = key.mac();
    mac.update(&out);
    out.extend_from_slice(&mac.finalize().into_bytes());
    Ok(out)
}

pub(crate) fn decode_record(bytes: &[u8], key: &StorageKey) -> Result<MasterSessionRecord, CopyFault> {
    if bytes.len() < FIXED_LEN + CHECKSUM_LEN {
        return Err(CopyFault::Corrupt("truncated"));
    }
    let (body, tag) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
    let mut mac = key.mac();
    mac.update(body);
    mac.verify_slice(tag).map_err(|_| CopyFault::Corrupt("checksum mismatch"))?;
    if &body[..8] != RECORD_MAGIC {
        return Err(CopyFault::Corrupt("bad magic"));
    }
    if body[8] != RECORD_VERSION {
        return Err(CopyFault::Corrupt("unsupported version"));
    }
    let mut at = 9;
    let mut take = |n: usize| {
        let s = &body[at..at + n];
        at += n;
        s
    };
    let session_id = take(32).try_into().unwrap();
    let peer_id = take(16).try_into().unwrap();
    let master_ke = take(32).try_into().unwrap();
    let master_ka = take(32).try_into().unwrap();
    let established_at = u64::from_be_bytes(take(8).try_into().unwrap());
    let flight_len = u16::from_be_bytes(take(2).try_into().unwrap()) as usize;
    if body.len() != FIXED_LEN + flight_len {
        return Err(CopyFault::Corrupt("length mismatch"));
    }
    let flight_id = std::str::from_utf8(&body[FIXED_LEN..])
        .map_err(|_| CopyFault::Corrupt("flight id is not UTF-8"))?
        .to_owned();
    Ok(MasterSessionRecord {
        session_id,
        peer_id,
        master_ke,
        master_ka,
        flight_id,
        established_at,
    })
}

fn lock_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".lock");
    PathBuf::from(s)
}

fn open_lock(path: &Path) -> std::io::Result<File> {
    OpenOptions::new()
        .create(true)
        .truncate(false)
        .write(true)
        .open(lock_path(path))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let lock = open_lock(path)?;
    lock.lock()?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let result = (|| {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

/// Writes the record to both stores. The two files are byte-identical.
pub fn persist(
    record: &MasterSessionRecord,
    store_a: &Path,
    store_b: &Path,
    key: &StorageKey,
) -> Result<(), VlError> {
    let bytes = encode_record(record, key)?;
    for path in [store_a, store_b] {
        write_atomic(path, &bytes).map_err(|source| VlError::Persistence {
            path: path.display().to_string(),
            source,
        })?;
    }
    Ok(())
}

/// Reads and checks one copy.
pub fn load_copy(path: &Path, key: &StorageKey) -> Result<MasterSessionRecord, CopyFault> {
    if !path.exists() {
        return Err(CopyFault::Missing);
    }
    let bytes = (|| {
        let lock = open_lock(path)?;
        lock.lock_shared()?;
        fs::read(path)
    })()
    .map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CopyFault::Missing,
        _ => CopyFault::Unreadable(e.to_string()),
    })?;
    let bytes = Zeroizing::new(bytes);
    decode_record(&bytes, key)
}

/// Outcome of a successful resume.
#[derive(Debug)]
pub struct Resumed {
    pub record: MasterSessionRecord,
    /// Copies that were missing, damaged or out of step.
    pub degraded: Vec<(PathBuf, CopyFault)>,
}

/// Loads the first valid copy (store A first) and checks the flight.
pub fn resume(store_a: &Path, store_b: &Path, flight_id: &str, key: &StorageKey) -> Result<Resumed, VlError> {
    let a = load_copy(store_a, key);
    let b = load_copy(store_b, key);
    let (record, degraded) = match (a, b) {
        (Ok(ra), Ok(rb)) => {
            let degraded = if ra == rb {
                vec![]
            } else {
                vec![(store_b.to_path_buf(), CopyFault::Diverged)]
            };
            (ra, degraded)
        }
        (Ok(ra), Err(fb)) => (ra, vec![(store_b.to_path_buf(), fb)]),
        (Err(fa), Ok(rb)) => (rb, vec![(store_a.to_path_buf(), fa)]),
        (Err(a), Err(b)) => return Err(VlError::Unrecoverable { a, b }),
    };
    record.check_flight(flight_id)?;
    Ok(Resumed { record, degraded })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record() -> MasterSessionRecord {
        MasterSessionRecord {
            session_id: [0xaa; 32],
            peer_id: [0xbb; 16],
            master_ke: [0xcc; 32],
            master_ka: [0xdd; 32],
            flight_id: "BA117".into(),
            established_at: 42,
        }
    }

    fn key() -> StorageKey {
        StorageKey::new([9; 32])
    }

    #[test]
    fn encode_layout() {
        let bytes = encode_record(&record(), &key()).unwrap();
        assert_eq!(bytes.len(), FIXED_LEN + 5 + CHECKSUM_LEN);
        assert_eq!(&bytes[..8], RECORD_MAGIC);
        assert_eq!(bytes[8], 1);
        assert_eq!(&bytes[9..41], &[0xaa; 32]);
        assert_eq!(&bytes[121..129], &42u64.to_be_bytes());
        assert_eq!(&bytes[129..131], &5u16.to_be_bytes());
        assert_eq!(&bytes[131..136], b"BA117");
        assert_eq!(decode_record(&bytes, &key()).unwrap(), record());
    }

    #[test]
    fn every_byte_flip_detected() {
        let bytes = encode_record(&record(), &key()).unwrap();
        for i in 0..bytes.len() {
            let mut b = bytes.to_vec();
            b[i] ^= 0x01;
            assert!(decode_record(&b, &key()).is_err(), "byte {i}");
        }
        assert!(decode_record(&bytes, &StorageKey::new([8; 32])).is_err());
    }

    #[test]
    fn fallback_and_unrecoverable() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.msr"), dir.path().join("b.msr"));
        let err = resume(&a, &b, "BA117", &key()).unwrap_err();
        assert!(matches!(
            err,
            VlError::Unrecoverable { a: CopyFault::Missing, b: CopyFault::Missing }
        ));

        persist(&record(), &a, &b, &key()).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        let r = resume(&a, &b, "BA117", &key()).unwrap();
        assert!(r.degraded.is_empty());

        let mut raw = fs::read(&a).unwrap();
        raw[60] ^= 0x10;
        fs::write(&a, &raw).unwrap();
        let r = resume(&a, &b, "BA117", &key()).unwrap();
        assert_eq!(r.record, record());
        assert_eq!(r.degraded, vec![(a.clone(), CopyFault::Corrupt("checksum mismatch"))]);

        fs::write(&b, b"junk").unwrap();
        assert!(matches!(
            resume(&a, &b, "BA117", &key()).unwrap_err(),
            VlError::Unrecoverable { .. }
        ));
    }

    #[test]
    fn persist_into_missing_directory_fails() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.msr");
        let b = dir.path().join("nope").join("b.msr");
        assert!(matches!(
            persist(&record(), &a, &b, &key()).unwrap_err(),
            VlError::Persistence { .. }
        ));
    }
}
