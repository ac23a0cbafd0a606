//! Save/restore of world states.
//!
//! Wire layout (little endian):
//!
//! ```text
//! "KGSV" | version: u16 | payload length: u32 | payload | checksum: u64
//! ```
//!
//! The payload is the canonical state bytes followed by the turn and
//! valid-step counters. The checksum is the leading eight bytes of the
//! SHA-256 of the payload.

use byteorder::{ByteOrder, LittleEndian};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{Location, WorldState};

const MAGIC: &[u8; 4] = b"KGSV";
pub const SNAPSHOT_VERSION: u16 = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SnapshotError {
    #[error("not a snapshot (bad magic)")]
    BadMagic,
    #[error("snapshot version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("snapshot is truncated")]
    Truncated,
    #[error("snapshot checksum mismatch")]
    Checksum,
    #[error("malformed snapshot payload: {0}")]
    Malformed(&'static str),
}

/// A frozen copy of a world state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SavedState {
    state: WorldState,
}

pub fn snapshot(state: &WorldState) -> SavedState {
    SavedState {
        state: state.clone(),
    }
}

pub fn restore(saved: &SavedState) -> WorldState {
    saved.state.clone()
}

fn checksum(payload: &[u8]) -> u64 {
    LittleEndian::read_u64(&Sha256::digest(payload)[..8])
}

impl SavedState {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload = Vec::new();
        self.state.canonical_bytes(&mut payload);
        payload.extend_from_slice(&self.state.turns.to_le_bytes());
        payload.extend_from_slice(&self.state.valid_steps.to_le_bytes());

        let mut out = Vec::with_capacity(payload.len() + 18);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
        out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&payload);
        out.extend_from_slice(&checksum(&payload).to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SnapshotError> {
        if bytes.len() < 10 {
            return Err(SnapshotError::Truncated);
        }
        if &bytes[..4] != MAGIC {
            return Err(SnapshotError::BadMagic);
        }
        let version = LittleEndian::read_u16(&bytes[4..6]);
        if version != SNAPSHOT_VERSION {
            return Err(SnapshotError::VersionMismatch {
                found: version,
                expected: SNAPSHOT_VERSION,
            });
        }
        let len = LittleEndian::read_u32(&bytes[6..10]) as usize;
        if bytes.len() != 10 + len + 8 {
            return Err(SnapshotError::Truncated);
        }
        let payload = &bytes[10..10 + len];
        if LittleEndian::read_u64(&bytes[10 + len..]) != checksum(payload) {
            return Err(SnapshotError::Checksum);
        }
        let mut r = Reader { buf: payload };
        let room = r.u32()? as usize;
        let n = r.u32()? as usize;
        let mut locations = Vec::with_capacity(n);
        for _ in 0..n {
            let tag = r.u8()?;
            let v = r.u32()? as usize;
            locations.push(match tag {
                0 => Location::Room(v),
                1 => Location::Inside(v),
                2 => Location::Inventory,
                _ => return Err(SnapshotError::Malformed("location tag")),
            });
        }
        let open = r.flags()?;
        let locked = r.flags()?;
        let visited = r.flags()?;
        let score = r.u64()? as i64;
        let hits = r.u32()? as usize;
        let mut rule_hits = Vec::with_capacity(hits);
        for _ in 0..hits {
            rule_hits.push(r.u32()?);
        }
        let rng = r.u64()?;
        let turns = r.u32()?;
        let valid_steps = r.u32()?;
        if !r.buf.is_empty() {
            return Err(SnapshotError::Malformed("trailing bytes"));
        }
        Ok(SavedState {
            state: WorldState {
                room,
                locations,
                open,
                locked,
                visited,
                score,
                rule_hits,
                turns,
                valid_steps,
                rng,
            },
        })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], SnapshotError> {
        if self.buf.len() < n {
            return Err(SnapshotError::Truncated);
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, SnapshotError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, SnapshotError> {
        Ok(LittleEndian::read_u32(self.take(4)?))
    }

    fn u64(&mut self) -> Result<u64, SnapshotError> {
        Ok(LittleEndian::read_u64(self.take(8)?))
    }

    fn flags(&mut self) -> Result<Vec<bool>, SnapshotError> {
        let n = self.u32()? as usize;
        self.take(n)?
            .iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                _ => Err(SnapshotError::Malformed("flag byte")),
            })
            .collect()
    }
}
