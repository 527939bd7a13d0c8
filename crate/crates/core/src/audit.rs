//! Append-only, hash-chained audit log.
//!
//! File layout: magic `LGAUDIT1`, a `u32` header length, the JSON header,
//! then records, each a `u32` length followed by the canonical body and its
//! SHA-256. Every record binds the header digest and its predecessor's hash;
//! the first record chains to 32 zero bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::{sha256, Digest, Reader, Writer, ZERO_DIGEST};
use crate::error::{Error, Result};
use crate::policy::{Decision, Thresholds};

pub const MAGIC: &[u8; 8] = b"LGAUDIT1";
/// Canonical body length in bytes.
pub const BODY_LEN: usize = 8 + 1 + 8 + 4 + 4 + 8 + 8 + 1 + 4 + 32 + 32;
/// Body plus hash.
pub const RECORD_LEN: usize = BODY_LEN + 32;
/// Length prefix plus record.
pub const FRAME_LEN: usize = 4 + RECORD_LEN;

pub const FLAG_PF_DEGENERATE: u32 = 1;
pub const FLAG_SWITCHED: u32 = 1 << 1;
pub const FLAG_CLAMPED: u32 = 1 << 2;
pub const FLAG_MONITOR_ONLY: u32 = 1 << 3;

/// Decision byte for monitor-only intervals.
pub const DECISION_NONE: u8 = 0xFF;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Outcome {
    Completed,
    Aborted,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbortReason {
    None,
    KillThreshold,
    StrikeLimit,
    EnvFailure,
}

impl AbortReason {
    fn code(self) -> u32 {
        match self {
            AbortReason::None => 0,
            AbortReason::KillThreshold => 1,
            AbortReason::StrikeLimit => 2,
            AbortReason::EnvFailure => 3,
        }
    }

    pub fn from_code(c: u32) -> Option<Self> {
        match c {
            0 => Some(AbortReason::None),
            1 => Some(AbortReason::KillThreshold),
            2 => Some(AbortReason::StrikeLimit),
            3 => Some(AbortReason::EnvFailure),
            _ => None,
        }
    }
}

/// Run context written once at the top of the file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditHeader {
    pub n: u32,
    pub workload: String,
    pub tier: u8,
    pub seed: u64,
    pub thresholds: Thresholds,
    pub artifact_digest: String,
    /// Remaining knobs (estimator, filter, router, policy), as configured.
    pub config: serde_json::Value,
}

/// Fields supplied by the caller for one interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Payload {
    pub interval: u64,
    pub segment: u32,
    pub backend: u32,
    pub theta: f64,
    pub delta_hat: f64,
    /// `None` in monitor-only runs.
    pub decision: Option<Decision>,
    pub flags: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecordKind {
    Interval,
    Terminal,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AuditRecord {
    pub seq: u64,
    /// 0 for interval records, 1 for the terminal record.
    pub kind: u8,
    pub interval: u64,
    pub segment: u32,
    pub backend: u32,
    pub theta: f64,
    pub delta_hat: f64,
    /// Decision code, [`DECISION_NONE`], or for the terminal record the
    /// outcome (0 completed, 1 aborted).
    pub decision: u8,
    /// Flag bits, or for the terminal record the abort reason code.
    pub flags: u32,
    pub header_digest: Digest,
    pub prev_hash: Digest,
    pub hash: Digest,
}

impl AuditRecord {
    pub fn record_kind(&self) -> Option<RecordKind> {
        match self.kind {
            0 => Some(RecordKind::Interval),
            1 => Some(RecordKind::Terminal),
            _ => None,
        }
    }

    pub fn outcome(&self) -> Option<Outcome> {
        match (self.record_kind()?, self.decision) {
            (RecordKind::Terminal, 0) => Some(Outcome::Completed),
            (RecordKind::Terminal, 1) => Some(Outcome::Aborted),
            _ => None,
        }
    }

    fn body(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u64(self.seq)
            .u8(self.kind)
            .u64(self.interval)
            .u32(self.segment)
            .u32(self.backend)
            .f64(self.theta)
            .f64(self.delta_hat)
            .u8(self.decision)
            .u32(self.flags)
            .bytes(&self.header_digest)
            .bytes(&self.prev_hash);
        w.into_inner()
    }

    fn decode(frame: &[u8]) -> Result<Self> {
        let mut r = Reader::new(frame);
        Ok(Self {
            seq: r.u64()?,
            kind: r.u8()?,
            interval: r.u64()?,
            segment: r.u32()?,
            backend: r.u32()?,
            theta: r.f64()?,
            delta_hat: r.f64()?,
            decision: r.u8()?,
            flags: r.u32()?,
            header_digest: r.digest()?,
            prev_hash: r.digest()?,
            hash: r.digest()?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Verification {
    pub ok: bool,
    /// Index of the first record that failed, or the record count if only
    /// the trailing bytes were bad.
    pub first_bad: Option<u64>,
}

impl Verification {
    fn good() -> Self {
        Self {
            ok: true,
            first_bad: None,
        }
    }

    fn bad(i: u64) -> Self {
        Self {
            ok: false,
            first_bad: Some(i),
        }
    }
}

#[derive(Clone, Debug)]
pub struct AuditLog {
    header_bytes: Vec<u8>,
    header_digest: Digest,
    records: Vec<AuditRecord>,
    finalized: bool,
}

impl AuditLog {
    pub fn new(header: &AuditHeader) -> Result<Self> {
        let header_bytes = serde_json::to_vec(header)?;
        Ok(Self {
            header_digest: sha256(&header_bytes),
            header_bytes,
            records: Vec::new(),
            finalized: false,
        })
    }

    pub fn header(&self) -> Result<AuditHeader> {
        Ok(serde_json::from_slice(&self.header_bytes)?)
    }

    pub fn header_digest(&self) -> &Digest {
        &self.header_digest
    }

    pub fn records(&self) -> &[AuditRecord] {
        &self.records
    }

    pub fn is_finalized(&self) -> bool {
        self.finalized
    }

    /// Hash of the terminal record, once finalised.
    pub fn attestation(&self) -> Option<Digest> {
        self.finalized
            .then(|| self.records.last().map(|r| r.hash))
            .flatten()
    }

    fn push(&mut self, kind: u8, p: &Payload, decision: u8) -> &AuditRecord {
        let prev_hash = self.records.last().map_or(ZERO_DIGEST, |r| r.hash);
        let mut rec = AuditRecord {
            seq: self.records.len() as u64,
            kind,
            interval: p.interval,
            segment: p.segment,
            backend: p.backend,
            theta: p.theta,
            delta_hat: p.delta_hat,
            decision,
            flags: p.flags,
            header_digest: self.header_digest,
            prev_hash,
            hash: ZERO_DIGEST,
        };
        rec.hash = sha256(&rec.body());
        self.records.push(rec);
        self.records.last().unwrap()
    }

    pub fn append(&mut self, p: &Payload) -> Result<&AuditRecord> {
        if self.finalized {
            return Err(Error::Lifecycle("append after finalise".into()));
        }
        let decision = p.decision.map_or(DECISION_NONE, Decision::code);
        Ok(self.push(0, p, decision))
    }

    /// Append the terminal record and return its hash as the attestation.
    /// `last` carries the position and triggering estimate of the final
    /// interval.
    pub fn finalize(
        &mut self,
        outcome: Outcome,
        reason: AbortReason,
        last: &Payload,
    ) -> Result<Digest> {
        if self.finalized {
            return Err(Error::Lifecycle("log already finalised".into()));
        }
        let code = match outcome {
            Outcome::Completed => 0,
            Outcome::Aborted => 1,
        };
        let p = Payload {
            flags: reason.code(),
            ..*last
        };
        let hash = self.push(1, &p, code).hash;
        self.finalized = true;
        Ok(hash)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(MAGIC)
            .u32(self.header_bytes.len() as u32)
            .bytes(&self.header_bytes);
        for r in &self.records {
            w.u32(RECORD_LEN as u32).bytes(&r.body()).bytes(&r.hash);
        }
        w.into_inner()
    }

    /// Parse without checking hashes; see [`verify_bytes`].
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header_bytes, start) = split_header(bytes)?;
        let mut records = Vec::new();
        let mut r = Reader::new(&bytes[start..]);
        while r.remaining() > 0 {
            if r.u32()? as usize != RECORD_LEN {
                return Err(Error::Input("bad record length prefix".into()));
            }
            records.push(AuditRecord::decode(r.take(RECORD_LEN)?)?);
        }
        let finalized = records.last().is_some_and(|r| r.kind == 1);
        Ok(Self {
            header_digest: sha256(header_bytes),
            header_bytes: header_bytes.to_vec(),
            records,
            finalized,
        })
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Recompute every hash and check the chain.
    pub fn verify(&self) -> Verification {
        verify_records(&self.records, &self.header_digest, 0, ZERO_DIGEST)
    }
}

fn split_header(bytes: &[u8]) -> Result<(&[u8], usize)> {
    let mut r = Reader::new(bytes);
    if r.take(MAGIC.len()).ok() != Some(MAGIC.as_slice()) {
        return Err(Error::Input("not an audit log".into()));
    }
    let len = r.u32()? as usize;
    let header = r.take(len)?;
    Ok((header, r.position()))
}

fn verify_records(
    records: &[AuditRecord],
    header: &Digest,
    first_seq: u64,
    mut prev: Digest,
) -> Verification {
    let mut terminal_seen = false;
    for (i, rec) in records.iter().enumerate() {
        let seq = first_seq + i as u64;
        let well_formed = rec.seq == seq
            && rec.prev_hash == prev
            && rec.header_digest == *header
            && rec.record_kind().is_some()
            && !terminal_seen
            && sha256(&rec.body()) == rec.hash;
        if !well_formed {
            return Verification::bad(seq);
        }
        terminal_seen = rec.kind == 1;
        prev = rec.hash;
    }
    Verification::good()
}

/// Byte offset of record `i` (its length prefix) within a file whose header
/// occupies `header_len` bytes.
pub fn record_offset(header_len: usize, i: usize) -> usize {
    MAGIC.len() + 4 + header_len + i * FRAME_LEN
}

/// Verify a serialized log end to end.
pub fn verify_bytes(bytes: &[u8]) -> Verification {
    let Ok((header, start)) = split_header(bytes) else {
        return Verification::bad(0);
    };
    let count = (bytes.len() - start) / FRAME_LEN;
    let v = verify_frames(bytes, start, sha256(header), 0, count, ZERO_DIGEST);
    if !v.ok {
        return v;
    }
    if !(bytes.len() - start).is_multiple_of(FRAME_LEN) {
        return Verification::bad(count as u64);
    }
    v
}

/// Verify records `first..first + count` of a serialized log, given the
/// hash the record before `first` is expected to carry. Used to check a
/// window of a large log without rehashing everything.
pub fn verify_segment(bytes: &[u8], first: usize, count: usize, prev: Digest) -> Verification {
    let Ok((header, start)) = split_header(bytes) else {
        return Verification::bad(first as u64);
    };
    verify_frames(bytes, start, sha256(header), first, count, prev)
}

fn verify_frames(
    bytes: &[u8],
    start: usize,
    header: Digest,
    first: usize,
    count: usize,
    mut prev: Digest,
) -> Verification {
    let mut terminal_seen = false;
    for i in first..first + count {
        let off = start + i * FRAME_LEN;
        let Some(frame) = bytes.get(off..off + FRAME_LEN) else {
            return Verification::bad(i as u64);
        };
        if frame[..4] != (RECORD_LEN as u32).to_le_bytes() {
            return Verification::bad(i as u64);
        }
        let Ok(rec) = AuditRecord::decode(&frame[4..]) else {
            return Verification::bad(i as u64);
        };
        let v = verify_records(std::slice::from_ref(&rec), &header, i as u64, prev);
        if !v.ok || terminal_seen {
            return Verification::bad(i as u64);
        }
        terminal_seen = rec.kind == 1;
        prev = rec.hash;
    }
    Verification::good()
}
