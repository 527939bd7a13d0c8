//! Locked artifact file: codebook plus reference model.
//!
//! Layout, all numerics little-endian:
//!
//! ```text
//! magic "LGARTIF1" | version u32 | window u32 | stride u32 | half_life f64
//! | alpha f64 | lambda f64 | codewords u32
//! | codebook_len u64 | codebook bytes | codebook digest
//! | reference_len u64 | reference bytes | reference digest
//! | file digest (SHA-256 over everything before it)
//! ```

use std::fs;
use std::path::Path;

use crate::codec::{sha256, Digest, Reader, Writer};
use crate::error::{Error, Result};
use crate::estimator::{EstimatorConfig, LockedTuple, ReferenceModel};
use crate::features::{Codebook, CODEWORDS};

pub const MAGIC: &[u8; 8] = b"LGARTIF1";
pub const VERSION: u32 = 1;

/// A verified codebook/reference pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Artifacts {
    pub codebook: Codebook,
    pub reference: ReferenceModel,
    /// Digest of the whole file.
    pub digest: Digest,
}

impl Artifacts {
    pub fn new(codebook: Codebook, reference: ReferenceModel) -> Result<Self> {
        check_pair(&codebook, &reference)?;
        let digest = file_digest(&encode_unchecked(&codebook, &reference));
        Ok(Self {
            codebook,
            reference,
            digest,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        encode_unchecked(&self.codebook, &self.reference)
    }

    /// Parse and verify, refusing anything built under a different tuple.
    pub fn from_bytes(bytes: &[u8], runtime: &EstimatorConfig) -> Result<Self> {
        decode(bytes, runtime)
    }

    pub fn save(&self, path: &Path) -> Result<Digest> {
        fs::write(path, self.to_bytes())?;
        Ok(self.digest)
    }

    pub fn load(path: &Path, runtime: &EstimatorConfig) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?, runtime)
    }
}

fn check_pair(cb: &Codebook, reference: &ReferenceModel) -> Result<()> {
    if reference.codewords() != CODEWORDS {
        return Err(Error::ArtifactCorrupt(format!(
            "reference alphabet {} differs from codebook {CODEWORDS}",
            reference.codewords()
        )));
    }
    for ((n, _), _) in reference.classes() {
        cb.table(*n).map_err(|_| {
            Error::ArtifactCorrupt(format!("reference class n={n} has no codebook entry"))
        })?;
    }
    Ok(())
}

fn file_digest(bytes: &[u8]) -> Digest {
    let body = &bytes[..bytes.len() - 32];
    sha256(body)
}

fn encode_unchecked(cb: &Codebook, reference: &ReferenceModel) -> Vec<u8> {
    let cb_body = cb.encode_body();
    let ref_body = reference.encode_body();
    let mut w = Writer::new();
    w.bytes(MAGIC).u32(VERSION);
    reference.tuple().encode(&mut w);
    w.u32(reference.codewords() as u32);
    w.u64(cb_body.len() as u64)
        .bytes(&cb_body)
        .bytes(&sha256(&cb_body));
    w.u64(ref_body.len() as u64)
        .bytes(&ref_body)
        .bytes(&sha256(&ref_body));
    let digest = sha256(w.as_slice());
    w.bytes(&digest);
    w.into_inner()
}

fn section<'a>(r: &mut Reader<'a>, name: &str) -> Result<&'a [u8]> {
    let len = r.u64()?;
    if len > r.remaining() as u64 {
        return Err(Error::ArtifactCorrupt(format!(
            "{name} section overruns the file"
        )));
    }
    let body = r.take(len as usize)?;
    if r.digest()? != sha256(body) {
        return Err(Error::ArtifactDigest(format!(
            "{name} section digest mismatch"
        )));
    }
    Ok(body)
}

fn decode(bytes: &[u8], runtime: &EstimatorConfig) -> Result<Artifacts> {
    if bytes.len() < MAGIC.len() + 4 + 32 {
        return Err(Error::ArtifactCorrupt("file too short".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 32);
    if sha256(body) != tail {
        return Err(Error::ArtifactDigest("file digest mismatch".into()));
    }
    let mut r = Reader::new(body);
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::ArtifactCorrupt("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::ArtifactCorrupt(format!(
            "unsupported version {version}"
        )));
    }
    let tuple = LockedTuple::decode(&mut r)?;
    let codewords = r.u32()?;
    let expected = runtime.locked();
    if !tuple.same_as(&expected) {
        return Err(Error::ConfigMismatch(format!(
            "artifact built with {tuple:?}, runtime is {expected:?}"
        )));
    }
    if codewords as usize != CODEWORDS {
        return Err(Error::ConfigMismatch(format!(
            "artifact alphabet {codewords}, runtime is {CODEWORDS}"
        )));
    }
    let cb_body = section(&mut r, "codebook")?;
    let ref_body = section(&mut r, "reference")?;
    if r.remaining() != 0 {
        return Err(Error::ArtifactCorrupt("trailing bytes".into()));
    }
    let codebook = Codebook::decode_body(cb_body)?;
    let reference = ReferenceModel::decode_body(ref_body)?;
    if !reference.tuple().same_as(&tuple) {
        return Err(Error::ArtifactCorrupt(
            "header tuple differs from reference section".into(),
        ));
    }
    check_pair(&codebook, &reference)?;
    Ok(Artifacts {
        codebook,
        reference,
        digest: sha256(body),
    })
}
