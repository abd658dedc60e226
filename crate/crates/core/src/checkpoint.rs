//! Versioned binary container for [`ModelState`] and, optionally, the EP
//! contribution store.
//!
//! All integers and floats are little-endian. Layout:
//!
//! ```text
//! header (24 bytes)
//!   magic        8  b"NRMSTRM\0"
//!   version      u32  (currently 1)
//!   flags        u32  bit 0: contribution section present
//!   body_len     u64  number of body bytes that follow
//! body
//!   vocab_size   u64
//!   a, sigma, tau, alpha0, epsilon, merge_threshold   6 × f64
//!   expected_k   u8   0 = recursion, 1 = cluster count
//!   n_seen       u64
//!   next_id      u64
//!   has_aux      u8   followed, if 1, by u_hat f64, n u64, expected_k f64
//!   n_clusters   u64
//!   per cluster: id u64, s_mass f64, unseen_product f64, count_total f64,
//!                n_entries u64, then n_entries × (word u32, count f64)
//!   [contributions, when flag bit 0 is set]
//!   n_docs       u64
//!   per doc:     doc_index u64, n u64, then n × (cluster id u64, weight f64)
//! trailer
//!   crc32        u32  over header and body
//! ```
//!
//! Cluster records appear in model order and word entries in increasing word
//! order, so identical states encode to identical bytes.

use alloc::vec::Vec;
use core::fmt;

use crate::adf::{AdfConfig, ClusterState, ExpectedK, ModelState};
use crate::ep::LocalContribution;
use crate::{AuxiliaryU, DirichletPosterior, NggpParams};

pub const MAGIC: [u8; 8] = *b"NRMSTRM\0";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 24;
const FLAG_CONTRIBUTIONS: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CheckpointError {
    BadMagic,
    /// The file was written by an unsupported format version.
    Version { found: u32, supported: u32 },
    /// Fewer bytes than the header declares.
    Truncated { expected: u64, found: u64 },
    Checksum { stored: u32, computed: u32 },
    /// Checksum matched but the body does not describe a valid state.
    Malformed(&'static str),
}

impl fmt::Display for CheckpointError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CheckpointError::BadMagic => write!(f, "not a checkpoint file (bad magic)"),
            CheckpointError::Version { found, supported } => {
                write!(f, "unsupported format version {found} (this build reads version {supported})")
            }
            CheckpointError::Truncated { expected, found } => {
                write!(f, "truncated: expected {expected} bytes, found {found}")
            }
            CheckpointError::Checksum { stored, computed } => {
                write!(f, "checksum mismatch (stored {stored:08x}, computed {computed:08x})")
            }
            CheckpointError::Malformed(what) => write!(f, "malformed body: {what}"),
        }
    }
}

impl core::error::Error for CheckpointError {}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes `model` and, when given, the contribution store.
pub fn encode(model: &ModelState, contributions: Option<&[LocalContribution]>) -> Vec<u8> {
    let cfg = model.config();
    let mut body = Writer(Vec::new());
    body.u64(cfg.vocab_size as u64);
    for v in [cfg.params.a(), cfg.params.sigma(), cfg.params.tau(), cfg.alpha0, cfg.epsilon, cfg.merge_threshold] {
        body.f64(v);
    }
    body.u8(match cfg.expected_k {
        ExpectedK::Recursion => 0,
        ExpectedK::ClusterCount => 1,
    });
    body.u64(model.n_seen);
    body.u64(model.next_id);
    match &model.aux {
        Some(aux) => {
            body.u8(1);
            body.f64(aux.u_hat);
            body.u64(aux.n);
            body.f64(aux.expected_k);
        }
        None => body.u8(0),
    }
    body.u64(model.clusters.len() as u64);
    for c in &model.clusters {
        body.u64(c.id);
        body.f64(c.s_mass);
        body.f64(c.unseen_product);
        body.f64(c.posterior.count_total());
        body.u64(c.posterior.counts().len() as u64);
        for &(w, n) in c.posterior.counts() {
            body.u32(w);
            body.f64(n);
        }
    }
    if let Some(contribs) = contributions {
        body.u64(contribs.len() as u64);
        for c in contribs {
            body.u64(c.doc_index as u64);
            body.u64(c.assignment.len() as u64);
            for &(id, w) in &c.assignment {
                body.u64(id);
                body.f64(w);
            }
        }
    }
    let body = body.0;
    let mut out = Writer(Vec::with_capacity(HEADER_LEN + body.len() + 4));
    out.0.extend_from_slice(&MAGIC);
    out.u32(VERSION);
    out.u32(if contributions.is_some() { FLAG_CONTRIBUTIONS } else { 0 });
    out.u64(body.len() as u64);
    out.0.extend_from_slice(&body);
    let crc = crc32fast::hash(&out.0);
    out.u32(crc);
    out.0
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], CheckpointError> {
        let end = self.pos.checked_add(N).filter(|&e| e <= self.buf.len());
        let end = end.ok_or(CheckpointError::Malformed("record runs past end of body"))?;
        let mut out = [0u8; N];
        out.copy_from_slice(&self.buf[self.pos..end]);
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take::<1>()?[0])
    }
    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take()?))
    }
    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take()?))
    }
    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take()?))
    }
    /// Element count, bounded by the bytes left so corrupt counts cannot
    /// trigger huge allocations.
    fn count(&mut self, min_record: usize) -> Result<usize, CheckpointError> {
        let n = self.u64()?;
        let left = (self.buf.len() - self.pos) as u64;
        if n.saturating_mul(min_record as u64) > left {
            return Err(CheckpointError::Malformed("element count exceeds body size"));
        }
        Ok(n as usize)
    }
}

/// Decoded checkpoint contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub model: ModelState,
    pub contributions: Option<Vec<LocalContribution>>,
}

/// Parses a checkpoint. Header problems are reported before truncation,
/// truncation before checksum failures, and checksum failures before body
/// validation.
pub fn decode(bytes: &[u8]) -> Result<Decoded, CheckpointError> {
    let found = bytes.len() as u64;
    if bytes.len() < MAGIC.len() {
        return Err(if MAGIC.starts_with(bytes) {
            CheckpointError::Truncated { expected: HEADER_LEN as u64, found }
        } else {
            CheckpointError::BadMagic
        });
    }
    if bytes[..8] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(CheckpointError::Truncated { expected: HEADER_LEN as u64, found });
    }
    let mut header = Reader { buf: &bytes[..HEADER_LEN], pos: 8 };
    let version = header.u32()?;
    if version != VERSION {
        return Err(CheckpointError::Version { found: version, supported: VERSION });
    }
    let flags = header.u32()?;
    let body_len = header.u64()?;
    let expected = body_len.saturating_add(HEADER_LEN as u64 + 4);
    if found < expected {
        return Err(CheckpointError::Truncated { expected, found });
    }
    if found > expected {
        return Err(CheckpointError::Malformed("trailing bytes after checksum"));
    }
    let body_end = HEADER_LEN + body_len as usize;
    let stored = u32::from_le_bytes(bytes[body_end..].try_into().expect("four trailer bytes"));
    let computed = crc32fast::hash(&bytes[..body_end]);
    if stored != computed {
        return Err(CheckpointError::Checksum { stored, computed });
    }
    if flags & !FLAG_CONTRIBUTIONS != 0 {
        return Err(CheckpointError::Malformed("unknown flag bits"));
    }

    let mut r = Reader { buf: &bytes[HEADER_LEN..body_end], pos: 0 };
    let vocab_size = usize::try_from(r.u64()?).map_err(|_| CheckpointError::Malformed("vocabulary size"))?;
    let (a, sigma, tau) = (r.f64()?, r.f64()?, r.f64()?);
    let (alpha0, epsilon, merge_threshold) = (r.f64()?, r.f64()?, r.f64()?);
    let expected_k = match r.u8()? {
        0 => ExpectedK::Recursion,
        1 => ExpectedK::ClusterCount,
        _ => return Err(CheckpointError::Malformed("expected-K mode")),
    };
    let params = NggpParams::new(a, sigma, tau).map_err(|_| CheckpointError::Malformed("prior parameters"))?;
    let config = AdfConfig { params, alpha0, vocab_size, epsilon, merge_threshold, expected_k };
    config.validate().map_err(|_| CheckpointError::Malformed("engine configuration"))?;
    let n_seen = r.u64()?;
    let next_id = r.u64()?;
    let aux = match r.u8()? {
        0 => None,
        1 => Some(AuxiliaryU { u_hat: r.f64()?, n: r.u64()?, expected_k: r.f64()? }),
        _ => return Err(CheckpointError::Malformed("auxiliary-variable tag")),
    };
    let n_clusters = r.count(40)?;
    let mut clusters = Vec::with_capacity(n_clusters);
    for _ in 0..n_clusters {
        let id = r.u64()?;
        let s_mass = r.f64()?;
        let unseen_product = r.f64()?;
        let count_total = r.f64()?;
        let n_entries = r.count(12)?;
        let mut counts = Vec::with_capacity(n_entries);
        let mut prev: Option<u32> = None;
        for _ in 0..n_entries {
            let w = r.u32()?;
            if prev.is_some_and(|p| p >= w) || w as usize >= vocab_size {
                return Err(CheckpointError::Malformed("word entries out of order or range"));
            }
            prev = Some(w);
            counts.push((w, r.f64()?));
        }
        if id >= next_id || clusters.last().is_some_and(|c: &ClusterState| c.id >= id) {
            return Err(CheckpointError::Malformed("cluster ids not increasing"));
        }
        clusters.push(ClusterState {
            id,
            s_mass,
            posterior: DirichletPosterior::from_parts(alpha0, counts, count_total),
            unseen_product,
        });
    }
    let contributions = if flags & FLAG_CONTRIBUTIONS != 0 {
        let n_docs = r.count(16)?;
        let mut out = Vec::with_capacity(n_docs);
        for _ in 0..n_docs {
            let doc_index =
                usize::try_from(r.u64()?).map_err(|_| CheckpointError::Malformed("document index"))?;
            let n = r.count(16)?;
            let mut assignment = Vec::with_capacity(n);
            for _ in 0..n {
                assignment.push((r.u64()?, r.f64()?));
            }
            out.push(LocalContribution { doc_index, assignment });
        }
        Some(out)
    } else {
        None
    };
    if r.pos != r.buf.len() {
        return Err(CheckpointError::Malformed("unread bytes at end of body"));
    }
    Ok(Decoded { model: ModelState { config, clusters, n_seen, next_id, aux }, contributions })
}
