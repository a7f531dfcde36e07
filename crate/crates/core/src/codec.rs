//! Versioned, checksummed binary artifacts. Integers are little-endian and
//! fixed-width; every file ends in a SHA-256 checksum of the preceding bytes,
//! which doubles as the artifact's fingerprint.

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::Domain;
use crate::fta::{Fta, FtaKind, StateId, Transition};
use crate::grammar::{Grammar, ProdId, SymbolId};
use crate::Fingerprint;

pub const FTA_MAGIC: &[u8; 4] = b"PFTA";
pub const ORACLE_MAGIC: &[u8; 4] = b"PORC";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormatError {
    #[error("not a {expected} file (bad magic)")]
    BadMagic { expected: &'static str },
    #[error("unsupported format version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },
    #[error("checksum mismatch: file is truncated or corrupted")]
    Checksum,
    #[error("malformed file: {0}")]
    Malformed(String),
    #[error("fingerprint mismatch: expected {expected}, found {found}")]
    FingerprintMismatch { expected: Fingerprint, found: Fingerprint },
    #[error("artifact was built for domain {found}, not {expected}")]
    DomainMismatch { expected: String, found: String },
}

#[derive(Default)]
pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub(crate) fn new(magic: &[u8; 4]) -> Self {
        let mut w = Writer { buf: magic.to_vec() };
        w.u32(FORMAT_VERSION);
        w
    }

    pub(crate) fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub(crate) fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub(crate) fn len(&mut self, n: usize) {
        self.u32(u32::try_from(n).expect("table exceeds u32 range"));
    }

    pub(crate) fn raw(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    pub(crate) fn bytes(&mut self, bytes: &[u8]) {
        self.len(bytes.len());
        self.raw(bytes);
    }

    /// Appends the checksum and returns the finished file.
    pub(crate) fn seal(mut self) -> Vec<u8> {
        let sum = Sha256::digest(&self.buf);
        self.buf.extend_from_slice(&sum);
        self.buf
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Checks magic, version and checksum, in that order, and positions the
    /// reader after the version field.
    pub(crate) fn open(bytes: &'a [u8], magic: &[u8; 4], what: &'static str) -> Result<Self, FormatError> {
        if bytes.len() < 4 || &bytes[..4] != magic {
            return Err(FormatError::BadMagic { expected: what });
        }
        if bytes.len() < 8 {
            return Err(FormatError::Checksum);
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(FormatError::UnsupportedVersion {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        if bytes.len() < 8 + 32 {
            return Err(FormatError::Checksum);
        }
        let (body, sum) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != sum {
            return Err(FormatError::Checksum);
        }
        Ok(Reader { buf: body, pos: 8 })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| FormatError::Malformed(format!("unexpected end of data at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub(crate) fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn count(&mut self) -> Result<usize, FormatError> {
        let n = self.u32()? as usize;
        // Every counted item occupies at least one byte.
        if n > self.buf.len() - self.pos {
            return Err(FormatError::Malformed(format!("count {n} exceeds remaining data")));
        }
        Ok(n)
    }

    pub(crate) fn fingerprint(&mut self) -> Result<Fingerprint, FormatError> {
        Ok(Fingerprint(self.take(32)?.try_into().unwrap()))
    }

    pub(crate) fn bytes(&mut self) -> Result<&'a [u8], FormatError> {
        let n = self.count()?;
        self.take(n)
    }

    pub(crate) fn finish(self) -> Result<(), FormatError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(FormatError::Malformed(format!("{} trailing bytes", self.buf.len() - self.pos)))
        }
    }
}

/// The fingerprint of a sealed file: its trailing checksum.
pub fn file_fingerprint(bytes: &[u8]) -> Fingerprint {
    let mut fp = [0u8; 32];
    if bytes.len() >= 32 {
        fp.copy_from_slice(&bytes[bytes.len() - 32..]);
    }
    Fingerprint(fp)
}

pub(crate) fn write_domain<D: Domain>(w: &mut Writer, domain: &D) {
    w.bytes(domain.tag().as_bytes());
    w.u32(domain.granularity());
}

pub(crate) fn check_domain<D: Domain>(r: &mut Reader<'_>, domain: &D) -> Result<(), FormatError> {
    let tag = String::from_utf8_lossy(r.bytes()?).into_owned();
    let k = r.u32()?;
    if tag != domain.tag() || k != domain.granularity() {
        return Err(FormatError::DomainMismatch {
            expected: format!("{} k={}", domain.tag(), domain.granularity()),
            found: format!("{tag} k={k}"),
        });
    }
    Ok(())
}

/// Serializes an abstract FTA. States and transitions are written in id
/// order; the builders hand out canonical automata, so equal automata give
/// equal bytes.
pub fn write_fta<D: Domain>(fta: &Fta<D::Abs>, grammar: Fingerprint, domain: &D) -> Vec<u8> {
    let mut w = Writer::new(FTA_MAGIC);
    w.raw(&grammar.0);
    write_domain(&mut w, domain);
    w.u8(fta.kind().code());
    w.len(fta.num_states());
    for q in fta.state_ids() {
        let st = fta.state(q);
        w.u32(q.0);
        w.u32(st.symbol.0);
        w.bytes(&domain.encode_abs(&st.value));
    }
    w.len(fta.num_transitions());
    for t in fta.transitions() {
        w.u32(t.prod.0);
        w.len(t.args.len());
        for a in &t.args {
            w.u32(a.0);
        }
        w.u32(t.result.0);
    }
    w.len(fta.finals().len());
    for q in fta.finals() {
        w.u32(q.0);
    }
    w.seal()
}

/// Fingerprint of an FTA as it would be written to disk.
pub fn fta_fingerprint<D: Domain>(fta: &Fta<D::Abs>, grammar: Fingerprint, domain: &D) -> Fingerprint {
    file_fingerprint(&write_fta(fta, grammar, domain))
}

#[derive(Debug)]
pub struct FtaFile<A> {
    pub fta: Fta<A>,
    pub grammar_fingerprint: Fingerprint,
    pub fingerprint: Fingerprint,
}

pub fn read_fta<D: Domain>(bytes: &[u8], domain: &D) -> Result<FtaFile<D::Abs>, FormatError> {
    let mut r = Reader::open(bytes, FTA_MAGIC, "FTA")?;
    let grammar_fingerprint = r.fingerprint()?;
    check_domain(&mut r, domain)?;
    let kind = FtaKind::from_code(r.u8()?).ok_or_else(|| FormatError::Malformed("unknown FTA kind".into()))?;
    let mut fta = Fta::new(kind);
    let n = r.count()?;
    for i in 0..n {
        let id = r.u32()?;
        if id as usize != i {
            return Err(FormatError::Malformed(format!("state id {id} out of sequence")));
        }
        let symbol = SymbolId(r.u32()?);
        let value = domain
            .decode_abs(r.bytes()?)
            .ok_or_else(|| FormatError::Malformed(format!("state {id}: undecodable abstract value")))?;
        let (_, fresh) = fta.intern(symbol, value);
        if !fresh {
            return Err(FormatError::Malformed(format!("state {id} duplicates an earlier state")));
        }
    }
    let state = |id: u32| -> Result<StateId, FormatError> {
        if (id as usize) < n {
            Ok(StateId(id))
        } else {
            Err(FormatError::Malformed(format!("unknown state id {id}")))
        }
    };
    let m = r.count()?;
    for _ in 0..m {
        let prod = ProdId(r.u32()?);
        let arity = r.count()?;
        let args = (0..arity).map(|_| state(r.u32()?)).collect::<Result<Vec<_>, _>>()?;
        let result = state(r.u32()?)?;
        if !fta.add_transition(Transition { prod, args, result }) {
            return Err(FormatError::Malformed("duplicate transition".into()));
        }
    }
    let f = r.count()?;
    for _ in 0..f {
        let q = state(r.u32()?)?;
        fta.add_final(q);
    }
    r.finish()?;
    Ok(FtaFile {
        fta,
        grammar_fingerprint,
        fingerprint: file_fingerprint(bytes),
    })
}

/// Checks that every symbol and production an FTA mentions exists in `g`
/// with matching arities.
pub fn check_fta_against_grammar<A: Clone + Eq + std::hash::Hash + Ord>(fta: &Fta<A>, g: &Grammar) -> Result<(), FormatError> {
    for st in fta.states() {
        if st.symbol.index() >= g.num_symbols() {
            return Err(FormatError::Malformed(format!("unknown symbol index {}", st.symbol.0)));
        }
    }
    for t in fta.transitions() {
        let Some(p) = g.productions().get(t.prod.index()) else {
            return Err(FormatError::Malformed(format!("unknown production index {}", t.prod.0)));
        };
        if p.args.len() != t.args.len() || fta.state(t.result).symbol != p.lhs {
            return Err(FormatError::Malformed(format!("transition does not match production {}", t.prod.0)));
        }
    }
    Ok(())
}
