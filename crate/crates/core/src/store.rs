//! Binary basis files with lazily loaded snapshot columns.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic "RBMBASIS" | version u32 | D u64 | n u64 | S_A u32 | S_f u32 | mode u32
//! max_res f64 | identifier (u32 length + utf-8) | θ_A codes | θ_f codes
//! snapshot parameters (n × 3 f64) | section count u32 | sections (kind u32, offset u64, length u64)
//! payload: reduced_A | reduced_f | r1 | r2 | r3 | r4 | snapshots
//! ```
//!
//! Matrices are stored column-major. `r3` holds the same values as `r2`
//! (`f_j^T A_i V` is the transpose of `V^T A_i^T f_j`) and is checked for
//! equality on load. Snapshots come last, one contiguous column after
//! another, so the first `m` columns are a single byte range.

use std::fs::{self, File};
use std::io::{self, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{BasisMetadata, BasisMode, ReducedBasis};
use crate::error::{Error, Result};
use crate::problem::{Parameter, QualitySpec, Theta};
use crate::reduced::ReducedSystem;
use crate::strategies::SnapshotSource;

pub const MAGIC: &[u8; 8] = b"RBMBASIS";
pub const FORMAT_VERSION: u32 = 1;
pub const FILE_EXTENSION: &str = "rbb";

/// Payload floats of a basis file.
pub fn payload_float_count(n: usize, d: usize, s_a: usize, s_f: usize) -> usize {
    n * d + s_a * n * n + s_f * n + s_a * s_a * n * n + 2 * s_a * s_f * n + s_f * s_f
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectionKind {
    ReducedA,
    ReducedF,
    R1,
    R2,
    R3,
    R4,
    Snapshots,
}

impl SectionKind {
    pub const ALL: [SectionKind; 7] = [
        SectionKind::ReducedA,
        SectionKind::ReducedF,
        SectionKind::R1,
        SectionKind::R2,
        SectionKind::R3,
        SectionKind::R4,
        SectionKind::Snapshots,
    ];

    fn code(self) -> u32 {
        self as u32
    }

    fn from_code(code: u32) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    fn float_count(self, n: usize, d: usize, s_a: usize, s_f: usize) -> usize {
        match self {
            SectionKind::ReducedA => s_a * n * n,
            SectionKind::ReducedF => s_f * n,
            SectionKind::R1 => s_a * s_a * n * n,
            SectionKind::R2 | SectionKind::R3 => s_a * s_f * n,
            SectionKind::R4 => s_f * s_f,
            SectionKind::Snapshots => n * d,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub kind: SectionKind,
    pub offset: u64,
    pub length: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub version: u32,
    pub quality: QualitySpec,
    pub n: usize,
    pub mode: BasisMode,
    pub identifier: String,
    pub theta_a: Vec<Theta>,
    pub theta_f: Vec<Theta>,
    pub params: Vec<Parameter>,
    pub sections: Vec<Section>,
    /// Bytes before the payload.
    pub header_bytes: u64,
}

impl Header {
    pub fn dimension(&self) -> usize {
        self.quality.dimension()
    }

    pub fn section(&self, kind: SectionKind) -> &Section {
        self.sections
            .iter()
            .find(|s| s.kind == kind)
            .expect("header validated with every section present")
    }

    pub fn payload_floats(&self) -> usize {
        payload_float_count(self.n, self.dimension(), self.theta_a.len(), self.theta_f.len())
    }

    /// Header plus every non-snapshot section.
    pub fn metadata_bytes(&self) -> u64 {
        self.header_bytes
            + self
                .sections
                .iter()
                .filter(|s| s.kind != SectionKind::Snapshots)
                .map(|s| s.length)
                .sum::<u64>()
    }

    pub fn column_bytes(&self) -> u64 {
        8 * self.dimension() as u64
    }

    pub fn total_bytes(&self) -> u64 {
        self.header_bytes + 8 * self.payload_floats() as u64
    }
}

/// Cumulative read counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IoStats {
    pub bytes_read: u64,
    /// Positioned reads issued.
    pub reads: u64,
    /// Seeks issued (one per positioned read).
    pub seeks: u64,
    /// Reads covering several snapshot columns at once.
    pub bulk_reads: u64,
    /// Single-column reads at arbitrary positions.
    pub random_reads: u64,
}

impl IoStats {
    /// Counters accumulated since `earlier`.
    pub fn since(&self, earlier: &IoStats) -> IoStats {
        IoStats {
            bytes_read: self.bytes_read - earlier.bytes_read,
            reads: self.reads - earlier.reads,
            seeks: self.seeks - earlier.seeks,
            bulk_reads: self.bulk_reads - earlier.bulk_reads,
            random_reads: self.random_reads - earlier.random_reads,
        }
    }
}

struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn floats(&mut self, v: &[f64]) {
        self.buf.reserve(8 * v.len());
        for &x in v {
            self.f64(x);
        }
    }
}

/// Size in bytes of a basis file.
pub fn file_size(n: usize, d: usize, s_a: usize, s_f: usize, identifier_len: usize) -> u64 {
    (header_len(identifier_len, s_a, s_f, n) + 8 * payload_float_count(n, d, s_a, s_f)) as u64
}

fn header_len(id_len: usize, s_a: usize, s_f: usize, n: usize) -> usize {
    8 + 4 + 8 + 8 + 4 + 4 + 4 + 8 + 4 + id_len + 4 * (s_a + s_f) + 24 * n + 4 + 20 * SectionKind::ALL.len()
}

/// Serializes a basis into a byte vector.
pub fn encode_basis(basis: &ReducedBasis) -> Vec<u8> {
    encode(&basis.metadata(), Some(basis.snapshots()))
}

fn encode(meta: &BasisMetadata, snapshots: Option<&DMatrix<f64>>) -> Vec<u8> {
    let sys = &meta.system;
    let (n, d, s_a, s_f) = (meta.n(), meta.dimension(), sys.s_a(), sys.s_f());
    let identifier = meta.identifier();
    let header_bytes = header_len(identifier.len(), s_a, s_f, n);
    let mut e = Encoder {
        buf: Vec::with_capacity(header_bytes + 8 * payload_float_count(n, d, s_a, s_f)),
    };
    e.buf.extend_from_slice(MAGIC);
    e.u32(FORMAT_VERSION);
    e.u64(meta.quality.discretization as u64);
    e.u64(n as u64);
    e.u32(s_a as u32);
    e.u32(s_f as u32);
    e.u32(meta.mode.code());
    e.f64(meta.quality.max_res);
    e.u32(identifier.len() as u32);
    e.buf.extend_from_slice(identifier.as_bytes());
    for t in sys.theta_a().iter().chain(sys.theta_f()) {
        e.u32(t.code());
    }
    for p in &meta.params {
        e.floats(&p.to_array());
    }
    e.u32(SectionKind::ALL.len() as u32);
    let mut offset = header_bytes as u64;
    for kind in SectionKind::ALL {
        let length = 8 * kind.float_count(n, d, s_a, s_f) as u64;
        e.u32(kind.code());
        e.u64(offset);
        e.u64(length);
        offset += length;
    }
    debug_assert_eq!(e.buf.len(), header_bytes);

    for b in sys.reduced_a() {
        e.floats(b.as_slice());
    }
    for v in sys.reduced_f() {
        e.floats(v.as_slice());
    }
    for b in sys.r1() {
        e.floats(b.as_slice());
    }
    for v in sys.r2() {
        e.floats(v.as_slice());
    }
    for v in sys.r2() {
        e.floats(v.as_slice());
    }
    e.floats(sys.r4().as_slice());
    if let Some(v) = snapshots {
        e.floats(v.as_slice());
    }
    e.buf
}

/// Writes a basis file atomically (temporary file, then rename). Returns the
/// byte count.
pub fn write_basis(basis: &ReducedBasis, destination: &Path) -> Result<u64> {
    let bytes = encode_basis(basis);
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let tmp = destination.with_extension(format!(
        "{}.{}.tmp",
        std::process::id(),
        COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(&bytes)?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
    }
    fs::rename(&tmp, destination)?;
    Ok(bytes.len() as u64)
}

/// Decodes a complete in-memory basis file.
pub fn decode_basis(bytes: &[u8]) -> Result<ReducedBasis> {
    BasisReader::new(io::Cursor::new(bytes))?.load_full()
}

fn truncated(e: io::Error) -> Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        Error::Corrupt("truncated basis file".into())
    } else {
        Error::Io(e)
    }
}

fn to_floats(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect()
}

/// Reader over a basis file that counts every byte it pulls in.
pub struct BasisReader<R> {
    inner: R,
    header: Header,
    stats: IoStats,
}

impl BasisReader<File> {
    pub fn open(path: &Path) -> Result<Self> {
        Self::new(File::open(path)?)
    }
}

struct HeaderCursor<'a, R> {
    inner: &'a mut R,
    consumed: u64,
}

impl<R: Read> HeaderCursor<'_, R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0; n];
        self.inner.read_exact(&mut buf).map_err(truncated)?;
        self.consumed += n as u64;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Corrupt(msg.into())
}

// guards against absurd allocations from a damaged header
const MAX_HEADER_COUNT: u64 = 1 << 32;

impl<R: Read + Seek> BasisReader<R> {
    /// Reads and validates the header.
    pub fn new(mut inner: R) -> Result<Self> {
        inner.seek(SeekFrom::Start(0))?;
        let mut c = HeaderCursor {
            inner: &mut inner,
            consumed: 0,
        };
        if c.bytes(8)? != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = c.u32()?;
        if version != FORMAT_VERSION {
            return Err(corrupt(format!("unsupported format version {version}")));
        }
        let discretization = c.u64()?;
        let n = c.u64()?;
        let s_a = c.u32()? as usize;
        let s_f = c.u32()? as usize;
        if discretization > MAX_HEADER_COUNT || n > MAX_HEADER_COUNT || s_a > 64 || s_f > 64 {
            return Err(corrupt("header sizes out of range"));
        }
        let (discretization, n) = (discretization as usize, n as usize);
        let mode = BasisMode::from_code(c.u32()?).ok_or_else(|| corrupt("unknown basis mode"))?;
        let max_res = c.f64()?;
        let quality = QualitySpec::new(discretization, max_res).map_err(|e| corrupt(e.to_string()))?;
        let id_len = c.u32()? as usize;
        if id_len > 256 {
            return Err(corrupt("identifier too long"));
        }
        let identifier = String::from_utf8(c.bytes(id_len)?).map_err(|_| corrupt("identifier not utf-8"))?;
        let mut theta = |count: usize| -> Result<Vec<Theta>> {
            (0..count)
                .map(|_| Theta::from_code(c.u32()?).ok_or_else(|| corrupt("unknown theta code")))
                .collect()
        };
        let theta_a = theta(s_a)?;
        let theta_f = theta(s_f)?;
        let mut params = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let p = Parameter {
                diff: c.f64()?,
                advx: c.f64()?,
                advy: c.f64()?,
            };
            p.validate().map_err(|e| corrupt(e.to_string()))?;
            params.push(p);
        }
        let count = c.u32()? as usize;
        if count != SectionKind::ALL.len() {
            return Err(corrupt(format!(
                "expected {} sections, found {count}",
                SectionKind::ALL.len()
            )));
        }
        let mut sections = Vec::with_capacity(count);
        for _ in 0..count {
            let kind = SectionKind::from_code(c.u32()?).ok_or_else(|| corrupt("unknown section kind"))?;
            sections.push(Section {
                kind,
                offset: c.u64()?,
                length: c.u64()?,
            });
        }
        let header_bytes = c.consumed;
        let d = quality.dimension();
        let mut offset = header_bytes;
        for (s, kind) in sections.iter().zip(SectionKind::ALL) {
            let length = 8 * kind.float_count(n, d, s_a, s_f) as u64;
            if s.kind != kind || s.offset != offset || s.length != length {
                return Err(corrupt(format!("section table entry {s:?} inconsistent with header")));
            }
            offset += length;
        }
        let header = Header {
            version,
            quality,
            n,
            mode,
            identifier,
            theta_a,
            theta_f,
            params,
            sections,
            header_bytes,
        };
        let expected = crate::basis::basis_identifier(discretization, mode, &header.params);
        if header.identifier != expected {
            return Err(corrupt("identifier does not match snapshot parameters"));
        }
        Ok(Self {
            inner,
            header,
            stats: IoStats {
                bytes_read: header_bytes,
                reads: 1,
                seeks: 1,
                ..IoStats::default()
            },
        })
    }

    pub fn header(&self) -> &Header {
        &self.header
    }

    pub fn stats(&self) -> IoStats {
        self.stats
    }

    fn read_at(&mut self, offset: u64, length: u64) -> Result<Vec<u8>> {
        self.inner.seek(SeekFrom::Start(offset))?;
        let mut buf = vec![0; length as usize];
        self.inner.read_exact(&mut buf).map_err(truncated)?;
        self.stats.bytes_read += length;
        self.stats.reads += 1;
        self.stats.seeks += 1;
        Ok(buf)
    }

    fn read_section(&mut self, kind: SectionKind) -> Result<Vec<f64>> {
        let s = *self.header.section(kind);
        if s.length == 0 {
            return Ok(Vec::new());
        }
        Ok(to_floats(&self.read_at(s.offset, s.length)?))
    }

    /// Reads every section except the snapshots.
    pub fn load_metadata(&mut self) -> Result<BasisMetadata> {
        let h = &self.header;
        let (n, s_a, s_f) = (h.n, h.theta_a.len(), h.theta_f.len());
        let (theta_a, theta_f) = (h.theta_a.clone(), h.theta_f.clone());
        let mats = |data: Vec<f64>, count: usize| -> Vec<DMatrix<f64>> {
            if n == 0 {
                return vec![DMatrix::zeros(0, 0); count];
            }
            data.chunks_exact(n * n)
                .map(|c| DMatrix::from_column_slice(n, n, c))
                .collect()
        };
        let vecs = |data: Vec<f64>, count: usize| -> Vec<DVector<f64>> {
            if n == 0 {
                return vec![DVector::zeros(0); count];
            }
            data.chunks_exact(n).map(DVector::from_column_slice).collect()
        };
        let reduced_a = mats(self.read_section(SectionKind::ReducedA)?, s_a);
        let reduced_f = vecs(self.read_section(SectionKind::ReducedF)?, s_f);
        let r1 = mats(self.read_section(SectionKind::R1)?, s_a * s_a);
        let r2_raw = self.read_section(SectionKind::R2)?;
        let r3_raw = self.read_section(SectionKind::R3)?;
        if r2_raw.iter().zip(&r3_raw).any(|(a, b)| a.to_bits() != b.to_bits()) {
            return Err(corrupt("r3 section disagrees with r2"));
        }
        let r2 = vecs(r2_raw, s_a * s_f);
        let r4 = DMatrix::from_column_slice(s_f, s_f, &self.read_section(SectionKind::R4)?);
        let system = ReducedSystem::from_blocks(theta_a, theta_f, reduced_a, reduced_f, r1, r2, r4)
            .map_err(|e| corrupt(e.to_string()))?;
        Ok(BasisMetadata {
            quality: self.header.quality,
            mode: self.header.mode,
            params: self.header.params.clone(),
            system,
        })
    }

    /// First `m` snapshot columns, or the columns `perm.order[..m]` with one
    /// positioned read each.
    pub fn load_snapshots(&mut self, m: usize, perm: Option<&crate::strategies::Reordering>) -> Result<DMatrix<f64>> {
        match perm {
            None => self.load_prefix(m),
            Some(p) => {
                if p.len() != self.header.n {
                    return Err(Error::InvalidReordering(format!(
                        "permutation of length {} for basis of size {}",
                        p.len(),
                        self.header.n
                    )));
                }
                if m > self.header.n {
                    return Err(Error::SubspaceOutOfRange { m, n: self.header.n });
                }
                self.load_columns(&p.order[..m])
            }
        }
    }

    /// Metadata plus every snapshot.
    pub fn load_full(&mut self) -> Result<ReducedBasis> {
        let meta = self.load_metadata()?;
        let snapshots = self.load_prefix(meta.n())?;
        ReducedBasis::from_parts(meta, snapshots)
    }
}

impl<R: Read + Seek> SnapshotSource for BasisReader<R> {
    fn load_prefix(&mut self, m: usize) -> Result<DMatrix<f64>> {
        let n = self.header.n;
        let d = self.header.dimension();
        if m > n {
            return Err(Error::SubspaceOutOfRange { m, n });
        }
        if m == 0 {
            return Ok(DMatrix::zeros(d, 0));
        }
        let offset = self.header.section(SectionKind::Snapshots).offset;
        let data = self.read_at(offset, m as u64 * self.header.column_bytes())?;
        self.stats.bulk_reads += 1;
        Ok(DMatrix::from_vec(d, m, to_floats(&data)))
    }

    fn load_columns(&mut self, indices: &[usize]) -> Result<DMatrix<f64>> {
        let n = self.header.n;
        let d = self.header.dimension();
        let base = self.header.section(SectionKind::Snapshots).offset;
        let col = self.header.column_bytes();
        let mut out = DMatrix::zeros(d, indices.len());
        for (j, &i) in indices.iter().enumerate() {
            if i >= n {
                return Err(Error::SubspaceOutOfRange { m: i + 1, n });
            }
            let data = self.read_at(base + i as u64 * col, col)?;
            self.stats.random_reads += 1;
            out.set_column(j, &DVector::from_vec(to_floats(&data)));
        }
        Ok(out)
    }

    fn io_stats(&self) -> IoStats {
        self.stats
    }
}

/// Directory of basis files named `<identifier>.rbb`.
#[derive(Debug, Clone)]
pub struct BasisStore {
    dir: PathBuf,
}

impl BasisStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, identifier: &str) -> PathBuf {
        self.dir.join(format!("{identifier}.{FILE_EXTENSION}"))
    }

    pub fn contains(&self, identifier: &str) -> bool {
        self.path_for(identifier).is_file()
    }

    /// Writes the basis unless a file with its identifier already exists.
    pub fn save(&self, basis: &ReducedBasis) -> Result<PathBuf> {
        let path = self.path_for(&basis.identifier());
        if !path.is_file() {
            write_basis(basis, &path)?;
        }
        Ok(path)
    }

    pub fn reader(&self, identifier: &str) -> Result<BasisReader<File>> {
        BasisReader::open(&self.path_for(identifier))
    }

    pub fn load(&self, identifier: &str) -> Result<ReducedBasis> {
        self.reader(identifier)?.load_full()
    }

    pub fn read_bytes(&self, identifier: &str) -> Result<Vec<u8>> {
        Ok(fs::read(self.path_for(identifier))?)
    }

    /// Identifiers of every stored basis.
    pub fn identifiers(&self) -> Result<Vec<String>> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) == Some(FILE_EXTENSION) {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    ids.push(stem.to_owned());
                }
            }
        }
        ids.sort();
        Ok(ids)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn payload_formula_matches_size_table() {
        // residual blocks at n = 20, S_A = 4, S_f = 1
        let residual = payload_float_count(20, 0, 4, 1) - 4 * 400 - 20;
        assert_eq!(residual, 6561);
        assert_eq!(payload_float_count(0, 100, 4, 1), 1);
    }

    #[test]
    fn io_stats_difference() {
        let a = IoStats {
            bytes_read: 10,
            reads: 2,
            seeks: 2,
            bulk_reads: 1,
            random_reads: 0,
        };
        let b = IoStats {
            bytes_read: 30,
            reads: 5,
            seeks: 5,
            bulk_reads: 1,
            random_reads: 3,
        };
        assert_eq!(b.since(&a).random_reads, 3);
        assert_eq!(b.since(&a).bytes_read, 20);
    }
}
