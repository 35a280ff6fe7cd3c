//! Server↔client messages: generation requests, update requests and the
//! binary basis-update payload.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::basis::{basis_identifier, BasisMode, ReducedBasis};
use crate::error::{Error, Result};
use crate::generation::{TrainingSet, TrainingSpec};
use crate::problem::{FullProblem, Parameter, QualitySpec};
use crate::reduced::{BlockBorder, SystemBorder};

pub const UPDATE_MAGIC: &[u8; 8] = b"RBMUPDT\0";
pub const UPDATE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GenerationMethod {
    Greedy,
    /// Reorder-aware generation with `a` spare snapshots; forces normalized-only mode.
    Reorder {
        a: usize,
    },
}

/// Everything the server needs to generate a basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisRequest {
    pub training: TrainingSpec,
    pub quality: QualitySpec,
    pub method: GenerationMethod,
    #[serde(default = "default_mode")]
    pub mode: BasisMode,
    #[serde(default)]
    pub seed: u64,
}

fn default_mode() -> BasisMode {
    BasisMode::Orthonormal
}

impl BasisRequest {
    /// Checks the quality and builds the training set.
    pub fn validate(&self) -> Result<TrainingSet> {
        self.quality.validate()?;
        if matches!(self.method, GenerationMethod::Reorder { .. }) && self.mode == BasisMode::Orthonormal {
            log::debug!("reorder generation always produces a normalized-only basis");
        }
        self.training.build()
    }

    /// Mode of the basis this request produces.
    pub fn effective_mode(&self) -> BasisMode {
        match self.method {
            GenerationMethod::Greedy => self.mode,
            GenerationMethod::Reorder { .. } => BasisMode::NormalizedOnly,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRequest {
    pub mu: Parameter,
    pub basis_id: String,
}

impl UpdateRequest {
    pub fn validate(&self) -> Result<()> {
        self.mu.validate()?;
        if self.basis_id.is_empty() {
            return Err(Error::InvalidParameter("empty basis identifier".into()));
        }
        Ok(())
    }
}

/// One snapshot plus the borders it adds to every precomputed block.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisUpdate {
    pub old_identifier: String,
    pub new_identifier: String,
    pub parameter: Parameter,
    /// Prepared (normalized, and orthogonalized in orthonormal mode) column.
    pub snapshot: DVector<f64>,
    pub border: SystemBorder,
}

/// Payload floats of an update for a basis of size `n` before the update.
pub fn update_float_count(n: usize, d: usize, s_a: usize, s_f: usize) -> usize {
    d + s_a * (2 * n + 1) + s_f + s_a * s_a * (2 * n + 1) + 2 * s_a * s_f
}

/// Bytes preceding the payload of an encoded update.
pub fn update_header_bytes(old_id_len: usize, new_id_len: usize) -> usize {
    8 + 4 + 8 + 8 + 4 + 4 + (4 + old_id_len) + (4 + new_id_len) + 24
}

impl BasisUpdate {
    /// Basis size before the update.
    pub fn n(&self) -> usize {
        self.border.reduced_a.first().map_or(0, |b| b.row.len())
    }

    pub fn payload_floats(&self) -> usize {
        update_float_count(
            self.n(),
            self.snapshot.len(),
            self.border.reduced_a.len(),
            self.border.reduced_f.len(),
        )
    }

    /// Non-snapshot payload relative to the snapshot payload.
    pub fn overhead_fraction(&self) -> f64 {
        let d = self.snapshot.len();
        (self.payload_floats() - d) as f64 / d as f64
    }

    pub fn encode(&self) -> Vec<u8> {
        let n = self.n();
        let (s_a, s_f) = (self.border.reduced_a.len(), self.border.reduced_f.len());
        let mut buf = Vec::with_capacity(self.wire_size());
        buf.extend_from_slice(UPDATE_MAGIC);
        buf.extend_from_slice(&UPDATE_VERSION.to_le_bytes());
        buf.extend_from_slice(&(n as u64).to_le_bytes());
        buf.extend_from_slice(&(self.snapshot.len() as u64).to_le_bytes());
        buf.extend_from_slice(&(s_a as u32).to_le_bytes());
        buf.extend_from_slice(&(s_f as u32).to_le_bytes());
        for id in [&self.old_identifier, &self.new_identifier] {
            buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
            buf.extend_from_slice(id.as_bytes());
        }
        for x in self.parameter.to_array() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        let mut put = |xs: &[f64]| {
            for x in xs {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        };
        put(self.snapshot.as_slice());
        let border = |b: &BlockBorder, put: &mut dyn FnMut(&[f64])| {
            put(&b.row);
            put(&b.col);
            put(&[b.corner]);
        };
        for b in &self.border.reduced_a {
            border(b, &mut put);
        }
        put(&self.border.reduced_f);
        for b in &self.border.r1 {
            border(b, &mut put);
        }
        // r2 entries, then the same entries again for r3
        put(&self.border.r2);
        put(&self.border.r2);
        buf
    }

    pub fn header_bytes(&self) -> usize {
        update_header_bytes(self.old_identifier.len(), self.new_identifier.len())
    }

    /// Encoded size in bytes.
    pub fn wire_size(&self) -> usize {
        self.header_bytes() + 8 * self.payload_floats()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut c = Cursor { bytes, pos: 0 };
        if c.take(8)? != UPDATE_MAGIC {
            return Err(Error::Corrupt("bad update magic".into()));
        }
        let version = c.u32()?;
        if version != UPDATE_VERSION {
            return Err(Error::Corrupt(format!("unsupported update version {version}")));
        }
        let n = c.u64()? as usize;
        let d = c.u64()? as usize;
        let s_a = c.u32()? as usize;
        let s_f = c.u32()? as usize;
        let expected = update_float_count(n, d, s_a, s_f)
            .checked_mul(8)
            .ok_or_else(|| Error::Corrupt("update sizes overflow".into()))?;
        let old_identifier = c.string()?;
        let new_identifier = c.string()?;
        let parameter = Parameter::new(c.f64()?, c.f64()?, c.f64()?)?;
        if bytes.len() - c.pos != expected {
            return Err(Error::Corrupt(format!(
                "update payload is {} bytes, expected {expected}",
                bytes.len() - c.pos
            )));
        }
        let snapshot = DVector::from_vec(c.floats(d)?);
        let reduced_a = c.borders(s_a, n)?;
        let reduced_f = c.floats(s_f)?;
        let r1 = c.borders(s_a * s_a, n)?;
        let r2 = c.floats(s_a * s_f)?;
        let r3 = c.floats(s_a * s_f)?;
        if r2.iter().zip(&r3).any(|(a, b)| a.to_bits() != b.to_bits()) {
            return Err(Error::Corrupt("r3 entries disagree with r2".into()));
        }
        Ok(Self {
            old_identifier,
            new_identifier,
            parameter,
            snapshot,
            border: SystemBorder {
                reduced_a,
                reduced_f,
                r1,
                r2,
            },
        })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Corrupt("truncated update".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self
            .take(8 * n)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn borders(&mut self, count: usize, n: usize) -> Result<Vec<BlockBorder>> {
        (0..count)
            .map(|_| {
                Ok(BlockBorder {
                    row: self.floats(n)?,
                    col: self.floats(n)?,
                    corner: self.f64()?,
                })
            })
            .collect()
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| Error::Corrupt("identifier not utf-8".into()))
    }
}

/// Server side: full solve at `mu`, prepare the column and compute only the
/// border blocks.
pub fn make_update(basis: &ReducedBasis, problem: &FullProblem, mu: &Parameter) -> Result<BasisUpdate> {
    if problem.quality().discretization != basis.quality().discretization {
        return Err(Error::DimensionMismatch {
            expected: basis.quality().discretization,
            found: problem.quality().discretization,
            context: "problem discretization vs basis",
        });
    }
    let solution = problem.snapshot(mu)?;
    let column = basis.prepare_column(&solution.values)?;
    let border = basis.border_for(&column, problem);
    let mut params = basis.params().to_vec();
    params.push(*mu);
    Ok(BasisUpdate {
        old_identifier: basis.identifier(),
        new_identifier: basis_identifier(basis.quality().discretization, basis.mode(), &params),
        parameter: *mu,
        snapshot: column,
        border,
    })
}

/// Client side: patch the basis with an update produced for it.
pub fn apply_update(basis: &ReducedBasis, update: &BasisUpdate) -> Result<ReducedBasis> {
    let current = basis.identifier();
    if current != update.old_identifier {
        return Err(Error::IdentifierMismatch {
            basis: current,
            expected: update.old_identifier.clone(),
        });
    }
    let next = basis.appended(update.snapshot.clone(), update.parameter, &update.border)?;
    if next.identifier() != update.new_identifier {
        return Err(Error::Corrupt(
            "updated basis identifier does not match the update".into(),
        ));
    }
    Ok(next)
}

/// The client's link to a basis server.
pub trait ServerChannel: Send + Sync {
    /// Fails with [`Error::ResyncRequired`] when the server does not know the
    /// basis, and with [`Error::Channel`] when the server cannot be reached.
    fn request_update(&self, request: &UpdateRequest) -> Result<BasisUpdate>;

    /// Full basis file for `identifier`.
    fn fetch_basis(&self, identifier: &str) -> Result<Vec<u8>>;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generation::Preset;

    #[test]
    fn update_fraction_at_reference_size() {
        let floats = update_float_count(20, 256 * 256, 4, 1);
        assert_eq!(floats - 65536, 829);
        let frac = 829.0 / 65536.0;
        assert!((0.011..=0.015).contains(&frac));
    }

    #[test]
    fn basis_request_json_round_trip() {
        let req = BasisRequest {
            training: TrainingSpec::preset(Preset::A, 4.0),
            quality: QualitySpec::new(32, 1e-3).unwrap(),
            method: GenerationMethod::Reorder { a: 3 },
            mode: BasisMode::NormalizedOnly,
            seed: 7,
        };
        let json = serde_json::to_string(&req).unwrap();
        assert_eq!(serde_json::from_str::<BasisRequest>(&json).unwrap(), req);
        assert_eq!(req.effective_mode(), BasisMode::NormalizedOnly);
    }

    #[test]
    fn malformed_range_rejected() {
        let json = r#"{"training":{"kind":"grid","diff":{"min":20,"max":10,"step":1},
            "advx":{"min":0,"max":1,"step":1},"advy":{"min":0,"max":1,"step":1}},
            "quality":{"discretization":16,"max_res":0.1},"method":{"kind":"greedy"}}"#;
        let req: BasisRequest = serde_json::from_str(json).unwrap();
        assert!(matches!(req.validate(), Err(Error::InvalidTrainingSpec(_))));
    }

    #[test]
    fn truncated_update_rejected() {
        assert!(BasisUpdate::decode(b"RBMUPDT\0").is_err());
        assert!(BasisUpdate::decode(b"garbage!").is_err());
    }
}
