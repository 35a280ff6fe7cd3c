//! Reduced bases: snapshot matrix plus precomputed blocks.

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::CsrMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numeric;
use crate::problem::{FullProblem, FullSolution, Parameter, QualitySpec, SeparableOperator, SeparableVector};
use crate::reduced::{BlockBorder, ReducedSolveMethod, ReducedSystem, SystemBorder};

/// Snapshots whose norm drops below this fraction of their original norm after
/// orthogonalization against the basis are rejected as dependent.
pub const DEP_TOL: f64 = 1e-10;

/// Tolerance on the unit-norm invariant of snapshot columns.
pub const NORM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisMode {
    /// Gram–Schmidt orthonormalized columns.
    Orthonormal,
    /// Columns scaled to unit norm only; preserves the reordering freedom.
    NormalizedOnly,
}

impl BasisMode {
    pub fn code(self) -> u32 {
        match self {
            BasisMode::Orthonormal => 0,
            BasisMode::NormalizedOnly => 1,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(BasisMode::Orthonormal),
            1 => Some(BasisMode::NormalizedOnly),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BasisMode::Orthonormal => "orthonormal",
            BasisMode::NormalizedOnly => "normalized-only",
        }
    }

    /// Reduced solves on normalized-only bases go through the pseudoinverse.
    pub fn solve_method(self) -> ReducedSolveMethod {
        match self {
            BasisMode::Orthonormal => ReducedSolveMethod::Lu,
            BasisMode::NormalizedOnly => ReducedSolveMethod::Pseudoinverse,
        }
    }
}

impl std::str::FromStr for BasisMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "orthonormal" => Ok(BasisMode::Orthonormal),
            "normalized-only" | "normalized" => Ok(BasisMode::NormalizedOnly),
            other => Err(Error::InvalidTrainingSpec(format!("unknown basis mode {other:?}"))),
        }
    }
}

/// Identifier of a basis: a digest of discretization, mode and the ordered
/// snapshot parameters. Empty bases get a readable sentinel that still names
/// the discretization and mode, so a server can start a lineage from it.
pub fn basis_identifier(discretization: usize, mode: BasisMode, params: &[Parameter]) -> String {
    if params.is_empty() {
        return format!("empty-d{discretization}-{}", mode.name());
    }
    let mut h = Sha256::new();
    h.update(b"rbm-basis-v1");
    h.update((discretization as u64).to_le_bytes());
    h.update(mode.code().to_le_bytes());
    h.update((params.len() as u64).to_le_bytes());
    for p in params {
        for x in p.to_array() {
            h.update(x.to_bits().to_le_bytes());
        }
    }
    format!("rb-{}", hex::encode(h.finalize()))
}

/// Parses an empty-basis sentinel back into `(discretization, mode)`.
pub fn parse_empty_identifier(id: &str) -> Option<(usize, BasisMode)> {
    let rest = id.strip_prefix("empty-d")?;
    let (d, mode) = rest.split_once('-')?;
    Some((d.parse().ok()?, mode.parse().ok()?))
}

/// A reduced basis with its snapshot matrix.
#[derive(Debug, Clone)]
pub struct ReducedBasis {
    quality: QualitySpec,
    mode: BasisMode,
    params: Vec<Parameter>,
    snapshots: DMatrix<f64>,
    system: ReducedSystem,
}

/// A reduced basis without its snapshots (what a client keeps in memory when
/// snapshots stay in storage).
#[derive(Debug, Clone, PartialEq)]
pub struct BasisMetadata {
    pub quality: QualitySpec,
    pub mode: BasisMode,
    pub params: Vec<Parameter>,
    pub system: ReducedSystem,
}

impl BasisMetadata {
    pub fn identifier(&self) -> String {
        basis_identifier(self.quality.discretization, self.mode, &self.params)
    }

    pub fn n(&self) -> usize {
        self.params.len()
    }

    pub fn dimension(&self) -> usize {
        self.quality.dimension()
    }
}

impl ReducedBasis {
    /// Basis with no snapshots.
    pub fn empty(problem: &FullProblem, mode: BasisMode) -> Result<Self> {
        let d = problem.dimension();
        let system = ReducedSystem::empty(
            problem.operator().catalog(),
            problem.rhs().catalog(),
            rhs_gramian(problem.rhs()),
        )?;
        Ok(Self {
            quality: *problem.quality(),
            mode,
            params: Vec::new(),
            snapshots: DMatrix::zeros(d, 0),
            system,
        })
    }

    /// Galerkin projection of the problem onto the columns of `snapshots`.
    pub fn project(
        snapshots: DMatrix<f64>,
        params: Vec<Parameter>,
        mode: BasisMode,
        problem: &FullProblem,
    ) -> Result<Self> {
        let d = problem.dimension();
        if snapshots.nrows() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: snapshots.nrows(),
                context: "snapshot length vs problem dimension",
            });
        }
        if snapshots.ncols() != params.len() {
            return Err(Error::DimensionMismatch {
                expected: params.len(),
                found: snapshots.ncols(),
                context: "one parameter per snapshot column",
            });
        }
        for (k, col) in snapshots.column_iter().enumerate() {
            let norm = numeric::norm(col.as_slice());
            if (norm - 1.0).abs() > NORM_TOL {
                return Err(Error::Corrupt(format!("snapshot column {k} has norm {norm}")));
            }
        }
        let system = project_blocks(&snapshots, problem.operator(), problem.rhs())?;
        Ok(Self {
            quality: *problem.quality(),
            mode,
            params,
            snapshots,
            system,
        })
    }

    pub fn quality(&self) -> &QualitySpec {
        &self.quality
    }

    pub fn mode(&self) -> BasisMode {
        self.mode
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn snapshots(&self) -> &DMatrix<f64> {
        &self.snapshots
    }

    pub fn system(&self) -> &ReducedSystem {
        &self.system
    }

    pub fn n(&self) -> usize {
        self.params.len()
    }

    pub fn dimension(&self) -> usize {
        self.snapshots.nrows()
    }

    pub fn identifier(&self) -> String {
        basis_identifier(self.quality.discretization, self.mode, &self.params)
    }

    pub fn metadata(&self) -> BasisMetadata {
        BasisMetadata {
            quality: self.quality,
            mode: self.mode,
            params: self.params.clone(),
            system: self.system.clone(),
        }
    }

    /// Same snapshots with a different residual threshold.
    pub fn with_max_res(mut self, max_res: f64) -> Self {
        self.quality.max_res = max_res;
        self
    }

    /// Reassembles a basis from metadata and its snapshot matrix.
    pub fn from_parts(meta: BasisMetadata, snapshots: DMatrix<f64>) -> Result<Self> {
        if snapshots.ncols() != meta.params.len() || snapshots.nrows() != meta.quality.dimension() {
            return Err(Error::DimensionMismatch {
                expected: meta.params.len(),
                found: snapshots.ncols(),
                context: "snapshot matrix vs metadata",
            });
        }
        Ok(Self {
            quality: meta.quality,
            mode: meta.mode,
            params: meta.params,
            snapshots,
            system: meta.system,
        })
    }

    /// Solves the reduced problem with the method implied by the basis mode.
    pub fn solve(&self, mu: &Parameter) -> Result<DVector<f64>> {
        self.system.solve(mu, self.mode.solve_method())
    }

    /// `V u`.
    pub fn reconstruct(&self, coefficients: &DVector<f64>) -> Result<DVector<f64>> {
        reconstruct(&self.snapshots, coefficients)
    }

    /// Normalizes (and in orthonormal mode orthogonalizes) a raw snapshot.
    pub fn prepare_column(&self, raw: &DVector<f64>) -> Result<DVector<f64>> {
        if raw.len() != self.dimension() {
            return Err(Error::DimensionMismatch {
                expected: self.dimension(),
                found: raw.len(),
                context: "snapshot length",
            });
        }
        let norm = numeric::norm(raw.as_slice());
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::DependentSnapshot { remaining: norm });
        }
        let unit = raw / norm;
        // two Gram–Schmidt sweeps keep the result orthogonal to working precision
        let mut orth = unit.clone();
        for _ in 0..2 {
            for col in self.snapshots.column_iter() {
                let c = numeric::dot(col.as_slice(), orth.as_slice());
                orth.axpy(-c, &col, 1.0);
            }
        }
        let remaining = numeric::norm(orth.as_slice());
        if remaining < DEP_TOL {
            return Err(Error::DependentSnapshot { remaining });
        }
        Ok(match self.mode {
            BasisMode::Orthonormal => orth / remaining,
            BasisMode::NormalizedOnly => unit,
        })
    }

    /// Border data for appending an already prepared column.
    pub fn border_for(&self, column: &DVector<f64>, problem: &FullProblem) -> SystemBorder {
        compute_border(&self.snapshots, column, problem.operator(), problem.rhs())
    }

    /// Appends a prepared column with precomputed border data.
    pub fn appended(&self, column: DVector<f64>, param: Parameter, border: &SystemBorder) -> Result<Self> {
        if column.len() != self.dimension() {
            return Err(Error::DimensionMismatch {
                expected: self.dimension(),
                found: column.len(),
                context: "appended column length",
            });
        }
        let system = self.system.appended(border)?;
        let n = self.n();
        let mut snapshots = self.snapshots.clone().resize_horizontally(n + 1, 0.0);
        snapshots.set_column(n, &column);
        let mut params = self.params.clone();
        params.push(param);
        Ok(Self {
            quality: self.quality,
            mode: self.mode,
            params,
            snapshots,
            system,
        })
    }

    /// Snapshot columns, parameters and blocks reordered so that position `j`
    /// holds old snapshot `order[j]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let system = self.system.permuted(order)?;
        Ok(Self {
            quality: self.quality,
            mode: self.mode,
            params: order.iter().map(|&i| self.params[i]).collect(),
            snapshots: self.snapshots.select_columns(order),
            system,
        })
    }

    /// Adds a full solution as a new snapshot, computing only the border blocks.
    pub fn extend(&self, solution: &FullSolution, problem: &FullProblem) -> Result<Self> {
        if solution.discretization != self.quality.discretization {
            return Err(Error::DimensionMismatch {
                expected: self.quality.discretization,
                found: solution.discretization,
                context: "snapshot discretization",
            });
        }
        let column = self.prepare_column(&solution.values)?;
        let border = self.border_for(&column, problem);
        self.appended(column, solution.parameter, &border)
    }
}

/// `V u` for an explicit snapshot matrix.
pub fn reconstruct(snapshots: &DMatrix<f64>, coefficients: &DVector<f64>) -> Result<DVector<f64>> {
    if coefficients.len() != snapshots.ncols() {
        return Err(Error::DimensionMismatch {
            expected: snapshots.ncols(),
            found: coefficients.len(),
            context: "coefficient count vs snapshot columns",
        });
    }
    Ok(snapshots * coefficients)
}

fn rhs_gramian(rhs: &SeparableVector) -> DMatrix<f64> {
    let sf = rhs.len();
    DMatrix::from_fn(sf, sf, |i, j| {
        numeric::dot(rhs.component(i).as_slice(), rhs.component(j).as_slice())
    })
}

fn apply(m: &CsrMatrix<f64>, v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m.nrows()];
    for (r, row) in m.row_iter().enumerate() {
        let mut s = 0.0;
        for (&c, &a) in row.col_indices().iter().zip(row.values()) {
            s += a * v[c];
        }
        out[r] = s;
    }
    out
}

/// Computes every block of the reduced system for snapshot matrix `v`.
pub fn project_blocks(v: &DMatrix<f64>, op: &SeparableOperator, rhs: &SeparableVector) -> Result<ReducedSystem> {
    let d = v.nrows();
    if op.dimension() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: op.dimension(),
            context: "operator dimension vs snapshots",
        });
    }
    let n = v.ncols();
    let (sa, sf) = (op.len(), rhs.len());
    let cols: Vec<&[f64]> = (0..n).map(|k| &v.as_slice()[k * d..(k + 1) * d]).collect();
    // images[i][k] = A_i v_k
    let images: Vec<Vec<Vec<f64>>> = (0..sa)
        .into_par_iter()
        .map(|i| cols.iter().map(|c| apply(op.component(i), c)).collect())
        .collect();
    let gram = |a: &[&[f64]], b: &[Vec<f64>]| -> DMatrix<f64> {
        let entries: Vec<f64> = (0..n * n)
            .into_par_iter()
            .map(|idx| {
                let (r, c) = (idx % n, idx / n);
                numeric::dot(a[r], &b[c])
            })
            .collect();
        DMatrix::from_vec(n, n, entries)
    };
    let reduced_a: Vec<DMatrix<f64>> = images.iter().map(|img| gram(&cols, img)).collect();
    let reduced_f = (0..sf)
        .map(|j| DVector::from_fn(n, |k, _| numeric::dot(cols[k], rhs.component(j).as_slice())))
        .collect();
    let mut r1 = vec![DMatrix::zeros(n, n); sa * sa];
    for i in 0..sa {
        let left: Vec<&[f64]> = images[i].iter().map(|x| x.as_slice()).collect();
        for j in i..sa {
            let block = gram(&left, &images[j]);
            if i != j {
                r1[j * sa + i] = block.transpose();
            }
            r1[i * sa + j] = block;
        }
    }
    let mut r2 = Vec::with_capacity(sa * sf);
    for img in &images {
        for j in 0..sf {
            r2.push(DVector::from_fn(n, |k, _| {
                numeric::dot(&img[k], rhs.component(j).as_slice())
            }));
        }
    }
    ReducedSystem::from_blocks(
        op.catalog(),
        rhs.catalog(),
        reduced_a,
        reduced_f,
        r1,
        r2,
        rhs_gramian(rhs),
    )
}

/// Border blocks for appending `column` to snapshot matrix `v`.
///
/// Every entry is computed with the same inner products [`project_blocks`]
/// uses, so incremental growth reproduces from-scratch projection.
pub fn compute_border(
    v: &DMatrix<f64>,
    column: &DVector<f64>,
    op: &SeparableOperator,
    rhs: &SeparableVector,
) -> SystemBorder {
    let d = v.nrows();
    let n = v.ncols();
    let (sa, sf) = (op.len(), rhs.len());
    let cols: Vec<&[f64]> = (0..n).map(|k| &v.as_slice()[k * d..(k + 1) * d]).collect();
    let s = column.as_slice();
    let old_images: Vec<Vec<Vec<f64>>> = (0..sa)
        .into_par_iter()
        .map(|i| cols.iter().map(|c| apply(op.component(i), c)).collect())
        .collect();
    let new_images: Vec<Vec<f64>> = (0..sa).map(|i| apply(op.component(i), s)).collect();

    let reduced_a = (0..sa)
        .map(|i| BlockBorder {
            row: (0..n).map(|k| numeric::dot(s, &old_images[i][k])).collect(),
            col: (0..n).map(|k| numeric::dot(cols[k], &new_images[i])).collect(),
            corner: numeric::dot(s, &new_images[i]),
        })
        .collect();
    let reduced_f = (0..sf).map(|j| numeric::dot(s, rhs.component(j).as_slice())).collect();
    let r1 = (0..sa * sa)
        .into_par_iter()
        .map(|ij| {
            let (i, j) = (ij / sa, ij % sa);
            BlockBorder {
                row: (0..n)
                    .map(|k| numeric::dot(&new_images[i], &old_images[j][k]))
                    .collect(),
                col: (0..n)
                    .map(|k| numeric::dot(&old_images[i][k], &new_images[j]))
                    .collect(),
                corner: numeric::dot(&new_images[i], &new_images[j]),
            }
        })
        .collect();
    let mut r2 = Vec::with_capacity(sa * sf);
    for img in &new_images {
        for j in 0..sf {
            r2.push(numeric::dot(img, rhs.component(j).as_slice()));
        }
    }
    SystemBorder {
        reduced_a,
        reduced_f,
        r1,
        r2,
    }
}
