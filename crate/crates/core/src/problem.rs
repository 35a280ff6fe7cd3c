//! The parameterized full problem `A(μ) u(μ) = f(μ)`.
//!
//! Stationary diffusion–advection on the unit square with homogeneous
//! Dirichlet boundary, discretized with 5-point finite differences on a
//! row-major grid of `D × D` points (boundary included, spacing `1 / (D − 1)`).
//! The operator is kept in affine form
//!
//! ```text
//! A(μ) = μ_diff·A_lap + μ_advx·A_dx + μ_advy·A_dy + 1·A_bc
//! f(μ) = 1·f_src
//! ```
//!
//! where `A_lap` is the negative Laplacian, `A_dx`/`A_dy` are central first
//! differences, `A_bc` is the identity on boundary rows and `f_src` is a unit
//! source on interior nodes. Interior rows do not couple to boundary columns,
//! so `A(μ)` is symmetric whenever the advection vanishes.

use nalgebra::DVector;
use nalgebra_sparse::{pattern::SparsityPattern, CsrMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solver::{self, SolverConfig};

/// Simulation parameter `μ = (μ_diff, μ_advx, μ_advy)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub diff: f64,
    pub advx: f64,
    pub advy: f64,
}

impl Parameter {
    pub fn new(diff: f64, advx: f64, advy: f64) -> Result<Self> {
        let p = Self { diff, advx, advy };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.diff.is_finite() && self.advx.is_finite() && self.advy.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite component in {self:?}")));
        }
        if self.diff <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "diffusion must be positive, got {}",
                self.diff
            )));
        }
        Ok(())
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.diff, self.advx, self.advy]
    }
}

/// Quality requirements: grid resolution and residual threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualitySpec {
    /// Grid points per axis, boundary included.
    pub discretization: usize,
    /// Residual threshold in the Euclidean norm.
    pub max_res: f64,
}

impl QualitySpec {
    pub fn new(discretization: usize, max_res: f64) -> Result<Self> {
        let q = Self {
            discretization,
            max_res,
        };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        if self.discretization < 2 {
            return Err(Error::InvalidQuality(format!(
                "discretization must be at least 2, got {}",
                self.discretization
            )));
        }
        if self.max_res.is_nan() || self.max_res <= 0.0 {
            return Err(Error::InvalidQuality(format!(
                "max_res must be positive, got {}",
                self.max_res
            )));
        }
        Ok(())
    }

    /// Full-problem dimension `d = D²`.
    pub fn dimension(&self) -> usize {
        self.discretization * self.discretization
    }
}

/// Catalog of scalar coefficient functions `θ(μ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Theta {
    Diffusion,
    AdvectionX,
    AdvectionY,
    Constant,
}

impl Theta {
    pub fn eval(self, mu: &Parameter) -> f64 {
        match self {
            Theta::Diffusion => mu.diff,
            Theta::AdvectionX => mu.advx,
            Theta::AdvectionY => mu.advy,
            Theta::Constant => 1.0,
        }
    }

    pub fn code(self) -> u32 {
        match self {
            Theta::Diffusion => 0,
            Theta::AdvectionX => 1,
            Theta::AdvectionY => 2,
            Theta::Constant => 3,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        Some(match code {
            0 => Theta::Diffusion,
            1 => Theta::AdvectionX,
            2 => Theta::AdvectionY,
            3 => Theta::Constant,
            _ => return None,
        })
    }
}

/// Evaluates a list of coefficient functions at `mu`.
pub fn thetas(catalog: &[Theta], mu: &Parameter) -> Vec<f64> {
    catalog.iter().map(|t| t.eval(mu)).collect()
}

/// `A(μ) = Σ θ_i(μ) A_i` over components sharing one sparsity pattern.
#[derive(Debug, Clone)]
pub struct SeparableOperator {
    terms: Vec<(Theta, CsrMatrix<f64>)>,
}

impl SeparableOperator {
    pub fn new(terms: Vec<(Theta, CsrMatrix<f64>)>) -> Result<Self> {
        if let Some((_, first)) = terms.first() {
            for (_, m) in &terms[1..] {
                if m.pattern() != first.pattern() {
                    return Err(Error::DimensionMismatch {
                        expected: first.nnz(),
                        found: m.nnz(),
                        context: "separable components must share a sparsity pattern",
                    });
                }
            }
        }
        Ok(Self { terms })
    }

    pub fn terms(&self) -> &[(Theta, CsrMatrix<f64>)] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.terms.first().map_or(0, |(_, m)| m.nrows())
    }

    pub fn catalog(&self) -> Vec<Theta> {
        self.terms.iter().map(|(t, _)| *t).collect()
    }

    pub fn component(&self, i: usize) -> &CsrMatrix<f64> {
        &self.terms[i].1
    }

    /// `Σ c_i A_i` for explicit coefficients.
    pub fn combine(&self, coefficients: &[f64]) -> CsrMatrix<f64> {
        assert_eq!(coefficients.len(), self.terms.len());
        let first = &self.terms[0].1;
        let mut values = vec![0.0; first.nnz()];
        for ((_, m), &c) in self.terms.iter().zip(coefficients) {
            for (acc, &v) in values.iter_mut().zip(m.values()) {
                *acc += c * v;
            }
        }
        CsrMatrix::try_from_pattern_and_values(first.pattern().clone(), values).expect("shared pattern")
    }

    /// Evaluates `A(μ)`.
    pub fn evaluate(&self, mu: &Parameter) -> CsrMatrix<f64> {
        self.combine(&thetas(&self.catalog(), mu))
    }
}

/// `f(μ) = Σ θ_i(μ) f_i`.
#[derive(Debug, Clone)]
pub struct SeparableVector {
    terms: Vec<(Theta, DVector<f64>)>,
}

impl SeparableVector {
    pub fn new(terms: Vec<(Theta, DVector<f64>)>) -> Result<Self> {
        if let Some((_, first)) = terms.first() {
            for (_, v) in &terms[1..] {
                if v.len() != first.len() {
                    return Err(Error::DimensionMismatch {
                        expected: first.len(),
                        found: v.len(),
                        context: "separable vector components",
                    });
                }
            }
        }
        Ok(Self { terms })
    }

    pub fn terms(&self) -> &[(Theta, DVector<f64>)] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn catalog(&self) -> Vec<Theta> {
        self.terms.iter().map(|(t, _)| *t).collect()
    }

    pub fn component(&self, i: usize) -> &DVector<f64> {
        &self.terms[i].1
    }

    pub fn combine(&self, coefficients: &[f64]) -> DVector<f64> {
        assert_eq!(coefficients.len(), self.terms.len());
        let mut out = DVector::zeros(self.terms[0].1.len());
        for ((_, v), &c) in self.terms.iter().zip(coefficients) {
            out.axpy(c, v, 1.0);
        }
        out
    }

    /// Evaluates `f(μ)`.
    pub fn evaluate(&self, mu: &Parameter) -> DVector<f64> {
        self.combine(&thetas(&self.catalog(), mu))
    }
}

/// Assembles the bundled problem with the unit interior source.
pub fn assemble_problem(quality: &QualitySpec) -> Result<(SeparableOperator, SeparableVector)> {
    assemble_problem_with_source(quality, 1.0)
}

/// Assembles the bundled problem with a constant interior source `source`.
pub fn assemble_problem_with_source(
    quality: &QualitySpec,
    source: f64,
) -> Result<(SeparableOperator, SeparableVector)> {
    quality.validate()?;
    let n = quality.discretization;
    let d = n * n;
    let h = 1.0 / (n - 1) as f64;
    let interior = |ix: usize, iy: usize| ix > 0 && iy > 0 && ix + 1 < n && iy + 1 < n;

    let mut offsets = Vec::with_capacity(d + 1);
    let mut cols = Vec::with_capacity(5 * d);
    // per stored entry: (lap, dx, dy, bc)
    let mut coeffs: Vec<[f64; 4]> = Vec::with_capacity(5 * d);
    let (lap_diag, lap_off) = (4.0 / (h * h), -1.0 / (h * h));
    let adv = 1.0 / (2.0 * h);
    offsets.push(0);
    for iy in 0..n {
        for ix in 0..n {
            let row = iy * n + ix;
            if !interior(ix, iy) {
                cols.push(row);
                coeffs.push([0.0, 0.0, 0.0, 1.0]);
            } else {
                // ascending column order: south, west, centre, east, north
                if interior(ix, iy - 1) {
                    cols.push(row - n);
                    coeffs.push([lap_off, 0.0, -adv, 0.0]);
                }
                if interior(ix - 1, iy) {
                    cols.push(row - 1);
                    coeffs.push([lap_off, -adv, 0.0, 0.0]);
                }
                cols.push(row);
                coeffs.push([lap_diag, 0.0, 0.0, 0.0]);
                if interior(ix + 1, iy) {
                    cols.push(row + 1);
                    coeffs.push([lap_off, adv, 0.0, 0.0]);
                }
                if interior(ix, iy + 1) {
                    cols.push(row + n);
                    coeffs.push([lap_off, 0.0, adv, 0.0]);
                }
            }
            offsets.push(cols.len());
        }
    }
    let pattern = SparsityPattern::try_from_offsets_and_indices(d, d, offsets, cols)
        .map_err(|e| Error::Corrupt(format!("stencil pattern: {e}")))?;
    let catalog = [Theta::Diffusion, Theta::AdvectionX, Theta::AdvectionY, Theta::Constant];
    let terms = catalog
        .iter()
        .enumerate()
        .map(|(k, &theta)| {
            let values = coeffs.iter().map(|c| c[k]).collect();
            let m = CsrMatrix::try_from_pattern_and_values(pattern.clone(), values).expect("values match pattern");
            (theta, m)
        })
        .collect();
    let f_src = DVector::from_fn(d, |i, _| if interior(i % n, i / n) { source } else { 0.0 });
    Ok((
        SeparableOperator::new(terms)?,
        SeparableVector::new(vec![(Theta::Constant, f_src)])?,
    ))
}

/// A certified full-problem solution.
#[derive(Debug, Clone)]
pub struct FullSolution {
    pub parameter: Parameter,
    pub values: DVector<f64>,
    pub discretization: usize,
    /// `‖A(μ) u − f(μ)‖ / ‖f(μ)‖` measured after the solve.
    pub relative_residual: f64,
}

/// The simulation-expert side: separable problem plus a full solver.
#[derive(Debug, Clone)]
pub struct FullProblem {
    quality: QualitySpec,
    operator: SeparableOperator,
    rhs: SeparableVector,
    solver: SolverConfig,
}

impl FullProblem {
    pub fn new(quality: QualitySpec) -> Result<Self> {
        let (operator, rhs) = assemble_problem(&quality)?;
        Ok(Self {
            quality,
            operator,
            rhs,
            solver: SolverConfig::default(),
        })
    }

    pub fn from_parts(quality: QualitySpec, operator: SeparableOperator, rhs: SeparableVector) -> Result<Self> {
        quality.validate()?;
        let d = quality.dimension();
        if operator.dimension() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: operator.dimension(),
                context: "operator dimension vs discretization",
            });
        }
        if rhs.terms().first().map_or(0, |(_, v)| v.len()) != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: rhs.terms().first().map_or(0, |(_, v)| v.len()),
                context: "rhs dimension vs discretization",
            });
        }
        Ok(Self {
            quality,
            operator,
            rhs,
            solver: SolverConfig::default(),
        })
    }

    pub fn with_solver(mut self, solver: SolverConfig) -> Self {
        self.solver = solver;
        self
    }

    /// Same operator with a different residual threshold.
    pub fn with_max_res(&self, max_res: f64) -> Result<Self> {
        let mut out = self.clone();
        out.quality = QualitySpec::new(self.quality.discretization, max_res)?;
        Ok(out)
    }

    pub fn quality(&self) -> &QualitySpec {
        &self.quality
    }

    pub fn operator(&self) -> &SeparableOperator {
        &self.operator
    }

    pub fn rhs(&self) -> &SeparableVector {
        &self.rhs
    }

    pub fn dimension(&self) -> usize {
        self.quality.dimension()
    }

    /// Solves the full problem at `mu`.
    pub fn snapshot(&self, mu: &Parameter) -> Result<FullSolution> {
        mu.validate()?;
        let a = self.operator.evaluate(mu);
        let f = self.rhs.evaluate(mu);
        let (values, relative_residual) = solver::solve(&a, &f, self.quality.discretization, &self.solver)?;
        Ok(FullSolution {
            parameter: *mu,
            values,
            discretization: self.quality.discretization,
            relative_residual,
        })
    }
}

/// Free-function form of [`FullProblem::snapshot`].
pub fn snapshot(mu: &Parameter, quality: &QualitySpec) -> Result<FullSolution> {
    FullProblem::new(*quality)?.snapshot(mu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn q(d: usize) -> QualitySpec {
        QualitySpec::new(d, 1e-3).unwrap()
    }

    #[test]
    fn rejects_invalid_inputs() {
        assert!(QualitySpec::new(1, 1.0).is_err());
        assert!(QualitySpec::new(4, 0.0).is_err());
        assert!(Parameter::new(0.0, 1.0, 1.0).is_err());
        assert!(Parameter::new(1.0, f64::NAN, 1.0).is_err());
        let bad = QualitySpec {
            discretization: 1,
            max_res: 1.0,
        };
        assert!(assemble_problem(&bad).is_err());
    }

    #[test]
    fn term_counts() {
        let (op, rhs) = assemble_problem(&q(256)).unwrap();
        assert_eq!(op.len(), 4);
        assert_eq!(rhs.len(), 1);
        assert_eq!(op.dimension(), 256 * 256);
    }

    #[test]
    fn smallest_grid_is_all_boundary() {
        let (op, rhs) = assemble_problem(&q(2)).unwrap();
        for (_, m) in op.terms() {
            assert_eq!((m.nrows(), m.ncols()), (4, 4));
        }
        let lap = DMatrix::from(op.component(0));
        assert_eq!(lap, DMatrix::zeros(4, 4));
        let bc = DMatrix::from(op.component(3));
        assert_eq!(bc, DMatrix::identity(4, 4));
        assert_eq!(rhs.component(0).sum(), 0.0);
    }

    #[test]
    fn single_interior_node_has_stencil_centre() {
        // D = 3: h = 1/2, lone interior node with no interior neighbours
        let (op, _) = assemble_problem(&q(3)).unwrap();
        let lap = DMatrix::from(op.component(0));
        assert_eq!(lap[(4, 4)], 16.0);
        assert_eq!(lap.row(4).sum(), 16.0);
    }

    #[test]
    fn interior_laplacian_rows_sum_to_zero_away_from_boundary() {
        let (op, _) = assemble_problem(&q(8)).unwrap();
        let lap = DMatrix::from(op.component(0));
        let h2 = (1.0f64 / 7.0).powi(2);
        // (3,3) is surrounded by interior nodes: 4 - 4*1 = 0
        let row = 3 * 8 + 3;
        assert!(lap.row(row).sum().abs() < 1e-9);
        assert!((lap[(row, row)] * h2 - 4.0).abs() < 1e-12);
        assert!((lap[(row, row + 1)] * h2 + 1.0).abs() < 1e-12);
    }

    #[test]
    fn evaluation_is_linear() {
        let (op, _) = assemble_problem(&q(6)).unwrap();
        let single = op.combine(&[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(single.values(), op.component(0).values());
        let mu = Parameter::new(2.0, 0.0, 0.0).unwrap();
        let expected = DMatrix::from(op.component(0)) * 2.0 + DMatrix::from(op.component(3));
        assert_eq!(DMatrix::from(&op.evaluate(&mu)), expected);
    }

    #[test]
    fn rhs_is_parameter_independent() {
        let (_, rhs) = assemble_problem(&q(6)).unwrap();
        let a = rhs.evaluate(&Parameter::new(1.0, 0.0, 0.0).unwrap());
        let b = rhs.evaluate(&Parameter::new(17.0, -30.0, 12.0).unwrap());
        assert_eq!(a, b);
        assert_eq!(&a, rhs.component(0));
    }

    #[test]
    fn zero_source_gives_zero_solution() {
        let quality = q(8);
        let (op, rhs) = assemble_problem_with_source(&quality, 0.0).unwrap();
        let problem = FullProblem::from_parts(quality, op, rhs).unwrap();
        let sol = problem.snapshot(&Parameter::new(1.0, 0.0, 0.0).unwrap()).unwrap();
        assert!(sol.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn snapshot_certifies_residual() {
        let quality = q(16);
        let problem = FullProblem::new(quality).unwrap();
        let mu = Parameter::new(15.0, 10.0, 10.0).unwrap();
        let sol = problem.snapshot(&mu).unwrap();
        let a = problem.operator().evaluate(&mu);
        let f = problem.rhs().evaluate(&mu);
        let rel = (&a * &sol.values - &f).norm() / f.norm();
        assert!(rel <= 1e-10);
        assert_eq!(sol.values.len(), 256);
    }

    #[test]
    fn snapshot_boundary_values_vanish() {
        let problem = FullProblem::new(q(10)).unwrap();
        let sol = problem.snapshot(&Parameter::new(12.0, 30.0, -5.0).unwrap()).unwrap();
        for i in 0..10 {
            assert_eq!(sol.values[i], 0.0);
            assert_eq!(sol.values[90 + i], 0.0);
            assert_eq!(sol.values[10 * i], 0.0);
            assert_eq!(sol.values[10 * i + 9], 0.0);
        }
    }

    #[test]
    fn assembly_is_deterministic() {
        let (a, _) = assemble_problem(&q(12)).unwrap();
        let (b, _) = assemble_problem(&q(12)).unwrap();
        for ((_, x), (_, y)) in a.terms().iter().zip(b.terms()) {
            let xb: Vec<u64> = x.values().iter().map(|v| v.to_bits()).collect();
            let yb: Vec<u64> = y.values().iter().map(|v| v.to_bits()).collect();
            assert_eq!(xb, yb);
        }
    }
}
