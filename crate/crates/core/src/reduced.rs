//! The d-independent part of a reduced basis.
//!
//! [`ReducedSystem`] holds every precomputed block of the affine reduced
//! problem and of the residual expansion
//!
//! ```text
//! ‖r‖² = Σ θ_i θ_j u·(V^T A_i^T A_j V)u − 2 Σ θ_i φ_j u·(V^T A_i^T f_j) + Σ φ_i φ_j f_i·f_j
//! ```
//!
//! (`θ` for operator terms, `φ` for right-hand-side terms). Nothing in here
//! has the full-problem dimension, so every online operation on it costs a
//! polynomial in `n`, `S_A` and `S_f` only.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numeric::DoubleDouble;
use crate::problem::{thetas, Parameter, Theta};

/// Relative singular-value cutoff for pseudoinverse solves.
pub const PINV_CUTOFF: f64 = 1e-12;

/// How the reduced `n × n` system is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReducedSolveMethod {
    /// LU with partial pivoting; a singular system is an error.
    Lu,
    /// Moore–Penrose pseudoinverse (least-squares, tolerates dependence).
    Pseudoinverse,
}

/// New row, column and corner appended to an `n × n` block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockBorder {
    pub row: Vec<f64>,
    pub col: Vec<f64>,
    pub corner: f64,
}

impl BlockBorder {
    pub fn float_count(&self) -> usize {
        self.row.len() + self.col.len() + 1
    }
}

/// Everything that changes in a [`ReducedSystem`] when one snapshot is appended.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemBorder {
    /// One border per operator term.
    pub reduced_a: Vec<BlockBorder>,
    /// One new entry per right-hand-side term.
    pub reduced_f: Vec<f64>,
    /// One border per `(i, j)` operator pair, row-major in `(i, j)`.
    pub r1: Vec<BlockBorder>,
    /// One new entry per `(i, j)` operator/right-hand-side pair.
    pub r2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedSystem {
    n: usize,
    theta_a: Vec<Theta>,
    theta_f: Vec<Theta>,
    reduced_a: Vec<DMatrix<f64>>,
    reduced_f: Vec<DVector<f64>>,
    r1: Vec<DMatrix<f64>>,
    r2: Vec<DVector<f64>>,
    r4: DMatrix<f64>,
}

impl ReducedSystem {
    /// A system with no snapshots; only the right-hand-side Gramian is known.
    pub fn empty(theta_a: Vec<Theta>, theta_f: Vec<Theta>, r4: DMatrix<f64>) -> Result<Self> {
        let sa = theta_a.len();
        let sf = theta_f.len();
        Self::from_blocks(
            theta_a,
            theta_f,
            vec![DMatrix::zeros(0, 0); sa],
            vec![DVector::zeros(0); sf],
            vec![DMatrix::zeros(0, 0); sa * sa],
            vec![DVector::zeros(0); sa * sf],
            r4,
        )
    }

    /// Builds a system from explicit blocks after checking every shape.
    pub fn from_blocks(
        theta_a: Vec<Theta>,
        theta_f: Vec<Theta>,
        reduced_a: Vec<DMatrix<f64>>,
        reduced_f: Vec<DVector<f64>>,
        r1: Vec<DMatrix<f64>>,
        r2: Vec<DVector<f64>>,
        r4: DMatrix<f64>,
    ) -> Result<Self> {
        let sa = theta_a.len();
        let sf = theta_f.len();
        let n = reduced_a.first().map_or(0, |m| m.nrows());
        let check = |ok: bool, expected: usize, found: usize, context: &'static str| {
            if ok {
                Ok(())
            } else {
                Err(Error::DimensionMismatch {
                    expected,
                    found,
                    context,
                })
            }
        };
        check(reduced_a.len() == sa, sa, reduced_a.len(), "reduced operator blocks")?;
        check(reduced_f.len() == sf, sf, reduced_f.len(), "reduced rhs blocks")?;
        check(r1.len() == sa * sa, sa * sa, r1.len(), "operator Gramian blocks")?;
        check(r2.len() == sa * sf, sa * sf, r2.len(), "operator/rhs blocks")?;
        check(r4.shape() == (sf, sf), sf, r4.nrows(), "rhs Gramian")?;
        for m in reduced_a.iter().chain(&r1) {
            check(m.shape() == (n, n), n, m.nrows(), "square block size")?;
        }
        for v in reduced_f.iter().chain(&r2) {
            check(v.len() == n, n, v.len(), "vector block size")?;
        }
        Ok(Self {
            n,
            theta_a,
            theta_f,
            reduced_a,
            reduced_f,
            r1,
            r2,
            r4,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn s_a(&self) -> usize {
        self.theta_a.len()
    }

    pub fn s_f(&self) -> usize {
        self.theta_f.len()
    }

    pub fn theta_a(&self) -> &[Theta] {
        &self.theta_a
    }

    pub fn theta_f(&self) -> &[Theta] {
        &self.theta_f
    }

    pub fn reduced_a(&self) -> &[DMatrix<f64>] {
        &self.reduced_a
    }

    pub fn reduced_f(&self) -> &[DVector<f64>] {
        &self.reduced_f
    }

    /// `V^T A_i^T A_j V`, indexed `i * S_A + j`.
    pub fn r1(&self) -> &[DMatrix<f64>] {
        &self.r1
    }

    pub fn r1_block(&self, i: usize, j: usize) -> &DMatrix<f64> {
        &self.r1[i * self.s_a() + j]
    }

    /// `V^T A_i^T f_j`, indexed `i * S_f + j`. The third residual term is the
    /// transpose of this family and is not stored separately.
    pub fn r2(&self) -> &[DVector<f64>] {
        &self.r2
    }

    pub fn r2_block(&self, i: usize, j: usize) -> &DVector<f64> {
        &self.r2[i * self.s_f() + j]
    }

    /// `f_i · f_j`.
    pub fn r4(&self) -> &DMatrix<f64> {
        &self.r4
    }

    /// Float count of the reduced and residual data, counting the transposed
    /// operator/rhs family twice: `S_A n² + S_f n + S_A² n² + 2 S_A S_f n + S_f²`.
    pub fn float_count(&self) -> usize {
        let (n, sa, sf) = (self.n, self.s_a(), self.s_f());
        sa * n * n + sf * n + sa * sa * n * n + 2 * sa * sf * n + sf * sf
    }

    /// Assembles `A_V(μ)` and `f_V(μ)` from the precomputed blocks.
    pub fn assemble(&self, mu: &Parameter) -> (DMatrix<f64>, DVector<f64>) {
        let ta = thetas(&self.theta_a, mu);
        let tf = thetas(&self.theta_f, mu);
        let mut a = DMatrix::zeros(self.n, self.n);
        for (block, &t) in self.reduced_a.iter().zip(&ta) {
            a.zip_apply(block, |x, y| *x += t * y);
        }
        let mut f = DVector::zeros(self.n);
        for (block, &t) in self.reduced_f.iter().zip(&tf) {
            f.axpy(t, block, 1.0);
        }
        (a, f)
    }

    /// Solves the reduced problem `A_V(μ) u = f_V(μ)`.
    pub fn solve(&self, mu: &Parameter, method: ReducedSolveMethod) -> Result<DVector<f64>> {
        if self.n == 0 {
            return Ok(DVector::zeros(0));
        }
        let (a, f) = self.assemble(mu);
        let degenerate = || Error::DegenerateBasis { n: self.n };
        let u = match method {
            ReducedSolveMethod::Lu => a.lu().solve(&f).ok_or_else(degenerate)?,
            ReducedSolveMethod::Pseudoinverse => pseudoinverse_solve(a, &f).ok_or_else(degenerate)?,
        };
        if u.iter().all(|v| v.is_finite()) {
            Ok(u)
        } else {
            Err(degenerate())
        }
    }

    /// Squared residual norm from the block expansion, evaluated in
    /// double-double and rounded once. May be slightly negative from rounding.
    pub fn residual_squared(&self, mu: &Parameter, u: &DVector<f64>) -> f64 {
        assert_eq!(u.len(), self.n, "coefficient length must match basis size");
        let ta = thetas(&self.theta_a, mu);
        let tf = thetas(&self.theta_f, mu);
        let (n, sa, sf) = (self.n, self.s_a(), self.s_f());

        let mut q = DoubleDouble::ZERO;
        if n > 0 {
            let uu: Vec<DoubleDouble> = (0..n * n)
                .map(|kl| DoubleDouble::product(u[kl / n], u[kl % n]))
                .collect();
            for i in 0..sa {
                for j in 0..sa {
                    let block = &self.r1[i * sa + j];
                    let mut s = DoubleDouble::ZERO;
                    for l in 0..n {
                        for k in 0..n {
                            s = s + uu[k * n + l].mul_f64(block[(k, l)]);
                        }
                    }
                    q = q + s * DoubleDouble::product(ta[i], ta[j]);
                }
            }
            for (i, &ti) in ta.iter().enumerate() {
                for (j, &tj) in tf.iter().enumerate() {
                    let block = &self.r2[i * sf + j];
                    let mut s = DoubleDouble::ZERO;
                    for k in 0..n {
                        s = s + DoubleDouble::product(u[k], block[k]);
                    }
                    let c = DoubleDouble::product(ti, tj).mul_f64(2.0);
                    q = q - s * c;
                }
            }
        }
        for i in 0..sf {
            for j in 0..sf {
                q = q + DoubleDouble::product(tf[i], tf[j]).mul_f64(self.r4[(i, j)]);
            }
        }
        q.to_f64()
    }

    /// Residual norm `‖A(μ) V u − f(μ)‖` without touching any d-dimensional data.
    pub fn residual_norm(&self, mu: &Parameter, u: &DVector<f64>) -> f64 {
        let q = self.residual_squared(mu, u);
        if q < 0.0 {
            log::debug!("clamped negative squared residual {q:e} to zero");
            0.0
        } else {
            q.sqrt()
        }
    }

    /// Leading `m × m` sub-blocks (`m ≤ n`). Pure copy of existing entries.
    pub fn leading(&self, m: usize) -> Result<Self> {
        if m > self.n {
            return Err(Error::SubspaceOutOfRange { m, n: self.n });
        }
        let cut = |b: &DMatrix<f64>| b.view((0, 0), (m, m)).into_owned();
        let cut_v = |b: &DVector<f64>| b.rows(0, m).into_owned();
        Ok(Self {
            n: m,
            theta_a: self.theta_a.clone(),
            theta_f: self.theta_f.clone(),
            reduced_a: self.reduced_a.iter().map(cut).collect(),
            reduced_f: self.reduced_f.iter().map(cut_v).collect(),
            r1: self.r1.iter().map(cut).collect(),
            r2: self.r2.iter().map(cut_v).collect(),
            r4: self.r4.clone(),
        })
    }

    /// Reorders snapshots: position `j` of the result holds old snapshot `order[j]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        validate_order(order, self.n)?;
        let n = self.n;
        let perm_m = |b: &DMatrix<f64>| DMatrix::from_fn(n, n, |r, c| b[(order[r], order[c])]);
        let perm_v = |b: &DVector<f64>| DVector::from_fn(n, |r, _| b[order[r]]);
        Ok(Self {
            n,
            theta_a: self.theta_a.clone(),
            theta_f: self.theta_f.clone(),
            reduced_a: self.reduced_a.iter().map(perm_m).collect(),
            reduced_f: self.reduced_f.iter().map(perm_v).collect(),
            r1: self.r1.iter().map(perm_m).collect(),
            r2: self.r2.iter().map(perm_v).collect(),
            r4: self.r4.clone(),
        })
    }

    /// Appends one snapshot's border data. Existing entries are copied unchanged.
    pub fn appended(&self, border: &SystemBorder) -> Result<Self> {
        let (n, sa, sf) = (self.n, self.s_a(), self.s_f());
        let shape_err = |expected, found, context| Error::DimensionMismatch {
            expected,
            found,
            context,
        };
        if border.reduced_a.len() != sa || border.r1.len() != sa * sa {
            return Err(shape_err(sa, border.reduced_a.len(), "border block count"));
        }
        if border.reduced_f.len() != sf || border.r2.len() != sa * sf {
            return Err(shape_err(sf, border.reduced_f.len(), "border vector count"));
        }
        for b in border.reduced_a.iter().chain(&border.r1) {
            if b.row.len() != n || b.col.len() != n {
                return Err(shape_err(n, b.row.len(), "border length"));
            }
        }
        let grow = |m: &DMatrix<f64>, b: &BlockBorder| {
            let mut out = DMatrix::zeros(n + 1, n + 1);
            out.view_mut((0, 0), (n, n)).copy_from(m);
            for k in 0..n {
                out[(n, k)] = b.row[k];
                out[(k, n)] = b.col[k];
            }
            out[(n, n)] = b.corner;
            out
        };
        let grow_v = |v: &DVector<f64>, x: f64| {
            let mut out = DVector::zeros(n + 1);
            out.rows_mut(0, n).copy_from(v);
            out[n] = x;
            out
        };
        Ok(Self {
            n: n + 1,
            theta_a: self.theta_a.clone(),
            theta_f: self.theta_f.clone(),
            reduced_a: self
                .reduced_a
                .iter()
                .zip(&border.reduced_a)
                .map(|(m, b)| grow(m, b))
                .collect(),
            reduced_f: self
                .reduced_f
                .iter()
                .zip(&border.reduced_f)
                .map(|(v, &x)| grow_v(v, x))
                .collect(),
            r1: self.r1.iter().zip(&border.r1).map(|(m, b)| grow(m, b)).collect(),
            r2: self.r2.iter().zip(&border.r2).map(|(v, &x)| grow_v(v, x)).collect(),
            r4: self.r4.clone(),
        })
    }
}

pub(crate) fn validate_order(order: &[usize], n: usize) -> Result<()> {
    if order.len() != n {
        return Err(Error::InvalidReordering(format!(
            "length {} does not match basis size {n}",
            order.len()
        )));
    }
    let mut seen = vec![false; n];
    for &i in order {
        if i >= n || std::mem::replace(&mut seen[i], true) {
            return Err(Error::InvalidReordering(format!("{order:?} is not a permutation")));
        }
    }
    Ok(())
}

/// Least-squares solve through the SVD with relative cutoff [`PINV_CUTOFF`].
pub fn pseudoinverse_solve(a: DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    if smax.is_nan() || smax <= 0.0 {
        return Some(DVector::zeros(b.len()));
    }
    svd.solve(b, PINV_CUTOFF * smax).ok()
}
