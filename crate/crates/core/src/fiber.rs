//! Single-fiber multilinear algebra over a real `2n`-dimensional space.
//!
//! Conventions used throughout the crate:
//!
//! * vectors are component arrays on the real basis `v_0 .. v_{2n-1}`;
//! * `J` acts by matrix-vector product, column `b` of `J` is `J v_b`;
//! * structure constants are stored as `f[g][a][b]` with
//!   `[v_a, v_b] = sum_g f[g][a][b] v_g`;
//! * a 2-form is the skew matrix of its values on basis pairs;
//! * `omega(X, Y) = g(JX, Y)`, so the metric matrix is `G = W J`.
//!
//! [`nijenhuis`] is the unnormalized bracket expression
//! `[JX,JY] - J[JX,Y] - J[X,JY] - [X,Y]`. The frame quantities `N^k_{ij}`
//! stored in [`StructureCoefficients`] are defined through the bracket
//! expansion, and the two are related by `N(e_i-bar, e_j-bar) = 4 N^k_{ij} e_k`.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use num_traits::Zero;
use thiserror::Error;

use crate::linalg::{self, CMat};
use crate::scalar::{cplx, half, imag_unit, negligible, FieldElem, Real, Scalar};

/// Structural identities are checked to this tolerance by default.
pub const STRUCTURE_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum FiberError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("dimension {0} is not a positive even number")]
    OddDimension(usize),
    #[error("J does not square to -Id (residual {0:e})")]
    NotComplexStructure(f64),
    #[error("matrix is not antisymmetric (residual {0:e})")]
    NotSkew(f64),
    #[error("complex frame is singular")]
    SingularFrame,
    #[error("invalid model:\n{0}")]
    InvalidModel(ValidationReport),
}

fn check_dim(expected: usize, found: usize) -> Result<(), FiberError> {
    if expected == found {
        Ok(())
    } else {
        Err(FiberError::DimensionMismatch { expected, found })
    }
}

/// A dense `n x n x n` array indexed `[k][i][j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3<F> {
    n: usize,
    data: Vec<F>,
}

impl<F: FieldElem> Tensor3<F> {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![F::zero(); n * n * n] }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize, usize) -> F) -> Self {
        let mut t = Self::zeros(n);
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    t.data[(k * n + i) * n + j] = f(k, i, j);
                }
            }
        }
        t
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, k: usize, i: usize, j: usize) -> &F {
        &self.data[(k * self.n + i) * self.n + j]
    }

    pub fn set(&mut self, k: usize, i: usize, j: usize, v: F) {
        self.data[(k * self.n + i) * self.n + j] = v;
    }

    pub fn max_magnitude(&self) -> f64 {
        self.data.iter().map(FieldElem::magnitude).fold(0.0, f64::max)
    }

    pub fn iter(&self) -> impl Iterator<Item = &F> {
        self.data.iter()
    }
}

/// A 2-form stored as its full skew matrix of values on basis pairs.
///
/// Constructors only ever fill the strict upper triangle and mirror it, so
/// the stored matrix is antisymmetric bit for bit.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoForm<F> {
    m: DMatrix<F>,
}

impl<F: FieldElem> TwoForm<F> {
    pub fn zeros(dim: usize) -> Self {
        Self { m: DMatrix::zeros(dim, dim) }
    }

    /// Builds a form from its values on pairs `(a, b)` with `a < b`.
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> F) -> Self {
        let mut m = DMatrix::zeros(dim, dim);
        for a in 0..dim {
            for b in a + 1..dim {
                let v = f(a, b);
                m[(b, a)] = -v.clone();
                m[(a, b)] = v;
            }
        }
        Self { m }
    }

    /// Takes the upper triangle of `m`. Fails unless `m` is skew to `tol`.
    pub fn from_matrix(m: DMatrix<F>, tol: f64) -> Result<Self, FiberError> {
        check_dim(m.nrows(), m.ncols())?;
        let d = m.nrows();
        for a in 0..d {
            for b in a..d {
                let s = m[(a, b)].clone() + m[(b, a)].clone();
                if !negligible(&s, tol) {
                    return Err(FiberError::NotSkew(s.magnitude()));
                }
            }
        }
        Ok(Self::from_fn(d, |a, b| m[(a, b)].clone()))
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<F> {
        &self.m
    }

    pub fn get(&self, a: usize, b: usize) -> F {
        self.m[(a, b)].clone()
    }

    /// `xi(x, y) = x^T M y`.
    pub fn eval(&self, x: &[F], y: &[F]) -> F {
        let d = self.dim();
        let mut acc = F::zero();
        for a in 0..d {
            if x[a].is_zero() {
                continue;
            }
            let mut row = F::zero();
            for b in 0..d {
                row += self.m[(a, b)].clone() * y[b].clone();
            }
            acc += x[a].clone() * row;
        }
        acc
    }

    pub fn add(&self, other: &Self) -> Self {
        Self::from_fn(self.dim(), |a, b| self.get(a, b) + other.get(a, b))
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self::from_fn(self.dim(), |a, b| self.get(a, b) - other.get(a, b))
    }

    pub fn scale(&self, c: F) -> Self {
        Self::from_fn(self.dim(), |a, b| self.get(a, b) * c.clone())
    }

    pub fn max_magnitude(&self) -> f64 {
        linalg::max_magnitude(&self.m)
    }

    /// Frobenius norm as `f64`.
    pub fn norm(&self) -> f64 {
        self.m.iter().map(|x| x.magnitude().powi(2)).sum::<f64>().sqrt()
    }
}

impl<T: Scalar> TwoForm<T> {
    pub fn lift(&self) -> TwoForm<Complex<T>> {
        TwoForm::from_fn(self.dim(), |a, b| cplx(self.get(a, b)))
    }
}

impl<T: Scalar> TwoForm<Complex<T>> {
    /// Real part, and the largest imaginary magnitude that was dropped.
    pub fn real_part(&self) -> (TwoForm<T>, f64) {
        let imag = self.m.iter().map(|z| z.im.magnitude()).fold(0.0, f64::max);
        (TwoForm::from_fn(self.dim(), |a, b| self.m[(a, b)].re.clone()), imag)
    }
}

/// Complex structure `J v_{2k} = v_{2k+1}`, `J v_{2k+1} = -v_{2k}`.
pub fn standard_j<T: Scalar>(dim: usize) -> DMatrix<T> {
    let mut j = DMatrix::zeros(dim, dim);
    for k in 0..dim / 2 {
        j[(2 * k + 1, 2 * k)] = T::one();
        j[(2 * k, 2 * k + 1)] = -T::one();
    }
    j
}

/// The compatible form with `omega(v_{2k}, v_{2k+1}) = 1`.
pub fn standard_omega<T: Scalar>(dim: usize) -> TwoForm<T> {
    TwoForm::from_fn(dim, |a, b| if a % 2 == 0 && b == a + 1 { T::one() } else { T::zero() })
}

fn mat_vec<F: FieldElem + From<T>, T: Scalar>(m: &DMatrix<T>, x: &[F]) -> Vec<F> {
    let d = m.nrows();
    (0..d)
        .map(|r| {
            (0..m.ncols()).fold(F::zero(), |acc, c| {
                if m[(r, c)].is_zero() || x[c].is_zero() {
                    acc
                } else {
                    acc + F::from(m[(r, c)].clone()) * x[c].clone()
                }
            })
        })
        .collect()
}

fn axpy<F: FieldElem>(x: &[F], y: &[F], c: F) -> Vec<F> {
    x.iter().zip(y).map(|(a, b)| a.clone() + c.clone() * b.clone()).collect()
}

fn unit<F: FieldElem>(dim: usize, a: usize) -> Vec<F> {
    (0..dim).map(|i| if i == a { F::one() } else { F::zero() }).collect()
}

/// A real Lie algebra with an almost complex structure and a compatible
/// 2-form: the input data for left-invariant flows.
#[derive(Clone, Debug, PartialEq)]
pub struct LieAlgebraModel<T> {
    dim: usize,
    f: Vec<T>,
    j: DMatrix<T>,
    omega0: TwoForm<T>,
}

impl<T: Scalar> LieAlgebraModel<T> {
    /// `structure` is laid out `[g][a][b]`. Only shapes are checked here;
    /// use [`validate_model`] for the algebraic invariants.
    pub fn new(dim: usize, structure: Vec<T>, j: DMatrix<T>, omega0: TwoForm<T>) -> Result<Self, FiberError> {
        if dim == 0 || !dim.is_multiple_of(2) {
            return Err(FiberError::OddDimension(dim));
        }
        check_dim(dim * dim * dim, structure.len())?;
        check_dim(dim, j.nrows())?;
        check_dim(dim, j.ncols())?;
        check_dim(dim, omega0.dim())?;
        Ok(Self { dim, f: structure, j, omega0 })
    }

    /// Builds a model from a sparse list `(g, a, b, value)` meaning
    /// `f[g][a][b] = value`; entries are taken literally.
    pub fn from_brackets(
        dim: usize,
        brackets: &[(usize, usize, usize, T)],
        j: DMatrix<T>,
        omega0: TwoForm<T>,
    ) -> Result<Self, FiberError> {
        let mut f = vec![T::zero(); dim * dim * dim];
        for (g, a, b, v) in brackets {
            for idx in [*g, *a, *b] {
                if idx >= dim {
                    return Err(FiberError::DimensionMismatch { expected: dim, found: idx + 1 });
                }
            }
            f[(g * dim + a) * dim + b] = v.clone();
        }
        Self::new(dim, f, j, omega0)
    }

    /// Same algebra and `J` with the bracket antisymmetrized:
    /// `[v_a, v_b]` for `a < b` is kept and `[v_b, v_a]` mirrors it.
    pub fn standard(dim: usize, brackets: &[(usize, usize, usize, T)]) -> Result<Self, FiberError> {
        let mut f = vec![T::zero(); dim * dim * dim];
        for (g, a, b, v) in brackets {
            f[(g * dim + a) * dim + b] = v.clone();
            f[(g * dim + b) * dim + a] = -v.clone();
        }
        Self::new(dim, f, standard_j(dim), standard_omega(dim))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn complex_dim(&self) -> usize {
        self.dim / 2
    }

    pub fn structure_constant(&self, g: usize, a: usize, b: usize) -> &T {
        &self.f[(g * self.dim + a) * self.dim + b]
    }

    pub fn j(&self) -> &DMatrix<T> {
        &self.j
    }

    pub fn omega0(&self) -> &TwoForm<T> {
        &self.omega0
    }

    /// Same algebra and `J` with a different initial form.
    pub fn with_omega0(&self, omega0: TwoForm<T>) -> Result<Self, FiberError> {
        Self::new(self.dim, self.f.clone(), self.j.clone(), omega0)
    }

    /// Matrix of `g_0(X, Y) = omega_0(X, JY)`.
    pub fn metric0(&self) -> DMatrix<T> {
        self.omega0.matrix() * &self.j
    }

    /// `[x, y]`, bilinear over any field containing the scalars.
    pub fn bracket<F: FieldElem + From<T>>(&self, x: &[F], y: &[F]) -> Vec<F> {
        let d = self.dim;
        let mut out = vec![F::zero(); d];
        for a in 0..d {
            if x[a].is_zero() {
                continue;
            }
            for b in 0..d {
                if y[b].is_zero() {
                    continue;
                }
                let xy = x[a].clone() * y[b].clone();
                for (g, o) in out.iter_mut().enumerate() {
                    let c = self.structure_constant(g, a, b);
                    if !c.is_zero() {
                        *o += F::from(c.clone()) * xy.clone();
                    }
                }
            }
        }
        out
    }

    pub fn apply_j<F: FieldElem + From<T>>(&self, x: &[F]) -> Vec<F> {
        mat_vec(&self.j, x)
    }

    /// Matrix of `ad x`, i.e. `y -> [x, y]`.
    pub fn ad(&self, x: &[T]) -> DMatrix<T> {
        let d = self.dim;
        DMatrix::from_fn(d, d, |g, b| {
            (0..d).fold(T::zero(), |acc, a| acc + self.structure_constant(g, a, b).clone() * x[a].clone())
        })
    }
}

/// Which model invariant a [`Violation`] refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Invariant {
    Antisymmetry,
    Jacobi,
    ComplexStructure,
    Compatibility,
    Positivity,
    FormSkew,
}

impl fmt::Display for Invariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Invariant::Antisymmetry => "bracket antisymmetry",
            Invariant::Jacobi => "Jacobi identity",
            Invariant::ComplexStructure => "J^2 = -Id",
            Invariant::Compatibility => "omega(JX, JY) = omega(X, Y)",
            Invariant::Positivity => "omega(X, JX) > 0",
            Invariant::FormSkew => "2-form antisymmetry",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub invariant: Invariant,
    /// Worst-case residual; for positivity, minus the smallest eigenvalue.
    pub residual: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, inv: Invariant) -> bool {
        self.violations.iter().any(|v| v.invariant == inv)
    }

    pub fn residual(&self, inv: Invariant) -> Option<f64> {
        self.violations.iter().find(|v| v.invariant == inv).map(|v| v.residual)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return f.write_str("all invariants hold");
        }
        for v in &self.violations {
            writeln!(f, "  {}: residual {:e}", v.invariant, v.residual)?;
        }
        Ok(())
    }
}

/// Residuals of every model invariant, without failing.
pub fn model_residuals<T: Scalar>(m: &LieAlgebraModel<T>) -> Vec<(Invariant, f64)> {
    let d = m.dim();
    let mut anti = 0.0f64;
    for g in 0..d {
        for a in 0..d {
            for b in 0..d {
                let s = m.structure_constant(g, a, b).clone() + m.structure_constant(g, b, a).clone();
                anti = anti.max(s.magnitude());
            }
        }
    }

    let mut jacobi = 0.0f64;
    for a in 0..d {
        for b in a + 1..d {
            for c in b + 1..d {
                let (x, y, z) = (unit::<T>(d, a), unit::<T>(d, b), unit::<T>(d, c));
                let t1 = m.bracket(&x, &m.bracket(&y, &z));
                let t2 = m.bracket(&y, &m.bracket(&z, &x));
                let t3 = m.bracket(&z, &m.bracket(&x, &y));
                for i in 0..d {
                    let s = t1[i].clone() + t2[i].clone() + t3[i].clone();
                    jacobi = jacobi.max(s.magnitude());
                }
            }
        }
    }

    let jj = m.j() * m.j() + DMatrix::<T>::identity(d, d);
    let cs = linalg::max_magnitude(&jj);

    let w = m.omega0().matrix();
    let compat = linalg::max_magnitude(&(m.j().transpose() * w * m.j() - w));

    // Positivity in double precision: smallest eigenvalue of the symmetric
    // part of G = W J.
    let g = m.metric0().map(|x| x.to_f64_lossy());
    let (ev, _) = linalg::symmetric_eigen(&g);
    let min_ev = ev.first().copied().unwrap_or(0.0);

    vec![
        (Invariant::Antisymmetry, anti),
        (Invariant::Jacobi, jacobi),
        (Invariant::ComplexStructure, cs),
        (Invariant::Compatibility, compat),
        (Invariant::Positivity, -min_ev),
    ]
}

/// Lists violated model invariants with their worst-case residuals.
pub fn validate_model<T: Scalar>(m: &LieAlgebraModel<T>, tol: f64) -> ValidationReport {
    let violations = model_residuals(m)
        .into_iter()
        .filter(|&(inv, r)| match inv {
            // strictly positive smallest eigenvalue required
            Invariant::Positivity => r >= -tol,
            _ => r > tol,
        })
        .map(|(invariant, residual)| Violation { invariant, residual })
        .collect();
    ValidationReport { violations }
}

/// How strictly [`check_model`] treats a failed Jacobi identity.
#[derive(Clone, Copy, Debug)]
pub struct ModelPolicy {
    pub tol: f64,
    pub allow_non_lie: bool,
}

impl Default for ModelPolicy {
    fn default() -> Self {
        Self { tol: STRUCTURE_TOL, allow_non_lie: false }
    }
}

/// Validates a model. With `allow_non_lie`, a Jacobi failure is returned as
/// a warning in the report instead of an error.
pub fn check_model<T: Scalar>(m: &LieAlgebraModel<T>, policy: ModelPolicy) -> Result<ValidationReport, FiberError> {
    let report = validate_model(m, policy.tol);
    let fatal = report
        .violations
        .iter()
        .any(|v| !(policy.allow_non_lie && v.invariant == Invariant::Jacobi));
    if fatal {
        Err(FiberError::InvalidModel(report))
    } else {
        Ok(report)
    }
}

fn j_column<T: Scalar>(j: &DMatrix<T>, a: usize) -> Vec<T> {
    j.column(a).iter().cloned().collect()
}

/// `(J xi)(X, Y) = xi(JX, JY)`.
pub fn apply_j_to_form<T: Scalar>(xi: &TwoForm<T>, j: &DMatrix<T>) -> Result<TwoForm<T>, FiberError> {
    check_dim(xi.dim(), j.nrows())?;
    let cols: Vec<Vec<T>> = (0..xi.dim()).map(|a| j_column(j, a)).collect();
    Ok(TwoForm::from_fn(xi.dim(), |a, b| xi.eval(&cols[a], &cols[b])))
}

/// `xi^(1,1)(X, Y) = (xi(X, Y) + xi(JX, JY)) / 2`.
pub fn project_11<T: Scalar>(xi: &TwoForm<T>, j: &DMatrix<T>) -> Result<TwoForm<T>, FiberError> {
    let jxi = apply_j_to_form(xi, j)?;
    Ok(TwoForm::from_fn(xi.dim(), |a, b| (xi.get(a, b) + jxi.get(a, b)) * half()))
}

/// `xi - xi^(1,1)`.
pub fn anti_part<T: Scalar>(xi: &TwoForm<T>, j: &DMatrix<T>) -> Result<TwoForm<T>, FiberError> {
    let p = project_11(xi, j)?;
    Ok(xi.sub(&p))
}

/// Nijenhuis tensor `[JX,JY] - J[JX,Y] - J[X,JY] - [X,Y]`.
pub fn nijenhuis<T: Scalar, F: FieldElem + From<T>>(
    m: &LieAlgebraModel<T>,
    x: &[F],
    y: &[F],
) -> Result<Vec<F>, FiberError> {
    check_dim(m.dim(), x.len())?;
    check_dim(m.dim(), y.len())?;
    let jx = m.apply_j(x);
    let jy = m.apply_j(y);
    let a = m.bracket(&jx, &jy);
    let b = m.apply_j(&m.bracket(&jx, y));
    let c = m.apply_j(&m.bracket(x, &jy));
    let d = m.bracket(x, y);
    Ok((0..m.dim())
        .map(|i| a[i].clone() - b[i].clone() - c[i].clone() - d[i].clone())
        .collect())
}

/// `N(v_a, v_b)` for all basis pairs, as `table[g][a][b]`.
pub fn nijenhuis_table<T: Scalar>(m: &LieAlgebraModel<T>) -> Vec<T> {
    let d = m.dim();
    let mut out = vec![T::zero(); d * d * d];
    for a in 0..d {
        for b in 0..d {
            let n = nijenhuis(m, &unit::<T>(d, a), &unit::<T>(d, b)).expect("dimensions match");
            for (g, v) in n.into_iter().enumerate() {
                out[(g * d + a) * d + b] = v;
            }
        }
    }
    out
}

/// Vector field `V(X, Y)` with `(dJd phi)(X, Y) - (dJd phi)(JX, JY) = V(phi)`
/// for left-invariant `X`, `Y`, computed from brackets alone:
/// `V = -[X,JY] - [JX,Y] + J[X,Y] - J[JX,JY]`. It equals `-J N(X, Y)`.
pub fn djd_obstruction<T: Scalar>(m: &LieAlgebraModel<T>, x: &[T], y: &[T]) -> Vec<T> {
    let jx = m.apply_j(x);
    let jy = m.apply_j(y);
    let a = m.bracket(x, &jy);
    let b = m.bracket(&jx, y);
    let c = m.apply_j(&m.bracket(x, y));
    let e = m.apply_j(&m.bracket(&jx, &jy));
    (0..m.dim())
        .map(|i| -a[i].clone() - b[i].clone() + c[i].clone() - e[i].clone())
        .collect()
}

/// A `(1,0)` frame adapted to `J`, with its dual coframe.
#[derive(Clone, Debug)]
pub struct ComplexFrame<T> {
    /// `2n x n`; column `k` is `e_k` on the real basis.
    e: CMat<T>,
    /// `2n x 2n`; rows `0..n` are `theta^k`, rows `n..2n` are their conjugates.
    coframe: CMat<T>,
    adapted: Vec<Vec<T>>,
}

impl<T: Scalar> ComplexFrame<T> {
    pub fn n(&self) -> usize {
        self.e.ncols()
    }

    pub fn dim(&self) -> usize {
        self.e.nrows()
    }

    pub fn frame_matrix(&self) -> &CMat<T> {
        &self.e
    }

    pub fn coframe_matrix(&self) -> &CMat<T> {
        &self.coframe
    }

    /// The real vectors `u_k` with `e_k = (u_k - i J u_k) / 2`.
    pub fn adapted_basis(&self) -> &[Vec<T>] {
        &self.adapted
    }

    pub fn e(&self, k: usize) -> Vec<Complex<T>> {
        self.e.column(k).iter().cloned().collect()
    }

    pub fn e_bar(&self, k: usize) -> Vec<Complex<T>> {
        self.e.column(k).iter().map(|z| z.conj()).collect()
    }

    /// Basis vector `E_p` of the complexified space: `e_p` for `p < n`,
    /// `conj(e_{p-n})` otherwise.
    pub fn basis(&self, p: usize) -> Vec<Complex<T>> {
        if p < self.n() {
            self.e(p)
        } else {
            self.e_bar(p - self.n())
        }
    }

    /// Coefficients of `x` on `(e_1..e_n, conj e_1..conj e_n)`.
    pub fn decompose(&self, x: &[Complex<T>]) -> Vec<Complex<T>> {
        let v = DVector::from_column_slice(x);
        (&self.coframe * v).iter().cloned().collect()
    }

    /// Inverse of [`Self::decompose`].
    pub fn compose(&self, coefs: &[Complex<T>]) -> Vec<Complex<T>> {
        let n = self.n();
        let mut out = vec![Complex::new(T::zero(), T::zero()); self.dim()];
        for k in 0..n {
            for (r, o) in out.iter_mut().enumerate() {
                *o += self.e[(r, k)].clone() * coefs[k].clone() + self.e[(r, k)].conj() * coefs[n + k].clone();
            }
        }
        out
    }

    pub fn theta(&self, k: usize, x: &[Complex<T>]) -> Complex<T> {
        (0..self.dim()).fold(Complex::new(T::zero(), T::zero()), |acc, r| acc + self.coframe[(k, r)].clone() * x[r].clone())
    }

    pub fn part_10(&self, x: &[Complex<T>]) -> Vec<Complex<T>> {
        let mut c = self.decompose(x);
        let n = self.n();
        for z in c.iter_mut().skip(n) {
            *z = Complex::new(T::zero(), T::zero());
        }
        self.compose(&c)
    }

    pub fn part_01(&self, x: &[Complex<T>]) -> Vec<Complex<T>> {
        let mut c = self.decompose(x);
        for z in c.iter_mut().take(self.n()) {
            *z = Complex::new(T::zero(), T::zero());
        }
        self.compose(&c)
    }

    /// Assembles `1/2 a_kl th^k^th^l + b_kl th^k^thbar^l + 1/2 c_kl thbar^k^thbar^l`
    /// as a complex 2-form on the real basis.
    pub fn assemble_form(&self, a20: &CMat<T>, b11: &CMat<T>, c02: &CMat<T>) -> TwoForm<Complex<T>> {
        let n = self.n();
        let d = self.dim();
        let th = |k: usize, r: usize| self.coframe[(k, r)].clone();
        let thb = |k: usize, r: usize| self.coframe[(n + k, r)].clone();
        let h: Complex<T> = half();
        TwoForm::from_fn(d, |x, y| {
            let mut acc = Complex::new(T::zero(), T::zero());
            for k in 0..n {
                for l in 0..n {
                    let w20 = th(k, x) * th(l, y) - th(k, y) * th(l, x);
                    let w11 = th(k, x) * thb(l, y) - th(k, y) * thb(l, x);
                    let w02 = thb(k, x) * thb(l, y) - thb(k, y) * thb(l, x);
                    acc += h.clone() * a20[(k, l)].clone() * w20
                        + b11[(k, l)].clone() * w11
                        + h.clone() * c02[(k, l)].clone() * w02;
                }
            }
            acc
        })
    }

    /// Values of a real 2-form on frame pairs: `(xi(e_k,e_l), xi(e_k,ebar_l), xi(ebar_k,ebar_l))`.
    pub fn frame_components(&self, xi: &TwoForm<T>) -> (CMat<T>, CMat<T>, CMat<T>) {
        let n = self.n();
        let lifted = xi.lift();
        let e: Vec<_> = (0..n).map(|k| self.e(k)).collect();
        let eb: Vec<_> = (0..n).map(|k| self.e_bar(k)).collect();
        (
            CMat::from_fn(n, n, |k, l| lifted.eval(&e[k], &e[l])),
            CMat::from_fn(n, n, |k, l| lifted.eval(&e[k], &eb[l])),
            CMat::from_fn(n, n, |k, l| lifted.eval(&eb[k], &eb[l])),
        )
    }
}

fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    x.iter().zip(y).fold(T::zero(), |acc, (a, b)| acc + a.clone() * b.clone())
}

/// Removes the components of `w` along the mutually orthogonal `basis`.
fn orthogonal_residual<T: Scalar>(basis: &[Vec<T>], w: &[T]) -> Vec<T> {
    let mut r = w.to_vec();
    for q in basis {
        let c = dot(&r, q) / dot(q, q);
        r = axpy(&r, q, -c);
    }
    r
}

/// Greedy adapted frame: `u_1` is the first basis vector; each later `u_k`
/// is the lowest-index basis vector outside `span{u_j, J u_j}`, orthogonalized
/// against that span. `e_k = (u_k - i J u_k) / 2`.
pub fn build_complex_frame<T: Scalar>(j: &DMatrix<T>) -> Result<ComplexFrame<T>, FiberError> {
    let d = j.nrows();
    check_dim(d, j.ncols())?;
    if d == 0 || !d.is_multiple_of(2) {
        return Err(FiberError::OddDimension(d));
    }
    let jj = j * j + DMatrix::<T>::identity(d, d);
    let defect = linalg::max_magnitude(&jj);
    let tol = if T::is_exact() { 0.0 } else { STRUCTURE_TOL * linalg::max_magnitude(j).max(1.0).powi(2) };
    if defect > tol {
        return Err(FiberError::NotComplexStructure(defect));
    }

    let n = d / 2;
    let mut span: Vec<Vec<T>> = Vec::with_capacity(d);
    let mut adapted = Vec::with_capacity(n);
    let rank_tol = if T::is_exact() { 0.0 } else { 1e-20 };
    for _ in 0..n {
        let u = (0..d)
            .map(|s| orthogonal_residual(&span, &unit::<T>(d, s)))
            .find(|r| dot(r, r).to_f64_lossy() > rank_tol && !dot(r, r).is_zero())
            .ok_or(FiberError::SingularFrame)?;
        span.push(u.clone());
        let ju = mat_vec::<T, T>(j, &u);
        let r = orthogonal_residual(&span, &ju);
        if dot(&r, &r).is_zero() {
            return Err(FiberError::SingularFrame);
        }
        span.push(r);
        adapted.push(u);
    }

    let i = imag_unit::<T>();
    let h = half::<Complex<T>>();
    let e = CMat::from_fn(d, n, |r, k| {
        let u = cplx(adapted[k][r].clone());
        let ju = cplx(mat_vec::<T, T>(j, &adapted[k])[r].clone());
        h.clone() * (u - i.clone() * ju)
    });
    let full = CMat::from_fn(d, d, |r, c| if c < n { e[(r, c)].clone() } else { e[(r, c - n)].conj() });
    let coframe = linalg::inverse(&full).ok_or(FiberError::SingularFrame)?;
    Ok(ComplexFrame { e, coframe, adapted })
}

/// Bracket coefficients of a frame:
/// `[e_i,e_j] = C^k_ij e_k - conj(N^k_ij) ebar_k`,
/// `[e_i,ebar_j] = Cm^k_ij e_k + Cmb^k_ij ebar_k`,
/// `[ebar_i,ebar_j] = -N^k_ij e_k + conj(C^k_ij) ebar_k`.
#[derive(Clone, Debug)]
pub struct StructureCoefficients<T> {
    pub c: Tensor3<Complex<T>>,
    pub nbar: Tensor3<Complex<T>>,
    pub cmix: Tensor3<Complex<T>>,
    pub cmix_bar: Tensor3<Complex<T>>,
}

impl<T: Scalar> StructureCoefficients<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            c: Tensor3::zeros(n),
            nbar: Tensor3::zeros(n),
            cmix: Tensor3::zeros(n),
            cmix_bar: Tensor3::zeros(n),
        }
    }

    pub fn n(&self) -> usize {
        self.c.size()
    }

    /// Bracket of two complex vectors given by their frame coefficients
    /// (length `2n`, `e` block first), returned the same way.
    pub fn frame_bracket(&self, a: &[Complex<T>], b: &[Complex<T>]) -> Vec<Complex<T>> {
        let n = self.n();
        let zero = Complex::new(T::zero(), T::zero());
        let mut out = vec![zero.clone(); 2 * n];
        for p in 0..2 * n {
            if a[p].is_zero() {
                continue;
            }
            for q in 0..2 * n {
                if b[q].is_zero() {
                    continue;
                }
                let w = a[p].clone() * b[q].clone();
                for k in 0..n {
                    let (hol, anti) = self.basis_bracket(p, q, k);
                    out[k] += w.clone() * hol;
                    out[n + k] += w.clone() * anti;
                }
            }
        }
        out
    }

    /// `(e_k, ebar_k)` coefficients of `[E_p, E_q]`.
    fn basis_bracket(&self, p: usize, q: usize, k: usize) -> (Complex<T>, Complex<T>) {
        let n = self.n();
        match (p < n, q < n) {
            (true, true) => (self.c.get(k, p, q).clone(), -self.nbar.get(k, p, q).conj()),
            (true, false) => (self.cmix.get(k, p, q - n).clone(), self.cmix_bar.get(k, p, q - n).clone()),
            (false, true) => (-self.cmix.get(k, q, p - n).clone(), -self.cmix_bar.get(k, q, p - n).clone()),
            (false, false) => (-self.nbar.get(k, p - n, q - n).clone(), self.c.get(k, p - n, q - n).conj()),
        }
    }

    /// `C^{qbar}_{l qbar}`, summed over `q`.
    pub fn trace_mix_bar(&self, l: usize) -> Complex<T> {
        (0..self.n()).fold(Complex::new(T::zero(), T::zero()), |acc, q| acc + self.cmix_bar.get(q, l, q).clone())
    }

    /// `C^i_{lbar i}`, summed over `i`, where `[ebar_l, e_i] = -[e_i, ebar_l]`.
    pub fn trace_bar_mix(&self, l: usize) -> Complex<T> {
        (0..self.n()).fold(Complex::new(T::zero(), T::zero()), |acc, i| acc - self.cmix.get(i, i, l).clone())
    }

    pub fn is_integrable(&self, tol: f64) -> bool {
        self.nbar.max_magnitude() <= tol
    }
}

/// Reads off the frame bracket coefficients of `m` in the frame `fr`.
pub fn extract_structure_coefficients<T: Scalar>(
    m: &LieAlgebraModel<T>,
    fr: &ComplexFrame<T>,
) -> Result<StructureCoefficients<T>, FiberError> {
    check_dim(m.dim(), fr.dim())?;
    let n = fr.n();
    let mut sc = StructureCoefficients::zeros(n);
    let e: Vec<_> = (0..n).map(|k| fr.e(k)).collect();
    let eb: Vec<_> = (0..n).map(|k| fr.e_bar(k)).collect();
    for i in 0..n {
        for j in 0..n {
            let hol = fr.decompose(&m.bracket(&e[i], &e[j]));
            let mix = fr.decompose(&m.bracket(&e[i], &eb[j]));
            for k in 0..n {
                sc.c.set(k, i, j, hol[k].clone());
                sc.nbar.set(k, i, j, -hol[n + k].conj());
                sc.cmix.set(k, i, j, mix[k].clone());
                sc.cmix_bar.set(k, i, j, mix[n + k].clone());
            }
        }
    }
    Ok(sc)
}

/// Rebuilds every real bracket `[v_a, v_b]` from the frame coefficients and
/// returns the worst deviation from the model's structure constants
/// (including any imaginary part).
pub fn bracket_reconstruction_error<T: Scalar>(
    m: &LieAlgebraModel<T>,
    fr: &ComplexFrame<T>,
    sc: &StructureCoefficients<T>,
) -> f64 {
    let d = m.dim();
    let coords: Vec<_> = (0..d).map(|a| fr.decompose(&unit::<Complex<T>>(d, a))).collect();
    let mut worst = 0.0f64;
    for a in 0..d {
        for b in 0..d {
            let v = fr.compose(&sc.frame_bracket(&coords[a], &coords[b]));
            for (g, z) in v.iter().enumerate() {
                let dev = z.clone() - cplx(m.structure_constant(g, a, b).clone());
                worst = worst.max(dev.magnitude());
            }
        }
    }
    worst
}

/// Values of `d theta^i` on frame pairs:
/// `d20[i][k][l] = dth^i(e_k, e_l) = -C^i_kl`,
/// `d11[i][k][l] = dth^i(e_k, ebar_l) = -Cm^i_kl`,
/// `d02[i][k][l] = dth^i(ebar_k, ebar_l) = N^i_kl`,
/// so that `dth^i = 1/2 d20 th^th + d11 th^thbar + 1/2 d02 thbar^thbar`.
#[derive(Clone, Debug)]
pub struct DThetaTable<T> {
    pub d20: Tensor3<Complex<T>>,
    pub d11: Tensor3<Complex<T>>,
    pub d02: Tensor3<Complex<T>>,
}

pub fn dtheta_coefficients<T: Scalar>(sc: &StructureCoefficients<T>) -> DThetaTable<T> {
    let n = sc.n();
    DThetaTable {
        d20: Tensor3::from_fn(n, |i, k, l| -sc.c.get(i, k, l).clone()),
        d11: Tensor3::from_fn(n, |i, k, l| -sc.cmix.get(i, k, l).clone()),
        d02: Tensor3::from_fn(n, |i, k, l| sc.nbar.get(i, k, l).clone()),
    }
}

/// `g_{i jbar} = -i omega(e_i, ebar_j)` for a constant form.
pub fn hermitian_metric<T: Scalar>(fr: &ComplexFrame<T>, omega: &TwoForm<T>) -> CMat<T> {
    let (_, b11, _) = fr.frame_components(omega);
    let i = imag_unit::<T>();
    b11.map(|z| -i.clone() * z)
}

/// Real 2-form `i g_{k lbar} th^k ^ thbar^l` for a Hermitian matrix `g`.
pub fn form_from_hermitian<T: Scalar>(fr: &ComplexFrame<T>, g: &CMat<T>) -> (TwoForm<T>, f64) {
    let n = fr.n();
    let z = CMat::zeros(n, n);
    let i = imag_unit::<T>();
    fr.assemble_form(&z, &g.map(|x| i.clone() * x), &z).real_part()
}

/// Smallest eigenvalue of the metric `omega(X, JY)`.
pub fn min_metric_eigenvalue<T: Real>(omega: &TwoForm<T>, j: &DMatrix<T>) -> T {
    let g = omega.matrix() * j;
    linalg::symmetric_eigen(&g).0[0]
}
