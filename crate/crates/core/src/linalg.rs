//! Small dense linear algebra on top of `nalgebra` storage.
//!
//! nalgebra's decompositions require `ComplexField`; the routines here only
//! need field arithmetic so they also run over exact rationals.

use nalgebra::DMatrix;
use num_complex::Complex;

use crate::scalar::{FieldElem, Real, Scalar};

pub type CMat<T> = DMatrix<Complex<T>>;

fn scale<F: FieldElem>(a: &DMatrix<F>) -> f64 {
    a.iter().map(FieldElem::magnitude).fold(0.0, f64::max).max(1.0)
}

/// Solves `a x = b` by Gauss-Jordan elimination with partial pivoting.
/// Returns `None` if `a` is singular.
pub fn solve<F: FieldElem>(a: &DMatrix<F>, b: &DMatrix<F>) -> Option<DMatrix<F>> {
    let n = a.nrows();
    assert_eq!(a.ncols(), n, "solve: matrix must be square");
    assert_eq!(b.nrows(), n, "solve: right-hand side has wrong height");
    let m = b.ncols();
    let tol = F::SINGULAR_TOL * scale(a);
    let mut lhs = a.clone();
    let mut rhs = b.clone();
    for col in 0..n {
        let (piv, mag) = (col..n)
            .map(|r| (r, lhs[(r, col)].magnitude()))
            .fold((col, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if lhs[(piv, col)].is_zero() || mag <= tol {
            return None;
        }
        if piv != col {
            lhs.swap_rows(piv, col);
            rhs.swap_rows(piv, col);
        }
        let inv = F::one() / lhs[(col, col)].clone();
        for c in col..n {
            lhs[(col, c)] = lhs[(col, c)].clone() * inv.clone();
        }
        for c in 0..m {
            rhs[(col, c)] = rhs[(col, c)].clone() * inv.clone();
        }
        for r in 0..n {
            if r == col || lhs[(r, col)].is_zero() {
                continue;
            }
            let factor = lhs[(r, col)].clone();
            for c in col..n {
                let v = lhs[(col, c)].clone() * factor.clone();
                lhs[(r, c)] -= v;
            }
            for c in 0..m {
                let v = rhs[(col, c)].clone() * factor.clone();
                rhs[(r, c)] -= v;
            }
        }
    }
    Some(rhs)
}

pub fn inverse<F: FieldElem>(a: &DMatrix<F>) -> Option<DMatrix<F>> {
    solve(a, &DMatrix::identity(a.nrows(), a.nrows()))
}

pub fn determinant<F: FieldElem>(a: &DMatrix<F>) -> F {
    let n = a.nrows();
    let mut m = a.clone();
    let mut det = F::one();
    for col in 0..n {
        let piv = (col..n).fold(col, |best, r| {
            if m[(r, col)].magnitude() > m[(best, col)].magnitude() {
                r
            } else {
                best
            }
        });
        if m[(piv, col)].is_zero() {
            return F::zero();
        }
        if piv != col {
            m.swap_rows(piv, col);
            det = -det;
        }
        let p = m[(col, col)].clone();
        det *= p.clone();
        for r in col + 1..n {
            let factor = m[(r, col)].clone() / p.clone();
            for c in col..n {
                let v = m[(col, c)].clone() * factor.clone();
                m[(r, c)] -= v;
            }
        }
    }
    det
}

pub fn trace<F: FieldElem>(a: &DMatrix<F>) -> F {
    (0..a.nrows()).fold(F::zero(), |acc, i| acc + a[(i, i)].clone())
}

/// Largest entry magnitude.
pub fn max_magnitude<F: FieldElem>(a: &DMatrix<F>) -> f64 {
    a.iter().map(FieldElem::magnitude).fold(0.0, f64::max)
}

pub fn conj_transpose<T: Scalar>(a: &CMat<T>) -> CMat<T> {
    DMatrix::from_fn(a.ncols(), a.nrows(), |i, j| a[(j, i)].conj())
}

pub fn lift<T: Scalar>(a: &DMatrix<T>) -> CMat<T> {
    a.map(|x| Complex::new(x, T::zero()))
}

/// Hermitian residual `max |a - a^*|`.
pub fn hermitian_defect<T: Scalar>(a: &CMat<T>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            worst = worst.max((a[(i, j)].clone() - a[(j, i)].conj()).magnitude());
        }
    }
    worst
}

/// Positive definiteness of a Hermitian matrix by an LDL* sweep: every pivot
/// must be real and positive. Uses only field operations.
pub fn hermitian_positive<T: Scalar>(a: &CMat<T>) -> bool {
    let n = a.nrows();
    let mut m = a.clone();
    for k in 0..n {
        let p = m[(k, k)].re.clone();
        if p <= T::zero() {
            return false;
        }
        for r in k + 1..n {
            let factor = m[(r, k)].clone() / m[(k, k)].clone();
            for c in k..n {
                let v = factor.clone() * m[(k, c)].clone();
                m[(r, c)] -= v;
            }
        }
    }
    true
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues ascending.
pub fn symmetric_eigen<T: Real>(a: &DMatrix<T>) -> (Vec<T>, DMatrix<T>) {
    let sym = (a + a.transpose()) * nalgebra::convert::<f64, T>(0.5);
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..a.nrows()).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[i]
            .partial_cmp(&eig.eigenvalues[j])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(a.nrows(), a.nrows(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues<T: Real>(a: &CMat<T>) -> Vec<T> {
    let n = a.nrows();
    if n == 1 {
        return vec![a[(0, 0)].re];
    }
    if n == 2 {
        let (p, q) = (a[(0, 0)].re, a[(1, 1)].re);
        let b = a[(0, 1)];
        let two = T::one() + T::one();
        let mean = (p + q) / two;
        let half_gap = (((p - q) / two).powi(2) + b.norm_sqr()).sqrt();
        return vec![mean - half_gap, mean + half_gap];
    }
    // Real embedding [[A, -B], [B, A]] doubles every eigenvalue.
    let emb = DMatrix::from_fn(2 * n, 2 * n, |r, c| {
        let z = a[(r % n, c % n)];
        match (r < n, c < n) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    });
    let (vals, _) = symmetric_eigen(&emb);
    vals.into_iter().step_by(2).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Rational64;

    #[test]
    fn rational_inverse_is_exact() {
        let r = |n: i64, d: i64| Rational64::new(n, d);
        let a = DMatrix::from_row_slice(3, 3, &[r(2, 1), r(1, 3), r(0, 1), r(1, 1), r(1, 1), r(1, 2), r(0, 1), r(-1, 5), r(3, 1)]);
        let inv = inverse(&a).unwrap();
        assert_eq!(&a * &inv, DMatrix::identity(3, 3));
    }

    #[test]
    fn singular_matrix_detected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(inverse(&a).is_none());
        assert_eq!(determinant(&a), 0.0);
    }

    #[test]
    fn determinant_with_pivoting() {
        let a = DMatrix::from_row_slice(3, 3, &[0.0, 2.0, 1.0, 1.0, 0.0, 0.0, 3.0, 1.0, 4.0]);
        // expand along row 2
        assert!((determinant(&a) + 7.0f64).abs() < 1e-14);
    }

    #[test]
    fn hermitian_helpers() {
        let a = DMatrix::from_row_slice(
            2,
            2,
            &[Complex::new(2.0, 0.0), Complex::new(0.5, 1.0), Complex::new(0.5, -1.0), Complex::new(3.0, 0.0)],
        );
        assert!(hermitian_positive(&a));
        let ev = hermitian_eigenvalues(&a);
        let disc: f64 = (0.25f64 + 1.25).sqrt();
        assert!((ev[0] - (2.5 - disc)).abs() < 1e-14);
        let b = a.clone() - CMat::<f64>::identity(2, 2) * Complex::new(3.0, 0.0);
        assert!(!hermitian_positive(&b));
    }
}
