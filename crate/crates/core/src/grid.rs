//! Periodic grids on the flat torus `R^{2n} / Z^{2n}` and second-order
//! central finite differences.
//!
//! Axes are ordered `(x_1, y_1, x_2, y_2, ...)` with `z_j = x_j + i y_j`,
//! and point `(c_0, c_1, ...)` has flat index `sum_a c_a N^a`.

use nalgebra::DMatrix;
use num_complex::Complex;
use rayon::prelude::*;
use thiserror::Error;

use crate::chern::{DerivationBackend, MetricField, RealJet};
use crate::linalg::CMat;
use crate::scalar::Real;

/// Grid Hermitian matrix fields share the plane layout of [`MetricField`].
pub type GridHermitian<T> = MetricField<T>;

/// Point counts above which per-point loops run on the rayon pool.
pub const PARALLEL_THRESHOLD: usize = 8192;

/// Grids up to this many points keep a table of axis neighbours.
const NEIGHBOR_TABLE_LIMIT: usize = 1 << 22;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("complex dimension {0} is not supported (expected 1 or 2)")]
    Dimension(usize),
    #[error("grid size {0} is below the minimum of 8")]
    TooCoarse(usize),
    #[error("field has {found} points, grid has {expected}")]
    Length { expected: usize, found: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TorusGrid<T> {
    n: usize,
    size: usize,
    h: T,
    strides: Vec<usize>,
    points: usize,
    /// `[(idx * axes + a) * 2 + {0: +1, 1: -1}]`, empty on very large grids.
    neighbors: Vec<u32>,
}

impl<T: Real> TorusGrid<T> {
    pub fn new(n: usize, size: usize) -> Result<Self, GridError> {
        if !(1..=2).contains(&n) {
            return Err(GridError::Dimension(n));
        }
        if size < 8 {
            return Err(GridError::TooCoarse(size));
        }
        let strides: Vec<usize> = (0..2 * n).map(|a| size.pow(a as u32)).collect();
        let points = size.pow(2 * n as u32);
        let mut grid = Self { n, size, h: T::one() / T::lit(size as f64), strides, points, neighbors: Vec::new() };
        if points <= NEIGHBOR_TABLE_LIMIT {
            let axes = 2 * n;
            let mut table = Vec::with_capacity(points * axes * 2);
            for idx in 0..points {
                for a in 0..axes {
                    table.push(grid.wrap(idx, a, 1) as u32);
                    table.push(grid.wrap(idx, a, -1) as u32);
                }
            }
            grid.neighbors = table;
        }
        Ok(grid)
    }

    fn wrap(&self, idx: usize, a: usize, step: isize) -> usize {
        let s = self.strides[a];
        let c = (idx / s) % self.size;
        let nc = (c as isize + step).rem_euclid(self.size as isize) as usize;
        idx + nc * s - c * s
    }

    pub fn complex_dim(&self) -> usize {
        self.n
    }

    pub fn axes(&self) -> usize {
        2 * self.n
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn spacing(&self) -> T {
        self.h
    }

    pub fn num_points(&self) -> usize {
        self.points
    }

    pub fn check_len(&self, len: usize) -> Result<(), GridError> {
        if len == self.points {
            Ok(())
        } else {
            Err(GridError::Length { expected: self.points, found: len })
        }
    }

    /// Index shifted by `step` along axis `a`, wrapping periodically.
    #[inline]
    pub fn shift(&self, idx: usize, a: usize, step: isize) -> usize {
        match step {
            1 | -1 if !self.neighbors.is_empty() => {
                self.neighbors[(idx * 2 * self.n + a) * 2 + usize::from(step < 0)] as usize
            }
            _ => self.wrap(idx, a, step),
        }
    }

    pub fn coords(&self, idx: usize) -> Vec<T> {
        (0..self.axes())
            .map(|a| T::lit(((idx / self.strides[a]) % self.size) as f64) * self.h)
            .collect()
    }

    /// Samples `f` at every grid point.
    pub fn sample(&self, f: impl Fn(&[T]) -> T + Sync + Send) -> Vec<T> {
        self.map_points(|idx| f(&self.coords(idx)))
    }

    /// Evaluates `f` at every index, in parallel on large grids.
    pub fn map_points<U: Send>(&self, f: impl Fn(usize) -> U + Sync + Send) -> Vec<U> {
        if self.points >= PARALLEL_THRESHOLD {
            (0..self.points).into_par_iter().map(f).collect()
        } else {
            (0..self.points).map(f).collect()
        }
    }

    /// Central first difference along axis `a`.
    #[inline]
    pub fn d1(&self, f: &[T], idx: usize, a: usize) -> T {
        (f[self.shift(idx, a, 1)] - f[self.shift(idx, a, -1)]) / (self.h + self.h)
    }

    /// Second difference along axes `a`, `b`: the compact 3-point stencil
    /// when `a == b`, the 4-point cross stencil otherwise.
    #[inline]
    pub fn d2(&self, f: &[T], idx: usize, a: usize, b: usize) -> T {
        let h2 = self.h * self.h;
        if a == b {
            (f[self.shift(idx, a, 1)] - f[idx] - f[idx] + f[self.shift(idx, a, -1)]) / h2
        } else {
            let p = self.shift(idx, a, 1);
            let m = self.shift(idx, a, -1);
            let four = T::lit(4.0);
            (f[self.shift(p, b, 1)] - f[self.shift(p, b, -1)] - f[self.shift(m, b, 1)] + f[self.shift(m, b, -1)])
                / (four * h2)
        }
    }

    /// `e_i ebar_j f = (1/4)[(f_{x_i x_j} + f_{y_i y_j}) + i (f_{x_i y_j} - f_{y_i x_j})]`.
    #[inline]
    pub fn ddbar_entry(&self, f: &[T], idx: usize, i: usize, j: usize) -> Complex<T> {
        let q = T::lit(0.25);
        let (xi, yi, xj, yj) = (2 * i, 2 * i + 1, 2 * j, 2 * j + 1);
        let re = self.d2(f, idx, xi, xj) + self.d2(f, idx, yi, yj);
        let im = if i == j { T::zero() } else { self.d2(f, idx, xi, yj) - self.d2(f, idx, yi, xj) };
        Complex::new(q * re, q * im)
    }

    /// Mean over the grid, summed in index order.
    pub fn mean(&self, f: &[T]) -> T {
        f.iter().fold(T::zero(), |acc, &x| acc + x) / T::lit(self.points as f64)
    }
}

/// Complex Hessian `phi_{z_i zbar_j}` at every point. Hermitian by
/// construction; diagonal entries sum to zero over the grid.
pub fn ddbar_fd<T: Real>(grid: &TorusGrid<T>, phi: &[T]) -> Result<GridHermitian<T>, GridError> {
    grid.check_len(phi.len())?;
    let n = grid.complex_dim();
    let mut re = vec![Vec::new(); n * n];
    let mut im = vec![Vec::new(); n * n];
    for i in 0..n {
        for j in i..n {
            let vals: Vec<Complex<T>> = grid.map_points(|idx| grid.ddbar_entry(phi, idx, i, j));
            re[i * n + j] = vals.iter().map(|z| z.re).collect();
            im[i * n + j] = vals.iter().map(|z| z.im).collect();
            if i != j {
                re[j * n + i] = re[i * n + j].clone();
                im[j * n + i] = vals.iter().map(|z| -z.im).collect();
            }
        }
    }
    Ok(MetricField::from_planes(n, re, im))
}

/// `g + h` pointwise.
pub fn add_fields<T: Real>(g: &GridHermitian<T>, h: &GridHermitian<T>) -> GridHermitian<T> {
    let n = g.n();
    let mut re = Vec::with_capacity(n * n);
    let mut im = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let (gr, gi) = g.entry_planes(i, j);
            let (hr, hi) = h.entry_planes(i, j);
            re.push(gr.iter().zip(hr).map(|(a, b)| *a + *b).collect());
            im.push(gi.iter().zip(hi).map(|(a, b)| *a + *b).collect());
        }
    }
    MetricField::from_planes(n, re, im)
}

/// `sup |g - h|` over points and entries.
pub fn sup_distance<T: Real>(g: &GridHermitian<T>, h: &GridHermitian<T>) -> f64 {
    let n = g.n();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let (gr, gi) = g.entry_planes(i, j);
            let (hr, hi) = h.entry_planes(i, j);
            for p in 0..gr.len() {
                let d = (gr[p] - hr[p]).to_f64_lossy().abs().max((gi[p] - hi[p]).to_f64_lossy().abs());
                worst = worst.max(d);
            }
        }
    }
    worst
}

/// `g_{i jbar} = factor * delta_ij` at every point.
pub fn conformal_field<T: Real>(n: usize, factor: &[T]) -> GridHermitian<T> {
    let mut re = vec![vec![T::zero(); factor.len()]; n * n];
    let im = vec![vec![T::zero(); factor.len()]; n * n];
    for i in 0..n {
        re[i * n + i] = factor.to_vec();
    }
    MetricField::from_planes(n, re, im)
}

/// Determinant per point (closed form for `n <= 2`).
pub fn determinants<T: Real>(g: &GridHermitian<T>) -> Vec<T> {
    match g.n() {
        1 => g.entry_planes(0, 0).0.to_vec(),
        2 => {
            let (a, _) = g.entry_planes(0, 0);
            let (d, _) = g.entry_planes(1, 1);
            let (br, bi) = g.entry_planes(0, 1);
            (0..a.len()).map(|p| a[p] * d[p] - br[p] * br[p] - bi[p] * bi[p]).collect()
        }
        _ => g.determinants(),
    }
}

/// Smallest eigenvalue per point (closed form for `n <= 2`).
pub fn min_eigenvalues<T: Real>(g: &GridHermitian<T>) -> Vec<T> {
    match g.n() {
        1 => g.entry_planes(0, 0).0.to_vec(),
        2 => {
            let (a, _) = g.entry_planes(0, 0);
            let (d, _) = g.entry_planes(1, 1);
            let (br, bi) = g.entry_planes(0, 1);
            let half = T::lit(0.5);
            (0..a.len())
                .map(|p| {
                    let m = (a[p] + d[p]) * half;
                    let r = ((a[p] - d[p]) * half).powi(2) + br[p] * br[p] + bi[p] * bi[p];
                    m - r.sqrt()
                })
                .collect()
        }
        _ => (0..g.num_points())
            .map(|p| crate::linalg::hermitian_eigenvalues(&g.at(p))[0])
            .collect(),
    }
}

/// Real metric `omega(X, J Y)` on the coordinate vectors `(d/dx_j, d/dy_j)`
/// for the Hermitian matrix `g` in the frame `d/dz_j`.
pub fn real_metric<T: Real>(g: &CMat<T>) -> DMatrix<T> {
    let n = g.nrows();
    let two = T::lit(2.0);
    DMatrix::from_fn(2 * n, 2 * n, |a, b| {
        let z = g[(a / 2, b / 2)];
        match (a % 2, b % 2) {
            (0, 0) | (1, 1) => two * z.re,
            (0, 1) => two * z.im,
            _ => -two * z.im,
        }
    })
}

/// Finite-difference derivations along the coordinate frame `e_j = d/dz_j`.
#[derive(Clone, Debug)]
pub struct GridBackend<T> {
    grid: TorusGrid<T>,
}

impl<T: Real> GridBackend<T> {
    pub fn new(grid: TorusGrid<T>) -> Self {
        Self { grid }
    }

    pub fn grid(&self) -> &TorusGrid<T> {
        &self.grid
    }
}

impl<T: Real> DerivationBackend<T> for GridBackend<T> {
    fn complex_dim(&self) -> usize {
        self.grid.complex_dim()
    }

    fn num_points(&self) -> usize {
        self.grid.num_points()
    }

    fn real_jet(&self, f: &[T], pt: usize) -> RealJet<T> {
        let g = &self.grid;
        let n = g.complex_dim();
        let half = T::lit(0.5);
        let d = (0..n)
            .map(|k| Complex::new(half * g.d1(f, pt, 2 * k), -half * g.d1(f, pt, 2 * k + 1)))
            .collect();
        let ddb = CMat::from_fn(n, n, |k, l| g.ddbar_entry(f, pt, k, l));
        RealJet { d, ddb }
    }

    /// Divergence form `|G|^{-1/2} d_a(|G|^{1/2} G^{ab} d_b phi)` with
    /// midpoint-averaged coefficients on the diagonal terms.
    fn laplace_beltrami(&self, g: &MetricField<T>, phi: &[T]) -> Option<Vec<T>> {
        let grid = &self.grid;
        let m = grid.axes();
        let coef: Vec<(T, DMatrix<T>)> = grid.map_points(|p| {
            let gr = real_metric(&g.at(p));
            let vol = gr.determinant().sqrt();
            let inv = gr.try_inverse().expect("positive metric");
            (vol, inv * vol)
        });
        let two_h = grid.spacing() + grid.spacing();
        let h2 = grid.spacing() * grid.spacing();
        let half = T::lit(0.5);
        Some(grid.map_points(|p| {
            let mut acc = T::zero();
            for a in 0..m {
                let up = grid.shift(p, a, 1);
                let dn = grid.shift(p, a, -1);
                let kp = (coef[p].1[(a, a)] + coef[up].1[(a, a)]) * half;
                let km = (coef[p].1[(a, a)] + coef[dn].1[(a, a)]) * half;
                acc += (kp * (phi[up] - phi[p]) - km * (phi[p] - phi[dn])) / h2;
                for b in (0..m).filter(|&b| b != a) {
                    let fu = coef[up].1[(a, b)] * grid.d1(phi, up, b);
                    let fd = coef[dn].1[(a, b)] * grid.d1(phi, dn, b);
                    acc += (fu - fd) / two_h;
                }
            }
            acc / coef[p].0
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn periodic_shift_wraps() {
        let g = TorusGrid::<f64>::new(2, 8).unwrap();
        assert_eq!(g.shift(0, 0, -1), 7);
        assert_eq!(g.shift(7, 0, 1), 0);
        assert_eq!(g.shift(0, 3, -1), 7 * 512);
        assert_eq!(g.coords(1 + 8 * 2), vec![0.125, 0.25, 0.0, 0.0]);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(matches!(TorusGrid::<f64>::new(3, 8), Err(GridError::Dimension(3))));
        assert!(matches!(TorusGrid::<f64>::new(1, 4), Err(GridError::TooCoarse(4))));
    }

    #[test]
    fn ddbar_of_constant_vanishes() {
        let g = TorusGrid::<f64>::new(2, 8).unwrap();
        let h = ddbar_fd(&g, &vec![3.5; g.num_points()]).unwrap();
        assert_eq!(sup_distance(&h, &conformal_field(2, &vec![0.0; g.num_points()])), 0.0);
    }

    #[test]
    fn ddbar_sine_second_order() {
        let err = |size: usize| {
            let g = TorusGrid::<f64>::new(1, size).unwrap();
            let phi = g.sample(|x| (2.0 * PI * x[0]).sin());
            let h = ddbar_fd(&g, &phi).unwrap();
            let exact = g.sample(|x| -PI * PI * (2.0 * PI * x[0]).sin());
            h.entry_planes(0, 0).0.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        };
        let ratio = err(16) / err(32);
        assert!((3.8..4.2).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn ddbar_off_diagonal_sign() {
        let g = TorusGrid::<f64>::new(2, 16).unwrap();
        let phi = g.sample(|x| (2.0 * PI * x[0]).sin() * (2.0 * PI * x[3]).sin());
        let h = ddbar_fd(&g, &phi).unwrap();
        let p = 0;
        // analytic value i pi^2 cos(2 pi x1) cos(2 pi y2) at the origin;
        // the cross stencil sees sin(2 pi h)^2 / h^2 in place of 4 pi^2
        let z = h.at(p)[(0, 1)];
        let h1 = 1.0 / 16.0;
        let discrete = 0.25 * ((2.0 * PI * h1).sin() / h1).powi(2);
        assert!(z.re.abs() < 1e-12);
        assert!((z.im - discrete).abs() < 1e-10);
        assert!((z.im / (PI * PI) - 1.0).abs() < 0.06);
        assert_eq!(h.at(p)[(1, 0)], z.conj());
    }

    #[test]
    fn diagonal_means_vanish() {
        let g = TorusGrid::<f64>::new(1, 16).unwrap();
        let phi = g.sample(|x| (x[0] * 7.0).sin().exp() + (2.0 * PI * x[1]).cos());
        let h = ddbar_fd(&g, &phi).unwrap();
        assert!(g.mean(h.entry_planes(0, 0).0).abs() < 1e-10);
    }

    #[test]
    fn flat_laplace_beltrami_is_half_euclidean() {
        let g = TorusGrid::<f64>::new(1, 16).unwrap();
        let b = GridBackend::new(g.clone());
        let phi = g.sample(|x| (2.0 * PI * x[0]).sin());
        let lb = b.laplace_beltrami(&conformal_field(1, &vec![1.0; g.num_points()]), &phi).unwrap();
        for p in 0..g.num_points() {
            let expect = 0.5 * (phi[g.shift(p, 0, 1)] - 2.0 * phi[p] + phi[g.shift(p, 0, -1)]) * 256.0;
            assert!((lb[p] - expect).abs() < 1e-10);
        }
    }
}
