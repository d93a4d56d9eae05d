//! Chern connection, torsion and Ricci traces in a `(1,0)` frame.
//!
//! All quantities are computed pointwise from a [`MetricJet`], the metric
//! matrix `g_{i jbar}` and its frame derivatives at one point. Derivatives
//! come from a [`DerivationBackend`]: [`ConstantBackend`] for left-invariant
//! data, or the finite-difference backend in [`crate::grid`].
//!
//! Frames handled here have constant structure coefficients (left-invariant
//! frames, coordinate frames), so derivatives of the coefficients and of
//! their traces vanish and are not evaluated.
//!
//! Index conventions: `Gamma^p_{ik}` is stored at `[p][i][k]`, the inverse
//! metric `g^{lbar p}` is `ginv[(l, p)]`, and the trace coefficients are
//! `A_p = C^{qbar}_{p qbar}` and `B_p = C^i_{pbar i}`.

use nalgebra::DMatrix;
use num_complex::Complex;
use rayon::prelude::*;
use thiserror::Error;

use crate::fiber::{project_11, ComplexFrame, StructureCoefficients, Tensor3, TwoForm};
use crate::linalg::{self, CMat};
use crate::scalar::{cplx, imag_unit, FieldElem, Real, Scalar};

#[derive(Debug, Error)]
pub enum ChernError {
    #[error("metric is singular at point {0}")]
    SingularMetric(usize),
    #[error("metric is not positive definite at point {0}")]
    NotPositive(usize),
    #[error("density is not positive at point {0}")]
    NonPositiveDensity(usize),
    #[error("field has {found} points, backend expects {expected}")]
    PointMismatch { expected: usize, found: usize },
    #[error("backend provides no Riemannian Laplacian")]
    NoLaplaceBeltrami,
}

fn zero<T: Scalar>() -> Complex<T> {
    Complex::new(T::zero(), T::zero())
}

/// First and mixed second frame derivatives of a real field at one point:
/// `d[k] = e_k f` and `ddb[(k, l)] = e_k ebar_l f`.
#[derive(Clone, Debug)]
pub struct RealJet<T> {
    pub d: Vec<Complex<T>>,
    pub ddb: CMat<T>,
}

impl<T: Scalar> RealJet<T> {
    pub fn zeros(n: usize) -> Self {
        Self { d: vec![zero(); n], ddb: CMat::zeros(n, n) }
    }

    pub fn dbar(&self, k: usize) -> Complex<T> {
        self.d[k].conj()
    }
}

/// Source of frame derivatives.
pub trait DerivationBackend<T: Scalar>: Sync {
    fn complex_dim(&self) -> usize;

    fn num_points(&self) -> usize;

    fn real_jet(&self, f: &[T], pt: usize) -> RealJet<T>;

    /// Laplace-Beltrami operator of the Riemannian metric `omega(., J.)`
    /// associated with `g`, applied to `phi`.
    fn laplace_beltrami(&self, _g: &MetricField<T>, _phi: &[T]) -> Option<Vec<T>> {
        None
    }
}

/// Backend for left-invariant data: one point, every derivative zero.
#[derive(Clone, Copy, Debug)]
pub struct ConstantBackend {
    pub n: usize,
}

impl<T: Scalar> DerivationBackend<T> for ConstantBackend {
    fn complex_dim(&self) -> usize {
        self.n
    }

    fn num_points(&self) -> usize {
        1
    }

    fn real_jet(&self, _f: &[T], _pt: usize) -> RealJet<T> {
        RealJet::zeros(self.n)
    }

    fn laplace_beltrami(&self, _g: &MetricField<T>, phi: &[T]) -> Option<Vec<T>> {
        Some(vec![T::zero(); phi.len()])
    }
}

/// A Hermitian matrix field `g_{i jbar}`, stored as real and imaginary
/// planes so each entry can be differentiated as a real field.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricField<T> {
    n: usize,
    points: usize,
    re: Vec<Vec<T>>,
    im: Vec<Vec<T>>,
}

impl<T: Scalar> MetricField<T> {
    pub fn from_fn(n: usize, points: usize, mut f: impl FnMut(usize) -> CMat<T>) -> Self {
        let mut re = vec![Vec::with_capacity(points); n * n];
        let mut im = vec![Vec::with_capacity(points); n * n];
        for pt in 0..points {
            let g = f(pt);
            for i in 0..n {
                for j in 0..n {
                    re[i * n + j].push(g[(i, j)].re.clone());
                    im[i * n + j].push(g[(i, j)].im.clone());
                }
            }
        }
        Self { n, points, re, im }
    }

    pub fn constant(g: CMat<T>) -> Self {
        Self::from_fn(g.nrows(), 1, |_| g.clone())
    }

    /// Builds a field from `n * n` real and imaginary planes, entry `(i, j)`
    /// at position `i * n + j`.
    pub fn from_planes(n: usize, re: Vec<Vec<T>>, im: Vec<Vec<T>>) -> Self {
        assert_eq!(re.len(), n * n);
        assert_eq!(im.len(), n * n);
        let points = re.first().map_or(0, Vec::len);
        Self { n, points, re, im }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_points(&self) -> usize {
        self.points
    }

    pub fn at(&self, pt: usize) -> CMat<T> {
        let n = self.n;
        CMat::from_fn(n, n, |i, j| Complex::new(self.re[i * n + j][pt].clone(), self.im[i * n + j][pt].clone()))
    }

    pub fn entry_planes(&self, i: usize, j: usize) -> (&[T], &[T]) {
        (&self.re[i * self.n + j], &self.im[i * self.n + j])
    }

    /// Scales every point by a real factor field.
    pub fn scaled(&self, factor: &[T]) -> Self {
        let mul = |planes: &Vec<Vec<T>>| {
            planes
                .iter()
                .map(|p| p.iter().zip(factor).map(|(a, b)| a.clone() * b.clone()).collect())
                .collect()
        };
        Self { n: self.n, points: self.points, re: mul(&self.re), im: mul(&self.im) }
    }

    pub fn determinants(&self) -> Vec<T> {
        (0..self.points).map(|pt| linalg::determinant(&self.at(pt)).re).collect()
    }

    /// Largest Hermitian defect over all points.
    pub fn hermitian_defect(&self) -> f64 {
        (0..self.points).map(|pt| linalg::hermitian_defect(&self.at(pt))).fold(0.0, f64::max)
    }

    /// First point where the matrix fails to be positive definite.
    pub fn first_non_positive(&self) -> Option<usize> {
        (0..self.points).find(|&pt| !linalg::hermitian_positive(&self.at(pt)))
    }
}

fn check_points<T: Scalar, B: DerivationBackend<T>>(b: &B, found: usize) -> Result<(), ChernError> {
    if b.num_points() == found {
        Ok(())
    } else {
        Err(ChernError::PointMismatch { expected: b.num_points(), found })
    }
}

/// The metric with its frame derivatives at one point:
/// `d[k] = e_k g`, `db[k] = ebar_k g`, `ddb[k * n + l] = e_k ebar_l g`.
#[derive(Clone, Debug)]
pub struct MetricJet<T> {
    pub g: CMat<T>,
    pub ginv: CMat<T>,
    pub d: Vec<CMat<T>>,
    pub db: Vec<CMat<T>>,
    pub ddb: Vec<CMat<T>>,
}

impl<T: Scalar> MetricJet<T> {
    pub fn at<B: DerivationBackend<T>>(field: &MetricField<T>, backend: &B, pt: usize) -> Result<Self, ChernError> {
        let n = field.n();
        let g = field.at(pt);
        let ginv = linalg::inverse(&g).ok_or(ChernError::SingularMetric(pt))?;
        let mut d = vec![CMat::zeros(n, n); n];
        let mut db = vec![CMat::zeros(n, n); n];
        let mut ddb = vec![CMat::zeros(n, n); n * n];
        let i_unit = imag_unit::<T>();
        for i in 0..n {
            for j in 0..n {
                let (re, im) = field.entry_planes(i, j);
                let jr = backend.real_jet(re, pt);
                let ji = backend.real_jet(im, pt);
                for k in 0..n {
                    d[k][(i, j)] = jr.d[k].clone() + i_unit.clone() * ji.d[k].clone();
                    db[k][(i, j)] = jr.dbar(k) + i_unit.clone() * ji.dbar(k);
                    for l in 0..n {
                        ddb[k * n + l][(i, j)] = jr.ddb[(k, l)].clone() + i_unit.clone() * ji.ddb[(k, l)].clone();
                    }
                }
            }
        }
        Ok(Self { g, ginv, d, db, ddb })
    }

    /// A metric with no derivatives, as seen by [`ConstantBackend`].
    pub fn constant(g: CMat<T>) -> Option<Self> {
        let n = g.nrows();
        let ginv = linalg::inverse(&g)?;
        Some(Self {
            g,
            ginv,
            d: vec![CMat::zeros(n, n); n],
            db: vec![CMat::zeros(n, n); n],
            ddb: vec![CMat::zeros(n, n); n * n],
        })
    }

    pub fn n(&self) -> usize {
        self.g.nrows()
    }

    /// Derivatives of `log det g` via `tr(g^-1 dg)`.
    pub fn log_det(&self) -> LogVolumeJet<T> {
        let n = self.n();
        let d = (0..n).map(|k| linalg::trace(&(&self.ginv * &self.d[k]))).collect();
        let db = (0..n).map(|k| linalg::trace(&(&self.ginv * &self.db[k]))).collect();
        let a: Vec<CMat<T>> = (0..n).map(|k| &self.ginv * &self.d[k]).collect();
        let b: Vec<CMat<T>> = (0..n).map(|l| &self.ginv * &self.db[l]).collect();
        let ddb = CMat::from_fn(n, n, |k, l| {
            linalg::trace(&(&self.ginv * &self.ddb[k * n + l])) - linalg::trace(&(&a[k] * &b[l]))
        });
        LogVolumeJet { d, db, ddb }
    }
}

/// Frame derivatives of the logarithm of a volume density:
/// `d[k] = e_k log V`, `db[k] = ebar_k log V`, `ddb[(k, l)] = e_k ebar_l log V`.
#[derive(Clone, Debug)]
pub struct LogVolumeJet<T> {
    pub d: Vec<Complex<T>>,
    pub db: Vec<Complex<T>>,
    pub ddb: CMat<T>,
}

impl<T: Scalar> LogVolumeJet<T> {
    pub fn zeros(n: usize) -> Self {
        Self { d: vec![zero(); n], db: vec![zero(); n], ddb: CMat::zeros(n, n) }
    }

    /// Quotient rule applied to the jet of a positive density.
    pub fn of_density(value: &T, jet: &RealJet<T>) -> Self {
        let n = jet.d.len();
        let v = cplx(value.clone());
        let d: Vec<_> = jet.d.iter().map(|x| x.clone() / v.clone()).collect();
        let db: Vec<_> = d.iter().map(|x| x.conj()).collect();
        let ddb = CMat::from_fn(n, n, |k, l| jet.ddb[(k, l)].clone() / v.clone() - d[k].clone() * db[l].clone());
        Self { d, db, ddb }
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self {
            d: self.d.iter().zip(&other.d).map(|(a, b)| a.clone() - b.clone()).collect(),
            db: self.db.iter().zip(&other.db).map(|(a, b)| a.clone() - b.clone()).collect(),
            ddb: &self.ddb - &other.ddb,
        }
    }
}

/// `Gamma^p_{ik}` and `Gamma^p_{ibar k}`, both stored `[p][i][k]`.
#[derive(Clone, Debug)]
pub struct Christoffel<T> {
    pub hol: Tensor3<Complex<T>>,
    pub mixed: Tensor3<Complex<T>>,
}

/// `T^p_{ik}` stored `[p][i][k]` and the lowered `T_{ik lbar}` stored `[i][k][l]`.
#[derive(Clone, Debug)]
pub struct Torsion<T> {
    pub upper: Tensor3<Complex<T>>,
    pub lowered: Tensor3<Complex<T>>,
}

impl<T: Scalar> Torsion<T> {
    /// `T^j_{pj}`.
    pub fn trace(&self, p: usize) -> Complex<T> {
        (0..self.upper.size()).fold(zero(), |acc, j| acc + self.upper.get(j, p, j).clone())
    }
}

/// Traces `R_{kl}`, `R_{k lbar}`, `R_{kbar lbar}` of the Chern curvature.
#[derive(Clone, Debug)]
pub struct RicciComponents<T> {
    pub r20: CMat<T>,
    pub r11: CMat<T>,
    pub r02: CMat<T>,
    /// `max |R11 - R11^*|` before symmetrization.
    pub asymmetry: f64,
}

impl<T: Scalar> RicciComponents<T> {
    /// Reality defect `max |R_{kbar lbar} + conj(R_{kl})|`.
    pub fn reality_defect(&self) -> f64 {
        let s = &self.r02 + self.r20.map(|z| z.conj());
        linalg::max_magnitude(&s)
    }

    pub fn antisymmetry_defect(&self) -> f64 {
        linalg::max_magnitude(&(&self.r20 + self.r20.transpose()))
    }
}

pub fn trace_a<T: Scalar>(sc: &StructureCoefficients<T>) -> Vec<Complex<T>> {
    (0..sc.n()).map(|p| sc.trace_mix_bar(p)).collect()
}

pub fn trace_b<T: Scalar>(sc: &StructureCoefficients<T>) -> Vec<Complex<T>> {
    (0..sc.n()).map(|p| sc.trace_bar_mix(p)).collect()
}

/// Chern connection coefficients at one point.
pub fn christoffels_at<T: Scalar>(mj: &MetricJet<T>, sc: &StructureCoefficients<T>) -> Christoffel<T> {
    let n = mj.n();
    let hol = Tensor3::from_fn(n, |p, i, k| {
        let mut acc = zero();
        for l in 0..n {
            let gi = mj.ginv[(l, p)].clone();
            let mut inner = mj.d[i][(k, l)].clone();
            for q in 0..n {
                inner += mj.g[(k, q)].clone() * sc.cmix.get(q, l, i).conj();
            }
            acc += gi * inner;
        }
        acc
    });
    let mixed = Tensor3::from_fn(n, |p, i, k| -sc.cmix.get(p, k, i).clone());
    Christoffel { hol, mixed }
}

pub fn chern_christoffels<T: Scalar, B: DerivationBackend<T>>(
    g: &MetricField<T>,
    sc: &StructureCoefficients<T>,
    backend: &B,
) -> Result<Vec<Christoffel<T>>, ChernError> {
    check_points(backend, g.num_points())?;
    (0..g.num_points())
        .into_par_iter()
        .map(|pt| MetricJet::at(g, backend, pt).map(|mj| christoffels_at(&mj, sc)))
        .collect()
}

pub fn torsion_at<T: Scalar>(mj: &MetricJet<T>, gamma: &Christoffel<T>, sc: &StructureCoefficients<T>) -> Torsion<T> {
    let n = mj.n();
    let upper = Tensor3::from_fn(n, |p, i, k| {
        gamma.hol.get(p, i, k).clone() - gamma.hol.get(p, k, i).clone() - sc.c.get(p, i, k).clone()
    });
    let lowered = Tensor3::from_fn(n, |i, k, l| {
        (0..n).fold(zero(), |acc, p| acc + upper.get(p, i, k).clone() * mj.g[(p, l)].clone())
    });
    Torsion { upper, lowered }
}

/// `T_{ik lbar}` from its expansion in metric derivatives and structure
/// coefficients, without going through the connection.
pub fn lowered_torsion_expansion<T: Scalar>(mj: &MetricJet<T>, sc: &StructureCoefficients<T>) -> Tensor3<Complex<T>> {
    let n = mj.n();
    Tensor3::from_fn(n, |i, k, l| {
        let mut acc = mj.d[i][(k, l)].clone() - mj.d[k][(i, l)].clone();
        for q in 0..n {
            acc += mj.g[(k, q)].clone() * sc.cmix.get(q, l, i).conj();
            acc -= mj.g[(i, q)].clone() * sc.cmix.get(q, l, k).conj();
        }
        for p in 0..n {
            acc -= sc.c.get(p, i, k).clone() * mj.g[(p, l)].clone();
        }
        acc
    })
}

/// Residual of `e_i g_{k lbar} = <nabla_i e_k, ebar_l> + <e_k, nabla_i ebar_l>`
/// and of its conjugate-direction counterpart.
pub fn compatibility_residual<T: Scalar>(mj: &MetricJet<T>, gamma: &Christoffel<T>) -> f64 {
    let n = mj.n();
    let mut worst = 0.0f64;
    for i in 0..n {
        for k in 0..n {
            for l in 0..n {
                let mut hol = zero();
                let mut anti = zero();
                for p in 0..n {
                    hol += gamma.hol.get(p, i, k).clone() * mj.g[(p, l)].clone()
                        + gamma.mixed.get(p, i, l).conj() * mj.g[(k, p)].clone();
                    anti += gamma.mixed.get(p, i, k).clone() * mj.g[(p, l)].clone()
                        + gamma.hol.get(p, i, l).conj() * mj.g[(k, p)].clone();
                }
                worst = worst.max((mj.d[i][(k, l)].clone() - hol).magnitude());
                worst = worst.max((mj.db[i][(k, l)].clone() - anti).magnitude());
            }
        }
    }
    worst
}

/// `(1,1)` torsion `S^i_{j kbar} = -Gamma^i_{kbar j} - C^i_{j kbar}`.
pub fn mixed_torsion_residual<T: Scalar>(gamma: &Christoffel<T>, sc: &StructureCoefficients<T>) -> f64 {
    let n = sc.n();
    let s = Tensor3::from_fn(n, |i, j, k| -gamma.mixed.get(i, k, j).clone() - sc.cmix.get(i, j, k).clone());
    s.max_magnitude()
}

/// Residual of `Gamma^p_{ip} = e_i log det g - C^{qbar}_{i qbar}`.
pub fn gamma_trace_residual<T: Scalar>(mj: &MetricJet<T>, gamma: &Christoffel<T>, sc: &StructureCoefficients<T>) -> f64 {
    let n = mj.n();
    let lv = mj.log_det();
    (0..n)
        .map(|i| {
            let tr = (0..n).fold(zero::<T>(), |acc, p| acc + gamma.hol.get(p, i, p).clone());
            (tr - lv.d[i].clone() + sc.trace_mix_bar(i)).magnitude()
        })
        .fold(0.0, f64::max)
}

/// Coefficients `D_{k i j}` of `dbar omega = (i/2) D_{kij} th^k ^ thbar^i ^ thbar^j`
/// from metric derivatives and structure coefficients.
pub fn dbar_omega_coefficients<T: Scalar>(mj: &MetricJet<T>, sc: &StructureCoefficients<T>) -> Tensor3<Complex<T>> {
    let n = mj.n();
    Tensor3::from_fn(n, |k, i, j| {
        let mut acc = mj.db[j][(k, i)].clone() - mj.db[i][(k, j)].clone();
        for p in 0..n {
            acc -= sc.cmix.get(p, k, i).clone() * mj.g[(p, j)].clone();
            acc += sc.cmix.get(p, k, j).clone() * mj.g[(p, i)].clone();
            acc += sc.c.get(p, i, j).conj() * mj.g[(k, p)].clone();
        }
        acc
    })
}

/// `max |D_{kij} - conj(T_{ji kbar})|`.
pub fn dbar_omega_residual<T: Scalar>(mj: &MetricJet<T>, tor: &Torsion<T>, sc: &StructureCoefficients<T>) -> f64 {
    let d = dbar_omega_coefficients(mj, sc);
    let n = mj.n();
    let mut worst = 0.0f64;
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let r = d.get(k, i, j).clone() - tor.lowered.get(j, i, k).conj();
                worst = worst.max(r.magnitude());
            }
        }
    }
    worst
}

/// Ricci traces for a volume whose log-derivatives are `lv`.
pub fn ricci_from_log_volume<T: Scalar>(lv: &LogVolumeJet<T>, sc: &StructureCoefficients<T>) -> RicciComponents<T> {
    let n = sc.n();
    let a = trace_a(sc);
    let b = trace_b(sc);
    let r20 = CMat::from_fn(n, n, |k, l| {
        let mut acc = zero();
        for p in 0..n {
            let nb = sc.nbar.get(p, k, l).conj();
            acc -= nb.clone() * lv.db[p].clone();
            acc += sc.c.get(p, k, l).clone() * a[p].clone();
            acc += nb * b[p].clone();
        }
        acc
    });
    let r11 = CMat::from_fn(n, n, |k, l| {
        let mut acc = -lv.ddb[(k, l)].clone();
        for p in 0..n {
            let cb = sc.cmix_bar.get(p, k, l).clone();
            acc += cb.clone() * lv.db[p].clone();
            acc += sc.cmix.get(p, k, l).clone() * a[p].clone();
            acc -= cb * b[p].clone();
        }
        acc
    });
    let r02 = CMat::from_fn(n, n, |k, l| {
        let mut acc = zero();
        for p in 0..n {
            let nk = sc.nbar.get(p, k, l).clone();
            acc += nk.clone() * lv.d[p].clone();
            acc -= nk * a[p].clone();
            acc -= sc.c.get(p, k, l).conj() * b[p].clone();
        }
        acc
    });
    let asymmetry = linalg::hermitian_defect(&r11);
    let sym = (&r11 + linalg::conj_transpose(&r11)).map(|z| z * crate::scalar::half::<Complex<T>>());
    RicciComponents { r20, r11: sym, r02, asymmetry }
}

pub fn ricci_at<T: Scalar>(mj: &MetricJet<T>, sc: &StructureCoefficients<T>) -> RicciComponents<T> {
    ricci_from_log_volume(&mj.log_det(), sc)
}

pub fn ricci_traces<T: Scalar, B: DerivationBackend<T>>(
    g: &MetricField<T>,
    sc: &StructureCoefficients<T>,
    backend: &B,
) -> Result<Vec<RicciComponents<T>>, ChernError> {
    check_points(backend, g.num_points())?;
    (0..g.num_points())
        .into_par_iter()
        .map(|pt| MetricJet::at(g, backend, pt).map(|mj| ricci_at(&mj, sc)))
        .collect()
}

/// Ricci traces with `det g` replaced by a positive density.
pub fn ric_of_volume_form<T: Scalar, B: DerivationBackend<T>>(
    density: &[T],
    sc: &StructureCoefficients<T>,
    backend: &B,
) -> Result<Vec<RicciComponents<T>>, ChernError> {
    check_points(backend, density.len())?;
    if let Some(pt) = density.iter().position(|v| *v <= T::zero()) {
        return Err(ChernError::NonPositiveDensity(pt));
    }
    Ok((0..density.len())
        .into_par_iter()
        .map(|pt| ricci_from_log_volume(&LogVolumeJet::of_density(&density[pt], &backend.real_jet(density, pt)), sc))
        .collect())
}

/// `Ric = (i/2) R_kl th^k^th^l + i R_klbar th^k^thbar^l + (i/2) R_kbarlbar thbar^k^thbar^l`
/// on the real basis, with the largest discarded imaginary part.
pub fn chern_ricci_form<T: Scalar>(rc: &RicciComponents<T>, frame: &ComplexFrame<T>) -> (TwoForm<T>, f64) {
    let i = imag_unit::<T>();
    let mul = |m: &CMat<T>| m.map(|z| i.clone() * z);
    frame.assemble_form(&mul(&rc.r20), &mul(&rc.r11), &mul(&rc.r02)).real_part()
}

/// `(1,1)` part of the Chern-Ricci form.
pub fn cric<T: Scalar>(rc: &RicciComponents<T>, frame: &ComplexFrame<T>, j: &DMatrix<T>) -> TwoForm<T> {
    let (ric, _) = chern_ricci_form(rc, frame);
    project_11(&ric, j).expect("frame and J have matching dimension")
}

/// `g^{jbar i} R_{i jbar}`.
pub fn scalar_curvature<T: Scalar>(ginv: &CMat<T>, rc: &RicciComponents<T>) -> T {
    let n = ginv.nrows();
    let mut acc = zero::<T>();
    for k in 0..n {
        for l in 0..n {
            acc += ginv[(l, k)].clone() * rc.r11[(k, l)].clone();
        }
    }
    acc.re
}

/// `tr_omega eta = n eta ^ omega^{n-1} / omega^n`, which equals `tr(W^-1 H) / 2`
/// for the matrices `W`, `H` of `omega`, `eta`.
pub fn trace_form<T: Scalar>(eta: &TwoForm<T>, omega: &TwoForm<T>) -> Option<T> {
    let x = linalg::solve(omega.matrix(), eta.matrix())?;
    Some(linalg::trace(&x) * crate::scalar::half::<T>())
}

/// `g^{jbar i}(e_i ebar_j phi - [e_i, ebar_j]^(0,1) phi)` at one point.
pub fn canonical_laplacian_at<T: Scalar>(ginv: &CMat<T>, sc: &StructureCoefficients<T>, jet: &RealJet<T>) -> T {
    let n = ginv.nrows();
    let mut acc = zero::<T>();
    for i in 0..n {
        for j in 0..n {
            let mut v = jet.ddb[(i, j)].clone();
            for p in 0..n {
                v -= sc.cmix_bar.get(p, i, j).clone() * jet.dbar(p);
            }
            acc += ginv[(j, i)].clone() * v;
        }
    }
    acc.re
}

pub fn canonical_laplacian<T: Scalar, B: DerivationBackend<T>>(
    g: &MetricField<T>,
    sc: &StructureCoefficients<T>,
    backend: &B,
    phi: &[T],
) -> Result<Vec<T>, ChernError> {
    check_points(backend, g.num_points())?;
    check_points(backend, phi.len())?;
    (0..phi.len())
        .into_par_iter()
        .map(|pt| {
            let ginv = linalg::inverse(&g.at(pt)).ok_or(ChernError::SingularMetric(pt))?;
            Ok(canonical_laplacian_at(&ginv, sc, &backend.real_jet(phi, pt)))
        })
        .collect()
}

/// `2 Re(T^j_{pj} g^{qbar p} ebar_q phi)`.
pub fn torsion_term<T: Scalar>(ginv: &CMat<T>, tor: &Torsion<T>, jet: &RealJet<T>) -> T {
    let n = ginv.nrows();
    let mut acc = zero::<T>();
    for p in 0..n {
        let tp = tor.trace(p);
        for q in 0..n {
            acc += tp.clone() * ginv[(q, p)].clone() * jet.dbar(q);
        }
    }
    acc.re.clone() + acc.re
}

/// `Delta_g phi - 2 Delta^C phi - tau(d phi)` at every point.
pub fn laplace_compare<T: Scalar, B: DerivationBackend<T>>(
    g: &MetricField<T>,
    sc: &StructureCoefficients<T>,
    backend: &B,
    phi: &[T],
) -> Result<Vec<T>, ChernError> {
    check_points(backend, g.num_points())?;
    check_points(backend, phi.len())?;
    let lb = backend.laplace_beltrami(g, phi).ok_or(ChernError::NoLaplaceBeltrami)?;
    (0..phi.len())
        .into_par_iter()
        .map(|pt| {
            let mj = MetricJet::at(g, backend, pt)?;
            let gamma = christoffels_at(&mj, sc);
            let tor = torsion_at(&mj, &gamma, sc);
            let jet = backend.real_jet(phi, pt);
            let lc = canonical_laplacian_at(&mj.ginv, sc, &jet);
            let tau = torsion_term(&mj.ginv, &tor, &jet);
            Ok(lb[pt].clone() - lc.clone() - lc - tau)
        })
        .collect()
}

/// `(1/2) dJd f` on frame pairs `(e,e)`, `(e,ebar)`, `(ebar,ebar)` for a
/// function with log-jet-shaped data (`d`, `db`, `ddb` of `f` itself).
pub fn half_djd<T: Scalar>(f: &LogVolumeJet<T>, sc: &StructureCoefficients<T>) -> (CMat<T>, CMat<T>, CMat<T>) {
    let n = sc.n();
    let i = imag_unit::<T>();
    let a20 = CMat::from_fn(n, n, |k, l| {
        (0..n).fold(zero::<T>(), |acc, p| acc + sc.nbar.get(p, k, l).conj() * f.db[p].clone()) * i.clone()
    });
    let c02 = CMat::from_fn(n, n, |k, l| {
        -(0..n).fold(zero::<T>(), |acc, p| acc + sc.nbar.get(p, k, l).clone() * f.d[p].clone()) * i.clone()
    });
    let b11 = CMat::from_fn(n, n, |k, l| {
        let corr = (0..n).fold(zero::<T>(), |acc, p| acc + sc.cmix_bar.get(p, k, l).clone() * f.db[p].clone());
        (f.ddb[(k, l)].clone() - corr) * i.clone()
    });
    (a20, b11, c02)
}

/// `Ric(g~) - Ric(g) + (1/2) dJd log(det g~ / det g)` as a real 2-form per point.
/// The log ratio is differentiated directly by the backend, independently
/// of the metric jets that feed the Ricci traces.
pub fn diffric_check<T: Real, B: DerivationBackend<T>>(
    g_tilde: &MetricField<T>,
    g: &MetricField<T>,
    sc: &StructureCoefficients<T>,
    frame: &ComplexFrame<T>,
    backend: &B,
) -> Result<Vec<TwoForm<T>>, ChernError> {
    check_points(backend, g.num_points())?;
    check_points(backend, g_tilde.num_points())?;
    let ratio: Vec<T> = g_tilde
        .determinants()
        .into_iter()
        .zip(g.determinants())
        .map(|(a, b)| (a / b).ln())
        .collect();
    (0..g.num_points())
        .into_par_iter()
        .map(|pt| {
            let rt = ricci_at(&MetricJet::at(g_tilde, backend, pt)?, sc);
            let r = ricci_at(&MetricJet::at(g, backend, pt)?, sc);
            let jet = backend.real_jet(&ratio, pt);
            let lj = LogVolumeJet { db: jet.d.iter().map(|z| z.conj()).collect(), d: jet.d, ddb: jet.ddb };
            let (a20, b11, c02) = half_djd(&lj, sc);
            let i = imag_unit::<T>();
            let ric_diff = frame.assemble_form(
                &(&rt.r20 - &r.r20).map(|z| i * z),
                &(&rt.r11 - &r.r11).map(|z| i * z),
                &(&rt.r02 - &r.r02).map(|z| i * z),
            );
            let djd = frame.assemble_form(&a20, &b11, &c02);
            Ok(ric_diff.add(&djd).real_part().0)
        })
        .collect()
}

/// Sup norm over a field of 2-forms.
pub fn sup_norm<T: Scalar>(forms: &[TwoForm<T>]) -> f64 {
    forms.iter().map(TwoForm::max_magnitude).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fiber::{
        build_complex_frame, extract_structure_coefficients, hermitian_metric, standard_j, standard_omega,
        LieAlgebraModel,
    };
    use num_rational::Rational64;

    fn setup<T: Scalar>(m: &LieAlgebraModel<T>) -> (ComplexFrame<T>, StructureCoefficients<T>, MetricJet<T>) {
        let fr = build_complex_frame(m.j()).unwrap();
        let sc = extract_structure_coefficients(m, &fr).unwrap();
        let g = hermitian_metric(&fr, m.omega0());
        (fr, sc, MetricJet::constant(g).unwrap())
    }

    #[test]
    fn constant_backend_jets_vanish() {
        let b = ConstantBackend { n: 2 };
        let jet: RealJet<f64> = b.real_jet(&[3.0], 0);
        assert!(jet.d.iter().all(|z| *z == Complex::new(0.0, 0.0)));
    }

    #[test]
    fn flat_abelian_is_flat() {
        let m = LieAlgebraModel::<f64>::standard(4, &[]).unwrap();
        let (fr, sc, mj) = setup(&m);
        let gamma = christoffels_at(&mj, &sc);
        assert_eq!(gamma.hol.max_magnitude(), 0.0);
        let rc = ricci_at(&mj, &sc);
        assert_eq!(chern_ricci_form(&rc, &fr).0.max_magnitude(), 0.0);
    }

    #[test]
    fn affine_ricci_by_hand() {
        // [v1, v2] = v2: R_{1 1bar} = -1/2 and Ric(v1, v2) = -1
        let m = LieAlgebraModel::<Rational64>::standard(4, &[(1, 0, 1, Rational64::from_integer(1))]).unwrap();
        let (fr, sc, mj) = setup(&m);
        let rc = ricci_at(&mj, &sc);
        assert_eq!(rc.r11[(0, 0)], Complex::new(Rational64::new(-1, 2), Rational64::from_integer(0)));
        assert_eq!(rc.asymmetry, 0.0);
        let (ric, imag) = chern_ricci_form(&rc, &fr);
        assert_eq!(imag, 0.0);
        assert_eq!(ric.get(0, 1), Rational64::from_integer(-1));
    }

    #[test]
    fn exact_identities_on_heisenberg() {
        let one = Rational64::from_integer(1);
        let m = LieAlgebraModel::<Rational64>::standard(4, &[(2, 0, 1, one)]).unwrap();
        let (_, sc, mj) = setup(&m);
        let gamma = christoffels_at(&mj, &sc);
        let tor = torsion_at(&mj, &gamma, &sc);
        assert!(tor.upper.max_magnitude() > 0.0);
        assert_eq!(tor.lowered, lowered_torsion_expansion(&mj, &sc));
        assert_eq!(compatibility_residual(&mj, &gamma), 0.0);
        assert_eq!(mixed_torsion_residual(&gamma, &sc), 0.0);
        assert_eq!(gamma_trace_residual(&mj, &gamma, &sc), 0.0);
        assert_eq!(dbar_omega_residual(&mj, &tor, &sc), 0.0);
    }

    #[test]
    fn trace_form_of_omega_is_n() {
        let om = standard_omega::<f64>(6);
        assert_eq!(trace_form(&om, &om), Some(3.0));
        let j = standard_j::<f64>(6);
        let fr = build_complex_frame(&j).unwrap();
        let g = hermitian_metric(&fr, &om);
        let rc = RicciComponents { r20: CMat::zeros(3, 3), r11: g.clone(), r02: CMat::zeros(3, 3), asymmetry: 0.0 };
        let ginv = linalg::inverse(&g).unwrap();
        assert!((scalar_curvature(&ginv, &rc) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn density_rejected_when_nonpositive() {
        let sc = StructureCoefficients::<f64>::zeros(1);
        let r = ric_of_volume_form(&[0.0], &sc, &ConstantBackend { n: 1 });
        assert!(matches!(r, Err(ChernError::NonPositiveDensity(0))));
    }
}
