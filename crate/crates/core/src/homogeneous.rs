//! Left-invariant flows on Lie groups.
//!
//! For invariant data the flow is an ODE on 2-forms on the Lie algebra,
//! `d omega / dt = -2 p11`, with `p` the invariant Chern-Ricci form
//!
//! ```text
//! p(X, Y) = -1/2 tr(J ad[X, Y]) + 1/2 tr(ad J[X, Y]),
//! ```
//!
//! and `p11` its `(1,1)` part. Everything then has a closed form in terms of
//! the operator `P0` defined by `p11 = omega0(P0 ., .)`:
//! `omega_t = omega0 - 2t p11`, `P_t = (Id - 2t P0)^-1 P0`,
//! `R(t) = tr P_t = sum p_a / (1 - 2t p_a)`, and the flow exists up to
//! `T = 1 / (2 p_max)` (or forever when `P0 <= 0`).

use nalgebra::DMatrix;
use rayon::prelude::*;
use thiserror::Error;

use crate::chern::{self, MetricJet};
use crate::fiber::{
    build_complex_frame, extract_structure_coefficients, hermitian_metric, project_11, FiberError,
    LieAlgebraModel, TwoForm,
};
use crate::linalg;
use crate::quadrature::adaptive_simpson;
use crate::scalar::{Real, Scalar};

/// Largest eigenvalue treated as zero when deciding `P0 <= 0`.
pub const EIGEN_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum HomogeneousError {
    #[error(transparent)]
    Fiber(#[from] FiberError),
    #[error("omega0 is singular")]
    SingularForm,
    #[error("metric g0 = omega0(., J.) is not positive definite")]
    NotPositive,
    #[error("t = {t} is past the guarded horizon {limit} (T = {horizon})")]
    Horizon { t: f64, limit: f64, horizon: f64 },
    #[error("blow-up diagnostics need a finite maximal time")]
    InfiniteHorizon,
    #[error("epsilon {0} is outside (0, T)")]
    BadEpsilon(f64),
}

/// Exact part of the invariant Chern-Ricci data: no eigenvalues needed.
#[derive(Clone, Debug, PartialEq)]
pub struct InvariantChernRicci<T> {
    pub p: TwoForm<T>,
    pub p11: TwoForm<T>,
    pub p0: DMatrix<T>,
}

/// `p(v_a, v_b)` for all basis pairs.
pub fn invariant_form<T: Scalar>(m: &LieAlgebraModel<T>) -> TwoForm<T> {
    let d = m.dim();
    let unit = |a: usize| -> Vec<T> { (0..d).map(|i| if i == a { T::one() } else { T::zero() }).collect() };
    let h = crate::scalar::half::<T>();
    TwoForm::from_fn(d, |a, b| {
        let z = m.bracket(&unit(a), &unit(b));
        let jad = m.j() * m.ad(&z);
        let adj = m.ad(&m.apply_j(&z));
        h.clone() * (linalg::trace(&adj) - linalg::trace(&jad))
    })
}

pub fn invariant_chern_ricci<T: Scalar>(m: &LieAlgebraModel<T>) -> Result<InvariantChernRicci<T>, HomogeneousError> {
    let p = invariant_form(m);
    let p11 = project_11(&p, m.j())?;
    let p0 = linalg::solve(m.omega0().matrix(), p11.matrix()).ok_or(HomogeneousError::SingularForm)?;
    Ok(InvariantChernRicci { p, p11, p0 })
}

impl<T: Scalar> InvariantChernRicci<T> {
    /// `omega0 - 2t p11`.
    pub fn form_at(&self, omega0: &TwoForm<T>, t: T) -> TwoForm<T> {
        let two_t = t.clone() + t;
        TwoForm::from_fn(omega0.dim(), |a, b| omega0.get(a, b) - two_t.clone() * self.p11.get(a, b))
    }

    /// `(Id - 2t P0)^-1 P0`, or `None` past the horizon where the factor is singular.
    pub fn operator_at(&self, t: T) -> Option<DMatrix<T>> {
        let d = self.p0.nrows();
        let two_t = t.clone() + t;
        let a = DMatrix::<T>::identity(d, d) - self.p0.map(|x| x * two_t.clone());
        linalg::solve(&a, &self.p0)
    }

    /// `max |omega(P ., .) - p11|`.
    pub fn operator_residual(&self, omega: &TwoForm<T>, p: &DMatrix<T>) -> f64 {
        let lhs = p.transpose() * omega.matrix();
        linalg::max_magnitude(&(lhs - self.p11.matrix()))
    }

    /// `max |P0 J - J P0|`.
    pub fn commutator_with(&self, j: &DMatrix<T>) -> f64 {
        linalg::max_magnitude(&(&self.p0 * j - j * &self.p0))
    }
}

/// Ratio of the Chern-Ricci `(1,1)` form to `p11` on invariant data.
#[derive(Clone, Debug, PartialEq)]
pub struct KappaMeasurement<T> {
    /// `cric / p11` read off at the largest entry of `p11`; `None` when `p11 = 0`.
    pub kappa: Option<T>,
    /// `max |cric - kappa p11|` (or `max |cric|` when `p11 = 0`).
    pub residual: f64,
    /// Chern scalar curvature `tr_omega Ric` of `omega0`.
    pub scalar_curvature: T,
    /// Imaginary part dropped when assembling `Ric`.
    pub reality_defect: f64,
    /// Hermitian defect of `R_{k lbar}` before symmetrization.
    pub asymmetry: f64,
}

/// Computes `cric(omega0)` with the Chern machinery and compares it to `p11`.
pub fn measure_kappa<T: Scalar>(m: &LieAlgebraModel<T>) -> Result<KappaMeasurement<T>, HomogeneousError> {
    let icr = invariant_chern_ricci(m)?;
    let fr = build_complex_frame(m.j())?;
    let sc = extract_structure_coefficients(m, &fr)?;
    let g = hermitian_metric(&fr, m.omega0());
    let mj = MetricJet::constant(g).ok_or(HomogeneousError::SingularForm)?;
    let rc = chern::ricci_at(&mj, &sc);
    let (ric, imag) = chern::chern_ricci_form(&rc, &fr);
    let cric = project_11(&ric, m.j())?;
    let d = m.dim();
    let (mut best, mut at) = (0.0, (0, 0));
    for a in 0..d {
        for b in a + 1..d {
            let v = icr.p11.get(a, b).magnitude();
            if v > best {
                best = v;
                at = (a, b);
            }
        }
    }
    let kappa = if best > 0.0 { Some(cric.get(at.0, at.1) / icr.p11.get(at.0, at.1)) } else { None };
    let residual = match &kappa {
        Some(k) => cric.sub(&icr.p11.scale(k.clone())).max_magnitude(),
        None => cric.max_magnitude(),
    };
    Ok(KappaMeasurement {
        kappa,
        residual,
        scalar_curvature: chern::scalar_curvature(&mj.ginv, &rc),
        reality_defect: imag,
        asymmetry: rc.asymmetry,
    })
}

/// One sample of a flow curve.
#[derive(Clone, Debug)]
pub struct FlowSample<T> {
    pub t: T,
    pub omega: TwoForm<T>,
    pub operator: DMatrix<T>,
    pub eigenvalues: Vec<T>,
    pub scalar_curvature: T,
}

#[derive(Clone, Debug)]
pub struct FlowCurve<T> {
    pub samples: Vec<FlowSample<T>>,
    /// `None` for `T = +infinity`.
    pub maximal_time: Option<T>,
}

/// A row of [`HomogeneousFlow::blowup_diagnostics`].
#[derive(Clone, Debug, PartialEq)]
pub struct BlowupRow {
    pub epsilon: f64,
    pub integral_closed: f64,
    pub integral_quadrature: f64,
    pub r_times_epsilon: f64,
}

/// Closed-form homogeneous flow with spectral data.
#[derive(Clone, Debug)]
pub struct HomogeneousFlow<T> {
    model: LieAlgebraModel<T>,
    icr: InvariantChernRicci<T>,
    eigenvalues: Vec<T>,
    maximal_time: Option<T>,
}

impl<T: Real> HomogeneousFlow<T> {
    pub fn new(model: LieAlgebraModel<T>) -> Result<Self, HomogeneousError> {
        let icr = invariant_chern_ricci(&model)?;
        let eigenvalues = self_adjoint_spectrum(&model.metric0(), &icr.p0)?;
        let top = *eigenvalues.last().expect("nonempty");
        let maximal_time = if top.to_f64_lossy() <= EIGEN_TOL { None } else { Some(T::one() / (top + top)) };
        Ok(Self { model, icr, eigenvalues, maximal_time })
    }

    pub fn model(&self) -> &LieAlgebraModel<T> {
        &self.model
    }

    pub fn invariant(&self) -> &InvariantChernRicci<T> {
        &self.icr
    }

    /// Eigenvalues of `P0`, ascending, each listed with its real multiplicity.
    pub fn eigenvalues(&self) -> &[T] {
        &self.eigenvalues
    }

    pub fn maximal_time(&self) -> Option<T> {
        self.maximal_time
    }

    /// Multiplicity of the largest eigenvalue.
    pub fn top_multiplicity(&self) -> usize {
        let top = *self.eigenvalues.last().expect("nonempty");
        let scale = top.abs().max(T::one());
        self.eigenvalues.iter().filter(|&&p| (top - p).abs() <= T::lit(1e-8) * scale).count()
    }

    /// Latest time accepted by [`Self::flow_at`].
    pub fn guarded_limit(&self) -> Option<T> {
        self.maximal_time.map(|tm| tm - T::lit(1e-9).max(T::lit(1e-6) * tm))
    }

    fn check_time(&self, t: T) -> Result<(), HomogeneousError> {
        match (self.maximal_time, self.guarded_limit()) {
            (Some(tm), Some(limit)) if t > limit => Err(HomogeneousError::Horizon {
                t: t.to_f64_lossy(),
                limit: limit.to_f64_lossy(),
                horizon: tm.to_f64_lossy(),
            }),
            _ => Ok(()),
        }
    }

    pub fn flow_at(&self, t: T) -> Result<TwoForm<T>, HomogeneousError> {
        self.check_time(t)?;
        Ok(self.icr.form_at(self.model.omega0(), t))
    }

    pub fn operator_at(&self, t: T) -> Result<DMatrix<T>, HomogeneousError> {
        self.check_time(t)?;
        self.icr.operator_at(t).ok_or(HomogeneousError::Horizon {
            t: t.to_f64_lossy(),
            limit: f64::NAN,
            horizon: self.maximal_time.map_or(f64::INFINITY, |x| x.to_f64_lossy()),
        })
    }

    fn r_unchecked(&self, t: T) -> T {
        self.eigenvalues.iter().fold(T::zero(), |acc, &p| acc + p / (T::one() - (t + t) * p))
    }

    /// `sum p_a / (1 - 2t p_a)`.
    pub fn scalar_curvature_at(&self, t: T) -> Result<T, HomogeneousError> {
        self.check_time(t)?;
        Ok(self.r_unchecked(t))
    }

    /// `dR/dt = sum 2 p_a^2 / (1 - 2t p_a)^2`.
    pub fn scalar_curvature_rate(&self, t: T) -> Result<T, HomogeneousError> {
        self.check_time(t)?;
        let two = T::lit(2.0);
        Ok(self.eigenvalues.iter().fold(T::zero(), |acc, &p| acc + two * p * p / (T::one() - two * t * p).powi(2)))
    }

    /// Eigenvalues of `P_t` from those of `P0`, ascending.
    pub fn eigenvalues_at(&self, t: T) -> Result<Vec<T>, HomogeneousError> {
        self.check_time(t)?;
        let mut v: Vec<T> = self.eigenvalues.iter().map(|&p| p / (T::one() - (t + t) * p)).collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        Ok(v)
    }

    pub fn sample(&self, t: T) -> Result<FlowSample<T>, HomogeneousError> {
        let omega = self.flow_at(t)?;
        let operator = self.operator_at(t)?;
        let eigenvalues = self.eigenvalues_at(t)?;
        let scalar_curvature = self.r_unchecked(t);
        Ok(FlowSample { t, omega, operator, eigenvalues, scalar_curvature })
    }

    /// Samples `count + 1` equally spaced times on `[0, t_end]` in parallel.
    pub fn curve(&self, t_end: T, count: usize) -> Result<FlowCurve<T>, HomogeneousError> {
        self.check_time(t_end)?;
        let samples = (0..=count)
            .into_par_iter()
            .map(|i| self.sample(t_end * T::lit(i as f64) / T::lit(count.max(1) as f64)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(FlowCurve { samples, maximal_time: self.maximal_time })
    }

    /// `int_0^{T-eps} R dt` in closed form, by quadrature, and `eps R(T - eps)`.
    pub fn blowup_diagnostics(&self, epsilons: &[f64]) -> Result<Vec<BlowupRow>, HomogeneousError> {
        let tm = self.maximal_time.ok_or(HomogeneousError::InfiniteHorizon)?.to_f64_lossy();
        let ps: Vec<f64> = self.eigenvalues.iter().map(|p| p.to_f64_lossy()).collect();
        let r = |t: f64| ps.iter().map(|&p| p / (1.0 - 2.0 * t * p)).sum::<f64>();
        epsilons
            .iter()
            .map(|&eps| {
                if !(eps > 0.0 && eps < tm) {
                    return Err(HomogeneousError::BadEpsilon(eps));
                }
                let end = tm - eps;
                let closed = -0.5 * ps.iter().map(|&p| (1.0 - 2.0 * end * p).ln()).sum::<f64>();
                let quad = adaptive_simpson(r, 0.0, end, 1e-8);
                Ok(BlowupRow { epsilon: eps, integral_closed: closed, integral_quadrature: quad, r_times_epsilon: r(end) * eps })
            })
            .collect()
    }

    /// `e^{-t}(omega0 + 2 p11) - 2 p11`, the invariant solution of
    /// `d omega / dt = -2 p11 - omega`.
    pub fn normalized_flow_at(&self, t: T) -> TwoForm<T> {
        let e = (-t).exp();
        let p = &self.icr.p11;
        let w0 = self.model.omega0();
        let two = T::lit(2.0);
        TwoForm::from_fn(w0.dim(), |a, b| e * (w0.get(a, b) + two * p.get(a, b)) - two * p.get(a, b))
    }

    /// `max |omega'(t) + 2 p11 + omega(t)|` with the derivative taken from the closed form.
    pub fn normalized_ode_residual(&self, t: T) -> f64 {
        let e = (-t).exp();
        let p = &self.icr.p11;
        let w0 = self.model.omega0();
        let two = T::lit(2.0);
        let w = self.normalized_flow_at(t);
        let res = TwoForm::from_fn(w0.dim(), |a, b| {
            let dw = -e * (w0.get(a, b) + two * p.get(a, b));
            dw + two * p.get(a, b) + w.get(a, b)
        });
        res.max_magnitude()
    }

    /// Normalized time up to which the normalized flow is positive: `log(1 + T)`.
    pub fn normalized_horizon(&self) -> Option<T> {
        self.maximal_time.map(|tm| (T::one() + tm).ln())
    }

    /// `max |omega_norm(t) - omega(e^t - 1) / e^t|`.
    pub fn reparametrization_residual(&self, t: T) -> f64 {
        let s = t.exp() - T::one();
        let unnorm = self.icr.form_at(self.model.omega0(), s);
        let scaled = unnorm.scale(T::one() / (s + T::one()));
        self.normalized_flow_at(t).sub(&scaled).max_magnitude()
    }

    /// Classical RK4 on `omega' = -2 p11` up to `t_end`, compared with the
    /// closed form after every step.
    pub fn ode_crosscheck(&self, t_end: T, dt: T) -> Result<f64, HomogeneousError> {
        self.check_time(t_end)?;
        let rhs = |_w: &TwoForm<T>| self.icr.p11.scale(T::lit(-2.0));
        let steps = (t_end / dt).ceil().to_f64_lossy() as usize;
        let h = t_end / T::lit(steps.max(1) as f64);
        let mut w = self.model.omega0().clone();
        let mut worst = 0.0f64;
        for k in 1..=steps {
            w = rk4_step(&w, h, rhs);
            let exact = self.icr.form_at(self.model.omega0(), h * T::lit(k as f64));
            worst = worst.max(w.sub(&exact).max_magnitude());
        }
        Ok(worst)
    }

    /// RK4 on `omega' = -2 p11 - omega` against [`Self::normalized_flow_at`].
    pub fn normalized_crosscheck(&self, t_end: T, dt: T) -> f64 {
        let src = self.icr.p11.scale(T::lit(-2.0));
        let rhs = |w: &TwoForm<T>| src.sub(w);
        let steps = (t_end / dt).ceil().to_f64_lossy() as usize;
        let h = t_end / T::lit(steps.max(1) as f64);
        let mut w = self.model.omega0().clone();
        let mut worst = 0.0f64;
        for k in 1..=steps {
            w = rk4_step(&w, h, rhs);
            worst = worst.max(w.sub(&self.normalized_flow_at(h * T::lit(k as f64))).max_magnitude());
        }
        worst
    }

    /// Smallest eigenvalue of the metric of `omega_t`.
    pub fn min_metric_eigenvalue(&self, omega: &TwoForm<T>) -> T {
        crate::fiber::min_metric_eigenvalue(omega, self.model.j())
    }
}

fn rk4_step<T: Real>(w: &TwoForm<T>, h: T, f: impl Fn(&TwoForm<T>) -> TwoForm<T>) -> TwoForm<T> {
    let half = T::lit(0.5);
    let k1 = f(w);
    let k2 = f(&w.add(&k1.scale(h * half)));
    let k3 = f(&w.add(&k2.scale(h * half)));
    let k4 = f(&w.add(&k3.scale(h)));
    let sum = k1.add(&k2.scale(T::lit(2.0))).add(&k3.scale(T::lit(2.0))).add(&k4);
    w.add(&sum.scale(h / T::lit(6.0)))
}

/// Spectrum of an operator self-adjoint for the positive metric `g`,
/// via Cholesky `g = L L^T` and the symmetric matrix `L^T P L^-T`.
pub fn self_adjoint_spectrum<T: Real>(g: &DMatrix<T>, p: &DMatrix<T>) -> Result<Vec<T>, HomogeneousError> {
    let gs = (g + g.transpose()) * T::lit(0.5);
    let chol = gs.cholesky().ok_or(HomogeneousError::NotPositive)?;
    let l = chol.l();
    let linv_t = l.clone().try_inverse().ok_or(HomogeneousError::NotPositive)?.transpose();
    let s = l.transpose() * p * linv_t;
    Ok(linalg::symmetric_eigen(&s).0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Rational64;

    fn affine() -> LieAlgebraModel<f64> {
        LieAlgebraModel::standard(4, &[(1, 0, 1, 1.0)]).unwrap()
    }

    fn expanding() -> LieAlgebraModel<f64> {
        // su(2) + R with Jv1 = v2, Jv3 = v4
        LieAlgebraModel::standard(4, &[(2, 0, 1, 1.0), (0, 1, 2, 1.0), (1, 2, 0, 1.0)]).unwrap()
    }

    #[test]
    fn abelian_has_zero_p() {
        let m = LieAlgebraModel::<f64>::standard(4, &[]).unwrap();
        let f = HomogeneousFlow::new(m).unwrap();
        assert_eq!(f.invariant().p.max_magnitude(), 0.0);
        assert_eq!(f.maximal_time(), None);
        assert_eq!(f.scalar_curvature_at(100.0).unwrap(), 0.0);
    }

    #[test]
    fn affine_exact_p() {
        let one = Rational64::from_integer(1);
        let m = LieAlgebraModel::<Rational64>::standard(4, &[(1, 0, 1, one)]).unwrap();
        let icr = invariant_chern_ricci(&m).unwrap();
        assert_eq!(icr.p.get(0, 1), -one);
        assert_eq!(icr.p.sub(&TwoForm::from_fn(4, |a, b| if (a, b) == (0, 1) { -one } else { 0.into() })).max_magnitude(), 0.0);
        assert_eq!(icr.p, icr.p11);
        assert_eq!(icr.p0[(0, 0)], -one);
        assert_eq!(icr.p0[(1, 1)], -one);
    }

    #[test]
    fn affine_spectrum_and_flow() {
        let f = HomogeneousFlow::new(affine()).unwrap();
        assert_eq!(f.eigenvalues(), &[-1.0, -1.0, 0.0, 0.0]);
        assert_eq!(f.maximal_time(), None);
        let w = f.flow_at(0.75).unwrap();
        assert_eq!(w.get(0, 1), 2.5);
        let r = f.scalar_curvature_at(0.75).unwrap();
        assert!((r + 2.0 / 2.5).abs() < 1e-15);
    }

    #[test]
    fn expanding_horizon() {
        let f = HomogeneousFlow::new(expanding()).unwrap();
        assert_eq!(f.maximal_time(), Some(0.5));
        assert_eq!(f.top_multiplicity(), 2);
        assert!(matches!(f.flow_at(0.5), Err(HomogeneousError::Horizon { .. })));
        assert!(f.flow_at(0.4999).is_ok());
    }

    #[test]
    fn normalized_affine_limit() {
        let f = HomogeneousFlow::new(affine()).unwrap();
        let t = 3.0f64;
        assert!((f.normalized_flow_at(t).get(0, 1) - (2.0 - (-t).exp())).abs() < 1e-15);
        assert!(f.normalized_ode_residual(t) < 1e-14);
        assert!(f.reparametrization_residual(t) < 1e-12);
    }

    #[test]
    fn blowup_requires_finite_horizon() {
        let f = HomogeneousFlow::new(affine()).unwrap();
        assert!(matches!(f.blowup_diagnostics(&[1e-3]), Err(HomogeneousError::InfiniteHorizon)));
    }

    #[test]
    fn kappa_affine_exact() {
        let one = Rational64::from_integer(1);
        let m = LieAlgebraModel::<Rational64>::standard(4, &[(1, 0, 1, one)]).unwrap();
        let k = measure_kappa(&m).unwrap();
        assert_eq!(k.kappa, Some(one));
        assert_eq!(k.residual, 0.0);
    }
}
