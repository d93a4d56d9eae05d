//! Parabolic complex Monge-Ampere flow on flat tori of complex dimension
//! one or two, with the standard complex structure.
//!
//! The flow `d phi/dt = log(det(g_hat_t + phi_{i jbar}) / Omega)` is
//! integrated with a classical four-stage explicit scheme. The metric
//! `omega(t) = omega_hat_t + ddbar phi` then solves the Chern-Ricci flow
//! started at `omega_0`.

use std::f64::consts::PI;
use std::io::{Read, Write};

use thiserror::Error;

use crate::chern::{ricci_traces, ChernError};
use crate::fiber::StructureCoefficients;
use crate::grid::{
    add_fields, conformal_field, ddbar_fd, determinants, min_eigenvalues, sup_distance, GridBackend, GridError,
    GridHermitian, TorusGrid,
};
use crate::scalar::Real;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CHFLCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TorusError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Chern(#[from] ChernError),
    #[error("initial metric is not positive at point {point} (min eigenvalue {min_eig:e})")]
    NonPositiveInitial { point: usize, min_eig: f64 },
    #[error("density is not positive at point {0}")]
    NonPositiveDensity(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("stability factor {sigma} outside (0, 1]")]
    Unstable { sigma: f64, trace: Box<TorusFlowTrace<f64>> },
    #[error("step rejected {halvings} times at t = {t} (point {point}, min eigenvalue {min_eig:e})")]
    Aborted { t: f64, point: usize, min_eig: f64, halvings: u32, trace: Box<TorusFlowTrace<f64>> },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl TorusError {
    /// Trace recorded before an abort, when there is one.
    pub fn trace(&self) -> Option<&TorusFlowTrace<f64>> {
        match self {
            TorusError::Unstable { trace, .. } | TorusError::Aborted { trace, .. } => Some(trace),
            _ => None,
        }
    }
}

/// Conformal factor shapes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Profile {
    /// `1 + a sin(2 pi k x_1) sin(2 pi k y_1)`
    Bump,
    /// `1 + a sin(2 pi k x_1)`
    Wave,
}

/// Initial metrics on the torus.
#[derive(Clone, Debug, PartialEq)]
pub enum TorusMetricSpec {
    Flat,
    Conformal { amplitude: f64, frequency: f64, profile: Profile },
    /// `g_{j jbar} = scale_j (1 + a sin(2 pi k (x_1 + y_j)))`, off-diagonal zero.
    Diagonal { scales: Vec<f64>, amplitude: f64, frequency: f64 },
    /// Per-point `n * n` matrices, row-major, as `(re, im)` pairs.
    Samples(Vec<(f64, f64)>),
}

impl TorusMetricSpec {
    pub fn build<T: Real>(&self, grid: &TorusGrid<T>) -> Result<GridHermitian<T>, TorusError> {
        let n = grid.complex_dim();
        let lit = T::lit;
        match self {
            TorusMetricSpec::Flat => Ok(conformal_field(n, &vec![T::one(); grid.num_points()])),
            TorusMetricSpec::Conformal { amplitude, frequency, profile } => {
                let (a, w) = (lit(*amplitude), lit(2.0 * PI * frequency));
                let profile = *profile;
                let factor = grid.sample(move |x| match profile {
                    Profile::Bump => T::one() + a * (w * x[0]).sin() * (w * x[1]).sin(),
                    Profile::Wave => T::one() + a * (w * x[0]).sin(),
                });
                Ok(conformal_field(n, &factor))
            }
            TorusMetricSpec::Diagonal { scales, amplitude, frequency } => {
                if scales.len() != n {
                    return Err(TorusError::Config(format!("{} diagonal scales for n = {n}", scales.len())));
                }
                let (a, w) = (lit(*amplitude), lit(2.0 * PI * frequency));
                let mut re = vec![vec![T::zero(); grid.num_points()]; n * n];
                let im = re.clone();
                for (j, s) in scales.iter().enumerate() {
                    let s = lit(*s);
                    re[j * n + j] = grid.sample(move |x| s * (T::one() + a * (w * (x[0] + x[2 * j + 1])).sin()));
                }
                Ok(GridHermitian::from_planes(n, re, im))
            }
            TorusMetricSpec::Samples(values) => {
                let expected = grid.num_points() * n * n;
                if values.len() != expected {
                    return Err(TorusError::Config(format!("{} samples, expected {expected}", values.len())));
                }
                let mut re = vec![Vec::with_capacity(grid.num_points()); n * n];
                let mut im = re.clone();
                for (k, (r, i)) in values.iter().enumerate() {
                    re[k % (n * n)].push(lit(*r));
                    im[k % (n * n)].push(lit(*i));
                }
                Ok(GridHermitian::from_planes(n, re, im))
            }
        }
    }
}

/// Reference data `(omega_hat_t, Omega)`.
#[derive(Clone, Debug, Default)]
pub enum ReferenceChoice {
    /// `Omega = 1`, `omega_hat_t = omega_0`.
    #[default]
    Canonical,
    /// Arbitrary positive density; `omega_hat_t = omega_0 + t ddbar log Omega`.
    Density(Vec<f64>),
}

#[derive(Clone, Debug)]
pub struct TorusRunConfig {
    pub t_end: f64,
    pub sigma: f64,
    /// Overrides the stability step when set.
    pub fixed_dt: Option<f64>,
    pub tol_converge: f64,
    pub sample_stride: usize,
    pub max_halvings: u32,
    pub max_steps: Option<usize>,
    /// Accumulate `int_0^t log(omega^n / Omega)` by the trapezoid rule.
    pub track_reconstruction: bool,
}

impl Default for TorusRunConfig {
    fn default() -> Self {
        Self {
            t_end: 10.0,
            sigma: 0.5,
            fixed_dt: None,
            tol_converge: 1e-6,
            sample_stride: 50,
            max_halvings: 20,
            max_steps: None,
            track_reconstruction: false,
        }
    }
}

/// The torus problem: grid, initial metric, density and reference family.
#[derive(Clone, Debug)]
pub struct TorusProblem<T: Real> {
    grid: TorusGrid<T>,
    omega0: GridHermitian<T>,
    density: Vec<T>,
    log_density: Vec<T>,
    /// `ddbar log Omega`, absent for the canonical reference.
    chi: Option<GridHermitian<T>>,
}

/// Builds `omega_hat_t` and `Omega` from the initial metric.
pub fn build_reference<T: Real>(
    grid: &TorusGrid<T>,
    omega0: GridHermitian<T>,
    choice: &ReferenceChoice,
) -> Result<TorusProblem<T>, TorusError> {
    grid.check_len(omega0.num_points())?;
    if omega0.n() != grid.complex_dim() {
        return Err(TorusError::Config(format!("metric rank {} on an n = {} grid", omega0.n(), grid.complex_dim())));
    }
    let eig = min_eigenvalues(&omega0);
    if let Some((point, v)) = eig.iter().enumerate().find(|(_, v)| **v <= T::zero() || !v.to_f64_lossy().is_finite()) {
        return Err(TorusError::NonPositiveInitial { point, min_eig: v.to_f64_lossy() });
    }
    let (density, chi) = match choice {
        ReferenceChoice::Canonical => (vec![T::one(); grid.num_points()], None),
        ReferenceChoice::Density(d) => {
            grid.check_len(d.len())?;
            if let Some(p) = d.iter().position(|v| !(*v > 0.0)) {
                return Err(TorusError::NonPositiveDensity(p));
            }
            let d: Vec<T> = d.iter().map(|v| T::lit(*v)).collect();
            let logs: Vec<T> = d.iter().map(|v| v.ln()).collect();
            (d, Some(ddbar_fd(grid, &logs)?))
        }
    };
    let log_density = density.iter().map(|v| v.ln()).collect();
    Ok(TorusProblem { grid: grid.clone(), omega0, density, log_density, chi })
}

/// Rejected stage: the metric lost positivity at `point`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rejection {
    pub t: f64,
    pub dt: f64,
    pub point: usize,
    pub min_eig: f64,
}

impl<T: Real> TorusProblem<T> {
    pub fn grid(&self) -> &TorusGrid<T> {
        &self.grid
    }

    pub fn omega0(&self) -> &GridHermitian<T> {
        &self.omega0
    }

    pub fn density(&self) -> &[T] {
        &self.density
    }

    /// `omega_hat_t`.
    pub fn reference_at(&self, t: T) -> GridHermitian<T> {
        match &self.chi {
            None => self.omega0.clone(),
            Some(chi) => {
                let n = self.grid.complex_dim();
                let mut re = Vec::with_capacity(n * n);
                let mut im = Vec::with_capacity(n * n);
                for i in 0..n {
                    for j in 0..n {
                        let (gr, gi) = self.omega0.entry_planes(i, j);
                        let (cr, ci) = chi.entry_planes(i, j);
                        re.push(gr.iter().zip(cr).map(|(a, c)| *a + t * *c).collect());
                        im.push(gi.iter().zip(ci).map(|(a, c)| *a + t * *c).collect());
                    }
                }
                GridHermitian::from_planes(n, re, im)
            }
        }
    }

    /// Constants `(c, C)` with `c omega_0 <= omega_hat_t <= C omega_0`.
    pub fn equivalence_constants(&self, t: T) -> (f64, f64) {
        if self.chi.is_none() {
            return (1.0, 1.0);
        }
        let hat = self.reference_at(t);
        let n = self.grid.complex_dim();
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for p in 0..self.grid.num_points() {
            let g0 = self.omega0.at(p).map(|z| num_complex::Complex::new(z.re.to_f64_lossy(), z.im.to_f64_lossy()));
            let gh = hat.at(p).map(|z| num_complex::Complex::new(z.re.to_f64_lossy(), z.im.to_f64_lossy()));
            // eigenvalues of g0^{-1/2} gh g0^{-1/2}
            let l = g0.clone().cholesky().expect("positive initial metric").l();
            let linv = l.try_inverse().expect("invertible factor");
            let m = &linv * gh * linv.adjoint();
            let m = (&m + m.adjoint()) * num_complex::Complex::new(0.5, 0.0);
            let ev = m.symmetric_eigenvalues();
            for k in 0..n {
                lo = lo.min(ev[k]);
                hi = hi.max(ev[k]);
            }
        }
        (lo, hi)
    }

    /// `sup |(g_0 - t Ric(omega_0)) - t ddbar log det g_0 - g_0|`, with the
    /// Ricci form from the Chern connection.
    pub fn reference_identity_residual(&self, t: T) -> Result<f64, TorusError> {
        let n = self.grid.complex_dim();
        let backend = GridBackend::new(self.grid.clone());
        let ric = ricci_traces(&self.omega0, &StructureCoefficients::zeros(n), &backend)?;
        let logdet: Vec<T> = determinants(&self.omega0).iter().map(|d| d.ln()).collect();
        let h = ddbar_fd(&self.grid, &logdet)?;
        let alpha = GridHermitian::from_fn(n, self.grid.num_points(), |p| {
            let r = ric[p].r11.map(|z| z * t);
            let dd = h.at(p).map(|z| z * t);
            self.omega0.at(p) - r - dd
        });
        Ok(sup_distance(&alpha, &self.omega0))
    }

    /// `(det, min eigenvalue)` of `g_hat_t + phi_{i jbar}` at `p`.
    #[inline]
    fn pointwise(&self, t: T, phi: &[T], p: usize) -> (T, T) {
        let g = &self.grid;
        let entry = |i: usize, j: usize| {
            let (gr, gi) = self.omega0.entry_planes(i, j);
            let h = g.ddbar_entry(phi, p, i, j);
            let (mut re, mut im) = (gr[p] + h.re, gi[p] + h.im);
            if let Some(chi) = &self.chi {
                let (cr, ci) = chi.entry_planes(i, j);
                re += t * cr[p];
                im += t * ci[p];
            }
            (re, im)
        };
        if g.complex_dim() == 1 {
            let (a, _) = entry(0, 0);
            (a, a)
        } else {
            let (a, _) = entry(0, 0);
            let (d, _) = entry(1, 1);
            let (br, bi) = entry(0, 1);
            let b2 = br * br + bi * bi;
            let half = T::lit(0.5);
            let m = (a + d) * half;
            let r = (((a - d) * half).powi(2) + b2).sqrt();
            (a * d - b2, m - r)
        }
    }

    /// `log(det(g_hat_t + ddbar phi) / Omega)` pointwise.
    pub fn ma_rhs(&self, t: T, phi: &[T]) -> Result<Vec<T>, Rejection> {
        let vals = self.grid.map_points(|p| {
            let (det, lam) = self.pointwise(t, phi, p);
            if lam > T::zero() && det > T::zero() {
                Ok(det.ln() - self.log_density[p])
            } else {
                Err((p, lam))
            }
        });
        let mut out = Vec::with_capacity(vals.len());
        for v in vals {
            match v {
                Ok(x) => out.push(x),
                Err((point, lam)) => {
                    return Err(Rejection { t: t.to_f64_lossy(), dt: 0.0, point, min_eig: lam.to_f64_lossy() })
                }
            }
        }
        Ok(out)
    }

    /// Metric `omega_hat_t + ddbar phi` on the grid.
    pub fn metric_at(&self, t: T, phi: &[T]) -> Result<GridHermitian<T>, TorusError> {
        Ok(add_fields(&self.reference_at(t), &ddbar_fd(&self.grid, phi)?))
    }

    /// Stability step `sigma h^2 min_x lambda_min(g) / 4` for the state `phi`.
    pub fn stable_dt(&self, t: T, phi: &[T], sigma: f64) -> f64 {
        let lam = self
            .grid
            .map_points(|p| self.pointwise(t, phi, p).1.to_f64_lossy())
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        let h = self.grid.spacing().to_f64_lossy();
        sigma * h * h * lam / 4.0
    }

    /// `sup |det(g_hat_t + ddbar phi) - e^b Omega|`.
    pub fn stationary_residual(&self, t: T, phi: &[T], b: f64) -> f64 {
        let eb = T::lit(b.exp());
        self.grid
            .map_points(|p| (self.pointwise(t, phi, p).0 - eb * self.density[p]).to_f64_lossy().abs())
            .into_iter()
            .fold(0.0, f64::max)
    }

    /// `sup |R_{i jbar}|` of `omega_hat_t + ddbar phi` from the Chern connection.
    pub fn cric_residual(&self, t: T, phi: &[T]) -> Result<f64, TorusError> {
        let n = self.grid.complex_dim();
        let g = self.metric_at(t, phi)?;
        let backend = GridBackend::new(self.grid.clone());
        let ric = ricci_traces(&g, &StructureCoefficients::zeros(n), &backend)?;
        Ok(ric
            .iter()
            .flat_map(|rc| rc.r11.iter().map(|z| z.re.to_f64_lossy().hypot(z.im.to_f64_lossy())).collect::<Vec<_>>())
            .fold(0.0, f64::max))
    }

    /// `sup |omega_hat_t + ddbar phi_tilde - omega(t)|`.
    pub fn reconstruction_residual(&self, phi_tilde: &[T], phi: &[T]) -> Result<f64, TorusError> {
        let diff: Vec<T> = phi_tilde.iter().zip(phi).map(|(a, b)| *a - *b).collect();
        let h = ddbar_fd(&self.grid, &diff)?;
        let zero = conformal_field(self.grid.complex_dim(), &vec![T::zero(); diff.len()]);
        Ok(sup_distance(&h, &zero))
    }

    fn monitor(&self, t: T, dt: f64, phi: &[T], phidot: &[T]) -> MonitorSample {
        let det0 = determinants(&self.omega0);
        let pts = self.grid.map_points(|p| self.pointwise(t, phi, p));
        let (mut vmin, mut vmax, mut lam, mut vol) = (f64::INFINITY, 0.0f64, f64::INFINITY, 0.0);
        for (p, (det, l)) in pts.iter().enumerate() {
            let d = det.to_f64_lossy();
            let r = d / det0[p].to_f64_lossy();
            vmin = vmin.min(r);
            vmax = vmax.max(r);
            lam = lam.min(l.to_f64_lossy());
            vol += d;
        }
        let (lo, hi) = min_max(phidot);
        MonitorSample {
            t: t.to_f64_lossy(),
            dt,
            sup_phi: sup_abs(phi),
            sup_phidot: sup_abs(phidot),
            vol_ratio_min: vmin,
            vol_ratio_max: vmax,
            min_eig: lam,
            osc: hi - lo,
            volume: vol / pts.len() as f64,
        }
    }
}

fn sup_abs<T: Real>(v: &[T]) -> f64 {
    v.iter().map(|x| x.to_f64_lossy().abs()).fold(0.0, f64::max)
}

fn min_max<T: Real>(v: &[T]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
        let x = x.to_f64_lossy();
        (lo.min(x), hi.max(x))
    })
}

/// Oscillation `max - min` of a grid scalar.
pub fn oscillation<T: Real>(v: &[T]) -> f64 {
    let (lo, hi) = min_max(v);
    hi - lo
}

/// One row of the monitor series.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MonitorSample {
    pub t: f64,
    pub dt: f64,
    pub sup_phi: f64,
    pub sup_phidot: f64,
    /// Extremes of `omega^n / omega_0^n`.
    pub vol_ratio_min: f64,
    pub vol_ratio_max: f64,
    pub min_eig: f64,
    pub osc: f64,
    /// Grid mean of `det g`.
    pub volume: f64,
}

#[derive(Clone, Debug)]
pub struct TorusFlowTrace<T> {
    pub n: usize,
    pub size: usize,
    pub samples: Vec<MonitorSample>,
    pub rejections: Vec<Rejection>,
    pub t_final: f64,
    pub steps: usize,
    pub converged: bool,
    pub phi: Vec<T>,
    pub phidot: Vec<T>,
    /// Trapezoid integral of `phidot`, when tracked.
    pub phi_tilde: Option<Vec<T>>,
}

impl<T: Real> TorusFlowTrace<T> {
    /// Final `mean(phidot)`.
    pub fn b_mean(&self) -> f64 {
        self.phidot.iter().map(|x| x.to_f64_lossy()).sum::<f64>() / self.phidot.len().max(1) as f64
    }

    pub fn final_osc(&self) -> f64 {
        oscillation(&self.phidot)
    }

    fn to_f64(&self) -> TorusFlowTrace<f64> {
        let conv = |v: &[T]| v.iter().map(|x| x.to_f64_lossy()).collect::<Vec<_>>();
        TorusFlowTrace {
            n: self.n,
            size: self.size,
            samples: self.samples.clone(),
            rejections: self.rejections.clone(),
            t_final: self.t_final,
            steps: self.steps,
            converged: self.converged,
            phi: conv(&self.phi),
            phidot: conv(&self.phidot),
            phi_tilde: self.phi_tilde.as_deref().map(conv),
        }
    }
}

/// `log(int omega_0^n / int Omega)`, the limit of `phidot` when `n = 1`.
pub fn volume_ratio_b<T: Real>(problem: &TorusProblem<T>) -> f64 {
    let num: f64 = determinants(problem.omega0()).iter().map(|d| d.to_f64_lossy()).sum();
    let den: f64 = problem.density().iter().map(|d| d.to_f64_lossy()).sum();
    (num / den).ln()
}

/// Boundedness checks on a finished trace.
#[derive(Clone, Debug, PartialEq)]
pub struct MonitorReport {
    pub sup_phi: f64,
    pub sup_phidot: f64,
    pub vol_ratio_min: f64,
    pub vol_ratio_max: f64,
    /// `max / min` of the volume ratio over the run.
    pub pinching: f64,
    pub min_eig: f64,
    pub all_finite: bool,
    pub positive: bool,
    /// `sup |phidot|` never grows by more than the slack after the first
    /// quarter of the samples.
    pub phidot_settles: bool,
}

impl MonitorReport {
    pub fn passes(&self) -> bool {
        self.all_finite && self.positive && self.pinching.is_finite()
    }
}

pub fn monitor_bounds<T>(trace: &TorusFlowTrace<T>) -> MonitorReport {
    let s = &trace.samples;
    let fold = |f: fn(&MonitorSample) -> f64, init: f64, op: fn(f64, f64) -> f64| s.iter().map(f).fold(init, op);
    let sup_phi = fold(|m| m.sup_phi, 0.0, f64::max);
    let sup_phidot = fold(|m| m.sup_phidot, 0.0, f64::max);
    let vol_ratio_min = fold(|m| m.vol_ratio_min, f64::INFINITY, f64::min);
    let vol_ratio_max = fold(|m| m.vol_ratio_max, 0.0, f64::max);
    let min_eig = fold(|m| m.min_eig, f64::INFINITY, f64::min);
    let all_finite = s.iter().all(|m| {
        [m.sup_phi, m.sup_phidot, m.vol_ratio_min, m.vol_ratio_max, m.min_eig, m.osc, m.volume]
            .iter()
            .all(|x| x.is_finite())
    });
    let start = s.len() / 4;
    let phidot_settles = s[start..].windows(2).all(|w| w[1].sup_phidot <= w[0].sup_phidot * (1.0 + 1e-9) + 1e-12);
    MonitorReport {
        sup_phi,
        sup_phidot,
        vol_ratio_min,
        vol_ratio_max,
        pinching: vol_ratio_max / vol_ratio_min,
        min_eig,
        all_finite,
        positive: min_eig > 0.0,
        phidot_settles,
    }
}

/// Explicit solver for the torus Monge-Ampere flow.
#[derive(Clone, Debug)]
pub struct TorusSolver<T: Real> {
    problem: TorusProblem<T>,
    config: TorusRunConfig,
}

impl<T: Real> TorusSolver<T> {
    pub fn new(problem: TorusProblem<T>, config: TorusRunConfig) -> Self {
        Self { problem, config }
    }

    /// Solver for a metric spec with the canonical reference.
    pub fn from_spec(n: usize, size: usize, spec: &TorusMetricSpec, config: TorusRunConfig) -> Result<Self, TorusError> {
        let grid = TorusGrid::new(n, size)?;
        let omega0 = spec.build(&grid)?;
        Ok(Self::new(build_reference(&grid, omega0, &ReferenceChoice::Canonical)?, config))
    }

    pub fn problem(&self) -> &TorusProblem<T> {
        &self.problem
    }

    pub fn config(&self) -> &TorusRunConfig {
        &self.config
    }

    /// One classical four-stage step from `(t, phi)` with `k1 = rhs(t, phi)`.
    pub fn step(&self, t: T, dt: T, phi: &[T], k1: &[T]) -> Result<Vec<T>, Rejection> {
        let half = T::lit(0.5);
        let axpy = |k: &[T], s: T| phi.iter().zip(k).map(|(p, k)| *p + s * *k).collect::<Vec<T>>();
        let p = &self.problem;
        let k2 = p.ma_rhs(t + half * dt, &axpy(k1, half * dt))?;
        let k3 = p.ma_rhs(t + half * dt, &axpy(&k2, half * dt))?;
        let k4 = p.ma_rhs(t + dt, &axpy(&k3, dt))?;
        let w = dt / T::lit(6.0);
        let two = T::lit(2.0);
        Ok((0..phi.len()).map(|i| phi[i] + w * (k1[i] + two * (k2[i] + k3[i]) + k4[i])).collect())
    }

    /// Runs from `phi0` (zero when absent) at `t0` until `t_end` or until
    /// `osc(phidot) < tol_converge`.
    pub fn run_from(&self, phi0: Option<Vec<T>>, t0: f64) -> Result<TorusFlowTrace<T>, TorusError> {
        let cfg = &self.config;
        let p = &self.problem;
        let grid = p.grid();
        let npts = grid.num_points();
        let mut phi = phi0.unwrap_or_else(|| vec![T::zero(); npts]);
        grid.check_len(phi.len())?;
        if !(cfg.t_end.is_finite() && cfg.sample_stride > 0 && cfg.tol_converge > 0.0) {
            return Err(TorusError::Config("t_end, sample stride and tolerance must be positive".into()));
        }
        let mut t = T::lit(t0);
        let mut k1 = match p.ma_rhs(t, &phi) {
            Ok(k) => k,
            Err(r) => return Err(TorusError::NonPositiveInitial { point: r.point, min_eig: r.min_eig }),
        };
        let mut dt = match cfg.fixed_dt {
            Some(d) if d > 0.0 => d,
            Some(d) => return Err(TorusError::Config(format!("fixed step {d} is not positive"))),
            None => p.stable_dt(t, &phi, cfg.sigma),
        };
        let mut trace = TorusFlowTrace {
            n: grid.complex_dim(),
            size: grid.size(),
            samples: vec![p.monitor(t, dt, &phi, &k1)],
            rejections: Vec::new(),
            t_final: t0,
            steps: 0,
            converged: false,
            phi: Vec::new(),
            phidot: Vec::new(),
            phi_tilde: cfg.track_reconstruction.then(|| phi.clone()),
        };
        if !(cfg.sigma > 0.0 && cfg.sigma <= 1.0) {
            trace.phi = phi;
            trace.phidot = k1;
            return Err(TorusError::Unstable { sigma: cfg.sigma, trace: Box::new(trace.to_f64()) });
        }
        let mut last_sampled = 0;
        let mut last_used = dt;
        let mut total_halvings = 0i32;
        loop {
            if oscillation(&k1) < cfg.tol_converge {
                trace.converged = true;
                break;
            }
            let remaining = cfg.t_end - t.to_f64_lossy();
            if remaining <= 1e-12 * cfg.t_end.abs().max(1.0) || cfg.max_steps.is_some_and(|m| trace.steps >= m) {
                break;
            }
            let mut halvings = 0;
            let (next, k_next, used) = loop {
                let h = dt.min(remaining);
                let ht = T::lit(h);
                let attempt = self.step(t, ht, &phi, &k1).and_then(|next| p.ma_rhs(t + ht, &next).map(|k| (next, k)));
                match attempt {
                    Ok((next, k)) => break (next, k, h),
                    Err(mut r) => {
                        r.dt = h;
                        trace.rejections.push(r);
                        if halvings == cfg.max_halvings {
                            trace.t_final = t.to_f64_lossy();
                            trace.phi = phi;
                            trace.phidot = k1;
                            return Err(TorusError::Aborted {
                                t: r.t,
                                point: r.point,
                                min_eig: r.min_eig,
                                halvings,
                                trace: Box::new(trace.to_f64()),
                            });
                        }
                        halvings += 1;
                        total_halvings += 1;
                        dt *= 0.5;
                    }
                }
            };
            let ht = T::lit(used);
            last_used = used;
            if let Some(acc) = trace.phi_tilde.as_mut() {
                let w = ht * T::lit(0.5);
                for i in 0..npts {
                    acc[i] += w * (k1[i] + k_next[i]);
                }
            }
            t += ht;
            phi = next;
            k1 = k_next;
            trace.steps += 1;
            if trace.steps % cfg.sample_stride == 0 {
                trace.samples.push(p.monitor(t, used, &phi, &k1));
                last_sampled = trace.steps;
                if cfg.fixed_dt.is_none() {
                    dt = p.stable_dt(t, &phi, cfg.sigma) * 0.5f64.powi(total_halvings);
                }
            }
        }
        if last_sampled != trace.steps {
            trace.samples.push(p.monitor(t, last_used, &phi, &k1));
        }
        trace.t_final = t.to_f64_lossy();
        trace.phi = phi;
        trace.phidot = k1;
        Ok(trace)
    }

    pub fn run(&self) -> Result<TorusFlowTrace<T>, TorusError> {
        self.run_from(None, 0.0)
    }
}

/// Saved flow state.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub n: u32,
    pub size: u32,
    pub t: f64,
    pub phi: Vec<f64>,
}

/// Writes `magic, version, n, N (u32), t (f64), phi (f64 x N^{2n})`, all
/// little-endian.
pub fn write_checkpoint(w: &mut impl Write, ck: &Checkpoint) -> Result<(), TorusError> {
    let expected = (ck.size as usize).pow(2 * ck.n);
    if ck.phi.len() != expected {
        return Err(TorusError::Checkpoint(format!("{} values for {expected} points", ck.phi.len())));
    }
    let mut buf = Vec::with_capacity(28 + 8 * expected);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&ck.n.to_le_bytes());
    buf.extend_from_slice(&ck.size.to_le_bytes());
    buf.extend_from_slice(&ck.t.to_le_bytes());
    for v in &ck.phi {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<Checkpoint, TorusError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 28 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(TorusError::Checkpoint("bad magic".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let version = u32_at(8);
    if version != CHECKPOINT_VERSION {
        return Err(TorusError::Checkpoint(format!("unsupported version {version}")));
    }
    let (n, size) = (u32_at(12), u32_at(16));
    if !(1..=2).contains(&n) {
        return Err(TorusError::Checkpoint(format!("complex dimension {n}")));
    }
    let t = f64::from_le_bytes(bytes[20..28].try_into().expect("8 bytes"));
    let count = (size as usize).pow(2 * n);
    if bytes.len() != 28 + 8 * count {
        return Err(TorusError::Checkpoint(format!("{} payload bytes for {count} points", bytes.len() - 28)));
    }
    let phi = bytes[28..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok(Checkpoint { n, size, t, phi })
}

impl<T: Real> TorusFlowTrace<T> {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            n: self.n as u32,
            size: self.size as u32,
            t: self.t_final,
            phi: self.phi.iter().map(|x| x.to_f64_lossy()).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bump(amplitude: f64) -> TorusMetricSpec {
        TorusMetricSpec::Conformal { amplitude, frequency: 1.0, profile: Profile::Bump }
    }

    #[test]
    fn flat_start_is_stationary() {
        let s = TorusSolver::<f64>::from_spec(2, 8, &TorusMetricSpec::Flat, TorusRunConfig::default()).unwrap();
        let tr = s.run().unwrap();
        assert!(tr.converged);
        assert_eq!(tr.steps, 0);
        assert!(tr.phi.iter().all(|x| *x == 0.0));
        assert_eq!(s.problem().stationary_residual(0.0, &tr.phi, 0.0), 0.0);
        let m = monitor_bounds(&tr);
        assert_eq!((m.sup_phi, m.sup_phidot, m.pinching), (0.0, 0.0, 1.0));
    }

    #[test]
    fn one_dimensional_rhs_is_log_of_entry() {
        let s = TorusSolver::<f64>::from_spec(1, 16, &bump(0.5), TorusRunConfig::default()).unwrap();
        let p = s.problem();
        let phi = p.grid().sample(|x| 0.01 * (2.0 * PI * x[1]).cos());
        let rhs = p.ma_rhs(0.0, &phi).unwrap();
        let h = ddbar_fd(p.grid(), &phi).unwrap();
        for i in 0..phi.len() {
            let g = p.omega0().entry_planes(0, 0).0[i] + h.entry_planes(0, 0).0[i];
            assert!((rhs[i] - g.ln()).abs() < 1e-14);
        }
    }

    #[test]
    fn rejection_locates_point() {
        let s = TorusSolver::<f64>::from_spec(1, 16, &TorusMetricSpec::Flat, TorusRunConfig::default()).unwrap();
        let p = s.problem();
        let mut phi = vec![0.0; p.grid().num_points()];
        phi[37] = 1.0;
        let r = p.ma_rhs(0.0, &phi).unwrap_err();
        assert_eq!(r.point, 37);
        assert!(r.min_eig < 0.0);
    }

    #[test]
    fn canonical_reference_identity() {
        let grid = TorusGrid::<f64>::new(1, 32).unwrap();
        let p = build_reference(&grid, bump(0.5).build(&grid).unwrap(), &ReferenceChoice::Canonical).unwrap();
        assert_eq!(p.reference_identity_residual(0.0).unwrap(), 0.0);
        let r1 = p.reference_identity_residual(1.0).unwrap();
        let r10 = p.reference_identity_residual(10.0).unwrap();
        assert!(r1 < 0.2 && (r10 / r1 - 10.0).abs() < 1e-6, "{r1} {r10}");
        let fine = TorusGrid::<f64>::new(1, 64).unwrap();
        let pf = build_reference(&fine, bump(0.5).build(&fine).unwrap(), &ReferenceChoice::Canonical).unwrap();
        let ratio = r1 / pf.reference_identity_residual(1.0).unwrap();
        assert!((3.2..4.8).contains(&ratio), "ratio {ratio}");
        assert_eq!(p.equivalence_constants(5.0), (1.0, 1.0));
    }

    #[test]
    fn density_reference_moves_omega_hat() {
        let grid = TorusGrid::<f64>::new(1, 16).unwrap();
        let dens = grid.sample(|x| 1.0 + 0.1 * (2.0 * PI * x[0]).cos());
        let p = build_reference(&grid, bump(0.2).build(&grid).unwrap(), &ReferenceChoice::Density(dens)).unwrap();
        let (lo, hi) = p.equivalence_constants(0.1);
        assert!(lo < 1.0 && hi > 1.0);
        let cfg = TorusRunConfig { t_end: 0.05, ..Default::default() };
        let tr = TorusSolver::new(p, cfg).run().unwrap();
        assert!(monitor_bounds(&tr).passes());
    }

    #[test]
    fn sigma_above_one_is_refused() {
        let cfg = TorusRunConfig { sigma: 2.0, ..Default::default() };
        let s = TorusSolver::<f64>::from_spec(1, 16, &bump(0.5), cfg).unwrap();
        match s.run() {
            Err(TorusError::Unstable { sigma, trace }) => {
                assert_eq!(sigma, 2.0);
                assert_eq!(trace.samples.len(), 1);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn oversized_fixed_step_halves_or_aborts() {
        let cfg = TorusRunConfig { fixed_dt: Some(0.05), t_end: 1.0, max_halvings: 2, ..Default::default() };
        let s = TorusSolver::<f64>::from_spec(1, 16, &bump(0.9), cfg).unwrap();
        match s.run() {
            Err(TorusError::Aborted { halvings, trace, min_eig, .. }) => {
                assert_eq!(halvings, 2);
                assert!(trace.rejections.len() >= 3);
                assert!(min_eig <= 0.0 && trace.samples.iter().all(|m| m.min_eig > 0.0));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let ck = Checkpoint { n: 1, size: 8, t: 0.1 + 0.2, phi: (0..64).map(|i| (i as f64).sin() / 3.0).collect() };
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &ck).unwrap();
        assert_eq!(&buf[..8], CHECKPOINT_MAGIC);
        assert_eq!(buf.len(), 28 + 64 * 8);
        let back = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(back.t.to_bits(), ck.t.to_bits());
        assert!(back.phi.iter().zip(&ck.phi).all(|(a, b)| a.to_bits() == b.to_bits()));
        buf[8] = 9;
        assert!(read_checkpoint(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn restart_matches_continuous_run() {
        let base = TorusRunConfig { fixed_dt: Some(1e-4), sample_stride: 10, ..Default::default() };
        let whole = TorusSolver::<f64>::from_spec(1, 8, &bump(0.5), TorusRunConfig { t_end: 0.004, ..base.clone() })
            .unwrap()
            .run()
            .unwrap();
        let first = TorusSolver::<f64>::from_spec(1, 8, &bump(0.5), TorusRunConfig { t_end: 0.002, ..base.clone() })
            .unwrap()
            .run()
            .unwrap();
        let second = TorusSolver::<f64>::from_spec(1, 8, &bump(0.5), TorusRunConfig { t_end: 0.004, ..base })
            .unwrap()
            .run_from(Some(first.phi.clone()), first.t_final)
            .unwrap();
        let d = whole.phi.iter().zip(&second.phi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(d < 1e-13, "{d}");
    }
}
