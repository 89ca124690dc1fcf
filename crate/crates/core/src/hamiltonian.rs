//! Linearized Hamiltonian flow along a trajectory: coefficient paths, the
//! frame change Φ_R, blown-up coefficient matrices B̂ and their limits,
//! hyperbolic splittings, and fundamental solutions.
//!
//! Phase-space order is (p₁, p₂, r, x): momenta first, then positions.

use std::sync::Arc;

use nalgebra::Complex;
use serde::{Deserialize, Serialize};

use crate::central::CentralConfiguration;
use crate::error::{Error, Result};
use crate::linalg::{
    complex_eigenvalues, from_rows, invariant_subspaces, j_matrix, max_abs, resymplectify, symmetrize,
    symplectic_defect, Mat, Vector,
};
use crate::nbody::{kinetic_form, m_hat_inv, NormalizedConfiguration};
use crate::ode::{Integrator, Step, Tolerances};

/// τ ↦ B(τ), a path of symmetric 2k×2k matrices.
pub trait CoefficientPath: Send + Sync {
    /// Full dimension 2k.
    fn dim(&self) -> usize;
    fn eval(&self, tau: f64) -> Mat;
    /// Declared limits at (−∞, +∞), if known.
    fn limits(&self) -> (Option<Mat>, Option<Mat>) {
        (None, None)
    }
    fn kind(&self) -> &str;
    /// Open interval on which the path is defined.
    fn domain(&self) -> (f64, f64) {
        (f64::NEG_INFINITY, f64::INFINITY)
    }
}

impl<P: CoefficientPath + ?Sized> CoefficientPath for Arc<P> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval(&self, tau: f64) -> Mat {
        (**self).eval(tau)
    }
    fn limits(&self) -> (Option<Mat>, Option<Mat>) {
        (**self).limits()
    }
    fn kind(&self) -> &str {
        (**self).kind()
    }
    fn domain(&self) -> (f64, f64) {
        (**self).domain()
    }
}

impl<P: CoefficientPath + ?Sized> CoefficientPath for &P {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval(&self, tau: f64) -> Mat {
        (**self).eval(tau)
    }
    fn limits(&self) -> (Option<Mat>, Option<Mat>) {
        (**self).limits()
    }
    fn kind(&self) -> &str {
        (**self).kind()
    }
    fn domain(&self) -> (f64, f64) {
        (**self).domain()
    }
}

#[derive(Debug, Clone)]
pub struct ConstantPath {
    pub matrix: Mat,
}

impl ConstantPath {
    pub fn new(matrix: Mat) -> Self {
        ConstantPath { matrix: symmetrize(&matrix) }
    }
}

impl CoefficientPath for ConstantPath {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }
    fn eval(&self, _tau: f64) -> Mat {
        self.matrix.clone()
    }
    fn limits(&self) -> (Option<Mat>, Option<Mat>) {
        (Some(self.matrix.clone()), Some(self.matrix.clone()))
    }
    fn kind(&self) -> &str {
        "constant"
    }
}

type MatFn = dyn Fn(f64) -> Mat + Send + Sync;

/// Path given by a closure.
#[derive(Clone)]
pub struct FnPath {
    dim: usize,
    f: Arc<MatFn>,
    lim: (Option<Mat>, Option<Mat>),
    kind: String,
    domain: (f64, f64),
}

impl FnPath {
    pub fn new(dim: usize, kind: impl Into<String>, f: impl Fn(f64) -> Mat + Send + Sync + 'static) -> Self {
        FnPath {
            dim,
            f: Arc::new(f),
            lim: (None, None),
            kind: kind.into(),
            domain: (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    pub fn with_limits(mut self, minus: Option<Mat>, plus: Option<Mat>) -> Self {
        self.lim = (minus, plus);
        self
    }

    pub fn with_domain(mut self, lo: f64, hi: f64) -> Self {
        self.domain = (lo, hi);
        self
    }
}

impl std::fmt::Debug for FnPath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FnPath").field("dim", &self.dim).field("kind", &self.kind).finish()
    }
}

impl CoefficientPath for FnPath {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, tau: f64) -> Mat {
        (self.f)(tau)
    }
    fn limits(&self) -> (Option<Mat>, Option<Mat>) {
        self.lim.clone()
    }
    fn kind(&self) -> &str {
        &self.kind
    }
    fn domain(&self) -> (f64, f64) {
        self.domain
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrigTerm {
    pub omega: f64,
    pub cos: Vec<Vec<f64>>,
    pub sin: Vec<Vec<f64>>,
}

/// B(τ) = sym(B₀ + Σ C_j cos ω_jτ + S_j sin ω_jτ); the serializable family used
/// for randomized tests and path files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrigPath {
    pub base: Vec<Vec<f64>>,
    #[serde(default)]
    pub terms: Vec<TrigTerm>,
    #[serde(skip)]
    cache: Option<Arc<Prepared>>,
}

/// Base matrix and (ω, cos, sin) terms in matrix form.
type Prepared = (Mat, Vec<(f64, Mat, Mat)>);

impl TrigPath {
    pub fn new(base: Mat, terms: Vec<(f64, Mat, Mat)>) -> Self {
        let rows = crate::linalg::to_rows;
        let mut p = TrigPath {
            base: rows(&base),
            terms: terms
                .iter()
                .map(|(w, c, s)| TrigTerm { omega: *w, cos: rows(c), sin: rows(s) })
                .collect(),
            cache: None,
        };
        p.cache = Some(Arc::new((symmetrize(&base), terms.iter().map(|(w, c, s)| (*w, symmetrize(c), symmetrize(s))).collect())));
        p
    }

    /// Parses the stored rows and checks shapes.
    pub fn prepared(mut self) -> Result<Self> {
        let base = from_rows(&self.base)?;
        let n = base.nrows();
        if n != base.ncols() || n % 2 != 0 || n == 0 {
            return Err(Error::InvalidInput("base must be a non-empty square matrix of even size".into()));
        }
        let mut terms = Vec::new();
        for t in &self.terms {
            let c = from_rows(&t.cos)?;
            let s = from_rows(&t.sin)?;
            if c.shape() != (n, n) || s.shape() != (n, n) {
                return Err(Error::InvalidInput("trig term shape differs from base".into()));
            }
            terms.push((t.omega, symmetrize(&c), symmetrize(&s)));
        }
        self.cache = Some(Arc::new((symmetrize(&base), terms)));
        Ok(self)
    }

    fn data(&self) -> &(Mat, Vec<(f64, Mat, Mat)>) {
        self.cache.as_ref().expect("TrigPath used before prepared()")
    }
}

impl CoefficientPath for TrigPath {
    fn dim(&self) -> usize {
        self.data().0.nrows()
    }
    fn eval(&self, tau: f64) -> Mat {
        let (base, terms) = self.data();
        let mut m = base.clone();
        for (w, c, s) in terms {
            m += c * (w * tau).cos() + s * (w * tau).sin();
        }
        m
    }
    fn kind(&self) -> &str {
        "trig"
    }
}

/// D²H at (p₁, p₂, r, x) for H = ½(p₁² + ⟨M̂⁻¹p₂,p₂⟩/r²) − Û(x)/r. `nc` must be
/// the chart evaluation at x (with Hessian).
pub fn build_d2h(nc: &NormalizedConfiguration, p1: f64, p2: &Vector, r: f64) -> Result<Mat> {
    let _ = p1;
    if !(r > 0.0) {
        return Err(Error::InvalidState(format!("radius {r} is not positive")));
    }
    let m = nc.x.len();
    let n = 2 * (m + 1);
    let (ip1, ip2, ir, ix) = (0, 1, m + 1, m + 2);
    let minv = m_hat_inv(&nc.x);
    let kf = kinetic_form(&nc.x, p2);
    let mut h = Mat::zeros(n, n);
    h[(ip1, ip1)] = 1.0;
    let r2 = r * r;
    let r3 = r2 * r;
    let minv_p2 = &minv * p2;
    for i in 0..m {
        for j in 0..m {
            h[(ip2 + i, ip2 + j)] = minv[(i, j)] / r2;
            h[(ip2 + i, ix + j)] = kf.d_minv_u[(i, j)] / r2;
            h[(ix + j, ip2 + i)] = kf.d_minv_u[(i, j)] / r2;
            h[(ix + i, ix + j)] = kf.hess_x[(i, j)] / (2.0 * r2) - nc.u_hess[(i, j)] / r;
        }
        h[(ip2 + i, ir)] = -2.0 * minv_p2[i] / r3;
        h[(ir, ip2 + i)] = h[(ip2 + i, ir)];
        let rx = nc.u_grad[i] / r2 - kf.grad_x[i] / r3;
        h[(ir, ix + i)] = rx;
        h[(ix + i, ir)] = rx;
    }
    h[(ir, ir)] = 3.0 * kf.value / (r2 * r2) - 2.0 * nc.u_val / r3;
    Ok(h)
}

/// Φ_R(B) = −JR′R⁻¹ + R⁻ᵀBR⁻¹ for symplectic R.
pub fn phi_r(b: &Mat, r: &Mat, r_dot: &Mat) -> Result<Mat> {
    let defect = symplectic_defect(r);
    if defect > 1e-10 * max_abs(r).max(1.0).powi(2) {
        return Err(Error::Precondition(format!("frame change is not symplectic (defect {defect:.3e})")));
    }
    let r_inv = r
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Precondition("frame change is singular".into()))?;
    let j = j_matrix(r.nrows() / 2);
    Ok(-(j * r_dot * &r_inv) + r_inv.transpose() * b * &r_inv)
}

/// Path version of [`phi_r`]; `frame` returns (R(τ), R′(τ)).
pub fn phi_r_path<P: CoefficientPath + 'static>(
    b: P,
    frame: impl Fn(f64) -> (Mat, Mat) + Send + Sync + 'static,
) -> FnPath {
    let dim = b.dim();
    FnPath::new(dim, format!("phi_r({})", b.kind()), move |tau| {
        let (r, rd) = frame(tau);
        symmetrize(&phi_r(&b.eval(tau), &r, &rd).expect("frame change must be symplectic"))
    })
}

fn diag_frame(m: usize, exps: [f64; 4], r: f64, v: f64) -> (Mat, Mat) {
    let n = 2 * (m + 1);
    let mut rm = Mat::zeros(n, n);
    let mut rd = Mat::zeros(n, n);
    let e = |i: usize| {
        if i == 0 {
            exps[0]
        } else if i <= m {
            exps[1]
        } else if i == m + 1 {
            exps[2]
        } else {
            exps[3]
        }
    };
    for i in 0..n {
        rm[(i, i)] = r.powf(e(i));
        rd[(i, i)] = e(i) * v * rm[(i, i)];
    }
    (rm, rd)
}

/// R = diag(r^{3/4}, r^{-1/4}I, r^{-3/4}, r^{1/4}I) and R′ under r′ = rv.
pub fn r_frame_mcgehee(m: usize, r: f64, v: f64) -> (Mat, Mat) {
    diag_frame(m, [0.75, -0.25, -0.75, 0.25], r, v)
}

/// R = diag(r^{1/2}, r^{-1/2}I, r^{-1/2}, r^{1/2}I) and R′ under r′ = rv.
pub fn r_frame_hyperbolic(m: usize, r: f64, v: f64) -> (Mat, Mat) {
    diag_frame(m, [0.5, -0.5, -0.5, 0.5], r, v)
}

fn bhat_common(nc: &NormalizedConfiguration, v: f64, u: &Vector, radial: f64, fiber: f64, pot_scale: f64) -> Mat {
    let m = nc.x.len();
    let n = 2 * (m + 1);
    let (ip1, ip2, ir, ix) = (0, 1, m + 1, m + 2);
    let minv = m_hat_inv(&nc.x);
    let kf = kinetic_form(&nc.x, u);
    let minv_u = &minv * u;
    let mut b = Mat::zeros(n, n);
    b[(ip1, ip1)] = 1.0;
    b[(ip1, ir)] = -radial * v;
    b[(ir, ip1)] = -radial * v;
    b[(ir, ir)] = 3.0 * kf.value - 2.0 * nc.u_val * pot_scale;
    for i in 0..m {
        for j in 0..m {
            b[(ip2 + i, ip2 + j)] = minv[(i, j)];
            let off = kf.d_minv_u[(i, j)] + if i == j { fiber * v } else { 0.0 };
            b[(ip2 + i, ix + j)] = off;
            b[(ix + j, ip2 + i)] = off;
            b[(ix + i, ix + j)] = 0.5 * kf.hess_x[(i, j)] - nc.u_hess[(i, j)] * pot_scale;
        }
        b[(ip2 + i, ir)] = -2.0 * minv_u[i];
        b[(ir, ip2 + i)] = -2.0 * minv_u[i];
        let rx = nc.u_grad[i] * pot_scale - kf.grad_x[i];
        b[(ir, ix + i)] = rx;
        b[(ix + i, ir)] = rx;
    }
    b
}

/// B̂(τ) in McGehee coordinates at the state (v, u, x); independent of r.
pub fn bhat_mcgehee(nc: &NormalizedConfiguration, v: f64, u: &Vector) -> Mat {
    bhat_common(nc, v, u, 0.75, 0.25, 1.0)
}

/// B̂(τ) in hyperbolic McGehee coordinates at (v, u, r, x).
pub fn bhat_hyperbolic(nc: &NormalizedConfiguration, v: f64, u: &Vector, r: f64) -> Mat {
    bhat_common(nc, v, u, 0.5, 0.5, 1.0 / r)
}

/// B̂(τ*) at a collision or parabolic end from (v*, Û(x*), Û_xx(x*), M̂*).
pub fn bhat_limit_collision(v_star: f64, u_val: f64, u_hess: &Mat, m_hat: &Mat) -> Result<Mat> {
    let m = u_hess.nrows();
    let minv = m_hat
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Precondition("singular metric".into()))?;
    let b1 = Mat::from_row_slice(2, 2, &[1.0, -0.75 * v_star, -0.75 * v_star, -2.0 * u_val]);
    let mut b2 = Mat::zeros(2 * m, 2 * m);
    for i in 0..m {
        for j in 0..m {
            b2[(i, j)] = minv[(i, j)];
            b2[(m + i, m + j)] = -u_hess[(i, j)];
        }
        b2[(i, m + i)] = 0.25 * v_star;
        b2[(m + i, i)] = 0.25 * v_star;
    }
    Ok(crate::linalg::symplectic_sum(&[&b1, &b2]))
}

/// B̂(τ*) at a hyperbolic end.
pub fn bhat_limit_hyperbolic(v_star: f64, m_hat: &Mat) -> Result<Mat> {
    let m = m_hat.nrows();
    let minv = m_hat
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Precondition("singular metric".into()))?;
    let b1 = Mat::from_row_slice(2, 2, &[1.0, -0.5 * v_star, -0.5 * v_star, 0.0]);
    let mut b2 = Mat::zeros(2 * m, 2 * m);
    for i in 0..m {
        for j in 0..m {
            b2[(i, j)] = minv[(i, j)];
        }
        b2[(i, m + i)] = 0.5 * v_star;
        b2[(m + i, i)] = 0.5 * v_star;
    }
    Ok(crate::linalg::symplectic_sum(&[&b1, &b2]))
}

/// Collision-end limit for a central configuration in the chart centred at it
/// (x* = 0, M̂* = I); `sign` picks v* = ±√(2U).
pub fn collision_limit_for_cc(cc: &CentralConfiguration, sign: f64) -> Result<Mat> {
    let m = cc.lambdas.len();
    // Diagonal stand-in for Û_xx(0); symplectically similar to the chart form.
    let hess = Mat::from_diagonal(&Vector::from_column_slice(&cc.lambdas));
    bhat_limit_collision(sign * (2.0 * cc.u0).sqrt(), cc.u0, &hess, &Mat::identity(m, m))
}

/// Symplectic change A_d = diag(Aᵀ, A⁻¹) normalizing M̂* (AᵀM̂*A = I).
pub fn a_d(a: &Mat) -> Result<Mat> {
    let m = a.nrows();
    let a_inv = a
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Precondition("singular normalizer".into()))?;
    let mut out = Mat::zeros(2 * m, 2 * m);
    out.view_mut((0, 0), (m, m)).copy_from(&a.transpose());
    out.view_mut((m, m), (m, m)).copy_from(&a_inv);
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct HyperbolicSplitting {
    /// J·B for the constant limit matrix B.
    pub matrix: Mat,
    pub eigenvalues: Vec<Complex<f64>>,
    pub v_plus: Option<Mat>,
    pub v_minus: Option<Mat>,
    /// min |Re λ| over the spectrum of `matrix`.
    pub gap: f64,
    pub hyperbolic: bool,
}

/// Relative threshold on |Re λ| below which a spectrum counts as touching the
/// imaginary axis.
pub const HYPERBOLIC_TOL: f64 = 1e-9;

impl HyperbolicSplitting {
    pub fn new(b: &Mat) -> Result<Self> {
        let k = b.nrows() / 2;
        let matrix = j_matrix(k) * b;
        let eigenvalues = complex_eigenvalues(&matrix);
        let radius = eigenvalues.iter().fold(1.0_f64, |a, z| a.max(z.norm()));
        let gap = eigenvalues.iter().fold(f64::INFINITY, |a, z| a.min(z.re.abs()));
        let hyperbolic = gap > HYPERBOLIC_TOL * radius;
        let (v_plus, v_minus) = if hyperbolic {
            let (p, m) = invariant_subspaces(&matrix)?;
            if p.ncols() != k || m.ncols() != k {
                return Err(Error::InvariantViolation("unbalanced hyperbolic splitting".into()));
            }
            (Some(p), Some(m))
        } else {
            (None, None)
        };
        Ok(HyperbolicSplitting { matrix, eigenvalues, v_plus, v_minus, gap, hyperbolic })
    }
}

/// Hyperbolicity of the limit at a collision end of a CC together with the
/// agreement flag against its spiral class (hyperbolic ⇔ strict non-spiral).
pub fn hyperbolicity_check(cc: &CentralConfiguration) -> Result<(HyperbolicSplitting, bool)> {
    let split = HyperbolicSplitting::new(&collision_limit_for_cc(cc, -1.0)?)?;
    let expected = cc.spiral_class == crate::central::SpiralClass::StrictNonSpiral;
    Ok((split.clone(), split.hyperbolic == expected))
}

#[derive(Debug, Clone)]
pub struct FundamentalSolution {
    pub k: usize,
    pub tau0: f64,
    pub tau1: f64,
    steps: Vec<Step>,
    /// Max entrywise |γᵀJγ − J| over accepted steps.
    pub symplectic_defect: f64,
    /// Largest correction applied by periodic re-symplectification.
    pub max_correction: f64,
    pub corrections: usize,
}

/// Accepted steps between re-symplectifications.
pub const RESYMPLECTIFY_EVERY: usize = 50;

impl FundamentalSolution {
    pub fn eval(&self, tau: f64) -> Mat {
        let n = 2 * self.k;
        if self.steps.is_empty() {
            return Mat::identity(n, n);
        }
        let idx = self
            .steps
            .iter()
            .position(|s| s.contains(tau))
            .unwrap_or(if (tau - self.tau0).abs() < (tau - self.tau1).abs() { 0 } else { self.steps.len() - 1 });
        Mat::from_column_slice(n, n, &self.steps[idx].eval(tau))
    }

    pub fn end(&self) -> Mat {
        let n = 2 * self.k;
        match self.steps.last() {
            Some(s) => Mat::from_column_slice(n, n, &s.y1),
            None => Mat::identity(n, n),
        }
    }
}

/// γ′ = JB(τ)γ, γ(τ₀) = I, propagated to τ₁ (either direction).
pub fn integrate_fundamental(
    path: &dyn CoefficientPath,
    tau0: f64,
    tau1: f64,
    tol: Tolerances,
) -> Result<FundamentalSolution> {
    let n = path.dim();
    let k = n / 2;
    let j = j_matrix(k);
    let rhs = move |t: f64, y: &[f64], dy: &mut [f64]| {
        let g = Mat::from_column_slice(n, n, y);
        let d = &j * path.eval(t) * g;
        dy.copy_from_slice(d.as_slice());
    };
    let y0 = Mat::identity(n, n).as_slice().to_vec();
    let mut integ = Integrator::new(&rhs, tau0, y0, tol);
    let mut steps = Vec::new();
    let (mut defect, mut max_corr, mut corrections) = (0.0_f64, 0.0_f64, 0usize);
    while integ.t() != tau1 {
        let step = integ.step_towards(tau1)?;
        let g = Mat::from_column_slice(n, n, &step.y1);
        defect = defect.max(symplectic_defect(&g));
        steps.push(step);
        if steps.len() % RESYMPLECTIFY_EVERY == 0 {
            let (fixed, change) = resymplectify(&g);
            max_corr = max_corr.max(change);
            corrections += 1;
            integ.set_state(fixed.as_slice().to_vec());
            if let Some(last) = steps.last_mut() {
                last.y1 = fixed.as_slice().to_vec();
            }
        }
    }
    Ok(FundamentalSolution { k, tau0, tau1, steps, symplectic_defect: defect, max_correction: max_corr, corrections })
}
