//! Lagrangian subspaces of (ℝ^{2k}, ω) and Maslov-type indices.
//!
//! The index of a pair of Lagrangian paths (L₁(τ), L₂(τ)) is computed from
//! the unitary W(τ) = S₂(τ)·conj(S₁(τ)), where S = UUᵀ and U = X + iY for an
//! orthonormal frame [X; Y]. Eigenvalues of W sit at 1 exactly on crossings
//! and move counterclockwise through 1 on positive crossings. With lifted
//! eigen-angles θⱼ and φⱼ ∈ (−2π, 0] their representatives,
//!
//!   μ = Σⱼ ⌈θⱼ(b)/2π⌉ − ⌈θⱼ(a)/2π⌉ = (Δ arg det W + Σφⱼ(a) − Σφⱼ(b)) / 2π,
//!
//! which is the crossing-form count with m⁺ at a and −m⁻ at b.

use nalgebra::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::{CoefficientPath, HyperbolicSplitting};
use crate::linalg::{j_matrix, orthonormal_columns, spectral_norm, sym_eigen, symmetrize, CMat, Mat};
use crate::ode::{Integrator, Step, Tolerances};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Orthonormal 2k×k frame of a Lagrangian subspace, momentum rows first.
#[derive(Debug, Clone, PartialEq)]
pub struct LagrangianFrame {
    pub frame: Mat,
}

impl LagrangianFrame {
    pub fn new(z: Mat) -> Result<Self> {
        let (n, k) = z.shape();
        if n != 2 * k {
            return Err(Error::InvalidInput(format!("a Lagrangian frame must be 2k×k, got {n}×{k}")));
        }
        if k > 0 {
            let sv = z.clone().svd(false, false).singular_values;
            let (lo, hi) = sv.iter().fold((f64::INFINITY, 0.0_f64), |(a, b), &s| (a.min(s), b.max(s)));
            if lo <= 1e-12 * hi {
                return Err(Error::InvalidInput("frame is rank deficient".into()));
            }
        }
        let q = orthonormal_columns(&z);
        let res = lagrangian_residual(&q);
        if res > 1e-10 {
            return Err(Error::InvalidInput(format!("subspace is not Lagrangian (residual {res:.3e})")));
        }
        Ok(LagrangianFrame { frame: q })
    }

    /// Wraps a frame already known to be orthonormal and Lagrangian.
    pub fn from_orthonormal(frame: Mat) -> Self {
        LagrangianFrame { frame }
    }

    /// V_D = ℝ^k ⊕ 0, the momentum space.
    pub fn dirichlet(k: usize) -> Self {
        let mut z = Mat::zeros(2 * k, k);
        for i in 0..k {
            z[(i, i)] = 1.0;
        }
        LagrangianFrame { frame: z }
    }

    /// V_N = 0 ⊕ ℝ^k.
    pub fn neumann(k: usize) -> Self {
        let mut z = Mat::zeros(2 * k, k);
        for i in 0..k {
            z[(k + i, i)] = 1.0;
        }
        LagrangianFrame { frame: z }
    }

    pub fn k(&self) -> usize {
        self.frame.ncols()
    }

    pub fn unitary(&self) -> CMat {
        unitary_of(&self.frame)
    }

    /// gΛ for a symplectic g.
    pub fn transform(&self, g: &Mat) -> LagrangianFrame {
        LagrangianFrame { frame: orthonormal_columns(&(g * &self.frame)) }
    }

    /// Operator-norm distance of the orthogonal projectors.
    pub fn distance(&self, other: &LagrangianFrame) -> f64 {
        subspace_distance(&self.frame, &other.frame)
    }

    /// Λ ⊕ Λ̂ in the interleaved layout of [`crate::linalg::symplectic_sum`].
    pub fn direct_sum(&self, other: &LagrangianFrame) -> LagrangianFrame {
        LagrangianFrame { frame: frame_sum(&self.frame, &other.frame) }
    }
}

/// Block-interleaved direct sum of two frames.
pub fn frame_sum(a: &Mat, b: &Mat) -> Mat {
    let (ka, kb) = (a.ncols(), b.ncols());
    let k = ka + kb;
    let mut z = Mat::zeros(2 * k, k);
    for c in 0..ka {
        for i in 0..ka {
            z[(i, c)] = a[(i, c)];
            z[(k + i, c)] = a[(ka + i, c)];
        }
    }
    for c in 0..kb {
        for i in 0..kb {
            z[(ka + i, ka + c)] = b[(i, c)];
            z[(k + ka + i, ka + c)] = b[(kb + i, c)];
        }
    }
    z
}

pub fn lagrangian_residual(z: &Mat) -> f64 {
    let j = j_matrix(z.nrows() / 2);
    crate::linalg::max_abs(&(z.transpose() * j * z))
}

pub fn subspace_distance(a: &Mat, b: &Mat) -> f64 {
    let pa = a * a.transpose();
    let pb = b * b.transpose();
    spectral_norm(&(pa - pb))
}

fn unitary_of(z: &Mat) -> CMat {
    let k = z.ncols();
    CMat::from_fn(k, k, |i, j| Complex::new(z[(i, j)], z[(k + i, j)]))
}

fn souriau(z: &Mat) -> CMat {
    let u = unitary_of(z);
    &u * u.transpose()
}

/// dim(L₁ ∩ L₂): singular values of L₂ᵀJL₁ at or below `tol`.
pub fn intersection_dim(a: &LagrangianFrame, b: &LagrangianFrame, tol: f64) -> usize {
    frames_intersection_dim(&a.frame, &b.frame, tol)
}

fn frames_intersection_dim(a: &Mat, b: &Mat, tol: f64) -> usize {
    if a.ncols() == 0 {
        return 0;
    }
    let j = j_matrix(a.nrows() / 2);
    let m = b.transpose() * j * a;
    m.svd(false, false).singular_values.iter().filter(|&&s| s <= tol).count()
}

/// Smallest singular value of L₂ᵀJL₁; zero exactly on intersection.
pub fn transversality_margin(a: &Mat, b: &Mat) -> f64 {
    if a.ncols() == 0 {
        return f64::INFINITY;
    }
    let j = j_matrix(a.nrows() / 2);
    let m = b.transpose() * j * a;
    m.svd(false, false).singular_values.iter().fold(f64::INFINITY, |x, &s| x.min(s))
}

/// Signature (m⁺, m⁻, m⁰) and eigenvalues of a frame-coordinate form `form`
/// restricted to the coordinates c with Zc ∈ W.
pub fn crossing_form(z: &Mat, form: &Mat, w: &LagrangianFrame, tol: f64) -> (usize, usize, usize, Vec<f64>) {
    let j = j_matrix(z.nrows() / 2);
    let kernel = crate::linalg::null_space(&(w.frame.transpose() * j * z), tol);
    if kernel.ncols() == 0 {
        return (0, 0, 0, Vec::new());
    }
    let restricted = kernel.transpose() * symmetrize(form) * &kernel;
    let (vals, _) = sym_eigen(&restricted);
    let scale = vals.iter().fold(1e-300_f64, |a, v| a.max(v.abs()));
    let zero_tol = 1e-9_f64.max(1e-9 * scale);
    let plus = vals.iter().filter(|&&v| v > zero_tol).count();
    let minus = vals.iter().filter(|&&v| v < -zero_tol).count();
    (plus, minus, vals.len() - plus - minus, vals)
}

/// τ ↦ Λ(τ), given by orthonormal frames.
pub trait LagrangianPath: Sync {
    fn k(&self) -> usize;
    fn frame(&self, tau: f64) -> Mat;
    /// Symmetric k×k matrix of −ZᵀJŻ in the coordinates of `frame(tau)`, when
    /// the path knows it analytically.
    fn form(&self, _tau: f64) -> Option<Mat> {
        None
    }
    /// Parameter values where sampling should include a node.
    fn knots(&self, _a: f64, _b: f64) -> Vec<f64> {
        Vec::new()
    }
    fn is_constant(&self) -> bool {
        false
    }
}

impl LagrangianPath for LagrangianFrame {
    fn k(&self) -> usize {
        self.frame.ncols()
    }
    fn frame(&self, _tau: f64) -> Mat {
        self.frame.clone()
    }
    fn form(&self, _tau: f64) -> Option<Mat> {
        Some(Mat::zeros(self.k(), self.k()))
    }
    fn is_constant(&self) -> bool {
        true
    }
}

/// Path from a closure returning (not necessarily orthonormal) frames.
pub struct FnLagrangianPath<'a> {
    k: usize,
    f: Box<dyn Fn(f64) -> Mat + Sync + 'a>,
}

impl<'a> FnLagrangianPath<'a> {
    pub fn new(k: usize, f: impl Fn(f64) -> Mat + Sync + 'a) -> Self {
        FnLagrangianPath { k, f: Box::new(f) }
    }
}

impl LagrangianPath for FnLagrangianPath<'_> {
    fn k(&self) -> usize {
        self.k
    }
    fn frame(&self, tau: f64) -> Mat {
        orthonormal_columns(&(self.f)(tau))
    }
}

/// −ZᵀJŻ from central differences of S(h), the symmetric matrix whose graph
/// over Λ(τ) is Λ(τ+h).
fn finite_difference_form(path: &dyn LagrangianPath, tau: f64, a: f64, b: f64) -> Option<Mat> {
    let h = 1e-5 * (1.0 + tau.abs());
    let (lo, hi) = ((tau - h).max(a), (tau + h).min(b));
    if hi <= lo {
        return None;
    }
    let z0 = path.frame(tau);
    let j = j_matrix(z0.nrows() / 2);
    let graph = |t: f64| -> Option<Mat> {
        let zt = path.frame(t);
        let p = z0.transpose() * &zt;
        let q = -(z0.transpose() * &j * &zt);
        p.try_inverse().map(|pi| q * pi)
    };
    let (sl, sh) = (graph(lo)?, graph(hi)?);
    Some(symmetrize(&((sh - sl) / (hi - lo))))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaslovOptions {
    pub initial_samples: usize,
    pub max_depth: usize,
    /// Crossings are located to this width.
    pub locate_tol: f64,
    /// Eigen-angles of W within this of 0 count as exact intersections.
    pub snap: f64,
    pub log_crossings: bool,
}

impl Default for MaslovOptions {
    fn default() -> Self {
        MaslovOptions { initial_samples: 64, max_depth: 60, locate_tol: 1e-10, snap: 1e-8, log_crossings: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossingRecord {
    pub tau: f64,
    pub intersection_dim: usize,
    pub m_plus: usize,
    pub m_minus: usize,
    pub form_eigenvalues: Vec<f64>,
    /// Signed contribution of this crossing to the index.
    pub contribution: i64,
    pub regular: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaslovResult {
    pub index: i64,
    pub crossings: Vec<CrossingRecord>,
    pub evaluations: usize,
}

struct Sample {
    tau: f64,
    w: CMat,
    phi: f64,
}

struct Counter<'p> {
    first: &'p dyn LagrangianPath,
    second: &'p dyn LagrangianPath,
    a: f64,
    b: f64,
    k: usize,
    opts: MaslovOptions,
    evaluations: usize,
    crossings: Vec<CrossingRecord>,
}

/// Eigenvalues of a (nearly) unitary W. Bounded Schur iteration first; on
/// stalls, W is normal, so its eigenvectors are those of the Hermitian
/// H + αK with H = (W + W*)/2, K = (W − W*)/2i and a generic α.
fn unitary_eigenvalues(w: &CMat) -> Vec<Complex<f64>> {
    if let Some(s) = w.clone().try_schur(1e-14, 10_000) {
        if let Some(e) = s.eigenvalues() {
            return e.iter().copied().collect();
        }
    }
    let wh = w.adjoint();
    let h = (w + &wh).map(|z| z * 0.5);
    let kk = (w - &wh).map(|z| z * Complex::new(0.0, -0.5));
    let a = h + kk.map(|z| z * 0.613_274_811);
    let a = (&a + a.adjoint()).map(|z| z * 0.5);
    let v = a.symmetric_eigen().eigenvectors;
    (0..v.ncols())
        .map(|j| {
            let c = v.column(j);
            (c.adjoint() * w * c)[(0, 0)]
        })
        .collect()
}

fn eigen_phi_sum(w: &CMat, snap: f64) -> f64 {
    if w.nrows() == 0 {
        return 0.0;
    }
    let eig = unitary_eigenvalues(w);
    eig.iter()
        .map(|z| {
            let th = z.arg();
            if th.abs() < snap {
                0.0
            } else if th > 0.0 {
                th - TWO_PI
            } else {
                th
            }
        })
        .sum()
}

impl Counter<'_> {
    fn sample(&mut self, tau: f64) -> Sample {
        self.evaluations += 1;
        let s1 = souriau(&self.first.frame(tau));
        let s2 = souriau(&self.second.frame(tau));
        let w = s2 * s1.map(|z| z.conj());
        let phi = eigen_phi_sum(&w, self.opts.snap);
        Sample { tau, w, phi }
    }

    /// Count on [l, r] assuming W moves little; None when the step is too big.
    fn raw_count(&self, l: &Sample, r: &Sample) -> Option<i64> {
        if self.k == 0 {
            return Some(0);
        }
        let dw = (&r.w - &l.w).norm();
        if dw > 0.5 / (self.k as f64).sqrt() {
            return None;
        }
        let ratio = (&r.w * l.w.adjoint()).determinant();
        let c = (ratio.arg() + l.phi - r.phi) / TWO_PI;
        let n = c.round();
        if (c - n).abs() > 1e-3 {
            return None;
        }
        Some(n as i64)
    }

    fn segment(&mut self, l: Sample, r: Sample, depth: usize) -> Result<i64> {
        if let Some(n) = self.raw_count(&l, &r) {
            if n != 0 && self.opts.log_crossings {
                self.locate(l, r, n, 0)?;
            }
            return Ok(n);
        }
        if depth >= self.opts.max_depth {
            return Err(Error::NotConverged(format!(
                "Maslov sampling did not resolve [{:.6e}, {:.6e}]",
                l.tau, r.tau
            )));
        }
        let m = self.sample(0.5 * (l.tau + r.tau));
        let mid = Sample { tau: m.tau, w: m.w.clone(), phi: m.phi };
        Ok(self.segment(l, m, depth + 1)? + self.segment(mid, r, depth + 1)?)
    }

    fn locate(&mut self, l: Sample, r: Sample, n: i64, depth: usize) -> Result<()> {
        if r.tau - l.tau <= self.opts.locate_tol * (1.0 + l.tau.abs()) || depth > 80 {
            let tau = 0.5 * (l.tau + r.tau);
            let tau = if (tau - self.a).abs() <= self.opts.locate_tol * 10.0 {
                self.a
            } else if (tau - self.b).abs() <= self.opts.locate_tol * 10.0 {
                self.b
            } else {
                tau
            };
            self.record(tau, n);
            return Ok(());
        }
        let m = self.sample(0.5 * (l.tau + r.tau));
        let mid = Sample { tau: m.tau, w: m.w.clone(), phi: m.phi };
        let left = match self.raw_count(&l, &m) {
            Some(c) => c,
            None => {
                // The located interval only shrinks, so this cannot recur
                // indefinitely; fall back to recording at the midpoint.
                self.record(m.tau, n);
                return Ok(());
            }
        };
        let right = n - left;
        if left != 0 {
            self.locate(l, m, left, depth + 1)?;
        }
        if right != 0 {
            self.locate(mid, r, right, depth + 1)?;
        }
        Ok(())
    }

    fn record(&mut self, tau: f64, n: i64) {
        let z = self.second.frame(tau);
        let zf = self.first.frame(tau);
        let dim = frames_intersection_dim(&z, &zf, 1e-6).max(n.unsigned_abs() as usize);
        let mut rec = CrossingRecord {
            tau,
            intersection_dim: dim,
            m_plus: n.max(0) as usize,
            m_minus: (-n).max(0) as usize,
            form_eigenvalues: Vec::new(),
            contribution: n,
            regular: true,
        };
        if self.first.is_constant() {
            let form = self.second.form(tau).or_else(|| finite_difference_form(self.second, tau, self.a, self.b));
            if let Some(form) = form {
                let w = LagrangianFrame::from_orthonormal(zf);
                let (p, m, z0, vals) = crossing_form(&z, &form, &w, 1e-6);
                rec.regular = z0 == 0;
                rec.form_eigenvalues = vals;
                if p + m + z0 > 0 {
                    rec.intersection_dim = p + m + z0;
                }
            }
        }
        self.crossings.push(rec);
    }
}

/// μ(L₁, L₂; [a, b]).
pub fn maslov_pair(
    first: &dyn LagrangianPath,
    second: &dyn LagrangianPath,
    a: f64,
    b: f64,
    opts: &MaslovOptions,
) -> Result<MaslovResult> {
    let k = first.k();
    if second.k() != k {
        return Err(Error::InvalidInput("Lagrangian paths live in different dimensions".into()));
    }
    if !(a < b) {
        return Err(Error::InvalidInput(format!("empty interval [{a}, {b}]")));
    }
    let mut grid: Vec<f64> = (0..=opts.initial_samples.max(1))
        .map(|i| a + (b - a) * i as f64 / opts.initial_samples.max(1) as f64)
        .collect();
    grid.extend(first.knots(a, b).into_iter().filter(|&t| t > a && t < b));
    grid.extend(second.knots(a, b).into_iter().filter(|&t| t > a && t < b));
    grid.sort_by(f64::total_cmp);
    grid.dedup_by(|x, y| (*x - *y).abs() <= 1e-14 * (1.0 + y.abs()));
    *grid.last_mut().expect("grid has at least two nodes") = b;

    let mut counter =
        Counter { first, second, a, b, k, opts: *opts, evaluations: 0, crossings: Vec::new() };
    let mut total = 0;
    let mut prev = counter.sample(grid[0]);
    for &t in &grid[1..] {
        let next = counter.sample(t);
        let keep = Sample { tau: next.tau, w: next.w.clone(), phi: next.phi };
        total += counter.segment(prev, next, 0)?;
        prev = keep;
    }
    Ok(MaslovResult { index: total, crossings: counter.crossings, evaluations: counter.evaluations })
}

/// μ(W, Λ(τ); [a, b]) for a fixed Lagrangian W.
pub fn maslov_index(w: &LagrangianFrame, path: &dyn LagrangianPath, a: f64, b: f64, opts: &MaslovOptions) -> Result<MaslovResult> {
    maslov_pair(w, path, a, b, opts)
}

/// Unitary geodesic U(t) = U₀Q·diag(e^{itθ})·Q* from L₀ to L₁; `winding` adds
/// 2π·winding to the first angle, giving a second path with the same ends.
pub struct GeodesicPath {
    u0: CMat,
    q: CMat,
    theta: Vec<f64>,
}

impl GeodesicPath {
    pub fn new(l0: &LagrangianFrame, l1: &LagrangianFrame, winding: i32) -> Self {
        let u0 = l0.unitary();
        let u1 = l1.unitary();
        let k = u0.nrows();
        if k == 0 {
            return GeodesicPath { u0, q: CMat::zeros(0, 0), theta: Vec::new() };
        }
        let (q, t) = (u0.adjoint() * u1).schur().unpack();
        let mut theta: Vec<f64> = (0..k).map(|i| t[(i, i)].arg()).collect();
        theta[0] += TWO_PI * winding as f64;
        GeodesicPath { u0, q, theta }
    }
}

impl LagrangianPath for GeodesicPath {
    fn k(&self) -> usize {
        self.theta.len()
    }
    fn frame(&self, t: f64) -> Mat {
        let k = self.k();
        let d = CMat::from_diagonal(&nalgebra::DVector::from_iterator(
            k,
            self.theta.iter().map(|th| Complex::from_polar(1.0, th * t)),
        ));
        let u = &self.u0 * &self.q * d * self.q.adjoint();
        Mat::from_fn(2 * k, k, |i, j| if i < k { u[(i, j)].re } else { u[(i - k, j)].im })
    }
}

/// s(V₀, V₁; L₀, L₁) = μ(V₀, Λ) − μ(V₁, Λ) along a path Λ from L₀ to L₁,
/// evaluated on two non-homotopic connecting paths which must agree.
pub fn hormander_index(
    v0: &LagrangianFrame,
    v1: &LagrangianFrame,
    l0: &LagrangianFrame,
    l1: &LagrangianFrame,
    opts: &MaslovOptions,
) -> Result<i64> {
    let mut o = *opts;
    o.log_crossings = false;
    let mut values = Vec::new();
    for winding in [0, 1] {
        let path = GeodesicPath::new(l0, l1, winding);
        let m0 = maslov_index(v0, &path, 0.0, 1.0, &o)?.index;
        let m1 = maslov_index(v1, &path, 0.0, 1.0, &o)?.index;
        values.push(m0 - m1);
    }
    if values[0] != values[1] {
        return Err(Error::InvariantViolation(format!(
            "Hörmander index depends on the path ({} vs {})",
            values[0], values[1]
        )));
    }
    Ok(values[0])
}

/// Frames Z(τ) of γ(τ, τ₀)Λ₀ under Z′ = JB(τ)Z, re-orthonormalized after
/// every step and stored with dense output.
pub struct FlowFramePath<'a> {
    path: &'a dyn CoefficientPath,
    k: usize,
    tol: Tolerances,
    steps: Vec<Step>,
    lo: (f64, Vec<f64>),
    hi: (f64, Vec<f64>),
    pub tau_start: f64,
}

impl<'a> FlowFramePath<'a> {
    pub fn propagate(path: &'a dyn CoefficientPath, z0: &Mat, tau0: f64, tau1: f64, tol: Tolerances) -> Result<Self> {
        let k = path.dim() / 2;
        if z0.shape() != (2 * k, k) {
            return Err(Error::InvalidInput("initial frame does not match the coefficient path".into()));
        }
        let z = orthonormal_columns(z0).as_slice().to_vec();
        let mut fp = FlowFramePath {
            path,
            k,
            tol,
            steps: Vec::new(),
            lo: (tau0, z.clone()),
            hi: (tau0, z),
            tau_start: tau0,
        };
        fp.extend_to(tau1)?;
        Ok(fp)
    }

    pub fn span(&self) -> (f64, f64) {
        (self.lo.0, self.hi.0)
    }

    /// Extends the propagated range to include `tau`.
    pub fn extend_to(&mut self, tau: f64) -> Result<()> {
        if self.k == 0 {
            self.lo.0 = self.lo.0.min(tau);
            self.hi.0 = self.hi.0.max(tau);
            return Ok(());
        }
        let forward = tau > self.hi.0;
        if !forward && tau >= self.lo.0 {
            return Ok(());
        }
        let (t0, y0) = if forward { self.hi.clone() } else { self.lo.clone() };
        let n = 2 * self.k;
        let k = self.k;
        let j = j_matrix(k);
        let path = self.path;
        let rhs = move |t: f64, y: &[f64], dy: &mut [f64]| {
            let z = Mat::from_column_slice(n, k, y);
            dy.copy_from_slice((&j * path.eval(t) * z).as_slice());
        };
        let mut integ = Integrator::new(&rhs, t0, y0, self.tol);
        let mut new_steps = Vec::new();
        while integ.t() != tau {
            let step = integ.step_towards(tau)?;
            let z = orthonormal_columns(&Mat::from_column_slice(n, k, &step.y1));
            integ.set_state(z.as_slice().to_vec());
            new_steps.push(step);
        }
        let end = (integ.t(), integ.y().to_vec());
        if forward {
            self.steps.extend(new_steps);
            self.hi = end;
        } else {
            new_steps.reverse();
            new_steps.append(&mut self.steps);
            self.steps = new_steps;
            self.lo = end;
        }
        Ok(())
    }

    fn step_index(&self, tau: f64) -> Option<usize> {
        if self.steps.is_empty() {
            return None;
        }
        let lo = |s: &Step| s.t0.min(s.t1);
        let i = self.steps.partition_point(|s| lo(s) <= tau);
        Some(i.saturating_sub(1).min(self.steps.len() - 1))
    }

    pub fn frame_at(&self, tau: f64) -> Mat {
        let (n, k) = (2 * self.k, self.k);
        let tau = tau.clamp(self.lo.0, self.hi.0);
        match self.step_index(tau) {
            None => Mat::from_column_slice(n, k, &self.lo.1),
            Some(i) => orthonormal_columns(&Mat::from_column_slice(n, k, &self.steps[i].eval(tau))),
        }
    }

    pub fn lagrangian_at(&self, tau: f64) -> LagrangianFrame {
        LagrangianFrame::from_orthonormal(self.frame_at(tau))
    }

    pub fn coefficient_path(&self) -> &'a dyn CoefficientPath {
        self.path
    }
}

impl LagrangianPath for FlowFramePath<'_> {
    fn k(&self) -> usize {
        self.k
    }
    fn frame(&self, tau: f64) -> Mat {
        self.frame_at(tau)
    }
    fn form(&self, tau: f64) -> Option<Mat> {
        let z = self.frame_at(tau);
        Some(symmetrize(&(z.transpose() * self.path.eval(tau) * z)))
    }
    fn knots(&self, a: f64, b: f64) -> Vec<f64> {
        let mut out: Vec<f64> = self.steps.iter().map(|s| s.t0.max(s.t1)).filter(|&t| t > a && t < b).collect();
        // Very long step lists add nothing once steps are finer than the
        // sampling rule; thin them.
        if out.len() > 4000 {
            let stride = out.len() / 4000 + 1;
            out = out.into_iter().step_by(stride).collect();
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeteroclinicOptions {
    /// ‖B(τ) − B(±∞)‖₂ required at truncation.
    pub b_tol: f64,
    /// Required distance between subspaces started at successive truncations.
    pub cauchy_tol: f64,
    /// Residual of JB(+∞)-invariance required of V^u at the far end.
    pub invariance_tol: f64,
    /// Singular-value threshold for ν.
    pub nu_tol: f64,
    pub max_tau: f64,
    pub ode: Tolerances,
}

impl Default for HeteroclinicOptions {
    fn default() -> Self {
        HeteroclinicOptions {
            b_tol: 1e-8,
            cauchy_tol: 1e-8,
            invariance_tol: 1e-6,
            nu_tol: 1e-6,
            max_tau: 1e4,
            ode: Tolerances::default(),
        }
    }
}

/// First τ = ±T (T growing geometrically from 10⁻³) past which
/// ‖B(τ) − L‖₂ < b_tol.
pub fn truncation_point(path: &dyn CoefficientPath, limit: &Mat, sign: f64, opts: &HeteroclinicOptions) -> Result<f64> {
    let dev = |t: f64| spectral_norm(&(path.eval(t) - limit));
    let mut t = 1e-3;
    while t <= opts.max_tau {
        if dev(sign * t) < opts.b_tol && dev(sign * 1.25 * t) < opts.b_tol && dev(sign * 1.5 * t) < opts.b_tol {
            return Ok(sign * t);
        }
        t *= 1.25;
    }
    Err(Error::NotConverged(format!(
        "coefficient path does not approach its limit at {}∞",
        if sign < 0.0 { "−" } else { "+" }
    )))
}

fn limit(path: &dyn CoefficientPath, sign: f64) -> Result<Mat> {
    let (m, p) = path.limits();
    let l = if sign < 0.0 { m } else { p };
    l.ok_or_else(|| Error::Precondition("coefficient path declares no limit at this end".into()))
}

/// V^u (sign = −1) or V^s (sign = +1) propagated from the truncation point
/// towards `towards`, plus convergence evidence.
pub struct AsymptoticSubspace<'a> {
    pub flow: FlowFramePath<'a>,
    pub truncation: f64,
    pub b_residual: f64,
    /// Distance at `towards` between runs started at successive truncations.
    pub cauchy_distance: f64,
    /// Distance, at the truncation point, between the run started further
    /// out and the limiting invariant subspace.
    pub limit_distance: f64,
    pub splitting: HyperbolicSplitting,
}

fn asymptotic_subspace<'a>(
    path: &'a dyn CoefficientPath,
    sign: f64,
    towards: f64,
    opts: &HeteroclinicOptions,
) -> Result<AsymptoticSubspace<'a>> {
    let lim = limit(path, sign)?;
    let splitting = HyperbolicSplitting::new(&lim)?;
    if !splitting.hyperbolic {
        return Err(Error::Precondition(format!(
            "limit at {}∞ is not hyperbolic (gap {:.3e})",
            if sign < 0.0 { "−" } else { "+" },
            splitting.gap
        )));
    }
    let start = if sign < 0.0 {
        splitting.v_plus.clone().expect("hyperbolic")
    } else {
        splitting.v_minus.clone().expect("hyperbolic")
    };
    let mut trunc = truncation_point(path, &lim, sign, opts)?;
    if sign * trunc < sign * towards {
        trunc = towards;
    }
    let shift = 2.0 / splitting.gap.max(1e-3) + 1.0;
    let mut flow = FlowFramePath::propagate(path, &start, trunc, towards, opts.ode)?;
    let mut cauchy = f64::INFINITY;
    let mut limit_distance = f64::INFINITY;
    for _ in 0..8 {
        let further = trunc + sign * shift;
        let alt = FlowFramePath::propagate(path, &start, further, towards, opts.ode)?;
        cauchy = subspace_distance(&alt.frame_at(towards), &flow.frame_at(towards));
        limit_distance = subspace_distance(&alt.frame_at(trunc), &start);
        if cauchy < opts.cauchy_tol || sign * further > opts.max_tau {
            break;
        }
        trunc = further;
        flow = alt;
    }
    let b_residual = spectral_norm(&(path.eval(trunc) - &lim));
    Ok(AsymptoticSubspace { flow, truncation: trunc, b_residual, cauchy_distance: cauchy, limit_distance, splitting })
}

pub fn unstable_subspace<'a>(path: &'a dyn CoefficientPath, towards: f64, opts: &HeteroclinicOptions) -> Result<AsymptoticSubspace<'a>> {
    asymptotic_subspace(path, -1.0, towards, opts)
}

pub fn stable_subspace<'a>(path: &'a dyn CoefficientPath, towards: f64, opts: &HeteroclinicOptions) -> Result<AsymptoticSubspace<'a>> {
    asymptotic_subspace(path, 1.0, towards, opts)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceEvidence {
    pub b_residual_minus: f64,
    pub b_residual_plus: f64,
    pub unstable_cauchy: f64,
    pub stable_cauchy: f64,
    pub unstable_limit_distance: f64,
    pub stable_limit_distance: f64,
    pub end_invariance_residual: f64,
    pub end_transversality: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexReport {
    pub maslov: i64,
    pub nu: usize,
    pub morse: Option<i64>,
    pub against: String,
    pub crossings: Vec<CrossingRecord>,
    pub truncation: (f64, f64),
    pub convergence: ConvergenceEvidence,
    /// Whether the momentum block of B was positive definite on all samples.
    pub momentum_block_positive: bool,
}

fn momentum_block_positive(path: &dyn CoefficientPath, a: f64, b: f64) -> bool {
    let k = path.dim() / 2;
    if k == 0 {
        return true;
    }
    (0..=200).all(|i| {
        let t = a + (b - a) * i as f64 / 200.0;
        let m = path.eval(t).view((0, 0), (k, k)).into_owned();
        sym_eigen(&m).0[0] > 0.0
    })
}

fn invariance_residual(z: &Mat, a: &Mat) -> f64 {
    let az = a * z;
    let proj = z * (z.transpose() * &az);
    spectral_norm(&(az - proj))
}

/// μ(W, V^u(τ); (−∞, τ₀]) where W is `against`.
pub fn mu_tau0(path: &dyn CoefficientPath, against: &LagrangianFrame, tau0: f64, opts: &HeteroclinicOptions) -> Result<IndexReport> {
    let vu = unstable_subspace(path, tau0, opts)?;
    let (a, b) = (vu.truncation, tau0);
    let res = maslov_index(against, &vu.flow, a, b, &MaslovOptions::default())?;
    Ok(IndexReport {
        maslov: res.index,
        nu: 0,
        morse: None,
        against: frame_name(against),
        crossings: res.crossings,
        truncation: (a, b),
        convergence: ConvergenceEvidence {
            b_residual_minus: vu.b_residual,
            unstable_cauchy: vu.cauchy_distance,
            unstable_limit_distance: vu.limit_distance,
            end_transversality: transversality_margin(&vu.flow.frame_at(b), &against.frame),
            ..Default::default()
        },
        momentum_block_positive: momentum_block_positive(path, a, b),
    })
}

fn frame_name(w: &LagrangianFrame) -> String {
    let k = w.k();
    if w.distance(&LagrangianFrame::dirichlet(k)) < 1e-14 {
        "dirichlet".into()
    } else if w.distance(&LagrangianFrame::neumann(k)) < 1e-14 {
        "neumann".into()
    } else {
        "custom".into()
    }
}

/// (μ(B̂; ℝ) against `against`, ν(B̂)): V^u is carried from −∞ until it is
/// invariant under JB(+∞) and transversal to `against`.
pub fn mu_nu_against(path: &dyn CoefficientPath, against: &LagrangianFrame, opts: &HeteroclinicOptions) -> Result<IndexReport> {
    let vu = unstable_subspace(path, 0.0, opts)?;
    let vs = stable_subspace(path, 0.0, opts)?;
    let nu = intersection_dim(&vu.flow.lagrangian_at(0.0), &vs.flow.lagrangian_at(0.0), opts.nu_tol);

    let lim_plus = limit(path, 1.0)?;
    let a_plus = j_matrix(path.dim() / 2) * &lim_plus;
    let a_scale = spectral_norm(&a_plus).max(1.0);
    let mut flow = vu.flow;
    // Stop at the first converged point: a degenerate V^u carries solutions
    // decaying at +∞, which roundoff overtakes a few e-folds later.
    let mut end = truncation_point(path, &lim_plus, 1.0, opts)?.max(0.0);
    let step = 0.25 / vs.splitting.gap.max(1e-3);
    let (inv, trans) = loop {
        flow.extend_to(end)?;
        let z = flow.frame_at(end);
        let inv = invariance_residual(&z, &a_plus) / a_scale;
        let trans = transversality_margin(&z, &against.frame);
        if (inv < opts.invariance_tol && trans > 1e-3) || end > opts.max_tau {
            break (inv, trans);
        }
        end += step;
    };
    let start = vu.truncation;
    let res = maslov_index(against, &flow, start, end, &MaslovOptions::default())?;
    Ok(IndexReport {
        maslov: res.index,
        nu,
        morse: None,
        against: frame_name(against),
        crossings: res.crossings,
        truncation: (start, end),
        convergence: ConvergenceEvidence {
            b_residual_minus: vu.b_residual,
            b_residual_plus: vs.b_residual,
            unstable_cauchy: vu.cauchy_distance,
            stable_cauchy: vs.cauchy_distance,
            unstable_limit_distance: vu.limit_distance,
            stable_limit_distance: vs.limit_distance,
            end_invariance_residual: inv,
            end_transversality: trans,
        },
        momentum_block_positive: momentum_block_positive(path, start, end),
    })
}

pub fn mu_nu(path: &dyn CoefficientPath, opts: &HeteroclinicOptions) -> Result<IndexReport> {
    mu_nu_against(path, &LagrangianFrame::dirichlet(path.dim() / 2), opts)
}

/// μ(W, γ(t, t₁)W; [t₁, t₂]) for the flow γ of the path; `morse` is left
/// empty.
pub fn mu_span(path: &dyn CoefficientPath, against: &LagrangianFrame, t1: f64, t2: f64, tol: Tolerances) -> Result<IndexReport> {
    let flow = FlowFramePath::propagate(path, &against.frame, t1, t2, tol)?;
    let res = maslov_index(against, &flow, t1, t2, &MaslovOptions::default())?;
    Ok(IndexReport {
        maslov: res.index,
        nu: 0,
        morse: None,
        against: String::new(),
        crossings: res.crossings,
        truncation: (t1, t2),
        convergence: ConvergenceEvidence {
            end_transversality: transversality_margin(&flow.frame_at(t2), &against.frame),
            ..Default::default()
        },
        momentum_block_positive: momentum_block_positive(path, t1, t2),
    })
}

/// m⁻ on [t₁, t₂] as μ(V_D, γ(t, t₁)V_D) − n*, where n* = k.
pub fn morse_from_maslov(path: &dyn CoefficientPath, t1: f64, t2: f64, tol: Tolerances) -> Result<IndexReport> {
    let k = path.dim() / 2;
    let mut rep = mu_span(path, &LagrangianFrame::dirichlet(k), t1, t2, tol)?;
    let morse = rep.maslov - k as i64;
    if morse < 0 {
        return Err(Error::InvariantViolation(format!("negative Morse index {morse} from Maslov index {}", rep.maslov)));
    }
    rep.morse = Some(morse);
    rep.against = "dirichlet".into();
    Ok(rep)
}
