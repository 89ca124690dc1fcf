//! Brute-force Morse index: P1 finite elements for the second variation
//!
//!   I(y) = ∫ (y′ − Qy)ᵀP⁻¹(y′ − Qy) − yᵀRy dt,  y ∈ H¹₀(t₁, t₂),
//!
//! of the linear Hamiltonian system with B = [[P, Q], [Qᵀ, R]] (momenta
//! first). Inertia is read off a block LDLᵀ factorization of the block
//! tridiagonal stiffness matrix (Sylvester's law), shifted to count
//! eigenvalues below a threshold.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::{CoefficientPath, FnPath};
use crate::homothetic::RadialProfile;
use crate::linalg::{sym_eigen, symmetrize, Mat};
use crate::maslov::{morse_from_maslov, CrossingRecord};
use crate::nbody::MassSystem;
use crate::ode::Tolerances;

const GAUSS3: [(f64, f64); 3] = [
    (0.112_701_665_379_258_3, 5.0 / 18.0),
    (0.5, 8.0 / 18.0),
    (0.887_298_334_620_741_7, 5.0 / 18.0),
];

/// Assembled form on the N − 1 interior nodes, as diagonal blocks D_i and
/// sub-diagonal blocks C_i = A[i+1, i].
#[derive(Debug, Clone)]
pub struct IndexForm {
    pub window: (f64, f64),
    pub n_elements: usize,
    pub k: usize,
    pub diag: Vec<Mat>,
    pub off: Vec<Mat>,
    /// ‖A‖∞ (max absolute row sum).
    pub norm: f64,
}

impl IndexForm {
    pub fn size(&self) -> usize {
        self.k * self.diag.len()
    }

    pub fn to_dense(&self) -> Mat {
        let (k, n) = (self.k, self.size());
        let mut a = Mat::zeros(n, n);
        for (i, d) in self.diag.iter().enumerate() {
            a.view_mut((i * k, i * k), (k, k)).copy_from(d);
        }
        for (i, c) in self.off.iter().enumerate() {
            a.view_mut(((i + 1) * k, i * k), (k, k)).copy_from(c);
            a.view_mut((i * k, (i + 1) * k), (k, k)).copy_from(&c.transpose());
        }
        a
    }

    /// Number of eigenvalues of A − σI that are negative.
    pub fn count_below(&self, sigma: f64) -> usize {
        let mut shift = sigma;
        for attempt in 0..8 {
            if let Some(c) = self.try_count_below(shift) {
                return c;
            }
            // A pivot block was numerically singular; move the shift by a
            // negligible relative amount and refactor.
            shift = sigma + (attempt + 1) as f64 * 1e-13 * self.norm.max(1.0);
        }
        self.try_count_below(shift).unwrap_or(usize::MAX)
    }

    fn try_count_below(&self, sigma: f64) -> Option<usize> {
        let k = self.k;
        let eye = Mat::identity(k, k);
        let mut count = 0;
        let mut prev_inv: Option<Mat> = None;
        let tiny = 1e-14 * self.norm.max(f64::MIN_POSITIVE);
        for (i, d) in self.diag.iter().enumerate() {
            let mut s = d - &eye * sigma;
            if let Some(pinv) = &prev_inv {
                let c = &self.off[i - 1];
                s -= c * pinv * c.transpose();
            }
            let s = symmetrize(&s);
            let (vals, vecs) = sym_eigen(&s);
            if vals.iter().any(|v| v.abs() <= tiny) {
                return None;
            }
            count += vals.iter().filter(|&&v| v < 0.0).count();
            let inv_diag = Mat::from_diagonal(&nalgebra::DVector::from_iterator(k, vals.iter().map(|v| 1.0 / v)));
            prev_inv = Some(&vecs * inv_diag * vecs.transpose());
        }
        Some(count)
    }
}

/// FEM matrix of I(y) on `window` with `n` uniform P1 elements and 3-point
/// Gauss quadrature.
pub fn assemble(path: &dyn CoefficientPath, window: (f64, f64), n: usize) -> Result<IndexForm> {
    let (t1, t2) = window;
    if !(t1 < t2) || n < 2 {
        return Err(Error::InvalidInput(format!("window [{t1}, {t2}] with {n} elements")));
    }
    let (lo, hi) = path.domain();
    if !(t1 > lo && t2 < hi) {
        return Err(Error::Singular(format!(
            "window [{t1}, {t2}] touches the end of the trajectory's domain ({lo}, {hi})"
        )));
    }
    let k = path.dim() / 2;
    let h = (t2 - t1) / n as f64;
    let elements: Vec<Mat> = (0..n)
        .into_par_iter()
        .map(|e| -> Result<Mat> {
            let mut el = Mat::zeros(2 * k, 2 * k);
            for &(s, w) in &GAUSS3 {
                let t = t1 + (e as f64 + s) * h;
                let b = path.eval(t);
                let p = b.view((0, 0), (k, k)).into_owned();
                let q = b.view((0, k), (k, k)).into_owned();
                let r = b.view((k, k), (k, k)).into_owned();
                let pinv = symmetrize(&p).cholesky().map(|c| c.inverse()).ok_or_else(|| {
                    Error::Precondition(format!("momentum block not positive definite at t = {t}"))
                })?;
                // w = y′ − Qy = Σ_a G_a Y_a with G_a = φ_a′I − φ_a Q.
                let phi = [1.0 - s, s];
                let dphi = [-1.0 / h, 1.0 / h];
                let g: Vec<Mat> = (0..2).map(|a| Mat::identity(k, k) * dphi[a] - &q * phi[a]).collect();
                for a in 0..2 {
                    for c in 0..2 {
                        let blk = g[a].transpose() * &pinv * &g[c] - &r * (phi[a] * phi[c]);
                        let mut view = el.view_mut((a * k, c * k), (k, k));
                        view += blk * (w * h);
                    }
                }
            }
            Ok(el)
        })
        .collect::<Result<_>>()?;
    let m = n - 1;
    let mut diag = vec![Mat::zeros(k, k); m];
    let mut off = vec![Mat::zeros(k, k); m.saturating_sub(1)];
    for (e, el) in elements.iter().enumerate() {
        // Element e joins nodes e and e + 1; interior node j is global j + 1.
        let left = e.checked_sub(1);
        let right = if e < m { Some(e) } else { None };
        if let Some(i) = left {
            diag[i] += el.view((0, 0), (k, k));
        }
        if let Some(j) = right {
            diag[j] += el.view((k, k), (k, k));
        }
        if let (Some(i), Some(_)) = (left, right) {
            off[i] += el.view((k, 0), (k, k));
        }
    }
    let diag: Vec<Mat> = diag.iter().map(symmetrize).collect();
    let mut norm = 0.0_f64;
    for i in 0..m {
        for r in 0..k {
            let mut row: f64 = diag[i].row(r).iter().map(|x| x.abs()).sum();
            if i > 0 {
                row += off[i - 1].row(r).iter().map(|x| x.abs()).sum::<f64>();
            }
            if i + 1 < m {
                row += off[i].column(r).iter().map(|x| x.abs()).sum::<f64>();
            }
            norm = norm.max(row);
        }
    }
    Ok(IndexForm { window, n_elements: n, k, diag, off, norm })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormCount {
    /// Eigenvalues below −neg_rel·‖A‖∞.
    pub negative: usize,
    /// Eigenvalues in (−zero_rel·‖A‖∞, zero_rel·‖A‖∞).
    pub near_zero: usize,
}

pub fn negative_count(form: &IndexForm, neg_rel: f64, zero_rel: f64) -> FormCount {
    let negative = form.count_below(-neg_rel * form.norm);
    let z = zero_rel * form.norm;
    let near_zero = form.count_below(z).saturating_sub(form.count_below(-z));
    FormCount { negative, near_zero }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleOptions {
    pub neg_rel: f64,
    pub zero_rel: f64,
    /// Further doublings allowed after the given schedule if the count has
    /// not stabilized.
    pub max_extra_refinements: usize,
    pub ode: Tolerances,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions { neg_rel: 1e-10, zero_rel: 1e-8, max_extra_refinements: 3, ode: Tolerances::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Fail,
    Deferred,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FemLevel {
    pub n: usize,
    pub negative: usize,
    pub near_zero: usize,
    pub norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub verdict: Verdict,
    pub window: (f64, f64),
    pub k: usize,
    pub levels: Vec<FemLevel>,
    pub fem_count: Option<usize>,
    pub maslov: i64,
    pub maslov_morse: i64,
    pub crossings: Vec<CrossingRecord>,
    pub reason: String,
}

/// FEM count at each refinement; stabilized when the last three agree and
/// none of them has an eigenvalue inside the near-zero band.
pub fn fem_levels(path: &dyn CoefficientPath, window: (f64, f64), refine: &[usize], opts: &OracleOptions) -> Result<(Vec<FemLevel>, Option<usize>)> {
    if refine.is_empty() {
        return Err(Error::InvalidInput("empty refinement schedule".into()));
    }
    let level = |n: usize| -> Result<FemLevel> {
        let form = assemble(path, window, n)?;
        let c = negative_count(&form, opts.neg_rel, opts.zero_rel);
        Ok(FemLevel { n, negative: c.negative, near_zero: c.near_zero, norm: form.norm })
    };
    let mut levels: Vec<FemLevel> = refine.par_iter().map(|&n| level(n)).collect::<Result<_>>()?;
    let stable = |ls: &[FemLevel]| -> Option<usize> {
        if ls.len() < 3 {
            return None;
        }
        let tail = &ls[ls.len() - 3..];
        (tail.iter().all(|l| l.negative == tail[0].negative && l.near_zero == 0)).then_some(tail[0].negative)
    };
    let mut extra = 0;
    while stable(&levels).is_none() && extra < opts.max_extra_refinements {
        let n = 2 * levels.last().expect("non-empty").n;
        levels.push(level(n)?);
        extra += 1;
    }
    let s = stable(&levels);
    Ok((levels, s))
}

/// Stabilized FEM count against μ(V_D, γ(t, t₁)V_D; [t₁, t₂]) − k.
pub fn compare(path: &dyn CoefficientPath, window: (f64, f64), refine: &[usize], opts: &OracleOptions) -> Result<Comparison> {
    let k = path.dim() / 2;
    let (levels, fem) = fem_levels(path, window, refine, opts)?;
    let rep = morse_from_maslov(path, window.0, window.1, opts.ode)?;
    let (maslov, crossings) = (rep.maslov, rep.crossings);
    let maslov_morse = maslov - k as i64;
    let near_zero = levels.iter().rev().take(3).any(|l| l.near_zero > 0);
    let (verdict, reason) = match fem {
        Some(c) if c as i64 == maslov_morse => (Verdict::Pass, "stabilized count matches".to_string()),
        Some(c) => (Verdict::Fail, format!("stabilized FEM count {c} differs from μ − k = {maslov_morse}")),
        None if near_zero => {
            (Verdict::Deferred, "near-zero eigenvalue at the finest levels: window end at or near a conjugate point".into())
        }
        None => (Verdict::Deferred, "FEM count did not stabilize over three consecutive refinements".into()),
    };
    Ok(Comparison { verdict, window, k, levels, fem_count: fem, maslov, maslov_morse, crossings, reason })
}

/// B(t) = [[I, 0], [0, −r(t)⁻³·EᵀD²U(s₀)E]] along the homothetic solution
/// q(t) = r(t)s₀ in Newtonian time, in M-orthonormal reduced coordinates.
/// Defined on the open interval between the solution's collision or escape
/// times.
pub fn homothetic_newton_path(sys: &MassSystem, s0: &crate::linalg::Vector, profile: RadialProfile) -> Result<FnPath> {
    let e = &sys.reduced_basis;
    let hess = symmetrize(&(e.transpose() * sys.hessian(s0)? * e));
    let k = hess.nrows();
    let (t_lo, t_hi) = profile.collision_times();
    let tau_of = move |t: f64| -> f64 {
        let (mut lo, mut hi) = (-1.0, if profile.h0 > 0.0 { -1e-300 } else { 1.0 });
        while profile.newton_time(lo) > t {
            lo *= 2.0;
        }
        while profile.h0 <= 0.0 && profile.newton_time(hi) < t {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if profile.newton_time(mid) < t {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * (1.0 + mid.abs()) {
                break;
            }
        }
        0.5 * (lo + hi)
    };
    Ok(FnPath::new(2 * k, "newton-homothetic", move |t| {
        let r = profile.r(tau_of(t));
        let mut b = Mat::zeros(2 * k, 2 * k);
        b.view_mut((0, 0), (k, k)).fill_with_identity();
        b.view_mut((k, k), (k, k)).copy_from(&(&hess * (-1.0 / (r * r * r))));
        b
    })
    .with_domain(t_lo, t_hi))
}
