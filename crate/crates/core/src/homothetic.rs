//! Homothetic solutions: closed-form radial profiles in McGehee time, the
//! 2×2 block reduction of their linearization, block Maslov indices, the Morse
//! index certificate, and the logarithmic growth of the Morse index at a
//! spiral collision.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::central::{classify, CentralConfiguration, SpiralClass};
use crate::error::{Error, Result};
use crate::hamiltonian::{bhat_mcgehee, CoefficientPath, FnPath, HyperbolicSplitting};
use crate::linalg::{spectral_norm, symplectic_sum, Mat, Vector};
use crate::maslov::{
    hormander_index, maslov_index, mu_nu_against, mu_tau0, FlowFramePath, HeteroclinicOptions, IndexReport,
    LagrangianFrame, MaslovOptions,
};
use crate::nbody::{MassSystem, NormalizedConfiguration};
use crate::ode::Tolerances;

/// Coefficient of v² in the lower-right entry of Φ_{R₁}(B̂₁) obtained from
/// v′ = ½v² − b.
pub const R1_COEFF: f64 = 3.0 / 16.0;
/// Alternative coefficient kept as a regression case; the index is the same.
pub const R1_COEFF_ALT: f64 = 3.0 / 11.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EndKind {
    TotalCollision,
    ParabolicInfinity,
    HyperbolicInfinity,
}

/// Radial motion v′ = ½v² − b, r′ = rv with ½v² − b = rH₀.
///
/// H₀ < 0: apex at τ = 0, collisions at τ = ±∞. H₀ = 0: ejection with
/// v ≡ √(2b). H₀ > 0: ejection on τ ∈ (−∞, 0), hyperbolic escape as τ → 0⁻.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialProfile {
    pub b: f64,
    pub h0: f64,
}

fn odd_series(z: f64, alternating: bool) -> f64 {
    // Σ_{k≥1} (±1)^{k+1} z^{2k+1}/(2k+1)!
    let z2 = z * z;
    let mut term = z * z2 / 6.0;
    let mut sum = 0.0_f64;
    let mut k = 1;
    while term.abs() > 1e-18 * sum.abs().max(f64::MIN_POSITIVE) {
        sum += if alternating && k % 2 == 0 { -term } else { term };
        term *= z2 / (((2 * k + 2) * (2 * k + 3)) as f64);
        k += 1;
        if k > 60 {
            break;
        }
    }
    sum
}

/// K(c) with ∫ₓ^∞ sech³ = (8/3)e^{−3x}K(e^{−2x}) (hyperbolic = false) or the
/// same identity for csch³ (hyperbolic = true); K(0) = 1.
fn tail_factor(c: f64, hyperbolic: bool) -> f64 {
    if c == 0.0 {
        return 1.0;
    }
    let s = c.sqrt();
    let theta = if hyperbolic { s.atanh() } else { s.atan() };
    let z = 4.0 * theta;
    let g = if z < 1.0 {
        odd_series(z, !hyperbolic) / 4.0
    } else if hyperbolic {
        (z.sinh() - z) / 4.0
    } else {
        (z - z.sin()) / 4.0
    };
    3.0 * g / (8.0 * c * s)
}

impl RadialProfile {
    pub fn new(b: f64, h0: f64) -> Result<Self> {
        if !(b > 0.0) || !b.is_finite() || !h0.is_finite() {
            return Err(Error::InvalidInput(format!("homothetic profile needs b > 0 and finite H0 (b = {b}, H0 = {h0})")));
        }
        Ok(RadialProfile { b, h0 })
    }

    /// a = √(2b)/2.
    pub fn a(&self) -> f64 {
        (2.0 * self.b).sqrt() / 2.0
    }

    fn scale(&self) -> f64 {
        self.b / self.h0.abs()
    }

    pub fn ends(&self) -> (EndKind, EndKind) {
        if self.h0 < 0.0 {
            (EndKind::TotalCollision, EndKind::TotalCollision)
        } else if self.h0 == 0.0 {
            (EndKind::TotalCollision, EndKind::ParabolicInfinity)
        } else {
            (EndKind::TotalCollision, EndKind::HyperbolicInfinity)
        }
    }

    /// Upper end of the τ-domain: +∞, or 0 when H₀ > 0.
    pub fn tau_end(&self) -> f64 {
        if self.h0 > 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }

    pub fn v(&self, tau: f64) -> f64 {
        let w = (2.0 * self.b).sqrt();
        let x = self.a() * tau;
        if self.h0 < 0.0 {
            -w * x.tanh()
        } else if self.h0 == 0.0 {
            w
        } else {
            -w / x.tanh()
        }
    }

    pub fn r(&self, tau: f64) -> f64 {
        let x = self.a() * tau;
        if self.h0 < 0.0 {
            self.scale() / x.cosh().powi(2)
        } else if self.h0 == 0.0 {
            (2.0 * x).exp()
        } else {
            self.scale() / x.sinh().powi(2)
        }
    }

    pub fn v_limits(&self) -> (Option<f64>, Option<f64>) {
        let w = (2.0 * self.b).sqrt();
        if self.h0 < 0.0 {
            (Some(w), Some(-w))
        } else if self.h0 == 0.0 {
            (Some(w), Some(w))
        } else {
            (Some(w), None)
        }
    }

    pub fn energy_residual(&self, tau: f64) -> f64 {
        let v = self.v(tau);
        0.5 * v * v - self.b - self.r(tau) * self.h0
    }

    /// ln(t(τ) − T⁻), distance in Newtonian time from the collision at τ = −∞.
    pub fn ln_beta_minus(&self, tau: f64) -> f64 {
        let a = self.a();
        if self.h0 < 0.0 {
            self.ln_beta_plus(-tau)
        } else if self.h0 == 0.0 {
            3.0 * a * tau - (3.0 * a).ln()
        } else {
            let x = -a * tau;
            1.5 * self.scale().ln() - a.ln() + (8.0_f64 / 3.0).ln() - 3.0 * x + tail_factor((-2.0 * x).exp(), true).ln()
        }
    }

    /// ln(T⁺ − t(τ)) for H₀ < 0; NaN otherwise (T⁺ = +∞).
    pub fn ln_beta_plus(&self, tau: f64) -> f64 {
        if self.h0 >= 0.0 {
            return f64::NAN;
        }
        let a = self.a();
        let x = a * tau;
        let lead = 1.5 * self.scale().ln() - a.ln();
        if x >= 0.0 {
            lead + (8.0_f64 / 3.0).ln() - 3.0 * x + tail_factor((-2.0 * x).exp(), false).ln()
        } else {
            let sech = 1.0 / x.cosh();
            lead + (std::f64::consts::FRAC_PI_4 - 0.5 * (sech * x.tanh() + x.sinh().atan())).ln()
        }
    }

    /// Newtonian time: t(0) = 0 at the apex when H₀ < 0, otherwise T⁻ = 0.
    pub fn newton_time(&self, tau: f64) -> f64 {
        if self.h0 < 0.0 {
            let x = self.a() * tau;
            self.scale().powf(1.5) / (2.0 * self.a()) * (x.tanh() / x.cosh() + x.sinh().atan())
        } else {
            self.ln_beta_minus(tau).exp()
        }
    }

    /// (T⁻, T⁺) in the time origin of [`RadialProfile::newton_time`].
    pub fn collision_times(&self) -> (f64, f64) {
        if self.h0 < 0.0 {
            let tp = self.scale().powf(1.5) * std::f64::consts::FRAC_PI_4 / self.a();
            (-tp, tp)
        } else {
            (0.0, f64::INFINITY)
        }
    }

    /// τ with ln β₊(τ) = target, for H₀ < 0.
    pub fn tau_for_ln_beta_plus(&self, target: f64) -> Result<f64> {
        if self.h0 >= 0.0 {
            return Err(Error::Precondition("no collision at τ → +∞ for H0 ≥ 0".into()));
        }
        let f = |t: f64| self.ln_beta_plus(t) - target;
        let (mut lo, mut hi) = (-1.0 / self.a(), 1.0 / self.a());
        while f(lo) < 0.0 {
            lo *= 2.0;
            if lo < -1e6 {
                return Err(Error::InvalidInput(format!("ln β = {target} exceeds the orbit's span")));
            }
        }
        while f(hi) > 0.0 {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * (1.0 + mid.abs()) {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

pub fn b1_matrix(v: f64, b: f64) -> Mat {
    Mat::from_row_slice(2, 2, &[1.0, -0.75 * v, -0.75 * v, -2.0 * b])
}

pub fn lambda_matrix(v: f64, lambda: f64) -> Mat {
    Mat::from_row_slice(2, 2, &[1.0, 0.25 * v, 0.25 * v, -lambda])
}

fn profile_path(p: RadialProfile, dim: usize, kind: String, f: impl Fn(f64) -> Mat + Send + Sync + Clone + 'static) -> FnPath {
    let (vm, vp) = p.v_limits();
    let g = f.clone();
    FnPath::new(dim, kind, move |tau| f(p.v(tau))).with_limits(vm.map(&g), vp.map(&g))
}

/// τ ↦ B̂₁(τ) = [[1, −¾v], [−¾v, −2b]].
pub fn b1_path(p: RadialProfile) -> FnPath {
    let b = p.b;
    profile_path(p, 2, "homothetic-b1".into(), move |v| b1_matrix(v, b))
}

/// τ ↦ 𝓑_λ(τ) = [[1, ¼v], [¼v, −λ]].
pub fn lambda_path(p: RadialProfile, lambda: f64) -> FnPath {
    profile_path(p, 2, format!("homothetic-block({lambda})"), move |v| lambda_matrix(v, lambda))
}

/// Φ_{R₁}(B̂₁) = diag(1, −c·v² − 11b/4) with R₁ = [[1, −¾v], [0, 1]].
pub fn phi_r1_path(p: RadialProfile, coeff: f64) -> FnPath {
    let b = p.b;
    profile_path(p, 2, format!("phi-r1({coeff})"), move |v| {
        Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -coeff * v * v - 2.75 * b])
    })
}

/// Lower-right entry of Φ_{R₂}(𝓑_λ) with R₂ = [[1, ¼v], [0, 1]], written
/// through the energy identity.
pub fn phi_r2_entry(p: &RadialProfile, lambda: f64, tau: f64) -> f64 {
    -0.375 * p.r(tau) * p.h0 - p.b / 8.0 - lambda
}

/// Homothetic orbit over a central configuration (or a bare spectrum).
#[derive(Debug, Clone)]
pub struct HomotheticOrbit {
    pub profile: RadialProfile,
    /// Eigenvalues λᵢ of M⁻¹D²U|ℰ(s₀), ascending.
    pub lambdas: Vec<f64>,
    pub cc: Option<CentralConfiguration>,
    fiber: Option<NormalizedConfiguration>,
}

/// Sets the `kernel` eigenvalues of least magnitude to exactly zero. The
/// symmetry kernel (rotations) only survives roundoff to ~1e-13, and the sign
/// of that residue decides whether the 𝓑_λ block has μ = 1 or ν = 1.
fn snap_kernel(lambdas: &mut [f64], kernel: usize) {
    let mut order: Vec<usize> = (0..lambdas.len()).collect();
    order.sort_by(|&a, &b| lambdas[a].abs().total_cmp(&lambdas[b].abs()));
    for &i in order.iter().take(kernel) {
        lambdas[i] = 0.0;
    }
}

/// Û_xx rebuilt from the M̂-generalized eigen-decomposition with the kernel
/// eigenvalues snapped to zero.
fn snapped_hessian(u_hess: &Mat, m_hat: &Mat, kernel: usize) -> Result<Mat> {
    if kernel == 0 || u_hess.nrows() == 0 {
        return Ok(u_hess.clone());
    }
    let l = nalgebra::Cholesky::new(m_hat.clone())
        .ok_or_else(|| Error::Precondition("chart metric is not positive definite".into()))?
        .l();
    let l_inv = l.clone().try_inverse().ok_or_else(|| Error::Singular("chart metric factor".into()))?;
    let (mut vals, vecs) = crate::linalg::sym_eigen(&(&l_inv * u_hess * l_inv.transpose()));
    snap_kernel(&mut vals, kernel);
    let a = &vecs * Mat::from_diagonal(&Vector::from_vec(vals)) * vecs.transpose();
    Ok(crate::linalg::symmetrize(&(&l * a * l.transpose())))
}

impl HomotheticOrbit {
    pub fn from_cc(sys: &MassSystem, cc: &CentralConfiguration, h0: f64) -> Result<Self> {
        if !(cc.residual <= 1e-8) {
            return Err(Error::Precondition(format!(
                "central configuration residual {:.3e} is not converged",
                cc.residual
            )));
        }
        let mut nc = cc.chart.eval(sys, &Vector::zeros(cc.chart.dim()))?;
        let mut lambdas = cc.lambdas.clone();
        snap_kernel(&mut lambdas, cc.kernel_dim);
        nc.u_hess = snapped_hessian(&nc.u_hess, &nc.m_hat, cc.kernel_dim)?;
        Ok(HomotheticOrbit { profile: RadialProfile::new(nc.u_val, h0)?, lambdas, cc: Some(cc.clone()), fiber: Some(nc) })
    }

    /// Orbit described only by b = U(s₀) and the restricted spectrum.
    pub fn from_spectrum(b: f64, lambdas: &[f64], h0: f64) -> Result<Self> {
        let mut lambdas = lambdas.to_vec();
        if lambdas.iter().any(|l| !l.is_finite()) {
            return Err(Error::InvalidInput("non-finite eigenvalue".into()));
        }
        lambdas.sort_by(f64::total_cmp);
        Ok(HomotheticOrbit { profile: RadialProfile::new(b, h0)?, lambdas, cc: None, fiber: None })
    }

    pub fn b(&self) -> f64 {
        self.profile.b
    }

    pub fn h0(&self) -> f64 {
        self.profile.h0
    }

    pub fn ends(&self) -> (EndKind, EndKind) {
        self.profile.ends()
    }

    pub fn n_star(&self) -> usize {
        self.lambdas.len() + 1
    }

    pub fn spiral_class(&self, tol: f64) -> SpiralClass {
        classify(&self.lambdas, self.b(), tol)
    }

    /// Full B̂(τ) on the homothetic fiber. With a chart available this is the
    /// chart-coordinate matrix; otherwise the diagonal reassembly
    /// B̂₁ ⋄ 𝓑_λ₁ ⋄ ⋯. `shift` replaces Û_xx by Û_xx + shift·M̂ (λᵢ by λᵢ + shift).
    pub fn full_path(&self, shift: f64) -> FnPath {
        match &self.fiber {
            Some(nc) => {
                let mut nc = nc.clone();
                nc.u_hess += &nc.m_hat * shift;
                let zero = Vector::zeros(nc.x.len());
                let dim = 2 * (nc.x.len() + 1);
                profile_path(self.profile, dim, "homothetic-full".into(), move |v| bhat_mcgehee(&nc, v, &zero))
            }
            None => self.reassembled_path(shift),
        }
    }

    pub fn reassembled_path(&self, shift: f64) -> FnPath {
        let b = self.b();
        let lambdas: Vec<f64> = self.lambdas.iter().map(|l| l + shift).collect();
        let dim = 2 * (lambdas.len() + 1);
        profile_path(self.profile, dim, "homothetic-reassembled".into(), move |v| {
            let mut blocks = vec![b1_matrix(v, b)];
            blocks.extend(lambdas.iter().map(|&l| lambda_matrix(v, l)));
            let refs: Vec<&Mat> = blocks.iter().collect();
            symplectic_sum(&refs)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomotheticOptions {
    pub heteroclinic: HeteroclinicOptions,
    pub class_tol: f64,
    /// Shifts of λ (relative to b) used at the non-spiral boundary.
    pub boundary_shifts: [f64; 3],
}

impl Default for HomotheticOptions {
    fn default() -> Self {
        HomotheticOptions { heteroclinic: HeteroclinicOptions::default(), class_tol: 1e-8, boundary_shifts: [1e-2, 1e-3, 1e-4] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenBlock {
    pub lambda: f64,
    pub b: f64,
    pub mu: i64,
    pub nu: usize,
    pub truncation: (f64, f64),
    /// λ-shift actually used (non-zero only at the non-spiral boundary).
    pub shift: f64,
}

/// (μ, ν, report) for one block against `against`. H₀ ≤ 0 uses both ends;
/// H₀ > 0 uses μ(W, V^u; (−∞, τ₀]) on τ₀ → 0⁻ and requires the values to agree.
fn block_index(p: &RadialProfile, path: &FnPath, against: &LagrangianFrame, opts: &HeteroclinicOptions) -> Result<(i64, usize, IndexReport)> {
    if p.h0 <= 0.0 {
        let rep = mu_nu_against(path, against, opts)?;
        return Ok((rep.maslov, rep.nu, rep));
    }
    let mut last: Option<IndexReport> = None;
    for j in 0..4 {
        let tau0 = -(10f64.powi(-j)) / p.a();
        let rep = mu_tau0(path, against, tau0, opts)?;
        if rep.convergence.end_transversality < 1e-8 {
            return Err(Error::NotConverged(format!("V^u not transversal at τ₀ = {tau0:.3e}")));
        }
        if let Some(prev) = &last {
            if prev.maslov != rep.maslov {
                return Err(Error::InvariantViolation(format!(
                    "μ(B̂; τ₀) changes from {} to {} as τ₀ → 0⁻",
                    prev.maslov, rep.maslov
                )));
            }
        }
        last = Some(rep);
    }
    let rep = last.expect("four τ₀ values");
    Ok((rep.maslov, 0, rep))
}

/// μ(B̂₁) by crossing counting, on B̂₁ itself and on Φ_{R₁}(B̂₁) with both
/// coefficients. Returns the three values; each must vanish.
pub fn mu_b1_all(p: &RadialProfile, opts: &HeteroclinicOptions) -> Result<[i64; 3]> {
    let vd = LagrangianFrame::dirichlet(1);
    let paths = [b1_path(*p), phi_r1_path(*p, R1_COEFF), phi_r1_path(*p, R1_COEFF_ALT)];
    let mut out = [0; 3];
    for (o, path) in out.iter_mut().zip(&paths) {
        *o = block_index(p, path, &vd, opts)?.0;
    }
    if out != [0, 0, 0] {
        return Err(Error::InvariantViolation(format!("μ(B̂₁) = {out:?}, expected 0")));
    }
    Ok(out)
}

pub fn mu_b1(orbit: &HomotheticOrbit, opts: &HeteroclinicOptions) -> Result<i64> {
    Ok(mu_b1_all(&orbit.profile, opts)?[0])
}

fn lambda_block(p: &RadialProfile, lambda: f64, shift: f64, opts: &HeteroclinicOptions) -> Result<EigenBlock> {
    let path = lambda_path(*p, lambda + shift);
    let (mu, nu, rep) = block_index(p, &path, &LagrangianFrame::dirichlet(1), opts)?;
    Ok(EigenBlock { lambda, b: p.b, mu, nu, truncation: rep.truncation, shift })
}

/// μ(𝓑_λ; ℝ) and ν(𝓑_λ) for H₀ < 0.
pub fn mu_lambda(orbit: &HomotheticOrbit, lambda: f64, opts: &HeteroclinicOptions) -> Result<EigenBlock> {
    let p = orbit.profile;
    if p.h0 >= 0.0 {
        return Err(Error::Precondition("block indices on the full line need H0 < 0".into()));
    }
    if lambda <= -p.b / 8.0 {
        return Err(Error::SpiralRegime(format!(
            "λ = {lambda} ≤ −b/8 = {}; use the growth-rate pipeline",
            -p.b / 8.0
        )));
    }
    lambda_block(&p, lambda, 0.0, opts)
}

/// μ(V_N, V^u_λ; ℝ) for H₀ < 0.
pub fn neumann_index(orbit: &HomotheticOrbit, lambda: f64, opts: &HeteroclinicOptions) -> Result<i64> {
    let p = orbit.profile;
    if p.h0 >= 0.0 {
        return Err(Error::Precondition("block indices on the full line need H0 < 0".into()));
    }
    Ok(mu_nu_against(&lambda_path(p, lambda), &LagrangianFrame::neumann(1), opts)?.maslov)
}

/// s(V_D, V_N; V⁺(J𝓑_λ(−∞)), V⁺(J𝓑_λ(+∞))) for the tanh profile.
pub fn block_hormander(b: f64, lambda: f64) -> Result<i64> {
    let w = (2.0 * b).sqrt();
    let plus = |v: f64| -> Result<LagrangianFrame> {
        let split = HyperbolicSplitting::new(&lambda_matrix(v, lambda))?;
        let vp = split
            .v_plus
            .ok_or_else(|| Error::SpiralRegime(format!("J𝓑_λ not hyperbolic at λ = {lambda}")))?;
        LagrangianFrame::new(vp)
    };
    hormander_index(
        &LagrangianFrame::dirichlet(1),
        &LagrangianFrame::neumann(1),
        &plus(w)?,
        &plus(-w)?,
        &MaslovOptions::default(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MorseCertificate {
    pub morse: i64,
    /// #{λᵢ < 0} for H₀ < 0, 0 otherwise.
    pub formula: i64,
    pub h0: f64,
    pub b: f64,
    pub class: SpiralClass,
    pub mu_b1: i64,
    pub per_block: Vec<EigenBlock>,
    /// Index of the undecomposed B̂ (μ(B̂; ℝ), or the τ₀ → 0⁻ value for H₀ > 0).
    pub full_maslov: i64,
    pub full_nu: usize,
    /// #{|λᵢ| ≤ tol·b}.
    pub kernel_dim: usize,
    pub shift: f64,
    pub ends: (EndKind, EndKind),
}

fn morse_at_shift(orbit: &HomotheticOrbit, shift: f64, opts: &HomotheticOptions) -> Result<MorseCertificate> {
    let p = orbit.profile;
    let h = &opts.heteroclinic;
    let mu_b1 = mu_b1(orbit, h)?;
    let per_block: Vec<EigenBlock> =
        orbit.lambdas.par_iter().map(|&l| lambda_block(&p, l, shift, h)).collect::<Result<_>>()?;
    let full = orbit.full_path(shift);
    let (full_maslov, full_nu, _) = block_index(&p, &full, &LagrangianFrame::dirichlet(full.dim() / 2), h)?;
    let sum = mu_b1 + per_block.iter().map(|e| e.mu).sum::<i64>();
    let b = p.b;
    let formula = if p.h0 < 0.0 { orbit.lambdas.iter().filter(|&&l| l < -opts.class_tol * b).count() as i64 } else { 0 };
    let kernel_dim = orbit.lambdas.iter().filter(|l| l.abs() <= opts.class_tol * b).count();
    if sum != full_maslov {
        return Err(Error::InvariantViolation(format!(
            "block sum {sum} differs from the undecomposed index {full_maslov}"
        )));
    }
    let block_nu: usize = per_block.iter().map(|e| e.nu).sum();
    if block_nu != full_nu {
        return Err(Error::InvariantViolation(format!("block ν sum {block_nu} differs from ν(B̂) = {full_nu}")));
    }
    if sum != formula {
        return Err(Error::InvariantViolation(format!("crossing count {sum} differs from the spectral count {formula}")));
    }
    Ok(MorseCertificate {
        morse: sum,
        formula,
        h0: p.h0,
        b,
        class: orbit.spiral_class(opts.class_tol),
        mu_b1,
        per_block,
        full_maslov,
        full_nu,
        kernel_dim,
        shift,
        ends: p.ends(),
    })
}

/// Morse index of the whole homothetic solution by crossing counting, with
/// the block decomposition cross-checked against the undecomposed system and
/// the spectral count. Spiral configurations are refused; boundary ones are
/// evaluated at three decreasing λ-shifts which must agree.
pub fn homothetic_morse(orbit: &HomotheticOrbit, opts: &HomotheticOptions) -> Result<MorseCertificate> {
    match orbit.spiral_class(opts.class_tol) {
        SpiralClass::Spiral => Err(Error::SpiralRegime(format!(
            "λ₁ = {} < −U/8 = {}: the Morse index is infinite; use the growth-rate pipeline",
            orbit.lambdas[0],
            -orbit.b() / 8.0
        ))),
        SpiralClass::StrictNonSpiral => morse_at_shift(orbit, 0.0, opts),
        SpiralClass::NonSpiralBoundary => {
            let certs: Vec<MorseCertificate> = opts
                .boundary_shifts
                .iter()
                .map(|s| morse_at_shift(orbit, s * orbit.b(), opts))
                .collect::<Result<_>>()?;
            if certs.windows(2).any(|w| w[0].morse != w[1].morse) {
                return Err(Error::InvariantViolation(format!(
                    "boundary perturbation not stable: {:?}",
                    certs.iter().map(|c| c.morse).collect::<Vec<_>>()
                )));
            }
            let mut last = certs.into_iter().last().expect("three shifts");
            last.class = SpiralClass::NonSpiralBoundary;
            Ok(last)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthOptions {
    pub epsilon: f64,
    /// τ₁ of the left window end (0 is the apex).
    pub tau1: f64,
    pub ode: Tolerances,
    pub class_tol: f64,
}

impl Default for GrowthOptions {
    fn default() -> Self {
        GrowthOptions { epsilon: 1e-3, tau1: 0.0, ode: Tolerances::default(), class_tol: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthSample {
    pub tau2: f64,
    pub t2: f64,
    pub beta: f64,
    pub ln_beta: f64,
    /// m⁻(q; t₁, t₂).
    pub morse: i64,
    pub ratio: f64,
    /// m⁻(q; t_ε, t₂) and its comparison bounds; None while τ₂ ≤ τ_ε.
    pub morse_eps: Option<i64>,
    pub sandwich_lower: Option<i64>,
    pub sandwich_upper: Option<i64>,
    pub sandwich_ok: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub u: f64,
    pub lambdas: Vec<f64>,
    pub spiral_count: usize,
    pub boundary_count: usize,
    /// (1/(3√2π))·Σ √(−1/8 − λᵢ/U) over spiral λᵢ.
    pub target: f64,
    /// Same sum with lim τ/|ln β| = 2/(3√(2U)) for r′ = rv, dt = r^{3/2}dτ.
    pub target_time_map: f64,
    pub epsilon: f64,
    pub epsilon_max: f64,
    pub tau_eps: f64,
    pub tau1: f64,
    pub t1: f64,
    /// Asymptotic ratio bounds from the comparison systems, in the
    /// normalisation of `target`: (Σ√(−f⁻/U), Σ√(−f⁺/U))/(3√2π).
    pub ratio_bounds: (f64, f64),
    pub samples: Vec<GrowthSample>,
}

/// f^±(ε) = v*²/16 + (1 ± ε)(λ ∓ ε): c″ = f c for the block
/// [[1 ± ε, v*/4], [v*/4, −λ ± ε]] with v*² = 2U.
pub fn comparison_f(u: f64, lambda: f64, eps: f64, upper: bool) -> f64 {
    let s = if upper { 1.0 } else { -1.0 };
    u / 8.0 + (1.0 + s * eps) * (lambda - s * eps)
}

/// Largest admissible ε for the comparison sandwich.
pub fn epsilon_bound(u: f64, lambdas: &[f64], tol: f64) -> f64 {
    let mut bound = f64::INFINITY;
    let spiral: Vec<f64> = lambdas.iter().copied().filter(|&l| l < -u / 8.0 - tol).collect();
    if let Some(&ll) = spiral.last() {
        bound = bound.min(-ll / 2.0 + 0.5 - 0.5 * ((ll + 1.0).powi(2) + u / 2.0).sqrt());
    }
    if let Some(&ln) = lambdas.iter().find(|&&l| l > -u / 8.0 + tol) {
        bound = bound.min(ln / 2.0 - 0.5 + 0.5 * ((ln + 1.0).powi(2) + u / 2.0).sqrt());
    }
    bound
}

/// Measured m⁻(q; t₁, t₂)/|ln β(t₂)| along a schedule of ln β targets for the
/// collision at τ → +∞ of a negative-energy homothetic orbit, together with
/// the integer comparison bounds at every sample.
pub fn growth_rate(orbit: &HomotheticOrbit, ln_beta_schedule: &[f64], opts: &GrowthOptions) -> Result<GrowthReport> {
    let p = orbit.profile;
    if p.h0 >= 0.0 {
        return Err(Error::Precondition("growth rate is measured at the collision τ → +∞ (needs H0 < 0)".into()));
    }
    let u = p.b;
    let tol = opts.class_tol * u;
    let spiral: Vec<f64> = orbit.lambdas.iter().copied().filter(|&l| l < -u / 8.0 - tol).collect();
    let boundary: Vec<f64> = orbit.lambdas.iter().copied().filter(|&l| (l + u / 8.0).abs() <= tol).collect();
    if spiral.is_empty() {
        return Err(Error::Precondition("collision end is not spiral (no λ < −U/8)".into()));
    }
    let eps = opts.epsilon;
    let eps_max = epsilon_bound(u, &orbit.lambdas, tol);
    if !(eps > 0.0 && eps < eps_max) {
        return Err(Error::Precondition(format!("ε = {eps} outside (0, {eps_max:.6})")));
    }
    let c = 1.0 / (3.0 * 2f64.sqrt() * std::f64::consts::PI);
    let target = c * spiral.iter().map(|l| (-0.125 - l / u).sqrt()).sum::<f64>();
    let f_sum = |set: &[f64], upper: bool| set.iter().map(|&l| (-comparison_f(u, l, eps, upper) / u).sqrt()).sum::<f64>();
    let upper_set: Vec<f64> = spiral.iter().chain(boundary.iter()).copied().collect();
    let ratio_bounds = (c * f_sum(&spiral, false), c * f_sum(&upper_set, true));

    let diag = orbit.reassembled_path(0.0);
    let b_inf = diag.limits().1.expect("H0 < 0 has a limit at +∞");
    let dev = |t: f64| spectral_norm(&(diag.eval(t) - &b_inf));
    let (mut lo, mut hi) = (0.0_f64, 1.0 / p.a());
    while dev(hi) > eps {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if dev(mid) > eps {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let tau_eps = hi;
    let tau1 = opts.tau1;

    let taus: Vec<f64> = ln_beta_schedule.iter().map(|&l| p.tau_for_ln_beta_plus(l)).collect::<Result<_>>()?;
    if let Some(bad) = taus.iter().find(|&&t| t <= tau1) {
        return Err(Error::InvalidInput(format!("schedule reaches τ₂ = {bad:.6} ≤ τ₁ = {tau1:.6}")));
    }
    let tau_max = taus.iter().copied().fold(tau1.max(tau_eps), f64::max);
    let full = orbit.full_path(0.0);
    let k = full.dim() / 2;
    let vd = LagrangianFrame::dirichlet(k);
    let (flow1, flow_eps) = rayon::join(
        || FlowFramePath::propagate(&full, &vd.frame, tau1, tau_max, opts.ode),
        || FlowFramePath::propagate(&full, &vd.frame, tau_eps, tau_max, opts.ode),
    );
    let (flow1, flow_eps) = (flow1?, flow_eps?);
    let mopts = MaslovOptions { log_crossings: false, ..MaslovOptions::default() };
    let (_, t_plus) = p.collision_times();
    let samples: Vec<GrowthSample> = taus
        .par_iter()
        .zip(ln_beta_schedule.par_iter())
        .map(|(&tau2, &ln_beta)| -> Result<GrowthSample> {
            let m1 = maslov_index(&vd, &flow1, tau1, tau2, &mopts)?.index - k as i64;
            let me = if tau2 > tau_eps {
                Some(maslov_index(&vd, &flow_eps, tau_eps, tau2, &mopts)?.index - k as i64)
            } else {
                None
            };
            if m1 < 0 || me.is_some_and(|m| m < 0) {
                return Err(Error::InvariantViolation(format!("negative Morse index at τ₂ = {tau2}")));
            }
            let count = |set: &[f64], upper: bool| -> i64 {
                set.iter()
                    .map(|&l| ((-comparison_f(u, l, eps, upper)).sqrt() * (tau2 - tau_eps) / std::f64::consts::PI).floor() as i64)
                    .sum()
            };
            let bounds = me.map(|_| (count(&spiral, false), count(&upper_set, true)));
            let beta = ln_beta.exp();
            Ok(GrowthSample {
                tau2,
                t2: t_plus - beta,
                beta,
                ln_beta,
                morse: m1,
                ratio: m1 as f64 / ln_beta.abs(),
                morse_eps: me,
                sandwich_lower: bounds.map(|b| b.0),
                sandwich_upper: bounds.map(|b| b.1),
                sandwich_ok: me.zip(bounds).map(|(m, (lo, hi))| lo <= m && m <= hi),
            })
        })
        .collect::<Result<_>>()?;
    Ok(GrowthReport {
        u,
        lambdas: orbit.lambdas.clone(),
        spiral_count: spiral.len(),
        boundary_count: boundary.len(),
        target,
        target_time_map: 2.0 * target,
        epsilon: eps,
        epsilon_max: eps_max,
        tau_eps,
        tau1,
        t1: p.newton_time(tau1),
        ratio_bounds,
        samples,
    })
}

/// ln β values β₀·ρ^j, j = 0..count, kept in log form.
pub fn geometric_schedule(beta0: f64, ratio: f64, count: usize) -> Result<Vec<f64>> {
    if !(beta0 > 0.0 && ratio > 0.0 && ratio < 1.0 && count > 0) {
        return Err(Error::InvalidInput("geometric schedule needs β₀ > 0, 0 < ratio < 1, count ≥ 1".into()));
    }
    Ok((0..count).map(|j| beta0.ln() + j as f64 * ratio.ln()).collect())
}
