//! Random instances shared by the property, axiom and acceptance tests.
#![allow(dead_code)]

use nalgebra::Complex;
use nbody_maslov::hamiltonian::TrigPath;
use nbody_maslov::linalg::{j_matrix, symmetrize, CMat, Mat};
use nbody_maslov::maslov::{
    hormander_index, intersection_dim, maslov_index, maslov_pair, morse_from_maslov, FlowFramePath,
    FnLagrangianPath, LagrangianFrame, MaslovOptions,
};
use nbody_maslov::ode::Tolerances;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = std::result::Result<(), String>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; rand_distr is not worth a dependency here.
    let u: f64 = rng.gen_range(f64::EPSILON..1.0);
    let v: f64 = rng.gen();
    (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
}

pub fn random_symmetric(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Mat {
    let a = Mat::from_fn(n, n, |_, _| gauss(rng) * scale);
    symmetrize(&a)
}

pub fn random_psd(rng: &mut ChaCha8Rng, n: usize, rank: usize, scale: f64) -> Mat {
    let g = Mat::from_fn(n, rank, |_, _| gauss(rng) * scale);
    &g * g.transpose()
}

pub fn random_hermitian(rng: &mut ChaCha8Rng, k: usize, scale: f64) -> CMat {
    let a = CMat::from_fn(k, k, |_, _| Complex::new(gauss(rng), gauss(rng)) * scale);
    (&a + a.adjoint()).map(|z| z * 0.5)
}

pub fn random_unitary(rng: &mut ChaCha8Rng, k: usize) -> CMat {
    let a = CMat::from_fn(k, k, |_, _| Complex::new(gauss(rng), gauss(rng)));
    a.qr().q()
}

/// [Re U; Im U] for a unitary U.
pub fn unitary_frame(u: &CMat) -> Mat {
    let k = u.nrows();
    Mat::from_fn(2 * k, k, |i, j| if i < k { u[(i, j)].re } else { u[(i - k, j)].im })
}

pub fn random_lagrangian(rng: &mut ChaCha8Rng, k: usize) -> LagrangianFrame {
    LagrangianFrame::from_orthonormal(unitary_frame(&random_unitary(rng, k)))
}

/// exp(iH) for Hermitian H.
pub fn exp_i(h: &CMat) -> CMat {
    let eig = h.clone().symmetric_eigen();
    let d = CMat::from_diagonal(&nalgebra::DVector::from_iterator(
        h.nrows(),
        eig.eigenvalues.iter().map(|&t| Complex::from_polar(1.0, t)),
    ));
    &eig.eigenvectors * d * eig.eigenvectors.adjoint()
}

/// Λ(t) = U₀·exp(i(t H₁ + s·t(1 − t) H₂)), t ∈ [0, 1]; every s gives the same
/// endpoints.
#[derive(Clone)]
pub struct UnitaryFamily {
    pub u0: CMat,
    pub h1: CMat,
    pub h2: CMat,
}

impl UnitaryFamily {
    pub fn random(rng: &mut ChaCha8Rng, k: usize) -> Self {
        UnitaryFamily { u0: random_unitary(rng, k), h1: random_hermitian(rng, k, 2.0), h2: random_hermitian(rng, k, 2.0) }
    }

    pub fn k(&self) -> usize {
        self.u0.nrows()
    }

    pub fn frame(&self, s: f64, t: f64) -> Mat {
        let h = self.h1.map(|z| z * t) + self.h2.map(|z| z * (s * t * (1.0 - t)));
        unitary_frame(&(&self.u0 * exp_i(&h)))
    }

    pub fn lagrangian(&self, s: f64, t: f64) -> LagrangianFrame {
        LagrangianFrame::from_orthonormal(self.frame(s, t))
    }

    pub fn path(&self, s: f64) -> FnLagrangianPath<'_> {
        FnLagrangianPath::new(self.k(), move |t| self.frame(s, t))
    }
}

/// exp(A) by scaling and squaring with a Taylor core.
pub fn expm(a: &Mat) -> Mat {
    let norm = a.norm();
    let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let b = a / 2f64.powi(s);
    let n = a.nrows();
    let mut term = Mat::identity(n, n);
    let mut sum = Mat::identity(n, n);
    for j in 1..20 {
        term = &term * &b / j as f64;
        sum += &term;
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    sum
}

/// Random smooth coefficient path with positive definite momentum block.
pub fn random_sturm_path(rng: &mut ChaCha8Rng, k: usize) -> TrigPath {
    let n = 2 * k;
    let mut base = random_symmetric(rng, n, 0.6);
    let p = random_psd(rng, k, k, 0.4) + Mat::identity(k, k);
    base.view_mut((0, 0), (k, k)).copy_from(&p);
    let terms = (0..rng.gen_range(1..=2))
        .map(|_| {
            let omega = rng.gen_range(0.5..3.0);
            let mut c = random_symmetric(rng, n, 0.3);
            let mut s = random_symmetric(rng, n, 0.3);
            // The oscillating momentum part stays below the margin of P.
            c.view_mut((0, 0), (k, k)).fill(0.0);
            s.view_mut((0, 0), (k, k)).fill(0.0);
            (omega, c, s)
        })
        .collect();
    TrigPath::new(base, terms)
}

/// Random coefficient path with no sign condition.
pub fn random_trig_path(rng: &mut ChaCha8Rng, k: usize) -> TrigPath {
    let n = 2 * k;
    let base = random_symmetric(rng, n, 1.0);
    let omega = rng.gen_range(0.5..3.0);
    TrigPath::new(base, vec![(omega, random_symmetric(rng, n, 0.5), random_symmetric(rng, n, 0.5))])
}

fn opts() -> MaslovOptions {
    MaslovOptions { log_crossings: false, ..MaslovOptions::default() }
}

fn mu_pair(first: &dyn nbody_maslov::maslov::LagrangianPath, second: &dyn nbody_maslov::maslov::LagrangianPath, a: f64, b: f64) -> std::result::Result<i64, String> {
    maslov_pair(first, second, a, b, &opts()).map(|r| r.index).map_err(|e| e.to_string())
}

fn dim_k(rng: &mut ChaCha8Rng) -> usize {
    rng.gen_range(1..=3)
}

/// μ is unchanged under t = φ(s) with φ(0) = 0, φ(1) = 1, including a φ that
/// runs back and forth.
pub fn reparametrization(seed: u64) -> Check {
    let mut rng = rng(seed);
    let k = dim_k(&mut rng);
    let fam = UnitaryFamily::random(&mut rng, k);
    let other = UnitaryFamily::random(&mut rng, k);
    let alpha: f64 = rng.gen_range(0.0..3.0);
    let power: f64 = rng.gen_range(0.5..2.0);
    let phi = move |s: f64| {
        let s = s.clamp(0.0, 1.0).powf(power);
        s + alpha * (std::f64::consts::TAU * s).sin() / std::f64::consts::TAU
    };
    let l1 = other.path(0.0);
    let l2 = fam.path(0.0);
    let base = mu_pair(&l1, &l2, 0.0, 1.0)?;
    let r1 = FnLagrangianPath::new(k, |s| other.frame(0.0, phi(s)));
    let r2 = FnLagrangianPath::new(k, |s| fam.frame(0.0, phi(s)));
    let re = mu_pair(&r1, &r2, 0.0, 1.0)?;
    // Affine rescaling of the parameter interval as well.
    let r3 = FnLagrangianPath::new(k, |s| other.frame(0.0, (s + 2.0) / 5.0));
    let r4 = FnLagrangianPath::new(k, |s| fam.frame(0.0, (s + 2.0) / 5.0));
    let aff = mu_pair(&r3, &r4, -2.0, 3.0)?;
    if base == re && base == aff {
        Ok(())
    } else {
        Err(format!("seed {seed}: {base} vs reparametrized {re} / rescaled {aff}"))
    }
}

/// μ(W, L(s, ·)) is constant in s while the endpoints stay fixed. W is either
/// generic or the start point itself (full intersection at t = 0).
pub fn homotopy(seed: u64) -> Check {
    let mut rng = rng(seed);
    let k = dim_k(&mut rng);
    let fam = UnitaryFamily::random(&mut rng, k);
    let w = if rng.gen_bool(0.5) { random_lagrangian(&mut rng, k) } else { fam.lagrangian(0.0, 0.0) };
    let values: Vec<i64> = [0.0, 0.5, 1.0]
        .iter()
        .map(|&s| maslov_index(&w, &fam.path(s), 0.0, 1.0, &opts()).map(|r| r.index).map_err(|e| e.to_string()))
        .collect::<std::result::Result<_, _>>()?;
    if values.iter().all(|&v| v == values[0]) {
        Ok(())
    } else {
        Err(format!("seed {seed}: homotopic paths give {values:?}"))
    }
}

pub fn path_additivity(seed: u64) -> Check {
    let mut rng = rng(seed);
    let k = dim_k(&mut rng);
    let fam = UnitaryFamily::random(&mut rng, k);
    let other = UnitaryFamily::random(&mut rng, k);
    let c: f64 = rng.gen_range(0.1..0.9);
    let (l1, l2) = (other.path(0.0), fam.path(0.0));
    let whole = mu_pair(&l1, &l2, 0.0, 1.0)?;
    let left = mu_pair(&l1, &l2, 0.0, c)?;
    let right = mu_pair(&l1, &l2, c, 1.0)?;
    if whole == left + right {
        Ok(())
    } else {
        Err(format!("seed {seed}: {whole} != {left} + {right} at c = {c}"))
    }
}

/// μ(γL₁, γL₂) = μ(L₁, L₂) for γ(t) = exp(t·JS).
pub fn symplectic_invariance(seed: u64) -> Check {
    let mut rng = rng(seed);
    let k = dim_k(&mut rng);
    let fam = UnitaryFamily::random(&mut rng, k);
    let other = UnitaryFamily::random(&mut rng, k);
    let gen = j_matrix(k) * random_symmetric(&mut rng, 2 * k, 0.8);
    let gamma = |t: f64| expm(&(&gen * t));
    let base = mu_pair(&other.path(0.0), &fam.path(0.0), 0.0, 1.0)?;
    let g1 = FnLagrangianPath::new(k, |t| gamma(t) * other.frame(0.0, t));
    let g2 = FnLagrangianPath::new(k, |t| gamma(t) * fam.frame(0.0, t));
    let moved = mu_pair(&g1, &g2, 0.0, 1.0)?;
    if base == moved {
        Ok(())
    } else {
        Err(format!("seed {seed}: {base} vs transformed {moved}"))
    }
}

/// μ(L₁ ⊕ L̂₁, L₂ ⊕ L̂₂) = μ(L₁, L₂) + μ(L̂₁, L̂₂).
pub fn symplectic_additivity(seed: u64) -> Check {
    let mut rng = rng(seed);
    let (ka, kb) = (rng.gen_range(1..=2), rng.gen_range(1..=2));
    let (a1, a2) = (UnitaryFamily::random(&mut rng, ka), UnitaryFamily::random(&mut rng, ka));
    let (b1, b2) = (UnitaryFamily::random(&mut rng, kb), UnitaryFamily::random(&mut rng, kb));
    let left = mu_pair(&a1.path(0.0), &a2.path(0.0), 0.0, 1.0)?;
    let right = mu_pair(&b1.path(0.0), &b2.path(0.0), 0.0, 1.0)?;
    let s1 = FnLagrangianPath::new(ka + kb, |t| nbody_maslov::maslov::frame_sum(&a1.frame(0.0, t), &b1.frame(0.0, t)));
    let s2 = FnLagrangianPath::new(ka + kb, |t| nbody_maslov::maslov::frame_sum(&a2.frame(0.0, t), &b2.frame(0.0, t)));
    let sum = mu_pair(&s1, &s2, 0.0, 1.0)?;
    if sum == left + right {
        Ok(())
    } else {
        Err(format!("seed {seed}: {sum} != {left} + {right}"))
    }
}

/// μ(L₁, L₂) = dim L₁(a)∩L₂(a) − dim L₁(b)∩L₂(b) − μ(L₂, L₁).
pub fn symmetry(seed: u64) -> Check {
    let mut rng = rng(seed);
    let k = dim_k(&mut rng);
    let fam = UnitaryFamily::random(&mut rng, k);
    // Half the instances start (or end) inside the fixed subspace.
    let w = match rng.gen_range(0..3) {
        0 => random_lagrangian(&mut rng, k),
        1 => fam.lagrangian(0.0, 0.0),
        _ => fam.lagrangian(0.0, 1.0),
    };
    let l2 = fam.path(0.0);
    let forward = mu_pair(&w, &l2, 0.0, 1.0)?;
    let backward = mu_pair(&l2, &w, 0.0, 1.0)?;
    let da = intersection_dim(&w, &fam.lagrangian(0.0, 0.0), 1e-9) as i64;
    let db = intersection_dim(&w, &fam.lagrangian(0.0, 1.0), 1e-9) as i64;
    if forward == da - db - backward {
        Ok(())
    } else {
        Err(format!("seed {seed}: {forward} != {da} - {db} - {backward}"))
    }
}

/// B₁ ≥ B₂ ⇒ μ(V₀, γ₁V₁) ≥ μ(V₀, γ₂V₁).
pub fn monotonicity(seed: u64) -> Check {
    let mut rng = rng(seed);
    let k = dim_k(&mut rng);
    let n = 2 * k;
    let base = random_symmetric(&mut rng, n, 1.0);
    let terms = vec![(rng.gen_range(0.5..3.0), random_symmetric(&mut rng, n, 0.5), random_symmetric(&mut rng, n, 0.5))];
    let rank = rng.gen_range(1..=n);
    let extra = random_psd(&mut rng, n, rank, 0.8);
    let b1 = TrigPath::new(&base + extra, terms.clone());
    let b2 = TrigPath::new(base, terms);
    let v0 = random_lagrangian(&mut rng, k);
    let v1 = random_lagrangian(&mut rng, k);
    let span: f64 = rng.gen_range(1.0..4.0);
    let tol = Tolerances::default();
    let mut out = [0i64; 2];
    for (slot, path) in [&b1, &b2].into_iter().enumerate() {
        let flow = FlowFramePath::propagate(path, &v1.frame, 0.0, span, tol).map_err(|e| e.to_string())?;
        out[slot] = maslov_index(&v0, &flow, 0.0, span, &opts()).map_err(|e| e.to_string())?.index;
    }
    if out[0] >= out[1] {
        Ok(())
    } else {
        Err(format!("seed {seed}: μ₁ = {} < μ₂ = {}", out[0], out[1]))
    }
}

/// |s(V₀, V₁; L₀, L₁)| ≤ 2k, and s(V, V; L₀, L₁) = 0.
pub fn hormander_bound(seed: u64) -> Check {
    let mut rng = rng(seed);
    let k = dim_k(&mut rng);
    let [v0, v1, l0, l1] = [0; 4].map(|_| random_lagrangian(&mut rng, k));
    let s = hormander_index(&v0, &v1, &l0, &l1, &opts()).map_err(|e| e.to_string())?;
    let zero = hormander_index(&v0, &v0, &l0, &l1, &opts()).map_err(|e| e.to_string())?;
    if s.unsigned_abs() as usize <= 2 * k && zero == 0 {
        Ok(())
    } else {
        Err(format!("seed {seed}: s = {s} (k = {k}), s(V,V) = {zero}"))
    }
}

/// |m⁻(t₁,t₂) − m⁻(t₁,t̂) − m⁻(t̂,t₂)| ≤ 3n*.
pub fn near_additivity(seed: u64) -> Check {
    let mut rng = rng(seed);
    let k = dim_k(&mut rng);
    let path = random_sturm_path(&mut rng, k);
    let t2: f64 = rng.gen_range(1.0..6.0);
    let th = t2 * rng.gen_range(0.2..0.8);
    let tol = Tolerances::default();
    let m = |a: f64, b: f64| -> std::result::Result<i64, String> {
        morse_from_maslov(&path, a, b, tol).map(|r| r.morse.unwrap_or(-1)).map_err(|e| e.to_string())
    };
    let (whole, left, right) = (m(0.0, t2)?, m(0.0, th)?, m(th, t2)?);
    let gap = (whole - left - right).abs();
    if gap <= 3 * k as i64 {
        Ok(())
    } else {
        Err(format!("seed {seed}: |{whole} - {left} - {right}| > 3·{k}"))
    }
}

pub type Property = (&'static str, fn(u64) -> Check);

pub const AXIOMS: [Property; 9] = [
    ("I reparametrization", reparametrization),
    ("II homotopy", homotopy),
    ("III path additivity", path_additivity),
    ("IV symplectic invariance", symplectic_invariance),
    ("V symplectic additivity", symplectic_additivity),
    ("VI symmetry", symmetry),
    ("VII monotonicity", monotonicity),
    ("Hörmander bound", hormander_bound),
    ("near additivity", near_additivity),
];
