//! Masses, the Newtonian potential and its derivatives, the moment of
//! inertia, and graph charts on the inertia ellipsoid ℰ = {ℐ(q) = 1} ⊂ 𝒳.
//!
//! Ambient coordinates are flattened body-major: body i, axis a sits at index
//! `i * d + a`. Inner products written ⟨·,·⟩_M use the mass matrix
//! M = diag(m₁I_d, …, m_nI_d).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{sym_eigen, Mat, Vector};

/// Pairwise distances below this are treated as collisions.
pub const COLLISION_TOL: f64 = 1e-13;
/// Default radius of a graph chart in chart coordinates.
pub const DEFAULT_VALIDITY_RADIUS: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct MassSystem {
    pub n: usize,
    pub d: usize,
    pub masses: Vec<f64>,
    /// Columns form an M-orthonormal basis of the zero-centre-of-mass space 𝒳.
    pub reduced_basis: Mat,
    mass_diag: Vec<f64>,
}

impl MassSystem {
    pub fn new(masses: Vec<f64>, d: usize) -> Result<Self> {
        let n = masses.len();
        if n < 2 {
            return Err(Error::InvalidInput("need at least two bodies".into()));
        }
        if d < 1 {
            return Err(Error::InvalidInput("dimension must be at least 1".into()));
        }
        if let Some(m) = masses.iter().find(|m| !(m.is_finite() && **m > 0.0)) {
            return Err(Error::InvalidInput(format!("mass {m} is not strictly positive")));
        }
        let mass_diag: Vec<f64> = masses.iter().flat_map(|&m| std::iter::repeat_n(m, d)).collect();
        let mut sys = MassSystem { n, d, masses, reduced_basis: Mat::zeros(0, 0), mass_diag };
        sys.reduced_basis = sys.build_reduced_basis();
        Ok(sys)
    }

    /// n* = d(n − 1), the dimension of 𝒳.
    pub fn n_star(&self) -> usize {
        self.d * (self.n - 1)
    }

    pub fn ambient_dim(&self) -> usize {
        self.d * self.n
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    pub fn mass_diag(&self) -> &[f64] {
        &self.mass_diag
    }

    pub fn mass_matrix(&self) -> Mat {
        Mat::from_diagonal(&Vector::from_column_slice(&self.mass_diag))
    }

    pub fn m_apply(&self, v: &Vector) -> Vector {
        Vector::from_fn(v.len(), |i, _| self.mass_diag[i] * v[i])
    }

    pub fn m_inner(&self, a: &Vector, b: &Vector) -> f64 {
        a.iter().zip(b.iter()).zip(&self.mass_diag).map(|((x, y), m)| m * x * y).sum()
    }

    pub fn m_norm(&self, a: &Vector) -> f64 {
        self.m_inner(a, a).sqrt()
    }

    pub fn center_of_mass(&self, q: &Vector) -> Vec<f64> {
        let mt = self.total_mass();
        (0..self.d)
            .map(|a| (0..self.n).map(|i| self.masses[i] * q[i * self.d + a]).sum::<f64>() / mt)
            .collect()
    }

    /// Removes the centre of mass (the M-orthogonal projection onto 𝒳).
    pub fn project_to_x(&self, q: &Vector) -> Vector {
        let c = self.center_of_mass(q);
        Vector::from_fn(q.len(), |k, _| q[k] - c[k % self.d])
    }

    fn build_reduced_basis(&self) -> Mat {
        let dn = self.ambient_dim();
        let mut cols: Vec<Vector> = Vec::with_capacity(self.n_star());
        for i in 0..self.n - 1 {
            for a in 0..self.d {
                let mut v = Vector::zeros(dn);
                v[i * self.d + a] = 1.0;
                let mut v = self.project_to_x(&v);
                for _ in 0..2 {
                    for c in &cols {
                        let p = self.m_inner(&v, c);
                        v -= c * p;
                    }
                }
                let nrm = self.m_norm(&v);
                cols.push(v / nrm);
            }
        }
        Mat::from_columns(&cols)
    }

    /// Coordinates of a point of 𝒳 in the reduced basis.
    pub fn to_reduced(&self, q: &Vector) -> Vector {
        self.reduced_basis.transpose() * self.m_apply(q)
    }

    pub fn from_reduced(&self, y: &Vector) -> Vector {
        &self.reduced_basis * y
    }

    fn check_len(&self, q: &Vector) -> Result<()> {
        if q.len() != self.ambient_dim() {
            return Err(Error::InvalidInput(format!(
                "configuration has {} coordinates, expected {}",
                q.len(),
                self.ambient_dim()
            )));
        }
        Ok(())
    }

    fn separation(&self, q: &Vector, i: usize, j: usize) -> (Vec<f64>, f64) {
        let d = self.d;
        let diff: Vec<f64> = (0..d).map(|a| q[i * d + a] - q[j * d + a]).collect();
        let dist = diff.iter().map(|x| x * x).sum::<f64>().sqrt();
        (diff, dist)
    }

    pub fn min_distance(&self, q: &Vector) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.n {
            for j in i + 1..self.n {
                best = best.min(self.separation(q, i, j).1);
            }
        }
        best
    }

    fn pair_check(&self, i: usize, j: usize, dist: f64) -> Result<()> {
        if !(dist > COLLISION_TOL) {
            return Err(Error::Singular(format!("bodies {i} and {j} at distance {dist:.3e}")));
        }
        Ok(())
    }

    /// U(q) = Σ_{i<j} mᵢmⱼ / |qᵢ − qⱼ|.
    pub fn potential(&self, q: &Vector) -> Result<f64> {
        self.check_len(q)?;
        let mut u = 0.0;
        for i in 0..self.n {
            for j in i + 1..self.n {
                let (_, dist) = self.separation(q, i, j);
                self.pair_check(i, j, dist)?;
                u += self.masses[i] * self.masses[j] / dist;
            }
        }
        Ok(u)
    }

    pub fn gradient(&self, q: &Vector) -> Result<Vector> {
        self.check_len(q)?;
        let d = self.d;
        let mut g = Vector::zeros(q.len());
        for i in 0..self.n {
            for j in i + 1..self.n {
                let (diff, dist) = self.separation(q, i, j);
                self.pair_check(i, j, dist)?;
                let c = self.masses[i] * self.masses[j] / dist.powi(3);
                for a in 0..d {
                    g[i * d + a] -= c * diff[a];
                    g[j * d + a] += c * diff[a];
                }
            }
        }
        Ok(g)
    }

    pub fn hessian(&self, q: &Vector) -> Result<Mat> {
        self.check_len(q)?;
        let d = self.d;
        let mut h = Mat::zeros(q.len(), q.len());
        for i in 0..self.n {
            for j in i + 1..self.n {
                let (diff, dist) = self.separation(q, i, j);
                self.pair_check(i, j, dist)?;
                let mm = self.masses[i] * self.masses[j];
                let r2 = dist * dist;
                let r5 = r2 * r2 * dist;
                for a in 0..d {
                    for b in 0..d {
                        let delta = if a == b { 1.0 } else { 0.0 };
                        let blk = mm * (3.0 * diff[a] * diff[b] - r2 * delta) / r5;
                        h[(i * d + a, i * d + b)] += blk;
                        h[(j * d + a, j * d + b)] += blk;
                        h[(i * d + a, j * d + b)] -= blk;
                        h[(j * d + a, i * d + b)] -= blk;
                    }
                }
            }
        }
        Ok(h)
    }

    /// ℐ(q) = ⟨Mq, q⟩.
    pub fn moment_of_inertia(&self, q: &Vector) -> f64 {
        self.m_inner(q, q)
    }

    /// Polar split q = r·s with ℐ(s) = 1.
    pub fn normalize(&self, q: &Vector) -> Result<(f64, Vector)> {
        self.check_len(q)?;
        let r = self.moment_of_inertia(q).sqrt();
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::DegenerateConfiguration("configuration has zero moment of inertia".into()));
        }
        Ok((r, q / r))
    }

    /// M-orthonormal basis of the tangent space of ℰ at s: the M-orthogonal
    /// complement of s inside 𝒳.
    pub fn tangent_frame(&self, s: &Vector) -> Mat {
        let ns = self.n_star();
        let c = self.to_reduced(s);
        let c = &c / c.norm();
        let mut cols: Vec<Vector> = vec![c.clone()];
        for e in 0..ns {
            let mut v = Vector::zeros(ns);
            v[e] = 1.0;
            for _ in 0..2 {
                for w in &cols {
                    let p = v.dot(w);
                    v -= w * p;
                }
            }
            let nrm = v.norm();
            if nrm > 1e-6 {
                cols.push(v / nrm);
            }
            if cols.len() == ns {
                break;
            }
        }
        let tangent: Vec<Vector> = cols.into_iter().skip(1).collect();
        if tangent.is_empty() {
            return Mat::zeros(self.ambient_dim(), 0);
        }
        &self.reduced_basis * Mat::from_columns(&tangent)
    }

    /// D²U|ℰ(s) = D²U(s) + U(s)M and its restriction to T_sℰ.
    pub fn restricted_hessian(&self, s: &Vector) -> Result<RestrictedHessian> {
        let u = self.potential(s)?;
        let mut ambient = self.hessian(s)?;
        for (i, m) in self.mass_diag.iter().enumerate() {
            ambient[(i, i)] += u * m;
        }
        let frame = self.tangent_frame(s);
        let tangent = frame.transpose() * &ambient * &frame;
        let (eigenvalues, eigenvectors) = sym_eigen(&tangent);
        Ok(RestrictedHessian { ambient, tangent, frame, eigenvalues, eigenvectors })
    }

    /// M-norm of the gradient of U restricted to ℰ at s, i.e. of the tangent
    /// vector M⁻¹∇U(s) + U(s)s.
    pub fn cc_residual(&self, s: &Vector) -> Result<f64> {
        let u = self.potential(s)?;
        let g = self.gradient(s)?;
        let v = Vector::from_fn(s.len(), |i, _| g[i] / self.mass_diag[i] + u * s[i]);
        Ok(self.m_norm(&v))
    }
}

/// A configuration in 𝒳 together with its distance to the collision set.
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    pub coords: Vector,
    pub collision_margin: f64,
}

impl Configuration {
    /// Centres `coords` at the origin and records the smallest pair distance.
    pub fn new(sys: &MassSystem, coords: Vector) -> Result<Self> {
        sys.check_len(&coords)?;
        let coords = sys.project_to_x(&coords);
        let collision_margin = sys.min_distance(&coords);
        Ok(Configuration { coords, collision_margin })
    }

    pub fn is_collision_free(&self) -> bool {
        self.collision_margin > COLLISION_TOL
    }

    pub fn reduced(&self, sys: &MassSystem) -> Vector {
        sys.to_reduced(&self.coords)
    }
}

#[derive(Debug, Clone)]
pub struct RestrictedHessian {
    /// D²U(s) + U(s)M in ambient coordinates.
    pub ambient: Mat,
    /// Matrix of M⁻¹D²U|ℰ(s) in the M-orthonormal tangent basis `frame`.
    pub tangent: Mat,
    pub frame: Mat,
    pub eigenvalues: Vec<f64>,
    /// Eigenvectors of `tangent`, in tangent-basis coordinates.
    pub eigenvectors: Mat,
}

/// M̂(x) for the normalized graph chart: (I(1+|x|²) − xxᵀ)/(1+|x|²)².
pub fn m_hat(x: &Vector) -> Mat {
    let m = x.len();
    let s2 = 1.0 + x.norm_squared();
    (Mat::identity(m, m) * s2 - x * x.transpose()) / (s2 * s2)
}

/// M̂(x)⁻¹ = (1+|x|²)(I + xxᵀ).
pub fn m_hat_inv(x: &Vector) -> Mat {
    let m = x.len();
    (Mat::identity(m, m) + x * x.transpose()) * (1.0 + x.norm_squared())
}

/// Q(x, u) = ⟨M̂⁻¹(x)u, u⟩ with its x-gradient and x-Hessian, plus
/// D_x(M̂⁻¹u) (row i, column j: ∂(M̂⁻¹u)ᵢ/∂xⱼ).
#[derive(Debug, Clone)]
pub struct KineticForm {
    pub value: f64,
    pub grad_x: Vector,
    pub hess_x: Mat,
    pub d_minv_u: Mat,
}

pub fn kinetic_form(x: &Vector, u: &Vector) -> KineticForm {
    let m = x.len();
    let s2 = 1.0 + x.norm_squared();
    let xu = x.dot(u);
    let uu = u.norm_squared();
    let value = s2 * (uu + xu * xu);
    let grad_x = x * (2.0 * (uu + xu * xu)) + u * (2.0 * s2 * xu);
    let id = Mat::identity(m, m);
    let hess_x = &id * (2.0 * (uu + xu * xu))
        + (x * u.transpose() + u * x.transpose()) * (4.0 * xu)
        + u * u.transpose() * (2.0 * s2);
    let d_minv_u = (u + x * xu) * x.transpose() * 2.0 + (&id * xu + x * u.transpose()) * s2;
    KineticForm { value, grad_x, hess_x, d_minv_u }
}

/// Graph chart ψ⁻¹(x) = (base + Σ xᵢwᵢ)/√(1+|x|²) on ℰ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chart {
    pub base: Vec<f64>,
    /// Tangent frame, stored column by column.
    pub frame: Vec<Vec<f64>>,
    pub validity_radius: f64,
}

/// Point of ℰ with the potential data pulled back through a chart.
#[derive(Debug, Clone)]
pub struct NormalizedConfiguration {
    pub s: Vector,
    pub x: Vector,
    pub u_val: f64,
    pub u_grad: Vector,
    pub u_hess: Mat,
    pub m_hat: Mat,
}

impl Chart {
    /// Chart centred at the normalization of `q` (projected onto 𝒳).
    pub fn at(sys: &MassSystem, q: &Vector) -> Result<Chart> {
        let (_, s) = sys.normalize(&sys.project_to_x(q))?;
        let frame = sys.tangent_frame(&s);
        Ok(Chart {
            base: s.iter().copied().collect(),
            frame: frame.column_iter().map(|c| c.iter().copied().collect()).collect(),
            validity_radius: DEFAULT_VALIDITY_RADIUS,
        })
    }

    pub fn dim(&self) -> usize {
        self.frame.len()
    }

    pub fn base(&self) -> Vector {
        Vector::from_column_slice(&self.base)
    }

    pub fn frame_matrix(&self) -> Mat {
        let dn = self.base.len();
        Mat::from_fn(dn, self.frame.len(), |i, j| self.frame[j][i])
    }

    fn graph_point(&self, x: &Vector) -> Vector {
        let mut g = self.base();
        for (j, w) in self.frame.iter().enumerate() {
            for (i, wi) in w.iter().enumerate() {
                g[i] += x[j] * wi;
            }
        }
        g
    }

    pub fn to_ambient(&self, x: &Vector) -> Vector {
        self.graph_point(x) / (1.0 + x.norm_squared()).sqrt()
    }

    /// Chart coordinates of a point s ∈ ℰ with ⟨M base, s⟩ > 0.
    pub fn from_ambient(&self, sys: &MassSystem, s: &Vector) -> Result<Vector> {
        let base = self.base();
        let ms = sys.m_apply(s);
        let rho = base.dot(&ms);
        if !(rho > 0.0) {
            return Err(Error::ChartDomain { norm: f64::INFINITY, radius: self.validity_radius });
        }
        Ok(self.frame_matrix().transpose() * ms / rho)
    }

    /// ∂ψ⁻¹/∂x = ρW − ρ³ g xᵀ with ρ = (1+|x|²)^{-1/2}, g = base + Wx.
    pub fn jacobian(&self, x: &Vector) -> Mat {
        let rho = (1.0 + x.norm_squared()).powf(-0.5);
        let g = self.graph_point(x);
        self.frame_matrix() * rho - g * x.transpose() * rho.powi(3)
    }

    pub fn eval(&self, sys: &MassSystem, x: &Vector) -> Result<NormalizedConfiguration> {
        let nrm = x.norm();
        if nrm > self.validity_radius {
            return Err(Error::ChartDomain { norm: nrm, radius: self.validity_radius });
        }
        self.eval_unchecked(sys, x, true)
    }

    /// Evaluation without the radius check; the gnomonic chart is defined on
    /// the whole hemisphere around `base`, the radius only guards
    /// conditioning. `with_hessian = false` skips Û_xx.
    pub fn eval_unchecked(&self, sys: &MassSystem, x: &Vector, with_hessian: bool) -> Result<NormalizedConfiguration> {
        let m = self.dim();
        let w = self.frame_matrix();
        let g = self.graph_point(x);
        let sigma = (1.0 + x.norm_squared()).sqrt();
        let f = sys.potential(&g)?;
        let grad_f = w.transpose() * sys.gradient(&g)?;
        let grad_sigma = x / sigma;
        let u_val = sigma * f;
        let u_grad = &grad_sigma * f + &grad_f * sigma;
        let u_hess = if with_hessian {
            let hess_f = w.transpose() * sys.hessian(&g)? * &w;
            let hess_sigma = Mat::identity(m, m) / sigma - x * x.transpose() / sigma.powi(3);
            let h = hess_sigma * f
                + &grad_sigma * grad_f.transpose()
                + &grad_f * grad_sigma.transpose()
                + hess_f * sigma;
            crate::linalg::symmetrize(&h)
        } else {
            Mat::zeros(m, m)
        };
        Ok(NormalizedConfiguration { s: g / sigma, x: x.clone(), u_val, u_grad, u_hess, m_hat: m_hat(x) })
    }
}
