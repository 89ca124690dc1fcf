//! Normalized central configurations: Newton search on ℰ and spectral
//! classification by M⁻¹D²U|ℰ.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{sym_eigen, Vector};
use crate::nbody::{Chart, MassSystem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpiralClass {
    Spiral,
    NonSpiralBoundary,
    StrictNonSpiral,
}

impl SpiralClass {
    pub fn as_str(self) -> &'static str {
        match self {
            SpiralClass::Spiral => "spiral",
            SpiralClass::NonSpiralBoundary => "non-spiral-boundary",
            SpiralClass::StrictNonSpiral => "strict-non-spiral",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CcOptions {
    pub max_iterations: usize,
    pub residual_tol: f64,
    /// Absolute tolerance on λ₁ + U₀/8.
    pub class_tol: f64,
    /// Kernel threshold relative to U₀.
    pub kernel_rel_tol: f64,
}

impl Default for CcOptions {
    fn default() -> Self {
        CcOptions { max_iterations: 200, residual_tol: 1e-10, class_tol: 1e-8, kernel_rel_tol: 1e-8 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CentralConfiguration {
    pub s0: Vec<f64>,
    pub chart: Chart,
    pub residual: f64,
    pub lambdas: Vec<f64>,
    #[serde(rename = "U0")]
    pub u0: f64,
    pub spiral_class: SpiralClass,
    pub kernel_dim: usize,
    pub iterations: usize,
}

impl CentralConfiguration {
    pub fn s0_vector(&self) -> Vector {
        Vector::from_column_slice(&self.s0)
    }

    pub fn lambda_min(&self) -> Option<f64> {
        self.lambdas.first().copied()
    }

    pub fn negative_count(&self) -> usize {
        let tol = 1e-8 * self.u0;
        self.lambdas.iter().filter(|&&l| l < -tol).count()
    }

    /// Eigenvalues strictly below −U₀/8.
    pub fn spiral_lambdas(&self) -> Vec<f64> {
        self.lambdas.iter().copied().filter(|&l| l < -self.u0 / 8.0).collect()
    }
}

pub fn classify(lambdas: &[f64], u0: f64, tol: f64) -> SpiralClass {
    match lambdas.first() {
        None => SpiralClass::StrictNonSpiral,
        Some(&l1) => {
            let gap = l1 + u0 / 8.0;
            if gap < -tol {
                SpiralClass::Spiral
            } else if gap > tol {
                SpiralClass::StrictNonSpiral
            } else {
                SpiralClass::NonSpiralBoundary
            }
        }
    }
}

pub fn kernel_dim(lambdas: &[f64], u0: f64, rel_tol: f64) -> usize {
    lambdas.iter().filter(|l| l.abs() <= rel_tol * u0).count()
}

/// Spectral data of the point s on ℰ without any search.
pub fn analyze(sys: &MassSystem, s: &Vector, opts: &CcOptions) -> Result<CentralConfiguration> {
    let (_, s) = sys.normalize(&sys.project_to_x(s))?;
    let residual = sys.cc_residual(&s)?;
    let u0 = sys.potential(&s)?;
    let hess = sys.restricted_hessian(&s)?;
    let lambdas = hess.eigenvalues;
    Ok(CentralConfiguration {
        chart: Chart::at(sys, &s)?,
        s0: s.iter().copied().collect(),
        residual,
        spiral_class: classify(&lambdas, u0, opts.class_tol),
        kernel_dim: kernel_dim(&lambdas, u0, opts.kernel_rel_tol),
        lambdas,
        u0,
        iterations: 0,
    })
}

/// Newton iteration on Û_x in a chart recentred at every iterate, with Armijo
/// backtracking on ½|Û_x|² and a descent fallback on the same merit.
pub fn find_cc(sys: &MassSystem, guess: &Vector, opts: &CcOptions) -> Result<CentralConfiguration> {
    let (_, mut s) = sys.normalize(&sys.project_to_x(guess))?;
    sys.potential(&s)?;
    let mut best = f64::INFINITY;
    for it in 0..=opts.max_iterations {
        let chart = Chart::at(sys, &s)?;
        let m = chart.dim();
        let origin = Vector::zeros(m);
        let nc = chart.eval(sys, &origin)?;
        let g = nc.u_grad.clone();
        let res = g.norm();
        best = best.min(res);
        if res <= opts.residual_tol {
            let mut cc = analyze(sys, &s, opts)?;
            cc.iterations = it;
            return Ok(cc);
        }
        if it == opts.max_iterations {
            break;
        }
        let (vals, vecs) = sym_eigen(&nc.u_hess);
        let scale = vals.iter().fold(nc.u_val, |a, v| a.max(v.abs()));
        let coeffs = vecs.transpose() * &g;
        let mut newton = Vector::zeros(m);
        let mut well_posed = true;
        for (i, &l) in vals.iter().enumerate() {
            if l.abs() > 1e-8 * scale {
                newton -= vecs.column(i) * (coeffs[i] / l);
            } else if coeffs[i].abs() > 1e-3 * res {
                well_posed = false;
            }
        }
        let merit0 = 0.5 * res * res;
        let merit = |x: &Vector| -> Option<f64> {
            chart.eval_unchecked(sys, x, false).ok().map(|n| 0.5 * n.u_grad.norm_squared())
        };
        let clip = |d: Vector| -> Vector {
            let n = d.norm();
            if n > 0.4 {
                d * (0.4 / n)
            } else {
                d
            }
        };
        let mut accepted: Option<Vector> = None;
        if well_posed {
            let dir = clip(newton);
            let mut alpha = 1.0;
            while alpha > 1e-4 {
                let trial = &dir * alpha;
                if let Some(f) = merit(&trial) {
                    if f <= (1.0 - 1e-4 * alpha) * merit0 {
                        accepted = Some(trial);
                        break;
                    }
                }
                alpha *= 0.5;
            }
        }
        if accepted.is_none() {
            let grad_merit = &nc.u_hess * &g;
            let gm = grad_merit.norm();
            if gm > 0.0 {
                let dir = clip(-&grad_merit * (merit0 / (gm * gm)));
                let slope = -grad_merit.dot(&dir);
                let mut alpha = 1.0;
                while alpha > 1e-10 {
                    let trial = &dir * alpha;
                    if let Some(f) = merit(&trial) {
                        if f <= merit0 - 1e-4 * alpha * slope.abs() {
                            accepted = Some(trial);
                            break;
                        }
                    }
                    alpha *= 0.5;
                }
            }
        }
        let step = accepted.ok_or(Error::SearchFailure { iterations: it + 1, residual: best })?;
        s = chart.to_ambient(&step);
        let (_, sn) = sys.normalize(&sys.project_to_x(&s))?;
        s = sn;
        sys.potential(&s)?;
    }
    Err(Error::SearchFailure { iterations: opts.max_iterations, residual: best })
}

/// Starting configurations: `equilateral` (three bodies, d ≥ 2) and
/// `collinear` (equally spaced on the first axis).
pub fn builtin_guess(sys: &MassSystem, name: &str) -> Result<Vector> {
    let (n, d) = (sys.n, sys.d);
    let mut q = Vector::zeros(n * d);
    match name {
        "equilateral" => {
            if n != 3 || d < 2 {
                return Err(Error::InvalidInput("equilateral guess needs three bodies in d ≥ 2".into()));
            }
            for i in 0..3 {
                let th = std::f64::consts::FRAC_PI_2 + 2.0 * std::f64::consts::PI * i as f64 / 3.0;
                q[i * d] = th.cos();
                q[i * d + 1] = th.sin();
            }
        }
        "collinear" => {
            for i in 0..n {
                q[i * d] = i as f64 - (n - 1) as f64 / 2.0;
            }
        }
        other => return Err(Error::InvalidInput(format!("unknown builtin guess '{other}'"))),
    }
    let (_, s) = sys.normalize(&sys.project_to_x(&q))?;
    Ok(s)
}
