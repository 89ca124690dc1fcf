//! Reference computations for the acceptance suite, written against plain
//! nalgebra so they share no code path with the library they check.

use nalgebra::{Complex, DMatrix};

/// Spectrum of the Hessian of U restricted to the inertia ellipsoid at a
/// central configuration `s` (flat, body-major), returned with U(s).
///
/// This is D²U + U·M on {Σmᵢξᵢ = 0, ⟨Ms, ξ⟩ = 0} in the mass metric, built
/// from the closed-form pair Hessian mᵢmⱼ(3rrᵀ/|r|⁵ − I/|r|³).
pub fn ellipsoid_spectrum(masses: &[f64], d: usize, s: &[f64]) -> (f64, Vec<f64>) {
    let n = masses.len();
    let nd = n * d;
    assert_eq!(s.len(), nd);
    let mut hess = DMatrix::<f64>::zeros(nd, nd);
    let mut u = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let r: Vec<f64> = (0..d).map(|a| s[i * d + a] - s[j * d + a]).collect();
            let dist = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            let mm = masses[i] * masses[j];
            u += mm / dist;
            for a in 0..d {
                for b in 0..d {
                    let diag = if a == b { 1.0 / dist.powi(3) } else { 0.0 };
                    let h = mm * (3.0 * r[a] * r[b] / dist.powi(5) - diag);
                    hess[(i * d + a, i * d + b)] += h;
                    hess[(j * d + a, j * d + b)] += h;
                    hess[(i * d + a, j * d + b)] -= h;
                    hess[(j * d + a, i * d + b)] -= h;
                }
            }
        }
    }
    let sqrt_m: Vec<f64> = (0..nd).map(|k| masses[k / d].sqrt()).collect();
    // Constraint rows in y = M^{1/2}ξ.
    let mut c = DMatrix::<f64>::zeros(nd, d + 1);
    for k in 0..nd {
        c[(k, k % d)] = sqrt_m[k];
        c[(k, d)] = sqrt_m[k] * s[k];
    }
    let range = c.svd(true, false).u.expect("left singular vectors requested");
    let complement = (DMatrix::<f64>::identity(nd, nd) - &range * range.transpose()).symmetric_eigen();
    let basis: Vec<_> = (0..nd)
        .filter(|&k| complement.eigenvalues[k] > 0.5)
        .map(|k| complement.eigenvectors.column(k).into_owned())
        .collect();
    if basis.is_empty() {
        return (u, vec![]);
    }
    let y = DMatrix::from_columns(&basis);
    let scaled = DMatrix::from_fn(nd, nd, |i, j| {
        let shift = if i == j { u * masses[i / d] } else { 0.0 };
        (hess[(i, j)] + shift) / (sqrt_m[i] * sqrt_m[j])
    });
    let a = y.transpose() * scaled * &y;
    let mut l: Vec<f64> = a.symmetric_eigen().eigenvalues.iter().copied().collect();
    l.sort_by(f64::total_cmp);
    (u, l)
}

/// Largest distance under a greedy nearest-neighbour matching of two
/// multisets; infinite when the sizes differ.
pub fn multiset_distance(a: &[Complex<f64>], b: &[Complex<f64>]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let mut used = vec![false; b.len()];
    let mut worst: f64 = 0.0;
    for x in a {
        let (j, dist) = b
            .iter()
            .enumerate()
            .filter(|(j, _)| !used[*j])
            .map(|(j, y)| (j, (x - y).norm()))
            .min_by(|p, q| p.1.total_cmp(&q.1))
            .expect("sizes match");
        used[j] = true;
        worst = worst.max(dist);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_bodies_on_a_line_have_no_tangent_directions() {
        let a = 0.5f64.sqrt();
        let (u, l) = ellipsoid_spectrum(&[1.0, 1.0], 1, &[a, -a]);
        assert!((u - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(l.is_empty());
    }

    #[test]
    fn planar_two_bodies_have_only_the_rotation() {
        // Masses 1 and 3 on the x-axis with the centre of mass at 0 and I = 1.
        let a = (3.0f64 / 4.0).sqrt();
        let s = [a, 0.0, -a / 3.0, 0.0];
        let (_, l) = ellipsoid_spectrum(&[1.0, 3.0], 2, &s);
        assert_eq!(l.len(), 1);
        assert!(l[0].abs() < 1e-12);
    }

    #[test]
    fn matching_ignores_order() {
        let a = [Complex::new(1.0, 0.0), Complex::new(0.0, 2.0)];
        let b = [Complex::new(0.0, 2.0), Complex::new(1.0, 1e-12)];
        assert!(multiset_distance(&a, &b) < 1e-11);
        assert!(multiset_distance(&a, &b[..1]).is_infinite());
    }
}
