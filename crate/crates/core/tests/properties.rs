//! Randomized invariants across the crate.

mod common;

use nbody_maslov::central::{builtin_guess, find_cc, CcOptions};
use nbody_maslov::error::Error;
use nbody_maslov::hamiltonian::integrate_fundamental;
use nbody_maslov::homothetic::{
    block_hormander, homothetic_morse, mu_lambda, neumann_index, HomotheticOptions, HomotheticOrbit,
};
use nbody_maslov::linalg::{max_abs, symplectic_defect, Mat, Vector};
use nbody_maslov::maslov::morse_from_maslov;
use nbody_maslov::mcgehee::{from_cartesian, integrate, to_cartesian, BlowupKind, FlowOptions};
use nbody_maslov::nbody::{Chart, MassSystem};
use nbody_maslov::ode::Tolerances;
use nbody_maslov::oracle::{assemble, negative_count};
use proptest::prelude::*;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// Masses, dimension and a collision-free configuration.
fn system() -> impl Strategy<Value = (MassSystem, Vector)> {
    (2usize..=4, 1usize..=3)
        .prop_flat_map(|(n, d)| {
            (prop::collection::vec(0.2f64..5.0, n), prop::collection::vec(-2.0f64..2.0, n * d), Just(d))
        })
        .prop_filter_map("collision", |(m, q, d)| {
            let sys = MassSystem::new(m, d).ok()?;
            let q = Vector::from_vec(q);
            (sys.min_distance(&q) > 0.05).then_some((sys, q))
        })
}

fn equal_triangle() -> impl Strategy<Value = (MassSystem, Vector)> {
    (prop::collection::vec(0.3f64..3.0, 3), prop::collection::vec(-0.1f64..0.1, 6)).prop_map(|(m, dq)| {
        let sys = MassSystem::new(m, 2).unwrap();
        let q = builtin_guess(&sys, "equilateral").unwrap() + Vector::from_vec(dq);
        (sys, q)
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn potential_is_homogeneous_of_degree_minus_one((sys, q) in system(), lam in 0.1f64..10.0) {
        let u = sys.potential(&q).unwrap();
        prop_assert!(rel(sys.potential(&(&q * lam)).unwrap(), u / lam) < 1e-12);
    }

    #[test]
    fn potential_ignores_translations((sys, q) in system(), shift in prop::collection::vec(-5.0f64..5.0, 3)) {
        let moved = Vector::from_fn(q.len(), |i, _| q[i] + shift[i % sys.d]);
        prop_assert!(rel(sys.potential(&moved).unwrap(), sys.potential(&q).unwrap()) < 1e-12);
        prop_assert!((sys.project_to_x(&moved) - sys.project_to_x(&q)).norm() < 1e-10);
    }

    #[test]
    fn euler_identity_on_the_ellipsoid((sys, q) in system()) {
        let (_, s) = sys.normalize(&sys.project_to_x(&q)).unwrap();
        let u = sys.potential(&s).unwrap();
        prop_assert!(rel(-sys.gradient(&s).unwrap().dot(&s), u) < 1e-10);
    }

    #[test]
    fn chart_round_trip((sys, q) in system(), x in prop::collection::vec(-0.28f64..0.28, 12)) {
        let chart = Chart::at(&sys, &q).unwrap();
        let x = Vector::from_fn(chart.dim(), |i, _| x[i]);
        let back = chart.from_ambient(&sys, &chart.to_ambient(&x)).unwrap();
        prop_assert!((back - &x).norm() < 1e-10);
    }

    #[test]
    fn chart_derivatives_match_differences((sys, q) in system(), x in prop::collection::vec(-0.2f64..0.2, 12)) {
        let chart = Chart::at(&sys, &q).unwrap();
        let m = chart.dim();
        let x = Vector::from_fn(m, |i, _| x[i]);
        // Central differences lose accuracy close to collisions.
        prop_assume!(sys.min_distance(&chart.to_ambient(&x)) > 0.05);
        let nc = chart.eval(&sys, &x).unwrap();
        let h = 1e-5;
        for i in 0..m {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let p = chart.eval_unchecked(&sys, &xp, false).unwrap();
            let n = chart.eval_unchecked(&sys, &xm, false).unwrap();
            let g = (p.u_val - n.u_val) / (2.0 * h);
            let scale = nc.u_grad.norm().max(nc.u_val);
            prop_assert!((g - nc.u_grad[i]).abs() <= 1e-5 * scale, "gradient {i}: {g} vs {}", nc.u_grad[i]);
            let col = (p.u_grad - n.u_grad) / (2.0 * h);
            let hs = max_abs(&nc.u_hess).max(nc.u_val);
            for j in 0..m {
                prop_assert!((col[j] - nc.u_hess[(j, i)]).abs() <= 1e-5 * hs, "hessian ({j},{i})");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn converged_cc_satisfies_the_cc_equation((sys, q) in equal_triangle()) {
        let cc = find_cc(&sys, &q, &CcOptions::default()).unwrap();
        let s = cc.s0_vector();
        let u = sys.potential(&s).unwrap();
        let g = sys.gradient(&s).unwrap();
        // ∇U + U·Ms in the dual M-norm.
        let w = (0..s.len()).map(|i| {
            let m = sys.mass_diag()[i];
            (g[i] + u * m * s[i]).powi(2) / m
        }).sum::<f64>().sqrt();
        prop_assert!(w <= 1e-9, "{w:e}");
    }

    #[test]
    fn spectrum_ignores_charts_and_equal_mass_relabelling(perm in Just([2usize, 0, 1]), dq in prop::collection::vec(-0.05f64..0.05, 6)) {
        let sys = MassSystem::new(vec![1.0; 3], 2).unwrap();
        let guess = builtin_guess(&sys, "equilateral").unwrap();
        let cc = find_cc(&sys, &guess, &CcOptions::default()).unwrap();
        let s0 = cc.s0_vector();
        // Chart centred off the configuration.
        let off = Chart::at(&sys, &(&s0 + Vector::from_vec(dq))).unwrap();
        let x0 = off.from_ambient(&sys, &s0).unwrap();
        let nc = off.eval(&sys, &x0).unwrap();
        let mut chart_lams: Vec<f64> = nalgebra::linalg::Cholesky::new(nc.m_hat.clone())
            .map(|c| {
                let l_inv = c.l().try_inverse().unwrap();
                let a = &l_inv * &nc.u_hess * l_inv.transpose();
                nbody_maslov::linalg::sym_eigen(&a).0
            })
            .unwrap();
        chart_lams.sort_by(f64::total_cmp);
        for (a, b) in chart_lams.iter().zip(&cc.lambdas) {
            prop_assert!((a - b).abs() <= 1e-8 * cc.u0, "{chart_lams:?} vs {:?}", cc.lambdas);
        }
        // Relabelled bodies.
        let permuted = Vector::from_fn(6, |i, _| s0[2 * perm[i / 2] + i % 2]);
        let cc2 = nbody_maslov::central::analyze(&sys, &permuted, &CcOptions::default()).unwrap();
        for (a, b) in cc2.lambdas.iter().zip(&cc.lambdas) {
            prop_assert!((a - b).abs() <= 1e-8 * cc.u0);
        }
    }

    #[test]
    fn class_and_morse_index_survive_mass_rescaling((sys, q) in equal_triangle(), c in 0.1f64..10.0, h0 in -2.0f64..-0.1) {
        let cc = find_cc(&sys, &q, &CcOptions::default()).unwrap();
        let scaled = MassSystem::new(sys.masses.iter().map(|m| m * c).collect(), 2).unwrap();
        let cc2 = find_cc(&scaled, &q, &CcOptions::default()).unwrap();
        prop_assert_eq!(cc.spiral_class, cc2.spiral_class);
        let opts = HomotheticOptions::default();
        let m1 = homothetic_morse(&HomotheticOrbit::from_cc(&sys, &cc, h0).unwrap(), &opts).unwrap();
        let m2 = homothetic_morse(&HomotheticOrbit::from_cc(&scaled, &cc2, h0).unwrap(), &opts).unwrap();
        prop_assert_eq!(m1.morse, m2.morse);
        prop_assert_eq!(m1.full_nu, cc.kernel_dim);
        prop_assert_eq!(m1.morse as usize, cc.negative_count());
    }

    #[test]
    fn energy_and_time_map_along_random_flows((sys, q) in equal_triangle(), v in prop::collection::vec(-0.3f64..0.3, 6)) {
        let q = sys.project_to_x(&q);
        let qdot = sys.project_to_x(&Vector::from_vec(v));
        for kind in [BlowupKind::McGehee, BlowupKind::Hyperbolic] {
            let (chart, st) = from_cartesian(&sys, kind, &q, &qdot).unwrap();
            let (q2, qd2) = to_cartesian(&sys, &chart, &st).unwrap();
            prop_assert!((q2 - &q).norm() < 1e-10 && (qd2 - &qdot).norm() < 1e-10);
            // Random data can run into a near binary collision, which τ does not
            // regularize; the step-size controller then gives up.
            let traj = match integrate(&sys, &chart, &st, 1.0, &FlowOptions::default()) {
                Ok(t) => t,
                Err(Error::Integration(_)) => continue,
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            };
            for s in &traj.samples {
                let u = traj.charts[s.chart].eval_unchecked(&sys, &s.state.x, false).unwrap().u_val;
                // Û itself carries roundoff of order ε·Û² near a close encounter.
                let bound = 1e-9 + f64::EPSILON * u * u;
                prop_assert!(s.energy_residual.abs() <= bound, "{kind:?}: {:e} at Û = {u:e}", s.energy_residual);
            }
            prop_assert!(traj.samples.windows(2).all(|w| w[1].state.t > w[0].state.t));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn fundamental_solution_is_symplectic_and_composes(seed in any::<u64>(), t1 in 0.3f64..1.5, t2 in 1.6f64..4.0) {
        let mut rng = common::rng(seed);
        let k = 1 + (seed % 3) as usize;
        let path = common::random_trig_path(&mut rng, k);
        let tol = Tolerances::default();
        let full = integrate_fundamental(&path, 0.0, t2, tol).unwrap();
        let first = integrate_fundamental(&path, 0.0, t1, tol).unwrap();
        let second = integrate_fundamental(&path, t1, t2, tol).unwrap();
        let g = full.end();
        // γᵀJγ carries roundoff of order ε‖γ‖², which grows without bound on
        // unstable random systems.
        let scale = max_abs(&g).powi(2).max(1.0);
        prop_assert!(symplectic_defect(&g) < 1e-8 * scale, "{:e} at scale {scale:e}", symplectic_defect(&g));
        prop_assert!(symplectic_defect(&full.eval(0.5 * t1)) < 1e-8);
        let composed: Mat = second.end() * first.end();
        prop_assert!(max_abs(&(composed - &g)) < 1e-8 * max_abs(&g).max(1.0));
    }

    #[test]
    fn morse_index_grows_with_the_window(seed in any::<u64>(), a in 0.0f64..0.5, b in 1.0f64..3.0, grow in 0.0f64..1.5) {
        let mut rng = common::rng(seed);
        let k = 1 + (seed % 3) as usize;
        let path = common::random_sturm_path(&mut rng, k);
        let tol = Tolerances::default();
        let inner = morse_from_maslov(&path, a, b, tol).unwrap().morse.unwrap();
        let outer = morse_from_maslov(&path, 0.0, b + grow, tol).unwrap().morse.unwrap();
        prop_assert!(inner <= outer, "{inner} > {outer}");
        prop_assert!(inner >= 0);
    }

    #[test]
    fn fem_count_is_monotone_near_stabilization(seed in any::<u64>(), span in 1.0f64..4.0) {
        let mut rng = common::rng(seed);
        let k = 1 + (seed % 3) as usize;
        let path = common::random_sturm_path(&mut rng, k);
        let counts: Vec<usize> = [50, 100, 200, 400, 800]
            .iter()
            .map(|&n| negative_count(&assemble(&path, (0.0, span), n).unwrap(), 1e-10, 1e-8).negative)
            .collect();
        let stable = *counts.last().unwrap();
        for w in counts.windows(2) {
            if w[0] + 2 >= stable {
                prop_assert!(w[1] >= w[0], "{counts:?}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn neumann_index_vanishes_and_hormander_is_consistent(neg in prop::bool::ANY, frac in 0.05f64..0.95, pos in 0.05f64..5.0) {
        let b = 2.0;
        let lambda = if neg { -frac * b / 8.0 } else { pos };
        let orbit = HomotheticOrbit::from_spectrum(b, &[lambda], -1.0).unwrap();
        let opts = HomotheticOptions::default().heteroclinic;
        let dirichlet = mu_lambda(&orbit, lambda, &opts).unwrap();
        let neumann = neumann_index(&orbit, lambda, &opts).unwrap();
        prop_assert_eq!(neumann, 0);
        prop_assert_eq!(dirichlet.mu - neumann, block_hormander(b, lambda).unwrap());
        prop_assert_eq!(dirichlet.mu, i64::from(neg));
        prop_assert_eq!(dirichlet.nu, 0);
    }
}
