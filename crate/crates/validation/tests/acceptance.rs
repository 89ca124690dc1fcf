//! End-to-end acceptance checks. Every criterion writes one `PASS`/`FAIL`
//! line straight to stderr (bypassing the test harness capture), followed by
//! indented detail lines, and then asserts.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::f64::consts::PI;
use std::io::Write;
use std::time::Instant;

use nalgebra::Complex;
use nbody_maslov::central::{builtin_guess, find_cc, CcOptions, CentralConfiguration, SpiralClass};
use nbody_maslov::hamiltonian::{bhat_limit_collision, bhat_limit_hyperbolic, HyperbolicSplitting};
use nbody_maslov::homothetic::{
    geometric_schedule, growth_rate, homothetic_morse, mu_lambda, GrowthOptions, GrowthReport, HomotheticOptions,
    HomotheticOrbit,
};
use nbody_maslov::linalg::{Mat, Vector};
use nbody_maslov::maslov::{hormander_index, HeteroclinicOptions, LagrangianFrame, MaslovOptions};
use nbody_maslov::mcgehee::{integrate, BlowupKind, BlowupState, FlowOptions};
use nbody_maslov::nbody::{Chart, MassSystem};
use nbody_maslov::oracle::{compare, OracleOptions, Verdict};
use nbody_maslov_validation::{ellipsoid_spectrum, multiset_distance};

fn line(text: &str) {
    let _ = writeln!(std::io::stderr(), "{text}");
}

fn verdict(n: usize, title: &str, pass: bool, details: &[String]) {
    line(&format!("[acceptance] criterion {n}: {} | {title}", if pass { "PASS" } else { "FAIL" }));
    for d in details {
        line(&format!("[acceptance]     {d}"));
    }
}

fn cc_of(masses: &[f64], d: usize, guess: &str) -> (MassSystem, CentralConfiguration) {
    let sys = MassSystem::new(masses.to_vec(), d).unwrap();
    let cc = find_cc(&sys, &builtin_guess(&sys, guess).unwrap(), &CcOptions::default()).unwrap();
    (sys, cc)
}

fn csqrt(x: f64) -> Complex<f64> {
    Complex::new(x, 0.0).sqrt()
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed().as_secs_f64())
}

struct Orbit {
    name: &'static str,
    masses: Vec<f64>,
    d: usize,
    guess: &'static str,
}

fn index_orbits() -> Vec<Orbit> {
    vec![
        Orbit { name: "two-body d=1", masses: vec![1.0, 1.0], d: 1, guess: "collinear" },
        Orbit { name: "Lagrange equal masses d=2", masses: vec![1.0; 3], d: 2, guess: "equilateral" },
    ]
}

#[test]
fn criterion_1_negative_energy_index_matches_eigen_count() {
    let mut pass = true;
    let mut details = vec![];
    for o in index_orbits() {
        let ((cc, cert), secs) = timed(|| {
            let (sys, cc) = cc_of(&o.masses, o.d, o.guess);
            let orbit = HomotheticOrbit::from_cc(&sys, &cc, -1.0).unwrap();
            let cert = homothetic_morse(&orbit, &HomotheticOptions::default()).unwrap();
            (cc, cert)
        });
        let (u, lams) = ellipsoid_spectrum(&o.masses, o.d, cc.s0_vector().as_slice());
        let count = lams.iter().filter(|&&l| l < -1e-8 * u).count() as i64;
        let ok = cert.morse == count && cert.full_maslov == count && secs < 10.0;
        pass &= ok;
        details.push(format!(
            "{}: crossing-counted {} (undecomposed {}), eigen count {count} of {lams:.6?}, {secs:.2} s",
            o.name, cert.morse, cert.full_maslov
        ));
    }
    verdict(1, "H0 < 0 Morse index equals #{λ < 0}", pass, &details);
    assert!(pass);
}

#[test]
fn criterion_2_nonnegative_energy_index_vanishes() {
    let mut pass = true;
    let mut details = vec![];
    for o in index_orbits() {
        let (sys, cc) = cc_of(&o.masses, o.d, o.guess);
        for h0 in [0.0, 0.3] {
            let orbit = HomotheticOrbit::from_cc(&sys, &cc, h0).unwrap();
            let cert = homothetic_morse(&orbit, &HomotheticOptions::default()).unwrap();
            pass &= cert.morse == 0;
            details.push(format!("{} H0 = {h0}: {}", o.name, cert.morse));
        }
    }
    verdict(2, "H0 >= 0 Morse index is 0", pass, &details);
    assert!(pass);
}

#[test]
fn criterion_3_block_index_dichotomy() {
    let b = 2.0;
    let orbit = HomotheticOrbit::from_spectrum(b, &[], -1.0).unwrap();
    let opts = HeteroclinicOptions::default();
    let mut pass = true;
    let mut rows = vec![];
    for lam in [-0.24, -0.2, -0.1, -0.01, 0.0, 0.01, 0.5, 5.0] {
        let e = mu_lambda(&orbit, lam, &opts).unwrap();
        let want_mu = if lam > -b / 8.0 && lam < 0.0 { 1 } else { 0 };
        let want_nu = usize::from(lam == 0.0);
        pass &= e.mu == want_mu && e.nu == want_nu;
        rows.push(format!("λ = {lam:>5}: μ = {} ν = {} (want {want_mu}, {want_nu})", e.mu, e.nu));
    }
    verdict(3, "b = 2 block index: 1 on (-b/8, 0), 0 on [0, ∞), ν = 1 at 0", pass, &rows);
    assert!(pass);
}

#[test]
fn criterion_4_hormander_value() {
    let mut pass = true;
    let mut rows = vec![];
    for b in [-0.5, -1.0, -4.0] {
        let split = HyperbolicSplitting::new(&Mat::from_diagonal(&Vector::from_vec(vec![1.0, b]))).unwrap();
        let vplus = LagrangianFrame::new(split.v_plus.unwrap()).unwrap();
        let vminus = LagrangianFrame::new(split.v_minus.unwrap()).unwrap();
        let vd = LagrangianFrame::dirichlet(1);
        let s = hormander_index(&vminus, &vd, &vplus, &vd, &MaslovOptions::default()).unwrap();
        pass &= s == 1;
        rows.push(format!("B = diag(1, {b}): s(V⁻, V_D; V⁺, V_D) = {s}"));
    }
    verdict(4, "Hörmander index of the stable/unstable pair is 1", pass, &rows);
    assert!(pass);
}

#[test]
fn criterion_5_fem_oracle_matches_maslov_count() {
    let start = Instant::now();
    let mut pass = true;
    let mut rows = vec![];
    for seed in 0..20u64 {
        let mut rng = common::rng(seed);
        let k = 1 + (seed % 3) as usize;
        let path = common::random_sturm_path(&mut rng, k);
        let t1 = rand::Rng::gen_range(&mut rng, -1.0..1.0);
        let len = rand::Rng::gen_range(&mut rng, 0.5..4.0);
        let cmp = compare(&path, (t1, t1 + len), &[100, 200, 400], &OracleOptions::default()).unwrap();
        let ok = cmp.verdict == Verdict::Pass;
        pass &= ok;
        if !ok || seed < 3 {
            rows.push(format!(
                "seed {seed} k {k} window [{t1:.3}, {:.3}]: FEM {:?} vs μ − k = {} ({})",
                t1 + len,
                cmp.fem_count,
                cmp.maslov_morse,
                cmp.reason
            ));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 60.0;
    rows.push(format!("20 paths in {secs:.2} s"));
    verdict(5, "FEM negative count equals μ(V_D, γV_D) − k on random paths", pass, &rows);
    assert!(pass);
}

#[test]
fn criterion_6_sundman_asymptotics() {
    let sys = MassSystem::new(vec![1.0, 1.0], 1).unwrap();
    let s0 = builtin_guess(&sys, "collinear").unwrap();
    let (_, s0) = sys.normalize(&sys.project_to_x(&s0)).unwrap();
    let u = sys.potential(&s0).unwrap();
    let chart = Chart::at(&sys, &s0).unwrap();
    // Apex of the H0 = -1 ejection-collision orbit, integrated into the collision.
    // β = T − t is a difference of O(1) times, so the run stops while β ≫ ε.
    let st = BlowupState { kind: BlowupKind::McGehee, v: 0.0, u: Vector::zeros(0), r: u, x: Vector::zeros(0), tau: 0.0, t: 0.0 };
    let traj = integrate(&sys, &chart, &st, 12.0, &FlowOptions::default()).unwrap();
    let beta = traj.collision_beta().unwrap();
    let beta_min = beta.last().unwrap().1;
    let collision = traj.last().state.t + beta_min;
    // Dense output from the last sample with β above the decade onward.
    let from = beta.iter().rev().find(|b| b.1 > 10.0 * beta_min).unwrap().0;
    let to = traj.last().state.tau;
    let tail: Vec<f64> = (0..=200)
        .filter_map(|i| {
            let (st, _) = traj.state_at(from + (to - from) * i as f64 / 200.0).unwrap();
            let b = collision - st.t;
            (b <= 10.0 * beta_min).then(|| st.r * b.powf(-2.0 / 3.0))
        })
        .collect();
    let target = (18.0 * u).cbrt();
    let worst = tail.iter().map(|c| (c - target).abs() / target).fold(0.0, f64::max);
    let pass = worst <= 1e-3 && !tail.is_empty();
    let measured = tail.iter().sum::<f64>() / tail.len() as f64;
    let alt = (4.5 * u).cbrt();
    let worst_alt = tail.iter().map(|c| (c - alt).abs() / alt).fold(0.0, f64::max);
    verdict(
        6,
        "r(t)β^(-2/3) within 1e-3 of (18U)^(1/3) over the last decade of β",
        pass,
        &[
            format!("U = {u:.12}, β ∈ [{beta_min:.3e}, {:.3e}], {} samples", 10.0 * beta_min, tail.len()),
            format!("measured {measured:.8}, target (18U)^(1/3) = {target:.8}, worst rel. error {worst:.3e}"),
            format!("(9U/2)^(1/3) = {alt:.8}, worst rel. error {worst_alt:.3e}"),
        ],
    );
    assert!(pass);
}

fn growth_check(report: &GrowthReport, target: f64, rows: &mut Vec<String>) -> bool {
    let last = report.samples.last().unwrap();
    let rel = (last.ratio - target).abs() / target;
    let defined = report.samples.iter().filter(|s| s.sandwich_ok.is_some()).count();
    let sandwich = report.samples.iter().all(|s| s.sandwich_ok != Some(false));
    rows.push(format!(
        "β(t2) = {:.3e}: m⁻ = {}, ratio {:.6} vs target {target:.6} (rel. error {rel:.3e}); time-map ratio {:.6}",
        last.beta, last.morse, last.ratio, report.target_time_map
    ));
    rows.push(format!("sandwich holds at {defined} of {} samples, violated at none: {sandwich}", report.samples.len()));
    rel <= 0.10 && sandwich
}

#[test]
fn criterion_7_spiral_growth_rate() {
    let mut rows = vec![];
    let schedule = geometric_schedule(0.1, 0.5, 21).unwrap();
    let (spiral, secs) = timed(|| {
        let orbit = HomotheticOrbit::from_spectrum(8.0, &[-2.0], -1.0).unwrap();
        growth_rate(&orbit, &schedule, &GrowthOptions::default()).unwrap()
    });
    let first = spiral.samples.first().unwrap().beta;
    let last = spiral.samples.last().unwrap().beta;
    rows.push(format!("synthetic U = 8, λ = -2: β from {first:.3e} to {last:.3e} ({:.2} decades), {secs:.1} s", (first / last).log10()));
    let mut pass = growth_check(&spiral, 0.026527, &mut rows) && secs < 300.0;

    let (sys, cc) = cc_of(&[1.0; 3], 2, "collinear");
    let (u, lams) = ellipsoid_spectrum(&[1.0; 3], 2, cc.s0_vector().as_slice());
    let spiral_lams: Vec<f64> = lams.iter().copied().filter(|&l| l < -u / 8.0).collect();
    rows.push(format!("Euler equal masses: class {}, λ = {lams:.6?}", cc.spiral_class.as_str()));
    if cc.spiral_class == SpiralClass::Spiral {
        let target = spiral_lams.iter().map(|l| (-0.125 - l / u).sqrt()).sum::<f64>() / (3.0 * 2f64.sqrt() * PI);
        let (euler, secs) = timed(|| {
            let orbit = HomotheticOrbit::from_cc(&sys, &cc, -1.0).unwrap();
            growth_rate(&orbit, &schedule, &GrowthOptions::default()).unwrap()
        });
        rows.push(format!("Euler run {secs:.1} s"));
        pass &= growth_check(&euler, target, &mut rows) && secs < 300.0;
    }
    verdict(7, "m⁻/|ln β| within 10% of the target over 6 decades, sandwich at every sample", pass, &rows);
    assert!(pass);
}

#[test]
fn criterion_8_maslov_axioms() {
    let mut pass = true;
    let mut rows = vec![];
    for (name, check) in common::AXIOMS {
        let failures: Vec<String> = (0..50u64).filter_map(|seed| check(seed).err()).collect();
        pass &= failures.is_empty();
        rows.push(format!("{name}: {}/50", 50 - failures.len()));
        rows.extend(failures.into_iter().take(3).map(|f| format!("  {f}")));
    }
    verdict(8, "Maslov index axioms on 50 random instances each", pass, &rows);
    assert!(pass);
}

#[test]
fn criterion_9_hyperbolicity_of_limit_systems() {
    let cases: [(&str, Vec<f64>, usize, &str); 6] = [
        ("two-body d=1", vec![1.0, 1.0], 1, "collinear"),
        ("two-body d=2", vec![1.0, 3.0], 2, "collinear"),
        ("Lagrange equal", vec![1.0; 3], 2, "equilateral"),
        ("Lagrange 1:2:3", vec![1.0, 2.0, 3.0], 2, "equilateral"),
        ("Euler equal d=1", vec![1.0; 3], 1, "collinear"),
        ("Euler equal d=2", vec![1.0; 3], 2, "collinear"),
    ];
    let mut pass = true;
    let mut rows = vec![];
    for (name, masses, d, guess) in cases {
        let (sys, cc) = cc_of(&masses, d, guess);
        let s0 = cc.s0_vector();
        let (u, lams) = ellipsoid_spectrum(&masses, d, s0.as_slice());
        let chart = Chart::at(&sys, &s0).unwrap();
        let nc = chart.eval(&sys, &Vector::zeros(chart.dim())).unwrap();
        let radial = 5.0 / (2.0 * 2f64.sqrt()) * u.sqrt();
        let mut expected = vec![Complex::new(radial, 0.0), Complex::new(-radial, 0.0)];
        for l in &lams {
            let e = csqrt(u / 8.0 + l);
            expected.push(e);
            expected.push(-e);
        }
        let strict = lams.iter().all(|&l| l > -u / 8.0 + 1e-8 * u);
        for sign in [-1.0, 1.0] {
            let b = bhat_limit_collision(sign * (2.0 * u).sqrt(), nc.u_val, &nc.u_hess, &nc.m_hat).unwrap();
            let split = HyperbolicSplitting::new(&b).unwrap();
            let dist = multiset_distance(&split.eigenvalues, &expected);
            let agrees = split.hyperbolic == strict && strict == (cc.spiral_class == SpiralClass::StrictNonSpiral);
            pass &= dist <= 1e-10 && agrees;
            rows.push(format!(
                "{name} v* = {}√(2U): spectrum error {dist:.2e}, hyperbolic {}, class {}",
                if sign < 0.0 { "-" } else { "+" },
                split.hyperbolic,
                cc.spiral_class.as_str()
            ));
        }
        // Escape ends at several energies and charts, including off-CC points.
        let mut rng = common::rng(d as u64 * 31 + masses.len() as u64);
        let mut escape_ok = true;
        for h0 in [0.05f64, 1.0, 20.0] {
            for _ in 0..3 {
                let x = Vector::from_fn(chart.dim(), |_, _| rand::Rng::gen_range(&mut rng, -0.2..0.2));
                let m_hat = chart.eval(&sys, &x).unwrap().m_hat;
                for sign in [-1.0, 1.0] {
                    let b = bhat_limit_hyperbolic(sign * (2.0 * h0).sqrt(), &m_hat).unwrap();
                    escape_ok &= HyperbolicSplitting::new(&b).unwrap().hyperbolic;
                }
            }
        }
        pass &= escape_ok;
        rows.push(format!("{name}: escape ends hyperbolic at every tested energy and chart point: {escape_ok}"));
    }
    verdict(9, "collision-end spectra, class agreement, escape-end hyperbolicity", pass, &rows);
    assert!(pass);
}
