//! Acceptance checks. Runs as a plain binary (no libtest harness) so that the
//! PASS/FAIL lines are always printed; exits non-zero if any check fails.
//!
//! `ACCEPTANCE_ONLY=1,7,8` restricts the run to the listed criteria.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use channeling::analysis::scan::x_profile;
use channeling::analysis::{
    fwhm, jacobian_field, prominent_maxima, tilt_sweep, yield_vs_thickness, MapTarget, YieldScan,
};
use channeling::config::RunConfig;
use channeling::constants::Kinematics;
use channeling::crystal::{critical_angle, proton_velocity, reduced_thickness};
use channeling::histogram::{flux_enhancement, FluxHistogram2D};
use channeling::laser_kh::{kh_fourier_component, kh_fourier_component_at, PointScatterer};
use channeling::montecarlo::{particle_rng, run_ensemble, EnsembleConfig};
use channeling::pipeline::Simulation;
use channeling::potentials::{
    point_potential, string_continuum_potential, HarmonicField, ScreeningModel, TransverseField,
};
use channeling::quad::{integrate_to_infinity, QuadOptions};
use channeling::transport::{
    propagate_trajectory, rk4_step, stopping_power, valence_stopping, ProtonState, StepConfig,
};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};

struct Report {
    failed: Vec<u32>,
}

impl Report {
    fn line(&mut self, id: u32, pass: bool, what: &str, detail: String) {
        println!("{} criterion {id:>2}: {what}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failed.push(id);
        }
    }

    fn info(&self, id: u32, what: &str, detail: String) {
        println!("INFO criterion {id:>2}: {what}: {detail}");
    }
}

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

fn silicon(energy: f64, thickness: f64, n: u64, seed: u64) -> RunConfig {
    RunConfig::minimal(energy, thickness, n, seed)
}

fn center_profile_fwhm(h: &FluxHistogram2D, half_band: f64) -> (Option<f64>, Option<f64>) {
    let (xs, xc) = x_profile(h, [0.0, 0.0], half_band);
    let (ys, yc) = channeling::analysis::scan::y_profile(h, [0.0, 0.0], half_band);
    (fwhm(&xs, &xc).ok(), fwhm(&ys, &yc).ok())
}

fn fmt_opt(v: Option<f64>, unit: &str) -> String {
    v.map(|v| format!("{v:.4} {unit}")).unwrap_or_else(|| "undefined".into())
}

fn c1(r: &mut Report) {
    let psi = critical_angle(2e6, 1, 14, 0.543).unwrap();
    r.line(1, rel(psi, 6.09e-3) <= 0.01, "critical angle at 2 MeV", format!("{:.4} mrad (target 6.09 +- 1%)", psi * 1e3));
}

fn c2(r: &mut Report, sim: &Simulation) {
    let v0 = proton_velocity(2e6);
    let mut worst = 0.0f64;
    let mut worst_channel = 0.0f64;
    let mut out = Vec::new();
    for (l, target) in [(79.32, 0.240), (83.0, 0.252), (85.93, 0.261)] {
        let lam = reduced_thickness(5.94e13, l, v0).unwrap();
        let lam_channel = reduced_thickness(sim.f_r, l, v0).unwrap();
        worst = worst.max(rel(lam, target));
        worst_channel = worst_channel.max(rel(lam_channel, target));
        out.push(format!("{l} nm -> {lam:.4} ({lam_channel:.4})"));
    }
    r.line(
        2,
        worst <= 0.008 && worst_channel <= 0.008,
        "reduced thickness at f_r = 5.94e13 Hz (computed channel f_r in parentheses)",
        format!("{}; worst {:.3}% / {:.3}% (limit 0.8%)", out.join(", "), worst * 100.0, worst_channel * 100.0),
    );
}

fn scan(sim: &Simulation, step: &StepConfig, n: u64) -> YieldScan {
    let cfg = silicon(2e6, 100.0, n, 1);
    yield_vs_thickness(&cfg.ensemble_config(), &sim.medium, step, sim.f_r, (0.15, 0.35), 21, None).unwrap()
}

fn c3_c4(r: &mut Report, sim: &Simulation) {
    let step = StepConfig::default();
    let t = Instant::now();
    let s = scan(sim, &step, 100_000);
    let k = s.peak_index();
    let peak = s.lambda_values[k];
    r.line(
        3,
        (peak - 0.25).abs() <= 0.03 + 1e-9,
        "on-axis yield maximum over the reduced-thickness scan (N = 1e5, 21 points)",
        format!(
            "peak at {peak:.3} (L = {:.2} nm), target 0.25 +- 0.03; full width {} ({:.0} s)",
            s.thickness_nm[k],
            fmt_opt(s.peak_width().ok(), ""),
            t.elapsed().as_secs_f64()
        ),
    );
    let yields: Vec<String> = s.lambda_values.iter().zip(&s.enhancement).map(|(l, e)| format!("{l:.2}:{e:.1}")).collect();
    r.info(3, "enhancement by reduced thickness", yields.join(" "));

    let plane = &s.planes[k];
    let (fx, fy) = center_profile_fwhm(plane, 0.0025);
    let enh = s.enhancement[k];
    let bin_enh = flux_enhancement(plane, sim.geometry.cell_area).unwrap();
    let sharp = matches!((fx, fy), (Some(a), Some(b)) if a < 0.01 && b < 0.01);
    r.line(
        4,
        sharp && enh >= 100.0,
        "focus at the scan maximum",
        format!(
            "FWHM x {} / y {} (limit 0.01 nm); on-axis enhancement {enh:.1} (limit >= 100); peak-bin enhancement {bin_enh:.1}",
            fmt_opt(fx, "nm"),
            fmt_opt(fy, "nm")
        ),
    );

    // Same scan without electronic multiple scattering, for reference only.
    let quiet = StepConfig {
        scattering_enabled: false,
        ..StepConfig::default()
    };
    let s = scan(sim, &quiet, 100_000);
    let k = s.peak_index();
    let (fx, fy) = center_profile_fwhm(&s.planes[k], 0.0025);
    r.info(
        4,
        "same scan with electronic multiple scattering off",
        format!(
            "peak at {:.3}, on-axis enhancement {:.1}, FWHM x {} / y {}",
            s.lambda_values[k],
            s.enhancement[k],
            fmt_opt(fx, "nm"),
            fmt_opt(fy, "nm")
        ),
    );
}

fn c5(r: &mut Report) {
    let mut cfg = silicon(3e6, 100.0, 1_000_000, 5);
    cfg.beam.tilt_fraction = 0.05;
    let sim = Simulation::build(&cfg).unwrap();
    let t = Instant::now();
    let res = run_ensemble(&cfg.ensemble_config(), &sim.medium, &cfg.step, None).unwrap();
    let (xs, ys) = x_profile(&res.exit_position, [0.0, 0.0], cfg.analysis.profile_band);
    let w = fwhm(&xs, &ys).ok();
    let pass = w.is_some_and(|w| rel(w, 0.482) <= 0.20);
    let (ax, ay) = x_profile(&res.exit_angle, [0.0, 0.0], 0.25);
    r.line(
        5,
        pass,
        "exit transmission peak along the tilt axis at 0.05 psi_c, 3 MeV, 100 nm, N = 1e6",
        format!(
            "FWHM {} (target 0.482 nm +- 20%); cell extent along x is {:.3} nm ({:.0} s)",
            fmt_opt(w, "nm"),
            2.0 * sim.geometry.inscribed_radius() * std::f64::consts::SQRT_2,
            t.elapsed().as_secs_f64()
        ),
    );
    r.info(5, "exit angle profile width along the tilt axis", fmt_opt(fwhm(&ax, &ay).ok(), "mrad"));
}

/// Peak count and peak over mean occupied bin.
fn peak_stats(h: &FluxHistogram2D) -> (u64, f64) {
    let occupied: Vec<u64> = h.counts.iter().copied().filter(|&c| c > 0).collect();
    let mean = occupied.iter().sum::<u64>() as f64 / occupied.len().max(1) as f64;
    let peak = h.max_bin().2;
    (peak, peak as f64 / mean)
}

fn tilt_axis_maxima(h: &FluxHistogram2D, half_band: f64) -> usize {
    let (_, ys) = x_profile(h, [0.0, 0.0], half_band);
    let top = ys.iter().cloned().fold(0.0, f64::max);
    // Three standard deviations of a Poisson count at the top of the profile.
    prominent_maxima(&ys, 3.0 * top.sqrt()).len()
}

fn judge_tilts(peaks: &[(u64, f64)], maxima_015: usize) -> (bool, bool, bool) {
    let monotone = peaks.windows(2).all(|w| w[1].0 <= w[0].0);
    let max_at_zero = peaks.iter().all(|p| p.0 <= peaks[0].0);
    let uniform = peaks[4].1 < 0.25 * peaks[0].1;
    (monotone && max_at_zero, maxima_015 >= 2, uniform)
}

fn c6(r: &mut Report) {
    let tilts = [0.0, 0.05, 0.10, 0.15, 0.20];
    let mut cfg = silicon(3e6, 100.0, 100_000, 6);
    cfg.beam.divergence_mrad = 0.1;
    let sim = Simulation::build(&cfg).unwrap();
    let t = Instant::now();
    let cube = tilt_sweep(&cfg.ensemble_config(), &sim.medium, &cfg.step, &tilts, None).unwrap();
    let ang: Vec<(u64, f64)> = cube.angle.iter().map(peak_stats).collect();
    let ang_max = tilt_axis_maxima(&cube.angle[3], 0.25);
    let (a, b, c) = judge_tilts(&ang, ang_max);
    let fmt = |p: &[(u64, f64)]| p.iter().map(|(m, q)| format!("{m}/{q:.1}")).collect::<Vec<_>>().join(" ");
    r.line(
        6,
        a && b && c,
        "tilt sweep on the exit angle plane (3 MeV, 100 nm, 0.1 mrad divergence, N = 1e5 per tilt)",
        format!(
            "peak/ratio by tilt {}; non-increasing with max at 0: {a}; maxima along tilt axis at 0.15: {ang_max} (need >= 2): {b}; ratio at 0.20 below 25% of tilt 0: {c} ({:.0} s)",
            fmt(&ang),
            t.elapsed().as_secs_f64()
        ),
    );
    let pos: Vec<(u64, f64)> = cube.position.iter().map(peak_stats).collect();
    let pos_max = tilt_axis_maxima(&cube.position[3], cfg.analysis.profile_band);
    let (a, b, c) = judge_tilts(&pos, pos_max);
    r.info(
        6,
        "same checks on the exit position plane",
        format!("peak/ratio by tilt {}; monotone {a}; maxima at 0.15: {pos_max} ({b}); uniform at 0.20: {c}", fmt(&pos)),
    );
}

fn c7(r: &mut Report) {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0f64;
    let mut n = 0;
    while n < 1000 {
        let e = rng.random_range(0.3e6..10e6);
        let v = Kinematics::proton(e).velocity;
        let z1 = rng.random_range(1..=3);
        let n_atoms = rng.random_range(1.0..500.0);
        let z = rng.random_range(0.5..8.0);
        let vf = rng.random_range(0.2e6..v.min(3e6));
        let b = stopping_power(z1, v, n_atoms * z);
        if !(b > 0.0) {
            continue;
        }
        let a = valence_stopping(z1, v, n_atoms, z, z, vf).unwrap();
        worst = worst.max(rel(a, b));
        n += 1;
    }
    r.line(7, worst <= 1e-12, "valence stopping with Z_loc = Z_val equals local stopping at 1000 random points", format!("worst relative difference {worst:.2e} (limit 1e-12)"));
}

fn c8(r: &mut Report, sim: &Simulation) {
    let mut notes = Vec::new();
    let mut ok = true;

    let m = ScreeningModel::moliere(14);
    let mut worst = 0.0f64;
    for rr in [0.01, 0.05, 0.1] {
        let closed = string_continuum_potential(&m, 1, 14, 0.543, rr).unwrap();
        let opts = QuadOptions {
            abs_tol: 0.0,
            rel_tol: 1e-12,
            max_intervals: 10_000,
        };
        let q = integrate_to_infinity(|z| point_potential(&m, 1, 14, (rr * rr + z * z).sqrt()).unwrap(), 0.0, opts).unwrap();
        worst = worst.max(rel(closed, 2.0 * q.value / 0.543));
    }
    ok &= worst < 1e-6;
    notes.push(format!("continuum vs quadrature {worst:.1e}"));

    let f = &sim.field;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut n = 0;
    while n < 100 {
        let p = [rng.random_range(-0.13..0.13), rng.random_range(-0.13..0.13)];
        if !f.geometry.contains(p) || f.geometry.closest_string(p).1 < 0.01 {
            continue;
        }
        let g = f.gradient(p);
        let fd = [
            (f.potential([p[0] + h, p[1]]) - f.potential([p[0] - h, p[1]])) / (2.0 * h),
            (f.potential([p[0], p[1] + h]) - f.potential([p[0], p[1] - h])) / (2.0 * h),
        ];
        let scale = (g[0].hypot(g[1])).max(1.0);
        worst = worst.max((g[0] - fd[0]).hypot(g[1] - fd[1]) / scale);
        n += 1;
    }
    ok &= worst < 1e-6;
    notes.push(format!("gradient vs finite differences {worst:.1e}"));

    let e0 = 2e6;
    let pv = Kinematics::proton(e0).pv;
    let field = HarmonicField {
        k: pv * (2.0 * PI * sim.f_r / proton_velocity(e0) * 1e-9).powi(2),
        center: [0.0, 0.0],
    };
    let w = (field.k / pv).sqrt();
    let (x0, t0, l) = (0.05, 1e-3, 100.0);
    let exact = x0 * (w * l).cos() + t0 / w * (w * l).sin();
    let err = |dz: f64| {
        let steps = (l / dz).round() as usize;
        let mut s = ProtonState::new([x0, 0.0], [t0, 0.0], e0);
        for _ in 0..steps {
            s = rk4_step(&s, &field, None, dz);
        }
        (s.position[0] - exact).abs()
    };
    let (e1, e2, e3) = (err(2.0), err(1.0), err(0.5));
    let p1 = (e1 / e2).log2();
    let p2 = (e2 / e3).log2();
    ok &= (p1 - 4.0).abs() < 0.3 && (p2 - 4.0).abs() < 0.3;
    notes.push(format!("RK4 observed order {p1:.2}, {p2:.2}"));

    let mut worst = 0.0f64;
    for _ in 0..20 {
        let a = [[rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)], [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]];
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        let b = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let mut samples = Vec::new();
        for j in 0..9 {
            for i in 0..9 {
                let p = [-0.1 + 0.025 * i as f64, -0.1 + 0.025 * j as f64];
                let q = [a[0][0] * p[0] + a[0][1] * p[1] + b[0], a[1][0] * p[0] + a[1][1] * p[1] + b[1]];
                samples.push((p, q));
            }
        }
        let jf = jacobian_field(&samples, MapTarget::PositionPlane).unwrap();
        for v in &jf.values {
            worst = worst.max((v - det).abs() / det.abs().max(1.0));
        }
    }
    ok &= worst < 1e-10;
    notes.push(format!("Jacobian vs det {worst:.1e}"));

    let src = PointScatterer::phosphorus([0.0, 0.0]);
    let mut exact_kh = true;
    for rr in [0.003, 0.02, 0.1, 0.4] {
        exact_kh &= kh_fourier_component(&src, 0.0, 0, rr).unwrap() == Complex64::new(src.potential(rr).unwrap(), 0.0);
        exact_kh &= kh_fourier_component(&src, 0.0, 3, rr).unwrap() == Complex64::new(0.0, 0.0);
    }
    ok &= exact_kh;
    notes.push(format!("KH identity at alpha0 = 0 exact: {exact_kh}"));

    let a = src.model.a;
    let (alpha0, d) = (a, [1.4 * a, 1.1 * a]);
    let coeffs: Vec<Complex64> = (-32..=32).map(|n| kh_fourier_component_at(&src, alpha0, n, d).unwrap()).collect();
    let mut worst = 0.0f64;
    for tau in [0.0, 0.7, 2.0, 3.9, 5.5] {
        let sum: Complex64 = (-32..=32).zip(&coeffs).map(|(n, c)| c * Complex64::from_polar(1.0, n as f64 * tau)).sum();
        let direct = src.potential((d[0] + alpha0 * tau.cos()).hypot(d[1] + alpha0 * tau.sin())).unwrap();
        worst = worst.max((sum - direct).norm() / direct.abs());
    }
    ok &= worst < 1e-6;
    notes.push(format!("Fourier reconstruction at N = 32 {worst:.1e}"));

    r.line(8, ok, "numerical kernels (limits 1e-6, 1e-6, order 4 +- 0.3, 1e-10, exact, 1e-6)", notes.join("; "));
}

fn c9(r: &mut Report, sim: &Simulation) {
    let cfg = silicon(2e6, 83.0, 10_000, 9);
    let mut base = cfg.ensemble_config();
    base.record_planes = vec![40.0];
    let runs: Vec<_> = [1, 2, 8]
        .into_iter()
        .map(|t| run_ensemble(&base, &sim.medium, &cfg.step, Some(t)).unwrap())
        .collect();
    let bytes = |res: &channeling::montecarlo::EnsembleResult| {
        let mut b = res.exit_position.to_bytes();
        b.extend(res.exit_angle.to_bytes());
        b.extend(res.planes[0].to_bytes());
        b.extend(serde_json::to_vec(&res.summary).unwrap());
        b
    };
    let identical = runs.windows(2).all(|w| bytes(&w[0]) == bytes(&w[1]));

    let enhancement = |n: u64, seed: u64| {
        let c = EnsembleConfig { n_particles: n, seed, ..EnsembleConfig::new(n, seed, cfg.beam.spec(), 83.0) };
        let res = run_ensemble(&c, &sim.medium, &cfg.step, None).unwrap();
        let area = PI * c.on_axis_radius * c.on_axis_radius;
        res.exit_on_axis as f64 / (n as f64 * area / sim.geometry.cell_area)
    };
    let std = |n: u64| {
        let v: Vec<f64> = (0..10).map(|s| enhancement(n, 1000 + s)).collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        (mean, var.sqrt())
    };
    let t = Instant::now();
    let (m1, s1) = std(10_000);
    let (m4, s4) = std(40_000);
    let ratio = s1 / s4;
    // With 10 seeds each sample deviation has a relative spread of about
    // 1/sqrt(18); the ratio of two is accepted within two of its spreads.
    let spread = (2.0f64 / 18.0).sqrt();
    let lo = 2.0 * (-2.0 * spread).exp();
    let hi = 2.0 * (2.0 * spread).exp();
    let scaling = (lo..=hi).contains(&ratio);
    r.line(
        9,
        identical && scaling,
        "determinism across 1/2/8 workers and N^-1/2 noise scaling over 10 seeds",
        format!(
            "byte-identical: {identical}; enhancement {m1:.2} +- {s1:.3} at 1e4, {m4:.2} +- {s4:.3} at 4e4; std ratio {ratio:.2} (expected 2, accepted [{lo:.2}, {hi:.2}]) ({:.0} s)",
            t.elapsed().as_secs_f64()
        ),
    );
}

fn c10(r: &mut Report, sim: &Simulation) {
    let e0 = 2e6;
    let v0 = Kinematics::proton(e0).velocity;
    let step = StepConfig::default();
    let mut losses = Vec::new();
    for (k, x) in [0.005, 0.01, 0.02].into_iter().enumerate() {
        let mut rng = particle_rng(10, k as u64);
        let s0 = ProtonState::new([x, 0.0], [0.0, 0.0], e0);
        let s = propagate_trajectory(&s0, &sim.medium, 100.0, &step, &mut rng, None).unwrap();
        assert!(matches!(s.status, channeling::transport::Status::Exited), "entry at {x} nm did not stay channeled");
        losses.push(e0 - s.energy);
    }
    let uniform = stopping_power(1, v0, 32.0 / 0.543f64.powi(3)) * 100.0;
    let ok = losses.iter().all(|&l| (50.0..=1e4).contains(&l) && l < uniform);
    let shown: Vec<String> = losses.iter().map(|l| format!("{l:.0} eV")).collect();
    r.line(
        10,
        ok,
        "energy loss of well-channeled 2 MeV protons over 100 nm (entry at 0.005/0.01/0.02 nm)",
        format!("{} (range [50, 10000] eV, uniform-density estimate {uniform:.0} eV)", shown.join(", ")),
    );
}

fn main() -> ExitCode {
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let want = |id: u32| only.as_ref().is_none_or(|o| o.contains(&id));
    let mut r = Report { failed: Vec::new() };
    let t = Instant::now();
    let sim = Simulation::build(&silicon(2e6, 83.0, 1, 0)).unwrap();
    if want(1) {
        c1(&mut r);
    }
    if want(2) {
        c2(&mut r, &sim);
    }
    if want(3) || want(4) {
        c3_c4(&mut r, &sim);
    }
    if want(5) {
        c5(&mut r);
    }
    if want(6) {
        c6(&mut r);
    }
    if want(7) {
        c7(&mut r);
    }
    if want(8) {
        c8(&mut r, &sim);
    }
    if want(9) {
        c9(&mut r, &sim);
    }
    if want(10) {
        c10(&mut r, &sim);
    }
    println!("acceptance finished in {:.0} s", t.elapsed().as_secs_f64());
    if r.failed.is_empty() {
        println!("all acceptance criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("failed criteria: {:?}", r.failed);
        ExitCode::FAILURE
    }
}
