//! End-to-end acceptance checks. Each test prints one PASS/FAIL line.

use std::sync::{Arc, OnceLock};

use hypflow::diagnostics::{self, fit_decay_values, linear_rate, mode_factor, rate_coefficient};
use hypflow::flow::{self, FunctionalSeries, RunOutput};
use hypflow::harmonics::{real_harmonic, HarmonicTransform};
use hypflow::hypgeom;
use hypflow::sampler::{self, SamplerConfig};
use hypflow::{make_grid, FlowConfig, RadialSurface, Resolution, ScalarField, SphereGrid};

fn report(id: u32, name: &str, pass: bool, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("criterion {id} [{name}]: {verdict}: {detail}");
}

fn sphere_res(n_theta: usize) -> Resolution {
    Resolution::Sphere {
        n_theta,
        n_phi: 2 * n_theta,
    }
}

fn grid(n: usize, res: Resolution) -> Arc<SphereGrid> {
    make_grid(n, res).unwrap()
}

fn config(n: usize, alpha: f64, res: Resolution, t_end: f64) -> FlowConfig {
    let mut cfg = FlowConfig::new(n, alpha).unwrap();
    cfg.resolution = res;
    cfg.stop.t_end = Some(t_end);
    cfg
}

fn zonal(res: Resolution, rho0: f64, amplitude: f64, l: usize) -> RadialSurface {
    let rho = ScalarField::from_fn(grid(2, res), |_, d| rho0 + amplitude * real_harmonic(2, l, 0, d));
    RadialSurface::new(rho).unwrap()
}

fn run(initial: &RadialSurface, cfg: &FlowConfig) -> RunOutput {
    match flow::run(initial, cfg) {
        Ok(out) => out,
        Err(e) => panic!("run failed: {}", e.error),
    }
}

fn max_drift(series: &FunctionalSeries) -> f64 {
    series.rows().iter().map(|r| r.volume_drift.abs()).fold(0.0, f64::max)
}

const SPHERE_TOL: f64 = 1e-10;

#[test]
fn criterion_1_stationary_sphere() {
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for n in [1, 2] {
        let res = if n == 1 { Resolution::Circle(256) } else { sphere_res(32) };
        for alpha in [0.5, 1.0, 2.0] {
            for rho0 in [0.5, 1.0, 2.0] {
                let ball = RadialSurface::sphere(grid(n, res), rho0).unwrap();
                let out = run(&ball, &config(n, alpha, res, 1.0));
                let err = out
                    .state
                    .surface
                    .field()
                    .values()
                    .iter()
                    .map(|r| (r - rho0).abs())
                    .fold(0.0, f64::max);
                if !(err <= SPHERE_TOL) || out.state.t < 1.0 - 1e-12 {
                    failures.push(format!("(n={n}, α={alpha}, ρ₀={rho0}): {err:e}"));
                }
                worst = worst.max(err);
            }
        }
    }
    let pass = failures.is_empty();
    report(1, "stationary sphere", pass, format!("max |ρ − ρ₀| = {worst:e} (tol {SPHERE_TOL:e}) {failures:?}"));
    assert!(pass);
}

const VOLUME_TOL: f64 = 1e-10;

/// Degree-2 perturbed unit ball (amplitude 0.1, n = 2, α = 1) evolved to t = 2.
fn perturbed_run(res: Resolution) -> RunOutput {
    run(&zonal(res, 1.0, 0.1, 2), &config(2, 1.0, res, 2.0))
}

const MAIN_RES: Resolution = Resolution::Sphere { n_theta: 80, n_phi: 160 };

/// The run shared by criteria 2 to 4.
fn main_run() -> &'static RunOutput {
    static RUN: OnceLock<RunOutput> = OnceLock::new();
    RUN.get_or_init(|| perturbed_run(MAIN_RES))
}

#[test]
fn criterion_2_volume_preservation() {
    let drift_on = max_drift(&main_run().series);

    // correction off, fixed steps below the stability bound
    let initial = zonal(MAIN_RES, 1.0, 0.1, 2);
    let drift_off = |dt: f64| {
        let mut cfg = config(2, 1.0, MAIN_RES, 2.0);
        cfg.volume_correction = false;
        cfg.filter_degree = Some(8);
        cfg.dt.max_step = dt;
        let out = run(&initial, &cfg);
        assert!(out.series.rows().iter().skip(1).all(|r| (r.dt - dt).abs() < 1e-12));
        max_drift(&out.series)
    };
    let (coarse, fine) = (drift_off(0.02), drift_off(0.01));
    let ratio = coarse / fine;
    let pass = drift_on <= VOLUME_TOL && (12.0..=20.0).contains(&ratio);
    report(
        2,
        "volume preservation",
        pass,
        format!("corrected drift {drift_on:e} (tol {VOLUME_TOL:e}); uncorrected {coarse:e} -> {fine:e}, ratio {ratio:.3} (want 16 within [12, 20])"),
    );
    assert!(pass);
}

const IDENTITY_TOL: f64 = 0.02;

#[test]
fn criterion_3_dissipation_identity() {
    let fine = main_run();
    let coarse = perturbed_run(sphere_res(32));
    let df = diagnostics::dissipation_from_series(&fine.series);
    let dc = diagnostics::dissipation_from_series(&coarse.series);
    let rows = fine.series.rows();
    let monotone = rows.windows(2).all(|w| w[1].a[1] <= w[0].a[1] * (1.0 + 1e-13));
    let pass = df.max_mismatch <= IDENTITY_TOL && df.max_mismatch < dc.max_mismatch && monotone && df.rhs_nonpositive;
    report(
        3,
        "dissipation identity",
        pass,
        format!(
            "max relative mismatch {:.3e} at 80x160, {:.3e} at 32x64 (tol {IDENTITY_TOL}); {} samples; A_1 non-increasing: {monotone}",
            df.max_mismatch,
            dc.max_mismatch,
            df.samples.len()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_4_variational_identity() {
    let v = diagnostics::variational_from_series(&main_run().series, 0).unwrap();
    let pass = v.max_mismatch <= IDENTITY_TOL;
    report(
        4,
        "variational identity (area rate)",
        pass,
        format!("max relative mismatch {:.3e} over {} samples (tol {IDENTITY_TOL})", v.max_mismatch, v.samples.len()),
    );
    assert!(pass);
}

#[test]
fn criterion_5_convexity_preservation() {
    let res = sphere_res(24);
    let mut sc = SamplerConfig::new(2, 2024, 20).unwrap();
    sc.resolution = res;
    let batch = sampler::sample_convex(&sc).unwrap();
    let mut min_kappa = f64::INFINITY;
    let mut failures = Vec::new();
    for alpha in [0.5, 1.0, 2.0] {
        for (i, s) in batch.samples.iter().enumerate() {
            match flow::run(&s.surface, &config(2, alpha, res, 0.5)) {
                Ok(out) => {
                    let k = out.series.rows().iter().map(|r| r.kappa_min).fold(f64::INFINITY, f64::min);
                    min_kappa = min_kappa.min(k);
                    if !(k > 0.0) {
                        failures.push(format!("body {i}, α={alpha}: κ_min {k:e}"));
                    }
                }
                Err(e) => failures.push(format!("body {i}, α={alpha}: {}", e.error)),
            }
        }
    }
    let pass = failures.is_empty() && batch.samples.len() == 20;
    report(
        5,
        "convexity preservation",
        pass,
        format!("60 runs to t = 0.5, smallest κ_min {min_kappa:.6} {failures:?}"),
    );
    assert!(pass);
}

/// Integrates ∂η/∂t = c(Δη + nη − (n/|S^n|)∫η) by RK4 with the right-hand side
/// truncated to degree 8 and fits the decay of a degree-l start.
fn brute_force_rate(grid: &Arc<SphereGrid>, c: f64, l: usize) -> f64 {
    let n = grid.dim();
    let omega = grid.area();
    let band = HarmonicTransform::build(grid, 8);
    let rhs = |eta: &[f64]| -> Vec<f64> {
        let f = ScalarField::new(grid.clone(), eta.to_vec()).unwrap();
        let lap = grid.laplacian(&f);
        let mean = grid.integrate(&f) / omega;
        let raw: Vec<f64> = (0..eta.len())
            .map(|j| c * (lap.values()[j] + n as f64 * eta[j] - n as f64 * mean))
            .collect();
        band.low_pass(grid, &raw)
    };
    let mut eta = ScalarField::from_fn(grid.clone(), |_, d| real_harmonic(n, l, 0, d) + 0.3).values().to_vec();
    let h = 0.5 / (c * 72.0);
    let steps = (3.0 / (c * mode_factor(n, l)) / h).ceil() as usize;
    let amp = |e: &[f64]| e.iter().copied().fold(f64::MIN, f64::max) - e.iter().copied().fold(f64::MAX, f64::min);
    let axpy = |e: &[f64], a: f64, k: &[f64]| -> Vec<f64> { e.iter().zip(k).map(|(e, k)| e + a * k).collect() };
    let (mut t, mut y) = (vec![0.0], vec![amp(&eta)]);
    for s in 1..=steps {
        let k1 = rhs(&eta);
        let k2 = rhs(&axpy(&eta, 0.5 * h, &k1));
        let k3 = rhs(&axpy(&eta, 0.5 * h, &k2));
        let k4 = rhs(&axpy(&eta, h, &k3));
        for j in 0..eta.len() {
            eta[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        t.push(s as f64 * h);
        y.push(amp(&eta));
    }
    fit_decay_values(&t, &y, None).unwrap().rate
}

const TABLE_TOL: f64 = 1e-3;
const RATE_TOL: f64 = 0.10;

#[test]
fn criterion_6_exponential_rate() {
    let g = grid(2, sphere_res(48));
    let c = rate_coefficient(2, 1.0, 1.0);
    let table_err = (2..=4)
        .map(|l| (brute_force_rate(&g, c, l) - linear_rate(2, 1.0, 1.0, l)).abs() / linear_rate(2, 1.0, 1.0, l))
        .fold(0.0, f64::max);

    let res = sphere_res(32);
    let out = run(&zonal(res, 1.0, 0.05, 2), &config(2, 1.0, res, 3.0));
    let fit = diagnostics::fit_decay(&out.series, None).unwrap();
    let rho_inf = hypgeom::ball_radius_for_volume(2, out.state.target_volume).unwrap();
    let predicted = linear_rate(2, 1.0, rho_inf, 2);
    let exact = diagnostics::linear_rate_exact(2, 1.0, rho_inf, 2);
    let rel = (fit.rate - predicted).abs() / predicted;
    let pass = table_err <= TABLE_TOL && rel <= RATE_TOL;
    report(
        6,
        "exponential convergence rate",
        pass,
        format!(
            "λ table vs linear-PDE oracle {table_err:.2e} (tol {TABLE_TOL:e}); fitted rate {:.6} on t ∈ [{:.2}, {:.2}] vs λ_2 = {predicted:.6} (rel {rel:.3}, tol {RATE_TOL}); exact linearization gives {exact:.6}",
            fit.rate, fit.t_start, fit.t_end
        ),
    );
    assert!(pass);
}

const CROSS_TOL: f64 = 0.01;

#[test]
fn criterion_7_cross_parametrization() {
    let fine_res = sphere_res(96);
    let mut sc = SamplerConfig::new(2, 7, 10).unwrap();
    sc.resolution = fine_res;
    let batch = sampler::sample_convex(&sc).unwrap();
    let coarse_grid = grid(2, sphere_res(48));
    let (mut worst_fine, mut worst_coarse, mut worst_ratio) = (0.0f64, 0.0f64, f64::INFINITY);
    for s in &batch.samples {
        let rho = ScalarField::from_fn(coarse_grid.clone(), |_, d| {
            sc.rho0 + s.terms.iter().map(|t| t.coeff * real_harmonic(2, t.l, t.m, d)).sum::<f64>()
        });
        let coarse = diagnostics::cross_parametrization(&RadialSurface::new(rho).unwrap()).unwrap();
        let fine = diagnostics::cross_parametrization(&s.surface).unwrap();
        let (cf, cc) = (fine.gauss.max(fine.weingarten), coarse.gauss.max(coarse.weingarten));
        worst_fine = worst_fine.max(cf);
        worst_coarse = worst_coarse.max(cc);
        worst_ratio = worst_ratio.min(cc / cf);
    }
    let pass = worst_fine <= CROSS_TOL && worst_ratio >= 3.0;
    report(
        7,
        "cross-parametrization consistency",
        pass,
        format!("worst relative gap {worst_fine:.3e} at 96x192 (tol {CROSS_TOL}), {worst_coarse:.3e} at 48x96; smallest refinement ratio {worst_ratio:.2} (want ≥ 3, second order)"),
    );
    assert!(pass);
}

const AF_FLOOR: f64 = 1e-6;

#[test]
fn criterion_8_alexandrov_fenchel() {
    let res = sphere_res(64);
    let mut sc = SamplerConfig::new(2, 11, 100).unwrap();
    sc.resolution = res;
    let batch = sampler::sample_convex(&sc).unwrap();
    let mut min_rel = f64::INFINITY;
    for s in &batch.samples {
        let r = diagnostics::af_verify(&s.surface).unwrap();
        min_rel = min_rel.min(r.gap / r.psi);
    }
    let ball_gap = [0.5, 1.0, 2.0]
        .iter()
        .map(|&rho| diagnostics::af_verify(&RadialSurface::sphere(grid(2, res), rho).unwrap()).unwrap().gap.abs())
        .fold(0.0, f64::max);
    let mut min_perturbed = f64::INFINITY;
    for (l, amp) in [(2, 0.05), (2, 0.1), (3, 0.05), (4, 0.03)] {
        let r = diagnostics::af_verify(&zonal(res, 1.0, amp, l)).unwrap();
        min_perturbed = min_perturbed.min(r.gap / r.psi);
    }
    let pass = min_rel >= -AF_FLOOR && ball_gap <= 1e-8 && min_perturbed > 10.0 * AF_FLOOR;
    report(
        8,
        "Alexandrov-Fenchel inequality",
        pass,
        format!(
            "100 sampled bodies: smallest gap/ψ {min_rel:.3e} (floor −{AF_FLOOR:e}); balls |gap| {ball_gap:.2e} (tol 1e-8); perturbed balls smallest gap/ψ {min_perturbed:.3e} (want > {:e})",
            10.0 * AF_FLOOR
        ),
    );
    assert!(pass);
}

const BALL_TOL: f64 = 1e-8;

#[test]
fn criterion_9_ball_table() {
    use std::f64::consts::PI;
    let g = grid(2, sphere_res(64));
    let mut worst: f64 = 0.0;
    for rho in [0.5, 1.0, 2.0] {
        let (_, f) = hypgeom::functionals(&RadialSurface::sphere(g.clone(), rho).unwrap()).unwrap();
        let expected = [
            (f.volume, PI * ((2.0 * rho).sinh() - 2.0 * rho)),
            (f.a(0), 4.0 * PI * rho.sinh().powi(2)),
            (f.a(1), 2.0 * PI * (2.0 * rho).sinh() + 4.0 * PI * rho),
            (f.kbar, 1.0 / rho.tanh().powi(2)),
        ];
        for (got, want) in expected {
            worst = worst.max((got - want).abs() / want);
        }
    }
    let pass = worst <= BALL_TOL;
    report(9, "ball closed-form table", pass, format!("largest relative error {worst:.3e} (tol {BALL_TOL:e})"));
    assert!(pass);
}
