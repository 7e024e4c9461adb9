//! The five subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use hypflow::diagnostics::{self, AfReport, BallDistance, DecayFit};
use hypflow::flow::{self, FlowState, FunctionalSeries};
use hypflow::format::{fmt17, to_json};
use hypflow::harmonics::real_harmonic;
use hypflow::hypgeom::{self, Functionals};
use hypflow::sampler::{self, SamplerConfig};
use hypflow::{make_grid, RadialSurface, Resolution, ScalarField};
use serde::Serialize;

use crate::config::SimConfig;
use crate::manifest::{emit, unique_run_dir, RunManifest};
use crate::CliError;

/// Flags shared by every subcommand.
#[derive(Clone, Debug, Default)]
pub struct Common {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub resolution: Option<Resolution>,
    pub quiet: bool,
}

impl Common {
    fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    fn resolution_for(&self, n: usize) -> Result<Resolution, CliError> {
        let res = match self.resolution {
            Some(r) => r,
            None => Resolution::default_for(n)?,
        };
        if res.dim() != n {
            return Err(CliError::config(format!("resolution {res} does not match n = {n}")));
        }
        Ok(res)
    }

    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

/// End-of-run diagnostics written to `summary.json`.
#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub status: String,
    pub t: f64,
    pub steps: usize,
    pub rejections: usize,
    pub recenterings: usize,
    pub max_volume_drift: f64,
    /// A_{n−1} never rose by more than 1e−6 relative between accepted steps.
    pub a_nm1_nonincreasing: bool,
    pub min_kappa: f64,
    pub final_osc: f64,
    pub functionals: Option<Functionals>,
    pub ball_distance: Option<BallDistance>,
    pub af: Option<AfReport>,
    pub decay_fit: Option<DecayFit>,
    /// λ_2 of the linearized model at the volume-matching radius.
    pub linear_rate_l2: f64,
    pub dissipation_max_mismatch: f64,
    pub area_rate_max_mismatch: f64,
}

fn summarize(status: &str, series: &FunctionalSeries, state: Option<&FlowState>, alpha: f64, rejections: usize, recenterings: usize) -> Summary {
    let rows = series.rows();
    let n = rows.first().map(|r| r.a.len() - 1).unwrap_or(2);
    let k = n - 1;
    let max_volume_drift = rows.iter().map(|r| r.volume_drift.abs()).fold(0.0, f64::max);
    let a_nm1_nonincreasing = rows.windows(2).all(|w| w[1].a[k] <= w[0].a[k] + 1e-6 * w[0].a[k].abs());
    let min_kappa = rows.iter().map(|r| r.kappa_min).fold(f64::INFINITY, f64::min);
    let radial = state.and_then(|s| s.surface.to_radial().ok());
    let rho_inf = state
        .and_then(|s| hypgeom::ball_radius_for_volume(n, s.target_volume).ok())
        .unwrap_or(f64::NAN);
    Summary {
        status: status.into(),
        t: rows.last().map(|r| r.t).unwrap_or(0.0),
        steps: rows.len().saturating_sub(1),
        rejections,
        recenterings,
        max_volume_drift,
        a_nm1_nonincreasing,
        min_kappa,
        final_osc: rows.last().map(|r| r.osc).unwrap_or(f64::NAN),
        functionals: state.map(|s| s.functionals.clone()),
        ball_distance: radial.as_ref().and_then(|r| diagnostics::ball_distance(r).ok()),
        af: radial.as_ref().and_then(|r| diagnostics::af_verify(r).ok()),
        decay_fit: diagnostics::fit_decay(series, None).ok(),
        linear_rate_l2: diagnostics::linear_rate(n, alpha, rho_inf, 2),
        dissipation_max_mismatch: diagnostics::dissipation_from_series(series).max_mismatch,
        area_rate_max_mismatch: diagnostics::variational_from_series(series, 0)
            .map(|r| r.max_mismatch)
            .unwrap_or(f64::NAN),
    }
}

fn initial_surface(cfg: &SimConfig, resolution: Resolution, seed: u64, base: &Path) -> Result<RadialSurface, CliError> {
    let n = cfg.flow.n;
    let grid = make_grid(n, resolution)?;
    let init = &cfg.initial;
    let surface = match init.shape.as_str() {
        "ball" => RadialSurface::sphere(grid, init.rho0)?,
        "harmonic" => {
            let (l, m) = (init.degree, init.order);
            let rho = ScalarField::from_fn(grid, |_, d| init.rho0 + init.amplitude * real_harmonic(n, l, m, d));
            RadialSurface::new(rho)?
        }
        "random" => {
            let mut sc = SamplerConfig::new(n, seed, 1)?;
            sc.rho0 = init.rho0;
            sc.cap = init.cap;
            sc.resolution = resolution;
            sampler::sample_convex(&sc)?.samples.remove(0).surface
        }
        _ => {
            let file = init.file.as_ref().expect("checked at parse time");
            let path = if file.is_absolute() { file.clone() } else { base.join(file) };
            let text = fs::read_to_string(&path)
                .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
            let (_, rho) = ScalarField::from_csv(grid, &text)?;
            RadialSurface::new(rho)?
        }
    };
    let cert = sampler::certify(&surface).map_err(|e| CliError::config(format!("initial surface rejected: {e}")))?;
    if !cert.pass {
        return Err(CliError::config(format!(
            "initial surface fails the convexity certificate at node {} (eigenvalue {})",
            cert.node,
            fmt17(cert.min_eigenvalue)
        )));
    }
    Ok(surface)
}

/// Runs the flow described by a config file. Returns the run directory and summary.
pub fn simulate(config_path: &Path, common: &Common) -> Result<(PathBuf, Summary), CliError> {
    let text = fs::read_to_string(config_path)
        .map_err(|e| CliError::config(format!("{}: {e}", config_path.display())))?;
    let cfg = SimConfig::parse(&text).map_err(|e| CliError::config(format!("{}: {}", config_path.display(), e.message)))?;
    let resolution = cfg.resolution(common.resolution)?;
    let flow_cfg = cfg.flow_config(resolution)?;
    let seed = common.seed.unwrap_or(0);
    let base = config_path.parent().unwrap_or(Path::new("."));
    let initial = initial_surface(&cfg, resolution, seed, base)?;

    let dir = unique_run_dir(&common.out_dir(), "simulate")?;
    let mut manifest = RunManifest::new("simulate", &flow_cfg, Some(text.clone()), resolution.to_string(), Some(seed));
    manifest.write(&dir)?;
    common.say(format!("writing to {}", dir.display()));

    let every = flow_cfg.snapshot_every;
    let mut written: Vec<String> = Vec::new();
    let mut io_error: Option<std::io::Error> = None;
    let result = flow::run_with(&initial, &flow_cfg, |state, _| {
        let step = state.step_count;
        if every > 0 && step % every == 0 && io_error.is_none() {
            let name = format!("snapshots/{}_{step:07}.csv", state.surface.field_name());
            let path = dir.join(&name);
            let res = fs::create_dir_all(path.parent().unwrap()).and_then(|_| fs::write(&path, state.surface.field().to_csv(state.surface.field_name())));
            match res {
                Ok(()) => written.push(name),
                Err(e) => io_error = Some(e),
            }
        }
        if step > 0 && step % 1000 == 0 {
            common.say(format!("step {step}: t = {}, osc = {}", fmt17(state.t), fmt17(state.osc)));
        }
    });
    manifest.outputs.extend(written);
    if let Some(e) = io_error {
        return Err(e.into());
    }

    let (series, state, status, failure, rejections, recenterings) = match result {
        Ok(out) => (out.series, Some(out.state), "completed", None, out.rejections, out.recenterings),
        Err(e) => {
            let state = e.state.map(|b| *b);
            (e.series, state, "numerical failure", Some(e.error), 0, 0)
        }
    };
    emit(&dir, &mut manifest, "series.jsonl", &series.to_jsonl())?;
    emit(&dir, &mut manifest, "series.csv", &series.to_csv())?;
    if let Some(s) = &state {
        let name = if failure.is_some() { "failed_state" } else { "final" };
        let file = format!("{name}_{}.csv", s.surface.field_name());
        emit(&dir, &mut manifest, &file, &s.surface.field().to_csv(s.surface.field_name()))?;
    }
    let summary = summarize(status, &series, state.as_ref(), flow_cfg.alpha, rejections, recenterings);
    emit(&dir, &mut manifest, "summary.json", &(to_json(&summary) + "\n"))?;
    manifest.finish(&dir, status)?;
    match failure {
        None => Ok((dir, summary)),
        Some(e) => Err(CliError::numerical(format!("{e}; partial results in {}", dir.display()))),
    }
}

/// Settings of the sampling commands.
#[derive(Clone, Debug, Serialize)]
pub struct SampleArgs {
    pub n: usize,
    pub count: usize,
    pub cap: f64,
    pub rho0: f64,
}

fn sampler_config(args: &SampleArgs, common: &Common) -> Result<SamplerConfig, CliError> {
    let mut sc = SamplerConfig::new(args.n, common.seed.unwrap_or(0), args.count)?;
    sc.cap = args.cap;
    sc.rho0 = args.rho0;
    sc.resolution = common.resolution_for(args.n)?;
    sc.validate()?;
    Ok(sc)
}

/// Writes `count` sampled convex bodies as field CSVs. Returns the run directory
/// and the acceptance rate.
pub fn sample_convex(args: &SampleArgs, common: &Common) -> Result<(PathBuf, f64), CliError> {
    let sc = sampler_config(args, common)?;
    let batch = sampler::sample_convex(&sc)?;
    let dir = unique_run_dir(&common.out_dir(), "samples")?;
    let mut manifest = RunManifest::new("sample-convex", &sc, None, sc.resolution.to_string(), Some(sc.seed));
    manifest.write(&dir)?;
    let mut index = String::from("index,attempt,volume,certificate_min_eigenvalue,file\n");
    for (i, s) in batch.samples.iter().enumerate() {
        let file = format!("body_{i:04}.csv");
        emit(&dir, &mut manifest, &file, &s.surface.rho().to_csv("rho"))?;
        index.push_str(&format!(
            "{i},{},{},{},{file}\n",
            s.attempt,
            fmt17(hypgeom::enclosed_volume(&s.surface)),
            fmt17(s.certificate.min_eigenvalue)
        ));
    }
    emit(&dir, &mut manifest, "samples.csv", &index)?;
    manifest.finish(&dir, "completed")?;
    common.say(format!(
        "{} bodies in {} attempts (acceptance {})",
        batch.samples.len(),
        batch.attempts,
        fmt17(batch.acceptance_rate())
    ));
    Ok((dir, batch.acceptance_rate()))
}

#[derive(Clone, Debug, Serialize)]
pub struct AfSummary {
    pub count: usize,
    pub min_gap: f64,
    /// Smallest gap / ψ_n.
    pub min_relative_gap: f64,
    /// Bodies with gap < −1e−6·ψ_n.
    pub violations: usize,
    pub pass: bool,
}

/// Relative quadrature floor of the Alexandrov–Fenchel gap.
pub const AF_FLOOR: f64 = 1e-6;

/// Samples bodies and reports A_{n−1} − ψ_n(|Ω|) for each.
pub fn verify_af(args: &SampleArgs, common: &Common) -> Result<(PathBuf, AfSummary), CliError> {
    let sc = sampler_config(args, common)?;
    let batch = sampler::sample_convex(&sc)?;
    let dir = unique_run_dir(&common.out_dir(), "verify-af")?;
    let mut manifest = RunManifest::new("verify-af", &sc, None, sc.resolution.to_string(), Some(sc.seed));
    manifest.write(&dir)?;
    let n = args.n;
    let mut csv = format!("seed,index,volume,A{},psi{n},gap\n", n - 1);
    let mut summary = AfSummary {
        count: 0,
        min_gap: f64::INFINITY,
        min_relative_gap: f64::INFINITY,
        violations: 0,
        pass: true,
    };
    for (i, s) in batch.samples.iter().enumerate() {
        let r = diagnostics::af_verify(&s.surface)?;
        csv.push_str(&format!(
            "{},{i},{},{},{},{}\n",
            sc.seed,
            fmt17(r.volume),
            fmt17(r.a_nm1),
            fmt17(r.psi),
            fmt17(r.gap)
        ));
        summary.count += 1;
        summary.min_gap = summary.min_gap.min(r.gap);
        summary.min_relative_gap = summary.min_relative_gap.min(r.gap / r.psi);
        if r.gap < -AF_FLOOR * r.psi {
            summary.violations += 1;
        }
    }
    summary.pass = summary.violations == 0;
    emit(&dir, &mut manifest, "af.csv", &csv)?;
    emit(&dir, &mut manifest, "summary.json", &(to_json(&summary) + "\n"))?;
    let status = if summary.pass { "completed" } else { "inequality violated" };
    manifest.finish(&dir, status)?;
    if !summary.pass {
        return Err(CliError::numerical(format!(
            "{} of {} gaps below the quadrature floor; see {}",
            summary.violations,
            summary.count,
            dir.display()
        )));
    }
    Ok((dir, summary))
}

/// CSV table `l,lambda,lambda_exact` for l = 0..=l_max.
pub fn linear_rate_table(n: usize, alpha: f64, rho_inf: f64, l_max: usize) -> Result<String, CliError> {
    let model = diagnostics::LinearizedModel::new(n, alpha, rho_inf, l_max)?;
    let mut out = String::from("l,lambda,lambda_exact\n");
    for (l, rate) in model.rates.iter().enumerate() {
        out.push_str(&format!(
            "{l},{},{}\n",
            fmt17(*rate),
            fmt17(diagnostics::linear_rate_exact(n, alpha, rho_inf, l))
        ));
    }
    Ok(out)
}

/// Largest relative mismatch tolerated by the ball table.
pub const BALL_TABLE_TOL: f64 = 1e-8;

/// CSV table of closed-form against quadrature values for geodesic balls.
/// Returns the table and the largest relative mismatch.
pub fn ball_table(n: usize, rhos: &[f64], common: &Common) -> Result<(String, f64), CliError> {
    let grid = make_grid(n, common.resolution_for(n)?)?;
    let mut out = String::from("rho,quantity,closed_form,quadrature,rel_error\n");
    let mut worst: f64 = 0.0;
    for &rho in rhos {
        if !(rho > 0.0) {
            return Err(CliError::config(format!("ball radius must be positive, got {rho}")));
        }
        let exact = hypgeom::ball_functionals(n, rho);
        let (_, quad) = hypgeom::functionals(&RadialSurface::sphere(grid.clone(), rho)?)?;
        let mut rows = vec![("volume".to_string(), exact.volume, quad.volume)];
        for k in 0..=n {
            rows.push((format!("A{k}"), exact.a(k as i32), quad.a(k as i32)));
        }
        rows.push(("kbar".into(), exact.kbar, quad.kbar));
        for (name, e, q) in rows {
            let rel = (q - e).abs() / e.abs();
            worst = worst.max(rel);
            out.push_str(&format!("{},{name},{},{},{}\n", fmt17(rho), fmt17(e), fmt17(q), fmt17(rel)));
        }
    }
    Ok((out, worst))
}

/// Writes a table into a fresh run directory when `--out` was given.
pub fn save_table(common: &Common, command: &str, settings: &impl Serialize, name: &str, table: &str) -> Result<Option<PathBuf>, CliError> {
    let Some(out) = &common.out else {
        return Ok(None);
    };
    let dir = unique_run_dir(out, command)?;
    let res = common.resolution.map(|r| r.to_string()).unwrap_or_default();
    let mut manifest = RunManifest::new(command, settings, None, res, common.seed);
    manifest.write(&dir)?;
    emit(&dir, &mut manifest, name, table)?;
    manifest.finish(&dir, "completed")?;
    Ok(Some(dir))
}
