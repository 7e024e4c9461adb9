//! Seeded rejection sampling of convex bodies near a geodesic ball.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::harmonics::real_harmonic;
use crate::hypgeom::{self, RadialSurface};
use crate::klein::{self, ConvexityCertificate};
use crate::spheregrid::{make_grid, Resolution, ScalarField};

/// Acceptance rate below which the amplitude cap is reported as too large.
pub const MIN_ACCEPTANCE: f64 = 0.01;

/// Attempts made before the acceptance rate is judged.
const MIN_ATTEMPTS: usize = 100;

#[derive(Clone, Debug, Serialize)]
pub struct SamplerConfig {
    pub n: usize,
    pub rho0: f64,
    /// Upper bound of the per-degree amplitude.
    pub cap: f64,
    pub count: usize,
    pub seed: u64,
    pub resolution: Resolution,
    /// Highest harmonic degree in the perturbation.
    pub max_degree: usize,
}

impl SamplerConfig {
    pub fn new(n: usize, seed: u64, count: usize) -> Result<Self> {
        Ok(SamplerConfig {
            n,
            rho0: 1.0,
            cap: 0.1,
            count,
            seed,
            resolution: Resolution::default_for(n)?,
            max_degree: 4,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.n != 1 && self.n != 2 {
            return Err(Error::Config(format!("n must be 1 or 2, got {}", self.n)));
        }
        if !(0.0..1.0).contains(&self.cap) {
            return Err(Error::Config(format!("amplitude cap must lie in [0, 1), got {}", self.cap)));
        }
        if !(self.rho0 > 0.0) {
            return Err(Error::Config(format!("rho0 must be positive, got {}", self.rho0)));
        }
        if self.resolution.dim() != self.n {
            return Err(Error::Config(format!(
                "resolution {} does not match n = {}",
                self.resolution, self.n
            )));
        }
        Ok(())
    }
}

/// One term a·Y_lm of the perturbation.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Term {
    pub l: usize,
    pub m: i64,
    pub coeff: f64,
}

#[derive(Clone, Debug)]
pub struct ConvexSample {
    /// Position in the stream of attempts.
    pub attempt: usize,
    pub terms: Vec<Term>,
    pub surface: RadialSurface,
    pub certificate: ConvexityCertificate,
}

#[derive(Clone, Debug)]
pub struct SampleBatch {
    pub samples: Vec<ConvexSample>,
    pub attempts: usize,
}

impl SampleBatch {
    pub fn acceptance_rate(&self) -> f64 {
        self.samples.len() as f64 / self.attempts.max(1) as f64
    }
}

fn orders(n: usize, l: usize) -> Vec<i64> {
    match n {
        1 => vec![1, -1],
        _ => (-(l as i64)..=l as i64).collect(),
    }
}

/// Draws ρ₀ + Σ_{l=1..L} a_l Σ_m u_m Y_lm with a_l uniform in [0, cap] and u a
/// uniform unit vector.
fn draw(rng: &mut ChaCha8Rng, cfg: &SamplerConfig) -> Vec<Term> {
    let mut terms = Vec::new();
    for l in 1..=cfg.max_degree {
        let a: f64 = cfg.cap * rng.gen::<f64>();
        let ms = orders(cfg.n, l);
        let u: Vec<f64> = ms.iter().map(|_| rng.sample(StandardNormal)).collect();
        let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        for (m, x) in ms.into_iter().zip(u) {
            let coeff = if norm > 0.0 { a * x / norm } else { 0.0 };
            terms.push(Term { l, m, coeff });
        }
    }
    terms
}

/// Certificate of the projected body; fails without projecting if the graph
/// already has a non-positive principal curvature.
pub fn certify(surface: &RadialSurface) -> Result<ConvexityCertificate> {
    let geom = hypgeom::geometry(surface)?;
    let kmin = geom.kappa_min();
    if !(kmin > 0.0) {
        let node = geom
            .nodes()
            .iter()
            .position(|p| p.kappa[0] == kmin)
            .unwrap_or(0);
        return Ok(ConvexityCertificate {
            min_eigenvalue: kmin,
            min_det: f64::NAN,
            node,
            pass: false,
        });
    }
    let ss = klein::project(surface)?;
    Ok(klein::convexity_certificate(&ss))
}

/// Samples `cfg.count` convex bodies; deterministic in `cfg.seed`.
pub fn sample_convex(cfg: &SamplerConfig) -> Result<SampleBatch> {
    cfg.validate()?;
    let grid = make_grid(cfg.n, cfg.resolution)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut samples = Vec::with_capacity(cfg.count);
    let mut attempts = 0;
    while samples.len() < cfg.count {
        attempts += 1;
        let terms = draw(&mut rng, cfg);
        let rho = ScalarField::from_fn(grid.clone(), |_, d| {
            cfg.rho0 + terms.iter().map(|t| t.coeff * real_harmonic(cfg.n, t.l, t.m, d)).sum::<f64>()
        });
        let accepted = RadialSurface::new(rho)
            .ok()
            .and_then(|s| certify(&s).ok().filter(|c| c.pass).map(|c| (s, c)));
        if let Some((surface, certificate)) = accepted {
            samples.push(ConvexSample {
                attempt: attempts,
                terms,
                surface,
                certificate,
            });
        }
        if attempts >= MIN_ATTEMPTS && (samples.len() as f64) < MIN_ACCEPTANCE * attempts as f64 {
            return Err(Error::Config(format!(
                "amplitude cap {} too large: {} of {attempts} candidates convex",
                cfg.cap,
                samples.len()
            )));
        }
    }
    Ok(SampleBatch { samples, attempts })
}
