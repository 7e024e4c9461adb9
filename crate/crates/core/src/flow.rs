//! Explicit time integration of the volume-preserving K^α flow, either as a
//! radial graph ρ over the unit sphere or as a Klein-model support function s.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::ser::SerializeMap;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::format::{fmt17, to_json};
use crate::harmonics::HarmonicTransform;
use crate::hypgeom::{self, Functionals, RadialSurface};
use crate::klein::{self, SupportSurface};
use crate::spheregrid::{Resolution, ScalarField, SphereGrid};

/// Rejections tolerated within one step before the run is declared stiff.
pub const MAX_HALVINGS: usize = 20;

/// Explicit RK4 stability interval on the negative real axis, rounded down.
const RK4_STABILITY: f64 = 2.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Parametrization {
    Radial,
    Support,
}

impl FromStr for Parametrization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "radial" => Ok(Parametrization::Radial),
            "support" => Ok(Parametrization::Support),
            _ => Err(Error::Config(format!(
                "unknown parametrization `{s}` (expected radial or support)"
            ))),
        }
    }
}

impl fmt::Display for Parametrization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Parametrization::Radial => "radial",
            Parametrization::Support => "support",
        })
    }
}

/// Step-size control. The stable step is `safety · 2.5 / (L(L+n−1) · D)` with
/// `L` the filter degree and `D` the largest parabolic coefficient,
/// αK^{α−1}(K/κ_min)/sinh²ρ for graphs and αA(K^X)^α/𝔯_min for support functions.
#[derive(Clone, Debug, Serialize)]
pub struct DtPolicy {
    /// Overrides the first trial step.
    pub initial: Option<f64>,
    pub safety: f64,
    pub max_step: f64,
}

impl Default for DtPolicy {
    fn default() -> Self {
        DtPolicy {
            initial: None,
            safety: 0.9,
            max_step: 0.01,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct StopRule {
    pub t_end: Option<f64>,
    pub osc_tol: Option<f64>,
    pub max_steps: usize,
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule {
            t_end: Some(1.0),
            osc_tol: None,
            max_steps: 10_000_000,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FlowConfig {
    pub n: usize,
    pub alpha: f64,
    pub parametrization: Parametrization,
    pub dt: DtPolicy,
    pub volume_correction: bool,
    pub stop: StopRule,
    pub resolution: Resolution,
    /// Spectral filter degree applied to K^α; `None` uses the grid maximum.
    pub filter_degree: Option<usize>,
    /// Recentre when osc ρ exceeds this value.
    pub recenter_threshold: f64,
    /// Write a field snapshot every k-th accepted step (0 disables).
    pub snapshot_every: usize,
}

impl FlowConfig {
    /// Defaults for dimension `n` and exponent `alpha`.
    pub fn new(n: usize, alpha: f64) -> Result<Self> {
        Ok(FlowConfig {
            n,
            alpha,
            parametrization: Parametrization::Radial,
            dt: DtPolicy::default(),
            volume_correction: true,
            stop: StopRule::default(),
            resolution: Resolution::default_for(n)?,
            filter_degree: None,
            recenter_threshold: 0.5,
            snapshot_every: 0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n != 1 && self.n != 2 {
            return bad(format!("n must be 1 or 2, got {}", self.n));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.dt.safety > 0.0 && self.dt.safety <= 1.0) {
            return bad(format!("safety must lie in (0, 1], got {}", self.dt.safety));
        }
        if !(self.dt.max_step > 0.0 && self.dt.max_step.is_finite()) {
            return bad(format!("max_step must be positive, got {}", self.dt.max_step));
        }
        if let Some(h) = self.dt.initial {
            if !(h > 0.0 && h.is_finite()) {
                return bad(format!("initial step must be positive, got {h}"));
            }
        }
        if self.resolution.dim() != self.n {
            return bad(format!(
                "resolution {} does not match n = {}",
                self.resolution, self.n
            ));
        }
        if self.stop.t_end.is_none() && self.stop.osc_tol.is_none() {
            return bad("stop rule needs t_end or osc_tol".into());
        }
        if let Some(t) = self.stop.t_end {
            if !(t >= 0.0 && t.is_finite()) {
                return bad(format!("t_end must be non-negative, got {t}"));
            }
        }
        if let Some(tol) = self.stop.osc_tol {
            if !(tol > 0.0) {
                return bad(format!("osc_tol must be positive, got {tol}"));
            }
        }
        if !(self.recenter_threshold > 0.0) {
            return bad("recenter_threshold must be positive".into());
        }
        Ok(())
    }
}

/// The evolving hypersurface in one of the two parametrizations.
#[derive(Clone, Debug)]
pub enum Surface {
    Radial(RadialSurface),
    Support(SupportSurface),
}

impl Surface {
    pub fn grid(&self) -> &Arc<SphereGrid> {
        match self {
            Surface::Radial(r) => r.grid(),
            Surface::Support(s) => s.grid(),
        }
    }

    pub fn dim(&self) -> usize {
        self.grid().dim()
    }

    pub fn parametrization(&self) -> Parametrization {
        match self {
            Surface::Radial(_) => Parametrization::Radial,
            Surface::Support(_) => Parametrization::Support,
        }
    }

    /// The evolved scalar: ρ or s.
    pub fn field(&self) -> &ScalarField {
        match self {
            Surface::Radial(r) => r.rho(),
            Surface::Support(s) => s.s(),
        }
    }

    /// Name of the evolved scalar in snapshot files.
    pub fn field_name(&self) -> &'static str {
        match self {
            Surface::Radial(_) => "rho",
            Surface::Support(_) => "s",
        }
    }

    /// max ρ − min ρ over the boundary.
    pub fn osc(&self) -> f64 {
        match self {
            Surface::Radial(r) => r.osc(),
            Surface::Support(s) => s.osc(),
        }
    }

    /// The radial graph of the surface about the current center.
    pub fn to_radial(&self) -> Result<RadialSurface> {
        match self {
            Surface::Radial(r) => Ok(r.clone()),
            Surface::Support(s) => klein::reconstruct(s),
        }
    }

    fn with_values(&self, values: Vec<f64>) -> Result<Surface> {
        if let Some(node) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::DegenerateSurface {
                node,
                reason: "non-finite value",
            });
        }
        let field = ScalarField::new(self.grid().clone(), values)?;
        match self {
            Surface::Radial(r) => Ok(Surface::Radial(r.with_rho(field)?)),
            Surface::Support(_) => Ok(Surface::Support(SupportSurface::new(field)?)),
        }
    }
}

/// Per-node quantities shared by both parametrizations.
#[derive(Clone, Copy, Debug)]
struct Sample {
    k: f64,
    dmu: f64,
    /// Normal speed to field speed: S for ρ, A for s.
    factor: f64,
    kappa: [f64; 2],
    sigma: [f64; 3],
    /// Largest eigenvalue of the parabolic coefficient of the linearized operator.
    stiff: f64,
}

fn sample(surface: &Surface, alpha: f64, want_functionals: bool) -> Result<(Vec<Sample>, Option<Functionals>)> {
    let n = surface.dim();
    match surface {
        Surface::Radial(r) => {
            let geom = hypgeom::geometry(r)?;
            let rho = r.rho().values();
            let mut out = Vec::with_capacity(rho.len());
            for (j, nd) in geom.nodes().iter().enumerate() {
                if !(nd.kappa[0] > 0.0) {
                    return Err(Error::ConvexityLoss {
                        node: j,
                        eigenvalue: nd.kappa[0],
                    });
                }
                let sh = rho[j].sinh();
                let k_over_min = if n == 1 { 1.0 } else { nd.kappa[1] };
                out.push(Sample {
                    k: nd.k,
                    dmu: nd.dmu,
                    factor: 1.0 / nd.nu[0],
                    kappa: nd.kappa,
                    sigma: [1.0, nd.sigma[0], nd.sigma[1]],
                    stiff: alpha * nd.k.powf(alpha - 1.0) * k_over_min / (sh * sh),
                });
            }
            let f = want_functionals.then(|| hypgeom::quermassintegrals(&geom, hypgeom::enclosed_volume(r)));
            Ok((out, f))
        }
        Surface::Support(ss) => {
            let (geom, f) = if want_functionals {
                let (g, f) = klein::support_functionals(ss)?;
                (g, Some(f))
            } else {
                (klein::support_geometry(ss)?, None)
            };
            let out = geom
                .nodes()
                .iter()
                .map(|nd| Sample {
                    k: nd.kx,
                    dmu: nd.dmu,
                    factor: nd.a,
                    kappa: nd.kappa,
                    sigma: [1.0, nd.sigma[0], nd.sigma[1]],
                    stiff: alpha * nd.a * nd.kx.powf(alpha) / nd.rmin,
                })
                .collect();
            Ok((out, f))
        }
    }
}

/// ∫f dμ over the sampled surface.
fn integrate(grid: &SphereGrid, samples: &[Sample], f: impl Fn(usize, &Sample) -> f64) -> f64 {
    samples
        .iter()
        .zip(grid.weights())
        .enumerate()
        .map(|(j, (p, w))| w * p.dmu * f(j, p))
        .sum()
}

/// Snapshot of the flow after an accepted step.
#[derive(Clone, Debug)]
pub struct FlowState {
    pub t: f64,
    pub alpha: f64,
    pub surface: Surface,
    pub functionals: Functionals,
    /// Area average of K^α.
    pub phi: f64,
    pub kappa_min: f64,
    pub kappa_max: f64,
    pub osc: f64,
    pub step_count: usize,
    /// Volume the run is held at.
    pub target_volume: f64,
    /// −n∫(K − K̄)(K^α − K̄^α)dμ.
    pub dissipation: f64,
    /// Predicted dA_k/dt for k = −1..n−1: ∫η dμ, then (k+1)∫η σ_{k+1} dμ with η = φ − K^α.
    pub rates: Vec<f64>,
}

impl FlowState {
    /// Initial state held at its own volume.
    pub fn initial(surface: Surface, alpha: f64) -> Result<Self> {
        let mut state = Self::build(surface, alpha, 0.0, 0, f64::NAN)?;
        state.target_volume = state.functionals.volume;
        Ok(state)
    }

    /// Evaluates geometry and cached functionals; fails on convexity loss.
    pub fn build(surface: Surface, alpha: f64, t: f64, step_count: usize, target_volume: f64) -> Result<Self> {
        let grid = surface.grid().clone();
        let n = grid.dim();
        let (samples, f) = sample(&surface, alpha, true)?;
        let functionals = f.expect("functionals requested");
        let area = functionals.area;
        let phi = integrate(&grid, &samples, |_, p| p.k.powf(alpha)) / area;
        let kbar = functionals.kbar;
        let kbar_a = kbar.powf(alpha);
        let dissipation = -(n as f64)
            * integrate(&grid, &samples, |_, p| (p.k - kbar) * (p.k.powf(alpha) - kbar_a));
        let rates = (0..=n)
            .map(|i| {
                let c = if i == 0 { 1.0 } else { i as f64 };
                c * integrate(&grid, &samples, |_, p| (phi - p.k.powf(alpha)) * p.sigma[i])
            })
            .collect();
        let kappa_min = samples.iter().map(|p| p.kappa[0]).fold(f64::INFINITY, f64::min);
        let kappa_max = samples
            .iter()
            .map(|p| p.kappa[if n == 1 { 0 } else { 1 }])
            .fold(f64::NEG_INFINITY, f64::max);
        let osc = surface.osc();
        Ok(FlowState {
            t,
            alpha,
            surface,
            functionals,
            phi,
            kappa_min,
            kappa_max,
            osc,
            step_count,
            target_volume,
            dissipation,
            rates,
        })
    }

    pub fn dim(&self) -> usize {
        self.surface.dim()
    }

    pub fn volume_drift(&self) -> f64 {
        (self.functionals.volume - self.target_volume) / self.target_volume
    }

    fn rebuilt(&self, surface: Surface) -> Result<Self> {
        Self::build(surface, self.alpha, self.t, self.step_count, self.target_volume)
    }
}

/// φ(t) = ∫K^α dμ / ∫dμ.
pub fn phi(state: &FlowState) -> f64 {
    state.phi
}

/// (φ − K^α)·√(1 + |∇ρ|²/sinh²ρ), without filtering.
pub fn radial_rhs(surface: &RadialSurface, alpha: f64, phi: f64) -> Result<ScalarField> {
    let k = hypgeom::gauss_curvature(surface)?;
    let grad = surface.grid().gradient(surface.rho());
    let rho = surface.rho().values();
    let values = (0..rho.len())
        .map(|j| {
            let sh = rho[j].sinh();
            (phi - k.values()[j].powf(alpha)) * (1.0 + grad.norm_sq(j) / (sh * sh)).sqrt()
        })
        .collect();
    ScalarField::new(surface.grid().clone(), values)
}

/// Aφ − B(K^Y)^α, without filtering.
pub fn support_rhs(ss: &SupportSurface, alpha: f64, phi: f64) -> Result<ScalarField> {
    let rt = klein::radii_tensor(ss)?;
    let ky = klein::gauss_ky(&rt);
    let c = klein::coefficients(ss, alpha)?;
    let values = (0..ky.values().len())
        .map(|j| c.a.values()[j] * phi - c.b.values()[j] * ky.values()[j].powf(alpha))
        .collect();
    ScalarField::new(ss.grid().clone(), values)
}

/// Uniform radial shift ρ + ε restoring `target`; returns the shifted surface and ε.
pub fn correct_radial(surface: &RadialSurface, target: f64) -> Result<(RadialSurface, f64)> {
    let n = surface.dim();
    let grid = surface.grid();
    let w = grid.weights();
    let rho = surface.rho().values();
    let volume = |eps: f64| -> (f64, f64) {
        let mut v = 0.0;
        let mut dv = 0.0;
        for (r, wj) in rho.iter().zip(w) {
            v += wj * hypgeom::radial_volume_density(n, r + eps);
            dv += wj * (r + eps).sinh().powi(n as i32);
        }
        (v, dv)
    };
    let mut eps = 0.0;
    let mut residual = f64::INFINITY;
    for _ in 0..50 {
        let (v, dv) = volume(eps);
        residual = (v - target) / target;
        if residual.abs() <= 1e-14 {
            break;
        }
        let next = eps - (v - target) / dv;
        if next == eps {
            break;
        }
        eps = next;
    }
    if !(residual.abs() <= 1e-12) {
        return Err(Error::Correction { residual });
    }
    if eps == 0.0 {
        return Ok((surface.clone(), 0.0));
    }
    let shifted = surface.rho().map(|r| r + eps);
    Ok((surface.with_rho(shifted)?, eps))
}

/// Normal shift s + εA restoring `target` for a support surface.
pub fn correct_support(ss: &SupportSurface, target: f64) -> Result<(SupportSurface, f64)> {
    let grid = ss.grid().clone();
    let sv = ss.s().values().to_vec();
    let a: Vec<f64> = sv
        .iter()
        .zip(ss.r2().values())
        .map(|(&s, &r2)| klein::coefficient_a(s, r2))
        .collect();
    let shifted = |eps: f64| -> Result<(SupportSurface, f64)> {
        let values = sv.iter().zip(&a).map(|(s, a)| s + eps * a).collect();
        let cand = SupportSurface::new(ScalarField::new(grid.clone(), values)?)?;
        let rt = klein::radii_tensor(&cand)?;
        let v = klein::support_volume(&cand, &rt);
        Ok((cand, v))
    };
    let (s0, v0) = shifted(0.0)?;
    let mut r0 = (v0 - target) / target;
    if r0.abs() <= 1e-14 {
        return Ok((s0, 0.0));
    }
    let area = klein::support_functionals(ss)?.1.area;
    let mut e0 = 0.0;
    let mut e1 = -(v0 - target) / area;
    for _ in 0..50 {
        let (cand, v1) = shifted(e1)?;
        let r1 = (v1 - target) / target;
        if r1.abs() <= 1e-14 || r1 == r0 {
            if r1.abs() <= 1e-12 {
                return Ok((cand, e1));
            }
            return Err(Error::Correction { residual: r1 });
        }
        let next = e1 - r1 * (e1 - e0) / (r1 - r0);
        e0 = e1;
        r0 = r1;
        e1 = next;
    }
    Err(Error::Correction { residual: r0 })
}

/// Restores the state's volume to `target` by a uniform normal shift; returns ε.
pub fn volume_correct(state: &FlowState, target: f64) -> Result<(FlowState, f64)> {
    let (surface, eps) = correct_surface(&state.surface, target)?;
    let mut next = state.rebuilt(surface)?;
    next.target_volume = target;
    Ok((next, eps))
}

fn correct_surface(surface: &Surface, target: f64) -> Result<(Surface, f64)> {
    match surface {
        Surface::Radial(r) => correct_radial(r, target).map(|(r, e)| (Surface::Radial(r), e)),
        Surface::Support(s) => correct_support(s, target).map(|(s, e)| (Surface::Support(s), e)),
    }
}

/// Outcome of one accepted step.
#[derive(Clone, Debug, Default, Serialize)]
pub struct StepReport {
    pub dt: f64,
    pub rejections: usize,
    /// Error message of each rejected trial.
    pub reasons: Vec<String>,
    /// Shift ε applied by the volume correction.
    pub correction: Option<f64>,
    pub recentered: bool,
}

struct Stage {
    rhs: Vec<f64>,
    stiff: f64,
}

/// RK4 stepper holding the spectral filter for one grid.
pub struct Stepper {
    cfg: FlowConfig,
    filter: HarmonicTransform,
}

impl Stepper {
    pub fn new(cfg: &FlowConfig, grid: &SphereGrid) -> Result<Self> {
        cfg.validate()?;
        if grid.dim() != cfg.n {
            return Err(Error::Config(format!(
                "grid dimension {} does not match n = {}",
                grid.dim(),
                cfg.n
            )));
        }
        let l = cfg.filter_degree.unwrap_or(grid.max_degree());
        if l < 2 || l > grid.max_degree() {
            return Err(Error::Config(format!(
                "filter degree {l} outside 2..={}",
                grid.max_degree()
            )));
        }
        Ok(Stepper {
            cfg: cfg.clone(),
            filter: HarmonicTransform::build(grid, l),
        })
    }

    pub fn config(&self) -> &FlowConfig {
        &self.cfg
    }

    pub fn filter_degree(&self) -> usize {
        self.filter.l_max()
    }

    /// Filtered field speed at `surface`, with φ recomputed from the filtered K^α.
    fn stage(&self, surface: &Surface) -> Result<Stage> {
        let grid = surface.grid();
        let alpha = self.cfg.alpha;
        let (samples, _) = sample(surface, alpha, false)?;
        let ka: Vec<f64> = samples.iter().map(|p| p.k.powf(alpha)).collect();
        let pk = self.filter.low_pass(grid, &ka);
        let mut num = 0.0;
        let mut den = 0.0;
        for ((p, w), q) in samples.iter().zip(grid.weights()).zip(&pk) {
            num += w * p.dmu * q;
            den += w * p.dmu;
        }
        let phi = num / den;
        let rhs = samples
            .iter()
            .zip(&pk)
            .map(|(p, q)| p.factor * (phi - q))
            .collect();
        let stiff = samples.iter().map(|p| p.stiff).fold(0.0, f64::max);
        Ok(Stage { rhs, stiff })
    }

    /// Stable step for the given stiffness.
    pub fn stable_dt(&self, stiff: f64) -> f64 {
        let l = self.filter.l_max() as f64;
        let n = self.cfg.n as f64;
        let bound = self.cfg.dt.safety * RK4_STABILITY / (l * (l + n - 1.0) * stiff);
        bound.min(self.cfg.dt.max_step)
    }

    /// Advances `state` by one accepted step.
    pub fn step(&self, state: &FlowState) -> Result<(FlowState, StepReport)> {
        let k1 = self.stage(&state.surface)?;
        let mut dt = match (state.step_count, self.cfg.dt.initial) {
            (0, Some(h)) => h,
            _ => self.stable_dt(k1.stiff),
        };
        if let Some(t_end) = self.cfg.stop.t_end {
            let left = t_end - state.t;
            if left > 0.0 {
                dt = if left <= dt * (1.0 + 1e-8) {
                    left
                } else if left < 2.0 * dt {
                    0.5 * left
                } else {
                    dt
                };
            }
        }
        let mut report = StepReport::default();
        for _ in 0..MAX_HALVINGS {
            match self.attempt(state, &k1, dt) {
                Ok((next, eps)) => {
                    report.dt = dt;
                    report.correction = eps;
                    return Ok((next, report));
                }
                Err(e) => {
                    report.rejections += 1;
                    report.reasons.push(e.to_string());
                    dt *= 0.5;
                }
            }
        }
        Err(Error::Stiffness {
            t: state.t,
            dt: 2.0 * dt,
            rejections: report.rejections,
        })
    }

    fn attempt(&self, state: &FlowState, k1: &Stage, h: f64) -> Result<(FlowState, Option<f64>)> {
        let y0 = state.surface.field().values();
        let axpy = |c: f64, k: &[f64]| -> Vec<f64> { y0.iter().zip(k).map(|(y, k)| y + c * k).collect() };
        let k2 = self.stage(&state.surface.with_values(axpy(0.5 * h, &k1.rhs))?)?;
        let k3 = self.stage(&state.surface.with_values(axpy(0.5 * h, &k2.rhs))?)?;
        let k4 = self.stage(&state.surface.with_values(axpy(h, &k3.rhs))?)?;
        let y: Vec<f64> = (0..y0.len())
            .map(|j| y0[j] + h / 6.0 * (k1.rhs[j] + 2.0 * k2.rhs[j] + 2.0 * k3.rhs[j] + k4.rhs[j]))
            .collect();
        let mut surface = state.surface.with_values(y)?;
        let mut eps = None;
        if self.cfg.volume_correction {
            let (s, e) = correct_surface(&surface, state.target_volume)?;
            surface = s;
            eps = Some(e);
        }
        let next = FlowState::build(
            surface,
            self.cfg.alpha,
            state.t + h,
            state.step_count + 1,
            state.target_volume,
        )?;
        Ok((next, eps))
    }

    /// Moves the center to the circumcenter when the oscillation is large.
    /// Returns the recentred state only if it lowers the oscillation.
    pub fn recenter(&self, state: &FlowState) -> Result<Option<FlowState>> {
        if state.osc <= self.cfg.recenter_threshold {
            return Ok(None);
        }
        let radial = state.surface.to_radial()?;
        let (v, _) = hypgeom::circumcenter(&radial);
        let moved = hypgeom::recenter_at(&radial, v)?;
        let surface = match state.surface {
            Surface::Radial(_) => Surface::Radial(moved),
            Surface::Support(_) => Surface::Support(klein::project(&moved)?),
        };
        let surface = if self.cfg.volume_correction {
            correct_surface(&surface, state.target_volume)?.0
        } else {
            surface
        };
        if surface.osc() >= 0.9 * state.osc {
            return Ok(None);
        }
        state.rebuilt(surface).map(Some)
    }

    fn finished(&self, state: &FlowState) -> bool {
        let stop = &self.cfg.stop;
        if let Some(t_end) = stop.t_end {
            if state.t >= t_end - 1e-12 * t_end.max(1.0) {
                return true;
            }
        }
        if let Some(tol) = stop.osc_tol {
            if state.osc <= tol {
                return true;
            }
        }
        state.step_count >= stop.max_steps
    }
}

/// One line of the functional log.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesRow {
    pub t: f64,
    pub volume: f64,
    /// A_0..A_n.
    pub a: Vec<f64>,
    pub phi: f64,
    pub kbar: f64,
    pub kappa_min: f64,
    pub kappa_max: f64,
    pub osc: f64,
    pub dt: f64,
    pub volume_drift: f64,
    pub dissipation: f64,
    pub rates: Vec<f64>,
}

impl SeriesRow {
    pub fn from_state(state: &FlowState, dt: f64) -> Self {
        let f = &state.functionals;
        SeriesRow {
            t: state.t,
            volume: f.volume,
            a: f.a_list(),
            phi: state.phi,
            kbar: f.kbar,
            kappa_min: state.kappa_min,
            kappa_max: state.kappa_max,
            osc: state.osc,
            dt,
            volume_drift: state.volume_drift(),
            dissipation: state.dissipation,
            rates: state.rates.clone(),
        }
    }
}

impl Serialize for SeriesRow {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut m = serializer.serialize_map(Some(8))?;
        m.serialize_entry("t", &self.t)?;
        m.serialize_entry("volume", &self.volume)?;
        m.serialize_entry("A", &self.a)?;
        m.serialize_entry("phi", &self.phi)?;
        m.serialize_entry("kbar", &self.kbar)?;
        m.serialize_entry("kappa_min", &self.kappa_min)?;
        m.serialize_entry("kappa_max", &self.kappa_max)?;
        m.serialize_entry("osc", &self.osc)?;
        m.end()
    }
}

/// Time-indexed log of functionals and residuals.
#[derive(Clone, Debug, Default)]
pub struct FunctionalSeries {
    rows: Vec<SeriesRow>,
}

impl FunctionalSeries {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a row; `t` must increase strictly.
    pub fn push(&mut self, row: SeriesRow) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if !(row.t > last.t) {
                return Err(Error::Config(format!(
                    "series time must increase: {} after {}",
                    row.t, last.t
                )));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[SeriesRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn last(&self) -> Option<&SeriesRow> {
        self.rows.last()
    }

    /// One JSON object per row with keys t, volume, A, phi, kbar, kappa_min, kappa_max, osc.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            out.push_str(&to_json(row));
            out.push('\n');
        }
        out
    }

    /// CSV with the JSON columns followed by dt, volume drift, dissipation and rates.
    pub fn to_csv(&self) -> String {
        let Some(first) = self.rows.first() else {
            return String::new();
        };
        let n = first.a.len() - 1;
        let mut head = vec!["t".to_string(), "volume".to_string()];
        head.extend((0..=n).map(|k| format!("A{k}")));
        head.extend(
            ["phi", "kbar", "kappa_min", "kappa_max", "osc", "dt", "volume_drift", "dissipation"]
                .map(String::from),
        );
        head.push("rate_m1".into());
        head.extend((0..n).map(|k| format!("rate_{k}")));
        let mut out = head.join(",");
        out.push('\n');
        for r in &self.rows {
            let mut cells = vec![r.t, r.volume];
            cells.extend(&r.a);
            cells.extend([
                r.phi,
                r.kbar,
                r.kappa_min,
                r.kappa_max,
                r.osc,
                r.dt,
                r.volume_drift,
                r.dissipation,
            ]);
            cells.extend(&r.rates);
            let line: Vec<String> = cells.into_iter().map(fmt17).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

/// Result of a completed run.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub series: FunctionalSeries,
    pub state: FlowState,
    pub rejections: usize,
    pub recenterings: usize,
}

/// A failed run with everything logged before the failure.
#[derive(Debug)]
pub struct RunError {
    pub error: Error,
    pub series: FunctionalSeries,
    /// Last accepted state, if the initial data was valid.
    pub state: Option<Box<FlowState>>,
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.state {
            Some(s) => write!(f, "{} (last accepted t = {})", self.error, s.t),
            None => write!(f, "{}", self.error),
        }
    }
}

impl std::error::Error for RunError {}

/// Runs the flow from a radial graph until the stop rule holds.
pub fn run(initial: &RadialSurface, cfg: &FlowConfig) -> Result<RunOutput, RunError> {
    run_with(initial, cfg, |_, _| {})
}

/// As [`run`], calling `observer` on the initial state and after every accepted step.
pub fn run_with(
    initial: &RadialSurface,
    cfg: &FlowConfig,
    mut observer: impl FnMut(&FlowState, Option<&StepReport>),
) -> Result<RunOutput, RunError> {
    let mut series = FunctionalSeries::new();
    let fail = |error: Error, series: FunctionalSeries, state: Option<&FlowState>| RunError {
        error,
        series,
        state: state.map(|s| Box::new(s.clone())),
    };
    let stepper = match Stepper::new(cfg, initial.grid()) {
        Ok(s) => s,
        Err(e) => return Err(fail(e, series, None)),
    };
    let surface = match cfg.parametrization {
        Parametrization::Radial => Ok(Surface::Radial(initial.clone())),
        Parametrization::Support => klein::project(initial).map(Surface::Support),
    };
    let mut state = match surface.and_then(|s| FlowState::initial(s, cfg.alpha)) {
        Ok(s) => s,
        Err(e) => return Err(fail(e, series, None)),
    };
    if let Ok(Some(moved)) = stepper.recenter(&state) {
        state = moved;
    }
    series
        .push(SeriesRow::from_state(&state, 0.0))
        .expect("first row");
    observer(&state, None);
    let mut rejections = 0;
    let mut recenterings = 0;
    while !stepper.finished(&state) {
        let (mut next, mut report) = match stepper.step(&state) {
            Ok(r) => r,
            Err(e) => return Err(fail(e, series, Some(&state))),
        };
        rejections += report.rejections;
        if let Ok(Some(moved)) = stepper.recenter(&next) {
            next = moved;
            report.recentered = true;
            recenterings += 1;
        }
        state = next;
        if let Err(e) = series.push(SeriesRow::from_state(&state, report.dt)) {
            return Err(fail(e, series, Some(&state)));
        }
        observer(&state, Some(&report));
    }
    Ok(RunOutput {
        series,
        state,
        rejections,
        recenterings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harmonics::real_harmonic;
    use crate::spheregrid::make_grid;

    fn sphere_res(nt: usize, np: usize) -> Resolution {
        Resolution::Sphere {
            n_theta: nt,
            n_phi: np,
        }
    }

    fn config(n: usize, alpha: f64, res: Resolution) -> FlowConfig {
        let mut cfg = FlowConfig::new(n, alpha).unwrap();
        cfg.resolution = res;
        cfg
    }

    fn perturbed(res: Resolution, rho0: f64, eps: f64, l: usize) -> RadialSurface {
        let grid = make_grid(res.dim(), res).unwrap();
        let dim = grid.dim();
        let rho = ScalarField::from_fn(grid, |_, d| rho0 + eps * real_harmonic(dim, l, 0, d));
        RadialSurface::new(rho).unwrap()
    }

    fn max_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn phi_of_balls() {
        let grid = make_grid(2, sphere_res(16, 32)).unwrap();
        let s = FlowState::initial(Surface::Radial(RadialSurface::sphere(grid, 1.0).unwrap()), 1.0).unwrap();
        assert!((phi(&s) - 1.7240617).abs() < 1e-7);
        for (n, res) in [(1, Resolution::Circle(32)), (2, sphere_res(16, 32))] {
            let grid = make_grid(n, res).unwrap();
            for (rho0, alpha) in [(0.5, 2.0), (2.0, 0.5)] {
                let s = FlowState::initial(Surface::Radial(RadialSurface::sphere(grid.clone(), rho0).unwrap()), alpha)
                    .unwrap();
                let want = (1.0 / rho0.tanh()).powf(n as f64 * alpha);
                assert!((s.phi - want).abs() < 1e-12 * want);
                assert!(s.dissipation.abs() < 1e-12);
                assert!(s.rates.iter().all(|r| r.abs() < 1e-10));
            }
        }
    }

    #[test]
    fn phi_lies_between_extremes() {
        let r = perturbed(sphere_res(24, 48), 1.0, 0.15, 3);
        let s = FlowState::initial(Surface::Radial(r.clone()), 1.5).unwrap();
        let k = hypgeom::gauss_curvature(&r).unwrap().map(|k| k.powf(1.5));
        assert!(k.min() < s.phi && s.phi < k.max());
        assert!(s.dissipation < 0.0);
    }

    #[test]
    fn radial_rhs_examples() {
        let grid = make_grid(2, sphere_res(16, 32)).unwrap();
        let ball = RadialSurface::sphere(grid, 0.7).unwrap();
        let c = 1.0 / 0.7f64.tanh();
        let rhs = radial_rhs(&ball, 2.0, c.powi(4)).unwrap();
        assert!(rhs.values().iter().all(|v| v.abs() < 1e-12));

        let grid = make_grid(2, sphere_res(32, 64)).unwrap();
        let r = RadialSurface::new(ScalarField::from_fn(grid.clone(), |_, d| 1.0 + 0.05 * d[2])).unwrap();
        let state = FlowState::initial(Surface::Radial(r.clone()), 1.0).unwrap();
        let rhs = radial_rhs(&r, 1.0, state.phi).unwrap();
        let geom = hypgeom::geometry(&r).unwrap();
        // speed = rhs / S and dμ = sinh^n ρ · S, so ∫speed dμ = ∫rhs sinh²ρ dσ
        let mean: f64 = (0..grid.len())
            .map(|j| grid.weights()[j] * rhs.values()[j] * r.rho().values()[j].sinh().powi(2))
            .sum();
        assert!(mean.abs() < 1e-12 * geom.area());
        for (j, nd) in geom.nodes().iter().enumerate() {
            assert_eq!(rhs.values()[j] < 0.0, nd.k > state.phi, "node {j}");
        }
    }

    #[test]
    fn support_rhs_examples() {
        let grid = make_grid(2, sphere_res(16, 32)).unwrap();
        let ss = SupportSurface::sphere(grid, 0.8).unwrap();
        let c = 1.0 / 0.8f64.tanh();
        let rhs = support_rhs(&ss, 1.5, c.powf(3.0)).unwrap();
        assert!(rhs.values().iter().all(|v| v.abs() < 1e-12));

        let r = perturbed(sphere_res(24, 48), 1.0, 0.1, 2);
        let ss = klein::project(&r).unwrap();
        let geom = klein::support_geometry(&ss).unwrap();
        for alpha in [0.5, 1.0, 2.0] {
            let rhs = support_rhs(&ss, alpha, 1.9).unwrap();
            for (j, nd) in geom.nodes().iter().enumerate() {
                let want = nd.a * (1.9 - nd.kx.powf(alpha));
                assert!((rhs.values()[j] - want).abs() < 1e-10, "node {j}");
            }
        }
    }

    #[test]
    fn support_speed_preserves_volume_to_quadrature_order() {
        let rate = |res: Resolution| {
            let r = perturbed(res, 1.0, 0.1, 2);
            let ss = klein::project(&r).unwrap();
            let state = FlowState::initial(Surface::Support(ss.clone()), 1.0).unwrap();
            let rhs = support_rhs(&ss, 1.0, state.phi).unwrap();
            let volume = |h: f64| {
                let s = ss.s().zip_with(&rhs, |s, v| s + h * v);
                let moved = SupportSurface::new(s).unwrap();
                klein::support_volume(&moved, &klein::radii_tensor(&moved).unwrap())
            };
            let h = 1e-4;
            let typical = state.functionals.area * state.phi;
            ((volume(h) - volume(-h)) / (2.0 * h) / typical).abs()
        };
        let coarse = rate(sphere_res(24, 48));
        let fine = rate(sphere_res(48, 96));
        assert!(coarse < 1e-5, "{coarse}");
        assert!(fine < 0.25 * coarse, "{coarse} -> {fine}");
    }

    #[test]
    fn correction_examples() {
        let grid = make_grid(2, sphere_res(16, 32)).unwrap();
        let ball = RadialSurface::sphere(grid.clone(), 1.0).unwrap();
        let state = FlowState::initial(Surface::Radial(ball), 1.0).unwrap();
        let (same, eps) = volume_correct(&state, state.target_volume).unwrap();
        assert_eq!(eps, 0.0);
        assert_eq!(same.surface.field().values(), state.surface.field().values());

        let target = hypgeom::ball_volume(2, 1.01);
        let (moved, eps) = volume_correct(&state, target).unwrap();
        assert!((eps - 0.01).abs() < 1e-10);
        assert!((moved.functionals.volume - target).abs() <= 1e-12 * target);

        let ss = SupportSurface::sphere(grid, 1.0).unwrap();
        let state = FlowState::initial(Surface::Support(ss), 1.0).unwrap();
        let (moved, _) = volume_correct(&state, target).unwrap();
        assert!((moved.functionals.volume - target).abs() <= 1e-12 * target);
        let s = moved.surface.field().values()[0];
        assert!((s - 1.01f64.tanh()).abs() < 1e-10);
    }

    #[test]
    fn ball_is_stationary_per_step() {
        for (n, res) in [(1, Resolution::Circle(64)), (2, sphere_res(16, 32))] {
            let grid = make_grid(n, res).unwrap();
            let cfg = config(n, 2.0, res);
            let stepper = Stepper::new(&cfg, &grid).unwrap();
            let ball = RadialSurface::sphere(grid, 0.5).unwrap();
            let mut state = FlowState::initial(Surface::Radial(ball), 2.0).unwrap();
            for _ in 0..5 {
                let (next, report) = stepper.step(&state).unwrap();
                assert_eq!(report.rejections, 0);
                let d = max_diff(next.surface.field().values(), state.surface.field().values());
                assert!(d <= 1e-12, "n = {n}: {d}");
                state = next;
            }
        }
    }

    #[test]
    fn oversized_step_is_rejected_and_halved() {
        let res = sphere_res(16, 32);
        let mut cfg = config(2, 1.0, res);
        cfg.dt.initial = Some(0.5);
        let r = perturbed(res, 1.0, 0.1, 2);
        let stepper = Stepper::new(&cfg, r.grid()).unwrap();
        let state = FlowState::initial(Surface::Radial(r), 1.0).unwrap();
        let (next, report) = stepper.step(&state).unwrap();
        assert!(report.rejections >= 1);
        assert_eq!(report.reasons.len(), report.rejections);
        assert!((report.dt - 0.5 / 2f64.powi(report.rejections as i32)).abs() < 1e-15);
        assert!(next.kappa_min > 0.0);

        cfg.dt.initial = Some(1e9);
        cfg.stop.t_end = Some(1e10);
        let stepper = Stepper::new(&cfg, state.surface.grid()).unwrap();
        match stepper.step(&state) {
            Err(Error::Stiffness { rejections, .. }) => assert_eq!(rejections, MAX_HALVINGS),
            other => panic!("expected stiffness failure, got {other:?}"),
        }
    }

    #[test]
    fn fourth_order_in_time() {
        let res = sphere_res(16, 32);
        let r = perturbed(res, 1.0, 0.1, 2);
        let solve = |h: f64| {
            let mut cfg = config(2, 1.0, res);
            cfg.volume_correction = false;
            cfg.filter_degree = Some(6);
            cfg.dt.max_step = h;
            cfg.stop.t_end = Some(0.2);
            let out = run(&r, &cfg).unwrap();
            out.state.surface.field().values().to_vec()
        };
        let reference = solve(0.0025);
        let e1 = max_diff(&solve(0.02), &reference);
        let e2 = max_diff(&solve(0.01), &reference);
        let ratio = e1 / e2;
        assert!((12.0..20.0).contains(&ratio), "ratio {ratio} ({e1:e}, {e2:e})");
    }

    #[test]
    fn ball_run_returns_the_ball() {
        let res = sphere_res(16, 32);
        let grid = make_grid(2, res).unwrap();
        let ball = RadialSurface::sphere(grid, 1.0).unwrap();
        let out = run(&ball, &config(2, 1.0, res)).unwrap();
        assert!((out.state.t - 1.0).abs() < 1e-12);
        let d = max_diff(out.state.surface.field().values(), ball.rho().values());
        assert!(d <= 1e-10, "{d}");
        assert_eq!(out.series.len(), out.state.step_count + 1);
    }

    #[test]
    fn perturbed_run_keeps_invariants() {
        let res = sphere_res(16, 32);
        let r = perturbed(res, 1.0, 0.1, 2);
        let mut cfg = config(2, 1.0, res);
        cfg.stop.t_end = Some(0.5);
        let out = run(&r, &cfg).unwrap();
        let rows = out.series.rows();
        for w in rows.windows(2) {
            assert!(w[1].volume_drift.abs() <= 1e-10);
            assert!(w[1].a[1] <= w[0].a[1] + 1e-6 * w[0].a[1]);
            assert!(w[1].kappa_min > 0.0);
        }
        assert!(rows.last().unwrap().osc < 0.5 * rows[0].osc);
    }

    #[test]
    fn radial_and_support_runs_agree() {
        let res = sphere_res(24, 48);
        let r = perturbed(res, 1.0, 0.1, 2);
        let mut cfg = config(2, 1.0, res);
        cfg.stop.t_end = Some(0.1);
        let a = run(&r, &cfg).unwrap();
        cfg.parametrization = Parametrization::Support;
        let b = run(&r, &cfg).unwrap();
        let (fa, fb) = (&a.state.functionals, &b.state.functionals);
        assert!((fa.volume - fb.volume).abs() < 1e-5 * fa.volume);
        for (x, y) in fa.a_list().iter().zip(fb.a_list()) {
            assert!((x - y).abs() < 1e-5 * x, "{x} vs {y}");
        }
        assert!((fa.kbar - fb.kbar).abs() < 1e-5 * fa.kbar);
    }

    #[test]
    fn circle_flow_runs() {
        let res = Resolution::Circle(64);
        let grid = make_grid(1, res).unwrap();
        let r = RadialSurface::new(ScalarField::from_fn(grid, |nd, _| 1.0 + 0.05 * (2.0 * nd.theta).cos())).unwrap();
        let mut cfg = config(1, 1.0, res);
        cfg.stop.t_end = Some(0.5);
        let out = run(&r, &cfg).unwrap();
        assert!(out.state.osc < out.series.rows()[0].osc);
        assert!(out.state.volume_drift().abs() <= 1e-10);
    }

    #[test]
    fn off_center_ball_is_recentred() {
        let res = sphere_res(24, 48);
        let grid = make_grid(2, res).unwrap();
        let ball = RadialSurface::sphere(grid.clone(), 1.0).unwrap();
        let shifted = hypgeom::recenter(&ball, [0.0, 0.0, 1.0], 0.4).unwrap();
        let cfg = config(2, 1.0, res);
        let stepper = Stepper::new(&cfg, &grid).unwrap();
        let state = FlowState::initial(Surface::Radial(shifted), 1.0).unwrap();
        assert!(state.osc > 0.5);
        let moved = stepper.recenter(&state).unwrap().expect("recentred");
        assert!(moved.osc < 1e-3, "{}", moved.osc);
        assert!(moved.volume_drift().abs() <= 1e-12);
    }

    #[test]
    fn series_formats() {
        let res = sphere_res(16, 32);
        let r = perturbed(res, 1.0, 0.1, 2);
        let mut cfg = config(2, 1.0, res);
        cfg.stop.t_end = Some(0.02);
        let out = run(&r, &cfg).unwrap();
        let jsonl = out.series.to_jsonl();
        let first: serde_json::Value = serde_json::from_str(jsonl.lines().next().unwrap()).unwrap();
        let keys: Vec<&String> = first.as_object().unwrap().keys().collect();
        let mut want = vec!["A", "kappa_max", "kappa_min", "kbar", "osc", "phi", "t", "volume"];
        want.sort();
        assert_eq!(keys, want);
        assert_eq!(first["A"].as_array().unwrap().len(), 3);
        let csv = out.series.to_csv();
        assert!(csv.starts_with("t,volume,A0,A1,A2,phi,kbar,kappa_min,kappa_max,osc,dt,volume_drift,dissipation,rate_m1,rate_0,rate_1\n"));
        assert_eq!(csv.lines().count(), out.series.len() + 1);

        let mut s = out.series.clone();
        let row = s.rows()[0].clone();
        assert!(s.push(row).is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = FlowConfig::new(2, 1.0).unwrap();
        assert!(cfg.validate().is_ok());
        cfg.alpha = 0.0;
        assert!(cfg.validate().is_err());
        cfg.alpha = 1.0;
        cfg.dt.safety = 1.5;
        assert!(cfg.validate().is_err());
        cfg.dt.safety = 0.5;
        cfg.resolution = Resolution::Circle(64);
        assert!(cfg.validate().is_err());
        assert!("radial".parse::<Parametrization>().is_ok());
        assert!("graph".parse::<Parametrization>().is_err());
    }
}
