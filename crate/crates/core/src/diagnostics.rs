//! Checks of the flow against its structural identities: dissipation of
//! A_{n−1}, the variational formula for every A_k, linearized decay rates,
//! distance to the limiting ball and the Alexandrov–Fenchel inequality.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::{FlowState, FunctionalSeries, SeriesRow};
use crate::hypgeom::{self, RadialSurface};
use crate::klein;

/// Linearization of the flow about the geodesic sphere of radius `rho_inf`.
#[derive(Clone, Debug, Serialize)]
pub struct LinearizedModel {
    pub n: usize,
    pub alpha: f64,
    pub rho_inf: f64,
    /// α coth^{α−1}ρ_∞ / (n sinh²ρ_∞).
    pub c: f64,
    /// λ_l for l = 0..=l_max.
    pub rates: Vec<f64>,
}

impl LinearizedModel {
    pub fn new(n: usize, alpha: f64, rho_inf: f64, l_max: usize) -> Result<Self> {
        if n != 1 && n != 2 {
            return Err(Error::Config(format!("n must be 1 or 2, got {n}")));
        }
        if !(alpha > 0.0) || !(rho_inf > 0.0) {
            return Err(Error::Config("alpha and rho_inf must be positive".into()));
        }
        Ok(LinearizedModel {
            n,
            alpha,
            rho_inf,
            c: rate_coefficient(n, alpha, rho_inf),
            rates: (0..=l_max).map(|l| linear_rate(n, alpha, rho_inf, l)).collect(),
        })
    }

    pub fn rate(&self, l: usize) -> f64 {
        linear_rate(self.n, self.alpha, self.rho_inf, l)
    }
}

/// c = α coth^{α−1}ρ / (n sinh²ρ).
pub fn rate_coefficient(n: usize, alpha: f64, rho: f64) -> f64 {
    let coth = 1.0 / rho.tanh();
    alpha * coth.powf(alpha - 1.0) / (n as f64 * rho.sinh().powi(2))
}

/// λ_l = c (l(l+n−1) − n) for l ≥ 2, zero for the volume and translation modes.
pub fn linear_rate(n: usize, alpha: f64, rho_inf: f64, l: usize) -> f64 {
    if l < 2 {
        return 0.0;
    }
    rate_coefficient(n, alpha, rho_inf) * mode_factor(n, l)
}

/// Decay rate of mode l for the linearization of K^α itself about the sphere,
/// with coefficient α coth^{nα−1}ρ / sinh²ρ.
pub fn linear_rate_exact(n: usize, alpha: f64, rho_inf: f64, l: usize) -> f64 {
    if l < 2 {
        return 0.0;
    }
    let coth = 1.0 / rho_inf.tanh();
    alpha * coth.powf(n as f64 * alpha - 1.0) / rho_inf.sinh().powi(2) * mode_factor(n, l)
}

/// l(l+n−1) − n: eigenvalue of −(Δ + n) on degree-l harmonics.
pub fn mode_factor(n: usize, l: usize) -> f64 {
    (l * (l + n - 1)) as f64 - n as f64
}

/// Least-squares fit of log y = a − λ t.
#[derive(Clone, Debug, Serialize)]
pub struct DecayFit {
    pub rate: f64,
    pub intercept: f64,
    /// Root-mean-square residual of log y.
    pub residual: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub points: usize,
}

/// Fits the decay of `y(t)` over `window`; `None` uses the last 40% of the time span.
pub fn fit_decay_values(t: &[f64], y: &[f64], window: Option<(f64, f64)>) -> Result<DecayFit> {
    if t.len() != y.len() || t.is_empty() {
        return Err(Error::Window("empty or mismatched samples".into()));
    }
    let (t0, t1) = window.unwrap_or_else(|| {
        let (a, b) = (t[0], t[t.len() - 1]);
        (b - 0.4 * (b - a), b)
    });
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (&ti, &yi) in t.iter().zip(y) {
        if ti < t0 || ti > t1 {
            continue;
        }
        if !(yi > 0.0) {
            return Err(Error::Window(format!("non-positive value {yi} at t = {ti}")));
        }
        xs.push(ti);
        ys.push(yi.ln());
    }
    if xs.len() < 3 {
        return Err(Error::Window(format!(
            "{} samples in [{t0}, {t1}], need at least 3",
            xs.len()
        )));
    }
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if !(sxx > 0.0) {
        return Err(Error::Window("window has zero time extent".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    Ok(DecayFit {
        rate: -slope,
        intercept,
        residual: (ss / m).sqrt(),
        t_start: t0,
        t_end: t1,
        points: xs.len(),
    })
}

/// Decay fit of osc ρ along a series.
pub fn fit_decay(series: &FunctionalSeries, window: Option<(f64, f64)>) -> Result<DecayFit> {
    let t: Vec<f64> = series.rows().iter().map(|r| r.t).collect();
    let y: Vec<f64> = series.rows().iter().map(|r| r.osc).collect();
    fit_decay_values(&t, &y, window)
}

/// Second-order derivative at the middle of three unevenly spaced samples.
fn centered_derivative(t: [f64; 3], f: [f64; 3]) -> f64 {
    let h1 = t[1] - t[0];
    let h2 = t[2] - t[1];
    -h2 / (h1 * (h1 + h2)) * f[0] + (h2 - h1) / (h1 * h2) * f[1] + h1 / (h2 * (h1 + h2)) * f[2]
}

/// Pairs a measured rate with its predicted value at one time.
#[derive(Clone, Debug, Serialize)]
pub struct RateSample {
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
    /// |lhs − rhs| / max(|rhs|, floor).
    pub mismatch: f64,
}

/// Time span of the centred difference used for measured rates.
pub const RATE_SPAN: f64 = 0.02;

fn rate_samples(series: &FunctionalSeries, k: i32, picks: impl Iterator<Item = (f64, f64)>) -> Vec<RateSample> {
    let rows = series.rows();
    let a = |r: &SeriesRow| if k < 0 { r.volume } else { r.a[k as usize] };
    let mut out = Vec::new();
    for (t, rhs) in picks {
        let Some(i) = rows.iter().position(|r| r.t == t) else {
            continue;
        };
        // widen the stencil until it spans RATE_SPAN so round-off in A_k stays small
        let mut d = 1;
        while i >= d && i + d < rows.len() && rows[i + d].t - rows[i - d].t < RATE_SPAN {
            d += 1;
        }
        if i < d || i + d >= rows.len() {
            continue;
        }
        let (lo, hi) = (&rows[i - d], &rows[i + d]);
        let lhs = centered_derivative([lo.t, rows[i].t, hi.t], [a(lo), a(&rows[i]), a(hi)]);
        let floor = 1e-12 * a(&rows[i]).abs().max(1.0);
        out.push(RateSample {
            t,
            lhs,
            rhs,
            mismatch: (lhs - rhs).abs() / rhs.abs().max(floor),
        });
    }
    out
}

fn series_dim(series: &FunctionalSeries) -> i32 {
    series.rows().first().map(|r| r.a.len() as i32 - 1).unwrap_or(0)
}

/// dA_{n−1}/dt from the series against −n∫(K − K̄)(K^α − K̄^α)dμ.
#[derive(Clone, Debug, Serialize)]
pub struct DissipationReport {
    pub samples: Vec<RateSample>,
    pub max_mismatch: f64,
    /// Every predicted rate is ≤ 0.
    pub rhs_nonpositive: bool,
}

/// Compares the measured and predicted dissipation at every state lying strictly
/// inside the series.
pub fn dissipation_identity(series: &FunctionalSeries, states: &[FlowState]) -> DissipationReport {
    let picks = states.iter().map(|s| (s.t, s.dissipation));
    dissipation_report(rate_samples(series, series_dim(series) - 1, picks))
}

/// As [`dissipation_identity`] at every interior row, using the rates logged in the series.
pub fn dissipation_from_series(series: &FunctionalSeries) -> DissipationReport {
    let picks = series.rows().iter().map(|r| (r.t, r.dissipation));
    dissipation_report(rate_samples(series, series_dim(series) - 1, picks))
}

fn dissipation_report(samples: Vec<RateSample>) -> DissipationReport {
    DissipationReport {
        max_mismatch: samples.iter().map(|s| s.mismatch).fold(0.0, f64::max),
        rhs_nonpositive: samples.iter().all(|s| s.rhs <= 0.0),
        samples,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct VariationalReport {
    pub k: i32,
    pub samples: Vec<RateSample>,
    pub max_mismatch: f64,
    /// Largest |lhs − rhs|.
    pub max_abs_error: f64,
}

/// dA_k/dt from the series against (k+1)∫(φ − K^α)σ_{k+1}dμ, k = −1..n−1
/// (for k = −1 the rate of the enclosed volume against ∫(φ − K^α)dμ).
pub fn variational_identity(series: &FunctionalSeries, states: &[FlowState], k: i32) -> Result<VariationalReport> {
    check_k(series, k)?;
    let picks = states.iter().map(|s| (s.t, s.rates[(k + 1) as usize]));
    Ok(variational_report(k, rate_samples(series, k, picks)))
}

/// As [`variational_identity`] at every interior row, using the rates logged in the series.
pub fn variational_from_series(series: &FunctionalSeries, k: i32) -> Result<VariationalReport> {
    check_k(series, k)?;
    let picks = series.rows().iter().map(|r| (r.t, r.rates[(k + 1) as usize]));
    Ok(variational_report(k, rate_samples(series, k, picks)))
}

fn check_k(series: &FunctionalSeries, k: i32) -> Result<()> {
    let n = series_dim(series);
    if k < -1 || k > n - 1 {
        return Err(Error::Config(format!("k must lie in -1..={}, got {k}", n - 1)));
    }
    Ok(())
}

fn variational_report(k: i32, samples: Vec<RateSample>) -> VariationalReport {
    VariationalReport {
        k,
        max_mismatch: samples.iter().map(|s| s.mismatch).fold(0.0, f64::max),
        max_abs_error: samples.iter().map(|s| (s.lhs - s.rhs).abs()).fold(0.0, f64::max),
        samples,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BallDistance {
    /// Radius of the ball with the same volume.
    pub rho_star: f64,
    /// max |d(c, X) − ρ*| over boundary nodes at the best center c.
    pub distance: f64,
    /// Tangent vector at the graph center pointing to c.
    pub center: [f64; 3],
    /// Set when the search left the body and the graph center was used instead.
    pub fallback: bool,
}

/// Radial sup-distance to the volume-matching ball after a center search.
pub fn ball_distance(surface: &RadialSurface) -> Result<BallDistance> {
    let n = surface.dim();
    let rho_star = hypgeom::ball_radius_for_volume(n, hypgeom::enclosed_volume(surface))?;
    let points = hypgeom::boundary_points(surface);
    let objective = |v: [f64; 3]| {
        hypgeom::distances(&points, v)
            .map(|d| (d - rho_star).abs())
            .fold(0.0, f64::max)
    };
    let (mut center, mut distance) = hypgeom::pattern_search(n, 0.25 * surface.rho().min(), objective);
    let mut fallback = false;
    if !hypgeom::contains(surface, center) {
        fallback = true;
        center = [0.0; 3];
        distance = objective(center);
    }
    Ok(BallDistance {
        rho_star,
        distance,
        center,
        fallback,
    })
}

/// ψ_n(V): A_{n−1} of the geodesic ball with volume V.
pub fn psi(n: usize, volume: f64) -> Result<f64> {
    let rho = hypgeom::ball_radius_for_volume(n, volume)?;
    Ok(hypgeom::ball_functionals(n, rho).a(n as i32 - 1))
}

#[derive(Clone, Debug, Serialize)]
pub struct AfReport {
    pub volume: f64,
    /// A_{n−1}(Ω).
    pub a_nm1: f64,
    pub psi: f64,
    /// A_{n−1}(Ω) − ψ_n(|Ω|).
    pub gap: f64,
}

/// Gap in the inequality A_{n−1}(Ω) ≥ ψ_n(|Ω|).
pub fn af_verify(surface: &RadialSurface) -> Result<AfReport> {
    let n = surface.dim();
    let (_, f) = hypgeom::functionals(surface)?;
    let a_nm1 = f.a(n as i32 - 1);
    let psi = psi(n, f.volume)?;
    Ok(AfReport {
        volume: f.volume,
        a_nm1,
        psi,
        gap: a_nm1 - psi,
    })
}

/// Largest relative gaps between the two curvature routes of a convex body.
#[derive(Clone, Debug, Serialize)]
pub struct CrossCheck {
    /// K^X from the Klein support function against K of the radial graph.
    pub gauss: f64,
    /// Inverse-Weingarten eigenvalues against 1/κ_i of the radial graph.
    pub weingarten: f64,
}

/// Compares the support-function curvatures of the projected body with the
/// radial-graph curvatures at the same boundary points. On S² the forms g and h
/// are interpolated as Cartesian tensors and diagonalized at the target point.
pub fn cross_parametrization(surface: &RadialSurface) -> Result<CrossCheck> {
    let grid = surface.grid();
    let n = grid.dim();
    let ss = klein::project(surface)?;
    let sg = klein::support_geometry(&ss)?;
    let rg = hypgeom::geometry(surface)?;
    let kr = rg.field(|p| p.k);
    let ik = grid.interpolant(kr.values());
    let k_lo = rg.field(|p| p.kappa[0]);
    let ilo = grid.interpolant(k_lo.values());
    let (mut gc, mut hc) = (vec![vec![0.0; grid.len()]; 6], vec![vec![0.0; grid.len()]; 6]);
    if n == 2 {
        for (j, p) in rg.nodes().iter().enumerate() {
            let node = grid.node(j);
            let e = frame(node.theta, node.phi);
            for (c, (g, h)) in embed(p.g, e).into_iter().zip(embed(p.h, e)).enumerate() {
                gc[c][j] = g;
                hc[c][j] = h;
            }
        }
    }
    let ig: Vec<_> = gc.iter().map(|v| grid.interpolant(v)).collect();
    let ih: Vec<_> = hc.iter().map(|v| grid.interpolant(v)).collect();
    let kappa_at = |d: [f64; 3]| -> [f64; 2] {
        if n == 1 {
            let k = ilo.eval(d);
            return [k, k];
        }
        let e = frame(d[2].clamp(-1.0, 1.0).acos(), d[1].atan2(d[0]));
        let g: [f64; 6] = std::array::from_fn(|c| ig[c].eval(d));
        let h: [f64; 6] = std::array::from_fn(|c| ih[c].eval(d));
        hypgeom::principal_curvatures(restrict(g, e), restrict(h, e))
    };
    let mut gauss: f64 = 0.0;
    let mut weingarten: f64 = 0.0;
    for (j, p) in sg.nodes().iter().enumerate() {
        let y = ss.point(j);
        let r = (y[0] * y[0] + y[1] * y[1] + y[2] * y[2]).sqrt();
        let d = y.map(|v| v / r);
        let k = ik.eval(d);
        gauss = gauss.max((p.kx - k).abs() / k);
        // radii 1/κ_i compared as relative errors of the curvatures
        let want = kappa_at(d);
        for (got, want) in [(p.kappa[0], want[0]), (p.kappa[n - 1], want[n - 1])] {
            weingarten = weingarten.max((1.0 / got - 1.0 / want).abs() * want);
        }
    }
    Ok(CrossCheck { gauss, weingarten })
}

/// Orthonormal tangent frame (e_θ, e_φ) of S² in R³.
fn frame(theta: f64, phi: f64) -> [[f64; 3]; 2] {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    [[ct * cp, ct * sp, -st], [-sp, cp, 0.0]]
}

/// Cartesian components `[xx, xy, xz, yy, yz, zz]` of a tangent 2-tensor `[11, 12, 22]`.
fn embed(t: [f64; 3], e: [[f64; 3]; 2]) -> [f64; 6] {
    let c = |i: usize, k: usize| {
        t[0] * e[0][i] * e[0][k] + t[1] * (e[0][i] * e[1][k] + e[1][i] * e[0][k]) + t[2] * e[1][i] * e[1][k]
    };
    [c(0, 0), c(0, 1), c(0, 2), c(1, 1), c(1, 2), c(2, 2)]
}

/// Tangent components `[11, 12, 22]` of a Cartesian tensor in the frame `e`.
fn restrict(m: [f64; 6], e: [[f64; 3]; 2]) -> [f64; 3] {
    let full = [[m[0], m[1], m[2]], [m[1], m[3], m[4]], [m[2], m[4], m[5]]];
    let q = |a: [f64; 3], b: [f64; 3]| -> f64 { (0..3).map(|i| (0..3).map(|k| a[i] * full[i][k] * b[k]).sum::<f64>()).sum() };
    [q(e[0], e[0]), q(e[0], e[1]), q(e[1], e[1])]
}
