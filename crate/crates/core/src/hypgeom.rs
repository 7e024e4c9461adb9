//! Radial graphs M = {(ρ(θ), θ)} in H^{n+1}: fundamental forms, curvatures,
//! enclosed volume, quermassintegrals and recentering isometries.
//!
//! Tangent quantities are expressed in the orthonormal frame of the round
//! sphere (see [`crate::spheregrid`]); symmetric 2×2 matrices are stored as
//! `[xx, xy, yy]`, and on S¹ only the first slot is used.

use std::f64::consts::PI;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::ser::{Serialize, SerializeMap, Serializer};

use crate::error::{Error, Result};
use crate::spheregrid::{ScalarField, SphereGrid};

static NEXT_CENTER: AtomicU64 = AtomicU64::new(1);

const DEGENERATE_FLOOR: f64 = 1e-14;

/// Hypersurface written as a radial graph over S^n about some center.
#[derive(Clone, Debug)]
pub struct RadialSurface {
    rho: ScalarField,
    center_id: u64,
}

impl RadialSurface {
    pub fn new(rho: ScalarField) -> Result<Self> {
        check_rho(&rho)?;
        Ok(RadialSurface { rho, center_id: 0 })
    }

    /// Geodesic sphere of radius `rho0`.
    pub fn sphere(grid: Arc<SphereGrid>, rho0: f64) -> Result<Self> {
        Self::new(ScalarField::constant(grid, rho0))
    }

    /// Same center, new radial function.
    pub fn with_rho(&self, rho: ScalarField) -> Result<Self> {
        check_rho(&rho)?;
        Ok(RadialSurface {
            rho,
            center_id: self.center_id,
        })
    }

    pub fn rho(&self) -> &ScalarField {
        &self.rho
    }

    pub fn grid(&self) -> &Arc<SphereGrid> {
        self.rho.grid()
    }

    pub fn dim(&self) -> usize {
        self.grid().dim()
    }

    pub fn center_id(&self) -> u64 {
        self.center_id
    }

    /// max ρ − min ρ.
    pub fn osc(&self) -> f64 {
        self.rho.max() - self.rho.min()
    }

    /// Boundary point of node `j` on the hyperboloid, `(cosh ρ, sinh ρ·ω)`.
    pub fn point(&self, j: usize) -> [f64; 4] {
        hyperboloid_point(self.rho.values()[j], self.grid().direction(j))
    }
}

fn check_rho(rho: &ScalarField) -> Result<()> {
    match rho.values().iter().position(|&r| !(r > 0.0)) {
        Some(node) => Err(Error::DegenerateSurface {
            node,
            reason: "non-positive radius",
        }),
        None => Ok(()),
    }
}

/// Per-node geometry of a radial graph, tangent tensors in the orthonormal frame.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NodeGeometry {
    pub g: [f64; 3],
    pub h: [f64; 3],
    /// Unit outward normal `(ν_ρ, ν_1, ν_2)` in the orthonormal frame of H^{n+1}.
    pub nu: [f64; 3],
    pub u: f64,
    /// √det g / √det σ.
    pub dmu: f64,
    /// Principal curvatures in ascending order.
    pub kappa: [f64; 2],
    /// σ_1, σ_2 of the principal curvatures.
    pub sigma: [f64; 2],
    pub k: f64,
}

impl NodeGeometry {
    /// σ_k for k = 0..=n.
    pub fn sigma_k(&self, k: usize) -> f64 {
        match k {
            0 => 1.0,
            _ => self.sigma[k - 1],
        }
    }
}

#[derive(Clone, Debug)]
pub struct SurfaceGeometry {
    grid: Arc<SphereGrid>,
    nodes: Vec<NodeGeometry>,
}

impl SurfaceGeometry {
    pub fn grid(&self) -> &Arc<SphereGrid> {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn nodes(&self) -> &[NodeGeometry] {
        &self.nodes
    }

    pub fn node(&self, j: usize) -> &NodeGeometry {
        &self.nodes[j]
    }

    pub fn field(&self, f: impl Fn(&NodeGeometry) -> f64) -> ScalarField {
        ScalarField::from_values_unchecked(
            self.grid.clone(),
            self.nodes.iter().map(f).collect(),
        )
    }

    pub fn gauss(&self) -> ScalarField {
        self.field(|g| g.k)
    }

    /// ∫ f dμ over the surface.
    pub fn integrate(&self, f: impl Fn(&NodeGeometry) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(self.grid.weights())
            .map(|(g, w)| f(g) * g.dmu * w)
            .sum()
    }

    pub fn area(&self) -> f64 {
        self.integrate(|_| 1.0)
    }

    pub fn kappa_min(&self) -> f64 {
        self.nodes.iter().map(|g| g.kappa[0]).fold(f64::INFINITY, f64::min)
    }

    pub fn kappa_max(&self) -> f64 {
        let n = self.dim();
        self.nodes
            .iter()
            .map(|g| g.kappa[n - 1])
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Derivative data of ρ at one node in the orthonormal frame.
struct Jet {
    rho: f64,
    d: [f64; 2],
    dd: [f64; 3],
}

fn jets(surface: &RadialSurface) -> Result<Vec<Jet>> {
    let grid = surface.grid();
    let (grad, hess) = grid.jet(surface.rho());
    let rho = surface.rho().values();
    (0..grid.len())
        .map(|j| {
            let jet = Jet {
                rho: rho[j],
                d: grad.frame(j),
                dd: hess.frame(j),
            };
            if !(jet.d.iter().chain(&jet.dd).all(|v| v.is_finite())) {
                return Err(Error::DegenerateSurface {
                    node: j,
                    reason: "non-finite derivatives",
                });
            }
            let s = jet.rho.sinh();
            if s * s + jet.d[0] * jet.d[0] + jet.d[1] * jet.d[1] < DEGENERATE_FLOOR {
                return Err(Error::DegenerateSurface {
                    node: j,
                    reason: "sinh²ρ + |∇ρ|² below floor",
                });
            }
            Ok(jet)
        })
        .collect()
}

/// Numerator tensor −sinh ρ ρ_ab + 2 cosh ρ ρ_a ρ_b + sinh²ρ cosh ρ δ_ab.
fn curvature_numerator(jet: &Jet) -> [f64; 3] {
    let (s, c) = (jet.rho.sinh(), jet.rho.cosh());
    let [a, b] = jet.d;
    let [xx, xy, yy] = jet.dd;
    [
        -s * xx + 2.0 * c * a * a + s * s * c,
        -s * xy + 2.0 * c * a * b,
        -s * yy + 2.0 * c * b * b + s * s * c,
    ]
}

/// Ascending eigenvalues of g⁻¹h for 2×2 forms stored as `[11, 12, 22]`.
pub fn principal_curvatures(g: [f64; 3], h: [f64; 3]) -> [f64; 2] {
    // Symmetric form L⁻¹ h L⁻ᵀ with g = L Lᵀ keeps the discriminant free of cancellation.
    let l11 = g[0].sqrt();
    let l21 = g[1] / l11;
    let l22 = (g[2] - l21 * l21).sqrt();
    let (i11, i21, i22) = (1.0 / l11, -l21 / (l11 * l22), 1.0 / l22);
    let s00 = i11 * i11 * h[0];
    let s01 = i11 * (i21 * h[0] + i22 * h[1]);
    let s11 = i21 * i21 * h[0] + 2.0 * i21 * i22 * h[1] + i22 * i22 * h[2];
    let mean = 0.5 * (s00 + s11);
    let rad = (0.5 * (s00 - s11)).hypot(s01);
    [mean - rad, mean + rad]
}

fn node_geometry(n: usize, jet: &Jet) -> NodeGeometry {
    let s = jet.rho.sinh();
    let [a, b] = jet.d;
    let grad2 = a * a + b * b;
    let w = (s * s + grad2).sqrt();
    let num = curvature_numerator(jet);
    let h = num.map(|v| v / w);
    let g = [a * a + s * s, a * b, b * b + s * s];
    let scale = (1.0 + grad2 / (s * s)).sqrt();
    let nu = [1.0 / scale, -a / s / scale, -b / s / scale];
    let u = s * s / w;
    let dmu = s.powi(n as i32 - 1) * w;
    let (kappa, sigma, k) = if n == 1 {
        let kap = h[0] / g[0];
        ([kap, kap], [kap, 0.0], kap)
    } else {
        let kap = principal_curvatures(g, h);
        (kap, [kap[0] + kap[1], kap[0] * kap[1]], kap[0] * kap[1])
    };
    NodeGeometry {
        g,
        h,
        nu,
        u,
        dmu,
        kappa,
        sigma,
        k,
    }
}

pub fn geometry(surface: &RadialSurface) -> Result<SurfaceGeometry> {
    let n = surface.dim();
    let nodes = jets(surface)?.iter().map(|jet| node_geometry(n, jet)).collect();
    Ok(SurfaceGeometry {
        grid: surface.grid().clone(),
        nodes,
    })
}

/// K from the determinant ratio det(numerator) / ((sinh²ρ + |∇ρ|²)^{(n+2)/2} sinh^{2n−2}ρ).
pub fn gauss_curvature(surface: &RadialSurface) -> Result<ScalarField> {
    let n = surface.dim();
    let values = jets(surface)?
        .iter()
        .map(|jet| {
            let m = curvature_numerator(jet);
            let det = if n == 1 { m[0] } else { m[0] * m[2] - m[1] * m[1] };
            let s = jet.rho.sinh();
            let w2 = s * s + jet.d[0] * jet.d[0] + jet.d[1] * jet.d[1];
            det / (w2.powf((n + 2) as f64 / 2.0) * s.powi(2 * n as i32 - 2))
        })
        .collect();
    Ok(ScalarField::from_values_unchecked(surface.grid().clone(), values))
}

/// ∫_0^ρ sinh^n r dr.
pub fn radial_volume_density(n: usize, rho: f64) -> f64 {
    match n {
        1 => 2.0 * (0.5 * rho).sinh().powi(2),
        _ => 0.25 * sinh_minus_identity(2.0 * rho),
    }
}

/// sinh x − x without cancellation for small x.
fn sinh_minus_identity(x: f64) -> f64 {
    if x.abs() < 0.5 {
        let x2 = x * x;
        let mut term = x * x2 / 6.0;
        let mut acc = 0.0f64;
        let mut k = 3.0;
        while term.abs() > 1e-18 * acc.abs().max(f64::MIN_POSITIVE) {
            acc += term;
            term *= x2 / ((k + 1.0) * (k + 2.0));
            k += 2.0;
        }
        acc
    } else {
        x.sinh() - x
    }
}

pub fn enclosed_volume(surface: &RadialSurface) -> f64 {
    let n = surface.dim();
    let grid = surface.grid();
    surface
        .rho()
        .values()
        .iter()
        .zip(grid.weights())
        .map(|(&r, w)| radial_volume_density(n, r) * w)
        .sum()
}

/// Global functionals of a convex body: |Ω|, A_0..A_n, Φ_0..Φ_n and K̄.
#[derive(Clone, Debug, PartialEq)]
pub struct Functionals {
    pub volume: f64,
    pub area: f64,
    /// A_1..A_n.
    pub quermass: Vec<f64>,
    /// Φ_k = ∫σ_{n−k} dμ for k = 0..=n.
    pub curv_int: Vec<f64>,
    pub kbar: f64,
}

impl Functionals {
    pub fn dim(&self) -> usize {
        self.quermass.len()
    }

    /// A_k for k = −1..=n.
    pub fn a(&self, k: i32) -> f64 {
        match k {
            -1 => self.volume,
            0 => self.area,
            _ => self.quermass[k as usize - 1],
        }
    }

    /// [A_0, …, A_n].
    pub fn a_list(&self) -> Vec<f64> {
        std::iter::once(self.area)
            .chain(self.quermass.iter().copied())
            .collect()
    }
}

impl Serialize for Functionals {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let n = self.dim();
        let mut map = serializer.serialize_map(Some(3 + 2 * n + 1))?;
        map.serialize_entry("volume", &self.volume)?;
        map.serialize_entry("area", &self.area)?;
        for (k, a) in self.quermass.iter().enumerate() {
            map.serialize_entry(&format!("A{}", k + 1), a)?;
        }
        for (k, p) in self.curv_int.iter().enumerate() {
            map.serialize_entry(&format!("Phi{k}"), p)?;
        }
        map.serialize_entry("kbar", &self.kbar)?;
        map.end()
    }
}

/// Quermassintegrals from curvature integrals ∫σ_k dμ (k = 0..=n) and the volume.
pub fn quermass_from_integrals(sigma_int: &[f64], volume: f64) -> Functionals {
    let n = sigma_int.len() - 1;
    // a[k + 1] = A_k for k = −1..=n.
    let mut a = vec![0.0; n + 2];
    a[0] = volume;
    a[1] = sigma_int[0];
    for k in 1..=n {
        a[k + 1] = if k == 1 {
            sigma_int[1] - n as f64 * volume
        } else {
            sigma_int[k] - (n - k + 1) as f64 / (k - 1) as f64 * a[k - 1]
        };
    }
    let curv_int: Vec<f64> = (0..=n).map(|k| sigma_int[n - k]).collect();
    Functionals {
        volume,
        area: a[1],
        quermass: a[2..].to_vec(),
        kbar: curv_int[0] / a[1],
        curv_int,
    }
}

pub fn quermassintegrals(geom: &SurfaceGeometry, volume: f64) -> Functionals {
    let n = geom.dim();
    let sigma_int: Vec<f64> = (0..=n).map(|k| geom.integrate(|g| g.sigma_k(k))).collect();
    quermass_from_integrals(&sigma_int, volume)
}

/// Geometry plus functionals in one call.
pub fn functionals(surface: &RadialSurface) -> Result<(SurfaceGeometry, Functionals)> {
    let geom = geometry(surface)?;
    let f = quermassintegrals(&geom, enclosed_volume(surface));
    Ok((geom, f))
}

/// |S^n|.
pub fn sphere_area(n: usize) -> f64 {
    match n {
        1 => 2.0 * PI,
        _ => 4.0 * PI,
    }
}

/// Volume of the geodesic ball of radius ρ in H^{n+1}.
pub fn ball_volume(n: usize, rho: f64) -> f64 {
    sphere_area(n) * radial_volume_density(n, rho)
}

/// Closed-form functionals of the geodesic ball of radius ρ.
pub fn ball_functionals(n: usize, rho: f64) -> Functionals {
    let area = sphere_area(n) * rho.sinh().powi(n as i32);
    let coth = 1.0 / rho.tanh();
    let binom = |k: usize| if n == 2 && k == 1 { 2.0 } else { 1.0 };
    let sigma_int: Vec<f64> = (0..=n)
        .map(|k| binom(k) * coth.powi(k as i32) * area)
        .collect();
    quermass_from_integrals(&sigma_int, ball_volume(n, rho))
}

/// Inverse of ρ ↦ |B_ρ| by Newton on the monotone closed form.
pub fn ball_radius_for_volume(n: usize, volume: f64) -> Result<f64> {
    if !(volume > 0.0) || !volume.is_finite() {
        return Err(Error::Config(format!("volume {volume} must be positive")));
    }
    let omega = sphere_area(n);
    if n == 1 {
        return Ok((volume / omega + 1.0).acosh());
    }
    // Newton on a convex increasing map converges monotonically from above.
    let cubic = (3.0 * volume / omega).cbrt();
    let mut rho = 0.5 * (volume / PI).asinh() + 1.0;
    if rho > cubic || ball_volume(n, rho) < volume {
        rho = cubic;
    }
    for _ in 0..200 {
        let f = ball_volume(n, rho) - volume;
        let df = omega * rho.sinh().powi(n as i32);
        let step = f / df;
        rho -= step;
        if step.abs() <= 1e-15 * rho {
            return Ok(rho);
        }
    }
    Err(Error::Correction {
        residual: ball_volume(n, rho) - volume,
    })
}

/// Point `(cosh ρ, sinh ρ·ω)` on the hyperboloid model.
pub fn hyperboloid_point(rho: f64, dir: [f64; 3]) -> [f64; 4] {
    let s = rho.sinh();
    [rho.cosh(), s * dir[0], s * dir[1], s * dir[2]]
}

/// Hyperbolic distance between two hyperboloid points.
pub fn distance(p: &[f64; 4], q: &[f64; 4]) -> f64 {
    let c = p[0] * q[0] - p[1] * q[1] - p[2] * q[2] - p[3] * q[3];
    c.max(1.0).acosh()
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn normalize(v: [f64; 3]) -> Option<[f64; 3]> {
    let r = dot3(v, v).sqrt();
    (r > 0.0).then(|| v.map(|x| x / r))
}

/// Radial function of the same body about the point at distance `distance`
/// from the current center in direction `direction`.
pub fn recenter(surface: &RadialSurface, direction: [f64; 3], distance: f64) -> Result<RadialSurface> {
    if !(distance >= 0.0) || !distance.is_finite() {
        return Err(Error::Recenter(format!("invalid distance {distance}")));
    }
    if distance == 0.0 {
        return Ok(surface.clone());
    }
    let grid = surface.grid();
    let mut u = direction;
    if grid.dim() == 1 {
        u[2] = 0.0;
    }
    let u = normalize(u).ok_or_else(|| Error::Recenter("zero direction".into()))?;
    let interp = grid.interpolant(surface.rho().values());
    if interp.eval(u) <= distance {
        return Err(Error::Recenter(format!(
            "new center at distance {distance} lies outside the body"
        )));
    }
    let (ch, sh) = (distance.cosh(), distance.sinh());
    let r_hi = distance + surface.rho().max() + 1.0;
    let mut values = Vec::with_capacity(grid.len());
    for j in 0..grid.len() {
        let w = grid.direction(j);
        let wu = dot3(w, u);
        // Point at distance r from the new center along w, in old coordinates.
        let gap = |r: f64| {
            let (cr, sr) = (r.cosh(), r.sinh());
            let p0 = ch * cr + sh * sr * wu;
            let a = sh * cr + ch * sr * wu;
            let dir = [
                a * u[0] + sr * (w[0] - wu * u[0]),
                a * u[1] + sr * (w[1] - wu * u[1]),
                a * u[2] + sr * (w[2] - wu * u[2]),
            ];
            let old_rho = p0.max(1.0).acosh();
            match normalize(dir) {
                Some(d) => interp.eval(d) - old_rho,
                None => interp.eval(u) - old_rho,
            }
        };
        let r = bracketed_root(gap, 0.0, r_hi).ok_or_else(|| {
            Error::Recenter(format!("no boundary crossing along node {j}"))
        })?;
        if !(r > 0.0) {
            return Err(Error::Recenter(format!("non-positive radius at node {j}")));
        }
        values.push(r);
    }
    let rho = ScalarField::new(grid.clone(), values)?;
    let out = RadialSurface {
        rho,
        center_id: NEXT_CENTER.fetch_add(1, Ordering::Relaxed),
    };
    let geom = geometry(&out).map_err(|e| Error::Recenter(e.to_string()))?;
    if let Some(j) = geom.nodes().iter().position(|g| !(g.u > 0.0)) {
        return Err(Error::Recenter(format!("graph property lost at node {j}")));
    }
    Ok(out)
}

/// Illinois regula falsi on a sign change of `f` over [a, b] with f(a) > 0 > f(b).
fn bracketed_root(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> Option<f64> {
    let mut fa = f(a);
    let mut fb = f(b);
    if !(fa > 0.0 && fb < 0.0) {
        return None;
    }
    let mut side = 0;
    for _ in 0..200 {
        let c = (a * fb - b * fa) / (fb - fa);
        let fc = f(c);
        if fc == 0.0 || (b - a).abs() < 1e-15 * (1.0 + c.abs()) {
            return Some(c);
        }
        if fc > 0.0 {
            a = c;
            fa = fc;
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        } else {
            b = c;
            fb = fc;
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        }
        if (b - a).abs() < 1e-14 * (1.0 + a.abs()) {
            return Some(0.5 * (a + b));
        }
    }
    Some(0.5 * (a + b))
}

/// Inner and outer radius estimates with the optimizing centers' distances.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct InOutRadius {
    pub inner: f64,
    pub outer: f64,
    /// Set when the search could not keep a valid center and the current-center
    /// min/max were returned instead.
    pub fallback: bool,
}

/// Exponential map at the origin of the hyperboloid for a tangent vector `v`.
pub fn exp_origin(v: [f64; 3]) -> [f64; 4] {
    let r = dot3(v, v).sqrt();
    match normalize(v) {
        Some(d) => hyperboloid_point(r, d),
        None => [1.0, 0.0, 0.0, 0.0],
    }
}

/// Minimizes `objective` over tangent vectors at the origin by compass search
/// with axis and diagonal directions.
pub fn pattern_search(dim: usize, step0: f64, objective: impl Fn([f64; 3]) -> f64) -> ([f64; 3], f64) {
    let mut dirs: Vec<[f64; 3]> = Vec::new();
    let range: Vec<i32> = vec![-1, 0, 1];
    for &a in &range {
        for &b in &range {
            for &c in &range {
                let c = if dim == 1 { 0 } else { c };
                let v = [a as f64, b as f64, c as f64];
                if v != [0.0; 3] && !dirs.contains(&v) {
                    let r = dot3(v, v).sqrt();
                    dirs.push(v.map(|x| x / r));
                }
            }
        }
    }
    let mut x = [0.0; 3];
    let mut fx = objective(x);
    let mut step = step0;
    while step > 1e-10 {
        let mut best = (fx, x);
        for d in &dirs {
            let y = [x[0] + step * d[0], x[1] + step * d[1], x[2] + step * d[2]];
            let fy = objective(y);
            if fy < best.0 {
                best = (fy, y);
            }
        }
        if best.0 < fx {
            fx = best.0;
            x = best.1;
        } else {
            step *= 0.5;
        }
    }
    (x, fx)
}

/// True if the point `exp_origin(v)` lies strictly inside the body.
pub fn contains(surface: &RadialSurface, v: [f64; 3]) -> bool {
    let r = dot3(v, v).sqrt();
    match normalize(v) {
        None => true,
        Some(d) => surface.grid().interpolant(surface.rho().values()).eval(d) > r,
    }
}

pub(crate) fn boundary_points(surface: &RadialSurface) -> Vec<[f64; 4]> {
    (0..surface.grid().len()).map(|j| surface.point(j)).collect()
}

pub(crate) fn distances<'a>(points: &'a [[f64; 4]], v: [f64; 3]) -> impl Iterator<Item = f64> + 'a {
    let c = exp_origin(v);
    points.iter().map(move |p| distance(&c, p))
}

/// Tangent vector at the current center pointing to the center of the smallest
/// enclosing geodesic ball of the boundary nodes, with that ball's radius.
pub fn circumcenter(surface: &RadialSurface) -> ([f64; 3], f64) {
    let points = boundary_points(surface);
    pattern_search(surface.dim(), 0.25 * surface.rho().min(), |v| {
        distances(&points, v).fold(0.0, f64::max)
    })
}

/// Recenters at `exp(v)` for a tangent vector `v` at the current center.
pub fn recenter_at(surface: &RadialSurface, v: [f64; 3]) -> Result<RadialSurface> {
    match normalize(v) {
        Some(d) => recenter(surface, d, dot3(v, v).sqrt()),
        None => Ok(surface.clone()),
    }
}

/// ρ₋ = max over centers of the distance to the nearest boundary node,
/// ρ₊ = min over centers of the distance to the farthest one.
pub fn inner_outer_radius(surface: &RadialSurface) -> InOutRadius {
    let points = boundary_points(surface);
    let (v_out, outer) = circumcenter(surface);
    let (v_in, neg_inner) = pattern_search(surface.dim(), 0.25 * surface.rho().min(), |v| {
        -distances(&points, v).fold(f64::INFINITY, f64::min)
    });
    if contains(surface, v_out) && contains(surface, v_in) && -neg_inner <= outer {
        InOutRadius {
            inner: -neg_inner,
            outer,
            fallback: false,
        }
    } else {
        InOutRadius {
            inner: surface.rho().min(),
            outer: surface.rho().max(),
            fallback: true,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spheregrid::{make_grid, Resolution};
    use proptest::prelude::*;

    fn grid(nt: usize) -> Arc<SphereGrid> {
        make_grid(2, Resolution::Sphere { n_theta: nt, n_phi: 2 * nt }).unwrap()
    }

    fn body(g: &Arc<SphereGrid>, f: impl Fn(f64, f64) -> f64) -> RadialSurface {
        RadialSurface::new(ScalarField::from_fn(g.clone(), |n, _| f(n.theta, n.phi))).unwrap()
    }

    /// Second-order hyper-dual numbers a + b ε₁ + c ε₂ + d ε₁ε₂.
    #[derive(Clone, Copy, Debug)]
    struct Hd(f64, f64, f64, f64);

    impl Hd {
        fn c(v: f64) -> Self {
            Hd(v, 0.0, 0.0, 0.0)
        }
        fn add(self, o: Hd) -> Hd {
            Hd(self.0 + o.0, self.1 + o.1, self.2 + o.2, self.3 + o.3)
        }
        fn mul(self, o: Hd) -> Hd {
            Hd(
                self.0 * o.0,
                self.0 * o.1 + self.1 * o.0,
                self.0 * o.2 + self.2 * o.0,
                self.0 * o.3 + self.1 * o.2 + self.2 * o.1 + self.3 * o.0,
            )
        }
        fn scale(self, s: f64) -> Hd {
            Hd(self.0 * s, self.1 * s, self.2 * s, self.3 * s)
        }
        fn chain(self, f: f64, df: f64, ddf: f64) -> Hd {
            Hd(f, df * self.1, df * self.2, df * self.3 + ddf * self.1 * self.2)
        }
        fn sin(self) -> Hd {
            let (s, c) = self.0.sin_cos();
            self.chain(s, c, -s)
        }
        fn cos(self) -> Hd {
            let (s, c) = self.0.sin_cos();
            self.chain(c, -s, -c)
        }
        fn sinh(self) -> Hd {
            self.chain(self.0.sinh(), self.0.cosh(), self.0.sinh())
        }
        fn cosh(self) -> Hd {
            self.chain(self.0.cosh(), self.0.sinh(), self.0.cosh())
        }
    }

    /// Embedding X(θ, φ) = (cosh ρ, sinh ρ·ω) in R^{3,1} with ρ given symbolically.
    fn embed(rho: &dyn Fn(Hd, Hd) -> Hd, t: Hd, p: Hd) -> [Hd; 4] {
        let r = rho(t, p);
        let (sr, cr) = (r.sinh(), r.cosh());
        [
            cr,
            sr.mul(t.sin()).mul(p.cos()),
            sr.mul(t.sin()).mul(p.sin()),
            sr.mul(t.cos()),
        ]
    }

    fn lorentz(a: [f64; 4], b: [f64; 4]) -> f64 {
        -a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3]
    }

    /// Gauss curvature of the embedded surface from exact derivatives.
    fn oracle_k(rho: &dyn Fn(Hd, Hd) -> Hd, theta: f64, phi: f64) -> f64 {
        let second = |a: usize, b: usize| {
            let mut t = Hd(theta, 0.0, 0.0, 0.0);
            let mut p = Hd(phi, 0.0, 0.0, 0.0);
            if a == 0 { t.1 = 1.0 } else { p.1 = 1.0 }
            if b == 0 { t.2 = 1.0 } else { p.2 = 1.0 }
            embed(rho, t, p)
        };
        let xtt = second(0, 0);
        let xtp = second(0, 1);
        let xpp = second(1, 1);
        let x: [f64; 4] = xtt.map(|h| h.0);
        let xt: [f64; 4] = xtt.map(|h| h.1);
        let xp: [f64; 4] = xpp.map(|h| h.1);
        // Lorentz-orthogonal to x, xt, xp: J · (4D cross product).
        let m = [x, xt, xp];
        let minor = |skip: usize| {
            let cols: Vec<usize> = (0..4).filter(|&c| c != skip).collect();
            let e = |r: usize, c: usize| m[r][cols[c]];
            e(0, 0) * (e(1, 1) * e(2, 2) - e(1, 2) * e(2, 1))
                - e(0, 1) * (e(1, 0) * e(2, 2) - e(1, 2) * e(2, 0))
                + e(0, 2) * (e(1, 0) * e(2, 1) - e(1, 1) * e(2, 0))
        };
        let cross: [f64; 4] = [minor(0), -minor(1), minor(2), -minor(3)];
        let mut nrm = [-cross[0], cross[1], cross[2], cross[3]];
        let len = lorentz(nrm, nrm).sqrt();
        nrm = nrm.map(|v| v / len);
        // Outward: positive pairing with the radial direction (x − e0 cosh ρ).
        let radial = [0.0, x[1], x[2], x[3]];
        if lorentz(nrm, radial) < 0.0 {
            nrm = nrm.map(|v| -v);
        }
        let g = [lorentz(xt, xt), lorentz(xt, xp), lorentz(xp, xp)];
        let h = [
            -lorentz(xtt.map(|h| h.3), nrm),
            -lorentz(xtp.map(|h| h.3), nrm),
            -lorentz(xpp.map(|h| h.3), nrm),
        ];
        (h[0] * h[2] - h[1] * h[1]) / (g[0] * g[2] - g[1] * g[1])
    }

    #[test]
    fn sphere_curvatures() {
        let g = grid(32);
        let s = RadialSurface::sphere(g.clone(), 1.0).unwrap();
        let geom = geometry(&s).unwrap();
        let coth1 = 1.0 / 1f64.tanh();
        for ng in geom.nodes() {
            assert!((ng.kappa[0] - 1.3130352855).abs() < 1e-9);
            assert!((ng.kappa[1] - coth1).abs() < 1e-12);
            assert!((ng.k - 1.7240617).abs() < 1e-7);
            assert!((ng.u - 1.1752012).abs() < 1e-7);
            assert!((ng.dmu - 1f64.sinh().powi(2)).abs() < 1e-12);
        }
        let k = gauss_curvature(&RadialSurface::sphere(g, 2.0).unwrap()).unwrap();
        let coth2 = 2f64.cosh() / 2f64.sinh();
        assert!(k.values().iter().all(|v| (v - coth2 * coth2).abs() < 1e-12));
        assert!((coth2 * coth2 - 1.0760218298).abs() < 1e-9);
    }

    #[test]
    fn circle_sphere_curvature() {
        let c = make_grid(1, Resolution::Circle(64)).unwrap();
        for rho0 in [0.5, 1.0, 2.0] {
            let geom = geometry(&RadialSurface::sphere(c.clone(), rho0).unwrap()).unwrap();
            assert!(geom.nodes().iter().all(|g| (g.k - 1.0 / rho0.tanh()).abs() < 1e-12));
        }
    }

    #[test]
    fn gauss_curvature_matches_symbolic_oracle() {
        let g = grid(64);
        let s = body(&g, |t, _| 1.0 + 0.05 * t.cos());
        let k = gauss_curvature(&s).unwrap();
        let rho = |t: Hd, _p: Hd| Hd::c(1.0).add(t.cos().scale(0.05));
        let mut state = 12345u64;
        for _ in 0..20 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let j = (state >> 33) as usize % g.len();
            let node = g.node(j);
            let exact = oracle_k(&rho, node.theta, node.phi);
            let rel = (k.values()[j] - exact).abs() / exact;
            assert!(rel < 1e-6, "node {j}: {} vs {exact}", k.values()[j]);
        }
    }

    #[test]
    fn non_axisymmetric_curvature_matches_oracle() {
        let g = grid(64);
        let f = |t: f64, p: f64| 1.0 + 0.04 * t.sin().powi(2) * (2.0 * p).cos() + 0.03 * t.cos();
        let s = body(&g, f);
        let k = gauss_curvature(&s).unwrap();
        let rho = |t: Hd, p: Hd| {
            let st = t.sin();
            Hd::c(1.0)
                .add(st.mul(st).mul(p.scale(2.0).cos()).scale(0.04))
                .add(t.cos().scale(0.03))
        };
        for j in (0..g.len()).step_by(611) {
            let node = g.node(j);
            let exact = oracle_k(&rho, node.theta, node.phi);
            assert!((k.values()[j] - exact).abs() / exact < 1e-5);
        }
    }

    #[test]
    fn two_curvature_routes_agree() {
        let g = grid(32);
        let s = body(&g, |t, p| 1.0 + 0.05 * t.cos() + 0.02 * t.sin() * p.sin());
        let geom = geometry(&s).unwrap();
        let k = gauss_curvature(&s).unwrap();
        for (ng, kv) in geom.nodes().iter().zip(k.values()) {
            assert!((ng.k - kv).abs() <= 1e-10 * kv.abs());
            let det_ratio = (ng.h[0] * ng.h[2] - ng.h[1] * ng.h[1]) / (ng.g[0] * ng.g[2] - ng.g[1] * ng.g[1]);
            assert!((ng.k - det_ratio).abs() <= 1e-10 * det_ratio.abs());
        }
    }

    #[test]
    fn volume_closed_forms() {
        let g = grid(32);
        let v = enclosed_volume(&RadialSurface::sphere(g.clone(), 1.0).unwrap());
        assert!((v - 5.110928).abs() < 1e-5);
        assert!((v - PI * (2f64.sinh() - 2.0)).abs() < 1e-12);
        let c = make_grid(1, Resolution::Circle(64)).unwrap();
        let v1 = enclosed_volume(&RadialSurface::sphere(c, 1.0).unwrap());
        assert!((v1 - 2.0 * PI * (1f64.cosh() - 1.0)).abs() < 1e-12);
        assert!((v1 - 3.4122763).abs() < 1e-7);
        let tiny = enclosed_volume(&RadialSurface::sphere(g, 1e-6).unwrap());
        assert!(tiny > 0.0 && tiny < 1e-17);
    }

    #[test]
    fn ball_quermassintegrals() {
        let g = grid(32);
        let (_, f) = functionals(&RadialSurface::sphere(g, 1.0).unwrap()).unwrap();
        assert!((f.area - 17.35539).abs() < 1e-5);
        assert!((f.a(1) - 35.35461).abs() < 1e-5);
        assert!((f.a(1) - (2.0 * PI * 2f64.sinh() + 4.0 * PI)).abs() < 1e-10);
        assert!((f.a(2) - 4.0 * PI).abs() < 1e-10);
        assert!((f.kbar - 1.724062).abs() < 1e-6);
        assert!((f.area - f.curv_int[2]).abs() < 1e-12);
        assert!((f.kbar * f.area - f.curv_int[0]).abs() < 1e-10);
        let closed = ball_functionals(2, 1.0);
        for k in -1..=2 {
            assert!((closed.a(k) - f.a(k)).abs() < 1e-10 * f.a(k).abs().max(1.0));
        }
    }

    #[test]
    fn functionals_json_keys() {
        let f = ball_functionals(2, 1.0);
        let v = serde_json::to_value(&f).unwrap();
        let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
        for k in ["volume", "area", "A1", "A2", "Phi0", "Phi1", "Phi2", "kbar"] {
            assert!(keys.iter().any(|s| s.as_str() == k), "{k}");
        }
    }

    #[test]
    fn gauss_bonnet_on_perturbed_surfaces() {
        let g = grid(64);
        for amp in [0.0, 0.05, 0.1] {
            let s = body(&g, |t, p| 1.0 + amp * (1.5 * t.cos().powi(2) - 0.5) + 0.5 * amp * t.sin() * p.cos());
            let geom = geometry(&s).unwrap();
            let gb = geom.integrate(|n| n.k - 1.0);
            assert!((gb - 4.0 * PI).abs() < 1e-6 * 4.0 * PI, "{amp}: {gb}");
        }
    }

    #[test]
    fn ball_radius_inverts_volume() {
        for n in [1, 2] {
            for rho in [0.01, 0.5, 1.0, 3.0] {
                let r = ball_radius_for_volume(n, ball_volume(n, rho)).unwrap();
                assert!((r - rho).abs() < 1e-12 * rho.max(1.0), "{n} {rho} {r}");
            }
        }
    }

    #[test]
    fn quermass_monotone_under_inclusion() {
        for n in [1, 2] {
            let mut prev = ball_functionals(n, 0.1);
            for i in 2..30 {
                let f = ball_functionals(n, 0.1 * i as f64);
                for k in -1..n as i32 {
                    assert!(f.a(k) >= prev.a(k));
                }
                prev = f;
            }
        }
    }

    #[test]
    fn recenter_identity_and_ball_axis() {
        let g = grid(32);
        let ball = RadialSurface::sphere(g.clone(), 1.0).unwrap();
        let same = recenter(&ball, [0.0, 0.0, 1.0], 0.0).unwrap();
        assert_eq!(same.rho().values(), ball.rho().values());
        let u = g.direction(5 * g.n_phi() + 3);
        let moved = recenter(&ball, u, 0.3).unwrap();
        assert!((moved.rho().max() - 1.3).abs() < 1e-6);
        assert!((moved.rho().min() - 0.7).abs() < 1e-6);
        assert_ne!(moved.center_id(), ball.center_id());
        assert!(recenter(&ball, u, 1.2).is_err());
    }

    #[test]
    fn recenter_preserves_volume_and_functionals() {
        let g = grid(64);
        let s = body(&g, |t, p| 1.0 + 0.05 * t.cos() + 0.03 * t.sin() * p.sin());
        let (_, f0) = functionals(&s).unwrap();
        let moved = recenter(&s, [0.6, 0.0, 0.8], 0.2).unwrap();
        let (_, f1) = functionals(&moved).unwrap();
        assert!((f1.volume - f0.volume).abs() <= 1e-6 * f0.volume);
        for k in -1..=2 {
            assert!((f1.a(k) - f0.a(k)).abs() <= 1e-5 * f0.a(k).abs(), "A{k}");
        }
        assert!((f1.kbar - f0.kbar).abs() <= 1e-5 * f0.kbar);
        for k in 0..=2 {
            assert!((f1.curv_int[k] - f0.curv_int[k]).abs() <= 1e-5 * f0.curv_int[k]);
        }
    }

    #[test]
    fn recenter_on_circle() {
        let c = make_grid(1, Resolution::Circle(128)).unwrap();
        let ball = RadialSurface::sphere(c, 1.0).unwrap();
        let moved = recenter(&ball, [1.0, 0.0, 0.0], 0.3).unwrap();
        assert!((moved.rho().max() - 1.3).abs() < 1e-9);
        assert!((moved.rho().min() - 0.7).abs() < 1e-9);
        assert!((enclosed_volume(&moved) - enclosed_volume(&ball)).abs() < 1e-9);
    }

    #[test]
    fn inner_outer_radius_cases() {
        let g = grid(32);
        let ball = RadialSurface::sphere(g.clone(), 1.0).unwrap();
        let r = inner_outer_radius(&ball);
        assert!(!r.fallback);
        assert!((r.inner - 1.0).abs() < 1e-6 && (r.outer - 1.0).abs() < 1e-6);
        let moved = recenter(&ball, g.direction(70), 0.3).unwrap();
        let r = inner_outer_radius(&moved);
        assert!((r.inner - 1.0).abs() < 1e-3 && (r.outer - 1.0).abs() < 1e-3, "{r:?}");
        let bumpy = body(&g, |t, _| 1.0 + 0.05 * t.cos());
        let r = inner_outer_radius(&bumpy);
        assert!(r.inner <= r.outer && r.inner >= 0.9 && r.outer <= 1.1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn sigma_are_symmetric_functions(a in -0.08f64..0.08, b in -0.08f64..0.08, rho0 in 0.4f64..2.0) {
            let g = grid(16);
            let s = body(&g, |t, p| rho0 + a * t.cos() + b * t.sin() * (2.0 * p).cos());
            let geom = geometry(&s).unwrap();
            for ng in geom.nodes() {
                prop_assert_eq!(ng.sigma[0], ng.kappa[0] + ng.kappa[1]);
                prop_assert_eq!(ng.sigma[1], ng.kappa[0] * ng.kappa[1]);
                prop_assert_eq!(ng.k, ng.sigma[1]);
                prop_assert!(ng.kappa[0] <= ng.kappa[1]);
                prop_assert!(ng.dmu > 0.0 && ng.u > 0.0);
                let det_g = ng.g[0] * ng.g[2] - ng.g[1] * ng.g[1];
                prop_assert!(ng.g[0] > 0.0 && det_g > 0.0);
                let nn = ng.nu.iter().map(|v| v * v).sum::<f64>();
                prop_assert!((nn - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn ball_functionals_match_quadrature(rho0 in 0.2f64..2.5) {
            let g = grid(16);
            let (_, f) = functionals(&RadialSurface::sphere(g, rho0).unwrap()).unwrap();
            let c = ball_functionals(2, rho0);
            for k in -1..=2 {
                prop_assert!((f.a(k) - c.a(k)).abs() <= 1e-9 * c.a(k).abs().max(1.0));
            }
        }
    }
}
