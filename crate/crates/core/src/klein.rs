//! Klein-model projection and Gauss-map support-function geometry.
//!
//! A convex body in H^{n+1} maps to a Euclidean convex body inside the unit
//! ball via X = (1, Y)/√(1−|Y|²); a point at hyperbolic distance ρ lands at
//! Euclidean radius tanh ρ. The projected body is described by its support
//! function s on the same [`SphereGrid`] that carries ρ.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hypgeom::{quermass_from_integrals, Functionals, RadialSurface};
use crate::spheregrid::{ScalarField, SphereGrid, SymTensorField, VectorField};

/// Smallest admissible eigenvalue of the radii tensor.
pub const PD_TOLERANCE: f64 = 1e-10;

/// Support function s of the projected body together with its derivatives.
#[derive(Clone, Debug)]
pub struct SupportSurface {
    s: ScalarField,
    grad: VectorField,
    hess: SymTensorField,
    r2: ScalarField,
}

impl SupportSurface {
    pub fn new(s: ScalarField) -> Result<Self> {
        let grid = s.grid().clone();
        let (grad, hess) = grid.jet(&s);
        let mut r2 = Vec::with_capacity(grid.len());
        for (j, &sv) in s.values().iter().enumerate() {
            let q = sv * sv + grad.norm_sq(j);
            if !(sv > 0.0 && sv < 1.0 && q < 1.0) {
                return Err(Error::OutOfModel { node: j });
            }
            r2.push(q);
        }
        let r2 = ScalarField::new(grid, r2)?;
        Ok(SupportSurface { s, grad, hess, r2 })
    }

    /// Concentric ball of hyperbolic radius `rho0`.
    pub fn sphere(grid: Arc<SphereGrid>, rho0: f64) -> Result<Self> {
        Self::new(ScalarField::constant(grid, rho0.tanh()))
    }

    pub fn s(&self) -> &ScalarField {
        &self.s
    }

    pub fn grad(&self) -> &VectorField {
        &self.grad
    }

    pub fn hess(&self) -> &SymTensorField {
        &self.hess
    }

    /// s² + |∇s|².
    pub fn r2(&self) -> &ScalarField {
        &self.r2
    }

    pub fn grid(&self) -> &Arc<SphereGrid> {
        self.s.grid()
    }

    pub fn dim(&self) -> usize {
        self.grid().dim()
    }

    /// Boundary point Y(z) = s z + ∇s for the node normal `z`.
    pub fn point(&self, j: usize) -> [f64; 3] {
        let z = self.grid().direction(j);
        let g = self.grad.ambient(j);
        let s = self.s.values()[j];
        [s * z[0] + g[0], s * z[1] + g[1], s * z[2] + g[2]]
    }

    /// Hyperbolic distance atanh|Y| of each boundary point from the origin.
    pub fn rho(&self) -> ScalarField {
        self.r2.map(|q| q.sqrt().atanh())
    }

    /// Oscillation of the hyperbolic distance of the boundary from the origin.
    pub fn osc(&self) -> f64 {
        let rho = self.rho();
        rho.max() - rho.min()
    }
}

/// 𝔯_ij = ∇²s + sσ with per-node eigenvalues (principal radii of the projected body).
#[derive(Clone, Debug)]
pub struct RadiiTensor {
    pub r: SymTensorField,
    /// Ascending eigenvalues; on S¹ both slots hold 𝔯.
    pub eigen: Vec<[f64; 2]>,
    pub det: Vec<f64>,
}

fn sym_eigen(m: [f64; 3]) -> [f64; 2] {
    let mean = 0.5 * (m[0] + m[2]);
    let rad = (0.5 * (m[0] - m[2])).hypot(m[1]);
    [mean - rad, mean + rad]
}

fn radii_frame(ss: &SupportSurface, j: usize) -> [f64; 3] {
    let [a, b, c] = ss.hess.frame(j);
    let s = ss.s.values()[j];
    match ss.dim() {
        1 => [a + s, 0.0, 0.0],
        _ => [a + s, b, c + s],
    }
}

pub fn radii_tensor(ss: &SupportSurface) -> Result<RadiiTensor> {
    let n = ss.dim();
    let grid = ss.grid();
    let mut frame = Vec::with_capacity(grid.len());
    let mut eigen = Vec::with_capacity(grid.len());
    let mut det = Vec::with_capacity(grid.len());
    for j in 0..grid.len() {
        let m = radii_frame(ss, j);
        let (e, d) = if n == 1 {
            ([m[0], m[0]], m[0])
        } else {
            (sym_eigen(m), m[0] * m[2] - m[1] * m[1])
        };
        if !(e[0] > PD_TOLERANCE) || !(d > 0.0) {
            return Err(Error::ConvexityLoss {
                node: j,
                eigenvalue: e[0],
            });
        }
        frame.push(m);
        eigen.push(e);
        det.push(d);
    }
    Ok(RadiiTensor {
        r: SymTensorField::from_frame(grid.clone(), frame),
        eigen,
        det,
    })
}

/// K^Y = 1/det 𝔯.
pub fn gauss_ky(rt: &RadiiTensor) -> ScalarField {
    ScalarField::from_values_unchecked(
        rt.r.grid().clone(),
        rt.det.iter().map(|d| 1.0 / d).collect(),
    )
}

fn kx_factor(n: usize, s: f64, r2: f64) -> f64 {
    ((1.0 - r2) / (1.0 - s * s)).powf((n + 2) as f64 / 2.0)
}

/// K^X = ((1 − r²)/(1 − s²))^{(n+2)/2} K^Y.
pub fn gauss_kx(ss: &SupportSurface) -> Result<ScalarField> {
    let ky = gauss_ky(&radii_tensor(ss)?);
    let n = ss.dim();
    let values = (0..ky.values().len())
        .map(|j| kx_factor(n, ss.s.values()[j], ss.r2.values()[j]) * ky.values()[j])
        .collect();
    Ok(ScalarField::from_values_unchecked(ss.grid().clone(), values))
}

/// Coefficients of the support-function equation ∂s/∂t = Aφ − B(K^Y)^α.
#[derive(Clone, Debug)]
pub struct KleinCoefficients {
    pub a: ScalarField,
    pub b: ScalarField,
}

pub fn coefficient_a(s: f64, r2: f64) -> f64 {
    ((1.0 - r2) * (1.0 - s * s)).sqrt()
}

pub fn coefficient_b(n: usize, alpha: f64, s: f64, r2: f64) -> f64 {
    let e = (n + 2) as f64 / 2.0 * alpha;
    (1.0 - r2).powf(e + 0.5) * (1.0 - s * s).powf(-e + 0.5)
}

pub fn coefficients(ss: &SupportSurface, alpha: f64) -> Result<KleinCoefficients> {
    let n = ss.dim();
    let (s, r2) = (ss.s.values(), ss.r2.values());
    if let Some(node) = r2.iter().position(|&q| !(q < 1.0)) {
        return Err(Error::OutOfModel { node });
    }
    let grid = ss.grid().clone();
    let a = s.iter().zip(r2).map(|(&s, &q)| coefficient_a(s, q)).collect();
    let b = s
        .iter()
        .zip(r2)
        .map(|(&s, &q)| coefficient_b(n, alpha, s, q))
        .collect();
    Ok(KleinCoefficients {
        a: ScalarField::from_values_unchecked(grid.clone(), a),
        b: ScalarField::from_values_unchecked(grid, b),
    })
}

/// W_X⁻¹ = (σ + ∇s⊗∇s/(1 − r²))𝔯·√((1 − s²)/(1 − r²)) per node, in the orthonormal frame.
#[derive(Clone, Debug)]
pub struct InverseWeingarten {
    /// Row-major 2×2 matrices (only `[0][0]` used on S¹).
    pub matrix: Vec<[[f64; 2]; 2]>,
    /// Ascending eigenvalues 1/κ_max ≤ 1/κ_min.
    pub eigen: Vec<[f64; 2]>,
}

pub fn inverse_weingarten(ss: &SupportSurface) -> Result<InverseWeingarten> {
    let rt = radii_tensor(ss)?;
    let n = ss.dim();
    let len = ss.grid().len();
    let mut matrix = Vec::with_capacity(len);
    let mut eigen = Vec::with_capacity(len);
    for j in 0..len {
        let (s, r2) = (ss.s.values()[j], ss.r2.values()[j]);
        let [ga, gb] = ss.grad.frame(j);
        let q = ((1.0 - s * s) / (1.0 - r2)).sqrt();
        let p = [
            1.0 + ga * ga / (1.0 - r2),
            ga * gb / (1.0 - r2),
            1.0 + gb * gb / (1.0 - r2),
        ];
        let r = rt.r.frame(j);
        if n == 1 {
            let v = p[0] * r[0] * q;
            matrix.push([[v, 0.0], [0.0, 0.0]]);
            eigen.push([v, v]);
            continue;
        }
        matrix.push([
            [
                q * (p[0] * r[0] + p[1] * r[1]),
                q * (p[0] * r[1] + p[1] * r[2]),
            ],
            [
                q * (p[1] * r[0] + p[2] * r[1]),
                q * (p[1] * r[1] + p[2] * r[2]),
            ],
        ]);
        // Eigenvalues of P𝔯 equal those of the symmetric Lᵀ𝔯L with P = LLᵀ.
        let l11 = p[0].sqrt();
        let l21 = p[1] / l11;
        let l22 = (p[2] - l21 * l21).sqrt();
        let m00 = l11 * (l11 * r[0] + l21 * r[1]) + l21 * (l11 * r[1] + l21 * r[2]);
        let m01 = l22 * (l11 * r[1] + l21 * r[2]);
        let m11 = l22 * l22 * r[2];
        let e = sym_eigen([m00, m01, m11]);
        eigen.push([q * e[0], q * e[1]]);
    }
    Ok(InverseWeingarten { matrix, eigen })
}

/// Positive-definiteness report for the radii tensor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConvexityCertificate {
    pub min_eigenvalue: f64,
    pub min_det: f64,
    /// Node attaining the smallest eigenvalue.
    pub node: usize,
    pub pass: bool,
}

pub fn convexity_certificate(ss: &SupportSurface) -> ConvexityCertificate {
    let n = ss.dim();
    let mut cert = ConvexityCertificate {
        min_eigenvalue: f64::INFINITY,
        min_det: f64::INFINITY,
        node: 0,
        pass: true,
    };
    for j in 0..ss.grid().len() {
        let m = radii_frame(ss, j);
        let (e, d) = if n == 1 {
            (m[0], m[0])
        } else {
            (sym_eigen(m)[0], m[0] * m[2] - m[1] * m[1])
        };
        if e < cert.min_eigenvalue || e.is_nan() {
            cert.min_eigenvalue = e;
            cert.node = j;
        }
        cert.min_det = cert.min_det.min(d);
    }
    cert.pass = cert.min_eigenvalue > PD_TOLERANCE;
    cert
}

/// Hyperbolic curvature data at one Gauss-map node.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SupportNode {
    pub ky: f64,
    pub kx: f64,
    /// Ascending hyperbolic principal curvatures.
    pub kappa: [f64; 2],
    pub sigma: [f64; 2],
    /// Hyperbolic area density with respect to dσ.
    pub dmu: f64,
    pub a: f64,
    /// Smallest principal radius of the projected body.
    pub rmin: f64,
}

impl SupportNode {
    pub fn sigma_k(&self, k: usize) -> f64 {
        match k {
            0 => 1.0,
            _ => self.sigma[k - 1],
        }
    }
}

#[derive(Clone, Debug)]
pub struct SupportGeometry {
    grid: Arc<SphereGrid>,
    nodes: Vec<SupportNode>,
}

impl SupportGeometry {
    pub fn grid(&self) -> &Arc<SphereGrid> {
        &self.grid
    }

    pub fn nodes(&self) -> &[SupportNode] {
        &self.nodes
    }

    pub fn field(&self, f: impl Fn(&SupportNode) -> f64) -> ScalarField {
        ScalarField::from_values_unchecked(self.grid.clone(), self.nodes.iter().map(f).collect())
    }

    /// ∫ f dμ over the hyperbolic surface.
    pub fn integrate(&self, f: impl Fn(&SupportNode) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(self.grid.weights())
            .map(|(p, w)| f(p) * p.dmu * w)
            .sum()
    }

    pub fn kappa_min(&self) -> f64 {
        self.nodes.iter().map(|p| p.kappa[0]).fold(f64::INFINITY, f64::min)
    }

    pub fn kappa_max(&self) -> f64 {
        let n = self.grid.dim();
        self.nodes
            .iter()
            .map(|p| p.kappa[n - 1])
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn support_geometry(ss: &SupportSurface) -> Result<SupportGeometry> {
    let n = ss.dim();
    let rt = radii_tensor(ss)?;
    let iw = inverse_weingarten(ss)?;
    let nodes = (0..ss.grid().len())
        .map(|j| {
            let (s, r2) = (ss.s.values()[j], ss.r2.values()[j]);
            let ky = 1.0 / rt.det[j];
            let kx = kx_factor(n, s, r2) * ky;
            let [e0, e1] = iw.eigen[j];
            let (kappa, sigma) = if n == 1 {
                let k = 1.0 / e0;
                ([k, k], [k, 0.0])
            } else {
                let k = [1.0 / e1, 1.0 / e0];
                (k, [k[0] + k[1], k[0] * k[1]])
            };
            SupportNode {
                ky,
                kx,
                kappa,
                sigma,
                dmu: rt.det[j] * (1.0 - s * s).sqrt() * (1.0 - r2).powf(-((n + 1) as f64) / 2.0),
                a: coefficient_a(s, r2),
                rmin: rt.eigen[j][0],
            }
        })
        .collect();
    Ok(SupportGeometry {
        grid: ss.grid().clone(),
        nodes,
    })
}

/// r^{−(n+1)} ∫_0^r t^n (1 − t²)^{−(n+2)/2} dt.
fn cone_factor(n: usize, r: f64) -> f64 {
    if r < 1e-3 {
        let r2 = r * r;
        let c1 = (n + 2) as f64 / 2.0 / (n + 3) as f64;
        let c2 = (n + 2) as f64 * (n + 4) as f64 / 8.0 / (n + 5) as f64;
        return 1.0 / (n + 1) as f64 + c1 * r2 + c2 * r2 * r2;
    }
    let q = 1.0 - r * r;
    let integral = match n {
        1 => 1.0 / q.sqrt() - 1.0,
        _ => r / (2.0 * q) - 0.5 * r.atanh(),
    };
    integral / r.powi(n as i32 + 1)
}

/// Hyperbolic volume of the body from the Euclidean cone decomposition over the Gauss map.
pub fn support_volume(ss: &SupportSurface, rt: &RadiiTensor) -> f64 {
    let n = ss.dim();
    let grid = ss.grid();
    (0..grid.len())
        .map(|j| {
            let r = ss.r2.values()[j].sqrt();
            cone_factor(n, r) * ss.s.values()[j] * rt.det[j] * grid.weights()[j]
        })
        .sum()
}

pub fn support_functionals(ss: &SupportSurface) -> Result<(SupportGeometry, Functionals)> {
    let geom = support_geometry(ss)?;
    let rt = radii_tensor(ss)?;
    let n = ss.dim();
    let sigma_int: Vec<f64> = (0..=n).map(|k| geom.integrate(|p| p.sigma_k(k))).collect();
    Ok((geom, quermass_from_integrals(&sigma_int, support_volume(ss, &rt))))
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn unit(v: [f64; 3]) -> [f64; 3] {
    let r = dot(v, v).sqrt();
    v.map(|x| x / r)
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn tangent_basis(dim: usize, w: [f64; 3]) -> Vec<[f64; 3]> {
    if dim == 1 {
        return vec![[-w[1], w[0], 0.0]];
    }
    let axis = if w[0].abs() < 0.6 {
        [1.0, 0.0, 0.0]
    } else {
        [0.0, 1.0, 0.0]
    };
    let e1 = unit(cross(w, axis));
    vec![e1, cross(w, e1)]
}

fn retract(w: [f64; 3], basis: &[[f64; 3]], d: &[f64]) -> [f64; 3] {
    let mut v = w;
    for (e, x) in basis.iter().zip(d) {
        for c in 0..3 {
            v[c] += x * e[c];
        }
    }
    unit(v)
}

/// Newton iteration for a zero of a tangent vector field on S^dim, with a
/// central-difference Jacobian in a local tangent basis.
fn tangent_newton(dim: usize, start: [f64; 3], field: impl Fn([f64; 3]) -> [f64; 3]) -> Option<[f64; 3]> {
    let mut w = start;
    let h = 1e-5;
    for _ in 0..60 {
        let basis = tangent_basis(dim, w);
        let f0 = field(w);
        let f: Vec<f64> = basis.iter().map(|e| dot(f0, *e)).collect();
        let mut jac = [[0.0; 2]; 2];
        for k in 0..dim {
            let mut dp = [0.0; 2];
            dp[k] = h;
            let mut dm = [0.0; 2];
            dm[k] = -h;
            let fp = field(retract(w, &basis, &dp[..dim]));
            let fm = field(retract(w, &basis, &dm[..dim]));
            for i in 0..dim {
                jac[i][k] = (dot(fp, basis[i]) - dot(fm, basis[i])) / (2.0 * h);
            }
        }
        let mut step = if dim == 1 {
            vec![-f[0] / jac[0][0]]
        } else {
            let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
            vec![
                -(jac[1][1] * f[0] - jac[0][1] * f[1]) / det,
                -(-jac[1][0] * f[0] + jac[0][0] * f[1]) / det,
            ]
        };
        if step.iter().any(|x| !x.is_finite()) {
            return None;
        }
        let len = step.iter().map(|x| x * x).sum::<f64>().sqrt();
        if len > 0.2 {
            step.iter_mut().for_each(|x| *x *= 0.2 / len);
        }
        w = retract(w, &basis, &step);
        if len < 1e-13 {
            return Some(w);
        }
    }
    None
}

/// Greedy ascent over grid neighbors of `score`.
fn hill_climb(grid: &SphereGrid, start: usize, score: impl Fn(usize) -> f64) -> usize {
    let mut j = start;
    let mut best = score(j);
    loop {
        let mut next = None;
        for k in grid.neighbors(j) {
            let v = score(k);
            if v > best {
                best = v;
                next = Some(k);
            }
        }
        match next {
            Some(k) => j = k,
            None => return j,
        }
    }
}

/// Interpolants of a field and of the Cartesian components of its gradient.
struct Jet1<'a> {
    grid: &'a SphereGrid,
    f: crate::spheregrid::Interpolant<'a>,
    g: [crate::spheregrid::Interpolant<'a>; 3],
}

impl<'a> Jet1<'a> {
    fn new(grid: &'a SphereGrid, values: &'a [f64], comps: &'a [Vec<f64>; 3]) -> Self {
        Jet1 {
            grid,
            f: grid.interpolant(values),
            g: [
                grid.interpolant(&comps[0]),
                grid.interpolant(&comps[1]),
                grid.interpolant(&comps[2]),
            ],
        }
    }

    /// Value and tangential gradient at `w`.
    fn eval(&self, w: [f64; 3]) -> (f64, [f64; 3]) {
        let mut g = [self.g[0].eval(w), self.g[1].eval(w), self.g[2].eval(w)];
        if self.grid.dim() == 1 {
            g[2] = 0.0;
        }
        let gn = dot(g, w);
        (self.f.eval(w), [g[0] - gn * w[0], g[1] - gn * w[1], g[2] - gn * w[2]])
    }
}

fn ambient_gradient(f: &ScalarField) -> [Vec<f64>; 3] {
    let grid = f.grid();
    let grad = grid.gradient(f);
    let mut out = [vec![0.0; grid.len()], vec![0.0; grid.len()], vec![0.0; grid.len()]];
    for j in 0..grid.len() {
        let a = grad.ambient(j);
        for c in 0..3 {
            out[c][j] = a[c];
        }
    }
    out
}

/// Support function of the Klein image of a convex radial graph.
pub fn project(surface: &RadialSurface) -> Result<SupportSurface> {
    let geom = crate::hypgeom::geometry(surface)?;
    let kmin = geom.kappa_min();
    if !(kmin > 0.0) {
        return Err(Error::Projection(format!(
            "body is not convex (min principal curvature {kmin:e})"
        )));
    }
    let grid = surface.grid();
    let dim = grid.dim();
    let rho = surface.rho();
    let comps = ambient_gradient(rho);
    let jet = Jet1::new(grid, rho.values(), &comps);
    let points: Vec<[f64; 3]> = (0..grid.len())
        .map(|j| grid.direction(j).map(|c| c * rho.values()[j].tanh()))
        .collect();
    let mut s = Vec::with_capacity(grid.len());
    for j in 0..grid.len() {
        let z = grid.direction(j);
        let start = hill_climb(grid, grid.nearest_node(z), |k| dot(points[k], z));
        // Stationary points of ω ↦ tanh ρ(ω)⟨ω, z⟩.
        let field = |w: [f64; 3]| {
            let (r, g) = jet.eval(w);
            let wz = dot(w, z);
            let (t, sech2) = (r.tanh(), 1.0 / r.cosh().powi(2));
            [0, 1, 2].map(|c| sech2 * wz * g[c] + t * (z[c] - wz * w[c]))
        };
        let w = tangent_newton(dim, grid.direction(start), field).ok_or_else(|| {
            Error::Projection(format!("support point search failed at node {j}"))
        })?;
        s.push(jet.eval(w).0.tanh() * dot(w, z));
    }
    SupportSurface::new(ScalarField::new(grid.clone(), s)?)
}

/// Radial graph of the hyperbolic body whose Klein image has support function `ss`.
pub fn reconstruct(ss: &SupportSurface) -> Result<RadialSurface> {
    let grid = ss.grid();
    let dim = grid.dim();
    let sv = ss.s().values();
    let comps = ambient_gradient(ss.s());
    let jet = Jet1::new(grid, sv, &comps);
    let mut rho = Vec::with_capacity(grid.len());
    for j in 0..grid.len() {
        let w = grid.direction(j);
        let score = |k: usize| {
            let c = dot(grid.direction(k), w);
            if c > 1e-3 {
                -sv[k] / c
            } else {
                f64::NEG_INFINITY
            }
        };
        let start = hill_climb(grid, j, score);
        // Minimizers of z ↦ s(z)/⟨z, ω⟩ give the radial distance along ω.
        let field = |z: [f64; 3]| {
            let (s, g) = jet.eval(z);
            let zw = dot(z, w);
            [0, 1, 2].map(|c| g[c] * zw - s * (w[c] - zw * z[c]))
        };
        let z = tangent_newton(dim, grid.direction(start), field).ok_or_else(|| {
            Error::Projection(format!("radial reconstruction failed at node {j}"))
        })?;
        let r = jet.eval(z).0 / dot(z, w);
        if !(r > 0.0 && r < 1.0) {
            return Err(Error::OutOfModel { node: j });
        }
        rho.push(r.atanh());
    }
    RadialSurface::new(ScalarField::new(grid.clone(), rho)?)
}
