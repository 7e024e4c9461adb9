//! Discrete calculus on the round sphere S^n for n = 1, 2.
//!
//! The circle uses a uniform periodic grid with FFT differentiation. The
//! 2-sphere uses a Gauss–Legendre (in cos θ) × uniform-azimuth product grid:
//! azimuthal derivatives are exact trigonometric derivatives, colatitude
//! derivatives are 5-point finite differences along the great circle through
//! both poles, so stencils near a pole read values from the antipodal
//! meridian. Fields store covariant components in (θ, φ) coordinates;
//! `frame` accessors return components in the orthonormal frame
//! (∂_θ, ∂_φ / sin θ), which is what the geometry code works with.

use std::f64::consts::PI;
use std::fmt;
use std::sync::{Arc, OnceLock};

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harmonics::HarmonicTransform;

/// Minimum node count per dimension.
pub const MIN_RESOLUTION: usize = 8;

/// Node counts of a grid: `Circle(n)` on S¹, `Sphere { n_theta, n_phi }` on S².
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Resolution {
    Circle(usize),
    Sphere { n_theta: usize, n_phi: usize },
}

impl Resolution {
    pub fn dim(&self) -> usize {
        match self {
            Resolution::Circle(_) => 1,
            Resolution::Sphere { .. } => 2,
        }
    }

    /// Default resolution per dimension: 256 on the circle, 64×128 on S².
    pub fn default_for(dim: usize) -> Result<Self> {
        match dim {
            1 => Ok(Resolution::Circle(256)),
            2 => Ok(Resolution::Sphere {
                n_theta: 64,
                n_phi: 128,
            }),
            _ => Err(Error::Config(format!("unsupported sphere dimension {dim}"))),
        }
    }

    /// Parses `"A×B"`, `"AxB"` (for S²) or `"A"` (for S¹).
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        let parts: Vec<&str> = text.split(|c| c == 'x' || c == 'X' || c == '×').collect();
        let num = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad resolution `{text}`")))
        };
        match parts.as_slice() {
            [n] => Ok(Resolution::Circle(num(n)?)),
            [a, b] => Ok(Resolution::Sphere {
                n_theta: num(a)?,
                n_phi: num(b)?,
            }),
            _ => Err(Error::Config(format!("bad resolution `{text}`"))),
        }
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Resolution::Circle(n) => write!(f, "{n}"),
            Resolution::Sphere { n_theta, n_phi } => write!(f, "{n_theta}x{n_phi}"),
        }
    }
}

/// Angular coordinates of a node. On S¹ `theta` is the polar angle and `phi` is 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Node {
    pub theta: f64,
    pub phi: f64,
}

/// Discretized round sphere with quadrature weights and derivative stencils.
pub struct SphereGrid {
    dim: usize,
    n_theta: usize,
    n_phi: usize,
    /// Ring colatitudes (S² only).
    theta: Vec<f64>,
    sin_theta: Vec<f64>,
    cos_theta: Vec<f64>,
    /// Gauss–Legendre weights per ring (S² only).
    ring_weights: Vec<f64>,
    /// Azimuths on S², polar angles on S¹.
    phi: Vec<f64>,
    weights: Vec<f64>,
    /// Per-ring 5-point weights for d/dθ and d²/dθ².
    d1: Vec<[f64; 5]>,
    d2: Vec<[f64; 5]>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    transform: OnceLock<HarmonicTransform>,
}

impl fmt::Debug for SphereGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SphereGrid")
            .field("dim", &self.dim)
            .field("resolution", &self.resolution())
            .finish()
    }
}

/// Builds a grid on S^dim with the given node counts.
pub fn make_grid(dim: usize, resolution: Resolution) -> Result<Arc<SphereGrid>> {
    if resolution.dim() != dim {
        return Err(Error::Config(format!(
            "resolution {resolution} does not describe S^{dim}"
        )));
    }
    match resolution {
        Resolution::Circle(n) => SphereGrid::circle(n),
        Resolution::Sphere { n_theta, n_phi } => SphereGrid::sphere(n_theta, n_phi),
    }
}

impl SphereGrid {
    /// Uniform periodic grid on S¹.
    pub fn circle(n: usize) -> Result<Arc<Self>> {
        if n < MIN_RESOLUTION {
            return Err(Error::Config(format!(
                "circle resolution {n} below minimum {MIN_RESOLUTION}"
            )));
        }
        let h = 2.0 * PI / n as f64;
        let phi: Vec<f64> = (0..n).map(|k| k as f64 * h).collect();
        let mut planner = FftPlanner::new();
        Ok(Arc::new(SphereGrid {
            dim: 1,
            n_theta: 1,
            n_phi: n,
            theta: Vec::new(),
            sin_theta: Vec::new(),
            cos_theta: Vec::new(),
            ring_weights: Vec::new(),
            phi,
            weights: vec![h; n],
            d1: Vec::new(),
            d2: Vec::new(),
            fft: planner.plan_fft_forward(n),
            ifft: planner.plan_fft_inverse(n),
            transform: OnceLock::new(),
        }))
    }

    /// Gauss–Legendre × uniform-azimuth grid on S².
    pub fn sphere(n_theta: usize, n_phi: usize) -> Result<Arc<Self>> {
        if n_theta < MIN_RESOLUTION || n_phi < MIN_RESOLUTION {
            return Err(Error::Config(format!(
                "sphere resolution {n_theta}x{n_phi} below minimum {MIN_RESOLUTION}"
            )));
        }
        if n_phi % 2 != 0 {
            return Err(Error::Config(format!(
                "azimuth count {n_phi} must be even for pole continuation"
            )));
        }
        let (x, w) = gauss_legendre(n_theta);
        let theta: Vec<f64> = x.iter().map(|&x| x.acos()).collect();
        let sin_theta: Vec<f64> = theta.iter().map(|t| t.sin()).collect();
        let cos_theta = x;
        let dphi = 2.0 * PI / n_phi as f64;
        let phi: Vec<f64> = (0..n_phi).map(|k| k as f64 * dphi).collect();
        let mut weights = Vec::with_capacity(n_theta * n_phi);
        for wi in &w {
            weights.extend(std::iter::repeat(wi * dphi).take(n_phi));
        }

        // Positions along the great circle through both poles: rings i - 2 ..= i + 2,
        // continued past θ = 0 to -θ_j and past θ = π to 2π - θ_j.
        let mut d1 = Vec::with_capacity(n_theta);
        let mut d2 = Vec::with_capacity(n_theta);
        for i in 0..n_theta {
            let xs: Vec<f64> = (-2..=2)
                .map(|o| extended_position(&theta, i as isize + o))
                .collect();
            let c = fornberg(theta[i], &xs, 2);
            let mut a = [0.0; 5];
            let mut b = [0.0; 5];
            a.copy_from_slice(&c[1]);
            b.copy_from_slice(&c[2]);
            // Make constants differentiate to exactly zero.
            a[2] = -(a[0] + a[1] + a[3] + a[4]);
            b[2] = -(b[0] + b[1] + b[3] + b[4]);
            d1.push(a);
            d2.push(b);
        }

        let mut planner = FftPlanner::new();
        Ok(Arc::new(SphereGrid {
            dim: 2,
            n_theta,
            n_phi,
            theta,
            sin_theta,
            cos_theta,
            ring_weights: w.iter().map(|wi| wi * dphi).collect(),
            phi,
            weights,
            d1,
            d2,
            fft: planner.plan_fft_forward(n_phi),
            ifft: planner.plan_fft_inverse(n_phi),
            transform: OnceLock::new(),
        }))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.n_theta * self.n_phi
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn resolution(&self) -> Resolution {
        match self.dim {
            1 => Resolution::Circle(self.n_phi),
            _ => Resolution::Sphere {
                n_theta: self.n_theta,
                n_phi: self.n_phi,
            },
        }
    }

    pub fn n_theta(&self) -> usize {
        self.n_theta
    }

    pub fn n_phi(&self) -> usize {
        self.n_phi
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// |S^n|.
    pub fn area(&self) -> f64 {
        if self.dim == 1 {
            2.0 * PI
        } else {
            4.0 * PI
        }
    }

    pub fn node(&self, j: usize) -> Node {
        match self.dim {
            1 => Node {
                theta: self.phi[j],
                phi: 0.0,
            },
            _ => Node {
                theta: self.theta[j / self.n_phi],
                phi: self.phi[j % self.n_phi],
            },
        }
    }

    /// Unit vector of node `j` in R^{n+1} (padded to three components).
    pub fn direction(&self, j: usize) -> [f64; 3] {
        match self.dim {
            1 => {
                let t = self.phi[j];
                [t.cos(), t.sin(), 0.0]
            }
            _ => {
                let i = j / self.n_phi;
                let p = self.phi[j % self.n_phi];
                let s = self.sin_theta[i];
                [s * p.cos(), s * p.sin(), self.cos_theta[i]]
            }
        }
    }

    /// sin θ at node `j` (1 on the circle).
    pub fn sin_theta(&self, j: usize) -> f64 {
        match self.dim {
            1 => 1.0,
            _ => self.sin_theta[j / self.n_phi],
        }
    }

    pub fn cos_theta_rings(&self) -> &[f64] {
        &self.cos_theta
    }

    pub fn sin_theta_rings(&self) -> &[f64] {
        &self.sin_theta
    }

    pub(crate) fn ring_weights(&self) -> &[f64] {
        &self.ring_weights
    }

    /// Round metric σ_ij at node `j` in (θ, φ) coordinates as (θθ, θφ, φφ).
    pub fn metric(&self, j: usize) -> [f64; 3] {
        match self.dim {
            1 => [1.0, 0.0, 0.0],
            _ => {
                let s = self.sin_theta(j);
                [1.0, 0.0, s * s]
            }
        }
    }

    /// Nonzero Christoffel symbols (Γ^θ_φφ, Γ^φ_θφ) = (−sin θ cos θ, cot θ).
    pub fn christoffel(&self, j: usize) -> [f64; 2] {
        match self.dim {
            1 => [0.0, 0.0],
            _ => {
                let i = j / self.n_phi;
                let (s, c) = (self.sin_theta[i], self.cos_theta[i]);
                [-s * c, c / s]
            }
        }
    }

    /// Largest harmonic degree the grid resolves.
    pub fn max_degree(&self) -> usize {
        match self.dim {
            1 => self.n_phi / 2 - 1,
            _ => (self.n_theta - 1).min(self.n_phi / 2 - 1),
        }
    }

    /// Harmonic transform at the grid's maximum degree (built on first use).
    pub fn transform(&self) -> &HarmonicTransform {
        self.transform
            .get_or_init(|| HarmonicTransform::build(self, self.max_degree()))
    }

    pub(crate) fn fft_forward(&self, buf: &mut [Complex64]) {
        self.fft.process(buf);
    }

    pub(crate) fn fft_inverse(&self, buf: &mut [Complex64]) {
        self.ifft.process(buf);
    }

    /// Quadrature Σ f·w.
    pub fn integrate(&self, f: &ScalarField) -> f64 {
        self.integrate_values(&f.values)
    }

    pub fn integrate_values(&self, values: &[f64]) -> f64 {
        values.iter().zip(&self.weights).map(|(v, w)| v * w).sum()
    }

    pub fn gradient(self: &Arc<Self>, f: &ScalarField) -> VectorField {
        self.jet(f).0
    }

    pub fn hessian(self: &Arc<Self>, f: &ScalarField) -> SymTensorField {
        self.jet(f).1
    }

    /// Δf = σ^{ij} ∇_i∇_j f, contracted from the same stencil as `hessian`.
    pub fn laplacian(self: &Arc<Self>, f: &ScalarField) -> ScalarField {
        let hess = self.hessian(f);
        let values = (0..self.len()).map(|j| hess.trace(j)).collect();
        ScalarField {
            grid: self.clone(),
            values,
        }
    }

    /// Gradient and covariant Hessian of `f` in one pass.
    pub fn jet(self: &Arc<Self>, f: &ScalarField) -> (VectorField, SymTensorField) {
        debug_assert!(Arc::ptr_eq(self, &f.grid) || f.values.len() == self.len());
        let values = &f.values;
        let n = self.len();
        let mut grad = vec![[0.0; 2]; n];
        let mut hess = vec![[0.0; 3]; n];
        match self.dim {
            1 => {
                let (d, dd) = self.periodic_derivatives(values);
                for j in 0..n {
                    grad[j][0] = d[j];
                    hess[j][0] = dd[j];
                }
            }
            _ => {
                let np = self.n_phi;
                let nt = self.n_theta;
                let mut f_p = vec![0.0; n];
                let mut f_pp = vec![0.0; n];
                for i in 0..nt {
                    let row = &values[i * np..(i + 1) * np];
                    let (d, dd) = self.periodic_derivatives(row);
                    f_p[i * np..(i + 1) * np].copy_from_slice(&d);
                    f_pp[i * np..(i + 1) * np].copy_from_slice(&dd);
                }
                let half = np / 2;
                for i in 0..nt {
                    let (s, c) = (self.sin_theta[i], self.cos_theta[i]);
                    for k in 0..np {
                        let mut ft = 0.0;
                        let mut ftt = 0.0;
                        let mut ftp = 0.0;
                        for (o, (w1, w2)) in self.d1[i].iter().zip(&self.d2[i]).enumerate() {
                            let e = i as isize + o as isize - 2;
                            let idx = if e < 0 {
                                ((-e - 1) as usize) * np + (k + half) % np
                            } else if e >= nt as isize {
                                ((2 * nt as isize - 1 - e) as usize) * np + (k + half) % np
                            } else {
                                e as usize * np + k
                            };
                            ft += w1 * values[idx];
                            ftt += w2 * values[idx];
                            ftp += w1 * f_p[idx];
                        }
                        let j = i * np + k;
                        grad[j] = [ft, f_p[j]];
                        hess[j] = [ftt, ftp - c / s * f_p[j], f_pp[j] + s * c * ft];
                    }
                }
            }
        }
        (
            VectorField {
                grid: self.clone(),
                comps: grad,
            },
            SymTensorField {
                grid: self.clone(),
                comps: hess,
            },
        )
    }

    /// First and second derivatives of a periodic uniformly sampled row.
    fn periodic_derivatives(&self, row: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let m = row.len();
        let mut spec: Vec<Complex64> = row.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fft.process(&mut spec);
        let scale = 1.0 / m as f64;
        let mut d1 = vec![Complex64::new(0.0, 0.0); m];
        let mut d2 = vec![Complex64::new(0.0, 0.0); m];
        for (q, s) in spec.iter().enumerate() {
            let k = signed_wavenumber(q, m);
            let kf = k as f64;
            if 2 * q != m {
                d1[q] = s * Complex64::new(0.0, kf) * scale;
            }
            d2[q] = s * (-kf * kf * scale);
        }
        self.ifft.process(&mut d1);
        self.ifft.process(&mut d2);
        (
            d1.iter().map(|c| c.re).collect(),
            d2.iter().map(|c| c.re).collect(),
        )
    }

    /// Interpolant for off-grid evaluation of `f`: 8×8 Lagrange on S² (with pole
    /// continuation), trigonometric on S¹.
    pub fn interpolant<'a>(&'a self, f: &'a [f64]) -> Interpolant<'a> {
        match self.dim {
            1 => {
                let m = f.len();
                let mut spec: Vec<Complex64> = f.iter().map(|&v| Complex64::new(v, 0.0)).collect();
                self.fft.process(&mut spec);
                for s in spec.iter_mut() {
                    *s /= m as f64;
                }
                Interpolant::Circle { spec }
            }
            _ => Interpolant::Sphere { grid: self, values: f },
        }
    }

    /// Index of the node closest in angle to the unit direction `dir`.
    pub fn nearest_node(&self, dir: [f64; 3]) -> usize {
        let mut phi = dir[1].atan2(dir[0]);
        if phi < 0.0 {
            phi += 2.0 * PI;
        }
        let np = self.n_phi;
        let k = (phi / (2.0 * PI / np as f64)).round() as usize % np;
        match self.dim {
            1 => k,
            _ => {
                let theta = dir[2].clamp(-1.0, 1.0).acos();
                let pos = self.theta.partition_point(|&t| t < theta);
                let i = if pos == 0 {
                    0
                } else if pos == self.n_theta || theta - self.theta[pos - 1] < self.theta[pos] - theta {
                    pos - 1
                } else {
                    pos
                };
                i * np + k
            }
        }
    }

    /// Nodes adjacent to `j` (including diagonals on S²; across the poles via the antipodal meridian).
    pub fn neighbors(&self, j: usize) -> Vec<usize> {
        let np = self.n_phi;
        match self.dim {
            1 => vec![(j + np - 1) % np, (j + 1) % np],
            _ => {
                let i = (j / np) as isize;
                let k = j % np;
                let mut out = Vec::with_capacity(8);
                for di in -1..=1 {
                    for dk in [np - 1, 0, 1] {
                        if di == 0 && dk == 0 {
                            continue;
                        }
                        out.push(self.extended_index(i + di, (k + dk) % np));
                    }
                }
                out
            }
        }
    }

    fn ring_stencil(&self, theta: f64) -> ([isize; STENCIL], [f64; STENCIL]) {
        // Largest extended ring e with position <= theta, e in -1 ..= n_theta - 1.
        let nt = self.n_theta as isize;
        let pos = self.theta.partition_point(|&t| t <= theta) as isize;
        let e0 = (pos - 1).min(nt - 1);
        let half = STENCIL as isize / 2;
        let es: [isize; STENCIL] = std::array::from_fn(|a| e0 - half + 1 + a as isize);
        let xs = es.map(|e| extended_position(&self.theta, e));
        (es, lagrange(&xs, theta))
    }

    fn extended_index(&self, e: isize, k: usize) -> usize {
        let np = self.n_phi;
        let nt = self.n_theta as isize;
        if e < 0 {
            ((-e - 1) as usize) * np + (k + np / 2) % np
        } else if e >= nt {
            ((2 * nt - 1 - e) as usize) * np + (k + np / 2) % np
        } else {
            e as usize * np + k
        }
    }
}

/// Off-grid evaluator returned by [`SphereGrid::interpolant`].
pub enum Interpolant<'a> {
    Circle { spec: Vec<Complex64> },
    Sphere { grid: &'a SphereGrid, values: &'a [f64] },
}

impl Interpolant<'_> {
    /// Value at the unit direction `dir` (third component ignored on S¹).
    pub fn eval(&self, dir: [f64; 3]) -> f64 {
        match self {
            Interpolant::Circle { spec } => {
                let t = dir[1].atan2(dir[0]);
                let m = spec.len();
                let mut acc = spec[0].re;
                for (q, s) in spec.iter().enumerate().skip(1) {
                    let k = signed_wavenumber(q, m);
                    if k < 0 {
                        continue;
                    }
                    let e = Complex64::from_polar(1.0, k as f64 * t);
                    let term = (s * e).re;
                    acc += if 2 * q == m { term } else { 2.0 * term };
                }
                acc
            }
            Interpolant::Sphere { grid, values } => {
                let z = dir[2].clamp(-1.0, 1.0);
                let theta = z.acos();
                let mut phi = dir[1].atan2(dir[0]);
                if phi < 0.0 {
                    phi += 2.0 * PI;
                }
                let (es, wt) = grid.ring_stencil(theta);
                let np = grid.n_phi;
                let dphi = 2.0 * PI / np as f64;
                let u = phi / dphi;
                let k0 = u.floor();
                let frac = u - k0;
                let k0 = k0 as isize;
                let half = STENCIL as isize / 2;
                let offsets: [f64; STENCIL] = std::array::from_fn(|b| (b as isize - half + 1) as f64);
                let wp = lagrange(&offsets, frac);
                let mut acc = 0.0;
                for (a, &e) in es.iter().enumerate() {
                    let mut row = 0.0;
                    for (b, w) in wp.iter().enumerate() {
                        let k = (k0 - half + 1 + b as isize).rem_euclid(np as isize) as usize;
                        row += w * values[grid.extended_index(e, k)];
                    }
                    acc += wt[a] * row;
                }
                acc
            }
        }
    }
}

fn signed_wavenumber(q: usize, m: usize) -> isize {
    if q <= m / 2 {
        q as isize
    } else {
        q as isize - m as isize
    }
}

fn extended_position(theta: &[f64], e: isize) -> f64 {
    let nt = theta.len() as isize;
    if e < 0 {
        -theta[(-e - 1) as usize]
    } else if e >= nt {
        2.0 * PI - theta[(2 * nt - 1 - e) as usize]
    } else {
        theta[e as usize]
    }
}

/// Points per direction of the off-grid interpolation stencil on S².
const STENCIL: usize = 8;

fn lagrange<const N: usize>(xs: &[f64; N], x: f64) -> [f64; N] {
    let mut w = [1.0; N];
    for a in 0..N {
        for b in 0..N {
            if a != b {
                w[a] *= (x - xs[b]) / (xs[a] - xs[b]);
            }
        }
    }
    w
}

/// Finite-difference weights at `x0` on nodes `xs` for derivative orders 0..=m.
pub(crate) fn fornberg(x0: f64, xs: &[f64], m: usize) -> Vec<Vec<f64>> {
    let n = xs.len();
    let mut c = vec![vec![0.0; n]; m + 1];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// Gauss–Legendre nodes (descending, so θ ascends) and weights on [-1, 1].
pub(crate) fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        if d != 0.0 {
            dp = d;
        }
        x[i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// A real function sampled at the nodes of a grid.
#[derive(Clone, Debug)]
pub struct ScalarField {
    grid: Arc<SphereGrid>,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Arc<SphereGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Config(format!(
                "field has {} values, grid has {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Config(format!("non-finite field value at node {j}")));
        }
        Ok(ScalarField { grid, values })
    }

    pub(crate) fn from_values_unchecked(grid: Arc<SphereGrid>, values: Vec<f64>) -> Self {
        ScalarField { grid, values }
    }

    pub fn constant(grid: Arc<SphereGrid>, c: f64) -> Self {
        let values = vec![c; grid.len()];
        ScalarField { grid, values }
    }

    /// Samples `f(node, direction)` at every node.
    pub fn from_fn(grid: Arc<SphereGrid>, mut f: impl FnMut(Node, [f64; 3]) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|j| f(grid.node(j), grid.direction(j)))
            .collect();
        ScalarField { grid, values }
    }

    pub fn grid(&self) -> &Arc<SphereGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        ScalarField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Self {
        ScalarField {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn integrate(&self) -> f64 {
        self.grid.integrate(self)
    }

    /// CSV with a header naming the field: `theta,phi,<name>` on S², `theta,<name>` on S¹.
    pub fn to_csv(&self, name: &str) -> String {
        let mut out = String::new();
        if self.grid.dim == 1 {
            out.push_str(&format!("theta,{name}\n"));
        } else {
            out.push_str(&format!("theta,phi,{name}\n"));
        }
        for (j, v) in self.values.iter().enumerate() {
            let node = self.grid.node(j);
            if self.grid.dim == 1 {
                out.push_str(&format!("{:.16e},{:.16e}\n", node.theta, v));
            } else {
                out.push_str(&format!("{:.16e},{:.16e},{:.16e}\n", node.theta, node.phi, v));
            }
        }
        out
    }

    /// Reads a field written by [`ScalarField::to_csv`]; returns the field name too.
    pub fn from_csv(grid: Arc<SphereGrid>, text: &str) -> Result<(String, Self)> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty CSV".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        let expected = grid.dim + 1;
        if cols.len() != expected || cols[0] != "theta" || (grid.dim == 2 && cols[1] != "phi") {
            return Err(Error::Parse(format!("unexpected header `{header}`")));
        }
        let name = cols[expected - 1].to_string();
        let mut values = Vec::with_capacity(grid.len());
        for (line_no, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let nums: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("line {}: {e}", line_no + 2)))?;
            if nums.len() != expected {
                return Err(Error::Parse(format!("line {}: wrong column count", line_no + 2)));
            }
            let j = values.len();
            if j >= grid.len() {
                return Err(Error::Parse("more rows than grid nodes".into()));
            }
            let node = grid.node(j);
            let coord_ok = (nums[0] - node.theta).abs() < 1e-12
                && (grid.dim == 1 || (nums[1] - node.phi).abs() < 1e-12);
            if !coord_ok {
                return Err(Error::Parse(format!(
                    "line {}: coordinates do not match grid node {j}",
                    line_no + 2
                )));
            }
            values.push(nums[expected - 1]);
        }
        let field = ScalarField::new(grid, values).map_err(|e| Error::Parse(e.to_string()))?;
        Ok((name, field))
    }
}

/// Covariant vector components per node, (θ, φ) on S² and (θ, unused) on S¹.
#[derive(Clone, Debug)]
pub struct VectorField {
    grid: Arc<SphereGrid>,
    comps: Vec<[f64; 2]>,
}

impl VectorField {
    pub fn grid(&self) -> &Arc<SphereGrid> {
        &self.grid
    }

    /// Cartesian components in R^{n+1} (padded to three) of the vector at node `j`.
    pub fn ambient(&self, j: usize) -> [f64; 3] {
        let [a, b] = self.frame(j);
        let node = self.grid.node(j);
        match self.grid.dim {
            1 => {
                let (s, c) = node.theta.sin_cos();
                [-a * s, a * c, 0.0]
            }
            _ => {
                let (st, ct) = node.theta.sin_cos();
                let (sp, cp) = node.phi.sin_cos();
                [a * ct * cp - b * sp, a * ct * sp + b * cp, -a * st]
            }
        }
    }

    pub fn covariant(&self, j: usize) -> [f64; 2] {
        self.comps[j]
    }

    /// Components in the orthonormal frame.
    pub fn frame(&self, j: usize) -> [f64; 2] {
        let [a, b] = self.comps[j];
        match self.grid.dim {
            1 => [a, 0.0],
            _ => [a, b / self.grid.sin_theta(j)],
        }
    }

    /// σ^{ij} v_i v_j.
    pub fn norm_sq(&self, j: usize) -> f64 {
        let [a, b] = self.frame(j);
        a * a + b * b
    }
}

/// Symmetric covariant 2-tensor stored as (θθ, θφ, φφ); on S¹ only the first slot is used.
#[derive(Clone, Debug)]
pub struct SymTensorField {
    grid: Arc<SphereGrid>,
    comps: Vec<[f64; 3]>,
}

impl SymTensorField {
    /// Builds a field from orthonormal-frame components (θθ, θφ, φφ).
    pub fn from_frame(grid: Arc<SphereGrid>, frame: Vec<[f64; 3]>) -> Self {
        let comps = frame
            .iter()
            .enumerate()
            .map(|(j, &[a, b, c])| match grid.dim {
                1 => [a, 0.0, 0.0],
                _ => {
                    let s = grid.sin_theta(j);
                    [a, b * s, c * s * s]
                }
            })
            .collect();
        SymTensorField { grid, comps }
    }

    pub fn grid(&self) -> &Arc<SphereGrid> {
        &self.grid
    }

    pub fn covariant(&self, j: usize) -> [f64; 3] {
        self.comps[j]
    }

    /// Components in the orthonormal frame.
    pub fn frame(&self, j: usize) -> [f64; 3] {
        let [a, b, c] = self.comps[j];
        match self.grid.dim {
            1 => [a, 0.0, 0.0],
            _ => {
                let s = self.grid.sin_theta(j);
                [a, b / s, c / (s * s)]
            }
        }
    }

    /// σ^{ij} T_ij.
    pub fn trace(&self, j: usize) -> f64 {
        let [a, _, c] = self.frame(j);
        match self.grid.dim {
            1 => a,
            _ => a + c,
        }
    }
}
