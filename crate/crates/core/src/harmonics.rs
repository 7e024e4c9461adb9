//! Real spherical-harmonic analysis and synthesis on grid nodes.
//!
//! Harmonics are orthonormal in L²(S^n): on S² `Y_lm = √2 P̄_l^m(cos θ) cos mφ`
//! (sin mφ for the negative orders), on S¹ `cos lθ / √π`, `sin lθ / √π` and
//! `1/√(2π)`. Analysis uses the grid quadrature, which is exact on S² for
//! products of degree ≤ `max_degree` harmonics.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::spheregrid::{ScalarField, SphereGrid};

/// Harmonic coefficients up to `l_max`. Index `idx(l, m)` addresses order
/// `m ∈ 0..=l` on S² and `m ∈ {0, 1}` (cos, sin) on S¹.
#[derive(Clone, Debug, PartialEq)]
pub struct HarmonicCoeffs {
    dim: usize,
    l_max: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl HarmonicCoeffs {
    pub fn zeros(dim: usize, l_max: usize) -> Self {
        let len = coeff_len(dim, l_max);
        HarmonicCoeffs {
            dim,
            l_max,
            cos: vec![0.0; len],
            sin: vec![0.0; len],
        }
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    /// Coefficient of the real harmonic of degree `l` and signed order `m`
    /// (m ≥ 0 cosine type, m < 0 sine type; on S¹ use m ∈ {-1, 0, 1}).
    pub fn get(&self, l: usize, m: i64) -> f64 {
        let (i, sine) = self.slot(l, m);
        if sine {
            self.sin[i]
        } else {
            self.cos[i]
        }
    }

    pub fn set(&mut self, l: usize, m: i64, value: f64) {
        let (i, sine) = self.slot(l, m);
        if sine {
            self.sin[i] = value;
        } else {
            self.cos[i] = value;
        }
    }

    fn slot(&self, l: usize, m: i64) -> (usize, bool) {
        assert!(l <= self.l_max, "degree {l} above l_max {}", self.l_max);
        let mu = m.unsigned_abs() as usize;
        match self.dim {
            1 => {
                assert!(mu <= 1 && (l > 0 || m == 0), "invalid order {m} on the circle");
                (l, m < 0)
            }
            _ => {
                assert!(mu <= l, "order {m} exceeds degree {l}");
                (l * (l + 1) / 2 + mu, m < 0)
            }
        }
    }

    /// L² norm of the degree-l component for each l = 0..=l_max.
    pub fn amplitudes(&self) -> Vec<f64> {
        (0..=self.l_max)
            .map(|l| {
                let range = match self.dim {
                    1 => l..l + 1,
                    _ => l * (l + 1) / 2..l * (l + 1) / 2 + l + 1,
                };
                range
                    .map(|i| self.cos[i] * self.cos[i] + self.sin[i] * self.sin[i])
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }
}

fn coeff_len(dim: usize, l_max: usize) -> usize {
    match dim {
        1 => l_max + 1,
        _ => (l_max + 1) * (l_max + 2) / 2,
    }
}

/// Precomputed Legendre tables for one grid and truncation degree.
#[derive(Debug)]
pub struct HarmonicTransform {
    dim: usize,
    l_max: usize,
    n_theta: usize,
    n_phi: usize,
    /// `plm[i * ncoef + idx(l, m)]` on ring i (S² only).
    plm: Vec<f64>,
}

impl HarmonicTransform {
    pub fn build(grid: &SphereGrid, l_max: usize) -> Self {
        let n_theta = grid.n_theta();
        let mut plm = Vec::new();
        if grid.dim() == 2 {
            let ncoef = coeff_len(2, l_max);
            plm = vec![0.0; n_theta * ncoef];
            for i in 0..n_theta {
                let x = grid.cos_theta_rings()[i];
                let s = grid.sin_theta_rings()[i];
                normalized_legendre(l_max, x, s, &mut plm[i * ncoef..(i + 1) * ncoef]);
            }
        }
        HarmonicTransform {
            dim: grid.dim(),
            l_max,
            n_theta,
            n_phi: grid.n_phi(),
            plm,
        }
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    pub fn analyze(&self, grid: &SphereGrid, f: &[f64]) -> HarmonicCoeffs {
        let mut out = HarmonicCoeffs::zeros(self.dim, self.l_max);
        let np = self.n_phi;
        match self.dim {
            1 => {
                let mut spec: Vec<Complex64> = f.iter().map(|&v| Complex64::new(v, 0.0)).collect();
                grid.fft_forward(&mut spec);
                let h = 2.0 * PI / np as f64;
                out.cos[0] = h * spec[0].re / (2.0 * PI).sqrt();
                for l in 1..=self.l_max {
                    out.cos[l] = h * spec[l].re / PI.sqrt();
                    out.sin[l] = -h * spec[l].im / PI.sqrt();
                }
            }
            _ => {
                let ncoef = coeff_len(2, self.l_max);
                let ring_w = grid.ring_weights();
                let mut spec = vec![Complex64::new(0.0, 0.0); np];
                for i in 0..self.n_theta {
                    for (k, s) in spec.iter_mut().enumerate() {
                        *s = Complex64::new(f[i * np + k], 0.0);
                    }
                    grid.fft_forward(&mut spec);
                    let p = &self.plm[i * ncoef..(i + 1) * ncoef];
                    let w = ring_w[i];
                    for m in 0..=self.l_max {
                        let norm = if m == 0 { 1.0 } else { 2f64.sqrt() };
                        let re = w * norm * spec[m].re;
                        let im = -w * norm * spec[m].im;
                        for l in m..=self.l_max {
                            let idx = l * (l + 1) / 2 + m;
                            out.cos[idx] += p[idx] * re;
                            out.sin[idx] += p[idx] * im;
                        }
                    }
                }
            }
        }
        out
    }

    pub fn synthesize(&self, grid: &SphereGrid, coeffs: &HarmonicCoeffs) -> Vec<f64> {
        let np = self.n_phi;
        let lm = coeffs.l_max.min(self.l_max);
        let mut out = vec![0.0; self.n_theta * np];
        let mut spec = vec![Complex64::new(0.0, 0.0); np];
        match self.dim {
            1 => {
                spec[0] = Complex64::new(coeffs.cos[0] / (2.0 * PI).sqrt(), 0.0);
                for l in 1..=lm {
                    let c = Complex64::new(coeffs.cos[l], -coeffs.sin[l]) / (2.0 * PI.sqrt());
                    spec[l] = c;
                    spec[np - l] = c.conj();
                }
                grid.fft_inverse(&mut spec);
                for (o, s) in out.iter_mut().zip(&spec) {
                    *o = s.re;
                }
            }
            _ => {
                let ncoef = coeff_len(2, self.l_max);
                for i in 0..self.n_theta {
                    spec.iter_mut().for_each(|s| *s = Complex64::new(0.0, 0.0));
                    let p = &self.plm[i * ncoef..(i + 1) * ncoef];
                    for m in 0..=lm {
                        let mut a = 0.0;
                        let mut b = 0.0;
                        for l in m..=lm {
                            let ci = l * (l + 1) / 2 + m;
                            a += p[ci] * coeffs.cos[ci];
                            b += p[ci] * coeffs.sin[ci];
                        }
                        if m == 0 {
                            spec[0] = Complex64::new(a, 0.0);
                        } else {
                            let c = Complex64::new(a, -b) * (2f64.sqrt() / 2.0);
                            spec[m] = c;
                            spec[np - m] = c.conj();
                        }
                    }
                    grid.fft_inverse(&mut spec);
                    for k in 0..np {
                        out[i * np + k] = spec[k].re;
                    }
                }
            }
        }
        out
    }

    /// Orthogonal projection onto harmonics of degree ≤ `l_max`.
    pub fn low_pass(&self, grid: &SphereGrid, f: &[f64]) -> Vec<f64> {
        let c = self.analyze(grid, f);
        self.synthesize(grid, &c)
    }
}

/// Fully normalized associated Legendre values (2π∫P̄² dx = 1) for l ≤ l_max.
fn normalized_legendre(l_max: usize, x: f64, s: f64, out: &mut [f64]) {
    let idx = |l: usize, m: usize| l * (l + 1) / 2 + m;
    let mut pmm = 1.0 / (4.0 * PI).sqrt();
    for m in 0..=l_max {
        if m > 0 {
            pmm *= ((2 * m + 1) as f64 / (2 * m) as f64).sqrt() * s;
        }
        out[idx(m, m)] = pmm;
        if m + 1 <= l_max {
            out[idx(m + 1, m)] = ((2 * m + 3) as f64).sqrt() * x * pmm;
        }
        for l in m + 2..=l_max {
            let lf = l as f64;
            let mf = m as f64;
            let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
            let b = (((lf - 1.0) * (lf - 1.0) - mf * mf) / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0)).sqrt();
            out[idx(l, m)] = a * (x * out[idx(l - 1, m)] - b * out[idx(l - 2, m)]);
        }
    }
}

/// Value of the orthonormal real harmonic (l, m) at a unit direction.
pub fn real_harmonic(dim: usize, l: usize, m: i64, dir: [f64; 3]) -> f64 {
    match dim {
        1 => {
            let t = dir[1].atan2(dir[0]);
            match m {
                0 if l == 0 => 1.0 / (2.0 * PI).sqrt(),
                0 | 1 => (l as f64 * t).cos() / PI.sqrt(),
                _ => (l as f64 * t).sin() / PI.sqrt(),
            }
        }
        _ => {
            let mu = m.unsigned_abs() as usize;
            assert!(mu <= l);
            let x = dir[2].clamp(-1.0, 1.0);
            let s = (1.0 - x * x).max(0.0).sqrt();
            let mut p = vec![0.0; coeff_len(2, l)];
            normalized_legendre(l, x, s, &mut p);
            let v = p[l * (l + 1) / 2 + mu];
            let phi = dir[1].atan2(dir[0]);
            if m == 0 {
                v
            } else if m > 0 {
                2f64.sqrt() * v * (mu as f64 * phi).cos()
            } else {
                2f64.sqrt() * v * (mu as f64 * phi).sin()
            }
        }
    }
}

/// Per-degree L² amplitudes of `f` for l = 0..=l_max.
pub fn harmonic_coeffs(f: &ScalarField, l_max: usize) -> Result<Vec<f64>> {
    let grid = f.grid();
    if l_max > grid.max_degree() {
        return Err(Error::Config(format!(
            "l_max {l_max} exceeds grid-supported degree {}",
            grid.max_degree()
        )));
    }
    let coeffs = grid.transform().analyze(grid, f.values());
    let mut amps = coeffs.amplitudes();
    amps.truncate(l_max + 1);
    Ok(amps)
}
