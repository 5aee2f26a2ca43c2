//! One-dimensional Schroedinger problems on [0, 1] with symmetric trigonometric potentials.
//!
//! Solutions of `-y'' + V y = lambda y` are advanced with local Taylor series.  `V` is a
//! cosine polynomial, so its Taylor coefficients at any point are available in closed form and
//! the recurrence for `y` is exact up to truncation.

use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ORDER: usize = 32;
const GL_POINTS: usize = 16;

/// Relative pole guard used by [`transfer_ratio`].
pub const POLE_GUARD: f64 = 1e-6;

/// `V(z) = c0 + sum_j c_j cos(2 pi j z)`, symmetric under `z -> 1 - z`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymmetricPotential {
    coeffs: Vec<f64>,
}

impl SymmetricPotential {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::Validation("potential needs at least the constant coefficient".into()));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::Validation(format!("non-finite potential coefficient in {coeffs:?}")));
        }
        Ok(Self { coeffs })
    }

    pub fn zero(truncation: usize) -> Self {
        Self { coeffs: vec![0.0; truncation + 1] }
    }

    pub fn constant(c0: f64, truncation: usize) -> Self {
        let mut coeffs = vec![0.0; truncation + 1];
        coeffs[0] = c0;
        Self { coeffs }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Highest cosine harmonic `J`.
    pub fn truncation(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn eval(&self, z: f64) -> f64 {
        self.coeffs[0]
            + self.coeffs[1..]
                .iter()
                .enumerate()
                .map(|(j, c)| c * (2.0 * PI * (j + 1) as f64 * z).cos())
                .sum::<f64>()
    }

    /// Cheap upper bound on `sup |V|`.
    pub fn sup_bound(&self) -> f64 {
        self.coeffs.iter().map(|c| c.abs()).sum()
    }

    /// Same potential padded with zero harmonics up to `truncation`.
    pub fn padded(&self, truncation: usize) -> Self {
        let mut coeffs = self.coeffs.clone();
        if coeffs.len() < truncation + 1 {
            coeffs.resize(truncation + 1, 0.0);
        }
        Self { coeffs }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let n = self.coeffs.len().max(other.coeffs.len());
        (0..n)
            .map(|i| {
                let a = self.coeffs.get(i).copied().unwrap_or(0.0);
                let b = other.coeffs.get(i).copied().unwrap_or(0.0);
                (a - b).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// `phi(1, lambda)` and `phi'(1, lambda)` for the solution with `phi(0) = 0`, `phi'(0) = 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransferValues {
    pub phi: f64,
    pub dphi: f64,
}

impl TransferValues {
    pub fn near_pole(&self, guard: f64) -> bool {
        self.phi.abs() < guard * (1.0 + self.dphi.abs())
    }
}

fn step_count(v: &SymmetricPotential, lambda: f64) -> usize {
    let wave = (lambda.abs() + v.sup_bound()).sqrt();
    let harm = 2.0 * PI * v.truncation() as f64;
    wave.max(harm).max(4.0).ceil() as usize
}

/// Taylor coefficients of `y` on one step, scaled so that `b[n] = a_n h^n`.
fn taylor_step(v: &SymmetricPotential, lambda: f64, z0: f64, h: f64, y: f64, dy: f64, b: &mut [f64; ORDER]) -> usize {
    let mut q = [0.0; ORDER];
    q[0] = v.eval(z0) - lambda;
    for (j, c) in v.coeffs[1..].iter().enumerate() {
        if *c == 0.0 {
            continue;
        }
        let w = 2.0 * PI * (j + 1) as f64;
        let (sn, cs) = (w * z0).sin_cos();
        let mut r = *c;
        for (i, qi) in q.iter_mut().enumerate().skip(1) {
            r *= w * h / i as f64;
            // d^i/dt^i cos(theta + w t) = w^i cos(theta + i pi / 2)
            let phase = match i % 4 {
                0 => cs,
                1 => -sn,
                2 => -cs,
                _ => sn,
            };
            *qi += r * phase;
        }
    }
    b[0] = y;
    b[1] = dy * h;
    let scale = y.abs() + (dy * h).abs();
    let h2 = h * h;
    let mut last = 1;
    let mut quiet = 0;
    for n in 0..ORDER - 2 {
        let s: f64 = (0..=n).map(|i| q[i] * b[n - i]).sum();
        b[n + 2] = h2 * s / ((n + 2) * (n + 1)) as f64;
        last = n + 2;
        if b[n + 2].abs() <= 1e-18 * scale {
            quiet += 1;
            if quiet == 3 {
                break;
            }
        } else {
            quiet = 0;
        }
    }
    for x in b.iter_mut().skip(last + 1) {
        *x = 0.0;
    }
    last
}

/// Advance `(y, y')` from `z0` to `z1`; `z1 < z0` integrates backwards.
pub fn propagate_between(v: &SymmetricPotential, lambda: f64, z0: f64, z1: f64, y: f64, dy: f64) -> (f64, f64) {
    let n = step_count(v, lambda);
    let h = (z1 - z0) / n as f64;
    let (mut y, mut dy) = (y, dy);
    let mut b = [0.0; ORDER];
    for s in 0..n {
        let z = z0 + s as f64 * h;
        let last = taylor_step(v, lambda, z, h, y, dy, &mut b);
        y = b[..=last].iter().sum();
        dy = b[1..=last].iter().enumerate().map(|(i, x)| (i + 1) as f64 * x).sum::<f64>() / h;
    }
    (y, dy)
}

/// `phi(1, lambda)` and `phi'(1, lambda)`.
pub fn propagate(v: &SymmetricPotential, lambda: f64) -> TransferValues {
    let (phi, dphi) = propagate_between(v, lambda, 0.0, 1.0, 0.0, 1.0);
    TransferValues { phi, dphi }
}

/// `phi'(1, lambda) / phi(1, lambda)`, refusing values next to a Dirichlet eigenvalue.
pub fn transfer_ratio(v: &SymmetricPotential, lambda: f64) -> Result<f64> {
    let t = propagate(v, lambda);
    if t.near_pole(POLE_GUARD) {
        return Err(Error::PoleGuard { lambda, what: format!("phi(1) = {:.3e}", t.phi) });
    }
    Ok(t.dphi / t.phi)
}

fn gauss_legendre() -> &'static (Vec<f64>, Vec<f64>) {
    static GL: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    GL.get_or_init(|| {
        let n = GL_POINTS;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            // map [-1, 1] to [0, 1]
            nodes[i] = 0.5 * (1.0 - x);
            weights[i] = 1.0 / ((1.0 - x * x) * dp * dp);
        }
        (nodes, weights)
    })
}

/// `[int y^2, int cos(2 pi j z) y^2 for j = 1..=J]` for the solution with `y(0)=0, y'(0)=1`.
fn profile_moments(v: &SymmetricPotential, lambda: f64) -> Vec<f64> {
    let jmax = v.truncation();
    let n = step_count(v, lambda);
    let h = 1.0 / n as f64;
    let (nodes, weights) = gauss_legendre();
    let mut out = vec![0.0; jmax + 1];
    let (mut y, mut dy) = (0.0, 1.0);
    let mut b = [0.0; ORDER];
    for s in 0..n {
        let z0 = s as f64 * h;
        let last = taylor_step(v, lambda, z0, h, y, dy, &mut b);
        for (t, w) in nodes.iter().zip(weights) {
            let yt = b[..=last].iter().rev().fold(0.0, |acc, c| acc * t + c);
            let y2 = yt * yt * w * h;
            out[0] += y2;
            for (j, o) in out.iter_mut().enumerate().skip(1) {
                *o += y2 * (2.0 * PI * j as f64 * (z0 + t * h)).cos();
            }
        }
        y = b[..=last].iter().sum();
        dy = b[1..=last].iter().enumerate().map(|(i, x)| (i + 1) as f64 * x).sum::<f64>() / h;
    }
    out
}

/// Gradient of a Dirichlet eigenvalue with respect to `(c0, .., cJ)`.
pub fn eigen_gradient(v: &SymmetricPotential, eigenvalue: f64) -> Vec<f64> {
    let m = profile_moments(v, eigenvalue);
    let mut g = vec![1.0; m.len()];
    for j in 1..m.len() {
        g[j] = m[j] / m[0];
    }
    g
}

fn bisect(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, mut fa: f64, tol: f64) -> f64 {
    while b - a > tol * a.abs().max(1.0) {
        let c = 0.5 * (a + b);
        let fc = f(c);
        if fc == 0.0 {
            return c;
        }
        if (fc > 0.0) == (fa > 0.0) {
            a = c;
            fa = fc;
        } else {
            b = c;
        }
    }
    0.5 * (a + b)
}

/// The `count` smallest Dirichlet eigenvalues, by scanning `phi(1, .)` in unit steps and bisecting.
pub fn dirichlet_spectrum(v: &SymmetricPotential, count: usize) -> Result<Vec<f64>> {
    let lo = -v.sup_bound() - 1.0;
    let hi = ((count + 4) as f64 * PI).powi(2) + 2.0 * v.sup_bound() + 50.0;
    let phi = |l: f64| propagate(v, l).phi;
    let mut out = Vec::with_capacity(count);
    let mut a = lo;
    let mut fa = phi(a);
    while out.len() < count && a < hi {
        let b = a + 1.0;
        let fb = phi(b);
        if fb == 0.0 {
            out.push(b);
            a = b + 1e-9;
            fa = phi(a);
            continue;
        }
        if (fa > 0.0) != (fb > 0.0) {
            out.push(bisect(phi, a, b, fa, 1e-14));
        }
        a = b;
        fa = fb;
    }
    if out.len() < count {
        return Err(Error::SpectrumIncomplete { found: out.len(), wanted: count, lo, hi });
    }
    Ok(out)
}

/// Result of fitting a potential to a finite Dirichlet spectrum.
#[derive(Clone, Debug)]
pub struct BorgFit {
    pub potential: SymmetricPotential,
    /// `max_k |lambda_k(fit) - target_k|`.
    pub residual: f64,
    pub iterations: usize,
}

/// Newton solve for the `J + 1` coefficients whose first `J + 1` Dirichlet eigenvalues are `targets`.
pub fn borg_reconstruct(targets: &[f64], truncation: usize) -> Result<BorgFit> {
    let k = truncation + 1;
    if targets.len() != k {
        return Err(Error::Validation(format!("truncation {truncation} needs {k} eigenvalues, got {}", targets.len())));
    }
    if targets.iter().any(|x| !x.is_finite()) || targets.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Validation(format!("eigenvalues must be finite and strictly increasing: {targets:?}")));
    }
    let shift = targets.iter().enumerate().map(|(i, t)| t - ((i + 1) as f64 * PI).powi(2)).sum::<f64>() / k as f64;
    let mut c = vec![0.0; k];
    c[0] = shift;
    let scale = targets.iter().fold(1.0f64, |m, t| m.max(t.abs()));
    let tol = 1e-13 * scale;

    let residual_of = |c: &[f64]| -> Result<(SymmetricPotential, Vec<f64>, Vec<f64>)> {
        let v = SymmetricPotential::new(c.to_vec())?;
        let eig = dirichlet_spectrum(&v, k)?;
        let r = eig.iter().zip(targets).map(|(a, b)| a - b).collect();
        Ok((v, eig, r))
    };
    let norm = |r: &[f64]| r.iter().fold(0.0f64, |m, x| m.max(x.abs()));

    let (mut v, mut eig, mut r) = residual_of(&c)?;
    for it in 0..60 {
        if norm(&r) <= tol {
            return Ok(BorgFit { potential: v, residual: norm(&r), iterations: it });
        }
        let jac = DMatrix::from_fn(k, k, |_, _| 0.0);
        let mut jac = jac;
        for (row, l) in eig.iter().enumerate() {
            for (col, g) in eigen_gradient(&v, *l).into_iter().enumerate() {
                jac[(row, col)] = g;
            }
        }
        let rhs = -DVector::from_column_slice(&r);
        let delta = jac
            .full_piv_lu()
            .solve(&rhs)
            .ok_or_else(|| Error::NoConvergence("singular spectral Jacobian".into()))?;
        let mut t = 1.0;
        let current = norm(&r);
        loop {
            let trial: Vec<f64> = c.iter().zip(delta.iter()).map(|(a, d)| a + t * d).collect();
            match residual_of(&trial) {
                Ok((tv, te, tr)) if norm(&tr) < current => {
                    c = trial;
                    v = tv;
                    eig = te;
                    r = tr;
                    break;
                }
                _ => {}
            }
            t *= 0.5;
            if t < 1e-6 {
                // Newton has stalled; accept if already at round-off level
                if current <= 1e-9 * scale {
                    return Ok(BorgFit { potential: v, residual: current, iterations: it });
                }
                return Err(Error::NoConvergence(format!("line search failed, residual {current:.3e}")));
            }
        }
    }
    Err(Error::NoConvergence(format!("60 Newton steps, residual {:.3e}", norm(&r))))
}
