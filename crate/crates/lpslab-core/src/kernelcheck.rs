//! Numerical checks on the convolution kernels behind the square functions:
//! size and gradient bound profiles of Calderon-Zygmund type, the short-time
//! split of the torus kernel into a Euclidean main term plus residual, the
//! two-time projection kernel, and dyadic BMO norms.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grid::{b_norm, pairwise_sum, DomainKind, GridFunction};
use crate::semigroup::{
    poisson_kernel_euclid_dt, poisson_kernel_euclid_dtt, poisson_kernel_euclid_dxi, TimeGrid,
};
use crate::{LpsError, Result};

// ---------------------------------------------------------------------------
// kernels acting on time fibers

/// Families of convolution kernels whose values are operators on a
/// discretized time fiber. All built-ins are one-dimensional and diagonal in
/// the fiber; the profile machinery does not assume either.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    /// k(x, y) = 1/(x - y), scalar fiber.
    Hilbert,
    /// k identically zero, scalar fiber.
    Zero,
    /// phi(t) -> t dP_t/dt (x - y) phi(t), diagonal on the fiber grid.
    PoissonFiberTime,
    /// phi(t) -> t dP_t/dx (x - y) phi(t), diagonal on the fiber grid.
    PoissonFiberSpace,
}

#[derive(Clone, Debug)]
pub struct OperatorKernel {
    pub kind: KernelKind,
    pub n: usize,
    pub tgrid: TimeGrid,
    /// Action on constant inputs, where the convolution itself diverges and
    /// the operator is pinned by hand. None when no such pinning is used.
    pub constant_action: Option<f64>,
}

/// Fiber grid commensurate with doubling: 13 nodes per octave over
/// [2^-10, 2^16], so scaling a kernel argument by 2 shifts the diagonal by
/// exactly 13 slots.
pub fn default_fiber_grid() -> TimeGrid {
    TimeGrid::new(2f64.powi(-10), 65536.0, 339).unwrap()
}

impl OperatorKernel {
    pub fn hilbert() -> Self {
        OperatorKernel {
            kind: KernelKind::Hilbert,
            n: 1,
            tgrid: default_fiber_grid(),
            constant_action: Some(0.0),
        }
    }

    pub fn zero() -> Self {
        OperatorKernel {
            kind: KernelKind::Zero,
            n: 1,
            tgrid: default_fiber_grid(),
            constant_action: Some(0.0),
        }
    }

    pub fn poisson_fiber_time() -> Self {
        OperatorKernel {
            kind: KernelKind::PoissonFiberTime,
            n: 1,
            tgrid: default_fiber_grid(),
            constant_action: None,
        }
    }

    pub fn poisson_fiber_space() -> Self {
        OperatorKernel {
            kind: KernelKind::PoissonFiberSpace,
            n: 1,
            tgrid: default_fiber_grid(),
            constant_action: None,
        }
    }

    pub fn fiber_dim(&self) -> usize {
        match self.kind {
            KernelKind::Hilbert | KernelKind::Zero => 1,
            _ => self.tgrid.len(),
        }
    }

    /// Diagonal of the fiber operator at separation d = x - y.
    pub fn fiber_diag(&self, d: f64) -> Result<Vec<f64>> {
        if d == 0.0 {
            return Err(LpsError::InvalidParam("kernel is singular at x = y".into()));
        }
        Ok(match self.kind {
            KernelKind::Hilbert => vec![1.0 / d],
            KernelKind::Zero => vec![0.0],
            KernelKind::PoissonFiberTime => self
                .tgrid
                .nodes
                .iter()
                .map(|&t| t * poisson_kernel_euclid_dt(t, &[d], 1))
                .collect(),
            KernelKind::PoissonFiberSpace => self
                .tgrid
                .nodes
                .iter()
                .map(|&t| t * poisson_kernel_euclid_dxi(t, &[d], 1, 0))
                .collect(),
        })
    }

    pub fn eval(&self, x: f64, y: f64) -> Result<Vec<f64>> {
        self.fiber_diag(x - y)
    }
}

/// Largest singular value of a diagonal fiber operator, by 20 steps of power
/// iteration on diag^T diag from the all-ones vector. Deterministic; slightly
/// below the true sup when neighboring diagonal entries nearly tie.
fn power_norm(diag: &[f64]) -> f64 {
    let sq: Vec<f64> = diag.iter().map(|d| d * d).collect();
    let mut v = vec![1.0; diag.len()];
    for _ in 0..20 {
        let w: Vec<f64> = sq.iter().zip(&v).map(|(s, x)| s * x).collect();
        let parts: Vec<f64> = w.iter().map(|x| x * x).collect();
        let nrm = pairwise_sum(&parts).sqrt();
        if nrm == 0.0 {
            return 0.0;
        }
        v = w.iter().map(|x| x / nrm).collect();
    }
    let parts: Vec<f64> = sq.iter().zip(&v).map(|(s, x)| s * x * x).collect();
    let vv: Vec<f64> = v.iter().map(|x| x * x).collect();
    (pairwise_sum(&parts) / pairwise_sum(&vv)).sqrt()
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CzRow {
    pub rho: f64,
    pub size_bound: f64,
    pub grad_bound: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CzProfile {
    pub rows: Vec<CzRow>,
    pub max_size_bound: f64,
    pub max_grad_bound: f64,
}

impl CzProfile {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scale,size-bound,gradient-bound\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{}\n", r.rho, r.size_bound, r.grad_bound));
        }
        out
    }
}

/// Size and gradient bound profile: for each radius rho, the sup over
/// sampled separations |x - y| = rho of rho^n ||k|| and rho^{n+1} ||grad k||,
/// operator norms by power iteration and gradients by central differences
/// with step 1e-3 rho.
pub fn cz_bound_profile(kernel: &OperatorKernel, radii: &[f64]) -> Result<CzProfile> {
    if radii.is_empty() {
        return Err(LpsError::InvalidParam("no radii given".into()));
    }
    for &r in radii {
        if !(r > 0.0) && r.is_finite() {
            return Err(LpsError::InvalidParam(format!("radius {r} must be positive")));
        }
        if !r.is_finite() {
            return Err(LpsError::InvalidParam(format!("radius {r} must be finite")));
        }
    }
    let n = kernel.n as i32;
    let rows: Vec<CzRow> = radii
        .par_iter()
        .map(|&rho| {
            let h = 1e-3 * rho;
            let mut size = 0.0f64;
            let mut grad = 0.0f64;
            for d in [rho, -rho] {
                let diag = kernel.fiber_diag(d)?;
                size = size.max(power_norm(&diag));
                let plus = kernel.fiber_diag(d + h)?;
                let minus = kernel.fiber_diag(d - h)?;
                let gdiag: Vec<f64> =
                    plus.iter().zip(&minus).map(|(p, m)| (p - m) / (2.0 * h)).collect();
                grad = grad.max(power_norm(&gdiag));
            }
            Ok(CzRow {
                rho,
                size_bound: rho.powi(n) * size,
                grad_bound: rho.powi(n + 1) * grad,
            })
        })
        .collect::<Result<_>>()?;
    let max_size_bound = rows.iter().fold(0.0f64, |a, r| a.max(r.size_bound));
    let max_grad_bound = rows.iter().fold(0.0f64, |a, r| a.max(r.grad_bound));
    Ok(CzProfile { rows, max_size_bound, max_grad_bound })
}

// ---------------------------------------------------------------------------
// torus kernel short-time decomposition

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TorusKernelSplit {
    pub k_t: f64,
    pub k0_t: f64,
    pub residual: f64,
}

fn torus_window(t: f64, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(LpsError::InvalidParam(format!("window delta = {delta} must be in (0,1)")));
    }
    let eps = (1.0 / (1.0 - delta)).ln();
    if !(t > 0.0 && t < eps) {
        return Err(LpsError::InvalidParam(format!(
            "time t = {t} outside the window (0, {eps})"
        )));
    }
    Ok(eps)
}

/// The short-time torus kernel, its Euclidean main term
/// k0_t(phi) = 2 (t^2 - phi^2)/(t^2 + phi^2)^2, and their difference.
/// Valid for 0 < t < log(1/(1-delta)) and |phi| < delta.
pub fn torus_kernel_decompose(t: f64, phi: f64, delta: f64) -> Result<TorusKernelSplit> {
    torus_window(t, delta)?;
    if !(phi.abs() < delta) {
        return Err(LpsError::InvalidParam(format!(
            "angle phi = {phi} outside the window (-{delta}, {delta})"
        )));
    }
    let em = (-t).exp();
    let a = 1.0 - em;
    let s2 = (phi / 2.0).sin().powi(2);
    let k_t = (2.0 * a * a - 4.0 * (1.0 + em * em) * s2) / (a * a + 4.0 * em * s2).powi(2);
    let k0_t = 2.0 * (t * t - phi * phi) / (t * t + phi * phi).powi(2);
    Ok(TorusKernelSplit { k_t, k0_t, residual: k_t - k0_t })
}

/// Sup over a midpoint grid on the window of
/// |residual| / (t/(t^2 + phi^2) + 1), finite by the short-time expansion.
pub fn torus_residual_bound(delta: f64, steps: usize) -> Result<f64> {
    if steps < 2 {
        return Err(LpsError::InvalidParam(format!("steps = {steps} must be >= 2")));
    }
    let eps = torus_window(delta.min(0.5) * 0.1, delta)?; // validates delta, any t inside
    let sup = (0..steps)
        .into_par_iter()
        .map(|i| {
            let t = eps * (i as f64 + 0.5) / steps as f64;
            let mut s = 0.0f64;
            for j in 0..steps {
                let phi = delta * ((2.0 * j as f64 + 1.0) / steps as f64 - 1.0);
                let split = torus_kernel_decompose(t, phi, delta).unwrap();
                let weight = t / (t * t + phi * phi) + 1.0;
                s = s.max(split.residual.abs() / weight);
            }
            s
        })
        .reduce(|| 0.0, f64::max);
    Ok(sup)
}

// ---------------------------------------------------------------------------
// projection kernel

/// k_{s,t}(x) = s t d^2/du^2 P_u(x) at u = s + t: the kernel pairing the
/// time-fiber projection with the square function. Symmetric in (s, t).
pub fn projection_kernel_kst(s: f64, t: f64, x: &[f64], n: usize) -> Result<f64> {
    if !(s > 0.0 && t > 0.0) {
        return Err(LpsError::InvalidParam(format!("times s = {s}, t = {t} must be > 0")));
    }
    if x.len() != n || !(n == 1 || n == 2) {
        return Err(LpsError::DimensionMismatch(format!(
            "point of dimension {} for n = {n}",
            x.len()
        )));
    }
    Ok(s * t * poisson_kernel_euclid_dtt(s + t, x, n))
}

/// Sup of |k_{s,t}(x)| (|x| + s + t)^{n+2} / (s t) over a log-sampled box,
/// the shape of the decay bound the kernel satisfies.
pub fn projection_kernel_bound(n: usize, steps: usize) -> Result<f64> {
    if steps < 2 {
        return Err(LpsError::InvalidParam(format!("steps = {steps} must be >= 2")));
    }
    let levels: Vec<f64> =
        (0..steps).map(|i| 2f64.powf(-3.0 + 6.0 * i as f64 / (steps - 1) as f64)).collect();
    let mut sup = 0.0f64;
    for &s in &levels {
        for &t in &levels {
            for &r in &levels {
                for sign in [1.0, -1.0] {
                    let x = if n == 1 { vec![sign * r] } else { vec![sign * r, 0.5 * r] };
                    let k = projection_kernel_kst(s, t, &x, n)?;
                    let xn: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                    sup = sup.max(k.abs() * (xn + s + t).powi(n as i32 + 2) / (s * t));
                }
            }
        }
    }
    Ok(sup)
}

// ---------------------------------------------------------------------------
// BMO norms over dyadic blocks

/// Sup over aligned dyadic blocks (all levels from the whole domain down to
/// 2^max_levels pieces per axis) of the mean oscillation
/// (1/|Q|) sum over Q of ||f - f_Q||. The grid must split evenly.
pub fn bmo_norm(f: &GridFunction, max_levels: u32) -> Result<f64> {
    match f.domain.kind {
        DomainKind::Torus | DomainKind::Line | DomainKind::Plane => {}
        k => {
            return Err(LpsError::DomainMismatch(format!(
                "BMO norm needs a translation-invariant domain, got {}",
                k.name()
            )))
        }
    }
    let n = f.domain.n_per_axis;
    let pieces = 1usize << max_levels;
    if n % pieces != 0 {
        return Err(LpsError::InvalidParam(format!(
            "grid of {n} cells per axis does not split into 2^{max_levels} blocks"
        )));
    }
    let dim = f.domain.kind.dim();
    let mut sup = 0.0f64;
    for level in 0..=max_levels {
        let blocks = 1usize << level;
        let side = n / blocks;
        let level_sup = if dim == 1 {
            (0..blocks)
                .into_par_iter()
                .map(|b| block_oscillation(f, b * side, 0, side, 1))
                .reduce(|| 0.0, f64::max)
        } else {
            (0..blocks * blocks)
                .into_par_iter()
                .map(|b| {
                    let (bx, by) = (b / blocks, b % blocks);
                    block_oscillation(f, bx * side, by * side, side, n)
                })
                .reduce(|| 0.0, f64::max)
        };
        sup = sup.max(level_sup);
    }
    Ok(sup)
}

fn block_oscillation(f: &GridFunction, x0: usize, y0: usize, side: usize, stride: usize) -> f64 {
    let rows = if stride == 1 { 1 } else { side };
    let count = side * rows;
    let mut mean = vec![0.0f64; f.m];
    let mut scratch = vec![0.0f64; count];
    for (j, mj) in mean.iter_mut().enumerate() {
        let mut pos = 0;
        for r in 0..rows {
            for c in 0..side {
                let cell = (x0 + r) * stride + y0 + c;
                scratch[pos] = f.values[cell * f.m + j];
                pos += 1;
            }
        }
        *mj = pairwise_sum(&scratch) / count as f64;
    }
    let mut devs = vec![0.0f64; f.m];
    let mut pos = 0;
    for r in 0..rows {
        for c in 0..side {
            let cell = (x0 + r) * stride + y0 + c;
            for (j, d) in devs.iter_mut().enumerate() {
                *d = f.values[cell * f.m + j] - mean[j];
            }
            scratch[pos] = b_norm(&devs, f.r);
            pos += 1;
        }
    }
    pairwise_sum(&scratch) / count as f64
}

// ---------------------------------------------------------------------------
