//! Named test inputs: eigenfunctions, lacunary vector fields, Haar steps,
//! smooth bumps, Hermite data, unit-mass columns, and seeded random
//! families. Synthesis is exact at grid points.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::grid::{Domain, DomainKind, GridFunction};
use crate::{LpsError, Result};

/// cos(theta) on the torus: the first eigenline of every torus action here.
pub fn synth_cos(n: usize) -> Result<GridFunction> {
    let d = Domain::torus(n)?;
    Ok(GridFunction::from_fn(d, 2.0, 1, |x, _, _| x.cos()))
}

/// Lacunary vector field: coordinate k-1 carries cos(2^k theta), k = 1..=m.
/// The grid must resolve the top frequency (2^m < n/2).
pub fn synth_lacunary(n: usize, m: usize, r: f64) -> Result<GridFunction> {
    if m == 0 || m >= 63 {
        return Err(LpsError::InvalidParam(format!("lacunary count m = {m} out of range")));
    }
    let top = 1u64 << m;
    if top >= (n as u64) / 2 {
        return Err(LpsError::InvalidParam(format!(
            "top frequency 2^{m} = {top} is not resolved by N = {n}"
        )));
    }
    let d = Domain::torus(n)?;
    Ok(GridFunction::from_fn(d, r, m, |x, _, j| ((1u64 << (j + 1)) as f64 * x).cos()))
}

/// Haar step on the torus seen as [0, 1): +1 on the first half, -1 on the
/// second, sampled on 2^depth cells.
pub fn synth_haar(depth: u32) -> Result<GridFunction> {
    if !(3..=20).contains(&depth) {
        return Err(LpsError::InvalidParam(format!("haar depth {depth} out of [3, 20]")));
    }
    let n = 1usize << depth;
    let d = Domain::torus(n)?;
    let mut f = GridFunction::zeros(d, 2.0, 1);
    for c in 0..n {
        f.values[c] = if c < n / 2 { 1.0 } else { -1.0 };
    }
    Ok(f)
}

/// Smooth compactly supported bump of unit height: exp(1 - 1/(1 - u^2)) for
/// |u| < 1 with u = |x| / width, zero outside.
pub fn bump_profile(u: f64) -> f64 {
    if u.abs() < 1.0 {
        (1.0 - 1.0 / (1.0 - u * u)).exp()
    } else {
        0.0
    }
}

pub fn synth_bump(domain: Domain, width: f64) -> Result<GridFunction> {
    if !(width > 0.0) {
        return Err(LpsError::InvalidParam(format!("bump width {width} must be > 0")));
    }
    Ok(GridFunction::from_fn(domain, 2.0, 1, |x, y, _| {
        let rr = (x * x + if domain.dim() == 2 { y * y } else { 0.0 }).sqrt();
        bump_profile(rr / width)
    }))
}

/// Second Hermite polynomial 4x^2 - 2 (eigenvalue 2 of the OU number
/// operator), for gauss domains.
pub fn synth_hermite2(domain: Domain) -> Result<GridFunction> {
    if !domain.kind.is_gauss() {
        return Err(LpsError::DomainMismatch("hermite2 needs a gauss domain".into()));
    }
    Ok(GridFunction::from_fn(domain, 2.0, 1, |x, _, _| 4.0 * x * x - 2.0))
}

/// Unit-mass column: 1/cellweight at the cell nearest the origin, zero
/// elsewhere; a grid Dirac approximation.
pub fn synth_dirac_col(domain: Domain) -> Result<GridFunction> {
    let mut f = GridFunction::zeros(domain, 2.0, 1);
    let n = domain.n_per_axis;
    let c = match domain.dim() {
        1 => n / 2,
        _ => (n / 2) * n + n / 2,
    };
    f.values[c] = 1.0 / domain.weight(c);
    Ok(f)
}

/// Standard normal via Box-Muller on the given generator.
pub fn normal(rng: &mut ChaCha12Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Seeded generator; `stream` separates independent deterministic substreams
/// of the same run seed.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Coefficients of a mean-zero random trigonometric polynomial: per
/// coordinate, Gaussian cos/sin weights on frequencies 1..=degree.
#[derive(Clone, Debug)]
pub struct TrigCoeffs {
    pub m: usize,
    pub degree: usize,
    /// [coord][k-1] = (cos weight, sin weight)
    pub coeffs: Vec<Vec<(f64, f64)>>,
}

impl TrigCoeffs {
    pub fn random(m: usize, degree: usize, rng: &mut ChaCha12Rng) -> Self {
        let coeffs = (0..m)
            .map(|_| (0..degree).map(|_| (normal(rng), normal(rng))).collect())
            .collect();
        TrigCoeffs { m, degree, coeffs }
    }

    pub fn render(&self, n: usize, r: f64) -> Result<GridFunction> {
        if self.degree >= n / 2 {
            return Err(LpsError::InvalidParam(format!(
                "degree {} not resolved by N = {n}",
                self.degree
            )));
        }
        let d = Domain::torus(n)?;
        Ok(GridFunction::from_fn(d, r, self.m, |x, _, j| {
            let mut acc = 0.0;
            for (i, &(a, b)) in self.coeffs[j].iter().enumerate() {
                let k = (i + 1) as f64;
                acc += a * (k * x).cos() + b * (k * x).sin();
            }
            acc
        }))
    }
}

/// Random trig polynomial rendered on a torus grid (mean zero by
/// construction).
pub fn random_trig_poly(
    n: usize,
    degree: usize,
    m: usize,
    r: f64,
    rng: &mut ChaCha12Rng,
) -> Result<GridFunction> {
    TrigCoeffs::random(m, degree, rng).render(n, r)
}

/// Band-limited line data: a few cosine carriers under a broad Gaussian
/// envelope. Closed form, so the same family can be rendered on any grid.
#[derive(Clone, Debug)]
pub struct BandLimited {
    /// (frequency, amplitude, phase)
    pub carriers: Vec<(f64, f64, f64)>,
    pub envelope_sigma: f64,
}

impl BandLimited {
    pub fn random(k_max: f64, n_carriers: usize, sigma: f64, rng: &mut ChaCha12Rng) -> Self {
        let carriers = (0..n_carriers)
            .map(|_| {
                let freq = rng.gen_range(0.1..k_max);
                let amp = normal(rng);
                let phase = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
                (freq, amp, phase)
            })
            .collect();
        BandLimited { carriers, envelope_sigma: sigma }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let env = (-x * x / (2.0 * self.envelope_sigma * self.envelope_sigma)).exp();
        let mut acc = 0.0;
        for &(k, a, p) in &self.carriers {
            acc += a * (k * x + p).cos();
        }
        acc * env
    }

    pub fn render(&self, domain: Domain) -> Result<GridFunction> {
        if domain.kind != DomainKind::Line {
            return Err(LpsError::DomainMismatch("band-limited family lives on the line".into()));
        }
        Ok(GridFunction::from_fn(domain, 2.0, 1, |x, _, _| self.eval(x)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cos_values() {
        let f = synth_cos(8).unwrap();
        for j in 0..8 {
            let want = (2.0 * std::f64::consts::PI * j as f64 / 8.0).cos();
            assert!((f.values[j] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn haar_pattern() {
        let f = synth_haar(3).unwrap();
        assert_eq!(f.values.len(), 8);
        assert!(f.values[..4].iter().all(|&v| v == 1.0));
        assert!(f.values[4..].iter().all(|&v| v == -1.0));
    }

    #[test]
    fn lacunary_coordinates() {
        let f = synth_lacunary(256, 4, 4.0).unwrap();
        assert_eq!(f.m, 4);
        let theta = 2.0 * std::f64::consts::PI * 17.0 / 256.0;
        for k in 1..=4usize {
            let want = ((1u64 << k) as f64 * theta).cos();
            assert!((f.value(17)[k - 1] - want).abs() < 1e-12);
        }
        assert!(synth_lacunary(256, 7, 4.0).is_err());
    }

    #[test]
    fn dirac_total_mass() {
        let d = Domain::line(64, 4.0).unwrap();
        let f = synth_dirac_col(d).unwrap();
        let mass: f64 = (0..64).map(|c| f.values[c] * d.weight(c)).sum();
        assert!((mass - 1.0).abs() < 1e-12);
    }

    #[test]
    fn trig_poly_mean_zero_and_deterministic() {
        let mut rng = seeded_rng(7, 0);
        let f = random_trig_poly(128, 16, 2, 2.0, &mut rng).unwrap();
        let mut rng2 = seeded_rng(7, 0);
        let g = random_trig_poly(128, 16, 2, 2.0, &mut rng2).unwrap();
        assert_eq!(f.values, g.values);
        for j in 0..2 {
            let mean: f64 = (0..128).map(|c| f.value(c)[j]).sum::<f64>() / 128.0;
            assert!(mean.abs() < 1e-12, "mean {mean}");
        }
        // different stream, different draw
        let mut rng3 = seeded_rng(7, 1);
        let h = random_trig_poly(128, 16, 2, 2.0, &mut rng3).unwrap();
        assert_ne!(f.values, h.values);
    }

    #[test]
    fn bump_support() {
        let d = Domain::line(256, 8.0).unwrap();
        let f = synth_bump(d, 2.0).unwrap();
        let mid = f.values[128];
        assert!((mid - bump_profile(d.step() / 4.0)).abs() < 1e-12);
        assert_eq!(f.values[0], 0.0);
        assert!(f.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
