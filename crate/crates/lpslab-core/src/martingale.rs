//! Dyadic filtration on [0,1): conditional expectations, martingale
//! differences and the square function, Cesaro means of conditional
//! expectations and their differences, the discrete projection R, martingale
//! transforms, and the multiplier-norm formula for the projection's blocks.
//!
//! Functions are sampled at the 2^depth dyadic midpoints with uniform
//! weight; E_n averages over level-n cells, and E_n for n >= depth is the
//! identity, so every operator here is exact linear algebra (no quadrature).

use nalgebra::DMatrix;

use crate::grid::{b_norm, pairwise_sum};
use crate::semigroup::gauss_legendre;
use crate::{LpsError, Result};

/// Vector-valued function sampled on the 2^depth dyadic cells of [0,1),
/// cell-major layout like `GridFunction`.
#[derive(Clone, Debug, PartialEq)]
pub struct DyadicFn {
    pub depth: u32,
    pub m: usize,
    pub r: f64,
    pub values: Vec<f64>,
}

impl DyadicFn {
    pub fn new(depth: u32, m: usize, r: f64, values: Vec<f64>) -> Result<Self> {
        if depth > 24 {
            return Err(LpsError::InvalidParam(format!("depth {depth} too large")));
        }
        if m == 0 {
            return Err(LpsError::InvalidParam("need at least one coordinate".into()));
        }
        if !(r >= 1.0) {
            return Err(LpsError::InvalidParam(format!("exponent r = {r} must be >= 1")));
        }
        let want = (1usize << depth) * m;
        if values.len() != want {
            return Err(LpsError::DimensionMismatch(format!(
                "expected {want} values, got {}",
                values.len()
            )));
        }
        Ok(DyadicFn { depth, m, r, values })
    }

    pub fn zeros(depth: u32, m: usize, r: f64) -> Self {
        DyadicFn { depth, m, r, values: vec![0.0; (1usize << depth) * m] }
    }

    pub fn from_fn(depth: u32, m: usize, r: f64, g: impl Fn(f64, usize) -> f64) -> Self {
        let n = 1usize << depth;
        let mut values = vec![0.0; n * m];
        for c in 0..n {
            let x = (c as f64 + 0.5) / n as f64;
            for j in 0..m {
                values[c * m + j] = g(x, j);
            }
        }
        DyadicFn { depth, m, r, values }
    }

    pub fn samples(&self) -> usize {
        1usize << self.depth
    }

    pub fn value(&self, c: usize) -> &[f64] {
        &self.values[c * self.m..(c + 1) * self.m]
    }

    pub fn scale(&self, c: f64) -> Self {
        let mut out = self.clone();
        for v in &mut out.values {
            *v *= c;
        }
        out
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a - b)
    }

    fn zip(&self, other: &Self, op: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.depth != other.depth || self.m != other.m {
            return Err(LpsError::DimensionMismatch("mismatched dyadic functions".into()));
        }
        let mut out = self.clone();
        for (a, b) in out.values.iter_mut().zip(&other.values) {
            *a = op(*a, *b);
        }
        Ok(out)
    }

    /// Pointwise coordinate norms.
    pub fn norm_field(&self) -> Vec<f64> {
        (0..self.samples()).map(|c| b_norm(self.value(c), self.r)).collect()
    }

    /// L^p norm with the uniform probability weight on [0,1).
    pub fn lp_norm(&self, p: f64) -> Result<f64> {
        if !(p >= 1.0) && p != f64::INFINITY {
            return Err(LpsError::InvalidParam(format!("p = {p} must be >= 1 or inf")));
        }
        let field = self.norm_field();
        if p == f64::INFINITY {
            return Ok(field.iter().fold(0.0f64, |a, &b| a.max(b)));
        }
        let n = self.samples() as f64;
        let parts: Vec<f64> = field.iter().map(|v| v.powf(p) / n).collect();
        Ok(pairwise_sum(&parts).powf(1.0 / p))
    }
}

/// E_n: average over the level-n dyadic cells; identity for n >= depth.
pub fn cond_expect(f: &DyadicFn, n: u32) -> DyadicFn {
    if n >= f.depth {
        return f.clone();
    }
    let block = 1usize << (f.depth - n);
    let mut out = f.clone();
    let samples = f.samples();
    for start in (0..samples).step_by(block) {
        for j in 0..f.m {
            let parts: Vec<f64> =
                (start..start + block).map(|c| f.values[c * f.m + j]).collect();
            let mean = pairwise_sum(&parts) / block as f64;
            for c in start..start + block {
                out.values[c * f.m + j] = mean;
            }
        }
    }
    out
}

/// Martingale difference d_n = E_n - E_{n-1}, n >= 1.
pub fn diff(f: &DyadicFn, n: u32) -> Result<DyadicFn> {
    if n == 0 {
        return Err(LpsError::InvalidParam("differences start at n = 1".into()));
    }
    cond_expect(f, n).sub(&cond_expect(f, n - 1))
}

/// S_q f = (sum_{n=1}^depth ||d_n f||_B^q)^{1/q} pointwise.
pub fn square_function(f: &DyadicFn, q: f64) -> Result<DyadicFn> {
    if !(q >= 1.0) {
        return Err(LpsError::InvalidParam(format!("q = {q} must be >= 1")));
    }
    let diffs: Vec<DyadicFn> = (1..=f.depth).map(|n| diff(f, n).unwrap()).collect();
    let mut out = DyadicFn::zeros(f.depth, 1, 1.0);
    for c in 0..f.samples() {
        let terms: Vec<f64> = diffs.iter().map(|d| b_norm(d.value(c), f.r).powf(q)).collect();
        out.values[c] = pairwise_sum(&terms).powf(1.0 / q);
    }
    Ok(out)
}

/// Doob maximal function sup_n ||E_n f||_B (n = 0..depth), pointwise.
pub fn maximal_function(f: &DyadicFn) -> DyadicFn {
    let mut out = DyadicFn::zeros(f.depth, 1, 1.0);
    for n in 0..=f.depth {
        let en = cond_expect(f, n);
        for c in 0..f.samples() {
            let v = b_norm(en.value(c), f.r);
            if v > out.values[c] {
                out.values[c] = v;
            }
        }
    }
    out
}

/// sigma_n = (E_0 + ... + E_n) / (n+1). Levels past the depth are the
/// identity, so n may exceed the depth.
pub fn cesaro_sigma(f: &DyadicFn, n: u32) -> DyadicFn {
    let mut acc = DyadicFn::zeros(f.depth, f.m, f.r);
    for k in 0..=n {
        let ek = cond_expect(f, k);
        for (a, b) in acc.values.iter_mut().zip(&ek.values) {
            *a += b;
        }
    }
    acc.scale(1.0 / (n + 1) as f64)
}

/// Delta sigma_n = sigma_n - sigma_{n-1}, n >= 1.
pub fn delta_sigma(f: &DyadicFn, n: u32) -> Result<DyadicFn> {
    if n == 0 {
        return Err(LpsError::InvalidParam("delta sigma starts at n = 1".into()));
    }
    cesaro_sigma(f, n).sub(&cesaro_sigma(f, n - 1))
}

/// Cesaro square function (sum_{n=1}^{n_max} n^{q-1} ||Delta sigma_n f||^q)^{1/q}.
pub fn cesaro_square_function(f: &DyadicFn, q: f64, n_max: u32) -> Result<DyadicFn> {
    if !(q >= 1.0) {
        return Err(LpsError::InvalidParam(format!("q = {q} must be >= 1")));
    }
    let ds: Vec<DyadicFn> = (1..=n_max).map(|n| delta_sigma(f, n).unwrap()).collect();
    let mut out = DyadicFn::zeros(f.depth, 1, 1.0);
    for c in 0..f.samples() {
        let terms: Vec<f64> = ds
            .iter()
            .enumerate()
            .map(|(i, d)| ((i + 1) as f64).powf(q - 1.0) * b_norm(d.value(c), f.r).powf(q))
            .collect();
        out.values[c] = pairwise_sum(&terms).powf(1.0 / q);
    }
    Ok(out)
}

/// Both sides of the composition identity
/// Delta sigma_m Delta sigma_n = (mn(m+1)(n+1))^{-1} sum_{j<=m^n} j^2 d_j:
/// (direct composition, closed formula).
pub fn delta_sigma_product(f: &DyadicFn, m: u32, n: u32) -> Result<(DyadicFn, DyadicFn)> {
    if m == 0 || n == 0 {
        return Err(LpsError::InvalidParam("indices start at 1".into()));
    }
    let direct = delta_sigma(&delta_sigma(f, n)?, m)?;
    let c = 1.0 / (m as f64 * n as f64 * (m + 1) as f64 * (n + 1) as f64);
    let mut formula = DyadicFn::zeros(f.depth, f.m, f.r);
    for j in 1..=m.min(n) {
        let dj = diff(f, j)?;
        let jj = (j as f64) * (j as f64);
        for (a, b) in formula.values.iter_mut().zip(&dj.values) {
            *a += jj * b;
        }
    }
    Ok((direct, formula.scale(c)))
}

/// Constant multiplying sequence for a martingale transform.
#[derive(Clone, Debug)]
pub enum MultiplyingSequence {
    Scalars(Vec<f64>),
    /// v_k as matrices taking the m input coordinates to m2 outputs.
    Matrices(Vec<DMatrix<f64>>),
    /// v_k(b) = b placed in slot k of ell^q(B): the paper's Q_q embedding.
    Embedding { q: f64 },
}

impl MultiplyingSequence {
    fn norm(&self, k: usize) -> f64 {
        match self {
            MultiplyingSequence::Scalars(v) => v.get(k).copied().unwrap_or(0.0).abs(),
            MultiplyingSequence::Matrices(v) => {
                v.get(k).map(|m| operator_norm(m)).unwrap_or(0.0)
            }
            MultiplyingSequence::Embedding { .. } => 1.0,
        }
    }

    /// sup_k ||v_k||.
    pub fn sup_norm(&self, levels: u32) -> f64 {
        (0..levels as usize).map(|k| self.norm(k)).fold(0.0f64, f64::max)
    }
}

fn operator_norm(m: &DMatrix<f64>) -> f64 {
    // largest singular value by 30 power-iteration steps on M^T M
    let mtm = m.transpose() * m;
    let mut v = nalgebra::DVector::from_element(mtm.nrows(), 1.0);
    let mut lam = 0.0;
    for _ in 0..30 {
        let w = &mtm * &v;
        lam = w.norm();
        if lam == 0.0 {
            return 0.0;
        }
        v = w / lam;
    }
    lam.sqrt()
}

/// Transformed partial sums (Tf)_n = sum_{k<=n} v_k d_k f and the maximal
/// function sup_n ||(Tf)_n||.
pub struct TransformResult {
    /// indexed by n = 1..=depth; coordinate count depends on the sequence
    pub partials: Vec<DyadicFn>,
    pub maximal: DyadicFn,
}

pub fn martingale_transform(
    f: &DyadicFn,
    v: &MultiplyingSequence,
) -> Result<TransformResult> {
    let depth = f.depth;
    let samples = f.samples();
    let diffs: Vec<DyadicFn> = (1..=depth).map(|n| diff(f, n).unwrap()).collect();
    match v {
        MultiplyingSequence::Scalars(seq) => {
            if seq.len() < depth as usize {
                return Err(LpsError::DimensionMismatch(format!(
                    "need {depth} multipliers, got {}",
                    seq.len()
                )));
            }
            let mut partials = Vec::with_capacity(depth as usize);
            let mut acc = DyadicFn::zeros(depth, f.m, f.r);
            for (k, d) in diffs.iter().enumerate() {
                for (a, b) in acc.values.iter_mut().zip(&d.values) {
                    *a += seq[k] * b;
                }
                partials.push(acc.clone());
            }
            let maximal = maximal_of(&partials, samples);
            Ok(TransformResult { partials, maximal })
        }
        MultiplyingSequence::Matrices(seq) => {
            if seq.len() < depth as usize {
                return Err(LpsError::DimensionMismatch(format!(
                    "need {depth} multipliers, got {}",
                    seq.len()
                )));
            }
            let m2 = seq[0].nrows();
            for mk in seq.iter().take(depth as usize) {
                if mk.ncols() != f.m || mk.nrows() != m2 {
                    return Err(LpsError::DimensionMismatch(
                        "multiplier shape does not match the input coordinates".into(),
                    ));
                }
            }
            let mut partials = Vec::with_capacity(depth as usize);
            let mut acc = DyadicFn::zeros(depth, m2, f.r);
            for (k, d) in diffs.iter().enumerate() {
                for c in 0..samples {
                    let x = nalgebra::DVector::from_column_slice(d.value(c));
                    let y = &seq[k] * x;
                    for j in 0..m2 {
                        acc.values[c * m2 + j] += y[j];
                    }
                }
                partials.push(acc.clone());
            }
            let maximal = maximal_of(&partials, samples);
            Ok(TransformResult { partials, maximal })
        }
        MultiplyingSequence::Embedding { q } => {
            if !(*q >= 1.0) {
                return Err(LpsError::InvalidParam(format!("q = {q} must be >= 1")));
            }
            // (Tf)_n lives in ell^q_depth(B): slot k holds d_k f for k <= n.
            let d = depth as usize;
            let mut partials = Vec::with_capacity(d);
            let mut acc = DyadicFn::zeros(depth, d * f.m, *q);
            for (k, dk) in diffs.iter().enumerate() {
                for c in 0..samples {
                    for j in 0..f.m {
                        acc.values[c * d * f.m + k * f.m + j] = dk.values[c * f.m + j];
                    }
                }
                partials.push(acc.clone());
            }
            // The slot norms grow with n, so the sup over n is the n = depth
            // value; computing it with the same pairwise accumulation as
            // square_function makes (Q_q f)* = S_q f bit-exact.
            let mut maximal = DyadicFn::zeros(depth, 1, 1.0);
            for c in 0..samples {
                let terms: Vec<f64> =
                    diffs.iter().map(|dk| b_norm(dk.value(c), f.r).powf(*q)).collect();
                maximal.values[c] = pairwise_sum(&terms).powf(1.0 / *q);
            }
            Ok(TransformResult { partials, maximal })
        }
    }
}

fn maximal_of(partials: &[DyadicFn], samples: usize) -> DyadicFn {
    let depth = partials[0].depth;
    let mut out = DyadicFn::zeros(depth, 1, 1.0);
    for p in partials {
        for c in 0..samples {
            let v = b_norm(p.value(c), p.r);
            if v > out.values[c] {
                out.values[c] = v;
            }
        }
    }
    out
}

/// R h = sum_n Delta sigma_n (h_n) for a sequence h_1..h_N of functions on
/// one filtration.
pub fn discrete_projection_r(h: &[DyadicFn]) -> Result<DyadicFn> {
    let first = h.first().ok_or_else(|| LpsError::InvalidParam("empty sequence".into()))?;
    let mut acc = DyadicFn::zeros(first.depth, first.m, first.r);
    for (i, hn) in h.iter().enumerate() {
        let d = delta_sigma(hn, (i + 1) as u32)?;
        for (a, b) in acc.values.iter_mut().zip(&d.values) {
            *a += b;
        }
    }
    Ok(acc)
}

/// The blocks (n * Delta sigma_n(g))_{n=1..len} entering the boundedness of
/// R in Lemma-3.3 form.
pub fn projection_composite(g: &DyadicFn, len: usize) -> Result<Vec<DyadicFn>> {
    (1..=len).map(|n| Ok(delta_sigma(g, n as u32)?.scale(n as f64))).collect()
}

/// ell^q(1/n) norm of a sequence of sampled functions:
/// (sum_n (1/n) * mean_x ||u_n(x)||^q)^{1/q}.
pub fn weighted_seq_norm(seq: &[DyadicFn], q: f64) -> Result<f64> {
    if !(q >= 1.0) {
        return Err(LpsError::InvalidParam(format!("q = {q} must be >= 1")));
    }
    let parts: Vec<f64> = seq
        .iter()
        .enumerate()
        .map(|(i, u)| {
            let field = u.norm_field();
            let mean: Vec<f64> =
                field.iter().map(|v| v.powf(q) / u.samples() as f64).collect();
            pairwise_sum(&mean) / (i + 1) as f64
        })
        .collect();
    Ok(pairwise_sum(&parts).powf(1.0 / q))
}

/// Tail of sum_{m > a} 1/(m(m+1)^e) by Euler-Maclaurin around the closed
/// integral form int_0^1 u^{e-1} (A+u)^{-e} du, A = a+1.
fn series_tail(a: f64, e: f64) -> f64 {
    let big_a = a + 1.0;
    let (xs, ws) = gauss_legendre(64);
    let mut integral = 0.0;
    for (x, w) in xs.iter().zip(&ws) {
        let u = (x + 1.0) / 2.0;
        integral += 0.5 * w * u.powf(e - 1.0) * (big_a + u).powf(-e);
    }
    let g = |x: f64| 1.0 / (x * (x + 1.0).powf(e));
    // g'(A) via the logarithmic derivative
    let gp = -g(big_a) * (1.0 / big_a + e / (big_a + 1.0));
    integral + 0.5 * g(big_a) - gp / 12.0
}

/// j^2 (sum_{m>=j} 1/(m(m+1)^q))^{1/q} (sum_{n>=j} 1/(n(n+1)^{q'}))^{1/q'}:
/// the operator norm of the j-th multiplier block of the projection R.
pub fn projection_multiplier_norm(j: usize, q: f64) -> Result<f64> {
    if j == 0 {
        return Err(LpsError::InvalidParam("index starts at 1".into()));
    }
    if !(q > 1.0 && q.is_finite()) {
        return Err(LpsError::InvalidParam(format!("q = {q} must be in (1, inf)")));
    }
    let qp = q / (q - 1.0);
    let factor = |e: f64| -> f64 {
        let cut = 20_000usize.max(j);
        // backward partial sum from the cutoff for accuracy
        let mut acc = 0.0;
        for m in (j..=cut).rev() {
            let mf = m as f64;
            acc += 1.0 / (mf * (mf + 1.0).powf(e));
        }
        (acc + series_tail(cut as f64, e)).powf(1.0 / e)
    };
    Ok((j * j) as f64 * factor(q) * factor(qp))
}

/// Doob weak type: for every lambda in the grid,
/// lambda * m{f* > lambda} <= int_{f* > lambda} ||f|| dm.
/// Returns the worst signed slack (rhs - lhs; nonnegative means the bound
/// holds).
pub fn doob_weak_type_slack(f: &DyadicFn, lambda_grid: &[f64]) -> Result<f64> {
    if lambda_grid.iter().any(|&l| !(l > 0.0)) {
        return Err(LpsError::InvalidParam("lambda grid must be positive".into()));
    }
    let star = maximal_function(f);
    let norms = f.norm_field();
    let n = f.samples() as f64;
    let mut worst = f64::INFINITY;
    for &lam in lambda_grid {
        let mut measure = 0.0;
        let mut integral = 0.0;
        for c in 0..f.samples() {
            if star.values[c] > lam {
                measure += 1.0 / n;
                integral += norms[c] / n;
            }
        }
        worst = worst.min(integral - lam * measure);
    }
    Ok(worst)
}
