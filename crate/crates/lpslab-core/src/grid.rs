//! Discretized domains, truncated ell^r values, and the L^p norms every other
//! module builds on.
//!
//! The value space is ell^r truncated to M coordinates. Domains are the unit
//! torus with normalized measure, finite windows [-L, L]^n with Lebesgue cell
//! weights, and the same windows carrying the unnormalized Gaussian weight
//! exp(-|x|^2). Spatial quadrature is midpoint-cell throughout; on the torus
//! the representative points are theta_j = 2 pi j / N, which is spectrally
//! exact for trigonometric polynomials of degree below N.

use serde::{Deserialize, Serialize};

use crate::{LpsError, Result};

/// Pairwise summation. Deterministic for a fixed slice (no dependence on
/// thread count), rounding error O(log n) instead of O(n).
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        n if n <= 8 => {
            let mut s = 0.0;
            for &x in xs {
                s += x;
            }
            s
        }
        n => {
            let mid = n / 2;
            pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
        }
    }
}

/// ell^r norm of a coordinate slice; r = infinity gives the max norm.
pub fn b_norm(coords: &[f64], r: f64) -> f64 {
    if r.is_infinite() {
        return coords.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
    }
    if r == 1.0 {
        let parts: Vec<f64> = coords.iter().map(|x| x.abs()).collect();
        return pairwise_sum(&parts);
    }
    if r == 2.0 {
        let parts: Vec<f64> = coords.iter().map(|x| x * x).collect();
        return pairwise_sum(&parts).sqrt();
    }
    let parts: Vec<f64> = coords.iter().map(|x| x.abs().powf(r)).collect();
    pairwise_sum(&parts).powf(1.0 / r)
}

/// A point of ell^r_M: M real coordinates plus the exponent.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorValue {
    pub coords: Vec<f64>,
    pub r: f64,
}

impl VectorValue {
    pub fn new(coords: Vec<f64>, r: f64) -> Result<Self> {
        if coords.is_empty() {
            return Err(LpsError::InvalidParam("need at least one coordinate".into()));
        }
        if !(r >= 1.0) {
            return Err(LpsError::InvalidParam(format!("exponent r = {r} must be >= 1")));
        }
        Ok(VectorValue { coords, r })
    }

    pub fn norm(&self) -> f64 {
        b_norm(&self.coords, self.r)
    }
}

/// Weighted sequence norm (sum_n |a_n|^q / n)^{1/q}, indexed from n = 1.
pub fn weighted_lq_norm(a: &[VectorValue], q: f64) -> Result<f64> {
    if !(q >= 1.0) || q.is_infinite() {
        return Err(LpsError::InvalidParam(format!("exponent q = {q} must be in [1, inf)")));
    }
    let parts: Vec<f64> = a
        .iter()
        .enumerate()
        .map(|(i, v)| v.norm().powf(q) / (i + 1) as f64)
        .collect();
    Ok(pairwise_sum(&parts).powf(1.0 / q))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DomainKind {
    Torus,
    Line,
    Plane,
    GaussLine,
    GaussPlane,
}

impl DomainKind {
    pub fn dim(self) -> usize {
        match self {
            DomainKind::Torus | DomainKind::Line | DomainKind::GaussLine => 1,
            DomainKind::Plane | DomainKind::GaussPlane => 2,
        }
    }

    pub fn is_gauss(self) -> bool {
        matches!(self, DomainKind::GaussLine | DomainKind::GaussPlane)
    }

    pub fn name(self) -> &'static str {
        match self {
            DomainKind::Torus => "torus",
            DomainKind::Line => "line",
            DomainKind::Plane => "plane",
            DomainKind::GaussLine => "gauss-line",
            DomainKind::GaussPlane => "gauss-plane",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "torus" => DomainKind::Torus,
            "line" => DomainKind::Line,
            "plane" => DomainKind::Plane,
            "gauss-line" => DomainKind::GaussLine,
            "gauss-plane" => DomainKind::GaussPlane,
            _ => return Err(LpsError::InvalidParam(format!("unknown domain kind {s:?}"))),
        })
    }
}

/// A discretized domain: N sample cells per axis, and for the windowed kinds
/// the half-width L. The torus has period 2 pi and normalized measure.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Domain {
    pub kind: DomainKind,
    pub n_per_axis: usize,
    pub half_width: f64,
}

impl Domain {
    pub fn new(kind: DomainKind, n_per_axis: usize, half_width: f64) -> Result<Self> {
        if n_per_axis < 8 || n_per_axis % 2 != 0 {
            return Err(LpsError::InvalidParam(format!(
                "N = {n_per_axis} must be even and >= 8"
            )));
        }
        if kind != DomainKind::Torus && !(half_width > 0.0) {
            return Err(LpsError::InvalidParam(format!("L = {half_width} must be > 0")));
        }
        Ok(Domain { kind, n_per_axis, half_width })
    }

    pub fn torus(n_per_axis: usize) -> Result<Self> {
        Domain::new(DomainKind::Torus, n_per_axis, 0.0)
    }

    pub fn line(n_per_axis: usize, half_width: f64) -> Result<Self> {
        Domain::new(DomainKind::Line, n_per_axis, half_width)
    }

    pub fn dim(&self) -> usize {
        self.kind.dim()
    }

    pub fn cell_count(&self) -> usize {
        self.n_per_axis.pow(self.dim() as u32)
    }

    /// Mesh width on one axis.
    pub fn step(&self) -> f64 {
        match self.kind {
            DomainKind::Torus => 2.0 * std::f64::consts::PI / self.n_per_axis as f64,
            _ => 2.0 * self.half_width / self.n_per_axis as f64,
        }
    }

    fn axis_coord(&self, i: usize) -> f64 {
        match self.kind {
            DomainKind::Torus => i as f64 * self.step(),
            _ => -self.half_width + (i as f64 + 0.5) * self.step(),
        }
    }

    /// Cell-major coordinates of cell `c`; second entry is 0 for 1-D kinds.
    pub fn coords(&self, c: usize) -> [f64; 2] {
        if self.dim() == 1 {
            [self.axis_coord(c), 0.0]
        } else {
            let n = self.n_per_axis;
            [self.axis_coord(c / n), self.axis_coord(c % n)]
        }
    }

    /// Measure weight of cell `c`: 1/N on the torus, cell volume on windows,
    /// exp(-|x|^2) times cell volume on the Gaussian kinds (unnormalized).
    pub fn weight(&self, c: usize) -> f64 {
        match self.kind {
            DomainKind::Torus => 1.0 / self.n_per_axis as f64,
            DomainKind::Line => self.step(),
            DomainKind::Plane => self.step() * self.step(),
            DomainKind::GaussLine => {
                let x = self.axis_coord(c);
                (-x * x).exp() * self.step()
            }
            DomainKind::GaussPlane => {
                let [x, y] = self.coords(c);
                (-(x * x + y * y)).exp() * self.step() * self.step()
            }
        }
    }

    /// Total mass of the discretized measure. 1 on the torus; on Gaussian
    /// kinds this is the quadrature value of integral exp(-|x|^2) dx, exposed
    /// so either normalization convention is a constant rescaling away.
    pub fn total_mass(&self) -> f64 {
        match self.kind {
            DomainKind::Torus => 1.0,
            DomainKind::Line => 2.0 * self.half_width,
            DomainKind::Plane => 4.0 * self.half_width * self.half_width,
            _ => {
                let parts: Vec<f64> = (0..self.cell_count()).map(|c| self.weight(c)).collect();
                pairwise_sum(&parts)
            }
        }
    }
}

/// A sampled ell^r_M-valued function: one value per grid cell, stored flat
/// cell-major (cell index varies slowest, coordinate fastest).
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    pub domain: Domain,
    pub r: f64,
    pub m: usize,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn new(domain: Domain, r: f64, m: usize, values: Vec<f64>) -> Result<Self> {
        if m == 0 {
            return Err(LpsError::InvalidParam("M must be >= 1".into()));
        }
        if !(r >= 1.0) {
            return Err(LpsError::InvalidParam(format!("exponent r = {r} must be >= 1")));
        }
        if values.len() != domain.cell_count() * m {
            return Err(LpsError::InvalidParam(format!(
                "value count {} != cells {} x M {}",
                values.len(),
                domain.cell_count(),
                m
            )));
        }
        Ok(GridFunction { domain, r, m, values })
    }

    pub fn zeros(domain: Domain, r: f64, m: usize) -> Self {
        let len = domain.cell_count() * m;
        GridFunction { domain, r, m, values: vec![0.0; len] }
    }

    /// Scalar field (M = 1, r = 1), the shape every square function returns.
    pub fn scalar(domain: Domain, values: Vec<f64>) -> Result<Self> {
        GridFunction::new(domain, 1.0, 1, values)
    }

    pub fn from_fn(domain: Domain, r: f64, m: usize, f: impl Fn(f64, f64, usize) -> f64) -> Self {
        let cells = domain.cell_count();
        let mut values = Vec::with_capacity(cells * m);
        for c in 0..cells {
            let [x, y] = domain.coords(c);
            for j in 0..m {
                values.push(f(x, y, j));
            }
        }
        GridFunction { domain, r, m, values }
    }

    pub fn value(&self, c: usize) -> &[f64] {
        &self.values[c * self.m..(c + 1) * self.m]
    }

    pub fn value_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.values[c * self.m..(c + 1) * self.m]
    }

    /// Pointwise B-norm field.
    pub fn norm_field(&self) -> Vec<f64> {
        (0..self.domain.cell_count()).map(|c| b_norm(self.value(c), self.r)).collect()
    }

    pub fn scale(&self, c: f64) -> GridFunction {
        let mut out = self.clone();
        for v in &mut out.values {
            *v *= c;
        }
        out
    }

    pub fn add(&self, other: &GridFunction) -> Result<GridFunction> {
        if self.domain != other.domain || self.m != other.m {
            return Err(LpsError::DomainMismatch("add: shapes differ".into()));
        }
        let mut out = self.clone();
        for (v, w) in out.values.iter_mut().zip(&other.values) {
            *v += w;
        }
        Ok(out)
    }

    pub fn sub(&self, other: &GridFunction) -> Result<GridFunction> {
        self.add(&other.scale(-1.0))
    }

    /// Bochner L^p norm under the domain measure; essential sup for p = inf.
    pub fn lp_norm(&self, p: f64) -> Result<f64> {
        if !(p >= 1.0) {
            return Err(LpsError::InvalidParam(format!("exponent p = {p} must be >= 1")));
        }
        let norms = self.norm_field();
        if p.is_infinite() {
            return Ok(norms.iter().fold(0.0f64, |a, &x| a.max(x)));
        }
        let parts: Vec<f64> = norms
            .iter()
            .enumerate()
            .map(|(c, &v)| self.domain.weight(c) * v.powf(p))
            .collect();
        Ok(pairwise_sum(&parts).powf(1.0 / p))
    }

    pub fn to_json(&self) -> Result<String> {
        let file = GridFunctionFile {
            domain: DomainFile {
                kind: self.domain.kind,
                n: self.domain.dim(),
                n_per_axis: self.domain.n_per_axis,
                half_width: self.domain.half_width,
            },
            r: if self.r.is_infinite() { None } else { Some(self.r) },
            values: (0..self.domain.cell_count()).map(|c| self.value(c).to_vec()).collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: GridFunctionFile = serde_json::from_str(s)?;
        let domain = Domain::new(file.domain.kind, file.domain.n_per_axis, file.domain.half_width)?;
        if file.domain.n != domain.dim() {
            return Err(LpsError::InvalidParam(format!(
                "domain says n = {} but kind {} is {}-dimensional",
                file.domain.n,
                domain.kind.name(),
                domain.dim()
            )));
        }
        let r = file.r.unwrap_or(f64::INFINITY);
        let m = file.values.first().map(|v| v.len()).unwrap_or(0);
        if file.values.iter().any(|v| v.len() != m) {
            return Err(LpsError::InvalidParam("ragged value rows".into()));
        }
        let values: Vec<f64> = file.values.into_iter().flatten().collect();
        GridFunction::new(domain, r, m, values)
    }

    pub fn write_file(&self, path: &std::path::Path) -> Result<()> {
        crate::write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn read_file(path: &std::path::Path) -> Result<Self> {
        GridFunction::from_json(&std::fs::read_to_string(path)?)
    }

    /// CSV export: one row per cell, coordinates x1[,x2] then the M values.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for c in 0..self.domain.cell_count() {
            let [x, y] = self.domain.coords(c);
            out.push_str(&format!("{x}"));
            if self.domain.dim() == 2 {
                out.push_str(&format!(",{y}"));
            }
            for v in self.value(c) {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Serialize, Deserialize)]
struct DomainFile {
    kind: DomainKind,
    n: usize,
    #[serde(rename = "N")]
    n_per_axis: usize,
    #[serde(rename = "L")]
    half_width: f64,
}

// r = infinity is stored as JSON null.
#[derive(Serialize, Deserialize)]
struct GridFunctionFile {
    domain: DomainFile,
    r: Option<f64>,
    values: Vec<Vec<f64>>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn b_norm_examples() {
        assert!((b_norm(&[1.0, 1.0], 2.0) - 1.41421356).abs() < 1e-8);
        assert_eq!(b_norm(&[3.0, 4.0], 2.0), 5.0);
        assert!((b_norm(&[1.0, 1.0, 1.0], 3.0) - 1.44224957).abs() < 1e-8);
        assert_eq!(b_norm(&[1.0, -7.0, 2.0], f64::INFINITY), 7.0);
        assert_eq!(b_norm(&[0.0, 0.0], 5.0), 0.0);
    }

    #[test]
    fn b_norm_nonincreasing_in_r() {
        let coords = [0.3, -1.2, 0.7, 2.1];
        let mut prev = f64::INFINITY;
        for r in [1.0, 1.5, 2.0, 3.0, 7.0, f64::INFINITY] {
            let v = b_norm(&coords, r);
            assert!(v <= prev + 1e-12, "r = {r}");
            prev = v;
        }
    }

    #[test]
    fn lp_norm_examples() {
        let d = Domain::torus(1024).unwrap();
        let one = GridFunction::from_fn(d, 2.0, 1, |_, _, _| 1.0);
        assert!((one.lp_norm(2.0).unwrap() - 1.0).abs() < 1e-12);

        let cosf = GridFunction::from_fn(d, 2.0, 1, |x, _, _| x.cos());
        assert!((cosf.lp_norm(2.0).unwrap() - 0.70710678).abs() < 1e-6);

        let c110 = GridFunction::from_fn(d, 4.0, 3, |_, _, j| if j < 2 { 1.0 } else { 0.0 });
        assert!((c110.lp_norm(7.0).unwrap() - 2.0f64.powf(0.25)).abs() < 1e-10);
    }

    #[test]
    fn weighted_lq_examples() {
        let v = |c: Vec<f64>| VectorValue::new(c, 2.0).unwrap();
        let a = [v(vec![1.0]), v(vec![0.0]), v(vec![0.0])];
        assert!((weighted_lq_norm(&a, 2.0).unwrap() - 1.0).abs() < 1e-12);

        let a = [v(vec![1.0]), v(vec![1.0])];
        assert!((weighted_lq_norm(&a, 1.0).unwrap() - 1.5).abs() < 1e-12);

        let a = [v(vec![1.0]), v(vec![1.0]), v(vec![1.0]), v(vec![1.0])];
        assert!((weighted_lq_norm(&a, 2.0).unwrap() - 1.44337567).abs() < 1e-7);
        assert!((weighted_lq_norm(&a, 2.0).unwrap() - (25.0f64 / 12.0).sqrt()).abs() < 1e-12);

        assert_eq!(weighted_lq_norm(&[], 2.0).unwrap(), 0.0);
    }

    #[test]
    fn jensen_on_torus() {
        let d = Domain::torus(256).unwrap();
        let f = GridFunction::from_fn(d, 2.0, 2, |x, _, j| (x + j as f64).sin() + 0.3);
        let mut prev = 0.0;
        for p in [1.0, 1.5, 2.0, 4.0, 9.0] {
            let v = f.lp_norm(p).unwrap();
            assert!(v >= prev - 1e-12, "p = {p}");
            prev = v;
        }
        assert!(f.lp_norm(f64::INFINITY).unwrap() >= prev - 1e-12);
    }

    #[test]
    fn json_round_trip_bit_exact() {
        let d = Domain::new(DomainKind::GaussLine, 16, 5.5).unwrap();
        let f = GridFunction::from_fn(d, 3.0, 2, |x, _, j| {
            (x * 1.7 + j as f64).sin() * 1.0e-7 + 0.123456789012345
        });
        let s = f.to_json().unwrap();
        let g = GridFunction::from_json(&s).unwrap();
        assert_eq!(f, g);

        let inf = GridFunction::from_fn(Domain::torus(8).unwrap(), f64::INFINITY, 1, |x, _, _| x);
        let s = inf.to_json().unwrap();
        assert!(s.contains("\"r\":null"));
        assert_eq!(GridFunction::from_json(&s).unwrap(), inf);
    }

    #[test]
    fn domain_validation() {
        assert!(Domain::torus(7).is_err());
        assert!(Domain::torus(6).is_err());
        assert!(Domain::line(64, 0.0).is_err());
        assert!(VectorValue::new(vec![], 2.0).is_err());
        assert!(VectorValue::new(vec![1.0], 0.5).is_err());
        let d = Domain::torus(8).unwrap();
        let f = GridFunction::from_fn(d, 2.0, 1, |_, _, _| 1.0);
        assert!(f.lp_norm(0.5).is_err());
    }

    #[test]
    fn gauss_total_mass() {
        // integral of exp(-x^2) over R is sqrt(pi); L = 8 truncates at 1e-28.
        let d = Domain::new(DomainKind::GaussLine, 2048, 8.0).unwrap();
        assert!((d.total_mass() - std::f64::consts::PI.sqrt()).abs() < 1e-10);
        let d2 = Domain::new(DomainKind::GaussPlane, 128, 8.0).unwrap();
        assert!((d2.total_mass() - std::f64::consts::PI).abs() < 1e-8);
    }

    #[test]
    fn plane_cell_layout() {
        let d = Domain::new(DomainKind::Plane, 8, 4.0).unwrap();
        assert_eq!(d.cell_count(), 64);
        let [x0, y0] = d.coords(0);
        assert!((x0 - (-3.5)).abs() < 1e-12 && (y0 - (-3.5)).abs() < 1e-12);
        let [x, y] = d.coords(8 + 2); // second row, third column
        assert!((x - (-2.5)).abs() < 1e-12 && (y - (-1.5)).abs() < 1e-12);
    }
}

#[cfg(test)]
mod prop_tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_field() -> impl Strategy<Value = (GridFunction, GridFunction)> {
        (2usize..5, 1usize..4, prop::collection::vec(-10.0f64..10.0, 16 * 3 * 2))
            .prop_map(|(rsel, m, vals)| {
                let r = [1.0, 2.0, 4.0, f64::INFINITY][rsel - 1];
                let d = Domain::torus(16).unwrap();
                let take = 16 * m;
                let f = GridFunction::new(d, r, m, vals[..take].to_vec()).unwrap();
                let g = GridFunction::new(d, r, m, vals[take..2 * take].to_vec()).unwrap();
                (f, g)
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn homogeneity((f, _) in arb_field(), c in -5.0f64..5.0, psel in 0usize..3) {
            let p = [1.0, 2.0, 7.0][psel];
            let lhs = f.scale(c).lp_norm(p).unwrap();
            let rhs = c.abs() * f.lp_norm(p).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1.0));
        }

        #[test]
        fn triangle((f, g) in arb_field(), psel in 0usize..3) {
            let p = [1.0, 2.0, 7.0][psel];
            let sum = f.add(&g).unwrap().lp_norm(p).unwrap();
            let bound = f.lp_norm(p).unwrap() + g.lp_norm(p).unwrap();
            prop_assert!(sum <= bound + 1e-12 * bound.max(1.0));
        }
    }
}
