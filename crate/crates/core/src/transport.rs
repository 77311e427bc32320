//! Monotone lower-triangular transport maps onto a box.
//!
//! Component `k` of the core stage is
//!
//! ```text
//! u_k = c_k(x_<k) + ∫_0^{x_k} (p_k(t, x_<k)^2 + κ) dt
//! ```
//!
//! with polynomial `c_k` and `p_k`, so `∂u_k/∂x_k ≥ κ > 0` everywhere. A scaled
//! logistic then maps each `u_k` onto the open interval `(lo_k, hi_k)`.

use std::fmt::Write as _;

use crate::error::{check_dim, Error, Result};
use crate::prob::{log_pdf_gaussian_diag, sigmoid, softplus, GaussianDiag, SampleBatch, UniformBox};
use crate::rng::{StreamFactory, INIT};

/// Positivity floor of the diagonal derivative.
pub const KAPPA: f64 = 1e-3;

/// Logistic steepness: the reference range `±3` lands on the central 80% of each box axis.
pub fn squash_rate() -> f64 {
    9f64.ln() / 3.0
}

const INVERSE_TOL: f64 = 1e-12;
const INVERSE_MAX_ITER: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    IdentityToBox,
    /// Identity plus a small seeded perturbation.
    Randomized { seed: u64 },
}

/// Image of one point and `ln det ∇T` there.
#[derive(Debug, Clone, PartialEq)]
pub struct MapEvaluation {
    pub y: Vec<f64>,
    pub logdet: f64,
}

/// Exponent vectors of all monomials in `nvars` variables of total degree `<= max_deg`,
/// ordered by degree.
fn monomials(nvars: usize, max_deg: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    for deg in 0..=max_deg {
        let mut cur = vec![0u32; nvars];
        fill(&mut out, &mut cur, 0, deg as u32);
    }
    out
}

fn fill(out: &mut Vec<Vec<u32>>, cur: &mut Vec<u32>, pos: usize, left: u32) {
    if pos == cur.len() {
        if left == 0 {
            out.push(cur.clone());
        }
        return;
    }
    if pos + 1 == cur.len() {
        cur[pos] = left;
        out.push(cur.clone());
        cur[pos] = 0;
        return;
    }
    for e in (0..=left).rev() {
        cur[pos] = e;
        fill(out, cur, pos + 1, left - e);
    }
    cur[pos] = 0;
}

fn eval_monomials(exps: &[Vec<u32>], x: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.extend(exps.iter().map(|e| e.iter().zip(x).map(|(&p, &v)| v.powi(p as i32)).product::<f64>()));
}

#[derive(Debug, Clone, PartialEq)]
struct ComponentLayout {
    offset: usize,
    c_feats: Vec<Vec<u32>>,
    /// `p_feats[a]`: features multiplying `t^a` in `p_k`.
    p_feats: Vec<Vec<Vec<u32>>>,
}

impl ComponentLayout {
    fn n_params(&self) -> usize {
        self.c_feats.len() + self.p_feats.iter().map(Vec::len).sum::<usize>()
    }

    fn p_offset(&self, a: usize) -> usize {
        self.offset + self.c_feats.len() + self.p_feats[..a].iter().map(Vec::len).sum::<usize>()
    }
}

/// Intermediate values of one component at one point.
struct ComponentEval {
    c_mono: Vec<f64>,
    p_mono: Vec<Vec<f64>>,
    /// Coefficients of `p_k(t) = Σ_a b_a t^a`.
    b: Vec<f64>,
    u: f64,
    slope: f64,
    p_val: f64,
}

/// A monotone triangular map composed with a box squash.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangularMap {
    dim: usize,
    degree: usize,
    theta: Vec<f64>,
    bounds: UniformBox,
    layout: Vec<ComponentLayout>,
}

impl TriangularMap {
    pub fn init(dim: usize, degree: usize, bounds: UniformBox, mode: InitMode) -> Result<Self> {
        if dim == 0 {
            return Err(Error::contract("map dimension must be >= 1"));
        }
        check_dim(dim, bounds.dim())?;
        let q = degree.max(1) - 1;
        let mut layout = Vec::with_capacity(dim);
        let mut offset = 0;
        for k in 0..dim {
            let comp = ComponentLayout {
                offset,
                c_feats: monomials(k, degree),
                p_feats: (0..=q).map(|a| monomials(k, q - a)).collect(),
            };
            offset += comp.n_params();
            layout.push(comp);
        }
        let mut theta = vec![0.0; offset];
        for comp in &layout {
            // constant feature of the t^0 block
            theta[comp.p_offset(0)] = (1.0 - KAPPA).sqrt();
        }
        if let InitMode::Randomized { seed } = mode {
            let mut stream = StreamFactory::new(seed).stream(INIT, 0);
            for t in theta.iter_mut() {
                *t += 0.05 * stream.standard_normal();
            }
        }
        Ok(Self {
            dim,
            degree,
            theta,
            bounds,
            layout,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn n_params(&self) -> usize {
        self.theta.len()
    }

    pub fn bounds(&self) -> &UniformBox {
        &self.bounds
    }

    pub fn set_theta(&mut self, theta: &[f64]) -> Result<()> {
        check_dim(self.theta.len(), theta.len())?;
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::contract("map parameters must be finite"));
        }
        self.theta.copy_from_slice(theta);
        Ok(())
    }

    pub fn with_theta(&self, theta: &[f64]) -> Result<Self> {
        let mut m = self.clone();
        m.set_theta(theta)?;
        Ok(m)
    }

    /// Parameter index range owned by component `k`.
    pub fn component_params(&self, k: usize) -> std::ops::Range<usize> {
        let c = &self.layout[k];
        c.offset..c.offset + c.n_params()
    }

    /// Index of the parameter multiplying the constant feature of `c_k`.
    pub fn shift_param(&self, k: usize) -> usize {
        self.layout[k].offset
    }

    /// Index of the parameter multiplying the constant feature of the `t^0` block of `p_k`.
    pub fn scale_param(&self, k: usize) -> usize {
        self.layout[k].p_offset(0)
    }

    fn eval_component(&self, k: usize, x: &[f64]) -> ComponentEval {
        let comp = &self.layout[k];
        let prev = &x[..k];
        let xk = x[k];
        let mut c_mono = Vec::new();
        eval_monomials(&comp.c_feats, prev, &mut c_mono);
        let c: f64 = c_mono
            .iter()
            .zip(&self.theta[comp.offset..])
            .map(|(m, t)| m * t)
            .sum();
        let mut p_mono = Vec::with_capacity(comp.p_feats.len());
        let mut b = Vec::with_capacity(comp.p_feats.len());
        for (a, feats) in comp.p_feats.iter().enumerate() {
            let mut v = Vec::new();
            eval_monomials(feats, prev, &mut v);
            let off = comp.p_offset(a);
            b.push(v.iter().zip(&self.theta[off..]).map(|(m, t)| m * t).sum::<f64>());
            p_mono.push(v);
        }
        let integral = integral(&b, xk);
        let p_val = poly(&b, xk);
        ComponentEval {
            c_mono,
            p_mono,
            b,
            u: c + integral,
            slope: p_val * p_val + KAPPA,
            p_val,
        }
    }

    /// Core-stage output of component `k` with its diagonal derivative.
    fn core_component(&self, k: usize, x: &[f64]) -> (f64, f64) {
        let e = self.eval_component(k, x);
        (e.u, e.slope)
    }

    fn squash(&self, k: usize, u: f64) -> (f64, f64) {
        let rho = squash_rate();
        let w = self.bounds.width(k);
        let y = self.bounds.lo()[k] + w * sigmoid(rho * u);
        let logdet = (w * rho).ln() - softplus(-rho * u) - softplus(rho * u);
        (y, logdet)
    }

    pub fn forward(&self, x: &[f64]) -> Result<MapEvaluation> {
        check_dim(self.dim, x.len())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("map input must be finite"));
        }
        let mut y = Vec::with_capacity(self.dim);
        let mut logdet = 0.0;
        for k in 0..self.dim {
            let (u, slope) = self.core_component(k, x);
            if !(u.is_finite() && slope.is_finite()) {
                return Err(Error::Numeric {
                    component: k,
                    message: format!("feature evaluation overflowed at x = {x:?}"),
                });
            }
            let (yk, sq) = self.squash(k, u);
            y.push(yk);
            logdet += slope.ln() + sq;
        }
        Ok(MapEvaluation { y, logdet })
    }

    /// `ln det ∇T(x)` of the core stage alone.
    pub fn core_logdet(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        Ok((0..self.dim).map(|k| self.core_component(k, x).1.ln()).sum())
    }

    pub fn inverse(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, y.len())?;
        if !self.bounds.contains_strictly(y) {
            return Err(Error::domain(format!("{y:?} is not strictly inside the map's box")));
        }
        let rho = squash_rate();
        let mut x = vec![0.0; self.dim];
        for k in 0..self.dim {
            let t = (y[k] - self.bounds.lo()[k]) / self.bounds.width(k);
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::domain(format!("component {k} rounds onto the box boundary")));
            }
            let u = (t.ln() - (-t).ln_1p()) / rho;
            x[k] = self.solve_component(k, &mut x.clone(), u)?;
        }
        Ok(x)
    }

    /// Finds `x_k` with `core_k(x_<k, x_k) = target`.
    fn solve_component(&self, k: usize, x: &mut [f64], target: f64) -> Result<f64> {
        let residual = |v: f64, x: &mut [f64]| {
            x[k] = v;
            let (u, slope) = self.core_component(k, x);
            (u - target, slope)
        };
        let (r0, _) = residual(0.0, x);
        if r0 == 0.0 {
            return Ok(0.0);
        }
        // core_k is increasing with slope >= κ, so a bracket exists
        let dir = if r0 < 0.0 { 1.0 } else { -1.0 };
        let (mut lo, mut hi) = (0.0, dir);
        let mut expand = 0;
        loop {
            let (r, _) = residual(hi, x);
            if !r.is_finite() {
                return Err(Error::Numeric {
                    component: k,
                    message: "inverse bracket overflowed".into(),
                });
            }
            if r * dir >= 0.0 {
                break;
            }
            lo = hi;
            hi *= 2.0;
            expand += 1;
            if expand > 1100 {
                return Err(Error::Numeric {
                    component: k,
                    message: "could not bracket the inverse".into(),
                });
            }
        }
        if lo > hi {
            std::mem::swap(&mut lo, &mut hi);
        }
        let mut v = 0.5 * (lo + hi);
        for _ in 0..INVERSE_MAX_ITER {
            let (r, slope) = residual(v, x);
            if r == 0.0 {
                return Ok(v);
            }
            if r > 0.0 {
                hi = v;
            } else {
                lo = v;
            }
            let mut next = v - r / slope;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - v).abs() <= INVERSE_TOL * v.abs().max(1.0) || hi - lo <= INVERSE_TOL * v.abs().max(1.0) {
                return Ok(next);
            }
            v = next;
        }
        Err(Error::Numeric {
            component: k,
            message: format!("inverse did not converge in {INVERSE_MAX_ITER} iterations"),
        })
    }

    /// `ln π_ref(T⁻¹(y)) − ln det ∇T(T⁻¹(y))`.
    pub fn pushforward_logpdf(&self, reference: &GaussianDiag, y: &[f64]) -> Result<f64> {
        let x = self.inverse(y)?;
        let ev = self.forward(&x)?;
        Ok(log_pdf_gaussian_diag(&x, reference)? - ev.logdet)
    }

    /// Adds `∂/∂θ [gy · T(x) + gl · ln det ∇T(x)]` into `grad`.
    pub fn accumulate_grad(&self, x: &[f64], gy: &[f64], gl: f64, grad: &mut [f64]) -> Result<()> {
        check_dim(self.dim, x.len())?;
        check_dim(self.dim, gy.len())?;
        check_dim(self.theta.len(), grad.len())?;
        let rho = squash_rate();
        for k in 0..self.dim {
            let comp = &self.layout[k];
            let e = self.eval_component(k, x);
            let s = sigmoid(rho * e.u);
            let dy_du = self.bounds.width(k) * rho * s * (1.0 - s);
            let coef_u = gy[k] * dy_du + gl * rho * (1.0 - 2.0 * s);
            let coef_slope = gl * 2.0 * e.p_val / e.slope;
            for (m, v) in e.c_mono.iter().enumerate() {
                grad[comp.offset + m] += coef_u * v;
            }
            let xk = x[k];
            for (a, mono) in e.p_mono.iter().enumerate() {
                // ∂I/∂b_a = 2 Σ_b b_b x^{a+b+1}/(a+b+1)
                let di_db: f64 = e
                    .b
                    .iter()
                    .enumerate()
                    .map(|(bi, bv)| {
                        let pw = (a + bi + 1) as i32;
                        2.0 * bv * xk.powi(pw) / pw as f64
                    })
                    .sum();
                let dslope_db = xk.powi(a as i32);
                let off = comp.p_offset(a);
                for (m, v) in mono.iter().enumerate() {
                    grad[off + m] += (coef_u * di_db + coef_slope * dslope_db) * v;
                }
            }
        }
        Ok(())
    }

    /// `Σ_i ∂/∂θ [gy_i · T(x_i) + gl_i · ln det ∇T(x_i)]` over a batch.
    pub fn grad_theta(&self, xs: &SampleBatch, gy: &[Vec<f64>], gl: &[f64]) -> Result<Vec<f64>> {
        check_dim(xs.len(), gy.len())?;
        check_dim(xs.len(), gl.len())?;
        let mut grad = vec![0.0; self.theta.len()];
        for (i, x) in xs.rows().enumerate() {
            self.accumulate_grad(x, &gy[i], gl[i], &mut grad)?;
        }
        Ok(grad)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
        writeln!(s, "dim = {}", self.dim).unwrap();
        writeln!(s, "degree = {}", self.degree).unwrap();
        writeln!(s, "lo = {}", join(self.bounds.lo())).unwrap();
        writeln!(s, "hi = {}", join(self.bounds.hi())).unwrap();
        writeln!(s, "theta = {}", join(&self.theta)).unwrap();
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut fields = std::collections::HashMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("map record line without '=': {line}")))?;
            fields.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| fields.get(k).ok_or_else(|| Error::Parse(format!("map record lacks `{k}`")));
        let floats = |k: &str| -> Result<Vec<f64>> {
            get(k)?
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| Error::Parse(format!("{k}: {e}"))))
                .collect()
        };
        let int = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|e| Error::Parse(format!("{k}: {e}"))) };
        let dim = int("dim")?;
        let degree = int("degree")?;
        let bounds = UniformBox::new(floats("lo")?, floats("hi")?)?;
        let mut map = Self::init(dim, degree, bounds, InitMode::IdentityToBox)?;
        map.set_theta(&floats("theta")?)?;
        Ok(map)
    }
}

fn poly(b: &[f64], x: f64) -> f64 {
    b.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

/// `∫_0^x (p(t)^2 + κ) dt` for `p(t) = Σ_a b_a t^a`.
fn integral(b: &[f64], x: f64) -> f64 {
    let mut total = KAPPA * x;
    for (a, ba) in b.iter().enumerate() {
        for (c, bc) in b.iter().enumerate() {
            let pw = (a + c + 1) as i32;
            total += ba * bc * x.powi(pw) / pw as f64;
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prob::sample;
    use proptest::prelude::*;

    fn bounds2() -> UniformBox {
        UniformBox::cube(2, 0.0, 15.0).unwrap()
    }

    fn random_map(dim: usize, degree: usize, seed: u64) -> TriangularMap {
        TriangularMap::init(dim, degree, UniformBox::cube(dim, 0.0, 15.0).unwrap(), InitMode::Randomized { seed }).unwrap()
    }

    fn random_points(dim: usize, n: usize, seed: u64) -> SampleBatch {
        let f = StreamFactory::new(seed);
        sample(&GaussianDiag::standard(dim), n, &mut f.stream("test", 0)).unwrap()
    }

    fn fd_jacobian(map: &TriangularMap, x: &[f64], h: f64) -> Vec<Vec<f64>> {
        let d = x.len();
        let mut j = vec![vec![0.0; d]; d];
        for c in 0..d {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[c] += h;
            xm[c] -= h;
            let yp = map.forward(&xp).unwrap().y;
            let ym = map.forward(&xm).unwrap().y;
            for r in 0..d {
                j[r][c] = (yp[r] - ym[r]) / (2.0 * h);
            }
        }
        j
    }

    fn det(j: &[Vec<f64>]) -> f64 {
        match j.len() {
            1 => j[0][0],
            2 => j[0][0] * j[1][1] - j[0][1] * j[1][0],
            3 => {
                j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1]) - j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0])
                    + j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0])
            }
            _ => unimplemented!(),
        }
    }

    #[test]
    fn monomial_counts() {
        assert_eq!(monomials(0, 3), vec![Vec::<u32>::new()]);
        assert_eq!(monomials(1, 3).len(), 4);
        assert_eq!(monomials(2, 2).len(), 6);
        assert_eq!(monomials(3, 3).len(), 20);
    }

    #[test]
    fn identity_map_hits_box_center() {
        let map = TriangularMap::init(2, 1, bounds2(), InitMode::IdentityToBox).unwrap();
        let ev = map.forward(&[0.0, 0.0]).unwrap();
        assert!((ev.y[0] - 7.5).abs() < 1e-12 && (ev.y[1] - 7.5).abs() < 1e-12);
        let x = map.inverse(&[7.5, 7.5]).unwrap();
        assert!(x.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn identity_core_contributes_nothing() {
        let map = TriangularMap::init(2, 3, bounds2(), InitMode::IdentityToBox).unwrap();
        for x in random_points(2, 20, 3).rows() {
            assert!(map.core_logdet(x).unwrap().abs() < 1e-14);
            let ev = map.forward(x).unwrap();
            let sq: f64 = (0..2).map(|k| map.squash(k, x[k]).1).sum();
            assert!((ev.logdet - sq).abs() < 1e-13);
        }
    }

    #[test]
    fn squash_band() {
        let map = TriangularMap::init(1, 1, UniformBox::cube(1, 0.0, 1.0).unwrap(), InitMode::IdentityToBox).unwrap();
        assert!((map.forward(&[3.0]).unwrap().y[0] - 0.9).abs() < 1e-12);
        assert!((map.forward(&[-3.0]).unwrap().y[0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn randomized_init_is_seeded() {
        assert_eq!(random_map(2, 2, 9).theta(), random_map(2, 2, 9).theta());
        assert_ne!(random_map(2, 2, 9).theta(), random_map(2, 2, 10).theta());
    }

    #[test]
    fn triangularity() {
        let map = random_map(3, 3, 1);
        for x in random_points(3, 20, 4).rows() {
            let j = fd_jacobian(&map, x, 1e-6);
            for r in 0..3 {
                for c in r + 1..3 {
                    assert!(j[r][c].abs() < 1e-8, "J[{r}][{c}] = {}", j[r][c]);
                }
            }
            let mut xp = x.to_vec();
            xp[1] += 0.7;
            assert_eq!(map.forward(x).unwrap().y[0], map.forward(&xp).unwrap().y[0]);
        }
    }

    #[test]
    fn logdet_matches_finite_difference_jacobian() {
        for (dim, degree, seed) in [(1, 3, 1), (2, 1, 2), (2, 3, 3), (3, 2, 4)] {
            let map = random_map(dim, degree, seed);
            for x in random_points(dim, 10, seed + 100).rows() {
                let ld = map.forward(x).unwrap().logdet;
                let fd = det(&fd_jacobian(&map, x, 1e-5)).abs().ln();
                assert!((ld - fd).abs() <= 1e-5, "dim {dim} degree {degree}: {ld} vs {fd}");
            }
        }
    }

    #[test]
    fn monotone_on_many_points() {
        let map = random_map(2, 3, 5);
        for x in random_points(2, 1000, 6).rows() {
            for k in 0..2 {
                assert!(map.core_component(k, x).1 > 0.0);
            }
        }
    }

    #[test]
    fn round_trip() {
        let map = random_map(2, 3, 7);
        let f = StreamFactory::new(8);
        let mut s = f.stream("test", 0);
        for _ in 0..100 {
            let x = [8.0 * s.uniform() - 4.0, 8.0 * s.uniform() - 4.0];
            let back = map.inverse(&map.forward(&x).unwrap().y).unwrap();
            for k in 0..2 {
                assert!((back[k] - x[k]).abs() <= 1e-8, "{x:?} -> {back:?}");
            }
        }
    }

    #[test]
    fn inverse_residual() {
        let map = random_map(2, 3, 11);
        for y in [[1.0, 14.0], [7.0, 2.5], [0.3, 0.3]] {
            let x = map.inverse(&y).unwrap();
            let back = map.forward(&x).unwrap().y;
            assert!((back[0] - y[0]).abs() <= 1e-10 && (back[1] - y[1]).abs() <= 1e-10);
        }
    }

    #[test]
    fn inverse_rejects_boundary() {
        let map = random_map(2, 1, 1);
        assert!(matches!(map.inverse(&[0.0, 3.0]), Err(Error::Domain(_))));
        assert!(matches!(map.inverse(&[16.0, 3.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn inverse_grows_toward_boundary() {
        let map = TriangularMap::init(1, 2, UniformBox::cube(1, 0.0, 15.0).unwrap(), InitMode::IdentityToBox).unwrap();
        let mut last = 0.0;
        for y in [8.0, 10.0, 12.0, 14.0, 14.9, 14.99, 14.999] {
            let x = map.inverse(&[y]).unwrap()[0];
            assert!(x > last);
            last = x;
        }
    }

    #[test]
    fn pushforward_at_center() {
        let map = TriangularMap::init(2, 1, bounds2(), InitMode::IdentityToBox).unwrap();
        let reference = GaussianDiag::standard(2);
        let got = map.pushforward_logpdf(&reference, &[7.5, 7.5]).unwrap();
        let want = log_pdf_gaussian_diag(&[0.0, 0.0], &reference).unwrap() - map.forward(&[0.0, 0.0]).unwrap().logdet;
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn doubling_slope_lowers_density_by_ln2() {
        let bounds = UniformBox::cube(1, 0.0, 15.0).unwrap();
        let base = TriangularMap::init(1, 1, bounds, InitMode::IdentityToBox).unwrap();
        let mut steep = base.clone();
        let mut th = steep.theta().to_vec();
        th[steep.scale_param(0)] = (2.0 - KAPPA).sqrt();
        steep.set_theta(&th).unwrap();
        let reference = GaussianDiag::standard(1);
        let y = base.forward(&[0.0]).unwrap().y;
        assert_eq!(y, steep.forward(&[0.0]).unwrap().y);
        let diff = base.pushforward_logpdf(&reference, &y).unwrap() - steep.pushforward_logpdf(&reference, &y).unwrap();
        assert!((diff - 2f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn pushforward_integrates_to_one() {
        let map = random_map(2, 2, 12);
        let reference = GaussianDiag::standard(2);
        let n = 200;
        let h = 15.0 / n as f64;
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                // midpoints keep every node strictly inside
                let y = [(i as f64 + 0.5) * h, (j as f64 + 0.5) * h];
                total += map.pushforward_logpdf(&reference, &y).unwrap().exp() * h * h;
            }
        }
        assert!((total - 1.0).abs() <= 1e-2, "mass {total}");
    }

    #[test]
    fn empirical_pushforward_matches_density_1d() {
        let bounds = UniformBox::cube(1, 0.0, 15.0).unwrap();
        let map = TriangularMap::init(1, 3, bounds, InitMode::Randomized { seed: 4 }).unwrap();
        let reference = GaussianDiag::standard(1);
        let xs = random_points(1, 100_000, 13);
        let mut ys: Vec<f64> = xs.rows().map(|x| map.forward(x).unwrap().y[0]).collect();
        ys.sort_by(f64::total_cmp);
        // model CDF by midpoint quadrature of the pushforward density
        let n = 20_000;
        let h = 15.0 / n as f64;
        let mut cdf = Vec::with_capacity(n + 1);
        cdf.push((0.0, 0.0));
        let mut acc = 0.0;
        for i in 0..n {
            acc += map.pushforward_logpdf(&reference, &[(i as f64 + 0.5) * h]).unwrap().exp() * h;
            cdf.push(((i + 1) as f64 * h, acc));
        }
        let mut ks: f64 = 0.0;
        let total = ys.len() as f64;
        let mut idx = 0;
        for (y, c) in &cdf {
            while idx < ys.len() && ys[idx] <= *y {
                idx += 1;
            }
            ks = ks.max((idx as f64 / total - c).abs());
        }
        assert!(ks <= 0.02, "KS distance {ks}");
    }

    fn batch_objective(map: &TriangularMap, xs: &SampleBatch, gy: &[Vec<f64>], gl: &[f64]) -> f64 {
        xs.rows()
            .enumerate()
            .map(|(i, x)| {
                let ev = map.forward(x).unwrap();
                ev.y.iter().zip(&gy[i]).map(|(a, b)| a * b).sum::<f64>() + gl[i] * ev.logdet
            })
            .sum()
    }

    #[test]
    fn gradient_matches_central_differences() {
        for (dim, degree, seed) in [(1, 3, 21), (2, 1, 22), (2, 3, 23), (3, 2, 24)] {
            let map = random_map(dim, degree, seed);
            let xs = random_points(dim, 8, seed + 1);
            let f = StreamFactory::new(seed);
            let mut s = f.stream("up", 0);
            let gy: Vec<Vec<f64>> = (0..8).map(|_| (0..dim).map(|_| s.standard_normal()).collect()).collect();
            let gl: Vec<f64> = (0..8).map(|_| s.standard_normal()).collect();
            let grad = map.grad_theta(&xs, &gy, &gl).unwrap();
            let h = 1e-5;
            for p in 0..map.n_params() {
                let mut tp = map.theta().to_vec();
                let mut tm = map.theta().to_vec();
                tp[p] += h;
                tm[p] -= h;
                let fd = (batch_objective(&map.with_theta(&tp).unwrap(), &xs, &gy, &gl)
                    - batch_objective(&map.with_theta(&tm).unwrap(), &xs, &gy, &gl))
                    / (2.0 * h);
                let rel = (grad[p] - fd).abs() / fd.abs().max(grad[p].abs()).max(1e-3);
                assert!(rel <= 1e-4, "dim {dim} degree {degree} param {p}: {} vs {fd}", grad[p]);
            }
        }
    }

    #[test]
    fn zero_upstream_and_duplicates() {
        let map = random_map(2, 2, 31);
        let xs = random_points(2, 3, 32);
        let zero = map.grad_theta(&xs, &vec![vec![0.0; 2]; 3], &[0.0; 3]).unwrap();
        assert!(zero.iter().all(|g| *g == 0.0));

        let one = SampleBatch::from_rows(xs.row(0).to_vec(), 2, 0).unwrap();
        let two = SampleBatch::from_rows([xs.row(0), xs.row(0)].concat(), 2, 0).unwrap();
        let g1 = map.grad_theta(&one, &[vec![0.3, -1.0]], &[0.5]).unwrap();
        let g2 = map.grad_theta(&two, &[vec![0.3, -1.0], vec![0.3, -1.0]], &[0.5, 0.5]).unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            assert!((2.0 * a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn parameters_are_separated_by_component() {
        let map = random_map(2, 3, 41);
        let xs = random_points(2, 4, 42);
        let g = map.grad_theta(&xs, &vec![vec![1.0, 0.0]; 4], &[0.0; 4]).unwrap();
        assert!(g[map.component_params(1)].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn text_round_trip_is_bit_exact() {
        let map = random_map(2, 3, 51);
        let back = TriangularMap::from_text(&map.to_text()).unwrap();
        assert_eq!(map, back);
        assert!(TriangularMap::from_text("dim = 2\n").is_err());
    }

    proptest! {
        #[test]
        fn round_trip_on_reference_cube(seed in 0u64..1000, a in -4.0f64..4.0, b in -4.0f64..4.0) {
            let map = random_map(2, 3, seed);
            let y = map.forward(&[a, b]).unwrap().y;
            // closer to the box edge, y itself cannot resolve x to 1e-8
            prop_assume!(y.iter().all(|v| v.min(15.0 - v) >= 15.0 * 1e-6));
            let back = map.inverse(&y).unwrap();
            prop_assert!((back[0] - a).abs() <= 1e-8 && (back[1] - b).abs() <= 1e-8);
        }

        #[test]
        fn inverse_reproduces_the_image(seed in 0u64..1000, a in -4.0f64..4.0, b in -4.0f64..4.0) {
            let map = random_map(2, 3, seed);
            let y = map.forward(&[a, b]).unwrap().y;
            let again = map.forward(&map.inverse(&y).unwrap()).unwrap().y;
            prop_assert!((again[0] - y[0]).abs() <= 1e-10 && (again[1] - y[1]).abs() <= 1e-10);
        }

        #[test]
        fn image_stays_inside(seed in 0u64..1000, a in -4.0f64..4.0, b in -4.0f64..4.0) {
            let map = random_map(2, 2, seed);
            let ev = map.forward(&[a, b]).unwrap();
            prop_assert!(map.bounds().contains_strictly(&ev.y));
            prop_assert!(ev.logdet.is_finite());
        }
    }
}
