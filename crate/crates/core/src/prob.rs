//! Probability primitives: the two density families used throughout the crate,
//! sample batches, and log-space reductions.

use crate::error::{check_dim, Error, Result};
use crate::rng::Stream;

/// `0.5 * ln(2π)`
pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Gaussian with diagonal covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDiag {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl GaussianDiag {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        check_dim(mean.len(), std.len())?;
        if mean.is_empty() {
            return Err(Error::contract("gaussian needs at least one dimension"));
        }
        if let Some(s) = std.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::contract(format!("standard deviation must be > 0, got {s}")));
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::contract("gaussian mean must be finite"));
        }
        Ok(Self { mean, std })
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    /// Sum of `-ln(std_k * sqrt(2π))`, the log-density at the mean.
    pub fn log_norm(&self) -> f64 {
        self.std.iter().map(|s| -(s.ln() + LN_SQRT_2PI)).sum()
    }
}

/// Axis-aligned box `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl UniformBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        check_dim(lo.len(), hi.len())?;
        if lo.is_empty() {
            return Err(Error::contract("box needs at least one dimension"));
        }
        for (k, (l, h)) in lo.iter().zip(&hi).enumerate() {
            if !(l.is_finite() && h.is_finite() && l < h) {
                return Err(Error::contract(format!(
                    "box axis {k}: need finite lo < hi, got [{l}, {h}]"
                )));
            }
        }
        Ok(Self { lo, hi })
    }

    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn width(&self, k: usize) -> f64 {
        self.hi[k] - self.lo[k]
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (l + h)).collect()
    }

    /// Log-density inside the box, `-Σ ln(hi_k - lo_k)`.
    pub fn log_volume_density(&self) -> f64 {
        -(0..self.dim()).map(|k| self.width(k).ln()).sum::<f64>()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| *v >= *l && *v <= *h)
    }

    pub fn contains_strictly(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| *v > *l && *v < *h)
    }
}

/// `n × d` matrix of draws, row-major, tagged with the producing stream.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    points: Vec<f64>,
    dim: usize,
    seed_tag: u64,
}

impl SampleBatch {
    pub fn from_rows(points: Vec<f64>, dim: usize, seed_tag: u64) -> Result<Self> {
        if dim == 0 || points.is_empty() || points.len() % dim != 0 {
            return Err(Error::contract(format!(
                "sample batch needs n >= 1 rows of dim {dim}, got {} values",
                points.len()
            )));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("sample batch contains NaN or Inf"));
        }
        Ok(Self {
            points,
            dim,
            seed_tag,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed_tag(&self) -> u64 {
        self.seed_tag
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.points.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.points
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.rows().map(|r| r[k]).collect()
    }

    pub fn column_mean(&self, k: usize) -> f64 {
        self.rows().map(|r| r[k]).sum::<f64>() / self.len() as f64
    }
}

/// Something with a log-density and a sampler.
pub trait Density {
    fn dim(&self) -> usize;
    fn log_pdf(&self, x: &[f64]) -> Result<f64>;
    fn draw_into(&self, stream: &mut Stream, out: &mut [f64]);
}

impl Density for GaussianDiag {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_pdf(&self, x: &[f64]) -> Result<f64> {
        log_pdf_gaussian_diag(x, self)
    }

    fn draw_into(&self, stream: &mut Stream, out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.mean[k] + self.std[k] * stream.standard_normal();
        }
    }
}

impl Density for UniformBox {
    fn dim(&self) -> usize {
        self.lo.len()
    }

    fn log_pdf(&self, x: &[f64]) -> Result<f64> {
        Ok(log_pdf_uniform_box(x, self))
    }

    fn draw_into(&self, stream: &mut Stream, out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.lo[k] + self.width(k) * stream.uniform();
        }
    }
}

pub fn log_pdf_gaussian_diag(x: &[f64], g: &GaussianDiag) -> Result<f64> {
    check_dim(g.mean.len(), x.len())?;
    Ok(x.iter()
        .zip(g.mean.iter().zip(&g.std))
        .map(|(xk, (m, s))| {
            let r = (xk - m) / s;
            -(s.ln() + LN_SQRT_2PI) - 0.5 * r * r
        })
        .sum())
}

/// Log-density of the uniform distribution on the closed box, `-inf` outside.
pub fn log_pdf_uniform_box(x: &[f64], b: &UniformBox) -> f64 {
    if b.contains(x) {
        b.log_volume_density()
    } else {
        f64::NEG_INFINITY
    }
}

/// `n` i.i.d. draws from `density`.
pub fn sample<D: Density + ?Sized>(density: &D, n: usize, stream: &mut Stream) -> Result<SampleBatch> {
    if n == 0 {
        return Err(Error::contract("sample count must be >= 1"));
    }
    let dim = density.dim();
    let mut points = vec![0.0; n * dim];
    for row in points.chunks_exact_mut(dim) {
        density.draw_into(stream, row);
    }
    SampleBatch::from_rows(points, dim, stream.tag())
}

/// `ln Σ exp(v_j)`, shifted by the maximum. All `-inf` input gives `-inf`.
pub fn logsumexp(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::contract("logsumexp of an empty vector"));
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    if max == f64::INFINITY {
        return Ok(f64::INFINITY);
    }
    let sum: f64 = v.iter().map(|x| (x - max).exp()).sum();
    Ok(max + sum.ln())
}

/// Numerically stable `ln(1 + exp(x))`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
