//! The scalar toy problem behind the Jensen bias: `φ_w(y, z) = √(2/π) exp(−2(5y + wz)²)`
//! with `y, z ~ N(0, 1)`, comparing `E_y ln E_z φ` against `E_y E_z ln φ`.

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::prob::logsumexp;
use crate::report::fmt_f64;
use crate::rng::{Stream, StreamFactory};

pub const JENSEN_STREAM: &str = "bias-jensen";
pub const NMC_STREAM: &str = "bias-nmc";

#[derive(Debug, Clone, PartialEq)]
pub struct BiasDemoConfig {
    /// Total sample budget per estimate.
    pub s: usize,
    pub runs: usize,
    pub w_lo: f64,
    pub w_hi: f64,
    pub n_points: usize,
    pub seed: u64,
}

impl Default for BiasDemoConfig {
    fn default() -> Self {
        Self {
            s: 4096,
            runs: 100,
            w_lo: -8.0,
            w_hi: 8.0,
            n_points: 321,
            seed: 0,
        }
    }
}

impl BiasDemoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.s < 4 {
            return Err(Error::config(format!("bias-demo s must be >= 4, got {}", self.s)));
        }
        if self.runs == 0 {
            return Err(Error::config("bias-demo runs must be >= 1"));
        }
        if self.n_points < 2 {
            return Err(Error::config(format!("bias-demo w-points must be >= 2, got {}", self.n_points)));
        }
        if !(self.w_lo.is_finite() && self.w_hi.is_finite() && self.w_lo < self.w_hi) {
            return Err(Error::config(format!(
                "bias-demo needs finite w-lo < w-hi, got [{}, {}]",
                self.w_lo, self.w_hi
            )));
        }
        Ok(())
    }

    pub fn w_grid(&self) -> Vec<f64> {
        let step = (self.w_hi - self.w_lo) / (self.n_points - 1) as f64;
        (0..self.n_points).map(|i| self.w_lo + step * i as f64).collect()
    }
}

pub fn ln_phi(w: f64, y: f64, z: f64) -> f64 {
    0.5 * (2.0 / PI).ln() - 2.0 * (5.0 * y + w * z).powi(2)
}

/// `E_y ln E_z φ_w = −½ ln((2w² + ½)π) − 25 / (2w² + ½)`.
pub fn i_star_closed(w: f64) -> f64 {
    let u = 2.0 * w * w + 0.5;
    -0.5 * (u * PI).ln() - 25.0 / u
}

/// `E_y E_z ln φ_w = ½ ln(2/π) − 2(25 + w²)`.
pub fn i_j_closed(w: f64) -> f64 {
    0.5 * (2.0 / PI).ln() - 2.0 * (25.0 + w * w)
}

/// Inner and outer sizes of the nested estimator: `m = ⌊√s⌋`, `n = ⌊s/m⌋`.
pub fn nested_split(s: usize) -> (usize, usize) {
    let mut m = (s as f64).sqrt().floor() as usize;
    while (m + 1) * (m + 1) <= s {
        m += 1;
    }
    while m * m > s {
        m -= 1;
    }
    (m.max(1), s / m.max(1))
}

/// Draws reused across every `w` of one run.
#[derive(Debug, Clone)]
struct Draws {
    y: Vec<f64>,
    z: Vec<f64>,
}

impl Draws {
    fn new(ny: usize, nz: usize, stream: &mut Stream) -> Self {
        Self {
            y: (0..ny).map(|_| stream.standard_normal()).collect(),
            z: (0..nz).map(|_| stream.standard_normal()).collect(),
        }
    }

    fn jensen(&self, w: f64) -> f64 {
        let total: f64 = self.y.iter().zip(&self.z).map(|(y, z)| ln_phi(w, *y, *z)).sum();
        total / self.y.len() as f64
    }

    fn nested(&self, w: f64) -> f64 {
        let m = self.z.len() / self.y.len();
        let mut inner = vec![0.0; m];
        let mut total = 0.0;
        for (i, y) in self.y.iter().enumerate() {
            for (v, z) in inner.iter_mut().zip(&self.z[i * m..(i + 1) * m]) {
                *v = ln_phi(w, *y, *z);
            }
            total += logsumexp(&inner).expect("finite") - (m as f64).ln();
        }
        total / self.y.len() as f64
    }
}

/// Plain Monte Carlo estimate of `I_J` from `s` independent `(y, z)` pairs.
pub fn i_j_mc(w: f64, s: usize, stream: &mut Stream) -> Result<f64> {
    if s == 0 {
        return Err(Error::config("estimator needs s >= 1"));
    }
    Ok(Draws::new(s, s, stream).jensen(w))
}

/// Nested Monte Carlo estimate of `I_*`.
pub fn i_star_nmc(w: f64, s: usize, stream: &mut Stream) -> Result<f64> {
    if s < 4 {
        return Err(Error::config("nested estimator needs s >= 4"));
    }
    let (m, n) = nested_split(s);
    Ok(Draws::new(n, n * m, stream).nested(w))
}

/// Grid argmax; ties go to the smallest `w`.
pub fn argmax_scan(f: impl Fn(f64) -> f64, w_grid: &[f64]) -> Result<(f64, f64)> {
    let mut best: Option<(f64, f64)> = None;
    for &w in w_grid {
        let v = f(w);
        best = match best {
            Some((bw, bv)) if bv > v || (bv == v && bw <= w) => Some((bw, bv)),
            _ => Some((w, v)),
        };
    }
    best.ok_or_else(|| Error::contract("argmax over an empty grid"))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl RunStats {
    fn of(values: &[f64]) -> Self {
        Self {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            min: values.iter().cloned().fold(f64::INFINITY, f64::min),
            max: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BiasScan {
    pub w: Vec<f64>,
    pub jensen: Vec<RunStats>,
    pub nested: Vec<RunStats>,
    /// Raw estimates, `[run][w]`.
    pub jensen_runs: Vec<Vec<f64>>,
    pub nested_runs: Vec<Vec<f64>>,
}

impl BiasScan {
    fn argmax_of(&self, stats: &[RunStats]) -> (f64, f64) {
        let lookup = |w: f64| stats[self.w.iter().position(|x| *x == w).expect("grid point")].mean;
        argmax_scan(lookup, &self.w).expect("nonempty grid")
    }

    pub fn jensen_argmax(&self) -> (f64, f64) {
        self.argmax_of(&self.jensen)
    }

    pub fn nested_argmax(&self) -> (f64, f64) {
        self.argmax_of(&self.nested)
    }

    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(
            out,
            "w,I_star_closed,I_J_closed,I_J_mc_mean,I_J_mc_min,I_J_mc_max,I_star_nmc_mean,I_star_nmc_min,I_star_nmc_max"
        )?;
        for (k, w) in self.w.iter().enumerate() {
            let (j, n) = (self.jensen[k], self.nested[k]);
            let row = [*w, i_star_closed(*w), i_j_closed(*w), j.mean, j.min, j.max, n.mean, n.min, n.max];
            let cells: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// Runs both estimators `runs` times over the w grid. Each run owns one stream per
/// estimator and reuses its draws for every `w`.
pub fn run_scan(cfg: &BiasDemoConfig) -> Result<BiasScan> {
    cfg.validate()?;
    let w = cfg.w_grid();
    let factory = StreamFactory::new(cfg.seed);
    let (m, n) = nested_split(cfg.s);
    let per_run: Vec<(Vec<f64>, Vec<f64>)> = (0..cfg.runs as u64)
        .into_par_iter()
        .map(|r| {
            let plain = Draws::new(cfg.s, cfg.s, &mut factory.stream(JENSEN_STREAM, r));
            let nested = Draws::new(n, n * m, &mut factory.stream(NMC_STREAM, r));
            (
                w.iter().map(|w| plain.jensen(*w)).collect(),
                w.iter().map(|w| nested.nested(*w)).collect(),
            )
        })
        .collect();
    let (jensen_runs, nested_runs): (Vec<_>, Vec<_>) = per_run.into_iter().unzip();
    let column = |runs: &[Vec<f64>], k: usize| RunStats::of(&runs.iter().map(|r| r[k]).collect::<Vec<_>>());
    Ok(BiasScan {
        jensen: (0..w.len()).map(|k| column(&jensen_runs, k)).collect(),
        nested: (0..w.len()).map(|k| column(&nested_runs, k)).collect(),
        w,
        jensen_runs,
        nested_runs,
    })
}
