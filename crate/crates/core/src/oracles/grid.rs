use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::models::{ForwardModelHandle, ModelPair, Observation};
use crate::prob::{log_pdf_uniform_box, logsumexp, SampleBatch, UniformBox};
use crate::rng::Stream;

/// Log-density tabulated on a tensor grid, normalized under the trapezoid rule.
/// Points are stored row-major with the last axis fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    axes: Vec<Vec<f64>>,
    logp: Vec<f64>,
    log_weights: Vec<f64>,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn trapezoid(axis: &[f64]) -> Vec<f64> {
    let n = axis.len();
    (0..n)
        .map(|i| {
            let left = if i > 0 { axis[i] - axis[i - 1] } else { 0.0 };
            let right = if i + 1 < n { axis[i + 1] - axis[i] } else { 0.0 };
            0.5 * (left + right)
        })
        .collect()
}

impl GridDensity {
    /// Normalizes `logp` (any additive constant) on the given axes.
    pub fn from_log_values(axes: Vec<Vec<f64>>, mut logp: Vec<f64>) -> Result<Self> {
        if axes.is_empty() || axes.iter().any(|a| a.len() < 2) {
            return Err(Error::contract("grid needs at least two nodes per axis"));
        }
        let size: usize = axes.iter().map(Vec::len).product();
        check_dim(size, logp.len())?;
        let per_axis: Vec<Vec<f64>> = axes.iter().map(|a| trapezoid(a)).collect();
        let mut log_weights = vec![0.0; size];
        for (idx, lw) in log_weights.iter_mut().enumerate() {
            let mut rem = idx;
            for k in (0..axes.len()).rev() {
                let n = axes[k].len();
                *lw += per_axis[k][rem % n].ln();
                rem /= n;
            }
        }
        let terms: Vec<f64> = logp.iter().zip(&log_weights).map(|(a, b)| a + b).collect();
        let log_z = logsumexp(&terms)?;
        if !log_z.is_finite() {
            return Err(Error::config("posterior density vanishes on the whole grid"));
        }
        logp.iter_mut().for_each(|v| *v -= log_z);
        Ok(Self {
            axes,
            logp,
            log_weights,
        })
    }

    pub fn from_fn(axes: Vec<Vec<f64>>, mut f: impl FnMut(&[f64]) -> f64) -> Result<Self> {
        let size: usize = axes.iter().map(Vec::len).product();
        let mut logp = Vec::with_capacity(size);
        let mut p = vec![0.0; axes.len()];
        for idx in 0..size {
            point_into(&axes, idx, &mut p);
            logp.push(f(&p));
        }
        Self::from_log_values(axes, logp)
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.logp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logp.is_empty()
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    pub fn logp(&self) -> &[f64] {
        &self.logp
    }

    pub fn point(&self, idx: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.dim()];
        point_into(&self.axes, idx, &mut p);
        p
    }

    /// Trapezoid weight times density at every node.
    pub fn masses(&self) -> Vec<f64> {
        self.logp.iter().zip(&self.log_weights).map(|(a, b)| (a + b).exp()).collect()
    }

    /// Draws nodes in proportion to their quadrature mass, then spreads each draw
    /// uniformly over the surrounding half-cells.
    pub fn sample(&self, count: usize, stream: &mut Stream) -> Result<SampleBatch> {
        if count == 0 {
            return Err(Error::contract("sample count must be >= 1"));
        }
        let mut cdf = self.masses();
        let mut acc = 0.0;
        for c in cdf.iter_mut() {
            acc += *c;
            *c = acc;
        }
        let d = self.dim();
        let mut out = Vec::with_capacity(count * d);
        let mut p = vec![0.0; d];
        for _ in 0..count {
            let u = stream.uniform() * acc;
            let idx = cdf.partition_point(|c| *c < u).min(cdf.len() - 1);
            point_into(&self.axes, idx, &mut p);
            for (k, axis) in self.axes.iter().enumerate() {
                let h = axis[1] - axis[0];
                let x = p[k] + (stream.uniform() - 0.5) * h;
                out.push(x.clamp(axis[0], axis[axis.len() - 1]));
            }
        }
        SampleBatch::from_rows(out, d, stream.tag())
    }

    /// Trapezoid integral of the density; 1 up to rounding.
    pub fn total_mass(&self) -> f64 {
        self.masses().iter().sum()
    }

    /// `∫ g(x) p(x) dx` by the trapezoid rule.
    pub fn expectation(&self, mut g: impl FnMut(&[f64]) -> f64) -> f64 {
        let mut p = vec![0.0; self.dim()];
        self.masses()
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > 0.0)
            .map(|(idx, w)| {
                point_into(&self.axes, idx, &mut p);
                w * g(&p)
            })
            .sum()
    }

    pub fn mean(&self) -> Vec<f64> {
        (0..self.dim()).map(|k| self.expectation(|x| x[k])).collect()
    }

    pub fn covariance(&self) -> Vec<Vec<f64>> {
        let mean = self.mean();
        let d = self.dim();
        let mut cov = vec![vec![0.0; d]; d];
        for a in 0..d {
            for b in a..d {
                let v = self.expectation(|x| (x[a] - mean[a]) * (x[b] - mean[b]));
                cov[a][b] = v;
                cov[b][a] = v;
            }
        }
        cov
    }

    /// Marginal density of axis `k` on its nodes.
    pub fn marginal(&self, k: usize) -> Vec<f64> {
        let n = self.axes[k].len();
        let w = trapezoid(&self.axes[k]);
        let mut out = vec![0.0; n];
        let stride: usize = self.axes[k + 1..].iter().map(Vec::len).product();
        for (idx, m) in self.masses().iter().enumerate() {
            out[(idx / stride) % n] += m;
        }
        out.iter_mut().zip(&w).for_each(|(o, w)| *o /= w);
        out
    }

    /// Quantile of the axis-`k` marginal from its piecewise-linear CDF.
    pub fn quantile(&self, k: usize, q: f64) -> f64 {
        let axis = &self.axes[k];
        let dens = self.marginal(k);
        let mut cdf = vec![0.0; axis.len()];
        for i in 1..axis.len() {
            cdf[i] = cdf[i - 1] + 0.5 * (dens[i] + dens[i - 1]) * (axis[i] - axis[i - 1]);
        }
        let total = *cdf.last().unwrap();
        let target = q * total;
        match cdf.iter().position(|c| *c >= target) {
            None => *axis.last().unwrap(),
            Some(0) => axis[0],
            Some(i) => {
                let span = cdf[i] - cdf[i - 1];
                let t = if span > 0.0 { (target - cdf[i - 1]) / span } else { 0.0 };
                axis[i - 1] + t * (axis[i] - axis[i - 1])
            }
        }
    }

    /// CSV with one column per axis and a `logp` column.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        let header: Vec<String> = (1..=self.dim()).map(|k| format!("x{k}")).chain(["logp".into()]).collect();
        writeln!(w, "{}", header.join(","))?;
        for idx in 0..self.len() {
            let p = self.point(idx);
            let cols: Vec<String> = p.iter().chain([&self.logp[idx]]).map(|v| format!("{v:.16e}")).collect();
            writeln!(w, "{}", cols.join(","))?;
        }
        Ok(())
    }
}

fn point_into(axes: &[Vec<f64>], idx: usize, out: &mut [f64]) {
    let mut rem = idx;
    for k in (0..axes.len()).rev() {
        let n = axes[k].len();
        out[k] = axes[k][rem % n];
        rem /= n;
    }
}

fn prior_axes(prior: &UniformBox, resolution: usize) -> Result<Vec<Vec<f64>>> {
    if prior.dim() > 2 {
        return Err(Error::Unsupported(format!("grid oracles support dimension <= 2, got {}", prior.dim())));
    }
    if resolution < 64 {
        return Err(Error::config(format!("grid resolution must be >= 64, got {resolution}")));
    }
    Ok((0..prior.dim())
        .map(|k| linspace(prior.lo()[k], prior.hi()[k], resolution))
        .collect())
}

fn eval_on_grid(model: &ForwardModelHandle, axes: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let size: usize = axes.iter().map(Vec::len).product();
    (0..size)
        .into_par_iter()
        .map(|idx| {
            let mut p = vec![0.0; axes.len()];
            point_into(axes, idx, &mut p);
            model.evaluate(&p)
        })
        .collect()
}

/// Plain Bayes posterior `∝ Π_j π_η(y_j − model(x)) π_X(x)` on a `resolution^dim` grid.
pub fn grid_posterior(
    model: &ForwardModelHandle,
    prior: &UniformBox,
    obs: &Observation,
    resolution: usize,
) -> Result<GridDensity> {
    check_dim(prior.dim(), model.dim_in())?;
    let axes = prior_axes(prior, resolution)?;
    let values = eval_on_grid(model, &axes)?;
    let logp = values
        .iter()
        .enumerate()
        .map(|(idx, v)| {
            let mut p = vec![0.0; axes.len()];
            point_into(&axes, idx, &mut p);
            obs.log_likelihood(v) + log_pdf_uniform_box(&p, prior)
        })
        .collect();
    GridDensity::from_log_values(axes, logp)
}

/// A converged fixed point with its diagnostics.
#[derive(Debug, Clone)]
pub struct FixedPoint {
    pub density: GridDensity,
    pub sweeps: usize,
    /// Sup-norm change of the density in the last sweep, relative to its peak.
    pub residual: f64,
}

/// Everything one sweep of the fixed-point operator needs.
struct Operator<'a> {
    axes: Vec<Vec<f64>>,
    obs: &'a Observation,
    prior_log: Vec<f64>,
    f_vals: Vec<Vec<f64>>,
    m_vals: Vec<Vec<f64>>,
    componentwise: bool,
}

impl<'a> Operator<'a> {
    fn build(pair: &ModelPair, prior: &UniformBox, obs: &'a Observation, axes: Vec<Vec<f64>>) -> Result<Self> {
        let f_vals = eval_on_grid(&pair.reduced, &axes)?;
        let exact_vals = eval_on_grid(&pair.exact, &axes)?;
        let m_vals = exact_vals
            .iter()
            .zip(&f_vals)
            .map(|(e, f)| e.iter().zip(f).map(|(a, b)| a - b).collect())
            .collect();
        let mut p = vec![0.0; axes.len()];
        let prior_log = (0..f_vals.len())
            .map(|idx| {
                point_into(&axes, idx, &mut p);
                log_pdf_uniform_box(&p, prior)
            })
            .collect();
        Ok(Self {
            axes,
            obs,
            prior_log,
            f_vals,
            m_vals,
            componentwise: pair.componentwise(),
        })
    }

    /// `ln π_X(x) + ln ∫ Π_j π_η(y_j − f(x) − M(z)) π(z) dz` at every node, unnormalized.
    fn apply(&self, current: &GridDensity) -> Result<Vec<f64>> {
        if self.componentwise && self.axes.len() == 2 {
            return self.apply_separable(current);
        }
        let log_mass: Vec<f64> = current.logp.iter().zip(&current.log_weights).map(|(a, b)| a + b).collect();
        let peak = log_mass.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        // z nodes below 1e-18 of the peak mass are negligible
        let support: Vec<usize> = (0..log_mass.len()).filter(|&j| log_mass[j] >= peak - 41.5).collect();
        (0..self.f_vals.len())
            .into_par_iter()
            .map(|i| {
                if self.prior_log[i] == f64::NEG_INFINITY {
                    return Ok(f64::NEG_INFINITY);
                }
                let f = &self.f_vals[i];
                let mut pred = vec![0.0; f.len()];
                let terms: Vec<f64> = support
                    .iter()
                    .map(|&j| {
                        for (p, (a, b)) in pred.iter_mut().zip(f.iter().zip(&self.m_vals[j])) {
                            *p = a + b;
                        }
                        log_mass[j] + self.obs.log_likelihood(&pred)
                    })
                    .collect();
                Ok(self.prior_log[i] + logsumexp(&terms)?)
            })
            .collect()
    }

    /// Separable likelihood in two dimensions: `S = K1 · (W∘π) · K2ᵀ` with each kernel
    /// row shifted by its maximum over the support of the current density. Entries whose
    /// scaled product underflows while they could still matter are redone in log space.
    fn apply_separable(&self, current: &GridDensity) -> Result<Vec<f64>> {
        let n1 = self.axes[0].len();
        let n2 = self.axes[1].len();
        // f_k and M_k depend on axis k only
        let f1: Vec<f64> = (0..n1).map(|i| self.f_vals[i * n2][0]).collect();
        let f2: Vec<f64> = (0..n2).map(|j| self.f_vals[j][1]).collect();
        let m1: Vec<f64> = (0..n1).map(|i| self.m_vals[i * n2][0]).collect();
        let m2: Vec<f64> = (0..n2).map(|j| self.m_vals[j][1]).collect();
        let log_mass: Vec<f64> = current.logp.iter().zip(&current.log_weights).map(|(a, b)| a + b).collect();
        let peak = log_mass.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let a = DMatrix::from_fn(n1, n2, |i, j| (log_mass[i * n2 + j] - peak).exp());
        let supp1: Vec<bool> = (0..n1).map(|i| (0..n2).any(|j| a[(i, j)] > 0.0)).collect();
        let supp2: Vec<bool> = (0..n2).map(|j| (0..n1).any(|i| a[(i, j)] > 0.0)).collect();
        let log_kernel = |k: usize, f: &[f64], m: &[f64], supp: &[bool]| -> Vec<Vec<f64>> {
            f.iter()
                .map(|fx| {
                    m.iter()
                        .zip(supp)
                        .map(|(mz, on)| if *on { self.obs.log_likelihood_component(k, fx + mz) } else { f64::NEG_INFINITY })
                        .collect()
                })
                .collect()
        };
        let l1 = log_kernel(0, &f1, &m1, &supp1);
        let l2 = log_kernel(1, &f2, &m2, &supp2);
        let scaled = |l: &[Vec<f64>]| {
            let shift: Vec<f64> = l.iter().map(|row| row.iter().cloned().fold(f64::NEG_INFINITY, f64::max)).collect();
            let mat = DMatrix::from_fn(l.len(), l[0].len(), |x, z| (l[x][z] - shift[x]).exp());
            (mat, shift)
        };
        let (k1, s1) = scaled(&l1);
        let (k2, s2) = scaled(&l2);
        let s = &k1 * &a * k2.transpose();

        const RELIABLE: f64 = 1e-280;
        let mut out = vec![f64::NEG_INFINITY; n1 * n2];
        let mut best = f64::NEG_INFINITY;
        for idx in 0..n1 * n2 {
            let (i, j) = (idx / n2, idx % n2);
            let v = s[(i, j)];
            if v >= RELIABLE && self.prior_log[idx] > f64::NEG_INFINITY {
                out[idx] = self.prior_log[idx] + v.ln() + s1[i] + s2[j] + peak;
                best = best.max(out[idx]);
            }
        }
        // an unreliable entry is bounded by RELIABLE times its scale; redo it unless that bound is negligible
        let need: Vec<usize> = (0..n1 * n2)
            .filter(|&idx| {
                let (i, j) = (idx / n2, idx % n2);
                s[(i, j)] < RELIABLE
                    && self.prior_log[idx] > f64::NEG_INFINITY
                    && self.prior_log[idx] + RELIABLE.ln() + s1[i] + s2[j] + peak > best - 745.0
            })
            .collect();
        if need.is_empty() {
            return Ok(out);
        }
        let mut rows: Vec<usize> = need.iter().map(|idx| idx / n2).collect();
        rows.dedup();
        let inner: Vec<(usize, Vec<f64>)> = rows
            .par_iter()
            .map(|&i| {
                let t: Vec<f64> = (0..n2)
                    .map(|z2| {
                        let terms: Vec<f64> = (0..n1).map(|z1| l1[i][z1] + log_mass[z1 * n2 + z2]).collect();
                        logsumexp(&terms).unwrap_or(f64::NEG_INFINITY)
                    })
                    .collect();
                (i, t)
            })
            .collect();
        let lookup: std::collections::HashMap<usize, &Vec<f64>> = inner.iter().map(|(i, t)| (*i, t)).collect();
        for idx in need {
            let (i, j) = (idx / n2, idx % n2);
            let t = lookup[&i];
            let terms: Vec<f64> = (0..n2).map(|z2| t[z2] + l2[j][z2]).collect();
            out[idx] = self.prior_log[idx] + logsumexp(&terms)?;
        }
        Ok(out)
    }
}

fn residual(a: &GridDensity, b: &GridDensity) -> f64 {
    let mut peak: f64 = 0.0;
    let mut diff: f64 = 0.0;
    for (x, y) in a.logp.iter().zip(&b.logp) {
        let (ex, ey) = (x.exp(), y.exp());
        peak = peak.max(ey);
        diff = diff.max((ex - ey).abs());
    }
    diff / peak
}

/// Solves `π(x) ∝ π_X(x) ∫ Π_j π_η(y_j − f(x) − M(z)) π(z) dz` by repeated quadrature
/// sweeps, starting from the reduced-model posterior.
pub fn grid_fixed_point(
    pair: &ModelPair,
    prior: &UniformBox,
    obs: &Observation,
    resolution: usize,
    max_sweeps: usize,
    tol: f64,
) -> Result<FixedPoint> {
    check_dim(prior.dim(), pair.exact.dim_in())?;
    if max_sweeps == 0 {
        return Err(Error::config("oracle.max_sweeps must be >= 1"));
    }
    let axes = prior_axes(prior, resolution)?;
    let op = Operator::build(pair, prior, obs, axes)?;
    let start: Vec<f64> = op
        .f_vals
        .iter()
        .zip(&op.prior_log)
        .map(|(f, p)| obs.log_likelihood(f) + p)
        .collect();
    let mut current = GridDensity::from_log_values(op.axes.clone(), start)?;
    let mut last = f64::INFINITY;
    for sweep in 1..=max_sweeps {
        let next = GridDensity::from_log_values(op.axes.clone(), op.apply(&current)?)?;
        last = residual(&next, &current);
        current = next;
        if last < tol {
            return Ok(FixedPoint {
                density: current,
                sweeps: sweep,
                residual: last,
            });
        }
    }
    Err(Error::NoConvergence {
        sweeps: max_sweeps,
        residual: last,
    })
}

/// One more application of the fixed-point operator to `density`.
pub fn fixed_point_sweep(pair: &ModelPair, prior: &UniformBox, obs: &Observation, density: &GridDensity) -> Result<GridDensity> {
    let op = Operator::build(pair, prior, obs, density.axes.clone())?;
    GridDensity::from_log_values(op.axes.clone(), op.apply(density)?)
}

/// Sup-norm change between two densities on the same grid, relative to the peak of `b`.
pub fn relative_sup_change(a: &GridDensity, b: &GridDensity) -> Result<f64> {
    if a.axes != b.axes {
        return Err(Error::contract("densities live on different grids"));
    }
    Ok(residual(a, b))
}

/// Log of the integrated likelihood `∫ Π_j π_η(y_j − f(x) − M(z)) π(z) dz` at an
/// arbitrary point `x`, with `π` a tabulated density.
#[derive(Debug, Clone)]
pub struct IntegratedLikelihood {
    obs: Observation,
    log_mass: Vec<f64>,
    m_vals: Vec<Vec<f64>>,
}

impl IntegratedLikelihood {
    pub fn new(pair: &ModelPair, obs: &Observation, density: &GridDensity) -> Result<Self> {
        let axes = density.axes.clone();
        let f_vals = eval_on_grid(&pair.reduced, &axes)?;
        let exact_vals = eval_on_grid(&pair.exact, &axes)?;
        let all_mass: Vec<f64> = density.logp.iter().zip(&density.log_weights).map(|(a, b)| a + b).collect();
        let peak = all_mass.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let keep: Vec<usize> = (0..all_mass.len()).filter(|&j| all_mass[j] >= peak - 41.5).collect();
        Ok(Self {
            obs: obs.clone(),
            log_mass: keep.iter().map(|&j| all_mass[j]).collect(),
            m_vals: keep
                .iter()
                .map(|&j| exact_vals[j].iter().zip(&f_vals[j]).map(|(a, b)| a - b).collect())
                .collect(),
        })
    }

    /// Evaluates at a point where the reduced model gives `f_x`.
    pub fn log_value(&self, f_x: &[f64]) -> f64 {
        let mut pred = vec![0.0; f_x.len()];
        let terms: Vec<f64> = self
            .log_mass
            .iter()
            .zip(&self.m_vals)
            .map(|(lm, m)| {
                for (p, (a, b)) in pred.iter_mut().zip(f_x.iter().zip(m)) {
                    *p = a + b;
                }
                lm + self.obs.log_likelihood(&pred)
            })
            .collect();
        logsumexp(&terms).unwrap_or(f64::NEG_INFINITY)
    }
}

/// `∫ p ln(p/q)` by the trapezoid rule; nodes with `p < 1e-300` contribute nothing.
pub fn kl_grid(p: &GridDensity, q: &GridDensity) -> Result<f64> {
    if p.axes != q.axes {
        return Err(Error::contract("kl_grid needs identical axes"));
    }
    let mut total = 0.0;
    for i in 0..p.len() {
        let lp = p.logp[i];
        if lp.exp() < 1e-300 {
            continue;
        }
        total += (lp + p.log_weights[i]).exp() * (lp - q.logp[i]);
    }
    Ok(total)
}
