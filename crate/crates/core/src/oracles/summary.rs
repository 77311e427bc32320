use super::grid::GridDensity;
use super::mcmc::effective_sample_size;
use crate::prob::SampleBatch;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SummarySource {
    Grid,
    Mcmc,
    Transport,
}

impl SummarySource {
    pub fn as_str(&self) -> &'static str {
        match self {
            SummarySource::Grid => "grid",
            SummarySource::Mcmc => "mcmc",
            SummarySource::Transport => "transport",
        }
    }
}

pub const QUANTILE_LEVELS: [f64; 3] = [0.025, 0.5, 0.975];

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
    /// `quantiles[k]` at the levels of [`QUANTILE_LEVELS`].
    pub quantiles: Vec<[f64; 3]>,
    pub source: SummarySource,
    /// Per-axis effective sample size; infinite for quadrature.
    pub ess: Vec<f64>,
    pub n_effective: f64,
}

impl PosteriorSummary {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn std(&self) -> Vec<f64> {
        (0..self.dim()).map(|k| self.cov[k][k].max(0.0).sqrt()).collect()
    }

    /// Monte Carlo standard error of each mean component; zero for quadrature.
    pub fn mean_std_error(&self) -> Vec<f64> {
        self.std().iter().zip(&self.ess).map(|(s, n)| s / n.sqrt()).collect()
    }

    /// True when every mean component agrees within `z` combined standard errors.
    pub fn means_agree(&self, other: &PosteriorSummary, z: f64) -> bool {
        let a = self.mean_std_error();
        let b = other.mean_std_error();
        (0..self.dim()).all(|k| (self.mean[k] - other.mean[k]).abs() <= z * (a[k] * a[k] + b[k] * b[k]).sqrt())
    }
}

fn sample_quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Empirical summary. Chains (`Mcmc`) get autocorrelation-based effective sizes;
/// other sources are treated as independent draws.
pub fn summarize_samples(samples: &SampleBatch, source: SummarySource) -> PosteriorSummary {
    let d = samples.dim();
    let n = samples.len();
    let mean: Vec<f64> = (0..d).map(|k| samples.column_mean(k)).collect();
    let mut cov = vec![vec![0.0; d]; d];
    for x in samples.rows() {
        for a in 0..d {
            for b in 0..d {
                cov[a][b] += (x[a] - mean[a]) * (x[b] - mean[b]);
            }
        }
    }
    let denom = (n.max(2) - 1) as f64;
    cov.iter_mut().flatten().for_each(|v| *v /= denom);
    let mut quantiles = Vec::with_capacity(d);
    let mut ess = Vec::with_capacity(d);
    for k in 0..d {
        let mut col = samples.column(k);
        ess.push(match source {
            SummarySource::Mcmc => effective_sample_size(&col),
            _ => n as f64,
        });
        col.sort_by(f64::total_cmp);
        quantiles.push(QUANTILE_LEVELS.map(|q| sample_quantile(&col, q)));
    }
    let n_effective = ess.iter().cloned().fold(f64::INFINITY, f64::min);
    PosteriorSummary {
        mean,
        cov,
        quantiles,
        source,
        ess,
        n_effective,
    }
}

pub fn summarize_grid(grid: &GridDensity) -> PosteriorSummary {
    let d = grid.dim();
    PosteriorSummary {
        mean: grid.mean(),
        cov: grid.covariance(),
        quantiles: (0..d).map(|k| QUANTILE_LEVELS.map(|q| grid.quantile(k, q))).collect(),
        source: SummarySource::Grid,
        ess: vec![f64::INFINITY; d],
        n_effective: f64::INFINITY,
    }
}
