use crate::error::{check_dim, Error, Result};
use crate::prob::SampleBatch;
use crate::rng::Stream;

#[derive(Debug, Clone)]
pub struct MhOutput {
    pub samples: SampleBatch,
    pub acceptance_rate: f64,
    /// Set when the acceptance rate falls below 1%.
    pub warning: Option<String>,
}

/// Random-walk Metropolis with a fixed diagonal Gaussian proposal.
/// `logpost` is called once per proposal.
pub fn mh_sample(
    mut logpost: impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    n_samples: usize,
    n_burn: usize,
    proposal_std: &[f64],
    stream: &mut Stream,
) -> Result<MhOutput> {
    check_dim(x0.len(), proposal_std.len())?;
    if n_samples == 0 {
        return Err(Error::contract("chain needs at least one sample"));
    }
    if proposal_std.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::config("proposal standard deviations must be > 0"));
    }
    let mut x = x0.to_vec();
    let mut lp = logpost(&x);
    if !lp.is_finite() {
        return Err(Error::contract("log-posterior at the chain start must be finite"));
    }
    let dim = x.len();
    let mut out = Vec::with_capacity(n_samples * dim);
    let mut proposal = vec![0.0; dim];
    let mut accepted = 0usize;
    let total = n_burn + n_samples;
    for it in 0..total {
        for k in 0..dim {
            proposal[k] = x[k] + proposal_std[k] * stream.standard_normal();
        }
        let lq = logpost(&proposal);
        let u = stream.uniform();
        if lq > f64::NEG_INFINITY && u.ln() < lq - lp {
            x.copy_from_slice(&proposal);
            lp = lq;
            accepted += 1;
        }
        if it >= n_burn {
            out.extend_from_slice(&x);
        }
    }
    let acceptance_rate = accepted as f64 / total as f64;
    let warning = (acceptance_rate < 0.01).then(|| format!("low acceptance rate {acceptance_rate:.4}"));
    Ok(MhOutput {
        samples: SampleBatch::from_rows(out, dim, stream.tag())?,
        acceptance_rate,
        warning,
    })
}

/// Effective sample size of one chain by Geyer's initial positive sequence.
pub fn effective_sample_size(chain: &[f64]) -> f64 {
    let n = chain.len();
    if n < 4 {
        return n as f64;
    }
    let mean = chain.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = chain.iter().map(|v| v - mean).collect();
    let var = centered.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if var == 0.0 {
        return n as f64;
    }
    let rho = |lag: usize| -> f64 {
        centered[..n - lag]
            .iter()
            .zip(&centered[lag..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / (n as f64 * var)
    };
    let mut sum = 0.0;
    let mut gamma_prev = f64::INFINITY;
    let mut t = 0;
    // Γ_t = ρ(2t) + ρ(2t+1), summed while positive and forced monotone
    while 2 * t + 1 < n {
        let gamma = if t == 0 { 1.0 + rho(1) } else { rho(2 * t) + rho(2 * t + 1) };
        if gamma <= 0.0 {
            break;
        }
        let gamma = gamma.min(gamma_prev);
        sum += gamma;
        gamma_prev = gamma;
        t += 1;
    }
    let tau = (2.0 * sum - 1.0).max(1.0);
    n as f64 / tau
}
