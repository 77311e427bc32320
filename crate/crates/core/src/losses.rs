//! The potential φ and the two loss estimators, with parameter gradients.
//!
//! For a map `T`, a batch `x_i` and a frozen bank of model errors `ε_ij`,
//!
//! ```text
//! φ_ij = Σ_rows ln π_η(y_row − f(T(x_i)) − ε_ij)
//! Jensen:  (1/n) Σ_i [ −mean_j φ_ij              − ln π_X(T(x_i)) − ln det ∇T(x_i) ]
//! nMC:     (1/n) Σ_i [ −(logsumexp_j φ_ij − ln m) − ln π_X(T(x_i)) − ln det ∇T(x_i) ]
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::models::{ForwardModelHandle, ModelPair, Observation};
use crate::prob::{log_pdf_uniform_box, logsumexp, SampleBatch, UniformBox};
use crate::quadrature::tensor_rule;
use crate::transport::TriangularMap;

/// Frozen model-error values, `n` rows of `m` entries each.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSampleBank {
    eps: Vec<f64>,
    dim: usize,
    n: usize,
    m: usize,
    producer_tag: u64,
}

impl ErrorSampleBank {
    pub fn new(eps: Vec<f64>, dim: usize, n: usize, m: usize, producer_tag: u64) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::contract("error bank needs n >= 1 and m >= 1"));
        }
        check_dim(n * m * dim, eps.len())?;
        if eps.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("error bank entries must be finite"));
        }
        Ok(Self {
            eps,
            dim,
            n,
            m,
            producer_tag,
        })
    }

    /// Flat layout: one error per sample.
    pub fn flat(eps: Vec<f64>, dim: usize, producer_tag: u64) -> Result<Self> {
        let n = if dim == 0 { 0 } else { eps.len() / dim };
        Self::new(eps, dim, n, 1, producer_tag)
    }

    pub fn zeros(dim: usize, n: usize, m: usize) -> Result<Self> {
        Self::new(vec![0.0; dim * n * m], dim, n, m, 0)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.n * self.m
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_flat(&self) -> bool {
        self.m == 1
    }

    pub fn producer_tag(&self) -> u64 {
        self.producer_tag
    }

    pub fn entry(&self, i: usize, j: usize) -> &[f64] {
        let at = (i * self.m + j) * self.dim;
        &self.eps[at..at + self.dim]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.eps
    }

    /// Componentwise mean over all entries.
    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for e in self.eps.chunks_exact(self.dim) {
            for (o, v) in out.iter_mut().zip(e) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= self.len() as f64);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: Vec<f64>,
    pub n_used: usize,
    pub m_used: usize,
}

/// Everything a loss needs besides the map and the samples.
#[derive(Debug, Clone, Copy)]
pub struct LossContext<'a> {
    /// The model inside the likelihood: `f` for the model-error methods, `F` for Full.
    pub forward: &'a ForwardModelHandle,
    pub prior: &'a UniformBox,
    pub obs: &'a Observation,
}

/// `φ = Σ_rows ln π_η(y_row − f(T(x)) − ε)`. One evaluation of `f`.
pub fn potential_phi(
    map: &TriangularMap,
    x: &[f64],
    eps_row: &[f64],
    obs: &Observation,
    forward: &ForwardModelHandle,
) -> Result<f64> {
    check_dim(obs.dim(), eps_row.len())?;
    let y = map.forward(x)?.y;
    let mut prediction = forward.evaluate(&y)?;
    for (p, e) in prediction.iter_mut().zip(eps_row) {
        *p += e;
    }
    Ok(obs.log_likelihood(&prediction))
}

/// `logsumexp(φ) − ln m`, the log of the inner sample mean of `exp φ`.
pub fn log_mean_exp(phi: &[f64]) -> Result<f64> {
    Ok(logsumexp(phi)? - (phi.len() as f64).ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Inner {
    Mean,
    LogMeanExp,
}

fn batch_loss(
    ctx: &LossContext<'_>,
    map: &TriangularMap,
    xs: &SampleBatch,
    bank: &ErrorSampleBank,
    inner: Inner,
) -> Result<LossValue> {
    if xs.len() != bank.n() {
        return Err(Error::contract(format!(
            "batch has {} samples but the error bank has {} rows",
            xs.len(),
            bank.n()
        )));
    }
    check_dim(map.dim(), xs.dim())?;
    check_dim(ctx.obs.dim(), bank.dim())?;
    let m = bank.m();
    let n_params = map.n_params();
    let per_sample: Vec<Result<(f64, Vec<f64>)>> = (0..xs.len())
        .into_par_iter()
        .map(|i| {
            let x = xs.row(i);
            let ev = map.forward(x)?;
            let mu = ctx.forward.evaluate(&ev.y)?;
            let dim_y = mu.len();
            let mut pred = vec![0.0; dim_y];
            let mut phi = Vec::with_capacity(m);
            let mut dphi = Vec::with_capacity(m * dim_y);
            let mut g = vec![0.0; dim_y];
            for j in 0..m {
                for (p, (a, e)) in pred.iter_mut().zip(mu.iter().zip(bank.entry(i, j))) {
                    *p = a + e;
                }
                phi.push(ctx.obs.log_likelihood(&pred));
                ctx.obs.log_likelihood_grad(&pred, &mut g);
                dphi.extend_from_slice(&g);
            }
            let (value, weights): (f64, Vec<f64>) = match inner {
                Inner::Mean => (phi.iter().sum::<f64>() / m as f64, vec![1.0 / m as f64; m]),
                Inner::LogMeanExp => {
                    let lse = logsumexp(&phi)?;
                    (lse - (m as f64).ln(), phi.iter().map(|p| (p - lse).exp()).collect())
                }
            };
            let loss = -value - log_pdf_uniform_box(&ev.y, ctx.prior) - ev.logdet;
            // ∂loss/∂μ
            let mut dmu = vec![0.0; dim_y];
            for (j, w) in weights.iter().enumerate() {
                for (d, v) in dmu.iter_mut().zip(&dphi[j * dim_y..(j + 1) * dim_y]) {
                    *d -= w * v;
                }
            }
            let mut gy = vec![0.0; map.dim()];
            ctx.forward.vjp(&ev.y, &dmu, &mut gy)?;
            let mut grad = vec![0.0; n_params];
            map.accumulate_grad(x, &gy, -1.0, &mut grad)?;
            Ok((loss, grad))
        })
        .collect();
    let n = xs.len() as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; n_params];
    for r in per_sample {
        let (l, g) = r?;
        value += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    grad.iter_mut().for_each(|g| *g /= n);
    Ok(LossValue {
        value: value / n,
        grad,
        n_used: xs.len(),
        m_used: m,
    })
}

/// Jensen loss. On a nested bank the inner log-mean-exp is replaced by a plain mean.
pub fn jensen_loss(
    ctx: &LossContext<'_>,
    map: &TriangularMap,
    xs: &SampleBatch,
    bank: &ErrorSampleBank,
) -> Result<LossValue> {
    batch_loss(ctx, map, xs, bank, Inner::Mean)
}

/// Nested Monte Carlo loss.
pub fn nmc_loss(ctx: &LossContext<'_>, map: &TriangularMap, xs: &SampleBatch, bank: &ErrorSampleBank) -> Result<LossValue> {
    batch_loss(ctx, map, xs, bank, Inner::LogMeanExp)
}

/// `(n, m)` for a nested estimate with total budget `s`: `m = ⌈s^{1/3}⌉`, `n = ⌊s/m⌋`.
pub fn nmc_split(s: usize, m_override: Option<usize>) -> Result<(usize, usize)> {
    let m = match m_override {
        Some(0) => return Err(Error::config("m_override must be >= 1")),
        Some(m) => m,
        None => {
            let mut m = (s as f64).cbrt().ceil() as usize;
            // guard against cbrt rounding just above an exact cube
            while m > 1 && (m - 1).pow(3) >= s {
                m -= 1;
            }
            m.max(1)
        }
    };
    let n = s / m;
    if n == 0 {
        return Err(Error::config(format!("budget s = {s} is smaller than m = {m}")));
    }
    Ok((n, m))
}

/// A loss estimator selectable by name.
pub trait LossEstimator: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;
    /// `(n, m)` batch layout for a sample budget `s`.
    fn split(&self, s: usize, m_override: Option<usize>) -> Result<(usize, usize)>;
    fn evaluate(
        &self,
        ctx: &LossContext<'_>,
        map: &TriangularMap,
        xs: &SampleBatch,
        bank: &ErrorSampleBank,
    ) -> Result<LossValue>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Jensen;

#[derive(Debug, Clone, Copy, Default)]
pub struct Nmc;

impl LossEstimator for Jensen {
    fn name(&self) -> &'static str {
        "jensen"
    }

    fn split(&self, s: usize, _m_override: Option<usize>) -> Result<(usize, usize)> {
        if s == 0 {
            return Err(Error::config("sample budget s must be >= 1"));
        }
        Ok((s, 1))
    }

    fn evaluate(
        &self,
        ctx: &LossContext<'_>,
        map: &TriangularMap,
        xs: &SampleBatch,
        bank: &ErrorSampleBank,
    ) -> Result<LossValue> {
        jensen_loss(ctx, map, xs, bank)
    }
}

impl LossEstimator for Nmc {
    fn name(&self) -> &'static str {
        "nmc"
    }

    fn split(&self, s: usize, m_override: Option<usize>) -> Result<(usize, usize)> {
        nmc_split(s, m_override)
    }

    fn evaluate(
        &self,
        ctx: &LossContext<'_>,
        map: &TriangularMap,
        xs: &SampleBatch,
        bank: &ErrorSampleBank,
    ) -> Result<LossValue> {
        nmc_loss(ctx, map, xs, bank)
    }
}

pub type LossFactory = fn() -> Arc<dyn LossEstimator>;

/// Loss estimators by name.
#[derive(Clone)]
pub struct LossRegistry {
    entries: BTreeMap<&'static str, LossFactory>,
}

impl LossRegistry {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register("jensen", || Arc::new(Jensen));
        r.register("nmc", || Arc::new(Nmc));
        r
    }

    pub fn register(&mut self, name: &'static str, factory: LossFactory) {
        self.entries.insert(name, factory);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }

    pub fn build(&self, name: &str) -> Result<Arc<dyn LossEstimator>> {
        self.entries.get(name).map(|f| f()).ok_or_else(|| Error::UnknownName {
            kind: "loss",
            name: name.to_string(),
            available: self.names().join(", "),
        })
    }
}

impl Default for LossRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

/// `L(T, T*)` with both reference expectations replaced by tensor Gauss–Hermite
/// rules of `nodes` points per axis. Supports dimension 1 and 2.
pub fn exact_loss_quadrature(
    map: &TriangularMap,
    inner_map: &TriangularMap,
    pair: &ModelPair,
    prior: &UniformBox,
    obs: &Observation,
    nodes: usize,
) -> Result<f64> {
    if map.dim() > 2 {
        return Err(Error::Unsupported(format!(
            "quadrature loss supports dimension <= 2, got {}",
            map.dim()
        )));
    }
    check_dim(map.dim(), inner_map.dim())?;
    let rule = tensor_rule(map.dim(), nodes)?;
    let inner: Vec<(Vec<f64>, f64)> = rule
        .iter()
        .map(|(z, w)| Ok((pair.model_error(&inner_map.forward(z)?.y)?, w.ln())))
        .collect::<Result<_>>()?;
    let mut total = 0.0;
    let mut terms = Vec::with_capacity(inner.len());
    for (x, wx) in &rule {
        let ev = map.forward(x)?;
        let mu = pair.reduced.evaluate(&ev.y)?;
        terms.clear();
        for (eps, lw) in &inner {
            let pred: Vec<f64> = mu.iter().zip(eps).map(|(a, b)| a + b).collect();
            terms.push(lw + obs.log_likelihood(&pred));
        }
        total += wx * (-logsumexp(&terms)? - log_pdf_uniform_box(&ev.y, prior) - ev.logdet);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{affine_problem, generate_synthetic, simple_machine_problem, Ledger, NoiseRealization};
    use crate::prob::{sample, GaussianDiag};
    use crate::rng::StreamFactory;
    use crate::transport::InitMode;
    use proptest::prelude::*;

    struct Setup {
        pair: ModelPair,
        prior: UniformBox,
        obs: Observation,
    }

    impl Setup {
        fn ctx(&self) -> LossContext<'_> {
            LossContext {
                forward: &self.pair.reduced,
                prior: &self.prior,
                obs: &self.obs,
            }
        }
    }

    fn affine(seed: u64) -> Setup {
        let p = affine_problem();
        let pair = p.pair(Ledger::new()).unwrap();
        let f = StreamFactory::new(seed);
        let obs =
            generate_synthetic(&pair.exact, &[1.0, 3.0], 1, 0.05, NoiseRealization::Random, &mut f.stream("noise", 0))
                .unwrap();
        Setup {
            pair,
            prior: p.prior,
            obs,
        }
    }

    fn machine(d: usize) -> Setup {
        let p = simple_machine_problem();
        let pair = p.pair(Ledger::new()).unwrap();
        let f = StreamFactory::new(3);
        let obs = generate_synthetic(&pair.exact, &[3.0], d, 0.05, NoiseRealization::Random, &mut f.stream("noise", 0))
            .unwrap();
        Setup {
            pair,
            prior: p.prior,
            obs,
        }
    }

    fn random_bank(dim: usize, n: usize, m: usize, scale: f64, seed: u64) -> ErrorSampleBank {
        let mut s = StreamFactory::new(seed).stream("bank", 0);
        let eps = (0..dim * n * m).map(|_| scale * s.standard_normal()).collect();
        ErrorSampleBank::new(eps, dim, n, m, 0).unwrap()
    }

    fn batch(dim: usize, n: usize, seed: u64) -> SampleBatch {
        sample(&GaussianDiag::standard(dim), n, &mut StreamFactory::new(seed).stream("x", 0)).unwrap()
    }

    fn map(dim: usize, seed: u64) -> TriangularMap {
        TriangularMap::init(dim, 2, UniformBox::cube(dim, 0.0, 15.0).unwrap(), InitMode::Randomized { seed }).unwrap()
    }

    #[test]
    fn phi_at_zero_residual_is_peak() {
        let s = machine(1);
        let t = map(1, 1);
        let x = [0.4];
        let y = t.forward(&x).unwrap().y;
        let mu = s.pair.reduced.evaluate(&y).unwrap()[0];
        let eps = [s.obs.row(0)[0] - mu];
        let phi = potential_phi(&t, &x, &eps, &s.obs, &s.pair.reduced).unwrap();
        let peak = s.obs.noise().log_norm();
        assert!((phi - peak).abs() < 1e-12);
    }

    #[test]
    fn phi_hand_example() {
        // residual 4.6154 − 6 + 1.3846 = 0 with std 0.5
        let obs = Observation::new(vec![4.6154], 1, vec![3.0], vec![0.5], 0).unwrap();
        let phi = obs.log_likelihood(&[6.0 - 1.3846]);
        assert!((phi + 0.2258).abs() < 1e-4);
    }

    #[test]
    fn phi_counts_one_reduced_evaluation() {
        let s = affine(1);
        let t = map(2, 2);
        potential_phi(&t, &[0.1, 0.2], &[0.0, 0.0], &s.obs, &s.pair.reduced).unwrap();
        let c = s.pair.ledger_snapshot();
        assert_eq!((c.g_plus, c.g_minus), (1, 1));
    }

    #[test]
    fn single_sample_jensen_is_phi_plus_terms() {
        let s = affine(2);
        let t = map(2, 3);
        let xs = batch(2, 1, 4);
        let bank = random_bank(2, 1, 1, 1.0, 5);
        let lv = jensen_loss(&s.ctx(), &t, &xs, &bank).unwrap();
        let phi = potential_phi(&t, xs.row(0), bank.entry(0, 0), &s.obs, &s.pair.reduced).unwrap();
        let ld = t.forward(xs.row(0)).unwrap().logdet;
        let want = -phi + 2.0 * 15f64.ln() - ld;
        assert!((lv.value - want).abs() < 1e-12);
    }

    #[test]
    fn nmc_with_m1_equals_jensen_exactly() {
        let s = affine(3);
        let t = map(2, 4);
        let xs = batch(2, 50, 5);
        let bank = random_bank(2, 50, 1, 3.0, 6);
        let a = jensen_loss(&s.ctx(), &t, &xs, &bank).unwrap();
        let b = nmc_loss(&s.ctx(), &t, &xs, &bank).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn nmc_below_jensen_on_shared_samples() {
        let s = affine(4);
        let t = map(2, 5);
        let xs = batch(2, 40, 6);
        let bank = random_bank(2, 40, 8, 2.0, 7);
        let j = jensen_loss(&s.ctx(), &t, &xs, &bank).unwrap().value;
        let n = nmc_loss(&s.ctx(), &t, &xs, &bank).unwrap().value;
        assert!(n < j, "{n} !< {j}");
    }

    #[test]
    fn zero_bank_is_reduced_model_loss() {
        let s = affine(5);
        let t = map(2, 6);
        let xs = batch(2, 30, 7);
        let bank = ErrorSampleBank::zeros(2, 30, 1).unwrap();
        let lv = jensen_loss(&s.ctx(), &t, &xs, &bank).unwrap();
        let direct: f64 = xs
            .rows()
            .map(|x| {
                let ev = t.forward(x).unwrap();
                -s.obs.log_likelihood(&ev.y) + 2.0 * 15f64.ln() - ev.logdet
            })
            .sum::<f64>()
            / 30.0;
        assert!((lv.value - direct).abs() < 1e-10);
    }

    #[test]
    fn size_mismatch_is_contract_error() {
        let s = affine(6);
        let t = map(2, 7);
        let err = jensen_loss(&s.ctx(), &t, &batch(2, 3, 1), &ErrorSampleBank::zeros(2, 4, 1).unwrap());
        assert!(matches!(err, Err(Error::Contract(_))));
        assert!(ErrorSampleBank::zeros(2, 4, 0).is_err());
    }

    #[test]
    fn loss_counts_one_f_per_sample() {
        let s = affine(7);
        let t = map(2, 8);
        nmc_loss(&s.ctx(), &t, &batch(2, 25, 1), &random_bank(2, 25, 4, 1.0, 2)).unwrap();
        let c = s.pair.ledger_snapshot();
        assert_eq!((c.g_plus, c.g_minus), (1, 25));
    }

    fn check_gradient(s: &Setup, t: &TriangularMap, xs: &SampleBatch, bank: &ErrorSampleBank, nested: bool) {
        let eval = |m: &TriangularMap| {
            if nested {
                nmc_loss(&s.ctx(), m, xs, bank).unwrap()
            } else {
                jensen_loss(&s.ctx(), m, xs, bank).unwrap()
            }
        };
        let lv = eval(t);
        let h = 1e-5;
        for p in 0..t.n_params() {
            let mut tp = t.theta().to_vec();
            let mut tm = t.theta().to_vec();
            tp[p] += h;
            tm[p] -= h;
            let fd = (eval(&t.with_theta(&tp).unwrap()).value - eval(&t.with_theta(&tm).unwrap()).value) / (2.0 * h);
            let rel = (lv.grad[p] - fd).abs() / fd.abs().max(lv.grad[p].abs()).max(1e-2);
            assert!(rel <= 1e-4, "nested={nested} param {p}: {} vs {fd}", lv.grad[p]);
        }
    }

    #[test]
    fn gradients_match_central_differences() {
        let s = affine(8);
        let t = map(2, 9);
        check_gradient(&s, &t, &batch(2, 20, 1), &random_bank(2, 20, 1, 2.0, 2), false);
        check_gradient(&s, &t, &batch(2, 20, 3), &random_bank(2, 20, 6, 2.0, 4), true);
        let s = machine(5);
        let t = map(1, 10);
        check_gradient(&s, &t, &batch(1, 20, 5), &random_bank(1, 20, 1, 1.0, 6), false);
        check_gradient(&s, &t, &batch(1, 20, 7), &random_bank(1, 20, 5, 1.0, 8), true);
    }

    #[test]
    fn split_rule() {
        assert_eq!(nmc_split(1000, None).unwrap(), (100, 10));
        assert_eq!(nmc_split(64, None).unwrap(), (16, 4));
        assert_eq!(nmc_split(65, None).unwrap(), (13, 5));
        assert_eq!(nmc_split(1000, Some(20)).unwrap(), (50, 20));
        assert!(nmc_split(3, Some(5)).is_err());
        assert_eq!(Jensen.split(7, None).unwrap(), (7, 1));
    }

    #[test]
    fn registry() {
        let r = LossRegistry::with_builtins();
        assert_eq!(r.names(), vec!["jensen", "nmc"]);
        assert_eq!(r.build("nmc").unwrap().name(), "nmc");
        assert!(matches!(r.build("elbo"), Err(Error::UnknownName { .. })));
    }

    #[test]
    fn quadrature_loss_flat_likelihood_limit() {
        let p = simple_machine_problem();
        let pair = p.pair(Ledger::new()).unwrap();
        let obs = Observation::new(vec![4.6], 1, vec![3.0], vec![1e6], 0).unwrap();
        let t = map(1, 11);
        let got = exact_loss_quadrature(&t, &t, &pair, &p.prior, &obs, 40).unwrap();
        // likelihood is a constant −ln(σ√2π) up to O(1/σ²)
        let (x, w) = crate::quadrature::gauss_hermite(40).unwrap();
        let rest: f64 = x
            .iter()
            .zip(&w)
            .map(|(x, w)| w * (15f64.ln() - t.forward(&[*x]).unwrap().logdet))
            .sum();
        assert!((got - (rest - obs.noise().log_norm())).abs() < 1e-8);
        let three = TriangularMap::init(3, 1, UniformBox::cube(3, 0.0, 1.0).unwrap(), InitMode::IdentityToBox).unwrap();
        assert!(matches!(
            exact_loss_quadrature(&three, &three, &pair, &p.prior, &obs, 4),
            Err(Error::Unsupported(_))
        ));
    }

    proptest! {
        #[test]
        fn log_mean_exp_shift(v in prop::collection::vec(-50.0f64..50.0, 1..20), c in -1e3f64..1e3) {
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let a = log_mean_exp(&v).unwrap();
            let b = log_mean_exp(&shifted).unwrap();
            prop_assert!((b - a - c).abs() <= 1e-12 * c.abs().max(1.0) * 4.0);
        }

        #[test]
        fn finite_jensen(v in prop::collection::vec(-50.0f64..50.0, 1..20)) {
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            prop_assert!(log_mean_exp(&v).unwrap() >= mean - 1e-12);
        }

        #[test]
        fn prior_term_is_constant(seed in 0u64..200) {
            let t = map(2, seed);
            for x in batch(2, 10, seed).rows() {
                let y = t.forward(x).unwrap().y;
                prop_assert_eq!(log_pdf_uniform_box(&y, &UniformBox::cube(2, 0.0, 15.0).unwrap()), -2.0 * 15f64.ln());
            }
        }
    }
}
