//! Exact and reduced forward models, the model-error function, synthetic data,
//! and the evaluation ledger that backs cost reporting.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{check_dim, Error, Result};
use crate::prob::{GaussianDiag, UniformBox};
use crate::rng::Stream;

/// A deterministic map from parameters to noiseless observations.
pub trait ForwardModel: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn dim_in(&self) -> usize;
    fn dim_out(&self) -> usize;
    fn eval(&self, x: &[f64], out: &mut [f64]) -> Result<()>;
    /// Vector-Jacobian product `J(x)^T v`.
    fn vjp(&self, x: &[f64], v: &[f64], out: &mut [f64]) -> Result<()>;
    /// True when output `k` depends on input `k` only.
    fn componentwise(&self) -> bool {
        false
    }
}

/// `F(x) = A x + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineModel {
    name: String,
    dim: usize,
    /// Row-major `dim × dim`.
    a: Vec<f64>,
    c: Vec<f64>,
}

impl AffineModel {
    pub fn new(name: impl Into<String>, a: Vec<f64>, c: Vec<f64>) -> Result<Self> {
        let dim = c.len();
        check_dim(dim * dim, a.len())?;
        Ok(Self {
            name: name.into(),
            dim,
            a,
            c,
        })
    }

    pub fn identity(name: impl Into<String>, dim: usize) -> Self {
        let mut a = vec![0.0; dim * dim];
        for k in 0..dim {
            a[k * dim + k] = 1.0;
        }
        Self {
            name: name.into(),
            dim,
            a,
            c: vec![0.0; dim],
        }
    }
}

impl ForwardModel for AffineModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim_in(&self) -> usize {
        self.dim
    }

    fn dim_out(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        check_dim(self.dim, x.len())?;
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.a[r * self.dim..(r + 1) * self.dim];
            *o = self.c[r] + row.iter().zip(x).map(|(a, x)| a * x).sum::<f64>();
        }
        Ok(())
    }

    fn vjp(&self, _x: &[f64], v: &[f64], out: &mut [f64]) -> Result<()> {
        check_dim(self.dim, v.len())?;
        for (col, o) in out.iter_mut().enumerate() {
            *o = (0..self.dim).map(|r| self.a[r * self.dim + col] * v[r]).sum();
        }
        Ok(())
    }

    fn componentwise(&self) -> bool {
        (0..self.dim).all(|r| (0..self.dim).all(|c| r == c || self.a[r * self.dim + c] == 0.0))
    }
}

/// Saturating work model `F(x) = 2 a x / (a + x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaturatingMachine {
    pub a: f64,
}

impl ForwardModel for SaturatingMachine {
    fn name(&self) -> &str {
        "machine-exact"
    }

    fn dim_in(&self) -> usize {
        1
    }

    fn dim_out(&self) -> usize {
        1
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        check_dim(1, x.len())?;
        let denom = self.a + x[0];
        if denom == 0.0 {
            return Err(Error::domain(format!("pole of the machine model at x = {}", x[0])));
        }
        out[0] = 2.0 * self.a * x[0] / denom;
        Ok(())
    }

    fn vjp(&self, x: &[f64], v: &[f64], out: &mut [f64]) -> Result<()> {
        check_dim(1, x.len())?;
        let denom = self.a + x[0];
        if denom == 0.0 {
            return Err(Error::domain(format!("pole of the machine model at x = {}", x[0])));
        }
        out[0] = v[0] * 2.0 * self.a * self.a / (denom * denom);
        Ok(())
    }

    fn componentwise(&self) -> bool {
        true
    }
}

/// Snapshot of the evaluation counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CostLedger {
    /// Exact-model evaluations.
    pub g_plus: u64,
    /// Reduced-model evaluations.
    pub g_minus: u64,
    pub optimizer_steps: u64,
    pub posterior_samples_drawn: u64,
}

/// Shared, monotone evaluation counters.
#[derive(Debug, Default)]
pub struct Ledger {
    g_plus: AtomicU64,
    g_minus: AtomicU64,
    optimizer_steps: AtomicU64,
    posterior_samples: AtomicU64,
}

impl Ledger {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn snapshot(&self) -> CostLedger {
        CostLedger {
            g_plus: self.g_plus.load(Ordering::SeqCst),
            g_minus: self.g_minus.load(Ordering::SeqCst),
            optimizer_steps: self.optimizer_steps.load(Ordering::SeqCst),
            posterior_samples_drawn: self.posterior_samples.load(Ordering::SeqCst),
        }
    }

    pub(crate) fn count_optimizer_step(&self) {
        self.optimizer_steps.fetch_add(1, Ordering::SeqCst);
    }

    pub(crate) fn count_posterior_samples(&self, n: u64) {
        self.posterior_samples.fetch_add(n, Ordering::SeqCst);
    }

    fn count(&self, role: Role) {
        match role {
            Role::Exact => self.g_plus.fetch_add(1, Ordering::SeqCst),
            Role::Reduced => self.g_minus.fetch_add(1, Ordering::SeqCst),
        };
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Exact,
    Reduced,
}

/// The four shipped model kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    AffineExact,
    AffineReduced,
    MachineExact,
    MachineReduced,
}

/// A forward model wired to a ledger counter. Every `evaluate` call counts.
#[derive(Debug, Clone)]
pub struct ForwardModelHandle {
    model: Arc<dyn ForwardModel>,
    role: Role,
    ledger: Arc<Ledger>,
}

impl ForwardModelHandle {
    pub fn new(model: Arc<dyn ForwardModel>, role: Role, ledger: Arc<Ledger>) -> Self {
        Self {
            model,
            role,
            ledger,
        }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn model(&self) -> &dyn ForwardModel {
        self.model.as_ref()
    }

    pub fn dim_in(&self) -> usize {
        self.model.dim_in()
    }

    pub fn dim_out(&self) -> usize {
        self.model.dim_out()
    }

    pub fn ledger(&self) -> &Arc<Ledger> {
        &self.ledger
    }

    pub fn evaluate_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("forward model input must be finite"));
        }
        check_dim(self.model.dim_out(), out.len())?;
        self.ledger.count(self.role);
        self.model.eval(x, out)
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.model.dim_out()];
        self.evaluate_into(x, &mut out)?;
        Ok(out)
    }

    /// Jacobian-transpose product; not counted, it reuses an evaluation.
    pub fn vjp(&self, x: &[f64], v: &[f64], out: &mut [f64]) -> Result<()> {
        self.model.vjp(x, v, out)
    }
}

/// Exact and reduced model sharing one ledger.
#[derive(Debug, Clone)]
pub struct ModelPair {
    pub exact: ForwardModelHandle,
    pub reduced: ForwardModelHandle,
}

impl ModelPair {
    pub fn new(exact: Arc<dyn ForwardModel>, reduced: Arc<dyn ForwardModel>, ledger: Arc<Ledger>) -> Result<Self> {
        check_dim(exact.dim_in(), reduced.dim_in())?;
        check_dim(exact.dim_out(), reduced.dim_out())?;
        Ok(Self {
            exact: ForwardModelHandle::new(exact, Role::Exact, ledger.clone()),
            reduced: ForwardModelHandle::new(reduced, Role::Reduced, ledger),
        })
    }

    pub fn ledger(&self) -> &Arc<Ledger> {
        self.exact.ledger()
    }

    pub fn ledger_snapshot(&self) -> CostLedger {
        self.ledger().snapshot()
    }

    pub fn componentwise(&self) -> bool {
        self.exact.model().componentwise() && self.reduced.model().componentwise()
    }

    /// `M(x) = F(x) - f(x)`; one exact and one reduced evaluation.
    pub fn model_error_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let mut reduced = vec![0.0; out.len()];
        self.exact.evaluate_into(x, out)?;
        self.reduced.evaluate_into(x, &mut reduced)?;
        for (o, r) in out.iter_mut().zip(&reduced) {
            *o -= r;
        }
        Ok(())
    }

    pub fn model_error(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.exact.dim_out()];
        self.model_error_into(x, &mut out)?;
        Ok(out)
    }
}

/// Free function form of `M(x)`.
pub fn model_error(exact: &ForwardModelHandle, reduced: &ForwardModelHandle, x: &[f64]) -> Result<Vec<f64>> {
    check_dim(exact.dim_out(), reduced.dim_out())?;
    let mut e = exact.evaluate(x)?;
    let r = reduced.evaluate(x)?;
    for (a, b) in e.iter_mut().zip(&r) {
        *a -= b;
    }
    Ok(e)
}

/// `d` repeated measurements of one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    rows: Vec<f64>,
    dim: usize,
    x_star: Vec<f64>,
    noise_std: Vec<f64>,
    seed_tag: u64,
    row_mean: Vec<f64>,
    centered_ss: Vec<f64>,
}

impl Observation {
    pub fn new(rows: Vec<f64>, dim: usize, x_star: Vec<f64>, noise_std: Vec<f64>, seed_tag: u64) -> Result<Self> {
        if dim == 0 || rows.is_empty() || rows.len() % dim != 0 {
            return Err(Error::contract("observation needs d >= 1 complete rows"));
        }
        check_dim(dim, noise_std.len())?;
        if noise_std.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::config("noise standard deviation must be > 0"));
        }
        let d = rows.len() / dim;
        let mut row_mean = vec![0.0; dim];
        for r in rows.chunks_exact(dim) {
            for (m, v) in row_mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        row_mean.iter_mut().for_each(|m| *m /= d as f64);
        let mut centered_ss = vec![0.0; dim];
        for r in rows.chunks_exact(dim) {
            for k in 0..dim {
                let e = r[k] - row_mean[k];
                centered_ss[k] += e * e;
            }
        }
        Ok(Self {
            rows,
            dim,
            x_star,
            noise_std,
            seed_tag,
            row_mean,
            centered_ss,
        })
    }

    /// Number of measurements `d`.
    pub fn count(&self) -> usize {
        self.rows.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.rows[j * self.dim..(j + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.rows.chunks_exact(self.dim)
    }

    pub fn x_star(&self) -> &[f64] {
        &self.x_star
    }

    pub fn noise_std(&self) -> &[f64] {
        &self.noise_std
    }

    pub fn seed_tag(&self) -> u64 {
        self.seed_tag
    }

    pub fn noise(&self) -> GaussianDiag {
        GaussianDiag::new(vec![0.0; self.dim], self.noise_std.clone()).expect("validated at construction")
    }

    pub fn row_mean(&self) -> &[f64] {
        &self.row_mean
    }

    /// `Σ_j (y_jk - ȳ_k)²` per component.
    pub fn centered_ss(&self) -> &[f64] {
        &self.centered_ss
    }

    /// `Σ_j ln π_η(y_j - prediction)` from sufficient statistics.
    pub fn log_likelihood(&self, prediction: &[f64]) -> f64 {
        (0..self.dim).map(|k| self.log_likelihood_component(k, prediction[k])).sum()
    }

    /// Term of [`Observation::log_likelihood`] contributed by output component `k`.
    pub fn log_likelihood_component(&self, k: usize, prediction: f64) -> f64 {
        let d = self.count() as f64;
        let s = self.noise_std[k];
        let r = self.row_mean[k] - prediction;
        -d * (s.ln() + crate::prob::LN_SQRT_2PI) - (self.centered_ss[k] + d * r * r) / (2.0 * s * s)
    }

    /// Gradient of [`Observation::log_likelihood`] with respect to the prediction.
    pub fn log_likelihood_grad(&self, prediction: &[f64], out: &mut [f64]) {
        let d = self.count() as f64;
        for k in 0..self.dim {
            let s = self.noise_std[k];
            out[k] = d * (self.row_mean[k] - prediction[k]) / (s * s);
        }
    }
}

/// How the noise realization of synthetic data is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseRealization {
    /// `η_j ~ N(0, diag(noise_std²))` from the supplied stream.
    #[default]
    Random,
    /// `η_j = 0`; the likelihood still uses `noise_std`.
    Zero,
}

/// `y_j = F(x*) + η_j` with `noise_std = noise_level · |F(x*)|`.
/// Evaluates the exact model exactly once.
pub fn generate_synthetic(
    exact: &ForwardModelHandle,
    x_star: &[f64],
    d: usize,
    noise_level: f64,
    realization: NoiseRealization,
    stream: &mut Stream,
) -> Result<Observation> {
    if d == 0 {
        return Err(Error::config("measurement count d must be >= 1"));
    }
    if !(noise_level.is_finite() && noise_level > 0.0) {
        return Err(Error::config(format!("noise_level must be > 0, got {noise_level}")));
    }
    let clean = exact.evaluate(x_star)?;
    let noise_std: Vec<f64> = clean.iter().map(|v| noise_level * v.abs()).collect();
    if let Some(k) = noise_std.iter().position(|s| *s == 0.0) {
        return Err(Error::config(format!(
            "F(x*) has a zero in component {k}; noise_level * |F(x*)| is degenerate"
        )));
    }
    let dim = clean.len();
    let mut rows = Vec::with_capacity(d * dim);
    for _ in 0..d {
        for k in 0..dim {
            let eta = match realization {
                NoiseRealization::Random => noise_std[k] * stream.standard_normal(),
                NoiseRealization::Zero => 0.0,
            };
            rows.push(clean[k] + eta);
        }
    }
    Observation::new(rows, dim, x_star.to_vec(), noise_std, stream.tag())
}

/// A benchmark inverse problem: model pair plus prior and default truth.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub exact: Arc<dyn ForwardModel>,
    pub reduced: Arc<dyn ForwardModel>,
    pub prior: UniformBox,
    pub default_x_star: Vec<f64>,
}

impl ProblemSpec {
    pub fn dim(&self) -> usize {
        self.exact.dim_in()
    }

    pub fn kinds(&self) -> Option<(ModelKind, ModelKind)> {
        match self.name.as_str() {
            "affine" => Some((ModelKind::AffineExact, ModelKind::AffineReduced)),
            "simple_machine" => Some((ModelKind::MachineExact, ModelKind::MachineReduced)),
            _ => None,
        }
    }

    pub fn pair(&self, ledger: Arc<Ledger>) -> Result<ModelPair> {
        ModelPair::new(self.exact.clone(), self.reduced.clone(), ledger)
    }
}

/// Two affine models on R²: `F(x) = diag(2,3) x + (5,5)`, `f(x) = x`, prior `U([0,15]²)`.
pub fn affine_problem() -> ProblemSpec {
    ProblemSpec {
        name: "affine".into(),
        exact: Arc::new(
            AffineModel::new("affine-exact", vec![2.0, 0.0, 0.0, 3.0], vec![5.0, 5.0]).expect("2x2"),
        ),
        reduced: Arc::new(AffineModel::identity("affine-reduced", 2)),
        prior: UniformBox::cube(2, 0.0, 15.0).expect("valid box"),
        default_x_star: vec![1.0, 3.0],
    }
}

/// Saturating machine `F(x) = 2ax/(a+x)` with `a = 10` against `f(x) = 2x`, prior `U([0,15])`.
pub fn simple_machine_problem() -> ProblemSpec {
    ProblemSpec {
        name: "simple_machine".into(),
        exact: Arc::new(SaturatingMachine { a: 10.0 }),
        reduced: Arc::new(AffineModel::new("machine-reduced", vec![2.0], vec![0.0]).expect("1x1")),
        prior: UniformBox::cube(1, 0.0, 15.0).expect("valid box"),
        default_x_star: vec![3.0],
    }
}

pub type ProblemFactory = fn() -> ProblemSpec;

/// Benchmark problems by name.
#[derive(Clone)]
pub struct ProblemRegistry {
    entries: BTreeMap<&'static str, ProblemFactory>,
}

impl ProblemRegistry {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register("affine", affine_problem);
        r.register("simple_machine", simple_machine_problem);
        r
    }

    pub fn register(&mut self, name: &'static str, factory: ProblemFactory) {
        self.entries.insert(name, factory);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }

    pub fn build(&self, name: &str) -> Result<ProblemSpec> {
        self.entries.get(name).map(|f| f()).ok_or_else(|| Error::UnknownName {
            kind: "problem",
            name: name.to_string(),
            available: self.names().join(", "),
        })
    }
}

impl Default for ProblemRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamFactory;
    use proptest::prelude::*;

    fn affine_pair() -> ModelPair {
        affine_problem().pair(Ledger::new()).unwrap()
    }

    fn machine_pair() -> ModelPair {
        simple_machine_problem().pair(Ledger::new()).unwrap()
    }

    #[test]
    fn evaluate_examples() {
        let p = affine_pair();
        assert_eq!(p.exact.evaluate(&[1.0, 3.0]).unwrap(), vec![7.0, 14.0]);
        let m = machine_pair();
        assert_eq!(m.exact.evaluate(&[10.0]).unwrap(), vec![10.0]);
        assert_eq!(m.reduced.evaluate(&[3.0]).unwrap(), vec![6.0]);
        let s = m.ledger_snapshot();
        assert_eq!((s.g_plus, s.g_minus), (1, 1));
    }

    #[test]
    fn machine_pole_is_a_domain_error() {
        let m = machine_pair();
        assert!(matches!(m.exact.evaluate(&[-10.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn model_error_examples() {
        let p = affine_pair();
        assert_eq!(p.model_error(&[1.0, 3.0]).unwrap(), vec![6.0, 11.0]);
        let s = p.ledger_snapshot();
        assert_eq!((s.g_plus, s.g_minus), (1, 1));

        let m = machine_pair();
        let e = m.model_error(&[3.0]).unwrap()[0];
        assert!((e - (60.0 / 13.0 - 6.0)).abs() < 1e-12);
        assert!((e + 1.3846).abs() < 1e-4);
        // F(0) = f(0) = 0
        assert_eq!(m.model_error(&[0.0]).unwrap(), vec![0.0]);

        let free = model_error(&p.exact, &p.reduced, &[1.0, 3.0]).unwrap();
        assert_eq!(free, vec![6.0, 11.0]);
    }

    #[test]
    fn fresh_ledger_is_zero() {
        assert_eq!(Ledger::new().snapshot(), CostLedger::default());
    }

    #[test]
    fn synthetic_data() {
        let p = affine_pair();
        let f = StreamFactory::new(1);
        let obs = generate_synthetic(&p.exact, &[1.0, 3.0], 1, 0.05, NoiseRealization::Random, &mut f.stream("noise", 0))
            .unwrap();
        assert!((obs.noise_std()[0] - 0.35).abs() < 1e-12);
        assert!((obs.noise_std()[1] - 0.70).abs() < 1e-12);
        assert!((obs.row(0)[0] - 7.0).abs() < 5.0 * 0.35);
        assert_eq!(p.ledger_snapshot().g_plus, 1);

        let m = machine_pair();
        let obs = generate_synthetic(&m.exact, &[10.0], 500, 0.05, NoiseRealization::Random, &mut f.stream("noise", 1))
            .unwrap();
        assert_eq!(obs.count(), 500);
        assert!((obs.row_mean()[0] - 10.0).abs() < 4.0 * 0.5 / (500f64).sqrt());
        assert_eq!(m.ledger_snapshot().g_plus, 1);

        let zero = generate_synthetic(&m.exact, &[3.0], 3, 0.05, NoiseRealization::Zero, &mut f.stream("noise", 2))
            .unwrap();
        assert!(zero.rows().all(|r| r[0] == 60.0 / 13.0));
    }

    #[test]
    fn synthetic_rejects_degenerate_noise() {
        let m = machine_pair();
        let f = StreamFactory::new(1);
        let err = generate_synthetic(&m.exact, &[0.0], 1, 0.05, NoiseRealization::Random, &mut f.stream("noise", 0));
        assert!(matches!(err, Err(Error::Config(_))));
        let err = generate_synthetic(&m.exact, &[3.0], 0, 0.05, NoiseRealization::Random, &mut f.stream("noise", 0));
        assert!(err.is_err());
    }

    #[test]
    fn sufficient_statistics_match_row_sum() {
        let m = machine_pair();
        let f = StreamFactory::new(5);
        let obs = generate_synthetic(&m.exact, &[4.0], 7, 0.1, NoiseRealization::Random, &mut f.stream("noise", 0))
            .unwrap();
        let noise = obs.noise();
        let pred = [6.3];
        let direct: f64 = obs
            .rows()
            .map(|r| crate::prob::log_pdf_gaussian_diag(&[r[0] - pred[0]], &noise).unwrap())
            .sum();
        assert!((obs.log_likelihood(&pred) - direct).abs() < 1e-10);
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let machine = SaturatingMachine { a: 10.0 };
        let x = 4.0;
        let h = 1e-6;
        let (mut p, mut m) = ([0.0], [0.0]);
        machine.eval(&[x + h], &mut p).unwrap();
        machine.eval(&[x - h], &mut m).unwrap();
        let mut g = [0.0];
        machine.vjp(&[x], &[1.0], &mut g).unwrap();
        assert!((g[0] - (p[0] - m[0]) / (2.0 * h)).abs() < 1e-8);

        let affine = AffineModel::new("t", vec![1.0, 2.0, 3.0, 4.0], vec![0.0, 0.0]).unwrap();
        let mut out = [0.0; 2];
        affine.vjp(&[0.0, 0.0], &[1.0, 1.0], &mut out).unwrap();
        assert_eq!(out, [4.0, 6.0]);
        assert!(!affine.componentwise());
        assert!(affine_problem().exact.componentwise());
    }

    #[test]
    fn registry_lookup() {
        let r = ProblemRegistry::with_builtins();
        assert_eq!(r.names(), vec!["affine", "simple_machine"]);
        assert_eq!(r.build("affine").unwrap().dim(), 2);
        assert!(matches!(r.build("pde"), Err(Error::UnknownName { .. })));
    }

    proptest! {
        #[test]
        fn exact_is_reduced_plus_error(x0 in 0.0f64..15.0, x1 in 0.0f64..15.0) {
            let p = affine_pair();
            let x = [x0, x1];
            let e = p.model_error(&x).unwrap();
            let r = p.reduced.evaluate(&x).unwrap();
            let f = p.exact.evaluate(&x).unwrap();
            for k in 0..2 {
                prop_assert!((e[k] + r[k] - f[k]).abs() <= 4.0 * f64::EPSILON * f[k].abs());
            }
            let m = machine_pair();
            let e = m.model_error(&[x0]).unwrap()[0];
            let r = m.reduced.evaluate(&[x0]).unwrap()[0];
            let f = m.exact.evaluate(&[x0]).unwrap()[0];
            prop_assert!((e + r - f).abs() <= 4.0 * f64::EPSILON * f.abs().max(1.0));
        }

        #[test]
        fn affine_error_is_affine(a in 0.0f64..1.0, x in prop::array::uniform2(0.0f64..15.0), xp in prop::array::uniform2(0.0f64..15.0)) {
            let p = affine_pair();
            let mix = [a * x[0] + (1.0 - a) * xp[0], a * x[1] + (1.0 - a) * xp[1]];
            let lhs = p.model_error(&mix).unwrap();
            let mx = p.model_error(&x).unwrap();
            let mxp = p.model_error(&xp).unwrap();
            for k in 0..2 {
                prop_assert!((lhs[k] - (a * mx[k] + (1.0 - a) * mxp[k])).abs() < 1e-12);
            }
        }

        #[test]
        fn counters_track_exact_calls(calls in prop::collection::vec(0u8..3, 0..40)) {
            let p = affine_pair();
            let mut exact_calls = 0;
            let mut reduced_calls = 0;
            for c in calls {
                match c {
                    0 => { p.exact.evaluate(&[1.0, 1.0]).unwrap(); exact_calls += 1; }
                    1 => { p.reduced.evaluate(&[1.0, 1.0]).unwrap(); reduced_calls += 1; }
                    _ => { p.model_error(&[1.0, 1.0]).unwrap(); exact_calls += 1; reduced_calls += 1; }
                }
            }
            let s = p.ledger_snapshot();
            prop_assert_eq!(s.g_plus, exact_calls);
            prop_assert_eq!(s.g_minus, reduced_calls);
        }
    }
}
