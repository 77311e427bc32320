//! Map training and the fixed-point iterations.
//!
//! * `Full` / `Reduced`: plain variational fit with the exact or the reduced model
//!   in the likelihood and no model-error term.
//! * `Iterative`: every outer step draws a fresh error bank from the current map,
//!   a fresh `x` batch, and takes one optimizer step.
//! * `Iterative_mod`: each bank refresh is followed by `n_mod` optimizer steps
//!   that reuse the frozen bank, warm-started from the previous map.

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::losses::{ErrorSampleBank, Jensen, LossContext, LossEstimator, LossValue};
use crate::models::{CostLedger, ModelPair, Observation};
use crate::prob::{sample, GaussianDiag, SampleBatch, UniformBox};
use crate::rng::{Stream, StreamFactory, X_BATCH, Z_BATCH};
use crate::transport::TriangularMap;

/// Adaptive-moment optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step_count: usize,
}

impl OptimizerState {
    pub fn new(n_params: usize, step_size: f64) -> Self {
        Self {
            step_size,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        self.step_count += 1;
        let t = self.step_count as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..theta.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            theta[i] -= self.step_size * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

/// Runs `n_steps` optimizer steps. `loss(map, k)` is evaluated at the current map
/// before step `k`; the returned vector holds those values.
pub fn optimize<F>(mut loss: F, t0: &TriangularMap, n_steps: usize, opt: &mut OptimizerState) -> Result<(TriangularMap, Vec<f64>)>
where
    F: FnMut(&TriangularMap, usize) -> Result<LossValue>,
{
    if n_steps == 0 {
        return Err(Error::contract("optimize needs n_steps >= 1"));
    }
    if opt.m.len() != t0.n_params() {
        return Err(Error::Dimension {
            expected: t0.n_params(),
            got: opt.m.len(),
        });
    }
    let mut map = t0.clone();
    let mut theta = map.theta().to_vec();
    let mut values = Vec::with_capacity(n_steps);
    for k in 0..n_steps {
        let lv = loss(&map, k).map_err(|e| match e {
            Error::Aborted { .. } => e,
            other => Error::Aborted {
                step: k,
                message: other.to_string(),
            },
        })?;
        if !lv.value.is_finite() || lv.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Aborted {
                step: k,
                message: format!("non-finite loss or gradient (loss = {})", lv.value),
            });
        }
        opt.step(&mut theta, &lv.grad);
        map.set_theta(&theta).map_err(|e| Error::Aborted {
            step: k,
            message: e.to_string(),
        })?;
        values.push(lv.value);
    }
    Ok((map, values))
}

/// Observation, prior and model pair of one inverse problem.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub pair: ModelPair,
    pub prior: UniformBox,
    pub obs: Observation,
}

impl RunContext {
    pub fn dim(&self) -> usize {
        self.prior.dim()
    }

    pub fn ledger(&self) -> CostLedger {
        self.pair.ledger_snapshot()
    }

    fn reduced_ctx(&self) -> LossContext<'_> {
        LossContext {
            forward: &self.pair.reduced,
            prior: &self.prior,
            obs: &self.obs,
        }
    }

    /// Posterior draws from a trained map; counted as posterior samples only.
    pub fn sample_posterior(&self, map: &TriangularMap, count: usize, stream: &mut Stream) -> Result<SampleBatch> {
        let batch = sample_posterior(map, count, stream)?;
        self.pair.ledger().count_posterior_samples(count as u64);
        Ok(batch)
    }
}

/// Settings shared by the training algorithms.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverSettings {
    /// Sample budget per loss evaluation.
    pub s: usize,
    pub m_override: Option<usize>,
    /// Upper bound on outer iterations (bank refreshes for `Iterative_mod`).
    pub max_iterations: usize,
    /// The stopping test is not applied before this many outer iterations.
    pub min_iterations: usize,
    pub delta: f64,
    pub step_size: f64,
    /// When set, the step size decays geometrically to this value over `max_iterations`.
    pub final_step_size: Option<f64>,
    /// Optimizer steps per bank refresh in `Iterative_mod`.
    pub n_mod: usize,
    pub seed: u64,
    /// Record wall-clock time in the trace; off gives byte-reproducible traces.
    pub wall_clock: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            s: 1000,
            m_override: None,
            max_iterations: 500,
            min_iterations: 0,
            delta: 1e-3,
            step_size: 5e-3,
            final_step_size: None,
            n_mod: 1,
            seed: 0,
            wall_clock: true,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if self.s == 0 {
            return Err(Error::config("algorithm.s must be >= 1"));
        }
        if self.max_iterations == 0 {
            return Err(Error::config("algorithm.outer_iterations must be >= 1"));
        }
        if !(self.delta >= 0.0) {
            return Err(Error::config("algorithm.delta must be >= 0"));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::config("optimizer.step_size must be > 0"));
        }
        if let Some(f) = self.final_step_size {
            if !(f > 0.0 && f.is_finite()) {
                return Err(Error::config("optimizer.final_step_size must be > 0"));
            }
        }
        if self.n_mod == 0 {
            return Err(Error::config("algorithm.n_mod must be >= 1"));
        }
        Ok(())
    }
}

impl SolverSettings {
    /// Step size used during outer iteration `iter` (0-based).
    pub fn step_size_at(&self, iter: usize) -> f64 {
        match self.final_step_size {
            Some(f) if self.max_iterations > 1 => {
                let t = iter as f64 / (self.max_iterations - 1) as f64;
                self.step_size * (f / self.step_size).powf(t)
            }
            _ => self.step_size,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminationReason {
    DeltaConverged,
    MaxIterations,
}

impl TerminationReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            TerminationReason::DeltaConverged => "delta-converged",
            TerminationReason::MaxIterations => "max-iterations",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    /// 1-based outer iteration.
    pub iter: usize,
    pub loss: f64,
    pub ledger: CostLedger,
    /// Index of the map checkpoint taken after this iteration.
    pub checkpoint: usize,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct IterationTrace {
    pub records: Vec<TraceRecord>,
    pub termination: Option<TerminationReason>,
}

impl IterationTrace {
    pub fn new() -> Self {
        Self {
            records: Vec::new(),
            termination: None,
        }
    }

    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    pub fn iterations(&self) -> usize {
        self.records.len()
    }
}

/// Result of a completed training run.
#[derive(Debug, Clone)]
pub struct SolverOutput {
    pub map: TriangularMap,
    pub trace: IterationTrace,
    /// `(n, m)` batch layout used by the loss.
    pub layout: (usize, usize),
}

/// A run that stopped early; keeps what was computed.
#[derive(Debug)]
pub struct RunFailure {
    pub error: Error,
    pub trace: IterationTrace,
    pub map: TriangularMap,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} (after {} completed iterations)", self.error, self.trace.records.len())
    }
}

impl std::error::Error for RunFailure {}

/// Called after every outer iteration with the new record and map.
pub type Observer<'a> = &'a mut dyn FnMut(&TraceRecord, &TriangularMap) -> Result<()>;

/// `z ~ N(0, I)` pushed through `map`, then `ε = M(T(z))`. Counts `n·m` evaluations of each model.
pub fn refresh_bank(
    map: &TriangularMap,
    pair: &ModelPair,
    n: usize,
    m: usize,
    stream: &mut Stream,
    producer_tag: u64,
) -> Result<ErrorSampleBank> {
    let z = sample(&GaussianDiag::standard(map.dim()), n * m, stream)?;
    let eps: Vec<Vec<f64>> = (0..z.len())
        .into_par_iter()
        .map(|i| pair.model_error(&map.forward(z.row(i))?.y))
        .collect::<Result<_>>()?;
    ErrorSampleBank::new(eps.concat(), pair.exact.dim_out(), n, m, producer_tag)
}

/// `count` reference draws pushed through `map`. No forward model is evaluated.
pub fn sample_posterior(map: &TriangularMap, count: usize, stream: &mut Stream) -> Result<SampleBatch> {
    if count == 0 {
        return Err(Error::contract("posterior sample count must be >= 1"));
    }
    let x = sample(&GaussianDiag::standard(map.dim()), count, stream)?;
    let ys: Vec<Vec<f64>> = (0..count)
        .into_par_iter()
        .map(|i| Ok(map.forward(x.row(i))?.y))
        .collect::<Result<_>>()?;
    SampleBatch::from_rows(ys.concat(), map.dim(), stream.tag())
}

struct Driver<'a> {
    settings: &'a SolverSettings,
    started: Instant,
    trace: IterationTrace,
}

impl<'a> Driver<'a> {
    fn new(settings: &'a SolverSettings) -> Self {
        Self {
            settings,
            started: Instant::now(),
            trace: IterationTrace::new(),
        }
    }

    /// Appends a record; returns true when the run should stop.
    fn record(&mut self, loss: f64, ledger: CostLedger) -> bool {
        let iter = self.trace.records.len() + 1;
        let wall_ms = if self.settings.wall_clock {
            self.started.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        };
        self.trace.records.push(TraceRecord {
            iter,
            loss,
            ledger,
            checkpoint: iter,
            wall_ms,
        });
        let r = &self.trace.records;
        if iter >= 2 && iter >= self.settings.min_iterations && (r[iter - 1].loss - r[iter - 2].loss).abs() <= self.settings.delta {
            self.trace.termination = Some(TerminationReason::DeltaConverged);
            return true;
        }
        if iter >= self.settings.max_iterations {
            self.trace.termination = Some(TerminationReason::MaxIterations);
            return true;
        }
        false
    }

    fn fail(self, error: Error, map: TriangularMap) -> RunFailure {
        RunFailure {
            error,
            trace: self.trace,
            map,
        }
    }
}

fn x_batch(factory: &StreamFactory, dim: usize, n: usize, index: u64) -> Result<SampleBatch> {
    sample(&GaussianDiag::standard(dim), n, &mut factory.stream(X_BATCH, index))
}

/// Which model sits in the likelihood of a plain (no model error) fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlainModel {
    Exact,
    Reduced,
}

/// Full or Reduced: one optimizer step per iteration on `s` fresh samples with `ε ≡ 0`.
pub fn run_plain(
    ctx: &RunContext,
    which: PlainModel,
    settings: &SolverSettings,
    t0: &TriangularMap,
    observer: Observer<'_>,
) -> Result<SolverOutput, RunFailure> {
    let mut driver = Driver::new(settings);
    let fail_early = |e: Error| RunFailure {
        error: e,
        trace: IterationTrace::new(),
        map: t0.clone(),
    };
    settings.validate().map_err(fail_early)?;
    let forward = match which {
        PlainModel::Exact => &ctx.pair.exact,
        PlainModel::Reduced => &ctx.pair.reduced,
    };
    let loss_ctx = LossContext {
        forward,
        prior: &ctx.prior,
        obs: &ctx.obs,
    };
    let n = settings.s;
    let bank = ErrorSampleBank::zeros(ctx.obs.dim(), n, 1).map_err(fail_early)?;
    let factory = StreamFactory::new(settings.seed);
    let mut opt = OptimizerState::new(t0.n_params(), settings.step_size);
    let mut map = t0.clone();
    for step in 0..settings.max_iterations {
        opt.step_size = settings.step_size_at(step);
        let result = optimize(
            |m, _| {
                let xs = x_batch(&factory, m.dim(), n, step as u64)?;
                let lv = Jensen.evaluate(&loss_ctx, m, &xs, &bank)?;
                if lv.value.is_finite() {
                    ctx.pair.ledger().count_optimizer_step();
                }
                Ok(lv)
            },
            &map,
            1,
            &mut opt,
        );
        let (next, losses) = match result {
            Ok(v) => v,
            Err(e) => return Err(driver.fail(reindex(e, step), map)),
        };
        map = next;
        let stop = driver.record(losses[0], ctx.ledger());
        if let Err(e) = observer(driver.trace.records.last().unwrap(), &map) {
            return Err(driver.fail(e, map));
        }
        if stop {
            break;
        }
    }
    Ok(SolverOutput {
        map,
        trace: driver.trace,
        layout: (n, 1),
    })
}

fn reindex(e: Error, step: usize) -> Error {
    match e {
        Error::Aborted { message, .. } => Error::Aborted { step, message },
        other => other,
    }
}

/// One fresh bank, fresh batch and optimizer step per outer iteration.
pub fn run_iterative(
    ctx: &RunContext,
    loss: &Arc<dyn LossEstimator>,
    settings: &SolverSettings,
    t0: &TriangularMap,
    observer: Observer<'_>,
) -> Result<SolverOutput, RunFailure> {
    let single = SolverSettings {
        n_mod: 1,
        ..settings.clone()
    };
    run_iterative_mod(ctx, loss, &single, t0, observer)
}

/// Bank refreshed once per outer iteration, then `n_mod` warm-started optimizer steps on it.
///
/// Refresh `r` draws its bank from stream `(z-batch, r)`; global optimizer step `g`
/// draws its batch from `(x-batch, g)`. With `n_mod = 1` this is exactly [`run_iterative`].
pub fn run_iterative_mod(
    ctx: &RunContext,
    loss: &Arc<dyn LossEstimator>,
    settings: &SolverSettings,
    t0: &TriangularMap,
    observer: Observer<'_>,
) -> Result<SolverOutput, RunFailure> {
    let mut driver = Driver::new(settings);
    let fail_early = |e: Error| RunFailure {
        error: e,
        trace: IterationTrace::new(),
        map: t0.clone(),
    };
    settings.validate().map_err(fail_early)?;
    let (n, m) = loss.split(settings.s, settings.m_override).map_err(fail_early)?;
    let factory = StreamFactory::new(settings.seed);
    let loss_ctx = ctx.reduced_ctx();
    let mut opt = OptimizerState::new(t0.n_params(), settings.step_size);
    let mut map = t0.clone();
    let mut global_step = 0usize;
    for refresh in 0..settings.max_iterations {
        let bank = match refresh_bank(&map, &ctx.pair, n, m, &mut factory.stream(Z_BATCH, refresh as u64), refresh as u64) {
            Ok(b) => b,
            Err(e) => {
                return Err(driver.fail(
                    Error::Aborted {
                        step: global_step,
                        message: format!("bank refresh failed: {e}"),
                    },
                    map,
                ))
            }
        };
        let first = global_step;
        opt.step_size = settings.step_size_at(refresh);
        let result = optimize(
            |mm, k| {
                let xs = x_batch(&factory, mm.dim(), n, (first + k) as u64)?;
                let lv = loss.evaluate(&loss_ctx, mm, &xs, &bank)?;
                if lv.value.is_finite() {
                    ctx.pair.ledger().count_optimizer_step();
                }
                Ok(lv)
            },
            &map,
            settings.n_mod,
            &mut opt,
        );
        let (next, losses) = match result {
            Ok(v) => v,
            Err(Error::Aborted { step, message }) => {
                return Err(driver.fail(
                    Error::Aborted {
                        step: first + step,
                        message,
                    },
                    map,
                ))
            }
            Err(e) => return Err(driver.fail(e, map)),
        };
        global_step += settings.n_mod;
        map = next;
        let stop = driver.record(*losses.last().unwrap(), ctx.ledger());
        if let Err(e) = observer(driver.trace.records.last().unwrap(), &map) {
            return Err(driver.fail(e, map));
        }
        if stop {
            break;
        }
    }
    Ok(SolverOutput {
        map,
        trace: driver.trace,
        layout: (n, m),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{LossRegistry, Nmc};
    use crate::models::{affine_problem, generate_synthetic, simple_machine_problem, Ledger, NoiseRealization};
    use crate::rng::NOISE;
    use crate::transport::InitMode;

    fn context(problem: &str, x_star: &[f64]) -> RunContext {
        let p = if problem == "affine" { affine_problem() } else { simple_machine_problem() };
        let pair = p.pair(Ledger::new()).unwrap();
        let obs = generate_synthetic(
            &pair.exact,
            x_star,
            1,
            0.05,
            NoiseRealization::Zero,
            &mut StreamFactory::new(1).stream(NOISE, 0),
        )
        .unwrap();
        // synthetic data generation is not part of any algorithm's cost
        let ledger = Ledger::new();
        let pair = p.pair(ledger).unwrap();
        RunContext {
            pair,
            prior: p.prior,
            obs,
        }
    }

    fn t0(ctx: &RunContext, degree: usize) -> TriangularMap {
        TriangularMap::init(ctx.dim(), degree, ctx.prior.clone(), InitMode::IdentityToBox).unwrap()
    }

    fn nmc() -> Arc<dyn LossEstimator> {
        Arc::new(Nmc)
    }

    fn noop() -> impl FnMut(&TraceRecord, &TriangularMap) -> Result<()> {
        |_, _| Ok(())
    }

    #[test]
    fn quadratic_sanity() {
        let map = TriangularMap::init(2, 3, UniformBox::cube(2, 0.0, 1.0).unwrap(), InitMode::IdentityToBox).unwrap();
        let target: Vec<f64> = (0..map.n_params()).map(|i| 0.5 - 0.1 * i as f64).collect();
        let mut opt = OptimizerState::new(map.n_params(), 0.05);
        let quad = |m: &TriangularMap, _| {
            let grad: Vec<f64> = m.theta().iter().zip(&target).map(|(a, b)| 2.0 * (a - b)).collect();
            let value = m.theta().iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum();
            Ok(LossValue {
                value,
                grad,
                n_used: 1,
                m_used: 1,
            })
        };
        let (out, _) = optimize(quad, &map, 2000, &mut opt).unwrap();
        for (a, b) in out.theta().iter().zip(&target) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_gradient_leaves_theta() {
        let map = TriangularMap::init(1, 2, UniformBox::cube(1, 0.0, 1.0).unwrap(), InitMode::Randomized { seed: 3 }).unwrap();
        let mut opt = OptimizerState::new(map.n_params(), 0.1);
        let n = map.n_params();
        let (out, _) = optimize(
            |_, _| {
                Ok(LossValue {
                    value: 1.0,
                    grad: vec![0.0; n],
                    n_used: 1,
                    m_used: 1,
                })
            },
            &map,
            10,
            &mut opt,
        )
        .unwrap();
        assert_eq!(out.theta(), map.theta());
    }

    #[test]
    fn non_finite_loss_aborts_with_step() {
        let map = TriangularMap::init(1, 1, UniformBox::cube(1, 0.0, 1.0).unwrap(), InitMode::IdentityToBox).unwrap();
        let mut opt = OptimizerState::new(map.n_params(), 0.1);
        let n = map.n_params();
        let err = optimize(
            |_, k| {
                Ok(LossValue {
                    value: if k == 3 { f64::NAN } else { 1.0 },
                    grad: vec![1.0; n],
                    n_used: 1,
                    m_used: 1,
                })
            },
            &map,
            10,
            &mut opt,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Aborted { step: 3, .. }));
    }

    #[test]
    fn runs_are_reproducible() {
        let settings = SolverSettings {
            s: 200,
            max_iterations: 30,
            delta: 0.0,
            step_size: 0.02,
            seed: 5,
            ..Default::default()
        };
        let a = {
            let ctx = context("affine", &[1.0, 3.0]);
            run_iterative(&ctx, &nmc(), &settings, &t0(&ctx, 2), &mut noop()).unwrap()
        };
        let b = {
            let ctx = context("affine", &[1.0, 3.0]);
            run_iterative(&ctx, &nmc(), &settings, &t0(&ctx, 2), &mut noop()).unwrap()
        };
        assert_eq!(a.trace.losses(), b.trace.losses());
        assert_eq!(a.map.theta(), b.map.theta());
    }

    #[test]
    fn huge_delta_stops_at_first_pair() {
        let ctx = context("affine", &[1.0, 3.0]);
        let settings = SolverSettings {
            s: 100,
            delta: 1e9,
            ..Default::default()
        };
        let out = run_iterative(&ctx, &nmc(), &settings, &t0(&ctx, 1), &mut noop()).unwrap();
        assert_eq!(out.trace.iterations(), 2);
        assert_eq!(out.trace.termination, Some(TerminationReason::DeltaConverged));
    }

    #[test]
    fn min_iterations_delays_the_stopping_test() {
        let ctx = context("affine", &[1.0, 3.0]);
        let settings = SolverSettings {
            s: 100,
            delta: 1e9,
            min_iterations: 7,
            ..Default::default()
        };
        let out = run_iterative(&ctx, &nmc(), &settings, &t0(&ctx, 1), &mut noop()).unwrap();
        assert_eq!(out.trace.iterations(), 7);
    }

    #[test]
    fn termination_invariant() {
        let ctx = context("simple_machine", &[3.0]);
        let settings = SolverSettings {
            s: 125,
            max_iterations: 60,
            delta: 0.05,
            step_size: 0.02,
            ..Default::default()
        };
        let out = run_iterative(&ctx, &nmc(), &settings, &t0(&ctx, 2), &mut noop()).unwrap();
        let l = out.trace.losses();
        match out.trace.termination.unwrap() {
            TerminationReason::DeltaConverged => {
                assert!((l[l.len() - 1] - l[l.len() - 2]).abs() <= settings.delta)
            }
            TerminationReason::MaxIterations => assert_eq!(l.len(), 60),
        }
        for w in out.trace.records.windows(2) {
            assert!(w[1].iter > w[0].iter);
        }
    }

    #[test]
    fn iterative_costs() {
        let ctx = context("affine", &[1.0, 3.0]);
        let settings = SolverSettings {
            s: 1000,
            max_iterations: 12,
            delta: 0.0,
            ..Default::default()
        };
        let out = run_iterative(&ctx, &nmc(), &settings, &t0(&ctx, 1), &mut noop()).unwrap();
        assert_eq!(out.layout, (100, 10));
        let c = ctx.ledger();
        let iters = out.trace.iterations() as u64;
        assert_eq!(c.g_plus, iters * 1000);
        assert_eq!(c.g_minus, iters * (1000 + 100));
        assert_eq!(c.optimizer_steps, iters);
    }

    #[test]
    fn iterative_mod_costs_and_degenerate_equivalence() {
        let settings = SolverSettings {
            s: 64,
            max_iterations: 5,
            delta: 0.0,
            n_mod: 7,
            seed: 2,
            ..Default::default()
        };
        let ctx = context("affine", &[1.0, 3.0]);
        let out = run_iterative_mod(&ctx, &nmc(), &settings, &t0(&ctx, 1), &mut noop()).unwrap();
        let c = ctx.ledger();
        assert_eq!(out.layout, (16, 4));
        assert_eq!(c.g_plus, 5 * 64);
        assert_eq!(c.g_minus, 5 * 64 + 5 * 7 * 16);
        assert_eq!(c.optimizer_steps, 35);

        let one = SolverSettings {
            n_mod: 1,
            max_iterations: 9,
            ..settings.clone()
        };
        let ctx_a = context("affine", &[1.0, 3.0]);
        let ctx_b = context("affine", &[1.0, 3.0]);
        let a = run_iterative(&ctx_a, &nmc(), &one, &t0(&ctx_a, 2), &mut noop()).unwrap();
        let b = run_iterative_mod(&ctx_b, &nmc(), &one, &t0(&ctx_b, 2), &mut noop()).unwrap();
        assert_eq!(a.trace.losses(), b.trace.losses());
        assert_eq!(a.map.theta(), b.map.theta());
        assert_eq!(ctx_a.ledger(), ctx_b.ledger());
    }

    #[test]
    fn warm_start_between_inner_steps() {
        let settings = SolverSettings {
            s: 64,
            max_iterations: 1,
            n_mod: 6,
            seed: 9,
            ..Default::default()
        };
        let ctx = context("simple_machine", &[3.0]);
        let start = t0(&ctx, 2);
        let out = run_iterative_mod(&ctx, &nmc(), &settings, &start, &mut noop()).unwrap();

        // replay: same bank, one optimize call per inner step, each starting where the last ended
        let replay = context("simple_machine", &[3.0]);
        let factory = StreamFactory::new(9);
        let (n, m) = Nmc.split(64, None).unwrap();
        let bank = refresh_bank(&start, &replay.pair, n, m, &mut factory.stream(Z_BATCH, 0), 0).unwrap();
        let mut opt = OptimizerState::new(start.n_params(), settings.step_size);
        let mut map = start.clone();
        for g in 0..6 {
            let xs = x_batch(&factory, 1, n, g).unwrap();
            let (next, _) = optimize(|mm, _| Nmc.evaluate(&replay.reduced_ctx(), mm, &xs, &bank), &map, 1, &mut opt).unwrap();
            map = next;
        }
        assert_eq!(out.map.theta(), map.theta());
    }

    #[test]
    fn plain_costs() {
        let ctx = context("affine", &[1.0, 3.0]);
        let settings = SolverSettings {
            s: 50,
            max_iterations: 8,
            delta: 0.0,
            ..Default::default()
        };
        run_plain(&ctx, PlainModel::Exact, &settings, &t0(&ctx, 1), &mut noop()).unwrap();
        assert_eq!((ctx.ledger().g_plus, ctx.ledger().g_minus), (400, 0));
        let ctx = context("affine", &[1.0, 3.0]);
        run_plain(&ctx, PlainModel::Reduced, &settings, &t0(&ctx, 1), &mut noop()).unwrap();
        assert_eq!((ctx.ledger().g_plus, ctx.ledger().g_minus), (0, 400));
    }

    #[test]
    fn bank_refresh_shape_and_counts() {
        let ctx = context("affine", &[1.0, 3.0]);
        let map = t0(&ctx, 1);
        let bank = refresh_bank(&map, &ctx.pair, 10, 4, &mut StreamFactory::new(1).stream(Z_BATCH, 0), 3).unwrap();
        assert_eq!((bank.n(), bank.m(), bank.len(), bank.producer_tag()), (10, 4, 40, 3));
        assert_eq!((ctx.ledger().g_plus, ctx.ledger().g_minus), (40, 40));
        let flat = refresh_bank(&map, &ctx.pair, 25, 1, &mut StreamFactory::new(1).stream(Z_BATCH, 1), 4).unwrap();
        assert_eq!(flat.len(), 25);
    }

    #[test]
    fn sample_posterior_is_cost_neutral() {
        let ctx = context("affine", &[1.0, 3.0]);
        let map = t0(&ctx, 1);
        let before = ctx.ledger();
        let s = ctx.sample_posterior(&map, 10_000, &mut StreamFactory::new(3).stream("posterior", 0)).unwrap();
        let after = ctx.ledger();
        assert_eq!((before.g_plus, before.g_minus), (after.g_plus, after.g_minus));
        assert_eq!(after.posterior_samples_drawn, 10_000);
        for k in 0..2 {
            assert!((s.column_mean(k) - 7.5).abs() < 0.2);
        }
    }

    #[test]
    fn abort_keeps_partial_trace() {
        let ctx = context("affine", &[1.0, 3.0]);
        let settings = SolverSettings {
            s: 50,
            max_iterations: 10,
            delta: 0.0,
            ..Default::default()
        };
        let mut calls = 0;
        let mut observer = |_: &TraceRecord, _: &TriangularMap| {
            calls += 1;
            if calls == 4 {
                Err(Error::Aborted {
                    step: 3,
                    message: "stop".into(),
                })
            } else {
                Ok(())
            }
        };
        let loss = LossRegistry::with_builtins().build("jensen").unwrap();
        let err = run_iterative(&ctx, &loss, &settings, &t0(&ctx, 1), &mut observer).unwrap_err();
        assert_eq!(err.trace.iterations(), 4);
    }
}
