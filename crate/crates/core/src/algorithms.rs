//! Posterior algorithms selectable by name, and the experiment they run on.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::config::{ExperimentConfig, MapInit, OracleTarget};
use crate::error::{check_dim, Error, Result};
use crate::losses::{LossEstimator, LossRegistry};
use crate::models::{generate_synthetic, Ledger, ProblemRegistry, ProblemSpec};
use crate::oracles::{grid_fixed_point, grid_posterior, mh_sample, GridDensity, IntegratedLikelihood, SummarySource};
use crate::prob::{log_pdf_uniform_box, SampleBatch, UniformBox};
use crate::rng::{StreamFactory, MCMC, NOISE, POSTERIOR};
use crate::solver::{
    run_iterative, run_iterative_mod, run_plain, IterationTrace, Observer, PlainModel, RunContext, RunFailure,
    SolverOutput, SolverSettings,
};
use crate::transport::{InitMode, TriangularMap};

/// A configured inverse problem with synthetic data and a fresh cost ledger.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub problem: ProblemSpec,
    pub ctx: RunContext,
}

impl Experiment {
    pub fn build(config: &ExperimentConfig) -> Result<Self> {
        Self::build_with(config, &ProblemRegistry::with_builtins())
    }

    pub fn build_with(config: &ExperimentConfig, problems: &ProblemRegistry) -> Result<Self> {
        config.validate()?;
        let pc = &config.problem;
        let mut problem = problems.build(&pc.name)?;
        let dim = problem.dim();
        if let Some(x) = &pc.x_star {
            check_dim(dim, x.len())?;
            problem.default_x_star = x.clone();
        }
        let lo = pc.prior_lo.clone().unwrap_or_else(|| problem.prior.lo().to_vec());
        let hi = pc.prior_hi.clone().unwrap_or_else(|| problem.prior.hi().to_vec());
        check_dim(dim, lo.len())?;
        check_dim(dim, hi.len())?;
        problem.prior = UniformBox::new(lo, hi)?;
        // data synthesis is not part of any algorithm's cost
        let data_pair = problem.pair(Ledger::new())?;
        let obs = generate_synthetic(
            &data_pair.exact,
            &problem.default_x_star,
            pc.d,
            pc.noise_level,
            pc.noise_realization,
            &mut StreamFactory::new(config.seed).stream(NOISE, 0),
        )?;
        let pair = problem.pair(Ledger::new())?;
        Ok(Self {
            config: config.clone(),
            ctx: RunContext {
                pair,
                prior: problem.prior.clone(),
                obs,
            },
            problem,
        })
    }

    pub fn x_star(&self) -> &[f64] {
        &self.problem.default_x_star
    }

    /// Solver settings; `max_iterations` is N, or L for iterative_mod.
    pub fn settings(&self) -> SolverSettings {
        let a = &self.config.algorithm;
        let iterative_mod = a.name == "iterative_mod";
        SolverSettings {
            s: a.s,
            m_override: a.m_override,
            max_iterations: if iterative_mod { a.l_mod } else { a.outer_iterations },
            min_iterations: a.min_iterations,
            delta: a.delta,
            step_size: self.config.optimizer.step_size,
            final_step_size: self.config.optimizer.final_step_size,
            n_mod: if iterative_mod { a.n_mod } else { 1 },
            seed: self.config.seed,
            wall_clock: self.config.output.wall_clock,
        }
    }

    pub fn initial_map(&self) -> Result<TriangularMap> {
        let mode = match self.config.map.init {
            MapInit::Identity => InitMode::IdentityToBox,
            MapInit::Random => InitMode::Randomized { seed: self.config.seed },
        };
        TriangularMap::init(self.ctx.dim(), self.config.map.degree, self.ctx.prior.clone(), mode)
    }

    pub fn loss(&self) -> Result<Arc<dyn LossEstimator>> {
        LossRegistry::with_builtins().build(&self.config.algorithm.loss)
    }

    /// Grid density of the configured oracle target.
    pub fn oracle_density(&self) -> Result<GridDensity> {
        let o = &self.config.oracle;
        let c = &self.ctx;
        match o.target {
            OracleTarget::Exact => grid_posterior(&c.pair.exact, &c.prior, &c.obs, o.resolution),
            OracleTarget::Reduced => grid_posterior(&c.pair.reduced, &c.prior, &c.obs, o.resolution),
            OracleTarget::FixedPoint => {
                grid_fixed_point(&c.pair, &c.prior, &c.obs, o.resolution, o.max_sweeps, o.tol).map(|fp| fp.density)
            }
        }
    }

    /// Proposal std for MH: configured, or 5% of each prior side.
    pub fn proposal_std(&self) -> Result<Vec<f64>> {
        match &self.config.mcmc.proposal_std {
            Some(sd) => {
                check_dim(self.ctx.dim(), sd.len())?;
                Ok(sd.clone())
            }
            None => Ok((0..self.ctx.dim()).map(|k| 0.05 * self.ctx.prior.width(k)).collect()),
        }
    }
}

/// What an algorithm hands back: samples plus whatever it learned along the way.
#[derive(Debug, Clone)]
pub struct AlgorithmOutput {
    pub samples: SampleBatch,
    pub source: SummarySource,
    pub trace: IterationTrace,
    pub map: Option<TriangularMap>,
    /// `(n, m)` of the training batches.
    pub layout: Option<(usize, usize)>,
    pub warnings: Vec<String>,
}

#[derive(Debug)]
pub struct AlgorithmFailure {
    pub error: Error,
    pub trace: IterationTrace,
    pub map: Option<TriangularMap>,
}

impl fmt::Display for AlgorithmFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.error)
    }
}

impl std::error::Error for AlgorithmFailure {}

impl From<Error> for AlgorithmFailure {
    fn from(error: Error) -> Self {
        Self {
            error,
            trace: IterationTrace::new(),
            map: None,
        }
    }
}

impl From<RunFailure> for AlgorithmFailure {
    fn from(f: RunFailure) -> Self {
        Self {
            error: f.error,
            trace: f.trace,
            map: Some(f.map),
        }
    }
}

pub trait PosteriorAlgorithm: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    /// Trains (if needed) and draws posterior samples. `observer` sees every outer iteration.
    fn run(&self, exp: &Experiment, observer: Observer<'_>) -> Result<AlgorithmOutput, AlgorithmFailure>;
}

fn finish(exp: &Experiment, out: SolverOutput) -> Result<AlgorithmOutput, AlgorithmFailure> {
    let mut stream = StreamFactory::new(exp.config.seed).stream(POSTERIOR, 0);
    let samples = exp.ctx.sample_posterior(&out.map, exp.config.output.samples, &mut stream)?;
    Ok(AlgorithmOutput {
        samples,
        source: SummarySource::Transport,
        trace: out.trace,
        map: Some(out.map),
        layout: Some(out.layout),
        warnings: Vec::new(),
    })
}

/// Transport map trained against the exact model (no model error).
#[derive(Debug)]
pub struct Full;

/// Transport map trained against the reduced model, ignoring model error.
#[derive(Debug)]
pub struct Reduced;

/// Fixed-point iteration with one optimizer step per bank refresh.
#[derive(Debug)]
pub struct Iterative;

/// Fixed-point iteration with `l_mod` refreshes of `n_mod` warm-started steps each.
#[derive(Debug)]
pub struct IterativeMod;

/// Samples drawn from a quadrature posterior.
#[derive(Debug)]
pub struct OracleGrid;

/// Random-walk Metropolis on the configured oracle target.
#[derive(Debug)]
pub struct OracleMcmc;

impl PosteriorAlgorithm for Full {
    fn name(&self) -> &'static str {
        "full"
    }

    fn run(&self, exp: &Experiment, observer: Observer<'_>) -> Result<AlgorithmOutput, AlgorithmFailure> {
        let t0 = exp.initial_map()?;
        let out = run_plain(&exp.ctx, PlainModel::Exact, &exp.settings(), &t0, observer)?;
        finish(exp, out)
    }
}

impl PosteriorAlgorithm for Reduced {
    fn name(&self) -> &'static str {
        "reduced"
    }

    fn run(&self, exp: &Experiment, observer: Observer<'_>) -> Result<AlgorithmOutput, AlgorithmFailure> {
        let t0 = exp.initial_map()?;
        let out = run_plain(&exp.ctx, PlainModel::Reduced, &exp.settings(), &t0, observer)?;
        finish(exp, out)
    }
}

impl PosteriorAlgorithm for Iterative {
    fn name(&self) -> &'static str {
        "iterative"
    }

    fn run(&self, exp: &Experiment, observer: Observer<'_>) -> Result<AlgorithmOutput, AlgorithmFailure> {
        let t0 = exp.initial_map()?;
        let out = run_iterative(&exp.ctx, &exp.loss()?, &exp.settings(), &t0, observer)?;
        finish(exp, out)
    }
}

impl PosteriorAlgorithm for IterativeMod {
    fn name(&self) -> &'static str {
        "iterative_mod"
    }

    fn run(&self, exp: &Experiment, observer: Observer<'_>) -> Result<AlgorithmOutput, AlgorithmFailure> {
        let t0 = exp.initial_map()?;
        let out = run_iterative_mod(&exp.ctx, &exp.loss()?, &exp.settings(), &t0, observer)?;
        finish(exp, out)
    }
}

impl PosteriorAlgorithm for OracleGrid {
    fn name(&self) -> &'static str {
        "oracle_grid"
    }

    fn run(&self, exp: &Experiment, _observer: Observer<'_>) -> Result<AlgorithmOutput, AlgorithmFailure> {
        let density = exp.oracle_density()?;
        let mut stream = StreamFactory::new(exp.config.seed).stream(POSTERIOR, 0);
        let samples = density.sample(exp.config.output.samples, &mut stream)?;
        Ok(AlgorithmOutput {
            samples,
            source: SummarySource::Grid,
            trace: IterationTrace::new(),
            map: None,
            layout: None,
            warnings: Vec::new(),
        })
    }
}

/// Unnormalized log-posterior of the configured oracle target at arbitrary points.
pub fn oracle_log_posterior(exp: &Experiment) -> Result<Box<dyn Fn(&[f64]) -> f64 + Send + Sync + '_>> {
    let c = &exp.ctx;
    let prior = &c.prior;
    let model = match exp.config.oracle.target {
        OracleTarget::Exact => &c.pair.exact,
        OracleTarget::Reduced => &c.pair.reduced,
        OracleTarget::FixedPoint => {
            let density = exp.oracle_density()?;
            let il = IntegratedLikelihood::new(&c.pair, &c.obs, &density)?;
            let reduced = &c.pair.reduced;
            return Ok(Box::new(move |x: &[f64]| {
                let lp = log_pdf_uniform_box(x, prior);
                if lp == f64::NEG_INFINITY {
                    return lp;
                }
                match reduced.evaluate(x) {
                    Ok(f) => lp + il.log_value(&f),
                    Err(_) => f64::NEG_INFINITY,
                }
            }));
        }
    };
    Ok(Box::new(move |x: &[f64]| {
        let lp = log_pdf_uniform_box(x, prior);
        if lp == f64::NEG_INFINITY {
            return lp;
        }
        match model.evaluate(x) {
            Ok(v) => lp + c.obs.log_likelihood(&v),
            Err(_) => f64::NEG_INFINITY,
        }
    }))
}

impl PosteriorAlgorithm for OracleMcmc {
    fn name(&self) -> &'static str {
        "oracle_mcmc"
    }

    fn run(&self, exp: &Experiment, _observer: Observer<'_>) -> Result<AlgorithmOutput, AlgorithmFailure> {
        let logpost = oracle_log_posterior(exp)?;
        let mc = &exp.config.mcmc;
        let mut stream = StreamFactory::new(exp.config.seed).stream(MCMC, 0);
        let out = mh_sample(
            |x| logpost(x),
            &exp.ctx.prior.center(),
            mc.samples,
            mc.burn,
            &exp.proposal_std()?,
            &mut stream,
        )?;
        Ok(AlgorithmOutput {
            samples: out.samples,
            source: SummarySource::Mcmc,
            trace: IterationTrace::new(),
            map: None,
            layout: None,
            warnings: out.warning.into_iter().collect(),
        })
    }
}

pub type AlgorithmFactory = fn() -> Arc<dyn PosteriorAlgorithm>;

/// Algorithms by name.
#[derive(Clone)]
pub struct AlgorithmRegistry {
    entries: BTreeMap<&'static str, AlgorithmFactory>,
}

impl AlgorithmRegistry {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register("full", || Arc::new(Full));
        r.register("reduced", || Arc::new(Reduced));
        r.register("iterative", || Arc::new(Iterative));
        r.register("iterative_mod", || Arc::new(IterativeMod));
        r.register("oracle_grid", || Arc::new(OracleGrid));
        r.register("oracle_mcmc", || Arc::new(OracleMcmc));
        r
    }

    pub fn register(&mut self, name: &'static str, factory: AlgorithmFactory) {
        self.entries.insert(name, factory);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }

    pub fn build(&self, name: &str) -> Result<Arc<dyn PosteriorAlgorithm>> {
        self.entries.get(name).map(|f| f()).ok_or_else(|| Error::UnknownName {
            kind: "algorithm",
            name: name.to_string(),
            available: self.names().join(", "),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::summarize_samples;

    fn cfg(text: &str) -> ExperimentConfig {
        ExperimentConfig::parse(text).unwrap()
    }

    fn noop() -> impl FnMut(&crate::solver::TraceRecord, &TriangularMap) -> Result<()> {
        |_, _| Ok(())
    }

    #[test]
    fn registry_knows_every_algorithm() {
        let r = AlgorithmRegistry::with_builtins();
        for name in ["full", "reduced", "iterative", "iterative_mod", "oracle_grid", "oracle_mcmc"] {
            assert_eq!(r.build(name).unwrap().name(), name);
        }
        assert!(matches!(r.build("nope"), Err(Error::UnknownName { .. })));
    }

    #[test]
    fn data_synthesis_is_not_charged() {
        let exp = Experiment::build(&cfg("")).unwrap();
        assert_eq!(exp.ctx.ledger(), Default::default());
        assert_eq!(exp.ctx.obs.row(0), &[7.0, 14.0]);
    }

    #[test]
    fn problem_overrides_are_checked() {
        assert!(Experiment::build(&cfg("problem.x_star = \"1,2,3\"")).unwrap_err().is_config());
        assert!(Experiment::build(&cfg("problem.name = \"nope\"")).unwrap_err().is_config());
        let e = Experiment::build(&cfg("problem.prior_lo = \"-1,-1\"\nproblem.prior_hi = \"20,20\"")).unwrap();
        assert_eq!(e.ctx.prior.hi(), &[20.0, 20.0]);
    }

    #[test]
    fn settings_follow_the_algorithm() {
        let e = Experiment::build(&cfg("algorithm.name = \"iterative_mod\"\nalgorithm.l_mod = 7\nalgorithm.n_mod = 3")).unwrap();
        let s = e.settings();
        assert_eq!((s.max_iterations, s.n_mod), (7, 3));
        let e = Experiment::build(&cfg("algorithm.outer_iterations = 9\nalgorithm.n_mod = 3")).unwrap();
        let s = e.settings();
        assert_eq!((s.max_iterations, s.n_mod), (9, 1));
    }

    #[test]
    fn oracle_algorithms_agree_on_the_exact_posterior() {
        let e = Experiment::build(&cfg(
            "oracle.target = \"exact\"\noracle.resolution = 128\nmcmc.samples = 20000\nmcmc.proposal_std = \"0.2,0.25\"\noutput.samples = 20000",
        ))
        .unwrap();
        let mut obs = noop();
        let grid = OracleGrid.run(&e, &mut obs).unwrap();
        let mh = OracleMcmc.run(&e, &mut obs).unwrap();
        let a = summarize_samples(&grid.samples, grid.source);
        let b = summarize_samples(&mh.samples, mh.source);
        for k in 0..2 {
            assert!((a.mean[k] - b.mean[k]).abs() < 0.05, "{:?} {:?}", a.mean, b.mean);
        }
        assert!(e.ctx.ledger().g_plus >= 20_000);
    }

    #[test]
    fn transport_algorithms_run_and_count() {
        for name in ["full", "reduced", "iterative", "iterative_mod"] {
            let e = Experiment::build(&cfg(&format!(
                "algorithm.name = \"{name}\"\nalgorithm.s = 64\nalgorithm.outer_iterations = 3\nalgorithm.delta = 0\n\
                 algorithm.l_mod = 2\nalgorithm.n_mod = 2\noutput.samples = 50"
            )))
            .unwrap();
            let algo = AlgorithmRegistry::with_builtins().build(name).unwrap();
            let mut seen = 0;
            let mut obs = |_: &crate::solver::TraceRecord, _: &TriangularMap| {
                seen += 1;
                Ok(())
            };
            let out = algo.run(&e, &mut obs).unwrap();
            assert_eq!(out.samples.len(), 50);
            assert_eq!(seen, out.trace.iterations());
            assert_eq!(e.ctx.ledger().posterior_samples_drawn, 50);
            assert!(out.samples.rows().all(|x| e.ctx.prior.contains(x)));
        }
    }
}
