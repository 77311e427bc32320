//! End-to-end runs: config text in, files out.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::algorithms::{AlgorithmRegistry, Experiment};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::oracles::{summarize_grid, summarize_samples, PosteriorSummary};
use crate::report::{cost_rows, write_cost_csv, write_samples_csv, write_trace_csv, CostRow, CostShape, RunSummary};
use crate::solver::{IterationTrace, TraceRecord};
use crate::transport::TriangularMap;

#[derive(Debug, Clone)]
pub struct RunReport {
    pub summary: RunSummary,
    pub trace: IterationTrace,
    /// The config text exactly as read.
    pub config_echo: String,
    pub cost: Vec<CostRow>,
    pub output_dir: PathBuf,
}

#[derive(Debug)]
pub struct RunError {
    pub error: Error,
    /// Iterations completed before the failure; also written to `trace.csv`.
    pub trace: IterationTrace,
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.error)
    }
}

impl std::error::Error for RunError {}

impl From<Error> for RunError {
    fn from(error: Error) -> Self {
        Self {
            error,
            trace: IterationTrace::new(),
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn prepare_dir(cfg: &ExperimentConfig, output_override: Option<&Path>) -> Result<PathBuf> {
    let dir = output_override.map(Path::to_path_buf).unwrap_or_else(|| cfg.output.dir.clone());
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

/// Runs the configured algorithm and writes `config.toml`, `samples.csv`, `trace.csv`,
/// `cost.csv` and `summary.txt` into the output directory. On a solver failure the
/// partial trace and the counters reached so far are still written.
pub fn run_experiment(config_text: &str, output_override: Option<&Path>) -> Result<RunReport, RunError> {
    let cfg = ExperimentConfig::parse(config_text)?;
    let algorithm = AlgorithmRegistry::with_builtins().build(&cfg.algorithm.name)?;
    let exp = Experiment::build(&cfg)?;
    let dir = prepare_dir(&cfg, output_override)?;
    fs::write(dir.join("config.toml"), config_text).map_err(Error::from)?;

    let every = cfg.output.checkpoint_every;
    let ckpt_dir = dir.join("checkpoints");
    if every > 0 {
        fs::create_dir_all(&ckpt_dir).map_err(Error::from)?;
    }
    let mut observer = |rec: &TraceRecord, map: &TriangularMap| -> Result<()> {
        if every > 0 && rec.iter % every == 0 {
            fs::write(ckpt_dir.join(format!("map_{:06}.txt", rec.iter)), map.to_text())?;
        }
        Ok(())
    };
    let started = Instant::now();
    let outcome = algorithm.run(&exp, &mut observer);
    let wall_ms = if cfg.output.wall_clock {
        started.elapsed().as_secs_f64() * 1e3
    } else {
        0.0
    };
    let write_costs = |trace: &IterationTrace| -> Result<Vec<CostRow>> {
        let shape = CostShape::from_config(&cfg, trace.iterations())?;
        let rows = cost_rows(&cfg.algorithm.name, &shape, &exp.ctx.ledger());
        write_trace_csv(trace, create(&dir.join("trace.csv"))?)?;
        write_cost_csv(&rows, create(&dir.join("cost.csv"))?)?;
        Ok(rows)
    };
    let out = match outcome {
        Ok(out) => out,
        Err(failure) => {
            write_costs(&failure.trace)?;
            if let Some(map) = &failure.map {
                fs::write(dir.join("map_at_failure.txt"), map.to_text()).map_err(Error::from)?;
            }
            return Err(RunError {
                error: failure.error,
                trace: failure.trace,
            });
        }
    };
    let cost = write_costs(&out.trace)?;
    write_samples_csv(&out.samples, create(&dir.join("samples.csv"))?)?;
    if let Some(map) = &out.map {
        fs::write(dir.join("map.txt"), map.to_text()).map_err(Error::from)?;
    }
    let oracle = if cfg.oracle.cross_check {
        Some(summarize_grid(&exp.oracle_density()?))
    } else {
        None
    };
    let summary = RunSummary {
        algorithm: cfg.algorithm.name.clone(),
        posterior: summarize_samples(&out.samples, out.source),
        ledger: exp.ctx.ledger(),
        iterations: out.trace.iterations(),
        termination: out
            .trace
            .termination
            .map_or("none".to_string(), |t| t.as_str().to_string()),
        wall_ms,
        oracle,
        warnings: out.warnings,
    };
    summary.write(create(&dir.join("summary.txt"))?)?;
    Ok(RunReport {
        summary,
        trace: out.trace,
        config_echo: config_text.to_string(),
        cost,
        output_dir: dir,
    })
}

/// Tabulates the configured oracle target: `density.csv` and `summary.txt`.
pub fn run_oracle(config_text: &str, output_override: Option<&Path>) -> Result<PosteriorSummary> {
    let cfg = ExperimentConfig::parse(config_text)?;
    let exp = Experiment::build(&cfg)?;
    let dir = prepare_dir(&cfg, output_override)?;
    fs::write(dir.join("config.toml"), config_text)?;
    let density = exp.oracle_density()?;
    density.write_csv(create(&dir.join("density.csv"))?)?;
    let summary = summarize_grid(&density);
    RunSummary {
        algorithm: format!("grid:{}", cfg.oracle.target.as_str()),
        posterior: summary.clone(),
        ledger: exp.ctx.ledger(),
        iterations: 0,
        termination: "none".into(),
        wall_ms: 0.0,
        oracle: None,
        warnings: Vec::new(),
    }
    .write(create(&dir.join("summary.txt"))?)?;
    Ok(summary)
}
