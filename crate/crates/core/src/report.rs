//! Plain-text artifacts: CSV writers, run summaries and cost tables.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::losses::LossRegistry;
use crate::models::CostLedger;
use crate::oracles::PosteriorSummary;
use crate::prob::SampleBatch;
use crate::solver::IterationTrace;

/// Round-trippable decimal with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(",")
}

pub const TRACE_HEADER: &str = "iter,loss,g_plus,g_minus,wall_ms";
pub const COST_HEADER: &str = "counter,value,formula,expected";

pub fn write_samples_csv(samples: &SampleBatch, mut w: impl Write) -> Result<()> {
    let header: Vec<String> = (1..=samples.dim()).map(|k| format!("x{k}")).collect();
    writeln!(w, "{}", header.join(","))?;
    for row in samples.rows() {
        writeln!(w, "{}", fmt_list(row))?;
    }
    Ok(())
}

pub fn write_trace_csv(trace: &IterationTrace, mut w: impl Write) -> Result<()> {
    writeln!(w, "{TRACE_HEADER}")?;
    for r in &trace.records {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.iter,
            fmt_f64(r.loss),
            r.ledger.g_plus,
            r.ledger.g_minus,
            fmt_f64(r.wall_ms)
        )?;
    }
    Ok(())
}

/// One parsed row of `trace.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub loss: f64,
    pub g_plus: u64,
    pub g_minus: u64,
    pub wall_ms: f64,
}

pub fn parse_trace_csv(text: &str) -> Result<Vec<TraceRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == TRACE_HEADER => {}
        other => return Err(Error::Parse(format!("trace header must be `{TRACE_HEADER}`, got {other:?}"))),
    }
    let bad = |n: usize, what: &str| Error::Parse(format!("trace line {n}: {what}"));
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let n = i + 2;
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != 5 {
            return Err(bad(n, &format!("expected 5 columns, got {}", cells.len())));
        }
        rows.push(TraceRow {
            iter: cells[0].parse().map_err(|_| bad(n, "bad iter"))?,
            loss: cells[1].parse().map_err(|_| bad(n, "bad loss"))?,
            g_plus: cells[2].parse().map_err(|_| bad(n, "bad g_plus"))?,
            g_minus: cells[3].parse().map_err(|_| bad(n, "bad g_minus"))?,
            wall_ms: cells[4].parse().map_err(|_| bad(n, "bad wall_ms"))?,
        });
    }
    Ok(rows)
}

/// The run shape that cost formulas are instantiated with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostShape {
    /// Completed outer iterations (N, or L for iterative_mod).
    pub iterations: u64,
    pub s: u64,
    pub n: u64,
    pub m: u64,
    pub n_mod: u64,
    pub samples: u64,
}

impl CostShape {
    pub fn from_config(cfg: &ExperimentConfig, iterations: usize) -> Result<Self> {
        let a = &cfg.algorithm;
        let (n, m) = match a.name.as_str() {
            "iterative" | "iterative_mod" => LossRegistry::with_builtins().build(&a.loss)?.split(a.s, a.m_override)?,
            _ => (a.s, 1),
        };
        Ok(Self {
            iterations: iterations as u64,
            s: a.s as u64,
            n: n as u64,
            m: m as u64,
            n_mod: if a.name == "iterative_mod" { a.n_mod as u64 } else { 1 },
            samples: cfg.output.samples as u64,
        })
    }
}

/// A counter with its closed-form expectation, when the algorithm has one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostRow {
    pub counter: &'static str,
    pub value: u64,
    pub formula: String,
    pub expected: Option<u64>,
}

impl CostRow {
    pub fn matches(&self) -> bool {
        self.expected.is_none_or(|e| e == self.value)
    }
}

/// Symbolic count formulas for the transport algorithms, instantiated with `shape`.
pub fn cost_formulas(algorithm: &str, shape: &CostShape) -> Option<[(&'static str, String, u64); 4]> {
    let CostShape {
        iterations: big_n,
        s,
        n,
        m,
        n_mod,
        samples,
    } = *shape;
    let rows = match algorithm {
        "full" => [
            ("g_plus", "N*s".to_string(), big_n * s),
            ("g_minus", "0".to_string(), 0),
            ("optimizer_steps", "N".to_string(), big_n),
            ("posterior_samples_drawn", "S".to_string(), samples),
        ],
        "reduced" => [
            ("g_plus", "0".to_string(), 0),
            ("g_minus", "N*s".to_string(), big_n * s),
            ("optimizer_steps", "N".to_string(), big_n),
            ("posterior_samples_drawn", "S".to_string(), samples),
        ],
        "iterative" => [
            ("g_plus", "N*n*m".to_string(), big_n * n * m),
            ("g_minus", "N*(n*m+n)".to_string(), big_n * (n * m + n)),
            ("optimizer_steps", "N".to_string(), big_n),
            ("posterior_samples_drawn", "S".to_string(), samples),
        ],
        "iterative_mod" => [
            ("g_plus", "L*n*m".to_string(), big_n * n * m),
            ("g_minus", "L*n*m+L*N_mod*n".to_string(), big_n * n * m + big_n * n_mod * n),
            ("optimizer_steps", "L*N_mod".to_string(), big_n * n_mod),
            ("posterior_samples_drawn", "S".to_string(), samples),
        ],
        _ => return None,
    };
    Some(rows)
}

/// Measured counters next to their expected values.
pub fn cost_rows(algorithm: &str, shape: &CostShape, ledger: &CostLedger) -> Vec<CostRow> {
    let measured = [
        ("g_plus", ledger.g_plus),
        ("g_minus", ledger.g_minus),
        ("optimizer_steps", ledger.optimizer_steps),
        ("posterior_samples_drawn", ledger.posterior_samples_drawn),
    ];
    match cost_formulas(algorithm, shape) {
        Some(f) => measured
            .iter()
            .zip(f)
            .map(|((counter, value), (_, formula, expected))| CostRow {
                counter,
                value: *value,
                formula,
                expected: Some(expected),
            })
            .collect(),
        None => measured
            .iter()
            .map(|(counter, value)| CostRow {
                counter,
                value: *value,
                formula: "-".into(),
                expected: None,
            })
            .collect(),
    }
}

pub fn write_cost_csv(rows: &[CostRow], mut w: impl Write) -> Result<()> {
    writeln!(w, "{COST_HEADER}")?;
    for r in rows {
        let expected = r.expected.map(|e| e.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{},{}", r.counter, r.value, r.formula, expected)?;
    }
    Ok(())
}

/// Key-value run summary written next to the CSVs.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub algorithm: String,
    pub posterior: PosteriorSummary,
    pub ledger: CostLedger,
    pub iterations: usize,
    pub termination: String,
    pub wall_ms: f64,
    pub oracle: Option<PosteriorSummary>,
    pub warnings: Vec<String>,
}

impl RunSummary {
    pub fn write(&self, mut w: impl Write) -> Result<()> {
        let p = &self.posterior;
        writeln!(w, "algorithm = {}", self.algorithm)?;
        writeln!(w, "source = {}", p.source.as_str())?;
        writeln!(w, "mean = {}", fmt_list(&p.mean))?;
        writeln!(w, "std = {}", fmt_list(&p.std()))?;
        for (k, q) in p.quantiles.iter().enumerate() {
            writeln!(w, "quantiles_x{} = {}", k + 1, fmt_list(q))?;
        }
        writeln!(w, "n_effective = {}", fmt_f64(p.n_effective))?;
        writeln!(w, "iterations = {}", self.iterations)?;
        writeln!(w, "termination = {}", self.termination)?;
        writeln!(w, "g_plus = {}", self.ledger.g_plus)?;
        writeln!(w, "g_minus = {}", self.ledger.g_minus)?;
        writeln!(w, "optimizer_steps = {}", self.ledger.optimizer_steps)?;
        writeln!(w, "posterior_samples_drawn = {}", self.ledger.posterior_samples_drawn)?;
        writeln!(w, "wall_ms = {}", fmt_f64(self.wall_ms))?;
        if let Some(o) = &self.oracle {
            let diff: Vec<f64> = p.mean.iter().zip(&o.mean).map(|(a, b)| a - b).collect();
            writeln!(w, "oracle_mean = {}", fmt_list(&o.mean))?;
            writeln!(w, "oracle_std = {}", fmt_list(&o.std()))?;
            writeln!(w, "mean_minus_oracle = {}", fmt_list(&diff))?;
        }
        for warning in &self.warnings {
            writeln!(w, "warning = {warning}")?;
        }
        Ok(())
    }
}

/// Reads `key = value` lines of a summary file.
pub fn parse_summary(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

/// One line of `cost-report`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostReportEntry {
    pub path: PathBuf,
    pub algorithm: String,
    pub shape: CostShape,
    pub rows: Vec<CostRow>,
}

impl CostReportEntry {
    pub fn mismatch(&self) -> bool {
        self.rows.iter().any(|r| !r.matches())
    }
}

/// Rebuilds the cost check of a finished run from its `trace.csv` and the
/// `config.toml` and `cost.csv` written beside it.
pub fn cost_report_entry(trace_path: &Path) -> Result<CostReportEntry> {
    let dir = trace_path.parent().unwrap_or(Path::new("."));
    let read = |p: &Path| {
        std::fs::read_to_string(p).map_err(|e| Error::Parse(format!("{}: {e}", p.display())))
    };
    let trace = parse_trace_csv(&read(trace_path)?).map_err(|e| Error::Parse(format!("{}: {e}", trace_path.display())))?;
    let cfg = ExperimentConfig::parse(&read(&dir.join("config.toml"))?)?;
    let measured = parse_cost_csv(&read(&dir.join("cost.csv"))?)?;
    let last = trace.last();
    let ledger = CostLedger {
        g_plus: last.map_or(0, |r| r.g_plus),
        g_minus: last.map_or(0, |r| r.g_minus),
        optimizer_steps: measured.iter().find(|(c, _)| c == "optimizer_steps").map_or(0, |(_, v)| *v),
        posterior_samples_drawn: measured.iter().find(|(c, _)| c == "posterior_samples_drawn").map_or(0, |(_, v)| *v),
    };
    let shape = CostShape::from_config(&cfg, trace.len())?;
    Ok(CostReportEntry {
        path: trace_path.to_path_buf(),
        algorithm: cfg.algorithm.name.clone(),
        rows: cost_rows(&cfg.algorithm.name, &shape, &ledger),
        shape,
    })
}

fn parse_cost_csv(text: &str) -> Result<Vec<(String, u64)>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(COST_HEADER) {
        return Err(Error::Parse(format!("cost header must be `{COST_HEADER}`")));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let mut cells = l.split(',');
            let counter = cells.next().unwrap_or_default().to_string();
            let value = cells
                .next()
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| Error::Parse(format!("bad cost line `{l}`")))?;
            Ok((counter, value))
        })
        .collect()
}

pub fn write_cost_report(entries: &[CostReportEntry], mut w: impl Write) -> Result<()> {
    writeln!(w, "path,algorithm,iterations,s,n,m,n_mod,counter,value,formula,expected,status")?;
    for e in entries {
        let sh = &e.shape;
        for r in &e.rows {
            let expected = r.expected.map(|v| v.to_string()).unwrap_or_default();
            let status = match r.expected {
                None => "n/a",
                Some(_) if r.matches() => "ok",
                Some(_) => "MISMATCH",
            };
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                e.path.display(),
                e.algorithm,
                sh.iterations,
                sh.s,
                sh.n,
                sh.m,
                sh.n_mod,
                r.counter,
                r.value,
                r.formula,
                expected,
                status
            )?;
        }
    }
    Ok(())
}
