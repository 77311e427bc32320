//! Experiment configuration: flat `section.key = value` text.
//!
//! The text is read with the `toml` crate, so `[section]` headers work too. Vectors may be
//! written as TOML arrays or as comma-separated strings (`problem.x_star = "1,3"`).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use toml::Value;

use crate::error::{Error, Result};
use crate::models::NoiseRealization;

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemConfig {
    pub name: String,
    /// Ground truth used to synthesize data; the problem default when absent.
    pub x_star: Option<Vec<f64>>,
    pub noise_level: f64,
    /// Number of measurements.
    pub d: usize,
    pub prior_lo: Option<Vec<f64>>,
    pub prior_hi: Option<Vec<f64>>,
    pub noise_realization: NoiseRealization,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlgorithmConfig {
    pub name: String,
    pub loss: String,
    pub s: usize,
    pub m_override: Option<usize>,
    /// N for full, reduced and iterative.
    pub outer_iterations: usize,
    pub min_iterations: usize,
    pub delta: f64,
    /// Bank refreshes for iterative_mod.
    pub l_mod: usize,
    /// Optimizer steps per refresh for iterative_mod.
    pub n_mod: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub step_size: f64,
    pub final_step_size: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapInit {
    Identity,
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapConfig {
    pub degree: usize,
    pub init: MapInit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    /// Posterior sample count S.
    pub samples: usize,
    pub dir: PathBuf,
    /// Map checkpoint period in outer iterations; 0 disables checkpoints.
    pub checkpoint_every: usize,
    pub wall_clock: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleTarget {
    FixedPoint,
    Exact,
    Reduced,
}

impl OracleTarget {
    pub fn as_str(&self) -> &'static str {
        match self {
            OracleTarget::FixedPoint => "fixed_point",
            OracleTarget::Exact => "exact",
            OracleTarget::Reduced => "reduced",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleConfig {
    pub target: OracleTarget,
    pub resolution: usize,
    pub max_sweeps: usize,
    pub tol: f64,
    /// Compare transport runs with the grid oracle in the summary.
    pub cross_check: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McmcConfig {
    pub samples: usize,
    pub burn: usize,
    /// Per-axis proposal std; 5% of the prior width when absent.
    pub proposal_std: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub algorithm: AlgorithmConfig,
    pub optimizer: OptimizerConfig,
    pub map: MapConfig,
    pub seed: u64,
    pub output: OutputConfig,
    pub oracle: OracleConfig,
    pub mcmc: McmcConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            problem: ProblemConfig {
                name: "affine".into(),
                x_star: None,
                noise_level: 0.05,
                d: 1,
                prior_lo: None,
                prior_hi: None,
                noise_realization: NoiseRealization::Zero,
            },
            algorithm: AlgorithmConfig {
                name: "iterative".into(),
                loss: "nmc".into(),
                s: 1000,
                m_override: None,
                outer_iterations: 500,
                min_iterations: 0,
                delta: 1e-3,
                l_mod: 50,
                n_mod: 10,
            },
            optimizer: OptimizerConfig {
                step_size: 5e-3,
                final_step_size: None,
            },
            map: MapConfig {
                degree: 3,
                init: MapInit::Identity,
            },
            seed: 0,
            output: OutputConfig {
                samples: 10_000,
                dir: PathBuf::from("out"),
                checkpoint_every: 0,
                wall_clock: false,
            },
            oracle: OracleConfig {
                target: OracleTarget::FixedPoint,
                resolution: 256,
                max_sweeps: 5000,
                tol: 1e-9,
                cross_check: false,
            },
            mcmc: McmcConfig {
                samples: 20_000,
                burn: 2_000,
                proposal_std: None,
            },
        }
    }
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

fn type_error(key: &str, want: &str, v: &Value) -> Error {
    Error::config(format!("{key}: expected {want}, got `{v}`"))
}

fn as_f64(key: &str, v: &Value) -> Result<f64> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        Value::String(s) => s.trim().parse().map_err(|_| type_error(key, "a number", v)),
        _ => Err(type_error(key, "a number", v)),
    }
}

fn as_usize(key: &str, v: &Value) -> Result<usize> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as usize),
        Value::String(s) => s.trim().parse().map_err(|_| type_error(key, "a non-negative integer", v)),
        _ => Err(type_error(key, "a non-negative integer", v)),
    }
}

fn as_bool(key: &str, v: &Value) -> Result<bool> {
    match v {
        Value::Boolean(b) => Ok(*b),
        Value::String(s) if s == "true" => Ok(true),
        Value::String(s) if s == "false" => Ok(false),
        _ => Err(type_error(key, "true or false", v)),
    }
}

fn as_string(key: &str, v: &Value) -> Result<String> {
    match v {
        Value::String(s) => Ok(s.clone()),
        _ => Err(type_error(key, "a string", v)),
    }
}

fn as_vec(key: &str, v: &Value) -> Result<Vec<f64>> {
    let out = match v {
        Value::Array(items) => items.iter().map(|x| as_f64(key, x)).collect::<Result<Vec<_>>>()?,
        Value::String(s) => s
            .split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|_| type_error(key, "a comma-separated list of numbers", v)))
            .collect::<Result<Vec<_>>>()?,
        Value::Float(_) | Value::Integer(_) => vec![as_f64(key, v)?],
        _ => return Err(type_error(key, "a list of numbers", v)),
    };
    if out.is_empty() {
        return Err(Error::config(format!("{key}: list must not be empty")));
    }
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::config(format!("{key}: entries must be finite")));
    }
    Ok(out)
}

struct Fields(BTreeMap<String, Value>);

impl Fields {
    fn get<T>(&mut self, key: &str, conv: fn(&str, &Value) -> Result<T>) -> Result<Option<T>> {
        self.0.remove(key).map(|v| conv(key, &v)).transpose()
    }

    fn set<T>(&mut self, key: &str, conv: fn(&str, &Value) -> Result<T>, slot: &mut T) -> Result<()> {
        if let Some(v) = self.get(key, conv)? {
            *slot = v;
        }
        Ok(())
    }

    fn set_opt<T>(&mut self, key: &str, conv: fn(&str, &Value) -> Result<T>, slot: &mut Option<T>) -> Result<()> {
        if let Some(v) = self.get(key, conv)? {
            *slot = Some(v);
        }
        Ok(())
    }
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
    format!("\"{}\"", parts.join(","))
}

fn range(key: &str, ok: bool, rule: &str, got: impl std::fmt::Display) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::config(format!("{key} must be {rule}, got {got}")))
    }
}

impl ExperimentConfig {
    /// Parses and validates. Unknown keys are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
        let mut flat = BTreeMap::new();
        flatten("", &table, &mut flat);
        let mut f = Fields(flat);
        let mut c = ExperimentConfig::default();

        let p = &mut c.problem;
        f.set("problem.name", as_string, &mut p.name)?;
        f.set_opt("problem.x_star", as_vec, &mut p.x_star)?;
        f.set("problem.noise_level", as_f64, &mut p.noise_level)?;
        f.set("problem.d", as_usize, &mut p.d)?;
        f.set_opt("problem.prior_lo", as_vec, &mut p.prior_lo)?;
        f.set_opt("problem.prior_hi", as_vec, &mut p.prior_hi)?;
        if let Some(r) = f.get("problem.noise_realization", as_string)? {
            p.noise_realization = match r.as_str() {
                "zero" => NoiseRealization::Zero,
                "random" => NoiseRealization::Random,
                other => {
                    return Err(Error::config(format!(
                        "problem.noise_realization must be `zero` or `random`, got `{other}`"
                    )))
                }
            };
        }

        let a = &mut c.algorithm;
        f.set("algorithm.name", as_string, &mut a.name)?;
        f.set("algorithm.loss", as_string, &mut a.loss)?;
        f.set("algorithm.s", as_usize, &mut a.s)?;
        f.set_opt("algorithm.m_override", as_usize, &mut a.m_override)?;
        f.set("algorithm.outer_iterations", as_usize, &mut a.outer_iterations)?;
        f.set("algorithm.min_iterations", as_usize, &mut a.min_iterations)?;
        f.set("algorithm.delta", as_f64, &mut a.delta)?;
        f.set("algorithm.l_mod", as_usize, &mut a.l_mod)?;
        f.set("algorithm.n_mod", as_usize, &mut a.n_mod)?;

        f.set("optimizer.step_size", as_f64, &mut c.optimizer.step_size)?;
        f.set_opt("optimizer.final_step_size", as_f64, &mut c.optimizer.final_step_size)?;

        f.set("map.degree", as_usize, &mut c.map.degree)?;
        if let Some(init) = f.get("map.init", as_string)? {
            c.map.init = match init.as_str() {
                "identity" => MapInit::Identity,
                "random" => MapInit::Random,
                other => return Err(Error::config(format!("map.init must be `identity` or `random`, got `{other}`"))),
            };
        }

        if let Some(seed) = f.get("seed", as_usize)? {
            c.seed = seed as u64;
        }

        let o = &mut c.output;
        f.set("output.samples", as_usize, &mut o.samples)?;
        if let Some(dir) = f.get("output.dir", as_string)? {
            o.dir = PathBuf::from(dir);
        }
        f.set("output.checkpoint_every", as_usize, &mut o.checkpoint_every)?;
        f.set("output.wall_clock", as_bool, &mut o.wall_clock)?;

        let q = &mut c.oracle;
        if let Some(t) = f.get("oracle.target", as_string)? {
            q.target = match t.as_str() {
                "fixed_point" => OracleTarget::FixedPoint,
                "exact" => OracleTarget::Exact,
                "reduced" => OracleTarget::Reduced,
                other => {
                    return Err(Error::config(format!(
                        "oracle.target must be `fixed_point`, `exact` or `reduced`, got `{other}`"
                    )))
                }
            };
        }
        f.set("oracle.resolution", as_usize, &mut q.resolution)?;
        f.set("oracle.max_sweeps", as_usize, &mut q.max_sweeps)?;
        f.set("oracle.tol", as_f64, &mut q.tol)?;
        f.set("oracle.cross_check", as_bool, &mut q.cross_check)?;

        f.set("mcmc.samples", as_usize, &mut c.mcmc.samples)?;
        f.set("mcmc.burn", as_usize, &mut c.mcmc.burn)?;
        f.set_opt("mcmc.proposal_std", as_vec, &mut c.mcmc.proposal_std)?;

        if let Some(key) = f.0.keys().next() {
            return Err(Error::config(format!("unknown key `{key}`")));
        }
        c.validate()?;
        Ok(c)
    }

    /// Range checks that do not depend on the chosen problem.
    pub fn validate(&self) -> Result<()> {
        let p = &self.problem;
        range("problem.noise_level", p.noise_level > 0.0 && p.noise_level.is_finite(), "> 0", p.noise_level)?;
        range("problem.d", p.d >= 1, ">= 1", p.d)?;
        if let (Some(lo), Some(hi)) = (&p.prior_lo, &p.prior_hi) {
            range("problem.prior_hi", lo.len() == hi.len(), "as long as problem.prior_lo", hi.len())?;
            for (k, (l, h)) in lo.iter().zip(hi).enumerate() {
                range(&format!("problem.prior_hi[{k}]"), h > l, &format!("> prior_lo[{k}] = {l}"), h)?;
            }
        }
        let a = &self.algorithm;
        range("algorithm.s", a.s >= 1, ">= 1", a.s)?;
        if let Some(m) = a.m_override {
            range("algorithm.m_override", m >= 1 && m <= a.s, "in [1, algorithm.s]", m)?;
        }
        range("algorithm.outer_iterations", a.outer_iterations >= 1, ">= 1", a.outer_iterations)?;
        range("algorithm.delta", a.delta >= 0.0 && a.delta.is_finite(), ">= 0", a.delta)?;
        range("algorithm.l_mod", a.l_mod >= 1, ">= 1", a.l_mod)?;
        range("algorithm.n_mod", a.n_mod >= 1, ">= 1", a.n_mod)?;
        let o = &self.optimizer;
        range("optimizer.step_size", o.step_size > 0.0 && o.step_size.is_finite(), "> 0", o.step_size)?;
        if let Some(f) = o.final_step_size {
            range("optimizer.final_step_size", f > 0.0 && f.is_finite(), "> 0", f)?;
        }
        range("map.degree", (1..=8).contains(&self.map.degree), "in [1, 8]", self.map.degree)?;
        range("output.samples", self.output.samples >= 1, ">= 1", self.output.samples)?;
        let q = &self.oracle;
        range("oracle.resolution", q.resolution >= 64, ">= 64", q.resolution)?;
        range("oracle.max_sweeps", q.max_sweeps >= 1, ">= 1", q.max_sweeps)?;
        range("oracle.tol", q.tol > 0.0, "> 0", q.tol)?;
        range("mcmc.samples", self.mcmc.samples >= 1, ">= 1", self.mcmc.samples)?;
        if let Some(sd) = &self.mcmc.proposal_std {
            range("mcmc.proposal_std", sd.iter().all(|s| *s > 0.0), "> 0 on every axis", fmt_vec(sd))?;
        }
        Ok(())
    }

    /// Canonical text; `parse(to_text(c)) == c`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        let q = |v: &str| format!("{v:?}");
        let p = &self.problem;
        line("problem.name", q(&p.name));
        if let Some(x) = &p.x_star {
            line("problem.x_star", fmt_vec(x));
        }
        line("problem.noise_level", format!("{:?}", p.noise_level));
        line("problem.d", p.d.to_string());
        if let Some(v) = &p.prior_lo {
            line("problem.prior_lo", fmt_vec(v));
        }
        if let Some(v) = &p.prior_hi {
            line("problem.prior_hi", fmt_vec(v));
        }
        line(
            "problem.noise_realization",
            q(match p.noise_realization {
                NoiseRealization::Zero => "zero",
                NoiseRealization::Random => "random",
            }),
        );
        let a = &self.algorithm;
        line("algorithm.name", q(&a.name));
        line("algorithm.loss", q(&a.loss));
        line("algorithm.s", a.s.to_string());
        if let Some(m) = a.m_override {
            line("algorithm.m_override", m.to_string());
        }
        line("algorithm.outer_iterations", a.outer_iterations.to_string());
        line("algorithm.min_iterations", a.min_iterations.to_string());
        line("algorithm.delta", format!("{:?}", a.delta));
        line("algorithm.l_mod", a.l_mod.to_string());
        line("algorithm.n_mod", a.n_mod.to_string());
        line("optimizer.step_size", format!("{:?}", self.optimizer.step_size));
        if let Some(f) = self.optimizer.final_step_size {
            line("optimizer.final_step_size", format!("{f:?}"));
        }
        line("map.degree", self.map.degree.to_string());
        line(
            "map.init",
            q(match self.map.init {
                MapInit::Identity => "identity",
                MapInit::Random => "random",
            }),
        );
        line("seed", self.seed.to_string());
        let o = &self.output;
        line("output.samples", o.samples.to_string());
        line("output.dir", q(&o.dir.to_string_lossy()));
        line("output.checkpoint_every", o.checkpoint_every.to_string());
        line("output.wall_clock", o.wall_clock.to_string());
        let r = &self.oracle;
        line("oracle.target", q(r.target.as_str()));
        line("oracle.resolution", r.resolution.to_string());
        line("oracle.max_sweeps", r.max_sweeps.to_string());
        line("oracle.tol", format!("{:?}", r.tol));
        line("oracle.cross_check", r.cross_check.to_string());
        line("mcmc.samples", self.mcmc.samples.to_string());
        line("mcmc.burn", self.mcmc.burn.to_string());
        if let Some(sd) = &self.mcmc.proposal_std {
            line("mcmc.proposal_std", fmt_vec(sd));
        }
        s
    }
}
