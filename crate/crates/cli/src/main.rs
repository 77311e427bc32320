use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use metran::bias_demo::{run_scan, BiasDemoConfig};
use metran::report::{cost_report_entry, fmt_f64, write_cost_report};
use metran::runner::{run_experiment, run_oracle};
use metran::Error;

/// Transport-map posteriors with model-error correction.
#[derive(Parser)]
#[command(name = "metran", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured algorithm and write samples, trace, costs and summary.
    Run { config: PathBuf },
    /// Compare the Jensen and nested estimators on the scalar toy problem.
    BiasDemo {
        #[arg(long, default_value_t = 4096)]
        s: usize,
        #[arg(long, default_value_t = 100)]
        runs: usize,
        #[arg(long, default_value_t = -8.0, allow_negative_numbers = true)]
        w_lo: f64,
        #[arg(long, default_value_t = 8.0, allow_negative_numbers = true)]
        w_hi: f64,
        #[arg(long, default_value_t = 321)]
        w_points: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory (OUTPUT_DIR overrides the default `out`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check measured evaluation counts of finished runs against their formulas.
    CostReport { traces: Vec<PathBuf> },
    /// Tabulate the configured grid oracle.
    Oracle { config: PathBuf },
}

fn output_override() -> Option<PathBuf> {
    std::env::var_os("OUTPUT_DIR").map(PathBuf::from)
}

fn exit_code(e: &Error) -> u8 {
    if e.is_config() {
        2
    } else {
        match e {
            Error::Io(_) => 1,
            _ => 3,
        }
    }
}

fn read(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(exit_code(e))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config } => {
            let text = match read(&config) {
                Ok(t) => t,
                Err(e) => return fail(&e),
            };
            match run_experiment(&text, output_override().as_deref()) {
                Ok(report) => {
                    let p = &report.summary.posterior;
                    println!("wrote {}", report.output_dir.display());
                    println!("mean = {}", p.mean.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(", "));
                    println!("std = {}", p.std().iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(", "));
                    if report.cost.iter().any(|r| !r.matches()) {
                        eprintln!("warning: cost counters differ from their formulas, see cost.csv");
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    if !e.trace.records.is_empty() {
                        eprintln!("partial trace with {} iterations kept", e.trace.records.len());
                    }
                    fail(&e.error)
                }
            }
        }
        Command::BiasDemo {
            s,
            runs,
            w_lo,
            w_hi,
            w_points,
            seed,
            out,
        } => {
            let cfg = BiasDemoConfig {
                s,
                runs,
                w_lo,
                w_hi,
                n_points: w_points,
                seed,
            };
            let dir = out.or_else(output_override).unwrap_or_else(|| PathBuf::from("out"));
            let result = (|| -> Result<_, Error> {
                let scan = run_scan(&cfg)?;
                fs::create_dir_all(&dir)?;
                let mut w = BufWriter::new(File::create(dir.join("bias_demo.csv"))?);
                scan.write_csv(&mut w)?;
                w.flush()?;
                Ok(scan)
            })();
            match result {
                Ok(scan) => {
                    let (wj, vj) = scan.jensen_argmax();
                    let (wn, vn) = scan.nested_argmax();
                    println!("wrote {}", dir.join("bias_demo.csv").display());
                    println!("argmax I_J_mc      w = {} value = {}", fmt_f64(wj), fmt_f64(vj));
                    println!("argmax I_star_nmc  w = {} value = {}", fmt_f64(wn), fmt_f64(vn));
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e),
            }
        }
        Command::CostReport { traces } => {
            let mut entries = Vec::new();
            let mut failed = false;
            for path in &traces {
                match cost_report_entry(path) {
                    Ok(e) => entries.push(e),
                    Err(e) => {
                        eprintln!("error: {}: {e}", path.display());
                        failed = true;
                    }
                }
            }
            let stdout = io::stdout();
            if let Err(e) = write_cost_report(&entries, stdout.lock()) {
                return fail(&e);
            }
            if entries.iter().any(|e| e.mismatch()) {
                eprintln!("warning: at least one counter differs from its formula");
            }
            if failed {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            }
        }
        Command::Oracle { config } => {
            let text = match read(&config) {
                Ok(t) => t,
                Err(e) => return fail(&e),
            };
            match run_oracle(&text, output_override().as_deref()) {
                Ok(s) => {
                    println!("mean = {}", s.mean.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(", "));
                    println!("std = {}", s.std().iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(", "));
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e),
            }
        }
    }
}
