//! Command-line front end: `simulate`, `invert`, `compare` and `weights`.

mod commands;
mod config;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

pub use commands::{
    compare, invert, simulate, summary, weights, CompareReport, CompareRow, InvertOptions,
    InvertOutput, SUITE_MANIFEST,
};
pub use config::{default_window, load_config, load_truth, resolve_model, FitConfig, RunConfig};

use crate::error::{Error, Result};
use crate::simulate::SequenceFamily;
use crate::spectro::Method;

#[derive(Debug, Parser)]
#[command(name = "ddspec", version, about = "Dynamical-decoupling noise spectroscopy")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Family {
    Cpmg,
    Kdd,
}

impl From<Family> for SequenceFamily {
    fn from(f: Family) -> Self {
        match f {
            Family::Cpmg => SequenceFamily::Cpmg,
            Family::Kdd => SequenceFamily::Kdd,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Naive,
    FirstHarmonic,
    Corrected,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Naive => Method::Naive,
            MethodArg::FirstHarmonic => Method::FirstHarmonic,
            MethodArg::Corrected => Method::Corrected,
        }
    }
}

fn parse_window(s: &str) -> std::result::Result<[usize; 2], String> {
    let (a, b) = s
        .split_once(':')
        .or_else(|| s.split_once(','))
        .ok_or_else(|| format!("expected LO:HI, got '{s}'"))?;
    let lo = a.trim().parse().map_err(|_| format!("bad window start '{a}'"))?;
    let hi = b.trim().parse().map_err(|_| format!("bad window end '{b}'"))?;
    Ok([lo, hi])
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a suite of decay curves from a TOML config (or a suite manifest).
    Simulate {
        config: PathBuf,
        /// Output directory; defaults to `output` in the config, else `<config stem>-suite`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write a gnuplot script.
        #[arg(long)]
        plot: bool,
    },
    /// Reconstruct the spectrum from a suite directory or a rate CSV.
    Invert {
        input: PathBuf,
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
        /// Tail fit window LO:HI (1-based, inclusive).
        #[arg(long, value_parser = parse_window)]
        tail_window: Option<[usize; 2]>,
        /// Subtract a constant rate offset; optional window LO:HI.
        #[arg(long, value_parser = parse_window, num_args = 0..=1, default_missing_value = "0:0")]
        baseline: Option<[usize; 2]>,
        /// Fit decay curves only after 3 tau_B (seconds).
        #[arg(long)]
        tau_b_hint: Option<f64>,
        /// Sequence family of a bare rate CSV.
        #[arg(long, value_enum, default_value = "cpmg")]
        family: Family,
        /// Output directory; defaults to the input directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write frequencies in Hz instead of rad/s.
        #[arg(long)]
        hz: bool,
        #[arg(long)]
        plot: bool,
    },
    /// Compare a spectrum CSV with a model (model TOML, run config or suite manifest).
    Compare {
        estimate: PathBuf,
        truth: PathBuf,
        /// Directory for comparison.json and comparison.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump harmonic weights A_k^2, and optionally the sensitivity matrix.
    Weights {
        #[arg(long, value_enum, default_value = "cpmg")]
        family: Family,
        /// Pulse spacing in seconds.
        #[arg(long)]
        tau: f64,
        #[arg(long, default_value_t = 50)]
        k_max: usize,
        /// Also write the m x m sensitivity matrix.
        #[arg(long)]
        matrix: Option<usize>,
        /// Output file; stdout if absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        hz: bool,
    },
}

fn default_out(config: &Path, cfg: &RunConfig) -> PathBuf {
    let base = config.parent().map(Path::to_path_buf).unwrap_or_default();
    match &cfg.output {
        Some(o) => base.join(o),
        None => {
            let stem = config.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
            base.join(format!("{stem}-suite"))
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, out, plot } => {
            let cfg = load_config(&config)?;
            let out = out.unwrap_or_else(|| default_out(&config, &cfg));
            let files = simulate(&cfg, &out, plot)?;
            println!("wrote {} file(s) to {}", files.len(), out.display());
        }
        Command::Invert {
            input,
            method,
            tail_window,
            baseline,
            tau_b_hint,
            family,
            out,
            hz,
            plot,
        } => {
            let out = out.unwrap_or_else(|| {
                if input.is_dir() {
                    input.clone()
                } else {
                    input.parent().map(Path::to_path_buf).unwrap_or_default()
                }
            });
            let opts = InvertOptions {
                method: method.map(Method::from),
                tail_window,
                baseline: baseline.map(|w| (w != [0, 0]).then_some(w)),
                tau_b_hint,
                family: family.into(),
                hz,
                plot,
            };
            let res = invert(&input, &out, &opts)?;
            for n in &res.estimate.notes {
                eprintln!("note: {n}");
            }
            if let Some(t) = &res.estimate.tail {
                println!(
                    "tail: alpha = {:.4} +- {:.4}, C = {:e}, Lambda = {:.6}, R^2 = {:.5}",
                    t.alpha, t.sigma_alpha, t.c, t.lambda, t.r_squared
                );
            }
            if let Some(b) = &res.baseline {
                println!("baseline: R_base = {:.3} +- {:.3} 1/s", b.r_base, b.sigma);
            }
            for f in &res.files {
                println!("wrote {}", f.display());
            }
        }
        Command::Compare {
            estimate,
            truth,
            out,
        } => {
            let report = compare(&estimate, &truth, out.as_deref())?;
            println!("{}", summary(&report));
        }
        Command::Weights {
            family,
            tau,
            k_max,
            matrix,
            out,
            hz,
        } => {
            let (w, u) = weights(&family.into(), tau, k_max, matrix, hz)?;
            match out {
                Some(path) => {
                    crate::io::write_text(&path, &w)?;
                    if let Some(u) = u {
                        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("weights");
                        crate::io::write_text(&path.with_file_name(format!("{stem}-matrix.csv")), &u)?;
                    }
                }
                None => {
                    print!("{w}");
                    if let Some(u) = u {
                        print!("{u}");
                    }
                }
            }
        }
    }
    Ok(())
}

/// Parses `std::env::args`, runs, and returns the process exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Config(_) | Error::Schema { .. } = e {
                2
            } else {
                1
            }
        }
    }
}
