//! `salr` command-line front end. Every subcommand prints flat `key=value`
//! lines to stdout and is deterministic given `--seed`.

mod commands;
mod verify;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Result, SalrError};

pub use commands::{compress_matrix, CompressOptions, CompressOutcome};
pub use verify::{verify_theorem, VerifyOptions, VerifyOutcome};

#[derive(Debug, Parser)]
#[command(name = "salr", version, about = "Prune, compress and verify sparse + low-rank weight matrices")]
pub struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true, env = "SALR_SEED", default_value_t = 0)]
    pub seed: u64,

    /// Output path (file type depends on the subcommand).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DmatPrecision {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StoredPrecision {
    F32,
    F16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

#[derive(Debug, Args)]
pub struct PruneArgs {
    /// Fraction of entries to remove, 0 <= p < 1.
    #[arg(long, default_value_t = 0.0)]
    pub sparsity: f64,
    /// static | dynamic-w0 | dynamic-u | nm:<n>:<m>
    #[arg(long, default_value = "static")]
    pub method: String,
    /// Update matrix for the dynamic methods (DMAT).
    #[arg(long)]
    pub delta: Option<PathBuf>,
    /// Standard deviation of a generated update when --delta is absent.
    #[arg(long, default_value_t = 1.0)]
    pub tau: f64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded Gaussian matrix.
    Gen {
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, value_enum, default_value_t = DmatPrecision::F32)]
        dtype: DmatPrecision,
    },
    /// Apply a pruning mask and write the pruned matrix.
    Prune {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        prune: PruneArgs,
    },
    /// Prune, optionally fit a residual adapter, and write a container.
    Encode {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        prune: PruneArgs,
        /// Residual adapter rank (0 for none).
        #[arg(long, default_value_t = 0)]
        rank: usize,
        #[arg(long, value_enum, default_value_t = StoredPrecision::F32)]
        dtype: StoredPrecision,
    },
    /// Expand a container back into a DMAT file.
    Decode {
        #[arg(long)]
        input: PathBuf,
        /// Add every stored adapter's update to the decoded weight.
        #[arg(long)]
        merge: bool,
    },
    /// Prune, fit the residual adapter, attach a fresh LoRA pair, and write a container.
    Compress {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        prune: PruneArgs,
        /// Residual adapter rank.
        #[arg(long, default_value_t = 16)]
        rank: usize,
        /// Rank of the fresh LoRA adapter (0 for none).
        #[arg(long, default_value_t = 0)]
        lora_rank: usize,
        #[arg(long, default_value_t = 1.0)]
        lora_scale: f64,
        #[arg(long, value_enum, default_value_t = StoredPrecision::F32)]
        dtype: StoredPrecision,
    },
    /// Run one of the four theory verification suites.
    Verify {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
        theorem: u8,
        #[arg(long, default_value_t = 0.5)]
        p: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = 1.0)]
        tau: f64,
        /// Monte-Carlo samples per point.
        #[arg(long)]
        samples: Option<u64>,
        /// Number of sparsity levels (p = i / (grid + 1)).
        #[arg(long, default_value_t = 9)]
        grid: usize,
        /// Random instances for the matrix suites.
        #[arg(long, default_value_t = 200)]
        trials: usize,
        /// Also write per-point rows here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Cumulative singular-value energy of a matrix (or of input − reference).
    Spectrum {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Sizes and ratios of a container.
    Stats {
        #[arg(long)]
        input: PathBuf,
    },
    /// Time serial against overlapped pipelined multiplication.
    Bench {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 64)]
        batch: usize,
        #[arg(long, default_value_t = 64)]
        tile_rows: usize,
        #[arg(long, default_value_t = 8)]
        tile_col_bytes: usize,
        #[arg(long, default_value_t = 4)]
        ring: usize,
        #[arg(long, value_enum, default_value_t = Toggle::On)]
        overlap: Toggle,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
    },
}

/// Ordered `key=value` report.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct Report {
    lines: Vec<(String, String)>,
}

impl Report {
    pub fn kv(&mut self, key: impl Into<String>, value: impl std::fmt::Display) -> &mut Self {
        self.lines.push((key.into(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.lines.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn write_to(&self, out: &mut dyn Write) -> Result<()> {
        for (k, v) in &self.lines {
            writeln!(out, "{k}={v}")?;
        }
        Ok(())
    }
}

pub(crate) fn require_out(out: &Option<PathBuf>, cmd: &str) -> Result<PathBuf> {
    out.clone().ok_or_else(|| SalrError::Usage(format!("{cmd} requires --out")))
}

/// Executes a parsed command, writing its report to `out`. A failed
/// verification still writes the full report before returning the error.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let (report, failure) = commands::dispatch(cli)?;
    report.write_to(out)?;
    match failure {
        Some(msg) => Err(SalrError::Verification(msg)),
        None => Ok(()),
    }
}

/// Parses `args`, runs, and returns the process exit code.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            if code == 0 {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
            }
            return code;
        }
    };
    match run(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
