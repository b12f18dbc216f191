//! The `impress` command line: toy-world datasets, training, editing,
//! evaluation, spectra and summary reports.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use impress_core::metrics::FidVariant;
use impress_core::AttributeKind;

pub use commands::{AttributeEval, EvalReport, SummaryReport, SummaryRow};
pub use config::RunConfig;

#[derive(Parser, Debug)]
#[command(
    name = "impress",
    version,
    about = "Score-conditioned face editing on a synthetic face world"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sample a dataset: TSV index, PGM images and world config.
    GenData(GenDataArgs),
    /// Train an attribute regressor, creating the bundle (and its encoder) if needed.
    TrainAttr(TrainAttrArgs),
    /// Train the conditional flow of one attribute.
    TrainMapper(TrainMapperArgs),
    /// Edit one image by a change in attribute score.
    Edit(EditArgs),
    /// Edit every image of a dataset and write a metrics report.
    Eval(EvalArgs),
    /// Render a transformation spectrum and its difference vectors.
    Spectrum(SpectrumArgs),
    /// Collect evaluation reports into one summary.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 5000)]
    pub n: usize,
    /// Seed of the sampled faces.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Seed of the mixing matrix; datasets of one world share it.
    #[arg(long, default_value_t = 7)]
    pub world_seed: u64,
    #[arg(long)]
    pub adult_only: bool,
    #[arg(long, default_value_t = 0.25)]
    pub covariate_scale: f64,
    #[arg(long, default_value_t = 0.2, allow_hyphen_values = true)]
    pub energy_threshold: f64,
    #[arg(long, default_value_t = 0.85, allow_hyphen_values = true)]
    pub identity_threshold: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainAttrArgs {
    #[arg(long, value_parser = parse_attr)]
    pub attr: AttributeKind,
    /// Dataset directory or its `dataset.tsv`.
    #[arg(long)]
    pub data: PathBuf,
    /// Regressor iterations.
    #[arg(long, default_value_t = 3000)]
    pub iters: usize,
    /// Bundle to create or update.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 11)]
    pub seed: u64,
    #[arg(long, default_value_t = 5e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    /// Continue from the bundle's current regressor instead of a fresh one.
    #[arg(long)]
    pub fine_tune: bool,
    #[arg(long, default_value_t = 6000)]
    pub encoder_iters: usize,
    #[arg(long, default_value_t = 128)]
    pub encoder_hidden: usize,
    #[arg(long, default_value_t = 1000)]
    pub corrector_iters: usize,
    #[arg(long, default_value_t = 64)]
    pub corrector_hidden: usize,
    #[arg(long, default_value_t = 2000)]
    pub corrector_pool: usize,
}

#[derive(Args, Debug)]
pub struct TrainMapperArgs {
    #[arg(long, value_parser = parse_attr)]
    pub attr: AttributeKind,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 2500)]
    pub iters: usize,
    /// Bundle to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Bundle to read; defaults to `--out`.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    #[arg(long, default_value_t = 13)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 50)]
    pub batch: usize,
    /// Final learning rate as a fraction of the initial one.
    #[arg(long, default_value_t = 0.05)]
    pub decay: f64,
    #[arg(long, default_value_t = 32)]
    pub hidden: usize,
    #[arg(long, default_value_t = 4)]
    pub blocks: usize,
}

#[derive(Args, Debug)]
pub struct EditArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, value_parser = parse_attr)]
    pub attr: AttributeKind,
    #[arg(long, allow_hyphen_values = true)]
    pub delta: f64,
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FidArg {
    Standard,
    Rooted,
}

impl From<FidArg> for FidVariant {
    fn from(v: FidArg) -> Self {
        match v {
            FidArg::Standard => FidVariant::Standard,
            FidArg::Rooted => FidVariant::Rooted,
        }
    }
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Dataset directory or its `dataset.tsv`.
    #[arg(long)]
    pub set: PathBuf,
    #[arg(
        long,
        value_delimiter = ',',
        allow_hyphen_values = true,
        default_value = "-0.2,-0.1,0.1,0.2"
    )]
    pub deltas: Vec<f64>,
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    /// Attributes to evaluate; defaults to every attribute with a flow.
    #[arg(long, value_delimiter = ',', value_parser = parse_attr)]
    pub attr: Vec<AttributeKind>,
    /// Images used after quality filtering.
    #[arg(long, default_value_t = 60)]
    pub limit: usize,
    #[arg(long, value_enum, default_value_t = FidArg::Standard)]
    pub fid: FidArg,
    #[arg(long, default_value_t = 5)]
    pub feature_seed: u64,
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
}

#[derive(Args, Debug)]
pub struct SpectrumArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, value_parser = parse_attr)]
    pub attr: AttributeKind,
    /// `lo:hi:step`
    #[arg(long, value_parser = parse_range, allow_hyphen_values = true, default_value = "-0.4:0.4:0.1")]
    pub range: (f64, f64, f64),
    #[arg(long)]
    pub bundle: PathBuf,
    /// Output prefix: writes `PREFIX.pgm`, `PREFIX.af.pgm`, `PREFIX.rf.pgm` and `PREFIX.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Evaluation reports, comma separated or repeated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub inputs: Vec<PathBuf>,
    /// Summary file; `.md` writes a Markdown table, anything else JSON.
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_attr(s: &str) -> Result<AttributeKind, String> {
    s.parse().map_err(|e: impress_core::Error| e.to_string())
}

fn parse_range(s: &str) -> Result<(f64, f64, f64), String> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(format!("expected lo:hi:step, got `{s}`"));
    }
    let num = |p: &str| {
        p.trim()
            .parse::<f64>()
            .map_err(|_| format!("`{p}` is not a number"))
    };
    let (lo, hi, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
    if !(step > 0.0) || !(lo <= hi) {
        return Err(format!("range `{s}` needs lo <= hi and step > 0"));
    }
    Ok((lo, hi, step))
}

/// Parses `argv` (program name first) and runs the subcommand. Returns 0 on
/// success, 2 on usage errors and 1 when the command itself fails.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match commands::run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_parsing() {
        assert_eq!(parse_range("-0.4:0.4:0.1").unwrap(), (-0.4, 0.4, 0.1));
        assert!(parse_range("0:1").is_err());
        assert!(parse_range("1:0:0.1").is_err());
        assert!(parse_range("0:1:0").is_err());
        assert!(parse_range("a:1:0.1").is_err());
    }

    #[test]
    fn negative_deltas_parse() {
        let cli = Cli::try_parse_from([
            "impress",
            "eval",
            "--set",
            "d",
            "--bundle",
            "b",
            "--report",
            "r",
            "--deltas",
            "-0.2,-0.1,0.1",
        ])
        .unwrap();
        let Command::Eval(a) = cli.command else {
            panic!()
        };
        assert_eq!(a.deltas, vec![-0.2, -0.1, 0.1]);
        assert!(a.attr.is_empty());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(run_command(["impress", "frobnicate"]), 2);
        assert_eq!(run_command(["impress", "edit", "--attr", "age"]), 2);
        assert_eq!(run_command(["impress", "--help"]), 0);
        assert_eq!(
            run_command([
                "impress",
                "edit",
                "--image",
                "/nonexistent.pgm",
                "--attr",
                "trust",
                "--delta",
                "0",
                "--bundle",
                "/nonexistent",
                "--out",
                "x.pgm"
            ]),
            1
        );
    }
}
