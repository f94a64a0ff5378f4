//! `seaformer`: parameter and MAC reports, attention scaling benchmarks,
//! gradient and oracle checks, forward passes on `.stn` tensors and a
//! distillation demo.
//!
//! Exit codes: 0 success, 1 a check failed, 2 usage error, 3 bad input data.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use seaformer_core::backbone::VariantName;
use seaformer_core::Error;

#[derive(Parser, Debug)]
#[command(name = "seaformer", version, about = "Mobile axial-attention segmentation toolkit")]
pub struct Cli {
    /// Seed for every random initialization and synthetic input.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    /// Write the report here instead of standard output.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// JSON report instead of text (CSV for bench-scaling).
    #[arg(long, global = true)]
    pub json: bool,
    /// JSON object of flag values; flags given on the command line win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Parameter counts per stage and in total.
    Params(ModelCmd),
    /// Multiply-accumulate counts per stage at a given input size.
    Flops {
        #[command(flatten)]
        model: ModelCmd,
        #[arg(long, default_value_t = 512)]
        height: usize,
        #[arg(long, default_value_t = 512)]
        width: usize,
    },
    /// Attention-path MACs over square sizes with a log-log slope fit.
    BenchScaling {
        /// sea, global, axial or window<m> (e.g. window4).
        #[arg(long, default_value = "sea")]
        attn: String,
        #[arg(long, value_delimiter = ',', default_value = "16,32,64,128")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 64)]
        channels: usize,
        #[arg(long, default_value_t = 4)]
        heads: usize,
        /// Timed iterations per size (0 skips timing).
        #[arg(long, default_value_t = 0)]
        time_iters: usize,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        /// ops, sea, layer, distill or all.
        #[arg(long, default_value = "all")]
        scope: String,
        /// Consecutive seeds starting at --seed.
        #[arg(long, default_value_t = 1)]
        count: usize,
        /// Flip the sign of one op's VJP (mutation check).
        #[arg(long, hide = true)]
        inject_wrong_vjp: Option<String>,
    },
    /// Runs a model on a `.stn` tensor.
    Forward {
        #[command(flatten)]
        model: ModelCmd,
        #[arg(long)]
        input: PathBuf,
        /// Where to write the output tensor.
        #[arg(long)]
        logits: Option<PathBuf>,
    },
    /// One distillation step on synthetic data, plus the self-distillation
    /// identities. Always reports JSON.
    DistillDemo {
        #[arg(long, default_value = "T", value_parser = parse_variant)]
        variant: VariantName,
        /// Teacher input side; must be a multiple of 128.
        #[arg(long, default_value_t = 128)]
        hw: usize,
        #[arg(long, default_value_t = 150)]
        classes: usize,
        /// Comma-separated subset of cls, cross, feat, out.
        #[arg(long, default_value = "cls,cross,feat,out")]
        losses: String,
        /// bilinear, mobilenet or conv.
        #[arg(long, default_value = "mobilenet")]
        upsample: String,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
    },
    /// Closed-form equivalences between attention variants.
    OracleCheck,
}

#[derive(Args, Debug, Clone)]
pub struct ModelCmd {
    #[arg(long, default_value = "T", value_parser = parse_variant)]
    pub variant: VariantName,
    /// JSON variant description; replaces --variant.
    #[arg(long)]
    pub variant_file: Option<PathBuf>,
    /// seg or cls.
    #[arg(long, default_value = "seg")]
    pub task: String,
    /// Defaults to 150 for seg and 1000 for cls.
    #[arg(long)]
    pub classes: Option<usize>,
    /// mean_pool, max_pool or adaptive.
    #[arg(long)]
    pub squeeze_mode: Option<String>,
    /// concat_qkv, conv_x or upconv_x.
    #[arg(long)]
    pub enhance_input: Option<String>,
    /// mul, add or off.
    #[arg(long)]
    pub enhance_mode: Option<String>,
    /// sigmoid_mul, add, mul or sigmoid_add.
    #[arg(long)]
    pub fusion_mode: Option<String>,
}

fn parse_variant(s: &str) -> Result<VariantName, String> {
    s.parse::<VariantName>().map_err(|e| e.to_string())
}

/// A finished command: the report and whether its checks passed.
pub struct Outcome {
    pub report: String,
    pub passed: bool,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Format { .. } | Error::Json(_) | Error::Input(_) => 3,
        Error::Argument(_) | Error::Config(_) | Error::InsufficientData(_) | Error::Io(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match config::parse() {
        Ok(cli) => cli,
        Err(config::ParseError::Clap(e)) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
        Err(config::ParseError::Config(msg)) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    let outcome = commands::run(&cli).and_then(|o| {
        match &cli.out {
            Some(path) => std::fs::write(path, &o.report)?,
            None => print!("{}", o.report),
        }
        Ok(o)
    });
    match outcome {
        Ok(o) if o.passed => ExitCode::SUCCESS,
        Ok(_) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
