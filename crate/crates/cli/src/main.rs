mod commands;
mod config;
mod region;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::parser::ValueSource;
use clap::{ArgAction, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

pub const OUT_ENV: &str = "LORANK_OUT";
pub const DEFAULT_OUT: &str = "lorank-out";

#[derive(Parser, Debug)]
#[command(
    name = "lorank",
    version,
    about = "Find low-rank editing directions of small generators and verify the method",
    after_help = "Exit codes: 0 success, 1 failed check or solver failure, 2 usage error.\n\
                  Output directory: --out, else $LORANK_OUT, else `out` from --config, else ./lorank-out."
)]
struct Cli {
    /// Seed for generator weights and the latent code.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Directory that receives every file the command writes.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// File of `key = value` lines; keys are the long flag names of the
    /// command. Flags on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a seeded generator and write it in the text format.
    Gen(GenArgs),
    /// Compute the attribute basis of a region at one latent code.
    #[command(after_help = region::REGION_HELP)]
    Discover(DiscoverArgs),
    /// Edit along an attribute direction and write before/after/heatmap images.
    Edit(EditArgs),
    /// Run the verification suite and write JSON reports.
    Verify(VerifyArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Linear,
    Mlp,
    Blocky,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long, value_enum)]
    pub kind: Kind,
    /// Latent dimension.
    #[arg(long)]
    pub dz: usize,
    /// Output dimension (linear and mlp).
    #[arg(long)]
    pub dx: Option<usize>,
    /// Hidden widths, comma-separated (linear chain and mlp).
    #[arg(long, value_delimiter = ',', value_name = "W1,W2,...")]
    pub hidden: Vec<usize>,
    /// Linear only: identity weights, G(z) = z padded or truncated to dx.
    #[arg(long)]
    pub identity: bool,
    /// Blocky only: image side length [default: 16].
    #[arg(long)]
    pub grid: Option<usize>,
    /// Blocky only: latent coordinates driving the left half [default: dz/2].
    #[arg(long)]
    pub split: Option<usize>,
    /// Blocky only: cross-block weight scale [default: 0].
    #[arg(long, allow_negative_numbers = true)]
    pub coupling: Option<f64>,
    /// File stem of the written generator [default: the kind].
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Args, Debug)]
pub struct DiscoverArgs {
    /// Generator file written by `gen`.
    #[arg(long)]
    pub generator: PathBuf,
    /// Rectangle x0,y0,x1,y1 on the image grid.
    #[arg(long, conflicts_with = "indices", required_unless_present = "indices")]
    pub rect: Option<String>,
    /// Output indices such as 0,1,8-11.
    #[arg(long)]
    pub indices: Option<String>,
    /// Sparsity weight as lambda = 1/n.
    #[arg(long, conflicts_with = "lambda")]
    pub lambda_n: Option<f64>,
    /// Sparsity weight [default: 1/sqrt(d_z)].
    #[arg(long)]
    pub lambda: Option<f64>,
    /// ADMM penalty [default: rows*cols/(4*|M|_1)].
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub rel_tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Singular values below rank_tol times the largest do not count.
    #[arg(long)]
    pub rank_tol: Option<f64>,
    /// File stem of the written basis.
    #[arg(long, default_value = "basis")]
    pub name: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ImageFormat {
    /// P2 text
    Ascii,
    /// P5 bytes
    Binary,
}

#[derive(Args, Debug)]
pub struct EditArgs {
    #[arg(long)]
    pub generator: PathBuf,
    /// Basis of the region to edit.
    #[arg(long)]
    pub basis_a: PathBuf,
    /// Basis of the region to keep fixed; enables null-space projection.
    #[arg(long)]
    pub basis_b: Option<PathBuf>,
    /// Attribute index into basis A.
    #[arg(long, default_value_t = 0)]
    pub attr: usize,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub alpha: f64,
    /// Smallest directions of basis B left unconstrained.
    #[arg(long, default_value_t = 0)]
    pub r_relax: usize,
    /// File stem prefix of the written images.
    #[arg(long, default_value = "edit")]
    pub name: String,
    #[arg(long, value_enum, default_value = "binary")]
    pub format: ImageFormat,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// Comma-separated criterion groups, slugs or numbers, such as `rpca` or `6,7`.
    #[arg(long, value_name = "FILTER")]
    pub only: Option<String>,
    /// Read generator fixtures from DIR instead of writing fresh ones.
    #[arg(long, value_name = "DIR")]
    pub fixtures: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Clap(clap::Error),
    Usage(String),
    Failure(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Clap(e) => write!(f, "{e}"),
            CliError::Usage(m) | CliError::Failure(m) => f.write_str(m),
        }
    }
}

impl From<clap::Error> for CliError {
    fn from(e: clap::Error) -> Self {
        CliError::Clap(e)
    }
}

impl From<lorank::Error> for CliError {
    fn from(e: lorank::Error) -> Self {
        match e {
            lorank::Error::InvalidArgument(_) => CliError::Usage(e.to_string()),
            other => CliError::Failure(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Failure(e.to_string())
    }
}

/// Where outputs go, after flag, environment and config file are weighed.
pub struct Context {
    pub seed: u64,
    pub out: PathBuf,
}

/// Appends config-file entries as flags, skipping keys already given on
/// the command line.
fn merge_config(argv: &[OsString], matches: &clap::ArgMatches, path: &PathBuf) -> Result<Vec<OsString>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let entries = config::parse(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    let mut root = Cli::command();
    root.build();
    let (sub_name, sub_matches) = matches.subcommand().expect("subcommand is required");
    let sub = root.find_subcommand(sub_name).expect("parsed subcommand exists");
    let mut argv = argv.to_vec();
    for e in entries {
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(e.key.as_str()) && !matches!(a.get_action(), ArgAction::Help | ArgAction::Version))
            .filter(|a| a.get_long() != Some("config"));
        let Some(arg) = arg else {
            let mut known: Vec<&str> = sub
                .get_arguments()
                .filter_map(|a| a.get_long())
                .filter(|&l| l != "config" && l != "help")
                .collect();
            known.sort_unstable();
            return Err(CliError::Usage(format!(
                "config {}:{}: unknown key {:?} for `{sub_name}`; known keys: {}",
                path.display(),
                e.line,
                e.key,
                known.join(", ")
            )));
        };
        let id = arg.get_id().as_str();
        let on_command_line = [matches, sub_matches]
            .iter()
            .any(|m| m.try_contains_id(id).unwrap_or(false) && m.value_source(id) == Some(ValueSource::CommandLine));
        if on_command_line || (id == "out" && std::env::var_os(OUT_ENV).is_some()) {
            continue;
        }
        if matches!(arg.get_action(), ArgAction::SetTrue) {
            match e.value.as_str() {
                "true" => argv.push(format!("--{}", e.key).into()),
                "false" => {}
                v => {
                    return Err(CliError::Usage(format!(
                        "config {}:{}: {} takes true or false, got {v:?}",
                        path.display(),
                        e.line,
                        e.key
                    )))
                }
            }
        } else {
            argv.push(format!("--{}={}", e.key, e.value).into());
        }
    }
    Ok(argv)
}

fn run(argv: Vec<OsString>) -> Result<ExitCode, CliError> {
    // lenient first pass: required flags may still come from the config file
    let lenient = Cli::command().ignore_errors(true).try_get_matches_from(&argv)?;
    let config_path = lenient.get_one::<PathBuf>("config").cloned();
    let flag_out = lenient
        .get_one::<PathBuf>("out")
        .filter(|_| lenient.value_source("out") == Some(ValueSource::CommandLine))
        .cloned();
    let argv = match (&config_path, lenient.subcommand().is_some()) {
        (Some(path), true) => merge_config(&argv, &lenient, path)?,
        _ => argv,
    };
    let cli = Cli::from_arg_matches(&Cli::command().try_get_matches_from(&argv)?)?;
    let out = flag_out
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .or(cli.out)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let ctx = Context { seed: cli.seed, out };
    match &cli.command {
        Command::Gen(a) => commands::gen(&ctx, a),
        Command::Discover(a) => commands::discover(&ctx, a),
        Command::Edit(a) => commands::edit(&ctx, a),
        Command::Verify(a) => commands::verify(&ctx, a),
    }
}

fn main() -> ExitCode {
    match run(std::env::args_os().collect()) {
        Ok(code) => code,
        Err(CliError::Clap(e)) => {
            let _ = e.print();
            if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(CliError::Usage(m)) => {
            eprintln!("lorank: {m}");
            eprintln!("run `lorank --help` for usage");
            ExitCode::from(2)
        }
        Err(CliError::Failure(m)) => {
            eprintln!("lorank: {m}");
            ExitCode::from(1)
        }
    }
}
