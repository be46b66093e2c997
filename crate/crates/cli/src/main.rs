use std::path::PathBuf;
use std::process::ExitCode;

use butterflow_cli::bench::{BenchOp, BenchSettings};
use butterflow_cli::checks::Suite;
use butterflow_cli::commands;
use butterflow_cli::error::{CliError, CliResult};
use clap::{ArgGroup, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "butterflow", version, about = "Butterfly-layer normalizing flows")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a flow from a JSON run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Test-split likelihood of a checkpoint, printed as JSON.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// Dataset spec such as `permuted_gaussian:dim=16`; defaults to the run's dataset.
        #[arg(long)]
        dataset: Option<String>,
    },
    /// Draw samples into a bfdata file.
    Sample {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(short = 'n', long = "num", default_value_t = 64)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long)]
        out: PathBuf,
        /// Require a stored data permutation and write the unscrambled copy.
        #[arg(long)]
        unscramble: bool,
    },
    /// Single-threaded timing of butterfly passes.
    Bench {
        #[arg(long)]
        op: BenchOp,
        #[arg(long, value_delimiter = ',', required = true)]
        dims: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "1")]
        batch: Vec<usize>,
        #[arg(long, default_value_t = 20)]
        reps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        levels: usize,
        #[arg(long, default_value_t = 4)]
        block_size: usize,
    },
    /// Decompose a permutation into switch-only butterfly factors.
    #[command(group(ArgGroup::new("source").required(true).args(["size", "perm"])))]
    PermDecompose {
        #[arg(long, requires = "seed")]
        size: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// File of whitespace- or comma-separated indices.
        #[arg(long, conflicts_with = "size")]
        perm: Option<PathBuf>,
        /// Write the switch-only layer as a checkpoint.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Run the dense-oracle and finite-difference checks.
    Verify {
        #[arg(long, default_value = "all")]
        suite: Suite,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train { config, out, resume } => {
            let outcome = commands::train(&config, &out, resume.as_deref())?;
            log::info!("wrote {}", outcome.final_checkpoint.display());
        }
        Command::Eval { ckpt, dataset } => {
            println!("{}", commands::eval(&ckpt, dataset.as_deref())?.to_json());
        }
        Command::Sample {
            ckpt,
            n,
            seed,
            temperature,
            out,
            unscramble,
        } => {
            for path in commands::sample(&ckpt, n, seed, temperature, &out, unscramble)? {
                println!("{}", path.display());
            }
        }
        Command::Bench {
            op,
            dims,
            batch,
            reps,
            out,
            levels,
            block_size,
        } => {
            if dims.iter().any(|d| !d.is_power_of_two() || *d < 2) {
                return Err(CliError::Usage("--dims must be powers of two >= 2".into()));
            }
            let settings = BenchSettings {
                reps,
                levels,
                block_size,
            };
            commands::bench(op, &dims, &batch, &settings, out.as_deref())?;
        }
        Command::PermDecompose { size, seed, perm, dump } => {
            let p = match (size, perm) {
                (Some(d), _) => commands::random_permutation(d, seed.unwrap_or(0)),
                (None, Some(path)) => commands::read_permutation(&path)?,
                (None, None) => unreachable!("clap requires a source"),
            };
            println!("{}", commands::perm_decompose_cmd(&p, dump.as_deref())?);
        }
        Command::Verify { suite } => {
            let (csv, results) = commands::verify(suite)?;
            print!("{csv}");
            if let Some(e) = commands::failures(&results) {
                return Err(e);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
