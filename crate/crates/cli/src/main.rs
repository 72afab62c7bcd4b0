//! `re3`: readability scoring for R code and replication-package checks.

mod model_cmds;
mod output;
mod repro_cmds;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use output::{finish, Output, EXIT_OK, EXIT_USAGE};

#[derive(Debug, Parser)]
#[command(
    name = "re3",
    version,
    about = "Readability scoring for R code and replication-package validation"
)]
struct Cli {
    /// Print a single JSON document on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Suppress informational output.
    #[arg(long, short, global = true)]
    quiet: bool,
    /// Seed for shuffles and permutation tests.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Show the 22 readability features of an R file.
    Features {
        file: PathBuf,
        /// Print the token stream as JSON instead.
        #[arg(long)]
        debug_tokens: bool,
    },
    /// Fit the readability model from survey ratings.
    Train(TrainArgs),
    /// Score an R file.
    Score {
        file: PathBuf,
        #[arg(long, default_value = "model.json")]
        model: PathBuf,
    },
    /// Suggest readability improvements for an R file.
    Suggest {
        file: PathBuf,
        #[arg(long, default_value = "model.json")]
        model: PathBuf,
        /// Flag features costing more than this many score points.
        #[arg(long, default_value_t = re3_core::model::DEFAULT_SUGGESTION_THRESHOLD)]
        threshold: f64,
    },
    /// Correlate each feature with the mean ratings.
    Importance {
        #[command(flatten)]
        data: SurveyArgs,
        #[arg(long, default_value_t = 10_000)]
        permutations: usize,
    },
    /// Agreement between model scores and individual raters.
    Agreement {
        #[command(flatten)]
        data: SurveyArgs,
        #[arg(long, default_value = "model.json")]
        model: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        permutations: usize,
    },
    /// Create or validate a package manifest.
    #[command(subcommand)]
    Manifest(ManifestCommand),
    /// List the R packages a replication package uses.
    Deps { dir: PathBuf },
    /// Static reproducibility checks.
    Check { dir: PathBuf },
    /// Write the Dockerfile and runner script for a package.
    Containerize {
        dir: PathBuf,
        #[arg(long, default_value = "Dockerfile")]
        out: PathBuf,
    },
    /// Build and run a package in a container.
    Run(RunArgs),
    /// Score every R file under a directory and summarize by group.
    Corpus(CorpusArgs),
}

#[derive(Debug, Args)]
struct SurveyArgs {
    #[arg(long)]
    ratings: PathBuf,
    #[arg(long)]
    snippets: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: SurveyArgs,
    #[arg(long, default_value = "model.json")]
    out: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    split: f64,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, default_value_t = 1e-8)]
    ridge: f64,
    /// Record the training time in the model metadata.
    #[arg(long)]
    timestamp: bool,
}

#[derive(Debug, Subcommand)]
enum ManifestCommand {
    /// Write a template re3.json listing the package's R files.
    Init { dir: PathBuf },
    /// Validate re3.json and the files it lists.
    Validate { dir: PathBuf },
}

#[derive(Debug, Args)]
struct RunArgs {
    dir: PathBuf,
    /// Container runtime executable; RE3_RUNTIME takes precedence.
    #[arg(long)]
    runtime: Option<String>,
    /// Per-file timeout in seconds.
    #[arg(long, default_value_t = re3_core::repro::container::DEFAULT_TIMEOUT_S)]
    timeout: u64,
    /// Keep running later files after a failure.
    #[arg(long)]
    keep_going: bool,
}

#[derive(Debug, Args)]
struct CorpusArgs {
    dir: PathBuf,
    #[arg(long, default_value = "model.json")]
    model: PathBuf,
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, default_value_t = re3_core::corpus::DEFAULT_BIN_WIDTH)]
    bin_width: f64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK });
        }
    };
    let out = Output::new(cli.json, cli.quiet);
    let seed = cli.seed;
    let result = match cli.command {
        Command::Features { file, debug_tokens } => model_cmds::features(&out, &file, debug_tokens),
        Command::Train(a) => model_cmds::train(
            &out,
            &model_cmds::TrainOptions {
                ratings: a.data.ratings,
                snippets: a.data.snippets,
                out: a.out,
                seed,
                split: a.split,
                folds: a.folds,
                ridge: a.ridge,
                timestamp: a.timestamp,
            },
        ),
        Command::Score { file, model } => model_cmds::score(&out, &file, &model),
        Command::Suggest {
            file,
            model,
            threshold,
        } => model_cmds::suggest(&out, &file, &model, threshold),
        Command::Importance { data, permutations } => {
            model_cmds::importance(&out, &data.ratings, &data.snippets, seed, permutations)
        }
        Command::Agreement {
            data,
            model,
            permutations,
        } => model_cmds::agreement(
            &out,
            &data.ratings,
            &data.snippets,
            &model,
            seed,
            permutations,
        ),
        Command::Manifest(ManifestCommand::Init { dir }) => repro_cmds::manifest_init(&out, &dir),
        Command::Manifest(ManifestCommand::Validate { dir }) => {
            repro_cmds::manifest_validate(&out, &dir)
        }
        Command::Deps { dir } => repro_cmds::deps(&out, &dir),
        Command::Check { dir } => repro_cmds::check(&out, &dir),
        Command::Containerize { dir, out: path } => repro_cmds::containerize(&out, &dir, &path),
        Command::Run(a) => {
            repro_cmds::run(&out, &a.dir, a.runtime.as_deref(), a.timeout, a.keep_going)
        }
        Command::Corpus(a) => model_cmds::corpus(
            &out,
            &a.dir,
            &a.model,
            &a.report,
            a.csv.as_deref(),
            a.bin_width,
        ),
    };
    finish(result)
}
