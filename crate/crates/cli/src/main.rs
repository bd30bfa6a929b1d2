//! `protopop` command line: one pipeline stage per subcommand.
//!
//! Failures print a single `error kind=<kind> msg="<message>"` line to stderr
//! and exit with status 2.

mod commands;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "protopop", version, about = "Prototype-aligned popularity prediction")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every command.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Run configuration JSON; defaults apply to absent keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Text field fed to the alignment model: title or alltags.
    #[arg(long, global = true)]
    source: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus with embeddings.
    GenSynth,
    /// Word-count histograms of titles and tags.
    Stats {
        #[arg(long)]
        data: PathBuf,
    },
    /// Build visual and textual class prototypes from the training split.
    BuildPrototypes {
        #[arg(long)]
        data: PathBuf,
    },
    /// Train the alignment model on the training split.
    TrainAlign {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        prototypes: PathBuf,
    },
    /// Rank training posts by alignment loss and keep the lowest.
    Select {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Ratios to write selections for; defaults to the configured ratio.
        #[arg(long, value_delimiter = ',')]
        ratio: Vec<f64>,
        /// Ratios to evaluate end to end; needs `--features`.
        #[arg(long, value_delimiter = ',')]
        sweep: Vec<f64>,
        /// Directory written by `extract`.
        #[arg(long)]
        features: Option<PathBuf>,
    },
    /// Write train and validation feature tables.
    Extract {
        #[arg(long)]
        data: PathBuf,
        /// Alignment checkpoint; omit for encoder-only features.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Fit both regressors and their blend.
    TrainGbdt {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        features: PathBuf,
        /// Training ids to keep, one per line (from `select`).
        #[arg(long)]
        selection: Option<PathBuf>,
        /// Overrides the configured feature set, e.g. `aligned+statistic`.
        #[arg(long)]
        feature_set: Option<String>,
    },
    /// Blend predictions for a feature table as `post_id,prediction` CSV.
    Predict {
        #[arg(long)]
        regressor: PathBuf,
        /// A `.pfeat` table written by `extract`.
        #[arg(long)]
        features: PathBuf,
    },
    /// Score a predictions CSV against the dataset labels.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
    },
    /// Feature set by regressor results table.
    Grid {
        #[arg(long)]
        data: PathBuf,
    },
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(v) = std::env::var("PROTOPOP_THREADS") else {
        return Ok(());
    };
    let n: usize =
        v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
            commands::CliError::config(format!("PROTOPOP_THREADS must be a positive integer, got {v:?}"))
        })?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    configure_threads()?;
    let common = &cli.common;
    use commands as c;
    match cli.command {
        Command::GenSynth => c::gen_synth(common),
        Command::Stats { data } => c::stats(common, &data),
        Command::BuildPrototypes { data } => c::build_prototypes(common, &data),
        Command::TrainAlign { data, prototypes } => c::train_align(common, &data, &prototypes),
        Command::Select {
            data,
            model,
            ratio,
            sweep,
            features,
        } => c::select(common, &data, &model, &ratio, &sweep, features.as_deref()),
        Command::Extract { data, model } => c::extract(common, &data, model.as_deref()),
        Command::TrainGbdt {
            data,
            features,
            selection,
            feature_set,
        } => c::train_gbdt(common, &data, &features, selection.as_deref(), feature_set.as_deref()),
        Command::Predict { regressor, features } => c::predict(common, &regressor, &features),
        Command::Eval { data, predictions } => c::eval(common, &data, &predictions),
        Command::Grid { data } => c::grid(common, &data),
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.render().to_string();
            let first = msg.lines().find(|l| !l.trim().is_empty()).unwrap_or("bad arguments");
            eprintln!(
                "error kind=usage msg={:?}",
                one_line(first.trim_start_matches("error: "))
            );
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!(
                "error kind={} msg={:?}",
                commands::kind_of(&e),
                one_line(&format!("{e:#}"))
            );
            ExitCode::from(2)
        }
    }
}
