use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use structmeta_cli::commands::{EMBEDDING_FILE, LABELS_FILE, PLOT_FILE};
use structmeta_cli::error::EXIT_OK;
use structmeta_cli::{cmd_analyze, cmd_gen, cmd_plot, cmd_report, cmd_train, CliError, CliResult, ExperimentConfig, Method, Overrides};

/// Log filter variable, e.g. `STRUCTMETA_LOG=debug`.
const LOG_ENV: &str = "STRUCTMETA_LOG";

#[derive(Parser)]
#[command(name = "structmeta", version, about = "Structured meta-learning experiments")]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Training method; overrides the config.
    #[arg(long, global = true, value_enum)]
    method: Option<Method>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the task or domain database.
    Gen,
    /// Train the selected method and write checkpoints, history and report.
    Train,
    /// Compute the similarity matrix, embedding and clusters of a trained run.
    Analyze,
    /// Scatter-plot an embedding as SVG.
    Plot {
        /// Embedding CSV (default: <out>/embedding.csv).
        #[arg(long)]
        embedding: Option<PathBuf>,
        /// Labels CSV with columns task,label (default: <out>/labels.csv).
        #[arg(long)]
        labels: Option<PathBuf>,
        /// SVG path (default: <out>/embedding.svg).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Print the summary of a finished run.
    Report,
}

impl Cli {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            method: self.method,
            out: self.out.clone(),
        }
    }

    fn experiment(&self) -> CliResult<ExperimentConfig> {
        let path = self
            .config
            .as_ref()
            .ok_or_else(|| CliError::Config("this command needs --config".into()))?;
        ExperimentConfig::load(path, &self.overrides())
    }

    /// `--out`, else the config's `out`.
    fn out_dir(&self) -> CliResult<PathBuf> {
        if let Some(o) = &self.out {
            return Ok(o.clone());
        }
        self.experiment()?.out_dir()
    }
}

fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Gen => {
            let summary = cmd_gen(&cli.experiment()?)?;
            for line in summary.lines {
                println!("{line}");
            }
        }
        Command::Train => {
            let cfg = cli.experiment()?;
            let report = cmd_train(&cfg, cli.threads)?;
            println!(
                "{}: median held-out accuracy {:.4} (q25 {:.4}, q75 {:.4}) over {} tasks",
                report.method.name(),
                report.median,
                report.q25,
                report.q75,
                report.k
            );
        }
        Command::Analyze => {
            let s = cmd_analyze(&cli.experiment()?, cli.threads)?;
            let sv: Vec<String> = s.singular_values.iter().map(|v| format!("{v:.4e}")).collect();
            println!("{} tasks embedded in {} dimensions; singular values [{}]", s.k, s.d, sv.join(", "));
            match s.ari {
                Some(a) => println!("{} clusters, ARI {a:.4}", s.n_clusters),
                None => println!("{} clusters", s.n_clusters),
            }
        }
        Command::Plot {
            embedding,
            labels,
            output,
        } => {
            let need_out = embedding.is_none() || labels.is_none() || output.is_none();
            let out = if need_out { Some(cli.out_dir()?) } else { None };
            let pick = |p: &Option<PathBuf>, name: &str| p.clone().unwrap_or_else(|| out.as_ref().unwrap().join(name));
            let output = pick(output, PLOT_FILE);
            let n = cmd_plot(&pick(embedding, EMBEDDING_FILE), &pick(labels, LABELS_FILE), &output)?;
            println!("plotted {n} points to {}", output.display());
        }
        Command::Report => print!("{}", cmd_report(&cli.out_dir()?)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).init();
    let cli = Cli::parse();
    let code = match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
