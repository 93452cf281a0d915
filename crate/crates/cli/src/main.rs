use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use attnscope::model::{model_to_bytes, ModelConfig};
use attnscope::{Error, HeadSummary, HeadThumbnail, Mode, Model, Thresholds, Vocabulary};
use attnscope_server::{AppState, Workbench};
use clap::{Parser, Subcommand, ValueEnum};

/// Exit status: 0 success, 1 environment or I/O failure, 2 bad user input.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn env(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }

    fn input(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(_) | Error::Format(_) | Error::Data(_) | Error::Shape(_) => {
                Failure::env(e.to_string())
            }
            _ => Failure::input(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "attnscope",
    version,
    about = "Trace and inspect attention in a toy Transformer"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Causal,
    Bidirectional,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Causal => Mode::Causal,
            ModeArg::Bidirectional => Mode::Bidirectional,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Json,
}

#[derive(clap::Args)]
struct ModelArgs {
    /// Model file written by gen-model
    #[arg(long)]
    model: PathBuf,
    /// Vocabulary file, one token per line (defaults to the bundled one)
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Head classification thresholds (key = value lines)
    #[arg(long)]
    thresholds: Option<PathBuf>,
    /// Longest accepted input in tokens (defaults to the model's max_seq)
    #[arg(long)]
    max_len: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic model file
    GenModel {
        #[arg(long)]
        layers: usize,
        #[arg(long)]
        heads: usize,
        #[arg(long)]
        d_model: usize,
        /// Defaults to 2 x d-model
        #[arg(long)]
        d_ff: Option<usize>,
        #[arg(long, default_value_t = 64)]
        vocab: usize,
        #[arg(long, default_value_t = 16)]
        max_seq: usize,
        #[arg(long, value_enum, default_value = "causal")]
        mode: ModeArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one input and write its attention trace as JSON
    Trace {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        text: String,
        #[arg(long)]
        text_b: Option<String>,
        #[arg(long)]
        include_qk: bool,
        /// Output path; stdout when omitted
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-head metrics and pattern labels
    Heads {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        text: String,
        #[arg(long)]
        text_b: Option<String>,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
    },
    /// Run the HTTP service
    Serve {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 8000)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Directory with the UI bundle, served at /
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
}

fn workbench(args: &ModelArgs) -> Result<Workbench, Failure> {
    let model = Model::load(&args.model)
        .map_err(|e| Failure::env(format!("cannot load model {}: {e}", args.model.display())))?;
    let vocab = match &args.vocab {
        Some(p) => {
            Vocabulary::load(p).map_err(|e| Failure::env(format!("{}: {e}", p.display())))?
        }
        None => Vocabulary::builtin(),
    };
    let thresholds = match &args.thresholds {
        Some(p) => {
            Thresholds::load(p).map_err(|e| Failure::env(format!("{}: {e}", p.display())))?
        }
        None => Thresholds::default(),
    };
    Ok(Workbench::new(model, vocab, thresholds, args.max_len)?)
}

fn write_output(path: Option<&Path>, bytes: &[u8]) -> Result<(), Failure> {
    match path {
        Some(p) => {
            std::fs::write(p, bytes).map_err(|e| Failure::env(format!("{}: {e}", p.display())))
        }
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)
                .and_then(|_| out.write_all(b"\n"))
                .map_err(|e| Failure::env(e.to_string()))
        }
    }
}

fn fmt_metric(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

fn heads_table(items: &[(HeadSummary, HeadThumbnail)], thresholds: &Thresholds) -> String {
    let mut out = String::new();
    let t: Vec<String> = thresholds
        .entries()
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect();
    let _ = writeln!(out, "# thresholds: {}", t.join(" "));
    let _ = writeln!(
        out,
        "{:>5} {:>4} {:>10} {:>11} {:>10} {:>11} {:>14}  label",
        "layer", "head", "prev_token", "first_token", "dispersion", "decay_slope", "inter_sentence"
    );
    for (s, _) in items {
        let _ = writeln!(
            out,
            "{:>5} {:>4} {:>10} {:>11} {:>10} {:>11} {:>14}  {}",
            s.layer,
            s.head,
            fmt_metric(s.prev_token_score),
            fmt_metric(Some(s.first_token_share)),
            fmt_metric(s.dispersion),
            fmt_metric(s.decay_slope),
            fmt_metric(s.inter_sentence_fraction),
            s.label
        );
    }
    out
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::GenModel {
            layers,
            heads,
            d_model,
            d_ff,
            vocab,
            max_seq,
            mode,
            seed,
            out,
        } => {
            let config = ModelConfig {
                n_layers: layers,
                n_heads: heads,
                d_model,
                d_ff: d_ff.unwrap_or(2 * d_model),
                vocab_size: vocab,
                max_seq,
                mode: mode.into(),
            };
            config
                .validate()
                .map_err(|e| Failure::input(e.to_string()))?;
            let model = Model::synthetic(config, seed)?;
            std::fs::write(&out, model_to_bytes(&model.config, &model.weights))
                .map_err(|e| Failure::env(format!("{}: {e}", out.display())))?;
            println!(
                "layers={} heads={} d_model={} d_head={} d_ff={} vocab={} max_seq={} mode={} seed={} -> {}",
                config.n_layers,
                config.n_heads,
                config.d_model,
                config.d_head(),
                config.d_ff,
                config.vocab_size,
                config.max_seq,
                config.mode,
                seed,
                out.display()
            );
            Ok(())
        }
        Command::Trace {
            model,
            text,
            text_b,
            include_qk,
            out,
        } => {
            let wb = workbench(&model)?;
            let bytes = wb.trace(&text, text_b.as_deref(), include_qk)?;
            write_output(out.as_deref(), &bytes)
        }
        Command::Heads {
            model,
            text,
            text_b,
            format,
        } => {
            let wb = workbench(&model)?;
            match format {
                Format::Json => write_output(None, &wb.heads(&text, text_b.as_deref())?),
                Format::Table => {
                    let items = wb.summaries(&text, text_b.as_deref())?;
                    print!("{}", heads_table(&items, wb.thresholds()));
                    Ok(())
                }
            }
        }
        Command::Serve {
            model,
            port,
            host,
            static_dir,
        } => {
            let wb = workbench(&model)?;
            let runtime =
                tokio::runtime::Runtime::new().map_err(|e| Failure::env(e.to_string()))?;
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::bind((host.as_str(), port))
                    .await
                    .map_err(|e| Failure::env(format!("cannot bind {host}:{port}: {e}")))?;
                eprintln!(
                    "serving on http://{}",
                    listener
                        .local_addr()
                        .map_err(|e| Failure::env(e.to_string()))?
                );
                attnscope_server::serve(listener, AppState::ready(wb), static_dir)
                    .await
                    .map_err(|e| Failure::env(e.to_string()))
            })
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
