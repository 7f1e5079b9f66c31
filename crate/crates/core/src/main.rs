use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lmfuse::backend::server::BackgroundServer;
use lmfuse::engine::{fuse, greedy_continuation, trace_jsonl, FusionConfig};
use lmfuse::harness::{run_with_dir, EvalMode, HarnessError, RunConfig, RunOptions};
use lmfuse::segmenter::SegmentMode;
use lmfuse::tokenizer::vocab_overlap;

#[derive(Parser)]
#[command(name = "lmfuse", version, about = "Training-free fusion of language models with different tokenizers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Seed for shuffling n-gram training corpora.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Continue one prompt and print the result with its trace.
    Fuse {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        prompt: String,
        /// cool, rerank, cool+r or single:<backend id>.
        #[arg(long, default_value = "cool")]
        mode: EvalMode,
        #[arg(long)]
        segment: Option<SegmentMode>,
        /// Write the trace as JSON lines to this file.
        #[arg(long)]
        trace_out: Option<PathBuf>,
    },
    /// Evaluate the configured tasks in every requested mode.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Repeat to evaluate several modes; defaults to the config's list.
        #[arg(long)]
        mode: Vec<EvalMode>,
        #[arg(long)]
        segment: Option<SegmentMode>,
        /// Directory for the report, item log and traces.
        #[arg(long)]
        trace_out: Option<PathBuf>,
        /// Number of items evaluated concurrently.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Serve one configured local backend over the HTTP session protocol.
    ProtocolServeMock {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        backend: String,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
    /// Diagnostics.
    Diag {
        #[command(subcommand)]
        what: Diag,
    },
}

#[derive(Subcommand)]
enum Diag {
    /// Pairwise vocabulary overlap (Jaccard) between the backends' tokenizers.
    VocabOverlap {
        #[arg(long)]
        config: PathBuf,
    },
}

fn fuse_command(
    common: &Common,
    prompt: &str,
    mode: &EvalMode,
    segment: Option<SegmentMode>,
    trace_out: Option<&PathBuf>,
) -> Result<(), HarnessError> {
    let config = RunConfig::load(&common.config)?;
    let backends = config.build_backends(common.seed)?;
    let options = RunOptions {
        segment,
        ..Default::default()
    };
    let fusion = config.fusion_config(&options);
    let (json, trace) = match mode {
        EvalMode::Single(id) => {
            let spec = config.backend(id)?;
            let b = backends
                .iter()
                .find(|b| b.model_id() == spec.id)
                .expect("every configured backend is built");
            let text = greedy_continuation(b.as_ref(), prompt, &fusion)?;
            (serde_json::json!({ "mode": mode.to_string(), "chosen_text": text }), Vec::new())
        }
        EvalMode::Fusion(m) => {
            let result = fuse(prompt, &backends, &FusionConfig { mode: *m, ..fusion })?;
            (serde_json::to_value(&result).expect("result serializes"), result.trace)
        }
    };
    println!("{}", serde_json::to_string_pretty(&json).expect("json value serializes"));
    if let Some(path) = trace_out {
        std::fs::write(path, trace_jsonl(&trace))
            .map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn main_inner(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Fuse {
            common,
            prompt,
            mode,
            segment,
            trace_out,
        } => fuse_command(&common, &prompt, &mode, segment, trace_out.as_ref()),
        Command::Eval {
            common,
            mode,
            segment,
            trace_out,
            jobs,
        } => {
            let config = RunConfig::load(&common.config)?;
            let options = RunOptions {
                modes: mode,
                segment,
                seed: common.seed,
                output_dir: trace_out,
                jobs,
            };
            let (report, dir) = run_with_dir(&config, &options)?;
            print!("{}", report.table());
            if let Some(dir) = dir {
                println!("report: {}", dir.join("report.json").display());
            }
            Ok(())
        }
        Command::ProtocolServeMock {
            common,
            backend,
            addr,
        } => {
            let config = RunConfig::load(&common.config)?;
            let spec = config.backend(&backend)?;
            let local = config.build_backend(spec, common.seed)?;
            let server = BackgroundServer::start(local, &addr)
                .map_err(|e| HarnessError::Io(format!("{addr}: {e}")))?;
            println!("serving {backend} on {}", server.url());
            server
                .wait()
                .map_err(|e| HarnessError::Io(e.to_string()))
        }
        Command::Diag {
            what: Diag::VocabOverlap { config },
        } => {
            let config = RunConfig::load(&config)?;
            let toks = config
                .backends
                .iter()
                .map(|b| config.tokenizer(&b.tokenizer).map(|t| (b.id.as_str(), t)))
                .collect::<Result<Vec<_>, _>>()?;
            for (i, (a, ta)) in toks.iter().enumerate() {
                for (b, tb) in &toks[i + 1..] {
                    println!("{a}\t{b}\t{:.4}", vocab_overlap(ta.as_ref(), tb.as_ref()));
                }
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lmfuse: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
