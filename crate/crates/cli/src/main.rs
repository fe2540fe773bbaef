use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lmvc_core::{Error, ModelKind};

mod commands;
mod run;

#[derive(Parser)]
#[command(name = "lmvc", version, about = "Language-model voice conversion over discrete speech tokens")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug)]
pub struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. `--set sampling.fusion_weight=0`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Directory holding the corpus, models and per-invocation run folders.
    #[arg(long, env = "LMVC_RUN_ROOT", default_value = "lmvc-runs")]
    pub run_root: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus.
    GenCorpus(Common),
    /// Train one model on the corpus.
    Train {
        #[arg(value_parser = parse_kind)]
        kind: ModelKind,
        /// Continue from the stored checkpoint and its optimizer state.
        #[arg(long)]
        resume: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Convert a source utterance into the voice of a target utterance.
    Convert {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Fuse the external LM into coarse decoding.
        #[arg(long)]
        elm: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Score held-out cross-speaker conversions against the oracles.
    Eval {
        /// Corpus manifest; defaults to the run root's corpus.
        manifest: Option<PathBuf>,
        #[arg(long)]
        elm: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Sweep ELM window and fusion weight.
    Ablate(Common),
    /// Print an attention mask as text.
    InspectMask {
        /// mplm, elm, plm, causal or full
        kind: String,
        /// mplm: T_s T_a; elm: T w; others: T
        dims: Vec<usize>,
    },
}

fn parse_kind(s: &str) -> Result<ModelKind, String> {
    ModelKind::parse(s).map_err(|e| e.to_string())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::MissingFile(_) => 3,
        Error::Divergence { .. } => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenCorpus(c) => commands::gen_corpus(&c),
        Command::Train { kind, resume, common } => commands::train(&common, kind, resume),
        Command::Convert { source, target, out, elm, common } => commands::convert(&common, &source, &target, &out, elm),
        Command::Eval { manifest, elm, common } => commands::eval(&common, manifest.as_deref(), elm),
        Command::Ablate(c) => commands::ablate(&c),
        Command::InspectMask { kind, dims } => commands::inspect_mask(&kind, &dims),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            let msg = e.to_string().replace(['\n', '\t'], " ");
            eprintln!("lmvc-error\tkind={}\tcode={code}\tmessage={msg}", e.kind());
            ExitCode::from(code)
        }
    }
}
