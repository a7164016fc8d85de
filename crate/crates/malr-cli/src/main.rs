//! `malr` — multi-agent legal reasoning over charge rules.
//!
//! The pipeline is split into commands with file handoffs so the expensive
//! stages run once and later stages reuse their artifacts:
//!
//! ```sh
//! malr plan  --train train.jsonl --rules rules.jsonl --out subtasks.jsonl
//! malr train --train train.jsonl --rules rules.jsonl --subtasks subtasks.jsonl --kb kb.jsonl
//! malr infer --fact fact.txt --charge theft --rules rules.jsonl --subtasks subtasks.jsonl --kb kb.jsonl
//! malr eval  --cases eval.jsonl --strategy malr --rules rules.jsonl \
//!            --subtasks subtasks.jsonl --kb kb.jsonl --report report.json
//! malr kb list --kb kb.jsonl
//! ```
//!
//! Exit codes: 0 success, 1 usage error, 2 backend or oracle failure,
//! 3 data error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{CliConfig, Overrides};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    App(malr_core::Error),
}

impl From<malr_core::Error> for CliError {
    fn from(err: malr_core::Error) -> Self {
        CliError::App(err)
    }
}

#[derive(Parser)]
#[command(
    name = "malr",
    version,
    about = "Multi-agent legal reasoning: plan sub-tasks, train insights, judge charges"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// TOML config file; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Backend kind: scripted-perfect, scripted-affirmative, scripted-flawed, http.
    #[arg(long, global = true, value_name = "KIND")]
    backend: Option<String>,

    /// Planted flaw for scripted-flawed, as `key` or `key=value`.
    #[arg(long, global = true, value_name = "SPEC")]
    flaw: Option<String>,

    /// Scripted reflector behavior: accurate, wrong-aspect.
    #[arg(long, global = true, value_name = "MODE")]
    reflector: Option<String>,

    /// HTTP backend endpoint URL.
    #[arg(long, global = true, value_name = "URL")]
    endpoint: Option<String>,

    /// Model name sent to the HTTP backend.
    #[arg(long, global = true, value_name = "NAME")]
    model: Option<String>,

    /// Environment variable holding the API key (default MALR_API_KEY).
    /// The key itself is never accepted as a flag.
    #[arg(long, global = true, value_name = "VAR")]
    credential_env: Option<String>,

    /// Oracle kind: scripted, console, http.
    #[arg(long, global = true, value_name = "KIND")]
    oracle: Option<String>,

    /// Embedder kind: trigram, http.
    #[arg(long, global = true, value_name = "KIND")]
    embedder: Option<String>,

    /// Directory of prompt template overrides.
    #[arg(long, global = true, value_name = "DIR")]
    templates_dir: Option<PathBuf>,

    /// Sub-task consolidation threshold in (0, 1].
    #[arg(long, global = true, value_name = "FRACTION")]
    zeta: Option<f64>,

    /// Trial budget per training unit.
    #[arg(long, global = true, value_name = "N")]
    max_trials: Option<u32>,

    /// Evaluation worker pool size.
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,

    /// Refuse HTTP components so identical runs produce identical artifacts.
    #[arg(long, global = true)]
    deterministic: bool,
}

impl GlobalArgs {
    fn into_overrides(self) -> Overrides {
        Overrides {
            config: self.config,
            backend: self.backend,
            flaw: self.flaw,
            reflector: self.reflector,
            endpoint: self.endpoint,
            model: self.model,
            credential_env: self.credential_env,
            oracle: self.oracle,
            embedder: self.embedder,
            templates_dir: self.templates_dir,
            zeta: self.zeta,
            max_trials: self.max_trials,
            workers: self.workers,
            deterministic: self.deterministic,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Decompose training cases into a consolidated sub-task set.
    Plan(PlanArgs),
    /// Gain experience over training cases and distill the insight KB.
    Train(TrainArgs),
    /// Judge one fact description against one charge.
    Infer(InferArgs),
    /// Score a strategy over a case file and write the report.
    Eval(EvalArgs),
    /// Inspect or export an insight KB file.
    Kb(KbArgs),
}

#[derive(Args)]
struct PlanArgs {
    /// Training case file (JSONL).
    #[arg(long, value_name = "FILE")]
    train: PathBuf,

    /// Charge rule file (JSONL).
    #[arg(long, value_name = "FILE")]
    rules: PathBuf,

    /// Output sub-task set file (JSONL).
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Training case file (JSONL).
    #[arg(long, value_name = "FILE")]
    train: PathBuf,

    /// Charge rule file (JSONL).
    #[arg(long, value_name = "FILE")]
    rules: PathBuf,

    /// Sub-task set from `malr plan`.
    #[arg(long, value_name = "FILE")]
    subtasks: PathBuf,

    /// Output insight KB file (JSONL).
    #[arg(long, value_name = "FILE")]
    kb: PathBuf,

    /// Training report path (default: KB path with a .report.json extension).
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,

    /// Keep every drawn insight instead of filtering duplicates.
    #[arg(long)]
    no_filter: bool,

    /// Skip insights drawn from first-trial successes.
    #[arg(long)]
    no_success_exp: bool,

    /// Skip insights drawn from error-success pairs.
    #[arg(long)]
    no_esp_exp: bool,
}

#[derive(Args)]
struct InferArgs {
    /// Plain-text fact description; the file stem becomes the case id.
    #[arg(long, value_name = "FILE")]
    fact: PathBuf,

    /// Charge to judge the facts against.
    #[arg(long, value_name = "NAME")]
    charge: String,

    /// Charge rule file (JSONL).
    #[arg(long, value_name = "FILE")]
    rules: PathBuf,

    /// Sub-task set from `malr plan`.
    #[arg(long, value_name = "FILE")]
    subtasks: PathBuf,

    /// Insight KB from `malr train`; enables trained insights.
    #[arg(long, value_name = "FILE")]
    kb: Option<PathBuf>,

    /// Judge without insights.
    #[arg(long, conflicts_with = "insight_mode")]
    no_insight: bool,

    /// Judge without knowledge feedback.
    #[arg(long)]
    no_ask: bool,

    /// Insight source: trained (needs --kb) or direct.
    #[arg(long, value_name = "MODE")]
    insight_mode: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    /// Evaluation case file (JSONL).
    #[arg(long, value_name = "FILE")]
    cases: PathBuf,

    /// Strategy: zs_cot, lrp, fs_prompt, fs_cot, chain_of_logic, malr.
    #[arg(long, value_name = "NAME")]
    strategy: String,

    /// Charge rule file (JSONL).
    #[arg(long, value_name = "FILE")]
    rules: PathBuf,

    /// Sub-task set; required for malr and the ablation suite.
    #[arg(long, value_name = "FILE")]
    subtasks: Option<PathBuf>,

    /// Insight KB for malr with trained insights.
    #[arg(long, value_name = "FILE")]
    kb: Option<PathBuf>,

    /// Output report path (JSON).
    #[arg(long, value_name = "FILE")]
    report: PathBuf,

    /// Run every malr augmentation variant instead of a single strategy.
    #[arg(long, requires = "train")]
    ablation_suite: bool,

    /// Training cases for the ablation suite's per-variant training runs.
    #[arg(long, value_name = "FILE")]
    train: Option<PathBuf>,

    /// Judge malr without insights.
    #[arg(long, conflicts_with = "insight_mode")]
    no_insight: bool,

    /// Judge malr without knowledge feedback.
    #[arg(long)]
    no_ask: bool,

    /// Insight source for malr: trained (needs --kb) or direct.
    #[arg(long, value_name = "MODE")]
    insight_mode: Option<String>,

    /// Allow the interactive console oracle in batch evaluation.
    #[arg(long)]
    allow_console_oracle: bool,
}

#[derive(Args)]
struct KbArgs {
    #[command(subcommand)]
    command: KbCommand,
}

#[derive(Subcommand)]
enum KbCommand {
    /// Print charge, sub-task, and insight counts.
    List {
        /// Insight KB file (JSONL).
        #[arg(long, value_name = "FILE")]
        kb: PathBuf,
    },
    /// Validate the KB file and print it verbatim.
    Export {
        /// Insight KB file (JSONL).
        #[arg(long, value_name = "FILE")]
        kb: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = CliConfig::resolve(cli.global.into_overrides())?;
    match cli.command {
        Command::Plan(args) => commands::plan(&config, &args),
        Command::Train(args) => commands::train(&config, &args),
        Command::Infer(args) => commands::infer(&config, &args),
        Command::Eval(args) => commands::eval(&config, &args),
        Command::Kb(args) => commands::kb(&args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(message)) => {
            eprintln!("error: {message}");
            eprintln!("run `malr --help` for usage");
            ExitCode::from(1)
        }
        Err(CliError::App(err)) => {
            eprintln!("error: {err}");
            ExitCode::from(if err.is_backend_failure() { 2 } else { 3 })
        }
    }
}
