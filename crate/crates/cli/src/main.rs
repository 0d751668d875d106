//! `rspsim`: command-line front end to the remote state preparation simulator.

mod commands;
mod config;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use config::is_false;

#[derive(Parser)]
#[command(name = "rspsim", version, about = "Remote state preparation protocol simulator and applications")]
struct Cli {
    /// JSON object supplying defaults for any flag; the command line takes precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Emit a single compact JSON result object.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Multi-round protocol runs, the socket prover and diagnostics.
    #[command(subcommand)]
    Rsp(RspCommand),
    /// Conjugate coding cloning experiments.
    #[command(subcommand)]
    Unclonable(UnclonableCommand),
    /// Copy-protection of point functions.
    #[command(subcommand)]
    Cp(CpCommand),
    /// Computing on encrypted data with the reference evaluator.
    #[command(subcommand)]
    Qced(QcedCommand),
    /// Transcript tools.
    #[command(subcommand)]
    Transcript(TranscriptCommand),
}

#[derive(Subcommand)]
enum RspCommand {
    /// Run the verifier against a simulated or remote prover.
    Run(RunArgs),
    /// Serve a simulated prover on a TCP socket for one session.
    ServeProver(ServeArgs),
    /// Rigidity diagnostics for a (possibly perturbed) honest device.
    Diagnose(DiagnoseArgs),
}

#[derive(Subcommand)]
enum UnclonableCommand {
    Demo(UnclonableArgs),
}

#[derive(Subcommand)]
enum CpCommand {
    /// Run the interactive protect protocol and save the program.
    Protect(ProtectArgs),
    /// Evaluate a saved program on one input.
    Eval(EvalArgs),
    /// Piracy experiment with a shipped pirate.
    Pirate(PirateArgs),
}

#[derive(Subcommand)]
enum QcedCommand {
    Demo(QcedArgs),
}

#[derive(Subcommand)]
enum TranscriptCommand {
    /// Recompute every verifier decision in a JSON-lines transcript.
    Verify(VerifyArgs),
}

#[derive(Args, Serialize, Deserialize)]
pub struct RunArgs {
    #[arg(long)]
    pub n: Option<usize>,
    /// Block size.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub width: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Apply the block threshold to the trailing rounds too.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "is_false")]
    pub strict: bool,
    /// Write the JSON-lines transcript here.
    #[arg(long)]
    pub transcript: Option<PathBuf>,
    /// Address of a prover started with `rsp serve-prover`.
    #[arg(long)]
    pub connect: Option<String>,
    /// Cheating strategy for the in-process prover.
    #[arg(long)]
    pub strategy: Option<String>,
    /// Seed of the in-process prover; defaults to `--seed`.
    #[arg(long)]
    pub prover_seed: Option<u64>,
}

#[derive(Args, Serialize, Deserialize)]
pub struct ServeArgs {
    #[arg(long)]
    pub listen: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub strategy: Option<String>,
}

#[derive(Args, Serialize, Deserialize)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub width: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write the Pauli relation grid as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize)]
pub struct UnclonableArgs {
    #[arg(long)]
    pub lambda: Option<usize>,
    /// breidbart or forward.
    #[arg(long)]
    pub attack: Option<String>,
    /// exact, mc or classical.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Block size of the classical-client protocol.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub width: Option<u32>,
}

#[derive(Args, Serialize, Deserialize)]
pub struct ProtectArgs {
    #[arg(long)]
    pub lambda: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Marked input, 4λ bits; random when absent.
    #[arg(long)]
    pub y: Option<String>,
    /// Marked output, λ bits; random when absent.
    #[arg(long = "output")]
    pub marked_output: Option<String>,
    /// Program file; the statevector goes next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub width: Option<u32>,
}

#[derive(Args, Serialize, Deserialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub program: Option<PathBuf>,
    #[arg(long)]
    pub x: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Save the post-evaluation program here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize)]
pub struct PirateArgs {
    #[arg(long)]
    pub lambda: Option<usize>,
    /// forward, breidbart or zero.
    #[arg(long)]
    pub pirate: Option<String>,
    /// marked, independent or never.
    #[arg(long)]
    pub challenge: Option<String>,
    #[arg(long)]
    pub p_marked: Option<f64>,
    /// exact or trials.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub width: Option<u32>,
}

#[derive(Args, Serialize, Deserialize)]
pub struct QcedArgs {
    /// JSON circuit file.
    #[arg(long)]
    pub circuit: Option<PathBuf>,
    /// Plaintext input bits.
    #[arg(long)]
    pub input: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub width: Option<u32>,
}

#[derive(Args, Serialize, Deserialize)]
pub struct VerifyArgs {
    #[arg(long)]
    pub file: Option<PathBuf>,
}

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Internal(String),
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Internal(e.to_string())
    }
}

/// A report, and whether it describes a protocol abort or replay mismatch.
pub struct Report {
    pub value: Value,
    pub abort: bool,
}

fn dispatch(cli: &Cli) -> Result<Report, Failure> {
    let cfg = match &cli.config {
        Some(p) => config::load(p)?,
        None => Default::default(),
    };
    use config::resolve;
    match &cli.command {
        Command::Rsp(RspCommand::Run(a)) => commands::rsp_run(resolve(a, &cfg)?),
        Command::Rsp(RspCommand::ServeProver(a)) => commands::serve_prover(resolve(a, &cfg)?),
        Command::Rsp(RspCommand::Diagnose(a)) => commands::diagnose(resolve(a, &cfg)?),
        Command::Unclonable(UnclonableCommand::Demo(a)) => commands::unclonable_demo(resolve(a, &cfg)?),
        Command::Cp(CpCommand::Protect(a)) => commands::cp_protect(resolve(a, &cfg)?),
        Command::Cp(CpCommand::Eval(a)) => commands::cp_eval(resolve(a, &cfg)?),
        Command::Cp(CpCommand::Pirate(a)) => commands::cp_pirate(resolve(a, &cfg)?),
        Command::Qced(QcedCommand::Demo(a)) => commands::qced_demo(resolve(a, &cfg)?),
        Command::Transcript(TranscriptCommand::Verify(a)) => commands::transcript_verify(resolve(a, &cfg)?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let print = |v: &Value| {
        let text = if cli.json { v.to_string() } else { serde_json::to_string_pretty(v).unwrap_or_default() };
        let _ = writeln!(std::io::stdout().lock(), "{text}");
    };
    match dispatch(&cli) {
        Ok(r) => {
            print(&r.value);
            if r.abort {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(Failure::Usage(msg)) | Err(Failure::Internal(msg)) => {
            eprintln!("error: {msg}");
            if cli.json {
                print(&serde_json::json!({ "error": msg }));
            }
            ExitCode::from(1)
        }
    }
}
