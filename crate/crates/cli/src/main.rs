//! `cbp`: one binary driving dataset generation, training, embedding,
//! retrieval and evaluation.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data error,
//! 4 numeric error. Failures end with one JSON line on stderr:
//! `{"error":"<kind>","exit_code":<n>,"message":"..."}`.

mod args;
mod bench;
mod commands;
mod html;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cbp_core::Error;
use clap::{CommandFactory, Parser};
use serde_json::{json, Map, Value};

use args::{Cli, Command};

enum Failure {
    Clap(clap::Error),
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn error_line(kind: &str, code: u8, message: &str) {
    eprintln!("{}", json!({ "error": kind, "exit_code": code, "message": message }));
}

impl Failure {
    fn report(self) -> u8 {
        match self {
            Failure::Clap(e) => {
                let _ = e.print();
                if e.exit_code() == 0 {
                    return 0;
                }
                error_line("usage", 2, e.kind().as_str().unwrap_or("invalid arguments"));
                2
            }
            Failure::Usage(msg) => {
                eprintln!("cbp: {msg}");
                error_line("usage", 2, &msg);
                2
            }
            Failure::Core(e) => {
                let (kind, code) = match &e {
                    Error::Config(_) => ("usage", 2),
                    Error::Numeric { .. } => ("numeric", 4),
                    Error::Dimension(_) | Error::Data(_) | Error::Consistency(_) | Error::Format(_) | Error::Io(_) => {
                        ("data", 3)
                    }
                };
                let msg = e.to_string();
                eprintln!("cbp: {msg}");
                error_line(kind, code, &msg);
                code
            }
        }
    }
}

/// Turns a config file into flag tokens for `command`. Both a flat object
/// of flags and a `run_config.json` (`{"command", "seed", "flags"}`) work.
fn config_tokens(path: &Path, command: &str) -> Result<Vec<String>, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let value: Value =
        serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("config {}: {e}", path.display())))?;
    let Value::Object(mut top) = value else {
        return Err(Failure::Usage("config must be a JSON object".into()));
    };
    if let Some(c) = top.get("command").and_then(Value::as_str) {
        if c != command {
            return Err(Failure::Usage(format!("config is for `{c}`, not `{command}`")));
        }
    }
    let mut flags = match top.remove("flags") {
        Some(Value::Object(f)) => f,
        Some(_) => return Err(Failure::Usage("config `flags` must be an object".into())),
        None => {
            top.remove("command");
            top.remove("version");
            std::mem::take(&mut top)
        }
    };
    if let Some(seed) = top.remove("seed") {
        flags.entry("seed").or_insert(seed);
    }
    let mut tokens = Vec::new();
    for (k, v) in flags {
        if k == "config" {
            continue;
        }
        match v {
            Value::Null | Value::Bool(false) => {}
            Value::Bool(true) => tokens.push(format!("--{k}")),
            Value::Number(n) => tokens.extend([format!("--{k}"), n.to_string()]),
            Value::String(s) => tokens.extend([format!("--{k}"), s]),
            _ => return Err(Failure::Usage(format!("config flag `{k}` must be a scalar"))),
        }
    }
    Ok(tokens)
}

/// Finds `--config` and the position of the subcommand without full
/// parsing, since required flags may live in the config file.
fn prescan(argv: &[String]) -> (Option<PathBuf>, Option<usize>) {
    let names: Vec<String> = Cli::command().get_subcommands().map(|c| c.get_name().to_string()).collect();
    let (mut config, mut sub) = (None, None);
    let mut i = 1;
    while i < argv.len() {
        let a = &argv[i];
        if a == "--config" {
            config = argv.get(i + 1).map(PathBuf::from);
            i += 1;
        } else if let Some(v) = a.strip_prefix("--config=") {
            config = Some(PathBuf::from(v));
        } else if a == "--seed" || a == "--threads" {
            i += 1;
        } else if sub.is_none() && names.iter().any(|n| n == a) {
            sub = Some(i);
        }
        i += 1;
    }
    (config, sub)
}

fn parse(argv: Vec<String>) -> Result<Cli, Failure> {
    let (Some(path), Some(pos)) = prescan(&argv) else {
        return Cli::try_parse_from(&argv).map_err(Failure::Clap);
    };
    let tokens = config_tokens(&path, &argv[pos])?;
    // Config values go first so that explicit flags override them.
    let mut full = argv[..=pos].to_vec();
    full.extend(tokens);
    full.extend_from_slice(&argv[pos + 1..]);
    Cli::try_parse_from(full).map_err(Failure::Clap)
}

fn output_dir(cmd: &Command) -> Option<PathBuf> {
    match cmd {
        Command::GenSynth(a) => Some(a.out.clone()),
        Command::TrainCls(a) => Some(a.out.clone()),
        Command::MakeTriplets(a) => Some(a.out.clone()),
        Command::TrainRet(a) => Some(a.out.clone()),
        Command::Embed(a) => Some(a.out.clone()),
        Command::Query(a) => a.out.clone(),
        Command::EvalCls(a) => a.out.clone(),
        Command::EvalRet(a) => a.out.clone(),
        Command::SketchBench(a) => a.out.clone(),
    }
}

/// The resolved configuration, enough to rerun with `--config`. The thread
/// count is left out: it never changes results.
fn write_run_config(dir: &Path, cli: &Cli) -> Result<(), Failure> {
    let flags: Map<String, Value> = match cli.command.flags() {
        Value::Object(m) => m.into_iter().filter(|(_, v)| !v.is_null()).collect(),
        _ => Map::new(),
    };
    let doc = json!({
        "command": cli.command.name(),
        "version": env!("CARGO_PKG_VERSION"),
        "seed": cli.seed,
        "flags": flags,
    });
    let text = serde_json::to_string_pretty(&doc).expect("json value serializes");
    std::fs::write(dir.join("run_config.json"), text + "\n").map_err(|e| Failure::Core(Error::Io(e)))
}

fn run(argv: Vec<String>) -> Result<(), Failure> {
    let cli = parse(argv)?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(format!("cannot size the thread pool: {e}")))?;
    }
    let seed = cli.seed;
    match &cli.command {
        Command::GenSynth(a) => commands::gen_synth(a, seed)?,
        Command::TrainCls(a) => commands::train_cls(a, seed)?,
        Command::MakeTriplets(a) => commands::make_triplets(a, seed)?,
        Command::TrainRet(a) => commands::train_ret(a, seed)?,
        Command::Embed(a) => commands::embed(a)?,
        Command::Query(a) => commands::query(a)?,
        Command::EvalCls(a) => commands::eval_cls(a)?,
        Command::EvalRet(a) => commands::eval_ret(a)?,
        Command::SketchBench(a) => bench::sketch_bench(a, seed)?,
    }
    if let Some(dir) = output_dir(&cli.command) {
        write_run_config(&dir, &cli)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args_os().map(|a| a.to_string_lossy().into_owned()).collect();
    match run(argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => ExitCode::from(f.report()),
    }
}
