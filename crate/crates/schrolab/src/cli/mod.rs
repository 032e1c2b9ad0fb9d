//! The `schrolab` command line: one JSON config per run, flags on top,
//! artifacts plus a `manifest.json` in the output directory.
//!
//! Precedence is flag > config > default. Exit codes: 0 pass, 1 check or
//! suite failure, 2 config error, 3 range or resource error, 4 search budget
//! exhausted (outputs are still written).

pub mod commands;
pub mod config;
pub mod manifest;
pub mod suite;

use crate::error::{LabError, Result};
use clap::{Args, Parser, Subcommand};
use manifest::{now_ms, RunManifest, SCHEMA_VERSION};
use serde::Serialize;
use serde_json::{json, Map, Value};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RANGE: i32 = 3;
pub const EXIT_BUDGET: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "schrolab", version, about = "Schrodinger maximal-estimate laboratory")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON config document
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Wave-packet coefficients and the frame identity
    Decompose,
    /// Descriptive maximal-function growth sweep
    MaximalSweep,
    /// Counterexample growth sweep
    Counterexample,
    /// Polynomial partition of a point mass
    PartitionDemo,
    /// Transverse equidistribution decay fit
    Equidistribution,
    /// Every registered invariant with fixed seeds
    PropertySuite {
        /// Run only this suite (repeatable)
        #[arg(long)]
        suite: Vec<String>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Decompose => "decompose",
            Command::MaximalSweep => "maximal-sweep",
            Command::Counterexample => "counterexample",
            Command::PartitionDemo => "partition-demo",
            Command::Equidistribution => "equidistribution",
            Command::PropertySuite { .. } => "property-suite",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    Fail,
    Budget,
}

impl Outcome {
    pub fn code(self) -> i32 {
        match self {
            Outcome::Pass => EXIT_PASS,
            Outcome::Fail => EXIT_FAIL,
            Outcome::Budget => EXIT_BUDGET,
        }
    }
}

pub fn exit_code(e: &LabError) -> i32 {
    match e {
        LabError::Config(_) | LabError::Domain(_) | LabError::Contract(_) | LabError::Io(_) => EXIT_CONFIG,
        LabError::Range(_) | LabError::InvalidGrid(_) | LabError::Degenerate(_) => EXIT_RANGE,
    }
}

/// Artifact writer for one run. Writes happen on the calling thread in
/// program order, and every file is recorded for the manifest.
pub struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    /// Pretty JSON with `schema_version` as the first key of an object.
    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let v = serde_json::to_value(value).map_err(|e| LabError::Io(std::io::Error::other(e)))?;
        let v = match v {
            Value::Object(m) => {
                let mut out = Map::new();
                out.insert("schema_version".into(), json!(SCHEMA_VERSION));
                out.extend(m.into_iter().filter(|(k, _)| k != "schema_version"));
                Value::Object(out)
            }
            other => json!({ "schema_version": SCHEMA_VERSION, "data": other }),
        };
        let mut text = serde_json::to_string_pretty(&v).map_err(|e| LabError::Io(std::io::Error::other(e)))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// CSV body produced by `f`, preceded by a `# schema_version=N` line.
    pub fn csv(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = format!("# schema_version={SCHEMA_VERSION}\n").into_bytes();
        f(&mut buf)?;
        self.write(name, &buf)
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let mut file = fs::File::create(self.dir.join(name))?;
        file.write_all(bytes)?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }
}

/// Parses `args` (program name first) and runs; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(&cli),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_PASS };
            let _ = e.print();
            code
        }
    }
}

struct Prepared {
    seed: u64,
    out: PathBuf,
    threads: Option<usize>,
    doc: Map<String, Value>,
}

fn prepare(cli: &Cli) -> Result<Prepared> {
    let mut doc = config::load(cli.common.config.as_deref())?;
    let seed = match (cli.common.seed, doc.remove("seed")) {
        (Some(s), _) => s,
        (None, Some(v)) => v.as_u64().ok_or_else(|| LabError::Config("seed must be a nonnegative integer".into()))?,
        (None, None) => 0,
    };
    let out = match (&cli.common.out, doc.remove("out")) {
        (Some(p), _) => p.clone(),
        (None, Some(Value::String(s))) => PathBuf::from(s),
        (None, Some(_)) => return Err(LabError::Config("out must be a string".into())),
        (None, None) => PathBuf::from("runs").join(cli.command.name()),
    };
    let threads = match (cli.common.threads, doc.remove("threads")) {
        (Some(t), _) => Some(t),
        (None, Some(v)) => Some(v.as_u64().ok_or_else(|| LabError::Config("threads must be a positive integer".into()))? as usize),
        (None, None) => None,
    };
    if threads == Some(0) {
        return Err(LabError::Config("threads must be positive".into()));
    }
    if let Command::PropertySuite { suite } = &cli.command {
        if !suite.is_empty() {
            doc.insert("suites".into(), json!(suite));
        }
    }
    Ok(Prepared { seed, out, threads, doc })
}

/// Effective config of the command and the function that executes it.
type Job = Box<dyn FnOnce(&mut Outputs) -> Result<Outcome> + Send>;

fn build_job(command: &Command, doc: Map<String, Value>, seed: u64) -> Result<(Value, Job)> {
    use commands::*;
    fn as_value<T: Serialize>(t: &T) -> Value {
        serde_json::to_value(t).unwrap_or(Value::Null)
    }
    Ok(match command {
        Command::Decompose => {
            let c: DecomposeConfig = config::parse(doc)?;
            (as_value(&c), Box::new(move |o| decompose_cmd(&c, seed, o)))
        }
        Command::MaximalSweep => {
            let mut c: crate::sweeps::SweepConfig = config::parse(doc)?;
            c.seed = seed;
            (as_value(&c), Box::new(move |o| maximal_sweep_cmd(&c, o)))
        }
        Command::Counterexample => {
            let c: CounterexampleConfig = config::parse(doc)?;
            (as_value(&c), Box::new(move |o| counterexample_cmd(&c, o)))
        }
        Command::PartitionDemo => {
            let c: PartitionConfig = config::parse(doc)?;
            (as_value(&c), Box::new(move |o| partition_cmd(&c, seed, o)))
        }
        Command::Equidistribution => {
            let c: EquidistributionConfig = config::parse(doc)?;
            (as_value(&c), Box::new(move |o| equidistribution_cmd(&c, seed, o)))
        }
        Command::PropertySuite { .. } => {
            let c: SuiteConfig = config::parse(doc)?;
            (as_value(&c), Box::new(move |o| property_suite_cmd(&c, seed, o)))
        }
    })
}

pub fn run(cli: &Cli) -> i32 {
    let started = now_ms();
    let prepared = match prepare(cli) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("schrolab: {e}");
            return exit_code(&e);
        }
    };
    let (effective, job) = match build_job(&cli.command, prepared.doc, prepared.seed) {
        Ok(j) => j,
        Err(e) => {
            eprintln!("schrolab: {e}");
            return exit_code(&e);
        }
    };
    let mut outputs = match Outputs::new(&prepared.out) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("schrolab: cannot create {}: {e}", prepared.out.display());
            return EXIT_CONFIG;
        }
    };
    let result = match prepared.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| job(&mut outputs)),
            Err(e) => Err(LabError::Range(format!("cannot start {n} workers: {e}"))),
        },
        None => job(&mut outputs),
    };
    let code = match &result {
        Ok(outcome) => outcome.code(),
        Err(e) => {
            eprintln!("schrolab: {e}");
            exit_code(e)
        }
    };
    let manifest = RunManifest {
        schema_version: SCHEMA_VERSION,
        command: cli.command.name().into(),
        config_digest: config::digest(&json!({ "command": cli.command.name(), "config": effective, "seed": prepared.seed })),
        config: effective,
        seed: prepared.seed,
        started_unix_ms: started,
        finished_unix_ms: now_ms(),
        exit_code: code,
        artifacts: outputs.files().to_vec(),
    };
    let written = serde_json::to_string_pretty(&manifest)
        .map_err(|e| LabError::Io(std::io::Error::other(e)))
        .and_then(|text| fs::write(prepared.out.join("manifest.json"), text + "\n").map_err(LabError::from));
    if let Err(e) = written {
        eprintln!("schrolab: cannot write manifest: {e}");
        return code.max(EXIT_CONFIG);
    }
    code
}
