use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use parentsets::{DataTable, Mode, Schema};
use parentsets_cli::{
    cmd_gen, cmd_oracle, cmd_party, cmd_sim, cmd_verify, load_csv, load_schema, write_corpus, GenSpec, PartyConfig,
    Precision, Role, RunOptions, VerifyHook,
};

/// Maximal parent set discovery over data split across several owners.
#[derive(Parser)]
#[command(name = "parentsets", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Schema JSON.
    #[arg(long)]
    schema: PathBuf,
    /// CSV file, one per data owner.
    #[arg(long = "data", required = true)]
    data: Vec<PathBuf>,
    /// Target variable name.
    #[arg(long)]
    target: String,
    /// Largest parent set size; defaults to n − 1.
    #[arg(long = "lmax")]
    l_max: Option<usize>,
    #[arg(long, default_value = "corrected")]
    mode: Mode,
    /// Also charge the complexity penalty to the empty set.
    #[arg(long)]
    empty_set_penalty: bool,
    /// Write the JSON report here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<(Schema, Vec<DataTable>, RunOptions)> {
        let schema = load_schema(&self.schema)?;
        let tables = self.data.iter().map(|p| load_csv(p, &schema)).collect::<Result<Vec<_>>>()?;
        let mut opts = RunOptions::new(&schema, &self.target, self.l_max, self.mode)?;
        opts.empty_set_penalty = self.empty_set_penalty;
        Ok((schema, tables, opts))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Plaintext run over the pooled data.
    Oracle {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "fixed")]
        precision: Precision,
    },
    /// Secure run with every party in this process.
    Sim {
        #[command(flatten)]
        common: Common,
        /// Number of computing parties.
        #[arg(long, default_value_t = 3)]
        csps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Join a networked session.
    Party {
        #[arg(long, value_enum)]
        role: Role,
        /// Index within the role (ignored for the dealer).
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        config: PathBuf,
        /// The owner's CSV file.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the traversal with exhaustive enumeration.
    Verify {
        #[arg(long)]
        schema: PathBuf,
        #[arg(long = "data", required = true)]
        data: Vec<PathBuf>,
        #[arg(long)]
        target: String,
        #[arg(long = "lmax")]
        l_max: Option<usize>,
    },
    /// Generate a synthetic corpus with planted dependencies.
    Gen {
        /// Number of variables.
        #[arg(long, short = 'n')]
        variables: usize,
        /// Number of rows.
        #[arg(long, short = 'm')]
        rows: usize,
        /// Comma-separated arities: one for all variables or one each.
        #[arg(long, value_delimiter = ',', default_value = "2")]
        arities: Vec<usize>,
        /// Number of owner shards.
        #[arg(long, default_value_t = 1)]
        shards: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.2)]
        noise: f64,
        /// Make the last variable a copy of the first.
        #[arg(long)]
        copy_first: bool,
        #[arg(long)]
        m_max: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    println!("{text}");
    if let Some(path) = out {
        fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Oracle { common, precision } => {
            let (schema, tables, opts) = common.load()?;
            emit(&cmd_oracle(&schema, &tables, &opts, precision)?, common.out.as_deref())?;
        }
        Command::Sim { common, csps, seed } => {
            let (schema, tables, opts) = common.load()?;
            let report = cmd_sim(&schema, &tables, &opts, csps, seed)?;
            emit(&report, common.out.as_deref())?;
            if report.audit.as_ref().is_some_and(|a| !a.passed) {
                log::error!("transcript audit failed");
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Party { role, index, config, data, out } => {
            let config = PartyConfig::load(&config)?;
            let table = data.map(|p| load_csv(&p, &config.schema)).transpose()?;
            let output = cmd_party(&config, role, index, table.as_ref())?;
            emit(&output, out.as_deref())?;
        }
        Command::Verify { schema, data, target, l_max } => {
            let schema = load_schema(&schema)?;
            let tables = data.iter().map(|p| load_csv(p, &schema)).collect::<Result<Vec<_>>>()?;
            let opts = RunOptions::new(&schema, &target, l_max, Mode::Corrected)?;
            let report = cmd_verify(&schema, &tables, opts.target, opts.l_max, VerifyHook::None)?;
            emit(&report, None)?;
            if !report.passed {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Gen { variables, rows, arities, shards, seed, noise, copy_first, m_max, out } => {
            let spec = GenSpec {
                arities,
                shards,
                noise,
                copy_first,
                m_max,
                ..GenSpec::new(variables, rows, seed)
            };
            let (schema, tables) = cmd_gen(&spec)?;
            for p in write_corpus(&out, &schema, &tables)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
