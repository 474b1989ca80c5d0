//! Command-line entry points and the local HTTP service.

pub mod commands;
pub mod server;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const INFEASIBLE: i32 = 2;
}

#[derive(Debug, Parser)]
#[command(name = "sceneforge", version, about = "Constraint-driven 3D scene layout")]
pub struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a scene and a constraint file.
    Validate { scene: PathBuf, constraints: PathBuf },
    /// Solve a layout and write the solver report.
    Solve {
        scene: PathBuf,
        constraints: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        /// Report destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a scene directory from a text description.
    Pipeline {
        description: String,
        #[arg(long, default_value = "")]
        style: String,
        /// Scene directory to create or resume.
        #[arg(long)]
        out: PathBuf,
        /// Use the built-in offline backend instead of the remote services.
        #[arg(long)]
        mock: bool,
        #[arg(long, default_value_t = sceneforge::refine::DEFAULT_MAX_ITERATIONS)]
        max_iterations: usize,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Apply one edit to a scene directory.
    Edit {
        dir: PathBuf,
        /// Free-text instruction, or an edit command as JSON with --json.
        instruction: String,
        #[arg(long)]
        json: bool,
        #[arg(long)]
        mock: bool,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Serve a scene directory over HTTP.
    Serve {
        dir: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long)]
        mock: bool,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Export a solved scene directory.
    Export {
        dir: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        /// Output file; defaults to export.json or scene.glb in the directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Glb,
}

#[derive(Clone, Debug, Default, Args)]
pub struct SolverArgs {
    /// Wall-clock budget in seconds.
    #[arg(long)]
    pub timeout: Option<f64>,
    #[arg(long)]
    pub node_limit: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl SolverArgs {
    pub fn config(&self) -> sceneforge::SolverConfig {
        let mut c = sceneforge::SolverConfig::default();
        if let Some(t) = self.timeout {
            c.timeout = t;
        }
        if let Some(n) = self.node_limit {
            c.node_limit = n;
        }
        if let Some(s) = self.seed {
            c.rng_seed = s;
        }
        c
    }
}
