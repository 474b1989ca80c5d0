use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use log::{info, warn};

use sceneforge::constraints::{check_acyclic, check_ids, normalize, parse_constraints, sources_grouped, Constraint};
use sceneforge::edit::{apply_command, parse_command, EditCommand};
use sceneforge::export::{export_glb, export_json};
use sceneforge::project::{run_pipeline, PipelineOptions, SceneDir, EXPORT_GLB_FILE, EXPORT_JSON_FILE, REPORT_FILE};
use sceneforge::refine::{PhraseProposer, Proposer, RemoteProposer};
use sceneforge::scene::{parse_scene, validate_scene, Scene};
use sceneforge::services::{HttpTransport, MockTransport, ServiceConfig, Services, Transport};
use sceneforge::solver::solve;
use sceneforge::{SolverConfig, Thresholds};

use crate::{exit, Command, Format};

pub fn run(command: Command) -> Result<i32> {
    match command {
        Command::Validate { scene, constraints } => validate(&scene, &constraints),
        Command::Solve {
            scene,
            constraints,
            solver,
            out,
        } => solve_cmd(&scene, &constraints, &solver.config(), out.as_deref()),
        Command::Pipeline {
            description,
            style,
            out,
            mock,
            max_iterations,
            solver,
        } => pipeline(&description, &style, &out, mock, max_iterations, solver.config()),
        Command::Edit {
            dir,
            instruction,
            json,
            mock,
            solver,
        } => edit(&dir, &instruction, json, mock, &solver.config()),
        Command::Serve {
            dir,
            port,
            host,
            mock,
            solver,
        } => {
            let app = crate::server::AppState::open(&dir, mock, solver.config())?;
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(crate::server::serve(app, &host, port))?;
            Ok(exit::OK)
        }
        Command::Export { dir, format, out } => export(&dir, format, out),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn load_scene(path: &Path) -> Result<Scene> {
    parse_scene(&read(path)?).with_context(|| format!("invalid scene {}", path.display()))
}

fn load_constraints(path: &Path) -> Result<Vec<Constraint>> {
    parse_constraints(&read(path)?).with_context(|| format!("invalid constraints {}", path.display()))
}

fn validate(scene_path: &Path, constraints_path: &Path) -> Result<i32> {
    let scene = load_scene(scene_path)?;
    let constraints = load_constraints(constraints_path)?;
    let mut problems = 0;
    for d in validate_scene(&scene) {
        println!("scene: {d}");
        problems += 1;
    }
    if let Err(e) = check_ids(&constraints, &scene) {
        println!("constraints: {e}");
        problems += 1;
    }
    if !sources_grouped(&constraints) {
        println!("constraints: constraints sharing a source are not consecutive");
        problems += 1;
    }
    let normalized = normalize(&constraints);
    if normalized.len() != constraints.len() {
        println!(
            "constraints: {} duplicate constraint(s)",
            constraints.len() - normalized.len()
        );
        problems += 1;
    }
    if let Err(cycle) = check_acyclic(&normalized) {
        println!("constraints: dependency cycle: {}", cycle.join(" -> "));
        problems += 1;
    }
    if problems == 0 {
        println!("ok: {} objects, {} constraints", scene.items.len(), constraints.len());
        Ok(exit::OK)
    } else {
        Ok(exit::FAILURE)
    }
}

fn solve_cmd(scene_path: &Path, constraints_path: &Path, config: &SolverConfig, out: Option<&Path>) -> Result<i32> {
    let scene = load_scene(scene_path)?;
    let constraints = normalize(&load_constraints(constraints_path)?);
    let report = solve(&scene, &constraints, config, &Thresholds::default())?;
    let json = report.to_json();
    match out {
        Some(path) => fs::write(path, &json).with_context(|| format!("cannot write {}", path.display()))?,
        None => println!("{json}"),
    }
    eprintln!(
        "placed {}/{} objects in {:.3}s, {} nodes ({:?})",
        report.score,
        scene.items.len(),
        report.elapsed,
        report.node_count,
        report.terminated_by
    );
    if report.is_complete() {
        return Ok(exit::OK);
    }
    for f in &report.failures {
        let violated: Vec<String> = f.violated.iter().map(|&i| constraints[i].to_string()).collect();
        eprintln!(
            "unplaced {}: violated [{}]{}",
            f.id,
            violated.join(", "),
            if f.collision { " (collision)" } else { "" }
        );
    }
    Ok(exit::INFEASIBLE)
}

/// Transport for the remote services: the offline mock, or the configured
/// HTTP gateway.
pub fn transport(mock: bool) -> Result<Arc<dyn Transport>> {
    if mock {
        return Ok(Arc::new(MockTransport::default()));
    }
    Ok(Arc::new(HttpTransport::from_env()?))
}

fn pipeline(description: &str, style: &str, out: &Path, mock: bool, max_iterations: usize, solver: SolverConfig) -> Result<i32> {
    let transport = transport(mock)?;
    let dir = SceneDir::create(out)?;
    let services = Services::new(out, transport.clone(), ServiceConfig::default())?;
    let proposer = RemoteProposer::new(transport, ServiceConfig::default().max_inflight);
    let options = PipelineOptions {
        solver,
        max_iterations,
        ..PipelineOptions::default()
    };
    let outcome = run_pipeline(&dir, description, style, &services, &proposer, &options)?;
    for (id, e) in &outcome.failed_objects {
        warn!("{id}: {e}");
    }
    let placed = outcome.state.layout.len();
    println!(
        "{}: {placed}/{} objects placed after {} iteration(s) ({:?}); {} job(s) reused",
        out.display(),
        outcome.state.scene.items.len(),
        outcome.trace.len(),
        outcome.trace.status,
        services.skipped()
    );
    Ok(if placed == outcome.state.scene.items.len() {
        exit::OK
    } else {
        exit::INFEASIBLE
    })
}

pub type EditBackends = (Arc<dyn Proposer>, Option<Arc<Services>>);

/// Proposer used for edits: the remote one when credentials are set and
/// the phrase reader otherwise.
pub fn edit_backends(root: &Path, mock: bool) -> Result<EditBackends> {
    let transport = match transport(mock) {
        Ok(t) => t,
        Err(e) => {
            warn!("remote services unavailable ({e}); edits use the phrase reader and asset edits are disabled");
            return Ok((Arc::new(PhraseProposer), None));
        }
    };
    let services = Arc::new(Services::new(root, transport.clone(), ServiceConfig::default())?);
    let proposer: Arc<dyn Proposer> = if mock {
        Arc::new(PhraseProposer)
    } else {
        Arc::new(RemoteProposer::new(transport, ServiceConfig::default().max_inflight))
    };
    Ok((proposer, Some(services)))
}

fn edit(root: &Path, instruction: &str, json: bool, mock: bool, config: &SolverConfig) -> Result<i32> {
    let dir = SceneDir::new(root);
    let state = dir.load_state()?;
    let command: EditCommand = if json {
        serde_json::from_str(instruction).context("invalid edit command")?
    } else {
        parse_command(&state.scene, instruction)?
    };
    let (proposer, services) = edit_backends(root, mock)?;
    let result = apply_command(&state, &command, proposer.as_ref(), services.as_deref(), config, &Thresholds::default())?;
    if !result.applied {
        eprintln!("edit not applied: {}", result.message.as_deref().unwrap_or("infeasible"));
        return Ok(exit::INFEASIBLE);
    }
    dir.save_state(&result.state)?;
    if let Some(report) = &result.report {
        dir.write(REPORT_FILE, report.to_json())?;
    }
    for (a, b) in &result.collisions {
        warn!("{a} now overlaps {b}");
    }
    println!("changed: {}", result.changed.join(", "));
    Ok(exit::OK)
}

fn export(root: &Path, format: Format, out: Option<PathBuf>) -> Result<i32> {
    let dir = SceneDir::new(root);
    let state = dir.load_state()?;
    if state.layout.is_empty() {
        bail!("{} has no layout; solve it first", root.display());
    }
    match format {
        Format::Json => {
            let path = out.unwrap_or_else(|| dir.path(EXPORT_JSON_FILE));
            fs::write(&path, export_json(&state.scene, &state.layout)?)
                .with_context(|| format!("cannot write {}", path.display()))?;
            info!("wrote {}", path.display());
            println!("{}", path.display());
        }
        Format::Glb => {
            let path = out.unwrap_or_else(|| dir.path(EXPORT_GLB_FILE));
            let glb = export_glb(&state.scene, &state.layout, dir.root())?;
            for w in &glb.warnings {
                eprintln!("warning: {w}");
            }
            fs::write(&path, &glb.bytes).with_context(|| format!("cannot write {}", path.display()))?;
            println!("{}", path.display());
        }
    }
    Ok(exit::OK)
}
