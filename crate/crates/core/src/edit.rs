//! Edits to a solved scene.
//!
//! Layout edits re-constrain a single focus object and search a new pose
//! for it with every other placed object held fixed. Asset edits add,
//! delete or replace one object. Every operation builds a complete new
//! [`EditState`] and hands it back in an [`EditResult`]; the input state is
//! never modified, so a failed edit leaves nothing half applied.

use std::collections::BTreeSet;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::constraints::{check_acyclic, Constraint, Thresholds};
use crate::error::EditError;
use crate::geometry::Vec3;
use crate::layout::{Layout, Placement};
use crate::refine::{EditRequest, Proposer};
use crate::scene::{ObjectSpec, Scene};
use crate::services::Services;
use crate::solver::{colliding_pairs, solve_with_fixed, SolverConfig, SolverReport};

/// Size given to objects added from free text, before any asset exists.
pub const DEFAULT_ADD_SIZE: f64 = 0.5;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EditState {
    pub scene: Scene,
    pub layout: Layout,
    #[serde(default)]
    pub constraints: Vec<Constraint>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditKind {
    Move,
    Add,
    Delete,
    Replace,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditCommand {
    pub kind: EditKind,
    #[serde(default)]
    pub instruction: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub focus_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new_spec: Option<ObjectSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditResult {
    /// False when the edit could not be carried out; `state` is then the
    /// unchanged input.
    pub applied: bool,
    pub state: EditState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<SolverReport>,
    pub changed: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub collisions: Vec<(String, String)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl EditResult {
    fn unchanged(state: &EditState, report: Option<SolverReport>, message: String) -> Self {
        EditResult {
            applied: false,
            state: state.clone(),
            report,
            changed: Vec::new(),
            collisions: Vec::new(),
            message: Some(message),
        }
    }
}

/// Checks an edit proposal: one source, never used as a target, and every
/// target a placed object. Returns the focus id.
pub fn validate_edit_constraints(
    state: &EditState,
    constraints: &[Constraint],
    expected_focus: Option<&str>,
) -> Result<String, String> {
    let sources: BTreeSet<&str> = constraints.iter().map(|c| c.source.as_str()).collect();
    let focus = match (sources.len(), expected_focus) {
        (0, Some(f)) => f,
        (0, None) => return Err("no constraints; the focus object could not be identified".into()),
        (1, _) => *sources.iter().next().expect("one source"),
        _ => {
            return Err(format!(
                "exactly one focus object must be the source, got {}",
                sources.into_iter().collect::<Vec<_>>().join(", ")
            ))
        }
    };
    if let Some(expected) = expected_focus {
        if focus != expected {
            return Err(format!("the focus object must be {expected:?}, got {focus:?}"));
        }
    }
    if !state.scene.contains(focus) {
        return Err(format!("unknown object {focus:?}"));
    }
    for c in constraints {
        if c.target == focus {
            return Err(format!("the focus object {focus:?} must not be a target ({c})"));
        }
        if !state.scene.contains(&c.target) {
            return Err(format!("unknown object {:?}", c.target));
        }
        if !state.layout.contains(&c.target) {
            return Err(format!("target {:?} has no placement", c.target));
        }
    }
    Ok(focus.to_string())
}

/// Asks the proposer for the focus object and its new constraints. An
/// invalid answer is sent back once with the diagnostic appended.
pub fn constraints_from_feedback(
    state: &EditState,
    instruction: &str,
    proposer: &dyn Proposer,
    expected_focus: Option<&str>,
) -> Result<(String, Vec<Constraint>), EditError> {
    if instruction.trim().is_empty() {
        return Err(EditError::Precondition("edit instruction is empty".into()));
    }
    let mut request = EditRequest::from_scene(&state.scene, instruction);
    let mut last = String::new();
    for round in 0..2 {
        let outcome = match proposer.propose_edit(&request) {
            Ok(constraints) => validate_edit_constraints(state, &constraints, expected_focus).map(|f| (f, constraints)),
            Err(e) if e.is_validation() => Err(e.to_string()),
            Err(e) => return Err(e.into()),
        };
        match outcome {
            Ok((focus, constraints)) => {
                let constraints = constraints.into_iter().map(Constraint::canonical).collect();
                return Ok((focus, constraints));
            }
            Err(diagnostic) if round == 0 => {
                warn!("edit proposal rejected, asking again: {diagnostic}");
                request.feedback = format!("{instruction}\n\nThe previous answer was rejected: {diagnostic}");
                last = diagnostic;
            }
            Err(diagnostic) => return Err(EditError::Validation(format!("{diagnostic} (first answer: {last})"))),
        }
    }
    unreachable!("second round always returns")
}

/// Searches a new pose for `focus_id` under `constraints`; all other placed
/// objects stay exactly where they are. Objects without a placement take
/// no part. The focus object's old constraints as a source are replaced.
pub fn apply_move(
    state: &EditState,
    focus_id: &str,
    constraints: &[Constraint],
    config: &SolverConfig,
    th: &Thresholds,
) -> Result<EditResult, EditError> {
    let spec = state
        .scene
        .get(focus_id)
        .ok_or_else(|| EditError::UnknownObject(focus_id.to_string()))?;
    validate_edit_constraints(state, constraints, Some(focus_id)).map_err(EditError::Validation)?;

    // the search starts from the current pose
    let mut focus = spec.clone();
    if let Some(p) = state.layout.get(focus_id) {
        focus.position = p.position;
        focus.rotation.z = p.yaw;
    }
    let mut fixed = state.layout.clone();
    fixed.remove(focus_id);
    let sub = Scene {
        items: state
            .scene
            .items
            .iter()
            .filter(|s| fixed.contains(&s.id))
            .cloned()
            .chain(std::iter::once(focus))
            .collect(),
        ..Scene::default()
    };
    let report = solve_with_fixed(&sub, constraints, &fixed, config, th, &mut |_| {})?;
    let Some(placement) = report.layout.get(focus_id).cloned() else {
        let message = format!("no pose for {focus_id} satisfies the requested constraints");
        return Ok(EditResult::unchanged(state, Some(report), message));
    };
    let mut next = state.clone();
    next.layout.insert(placement);
    next.constraints.retain(|c| c.source != focus_id);
    next.constraints.extend(constraints.iter().cloned());
    if check_acyclic(&next.constraints).is_err() {
        // stale constraints that pointed at the old pose close a loop
        next.constraints.retain(|c| c.target != focus_id);
    }
    Ok(EditResult {
        applied: true,
        state: next,
        report: Some(report),
        changed: vec![focus_id.to_string()],
        collisions: Vec::new(),
        message: None,
    })
}

/// Removes the object, its placement, and every constraint that names it.
pub fn apply_delete(state: &EditState, focus_id: &str) -> Result<EditResult, EditError> {
    if !state.scene.contains(focus_id) {
        return Err(EditError::UnknownObject(focus_id.to_string()));
    }
    let mut next = state.clone();
    next.scene.items.retain(|s| s.id != focus_id);
    next.layout.remove(focus_id);
    next.constraints.retain(|c| !c.touches(focus_id));
    Ok(EditResult {
        applied: true,
        state: next,
        report: None,
        changed: vec![focus_id.to_string()],
        collisions: Vec::new(),
        message: None,
    })
}

/// Adds `new_spec`, generating its asset when services are available,
/// then places it under proposer constraints with everything else fixed.
pub fn apply_add(
    state: &EditState,
    new_spec: &ObjectSpec,
    instruction: &str,
    proposer: &dyn Proposer,
    services: Option<&Services>,
    config: &SolverConfig,
    th: &Thresholds,
) -> Result<EditResult, EditError> {
    if state.scene.contains(&new_spec.id) {
        return Err(EditError::Precondition(format!("object id {:?} already exists", new_spec.id)));
    }
    let mut spec = new_spec.clone();
    if let Some(services) = services {
        let reference = state.scene.reference_image.as_ref().map(|r| services.root().join(r));
        let image = services.generate_object_image(&spec, reference.as_deref(), &state.scene.style, None)?;
        spec = services.generate_asset(&image, &spec, None)?.spec;
    }
    let mut staged = state.clone();
    staged.scene.items.push(spec.clone());
    let (_, constraints) = constraints_from_feedback(&staged, instruction, proposer, Some(&spec.id))?;
    let mut result = apply_move(&staged, &spec.id, &constraints, config, th)?;
    if !result.applied {
        result.state = state.clone();
    }
    Ok(result)
}

/// Generates a new asset for the object from the instruction and swaps it
/// in. Position, yaw and height are kept; the footprint follows the new
/// asset's proportions, and any resulting collisions are reported.
pub fn apply_replace(
    state: &EditState,
    focus_id: &str,
    instruction: &str,
    services: &Services,
    penetration_tol: f64,
) -> Result<EditResult, EditError> {
    let spec = state
        .scene
        .get(focus_id)
        .ok_or_else(|| EditError::UnknownObject(focus_id.to_string()))?;
    if instruction.trim().is_empty() {
        return Err(EditError::Precondition("edit instruction is empty".into()));
    }
    let reference = state.scene.reference_image.as_ref().map(|r| services.root().join(r));
    let image = services.generate_object_image(spec, reference.as_deref(), &state.scene.style, Some(instruction))?;
    let asset = services.generate_asset(&image, spec, Some(instruction))?;
    let mut next = state.clone();
    let slot = next.scene.get_mut(focus_id).expect("checked above");
    slot.size = Vec3::new(asset.spec.size.x, asset.spec.size.y, spec.size.z);
    slot.asset_ref = asset.spec.asset_ref;
    let collisions: Vec<(String, String)> = colliding_pairs(&next.scene, &next.layout, penetration_tol)
        .into_iter()
        .filter(|(a, b)| a == focus_id || b == focus_id)
        .collect();
    if !collisions.is_empty() {
        warn!("replaced {focus_id} now collides with {} object(s)", collisions.len());
    }
    Ok(EditResult {
        applied: true,
        state: next,
        report: None,
        changed: vec![focus_id.to_string()],
        collisions,
        message: None,
    })
}

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '_' || c == '-'))
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn contains_phrase(haystack: &[String], phrase: &[String]) -> bool {
    !phrase.is_empty() && haystack.windows(phrase.len()).any(|w| w == phrase)
}

/// Objects named in `text`, by id or by name.
pub fn mentioned_objects(scene: &Scene, text: &str) -> Vec<String> {
    let ws = words(text);
    scene
        .items
        .iter()
        .filter(|s| contains_phrase(&ws, &words(&s.id)) || contains_phrase(&ws, &words(&s.name)))
        .map(|s| s.id.clone())
        .collect()
}

const DELETE_VERBS: [&str; 2] = ["delete", "remove"];
const ADD_VERBS: [&str; 1] = ["add"];
const REPLACE_VERBS: [&str; 3] = ["replace", "change", "restyle"];

fn resolve_one(scene: &Scene, text: &str) -> Result<String, EditError> {
    let hits = mentioned_objects(scene, text);
    match hits.as_slice() {
        [one] => Ok(one.clone()),
        [] => Err(EditError::Ambiguous(format!("no object of the scene is named in {text:?}"))),
        many => Err(EditError::Ambiguous(format!(
            "{text:?} could refer to any of {}; name the object by id",
            many.join(", ")
        ))),
    }
}

fn unique_id(scene: &Scene, base: &str) -> String {
    if !scene.contains(base) {
        return base.to_string();
    }
    (1..).map(|n| format!("{base}{n}")).find(|id| !scene.contains(id)).expect("unbounded")
}

/// Spec for an object added from free text: the words before the first
/// relation word become the name.
pub fn spec_from_text(scene: &Scene, text: &str) -> Result<ObjectSpec, EditError> {
    const STOP: [&str; 14] = [
        "near", "on", "above", "left", "right", "in", "behind", "beside", "next", "to", "facing", "far", "under", "by",
    ];
    const ARTICLES: [&str; 4] = ["a", "an", "the", "another"];
    let ws = words(text);
    let name: Vec<&str> = ws
        .iter()
        .map(String::as_str)
        .skip_while(|w| ADD_VERBS.contains(w) || ARTICLES.contains(w))
        .take_while(|w| !STOP.contains(w))
        .collect();
    if name.is_empty() {
        return Err(EditError::Precondition(format!("no object described in {text:?}")));
    }
    let id = unique_id(scene, &name.join("_"));
    let s = DEFAULT_ADD_SIZE;
    Ok(ObjectSpec {
        id,
        name: name.join(" "),
        position: Vec3::new(0.0, 0.0, s / 2.0),
        rotation: Vec3::ZERO,
        size: Vec3::new(s, s, s),
        visual_description: text.trim().to_string(),
        asset_ref: None,
    })
}

/// Turns free text into a command. A leading delete, add or replace verb
/// selects an asset edit; anything else is a layout edit whose focus the
/// proposer identifies. Text mixing several edit verbs is rejected.
pub fn parse_command(scene: &Scene, text: &str) -> Result<EditCommand, EditError> {
    let ws = words(text);
    let Some(first) = ws.first() else {
        return Err(EditError::Precondition("edit instruction is empty".into()));
    };
    let verbs: BTreeSet<EditKind> = ws
        .iter()
        .filter_map(|w| {
            if DELETE_VERBS.contains(&w.as_str()) {
                Some(EditKind::Delete)
            } else if ADD_VERBS.contains(&w.as_str()) {
                Some(EditKind::Add)
            } else if REPLACE_VERBS.contains(&w.as_str()) {
                Some(EditKind::Replace)
            } else {
                None
            }
        })
        .collect();
    if verbs.len() > 1 {
        return Err(EditError::Ambiguous(format!(
            "{text:?} asks for more than one kind of edit; submit them separately"
        )));
    }
    let command = |kind, focus_id, new_spec| EditCommand {
        kind,
        instruction: text.trim().to_string(),
        focus_id,
        new_spec,
    };
    let first = first.as_str();
    if DELETE_VERBS.contains(&first) {
        Ok(command(EditKind::Delete, Some(resolve_one(scene, text)?), None))
    } else if ADD_VERBS.contains(&first) {
        Ok(command(EditKind::Add, None, Some(spec_from_text(scene, text)?)))
    } else if REPLACE_VERBS.contains(&first) {
        Ok(command(EditKind::Replace, Some(resolve_one(scene, text)?), None))
    } else if !verbs.is_empty() {
        Err(EditError::Ambiguous(format!(
            "start {text:?} with the edit verb (delete, add or replace), or describe a move without one"
        )))
    } else {
        Ok(command(EditKind::Move, None, None))
    }
}

/// Runs one command against `state`.
pub fn apply_command(
    state: &EditState,
    command: &EditCommand,
    proposer: &dyn Proposer,
    services: Option<&Services>,
    config: &SolverConfig,
    th: &Thresholds,
) -> Result<EditResult, EditError> {
    let need_services = || services.ok_or_else(|| EditError::Precondition("asset services are not configured".into()));
    match command.kind {
        EditKind::Move => {
            let (focus, constraints) =
                constraints_from_feedback(state, &command.instruction, proposer, command.focus_id.as_deref())?;
            apply_move(state, &focus, &constraints, config, th)
        }
        EditKind::Delete => {
            let focus = match &command.focus_id {
                Some(f) => f.clone(),
                None => resolve_one(&state.scene, &command.instruction)?,
            };
            apply_delete(state, &focus)
        }
        EditKind::Add => {
            let spec = match &command.new_spec {
                Some(s) => s.clone(),
                None => spec_from_text(&state.scene, &command.instruction)?,
            };
            apply_add(state, &spec, &command.instruction, proposer, services, config, th)
        }
        EditKind::Replace => {
            let focus = match &command.focus_id {
                Some(f) => f.clone(),
                None => resolve_one(&state.scene, &command.instruction)?,
            };
            apply_replace(state, &focus, &command.instruction, need_services()?, config.penetration_tol)
        }
    }
}

/// Starting state for editing: a layout with every object of `scene` at its
/// document pose.
pub fn initial_state(scene: Scene, constraints: Vec<Constraint>) -> EditState {
    EditState {
        layout: Layout::from_initial(&scene),
        scene,
        constraints,
    }
}

/// Placement of `id` copied into the scene document's pose fields.
pub fn finalize_pose(spec: &mut ObjectSpec, placement: &Placement) {
    spec.position = placement.position;
    spec.rotation.z = placement.yaw;
}
