//! Proposer/solver loop: constraints are proposed for a scene, solved, and
//! the solver's failures are sent back as edit instructions until the
//! layout is complete or the iteration cap is reached.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::constraints::{
    check_acyclic, constraints_to_json, parse_constraints, sources_grouped, Constraint, Relation, Thresholds,
};
use crate::error::{ProposeError, ServiceError};
use crate::layout::Layout;
use crate::prompts;
use crate::scene::Scene;
use crate::services::{strip_fence, JobKind, ServiceRequest, Transport};
use crate::solver::{solve, SolverConfig, SolverReport};

pub const DEFAULT_MAX_ITERATIONS: usize = 5;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RosterEntry {
    pub id: String,
    pub name: String,
    pub visual_description: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposerRequest {
    pub description: String,
    pub style: String,
    pub roster: Vec<RosterEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub previous: Option<Vec<Constraint>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edit_instructions: Option<String>,
}

fn roster_of(scene: &Scene) -> Vec<RosterEntry> {
    scene
        .items
        .iter()
        .map(|o| RosterEntry {
            id: o.id.clone(),
            name: o.name.clone(),
            visual_description: o.visual_description.clone(),
        })
        .collect()
}

fn objects_text(roster: &[RosterEntry]) -> String {
    prompts::objects_text(
        roster
            .iter()
            .map(|r| (r.id.as_str(), r.name.as_str(), r.visual_description.as_str())),
    )
}

fn sha_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl ProposerRequest {
    pub fn from_scene(scene: &Scene) -> Self {
        ProposerRequest {
            description: scene.description.clone(),
            style: scene.style.clone(),
            roster: roster_of(scene),
            previous: None,
            edit_instructions: None,
        }
    }

    pub fn objects_text(&self) -> String {
        objects_text(&self.roster)
    }

    /// Hex SHA-256 of the request's JSON encoding.
    pub fn fingerprint(&self) -> String {
        sha_hex(&serde_json::to_vec(self).expect("request serializes"))
    }

    /// Hash of the roster alone; stable across iterations of one scene.
    pub fn roster_key(&self) -> String {
        roster_key(&self.roster)
    }
}

pub fn roster_key(roster: &[RosterEntry]) -> String {
    sha_hex(&serde_json::to_vec(roster).expect("roster serializes"))
}

/// A layout-level edit request: one focus object is re-constrained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditRequest {
    pub roster: Vec<RosterEntry>,
    pub feedback: String,
}

impl EditRequest {
    pub fn from_scene(scene: &Scene, feedback: impl Into<String>) -> Self {
        EditRequest {
            roster: roster_of(scene),
            feedback: feedback.into(),
        }
    }

    pub fn objects_text(&self) -> String {
        objects_text(&self.roster)
    }
}

pub trait Proposer: Send + Sync {
    /// Spatial constraints for the whole roster.
    fn propose(&self, request: &ProposerRequest) -> Result<Vec<Constraint>, ProposeError>;

    /// Constraints for a single focus object named in user feedback.
    fn propose_edit(&self, request: &EditRequest) -> Result<Vec<Constraint>, ProposeError>;
}

/// Structural checks on a proposal: known ids, no self references, no
/// cycles, and constraints grouped by source.
pub fn validate_proposal(constraints: &[Constraint], roster: &[RosterEntry]) -> Result<(), ProposeError> {
    let ids: HashSet<&str> = roster.iter().map(|r| r.id.as_str()).collect();
    for (i, c) in constraints.iter().enumerate() {
        for id in [&c.source, &c.target] {
            if !ids.contains(id.as_str()) {
                return Err(ProposeError::Invalid(format!("constraint {i} ({c}) names unknown object {id:?}")));
            }
        }
        if c.source == c.target {
            return Err(ProposeError::Invalid(format!("constraint {i} ({c}) refers to itself")));
        }
    }
    check_acyclic(constraints)
        .map_err(|cycle| ProposeError::Invalid(format!("dependency cycle: {}", cycle.join(" -> "))))?;
    if !sources_grouped(constraints) {
        return Err(ProposeError::Invalid(
            "constraints sharing a source must be listed consecutively".into(),
        ));
    }
    Ok(())
}

fn check_roster(roster: &[RosterEntry]) -> Result<(), ProposeError> {
    if roster.is_empty() {
        return Err(ProposeError::Precondition("object roster is empty".into()));
    }
    let mut seen = HashSet::new();
    for r in roster {
        if !seen.insert(r.id.as_str()) {
            return Err(ProposeError::Precondition(format!("duplicate roster id {:?}", r.id)));
        }
    }
    Ok(())
}

/// Pulls the constraint array out of a model reply.
pub fn parse_reply(text: &str) -> Result<Vec<Constraint>, ProposeError> {
    let body = strip_fence(text);
    let body = match (body.find('['), body.rfind(']')) {
        (Some(a), Some(b)) if a < b => &body[a..=b],
        _ => body,
    };
    parse_constraints(body).map_err(|e| ProposeError::Invalid(e.to_string()))
}

#[derive(Clone, Debug)]
pub enum Scripted {
    Constraints(Vec<Constraint>),
    /// Reply text, parsed like a remote reply.
    Raw(String),
    Fail(String),
}

/// Deterministic proposer for offline runs.
///
/// Answers come from the scripted queue first, then from the table keyed
/// by request fingerprint, then from the table keyed by roster. Edit
/// requests use their own queue, then the first rule whose needle occurs
/// in the feedback.
#[derive(Default)]
pub struct MockProposer {
    script: Mutex<VecDeque<Scripted>>,
    by_request: HashMap<String, Vec<Constraint>>,
    by_roster: HashMap<String, Vec<Constraint>>,
    edit_script: Mutex<VecDeque<Scripted>>,
    edit_rules: Vec<(String, Vec<Constraint>)>,
    requests: Mutex<Vec<ProposerRequest>>,
    edit_requests: Mutex<Vec<EditRequest>>,
}

impl MockProposer {
    pub fn new() -> Self {
        MockProposer::default()
    }

    pub fn scripted(proposals: impl IntoIterator<Item = Scripted>) -> Self {
        MockProposer {
            script: Mutex::new(proposals.into_iter().collect()),
            ..MockProposer::default()
        }
    }

    pub fn then(self, proposal: Scripted) -> Self {
        self.script.lock().expect("script lock").push_back(proposal);
        self
    }

    pub fn with_request(mut self, request: &ProposerRequest, constraints: Vec<Constraint>) -> Self {
        self.by_request.insert(request.fingerprint(), constraints);
        self
    }

    pub fn with_roster(mut self, scene: &Scene, constraints: Vec<Constraint>) -> Self {
        self.by_roster.insert(roster_key(&roster_of(scene)), constraints);
        self
    }

    pub fn then_edit(self, proposal: Scripted) -> Self {
        self.edit_script.lock().expect("script lock").push_back(proposal);
        self
    }

    pub fn on_edit(mut self, needle: impl Into<String>, constraints: Vec<Constraint>) -> Self {
        self.edit_rules.push((needle.into(), constraints));
        self
    }

    pub fn requests(&self) -> Vec<ProposerRequest> {
        self.requests.lock().expect("requests lock").clone()
    }

    pub fn edit_requests(&self) -> Vec<EditRequest> {
        self.edit_requests.lock().expect("requests lock").clone()
    }

    fn resolve(s: Scripted) -> Result<Vec<Constraint>, ProposeError> {
        match s {
            Scripted::Constraints(c) => Ok(c),
            Scripted::Raw(text) => parse_reply(&text),
            Scripted::Fail(m) => Err(ProposeError::Service(ServiceError::Rejected(m))),
        }
    }
}

impl Proposer for MockProposer {
    fn propose(&self, request: &ProposerRequest) -> Result<Vec<Constraint>, ProposeError> {
        check_roster(&request.roster)?;
        self.requests.lock().expect("requests lock").push(request.clone());
        let next = self.script.lock().expect("script lock").pop_front();
        let constraints = match next {
            Some(s) => Self::resolve(s)?,
            None => self
                .by_request
                .get(&request.fingerprint())
                .or_else(|| self.by_roster.get(&request.roster_key()))
                .cloned()
                .ok_or(ProposeError::NoResponse)?,
        };
        validate_proposal(&constraints, &request.roster)?;
        Ok(constraints)
    }

    fn propose_edit(&self, request: &EditRequest) -> Result<Vec<Constraint>, ProposeError> {
        check_roster(&request.roster)?;
        self.edit_requests.lock().expect("requests lock").push(request.clone());
        let next = self.edit_script.lock().expect("script lock").pop_front();
        match next {
            Some(s) => Self::resolve(s),
            None => self
                .edit_rules
                .iter()
                .find(|(needle, _)| request.feedback.contains(needle.as_str()))
                .map(|(_, c)| c.clone())
                .ok_or(ProposeError::NoResponse),
        }
    }
}

/// Counting semaphore bounding simultaneous remote calls.
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().expect("slots lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("slots lock");
        }
        *free -= 1;
        SlotGuard(self)
    }
}

struct SlotGuard<'a>(&'a Slots);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("slots lock") += 1;
        self.0.cv.notify_one();
    }
}

/// Proposer backed by a vision-language service reached through a
/// [`Transport`], using the constraint prompt templates.
pub struct RemoteProposer {
    transport: Arc<dyn Transport>,
    slots: Slots,
    attempts: u32,
    backoff: Duration,
}

impl RemoteProposer {
    pub fn new(transport: Arc<dyn Transport>, max_inflight: usize) -> Self {
        RemoteProposer {
            transport,
            slots: Slots {
                free: Mutex::new(max_inflight.max(1)),
                cv: Condvar::new(),
            },
            attempts: 3,
            backoff: Duration::from_millis(250),
        }
    }

    pub fn with_retry(mut self, attempts: u32, backoff: Duration) -> Self {
        self.attempts = attempts.max(1);
        self.backoff = backoff;
        self
    }

    /// The request the proposer sends for `request`.
    pub fn render(request: &ProposerRequest) -> ServiceRequest {
        let objects = request.objects_text();
        let prompt = match (&request.previous, &request.edit_instructions) {
            (None, None) => prompts::constraints_user(&request.description, &objects),
            (previous, edit) => prompts::regenerate(
                &request.description,
                &objects,
                &previous.as_deref().map(constraints_to_json).unwrap_or_else(|| "[]".into()),
                edit.as_deref().unwrap_or_default(),
            ),
        };
        let mut out = ServiceRequest::new(JobKind::Constraints, prompt);
        out.system = Some(prompts::CONSTRAINTS_SYSTEM.to_string());
        out
    }

    pub fn render_edit(request: &EditRequest) -> ServiceRequest {
        ServiceRequest::new(JobKind::Constraints, prompts::edit(&request.objects_text(), &request.feedback))
    }

    fn call(&self, request: &ServiceRequest) -> Result<String, ProposeError> {
        let _slot = self.slots.acquire();
        let mut delay = self.backoff;
        for attempt in 1..=self.attempts {
            match self.transport.send(request) {
                Ok(reply) => {
                    return reply.text.ok_or_else(|| ProposeError::Invalid("reply carries no text".into()));
                }
                Err(e) if e.is_retriable() && attempt < self.attempts => {
                    warn!("constraint request attempt {attempt} failed: {e}");
                    std::thread::sleep(delay);
                    delay *= 2;
                }
                Err(e) => return Err(e.into()),
            }
        }
        unreachable!("loop returns on the last attempt")
    }
}

impl Proposer for RemoteProposer {
    fn propose(&self, request: &ProposerRequest) -> Result<Vec<Constraint>, ProposeError> {
        check_roster(&request.roster)?;
        let constraints = parse_reply(&self.call(&Self::render(request))?)?;
        validate_proposal(&constraints, &request.roster)?;
        Ok(constraints)
    }

    fn propose_edit(&self, request: &EditRequest) -> Result<Vec<Constraint>, ProposeError> {
        check_roster(&request.roster)?;
        parse_reply(&self.call(&Self::render_edit(request))?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefineStatus {
    Solved,
    BudgetExhausted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Iteration {
    /// Feedback sent with this iteration's request.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edit_instructions: Option<String>,
    pub constraints: Vec<Constraint>,
    /// Absent when the proposal failed validation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<SolverReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejected: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementTrace {
    pub iterations: Vec<Iteration>,
    pub max_iterations: usize,
    pub status: RefineStatus,
    /// Iteration holding the returned layout.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best: Option<usize>,
}

impl RefinementTrace {
    pub fn len(&self) -> usize {
        self.iterations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterations.is_empty()
    }

    pub fn best_report(&self) -> Option<&SolverReport> {
        self.best.and_then(|i| self.iterations[i].report.as_ref())
    }

    /// Constraints that produced the returned layout.
    pub fn best_constraints(&self) -> Option<&[Constraint]> {
        self.best.map(|i| self.iterations[i].constraints.as_slice())
    }
}

/// The loop stopped on a proposer error that is not a validation problem.
#[derive(Debug)]
pub struct RefineAbort {
    pub error: ProposeError,
    pub trace: RefinementTrace,
}

impl fmt::Display for RefineAbort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "refinement aborted after {} iteration(s): {}", self.trace.len(), self.error)
    }
}

impl std::error::Error for RefineAbort {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// One line per failed object: `<id>: could not satisfy [<relation> target <id>, ...]`.
pub fn feedback_text(report: &SolverReport, constraints: &[Constraint]) -> String {
    report
        .failures
        .iter()
        .map(|f| {
            let mut parts: Vec<String> = f
                .violated
                .iter()
                .filter_map(|&i| constraints.get(i))
                .map(|c| format!("{} target {}", c.relation, c.target))
                .collect();
            if f.collision {
                parts.push("no collision-free position".into());
            }
            format!("{}: could not satisfy [{}]", f.id, parts.join(", "))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Proposes, solves, and re-proposes with the solver's feedback until the
/// layout is complete or `max_iterations` proposals have been made.
/// Returns the best layout seen.
pub fn refine_until_solved(
    scene: &Scene,
    proposer: &dyn Proposer,
    config: &SolverConfig,
    th: &Thresholds,
    max_iterations: usize,
) -> Result<(Layout, RefinementTrace), RefineAbort> {
    let mut trace = RefinementTrace {
        iterations: Vec::new(),
        max_iterations,
        status: RefineStatus::BudgetExhausted,
        best: None,
    };
    if max_iterations == 0 {
        return Err(RefineAbort {
            error: ProposeError::Precondition("max_iterations must be at least 1".into()),
            trace,
        });
    }
    let mut request = ProposerRequest::from_scene(scene);
    let mut best_score = None;
    for k in 0..max_iterations {
        let proposal = proposer.propose(&request);
        let mut record = Iteration {
            edit_instructions: request.edit_instructions.clone(),
            constraints: Vec::new(),
            report: None,
            rejected: None,
        };
        let next_feedback = match proposal {
            Ok(constraints) => match solve(scene, &constraints, config, th) {
                Ok(report) => {
                    info!(
                        "iteration {}: placed {}/{} ({:?})",
                        k + 1,
                        report.score,
                        scene.items.len(),
                        report.terminated_by
                    );
                    if best_score.is_none_or(|b| report.score > b) {
                        best_score = Some(report.score);
                        trace.best = Some(k);
                    }
                    let complete = report.is_complete();
                    let feedback = feedback_text(&report, &constraints);
                    record.constraints = constraints.clone();
                    record.report = Some(report);
                    trace.iterations.push(record);
                    if complete {
                        trace.status = RefineStatus::Solved;
                        trace.best = Some(k);
                        break;
                    }
                    request.previous = Some(constraints);
                    feedback
                }
                Err(e) => {
                    let message = e.to_string();
                    record.constraints = constraints;
                    record.rejected = Some(message.clone());
                    trace.iterations.push(record);
                    format!("The previous constraints were rejected: {message}")
                }
            },
            Err(e) if e.is_validation() => {
                let message = e.to_string();
                warn!("iteration {}: {message}", k + 1);
                record.rejected = Some(message.clone());
                trace.iterations.push(record);
                format!("The previous constraints were rejected: {message}")
            }
            Err(error) => return Err(RefineAbort { error, trace }),
        };
        request.edit_instructions = Some(next_feedback);
    }
    let layout = trace
        .best_report()
        .map(|r| r.layout.clone())
        .unwrap_or_default();
    Ok((layout, trace))
}

/// Offline proposer that reads edit feedback literally: the first object
/// named is the focus, and each relation phrase applies to the next object
/// named after it. Whole-scene proposals are not supported.
#[derive(Clone, Copy, Debug, Default)]
pub struct PhraseProposer;

const PHRASES: [(&str, Relation); 17] = [
    ("to the left of", Relation::LeftOf),
    ("left of", Relation::LeftOf),
    ("to the right of", Relation::RightOf),
    ("right of", Relation::RightOf),
    ("in front of", Relation::InFrontOf),
    ("behind", Relation::Behind),
    ("next to", Relation::SideOf),
    ("beside", Relation::SideOf),
    ("side of", Relation::SideOf),
    ("close to", Relation::Near),
    ("near", Relation::Near),
    ("far from", Relation::Far),
    ("away from", Relation::Far),
    ("on top of", Relation::On),
    ("onto", Relation::On),
    ("on", Relation::On),
    ("above", Relation::Above),
];

fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '_' || c == '-'))
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Last word of an object's name, when no other roster name ends with it.
fn head_noun(roster: &[RosterEntry], entry: &RosterEntry) -> Vec<String> {
    let last = |r: &RosterEntry| tokens(&r.name).pop();
    match last(entry) {
        Some(w) if roster.iter().filter(|r| last(r).as_ref() == Some(&w)).count() == 1 => vec![w],
        _ => Vec::new(),
    }
}

/// Word index and id of each roster object named in `ws`, in text order.
/// Objects are named by id, full name, or an unambiguous head noun.
fn mentions(roster: &[RosterEntry], ws: &[String]) -> Vec<(usize, usize, String)> {
    let mut out = Vec::new();
    for r in roster {
        for phrase in [tokens(&r.id), tokens(&r.name), head_noun(roster, r)] {
            if phrase.is_empty() {
                continue;
            }
            let hits: Vec<usize> = ws
                .windows(phrase.len())
                .enumerate()
                .filter(|(_, w)| *w == phrase.as_slice())
                .map(|(at, _)| at)
                .collect();
            if !hits.is_empty() {
                out.extend(hits.into_iter().map(|at| (at, at + phrase.len(), r.id.clone())));
                break;
            }
        }
    }
    out.sort();
    out
}

impl PhraseProposer {
    pub fn parse(roster: &[RosterEntry], feedback: &str) -> Vec<Constraint> {
        // only the instruction itself, not any appended diagnostic
        let first = feedback.split("\n\n").next().unwrap_or_default();
        let ws = tokens(first);
        let named = mentions(roster, &ws);
        let Some((_, focus_end, focus)) = named.first().cloned() else {
            return Vec::new();
        };
        let mut out = Vec::new();
        let mut i = focus_end;
        while i < ws.len() {
            let hit = PHRASES.iter().find(|(p, _)| {
                let p = tokens(p);
                ws[i..].starts_with(&p)
            });
            let Some((phrase, relation)) = hit else {
                i += 1;
                continue;
            };
            let after = i + tokens(phrase).len();
            if let Some((_, _, target)) = named.iter().find(|(at, _, id)| *at >= after && *id != focus) {
                out.push(Constraint::new(*relation, focus.clone(), target.clone()));
            }
            i = after;
        }
        for (k, w) in ws.iter().enumerate().skip(focus_end) {
            if matches!(w.as_str(), "face" | "faces" | "facing") {
                if let Some((_, _, target)) = named.iter().find(|(at, _, id)| *at > k && *id != focus) {
                    out.push(Constraint::new(Relation::FaceTo, focus.clone(), target.clone()));
                }
            }
        }
        out
    }
}

impl Proposer for PhraseProposer {
    fn propose(&self, request: &ProposerRequest) -> Result<Vec<Constraint>, ProposeError> {
        check_roster(&request.roster)?;
        Err(ProposeError::NoResponse)
    }

    fn propose_edit(&self, request: &EditRequest) -> Result<Vec<Constraint>, ProposeError> {
        check_roster(&request.roster)?;
        Ok(Self::parse(&request.roster, &request.feedback))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::{eval_all, Relation, Verdict};
    use crate::fixtures::{bedroom_constraints, bedroom_scene};
    use crate::services::{MockReply, MockTransport};

    fn c(rel: Relation, s: &str, t: &str) -> Constraint {
        Constraint::new(rel, s, t)
    }

    /// Same-pair left_of and right_of cannot both hold.
    fn contradictory() -> Vec<Constraint> {
        vec![
            c(Relation::LeftOf, "nightstand_left", "bed1"),
            c(Relation::RightOf, "nightstand_left", "bed1"),
        ]
    }

    #[test]
    fn mock_keyed_to_roster_returns_fixture() {
        let scene = bedroom_scene();
        let p = MockProposer::new().with_roster(&scene, bedroom_constraints());
        let got = p.propose(&ProposerRequest::from_scene(&scene)).unwrap();
        assert_eq!(got, bedroom_constraints());
    }

    #[test]
    fn empty_roster_is_precondition() {
        let mut scene = bedroom_scene();
        scene.items.clear();
        let p = MockProposer::new();
        assert!(matches!(
            p.propose(&ProposerRequest::from_scene(&scene)),
            Err(ProposeError::Precondition(_))
        ));
    }

    #[test]
    fn cycles_and_unknown_ids_are_rejected() {
        let scene = bedroom_scene();
        let req = ProposerRequest::from_scene(&scene);
        let p = MockProposer::scripted([
            Scripted::Constraints(vec![c(Relation::Near, "bed1", "armchair1"), c(Relation::Near, "armchair1", "bed1")]),
            Scripted::Constraints(vec![c(Relation::Near, "ghost", "bed1")]),
            Scripted::Constraints(vec![
                c(Relation::Near, "lamp_left", "bed1"),
                c(Relation::Near, "armchair1", "bed1"),
                c(Relation::Far, "lamp_left", "armchair1"),
            ]),
        ]);
        for needle in ["cycle", "ghost", "consecutively"] {
            match p.propose(&req) {
                Err(ProposeError::Invalid(m)) => assert!(m.contains(needle), "{m}"),
                other => panic!("unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn feedback_names_failed_objects() {
        let scene = bedroom_scene();
        let cs = contradictory();
        let report = solve(&scene, &cs, &SolverConfig::default(), &Thresholds::default()).unwrap();
        let text = feedback_text(&report, &cs);
        assert_eq!(text, "nightstand_left: could not satisfy [left of target bed1, right of target bed1]");
    }

    #[test]
    fn refine_solves_on_second_iteration() {
        let scene = bedroom_scene();
        let th = Thresholds::default();
        let p = MockProposer::scripted([
            Scripted::Constraints(contradictory()),
            Scripted::Constraints(bedroom_constraints()),
        ]);
        let (layout, trace) = refine_until_solved(&scene, &p, &SolverConfig::default(), &th, 5).unwrap();
        assert_eq!(trace.status, RefineStatus::Solved);
        assert_eq!(trace.len(), 2);
        assert_eq!(layout.len(), scene.items.len());
        assert!(eval_all(&bedroom_constraints(), &layout, &scene, &th)
            .iter()
            .all(|(_, v)| *v == Verdict::Satisfied));
        let second = &p.requests()[1];
        assert_eq!(second.previous.as_deref(), Some(contradictory().as_slice()));
        assert!(second.edit_instructions.as_deref().unwrap().starts_with("nightstand_left:"));
    }

    #[test]
    fn single_iteration_budget_returns_partial() {
        let scene = bedroom_scene();
        let p = MockProposer::scripted([Scripted::Constraints(contradictory())]);
        let (layout, trace) = refine_until_solved(&scene, &p, &SolverConfig::default(), &Thresholds::default(), 1).unwrap();
        assert_eq!(trace.status, RefineStatus::BudgetExhausted);
        assert_eq!(trace.len(), 1);
        assert_eq!(layout.len(), scene.items.len() - 1);
        assert_eq!(trace.best, Some(0));
    }

    #[test]
    fn validation_failure_consumes_iteration() {
        let scene = bedroom_scene();
        let p = MockProposer::scripted([
            Scripted::Raw("not json".into()),
            Scripted::Constraints(bedroom_constraints()),
        ]);
        let (_, trace) = refine_until_solved(&scene, &p, &SolverConfig::default(), &Thresholds::default(), 5).unwrap();
        assert_eq!(trace.status, RefineStatus::Solved);
        assert!(trace.iterations[0].rejected.is_some());
        assert!(p.requests()[1].edit_instructions.as_deref().unwrap().contains("rejected"));
    }

    #[test]
    fn hard_failure_aborts_with_trace() {
        let scene = bedroom_scene();
        let p = MockProposer::scripted([Scripted::Constraints(contradictory()), Scripted::Fail("down".into())]);
        let abort = refine_until_solved(&scene, &p, &SolverConfig::default(), &Thresholds::default(), 5).unwrap_err();
        assert_eq!(abort.trace.len(), 1);
        assert!(matches!(abort.error, ProposeError::Service(_)));
    }

    #[test]
    fn phrase_proposer_reads_feedback() {
        let scene = bedroom_scene();
        let ask = |text: &str| PhraseProposer.propose_edit(&EditRequest::from_scene(&scene, text)).unwrap();
        assert_eq!(
            ask("Put the Reading Armchair to the right of bed1"),
            vec![c(Relation::RightOf, "armchair1", "bed1")]
        );
        assert_eq!(
            ask("move lamp_left on top of nightstand_right and near the dresser"),
            vec![c(Relation::On, "lamp_left", "nightstand_right"), c(Relation::Near, "lamp_left", "dresser1")]
        );
        assert_eq!(
            ask("armchair1 left of bed1 and right of bed1"),
            vec![c(Relation::LeftOf, "armchair1", "bed1"), c(Relation::RightOf, "armchair1", "bed1")]
        );
        assert_eq!(ask("armchair1 facing bed1"), vec![c(Relation::FaceTo, "armchair1", "bed1")]);
        assert_eq!(ask("Put the armchair left of the bed"), vec![c(Relation::LeftOf, "armchair1", "bed1")]);
        // both nightstands end in the same word
        assert_eq!(ask("armchair1 near the nightstand"), vec![]);
        assert!(ask("make it nicer").is_empty());
    }

    #[test]
    fn remote_proposer_renders_templates() {
        let scene = bedroom_scene();
        let mut req = ProposerRequest::from_scene(&scene);
        let first = RemoteProposer::render(&req);
        assert!(first.prompt.contains("- bed1: "));
        req.previous = Some(contradictory());
        req.edit_instructions = Some("nightstand_left: could not satisfy [left of target bed1, right of target bed1]".into());
        let second = RemoteProposer::render(&req);
        assert!(second.prompt.contains("\"relation\": \"right of\""));
        assert!(second.prompt.contains("could not satisfy"));
    }

    #[test]
    fn remote_proposer_parses_fenced_reply() {
        let scene = bedroom_scene();
        let reply = format!("```json\n{}\n```", crate::fixtures::BEDROOM_CONSTRAINTS);
        let mock = MockTransport::default().on(JobKind::Constraints, "", vec![MockReply::Fail("503".into()), MockReply::Text(reply)]);
        let p = RemoteProposer::new(Arc::new(mock), 2).with_retry(3, Duration::from_millis(1));
        assert_eq!(p.propose(&ProposerRequest::from_scene(&scene)).unwrap(), bedroom_constraints());
    }
}
