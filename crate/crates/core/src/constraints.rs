//! Typed spatial relations between pairs of objects.
//!
//! A constraint is `(kind, relation, source, target)`. The relation decides
//! the kind; a declared `type` that disagrees is overridden. All predicates
//! are evaluated over axis-aligned boxes.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

use crate::error::ConstraintError;
use crate::geometry::{facing_angle, horizontal_gap, Aabb, Vec3};
use crate::layout::{Layout, Placement};
use crate::scene::{ObjectSpec, Scene};

/// Slack applied in favor of the inclusive side of every threshold so that
/// values constructed exactly on a boundary are not lost to rounding.
pub const EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Relation {
    LeftOf,
    RightOf,
    InFrontOf,
    Behind,
    SideOf,
    Near,
    Far,
    On,
    Above,
    FaceTo,
}

impl Relation {
    pub const ALL: [Relation; 10] = [
        Relation::LeftOf,
        Relation::RightOf,
        Relation::InFrontOf,
        Relation::Behind,
        Relation::SideOf,
        Relation::Near,
        Relation::Far,
        Relation::On,
        Relation::Above,
        Relation::FaceTo,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Relation::LeftOf => "left of",
            Relation::RightOf => "right of",
            Relation::InFrontOf => "in front of",
            Relation::Behind => "behind",
            Relation::SideOf => "side of",
            Relation::Near => "near",
            Relation::Far => "far",
            Relation::On => "on",
            Relation::Above => "above",
            Relation::FaceTo => "face to",
        }
    }

    pub fn kind(self) -> ConstraintKind {
        match self {
            Relation::LeftOf | Relation::RightOf | Relation::InFrontOf | Relation::Behind | Relation::SideOf => {
                ConstraintKind::Relative
            }
            Relation::Near | Relation::Far => ConstraintKind::Distance,
            Relation::On | Relation::Above => ConstraintKind::Vertical,
            Relation::FaceTo => ConstraintKind::Rotation,
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Relation {
    type Err = ();

    /// Accepts the spaced form ("left of") as well as `left_of` / `left-of`, case-insensitively.
    fn from_str(s: &str) -> Result<Self, ()> {
        let norm = s
            .trim()
            .to_ascii_lowercase()
            .replace(['_', '-'], " ")
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ");
        Relation::ALL.into_iter().find(|r| r.as_str() == norm).ok_or(())
    }
}

impl Serialize for Relation {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Relation {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse()
            .map_err(|_| serde::de::Error::custom(format!("unknown relation {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintKind {
    Relative,
    Distance,
    Vertical,
    Rotation,
}

impl ConstraintKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ConstraintKind::Relative => "relative",
            ConstraintKind::Distance => "distance",
            ConstraintKind::Vertical => "vertical",
            ConstraintKind::Rotation => "rotation",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Constraint {
    #[serde(rename = "type")]
    pub kind: ConstraintKind,
    pub relation: Relation,
    pub source: String,
    pub target: String,
}

impl Constraint {
    pub fn new(relation: Relation, source: impl Into<String>, target: impl Into<String>) -> Self {
        Constraint {
            kind: relation.kind(),
            relation,
            source: source.into(),
            target: target.into(),
        }
    }

    /// Recomputes `kind` from the relation.
    pub fn canonical(mut self) -> Self {
        self.kind = self.relation.kind();
        self
    }

    pub fn touches(&self, id: &str) -> bool {
        self.source == id || self.target == id
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.source, self.relation, self.target)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub lateral_buffer: f64,
    pub near_max: f64,
    pub far_min: f64,
    pub on_clearance: f64,
    pub above_min: f64,
    /// Degrees.
    pub face_tolerance: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            lateral_buffer: 0.1,
            near_max: 2.0,
            far_min: 8.0,
            on_clearance: 0.002,
            above_min: 2.0,
            face_tolerance: 10.0,
        }
    }
}

pub fn parse_constraints(document: &str) -> Result<Vec<Constraint>, ConstraintError> {
    let root: Value = serde_json::from_str(document).map_err(|e| ConstraintError::Json(e.to_string()))?;
    let entries = root.as_array().ok_or(ConstraintError::NotAList)?;
    let mut out = Vec::with_capacity(entries.len());
    for (index, entry) in entries.iter().enumerate() {
        let field = |name: &'static str| {
            entry
                .get(name)
                .and_then(Value::as_str)
                .ok_or(ConstraintError::MissingField { index, field: name })
        };
        let relation_text = field("relation")?;
        let relation: Relation = relation_text.parse().map_err(|_| ConstraintError::UnknownRelation {
            index,
            relation: relation_text.to_string(),
        })?;
        let source = field("source")?.trim().to_string();
        let target = field("target")?.trim().to_string();
        if source == target {
            return Err(ConstraintError::SelfReference { index, id: source });
        }
        if let Some(declared) = entry.get("type").and_then(Value::as_str) {
            if declared.trim().to_ascii_lowercase() != relation.kind().as_str() {
                log::debug!(
                    "constraint {index}: declared type {declared:?} overridden by {:?} for relation {relation}",
                    relation.kind().as_str()
                );
            }
        }
        out.push(Constraint::new(relation, source, target));
    }
    Ok(out)
}

pub fn constraints_to_json(constraints: &[Constraint]) -> String {
    serde_json::to_string_pretty(constraints).expect("constraints serialize")
}

/// Drops self-references and exact duplicates, then groups constraints so
/// that those sharing a source are adjacent, in order of each source's first
/// appearance.
pub fn normalize(constraints: &[Constraint]) -> Vec<Constraint> {
    let mut seen = HashSet::new();
    let mut groups: Vec<(String, Vec<Constraint>)> = Vec::new();
    for c in constraints {
        if c.source == c.target {
            continue;
        }
        let c = c.clone().canonical();
        if !seen.insert(c.clone()) {
            continue;
        }
        match groups.iter_mut().find(|(source, _)| *source == c.source) {
            Some((_, group)) => group.push(c),
            None => groups.push((c.source.clone(), vec![c])),
        }
    }
    groups.into_iter().flat_map(|(_, group)| group).collect()
}

/// Verifies that the source -> target dependency graph has no cycle and
/// returns one offending cycle otherwise.
pub fn check_acyclic(constraints: &[Constraint]) -> Result<(), Vec<String>> {
    let mut nodes: Vec<&str> = Vec::new();
    let mut index: HashMap<&str, usize> = HashMap::new();
    for c in constraints {
        for id in [c.source.as_str(), c.target.as_str()] {
            index.entry(id).or_insert_with(|| {
                nodes.push(id);
                nodes.len() - 1
            });
        }
    }
    let mut edges = vec![Vec::new(); nodes.len()];
    for c in constraints {
        edges[index[c.source.as_str()]].push(index[c.target.as_str()]);
    }

    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        White,
        Grey,
        Black,
    }
    let mut mark = vec![Mark::White; nodes.len()];
    for root in 0..nodes.len() {
        if mark[root] != Mark::White {
            continue;
        }
        // iterative DFS; stack holds (node, next edge index)
        let mut stack = vec![(root, 0usize)];
        mark[root] = Mark::Grey;
        while let Some(&mut (node, ref mut next)) = stack.last_mut() {
            if let Some(&succ) = edges[node].get(*next) {
                *next += 1;
                match mark[succ] {
                    Mark::White => {
                        mark[succ] = Mark::Grey;
                        stack.push((succ, 0));
                    }
                    Mark::Grey => {
                        let start = stack.iter().position(|&(n, _)| n == succ).expect("grey node on stack");
                        return Err(stack[start..].iter().map(|&(n, _)| nodes[n].to_string()).collect());
                    }
                    Mark::Black => {}
                }
            } else {
                mark[node] = Mark::Black;
                stack.pop();
            }
        }
    }
    Ok(())
}

/// True when constraints sharing a source are adjacent in the list.
pub fn sources_grouped(constraints: &[Constraint]) -> bool {
    let mut finished: HashSet<&str> = HashSet::new();
    let mut current: Option<&str> = None;
    for c in constraints {
        if current != Some(c.source.as_str()) {
            if let Some(prev) = current {
                finished.insert(prev);
            }
            if finished.contains(c.source.as_str()) {
                return false;
            }
            current = Some(c.source.as_str());
        }
    }
    true
}

/// An object's box together with the pose it was derived from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Posed {
    pub aabb: Aabb,
    pub position: Vec3,
    pub yaw: f64,
}

impl Posed {
    pub fn new(spec: &ObjectSpec, placement: &Placement) -> Result<Self, crate::error::GeometryError> {
        Ok(Posed {
            aabb: placement.aabb(spec)?,
            position: placement.position,
            yaw: placement.yaw,
        })
    }
}

/// Exact geometric semantics of each relation.
pub fn relation_holds(relation: Relation, source: &Posed, target: &Posed, th: &Thresholds) -> bool {
    let s = &source.aabb;
    let t = &target.aabb;
    let left = s.max.x <= t.min.x - th.lateral_buffer + EPS;
    let right = s.min.x >= t.max.x + th.lateral_buffer - EPS;
    match relation {
        Relation::LeftOf => left,
        Relation::RightOf => right,
        Relation::InFrontOf => s.max.y <= t.min.y - th.lateral_buffer + EPS,
        Relation::Behind => s.min.y >= t.max.y + th.lateral_buffer - EPS,
        Relation::SideOf => left || right,
        Relation::Near => horizontal_gap(s, t) <= th.near_max + EPS,
        Relation::Far => horizontal_gap(s, t) > th.far_min + EPS,
        Relation::On => {
            (s.bottom() - t.top()).abs() < th.on_clearance - EPS && s.footprint().within(&t.footprint(), EPS)
        }
        Relation::Above => {
            s.bottom() >= t.top() + th.above_min - EPS && s.footprint().overlap_area(&t.footprint()) > 0.0
        }
        Relation::FaceTo => match facing_angle(source.position, source.yaw, target.position) {
            Ok(angle) => angle <= th.face_tolerance + EPS,
            Err(_) => false,
        },
    }
}

/// Evaluates one constraint for two placed objects.
pub fn eval_relation(
    c: &Constraint,
    source: (&ObjectSpec, &Placement),
    target: (&ObjectSpec, &Placement),
    th: &Thresholds,
) -> Result<bool, ConstraintError> {
    if source.0.id != c.source || source.1.id != c.source {
        return Err(ConstraintError::MissingObject {
            index: 0,
            id: c.source.clone(),
        });
    }
    if target.0.id != c.target || target.1.id != c.target {
        return Err(ConstraintError::MissingObject {
            index: 0,
            id: c.target.clone(),
        });
    }
    let (Ok(s), Ok(t)) = (Posed::new(source.0, source.1), Posed::new(target.0, target.1)) else {
        return Ok(false);
    };
    Ok(relation_holds(c.relation, &s, &t, th))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Satisfied,
    Violated,
    /// One of the two objects has no placement.
    Unevaluable,
}

/// Per-constraint verdicts for a (possibly partial) layout.
pub fn eval_all(
    constraints: &[Constraint],
    layout: &Layout,
    scene: &Scene,
    th: &Thresholds,
) -> Vec<(usize, Verdict)> {
    constraints
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let pair = (
                scene.get(&c.source).zip(layout.get(&c.source)),
                scene.get(&c.target).zip(layout.get(&c.target)),
            );
            let verdict = match pair {
                (Some(s), Some(t)) => match eval_relation(c, s, t, th) {
                    Ok(true) => Verdict::Satisfied,
                    _ => Verdict::Violated,
                },
                _ => Verdict::Unevaluable,
            };
            (i, verdict)
        })
        .collect()
}

/// Checks that every constraint names objects present in the scene.
pub fn check_ids(constraints: &[Constraint], scene: &Scene) -> Result<(), ConstraintError> {
    for (index, c) in constraints.iter().enumerate() {
        for id in [&c.source, &c.target] {
            if !scene.contains(id) {
                return Err(ConstraintError::MissingObject { index, id: id.clone() });
            }
        }
    }
    Ok(())
}
