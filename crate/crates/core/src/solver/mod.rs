//! Depth-first layout search.
//!
//! Objects are visited in dependency order (every constraint's target before
//! its source). For each object the constraints whose targets are already
//! placed are collected; candidates come from the neighborhood grid when
//! there are none, otherwise from the generator of the highest-priority
//! constraint, topped up with smaller pools from the other constraints.
//! Every candidate must pass all collected constraints and the collision
//! test before the search descends. Objects that nothing constrains yet but
//! that later objects refer to also get candidates aimed at where those
//! dependents can go.
//!
//! A dead end returns the set of depths that caused it, and the search jumps
//! straight back to the deepest of them instead of retrying the
//! placements in between. A global node counter and a wall-clock budget cut
//! the search short, in which case the layout with the most placed objects
//! seen so far is returned.
//!
//! An object with no acceptable candidate is left unplaced and the search
//! continues greedily with the remaining objects, so that partial layouts
//! and per-object diagnostics are available when no complete layout exists.

pub mod candidates;

use std::collections::{BTreeSet, BinaryHeap, HashMap};
use std::cmp::Reverse;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::constraints::{check_acyclic, relation_holds, Constraint, ConstraintKind, Posed, Relation, Thresholds};
use crate::error::{ConstraintError, SolverError};
use crate::geometry::{boxes_collide, yaw_toward, Aabb};
use crate::layout::{Layout, Placement};
use crate::scene::{ObjectSpec, Scene};

pub use candidates::{gen_candidates_for, gen_candidates_unconstrained};
pub use crate::layout::score;

use candidates::{SourceInfo, TargetInfo, Window};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Wall-clock budget in seconds.
    pub timeout: f64,
    pub node_limit: u64,
    pub candidates_per_constraint: usize,
    pub neighborhood_radius: f64,
    pub neighborhood_step: f64,
    pub penetration_tol: f64,
    pub rng_seed: u64,
    /// How far past a target unbounded regions are sampled, in meters.
    pub sampling_reach: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            timeout: 60.0,
            node_limit: 100_000,
            candidates_per_constraint: 32,
            neighborhood_radius: 1.0,
            neighborhood_step: 0.25,
            penetration_tol: 0.001,
            rng_seed: 0,
            sampling_reach: 3.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Complete,
    Timeout,
    NodeLimit,
    Exhausted,
}

/// Why an object is missing from the reported layout.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectFailure {
    pub id: String,
    /// Indices into the constraint list the solver was given.
    pub violated: Vec<usize>,
    /// Some candidate met every constraint but collided with a placed object.
    pub collision: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub layout: Layout,
    pub score: usize,
    pub node_count: u64,
    /// Seconds. Not serialized so that reports of identical runs are byte-identical.
    #[serde(skip_serializing, default)]
    pub elapsed: f64,
    pub failures: Vec<ObjectFailure>,
    pub terminated_by: Termination,
}

impl SolverReport {
    pub fn is_complete(&self) -> bool {
        self.terminated_by == Termination::Complete
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SolverEvent {
    BestImproved { score: usize, node_count: u64 },
}

fn priority(kind: ConstraintKind) -> u8 {
    match kind {
        ConstraintKind::Vertical => 3,
        ConstraintKind::Relative => 2,
        ConstraintKind::Rotation => 1,
        ConstraintKind::Distance => 0,
    }
}

/// Orders object ids so that every constraint's target precedes its source;
/// otherwise document order is kept.
pub fn topo_order(scene: &Scene, constraints: &[Constraint]) -> Result<Vec<String>, ConstraintError> {
    let indices: Vec<usize> = (0..scene.items.len()).collect();
    topo_indices(scene, constraints, &indices)
        .map(|order| order.into_iter().map(|i| scene.items[i].id.clone()).collect())
}

fn topo_indices(scene: &Scene, constraints: &[Constraint], subset: &[usize]) -> Result<Vec<usize>, ConstraintError> {
    check_acyclic(constraints).map_err(ConstraintError::Cycle)?;
    let position: HashMap<&str, usize> = scene.items.iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect();
    let member: BTreeSet<usize> = subset.iter().copied().collect();
    let mut indegree: HashMap<usize, usize> = member.iter().map(|&i| (i, 0)).collect();
    let mut dependents: HashMap<usize, Vec<usize>> = HashMap::new();
    let mut seen = BTreeSet::new();
    for c in constraints {
        let (Some(&s), Some(&t)) = (position.get(c.source.as_str()), position.get(c.target.as_str())) else {
            continue;
        };
        if !member.contains(&s) || !member.contains(&t) || !seen.insert((t, s)) {
            continue;
        }
        *indegree.get_mut(&s).expect("member") += 1;
        dependents.entry(t).or_default().push(s);
    }
    let mut ready: BinaryHeap<Reverse<usize>> = indegree.iter().filter(|(_, &d)| d == 0).map(|(&i, _)| Reverse(i)).collect();
    let mut order = Vec::with_capacity(member.len());
    while let Some(Reverse(i)) = ready.pop() {
        order.push(i);
        for &d in dependents.get(&i).map(Vec::as_slice).unwrap_or_default() {
            let e = indegree.get_mut(&d).expect("member");
            *e -= 1;
            if *e == 0 {
                ready.push(Reverse(d));
            }
        }
    }
    debug_assert_eq!(order.len(), member.len());
    Ok(order)
}

/// Runs the search over every object of the scene.
pub fn solve(
    scene: &Scene,
    constraints: &[Constraint],
    config: &SolverConfig,
    th: &Thresholds,
) -> Result<SolverReport, SolverError> {
    solve_with_fixed(scene, constraints, &Layout::new(), config, th, &mut |_| {})
}

/// Like [`solve`] with an observer receiving search events.
pub fn solve_observed(
    scene: &Scene,
    constraints: &[Constraint],
    config: &SolverConfig,
    th: &Thresholds,
    observer: &mut dyn FnMut(&SolverEvent),
) -> Result<SolverReport, SolverError> {
    solve_with_fixed(scene, constraints, &Layout::new(), config, th, observer)
}

/// Searches only the objects missing from `fixed`; placements in `fixed`
/// are treated as already placed and copied unchanged into the result.
pub fn solve_with_fixed(
    scene: &Scene,
    constraints: &[Constraint],
    fixed: &Layout,
    config: &SolverConfig,
    th: &Thresholds,
    observer: &mut dyn FnMut(&SolverEvent),
) -> Result<SolverReport, SolverError> {
    for (index, c) in constraints.iter().enumerate() {
        for id in [&c.source, &c.target] {
            if !scene.contains(id) {
                return Err(ConstraintError::MissingObject { index, id: id.clone() }.into());
            }
        }
    }
    for p in fixed.iter() {
        if !scene.contains(&p.id) {
            return Err(SolverError::UnknownObject(p.id.clone()));
        }
    }
    let free: Vec<usize> = (0..scene.items.len()).filter(|&i| !fixed.contains(&scene.items[i].id)).collect();
    let order = topo_indices(scene, constraints, &free)?;

    let mut search = Search::new(scene, constraints, fixed, order, config, th, observer)?;
    search.run();
    Ok(search.into_report())
}

struct Best {
    layout: Layout,
    failures: Vec<ObjectFailure>,
}

struct Search<'a, 'o> {
    scene: &'a Scene,
    constraints: &'a [Constraint],
    config: &'a SolverConfig,
    th: &'a Thresholds,
    observer: &'o mut dyn FnMut(&SolverEvent),
    order: Vec<usize>,
    /// Position in `order` by scene index; `None` for fixed objects.
    depth_of: Vec<Option<usize>>,
    /// Constraint indices with the given object (scene index) as source.
    outgoing: Vec<Vec<usize>>,
    vertical_source: Vec<bool>,
    index_of: HashMap<&'a str, usize>,
    placed: Vec<Option<(Placement, Posed)>>,
    placed_count: usize,
    path_failures: Vec<ObjectFailure>,
    node_count: u64,
    start: Instant,
    budget: Duration,
    best: Option<Best>,
    best_score: usize,
    best_is_leaf: bool,
    stop: Option<Termination>,
}

impl<'a, 'o> Search<'a, 'o> {
    fn new(
        scene: &'a Scene,
        constraints: &'a [Constraint],
        fixed: &Layout,
        order: Vec<usize>,
        config: &'a SolverConfig,
        th: &'a Thresholds,
        observer: &'o mut dyn FnMut(&SolverEvent),
    ) -> Result<Self, SolverError> {
        let n = scene.items.len();
        let index_of: HashMap<&str, usize> = scene.items.iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect();
        let mut outgoing = vec![Vec::new(); n];
        let mut vertical_source = vec![false; n];
        for (ci, c) in constraints.iter().enumerate() {
            let s = index_of[c.source.as_str()];
            outgoing[s].push(ci);
            if c.relation.kind() == ConstraintKind::Vertical {
                vertical_source[s] = true;
            }
        }
        let mut placed = vec![None; n];
        let mut placed_count = 0;
        for p in fixed.iter() {
            let i = index_of[p.id.as_str()];
            placed[i] = Some((p.clone(), Posed::new(&scene.items[i], p)?));
            placed_count += 1;
        }
        let mut depth_of = vec![None; n];
        for (d, &i) in order.iter().enumerate() {
            depth_of[i] = Some(d);
        }
        let budget = Duration::try_from_secs_f64(config.timeout.max(0.0)).unwrap_or(Duration::MAX);
        Ok(Search {
            scene,
            constraints,
            config,
            th,
            observer,
            depth_of,
            order,
            outgoing,
            vertical_source,
            index_of,
            placed,
            placed_count,
            path_failures: Vec::new(),
            node_count: 0,
            start: Instant::now(),
            budget,
            best: None,
            best_score: 0,
            best_is_leaf: false,
            stop: None,
        })
    }

    fn run(&mut self) {
        self.record_best(0);
        self.dfs(0, false);
    }

    fn into_report(self) -> SolverReport {
        let elapsed = self.start.elapsed().as_secs_f64();
        let best = self.best.expect("initial best recorded");
        let terminated_by = match self.stop {
            Some(t) => t,
            None => Termination::Exhausted,
        };
        let terminated_by = if best.failures.is_empty() {
            Termination::Complete
        } else {
            terminated_by
        };
        SolverReport {
            score: best.layout.len(),
            layout: best.layout,
            node_count: self.node_count,
            elapsed,
            failures: best.failures,
            terminated_by,
        }
    }

    fn current_layout(&self) -> Layout {
        self.placed.iter().flatten().map(|(p, _)| p.clone()).collect()
    }

    /// Records the current partial layout if it beats the best so far.
    /// `depth` is the number of objects in `order` already decided.
    fn record_best(&mut self, depth: usize) {
        let leaf = depth == self.order.len();
        let better = self.placed_count > self.best_score || (leaf && !self.best_is_leaf);
        if self.best.is_some() && !better {
            return;
        }
        let improved = self.best.is_none() || self.placed_count > self.best_score;
        let mut failures = self.path_failures.clone();
        for &i in &self.order[depth..] {
            failures.push(ObjectFailure {
                id: self.scene.items[i].id.clone(),
                violated: Vec::new(),
                collision: false,
            });
        }
        self.best_score = self.placed_count;
        self.best_is_leaf = leaf;
        self.best = Some(Best {
            layout: self.current_layout(),
            failures,
        });
        if improved {
            (self.observer)(&SolverEvent::BestImproved {
                score: self.placed_count,
                node_count: self.node_count,
            });
        }
    }

    fn out_of_budget(&mut self) -> bool {
        if self.stop.is_some() {
            return true;
        }
        if self.node_count >= self.config.node_limit {
            self.stop = Some(Termination::NodeLimit);
        } else if self.start.elapsed() >= self.budget {
            self.stop = Some(Termination::Timeout);
        }
        self.stop.is_some()
    }

    /// Returns the depths whose placements explain why the subtree below
    /// produced no complete layout; the caller backjumps past every depth
    /// not in the set.
    fn dfs(&mut self, depth: usize, greedy: bool) -> BTreeSet<usize> {
        if depth == self.order.len() {
            self.record_best(depth);
            if self.path_failures.is_empty() {
                self.stop = Some(Termination::Complete);
            }
            return BTreeSet::new();
        }
        let x = self.order[depth];
        let spec = &self.scene.items[x];
        let active: Vec<usize> = self.outgoing[x]
            .iter()
            .copied()
            .filter(|&ci| self.placed[self.index_of[self.constraints[ci].target.as_str()]].is_some())
            .collect();
        let (candidates, primary, basis) = self.candidates_for(x, &active);
        let mut conflict: BTreeSet<usize> = basis.iter().filter_map(|&i| self.depth_of[i]).collect();

        let mut failed_constraints = BTreeSet::new();
        let mut every_candidate_failed_constraints = true;
        let mut collision = false;
        let mut accepted_any = false;

        for cand in candidates {
            if self.out_of_budget() {
                return conflict;
            }
            self.node_count += 1;
            let Ok(posed) = Posed::new(spec, &cand) else {
                continue;
            };
            let mut ok = true;
            for &ci in &active {
                let c = &self.constraints[ci];
                let t = self.index_of[c.target.as_str()];
                let (_, target) = self.placed[t].as_ref().expect("active target placed");
                if !relation_holds(c.relation, &posed, target, self.th) {
                    failed_constraints.insert(ci);
                    conflict.extend(self.depth_of[t]);
                    ok = false;
                }
            }
            if !ok {
                continue;
            }
            every_candidate_failed_constraints = false;
            let hits = self.collisions(&posed.aabb);
            if !hits.is_empty() {
                collision = true;
                conflict.extend(hits.into_iter().filter_map(|j| self.depth_of[j]));
                continue;
            }

            accepted_any = true;
            self.placed[x] = Some((cand, posed));
            self.placed_count += 1;
            self.record_best(depth + 1);
            let below = self.dfs(depth + 1, greedy);
            self.placed[x] = None;
            self.placed_count -= 1;
            if self.stop.is_some() || greedy {
                return conflict;
            }
            if !below.contains(&depth) {
                return below;
            }
            conflict.extend(below.into_iter().filter(|&d| d != depth));
        }

        if !accepted_any {
            if let Some(p) = primary {
                if every_candidate_failed_constraints {
                    failed_constraints.insert(p);
                }
            }
            self.path_failures.push(ObjectFailure {
                id: spec.id.clone(),
                violated: failed_constraints.into_iter().collect(),
                collision,
            });
            self.dfs(depth + 1, true);
            self.path_failures.pop();
        }
        conflict
    }

    /// Indices of placed objects whose boxes interpenetrate `aabb`.
    fn collisions(&self, aabb: &Aabb) -> Vec<usize> {
        self.placed
            .iter()
            .enumerate()
            .filter(|(_, p)| p.as_ref().is_some_and(|(_, other)| boxes_collide(aabb, &other.aabb, self.config.penetration_tol)))
            .map(|(j, _)| j)
            .collect()
    }

    /// Candidate placements for object `x`, the constraint that produced
    /// them, and the placed objects the candidates were derived from.
    fn candidates_for(&self, x: usize, active: &[usize]) -> (Vec<Placement>, Option<usize>, Vec<usize>) {
        let spec = &self.scene.items[x];
        let default_z = if self.vertical_source[x] {
            spec.position.z
        } else {
            spec.ground_z()
        };
        if active.is_empty() {
            let mut out = candidates::grid_around(spec, self.config, default_z, spec.yaw());
            let mut basis = Vec::new();
            out.extend(self.dependent_candidates(x, default_z, &mut basis));
            return (out, None, basis);
        }

        // highest priority first; ties keep list order
        let primary = *active
            .iter()
            .max_by_key(|&&ci| (priority(self.constraints[ci].kind), Reverse(ci)))
            .expect("non-empty");
        let source = SourceInfo {
            spec,
            yaw: spec.yaw(),
            default_z,
            wide: active.iter().any(|&ci| self.constraints[ci].relation == Relation::Far)
                || self.constraints.iter().any(|c| c.relation == Relation::Far && c.target == spec.id),
        };
        // the primary's pool first, then smaller pools from the other
        // constraints in case the primary's samples miss them all
        let mut generators = vec![(primary, self.config.candidates_per_constraint * active.len())];
        let mut rest: Vec<usize> = active.iter().copied().filter(|&ci| ci != primary).collect();
        rest.sort_by_key(|&ci| (Reverse(priority(self.constraints[ci].kind)), ci));
        generators.extend(rest.into_iter().map(|ci| (ci, self.config.candidates_per_constraint)));

        let half = crate::geometry::rotated_half_extents(spec.size, spec.yaw());
        let face = active
            .iter()
            .map(|&ci| &self.constraints[ci])
            .find(|c| c.relation == Relation::FaceTo);
        let mut out = Vec::new();
        for (round, (gi, limit)) in generators.into_iter().enumerate() {
            let mut hint = Window::ALL;
            for &ci in active.iter().filter(|&&ci| ci != gi) {
                let c = &self.constraints[ci];
                let (_, target) = self.target_of(c);
                if let Some(w) = candidates::relation_hint(c.relation, half, &target.aabb, self.th) {
                    let next = hint.intersect(&w);
                    if !next.is_empty() {
                        hint = next;
                    }
                }
            }
            let c = &self.constraints[gi];
            let (t_index, target) = self.target_of(c);
            let seed = self
                .config
                .rng_seed
                .wrapping_mul(0x9e3779b97f4a7c15)
                .wrapping_add((x as u64) << 32)
                .wrapping_add((round as u64) << 48)
                .wrapping_add(self.node_count);
            let mut pool = candidates::generate(
                c.relation,
                &source,
                &TargetInfo {
                    spec: &self.scene.items[t_index],
                    posed: *target,
                },
                &hint,
                limit,
                self.config,
                self.th,
                seed,
            );
            // a face-to constraint still decides the yaw
            if c.relation != Relation::FaceTo {
                if let Some(face) = face {
                    let (_, facing) = self.target_of(face);
                    for cand in &mut pool {
                        if let Some(yaw) = yaw_toward(&cand.position, &facing.position) {
                            cand.yaw = yaw;
                        }
                    }
                }
            }
            out.extend(pool);
        }
        let basis = active.iter().map(|&ci| self.index_of[self.constraints[ci].target.as_str()]).collect();
        (out, Some(primary), basis)
    }

    /// Extra candidates for an object without active constraints, aimed at
    /// where later objects that reference it can go given what is placed.
    fn dependent_candidates(&self, x: usize, default_z: f64, basis: &mut Vec<usize>) -> Vec<Placement> {
        let spec = &self.scene.items[x];
        let half = crate::geometry::rotated_half_extents(spec.size, spec.yaw());
        let mut out = Vec::new();
        for (ci, c) in self.constraints.iter().enumerate() {
            if self.index_of[c.target.as_str()] != x {
                continue;
            }
            let s = self.index_of[c.source.as_str()];
            if self.placed[s].is_some() {
                continue;
            }
            let dependent = &self.scene.items[s];
            let s_half = crate::geometry::rotated_half_extents(dependent.size, dependent.yaw());
            let mut ws = Window::ALL;
            let mut focus: Option<Aabb> = None;
            let mut wide = false;
            for &di in &self.outgoing[s] {
                let d = &self.constraints[di];
                let t = self.index_of[d.target.as_str()];
                let Some((_, target)) = self.placed[t].as_ref().filter(|_| t != x) else {
                    continue;
                };
                wide |= d.relation == Relation::Far;
                basis.push(t);
                focus = Some(match focus {
                    Some(f) => Aabb::new(
                        crate::geometry::Vec3::new(f.min.x.min(target.aabb.min.x), f.min.y.min(target.aabb.min.y), 0.0),
                        crate::geometry::Vec3::new(f.max.x.max(target.aabb.max.x), f.max.y.max(target.aabb.max.y), 0.0),
                    ),
                    None => target.aabb,
                });
                if let Some(w) = candidates::relation_hint(d.relation, s_half, &target.aabb, self.th) {
                    let next = ws.intersect(&w);
                    if !next.is_empty() {
                        ws = next;
                    }
                }
            }
            let Some(focus) = focus else { continue };
            let reach = if wide {
                self.th.far_min + self.config.sampling_reach
            } else {
                self.config.sampling_reach
            };
            let around = Window {
                x: candidates::Interval::new(focus.min.x - reach, focus.max.x + reach),
                y: candidates::Interval::new(focus.min.y - reach, focus.max.y + reach),
            };
            let bounded = ws.intersect(&around);
            let ws = if bounded.is_empty() { around } else { bounded };
            let Some(region) = candidates::inverse_region(c.relation, half, &ws, s_half, self.th) else {
                continue;
            };
            let source = SourceInfo {
                spec,
                yaw: spec.yaw(),
                default_z,
                wide,
            };
            let seed = self
                .config
                .rng_seed
                .wrapping_mul(0x9e3779b97f4a7c15)
                .wrapping_add((x as u64) << 32)
                .wrapping_add((ci as u64) << 40);
            out.extend(candidates::sample_windows(
                &region,
                &ws,
                self.config.sampling_reach,
                &source,
                self.config.candidates_per_constraint,
                seed,
            ));
        }
        out
    }

    fn target_of(&self, c: &Constraint) -> (usize, &Posed) {
        let t = self.index_of[c.target.as_str()];
        (t, &self.placed[t].as_ref().expect("target placed").1)
    }
}

/// Specs for ids in the layout, paired with their placements.
pub fn placed_specs<'s>(scene: &'s Scene, layout: &'s Layout) -> impl Iterator<Item = (&'s ObjectSpec, &'s Placement)> {
    layout.iter().filter_map(move |p| scene.get(&p.id).map(|s| (s, p)))
}

/// Pairs of placed objects whose boxes interpenetrate.
pub fn colliding_pairs(scene: &Scene, layout: &Layout, tol: f64) -> Vec<(String, String)> {
    let boxes: Vec<(&str, Aabb)> = placed_specs(scene, layout)
        .filter_map(|(s, p)| p.aabb(s).ok().map(|b| (s.id.as_str(), b)))
        .collect();
    let mut out = Vec::new();
    for i in 0..boxes.len() {
        for j in i + 1..boxes.len() {
            if boxes_collide(&boxes[i].1, &boxes[j].1, tol) {
                out.push((boxes[i].0.to_string(), boxes[j].0.to_string()));
            }
        }
    }
    out
}
