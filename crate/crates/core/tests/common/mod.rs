//! Test-only brute-force oracle with its own box arithmetic.
#![allow(dead_code)]

use std::collections::HashMap;

use sceneforge::{Constraint, Relation, Scene};

pub const STEP: f64 = 0.25;
pub const EXTENT: f64 = 7.0;
pub const YAW_BINS: [f64; 8] = [0.0, 45.0, 90.0, 135.0, 180.0, 225.0, 270.0, 315.0];
const TOL: f64 = 0.001;
const EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct Bx {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

pub fn bx(size: [f64; 3], p: Pose) -> Bx {
    let r = p.yaw.to_radians();
    let (mut s, mut c) = r.sin_cos();
    // exact quarter turns
    let q = p.yaw.rem_euclid(90.0);
    if q.abs() < 1e-12 || (90.0 - q).abs() < 1e-12 {
        s = s.round();
        c = c.round();
    }
    let hx = c.abs() * size[0] / 2.0 + s.abs() * size[1] / 2.0;
    let hy = s.abs() * size[0] / 2.0 + c.abs() * size[1] / 2.0;
    let hz = size[2] / 2.0;
    Bx {
        lo: [p.x - hx, p.y - hy, p.z - hz],
        hi: [p.x + hx, p.y + hy, p.z + hz],
    }
}

pub fn collide(a: &Bx, b: &Bx) -> bool {
    (0..3).all(|k| a.hi[k].min(b.hi[k]) - a.lo[k].max(b.lo[k]) > TOL)
}

fn gap(a: &Bx, b: &Bx) -> f64 {
    let dx = (a.lo[0] - b.hi[0]).max(b.lo[0] - a.hi[0]).max(0.0);
    let dy = (a.lo[1] - b.hi[1]).max(b.lo[1] - a.hi[1]).max(0.0);
    dx.hypot(dy)
}

/// Relation check written straight from the definitions.
pub fn holds(rel: Relation, s: &Bx, sp: Pose, t: &Bx, tp: Pose) -> bool {
    match rel {
        Relation::LeftOf => s.hi[0] <= t.lo[0] - 0.1 + EPS,
        Relation::RightOf => s.lo[0] >= t.hi[0] + 0.1 - EPS,
        Relation::InFrontOf => s.hi[1] <= t.lo[1] - 0.1 + EPS,
        Relation::Behind => s.lo[1] >= t.hi[1] + 0.1 - EPS,
        Relation::SideOf => {
            holds(Relation::LeftOf, s, sp, t, tp) || holds(Relation::RightOf, s, sp, t, tp)
        }
        Relation::Near => gap(s, t) <= 2.0 + EPS,
        Relation::Far => gap(s, t) > 8.0 + EPS,
        Relation::On => {
            (s.lo[2] - t.hi[2]).abs() < 0.002
                && s.lo[0] >= t.lo[0] - EPS
                && s.hi[0] <= t.hi[0] + EPS
                && s.lo[1] >= t.lo[1] - EPS
                && s.hi[1] <= t.hi[1] + EPS
        }
        Relation::Above => {
            let ox = s.hi[0].min(t.hi[0]) - s.lo[0].max(t.lo[0]);
            let oy = s.hi[1].min(t.hi[1]) - s.lo[1].max(t.lo[1]);
            s.lo[2] >= t.hi[2] + 2.0 - EPS && ox > 0.0 && oy > 0.0
        }
        Relation::FaceTo => {
            let (dx, dy) = (tp.x - sp.x, tp.y - sp.y);
            let len = dx.hypot(dy);
            if len < 1e-12 {
                return false;
            }
            let r = sp.yaw.to_radians();
            let (fx, fy) = (r.sin(), -r.cos());
            let cos = ((fx * dx + fy * dy) / len).clamp(-1.0, 1.0);
            cos.acos().to_degrees() <= 10.0 + 1e-7
        }
    }
}

pub enum OracleResult {
    Feasible(HashMap<String, Pose>),
    Infeasible,
    Undecided,
}

struct Search<'a> {
    order: Vec<usize>,
    sizes: Vec<[f64; 3]>,
    ids: Vec<String>,
    options: Vec<Vec<Pose>>,
    incoming: Vec<Vec<(Relation, usize)>>,
    vertical: Vec<Option<(Relation, usize)>>,
    placed: Vec<Option<(Pose, Bx)>>,
    nodes: u64,
    budget: u64,
    _scene: &'a Scene,
}

/// Outcome of a subtree: solved, out of budget, or failed with the set of
/// depths (bitmask) responsible.
enum Step {
    Solved,
    Budget,
    Conflict(u128),
}

impl Search<'_> {
    // conflict-directed backjumping: a dead end jumps back to the deepest
    // object that took part in a rejection
    fn dfs(&mut self, depth: usize) -> Step {
        if depth == self.order.len() {
            return Step::Solved;
        }
        let i = self.order[depth];
        let depth_of = |j: usize, order: &[usize]| order.iter().position(|&o| o == j).expect("ordered");
        let z = match self.vertical[i] {
            Some((Relation::On, t)) => self.placed[t].unwrap().1.hi[2] + self.sizes[i][2] / 2.0,
            Some((_, t)) => self.placed[t].unwrap().1.hi[2] + 2.0 + self.sizes[i][2] / 2.0,
            None => self.sizes[i][2] / 2.0,
        };
        let mut conflict = 0u128;
        if let Some((_, t)) = self.vertical[i] {
            conflict |= 1 << depth_of(t, &self.order);
        }
        for k in 0..self.options[i].len() {
            self.nodes += 1;
            if self.nodes > self.budget {
                return Step::Budget;
            }
            let mut p = self.options[i][k];
            p.z = z;
            let b = bx(self.sizes[i], p);
            let failed = self.incoming[i].iter().find(|&&(rel, t)| {
                let (tp, tb) = self.placed[t].unwrap();
                !holds(rel, &b, p, &tb, tp)
            });
            if let Some(&(_, t)) = failed {
                conflict |= 1 << depth_of(t, &self.order);
                continue;
            }
            let hit = (0..self.placed.len()).find(|&j| self.placed[j].is_some_and(|(_, o)| collide(&b, &o)));
            if let Some(j) = hit {
                conflict |= 1 << depth_of(j, &self.order);
                continue;
            }
            self.placed[i] = Some((p, b));
            match self.dfs(depth + 1) {
                Step::Solved => return Step::Solved,
                Step::Budget => return Step::Budget,
                Step::Conflict(c) if c & (1 << depth) == 0 => {
                    self.placed[i] = None;
                    return Step::Conflict(c);
                }
                Step::Conflict(c) => conflict |= c & !(1 << depth),
            }
            self.placed[i] = None;
        }
        Step::Conflict(conflict)
    }
}

/// Exhaustive search over a 0.25 m grid. Yaw is the initial yaw, plus the
/// eight 45 degree bins for face-to sources.
pub fn grid_oracle(scene: &Scene, constraints: &[Constraint], budget: u64) -> OracleResult {
    let n = scene.items.len();
    let index: HashMap<&str, usize> = scene.items.iter().enumerate().map(|(i, o)| (o.id.as_str(), i)).collect();
    let mut incoming = vec![Vec::new(); n];
    let mut vertical = vec![None; n];
    let mut faces = vec![false; n];
    for c in constraints {
        let (s, t) = (index[c.source.as_str()], index[c.target.as_str()]);
        incoming[s].push((c.relation, t));
        if matches!(c.relation, Relation::On | Relation::Above) {
            vertical[s] = Some((c.relation, t));
        }
        if c.relation == Relation::FaceTo {
            faces[s] = true;
        }
    }
    // targets before sources
    let mut order = Vec::new();
    let mut done = vec![false; n];
    while order.len() < n {
        let next = (0..n).find(|&i| !done[i] && incoming[i].iter().all(|&(_, t)| done[t]));
        let Some(i) = next else { return OracleResult::Infeasible };
        done[i] = true;
        order.push(i);
    }
    let cells = (EXTENT / STEP).round() as i64;
    let options = scene
        .items
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let mut yaws = vec![o.rotation.z];
            if faces[i] {
                yaws.extend(YAW_BINS.iter().filter(|y| (**y - o.rotation.z).abs() > 1e-9));
            }
            let mut pts = Vec::new();
            for gx in -cells..=cells {
                for gy in -cells..=cells {
                    let (x, y) = (gx as f64 * STEP, gy as f64 * STEP);
                    let d = (x - o.position.x).hypot(y - o.position.y);
                    for &yaw in &yaws {
                        pts.push((d, Pose { x, y, z: 0.0, yaw }));
                    }
                }
            }
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            pts.into_iter().map(|(_, p)| p).collect()
        })
        .collect();
    let mut search = Search {
        order,
        sizes: scene.items.iter().map(|o| [o.size.x, o.size.y, o.size.z]).collect(),
        ids: scene.items.iter().map(|o| o.id.clone()).collect(),
        options,
        incoming,
        vertical,
        placed: vec![None; n],
        nodes: 0,
        budget,
        _scene: scene,
    };
    assert!(n <= 128, "oracle handles at most 128 objects");
    match search.dfs(0) {
        Step::Solved => OracleResult::Feasible(
            search
                .ids
                .iter()
                .cloned()
                .zip(search.placed.iter().map(|p| p.unwrap().0))
                .collect(),
        ),
        Step::Conflict(_) => OracleResult::Infeasible,
        Step::Budget => OracleResult::Undecided,
    }
}
