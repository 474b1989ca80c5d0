//! Candidate pose generators.
//!
//! Each relation maps to an admissible region for the source's center,
//! expressed as a union of axis-aligned windows plus (for the distance
//! relations) a gap test. Candidates are drawn uniformly from the region,
//! the projection of the initial position is always offered, and the list
//! is ordered nearest-to-initial first.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::constraints::{relation_holds, Posed, Relation, Thresholds};
use crate::geometry::{aabb_from_pose, rotated_half_extents, yaw_toward, Aabb, Vec3};
use crate::layout::Placement;
use crate::scene::ObjectSpec;

use super::SolverConfig;

/// Inset applied to open or strict region bounds.
const MARGIN: f64 = 1e-6;
const REJECTION_FACTOR: usize = 24;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const ALL: Interval = Interval {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };

    pub fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    fn intersect(&self, other: &Interval) -> Interval {
        Interval::new(self.lo.max(other.lo), self.hi.min(other.hi))
    }

    fn is_empty(&self) -> bool {
        self.lo > self.hi
    }

    fn is_bounded(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }

    fn clamp(&self, v: f64) -> f64 {
        v.max(self.lo).min(self.hi)
    }
}

/// Axis-aligned window on the source's center.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Window {
    pub x: Interval,
    pub y: Interval,
}

impl Window {
    pub const ALL: Window = Window {
        x: Interval::ALL,
        y: Interval::ALL,
    };

    pub fn intersect(&self, other: &Window) -> Window {
        Window {
            x: self.x.intersect(&other.x),
            y: self.y.intersect(&other.y),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty() || self.y.is_empty()
    }

    fn is_bounded(&self) -> bool {
        self.x.is_bounded() && self.y.is_bounded()
    }

    fn area(&self) -> f64 {
        (self.x.hi - self.x.lo).max(0.0) * (self.y.hi - self.y.lo).max(0.0)
    }

    fn clamp(&self, x: f64, y: f64) -> (f64, f64) {
        (self.x.clamp(x), self.y.clamp(y))
    }
}

/// Admissible windows for the source center under one relation, given the
/// source's horizontal half extents. An empty vector means no position can
/// satisfy the relation.
pub fn relation_region(relation: Relation, half: (f64, f64), target: &Aabb, th: &Thresholds) -> Vec<Window> {
    let (hx, hy) = half;
    let buf = th.lateral_buffer;
    let left = Window {
        x: Interval::new(f64::NEG_INFINITY, target.min.x - buf - hx - MARGIN),
        y: Interval::ALL,
    };
    let right = Window {
        x: Interval::new(target.max.x + buf + hx + MARGIN, f64::INFINITY),
        y: Interval::ALL,
    };
    match relation {
        Relation::LeftOf => vec![left],
        Relation::RightOf => vec![right],
        Relation::SideOf => vec![left, right],
        Relation::InFrontOf => vec![Window {
            x: Interval::ALL,
            y: Interval::new(f64::NEG_INFINITY, target.min.y - buf - hy - MARGIN),
        }],
        Relation::Behind => vec![Window {
            x: Interval::ALL,
            y: Interval::new(target.max.y + buf + hy + MARGIN, f64::INFINITY),
        }],
        Relation::Near => {
            let reach = th.near_max - MARGIN;
            vec![Window {
                x: Interval::new(target.min.x - hx - reach, target.max.x + hx + reach),
                y: Interval::new(target.min.y - hy - reach, target.max.y + hy + reach),
            }]
        }
        Relation::On => {
            let x = collapse(Interval::new(target.min.x + hx, target.max.x - hx));
            let y = collapse(Interval::new(target.min.y + hy, target.max.y - hy));
            match (x, y) {
                (Some(x), Some(y)) => vec![Window { x, y }],
                _ => Vec::new(),
            }
        }
        Relation::Above => vec![Window {
            x: Interval::new(target.min.x - hx + MARGIN, target.max.x + hx - MARGIN),
            y: Interval::new(target.min.y - hy + MARGIN, target.max.y + hy - MARGIN),
        }],
        Relation::Far | Relation::FaceTo => vec![Window::ALL],
    }
}

// exact-fit containment leaves an interval that is empty only by rounding
fn collapse(iv: Interval) -> Option<Interval> {
    if iv.lo <= iv.hi {
        Some(iv)
    } else if iv.lo - iv.hi <= 1e-9 {
        let mid = 0.5 * (iv.lo + iv.hi);
        Some(Interval::new(mid, mid))
    } else {
        None
    }
}

/// Bounding window of a relation's region, used to focus sampling of a
/// different primary relation. `None` when the region is unbounded in a way
/// a single window cannot express.
pub fn relation_hint(relation: Relation, half: (f64, f64), target: &Aabb, th: &Thresholds) -> Option<Window> {
    match relation {
        Relation::SideOf | Relation::Far | Relation::FaceTo => None,
        _ => relation_region(relation, half, target, th).first().copied(),
    }
}

/// Everything a generator needs about the object being placed.
pub struct SourceInfo<'a> {
    pub spec: &'a ObjectSpec,
    /// Yaw used for extents and kept unless the relation aims the object.
    pub yaw: f64,
    /// Height of the center when the relation does not decide it.
    pub default_z: f64,
    /// Another active constraint needs a far gap, so unbounded windows
    /// must extend past it.
    pub wide: bool,
}

pub struct TargetInfo<'a> {
    pub spec: &'a ObjectSpec,
    pub posed: Posed,
}

/// Candidates on a grid around the initial position, initial position first.
pub fn gen_candidates_unconstrained(spec: &ObjectSpec, config: &SolverConfig) -> Vec<Placement> {
    let z = spec.ground_z();
    grid_around(spec, config, z, spec.yaw())
}

pub(crate) fn grid_around(spec: &ObjectSpec, config: &SolverConfig, z: f64, yaw: f64) -> Vec<Placement> {
    let origin = spec.position;
    let steps = if config.neighborhood_step > 0.0 && config.neighborhood_radius > 0.0 {
        (config.neighborhood_radius / config.neighborhood_step + 1e-9).floor() as i64
    } else {
        0
    };
    let mut offsets = Vec::with_capacity(((2 * steps + 1) * (2 * steps + 1)) as usize);
    for i in -steps..=steps {
        for j in -steps..=steps {
            offsets.push((i, j));
        }
    }
    offsets.sort_by_key(|&(i, j)| i * i + j * j);
    offsets
        .into_iter()
        .map(|(i, j)| {
            let pos = Vec3::new(
                origin.x + i as f64 * config.neighborhood_step,
                origin.y + j as f64 * config.neighborhood_step,
                z,
            );
            Placement::new(spec.id.clone(), pos, yaw)
        })
        .collect()
}

/// Candidates that satisfy `relation` against an already placed target.
///
/// Uses the spec's yaw, ground height for non-vertical relations, and a seed
/// derived from the configuration and the two ids.
pub fn gen_candidates_for(
    relation: Relation,
    source: &ObjectSpec,
    target: (&ObjectSpec, &Placement),
    config: &SolverConfig,
    th: &Thresholds,
) -> Vec<Placement> {
    let Ok(posed) = Posed::new(target.0, target.1) else {
        return Vec::new();
    };
    let info = SourceInfo {
        spec: source,
        yaw: source.yaw(),
        default_z: source.ground_z(),
        wide: false,
    };
    let seed = config.rng_seed ^ fnv(&source.id) ^ fnv(&target.0.id).rotate_left(17);
    generate(
        relation,
        &info,
        &TargetInfo { spec: target.0, posed },
        &Window::ALL,
        config.candidates_per_constraint,
        config,
        th,
        seed,
    )
}

fn fnv(s: &str) -> u64 {
    s.bytes().fold(0xcbf29ce484222325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100000001b3))
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn generate(
    relation: Relation,
    source: &SourceInfo<'_>,
    target: &TargetInfo<'_>,
    hint: &Window,
    limit: usize,
    config: &SolverConfig,
    th: &Thresholds,
    seed: u64,
) -> Vec<Placement> {
    if limit == 0 {
        return Vec::new();
    }
    let spec = source.spec;
    let half = rotated_half_extents(spec.size, source.yaw);
    let t = &target.posed.aabb;
    let z = match relation {
        Relation::On => t.max.z + spec.size.z * 0.5,
        Relation::Above => (t.max.z + th.above_min + MARGIN + spec.size.z * 0.5).max(spec.position.z),
        _ => source.default_z,
    };

    let region = relation_region(relation, half, t, th);
    if region.is_empty() {
        return Vec::new();
    }
    let windows: Vec<Window> = region
        .iter()
        .map(|w| {
            let focused = w.intersect(hint);
            let w = if focused.is_empty() { *w } else { focused };
            bound_window(&w, relation, half, source, target, config, th)
        })
        .filter(|w| !w.is_empty())
        .collect();
    if windows.is_empty() {
        return Vec::new();
    }

    let accepts = |x: f64, y: f64| -> Option<Placement> {
        let mut yaw = source.yaw;
        let pos = Vec3::new(x, y, z);
        if relation == Relation::FaceTo {
            yaw = yaw_toward(&pos, &target.posed.position)?;
        }
        let aabb = aabb_from_pose(spec.size, pos, yaw).ok()?;
        let ok = match relation {
            Relation::Near | Relation::Far => {
                relation_holds(relation, &Posed { aabb, position: pos, yaw }, &target.posed, th)
            }
            _ => true,
        };
        ok.then(|| Placement::new(spec.id.clone(), pos, yaw))
    };

    fill(&windows, spec.position, limit, seed, &accepts, &|p| repair(relation, p, target, &accepts))
}

/// Draws up to `limit` accepted points from the windows, the admissible
/// point nearest the initial position first, ordered nearest-first.
fn fill(
    windows: &[Window],
    initial: Vec3,
    limit: usize,
    seed: u64,
    accepts: &dyn Fn(f64, f64) -> Option<Placement>,
    repair: &dyn Fn((f64, f64)) -> Option<Placement>,
) -> Vec<Placement> {
    let mut out: Vec<Placement> = Vec::with_capacity(limit);
    let projected = windows
        .iter()
        .map(|w| w.clamp(initial.x, initial.y))
        .min_by(|a, b| {
            let da = (a.0 - initial.x).hypot(a.1 - initial.y);
            let db = (b.0 - initial.x).hypot(b.1 - initial.y);
            da.total_cmp(&db)
        })
        .expect("non-empty windows");
    if let Some(p) = accepts(projected.0, projected.1).or_else(|| repair(projected)) {
        out.push(p);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total_area: f64 = windows.iter().map(Window::area).sum();
    let mut attempts = 0;
    while out.len() < limit && attempts < limit * REJECTION_FACTOR {
        attempts += 1;
        let w = pick_window(windows, total_area, &mut rng);
        let x = sample(&mut rng, w.x);
        let y = sample(&mut rng, w.y);
        if let Some(p) = accepts(x, y) {
            out.push(p);
        }
    }

    out.sort_by(|a, b| {
        let da = a.position.planar_distance(&initial);
        let db = b.position.planar_distance(&initial);
        da.total_cmp(&db)
    });
    out.truncate(limit);
    out
}

/// Where an object may go so that a not yet placed `source`, whose center
/// is confined to `ws`, can still satisfy `relation` against it.
/// `None` when the relation gives no useful region.
pub(crate) fn inverse_region(
    relation: Relation,
    half: (f64, f64),
    ws: &Window,
    source_half: (f64, f64),
    th: &Thresholds,
) -> Option<Vec<Window>> {
    let (hx, hy) = half;
    let (sx, sy) = source_half;
    let buf = th.lateral_buffer;
    let grow = |dx: f64, dy: f64| Window {
        x: Interval::new(ws.x.lo - dx, ws.x.hi + dx),
        y: Interval::new(ws.y.lo - dy, ws.y.hi + dy),
    };
    let right = Window {
        x: Interval::new(ws.x.lo + sx + buf + hx + MARGIN, f64::INFINITY),
        y: Interval::ALL,
    };
    let left = Window {
        x: Interval::new(f64::NEG_INFINITY, ws.x.hi - sx - buf - hx - MARGIN),
        y: Interval::ALL,
    };
    let windows = match relation {
        Relation::LeftOf => vec![right],
        Relation::RightOf => vec![left],
        Relation::SideOf => vec![left, right],
        Relation::InFrontOf => vec![Window {
            x: Interval::ALL,
            y: Interval::new(ws.y.lo + sy + buf + hy + MARGIN, f64::INFINITY),
        }],
        Relation::Behind => vec![Window {
            x: Interval::ALL,
            y: Interval::new(f64::NEG_INFINITY, ws.y.hi - sy - buf - hy - MARGIN),
        }],
        Relation::Near => vec![grow(sx + hx + th.near_max, sy + hy + th.near_max)],
        Relation::On => vec![grow((hx - sx).max(0.0), (hy - sy).max(0.0))],
        Relation::Above => vec![grow(hx + sx, hy + sy)],
        Relation::Far | Relation::FaceTo => return None,
    };
    Some(windows)
}

/// Ground candidates for an unconstrained object drawn from `windows`,
/// with unbounded sides capped at `reach` around `focus`.
pub(crate) fn sample_windows(
    windows: &[Window],
    focus: &Window,
    reach: f64,
    source: &SourceInfo<'_>,
    limit: usize,
    seed: u64,
) -> Vec<Placement> {
    let cap = Window {
        x: Interval::new(focus.x.lo - reach, focus.x.hi + reach),
        y: Interval::new(focus.y.lo - reach, focus.y.hi + reach),
    };
    let windows: Vec<Window> = windows
        .iter()
        .map(|w| Window {
            x: if w.x.is_bounded() { w.x } else { cap_interval(w.x, cap.x, reach) },
            y: if w.y.is_bounded() { w.y } else { cap_interval(w.y, cap.y, reach) },
        })
        .filter(|w| !w.is_empty())
        .collect();
    if windows.is_empty() || limit == 0 {
        return Vec::new();
    }
    let spec = source.spec;
    let accepts = |x: f64, y: f64| Some(Placement::new(spec.id.clone(), Vec3::new(x, y, source.default_z), source.yaw));
    fill(&windows, spec.position, limit, seed, &accepts, &|_| None)
}

fn sample(rng: &mut ChaCha8Rng, iv: Interval) -> f64 {
    if iv.hi > iv.lo {
        rng.random_range(iv.lo..=iv.hi)
    } else {
        iv.lo
    }
}

fn pick_window<'w>(windows: &'w [Window], total_area: f64, rng: &mut ChaCha8Rng) -> &'w Window {
    if windows.len() == 1 || total_area <= 0.0 {
        return &windows[rng.random_range(0..windows.len())];
    }
    let mut r = rng.random_range(0.0..total_area);
    for w in windows {
        if r < w.area() {
            return w;
        }
        r -= w.area();
    }
    windows.last().expect("non-empty")
}

/// Caps the unbounded sides of a window so it can be sampled.
fn bound_window(
    w: &Window,
    relation: Relation,
    half: (f64, f64),
    source: &SourceInfo<'_>,
    target: &TargetInfo<'_>,
    config: &SolverConfig,
    th: &Thresholds,
) -> Window {
    if w.is_bounded() {
        return *w;
    }
    let t = &target.posed.aabb;
    let initial = source.spec.position;
    let reach = if relation == Relation::Far || source.wide {
        th.far_min + config.sampling_reach
    } else {
        config.sampling_reach
    };
    let around_target = Window {
        x: Interval::new(t.min.x - half.0 - reach, t.max.x + half.0 + reach),
        y: Interval::new(t.min.y - half.1 - reach, t.max.y + half.1 + reach),
    };
    let r = config.neighborhood_radius.max(config.neighborhood_step);
    let around_initial = Window {
        x: Interval::new(initial.x - r, initial.x + r),
        y: Interval::new(initial.y - r, initial.y + r),
    };
    let cap = if relation == Relation::FaceTo && !source.wide {
        around_initial
    } else {
        Window {
            x: Interval::new(
                around_target.x.lo.min(around_initial.x.lo),
                around_target.x.hi.max(around_initial.x.hi),
            ),
            y: Interval::new(
                around_target.y.lo.min(around_initial.y.lo),
                around_target.y.hi.max(around_initial.y.hi),
            ),
        }
    };
    Window {
        x: if w.x.is_bounded() { w.x } else { cap_interval(w.x, cap.x, reach) },
        y: if w.y.is_bounded() { w.y } else { cap_interval(w.y, cap.y, reach) },
    }
}

// keeps the finite side and extends at least `depth` past it
fn cap_interval(iv: Interval, cap: Interval, depth: f64) -> Interval {
    match (iv.lo.is_finite(), iv.hi.is_finite()) {
        (true, false) => Interval::new(iv.lo, cap.hi.max(iv.lo + depth)),
        (false, true) => Interval::new(cap.lo.min(iv.hi - depth), iv.hi),
        _ => cap,
    }
}

/// Moves a projected point that fails the gap test of `near`/`far` onto the
/// admissible side along the line through the target center.
fn repair(
    relation: Relation,
    point: (f64, f64),
    target: &TargetInfo<'_>,
    accepts: &dyn Fn(f64, f64) -> Option<Placement>,
) -> Option<Placement> {
    let c = target.posed.aabb.center();
    match relation {
        Relation::Near => {
            // inside-most end of the segment always passes
            let (mut lo, mut hi) = (0.0, 1.0);
            let at = |s: f64| (point.0 + (c.x - point.0) * s, point.1 + (c.y - point.1) * s);
            accepts(at(hi).0, at(hi).1)?;
            for _ in 0..48 {
                let mid = 0.5 * (lo + hi);
                if accepts(at(mid).0, at(mid).1).is_some() {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            accepts(at(hi).0, at(hi).1)
        }
        Relation::Far => {
            let (mut dx, mut dy) = (point.0 - c.x, point.1 - c.y);
            let len = dx.hypot(dy);
            if len < 1e-9 {
                (dx, dy) = (1.0, 0.0);
            } else {
                (dx, dy) = (dx / len, dy / len);
            }
            let at = |d: f64| (c.x + dx * d, c.y + dy * d);
            let (mut lo, mut hi) = (len, len.max(1.0));
            while accepts(at(hi).0, at(hi).1).is_none() {
                hi *= 2.0;
                if hi > 1e6 {
                    return None;
                }
            }
            for _ in 0..48 {
                let mid = 0.5 * (lo + hi);
                if accepts(at(mid).0, at(mid).1).is_some() {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            accepts(at(hi).0, at(hi).1)
        }
        _ => None,
    }
}
