//! Seeded random layout problems for benchmarks and property tests.
//!
//! [`planted_instance`] first builds a collision-free layout on a 0.25 m
//! grid, then samples constraints that hold in it and perturbs the initial
//! positions, so the problem is satisfiable by construction.
//! [`random_instance`] draws constraints without regard to feasibility.

use std::ops::RangeInclusive;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::constraints::{relation_holds, Constraint, ConstraintKind, Posed, Relation, Thresholds};
use crate::geometry::{boxes_collide, Vec3};
use crate::layout::{Layout, Placement};
use crate::scene::{ObjectSpec, Scene};

pub const GRID_STEP: f64 = 0.25;

#[derive(Clone, Debug)]
pub struct CorpusParams {
    pub objects: RangeInclusive<usize>,
    pub constraints: RangeInclusive<usize>,
    /// Planted positions lie in `[-room_half, room_half]^2`.
    pub room_half: f64,
    /// Standard deviation of the xy noise added to initial positions.
    pub initial_noise: f64,
}

impl Default for CorpusParams {
    fn default() -> Self {
        CorpusParams {
            objects: 2..=5,
            constraints: 1..=6,
            room_half: 5.0,
            initial_noise: 0.6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Instance {
    pub seed: u64,
    pub scene: Scene,
    pub constraints: Vec<Constraint>,
    /// The layout the constraints were sampled from, when there is one.
    pub planted: Option<Layout>,
}

const NAMES: [&str; 12] = [
    "table", "chair", "lamp", "shelf", "crate", "plant", "bench", "stool", "vase", "desk", "cabinet", "statue",
];

fn snap(v: f64) -> f64 {
    (v / GRID_STEP).round() * GRID_STEP
}

fn random_size(rng: &mut ChaCha8Rng, small: bool) -> Vec3 {
    let q = |v: f64| (v * 20.0).round() / 20.0;
    if small {
        Vec3::new(q(rng.random_range(0.15..0.5)), q(rng.random_range(0.15..0.5)), q(rng.random_range(0.15..0.5)))
    } else {
        Vec3::new(q(rng.random_range(0.4..1.6)), q(rng.random_range(0.4..1.6)), q(rng.random_range(0.4..1.2)))
    }
}

fn spec(index: usize, size: Vec3, position: Vec3, yaw: f64) -> ObjectSpec {
    let name = NAMES[index % NAMES.len()];
    ObjectSpec {
        id: format!("{name}{index}"),
        name: name.to_string(),
        position,
        rotation: Vec3::new(0.0, 0.0, yaw),
        size,
        visual_description: format!("a plain {name}"),
        asset_ref: None,
    }
}

fn posed(spec: &ObjectSpec, p: &Placement) -> Posed {
    Posed::new(spec, p).expect("valid generated pose")
}

/// A satisfiable instance built around a planted grid layout.
pub fn planted_instance(seed: u64, params: &CorpusParams) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let th = Thresholds::default();
    let n = rng.random_range(params.objects.clone());
    let cells = (params.room_half / GRID_STEP) as i64;

    let mut specs: Vec<ObjectSpec> = Vec::with_capacity(n);
    let mut layout: Vec<Placement> = Vec::with_capacity(n);
    let mut stacked_on: Vec<Option<(usize, Relation)>> = Vec::with_capacity(n);

    for i in 0..n {
        let stacked = stacked_on.iter().filter(|s| s.is_some()).count();
        let stack = i > 0 && stacked < *params.constraints.end() && rng.random_bool(0.3);
        let size = random_size(&mut rng, stack);
        let mut chosen = None;
        for _ in 0..200 {
            let yaw = [0.0, 90.0, 180.0, 270.0][rng.random_range(0..4)];
            let (position, support) = if stack {
                let t = rng.random_range(0..i);
                let relation = if rng.random_bool(0.85) { Relation::On } else { Relation::Above };
                let tb = posed(&specs[t], &layout[t]).aabb;
                let c = tb.center();
                let z = match relation {
                    Relation::On => tb.max.z + size.z / 2.0,
                    _ => tb.max.z + th.above_min + size.z / 2.0,
                };
                (Vec3::new(snap(c.x), snap(c.y), z), Some((t, relation)))
            } else {
                let x = rng.random_range(-cells..=cells) as f64 * GRID_STEP;
                let y = rng.random_range(-cells..=cells) as f64 * GRID_STEP;
                (Vec3::new(x, y, size.z / 2.0), None)
            };
            let s = spec(i, size, position, yaw);
            let p = Placement::initial(&s);
            let b = posed(&s, &p);
            if let Some((t, relation)) = support {
                if !relation_holds(relation, &b, &posed(&specs[t], &layout[t]), &th) {
                    continue;
                }
            }
            let clear = specs
                .iter()
                .zip(&layout)
                .all(|(o, q)| !boxes_collide(&b.aabb, &posed(o, q).aabb, 0.001));
            if clear {
                chosen = Some((s, p, support));
                break;
            }
        }
        let Some((s, p, support)) = chosen else { break };
        specs.push(s);
        layout.push(p);
        stacked_on.push(support);
    }
    let n = specs.len();

    // candidate relations that hold in the planted layout, source after target
    let mut forced = Vec::new();
    let mut optional = Vec::new();
    for s in 0..n {
        if let Some((t, relation)) = stacked_on[s] {
            forced.push(Constraint::new(relation, specs[s].id.clone(), specs[t].id.clone()));
        }
        for t in 0..s {
            for relation in Relation::ALL {
                if relation.kind() == ConstraintKind::Vertical {
                    continue;
                }
                let ps = posed(&specs[s], &layout[s]);
                let pt = posed(&specs[t], &layout[t]);
                if relation_holds(relation, &ps, &pt, &th) {
                    optional.push(Constraint::new(relation, specs[s].id.clone(), specs[t].id.clone()));
                }
            }
        }
    }
    optional.shuffle(&mut rng);
    // stacked objects always keep their vertical constraint
    let budget = rng.random_range(params.constraints.clone()).max(forced.len());
    let mut constraints = forced;
    for c in optional {
        if constraints.len() >= budget {
            break;
        }
        if !constraints.contains(&c) {
            constraints.push(c);
        }
    }

    let noise = Normal::new(0.0, params.initial_noise.max(1e-12)).expect("valid sigma");
    let planted: Layout = layout.iter().cloned().collect();
    let mut items: Vec<ObjectSpec> = specs
        .into_iter()
        .map(|mut s| {
            if params.initial_noise > 0.0 {
                s.position.x += noise.sample(&mut rng);
                s.position.y += noise.sample(&mut rng);
            }
            s
        })
        .collect();
    items.shuffle(&mut rng);

    Instance {
        seed,
        scene: Scene {
            description: format!("planted instance {seed}"),
            style: "plain".into(),
            items,
            ..Default::default()
        },
        constraints: crate::constraints::normalize(&constraints),
        planted: Some(planted),
    }
}

/// An instance with arbitrary acyclic constraints; may be infeasible.
pub fn random_instance(seed: u64, params: &CorpusParams) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(params.objects.clone());
    let half = params.room_half;
    let items: Vec<ObjectSpec> = (0..n)
        .map(|i| {
            let small = rng.random_bool(0.25);
            let size = random_size(&mut rng, small);
            let yaw = [0.0, 90.0, 180.0, 270.0, 45.0][rng.random_range(0..5)];
            let position = Vec3::new(rng.random_range(-half..half), rng.random_range(-half..half), size.z / 2.0);
            spec(i, size, position, yaw)
        })
        .collect();
    let k = rng.random_range(params.constraints.clone());
    let mut constraints = Vec::new();
    let mut vertical_sources = Vec::new();
    if n >= 2 {
        for _ in 0..k {
            let s = rng.random_range(1..n);
            let t = rng.random_range(0..s);
            let relation = Relation::ALL[rng.random_range(0..Relation::ALL.len())];
            if relation.kind() == ConstraintKind::Vertical {
                if vertical_sources.contains(&s) {
                    continue;
                }
                vertical_sources.push(s);
            }
            constraints.push(Constraint::new(relation, items[s].id.clone(), items[t].id.clone()));
        }
    }
    Instance {
        seed,
        scene: Scene {
            description: format!("random instance {seed}"),
            style: "plain".into(),
            items,
            ..Default::default()
        },
        constraints: crate::constraints::normalize(&constraints),
        planted: None,
    }
}

/// A larger planted scene, e.g. 20 objects with 25 constraints.
pub fn planted_scene(seed: u64, objects: usize, constraints: usize) -> Instance {
    let params = CorpusParams {
        objects: objects..=objects,
        constraints: constraints..=constraints,
        room_half: 6.0,
        initial_noise: 0.5,
    };
    planted_instance(seed, &params)
}

/// Layout with every object at its initial pose.
pub fn initial_layout(scene: &Scene) -> Layout {
    Layout::from_initial(scene)
}
