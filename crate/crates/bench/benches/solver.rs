use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use sceneforge::constraints::{eval_all, Thresholds};
use sceneforge::fixtures::{bedroom_constraints, bedroom_scene};
use sceneforge::geometry::{aabb_from_pose, boxes_collide, Vec3};
use sceneforge::solver::{solve, SolverConfig};
use sceneforge_bench::{large_scene, planted};

fn predicates(c: &mut Criterion) {
    let scene = bedroom_scene();
    let constraints = bedroom_constraints();
    let th = Thresholds::default();
    let layout = solve(&scene, &constraints, &SolverConfig::default(), &th).unwrap().layout;
    c.bench_function("eval_all/bedroom", |b| {
        b.iter(|| eval_all(black_box(&constraints), &layout, &scene, &th))
    });

    let a = aabb_from_pose(Vec3::new(1.2, 0.8, 0.9), Vec3::new(0.0, 0.0, 0.45), 30.0).unwrap();
    let boxes: Vec<_> = (0..64)
        .map(|i| {
            let t = i as f64 * 0.1;
            aabb_from_pose(Vec3::new(0.5, 0.5, 0.5), Vec3::new(t.cos() * 2.0, t.sin() * 2.0, 0.25), t * 10.0).unwrap()
        })
        .collect();
    c.bench_function("boxes_collide/64", |b| {
        b.iter(|| boxes.iter().filter(|o| boxes_collide(black_box(&a), o, 0.001)).count())
    });
}

fn solver(c: &mut Criterion) {
    let th = Thresholds::default();
    let config = SolverConfig::default();
    let scene = bedroom_scene();
    let constraints = bedroom_constraints();
    c.bench_function("solve/bedroom", |b| b.iter(|| solve(black_box(&scene), &constraints, &config, &th).unwrap()));

    let mut group = c.benchmark_group("solve/planted");
    group.sample_size(20);
    for objects in [3usize, 5, 8] {
        let instances = planted(8, objects, objects);
        group.bench_with_input(BenchmarkId::from_parameter(objects), &instances, |b, instances| {
            b.iter(|| {
                for inst in instances {
                    black_box(solve(&inst.scene, &inst.constraints, &config, &th).unwrap());
                }
            })
        });
    }
    group.finish();

    let large = large_scene();
    let mut group = c.benchmark_group("solve/large");
    group.sample_size(10);
    group.bench_function("20x25", |b| b.iter(|| solve(&large.scene, &large.constraints, &config, &th).unwrap()));
    group.finish();
}

criterion_group!(benches, predicates, solver);
criterion_main!(benches);
