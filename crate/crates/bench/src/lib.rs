//! Inputs shared by the benchmarks.

use sceneforge::corpus::{planted_instance, planted_scene, CorpusParams, Instance};

/// `count` satisfiable instances with the given object and constraint ranges.
pub fn planted(count: u64, objects: usize, constraints: usize) -> Vec<Instance> {
    let params = CorpusParams {
        objects: objects..=objects,
        constraints: constraints..=constraints,
        ..CorpusParams::default()
    };
    (0..count).map(|seed| planted_instance(seed, &params)).collect()
}

/// The 20-object, 25-constraint scene used for the end-to-end timing.
pub fn large_scene() -> Instance {
    planted_scene(7, 20, 25)
}
