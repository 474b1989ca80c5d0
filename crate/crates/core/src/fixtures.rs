//! Bundled bedroom scene and its constraint set, used by the mock pipeline,
//! the CLI and tests.

pub const BEDROOM_SCENE: &str = include_str!("../fixtures/bedroom_scene.json");
pub const BEDROOM_CONSTRAINTS: &str = include_str!("../fixtures/bedroom_constraints.json");

pub fn bedroom_scene() -> crate::scene::Scene {
    crate::scene::parse_scene(BEDROOM_SCENE).expect("bundled scene parses")
}

pub fn bedroom_constraints() -> Vec<crate::constraints::Constraint> {
    crate::constraints::parse_constraints(BEDROOM_CONSTRAINTS).expect("bundled constraints parse")
}
