use sceneforge::prompts;
use serde_json::Value;

fn golden(name: &str) -> String {
    std::fs::read_to_string(format!("{}/tests/golden/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

fn slots() -> Value {
    serde_json::from_str(&golden("slots.json")).unwrap()
}

fn slot(name: &str) -> String {
    slots()[name].as_str().unwrap().to_string()
}

#[test]
fn reference_image_prompt() {
    let out = prompts::reference_image(&slot("description"), &slot("style"));
    assert_eq!(out, golden("reference_image.txt"));
    assert!(out.contains("Render in realistic style"));
}

#[test]
fn scene_parse_instruction() {
    assert_eq!(prompts::scene_parse(), golden("scene_parse.txt"));
    assert_eq!(prompts::SCENE_SCHEMA, golden("scene_schema.json"));
}

#[test]
fn object_image_prompt() {
    let out = prompts::object_image(&slot("obj_name"), &slot("style"));
    assert_eq!(out, golden("object_image.txt"));
    assert!(out.contains("front-view King Bed"));
}

#[test]
fn prune_prompts() {
    let files: Vec<String> = serde_json::from_value(slots()["png_files"].clone()).unwrap();
    assert_eq!(prompts::prune(&files), golden("prune.txt"));
    assert_eq!(prompts::PRUNE_SYSTEM, golden("prune_system.txt"));
    assert_eq!(prompts::IMAGE_LIST_SCHEMA, golden("image_list_schema.json"));
}

#[test]
fn background_prompt() {
    assert_eq!(prompts::background(), golden("background.txt"));
}

#[test]
fn constraint_prompts() {
    assert_eq!(prompts::CONSTRAINTS_SYSTEM, golden("constraints_system.txt"));
    let out = prompts::constraints_user(&slot("description"), &slot("objects_text"));
    assert_eq!(out, golden("constraints_user.txt"));
}

#[test]
fn regenerate_prompt() {
    let out = prompts::regenerate(
        &slot("description"),
        &slot("objects_text"),
        &slot("last_constraint_content"),
        &slot("edit_instructions"),
    );
    assert_eq!(out, golden("regenerate.txt"));
}

#[test]
fn edit_prompt() {
    assert_eq!(prompts::edit(&slot("objects_text"), &slot("feedback")), golden("edit.txt"));
}

#[test]
fn roster_text_format() {
    let text = prompts::objects_text([
        ("bed1", "King Bed", "a wooden king bed with white linen"),
        ("lamp_left", "Table Lamp", "a small lamp with a linen shade"),
    ]);
    assert_eq!(text, slot("objects_text"));
}
