//! Prompt templates for the remote generation and reasoning services.
//!
//! Templates live in `prompts/` and are rendered by substituting `{slot}`
//! markers in a single pass, so slot values are never re-expanded.

use crate::scene::Scene;

pub const REFERENCE_IMAGE: &str = include_str!("../prompts/reference_image.txt");
pub const SCENE_PARSE: &str = include_str!("../prompts/scene_parse.txt");
pub const OBJECT_IMAGE: &str = include_str!("../prompts/object_image.txt");
pub const PRUNE_SYSTEM: &str = include_str!("../prompts/prune_system.txt");
pub const PRUNE: &str = include_str!("../prompts/prune.txt");
pub const BACKGROUND: &str = include_str!("../prompts/background.txt");
pub const CONSTRAINTS_SYSTEM: &str = include_str!("../prompts/constraints_system.txt");
pub const CONSTRAINTS_USER: &str = include_str!("../prompts/constraints_user.txt");
pub const REGENERATE: &str = include_str!("../prompts/regenerate.txt");
pub const EDIT: &str = include_str!("../prompts/edit.txt");

/// JSON schema of the scene document the parse service must return.
pub const SCENE_SCHEMA: &str = include_str!("../prompts/scene_schema.json");
/// JSON schema of the prune response.
pub const IMAGE_LIST_SCHEMA: &str = include_str!("../prompts/image_list_schema.json");

/// Substitutes `{name}` markers. Unknown markers and other braces are kept.
pub fn render(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + slots.iter().map(|(_, v)| v.len()).sum::<usize>());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open + 1..];
        let hit = slots
            .iter()
            .find(|(name, _)| tail.starts_with(name) && tail[name.len()..].starts_with('}'));
        match hit {
            Some((name, value)) => {
                out.push_str(value);
                rest = &tail[name.len() + 1..];
            }
            None => {
                out.push('{');
                rest = tail;
            }
        }
    }
    out.push_str(rest);
    out
}

pub fn reference_image(description: &str, style: &str) -> String {
    render(REFERENCE_IMAGE, &[("description", description), ("style", style)])
}

pub fn scene_parse() -> String {
    render(SCENE_PARSE, &[("schema", SCENE_SCHEMA)])
}

pub fn object_image(obj_name: &str, style: &str) -> String {
    render(OBJECT_IMAGE, &[("obj_name", obj_name), ("style", style)])
}

/// Filenames are listed as a two-space indented JSON array.
pub fn prune(png_files: &[String]) -> String {
    let files = serde_json::to_string_pretty(png_files).expect("strings serialize");
    render(PRUNE, &[("png_files", &files), ("schema", IMAGE_LIST_SCHEMA)])
}

pub fn background() -> String {
    BACKGROUND.to_string()
}

pub fn constraints_user(description: &str, objects_text: &str) -> String {
    render(CONSTRAINTS_USER, &[("description", description), ("objects_text", objects_text)])
}

pub fn regenerate(description: &str, objects_text: &str, last_constraint_content: &str, edit_instructions: &str) -> String {
    render(
        REGENERATE,
        &[
            ("description", description),
            ("objects_text", objects_text),
            ("last_constraint_content", last_constraint_content),
            ("edit_instructions", edit_instructions),
        ],
    )
}

pub fn edit(objects_text: &str, feedback: &str) -> String {
    render(EDIT, &[("objects_text", objects_text), ("feedback", feedback)])
}

/// One roster line per object: `- <id>: <name> (<visual description>)`.
pub fn objects_text<'a>(roster: impl IntoIterator<Item = (&'a str, &'a str, &'a str)>) -> String {
    roster
        .into_iter()
        .map(|(id, name, description)| format!("- {id}: {name} ({description})"))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn scene_objects_text(scene: &Scene) -> String {
    objects_text(
        scene
            .items
            .iter()
            .map(|o| (o.id.as_str(), o.name.as_str(), o.visual_description.as_str())),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_is_single_pass() {
        let out = render("a {x} b {y} {z}", &[("x", "{y}"), ("y", "2")]);
        assert_eq!(out, "a {y} b 2 {z}");
    }

    #[test]
    fn json_braces_survive() {
        let out = constraints_user("d", "o");
        assert!(out.contains("  {\n    \"type\": \"relative\","));
        assert!(!out.contains("{{"));
    }

    #[test]
    fn schemas_are_json() {
        let v: serde_json::Value = serde_json::from_str(SCENE_SCHEMA).unwrap();
        assert_eq!(v["title"], "SceneData");
        let v: serde_json::Value = serde_json::from_str(IMAGE_LIST_SCHEMA).unwrap();
        assert_eq!(v["required"][0], "filenames");
    }
}
