//! The scene document: object specs plus scene-level metadata.
//!
//! The on-disk shape is a JSON object with an `items` array. Each item
//! carries `id`, `name`, `position`, `rotation`, `size` and
//! `visual_description`; `asset_ref` and the top-level `description`,
//! `style`, `background_ref` and `reference_image` fields are optional.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::SceneError;
use crate::geometry::Vec3;

/// Recommended bounds for each size component, in meters.
pub const SIZE_RANGE: (f64, f64) = (0.1, 5.0);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub id: String,
    pub name: String,
    pub position: Vec3,
    /// Euler angles in degrees. Only `z` (yaw) takes part in layout.
    pub rotation: Vec3,
    pub size: Vec3,
    pub visual_description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub asset_ref: Option<String>,
}

impl ObjectSpec {
    pub fn yaw(&self) -> f64 {
        self.rotation.z
    }

    /// Height of the center when resting on the ground plane.
    pub fn ground_z(&self) -> f64 {
        self.size.z * 0.5
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub style: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_image: Option<String>,
    pub items: Vec<ObjectSpec>,
}

impl Scene {
    pub fn get(&self, id: &str) -> Option<&ObjectSpec> {
        self.items.iter().find(|item| item.id == id)
    }

    pub fn get_mut(&mut self, id: &str) -> Option<&mut ObjectSpec> {
        self.items.iter_mut().find(|item| item.id == id)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.items.iter().position(|item| item.id == id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index_of(id).is_some()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(|item| item.id.as_str())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serializes")
    }

    /// Writes a rescaled copy of `id` back into the document.
    pub fn apply_measured_dims(&mut self, id: &str, measured: AssetDims) -> Result<&ObjectSpec, SceneError> {
        let spec = self.get_mut(id).ok_or_else(|| SceneError::UnknownId(id.to_string()))?;
        *spec = rescale_spec_dims(spec, measured)?;
        Ok(spec)
    }
}

/// Measured extents of a generated mesh.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssetDims {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

pub fn parse_scene(document: &str) -> Result<Scene, SceneError> {
    let root: Value = serde_json::from_str(document)?;
    let obj = root.as_object().ok_or(SceneError::NotAScene)?;
    let items = obj.get("items").and_then(Value::as_array).ok_or(SceneError::NotAScene)?;

    let mut parsed = Vec::with_capacity(items.len());
    let mut seen = HashSet::new();
    for (index, raw) in items.iter().enumerate() {
        let id = raw.get("id").and_then(Value::as_str).map(str::to_string);
        let item: ObjectSpec = serde_json::from_value(raw.clone()).map_err(|e| SceneError::InvalidItem {
            index,
            id: id.clone(),
            message: e.to_string(),
        })?;
        if item.id.trim().is_empty() {
            return Err(SceneError::InvalidItem {
                index,
                id,
                message: "id must be non-empty".into(),
            });
        }
        if !seen.insert(item.id.clone()) {
            return Err(SceneError::DuplicateId(item.id));
        }
        parsed.push(item);
    }

    let text = |key: &str| obj.get(key).and_then(Value::as_str).map(str::to_string);
    Ok(Scene {
        description: text("description").unwrap_or_default(),
        style: text("style").unwrap_or_default(),
        background_ref: text("background_ref"),
        reference_image: text("reference_image"),
        items: parsed,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticKind {
    SizeOutOfRange,
    NonFinitePose,
    EmptyDescription,
    MissingAsset,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub item: String,
    pub kind: DiagnosticKind,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.item, self.message)
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ValidationOptions {
    pub require_assets: bool,
}

pub fn validate_scene(scene: &Scene) -> Vec<Diagnostic> {
    validate_scene_with(scene, ValidationOptions::default())
}

pub fn validate_scene_with(scene: &Scene, options: ValidationOptions) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let (lo, hi) = SIZE_RANGE;
    for item in &scene.items {
        let mut push = |kind, message: String| {
            out.push(Diagnostic {
                item: item.id.clone(),
                kind,
                message,
            })
        };
        for (axis, v) in [("x", item.size.x), ("y", item.size.y), ("z", item.size.z)] {
            if !(lo..=hi).contains(&v) {
                push(
                    DiagnosticKind::SizeOutOfRange,
                    format!("size.{axis} = {v} outside recommended range [{lo}, {hi}] m"),
                );
            }
        }
        if !item.position.is_finite() || !item.rotation.is_finite() {
            push(DiagnosticKind::NonFinitePose, "position or rotation is not finite".into());
        }
        if item.visual_description.trim().is_empty() {
            push(DiagnosticKind::EmptyDescription, "visual_description is empty".into());
        }
        if options.require_assets && item.asset_ref.is_none() {
            push(DiagnosticKind::MissingAsset, "no generated asset".into());
        }
    }
    out
}

/// Rescales the horizontal size to the mesh's proportions, keeping the
/// spec's height as the reference.
pub fn rescale_spec_dims(spec: &ObjectSpec, measured: AssetDims) -> Result<ObjectSpec, SceneError> {
    let invalid = |message: &str| SceneError::InvalidAsset {
        id: spec.id.clone(),
        message: message.to_string(),
    };
    if !(measured.z > 0.0 && measured.z.is_finite()) {
        return Err(invalid("measured height must be positive"));
    }
    if !(measured.x > 0.0 && measured.y > 0.0) {
        return Err(invalid("measured extents must be positive"));
    }
    if !(spec.size.z > 0.0) {
        return Err(invalid("spec height must be positive"));
    }
    let scale = spec.size.z / measured.z;
    let mut out = spec.clone();
    out.size = Vec3::new(measured.x * scale, measured.y * scale, spec.size.z);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use approx::assert_abs_diff_eq;

    fn spec(size: Vec3) -> ObjectSpec {
        ObjectSpec {
            id: "a".into(),
            name: "A".into(),
            position: Vec3::new(0.0, 0.0, size.z / 2.0),
            rotation: Vec3::ZERO,
            size,
            visual_description: "a thing".into(),
            asset_ref: None,
        }
    }

    #[test]
    fn parses_bedroom_document() {
        let scene = parse_scene(fixtures::BEDROOM_SCENE).unwrap();
        let ids: Vec<_> = scene.ids().collect();
        assert_eq!(&ids[..3], &["bed1", "nightstand_right", "lamp_left"]);
        assert_eq!(scene.items.len(), 8);
        assert_eq!(scene.get("bed1").unwrap().size, Vec3::new(1.92, 1.94, 1.2));
        assert_eq!(scene.get("bed1").unwrap().name, "King Bed");
        assert!(validate_scene(&scene).is_empty());
    }

    #[test]
    fn empty_items_is_valid() {
        let scene = parse_scene(r#"{"items": []}"#).unwrap();
        assert!(scene.items.is_empty());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let item = r#"{"id":"bed1","name":"b","position":{"x":0,"y":0,"z":0},"rotation":{"x":0,"y":0,"z":0},"size":{"x":1,"y":1,"z":1},"visual_description":"d"}"#;
        let doc = format!(r#"{{"items":[{item},{item}]}}"#);
        assert!(matches!(parse_scene(&doc), Err(SceneError::DuplicateId(id)) if id == "bed1"));
    }

    #[test]
    fn missing_field_names_item() {
        let doc = r#"{"items":[{"id":"chair","name":"c","position":{"x":0,"y":0,"z":0},"size":{"x":1,"y":1,"z":1},"visual_description":"d"}]}"#;
        let err = parse_scene(doc).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("chair") && msg.contains("rotation"), "{msg}");
        assert!(matches!(parse_scene("{not json"), Err(SceneError::Json(_))));
        assert!(matches!(parse_scene("[]"), Err(SceneError::NotAScene)));
    }

    #[test]
    fn unknown_fields_ignored() {
        let doc = r#"{"extra": 1, "items":[{"id":"c","name":"c","position":{"x":0,"y":0,"z":0},"rotation":{"x":0,"y":0,"z":0},"size":{"x":1,"y":1,"z":1},"visual_description":"d","color":"red"}]}"#;
        assert_eq!(parse_scene(doc).unwrap().items.len(), 1);
    }

    #[test]
    fn size_diagnostics() {
        let mut scene = Scene {
            items: vec![spec(Vec3::new(0.05, 1.0, 1.0))],
            ..Default::default()
        };
        let d = validate_scene(&scene);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].kind, DiagnosticKind::SizeOutOfRange);

        scene.items[0].size = Vec3::new(1.0, 1.0, 7.0);
        assert_eq!(validate_scene(&scene).len(), 1);

        let d = validate_scene_with(&scene, ValidationOptions { require_assets: true });
        assert!(d.iter().any(|d| d.kind == DiagnosticKind::MissingAsset));
    }

    #[test]
    fn rescale_examples() {
        let out = rescale_spec_dims(&spec(Vec3::new(1.0, 1.0, 1.2)), AssetDims { x: 0.8, y: 0.9, z: 0.6 }).unwrap();
        assert_abs_diff_eq!(out.size.x, 1.6, epsilon = 1e-12);
        assert_abs_diff_eq!(out.size.y, 1.8, epsilon = 1e-12);
        assert_eq!(out.size.z, 1.2);

        let s = spec(Vec3::new(0.7, 0.4, 0.9));
        let out = rescale_spec_dims(&s, AssetDims { x: 0.7, y: 0.4, z: 0.9 }).unwrap();
        assert_eq!(out, s);

        let out = rescale_spec_dims(&spec(Vec3::new(1.0, 1.0, 0.6)), AssetDims { x: 1.0, y: 2.0, z: 3.0 }).unwrap();
        assert_abs_diff_eq!(out.size.x, 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(out.size.y, 0.4, epsilon = 1e-12);
        assert_eq!(out.size.z, 0.6);

        let err = rescale_spec_dims(&s, AssetDims { x: 1.0, y: 1.0, z: 0.0 });
        assert!(matches!(err, Err(SceneError::InvalidAsset { .. })));
    }

    #[test]
    fn rescale_written_back() {
        let mut scene = parse_scene(fixtures::BEDROOM_SCENE).unwrap();
        let before = scene.get("lamp_left").unwrap().clone();
        scene.apply_measured_dims("lamp_left", AssetDims { x: 0.2, y: 0.2, z: 0.3 }).unwrap();
        let after = scene.get("lamp_left").unwrap();
        assert_eq!(after.size.z, before.size.z);
        assert_abs_diff_eq!(after.size.x, 0.4, epsilon = 1e-12);
        assert_eq!(after.position, before.position);
    }
}
