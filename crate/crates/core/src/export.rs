//! Scene export: the canonical JSON document with final poses, and a GLB
//! container assembling the item meshes over a ground plane.

use std::fs;
use std::path::Path;

use log::warn;

use crate::error::ExportError;
use crate::glb::{self, box_mesh, plane_mesh, to_gltf, yaw_quaternion, GlbBuilder, MeshData, Node};
use crate::layout::Layout;
use crate::scene::Scene;

/// Ground tiles are this many meters wide.
const TILE: f64 = 2.0;
const GROUND_MARGIN: f64 = 1.0;

/// The scene document with every placed item's position and yaw replaced by
/// its placement. Items without a placement keep their document pose.
pub fn export_scene(scene: &Scene, layout: &Layout) -> Result<Scene, ExportError> {
    if layout.is_empty() {
        return Err(ExportError::EmptyLayout);
    }
    let mut out = scene.clone();
    for spec in &mut out.items {
        match layout.get(&spec.id) {
            Some(p) => {
                spec.position = p.position;
                spec.rotation.z = p.yaw;
            }
            None => warn!("{} has no placement; exported at its document pose", spec.id),
        }
    }
    Ok(out)
}

pub fn export_json(scene: &Scene, layout: &Layout) -> Result<String, ExportError> {
    Ok(export_scene(scene, layout)?.to_json())
}

#[derive(Debug, Default)]
pub struct GlbExport {
    pub bytes: Vec<u8>,
    /// Items drawn as boxes because their asset was missing or unreadable.
    pub placeholders: Vec<String>,
    pub warnings: Vec<String>,
}

fn merged(geometry: glb::Geometry) -> MeshData {
    let mut out = MeshData::default();
    for prim in geometry.primitives {
        let base = out.positions.len() as u32;
        out.positions.extend(prim.positions);
        out.indices.extend(prim.indices.into_iter().map(|i| i + base));
    }
    out
}

/// Loads an asset and fits it to `size` (glTF axes) around the origin.
fn fitted_asset(path: &Path, size: [f64; 3]) -> Result<(MeshData, [f64; 3]), String> {
    let bytes = fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let geometry = glb::read_geometry(&bytes)?;
    let (lo, hi) = glb::bounds(&geometry).ok_or("asset has no vertices")?;
    let mut mesh = merged(geometry);
    let center = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0, (lo[2] + hi[2]) / 2.0];
    for p in &mut mesh.positions {
        for k in 0..3 {
            p[k] -= center[k] as f32;
        }
    }
    let mut scale = [1.0; 3];
    for k in 0..3 {
        let extent = hi[k] - lo[k];
        if extent > 1e-9 {
            scale[k] = size[k] / extent;
        }
    }
    Ok((mesh, scale))
}

/// Assembles placed items with their final transforms. Asset paths are
/// resolved against `root`; items whose asset cannot be used get a box of
/// their spec size instead. The ground is textured with the scene's
/// background image when present.
pub fn export_glb(scene: &Scene, layout: &Layout, root: &Path) -> Result<GlbExport, ExportError> {
    let scene = export_scene(scene, layout)?;
    let mut out = GlbExport::default();
    let mut b = GlbBuilder::new();
    let plain = b.add_material("object", [0.78, 0.78, 0.78, 1.0], None);
    let placeholder = b.add_material("placeholder", [0.9, 0.45, 0.2, 1.0], None);

    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for spec in scene.items.iter().filter(|s| layout.contains(&s.id)) {
        let size = [spec.size.x, spec.size.z, spec.size.y];
        let r = 0.5 * spec.size.x.hypot(spec.size.y);
        lo = [lo[0].min(spec.position.x - r), lo[1].min(spec.position.y - r)];
        hi = [hi[0].max(spec.position.x + r), hi[1].max(spec.position.y + r)];

        let asset = spec.asset_ref.as_ref().map(|a| fitted_asset(&root.join(a), size));
        let (mesh, scale, material) = match asset {
            Some(Ok((mesh, scale))) => (mesh, scale, plain),
            other => {
                let why = match other {
                    Some(Err(e)) => e,
                    _ => "no asset".to_string(),
                };
                let message = format!("{}: placeholder box ({why})", spec.id);
                warn!("{message}");
                out.warnings.push(message);
                out.placeholders.push(spec.id.clone());
                (box_mesh(size), [1.0; 3], placeholder)
            }
        };
        let mesh = b.add_mesh(&spec.id, &mesh, Some(material));
        let mut geometry = Node::new(format!("{}_mesh", spec.id));
        geometry.mesh = Some(mesh);
        geometry.scale = scale;
        let child = b.add_node(geometry);
        let mut item = Node::new(spec.id.clone());
        item.translation = to_gltf([spec.position.x, spec.position.y, spec.position.z]);
        item.rotation = yaw_quaternion(spec.rotation.z);
        item.children.push(child);
        let n = b.add_node(item);
        b.add_root(n);
    }

    let texture = match &scene.background_ref {
        Some(bg) => match fs::read(root.join(bg)) {
            Ok(png) => Some(png),
            Err(e) => {
                let message = format!("background {bg}: {e}; ground left untextured");
                warn!("{message}");
                out.warnings.push(message);
                None
            }
        },
        None => None,
    };
    let center = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
    let half = ((hi[0] - lo[0]).max(hi[1] - lo[1]) / 2.0 + GROUND_MARGIN).max(TILE);
    let ground_material = b.add_material("ground", [1.0, 1.0, 1.0, 1.0], texture.as_deref());
    // plane_mesh takes glTF (x, z); scene y maps to -z
    let plane = plane_mesh([center[0], -center[1]], half, 2.0 * half / TILE);
    let ground_mesh = b.add_mesh("ground", &plane, Some(ground_material));
    let mut ground = Node::new("ground");
    ground.mesh = Some(ground_mesh);
    let g = b.add_node(ground);
    b.add_root(g);

    out.bytes = b.finish();
    Ok(out)
}
