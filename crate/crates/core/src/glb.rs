//! Minimal binary glTF support: a writer for box meshes and scene assembly,
//! and extent measurement for generated assets.
//!
//! glTF is Y-up. The scene frame (x right, y backward, z up) maps to glTF
//! as `(x, y, z) -> (x, z, -y)`, a proper rotation, so a yaw about scene +Z
//! is the same angle about glTF +Y.

use serde_json::{json, Value};

use crate::scene::AssetDims;

pub type Mat4 = [[f64; 4]; 4];

pub const IDENTITY: Mat4 = [
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0],
    [0.0, 0.0, 1.0, 0.0],
    [0.0, 0.0, 0.0, 1.0],
];

/// Column-major product `a * b`.
pub fn mat_mul(a: &Mat4, b: &Mat4) -> Mat4 {
    let mut out = [[0.0; 4]; 4];
    for (c, col) in out.iter_mut().enumerate() {
        for (r, cell) in col.iter_mut().enumerate() {
            *cell = (0..4).map(|k| a[k][r] * b[c][k]).sum();
        }
    }
    out
}

pub fn transform_point(m: &Mat4, p: [f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (r, v) in out.iter_mut().enumerate() {
        *v = m[0][r] * p[0] + m[1][r] * p[1] + m[2][r] * p[2] + m[3][r];
    }
    out
}

/// Scene-frame point to glTF axes.
pub fn to_gltf(p: [f64; 3]) -> [f64; 3] {
    [p[0], p[2], -p[1]]
}

/// Quaternion (x, y, z, w) for a scene yaw in degrees.
pub fn yaw_quaternion(yaw_deg: f64) -> [f64; 4] {
    let h = yaw_deg.to_radians() / 2.0;
    [0.0, h.sin(), 0.0, h.cos()]
}

#[derive(Clone, Debug, Default)]
pub struct MeshData {
    pub positions: Vec<[f32; 3]>,
    pub normals: Vec<[f32; 3]>,
    pub uvs: Vec<[f32; 2]>,
    pub indices: Vec<u32>,
}

/// Axis-aligned box centered at the origin; `size` is in glTF axes.
pub fn box_mesh(size: [f64; 3]) -> MeshData {
    let h = [size[0] as f32 / 2.0, size[1] as f32 / 2.0, size[2] as f32 / 2.0];
    let mut mesh = MeshData::default();
    // one quad per face so normals stay flat
    for axis in 0..3 {
        for sign in [-1.0f32, 1.0] {
            let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
            let base = mesh.positions.len() as u32;
            for (a, b) in [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)] {
                let mut p = [0.0f32; 3];
                p[axis] = sign * h[axis];
                p[u] = a * h[u];
                p[v] = b * h[v];
                let mut n = [0.0f32; 3];
                n[axis] = sign;
                mesh.positions.push(p);
                mesh.normals.push(n);
                mesh.uvs.push([(a + 1.0) / 2.0, (b + 1.0) / 2.0]);
            }
            let quad = if sign > 0.0 { [0, 1, 2, 0, 2, 3] } else { [0, 2, 1, 0, 3, 2] };
            mesh.indices.extend(quad.iter().map(|i| base + i));
        }
    }
    mesh
}

/// Square ground plane at glTF y = 0 with tiled texture coordinates.
pub fn plane_mesh(center: [f64; 2], half: f64, tiles: f64) -> MeshData {
    let (cx, cz) = (center[0] as f32, center[1] as f32);
    let (h, t) = (half as f32, tiles as f32);
    MeshData {
        positions: vec![[cx - h, 0.0, cz - h], [cx + h, 0.0, cz - h], [cx + h, 0.0, cz + h], [cx - h, 0.0, cz + h]],
        normals: vec![[0.0, 1.0, 0.0]; 4],
        uvs: vec![[0.0, 0.0], [t, 0.0], [t, t], [0.0, t]],
        indices: vec![0, 2, 1, 0, 3, 2],
    }
}

#[derive(Clone, Debug)]
pub struct Node {
    pub name: String,
    pub mesh: Option<usize>,
    pub translation: [f64; 3],
    pub rotation: [f64; 4],
    pub scale: [f64; 3],
    pub children: Vec<usize>,
}

impl Node {
    pub fn new(name: impl Into<String>) -> Self {
        Node {
            name: name.into(),
            mesh: None,
            translation: [0.0; 3],
            rotation: [0.0, 0.0, 0.0, 1.0],
            scale: [1.0; 3],
            children: Vec::new(),
        }
    }
}

#[derive(Default)]
pub struct GlbBuilder {
    bin: Vec<u8>,
    views: Vec<Value>,
    accessors: Vec<Value>,
    meshes: Vec<Value>,
    materials: Vec<Value>,
    images: Vec<Value>,
    textures: Vec<Value>,
    nodes: Vec<Value>,
    roots: Vec<usize>,
}

impl GlbBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn push_view(&mut self, bytes: &[u8], target: Option<u32>) -> usize {
        while !self.bin.len().is_multiple_of(4) {
            self.bin.push(0);
        }
        let offset = self.bin.len();
        self.bin.extend_from_slice(bytes);
        let mut view = json!({"buffer": 0, "byteOffset": offset, "byteLength": bytes.len()});
        if let Some(t) = target {
            view["target"] = json!(t);
        }
        self.views.push(view);
        self.views.len() - 1
    }

    fn push_floats<const N: usize>(&mut self, data: &[[f32; N]], kind: &str, bounds: bool) -> usize {
        let bytes: Vec<u8> = data.iter().flatten().flat_map(|v| v.to_le_bytes()).collect();
        let view = self.push_view(&bytes, Some(34962));
        let mut acc = json!({"bufferView": view, "componentType": 5126, "count": data.len(), "type": kind});
        if bounds && !data.is_empty() {
            let mut lo = [f32::INFINITY; N];
            let mut hi = [f32::NEG_INFINITY; N];
            for p in data {
                for k in 0..N {
                    lo[k] = lo[k].min(p[k]);
                    hi[k] = hi[k].max(p[k]);
                }
            }
            acc["min"] = json!(lo.to_vec());
            acc["max"] = json!(hi.to_vec());
        }
        self.accessors.push(acc);
        self.accessors.len() - 1
    }

    pub fn add_material(&mut self, name: &str, base_color: [f64; 4], texture_png: Option<&[u8]>) -> usize {
        let mut pbr = json!({"baseColorFactor": base_color, "metallicFactor": 0.0, "roughnessFactor": 0.9});
        if let Some(png) = texture_png {
            let view = self.push_view(png, None);
            self.images.push(json!({"bufferView": view, "mimeType": "image/png"}));
            self.textures.push(json!({"source": self.images.len() - 1, "sampler": 0}));
            pbr["baseColorTexture"] = json!({"index": self.textures.len() - 1});
        }
        self.materials.push(json!({"name": name, "pbrMetallicRoughness": pbr}));
        self.materials.len() - 1
    }

    pub fn add_mesh(&mut self, name: &str, mesh: &MeshData, material: Option<usize>) -> usize {
        let position = self.push_floats(&mesh.positions, "VEC3", true);
        let mut attributes = json!({"POSITION": position});
        if mesh.normals.len() == mesh.positions.len() {
            attributes["NORMAL"] = json!(self.push_floats(&mesh.normals, "VEC3", false));
        }
        if mesh.uvs.len() == mesh.positions.len() {
            attributes["TEXCOORD_0"] = json!(self.push_floats(&mesh.uvs, "VEC2", false));
        }
        let bytes: Vec<u8> = mesh.indices.iter().flat_map(|i| i.to_le_bytes()).collect();
        let view = self.push_view(&bytes, Some(34963));
        self.accessors
            .push(json!({"bufferView": view, "componentType": 5125, "count": mesh.indices.len(), "type": "SCALAR"}));
        let mut primitive = json!({"attributes": attributes, "indices": self.accessors.len() - 1, "mode": 4});
        if let Some(m) = material {
            primitive["material"] = json!(m);
        }
        self.meshes.push(json!({"name": name, "primitives": [primitive]}));
        self.meshes.len() - 1
    }

    pub fn add_node(&mut self, node: Node) -> usize {
        let mut v = json!({
            "name": node.name,
            "translation": node.translation,
            "rotation": node.rotation,
            "scale": node.scale,
        });
        if let Some(m) = node.mesh {
            v["mesh"] = json!(m);
        }
        if !node.children.is_empty() {
            v["children"] = json!(node.children);
        }
        self.nodes.push(v);
        self.nodes.len() - 1
    }

    pub fn add_root(&mut self, node: usize) {
        self.roots.push(node);
    }

    pub fn finish(mut self) -> Vec<u8> {
        while !self.bin.len().is_multiple_of(4) {
            self.bin.push(0);
        }
        let mut doc = json!({
            "asset": {"version": "2.0", "generator": "sceneforge"},
            "scene": 0,
            "scenes": [{"nodes": self.roots}],
            "nodes": self.nodes,
            "meshes": self.meshes,
            "accessors": self.accessors,
            "bufferViews": self.views,
            "buffers": [{"byteLength": self.bin.len()}],
        });
        if !self.materials.is_empty() {
            doc["materials"] = json!(self.materials);
        }
        if !self.images.is_empty() {
            doc["images"] = json!(self.images);
            doc["textures"] = json!(self.textures);
            doc["samplers"] = json!([{"wrapS": 10497, "wrapT": 10497}]);
        }
        let mut text = serde_json::to_vec(&doc).expect("gltf json serializes");
        while !text.len().is_multiple_of(4) {
            text.push(b' ');
        }
        let total = 12 + 8 + text.len() + 8 + self.bin.len();
        let mut out = Vec::with_capacity(total);
        out.extend_from_slice(b"glTF");
        out.extend_from_slice(&2u32.to_le_bytes());
        out.extend_from_slice(&(total as u32).to_le_bytes());
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(b"JSON");
        out.extend_from_slice(&text);
        out.extend_from_slice(&(self.bin.len() as u32).to_le_bytes());
        out.extend_from_slice(b"BIN\0");
        out.extend_from_slice(&self.bin);
        out
    }
}

/// Single box asset with glTF-axis size `(x, height, depth)` for a scene
/// size `(x, y, z)`.
pub fn box_asset(size: AssetDims) -> Vec<u8> {
    let mut b = GlbBuilder::new();
    let material = b.add_material("box", [0.8, 0.8, 0.8, 1.0], None);
    let mesh = b.add_mesh("box", &box_mesh([size.x, size.z, size.y]), Some(material));
    let mut node = Node::new("box");
    node.mesh = Some(mesh);
    let n = b.add_node(node);
    b.add_root(n);
    b.finish()
}

/// Triangles of every mesh in the default scene, in world glTF axes.
pub struct Geometry {
    pub primitives: Vec<MeshData>,
}

fn node_matrix(node: &gltf::Node<'_>) -> Mat4 {
    let m = node.transform().matrix();
    let mut out = [[0.0; 4]; 4];
    for c in 0..4 {
        for r in 0..4 {
            out[c][r] = m[c][r] as f64;
        }
    }
    out
}

/// Reads every mesh primitive reachable from the default scene with node
/// transforms applied. Files without scenes contribute their meshes as is.
pub fn read_geometry(bytes: &[u8]) -> Result<Geometry, String> {
    let gltf = gltf::Gltf::from_slice(bytes).map_err(|e| format!("unreadable GLB: {e}"))?;
    let blob = gltf.blob.as_deref();
    let mut primitives = Vec::new();
    let mut visit_mesh = |mesh: gltf::Mesh<'_>, world: &Mat4| -> Result<(), String> {
        for prim in mesh.primitives() {
            let reader = prim.reader(|buffer| match buffer.source() {
                gltf::buffer::Source::Bin => blob,
                gltf::buffer::Source::Uri(_) => None,
            });
            let Some(positions) = reader.read_positions() else {
                continue;
            };
            let positions: Vec<[f32; 3]> = positions
                .map(|p| {
                    let w = transform_point(world, [p[0] as f64, p[1] as f64, p[2] as f64]);
                    [w[0] as f32, w[1] as f32, w[2] as f32]
                })
                .collect();
            let indices: Vec<u32> = match reader.read_indices() {
                Some(ix) => ix.into_u32().collect(),
                None => (0..positions.len() as u32).collect(),
            };
            if indices.iter().any(|&i| i as usize >= positions.len()) {
                return Err("index out of range".into());
            }
            primitives.push(MeshData {
                positions,
                indices,
                ..Default::default()
            });
        }
        Ok(())
    };
    let scene = gltf.default_scene().or_else(|| gltf.scenes().next());
    match scene {
        Some(scene) => {
            let mut stack: Vec<(gltf::Node<'_>, Mat4)> = scene.nodes().map(|n| (n, IDENTITY)).collect();
            while let Some((node, parent)) = stack.pop() {
                let world = mat_mul(&parent, &node_matrix(&node));
                if let Some(mesh) = node.mesh() {
                    visit_mesh(mesh, &world)?;
                }
                stack.extend(node.children().map(|c| (c, world)));
            }
        }
        None => {
            for mesh in gltf.meshes() {
                visit_mesh(mesh, &IDENTITY)?;
            }
        }
    }
    Ok(Geometry { primitives })
}

/// Axis-aligned bounds `(min, max)` of all vertices, glTF axes.
pub fn bounds(geometry: &Geometry) -> Option<([f64; 3], [f64; 3])> {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    let mut any = false;
    for p in geometry.primitives.iter().flat_map(|m| &m.positions) {
        any = true;
        for k in 0..3 {
            lo[k] = lo[k].min(p[k] as f64);
            hi[k] = hi[k].max(p[k] as f64);
        }
    }
    any.then_some((lo, hi))
}

/// Extents of a GLB asset in the scene frame (width, depth, height).
pub fn measure_glb(bytes: &[u8]) -> Result<AssetDims, String> {
    let geometry = read_geometry(bytes)?;
    let (lo, hi) = bounds(&geometry).ok_or("asset has no vertices")?;
    Ok(AssetDims {
        x: hi[0] - lo[0],
        y: hi[2] - lo[2],
        z: hi[1] - lo[1],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn box_asset_measures_back() {
        let glb = box_asset(AssetDims { x: 0.8, y: 0.9, z: 0.6 });
        let d = measure_glb(&glb).unwrap();
        assert_abs_diff_eq!(d.x, 0.8, epsilon = 1e-6);
        assert_abs_diff_eq!(d.y, 0.9, epsilon = 1e-6);
        assert_abs_diff_eq!(d.z, 0.6, epsilon = 1e-6);
    }

    #[test]
    fn node_transforms_apply() {
        let mut b = GlbBuilder::new();
        let mesh = b.add_mesh("m", &box_mesh([1.0, 1.0, 1.0]), None);
        let mut child = Node::new("child");
        child.mesh = Some(mesh);
        child.scale = [2.0, 1.0, 1.0];
        let child = b.add_node(child);
        let mut parent = Node::new("parent");
        // quarter turn about +Y swaps x and z extents
        parent.rotation = yaw_quaternion(90.0);
        parent.translation = [5.0, 0.0, 0.0];
        parent.children = vec![child];
        let parent = b.add_node(parent);
        b.add_root(parent);
        let g = read_geometry(&b.finish()).unwrap();
        let (lo, hi) = bounds(&g).unwrap();
        assert_abs_diff_eq!(hi[0] - lo[0], 1.0, epsilon = 1e-5);
        assert_abs_diff_eq!(hi[2] - lo[2], 2.0, epsilon = 1e-5);
        assert_abs_diff_eq!((hi[0] + lo[0]) / 2.0, 5.0, epsilon = 1e-5);
    }

    #[test]
    fn yaw_maps_like_scene_rotation() {
        // scene forward at yaw 90 is +x; in glTF axes the -y scene axis is +z
        let q = yaw_quaternion(90.0);
        let (x, y, z, w) = (q[0], q[1], q[2], q[3]);
        let v = to_gltf([0.0, -1.0, 0.0]);
        // rotate v by q
        let t = [2.0 * (y * v[2] - z * v[1]), 2.0 * (z * v[0] - x * v[2]), 2.0 * (x * v[1] - y * v[0])];
        let r = [
            v[0] + w * t[0] + (y * t[2] - z * t[1]),
            v[1] + w * t[1] + (z * t[0] - x * t[2]),
            v[2] + w * t[2] + (x * t[1] - y * t[0]),
        ];
        let expect = to_gltf([1.0, 0.0, 0.0]);
        for k in 0..3 {
            assert_abs_diff_eq!(r[k], expect[k], epsilon = 1e-12);
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(measure_glb(b"not a glb").is_err());
    }
}
