use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::GeometryError;
use crate::geometry::{aabb_from_pose, Aabb, Vec3};
use crate::scene::ObjectSpec;

/// Resolved pose of one object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub id: String,
    pub position: Vec3,
    /// Degrees about +z.
    pub yaw: f64,
}

impl Placement {
    pub fn new(id: impl Into<String>, position: Vec3, yaw: f64) -> Self {
        Placement {
            id: id.into(),
            position,
            yaw,
        }
    }

    /// The pose an object starts from before any search.
    pub fn initial(spec: &ObjectSpec) -> Self {
        Placement::new(spec.id.clone(), spec.position, spec.yaw())
    }

    pub fn aabb(&self, spec: &ObjectSpec) -> Result<Aabb, GeometryError> {
        aabb_from_pose(spec.size, self.position, self.yaw)
    }
}

/// Placed objects keyed by id. Ordered so that serialization is stable.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Layout {
    pub placements: BTreeMap<String, Placement>,
}

impl Layout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, placement: Placement) -> Option<Placement> {
        self.placements.insert(placement.id.clone(), placement)
    }

    pub fn remove(&mut self, id: &str) -> Option<Placement> {
        self.placements.remove(id)
    }

    pub fn get(&self, id: &str) -> Option<&Placement> {
        self.placements.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.placements.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.placements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.placements.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Placement> {
        self.placements.values()
    }

    /// Layout with every object at the pose given in the scene document.
    pub fn from_initial(scene: &crate::scene::Scene) -> Self {
        let mut layout = Layout::new();
        for spec in &scene.items {
            layout.insert(Placement::initial(spec));
        }
        layout
    }
}

/// Number of successfully placed objects.
pub fn score(layout: &Layout) -> usize {
    layout.len()
}

impl FromIterator<Placement> for Layout {
    fn from_iter<T: IntoIterator<Item = Placement>>(iter: T) -> Self {
        let mut layout = Layout::new();
        for p in iter {
            layout.insert(p);
        }
        layout
    }
}
