use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::ClassLabel;
use crate::geometry::Pose2;
use crate::FORMAT_VERSION;

/// Confirmed long-term object. The pose is frozen at promotion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapObject {
    pub id: u64,
    pub class_label: ClassLabel,
    pub pose: Pose2,
    pub hit_count: u64,
    pub mean_score: f64,
    pub first_seen: f64,
    pub last_seen: f64,
}

const LEAF: usize = 32;
const BRANCH: usize = 32;

type Leaf = Arc<Vec<MapObject>>;
type Branch = Arc<Vec<Leaf>>;

/// Copy-on-write object sequence.
///
/// A shallow three-level tree of shared nodes: taking a snapshot clones one
/// pointer and a later update copies one path of small nodes.
#[derive(Debug, Clone, Default)]
pub struct ObjectList {
    root: Arc<Vec<Branch>>,
    len: usize,
}

impl ObjectList {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, slot: usize) -> Option<&MapObject> {
        if slot >= self.len {
            return None;
        }
        let leaf = slot / LEAF;
        Some(&self.root[leaf / BRANCH][leaf % BRANCH][slot % LEAF])
    }

    pub fn iter(&self) -> impl Iterator<Item = &MapObject> + '_ {
        self.root.iter().flat_map(|b| b.iter()).flat_map(|l| l.iter())
    }

    pub fn to_vec(&self) -> Vec<MapObject> {
        self.iter().copied().collect()
    }

    pub(crate) fn push(&mut self, obj: MapObject) {
        let root = Arc::make_mut(&mut self.root);
        if self.len % (LEAF * BRANCH) == 0 {
            root.push(Arc::new(Vec::with_capacity(BRANCH)));
        }
        let branch = Arc::make_mut(root.last_mut().unwrap());
        if self.len % LEAF == 0 {
            branch.push(Arc::new(Vec::with_capacity(LEAF)));
        }
        Arc::make_mut(branch.last_mut().unwrap()).push(obj);
        self.len += 1;
    }

    pub(crate) fn get_mut(&mut self, slot: usize) -> &mut MapObject {
        let leaf = slot / LEAF;
        let root = Arc::make_mut(&mut self.root);
        let branch = Arc::make_mut(&mut root[leaf / BRANCH]);
        &mut Arc::make_mut(&mut branch[leaf % BRANCH])[slot % LEAF]
    }
}

impl PartialEq for ObjectList {
    fn eq(&self, other: &Self) -> bool {
        self.len == other.len && self.iter().eq(other.iter())
    }
}

impl FromIterator<MapObject> for ObjectList {
    fn from_iter<I: IntoIterator<Item = MapObject>>(iter: I) -> Self {
        let mut list = ObjectList::default();
        for obj in iter {
            list.push(obj);
        }
        list
    }
}

/// Published set of confirmed objects. Detached from the engine state.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObjectMapSnapshot {
    pub stamp: f64,
    pub objects: ObjectList,
}

/// Wire form of one object, as served to planners.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub id: u64,
    pub class: String,
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub hits: u64,
    pub mean_score: f64,
}

impl From<&MapObject> for ObjectRecord {
    fn from(o: &MapObject) -> Self {
        Self {
            id: o.id,
            class: o.class_label.to_string(),
            x: o.pose.x,
            y: o.pose.y,
            yaw: o.pose.yaw,
            hits: o.hit_count,
            mean_score: o.mean_score,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotDocument {
    pub format_version: u32,
    pub t: f64,
    pub objects: Vec<ObjectRecord>,
}

impl ObjectMapSnapshot {
    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &MapObject> + '_ {
        self.objects.iter()
    }

    pub fn count_class(&self, class: &str) -> usize {
        self.iter().filter(|o| &*o.class_label == class).count()
    }

    /// Nearest object of `class` to `(x, y)`, ties to the lowest id.
    pub fn nearest(&self, class: &str, x: f64, y: f64) -> Option<&MapObject> {
        self.iter()
            .filter(|o| &*o.class_label == class)
            .map(|o| (super::distance(x, y, o.pose.x, o.pose.y), o))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.id.cmp(&b.1.id)))
            .map(|(_, o)| o)
    }

    pub fn to_document(&self) -> SnapshotDocument {
        SnapshotDocument {
            format_version: FORMAT_VERSION,
            t: self.stamp,
            objects: self.iter().map(ObjectRecord::from).collect(),
        }
    }

    /// Rebuilds a snapshot from its wire form. First and last sighting times
    /// are not part of the wire form and are set to the document stamp.
    pub fn from_document(doc: &SnapshotDocument) -> Self {
        let objects = doc
            .objects
            .iter()
            .map(|r| MapObject {
                id: r.id,
                class_label: r.class.as_str().into(),
                pose: Pose2::new(r.x, r.y, r.yaw),
                hit_count: r.hits,
                mean_score: r.mean_score,
                first_seen: doc.t,
                last_seen: doc.t,
            })
            .collect();
        Self { stamp: doc.t, objects }
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("snapshot serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        Ok(Self::from_document(&serde_json::from_str(text)?))
    }
}
