use serde::{Deserialize, Serialize};

use super::GroundTruth;
use crate::semantic_layer::{distance, ObjectMapSnapshot};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub true_positives: usize,
    pub duplicates: usize,
    pub false_objects: usize,
    /// Mean distance of matched objects to their truth; absent with no matches.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mean_position_error: Option<f64>,
}

/// Greedy closest-first matching of map objects to same-class truth. An
/// unmatched object within `match_radius` of an already matched truth is a
/// duplicate, anything else unmatched is a false object.
pub fn score_run(snapshot: &ObjectMapSnapshot, truth: &GroundTruth, match_radius: f64) -> RunMetrics {
    let objects: Vec<_> = snapshot.iter().collect();
    let mut pairs = Vec::new();
    for (oi, o) in objects.iter().enumerate() {
        for (ti, t) in truth.objects.iter().enumerate() {
            if *o.class_label != *t.class {
                continue;
            }
            let d = distance(o.pose.x, o.pose.y, t.x, t.y);
            if d <= match_radius {
                pairs.push((d, o.id, ti, oi));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut object_used = vec![false; objects.len()];
    let mut truth_used = vec![false; truth.objects.len()];
    let mut error_sum = 0.0;
    let mut tp = 0;
    for &(d, _, ti, oi) in &pairs {
        if object_used[oi] || truth_used[ti] {
            continue;
        }
        object_used[oi] = true;
        truth_used[ti] = true;
        error_sum += d;
        tp += 1;
    }
    let mut duplicates = 0;
    for (oi, used) in object_used.iter().enumerate() {
        if *used {
            continue;
        }
        if pairs.iter().any(|&(_, _, ti, o)| o == oi && truth_used[ti]) {
            duplicates += 1;
        }
    }
    RunMetrics {
        true_positives: tp,
        duplicates,
        false_objects: objects.len() - tp - duplicates,
        mean_position_error: (tp > 0).then(|| error_sum / tp as f64),
    }
}
