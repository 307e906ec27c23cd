//! Uniform grid hash over `(class, cell)` buckets for fixed-radius nearest
//! neighbor queries.

use rustc_hash::FxHashMap;

#[derive(Debug, Clone, Copy)]
struct Entry {
    x: f64,
    y: f64,
    id: u64,
    slot: usize,
}

#[derive(Debug, Clone)]
pub struct SpatialHash {
    cell: f64,
    buckets: FxHashMap<(u32, i64, i64), Vec<Entry>>,
}

impl SpatialHash {
    pub fn new(cell: f64) -> Self {
        assert!(cell > 0.0 && cell.is_finite(), "cell size must be positive");
        Self { cell, buckets: FxHashMap::default() }
    }

    pub fn cell_size(&self) -> f64 {
        self.cell
    }

    fn cell_of(&self, v: f64) -> i64 {
        // inline floor; the libm call shows up in profiles
        let q = v / self.cell;
        let i = q as i64;
        if (i as f64) > q {
            i - 1
        } else {
            i
        }
    }

    pub fn insert(&mut self, class: u32, x: f64, y: f64, id: u64, slot: usize) {
        let key = (class, self.cell_of(x), self.cell_of(y));
        self.buckets.entry(key).or_default().push(Entry { x, y, id, slot });
    }

    pub fn len(&self) -> usize {
        self.buckets.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.buckets.is_empty()
    }

    /// Nearest entry of `class` within `radius` (inclusive) of `(x, y)`.
    /// Equal distances resolve to the lowest id. Returns `(slot, distance)`.
    pub fn nearest_within(&self, class: u32, x: f64, y: f64, radius: f64) -> Option<(usize, f64)> {
        let (cx0, cx1) = (self.cell_of(x - radius), self.cell_of(x + radius));
        let (cy0, cy1) = (self.cell_of(y - radius), self.cell_of(y + radius));
        let mut best: Option<(f64, u64, usize)> = None;
        for cx in cx0..=cx1 {
            for cy in cy0..=cy1 {
                let Some(bucket) = self.buckets.get(&(class, cx, cy)) else {
                    continue;
                };
                for e in bucket {
                    let d = super::distance(x, y, e.x, e.y);
                    if d > radius {
                        continue;
                    }
                    let better = match best {
                        None => true,
                        Some((bd, bid, _)) => d < bd || (d == bd && e.id < bid),
                    };
                    if better {
                        best = Some((d, e.id, e.slot));
                    }
                }
            }
        }
        best.map(|(d, _, slot)| (slot, d))
    }
}
