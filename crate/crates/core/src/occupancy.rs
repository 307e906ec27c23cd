//! Log-odds occupancy grid built from laser scans at known poses.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Pose2;

#[derive(Debug, Error)]
pub enum OccupancyError {
    #[error("grid has no cells")]
    EmptyGrid,
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("failed to write {path}: {source}")]
    Export {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn probability(l: f64) -> f64 {
    1.0 - 1.0 / (1.0 + l.exp())
}

pub const OCCUPIED_THRESH: f64 = 0.65;
pub const FREE_THRESH: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OccupancyParams {
    /// Meters per cell.
    pub resolution: f64,
    /// Inverse sensor model probability for an endpoint cell.
    pub p_hit: f64,
    /// Inverse sensor model probability for a traversed cell.
    pub p_miss: f64,
    pub p_min: f64,
    pub p_max: f64,
    /// Initial side length in cells, centered on the map origin.
    pub initial_cells: usize,
}

impl Default for OccupancyParams {
    fn default() -> Self {
        Self { resolution: 0.05, p_hit: 0.7, p_miss: 0.4, p_min: 0.12, p_max: 0.97, initial_cells: 64 }
    }
}

impl OccupancyParams {
    pub fn l_occ(&self) -> f64 {
        logit(self.p_hit)
    }

    pub fn l_free(&self) -> f64 {
        logit(self.p_miss)
    }

    pub fn l_min(&self) -> f64 {
        logit(self.p_min)
    }

    pub fn l_max(&self) -> f64 {
        logit(self.p_max)
    }

    pub fn validate(&self) -> Result<(), OccupancyError> {
        let open = |p: f64| p > 0.0 && p < 1.0;
        if !(self.resolution > 0.0 && self.resolution.is_finite()) {
            return Err(OccupancyError::InvalidGrid("resolution must be positive".into()));
        }
        if ![self.p_hit, self.p_miss, self.p_min, self.p_max].into_iter().all(open) || self.p_min >= self.p_max {
            return Err(OccupancyError::InvalidGrid("probabilities must lie in (0, 1) with p_min < p_max".into()));
        }
        if self.initial_cells == 0 {
            return Err(OccupancyError::InvalidGrid("initial_cells must be positive".into()));
        }
        Ok(())
    }

    /// Empty grid of `initial_cells` squared, centered on the world origin.
    pub fn initial_grid(&self) -> OccupancyGrid {
        let half = (self.initial_cells / 2) as i64;
        OccupancyGrid::anchored(self.resolution, 0.0, 0.0, -half, -half, self.initial_cells, self.initial_cells)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaserScan {
    pub stamp: f64,
    pub angle_min: f64,
    pub angle_increment: f64,
    pub range_min: f64,
    pub range_max: f64,
    /// Non-finite entries mean no return.
    pub ranges: Vec<f64>,
}

impl LaserScan {
    pub fn angle(&self, i: usize) -> f64 {
        self.angle_min + i as f64 * self.angle_increment
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellState {
    Occupied,
    Free,
    Unknown,
}

pub fn classify_log_odds(l: f64) -> CellState {
    let p = probability(l);
    if p > OCCUPIED_THRESH {
        CellState::Occupied
    } else if p < FREE_THRESH {
        CellState::Free
    } else {
        CellState::Unknown
    }
}

/// Axis-aligned grid. Cell `(i, j)` spans
/// `[base + (offset + i) * res, base + (offset + i + 1) * res)` on each axis,
/// so growth shifts integer offsets and never moves the world anchoring.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    resolution: f64,
    base_x: f64,
    base_y: f64,
    offset_x: i64,
    offset_y: i64,
    width: usize,
    height: usize,
    /// Row-major, row 0 at the lowest y.
    cells: Vec<f64>,
}

impl OccupancyGrid {
    /// Grid whose cell `(0, 0)` corner sits at `origin`. The origin yaw must be zero.
    pub fn new(resolution: f64, origin: Pose2, width: usize, height: usize) -> Result<Self, OccupancyError> {
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(OccupancyError::InvalidGrid("resolution must be positive".into()));
        }
        if origin.yaw != 0.0 {
            return Err(OccupancyError::InvalidGrid("rotated grid origins are not supported".into()));
        }
        Ok(Self::anchored(resolution, origin.x, origin.y, 0, 0, width, height))
    }

    fn anchored(resolution: f64, base_x: f64, base_y: f64, offset_x: i64, offset_y: i64, width: usize, height: usize) -> Self {
        Self { resolution, base_x, base_y, offset_x, offset_y, width, height, cells: vec![0.0; width * height] }
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn origin(&self) -> Pose2 {
        Pose2::new(
            self.base_x + self.offset_x as f64 * self.resolution,
            self.base_y + self.offset_y as f64 * self.resolution,
            0.0,
        )
    }

    pub fn cells(&self) -> &[f64] {
        &self.cells
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.cells[j * self.width + i]
    }

    /// Cell holding the world point, in grid coordinates (may be out of bounds).
    pub fn world_to_cell(&self, x: f64, y: f64) -> (i64, i64) {
        let (gx, gy) = self.world_to_grid(x, y);
        (gx.floor() as i64, gy.floor() as i64)
    }

    /// Continuous grid coordinates: cell `(i, j)` covers `[i, i+1) x [j, j+1)`.
    pub fn world_to_grid(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (x - self.base_x) / self.resolution - self.offset_x as f64,
            (y - self.base_y) / self.resolution - self.offset_y as f64,
        )
    }

    pub fn contains_cell(&self, i: i64, j: i64) -> bool {
        i >= 0 && j >= 0 && (i as usize) < self.width && (j as usize) < self.height
    }

    /// Doubles the grid toward the needed side until `(x, y)` is inside.
    pub fn ensure_contains(&mut self, x: f64, y: f64) {
        if !(x.is_finite() && y.is_finite()) {
            return;
        }
        loop {
            let (i, j) = self.world_to_cell(x, y);
            let (mut left, mut right, mut down, mut up) = (0, 0, 0, 0);
            if i < 0 {
                left = self.width.max(1);
            } else if i as usize >= self.width {
                right = self.width.max(1);
            }
            if j < 0 {
                down = self.height.max(1);
            } else if j as usize >= self.height {
                up = self.height.max(1);
            }
            if left + right + down + up == 0 {
                return;
            }
            self.grow(left, right, down, up);
        }
    }

    fn grow(&mut self, left: usize, right: usize, down: usize, up: usize) {
        let (w, h) = (self.width + left + right, self.height + down + up);
        let mut cells = vec![0.0; w * h];
        for j in 0..self.height {
            let src = &self.cells[j * self.width..(j + 1) * self.width];
            let dst = (j + down) * w + left;
            cells[dst..dst + self.width].copy_from_slice(src);
        }
        self.cells = cells;
        self.width = w;
        self.height = h;
        self.offset_x -= left as i64;
        self.offset_y -= down as i64;
    }

    pub fn classify(&self) -> Vec<CellState> {
        self.cells.iter().map(|&l| classify_log_odds(l)).collect()
    }

    pub fn state(&self, i: usize, j: usize) -> CellState {
        classify_log_odds(self.get(i, j))
    }
}

/// Visits the cells crossed by the segment from `start` to `end` in continuous
/// grid coordinates, excluding the cell containing `end`, which is returned.
pub fn traverse(start: (f64, f64), end: (f64, f64), mut visit: impl FnMut(i64, i64)) -> (i64, i64) {
    let mut cell = (start.0.floor() as i64, start.1.floor() as i64);
    let end_cell = (end.0.floor() as i64, end.1.floor() as i64);
    let (dx, dy) = (end.0 - start.0, end.1 - start.1);
    let step_x: i64 = if dx > 0.0 { 1 } else { -1 };
    let step_y: i64 = if dy > 0.0 { 1 } else { -1 };
    let t_delta_x = if dx != 0.0 { 1.0 / dx.abs() } else { f64::INFINITY };
    let t_delta_y = if dy != 0.0 { 1.0 / dy.abs() } else { f64::INFINITY };
    let mut t_max_x = if dx > 0.0 {
        (cell.0 as f64 + 1.0 - start.0) / dx
    } else if dx < 0.0 {
        (start.0 - cell.0 as f64) / -dx
    } else {
        f64::INFINITY
    };
    let mut t_max_y = if dy > 0.0 {
        (cell.1 as f64 + 1.0 - start.1) / dy
    } else if dy < 0.0 {
        (start.1 - cell.1 as f64) / -dy
    } else {
        f64::INFINITY
    };
    let max_steps = (end_cell.0 - cell.0).abs() + (end_cell.1 - cell.1).abs();
    for _ in 0..max_steps {
        if cell == end_cell {
            break;
        }
        visit(cell.0, cell.1);
        if t_max_x < t_max_y {
            cell.0 += step_x;
            t_max_x += t_delta_x;
        } else {
            cell.1 += step_y;
            t_max_y += t_delta_y;
        }
    }
    end_cell
}

/// One beam in world coordinates. `hit` is false for max-range readings,
/// which clear their path without marking an endpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub end: (f64, f64),
    pub hit: bool,
}

/// Integrates one scan taken from `pose` (the sensor pose in the map frame).
///
/// Rays at or beyond `range_max` are clipped to it and carry no endpoint;
/// non-finite and sub-`range_min` ranges are skipped.
pub fn integrate_scan(grid: &mut OccupancyGrid, pose: &Pose2, scan: &LaserScan, params: &OccupancyParams) {
    let mut rays = Vec::with_capacity(scan.ranges.len());
    for (i, &r) in scan.ranges.iter().enumerate() {
        if !r.is_finite() || r < scan.range_min {
            continue;
        }
        let hit = r < scan.range_max;
        let r = r.min(scan.range_max);
        let a = pose.yaw + scan.angle(i);
        rays.push(Ray { end: (pose.x + r * a.cos(), pose.y + r * a.sin()), hit });
    }
    integrate_rays(grid, (pose.x, pose.y), &rays, params);
}

/// Integrates rays cast from `origin`. Traversed cells get one free update
/// per ray and endpoint cells one occupied update. Per-cell counts are summed
/// before they are applied, so the order of `rays` has no effect.
pub fn integrate_rays(grid: &mut OccupancyGrid, origin: (f64, f64), rays: &[Ray], params: &OccupancyParams) {
    if rays.is_empty() || !(origin.0.is_finite() && origin.1.is_finite()) {
        return;
    }
    let finite = |r: &&Ray| r.end.0.is_finite() && r.end.1.is_finite();
    // grow to the bounding box so the final extent does not depend on ray order
    let (mut lo, mut hi) = (origin, origin);
    for ray in rays.iter().filter(finite) {
        lo = (lo.0.min(ray.end.0), lo.1.min(ray.end.1));
        hi = (hi.0.max(ray.end.0), hi.1.max(ray.end.1));
    }
    grid.ensure_contains(lo.0, lo.1);
    grid.ensure_contains(hi.0, hi.1);

    let start = grid.world_to_grid(origin.0, origin.1);
    let width = grid.width;
    let mut counts = vec![(0u32, 0u32); grid.cells.len()];
    let mut touched = Vec::new();
    let mut bump = |(i, j): (i64, i64), occupied: bool| {
        debug_assert!(grid.contains_cell(i, j));
        let k = j as usize * width + i as usize;
        let c = &mut counts[k];
        if *c == (0, 0) {
            touched.push(k);
        }
        if occupied {
            c.1 += 1;
        } else {
            c.0 += 1;
        }
    };
    for ray in rays.iter().filter(finite) {
        let end = grid.world_to_grid(ray.end.0, ray.end.1);
        let end_cell = traverse(start, end, |i, j| bump((i, j), false));
        if ray.hit {
            bump(end_cell, true);
        }
    }

    let (l_free, l_occ, l_min, l_max) = (params.l_free(), params.l_occ(), params.l_min(), params.l_max());
    for k in touched {
        let (n_free, n_occ) = counts[k];
        let cell = &mut grid.cells[k];
        *cell = (*cell + n_free as f64 * l_free + n_occ as f64 * l_occ).clamp(l_min, l_max);
    }
}

pub const PGM_OCCUPIED: u8 = 0;
pub const PGM_FREE: u8 = 254;
pub const PGM_UNKNOWN: u8 = 205;

/// Binary 8-bit graymap, top row at the highest y.
pub fn encode_pgm(grid: &OccupancyGrid) -> Vec<u8> {
    let header = format!("P5\n{} {}\n255\n", grid.width, grid.height);
    let mut out = Vec::with_capacity(header.len() + grid.cells.len());
    out.extend_from_slice(header.as_bytes());
    for j in (0..grid.height).rev() {
        out.extend(grid.cells[j * grid.width..(j + 1) * grid.width].iter().map(|&l| match classify_log_odds(l) {
            CellState::Occupied => PGM_OCCUPIED,
            CellState::Free => PGM_FREE,
            CellState::Unknown => PGM_UNKNOWN,
        }));
    }
    out
}

/// Map-server style metadata referencing `image_name`.
pub fn encode_metadata(grid: &OccupancyGrid, image_name: &str) -> String {
    let o = grid.origin();
    let mut s = String::new();
    writeln!(s, "image: {image_name}").unwrap();
    writeln!(s, "resolution: {:.6}", grid.resolution).unwrap();
    writeln!(s, "origin: [{:.6}, {:.6}, {:.6}]", o.x, o.y, o.yaw).unwrap();
    writeln!(s, "negate: 0").unwrap();
    writeln!(s, "occupied_thresh: {OCCUPIED_THRESH}").unwrap();
    writeln!(s, "free_thresh: {FREE_THRESH}").unwrap();
    s
}

/// Writes `<prefix>.pgm` and `<prefix>.yaml`. Returns both paths.
pub fn export_map(grid: &OccupancyGrid, path_prefix: &Path) -> Result<(PathBuf, PathBuf), OccupancyError> {
    if grid.cells.is_empty() {
        return Err(OccupancyError::EmptyGrid);
    }
    let image = path_prefix.with_extension("pgm");
    let meta = path_prefix.with_extension("yaml");
    let image_name = image.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    fs::write(&image, encode_pgm(grid)).map_err(|source| OccupancyError::Export { path: image.clone(), source })?;
    fs::write(&meta, encode_metadata(grid, &image_name))
        .map_err(|source| OccupancyError::Export { path: meta.clone(), source })?;
    Ok((image, meta))
}
