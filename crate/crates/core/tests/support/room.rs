//! The square-room occupancy scenario shared by the oracle and golden tests.

use std::collections::HashSet;
use std::path::PathBuf;

use semmap::geometry::Pose2;
use semmap::occupancy::{integrate_scan, CellState, OccupancyGrid, OccupancyParams, FREE_THRESH, OCCUPIED_THRESH};
use semmap::simulator::{rectangle_walls, render_scan, Sensors};

use super::{RayMarchGrid, RefCell};

pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// A 4 m square room scanned from five poses.
pub fn square_room() -> (OccupancyGrid, RayMarchGrid) {
    let params = OccupancyParams::default();
    let walls = rectangle_walls(-2.0, -2.0, 2.0, 2.0);
    let sensors = Sensors { scan_rays: 360, scan_angle_increment: std::f64::consts::TAU / 360.0, ..Sensors::default() };
    let poses = [
        Pose2::new(0.0, 0.0, 0.0),
        Pose2::new(1.0, 0.5, 0.7),
        Pose2::new(-1.2, 1.1, -2.0),
        Pose2::new(-0.6, -1.3, 2.5),
        Pose2::new(1.4, -1.4, 1.0),
    ];
    let mut grid = params.initial_grid();
    let mut oracle = RayMarchGrid::new(params.resolution);
    for (k, pose) in poses.iter().enumerate() {
        let scan = render_scan(pose, &walls, &sensors, k as f64);
        integrate_scan(&mut grid, pose, &scan, &params);
        oracle.integrate(pose, &scan, params.l_free(), params.l_occ(), params.l_min(), params.l_max());
    }
    (grid, oracle)
}

/// Touched cells on which the grid and the reference agree, and all touched cells.
pub fn agreement(grid: &OccupancyGrid, oracle: &RayMarchGrid) -> (usize, usize) {
    let res = grid.resolution();
    let origin = grid.origin();
    let mut touched: HashSet<(i64, i64)> = oracle.log_odds.keys().copied().collect();
    for j in 0..grid.height() {
        for i in 0..grid.width() {
            if grid.get(i, j) != 0.0 {
                let x = origin.x + (i as f64 + 0.5) * res;
                let y = origin.y + (j as f64 + 0.5) * res;
                touched.insert(((x / res).floor() as i64, (y / res).floor() as i64));
            }
        }
    }
    let mut agree = 0;
    for &(a, b) in &touched {
        let (x, y) = ((a as f64 + 0.5) * res, (b as f64 + 0.5) * res);
        let (i, j) = grid.world_to_cell(x, y);
        let ours = if grid.contains_cell(i, j) { grid.state(i as usize, j as usize) } else { CellState::Unknown };
        let theirs = match oracle.classify((a, b), OCCUPIED_THRESH, FREE_THRESH) {
            RefCell::Occupied => CellState::Occupied,
            RefCell::Free => CellState::Free,
            RefCell::Unknown => CellState::Unknown,
        };
        agree += usize::from(ours == theirs);
    }
    (agree, touched.len())
}
