//! 3-D world geometry: axis-aligned buildings, line-of-sight blockage tests,
//! and height-grid rasterization for the environment encoder.

use crate::error::{Error, Result};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// A point in the world frame, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    /// Euclidean distance to another point.
    pub fn distance(&self, other: &Position) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    /// Distance projected onto the ground plane.
    pub fn horizontal_distance(&self, other: &Position) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        (dx * dx + dy * dy).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// Axis-aligned box obstacle sitting on the ground plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Building {
    pub min_x: f64,
    pub min_y: f64,
    pub width: f64,
    pub depth: f64,
    pub height: f64,
}

impl Building {
    pub fn max_x(&self) -> f64 {
        self.min_x + self.width
    }

    pub fn max_y(&self) -> f64 {
        self.min_y + self.depth
    }

    /// Strict interior test, used by the dense-sampling blockage oracle.
    pub fn contains_interior(&self, p: &Position) -> bool {
        p.x > self.min_x
            && p.x < self.max_x()
            && p.y > self.min_y
            && p.y < self.max_y()
            && p.z > 0.0
            && p.z < self.height
    }
}

/// Bounded world with buildings and fixed ground users.
///
/// The footprint is the square `[0, side_x] x [0, side_x]`; the UAV flies in
/// the altitude band `[h_min, h_max]`, above every building.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub side_x: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub buildings: Vec<Building>,
    pub gu_positions: Vec<Position>,
}

impl Environment {
    /// Checks the structural invariants: at least one ground user, everything
    /// inside the footprint, buildings strictly below the flight floor.
    pub fn validate(&self) -> Result<()> {
        if !(self.side_x > 0.0 && self.h_min > 0.0 && self.h_max > self.h_min) {
            return Err(Error::Config(format!(
                "bad world bounds: side_x={}, h_min={}, h_max={}",
                self.side_x, self.h_min, self.h_max
            )));
        }
        if self.gu_positions.is_empty() {
            return Err(Error::Config("environment has no ground users".into()));
        }
        for (i, gu) in self.gu_positions.iter().enumerate() {
            if !gu.is_finite() || gu.x < 0.0 || gu.x > self.side_x || gu.y < 0.0 || gu.y > self.side_x {
                return Err(Error::Config(format!("GU {i} outside footprint: {gu:?}")));
            }
        }
        for (i, b) in self.buildings.iter().enumerate() {
            if b.width <= 0.0 || b.depth <= 0.0 {
                return Err(Error::Config(format!("building {i} has empty footprint")));
            }
            if b.height >= self.h_min {
                return Err(Error::Config(format!(
                    "building {i} height {} reaches the flight floor {}",
                    b.height, self.h_min
                )));
            }
            if b.min_x < 0.0 || b.max_x() > self.side_x || b.min_y < 0.0 || b.max_y() > self.side_x {
                return Err(Error::Config(format!("building {i} outside footprint")));
            }
        }
        Ok(())
    }

    /// Uniform random point in the UAV flight volume.
    pub fn sample_uav_position<R: Rng>(&self, rng: &mut R) -> Position {
        Position::new(
            rng.gen_range(0.0..=self.side_x),
            rng.gen_range(0.0..=self.side_x),
            rng.gen_range(self.h_min..=self.h_max),
        )
    }
}

/// Per-cell maximum building height over a regular grid of the footprint.
/// Cells are stored row-major: index = iy * width_cells + ix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeightGrid {
    pub width_cells: usize,
    pub depth_cells: usize,
    pub cell_heights: Vec<f64>,
}

impl HeightGrid {
    pub fn cell(&self, ix: usize, iy: usize) -> f64 {
        self.cell_heights[iy * self.width_cells + ix]
    }

    pub fn len(&self) -> usize {
        self.cell_heights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cell_heights.is_empty()
    }
}

/// Environment plus its rasterized height grid, as persisted by `gen-env`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub environment: Environment,
    pub height_grid: HeightGrid,
}

/// Generation parameters for [`sample_environment`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvGenConfig {
    pub side_x: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub gu_count: usize,
    pub gu_height: f64,
    pub building_count: usize,
    /// Footprint side range (meters), both axes drawn independently.
    pub footprint_min: f64,
    pub footprint_max: f64,
    /// Building height range (meters); must stay below `h_min`.
    pub height_min: f64,
    pub height_max: f64,
}

impl Default for EnvGenConfig {
    fn default() -> Self {
        // 1000 m x 1000 m x 750 m urban scene, 15 users at the flight floor.
        Self {
            side_x: 1000.0,
            h_min: 250.0,
            h_max: 750.0,
            gu_count: 15,
            gu_height: 250.0,
            building_count: 25,
            footprint_min: 40.0,
            footprint_max: 140.0,
            height_min: 60.0,
            height_max: 240.0,
        }
    }
}

/// True iff the open segment p1 -> p2 passes through any building box.
///
/// Uses the parametric slab test per axis; symmetric in its endpoints. A
/// degenerate zero-length segment is never blocked.
pub fn segment_blocked(p1: &Position, p2: &Position, env: &Environment) -> bool {
    if p1 == p2 {
        return false;
    }
    env.buildings.iter().any(|b| segment_hits_box(p1, p2, b))
}

fn segment_hits_box(p1: &Position, p2: &Position, b: &Building) -> bool {
    let mut t0 = 0.0f64;
    let mut t1 = 1.0f64;
    let axes = [
        (p1.x, p2.x - p1.x, b.min_x, b.max_x()),
        (p1.y, p2.y - p1.y, b.min_y, b.max_y()),
        (p1.z, p2.z - p1.z, 0.0, b.height),
    ];
    for (origin, dir, lo, hi) in axes {
        if dir == 0.0 {
            if origin < lo || origin > hi {
                return false;
            }
            continue;
        }
        let (ta, tb) = ((lo - origin) / dir, (hi - origin) / dir);
        let (ta, tb) = if ta <= tb { (ta, tb) } else { (tb, ta) };
        t0 = t0.max(ta);
        t1 = t1.min(tb);
        if t0 > t1 {
            return false;
        }
    }
    // Exclude pure endpoint grazes so the test is on the open segment.
    t1 > 1e-12 && t0 < 1.0 - 1e-12
}

/// Parametric overlap interval of the segment with a box, if any.
/// Exposed for the blockage oracle test, which needs to know whether a hit is
/// wider than its sampling resolution.
pub fn segment_box_interval(p1: &Position, p2: &Position, b: &Building) -> Option<(f64, f64)> {
    if !segment_hits_box(p1, p2, b) {
        return None;
    }
    let mut t0 = 0.0f64;
    let mut t1 = 1.0f64;
    let axes = [
        (p1.x, p2.x - p1.x, b.min_x, b.max_x()),
        (p1.y, p2.y - p1.y, b.min_y, b.max_y()),
        (p1.z, p2.z - p1.z, 0.0, b.height),
    ];
    for (origin, dir, lo, hi) in axes {
        if dir == 0.0 {
            continue;
        }
        let (ta, tb) = ((lo - origin) / dir, (hi - origin) / dir);
        let (ta, tb) = if ta <= tb { (ta, tb) } else { (tb, ta) };
        t0 = t0.max(ta);
        t1 = t1.min(tb);
    }
    Some((t0.max(0.0), t1.min(1.0)))
}

/// Rasterizes the buildings to a grid of per-cell maximum heights.
/// A building contributes to every cell its footprint overlaps with positive
/// area; empty cells hold zero.
pub fn rasterize_heights(env: &Environment, width_cells: usize, depth_cells: usize) -> HeightGrid {
    assert!(width_cells >= 1 && depth_cells >= 1, "grid must have cells");
    let dx = env.side_x / width_cells as f64;
    let dy = env.side_x / depth_cells as f64;
    let mut cells = vec![0.0f64; width_cells * depth_cells];
    for b in &env.buildings {
        let ix0 = ((b.min_x / dx).floor() as isize).clamp(0, width_cells as isize - 1) as usize;
        let ix1 = ((b.max_x() / dx).ceil() as isize).clamp(1, width_cells as isize) as usize;
        let iy0 = ((b.min_y / dy).floor() as isize).clamp(0, depth_cells as isize - 1) as usize;
        let iy1 = ((b.max_y() / dy).ceil() as isize).clamp(1, depth_cells as isize) as usize;
        for iy in iy0..iy1 {
            let cell_y0 = iy as f64 * dy;
            let cell_y1 = cell_y0 + dy;
            if b.min_y >= cell_y1 || b.max_y() <= cell_y0 {
                continue;
            }
            for ix in ix0..ix1 {
                let cell_x0 = ix as f64 * dx;
                let cell_x1 = cell_x0 + dx;
                if b.min_x >= cell_x1 || b.max_x() <= cell_x0 {
                    continue;
                }
                let slot = &mut cells[iy * width_cells + ix];
                if b.height > *slot {
                    *slot = b.height;
                }
            }
        }
    }
    HeightGrid {
        width_cells,
        depth_cells,
        cell_heights: cells,
    }
}

/// Draws a reproducible random environment: uniformly placed buildings and
/// ground users, users re-drawn until they fall outside every footprint.
pub fn sample_environment(seed: u64, cfg: &EnvGenConfig) -> Result<Environment> {
    if cfg.gu_count == 0 {
        return Err(Error::Config("gu_count must be >= 1".into()));
    }
    if cfg.footprint_max > cfg.side_x || cfg.footprint_min > cfg.footprint_max {
        return Err(Error::Config(format!(
            "building footprints {}..{} do not fit a {} m side",
            cfg.footprint_min, cfg.footprint_max, cfg.side_x
        )));
    }
    if cfg.building_count > 0 && cfg.height_max >= cfg.h_min {
        return Err(Error::Config(format!(
            "building height_max {} must stay below h_min {}",
            cfg.height_max, cfg.h_min
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut buildings = Vec::with_capacity(cfg.building_count);
    for _ in 0..cfg.building_count {
        let width = rng.gen_range(cfg.footprint_min..=cfg.footprint_max);
        let depth = rng.gen_range(cfg.footprint_min..=cfg.footprint_max);
        let min_x = rng.gen_range(0.0..=(cfg.side_x - width));
        let min_y = rng.gen_range(0.0..=(cfg.side_x - depth));
        let height = rng.gen_range(cfg.height_min..=cfg.height_max);
        buildings.push(Building {
            min_x,
            min_y,
            width,
            depth,
            height,
        });
    }
    let mut gu_positions = Vec::with_capacity(cfg.gu_count);
    for _ in 0..cfg.gu_count {
        let p = loop {
            let candidate = Position::new(
                rng.gen_range(0.0..=cfg.side_x),
                rng.gen_range(0.0..=cfg.side_x),
                cfg.gu_height,
            );
            let inside_building = buildings.iter().any(|b| {
                cfg.gu_height < b.height
                    && candidate.x >= b.min_x
                    && candidate.x <= b.max_x()
                    && candidate.y >= b.min_y
                    && candidate.y <= b.max_y()
            });
            if !inside_building {
                break candidate;
            }
        };
        gu_positions.push(p);
    }
    let env = Environment {
        side_x: cfg.side_x,
        h_min: cfg.h_min,
        h_max: cfg.h_max,
        buildings,
        gu_positions,
    };
    env.validate()?;
    Ok(env)
}

/// Elevation angle from the ground node up to the UAV, in degrees.
///
/// `atan(h / r)` with `h` the height difference and `r` the horizontal
/// distance. Returns 90 when `r` is zero (including the degenerate case of
/// coincident points, by convention).
pub fn elevation_angle_deg(p_uav: &Position, p_gu: &Position) -> f64 {
    let r = p_uav.horizontal_distance(p_gu);
    let h = (p_uav.z - p_gu.z).abs();
    if r == 0.0 {
        return 90.0;
    }
    (h / r).atan().to_degrees()
}
