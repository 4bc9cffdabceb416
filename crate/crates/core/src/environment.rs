//! Occupancy-grid world model: procedural arena generation, obstacle
//! inflation, the text map format and collision queries.
//!
//! Cell `(col, row)` covers `[ox + col*res, ox + (col+1)*res) x [oy + row*res, oy + (row+1)*res)`.
//! Row 0 is the minimum-y edge. The closed arena boundary counts as inside,
//! so a goal placed exactly on the top edge is still a valid position.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Slack added to inflation distances so that cells lying exactly on the
/// radius are not lost to rounding.
const DIST_EPS: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyGrid {
    width: usize,
    height: usize,
    resolution: f64,
    origin: [f64; 2],
    cells: Vec<bool>,
}

impl OccupancyGrid {
    pub fn new(
        width: usize,
        height: usize,
        resolution: f64,
        origin: [f64; 2],
        cells: Vec<bool>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter("grid dimensions must be positive".into()));
        }
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "resolution must be positive, got {resolution}"
            )));
        }
        if !origin.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter("origin must be finite".into()));
        }
        if cells.len() != width * height {
            return Err(Error::Dimension {
                expected: width * height,
                actual: cells.len(),
            });
        }
        Ok(Self {
            width,
            height,
            resolution,
            origin,
            cells,
        })
    }

    /// All-free grid.
    pub fn empty(width: usize, height: usize, resolution: f64, origin: [f64; 2]) -> Result<Self> {
        Self::new(width, height, resolution, origin, vec![false; width * height])
    }

    /// All-free grid covering `size` meters at the given resolution.
    pub fn free_arena(size: [f64; 2], resolution: f64) -> Result<Self> {
        let (w, h) = cells_for(size, resolution)?;
        Self::empty(w, h, resolution, [0.0, 0.0])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }

    /// Physical size in meters.
    pub fn extent(&self) -> [f64; 2] {
        [
            self.width as f64 * self.resolution,
            self.height as f64 * self.resolution,
        ]
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn occupied_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn is_occupied(&self, col: usize, row: usize) -> bool {
        self.cells[row * self.width + col]
    }

    pub fn set_occupied(&mut self, col: usize, row: usize, occupied: bool) {
        self.cells[row * self.width + col] = occupied;
    }

    pub fn cell_center(&self, col: usize, row: usize) -> [f64; 2] {
        [
            self.origin[0] + (col as f64 + 0.5) * self.resolution,
            self.origin[1] + (row as f64 + 0.5) * self.resolution,
        ]
    }

    /// Cell containing `(x, y)`, or `None` outside the closed arena.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let fx = (x - self.origin[0]) / self.resolution;
        let fy = (y - self.origin[1]) / self.resolution;
        // NaN fails both comparisons and lands here too.
        if !(fx >= 0.0 && fy >= 0.0 && fx <= self.width as f64 && fy <= self.height as f64) {
            return None;
        }
        let col = (fx as usize).min(self.width - 1);
        let row = (fy as usize).min(self.height - 1);
        Some((col, row))
    }

    /// Collision test on the planar part of `position`; any further
    /// coordinates (altitude) are ignored. Outside the arena counts as a hit.
    pub fn is_colliding(&self, position: &[f64]) -> bool {
        match position {
            [x, y, ..] => match self.cell_of(*x, *y) {
                Some((c, r)) => self.is_occupied(c, r),
                None => true,
            },
            _ => true,
        }
    }

    /// Like [`is_colliding`](Self::is_colliding), but positions beyond the
    /// bottom or top edge are free as long as they lie between the side
    /// walls.
    pub fn is_colliding_open_ends(&self, position: &[f64]) -> bool {
        match position {
            [x, y, ..] => {
                let fx = (x - self.origin[0]) / self.resolution;
                if !(fx >= 0.0 && fx <= self.width as f64) {
                    return true;
                }
                let top = self.origin[1] + self.extent()[1];
                if *y < self.origin[1] || *y > top {
                    return false;
                }
                self.is_colliding(position)
            }
            _ => true,
        }
    }

    /// Occupies every cell whose center lies within `radius` of `center`.
    pub fn fill_disc(&mut self, center: [f64; 2], radius: f64) {
        let res = self.resolution;
        let col_lo = ((center[0] - radius - self.origin[0]) / res).floor().max(0.0) as usize;
        let row_lo = ((center[1] - radius - self.origin[1]) / res).floor().max(0.0) as usize;
        let col_hi = (((center[0] + radius - self.origin[0]) / res).ceil() as usize).min(self.width);
        let row_hi =
            (((center[1] + radius - self.origin[1]) / res).ceil() as usize).min(self.height);
        for row in row_lo..row_hi {
            for col in col_lo..col_hi {
                let [cx, cy] = self.cell_center(col, row);
                if (cx - center[0]).hypot(cy - center[1]) <= radius + DIST_EPS {
                    self.set_occupied(col, row, true);
                }
            }
        }
    }

    /// Dilates the occupied set: a cell is occupied in the result iff some
    /// occupied cell center lies within `radius` of its center.
    pub fn inflate(&self, radius: f64) -> Self {
        let mut out = self.clone();
        if radius <= 0.0 {
            return out;
        }
        // Offsets measured in cell units keep the test exact for radii that
        // are integer multiples of the resolution.
        let reach = radius / self.resolution;
        let span = (reach + DIST_EPS).floor() as isize;
        let mut offsets = Vec::new();
        for dr in -span..=span {
            for dc in -span..=span {
                let d = ((dr * dr + dc * dc) as f64).sqrt();
                if d <= reach + DIST_EPS {
                    offsets.push((dc, dr));
                }
            }
        }
        let (w, h) = (self.width as isize, self.height as isize);
        for row in 0..h {
            for col in 0..w {
                if !self.cells[(row * w + col) as usize] {
                    continue;
                }
                for &(dc, dr) in &offsets {
                    let (c, r) = (col + dc, row + dr);
                    if c >= 0 && r >= 0 && c < w && r < h {
                        out.cells[(r * w + c) as usize] = true;
                    }
                }
            }
        }
        out
    }

    /// True when a 4-connected free path joins some free cell with center
    /// `y < y_from` to some free cell with center `y > y_to`.
    pub fn has_vertical_passage(&self, y_from: f64, y_to: f64) -> bool {
        let mut seen = vec![false; self.cells.len()];
        let mut queue = VecDeque::new();
        for row in 0..self.height {
            if self.cell_center(0, row)[1] >= y_from {
                break;
            }
            for col in 0..self.width {
                let i = row * self.width + col;
                if !self.cells[i] {
                    seen[i] = true;
                    queue.push_back((col, row));
                }
            }
        }
        while let Some((col, row)) = queue.pop_front() {
            if self.cell_center(col, row)[1] > y_to {
                return true;
            }
            let mut visit = |c: usize, r: usize| {
                let i = r * self.width + c;
                if !self.cells[i] && !seen[i] {
                    seen[i] = true;
                    queue.push_back((c, r));
                }
            };
            if col > 0 {
                visit(col - 1, row);
            }
            if col + 1 < self.width {
                visit(col + 1, row);
            }
            if row > 0 {
                visit(col, row - 1);
            }
            if row + 1 < self.height {
                visit(col, row + 1);
            }
        }
        false
    }
}

fn cells_for(size: [f64; 2], resolution: f64) -> Result<(usize, usize)> {
    if !(resolution > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "resolution must be positive, got {resolution}"
        )));
    }
    let w = (size[0] / resolution).round();
    let h = (size[1] / resolution).round();
    if !(w >= 1.0 && h >= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "arena {size:?} is smaller than one cell"
        )));
    }
    Ok((w as usize, h as usize))
}

/// Parameters of a procedurally generated BARN-style arena: a square
/// obstacle field embedded in a taller arena with empty start and goal bands.
#[derive(Clone, Debug, PartialEq)]
pub struct MapSpec {
    pub base_size: [f64; 2],
    pub extended_size: [f64; 2],
    pub resolution: f64,
    pub obstacle_count: usize,
    pub obstacle_radius: f64,
    pub inflation_radius: f64,
    /// Free bands at the bottom and top of the arena, in meters.
    pub free_margins: [f64; 2],
    /// Whole-layout attempts before giving up on finding a traversable map.
    pub max_attempts: usize,
    pub rng_seed: u64,
}

impl Default for MapSpec {
    fn default() -> Self {
        Self {
            base_size: [3.0, 3.0],
            extended_size: [3.0, 5.0],
            resolution: 0.1,
            obstacle_count: 12,
            obstacle_radius: 0.15,
            inflation_radius: 0.15,
            free_margins: [1.0, 1.0],
            max_attempts: 200,
            rng_seed: 0,
        }
    }
}

impl MapSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if !(self.base_size[0] > 0.0 && self.base_size[1] > 0.0) {
            return bad("base_size must be positive");
        }
        if self.extended_size[0] < self.base_size[0] || self.extended_size[1] < self.base_size[1] {
            return bad("extended_size must contain base_size");
        }
        if !(self.obstacle_radius > 0.0) {
            return bad("obstacle_radius must be positive");
        }
        if !(self.inflation_radius >= 0.0) {
            return bad("inflation_radius must be non-negative");
        }
        if !(self.resolution > 0.0) {
            return bad("resolution must be positive");
        }
        if self.free_margins.iter().any(|m| !(*m >= 0.0))
            || self.free_margins[0] + self.free_margins[1] > self.extended_size[1]
        {
            return bad("free margins must be non-negative and fit in the arena");
        }
        if 2.0 * self.obstacle_radius > self.base_size[0].min(self.base_size[1]) {
            return bad("obstacle does not fit in the base region");
        }
        Ok(())
    }

    /// Lower-left corner of the obstacle field inside the arena: centered
    /// horizontally, sitting on top of the bottom margin.
    pub fn base_offset(&self) -> [f64; 2] {
        [
            0.5 * (self.extended_size[0] - self.base_size[0]),
            self.free_margins[0],
        ]
    }
}

/// A generated arena together with the obstacle discs placed before inflation.
#[derive(Clone, Debug)]
pub struct GeneratedMap {
    pub grid: OccupancyGrid,
    pub obstacles: Vec<[f64; 2]>,
}

/// Deterministically generates an arena from `spec`. Layouts without a free
/// passage between the two margin bands are rejected and redrawn.
pub fn generate_map(spec: &MapSpec) -> Result<OccupancyGrid> {
    generate_map_with_obstacles(spec).map(|g| g.grid)
}

pub fn generate_map_with_obstacles(spec: &MapSpec) -> Result<GeneratedMap> {
    spec.validate()?;
    let (w, h) = cells_for(spec.extended_size, spec.resolution)?;
    let empty = OccupancyGrid::empty(w, h, spec.resolution, [0.0, 0.0])?;
    if spec.obstacle_count == 0 {
        return Ok(GeneratedMap {
            grid: empty,
            obstacles: Vec::new(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let [bx, by] = spec.base_offset();
    let r = spec.obstacle_radius;
    let bottom = spec.free_margins[0];
    let top = spec.extended_size[1] - spec.free_margins[1];

    for _ in 0..spec.max_attempts.max(1) {
        let mut raw = empty.clone();
        let mut obstacles = Vec::with_capacity(spec.obstacle_count);
        for _ in 0..spec.obstacle_count {
            let cx = rng.random_range(bx + r..=bx + spec.base_size[0] - r);
            let cy = rng.random_range(by + r..=by + spec.base_size[1] - r);
            raw.fill_disc([cx, cy], r);
            obstacles.push([cx, cy]);
        }
        let mut grid = raw.inflate(spec.inflation_radius);
        clear_bands(&mut grid, bottom, top);
        if grid.has_vertical_passage(bottom, top) {
            return Ok(GeneratedMap { grid, obstacles });
        }
    }
    Err(Error::MapGeneration(format!(
        "no traversable layout with {} obstacles after {} attempts",
        spec.obstacle_count, spec.max_attempts
    )))
}

fn clear_bands(grid: &mut OccupancyGrid, bottom: f64, top: f64) {
    for row in 0..grid.height() {
        let y = grid.cell_center(0, row)[1];
        if y < bottom || y > top {
            for col in 0..grid.width() {
                grid.set_occupied(col, row, false);
            }
        }
    }
}

/// Serializes a grid in the plain-text map format.
pub fn format_map(grid: &OccupancyGrid) -> String {
    let mut out = String::with_capacity((grid.width + 1) * (grid.height + 1) + 64);
    let _ = writeln!(
        out,
        "{} {} {} {} {}",
        grid.width, grid.height, grid.resolution, grid.origin[0], grid.origin[1]
    );
    for row in 0..grid.height {
        for col in 0..grid.width {
            out.push(if grid.is_occupied(col, row) { '1' } else { '0' });
        }
        out.push('\n');
    }
    out
}

pub fn parse_map(text: &str) -> Result<OccupancyGrid> {
    let err = |line: usize, message: String| Error::MapParse { line, message };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 5 {
        return Err(err(1, format!("expected 5 header fields, found {}", fields.len())));
    }
    let width: usize = fields[0]
        .parse()
        .map_err(|_| err(1, format!("bad width '{}'", fields[0])))?;
    let height: usize = fields[1]
        .parse()
        .map_err(|_| err(1, format!("bad height '{}'", fields[1])))?;
    let mut reals = [0.0f64; 3];
    for (slot, field) in reals.iter_mut().zip(&fields[2..]) {
        *slot = field
            .parse()
            .map_err(|_| err(1, format!("bad number '{field}'")))?;
    }
    let [resolution, ox, oy] = reals;
    if !(resolution > 0.0 && resolution.is_finite()) {
        return Err(err(1, format!("resolution must be positive, got {resolution}")));
    }
    if width == 0 || height == 0 {
        return Err(err(1, "grid dimensions must be positive".into()));
    }

    let mut cells = Vec::with_capacity(width * height);
    for row in 0..height {
        let line_no = row + 2;
        let line = lines
            .next()
            .ok_or_else(|| err(line_no, format!("expected {height} rows, found {row}")))?;
        let line = line.trim_end_matches('\r');
        if line.chars().count() != width {
            return Err(err(
                line_no,
                format!("row has {} cells, header says {width}", line.chars().count()),
            ));
        }
        for ch in line.chars() {
            match ch {
                '0' => cells.push(false),
                '1' => cells.push(true),
                other => return Err(err(line_no, format!("invalid cell symbol '{other}'"))),
            }
        }
    }
    if let Some((i, _)) = lines.enumerate().find(|(_, l)| !l.trim().is_empty()) {
        return Err(err(height + 2 + i, "trailing data after last row".into()));
    }
    OccupancyGrid::new(width, height, resolution, [ox, oy], cells)
}

pub fn save_map(grid: &OccupancyGrid, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, format_map(grid))?;
    Ok(())
}

pub fn load_map(path: impl AsRef<Path>) -> Result<OccupancyGrid> {
    parse_map(&std::fs::read_to_string(path)?)
}
