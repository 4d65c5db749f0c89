//! Procedural vineyard layouts.
//!
//! A world is a stack of *blocks*. Each block is a set of parallel rows obtained by
//! offsetting one base centerline (straight, constant-curvature arc, or a straight
//! segment followed by an arc). Corridors are the spaces between adjacent rows of the
//! same block, so a world with `rows` rows in `blocks` blocks has `rows - blocks`
//! corridors. Consecutive blocks are separated by a headland gap.
//!
//! Plants are sampled along each row with a seeded RNG; the same config and seed always
//! produce a bit-identical world.

use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{point_segment_distance, Point2};
use crate::rng::{self, Rng};

/// Resolution used when rows or medians are converted to polylines.
const POLYLINE_STEP: f64 = 0.02;

/// One constant-curvature piece of a centerline. Zero curvature is a straight segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub length: f64,
    /// Signed curvature in 1/m, positive turning left.
    pub curvature: f64,
}

/// Planar curve parameterized by arclength, built from constant-curvature pieces.
///
/// Outside `[0, length]` the curve continues along its end tangents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Centerline {
    pub origin: Point2,
    pub heading: f64,
    pub pieces: Vec<Piece>,
}

impl Centerline {
    pub fn straight(origin: Point2, heading: f64, length: f64) -> Self {
        Self {
            origin,
            heading,
            pieces: vec![Piece {
                length,
                curvature: 0.0,
            }],
        }
    }

    pub fn length(&self) -> f64 {
        self.pieces.iter().map(|p| p.length).sum()
    }

    /// Position and tangent heading at arclength `s`.
    pub fn pose_at(&self, s: f64) -> (Point2, f64) {
        let mut p = self.origin;
        let mut h = self.heading;
        if s <= 0.0 {
            return (p + Point2::from_angle(h) * s, h);
        }
        let mut remaining = s;
        for piece in &self.pieces {
            let ds = remaining.min(piece.length);
            let (np, nh) = advance(p, h, piece.curvature, ds);
            remaining -= ds;
            p = np;
            h = nh;
            if remaining <= 0.0 {
                return (p, h);
            }
        }
        (p + Point2::from_angle(h) * remaining, h)
    }

    pub fn point_at(&self, s: f64) -> Point2 {
        self.pose_at(s).0
    }

    pub fn heading_at(&self, s: f64) -> f64 {
        self.pose_at(s).1
    }

    /// Parallel curve at signed lateral distance `lateral` (positive to the left).
    ///
    /// Fails when the offset reaches or crosses a center of curvature, where the
    /// parallel curve would fold onto itself.
    pub fn offset(&self, lateral: f64) -> Result<Self> {
        let mut pieces = Vec::with_capacity(self.pieces.len());
        for piece in &self.pieces {
            let scale = 1.0 - piece.curvature * lateral;
            if scale <= 0.05 {
                return Err(Error::Geometry(format!(
                    "offset {lateral} m exceeds the turning radius {} m of a curved piece",
                    1.0 / piece.curvature
                )));
            }
            pieces.push(Piece {
                length: piece.length * scale,
                curvature: piece.curvature / scale,
            });
        }
        Ok(Self {
            origin: self.origin + Point2::from_angle(self.heading).perp() * lateral,
            heading: self.heading,
            pieces,
        })
    }

    /// Points at `n` equally spaced arclengths from 0 to the full length.
    pub fn sample(&self, n: usize) -> Vec<Point2> {
        let len = self.length();
        (0..n)
            .map(|i| self.point_at(len * i as f64 / (n - 1).max(1) as f64))
            .collect()
    }

    fn total_turning(&self) -> f64 {
        self.pieces.iter().map(|p| p.length * p.curvature).sum()
    }
}

fn advance(p: Point2, h: f64, k: f64, ds: f64) -> (Point2, f64) {
    if k.abs() < 1e-12 {
        return (p + Point2::from_angle(h) * ds, h);
    }
    let h1 = h + k * ds;
    let d = Point2::new((h1.sin() - h.sin()) / k, (h.cos() - h1.cos()) / k);
    (p + d, h1)
}

/// Shape family of a block of rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RowShape {
    Straight,
    Curved { curvature: f64 },
    /// Straight run of `straight_length` metres, then an arc tangent to it.
    Hybrid { straight_length: f64, curvature: f64 },
}

impl RowShape {
    pub fn label(&self) -> &'static str {
        match self {
            RowShape::Straight => "Straight",
            RowShape::Curved { .. } => "Curved",
            RowShape::Hybrid { .. } => "Hybrid",
        }
    }

    fn pieces(&self, length: f64) -> Result<Vec<Piece>> {
        Ok(match *self {
            RowShape::Straight => vec![Piece {
                length,
                curvature: 0.0,
            }],
            RowShape::Curved { curvature } => vec![Piece { length, curvature }],
            RowShape::Hybrid {
                straight_length,
                curvature,
            } => {
                if !(straight_length > 0.0 && straight_length < length) {
                    return Err(Error::Config(format!(
                        "hybrid straight_length {straight_length} must lie in (0, {length})"
                    )));
                }
                vec![
                    Piece {
                        length: straight_length,
                        curvature: 0.0,
                    },
                    Piece {
                        length: length - straight_length,
                        curvature,
                    },
                ]
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantDims {
    /// Collision radius of the trunk.
    pub trunk_radius: f64,
    /// Radius of the canopy cylinder used for rendering.
    pub canopy_half_width: f64,
    /// Height where the canopy starts.
    pub canopy_base: f64,
    pub height: f64,
}

impl Default for PlantDims {
    fn default() -> Self {
        Self {
            trunk_radius: 0.06,
            canopy_half_width: 0.25,
            canopy_base: 0.5,
            height: 1.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockConfig {
    /// Number of rows (plant lines) in the block; at least 2.
    pub rows: usize,
    /// Length of the first (reference) row; offset rows are longer or shorter on curves.
    pub row_length: f64,
    pub shape: RowShape,
    #[serde(default)]
    pub gaps_per_row: usize,
    #[serde(default)]
    pub gap_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub seed: u64,
    pub plant_spacing: [f64; 2],
    pub inter_row: [f64; 2],
    /// Maximum absolute jitter per axis applied to nominal plant positions.
    pub jitter: f64,
    /// Lateral headland between the last row of a block and the first row of the next.
    pub block_gap: f64,
    /// Free border around the plants included in the world bounds.
    pub margin: f64,
    pub plant: PlantDims,
    pub blocks: Vec<BlockConfig>,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self::training()
    }
}

impl WorldConfig {
    /// Six straight rows (five corridors) without gaps.
    pub fn training() -> Self {
        Self {
            seed: 7,
            plant_spacing: [0.7, 1.0],
            inter_row: [1.5, 2.0],
            jitter: 0.08,
            block_gap: 4.0,
            margin: 3.0,
            plant: PlantDims::default(),
            blocks: vec![BlockConfig {
                rows: 6,
                row_length: 20.0,
                shape: RowShape::Straight,
                gaps_per_row: 0,
                gap_width: 0.0,
            }],
        }
    }

    /// Five labelled corridors: straight, straight, hybrid, curved, curved, with one
    /// plant gap in every row.
    pub fn testing() -> Self {
        let gap = |rows, row_length, shape| BlockConfig {
            rows,
            row_length,
            shape,
            gaps_per_row: 1,
            gap_width: 1.8,
        };
        Self {
            seed: 11,
            blocks: vec![
                gap(3, 20.0, RowShape::Straight),
                gap(
                    2,
                    22.0,
                    RowShape::Hybrid {
                        straight_length: 10.0,
                        curvature: 0.05,
                    },
                ),
                gap(3, 20.0, RowShape::Curved { curvature: 0.04 }),
            ],
            ..Self::training()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "train" | "training" => Some(Self::training()),
            "test" | "testing" => Some(Self::testing()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let range_ok = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] > 0.0 && r[0] <= r[1];
        if !range_ok(self.plant_spacing) {
            return Err(Error::Config(format!(
                "plant_spacing {:?} must satisfy 0 < min <= max",
                self.plant_spacing
            )));
        }
        if !range_ok(self.inter_row) {
            return Err(Error::Config(format!(
                "inter_row {:?} must satisfy 0 < min <= max",
                self.inter_row
            )));
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return Err(Error::Config(format!("jitter {} must be >= 0", self.jitter)));
        }
        let p = &self.plant;
        if !(p.trunk_radius > 0.0
            && p.canopy_half_width >= p.trunk_radius
            && p.canopy_base >= 0.0
            && p.height > p.canopy_base)
        {
            return Err(Error::Config(format!("inconsistent plant dimensions {p:?}")));
        }
        if self.blocks.is_empty() {
            return Err(Error::Config("at least one block of rows is required".into()));
        }
        if !(self.block_gap > 0.0 && self.margin >= 0.0) {
            return Err(Error::Config("block_gap must be > 0 and margin >= 0".into()));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if b.rows < 2 {
                return Err(Error::Config(format!("block {i}: needs at least 2 rows")));
            }
            if !(b.row_length > 0.0 && b.row_length.is_finite()) {
                return Err(Error::Config(format!("block {i}: row_length must be > 0")));
            }
            if b.gaps_per_row > 0 {
                let slot = 0.5 * b.row_length / b.gaps_per_row as f64;
                if !(b.gap_width > 0.0 && b.gap_width < slot) {
                    return Err(Error::Config(format!(
                        "block {i}: gap_width {} must lie in (0, {slot})",
                        b.gap_width
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Realized geometry of one plant line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowSpec {
    pub centerline: Centerline,
    pub length: f64,
    pub plant_spacing_range: [f64; 2],
    /// Disjoint arclength intervals without plants.
    pub gap_intervals: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantInstance {
    pub position: Point2,
    /// Arclength of the nominal (un-jittered) position along its row.
    pub arclength: f64,
    pub jitter: Point2,
    pub trunk_radius: f64,
    pub canopy_half_width: f64,
    pub canopy_base: f64,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub spec: RowSpec,
    pub block: usize,
    pub plants: Vec<PlantInstance>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: Point2,
    pub max: Point2,
}

impl Bounds {
    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }
}

/// The space between two adjacent rows of a block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Corridor {
    /// Index of the row on the right-hand side when travelling forward.
    pub right_row: usize,
    pub left_row: usize,
    pub block: usize,
    pub shape: RowShape,
    /// Lateral distance between the two bounding centerlines.
    pub width: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "F")]
    Forward,
    #[serde(rename = "R")]
    Reverse,
}

impl Direction {
    pub fn letter(self) -> char {
        match self {
            Direction::Forward => 'F',
            Direction::Reverse => 'R',
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            Direction::Forward => Direction::Reverse,
            Direction::Reverse => Direction::Forward,
        }
    }
}

#[derive(Debug, Clone, Default)]
struct PlantGrid {
    origin: Point2,
    cell: f64,
    nx: usize,
    ny: usize,
    cells: Vec<Vec<(u32, u32)>>,
}

impl PlantGrid {
    fn build(rows: &[Row], bounds: Bounds, cell: f64) -> Self {
        let nx = (((bounds.max.x - bounds.min.x) / cell).ceil() as usize).max(1);
        let ny = (((bounds.max.y - bounds.min.y) / cell).ceil() as usize).max(1);
        let mut cells = vec![Vec::new(); nx * ny];
        let mut grid = Self {
            origin: bounds.min,
            cell,
            nx,
            ny,
            cells: Vec::new(),
        };
        for (r, row) in rows.iter().enumerate() {
            for (i, plant) in row.plants.iter().enumerate() {
                let (cx, cy) = grid.cell_of(plant.position);
                cells[cy * nx + cx].push((r as u32, i as u32));
            }
        }
        grid.cells = cells;
        grid
    }

    fn cell_of(&self, p: Point2) -> (usize, usize) {
        let cx = ((p.x - self.origin.x) / self.cell).floor();
        let cy = ((p.y - self.origin.y) / self.cell).floor();
        (
            (cx.max(0.0) as usize).min(self.nx - 1),
            (cy.max(0.0) as usize).min(self.ny - 1),
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VineyardWorld {
    pub config: WorldConfig,
    pub seed: u64,
    pub rows: Vec<Row>,
    pub corridors: Vec<Corridor>,
    /// Distances between consecutive rows of each block, in row order.
    pub inter_row_distances: Vec<f64>,
    pub bounds: Bounds,
    #[serde(skip)]
    grid: PlantGrid,
    #[serde(skip)]
    max_trunk_radius: f64,
}

impl PartialEq for VineyardWorld {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.seed == other.seed
            && self.rows == other.rows
            && self.corridors == other.corridors
            && self.inter_row_distances == other.inter_row_distances
            && self.bounds == other.bounds
    }
}

/// Build a vineyard from `config` using `seed` for every random choice.
pub fn generate_world(config: &WorldConfig, seed: u64) -> Result<VineyardWorld> {
    config.validate()?;
    let mut rng = rng::substream(seed, "world");
    let mut rows = Vec::new();
    let mut corridors = Vec::new();
    let mut inter_row_distances = Vec::new();
    let mut base_y = 0.0;

    for (b, block) in config.blocks.iter().enumerate() {
        let base = Centerline {
            origin: Point2::new(0.0, base_y),
            heading: 0.0,
            pieces: block.shape.pieces(block.row_length)?,
        };
        if base.total_turning().abs() >= std::f64::consts::FRAC_PI_2 {
            return Err(Error::Geometry(format!(
                "block {b}: rows turn by {:.2} rad; at most π/2 is supported",
                base.total_turning()
            )));
        }
        let mut offset = 0.0;
        for r in 0..block.rows {
            if r > 0 {
                let d = rng.random_range(config.inter_row[0]..=config.inter_row[1]);
                inter_row_distances.push(d);
                offset += d;
                corridors.push(Corridor {
                    right_row: rows.len() - 1,
                    left_row: rows.len(),
                    block: b,
                    shape: block.shape,
                    width: d,
                });
            }
            let centerline = base.offset(offset)?;
            let length = centerline.length();
            let gap_intervals = sample_gaps(&mut rng, length, block.gaps_per_row, block.gap_width);
            let plants = sample_plants(&mut rng, &centerline, length, &gap_intervals, config);
            rows.push(Row {
                spec: RowSpec {
                    centerline,
                    length,
                    plant_spacing_range: config.plant_spacing,
                    gap_intervals,
                },
                block: b,
                plants,
            });
        }
        base_y += offset + config.block_gap;
    }

    check_block_separation(&rows, &config.blocks, config.block_gap)?;
    let bounds = compute_bounds(&rows, config);
    let mut world = VineyardWorld {
        config: config.clone(),
        seed,
        rows,
        corridors,
        inter_row_distances,
        bounds,
        grid: PlantGrid::default(),
        max_trunk_radius: 0.0,
    };
    world.rebuild_index();
    Ok(world)
}

fn sample_gaps(rng: &mut Rng, length: f64, count: usize, width: f64) -> Vec<[f64; 2]> {
    // Gaps are spread over the middle half of the row, one per equal slot.
    let lo = 0.25 * length;
    let slot = 0.5 * length / count.max(1) as f64;
    (0..count)
        .map(|i| {
            let start = lo + i as f64 * slot + rng.random_range(0.0..=(slot - width));
            [start, start + width]
        })
        .collect()
}

fn sample_plants(
    rng: &mut Rng,
    centerline: &Centerline,
    length: f64,
    gaps: &[[f64; 2]],
    config: &WorldConfig,
) -> Vec<PlantInstance> {
    let mut plants = Vec::new();
    let mut s = 0.0;
    while s <= length + 1e-9 {
        let jitter = Point2::new(
            rng.random_range(-config.jitter..=config.jitter),
            rng.random_range(-config.jitter..=config.jitter),
        );
        if !gaps.iter().any(|g| s >= g[0] && s <= g[1]) {
            plants.push(PlantInstance {
                position: centerline.point_at(s) + jitter,
                arclength: s,
                jitter,
                trunk_radius: config.plant.trunk_radius,
                canopy_half_width: config.plant.canopy_half_width,
                canopy_base: config.plant.canopy_base,
                height: config.plant.height,
            });
        }
        s += rng.random_range(config.plant_spacing[0]..=config.plant_spacing[1]);
    }
    plants
}

fn check_block_separation(rows: &[Row], blocks: &[BlockConfig], gap: f64) -> Result<()> {
    if blocks.len() < 2 {
        return Ok(());
    }
    let polylines: Vec<Vec<Point2>> = rows
        .iter()
        .map(|r| r.spec.centerline.sample((r.spec.length / 0.25).ceil() as usize + 1))
        .collect();
    for b in 1..blocks.len() {
        let upper_first = rows.iter().position(|r| r.block == b).unwrap();
        let lower_last = upper_first - 1;
        let min = polyline_distance(&polylines[upper_first], &polylines[lower_last]);
        if min < 0.5 * gap {
            return Err(Error::Geometry(format!(
                "blocks {} and {b} come within {min:.2} m of each other",
                b - 1
            )));
        }
    }
    Ok(())
}

fn polyline_distance(a: &[Point2], b: &[Point2]) -> f64 {
    a.iter()
        .map(|&p| {
            b.windows(2)
                .map(|w| point_segment_distance(p, w[0], w[1]).0)
                .fold(f64::INFINITY, f64::min)
        })
        .fold(f64::INFINITY, f64::min)
}

fn compute_bounds(rows: &[Row], config: &WorldConfig) -> Bounds {
    let mut min = Point2::new(f64::INFINITY, f64::INFINITY);
    let mut max = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut include = |p: Point2| {
        min.x = min.x.min(p.x);
        min.y = min.y.min(p.y);
        max.x = max.x.max(p.x);
        max.y = max.y.max(p.y);
    };
    for row in rows {
        for p in row.spec.centerline.sample(64) {
            include(p);
        }
        for plant in &row.plants {
            include(plant.position);
        }
    }
    let m = config.margin + config.plant.canopy_half_width + config.jitter;
    Bounds {
        min: Point2::new(min.x - m, min.y - m),
        max: Point2::new(max.x + m, max.y + m),
    }
}

impl VineyardWorld {
    pub fn corridor_count(&self) -> usize {
        self.corridors.len()
    }

    pub fn plants(&self) -> impl Iterator<Item = &PlantInstance> {
        self.rows.iter().flat_map(|r| r.plants.iter())
    }

    pub fn plant_count(&self) -> usize {
        self.rows.iter().map(|r| r.plants.len()).sum()
    }

    pub fn corridor(&self, id: usize) -> Result<&Corridor> {
        self.corridors.get(id).ok_or_else(|| {
            Error::Config(format!(
                "corridor {id} out of range (world has {})",
                self.corridors.len()
            ))
        })
    }

    fn rebuild_index(&mut self) {
        self.grid = PlantGrid::build(&self.rows, self.bounds, 1.0);
        self.max_trunk_radius = self
            .plants()
            .map(|p| p.trunk_radius)
            .fold(0.0, f64::max);
    }

    /// Plants whose trunk circle intersects the disc of `radius` around `center`.
    pub fn nearby_plants(&self, center: Point2, radius: f64) -> Vec<&PlantInstance> {
        let reach = radius + self.max_trunk_radius;
        let lo = self.grid.cell_of(Point2::new(center.x - reach, center.y - reach));
        let hi = self.grid.cell_of(Point2::new(center.x + reach, center.y + reach));
        let mut out = Vec::new();
        for cy in lo.1..=hi.1 {
            for cx in lo.0..=hi.0 {
                for &(r, i) in &self.grid.cells[cy * self.grid.nx + cx] {
                    let plant = &self.rows[r as usize].plants[i as usize];
                    if plant.position.distance(center) <= radius + plant.trunk_radius {
                        out.push(plant);
                    }
                }
            }
        }
        out
    }

    /// `n` points of the corridor median: the average of the two bounding centerlines
    /// taken at equal arclength fractions.
    pub fn median_points(&self, corridor: usize, n: usize) -> Result<Vec<Point2>> {
        if n < 2 {
            return Err(Error::Config("median_points needs n >= 2".into()));
        }
        let c = self.corridor(corridor)?;
        let a = &self.rows[c.right_row].spec;
        let b = &self.rows[c.left_row].spec;
        Ok((0..n)
            .map(|i| {
                let f = i as f64 / (n - 1) as f64;
                a.centerline
                    .point_at(f * a.length)
                    .midpoint(b.centerline.point_at(f * b.length))
            })
            .collect())
    }

    /// Reference frame for travelling corridor `corridor` in `direction`.
    pub fn corridor_frame(&self, corridor: usize, direction: Direction) -> Result<CorridorFrame> {
        let c = self.corridor(corridor)?;
        let a = &self.rows[c.right_row].spec;
        let b = &self.rows[c.left_row].spec;
        let approx_len = 0.5 * (a.length + b.length);
        let n = ((approx_len / POLYLINE_STEP).ceil() as usize).max(2) + 1;
        let mut points = Vec::with_capacity(n);
        let mut headings = Vec::with_capacity(n);
        for i in 0..n {
            let f = i as f64 / (n - 1) as f64;
            let (pa, ha) = a.centerline.pose_at(f * a.length);
            let (pb, hb) = b.centerline.pose_at(f * b.length);
            points.push(pa.midpoint(pb));
            // d/df of the average is proportional to La·ta + Lb·tb.
            headings.push((Point2::from_angle(ha) * a.length + Point2::from_angle(hb) * b.length).angle());
        }
        let last = n - 1;
        let far = points[last] + Point2::from_angle(headings[last]) * EXIT_MARGIN;
        let near = points[0] - Point2::from_angle(headings[0]) * EXIT_MARGIN;
        let (eor, entry) = match direction {
            Direction::Forward => (far, near),
            Direction::Reverse => (near, far),
        };
        if direction == Direction::Reverse {
            points.reverse();
            headings.reverse();
            for h in &mut headings {
                *h = crate::geometry::wrap_angle(*h + std::f64::consts::PI);
            }
        }
        Ok(CorridorFrame::new(corridor, direction, points, headings, eor, entry))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let mut world: VineyardWorld = serde_json::from_str(s)?;
        world.rebuild_index();
        Ok(world)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

/// Distance of the end-of-row point beyond the last plant pair.
pub const EXIT_MARGIN: f64 = 0.5;

/// Projection of a point onto a corridor median.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Arclength along the median in travel direction (negative before the entry).
    pub arclength: f64,
    /// Signed lateral offset, positive to the left of travel.
    pub lateral: f64,
    /// Travel-direction tangent heading at the projection.
    pub heading: f64,
}

/// Median polyline of one corridor oriented in the direction of travel.
#[derive(Debug, Clone)]
pub struct CorridorFrame {
    pub corridor: usize,
    pub direction: Direction,
    /// End of row: the exit point in the direction of travel.
    pub eor: Point2,
    pub entry: Point2,
    /// Median length between the two row ends.
    pub length: f64,
    points: Vec<Point2>,
    headings: Vec<f64>,
    cumulative: Vec<f64>,
}

impl CorridorFrame {
    fn new(
        corridor: usize,
        direction: Direction,
        points: Vec<Point2>,
        headings: Vec<f64>,
        eor: Point2,
        entry: Point2,
    ) -> Self {
        let mut cumulative = Vec::with_capacity(points.len());
        let mut acc = 0.0;
        cumulative.push(0.0);
        for w in points.windows(2) {
            acc += w[0].distance(w[1]);
            cumulative.push(acc);
        }
        Self {
            corridor,
            direction,
            eor,
            entry,
            length: acc,
            points,
            headings,
            cumulative,
        }
    }

    pub fn median(&self) -> &[Point2] {
        &self.points
    }

    /// Travel-direction heading at the entry.
    pub fn entry_heading(&self) -> f64 {
        self.headings[0]
    }

    /// Travel-direction heading at the end of the row.
    pub fn eor_heading(&self) -> f64 {
        *self.headings.last().unwrap()
    }

    /// Pose on the median (extended along the end tangents) at arclength `s`.
    pub fn pose_at(&self, s: f64) -> (Point2, f64) {
        if s <= 0.0 {
            return (self.points[0] + Point2::from_angle(self.headings[0]) * s, self.headings[0]);
        }
        if s >= self.length {
            let h = self.eor_heading();
            return (*self.points.last().unwrap() + Point2::from_angle(h) * (s - self.length), h);
        }
        let i = self.cumulative.partition_point(|&c| c <= s).clamp(1, self.points.len() - 1);
        let (c0, c1) = (self.cumulative[i - 1], self.cumulative[i]);
        let t = if c1 > c0 { (s - c0) / (c1 - c0) } else { 0.0 };
        let p = self.points[i - 1] + (self.points[i] - self.points[i - 1]) * t;
        let dh = crate::geometry::wrap_angle(self.headings[i] - self.headings[i - 1]);
        (p, crate::geometry::wrap_angle(self.headings[i - 1] + dh * t))
    }

    pub fn tangent_at(&self, s: f64) -> f64 {
        self.pose_at(s).1
    }

    /// Nearest point of the (tangent-extended) median to `p`.
    pub fn project(&self, p: Point2) -> Projection {
        let mut best = (f64::INFINITY, 0usize, 0.0);
        for (i, w) in self.points.windows(2).enumerate() {
            let (d, t) = point_segment_distance(p, w[0], w[1]);
            if d < best.0 {
                best = (d, i, t);
            }
        }
        let (_, i, t) = best;
        let mut s = self.cumulative[i] + t * (self.cumulative[i + 1] - self.cumulative[i]);
        // Beyond the ends, measure along the extension lines.
        let first = Point2::from_angle(self.headings[0]);
        let along_first = (p - self.points[0]).dot(first);
        if i == 0 && t == 0.0 && along_first < 0.0 {
            s = along_first;
        }
        let last_h = Point2::from_angle(self.eor_heading());
        let along_last = (p - *self.points.last().unwrap()).dot(last_h);
        if i + 2 == self.points.len() && t == 1.0 && along_last > 0.0 {
            s = self.length + along_last;
        }
        let (q, heading) = self.pose_at(s);
        let lateral = Point2::from_angle(heading).cross(p - q);
        Projection {
            arclength: s,
            lateral,
            heading,
        }
    }

    /// Whether `p` lies on or beyond the line through the end of row perpendicular to
    /// the travel direction.
    pub fn past_exit_gate(&self, p: Point2) -> bool {
        (p - self.eor).dot(Point2::from_angle(self.eor_heading())) >= 0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn two_straight_rows(spacing: f64, jitter: f64) -> WorldConfig {
        WorldConfig {
            plant_spacing: [spacing, spacing],
            inter_row: [2.0, 2.0],
            jitter,
            blocks: vec![BlockConfig {
                rows: 2,
                row_length: 10.0,
                shape: RowShape::Straight,
                gaps_per_row: 0,
                gap_width: 0.0,
            }],
            ..WorldConfig::training()
        }
    }

    #[test]
    fn six_straight_rows_give_five_corridors_in_range() {
        let world = generate_world(&WorldConfig::training(), 7).unwrap();
        assert_eq!(world.rows.len(), 6);
        assert_eq!(world.corridor_count(), 5);
        for d in &world.inter_row_distances {
            assert!((1.5..=2.0).contains(d), "{d}");
        }
    }

    #[test]
    fn degenerate_rows_have_unit_spaced_plants() {
        let world = generate_world(&two_straight_rows(1.0, 0.0), 1).unwrap();
        for row in &world.rows {
            let s: Vec<f64> = row.plants.iter().map(|p| p.arclength).collect();
            let expected: Vec<f64> = (0..=10).map(f64::from).collect();
            assert_eq!(s, expected);
            for p in &row.plants {
                assert_eq!(p.position, row.spec.centerline.point_at(p.arclength));
            }
        }
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let cfg = WorldConfig::testing();
        let a = generate_world(&cfg, 5).unwrap();
        let b = generate_world(&cfg, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        let c = generate_world(&cfg, 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn json_reload_is_bit_identical() {
        let world = generate_world(&WorldConfig::testing(), 3).unwrap();
        let json = world.to_json().unwrap();
        let back = VineyardWorld::from_json(&json).unwrap();
        assert_eq!(world, back);
        assert_eq!(json, back.to_json().unwrap());
        let q = Point2::new(5.0, 1.0);
        assert_eq!(world.nearby_plants(q, 2.0).len(), back.nearby_plants(q, 2.0).len());
    }

    #[test]
    fn invalid_ranges_rejected() {
        let mut cfg = WorldConfig::training();
        cfg.plant_spacing = [1.0, 0.7];
        assert!(matches!(generate_world(&cfg, 0), Err(Error::Config(_))));
        let mut cfg = WorldConfig::training();
        cfg.inter_row = [2.0, 1.5];
        assert!(generate_world(&cfg, 0).is_err());
        let mut cfg = WorldConfig::training();
        cfg.blocks[0].rows = 1;
        assert!(generate_world(&cfg, 0).is_err());
    }

    #[test]
    fn self_intersecting_curvature_rejected() {
        let mut cfg = WorldConfig::training();
        // Radius 2 m with rows offset up to ~10 m to the left folds the offsets.
        cfg.blocks[0].shape = RowShape::Curved { curvature: 0.5 };
        cfg.blocks[0].row_length = 2.0;
        assert!(matches!(generate_world(&cfg, 0), Err(Error::Geometry(_))));
    }

    #[test]
    fn test_preset_layout() {
        let world = generate_world(&WorldConfig::testing(), 11).unwrap();
        let shapes: Vec<&str> = world.corridors.iter().map(|c| c.shape.label()).collect();
        assert_eq!(shapes, ["Straight", "Straight", "Hybrid", "Curved", "Curved"]);
        for row in &world.rows {
            assert!(!row.spec.gap_intervals.is_empty());
        }
    }

    #[test]
    fn plants_within_bounds_and_jitter() {
        for cfg in [WorldConfig::training(), WorldConfig::testing()] {
            let world = generate_world(&cfg, 2).unwrap();
            for p in world.plants() {
                assert!(world.bounds.contains(p.position));
                assert!(p.jitter.x.abs() <= 0.08 && p.jitter.y.abs() <= 0.08);
                assert!(p.trunk_radius > 0.0 && p.canopy_half_width >= p.trunk_radius);
            }
        }
    }

    #[test]
    fn spacing_respected_except_across_gaps() {
        let world = generate_world(&WorldConfig::testing(), 4).unwrap();
        for row in &world.rows {
            for w in row.plants.windows(2) {
                let ds = w[1].arclength - w[0].arclength;
                let spans_gap = row
                    .spec
                    .gap_intervals
                    .iter()
                    .any(|g| w[0].arclength < g[0] && w[1].arclength > g[1]);
                if !spans_gap {
                    assert!((0.7 - 1e-12..=1.0 + 1e-12).contains(&ds), "{ds}");
                }
            }
            for g in &row.spec.gap_intervals {
                assert!(g[0] >= 0.0 && g[1] <= row.spec.length && g[0] < g[1]);
                assert!(row.plants.iter().all(|p| p.arclength < g[0] || p.arclength > g[1]));
            }
        }
    }

    #[test]
    fn adjacent_rows_separation_in_range() {
        let world = generate_world(&WorldConfig::testing(), 8).unwrap();
        for c in &world.corridors {
            let a = world.rows[c.right_row].spec.centerline.sample(200);
            let b = world.rows[c.left_row].spec.centerline.sample(2000);
            let min = polyline_distance(&a, &b);
            assert!((1.5 - 1e-3..=2.0 + 1e-3).contains(&min), "{min}");
            assert!((min - c.width).abs() < 1e-3);
        }
    }

    #[test]
    fn median_of_parallel_lines_is_midline() {
        let world = generate_world(&two_straight_rows(1.0, 0.0), 1).unwrap();
        for p in world.median_points(0, 50).unwrap() {
            assert!((p.y - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn median_of_concentric_arcs_is_mean_radius() {
        // Left-turning base arc of radius 12 centred at (0, 12); offsetting by 2 to the
        // left gives radius 10 around the same centre.
        let base = Centerline {
            origin: Point2::new(0.0, 0.0),
            heading: 0.0,
            pieces: vec![Piece {
                length: 12.0,
                curvature: 1.0 / 12.0,
            }],
        };
        let inner = base.offset(2.0).unwrap();
        let centre = Point2::new(0.0, 12.0);
        for i in 0..=20 {
            let f = i as f64 / 20.0;
            let m = base.point_at(f * base.length()).midpoint(inner.point_at(f * inner.length()));
            assert!((m.distance(centre) - 11.0).abs() < 1e-9);
        }
    }

    #[test]
    fn median_of_identical_rows_is_the_row() {
        let row = Centerline {
            origin: Point2::new(1.0, 2.0),
            heading: 0.3,
            pieces: vec![
                Piece { length: 4.0, curvature: 0.0 },
                Piece { length: 6.0, curvature: 0.05 },
            ],
        };
        for i in 0..=30 {
            let s = row.length() * i as f64 / 30.0;
            let p = row.point_at(s);
            assert_eq!(p.midpoint(p), p);
        }
    }

    #[test]
    fn hybrid_median_stays_between_rows() {
        let world = generate_world(&WorldConfig::testing(), 3).unwrap();
        let c = world.corridors[2];
        let a = world.rows[c.right_row].spec.centerline.sample(4000);
        let b = world.rows[c.left_row].spec.centerline.sample(4000);
        let ra = &world.rows[c.right_row].spec;
        let rb = &world.rows[c.left_row].spec;
        let half = (0..=4000)
            .map(|i| {
                let f = i as f64 / 4000.0;
                ra.centerline.point_at(f * ra.length).distance(rb.centerline.point_at(f * rb.length))
            })
            .fold(0.0, f64::max)
            / 2.0;
        for m in world.median_points(2, 300).unwrap() {
            let da = polyline_distance(&[m], &a);
            let db = polyline_distance(&[m], &b);
            assert!(da <= half + 1e-3 && db <= half + 1e-3, "{da} {db} {half}");
        }
    }

    #[test]
    fn straight_corridor_eor_positions() {
        let world = generate_world(&two_straight_rows(1.0, 0.0), 1).unwrap();
        let f = world.corridor_frame(0, Direction::Forward).unwrap();
        let r = world.corridor_frame(0, Direction::Reverse).unwrap();
        assert!((f.length - 10.0).abs() < 1e-9);
        assert!((f.eor.x - 10.5).abs() < 1e-9 && (f.eor.y - 1.0).abs() < 1e-9);
        assert!((r.eor.x + 0.5).abs() < 1e-9 && (r.eor.y - 1.0).abs() < 1e-9);
        assert_eq!(f.eor, r.entry);
        assert_eq!(f.entry, r.eor);
        let pf = f.project(f.eor);
        assert!((pf.arclength - 10.5).abs() < 1e-9);
        let pr = r.project(r.eor);
        assert!((pr.arclength - 10.5).abs() < 1e-9);
    }

    #[test]
    fn curved_corridor_eor_on_average_median() {
        let world = generate_world(&WorldConfig::testing(), 3).unwrap();
        for id in [2, 3, 4] {
            let c = world.corridors[id];
            let a = &world.rows[c.right_row].spec;
            let b = &world.rows[c.left_row].spec;
            let end = a.centerline.point_at(a.length).midpoint(b.centerline.point_at(b.length));
            let frame = world.corridor_frame(id, Direction::Forward).unwrap();
            let back = frame.eor - Point2::from_angle(frame.eor_heading()) * EXIT_MARGIN;
            assert!(back.distance(end) < 1e-9);
            // Tangent agrees with a dense finite-difference of the pointwise average.
            let n = 100_000;
            let f = (n - 1) as f64 / n as f64;
            let prev = a.centerline.point_at(f * a.length).midpoint(b.centerline.point_at(f * b.length));
            let fd = (end - prev).angle();
            assert!(crate::geometry::wrap_angle(fd - frame.eor_heading()).abs() < 1e-4);
            let start = a.centerline.point_at(0.0).midpoint(b.centerline.point_at(0.0));
            let rf = world.corridor_frame(id, Direction::Reverse).unwrap();
            let back = rf.eor - Point2::from_angle(rf.eor_heading()) * EXIT_MARGIN;
            assert!(back.distance(start) < 1e-9);
        }
    }

    #[test]
    fn projection_recovers_arclength_and_offset() {
        let world = generate_world(&WorldConfig::testing(), 3).unwrap();
        let frame = world.corridor_frame(3, Direction::Reverse).unwrap();
        for s in [0.3, 4.0, 11.7, frame.length - 0.2] {
            let (p, h) = frame.pose_at(s);
            let q = p + Point2::from_angle(h).perp() * 0.3;
            let proj = frame.project(q);
            assert!((proj.arclength - s).abs() < 1e-3, "{} vs {s}", proj.arclength);
            assert!((proj.lateral - 0.3).abs() < 1e-3);
        }
        let before = frame.entry;
        assert!((frame.project(before).arclength + EXIT_MARGIN).abs() < 1e-9);
    }

    #[test]
    fn nearby_plants_matches_linear_scan() {
        let world = generate_world(&WorldConfig::testing(), 9).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let b = world.bounds;
        for _ in 0..1000 {
            let c = Point2::new(
                rng.random_range(b.min.x - 2.0..b.max.x + 2.0),
                rng.random_range(b.min.y - 2.0..b.max.y + 2.0),
            );
            let r = rng.random_range(0.01..4.0);
            let mut fast: Vec<(f64, f64)> = world
                .nearby_plants(c, r)
                .iter()
                .map(|p| (p.position.x, p.position.y))
                .collect();
            let mut slow: Vec<(f64, f64)> = world
                .plants()
                .filter(|p| p.position.distance(c) <= r + p.trunk_radius)
                .map(|p| (p.position.x, p.position.y))
                .collect();
            fast.sort_by(|a, b| a.partial_cmp(b).unwrap());
            slow.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert_eq!(fast, slow);
        }
    }

    #[test]
    fn nearby_plants_extremes() {
        let world = generate_world(&WorldConfig::training(), 9).unwrap();
        assert!(world.nearby_plants(Point2::new(-500.0, -500.0), 0.01).is_empty());
        let centre = world.bounds.min.midpoint(world.bounds.max);
        let all = world.nearby_plants(centre, 1000.0);
        assert_eq!(all.len(), world.plant_count());
    }
}
