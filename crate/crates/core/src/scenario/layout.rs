//! Hexagonal macro grid with small cells and a wrap-around distance metric.
//!
//! Macro sites sit on a pointy-top hexagonal lattice in axial coordinates
//! `(q, r)`, with cartesian centre `isd * (q + r/2, r * sqrt(3)/2)`. A cluster
//! of `n` rings holds `3n^2 + 3n + 1` cells; the six translated copies of the
//! cluster around it are the mirror images used for wrap-around.

use serde::Serialize;

use super::{config::TrafficConfig, ScenarioConfig, ScenarioError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }
}

impl std::ops::Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BsKind {
    Macro,
    Small,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BaseStation {
    pub id: usize,
    pub kind: BsKind,
    pub position: Point,
    pub home_macro: usize,
    /// Reuse group in `0..reuse_factor`.
    pub color: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Location {
    pub id: usize,
    pub position: Point,
    pub home_macro: usize,
}

#[derive(Clone, Debug)]
pub struct Layout {
    /// Macros first (ids `0..macro_count`), then small cells grouped by home macro.
    pub base_stations: Vec<BaseStation>,
    pub locations: Vec<Location>,
    /// Mirror displacements, the zero vector first.
    pub wrap_group: Vec<Point>,
    pub cell_radius_m: f64,
    pub macro_count: usize,
}

/// Number of rings `n` such that `3n^2 + 3n + 1 == cells`, for the supported cluster sizes.
pub fn rings_for_cluster(cells: usize) -> Option<usize> {
    match cells {
        1 => Some(0),
        7 => Some(1),
        19 => Some(2),
        _ => None,
    }
}

fn axial_to_point(q: i64, r: i64, isd: f64) -> Point {
    Point::new(
        isd * (q as f64 + r as f64 / 2.0),
        isd * (r as f64) * 3f64.sqrt() / 2.0,
    )
}

/// Axial coordinates of all cells within `rings` of the origin, ring by ring,
/// each ring walked counter-clockwise starting from the +q direction.
fn cluster_cells(rings: usize) -> Vec<(i64, i64)> {
    const DIRS: [(i64, i64); 6] = [(-1, 1), (-1, 0), (0, -1), (1, -1), (1, 0), (0, 1)];
    let mut cells = vec![(0, 0)];
    for ring in 1..=rings as i64 {
        let (mut q, mut r) = (ring, 0);
        for (dq, dr) in DIRS {
            for _ in 0..ring {
                cells.push((q, r));
                q += dq;
                r += dr;
            }
        }
    }
    cells
}

/// The six translations tiling the plane with copies of an `n`-ring cluster.
fn mirror_shifts(rings: usize, isd: f64) -> Vec<Point> {
    let mut out = vec![Point::new(0.0, 0.0)];
    if rings == 0 {
        return out;
    }
    let n = rings as i64;
    let (mut q, mut r) = (n + 1, n);
    for _ in 0..6 {
        out.push(axial_to_point(q, r, isd));
        // 60 degree rotation in axial coordinates.
        (q, r) = (-r, q + r);
    }
    out
}

/// Point-in-hexagon test for a pointy-top hexagon of circumradius `radius`
/// centred at the origin. Boundary points are excluded.
pub fn inside_hexagon(p: Point, radius: f64) -> bool {
    let ax = p.x.abs();
    let ay = p.y.abs();
    ax < radius * 3f64.sqrt() / 2.0 && ay < radius - ax / 3f64.sqrt()
}

fn inside_square(p: Point, center: Point, side: f64) -> bool {
    (p.x - center.x).abs() < side / 2.0 && (p.y - center.y).abs() < side / 2.0
}

/// Exactly `n` points of a square grid covering the region `inside`, which is
/// contained in the box `center ± half_extent`.
///
/// The grid spacing starts at `sqrt(area / n)` and shrinks until at least `n`
/// points fall inside; surplus points are dropped by a uniform index stride.
fn grid_points(
    n: usize,
    center: Point,
    half_extent: f64,
    area: f64,
    inside: impl Fn(Point) -> bool,
) -> Vec<Point> {
    let collect = |h: f64| {
        let steps = (half_extent / h).ceil() as i64 + 1;
        let mut pts = Vec::new();
        for j in -steps..steps {
            for i in -steps..steps {
                let p = Point::new(
                    center.x + (i as f64 + 0.5) * h,
                    center.y + (j as f64 + 0.5) * h,
                );
                if inside(p) {
                    pts.push(p);
                }
            }
        }
        pts
    };
    let mut h = (area / n as f64).sqrt();
    let mut pts = collect(h);
    while pts.len() < n {
        h *= 0.995;
        pts = collect(h);
    }
    let total = pts.len();
    (0..n).map(|k| pts[k * total / n]).collect()
}

impl Layout {
    pub fn build(config: &ScenarioConfig) -> Result<Layout, ScenarioError> {
        config.validate()?;
        let rings = rings_for_cluster(config.macro_count)
            .ok_or(ScenarioError::UnsupportedCluster(config.macro_count))?;
        let isd = config.inter_site_distance_m;
        let radius = config.cell_radius_m();
        let reuse = config.reuse_factor as i64;

        let cells = cluster_cells(rings);
        let mut base_stations = Vec::with_capacity(cells.len() * (1 + config.small_cells_per_macro));
        for (id, &(q, r)) in cells.iter().enumerate() {
            base_stations.push(BaseStation {
                id,
                kind: BsKind::Macro,
                position: axial_to_point(q, r, isd),
                home_macro: id,
                // Canonical 3-colouring of the hex lattice for reuse 3.
                color: (q - r).rem_euclid(reuse) as usize,
            });
        }
        let b = config.small_cells_per_macro;
        for m in 0..cells.len() {
            let center = base_stations[m].position;
            let color = base_stations[m].color;
            for k in 0..b {
                let theta = 2.0 * std::f64::consts::PI * k as f64 / b as f64;
                let d = config.sc_distance_from_center_m;
                base_stations.push(BaseStation {
                    id: base_stations.len(),
                    kind: BsKind::Small,
                    position: center + Point::new(d * theta.cos(), d * theta.sin()),
                    home_macro: m,
                    color,
                });
            }
        }

        let hex_area = 1.5 * 3f64.sqrt() * radius * radius;
        let mut locations = Vec::with_capacity(cells.len() * config.locations_per_cell);
        for m in 0..cells.len() {
            let center = base_stations[m].position;
            let in_hex = move |p: Point| inside_hexagon(p - center, radius);
            let pts = match &config.traffic {
                TrafficConfig::Hotspot {
                    side_m,
                    small_cell_index,
                    locations_in_hotspot: Some(n_hot),
                    ..
                } => {
                    let sc = base_stations[cells.len() + m * b + small_cell_index].position;
                    let side = *side_m;
                    let mut hot = grid_points(*n_hot, sc, side / 2.0, side * side, |p| {
                        in_hex(p) && inside_square(p, sc, side)
                    });
                    let rest = grid_points(
                        config.locations_per_cell - n_hot,
                        center,
                        radius,
                        hex_area - side * side,
                        |p| in_hex(p) && !inside_square(p, sc, side),
                    );
                    hot.extend(rest);
                    hot
                }
                _ => grid_points(config.locations_per_cell, center, radius, hex_area, in_hex),
            };
            for position in pts {
                locations.push(Location {
                    id: locations.len(),
                    position,
                    home_macro: m,
                });
            }
        }

        Ok(Layout {
            base_stations,
            locations,
            wrap_group: mirror_shifts(rings, isd),
            cell_radius_m: radius,
            macro_count: cells.len(),
        })
    }

    /// Wrap-around distance: the minimum over mirror images of `b`.
    pub fn distance(&self, a: Point, b: Point) -> f64 {
        let d = a - b;
        self.wrap_group
            .iter()
            .map(|&s| (d - s).norm())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn location_bs_distance(&self, loc: usize, bs: usize) -> f64 {
        self.distance(self.locations[loc].position, self.base_stations[bs].position)
    }

    pub fn macros(&self) -> impl Iterator<Item = &BaseStation> {
        self.base_stations.iter().filter(|b| b.kind == BsKind::Macro)
    }

    pub fn small_cells(&self) -> impl Iterator<Item = &BaseStation> {
        self.base_stations.iter().filter(|b| b.kind == BsKind::Small)
    }
}
