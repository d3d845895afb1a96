//! 2.5D environment maps: vertical walls over a horizontal footprint.
//!
//! A map is loaded from the JSON environment file, validated once, and is
//! immutable afterwards. Walls keep their declaration order; that order is the
//! tie-breaker everywhere (nearest-wall ranking, raster material plane, path
//! sorting in the tracer).

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio;

/// Geometric tolerance in meters.
pub const GEOM_EPS: f64 = 1e-9;
/// Shortest admissible wall.
pub const MIN_WALL_LENGTH: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum GeometryError {
    #[error("cannot read environment file {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed environment file: {0}")]
    Parse(String),
    #[error("invalid bounds [{xmin}, {ymin}, {xmax}, {ymax}]")]
    InvalidBounds {
        xmin: f64,
        ymin: f64,
        xmax: f64,
        ymax: f64,
    },
    #[error("material {id}: {reason}")]
    InvalidMaterial { id: u32, reason: String },
    #[error("duplicate material id {id}")]
    DuplicateMaterial { id: u32 },
    #[error("wall {index} references undeclared material {material}")]
    DanglingMaterial { index: usize, material: u32 },
    #[error("wall {index} lies outside the map bounds")]
    WallOutsideBounds { index: usize },
    #[error("wall {index} is degenerate (length {length:e} m)")]
    DegenerateWall { index: usize, length: f64 },
    #[error("wall {index} has invalid height {height}")]
    InvalidHeight { index: usize, height: f64 },
    #[error("wall {index} has non-finite coordinates")]
    NonFiniteWall { index: usize },
    #[error("raster window must be odd and non-zero, got {0}")]
    EvenWindow(usize),
    #[error("raster resolution must be positive, got {0}")]
    BadResolution(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn dot(self, o: Point2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 2D cross product.
    pub fn cross(self, o: Point2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, o: Point2) -> f64 {
        (self - o).norm()
    }

    /// Bearing of the vector from the +x axis, in (-pi, pi].
    pub fn bearing(self) -> f64 {
        wrap_angle(self.y.atan2(self.x))
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Point2 {
    fn from(v: [f64; 2]) -> Self {
        Point2::new(v[0], v[1])
    }
}

impl From<Point2> for [f64; 2] {
    fn from(p: Point2) -> Self {
        [p.x, p.y]
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }
}

impl Neg for Point2 {
    type Output = Point2;
    fn neg(self) -> Point2 {
        Point2::new(-self.x, -self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn xy(self) -> Point2 {
        Point2::new(self.x, self.y)
    }
}

impl From<[f64; 3]> for Point3 {
    fn from(v: [f64; 3]) -> Self {
        Point3::new(v[0], v[1], v[2])
    }
}

impl From<Point3> for [f64; 3] {
    fn from(p: Point3) -> Self {
        [p.x, p.y, p.z]
    }
}

/// Maps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a % (2.0 * PI);
    if r <= -PI {
        r += 2.0 * PI;
    } else if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// Axis-aligned rectangle, serialized as `[xmin, ymin, xmax, ymax]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Rect {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl Rect {
    pub const fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Self {
        Rect {
            xmin,
            ymin,
            xmax,
            ymax,
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.xmin, self.ymin, self.xmax, self.ymax]
            .iter()
            .all(|v| v.is_finite())
            && self.xmin <= self.xmax
            && self.ymin <= self.ymax
    }

    /// Closed containment with [`GEOM_EPS`] slack.
    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.xmin - GEOM_EPS
            && p.x <= self.xmax + GEOM_EPS
            && p.y >= self.ymin - GEOM_EPS
            && p.y <= self.ymax + GEOM_EPS
    }

    pub fn contains_rect(&self, o: &Rect) -> bool {
        self.contains(Point2::new(o.xmin, o.ymin)) && self.contains(Point2::new(o.xmax, o.ymax))
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn diagonal(&self) -> f64 {
        self.width().hypot(self.height())
    }

    pub fn translate(&self, d: Point2) -> Rect {
        Rect::new(self.xmin + d.x, self.ymin + d.y, self.xmax + d.x, self.ymax + d.y)
    }
}

impl From<[f64; 4]> for Rect {
    fn from(v: [f64; 4]) -> Self {
        Rect::new(v[0], v[1], v[2], v[3])
    }
}

impl From<Rect> for [f64; 4] {
    fn from(r: Rect) -> Self {
        [r.xmin, r.ymin, r.xmax, r.ymax]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub id: u32,
    pub name: String,
    /// Power loss per reflection, dB.
    pub reflection_loss_db: f64,
}

impl Material {
    /// Linear amplitude factor applied per reflection.
    pub fn reflection_amplitude(&self) -> f64 {
        10f64.powf(-self.reflection_loss_db / 20.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wall {
    pub p0: Point2,
    pub p1: Point2,
    pub height: f64,
    #[serde(rename = "material")]
    pub material_id: u32,
}

impl Wall {
    pub fn new(p0: Point2, p1: Point2, height: f64, material_id: u32) -> Self {
        Wall {
            p0,
            p1,
            height,
            material_id,
        }
    }

    pub fn length(&self) -> f64 {
        self.p0.distance(self.p1)
    }

    pub fn direction(&self) -> Point2 {
        self.p1 - self.p0
    }

    pub fn translate(&self, d: Point2) -> Wall {
        Wall {
            p0: self.p0 + d,
            p1: self.p1 + d,
            ..*self
        }
    }
}

#[derive(Serialize, Deserialize)]
struct EnvironmentFile {
    bounds: Rect,
    materials: Vec<Material>,
    walls: Vec<Wall>,
}

/// Validated wall map. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentMap {
    bounds: Rect,
    materials: Vec<Material>,
    walls: Vec<Wall>,
    /// Position in `materials` for each wall.
    wall_material: Vec<usize>,
}

impl EnvironmentMap {
    pub fn new(
        bounds: Rect,
        materials: Vec<Material>,
        walls: Vec<Wall>,
    ) -> Result<Self, GeometryError> {
        if !bounds.is_valid() {
            return Err(GeometryError::InvalidBounds {
                xmin: bounds.xmin,
                ymin: bounds.ymin,
                xmax: bounds.xmax,
                ymax: bounds.ymax,
            });
        }
        for (i, m) in materials.iter().enumerate() {
            if !m.reflection_loss_db.is_finite() || m.reflection_loss_db < 0.0 {
                return Err(GeometryError::InvalidMaterial {
                    id: m.id,
                    reason: format!("reflection_loss_db must be finite and >= 0, got {}", m.reflection_loss_db),
                });
            }
            if materials[..i].iter().any(|o| o.id == m.id) {
                return Err(GeometryError::DuplicateMaterial { id: m.id });
            }
        }
        let mut wall_material = Vec::with_capacity(walls.len());
        for (index, w) in walls.iter().enumerate() {
            if !w.p0.is_finite() || !w.p1.is_finite() {
                return Err(GeometryError::NonFiniteWall { index });
            }
            let length = w.length();
            if length <= MIN_WALL_LENGTH {
                return Err(GeometryError::DegenerateWall { index, length });
            }
            if !(w.height.is_finite() && w.height > 0.0) {
                return Err(GeometryError::InvalidHeight {
                    index,
                    height: w.height,
                });
            }
            if !bounds.contains(w.p0) || !bounds.contains(w.p1) {
                return Err(GeometryError::WallOutsideBounds { index });
            }
            let m = materials
                .iter()
                .position(|m| m.id == w.material_id)
                .ok_or(GeometryError::DanglingMaterial {
                    index,
                    material: w.material_id,
                })?;
            wall_material.push(m);
        }
        Ok(EnvironmentMap {
            bounds,
            materials,
            walls,
            wall_material,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, GeometryError> {
        let file: EnvironmentFile =
            serde_json::from_str(text).map_err(|e| GeometryError::Parse(e.to_string()))?;
        EnvironmentMap::new(file.bounds, file.materials, file.walls)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.as_file()).expect("map serializes")
    }

    /// Stable content hash (hex SHA-256 of the compact JSON form).
    pub fn content_hash(&self) -> String {
        binio::sha256_hex(&serde_json::to_vec(&self.as_file()).expect("map serializes"))
    }

    fn as_file(&self) -> EnvironmentFile {
        EnvironmentFile {
            bounds: self.bounds,
            materials: self.materials.clone(),
            walls: self.walls.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), binio::FormatError> {
        binio::write_atomic(path, self.to_json().as_bytes())
    }

    pub fn bounds(&self) -> Rect {
        self.bounds
    }

    pub fn walls(&self) -> &[Wall] {
        &self.walls
    }

    pub fn materials(&self) -> &[Material] {
        &self.materials
    }

    /// Index into [`EnvironmentMap::materials`] of the given wall's material.
    pub fn wall_material_index(&self, wall: usize) -> usize {
        self.wall_material[wall]
    }

    pub fn wall_material(&self, wall: usize) -> &Material {
        &self.materials[self.wall_material[wall]]
    }

    /// Same map shifted by `d`.
    pub fn translate(&self, d: Point2) -> EnvironmentMap {
        EnvironmentMap {
            bounds: self.bounds.translate(d),
            materials: self.materials.clone(),
            walls: self.walls.iter().map(|w| w.translate(d)).collect(),
            wall_material: self.wall_material.clone(),
        }
    }
}

/// Reads and validates an environment file.
pub fn load_environment(path: &Path) -> Result<EnvironmentMap, GeometryError> {
    let text = std::fs::read_to_string(path).map_err(|source| GeometryError::Io {
        path: path.display().to_string(),
        source,
    })?;
    EnvironmentMap::from_json(&text)
}

/// Minimum distance from `p` to the wall segment, and the nearest point on it.
pub fn point_segment_distance(p: Point2, wall: &Wall) -> (f64, Point2) {
    let d = wall.direction();
    let t = ((p - wall.p0).dot(d) / d.dot(d)).clamp(0.0, 1.0);
    let nearest = if t == 0.0 {
        wall.p0
    } else if t == 1.0 {
        wall.p1
    } else {
        wall.p0 + d * t
    };
    (p.distance(nearest), nearest)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WallFeature {
    pub wall_index: usize,
    pub distance: f64,
    /// Bearing from the query point to the nearest point on the wall, (-pi, pi].
    /// Zero when the point lies on the wall.
    pub orientation: f64,
    /// Index into the map's material list.
    pub material_index: usize,
}

/// The `k` nearest walls to `p`, ascending by distance, ties in declaration order.
pub fn nearest_walls(map: &EnvironmentMap, p: Point2, k: usize) -> Vec<WallFeature> {
    let mut feats: Vec<WallFeature> = map
        .walls()
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let (distance, nearest) = point_segment_distance(p, w);
            let orientation = if distance == 0.0 {
                0.0
            } else {
                (nearest - p).bearing()
            };
            WallFeature {
                wall_index: i,
                distance,
                orientation,
                material_index: map.wall_material_index(i),
            }
        })
        .collect();
    // stable sort keeps declaration order among equal distances
    feats.sort_by(|a, b| a.distance.total_cmp(&b.distance));
    feats.truncate(k);
    feats
}

/// W x W window of cells centered on the RX position.
///
/// Cells are stored row-major with row 0 at the lowest y. `material` holds
/// the index into the map's material list of the lowest-index wall crossing
/// the cell (0 where unoccupied; read together with `occupancy`).
#[derive(Debug, Clone, PartialEq)]
pub struct RasterMap {
    /// Lower-left corner of cell (0, 0).
    pub origin: Point2,
    pub resolution: f64,
    pub size: usize,
    pub occupancy: Vec<u8>,
    pub material: Vec<u32>,
    pub tx_marker: Vec<u8>,
    pub rx_marker: Vec<u8>,
}

impl RasterMap {
    pub fn cell(&self, row: usize, col: usize) -> usize {
        row * self.size + col
    }

    /// Planes as reals in the order occupancy, material, tx, rx.
    pub fn planes(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(4 * self.size * self.size);
        out.extend(self.occupancy.iter().map(|&v| f64::from(v)));
        out.extend(self.material.iter().map(|&v| f64::from(v)));
        out.extend(self.tx_marker.iter().map(|&v| f64::from(v)));
        out.extend(self.rx_marker.iter().map(|&v| f64::from(v)));
        out
    }
}

/// Does the closed segment `a`-`b` touch the closed box `[lo, hi]` (slack
/// [`GEOM_EPS`])? Liang-Barsky clipping.
fn segment_touches_box(a: Point2, b: Point2, lo: Point2, hi: Point2) -> bool {
    let d = b - a;
    let mut t0 = 0.0f64;
    let mut t1 = 1.0f64;
    let checks = [
        (-d.x, a.x - (lo.x - GEOM_EPS)),
        (d.x, (hi.x + GEOM_EPS) - a.x),
        (-d.y, a.y - (lo.y - GEOM_EPS)),
        (d.y, (hi.y + GEOM_EPS) - a.y),
    ];
    for (p, q) in checks {
        if p == 0.0 {
            if q < 0.0 {
                return false;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
            if t0 > t1 {
                return false;
            }
        }
    }
    true
}

/// Rasterizes the map into a `w` x `w` window of `res`-meter cells centered on `rx`.
pub fn rasterize(
    map: &EnvironmentMap,
    rx: Point2,
    tx: Point2,
    w: usize,
    res: f64,
) -> Result<RasterMap, GeometryError> {
    if w == 0 || w.is_multiple_of(2) {
        return Err(GeometryError::EvenWindow(w));
    }
    if !(res.is_finite() && res > 0.0) {
        return Err(GeometryError::BadResolution(res));
    }
    let n = w * w;
    let mut occupancy = vec![0u8; n];
    let mut material = vec![0u32; n];
    let mut tx_marker = vec![0u8; n];
    let mut rx_marker = vec![0u8; n];

    // Work relative to rx so the grid only depends on relative geometry.
    let half = w as f64 * res / 2.0;
    let lo_rel = Point2::new(-half, -half);
    let cell_index = |v: f64| ((v - lo_rel.x) / res).floor();

    for (wi, wall) in map.walls().iter().enumerate() {
        let a = wall.p0 - rx;
        let b = wall.p1 - rx;
        let c0 = cell_index(a.x.min(b.x) - GEOM_EPS).max(0.0);
        let c1 = cell_index(a.x.max(b.x) + GEOM_EPS).min(w as f64 - 1.0);
        let r0 = cell_index(a.y.min(b.y) - GEOM_EPS).max(0.0);
        let r1 = cell_index(a.y.max(b.y) + GEOM_EPS).min(w as f64 - 1.0);
        if c0 > c1 || r0 > r1 {
            continue;
        }
        for row in r0 as usize..=r1 as usize {
            for col in c0 as usize..=c1 as usize {
                let idx = row * w + col;
                if occupancy[idx] == 1 {
                    continue;
                }
                let lo = Point2::new(lo_rel.x + col as f64 * res, lo_rel.y + row as f64 * res);
                let hi = Point2::new(lo.x + res, lo.y + res);
                if segment_touches_box(a, b, lo, hi) {
                    occupancy[idx] = 1;
                    material[idx] = map.wall_material_index(wi) as u32;
                }
            }
        }
    }

    let center = w / 2;
    rx_marker[center * w + center] = 1;
    let t = tx - rx;
    let tc = cell_index(t.x);
    let tr = cell_index(t.y);
    if (0.0..w as f64).contains(&tc) && (0.0..w as f64).contains(&tr) {
        tx_marker[tr as usize * w + tc as usize] = 1;
    }

    Ok(RasterMap {
        origin: rx + lo_rel,
        resolution: res,
        size: w,
        occupancy,
        material,
        tx_marker,
        rx_marker,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn square_room() -> EnvironmentMap {
        let m = vec![Material {
            id: 1,
            name: "concrete".into(),
            reflection_loss_db: 6.0,
        }];
        let p = Point2::new;
        let walls = vec![
            Wall::new(p(0.0, 0.0), p(0.0, 10.0), 3.0, 1),
            Wall::new(p(10.0, 0.0), p(10.0, 10.0), 3.0, 1),
            Wall::new(p(0.0, 0.0), p(10.0, 0.0), 3.0, 1),
            Wall::new(p(0.0, 10.0), p(10.0, 10.0), 3.0, 1),
        ];
        EnvironmentMap::new(Rect::new(0.0, 0.0, 10.0, 10.0), m, walls).unwrap()
    }

    #[test]
    fn square_room_json_loads() {
        let text = r#"{"bounds":[0,0,10,10],
            "materials":[{"id":1,"name":"concrete","reflection_loss_db":6.0}],
            "walls":[{"p0":[0,0],"p1":[0,10],"height":3,"material":1},
                     {"p0":[10,0],"p1":[10,10],"height":3,"material":1},
                     {"p0":[0,0],"p1":[10,0],"height":3,"material":1},
                     {"p0":[0,10],"p1":[10,10],"height":3,"material":1}]}"#;
        let map = EnvironmentMap::from_json(text).unwrap();
        assert_eq!(map.walls().len(), 4);
        assert_eq!(map.bounds(), Rect::new(0.0, 0.0, 10.0, 10.0));
        assert_eq!(map, square_room());
    }

    #[test]
    fn dangling_material_names_wall() {
        let text = r#"{"bounds":[0,0,10,10],
            "materials":[{"id":1,"name":"a","reflection_loss_db":1.0}],
            "walls":[{"p0":[0,0],"p1":[0,10],"height":3,"material":1},
                     {"p0":[1,0],"p1":[1,10],"height":3,"material":9}]}"#;
        match EnvironmentMap::from_json(text) {
            Err(GeometryError::DanglingMaterial { index, material }) => {
                assert_eq!((index, material), (1, 9));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_map_is_valid() {
        let map = EnvironmentMap::from_json(r#"{"bounds":[0,0,5,5],"materials":[],"walls":[]}"#)
            .unwrap();
        assert!(map.walls().is_empty());
        assert!(nearest_walls(&map, Point2::new(1.0, 1.0), 5).is_empty());
    }

    #[test]
    fn validation_errors() {
        let m = || {
            vec![Material {
                id: 0,
                name: "x".into(),
                reflection_loss_db: 0.0,
            }]
        };
        let b = Rect::new(0.0, 0.0, 10.0, 10.0);
        let p = Point2::new;
        let err = EnvironmentMap::new(b, m(), vec![Wall::new(p(1.0, 1.0), p(11.0, 1.0), 1.0, 0)]);
        assert!(matches!(err, Err(GeometryError::WallOutsideBounds { index: 0 })));
        let err = EnvironmentMap::new(b, m(), vec![Wall::new(p(1.0, 1.0), p(1.0, 1.0), 1.0, 0)]);
        assert!(matches!(err, Err(GeometryError::DegenerateWall { index: 0, .. })));
        let err = EnvironmentMap::new(b, m(), vec![Wall::new(p(1.0, 1.0), p(2.0, 1.0), 0.0, 0)]);
        assert!(matches!(err, Err(GeometryError::InvalidHeight { index: 0, .. })));
        let mut dup = m();
        dup.extend(m());
        assert!(matches!(
            EnvironmentMap::new(b, dup, vec![]),
            Err(GeometryError::DuplicateMaterial { id: 0 })
        ));
        assert!(matches!(
            EnvironmentMap::from_json("{\"bounds\":"),
            Err(GeometryError::Parse(_))
        ));
    }

    #[test]
    fn point_segment_distance_cases() {
        let w = Wall::new(Point2::new(0.0, 0.0), Point2::new(10.0, 0.0), 1.0, 0);
        assert_eq!(
            point_segment_distance(Point2::new(5.0, 3.0), &w),
            (3.0, Point2::new(5.0, 0.0))
        );
        assert_eq!(
            point_segment_distance(Point2::new(-2.0, 0.0), &w),
            (2.0, Point2::new(0.0, 0.0))
        );
        let on = Point2::new(4.0, 0.0);
        assert_eq!(point_segment_distance(on, &w), (0.0, on));
    }

    #[test]
    fn nearest_walls_in_square_room() {
        let map = square_room();
        let f = nearest_walls(&map, Point2::new(2.0, 5.0), 2);
        assert_eq!(f.len(), 2);
        assert_eq!(f[0].wall_index, 0);
        assert_eq!(f[0].distance, 2.0);
        assert_eq!(f[0].orientation, PI);
        assert_eq!(f[1].wall_index, 2);
        assert_eq!(f[1].distance, 5.0);
        assert_eq!(f[1].orientation, -PI / 2.0);
    }

    #[test]
    fn nearest_walls_ties_follow_declaration_order() {
        let map = square_room();
        // equidistant from walls 0 (x=0) and 2 (y=0)
        let f = nearest_walls(&map, Point2::new(3.0, 3.0), 4);
        assert_eq!(f[0].wall_index, 0);
        assert_eq!(f[1].wall_index, 2);
        assert_eq!(f[0].distance, f[1].distance);
    }

    #[test]
    fn raster_free_space() {
        let map = EnvironmentMap::new(Rect::new(-50.0, -50.0, 50.0, 50.0), vec![], vec![]).unwrap();
        let r = rasterize(&map, Point2::new(0.0, 0.0), Point2::new(1.0, 1.0), 9, 0.5).unwrap();
        assert!(r.occupancy.iter().all(|&v| v == 0));
        assert_eq!(r.rx_marker.iter().map(|&v| v as usize).sum::<usize>(), 1);
        assert_eq!(r.rx_marker[r.cell(4, 4)], 1);
        assert_eq!(r.tx_marker.iter().map(|&v| v as usize).sum::<usize>(), 1);
        // tx at +1,+1 m from rx, 0.5 m cells: cell center offset 2 rows/cols
        assert_eq!(r.tx_marker[r.cell(6, 6)], 1);
    }

    #[test]
    fn raster_far_tx_is_absent() {
        let map = EnvironmentMap::new(Rect::new(-600.0, -600.0, 600.0, 600.0), vec![], vec![])
            .unwrap();
        let r = rasterize(&map, Point2::new(0.0, 0.0), Point2::new(500.0, 0.0), 9, 0.5).unwrap();
        assert!(r.tx_marker.iter().all(|&v| v == 0));
    }

    #[test]
    fn raster_rejects_even_window() {
        let map = square_room();
        assert!(matches!(
            rasterize(&map, Point2::new(5.0, 5.0), Point2::new(5.0, 5.0), 8, 0.5),
            Err(GeometryError::EvenWindow(8))
        ));
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(-PI), PI);
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
        assert_eq!(Point2::new(-1.0, -0.0).bearing(), PI);
    }
}
