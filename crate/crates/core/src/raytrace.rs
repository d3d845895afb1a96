//! Image-method multipath tracing in the horizontal plane.
//!
//! A path is either the direct line of sight or a chain of specular
//! reflections off an ordered wall sequence (no wall twice in a row). For each
//! sequence the transmitter is mirrored successively across the wall lines;
//! the path is then recovered by back-tracing from the receiver toward each
//! image, requiring every reflection point to fall strictly inside the wall
//! extent and every leg to be unoccluded.

use std::fmt::Write as _;

use num_complex::Complex64;

use crate::geometry::{EnvironmentMap, Point2, Wall, GEOM_EPS};
use crate::SPEED_OF_LIGHT;

/// Highest supported reflection order.
pub const MAX_REFLECTION_ORDER: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("reflection order {0} exceeds the cap of {MAX_REFLECTION_ORDER}")]
    OrderTooHigh(usize),
    #[error("carrier frequency must be positive and finite, got {0}")]
    BadFrequency(f64),
    #[error("min_path_gain must be finite and >= 0, got {0}")]
    BadCullThreshold(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TraceConfig {
    pub max_reflection_order: usize,
    /// Hz.
    pub carrier_frequency: f64,
    /// Paths with a smaller linear amplitude are dropped.
    pub min_path_gain: f64,
}

impl Default for TraceConfig {
    fn default() -> Self {
        TraceConfig {
            max_reflection_order: 2,
            carrier_frequency: 2.4e9,
            min_path_gain: 0.0,
        }
    }
}

impl TraceConfig {
    pub fn validate(&self) -> Result<(), TraceError> {
        if self.max_reflection_order > MAX_REFLECTION_ORDER {
            return Err(TraceError::OrderTooHigh(self.max_reflection_order));
        }
        if !(self.carrier_frequency.is_finite() && self.carrier_frequency > 0.0) {
            return Err(TraceError::BadFrequency(self.carrier_frequency));
        }
        if !(self.min_path_gain.is_finite() && self.min_path_gain >= 0.0) {
            return Err(TraceError::BadCullThreshold(self.min_path_gain));
        }
        Ok(())
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_frequency
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PathKind {
    Los,
    Reflection(usize),
}

impl PathKind {
    pub fn order(self) -> usize {
        match self {
            PathKind::Los => 0,
            PathKind::Reflection(r) => r,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropagationPath {
    pub kind: PathKind,
    /// TX, reflection points..., RX.
    pub vertices: Vec<Point2>,
    pub length: f64,
    /// Seconds.
    pub delay: f64,
    /// Complex amplitude at the carrier frequency.
    pub gain: Complex64,
    /// Departure bearing at TX.
    pub aod: f64,
    /// Bearing from RX toward the last interaction point (direction of arrival).
    pub aoa: f64,
    pub wall_ids: Vec<usize>,
}

impl PropagationPath {
    fn from_vertices(
        map: &EnvironmentMap,
        vertices: Vec<Point2>,
        wall_ids: Vec<usize>,
        frequency: f64,
    ) -> PropagationPath {
        let length = chain_length(&vertices);
        let n = vertices.len();
        let kind = if wall_ids.is_empty() {
            PathKind::Los
        } else {
            PathKind::Reflection(wall_ids.len())
        };
        PropagationPath {
            kind,
            gain: path_gain(&vertices, &wall_ids, map, frequency),
            aod: (vertices[1] - vertices[0]).bearing(),
            aoa: (vertices[n - 2] - vertices[n - 1]).bearing(),
            delay: length / SPEED_OF_LIGHT,
            length,
            vertices,
            wall_ids,
        }
    }

    /// Complex gain at another frequency. The amplitude stays at the carrier
    /// value; only the propagation phase is re-evaluated.
    pub fn gain_at(&self, frequency: f64) -> Complex64 {
        Complex64::from_polar(self.gain.norm(), propagation_phase(self.length, frequency))
    }
}

fn chain_length(vertices: &[Point2]) -> f64 {
    vertices.windows(2).map(|w| w[0].distance(w[1])).sum()
}

/// `-2 pi f L / c`, reduced to (-pi, pi].
pub fn propagation_phase(length: f64, frequency: f64) -> f64 {
    let cycles = (frequency * length / SPEED_OF_LIGHT).fract();
    crate::geometry::wrap_angle(-2.0 * std::f64::consts::PI * cycles)
}

/// Free-space amplitude times per-reflection material loss, with phase
/// `exp(-j 2 pi f L / c)`.
pub fn path_gain(
    vertices: &[Point2],
    wall_ids: &[usize],
    map: &EnvironmentMap,
    frequency: f64,
) -> Complex64 {
    let length = chain_length(vertices);
    let lambda = SPEED_OF_LIGHT / frequency;
    let mut amp = lambda / (4.0 * std::f64::consts::PI * length);
    for &w in wall_ids {
        amp *= map.wall_material(w).reflection_amplitude();
    }
    Complex64::from_polar(amp, propagation_phase(length, frequency))
}

/// Reflection of `p` across the infinite line through the wall.
pub fn mirror_point(p: Point2, wall: &Wall) -> Point2 {
    let d = wall.direction();
    let t = (p - wall.p0).dot(d) / d.dot(d);
    let foot = wall.p0 + d * t;
    foot * 2.0 - p
}

/// Crossing of segment `a`-`b` with the wall segment; it must clear the
/// endpoints of `a`-`b` by more than [`GEOM_EPS`] meters. With `closed_wall`
/// the wall endpoints count (with [`GEOM_EPS`] slack), otherwise the crossing
/// must also clear them. Bounce points use the strict form; occlusion uses the
/// closed form so rays cannot slip through shared polygon corners.
fn crossing(a: Point2, b: Point2, wall: &Wall, closed_wall: bool) -> Option<(f64, Point2)> {
    let r = b - a;
    let s = wall.direction();
    let denom = r.cross(s);
    let len_r = r.norm();
    let len_s = s.norm();
    if denom.abs() <= 1e-12 * len_r * len_s {
        return None;
    }
    let q = wall.p0 - a;
    let t = q.cross(s) / denom;
    let u = q.cross(r) / denom;
    let strictly_inside = t * len_r > GEOM_EPS && (1.0 - t) * len_r > GEOM_EPS;
    let on_wall = if closed_wall {
        u * len_s >= -GEOM_EPS && (1.0 - u) * len_s >= -GEOM_EPS
    } else {
        u * len_s > GEOM_EPS && (1.0 - u) * len_s > GEOM_EPS
    };
    if strictly_inside && on_wall {
        Some((t, wall.p0 + s * u))
    } else {
        None
    }
}

/// True iff the open segment `a`-`b` crosses the (closed) wall. Contacts at
/// the segment's own endpoints and parallel walls do not occlude.
pub fn segment_occludes(a: Point2, b: Point2, wall: &Wall) -> bool {
    crossing(a, b, wall, true).is_some()
}

/// Precomputed image sources for one transmitter position.
#[derive(Debug, Clone)]
struct ImageNode {
    walls: [usize; MAX_REFLECTION_ORDER],
    order: usize,
    /// `images[j]` = TX mirrored across walls[0..=j].
    images: [Point2; MAX_REFLECTION_ORDER],
}

/// Traces paths from one fixed transmitter to many receivers.
#[derive(Debug, Clone)]
pub struct Tracer<'a> {
    map: &'a EnvironmentMap,
    cfg: TraceConfig,
    tx: Point2,
    active: Vec<usize>,
    nodes: Vec<ImageNode>,
}

impl<'a> Tracer<'a> {
    /// All walls participate.
    pub fn new(map: &'a EnvironmentMap, cfg: TraceConfig, tx: Point2) -> Result<Self, TraceError> {
        Self::with_active_walls(map, cfg, tx, (0..map.walls().len()).collect())
    }

    /// Only walls taller than both antennas block or reflect.
    pub fn with_heights(
        map: &'a EnvironmentMap,
        cfg: TraceConfig,
        tx: Point2,
        tx_height: f64,
        rx_height: f64,
    ) -> Result<Self, TraceError> {
        let active = map
            .walls()
            .iter()
            .enumerate()
            .filter(|(_, w)| w.height > tx_height && w.height > rx_height)
            .map(|(i, _)| i)
            .collect();
        Self::with_active_walls(map, cfg, tx, active)
    }

    fn with_active_walls(
        map: &'a EnvironmentMap,
        cfg: TraceConfig,
        tx: Point2,
        active: Vec<usize>,
    ) -> Result<Self, TraceError> {
        cfg.validate()?;
        let mut nodes = Vec::new();
        let mut frontier: Vec<ImageNode> = Vec::new();
        for order in 1..=cfg.max_reflection_order {
            let mut next = Vec::new();
            if order == 1 {
                for &w in &active {
                    let mut node = ImageNode {
                        walls: [0; MAX_REFLECTION_ORDER],
                        order: 1,
                        images: [Point2::default(); MAX_REFLECTION_ORDER],
                    };
                    node.walls[0] = w;
                    node.images[0] = mirror_point(tx, &map.walls()[w]);
                    next.push(node);
                }
            } else {
                for parent in &frontier {
                    let last = parent.walls[parent.order - 1];
                    for &w in &active {
                        if w == last {
                            continue;
                        }
                        let mut node = parent.clone();
                        node.walls[order - 1] = w;
                        node.images[order - 1] =
                            mirror_point(parent.images[order - 2], &map.walls()[w]);
                        node.order = order;
                        next.push(node);
                    }
                }
            }
            nodes.extend(next.iter().cloned());
            frontier = next;
        }
        Ok(Tracer {
            map,
            cfg,
            tx,
            active,
            nodes,
        })
    }

    pub fn config(&self) -> &TraceConfig {
        &self.cfg
    }

    pub fn transmitter(&self) -> Point2 {
        self.tx
    }

    fn leg_clear(&self, a: Point2, b: Point2) -> bool {
        a.distance(b) > GEOM_EPS
            && !self
                .active
                .iter()
                .any(|&w| segment_occludes(a, b, &self.map.walls()[w]))
    }

    fn back_trace(&self, node: &ImageNode, rx: Point2) -> Option<Vec<Point2>> {
        let walls = self.map.walls();
        let mut points = [Point2::default(); MAX_REFLECTION_ORDER];
        let mut target = rx;
        for j in (0..node.order).rev() {
            let (_, hit) = crossing(target, node.images[j], &walls[node.walls[j]], false)?;
            points[j] = hit;
            target = hit;
        }
        let mut vertices = Vec::with_capacity(node.order + 2);
        vertices.push(self.tx);
        vertices.extend_from_slice(&points[..node.order]);
        vertices.push(rx);
        if vertices.windows(2).all(|leg| self.leg_clear(leg[0], leg[1])) {
            Some(vertices)
        } else {
            None
        }
    }

    /// All valid paths to `rx`, sorted by delay, then kind, then wall sequence.
    pub fn trace(&self, rx: Point2) -> Vec<PropagationPath> {
        let f = self.cfg.carrier_frequency;
        let mut paths = Vec::new();
        if self.leg_clear(self.tx, rx) {
            paths.push(PropagationPath::from_vertices(
                self.map,
                vec![self.tx, rx],
                Vec::new(),
                f,
            ));
        }
        for node in &self.nodes {
            if let Some(vertices) = self.back_trace(node, rx) {
                paths.push(PropagationPath::from_vertices(
                    self.map,
                    vertices,
                    node.walls[..node.order].to_vec(),
                    f,
                ));
            }
        }
        paths.retain(|p| p.gain.norm() >= self.cfg.min_path_gain);
        sort_paths(&mut paths);
        paths
    }
}

pub fn sort_paths(paths: &mut [PropagationPath]) {
    paths.sort_by(|a, b| {
        a.delay
            .total_cmp(&b.delay)
            .then_with(|| a.kind.cmp(&b.kind))
            .then_with(|| a.wall_ids.cmp(&b.wall_ids))
    });
}

/// The direct path, if no wall occludes it.
pub fn line_of_sight(
    map: &EnvironmentMap,
    tx: Point2,
    rx: Point2,
    frequency: f64,
) -> Option<PropagationPath> {
    if tx.distance(rx) <= GEOM_EPS
        || map.walls().iter().any(|w| segment_occludes(tx, rx, w))
    {
        return None;
    }
    Some(PropagationPath::from_vertices(
        map,
        vec![tx, rx],
        Vec::new(),
        frequency,
    ))
}

/// LOS plus every specular path up to `cfg.max_reflection_order`.
pub fn trace_paths(
    map: &EnvironmentMap,
    tx: Point2,
    rx: Point2,
    cfg: &TraceConfig,
) -> Result<Vec<PropagationPath>, TraceError> {
    Ok(Tracer::new(map, *cfg, tx)?.trace(rx))
}

pub const PATH_CSV_HEADER: &str = "kind,order,length_m,delay_s,gain_re,gain_im,aod_rad,aoa_rad,wall_ids";

/// Debug dump, one CSV row per path. `wall_ids` are `;`-separated.
pub fn paths_to_csv(paths: &[PropagationPath]) -> String {
    let mut out = String::from(PATH_CSV_HEADER);
    out.push('\n');
    for p in paths {
        let kind = match p.kind {
            PathKind::Los => "los",
            PathKind::Reflection(_) => "reflection",
        };
        let ids: Vec<String> = p.wall_ids.iter().map(|w| w.to_string()).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            kind,
            p.kind.order(),
            p.length,
            p.delay,
            p.gain.re,
            p.gain.im,
            p.aod,
            p.aoa,
            ids.join(";")
        );
    }
    out
}
