//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use csiforge::channel::{ArrayConfig, OfdmConfig};
use csiforge::dataset::{build_dataset, Dataset, GridSpec};
use csiforge::geometry::{EnvironmentMap, Material, Point2, Point3, Rect, Wall};
use csiforge::raytrace::TraceConfig;
use rand::Rng;

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

/// 12 m x 12 m concrete courtyard.
pub fn courtyard() -> EnvironmentMap {
    csiforge::geometry::load_environment(&data_path("courtyard.json")).expect("courtyard map")
}

/// 21 x 21 UE grid at 0.1 m spacing, base station on the grid's x axis.
pub fn reference_grid() -> GridSpec {
    GridSpec {
        region: Rect::new(5.0, 5.0, 7.0, 7.0),
        spacing: 0.1,
        ue_height: 1.5,
        bs_position: Point3::new(1.0, 6.0, 3.0),
    }
}

pub fn reference_dataset(seed: u64) -> Dataset {
    build_dataset(
        &courtyard(),
        &reference_grid(),
        &ArrayConfig::default(),
        &OfdmConfig::default(),
        &TraceConfig::default(),
        seed,
    )
    .expect("reference dataset")
}

pub fn material(id: u32, loss_db: f64) -> Material {
    Material {
        id,
        name: format!("m{id}"),
        reflection_loss_db: loss_db,
    }
}

pub fn free_map(half: f64) -> EnvironmentMap {
    EnvironmentMap::new(Rect::new(-half, -half, half, half), vec![material(0, 0.0)], vec![]).unwrap()
}

/// Random segments in `[0, size]^2`, each at least 1 m long.
pub fn random_map(rng: &mut impl Rng, max_walls: usize, size: f64) -> EnvironmentMap {
    let n = rng.gen_range(1..=max_walls);
    let mats = vec![material(1, 3.0), material(2, 7.5)];
    let mut walls = Vec::with_capacity(n);
    while walls.len() < n {
        let p0 = Point2::new(rng.gen_range(0.0..size), rng.gen_range(0.0..size));
        let p1 = Point2::new(rng.gen_range(0.0..size), rng.gen_range(0.0..size));
        if p0.distance(p1) < 1.0 {
            continue;
        }
        walls.push(Wall::new(p0, p1, 3.0, rng.gen_range(1..=2)));
    }
    EnvironmentMap::new(Rect::new(0.0, 0.0, size, size), mats, walls).unwrap()
}

pub fn random_point_clear_of_walls(rng: &mut impl Rng, map: &EnvironmentMap, clearance: f64) -> Point2 {
    let b = map.bounds();
    loop {
        let p = Point2::new(rng.gen_range(b.xmin..b.xmax), rng.gen_range(b.ymin..b.ymax));
        if map
            .walls()
            .iter()
            .all(|w| csiforge::geometry::point_segment_distance(p, w).0 > clearance)
        {
            return p;
        }
    }
}

// ---------------------------------------------------------------------------
// Brute-force path oracle.
//
// For every wall sequence (no immediate repeats) it minimizes the total path
// length over the positions of the bounce points on the wall lines. Each term
// is the norm of an affine map, so the length is convex and its minimizer is
// found by bisection on the (monotone) derivative. A minimizer is a specular
// path when every bounce point lies inside its wall and both neighbours are on
// the same side of the wall. Legs are then checked for occlusion with a plain
// segment-intersection test.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct OraclePath {
    pub walls: Vec<usize>,
    pub vertices: Vec<Point2>,
    pub length: f64,
}

/// Returned when some candidate sits within the ambiguity margin of a
/// decision boundary (bounce point near a wall end, grazing occluder); such
/// scenes are skipped by callers.
#[derive(Debug)]
pub struct Ambiguous;

const AMBIGUITY: f64 = 1e-6;

fn on_line(w: &Wall, t: f64) -> Point2 {
    w.p0 + (w.p1 - w.p0) * t
}

fn unit(v: Point2) -> Point2 {
    let n = v.norm();
    if n == 0.0 {
        Point2::new(0.0, 0.0)
    } else {
        v * (1.0 / n)
    }
}

/// Root of a non-decreasing function by bisection over a bracket that is
/// widened until it contains a sign change.
fn bisect_root(f: impl Fn(f64) -> f64) -> f64 {
    let mut lo = -1.0;
    let mut hi = 2.0;
    while f(lo) > 0.0 {
        lo = lo * 2.0 - 1.0;
        if lo < -1e9 {
            break;
        }
    }
    while f(hi) < 0.0 {
        hi = hi * 2.0 + 1.0;
        if hi > 1e9 {
            break;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// d/dt of |a - P(t)| + |P(t) - b| for P on the wall line.
fn bounce_derivative(a: Point2, b: Point2, w: &Wall, t: f64) -> f64 {
    let p = on_line(w, t);
    let d = w.p1 - w.p0;
    (unit(p - a) + unit(p - b)).dot(d)
}

fn solve_one(a: Point2, b: Point2, w: &Wall) -> f64 {
    bisect_root(|t| bounce_derivative(a, b, w, t))
}

fn solve_two(a: Point2, b: Point2, w1: &Wall, w2: &Wall) -> (f64, f64) {
    let inner = |t1: f64| solve_one(on_line(w1, t1), b, w2);
    // Envelope theorem: derivative of the partially minimized length.
    let outer = |t1: f64| {
        let t2 = inner(t1);
        bounce_derivative(a, on_line(w2, t2), w1, t1)
    };
    let t1 = bisect_root(outer);
    (t1, inner(t1))
}

fn side(w: &Wall, p: Point2) -> f64 {
    (w.p1 - w.p0).cross(p - w.p0)
}

/// Proper intersection of open segments a-b and wall, with ambiguity check.
fn leg_blocked(a: Point2, b: Point2, w: &Wall) -> Result<bool, Ambiguous> {
    let r = b - a;
    let s = w.p1 - w.p0;
    let denom = r.cross(s);
    if denom.abs() < 1e-12 * r.norm() * s.norm() {
        return Ok(false);
    }
    let q = w.p0 - a;
    let t = q.cross(s) / denom;
    let u = q.cross(r) / denom;
    let (lt, lu) = (t * r.norm(), u * s.norm());
    let (mt, mu) = ((1.0 - t) * r.norm(), (1.0 - u) * s.norm());
    let near = |x: f64| x.abs() < AMBIGUITY;
    if (near(lt) || near(mt)) && lu > -AMBIGUITY && mu > -AMBIGUITY {
        // Touching at a leg endpoint: endpoints lie on their own walls.
        return Ok(false);
    }
    if (near(lu) || near(mu)) && lt > 0.0 && mt > 0.0 {
        return Err(Ambiguous);
    }
    Ok(lt > 0.0 && mt > 0.0 && lu > 0.0 && mu > 0.0)
}

fn legs_clear(map: &EnvironmentMap, verts: &[Point2], walls: &[usize]) -> Result<bool, Ambiguous> {
    // A decisive block anywhere outranks a near-boundary case elsewhere.
    let mut ambiguous = false;
    for leg in 0..verts.len() - 1 {
        let (a, b) = (verts[leg], verts[leg + 1]);
        for (wi, w) in map.walls().iter().enumerate() {
            let touches = (leg > 0 && walls[leg - 1] == wi) || (leg < walls.len() && walls[leg] == wi);
            if touches {
                continue;
            }
            match leg_blocked(a, b, w) {
                Ok(true) => return Ok(false),
                Ok(false) => {}
                Err(Ambiguous) => ambiguous = true,
            }
        }
    }
    if ambiguous {
        Err(Ambiguous)
    } else {
        Ok(true)
    }
}

fn specular(verts: &[Point2], ts: &[f64], walls: &[&Wall]) -> Result<bool, Ambiguous> {
    let mut ambiguous = false;
    for (i, (&t, w)) in ts.iter().zip(walls).enumerate() {
        let len = w.length();
        let (s_in, s_out) = (side(w, verts[i]), side(w, verts[i + 2]));
        let margin = AMBIGUITY * len;
        let (from_p0, from_p1) = (t * len, (1.0 - t) * len);
        if from_p0 < -AMBIGUITY || from_p1 < -AMBIGUITY {
            return Ok(false);
        }
        if (s_in < -margin && s_out > margin) || (s_in > margin && s_out < -margin) {
            return Ok(false);
        }
        if from_p0 < AMBIGUITY || from_p1 < AMBIGUITY || s_in.abs() < margin || s_out.abs() < margin {
            ambiguous = true;
        }
    }
    if ambiguous {
        Err(Ambiguous)
    } else {
        Ok(true)
    }
}

/// All LOS and specular paths up to `order` (at most 2).
pub fn brute_force_paths(map: &EnvironmentMap, tx: Point2, rx: Point2, order: usize) -> Result<Vec<OraclePath>, Ambiguous> {
    assert!(order <= 2, "oracle supports order <= 2");
    let walls = map.walls();
    let mut out = Vec::new();
    if legs_clear(map, &[tx, rx], &[])? {
        out.push(OraclePath {
            walls: vec![],
            vertices: vec![tx, rx],
            length: tx.distance(rx),
        });
    }
    if order >= 1 {
        for (i, w) in walls.iter().enumerate() {
            let t = solve_one(tx, rx, w);
            let p = on_line(w, t);
            let verts = vec![tx, p, rx];
            if specular(&verts, &[t], &[w])? && legs_clear(map, &verts, &[i])? {
                out.push(OraclePath {
                    walls: vec![i],
                    length: tx.distance(p) + p.distance(rx),
                    vertices: verts,
                });
            }
        }
    }
    if order >= 2 {
        for (i, w1) in walls.iter().enumerate() {
            for (j, w2) in walls.iter().enumerate() {
                if i == j {
                    continue;
                }
                let (t1, t2) = solve_two(tx, rx, w1, w2);
                let (p1, p2) = (on_line(w1, t1), on_line(w2, t2));
                let verts = vec![tx, p1, p2, rx];
                if specular(&verts, &[t1, t2], &[w1, w2])? && legs_clear(map, &verts, &[i, j])? {
                    out.push(OraclePath {
                        walls: vec![i, j],
                        length: tx.distance(p1) + p1.distance(p2) + p2.distance(rx),
                        vertices: verts,
                    });
                }
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Finite differences.
// ---------------------------------------------------------------------------

pub const FD_STEP: f64 = 1e-6;

/// Central-difference gradient of `f` at `x`.
pub fn numeric_grad(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = xp[i];
            xp[i] = orig + FD_STEP;
            let up = f(&xp);
            xp[i] = orig - FD_STEP;
            let down = f(&xp);
            xp[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// `max |a - n| / max(|a|, |n|, floor)` over all components.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Channel oracles.
// ---------------------------------------------------------------------------

pub const C: f64 = 299_792_458.0;

/// One 0 dB wall on y = 0 with tx (0,5) and rx (10,5).
pub fn two_ray_scene() -> (EnvironmentMap, Point2, Point2) {
    let map = EnvironmentMap::new(
        Rect::new(-20.0, -20.0, 30.0, 30.0),
        vec![material(0, 0.0)],
        vec![Wall::new(Point2::new(-10.0, 0.0), Point2::new(20.0, 0.0), 3.0, 0)],
    )
    .unwrap();
    (map, Point2::new(0.0, 5.0), Point2::new(10.0, 5.0))
}

/// |direct + image| for the two-ray scene, from the image-source geometry.
pub fn two_ray_magnitude(fc: f64, df: f64, num_sc: usize, k: usize) -> f64 {
    let l1 = 10.0f64;
    let l2 = (10.0f64 * 10.0 + 10.0 * 10.0).sqrt();
    let lambda = C / fc;
    let a1 = lambda / (4.0 * std::f64::consts::PI * l1);
    let a2 = lambda / (4.0 * std::f64::consts::PI * l2);
    let f = fc + (k as f64 - (num_sc as f64 - 1.0) / 2.0) * df;
    let dphi = 2.0 * std::f64::consts::PI * f * (l2 - l1) / C;
    (a1 * a1 + a2 * a2 + 2.0 * a1 * a2 * dphi.cos()).sqrt()
}

/// Difference of two angles mapped to (-pi, pi].
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let tau = 2.0 * std::f64::consts::PI;
    let mut d = (a - b) % tau;
    if d > std::f64::consts::PI {
        d -= tau;
    } else if d <= -std::f64::consts::PI {
        d += tau;
    }
    d
}

pub struct PhaseSlopeCase {
    pub tx: Point2,
    pub rx: Point2,
    pub array: ArrayConfig,
    pub ofdm: OfdmConfig,
}

pub fn random_phase_slope_case(rng: &mut impl Rng) -> PhaseSlopeCase {
    let tx = Point2::new(rng.gen_range(-40.0..40.0), rng.gen_range(-40.0..40.0));
    let rx = Point2::new(rng.gen_range(-40.0..40.0), rng.gen_range(-40.0..40.0));
    PhaseSlopeCase {
        tx,
        rx,
        array: ArrayConfig {
            n_h: rng.gen_range(1..=4),
            n_v: rng.gen_range(1..=4),
            spacing: rng.gen_range(0.1..1.0),
            boresight: rng.gen_range(-3.0..3.0),
        },
        ofdm: OfdmConfig {
            carrier_frequency: rng.gen_range(0.8e9..6e9),
            subcarrier_spacing: rng.gen_range(15e3..480e3),
            num_subcarriers: rng.gen_range(2..=32),
            symbols_per_slot: 14,
        },
    }
}

/// Worst deviation of the per-subcarrier phase step from `-2 pi df tau`.
pub fn phase_slope_error(case: &PhaseSlopeCase, h: &csiforge::channel::CsiMatrix) -> f64 {
    let tau = case.tx.distance(case.rx) / C;
    let expected = -2.0 * std::f64::consts::PI * case.ofdm.subcarrier_spacing * tau;
    let mut worst = 0.0f64;
    for t in 0..h.n_tx() {
        for k in 0..h.n_sc() - 1 {
            let step = h.get(t, k + 1).arg() - h.get(t, k).arg();
            worst = worst.max(angle_diff(step, expected).abs());
        }
    }
    worst
}

// ---------------------------------------------------------------------------
// Gradient checks. Each returns the worst relative error between the
// analytic gradient and central differences for one random shape. Scalar
// objectives are `sum(R * y)` with a fixed random `R`.
// ---------------------------------------------------------------------------

pub mod grad {
    use super::{max_rel_err, numeric_grad};
    use csiforge::features::FeatureConfig;
    use csiforge::learn::layers::*;
    use csiforge::learn::loss::{smooth_l1, smooth_l1_grad};
    use csiforge::learn::mlp::Mlp;
    use csiforge::learn::model::{ConvSpec, CsiModel, ModelInput, ModelIo, ModelSpec};
    use csiforge::learn::vae::Vae;
    use csiforge::learn::Tensor;
    use rand::seq::SliceRandom;
    use rand::Rng;

    /// Relative-error floor: components whose gradient is below this are
    /// compared in absolute terms.
    pub const FLOOR: f64 = 1e-3;

    fn normals(rng: &mut impl Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn weighted(y: &Tensor, r: &[f64]) -> f64 {
        y.data().iter().zip(r).map(|(a, b)| a * b).sum()
    }

    pub fn dense(rng: &mut impl Rng) -> f64 {
        let (rows, inp, out) = (rng.gen_range(1..=4), rng.gen_range(1..=10), rng.gen_range(1..=10));
        let xs = if rows == 1 && rng.gen_bool(0.5) { vec![inp] } else { vec![rows, inp] };
        let x = normals(rng, rows * inp);
        let w = normals(rng, out * inp);
        let b = normals(rng, out);
        let r = normals(rng, rows * out);
        let f = |x: &[f64], w: &[f64], b: &[f64]| {
            let y = dense_forward(&Tensor::new(xs.clone(), x.to_vec()), &Tensor::new(vec![out, inp], w.to_vec()), &Tensor::from_vec(b.to_vec())).unwrap();
            weighted(&y, &r)
        };
        let g = dense_backward(&Tensor::new(xs.clone(), x.clone()), &Tensor::new(vec![out, inp], w.clone()), &Tensor::new(vec![rows * out], r.clone())).unwrap();
        let nx = numeric_grad(&x, |v| f(v, &w, &b));
        let nw = numeric_grad(&w, |v| f(&x, v, &b));
        let nb = numeric_grad(&b, |v| f(&x, &w, v));
        max_rel_err(g.dx.data(), &nx, FLOOR)
            .max(max_rel_err(g.dw.data(), &nw, FLOOR))
            .max(max_rel_err(g.db.data(), &nb, FLOOR))
    }

    pub fn conv2d(rng: &mut impl Rng) -> f64 {
        let (ci, co) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
        let (h, wd) = (rng.gen_range(1..=7), rng.gen_range(1..=7));
        let k = *[1usize, 3, 5].choose(rng).unwrap();
        let x = normals(rng, ci * h * wd);
        let w = normals(rng, co * ci * k * k);
        let b = normals(rng, co);
        let r = normals(rng, co * h * wd);
        let xt = |v: &[f64]| Tensor::new(vec![ci, h, wd], v.to_vec());
        let wt = |v: &[f64]| Tensor::new(vec![co, ci, k, k], v.to_vec());
        let f = |x: &[f64], w: &[f64], b: &[f64]| weighted(&conv2d_forward(&xt(x), &wt(w), &Tensor::from_vec(b.to_vec())).unwrap(), &r);
        let g = conv2d_backward(&xt(&x), &wt(&w), &Tensor::new(vec![co, h, wd], r.clone())).unwrap();
        let nx = numeric_grad(&x, |v| f(v, &w, &b));
        let nw = numeric_grad(&w, |v| f(&x, v, &b));
        let nb = numeric_grad(&b, |v| f(&x, &w, v));
        max_rel_err(g.dx.data(), &nx, FLOOR)
            .max(max_rel_err(g.dw.data(), &nw, FLOOR))
            .max(max_rel_err(g.db.data(), &nb, FLOOR))
    }

    /// Inputs are a shuffled ladder with 0.01 spacing so no window is near a tie.
    pub fn maxpool(rng: &mut impl Rng) -> f64 {
        let p = rng.gen_range(1..=3);
        let (c, h, w) = (rng.gen_range(1..=3), rng.gen_range(p..=3 * p + 2), rng.gen_range(p..=3 * p + 2));
        let n = c * h * w;
        let mut x: Vec<f64> = (0..n).map(|i| i as f64 * 0.01 - 1.0).collect();
        x.shuffle(rng);
        let shape = vec![c, h, w];
        let out = maxpool_forward(&Tensor::new(shape.clone(), x.clone()), p).unwrap();
        let r = normals(rng, out.y.len());
        let dx = maxpool_backward(&shape, &out.argmax, &Tensor::new(out.y.shape().to_vec(), r.clone())).unwrap();
        let nx = numeric_grad(&x, |v| weighted(&maxpool_forward(&Tensor::new(shape.clone(), v.to_vec()), p).unwrap().y, &r));
        max_rel_err(dx.data(), &nx, FLOOR)
    }

    /// Inputs stay at least 1e-3 away from the kink.
    pub fn relu(rng: &mut impl Rng) -> f64 {
        let n = rng.gen_range(1..=64);
        let x: Vec<f64> = (0..n)
            .map(|_| {
                let m = rng.gen_range(1e-3..2.0);
                if rng.gen_bool(0.5) { m } else { -m }
            })
            .collect();
        let r = normals(rng, n);
        let dx = relu_backward(&Tensor::from_vec(x.clone()), &Tensor::from_vec(r.clone())).unwrap();
        let nx = numeric_grad(&x, |v| weighted(&relu_forward(&Tensor::from_vec(v.to_vec())), &r));
        max_rel_err(dx.data(), &nx, FLOOR)
    }

    pub fn softplus_layer(rng: &mut impl Rng) -> f64 {
        let n = rng.gen_range(1..=64);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-30.0..30.0)).collect();
        let r = normals(rng, n);
        let analytic: Vec<f64> = x.iter().zip(&r).map(|(&v, &g)| g * softplus_grad(v)).collect();
        let nx = numeric_grad(&x, |v| v.iter().zip(&r).map(|(&a, &g)| g * softplus(a)).sum());
        max_rel_err(&analytic, &nx, FLOOR)
    }

    /// Targets are scaled so both branches are exercised, away from `s = 1`.
    pub fn smooth_l1_loss(rng: &mut impl Rng) -> f64 {
        let n = rng.gen_range(1..=48);
        let pred = normals(rng, n);
        let mut d = normals(rng, n);
        let norm: f64 = d.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-3);
        let mut s_target = rng.gen_range(0.01..4.0);
        if (s_target - 1.0f64).abs() < 0.01 {
            s_target += 0.05;
        }
        for v in &mut d {
            *v *= s_target.sqrt() / norm;
        }
        let target: Vec<f64> = pred.iter().zip(&d).map(|(p, dd)| p - dd).collect();
        let g = smooth_l1_grad(&pred, &target).unwrap();
        let ng = numeric_grad(&pred, |p| smooth_l1(p, &target).unwrap());
        max_rel_err(&g, &ng, FLOOR)
    }

    fn random_spec(rng: &mut impl Rng, kind: &str) -> ModelSpec {
        let wall_k = rng.gen_range(1..=3);
        let pe_freqs = rng.gen_range(1..=2);
        let raster_size = 5;
        let num_materials = rng.gen_range(1..=2);
        let conv = rng.gen_bool(0.5).then(|| ConvSpec {
            channels: vec![rng.gen_range(1..=2); rng.gen_range(1..=2)],
            kernel: 3,
            pool: 2,
        });
        let depth = if kind == "vae" { 1 } else { rng.gen_range(1..=2) };
        ModelSpec {
            kind: kind.into(),
            conv,
            use_walls: rng.gen_bool(0.7),
            hidden: (0..depth).map(|_| rng.gen_range(2..=6)).collect(),
            latent_dim: if kind == "vae" { rng.gen_range(1..=4) } else { 0 },
            kl_weight: if kind == "vae" { rng.gen_range(0.0..0.5) } else { 0.0 },
            io: ModelIo {
                wall_len: 3 * wall_k,
                pos_enc_len: 4 * pe_freqs,
                raster_size,
                num_materials,
                n_tx: rng.gen_range(1..=3),
                n_sc: rng.gen_range(1..=3),
            },
            features: FeatureConfig { wall_k, pe_freqs, raster_size, raster_res: 0.5 },
        }
    }

    fn random_input(rng: &mut impl Rng, spec: &ModelSpec) -> ModelInput {
        let io = spec.io;
        let pos_enc = normals(rng, io.pos_enc_len);
        let mut dense = if spec.use_walls { normals(rng, io.wall_len) } else { vec![] };
        dense.extend_from_slice(&pos_enc);
        let raster = spec.conv.as_ref().map(|_| {
            let c = io.raster_channels();
            let s = io.raster_size;
            Tensor::new(vec![c, s, s], (0..c * s * s).map(|_| rng.gen_range(0.0..1.0)).collect())
        });
        ModelInput { dense, pos_enc, raster }
    }

    /// Whole-model objective gradient for a random small spec of `kind`.
    /// Parameters (biases included) are drawn at random so no ReLU sits at
    /// its kink.
    pub fn model_loss(rng: &mut impl Rng, kind: &str) -> f64 {
        let spec = random_spec(rng, kind);
        let model: Box<dyn CsiModel> = match kind {
            "vae" => Box::new(Vae::new(spec.clone()).unwrap()),
            _ => Box::new(Mlp::new(spec.clone()).unwrap()),
        };
        let mut params = model.init_params(rng.gen());
        let theta: Vec<f64> = (0..params.num_scalars()).map(|_| rng.gen_range(-0.6..0.6)).collect();
        params.load_flat(&theta).unwrap();
        let input = random_input(rng, &spec);
        let n = spec.io.csi_len();
        let amp_scale = rng.gen_range(0.1..2.0);
        let target: Vec<f64> = (0..2 * n)
            .map(|i| if i < n { rng.gen_range(0.0..amp_scale) } else { rng.gen_range(-3.0..3.0) })
            .collect();
        let seed: u64 = rng.gen();
        let mut grads = params.zeros_like();
        model.loss_and_grad(&params, &input, &target, seed, &mut grads).unwrap();
        let mut scratch = params.clone();
        let numeric = numeric_grad(&theta, |v| {
            scratch.load_flat(v).unwrap();
            let mut g = scratch.zeros_like();
            model.loss_and_grad(&scratch, &input, &target, seed, &mut g).unwrap()
        });
        max_rel_err(&grads.flatten(), &numeric, FLOOR)
    }
}
