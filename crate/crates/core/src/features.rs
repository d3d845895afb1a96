//! Model-input records and the on-disk feature cache.
//!
//! A [`FeatureRecord`] binds, for one RX position, the nearest-wall geometry,
//! a raster window of the map around the RX (with the BS marked), a sinusoidal
//! encoding of the position, and the amplitude/phase split of the target CSI.
//! All parts are always computed from the same sample position.
//!
//! Cache entries (`CSIF`) follow the dataset container conventions:
//!
//! ```text
//! "CSIF" | u32 version=1 | 32-byte key | u64 meta_len | meta JSON | u64 N
//!   N x ( f64 x, y, z | wall_feats | raster planes | pos_enc | amp | phase )
//! u32 CRC32
//! ```

use std::f64::consts::PI;
use std::fs::OpenOptions;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio::{self, ByteReader, ByteWriter, FormatError};
use crate::channel::{CsiMatrix, CsiSample};
use crate::dataset::{Dataset, DatasetMeta};
use crate::geometry::{self, EnvironmentMap, GeometryError, Point2, Rect};

pub const FEATURE_MAGIC: &[u8; 4] = b"CSIF";
pub const FEATURE_VERSION: u32 = 1;
/// Row used for missing walls: maximally distant, zero bearing.
pub const WALL_SENTINEL: [f64; 3] = [1.0, 0.0, 0.0];
/// Environment variable overriding the cache directory.
pub const CACHE_DIR_ENV: &str = "CSIFORGE_CACHE_DIR";

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("position ({x}, {y}) lies outside the grid region {region:?}")]
    OutsideRegion { x: f64, y: f64, region: Rect },
    #[error("map hash {map} does not match dataset map hash {dataset}")]
    MapMismatch { map: String, dataset: String },
    #[error("invalid feature config: {0}")]
    BadConfig(String),
    #[error("cache entry key mismatch")]
    KeyMismatch,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Format(#[from] FormatError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// Number of nearest walls per record.
    pub wall_k: usize,
    /// Positional-encoding frequencies per axis.
    pub pe_freqs: usize,
    /// Raster window side, in cells (odd).
    pub raster_size: usize,
    /// Raster cell size, meters.
    pub raster_res: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            wall_k: 5,
            pe_freqs: 6,
            raster_size: 33,
            raster_res: 0.5,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.wall_k == 0 || self.pe_freqs == 0 {
            return Err(FeatureError::BadConfig("wall_k and pe_freqs must be positive".into()));
        }
        if self.raster_size == 0 || self.raster_size.is_multiple_of(2) {
            return Err(FeatureError::BadConfig(format!(
                "raster_size must be odd, got {}",
                self.raster_size
            )));
        }
        if !(self.raster_res.is_finite() && self.raster_res > 0.0) {
            return Err(FeatureError::BadConfig(format!("raster_res {}", self.raster_res)));
        }
        Ok(())
    }

    pub fn pos_enc_len(&self) -> usize {
        2 * self.pe_freqs * 2
    }

    pub fn raster_len(&self) -> usize {
        4 * self.raster_size * self.raster_size
    }
}

/// `sin(2^f pi u_d), cos(2^f pi u_d)` with `u` the position mapped to [-1, 1]^2,
/// ordered axis-major, then frequency, then sin/cos.
pub fn positional_encoding(p: Point2, region: &Rect, freqs: usize) -> Vec<f64> {
    let norm = |v: f64, lo: f64, hi: f64| {
        if hi > lo {
            (2.0 * (v - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0)
        } else {
            0.0
        }
    };
    let u = [
        norm(p.x, region.xmin, region.xmax),
        norm(p.y, region.ymin, region.ymax),
    ];
    let mut out = Vec::with_capacity(4 * freqs);
    for ud in u {
        for f in 0..freqs {
            let arg = f64::from(1u32 << f) * PI * ud;
            out.push(arg.sin());
            out.push(arg.cos());
        }
    }
    out
}

/// Entrywise magnitude and principal argument in (-pi, pi]. Zero entries get
/// phase 0.
pub fn amp_phase_decompose(h: &CsiMatrix) -> (Vec<f64>, Vec<f64>) {
    h.as_slice()
        .iter()
        .map(|c| {
            let amp = c.norm();
            let phase = if amp == 0.0 {
                0.0
            } else {
                geometry::wrap_angle(c.arg())
            };
            (amp, phase)
        })
        .unzip()
}

pub fn amp_phase_recompose(amp: &[f64], phase: &[f64]) -> Vec<Complex64> {
    amp.iter()
        .zip(phase)
        .map(|(&a, &p)| Complex64::from_polar(a, p))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub position: geometry::Point3,
    /// `wall_k` rows of (distance / region diagonal, sin, cos).
    pub wall_feats: Vec<f64>,
    /// Planes occupancy, material index, TX marker, RX marker; each row-major.
    pub raster: Vec<f64>,
    pub pos_enc: Vec<f64>,
    pub target_amp: Vec<f64>,
    pub target_phase: Vec<f64>,
}

impl FeatureRecord {
    pub fn target_csi(&self, n_tx: usize, n_sc: usize) -> CsiMatrix {
        CsiMatrix::from_vec(n_tx, n_sc, amp_phase_recompose(&self.target_amp, &self.target_phase))
    }
}

fn distance_scale(meta: &DatasetMeta, map: &EnvironmentMap) -> f64 {
    let d = meta.grid.region.diagonal();
    if d > 0.0 {
        d
    } else {
        map.bounds().diagonal().max(1.0)
    }
}

/// Wall-feature rows for one position, padded with [`WALL_SENTINEL`].
pub fn wall_features(map: &EnvironmentMap, p: Point2, k: usize, scale: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(3 * k);
    let feats = geometry::nearest_walls(map, p, k);
    for f in &feats {
        out.extend_from_slice(&[f.distance / scale, f.orientation.sin(), f.orientation.cos()]);
    }
    for _ in feats.len()..k {
        out.extend_from_slice(&WALL_SENTINEL);
    }
    out
}

pub fn assemble_record(
    map: &EnvironmentMap,
    meta: &DatasetMeta,
    sample: &CsiSample,
    cfg: &FeatureConfig,
) -> Result<FeatureRecord, FeatureError> {
    let region = meta.grid.region;
    let p = sample.rx_position.xy();
    if !region.contains(p) {
        return Err(FeatureError::OutsideRegion { x: p.x, y: p.y, region });
    }
    let wall_feats = wall_features(map, p, cfg.wall_k, distance_scale(meta, map));
    let raster = geometry::rasterize(map, p, meta.grid.bs_position.xy(), cfg.raster_size, cfg.raster_res)?;
    let (target_amp, target_phase) = amp_phase_decompose(&sample.h);
    Ok(FeatureRecord {
        position: sample.rx_position,
        wall_feats,
        raster: raster.planes(),
        pos_enc: positional_encoding(p, &region, cfg.pe_freqs),
        target_amp,
        target_phase,
    })
}

/// Recomputes the wall features and positional encoding from the stored
/// position and checks they match the record.
pub fn record_is_aligned(
    map: &EnvironmentMap,
    meta: &DatasetMeta,
    cfg: &FeatureConfig,
    record: &FeatureRecord,
) -> bool {
    let p = record.position.xy();
    let walls = wall_features(map, p, cfg.wall_k, distance_scale(meta, map));
    let pe = positional_encoding(p, &meta.grid.region, cfg.pe_freqs);
    let close = |a: &[f64], b: &[f64]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12);
    let center = cfg.raster_size / 2;
    let rx_plane = &record.raster[3 * cfg.raster_size * cfg.raster_size..];
    close(&walls, &record.wall_feats)
        && close(&pe, &record.pos_enc)
        && rx_plane[center * cfg.raster_size + center] == 1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub dataset: DatasetMeta,
    pub dataset_hash: String,
    pub config: FeatureConfig,
    pub num_materials: usize,
    pub n_tx: usize,
    pub n_sc: usize,
}

impl FeatureMeta {
    fn record_len(&self) -> usize {
        3 + 3 * self.config.wall_k
            + self.config.raster_len()
            + self.config.pos_enc_len()
            + 2 * self.n_tx * self.n_sc
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub key: [u8; 32],
    pub meta: FeatureMeta,
    pub records: Vec<FeatureRecord>,
}

impl FeatureSet {
    pub fn key_hex(&self) -> String {
        hex::encode(self.key)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::with_header(FEATURE_MAGIC, FEATURE_VERSION);
        w.put_bytes(&self.key);
        w.put_blob(&serde_json::to_vec(&self.meta).expect("meta serializes"));
        w.put_u64(self.records.len() as u64);
        for r in &self.records {
            w.put_f64s(&[r.position.x, r.position.y, r.position.z]);
            w.put_f64s(&r.wall_feats);
            w.put_f64s(&r.raster);
            w.put_f64s(&r.pos_enc);
            w.put_f64s(&r.target_amp);
            w.put_f64s(&r.target_phase);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<FeatureSet, FeatureError> {
        let mut r = ByteReader::open(bytes, FEATURE_MAGIC, FEATURE_VERSION)?;
        let key: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let meta: FeatureMeta = serde_json::from_slice(r.blob()?)
            .map_err(|e| FormatError::Meta(e.to_string()))?;
        let n = r.u64()?;
        let expected = r.position() as u64 + n.saturating_mul(8 * meta.record_len() as u64) + 4;
        r.expect_total_len(expected)?;
        r.verify_checksum()?;
        let cfg = meta.config;
        let nt = meta.n_tx * meta.n_sc;
        let mut records = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let pos = r.f64s(3)?;
            records.push(FeatureRecord {
                position: geometry::Point3::new(pos[0], pos[1], pos[2]),
                wall_feats: r.f64s(3 * cfg.wall_k)?,
                raster: r.f64s(cfg.raster_len())?,
                pos_enc: r.f64s(cfg.pos_enc_len())?,
                target_amp: r.f64s(nt)?,
                target_phase: r.f64s(nt)?,
            });
        }
        Ok(FeatureSet { key, meta, records })
    }
}

/// Content key of (dataset metadata, dataset contents, feature config).
pub fn cache_key(dataset: &Dataset, cfg: &FeatureConfig) -> [u8; 32] {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&dataset.meta).expect("meta serializes"));
    h.update(dataset.content_hash().as_bytes());
    h.update(serde_json::to_vec(cfg).expect("config serializes"));
    h.update(FEATURE_VERSION.to_le_bytes());
    h.finalize().into()
}

fn check_map(map: &EnvironmentMap, dataset: &Dataset) -> Result<(), FeatureError> {
    let map_hash = map.content_hash();
    if map_hash != dataset.meta.map_hash {
        return Err(FeatureError::MapMismatch {
            map: map_hash,
            dataset: dataset.meta.map_hash.clone(),
        });
    }
    Ok(())
}

/// Builds every record without touching any cache.
pub fn build_features(
    map: &EnvironmentMap,
    dataset: &Dataset,
    cfg: &FeatureConfig,
) -> Result<FeatureSet, FeatureError> {
    cfg.validate()?;
    check_map(map, dataset)?;
    let records = dataset
        .samples
        .par_iter()
        .map(|s| assemble_record(map, &dataset.meta, s, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let (n_tx, n_sc) = dataset.shape();
    Ok(FeatureSet {
        key: cache_key(dataset, cfg),
        meta: FeatureMeta {
            dataset: dataset.meta.clone(),
            dataset_hash: dataset.content_hash(),
            config: *cfg,
            num_materials: map.materials().len(),
            n_tx,
            n_sc,
        },
        records,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheStatus {
    Hit,
    Built,
    /// The entry existed but failed to load; it was rebuilt.
    Rebuilt,
}

/// Content-addressed directory of `CSIF` entries.
#[derive(Debug)]
pub struct FeatureCache {
    dir: PathBuf,
    builds: AtomicUsize,
}

impl FeatureCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        FeatureCache {
            dir: dir.into(),
            builds: AtomicUsize::new(0),
        }
    }

    /// Directory from [`CACHE_DIR_ENV`], else `default`.
    pub fn from_env_or(default: impl Into<PathBuf>) -> Self {
        match std::env::var_os(CACHE_DIR_ENV) {
            Some(d) if !d.is_empty() => FeatureCache::new(PathBuf::from(d)),
            _ => FeatureCache::new(default),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn entry_path(&self, key: &[u8; 32]) -> PathBuf {
        self.dir.join(format!("{}.csif", hex::encode(key)))
    }

    /// Number of fresh builds performed through this handle.
    pub fn build_count(&self) -> usize {
        self.builds.load(Ordering::SeqCst)
    }

    fn try_load(&self, path: &Path, key: &[u8; 32]) -> Result<FeatureSet, FeatureError> {
        let set = FeatureSet::from_bytes(&binio::read_file(path)?)?;
        if &set.key != key {
            return Err(FeatureError::KeyMismatch);
        }
        Ok(set)
    }

    fn store(&self, path: &Path, set: &FeatureSet) -> Result<(), FeatureError> {
        std::fs::create_dir_all(&self.dir).map_err(|e| FormatError::io(&self.dir, e))?;
        let lock = path.with_extension("lock");
        let deadline = Instant::now() + Duration::from_secs(10);
        loop {
            match OpenOptions::new().write(true).create_new(true).open(&lock) {
                Ok(_) => break,
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    if Instant::now() > deadline {
                        log::warn!("cache lock {} held too long; not writing entry", lock.display());
                        return Ok(());
                    }
                    std::thread::sleep(Duration::from_millis(20));
                }
                Err(e) => return Err(FormatError::io(&lock, e).into()),
            }
        }
        let res = binio::write_atomic(path, &set.to_bytes());
        let _ = std::fs::remove_file(&lock);
        Ok(res?)
    }

    /// Returns cached records for (dataset, config), building and storing them
    /// on a miss. A corrupt entry is rebuilt with a warning.
    pub fn get_or_build(
        &self,
        map: &EnvironmentMap,
        dataset: &Dataset,
        cfg: &FeatureConfig,
    ) -> Result<(FeatureSet, CacheStatus), FeatureError> {
        cfg.validate()?;
        check_map(map, dataset)?;
        let key = cache_key(dataset, cfg);
        let path = self.entry_path(&key);
        let mut status = CacheStatus::Built;
        if path.exists() {
            match self.try_load(&path, &key) {
                Ok(set) => return Ok((set, CacheStatus::Hit)),
                Err(e) => {
                    log::warn!("feature cache entry {} unusable ({e}); rebuilding", path.display());
                    status = CacheStatus::Rebuilt;
                }
            }
        }
        let set = build_features(map, dataset, cfg)?;
        self.builds.fetch_add(1, Ordering::SeqCst);
        self.store(&path, &set)?;
        Ok((set, status))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encoding_at_center_and_edge() {
        let region = Rect::new(0.0, 0.0, 2.0, 2.0);
        let pe = positional_encoding(Point2::new(1.0, 1.0), &region, 3);
        assert_eq!(pe.len(), 12);
        for pair in pe.chunks(2) {
            assert_eq!(pair[0], 0.0);
            assert_eq!(pair[1], 1.0);
        }
        let pe = positional_encoding(Point2::new(2.0, 1.0), &region, 3);
        assert!(pe[0].abs() < 1e-15);
        assert_eq!(pe[1], -1.0);
        assert!(pe.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn decompose_known_entries() {
        let h = CsiMatrix::from_vec(1, 2, vec![Complex64::new(3.0, 4.0), Complex64::new(0.0, 0.0)]);
        let (a, p) = amp_phase_decompose(&h);
        assert_eq!(a, vec![5.0, 0.0]);
        assert!((p[0] - 4f64.atan2(3.0)).abs() < 1e-15);
        assert!((p[0] - 0.9273).abs() < 1e-4);
        assert_eq!(p[1], 0.0);
        let back = amp_phase_recompose(&a, &p);
        assert!((back[0] - h.get(0, 0)).norm() <= 1e-15 * 5.0);
        assert_eq!(back[1], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn negative_real_axis_phase_is_pi() {
        let h = CsiMatrix::from_vec(1, 1, vec![Complex64::new(-2.0, -0.0)]);
        let (_, p) = amp_phase_decompose(&h);
        assert_eq!(p[0], PI);
    }

    #[test]
    fn config_validation() {
        assert!(FeatureConfig { raster_size: 32, ..FeatureConfig::default() }.validate().is_err());
        assert!(FeatureConfig { wall_k: 0, ..FeatureConfig::default() }.validate().is_err());
        assert!(FeatureConfig::default().validate().is_ok());
        assert_eq!(FeatureConfig::default().pos_enc_len(), 24);
    }
}
