//! UE grids, CSI dataset construction, splits, and the `CSID` file format.
//!
//! File layout (little-endian):
//!
//! ```text
//! "CSID" | u32 version=1 | u64 meta_len | meta JSON | u64 N
//!   N x ( f64 x, y, z | N_t*K x (f64 re, f64 im), row-major over (t, k) )
//! u32 CRC32 of every preceding byte
//! ```

use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio::{self, ByteReader, ByteWriter, FormatError};
use crate::channel::{synthesize_csi, ArrayConfig, ChannelError, CsiMatrix, CsiSample, OfdmConfig};
use crate::geometry::{EnvironmentMap, Point3, Rect};
use crate::raytrace::{TraceConfig, TraceError, Tracer};

pub const DATASET_MAGIC: &[u8; 4] = b"CSID";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("empty or invalid grid region {0:?}")]
    EmptyRegion(Rect),
    #[error("grid spacing must be positive and finite, got {0}")]
    BadSpacing(f64),
    #[error("grid region {region:?} is not inside map bounds {bounds:?}")]
    RegionOutsideMap { region: Rect, bounds: Rect },
    #[error("trace carrier {trace} Hz differs from OFDM carrier {ofdm} Hz")]
    CarrierMismatch { trace: f64, ofdm: f64 },
    #[error("dataset has zero channel power; cannot normalize")]
    ZeroPower,
    #[error("grid produced no positions")]
    NoPositions,
    #[error("split needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("validation ratio must be in (0, 1), got {0}")]
    BadRatio(f64),
    #[error("split of {n} samples at ratio {ratio} leaves one side empty")]
    EmptySplitSide { n: usize, ratio: f64 },
    #[error("sample shape {got:?} does not match metadata {expected:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Format(#[from] FormatError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub region: Rect,
    /// Meters between neighbouring UEs.
    pub spacing: f64,
    pub ue_height: f64,
    pub bs_position: Point3,
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if !self.region.is_valid() {
            return Err(DatasetError::EmptyRegion(self.region));
        }
        if !(self.spacing.is_finite() && self.spacing > 0.0) {
            return Err(DatasetError::BadSpacing(self.spacing));
        }
        Ok(())
    }
}

/// Number of lattice points along an extent, inclusive of both edges.
pub fn lattice_count(extent: f64, spacing: f64) -> usize {
    (extent / spacing + 1e-9).floor() as usize + 1
}

/// Row-major (y outer, x inner) UE positions, skipping any that coincide with
/// the BS footprint.
pub fn generate_grid(spec: &GridSpec) -> Result<Vec<Point3>, DatasetError> {
    spec.validate()?;
    let r = spec.region;
    let nx = lattice_count(r.width(), spec.spacing);
    let ny = lattice_count(r.height(), spec.spacing);
    let bs = spec.bs_position.xy();
    let mut out = Vec::with_capacity(nx * ny);
    for iy in 0..ny {
        let y = r.ymin + iy as f64 * spec.spacing;
        for ix in 0..nx {
            let x = r.xmin + ix as f64 * spec.spacing;
            let p = Point3::new(x, y, spec.ue_height);
            if p.xy().distance(bs) > 1e-6 {
                out.push(p);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub map_hash: String,
    pub array: ArrayConfig,
    pub ofdm: OfdmConfig,
    pub grid: GridSpec,
    pub trace: TraceConfig,
    pub seed: u64,
    /// RMS of |h| before normalization; samples are stored as h / s.
    pub normalization: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub samples: Vec<CsiSample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.meta.array.num_antennas(), self.meta.ofdm.num_subcarriers)
    }

    /// Hex SHA-256 of the encoded file image.
    pub fn content_hash(&self) -> String {
        binio::sha256_hex(&self.to_bytes())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = serde_json::to_vec(&self.meta).expect("meta serializes");
        let (n_tx, n_sc) = self.shape();
        let mut w = ByteWriter::with_header(DATASET_MAGIC, DATASET_VERSION);
        w.put_blob(&meta);
        w.put_u64(self.samples.len() as u64);
        for s in &self.samples {
            debug_assert_eq!((s.h.n_tx(), s.h.n_sc()), (n_tx, n_sc));
            w.put_f64(s.rx_position.x);
            w.put_f64(s.rx_position.y);
            w.put_f64(s.rx_position.z);
            for c in s.h.as_slice() {
                w.put_f64(c.re);
                w.put_f64(c.im);
            }
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Dataset, DatasetError> {
        let mut r = ByteReader::open(bytes, DATASET_MAGIC, DATASET_VERSION)?;
        let meta_raw = r.blob()?;
        let meta: DatasetMeta = serde_json::from_slice(meta_raw)
            .map_err(|e| FormatError::Meta(e.to_string()))?;
        let n = r.u64()?;
        let n_tx = meta.array.num_antennas();
        let n_sc = meta.ofdm.num_subcarriers;
        let per_sample = 24 + 16 * (n_tx as u64) * (n_sc as u64);
        let expected = r.position() as u64 + n.saturating_mul(per_sample) + 4;
        r.expect_total_len(expected)?;
        r.verify_checksum()?;
        let mut samples = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let pos = r.f64s(3)?;
            let raw = r.f64s(2 * n_tx * n_sc)?;
            let data = raw
                .chunks_exact(2)
                .map(|c| Complex64::new(c[0], c[1]))
                .collect();
            samples.push(CsiSample {
                rx_position: Point3::new(pos[0], pos[1], pos[2]),
                h: CsiMatrix::from_vec(n_tx, n_sc, data),
            });
        }
        Ok(Dataset { meta, samples })
    }
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<(), DatasetError> {
    Ok(binio::write_atomic(path, &dataset.to_bytes())?)
}

pub fn load_dataset(path: &Path) -> Result<Dataset, DatasetError> {
    Dataset::from_bytes(&binio::read_file(path)?)
}

/// `x,y,z` header plus one row per sample.
pub fn positions_csv(dataset: &Dataset) -> String {
    let mut out = String::from("x,y,z\n");
    for s in &dataset.samples {
        let p = s.rx_position;
        let _ = writeln!(out, "{},{},{}", p.x, p.y, p.z);
    }
    out
}

/// Traces and synthesizes one sample per grid position, then normalizes the
/// whole set by its RMS magnitude. Positions fan out over the rayon pool; the
/// output keeps grid order.
pub fn build_dataset(
    map: &EnvironmentMap,
    spec: &GridSpec,
    array: &ArrayConfig,
    ofdm: &OfdmConfig,
    trace_cfg: &TraceConfig,
    seed: u64,
) -> Result<Dataset, DatasetError> {
    array.validate()?;
    ofdm.validate()?;
    trace_cfg.validate()?;
    spec.validate()?;
    if (trace_cfg.carrier_frequency - ofdm.carrier_frequency).abs() > 1e-6 {
        return Err(DatasetError::CarrierMismatch {
            trace: trace_cfg.carrier_frequency,
            ofdm: ofdm.carrier_frequency,
        });
    }
    let bounds = map.bounds();
    if !bounds.contains_rect(&spec.region) {
        return Err(DatasetError::RegionOutsideMap {
            region: spec.region,
            bounds,
        });
    }
    let positions = generate_grid(spec)?;
    if positions.is_empty() {
        return Err(DatasetError::NoPositions);
    }
    let bs = spec.bs_position;
    let tracer = Tracer::with_heights(map, *trace_cfg, bs.xy(), bs.z, spec.ue_height)?;
    let mut samples: Vec<CsiSample> = positions
        .par_iter()
        .map(|&p| {
            let paths = tracer.trace(p.xy());
            synthesize_csi(&paths, array, ofdm, p)
        })
        .collect();

    let count = samples.len() * array.num_antennas() * ofdm.num_subcarriers;
    let power: f64 = samples.iter().map(|s| s.h.frobenius_sq()).sum();
    let rms = (power / count as f64).sqrt();
    if !(rms > 0.0 && rms.is_finite()) {
        return Err(DatasetError::ZeroPower);
    }
    for s in &mut samples {
        s.h.scale(1.0 / rms);
    }
    Ok(Dataset {
        meta: DatasetMeta {
            map_hash: map.content_hash(),
            array: *array,
            ofdm: *ofdm,
            grid: *spec,
            trace: *trace_cfg,
            seed,
            normalization: rms,
        },
        samples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    /// Seeded random permutation.
    #[default]
    Random,
    /// Samples ordered by (x, y); the trailing block is held out.
    Spatial,
}

impl std::str::FromStr for SplitMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(SplitMode::Random),
            "spatial" => Ok(SplitMode::Spatial),
            other => Err(format!("unknown split mode {other:?} (random|spatial)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndex {
    pub train_ids: Vec<usize>,
    pub val_ids: Vec<usize>,
}

/// `ceil(N * (1 - ratio))` samples go to training.
pub fn split(
    dataset: &Dataset,
    val_ratio: f64,
    seed: u64,
    mode: SplitMode,
) -> Result<SplitIndex, DatasetError> {
    let n = dataset.len();
    if n < 2 {
        return Err(DatasetError::TooFewSamples(n));
    }
    if !(val_ratio > 0.0 && val_ratio < 1.0) {
        return Err(DatasetError::BadRatio(val_ratio));
    }
    let n_train = ((n as f64) * (1.0 - val_ratio) - 1e-9).ceil() as usize;
    if n_train == 0 || n_train >= n {
        return Err(DatasetError::EmptySplitSide {
            n,
            ratio: val_ratio,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    match mode {
        SplitMode::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            order.shuffle(&mut rng);
        }
        SplitMode::Spatial => {
            let pos = |i: usize| dataset.samples[i].rx_position;
            order.sort_by(|&a, &b| {
                pos(a)
                    .x
                    .total_cmp(&pos(b).x)
                    .then(pos(a).y.total_cmp(&pos(b).y))
            });
        }
    }
    let val_ids = order.split_off(n_train);
    Ok(SplitIndex {
        train_ids: order,
        val_ids,
    })
}
