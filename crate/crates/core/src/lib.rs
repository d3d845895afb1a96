//! Desk-scale spatial CSI toolkit.
//!
//! The pipeline runs in stages, one module each:
//!
//! * [`geometry`]: 2.5D wall maps, nearest-wall queries and rasterization.
//! * [`raytrace`]: image-method multipath tracing (LOS plus specular reflections).
//! * [`channel`]: uniform planar array steering and MIMO-OFDM CSI synthesis.
//! * [`dataset`]: UE grids, dataset construction, splitting and the `CSID` file format.
//! * [`features`]: model-input records (wall features, raster window, positional
//!   encoding, amplitude/phase targets) and the `CSIF` feature cache.
//! * [`learn`]: hand-written layers with backprop, Smooth L1, NMSE, AdamW, and the
//!   MLP / VAE predictors behind a name-keyed model registry.

pub mod binio;
pub mod channel;
pub mod dataset;
pub mod features;
pub mod geometry;
pub mod learn;
pub mod raytrace;

pub use num_complex::Complex64;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Crate-wide error, one variant per stage.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Geometry(#[from] geometry::GeometryError),
    #[error(transparent)]
    Trace(#[from] raytrace::TraceError),
    #[error(transparent)]
    Channel(#[from] channel::ChannelError),
    #[error(transparent)]
    Dataset(#[from] dataset::DatasetError),
    #[error(transparent)]
    Features(#[from] features::FeatureError),
    #[error(transparent)]
    Learn(#[from] learn::LearnError),
    #[error(transparent)]
    Format(#[from] binio::FormatError),
}
