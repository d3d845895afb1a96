//! Frequency-domain MIMO-OFDM CSI from a multipath set.
//!
//! The base station carries an `n_h x n_v` uniform planar array, the UE a
//! single isotropic antenna. Path amplitudes use the carrier wavelength; only
//! the propagation phase is evaluated per subcarrier.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::geometry::Point3;
use crate::raytrace::PropagationPath;

#[derive(Debug, thiserror::Error)]
pub enum ChannelError {
    #[error("subcarrier index {index} out of range (K = {count})")]
    SubcarrierOutOfRange { index: usize, count: usize },
    #[error("precoder has {got} entries, array has {expected}")]
    PrecoderLength { expected: usize, got: usize },
    #[error("precoder is not finite")]
    NonFinitePrecoder,
    #[error("noise sigma must be finite and >= 0, got {0}")]
    BadNoise(f64),
    #[error("invalid array config: {0}")]
    BadArray(String),
    #[error("invalid OFDM config: {0}")]
    BadOfdm(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayConfig {
    pub n_h: usize,
    pub n_v: usize,
    /// Element pitch in carrier wavelengths.
    pub spacing: f64,
    /// Array facing bearing, radians.
    pub boresight: f64,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        ArrayConfig {
            n_h: 4,
            n_v: 4,
            spacing: 0.5,
            boresight: 0.0,
        }
    }
}

impl ArrayConfig {
    pub fn num_antennas(&self) -> usize {
        self.n_h * self.n_v
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        if self.n_h == 0 || self.n_v == 0 {
            return Err(ChannelError::BadArray(format!(
                "element counts must be positive, got {}x{}",
                self.n_h, self.n_v
            )));
        }
        if !(self.spacing.is_finite() && self.spacing > 0.0) {
            return Err(ChannelError::BadArray(format!("spacing {}", self.spacing)));
        }
        if !self.boresight.is_finite() {
            return Err(ChannelError::BadArray("boresight not finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OfdmConfig {
    pub carrier_frequency: f64,
    pub subcarrier_spacing: f64,
    pub num_subcarriers: usize,
    /// Carried as metadata only; channels are static.
    pub symbols_per_slot: usize,
}

impl Default for OfdmConfig {
    fn default() -> Self {
        OfdmConfig {
            carrier_frequency: 2.4e9,
            subcarrier_spacing: 30e3,
            num_subcarriers: 16,
            symbols_per_slot: 14,
        }
    }
}

impl OfdmConfig {
    /// `f_c + (k - (K-1)/2) * df`.
    pub fn subcarrier_frequency(&self, k: usize) -> f64 {
        let offset = k as f64 - (self.num_subcarriers as f64 - 1.0) / 2.0;
        self.carrier_frequency + offset * self.subcarrier_spacing
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        if !(self.carrier_frequency.is_finite() && self.carrier_frequency > 0.0) {
            return Err(ChannelError::BadOfdm(format!("carrier {}", self.carrier_frequency)));
        }
        if !(self.subcarrier_spacing.is_finite() && self.subcarrier_spacing > 0.0) {
            return Err(ChannelError::BadOfdm(format!(
                "subcarrier spacing {}",
                self.subcarrier_spacing
            )));
        }
        if self.num_subcarriers == 0 || self.symbols_per_slot == 0 {
            return Err(ChannelError::BadOfdm("counts must be positive".into()));
        }
        let lowest = self.subcarrier_frequency(0);
        if lowest <= 0.0 {
            return Err(ChannelError::BadOfdm("band extends below 0 Hz".into()));
        }
        Ok(())
    }
}

/// Dense `n_tx x n_sc` complex matrix, row-major over (antenna, subcarrier).
#[derive(Debug, Clone, PartialEq)]
pub struct CsiMatrix {
    n_tx: usize,
    n_sc: usize,
    data: Vec<Complex64>,
}

impl CsiMatrix {
    pub fn zeros(n_tx: usize, n_sc: usize) -> Self {
        CsiMatrix {
            n_tx,
            n_sc,
            data: vec![Complex64::new(0.0, 0.0); n_tx * n_sc],
        }
    }

    /// # Panics
    /// If `data.len() != n_tx * n_sc`.
    pub fn from_vec(n_tx: usize, n_sc: usize, data: Vec<Complex64>) -> Self {
        assert_eq!(data.len(), n_tx * n_sc, "CSI matrix shape mismatch");
        CsiMatrix { n_tx, n_sc, data }
    }

    pub fn n_tx(&self) -> usize {
        self.n_tx
    }

    pub fn n_sc(&self) -> usize {
        self.n_sc
    }

    pub fn get(&self, t: usize, k: usize) -> Complex64 {
        self.data[t * self.n_sc + k]
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    /// Column `k`: the per-antenna channel on one subcarrier.
    pub fn column(&self, k: usize) -> Vec<Complex64> {
        (0..self.n_tx).map(|t| self.get(t, k)).collect()
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn scale(&mut self, s: f64) {
        for c in &mut self.data {
            *c *= s;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }
}

impl std::ops::Add for &CsiMatrix {
    type Output = CsiMatrix;
    fn add(self, o: &CsiMatrix) -> CsiMatrix {
        assert_eq!((self.n_tx, self.n_sc), (o.n_tx, o.n_sc));
        CsiMatrix {
            n_tx: self.n_tx,
            n_sc: self.n_sc,
            data: self.data.iter().zip(&o.data).map(|(a, b)| a + b).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsiSample {
    pub rx_position: Point3,
    pub h: CsiMatrix,
}

/// Phase profile of the array toward `bearing`. Element `(i_h, i_v)` sits at
/// flat index `i_v * n_h + i_h`; the vertical index carries no phase.
pub fn steering_vector(array: &ArrayConfig, bearing: f64) -> Vec<Complex64> {
    let s = (bearing - array.boresight).sin();
    let mut out = Vec::with_capacity(array.num_antennas());
    for _iv in 0..array.n_v {
        for ih in 0..array.n_h {
            let phase = 2.0 * PI * array.spacing * ih as f64 * s;
            out.push(Complex64::from_polar(1.0, phase));
        }
    }
    out
}

/// `h[t,k] = sum_p gain_p(f_k) * a_t(aod_p)`.
pub fn synthesize_csi(
    paths: &[PropagationPath],
    array: &ArrayConfig,
    ofdm: &OfdmConfig,
    rx: Point3,
) -> CsiSample {
    let n_tx = array.num_antennas();
    let n_sc = ofdm.num_subcarriers;
    let freqs: Vec<f64> = (0..n_sc).map(|k| ofdm.subcarrier_frequency(k)).collect();
    let mut h = CsiMatrix::zeros(n_tx, n_sc);
    let mut per_sc = vec![Complex64::new(0.0, 0.0); n_sc];
    for path in paths {
        let a = steering_vector(array, path.aod);
        for (g, &f) in per_sc.iter_mut().zip(&freqs) {
            *g = path.gain_at(f);
        }
        for (t, at) in a.iter().enumerate() {
            let row = &mut h.data[t * n_sc..(t + 1) * n_sc];
            for (cell, g) in row.iter_mut().zip(&per_sc) {
                *cell += g * at;
            }
        }
    }
    CsiSample { rx_position: rx, h }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedSignalSample {
    pub y: Complex64,
    pub w: Vec<Complex64>,
    pub x: Complex64,
    pub n: Complex64,
}

/// Narrowband observation `y = h_k^H w x + n` with circular Gaussian noise of
/// variance `noise_sigma^2`, drawn from a generator seeded by `seed`.
pub fn received_signal(
    sample: &CsiSample,
    k: usize,
    w: &[Complex64],
    x: Complex64,
    noise_sigma: f64,
    seed: u64,
) -> Result<ReceivedSignalSample, ChannelError> {
    let h = &sample.h;
    if k >= h.n_sc() {
        return Err(ChannelError::SubcarrierOutOfRange {
            index: k,
            count: h.n_sc(),
        });
    }
    if w.len() != h.n_tx() {
        return Err(ChannelError::PrecoderLength {
            expected: h.n_tx(),
            got: w.len(),
        });
    }
    if w.iter().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
        return Err(ChannelError::NonFinitePrecoder);
    }
    if !(noise_sigma.is_finite() && noise_sigma >= 0.0) {
        return Err(ChannelError::BadNoise(noise_sigma));
    }
    let hw: Complex64 = (0..h.n_tx()).map(|t| h.get(t, k).conj() * w[t]).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let re: f64 = StandardNormal.sample(&mut rng);
    let im: f64 = StandardNormal.sample(&mut rng);
    let n = Complex64::new(re, im) * (noise_sigma / 2f64.sqrt());
    Ok(ReceivedSignalSample {
        y: hw * x + n,
        w: w.to_vec(),
        x,
        n,
    })
}
