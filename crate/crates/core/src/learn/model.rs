//! Model specification, input assembly, parameter layouts and the model
//! registry.

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{softplus, softplus_grad};
use super::tensor::{ParamSet, Tensor};
use super::LearnError;
use crate::channel::CsiMatrix;
use crate::features::{amp_phase_recompose, FeatureConfig, FeatureMeta, FeatureRecord};

/// Input and output dimensions a model is built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelIo {
    pub wall_len: usize,
    pub pos_enc_len: usize,
    pub raster_size: usize,
    pub num_materials: usize,
    pub n_tx: usize,
    pub n_sc: usize,
}

impl ModelIo {
    pub fn from_meta(meta: &FeatureMeta) -> Self {
        ModelIo {
            wall_len: 3 * meta.config.wall_k,
            pos_enc_len: meta.config.pos_enc_len(),
            raster_size: meta.config.raster_size,
            num_materials: meta.num_materials,
            n_tx: meta.n_tx,
            n_sc: meta.n_sc,
        }
    }

    /// Width of the amplitude or phase half of the output.
    pub fn csi_len(&self) -> usize {
        self.n_tx * self.n_sc
    }

    pub fn out_len(&self) -> usize {
        2 * self.csi_len()
    }

    /// Raster channels fed to the extractor: occupancy, TX, RX, then one
    /// plane per material.
    pub fn raster_channels(&self) -> usize {
        3 + self.num_materials
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    /// Output channels of each conv -> ReLU -> max-pool block.
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub pool: usize,
}

impl Default for ConvSpec {
    fn default() -> Self {
        ConvSpec {
            channels: vec![8, 16],
            kernel: 3,
            pool: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Registry key, e.g. `"mlp"` or `"vae"`.
    pub kind: String,
    pub conv: Option<ConvSpec>,
    /// When false the wall features are left out of the dense input.
    pub use_walls: bool,
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    pub kl_weight: f64,
    pub io: ModelIo,
    /// Feature configuration the model was built against.
    pub features: FeatureConfig,
}

impl ModelSpec {
    pub fn mlp(meta: &FeatureMeta) -> Self {
        ModelSpec {
            kind: "mlp".into(),
            conv: Some(ConvSpec::default()),
            use_walls: true,
            hidden: vec![256, 256],
            latent_dim: 0,
            kl_weight: 0.0,
            io: ModelIo::from_meta(meta),
            features: meta.config,
        }
    }

    /// One hidden layer per side keeps the parameter count close to
    /// [`ModelSpec::mlp`].
    pub fn vae(meta: &FeatureMeta) -> Self {
        ModelSpec {
            kind: "vae".into(),
            conv: Some(ConvSpec::default()),
            use_walls: true,
            hidden: vec![256],
            latent_dim: 32,
            kl_weight: 1e-3,
            io: ModelIo::from_meta(meta),
            features: meta.config,
        }
    }

    /// Default spec for a registry name.
    pub fn for_kind(kind: &str, meta: &FeatureMeta) -> Result<Self, LearnError> {
        match kind {
            "mlp" => Ok(ModelSpec::mlp(meta)),
            "vae" => Ok(ModelSpec::vae(meta)),
            other => Err(LearnError::UnknownModel {
                name: other.to_string(),
                known: "mlp, vae".into(),
            }),
        }
    }

    pub fn validate(&self) -> Result<(), LearnError> {
        let bad = |m: String| Err(LearnError::BadConfig(m));
        if self.hidden.contains(&0) {
            return bad(format!("hidden widths must be positive, got {:?}", self.hidden));
        }
        if !(self.kl_weight >= 0.0 && self.kl_weight.is_finite()) {
            return bad(format!("kl_weight must be finite and >= 0, got {}", self.kl_weight));
        }
        if self.io.out_len() == 0 {
            return bad("model output width is zero".into());
        }
        if let Some(c) = &self.conv {
            if c.channels.is_empty() || c.channels.contains(&0) {
                return bad(format!("conv channels must be non-empty and positive, got {:?}", c.channels));
            }
            if c.kernel % 2 == 0 || c.pool == 0 {
                return bad(format!("conv kernel must be odd and pool positive (kernel {}, pool {})", c.kernel, c.pool));
            }
            let mut s = self.io.raster_size;
            for _ in &c.channels {
                s /= c.pool;
            }
            if s == 0 {
                return bad(format!(
                    "raster size {} too small for {} pooling blocks of {}",
                    self.io.raster_size,
                    c.channels.len(),
                    c.pool
                ));
            }
        }
        if !self.use_walls && self.conv.is_none() && self.io.pos_enc_len == 0 {
            return bad("model has no inputs".into());
        }
        Ok(())
    }

    /// Checks that a feature set matches the dimensions this spec was built for.
    pub fn check_compatible(&self, meta: &FeatureMeta) -> Result<(), LearnError> {
        let io = ModelIo::from_meta(meta);
        if io != self.io {
            return Err(LearnError::InputMismatch(format!(
                "model expects {:?}, features provide {:?}",
                self.io, io
            )));
        }
        Ok(())
    }
}

/// A record converted to model inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    /// Wall features (if enabled) followed by the positional encoding.
    pub dense: Vec<f64>,
    pub pos_enc: Vec<f64>,
    /// `[3 + num_materials, S, S]` raster planes when the extractor is on.
    pub raster: Option<Tensor>,
}

pub fn model_input(spec: &ModelSpec, record: &FeatureRecord) -> Result<ModelInput, LearnError> {
    let io = &spec.io;
    let s2 = io.raster_size * io.raster_size;
    if record.wall_feats.len() != io.wall_len
        || record.pos_enc.len() != io.pos_enc_len
        || record.raster.len() != 4 * s2
    {
        return Err(LearnError::InputMismatch(format!(
            "record has wall/pos_enc/raster lengths {}/{}/{}, model expects {}/{}/{}",
            record.wall_feats.len(),
            record.pos_enc.len(),
            record.raster.len(),
            io.wall_len,
            io.pos_enc_len,
            4 * s2
        )));
    }
    let mut dense = Vec::with_capacity(io.wall_len + io.pos_enc_len);
    if spec.use_walls {
        dense.extend_from_slice(&record.wall_feats);
    }
    dense.extend_from_slice(&record.pos_enc);
    let raster = spec.conv.as_ref().map(|_| {
        let occ = &record.raster[..s2];
        let mat = &record.raster[s2..2 * s2];
        let tx = &record.raster[2 * s2..3 * s2];
        let rx = &record.raster[3 * s2..];
        let mut planes = vec![0.0; io.raster_channels() * s2];
        planes[..s2].copy_from_slice(occ);
        planes[s2..2 * s2].copy_from_slice(tx);
        planes[2 * s2..3 * s2].copy_from_slice(rx);
        for i in 0..s2 {
            if occ[i] > 0.0 {
                let m = mat[i] as usize;
                if m < io.num_materials {
                    planes[(3 + m) * s2 + i] = 1.0;
                }
            }
        }
        Tensor::new(vec![io.raster_channels(), io.raster_size, io.raster_size], planes)
    });
    Ok(ModelInput {
        dense,
        pos_enc: record.pos_enc.clone(),
        raster,
    })
}

/// Training target: amplitude followed by phase.
pub fn target_vector(record: &FeatureRecord) -> Vec<f64> {
    let mut t = record.target_amp.clone();
    t.extend_from_slice(&record.target_phase);
    t
}

/// Maps raw head outputs to (amplitude >= 0 via softplus, raw phase).
pub(crate) fn head_map(raw: &[f64]) -> Vec<f64> {
    let n = raw.len() / 2;
    raw.iter()
        .enumerate()
        .map(|(i, &v)| if i < n { softplus(v) } else { v })
        .collect()
}

pub(crate) fn head_backward(raw: &[f64], dpred: &[f64]) -> Vec<f64> {
    let n = raw.len() / 2;
    raw.iter()
        .zip(dpred)
        .enumerate()
        .map(|(i, (&v, &g))| if i < n { g * softplus_grad(v) } else { g })
        .collect()
}

/// Recomposes an (amp, phase) prediction into a CSI matrix.
pub fn prediction_to_csi(io: &ModelIo, pred: &[f64]) -> CsiMatrix {
    let n = io.csi_len();
    CsiMatrix::from_vec(io.n_tx, io.n_sc, amp_phase_recompose(&pred[..n], &pred[n..]))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform in `+-sqrt(gain * 3 / fan_in)`; gain 2 for ReLU layers.
    KaimingUniform { fan_in: usize, gain: f64 },
    Zeros,
}

#[derive(Debug, Clone)]
struct LayoutEntry {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

/// Ordered parameter declarations. Slot indices returned by [`ParamLayout::push`]
/// address the matching [`ParamSet`] entries.
#[derive(Debug, Clone, Default)]
pub struct ParamLayout {
    entries: Vec<LayoutEntry>,
}

impl ParamLayout {
    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, init: Init) -> usize {
        self.entries.push(LayoutEntry {
            name: name.into(),
            shape,
            init,
        });
        self.entries.len() - 1
    }

    /// Weight `[out, in]` plus bias `[out]`; returns (weight slot, bias slot).
    pub fn dense(&mut self, name: &str, inp: usize, out: usize, gain: f64) -> (usize, usize) {
        let w = self.push(format!("{name}.weight"), vec![out, inp], Init::KaimingUniform { fan_in: inp, gain });
        let b = self.push(format!("{name}.bias"), vec![out], Init::Zeros);
        (w, b)
    }

    pub fn conv(&mut self, name: &str, c_in: usize, c_out: usize, k: usize) -> (usize, usize) {
        let w = self.push(
            format!("{name}.weight"),
            vec![c_out, c_in, k, k],
            Init::KaimingUniform { fan_in: c_in * k * k, gain: 2.0 },
        );
        let b = self.push(format!("{name}.bias"), vec![c_out], Init::Zeros);
        (w, b)
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.shape.iter().product::<usize>()).sum()
    }

    pub fn zeros(&self) -> ParamSet {
        let mut ps = ParamSet::new();
        for e in &self.entries {
            ps.push(e.name.clone(), Tensor::zeros(e.shape.clone()));
        }
        ps
    }

    pub fn init(&self, seed: u64) -> ParamSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        for e in &self.entries {
            let n = e.shape.iter().product();
            let data = match e.init {
                Init::Zeros => vec![0.0; n],
                Init::KaimingUniform { fan_in, gain } => {
                    let bound = (gain * 3.0 / fan_in.max(1) as f64).sqrt();
                    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
                }
            };
            ps.push(e.name.clone(), Tensor::new(e.shape.clone(), data));
        }
        ps
    }
}

/// A CSI predictor head. Implementations are stateless; parameters live in a
/// [`ParamSet`] laid out by [`CsiModel::layout`].
pub trait CsiModel: Send + Sync {
    fn spec(&self) -> &ModelSpec;

    fn layout(&self) -> &ParamLayout;

    fn init_params(&self, seed: u64) -> ParamSet {
        self.layout().init(seed)
    }

    /// Deterministic (evaluation-mode) prediction: amplitude then phase.
    fn predict(&self, params: &ParamSet, input: &ModelInput) -> Result<Vec<f64>, LearnError>;

    /// Evaluation-mode objective for one sample.
    fn eval_loss(&self, params: &ParamSet, input: &ModelInput, target: &[f64]) -> Result<f64, LearnError>;

    /// Training-mode objective for one sample. Gradients are added into
    /// `grads`; `noise_seed` drives any stochastic part of the forward pass.
    fn loss_and_grad(
        &self,
        params: &ParamSet,
        input: &ModelInput,
        target: &[f64],
        noise_seed: u64,
        grads: &mut ParamSet,
    ) -> Result<f64, LearnError>;
}

impl fmt::Debug for dyn CsiModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CsiModel({})", self.spec().kind)
    }
}

pub type ModelFactory = fn(ModelSpec) -> Result<Box<dyn CsiModel>, LearnError>;

/// Name-keyed model constructors.
pub struct ModelRegistry {
    factories: BTreeMap<String, ModelFactory>,
}

impl ModelRegistry {
    pub fn empty() -> Self {
        ModelRegistry {
            factories: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut r = ModelRegistry::empty();
        r.register("mlp", |s| Ok(Box::new(super::mlp::Mlp::new(s)?)));
        r.register("vae", |s| Ok(Box::new(super::vae::Vae::new(s)?)));
        r
    }

    /// Registers (or replaces) a factory under `name`.
    pub fn register(&mut self, name: &str, factory: ModelFactory) {
        self.factories.insert(name.to_string(), factory);
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn build(&self, spec: ModelSpec) -> Result<Box<dyn CsiModel>, LearnError> {
        spec.validate()?;
        match self.factories.get(&spec.kind) {
            Some(f) => f(spec),
            None => Err(LearnError::UnknownModel {
                name: spec.kind.clone(),
                known: self.names().join(", "),
            }),
        }
    }
}

impl Default for ModelRegistry {
    fn default() -> Self {
        ModelRegistry::with_builtins()
    }
}
