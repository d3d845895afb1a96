//! Seeded minibatch training with early stopping, and evaluation helpers.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{nmse, NmseMode};
use super::model::{model_input, prediction_to_csi, target_vector, CsiModel, ModelInput};
use super::optim::{adamw_step, AdamState, AdamWConfig};
use super::tensor::ParamSet;
use super::LearnError;
use crate::channel::CsiMatrix;
use crate::dataset::SplitIndex;
use crate::features::FeatureSet;

/// Samples per gradient chunk. Chunk partials are summed in index order, so
/// the result does not depend on how chunks are scheduled.
const GRAD_CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub seed: u64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub nmse_mode: NmseMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 120,
            batch_size: 64,
            optimizer: AdamWConfig::default(),
            seed: 7,
            patience: 30,
            nmse_mode: NmseMode::MeanOfRatios,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LearnError> {
        let o = &self.optimizer;
        let ok = self.epochs > 0
            && self.batch_size > 0
            && self.patience > 0
            && o.lr >= 0.0
            && o.lr.is_finite()
            && (0.0..1.0).contains(&o.beta1)
            && (0.0..1.0).contains(&o.beta2)
            && o.eps > 0.0
            && o.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(LearnError::BadConfig(format!("invalid training configuration: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_nmse: f64,
    pub val_nmse: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub epochs: Vec<EpochMetrics>,
}

pub const METRICS_CSV_HEADER: &str = "epoch,train_loss,train_nmse,val_nmse";

impl Metrics {
    /// Epoch with the lowest validation NMSE (first one on ties).
    pub fn best(&self) -> Option<&EpochMetrics> {
        self.epochs
            .iter()
            .fold(None, |best: Option<&EpochMetrics>, e| match best {
                Some(b) if b.val_nmse <= e.val_nmse => Some(b),
                _ => Some(e),
            })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(METRICS_CSV_HEADER);
        s.push('\n');
        for e in &self.epochs {
            s.push_str(&format!("{},{:e},{:e},{:e}\n", e.epoch, e.train_loss, e.train_nmse, e.val_nmse));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Metrics, LearnError> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(METRICS_CSV_HEADER) {
            return Err(LearnError::BadConfig(format!("metrics CSV must start with `{METRICS_CSV_HEADER}`")));
        }
        let mut epochs = Vec::new();
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = || LearnError::BadConfig(format!("metrics CSV line {}: `{line}`", n + 2));
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 4 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            epochs.push(EpochMetrics {
                epoch: f[0].parse().map_err(|_| bad())?,
                train_loss: num(f[1])?,
                train_nmse: num(f[2])?,
                val_nmse: num(f[3])?,
            });
        }
        Ok(Metrics { epochs })
    }
}

/// Model inputs, targets and ground-truth CSI for every record of a feature set.
pub struct Prepared {
    pub inputs: Vec<ModelInput>,
    pub targets: Vec<Vec<f64>>,
    pub truth: Vec<CsiMatrix>,
}

pub fn prepare(model: &dyn CsiModel, set: &FeatureSet) -> Result<Prepared, LearnError> {
    let spec = model.spec();
    spec.check_compatible(&set.meta)?;
    let inputs = set
        .records
        .iter()
        .map(|r| model_input(spec, r))
        .collect::<Result<Vec<_>, _>>()?;
    let targets = set.records.iter().map(target_vector).collect();
    let truth = set
        .records
        .iter()
        .map(|r| r.target_csi(set.meta.n_tx, set.meta.n_sc))
        .collect();
    Ok(Prepared { inputs, targets, truth })
}

/// Evaluation-mode predictions for `ids`, in order.
pub fn predict_csi(
    model: &dyn CsiModel,
    params: &ParamSet,
    data: &Prepared,
    ids: &[usize],
) -> Result<Vec<CsiMatrix>, LearnError> {
    let io = model.spec().io;
    ids.par_iter()
        .map(|&i| Ok(prediction_to_csi(&io, &model.predict(params, &data.inputs[i])?)))
        .collect()
}

pub fn evaluate_nmse(
    model: &dyn CsiModel,
    params: &ParamSet,
    data: &Prepared,
    ids: &[usize],
    mode: NmseMode,
) -> Result<f64, LearnError> {
    let pred = predict_csi(model, params, data, ids)?;
    let truth: Vec<CsiMatrix> = ids.iter().map(|&i| data.truth[i].clone()).collect();
    nmse(&pred, &truth, mode)
}

fn mean_eval_loss(model: &dyn CsiModel, params: &ParamSet, data: &Prepared, ids: &[usize]) -> Result<f64, LearnError> {
    let losses = ids
        .par_iter()
        .map(|&i| model.eval_loss(params, &data.inputs[i], &data.targets[i]))
        .collect::<Result<Vec<f64>, _>>()?;
    Ok(losses.iter().sum::<f64>() / ids.len() as f64)
}

/// Per-sample noise seed, independent of scheduling.
fn noise_seed(seed: u64, step: u64, sample: usize) -> u64 {
    let mut z = seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (sample as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mean loss and mean gradient over one minibatch.
fn batch_gradient(
    model: &dyn CsiModel,
    params: &ParamSet,
    data: &Prepared,
    batch: &[usize],
    seed: u64,
    step: u64,
) -> Result<(f64, ParamSet), LearnError> {
    let partials = batch
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut g = params.zeros_like();
            let mut loss = 0.0;
            for &i in chunk {
                loss += model.loss_and_grad(params, &data.inputs[i], &data.targets[i], noise_seed(seed, step, i), &mut g)?;
            }
            Ok((loss, g))
        })
        .collect::<Result<Vec<_>, LearnError>>()?;
    let mut iter = partials.into_iter();
    let (mut loss, mut grads) = iter.next().expect("non-empty batch");
    for (l, g) in iter {
        loss += l;
        grads.add_assign(&g);
    }
    let inv = 1.0 / batch.len() as f64;
    grads.scale(inv);
    Ok((loss * inv, grads))
}

pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation NMSE.
    pub params: ParamSet,
    pub metrics: Metrics,
    pub best_epoch: usize,
    pub state: AdamState,
}

pub fn train(
    model: &dyn CsiModel,
    set: &FeatureSet,
    split: &SplitIndex,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, LearnError> {
    let data = prepare(model, set)?;
    train_prepared(model, &data, split, cfg)
}

pub fn train_prepared(
    model: &dyn CsiModel,
    data: &Prepared,
    split: &SplitIndex,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, LearnError> {
    cfg.validate()?;
    if split.train_ids.is_empty() {
        return Err(LearnError::EmptySplit("train"));
    }
    if split.val_ids.is_empty() {
        return Err(LearnError::EmptySplit("validation"));
    }
    let n = data.inputs.len();
    if let Some(&bad) = split.train_ids.iter().chain(&split.val_ids).find(|&&i| i >= n) {
        return Err(LearnError::InputMismatch(format!("split index {bad} out of range for {n} records")));
    }

    let mut params = model.init_params(cfg.seed);
    let mut state = AdamState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order = split.train_ids.clone();
    let mut metrics = Metrics::default();
    let mut best: Option<(f64, usize, ParamSet)> = None;
    let mut stale = 0;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let step = state.step_count();
            let (loss, grads) = batch_gradient(model, &params, data, batch, cfg.seed, step)?;
            if !loss.is_finite() {
                return Err(LearnError::Divergence { epoch, batch: b });
            }
            adamw_step(&mut params, &grads, &mut state, &cfg.optimizer)?;
        }
        let train_loss = mean_eval_loss(model, &params, data, &split.train_ids)?;
        if !train_loss.is_finite() {
            return Err(LearnError::Divergence { epoch, batch: order.len().div_ceil(cfg.batch_size) });
        }
        let m = EpochMetrics {
            epoch,
            train_loss,
            train_nmse: evaluate_nmse(model, &params, data, &split.train_ids, cfg.nmse_mode)?,
            val_nmse: evaluate_nmse(model, &params, data, &split.val_ids, cfg.nmse_mode)?,
        };
        log::debug!(
            "epoch {epoch}: loss {:.5} train nmse {:.5} val nmse {:.5}",
            m.train_loss,
            m.train_nmse,
            m.val_nmse
        );
        metrics.epochs.push(m);
        match &best {
            Some((v, _, _)) if m.val_nmse >= *v => {
                stale += 1;
                if stale >= cfg.patience {
                    log::info!("early stop after epoch {epoch}");
                    break;
                }
            }
            _ => {
                best = Some((m.val_nmse, epoch, params.clone()));
                stale = 0;
            }
        }
    }
    let (_, best_epoch, best_params) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        params: best_params,
        metrics,
        best_epoch,
        state,
    })
}
