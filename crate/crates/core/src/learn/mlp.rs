//! Baseline MLP head.

use super::loss::{smooth_l1, smooth_l1_grad};
use super::model::{head_backward, head_map, CsiModel, ModelInput, ModelSpec, ParamLayout};
use super::nets::{ConvExtractor, DenseStack};
use super::tensor::ParamSet;
use super::LearnError;

/// `[walls ‖ pos_enc ‖ conv(raster)] -> hidden ReLU layers -> linear`.
pub struct Mlp {
    spec: ModelSpec,
    layout: ParamLayout,
    conv: Option<ConvExtractor>,
    stack: DenseStack,
}

impl Mlp {
    pub fn new(spec: ModelSpec) -> Result<Self, LearnError> {
        spec.validate()?;
        let io = spec.io;
        let mut layout = ParamLayout::default();
        let conv = spec
            .conv
            .as_ref()
            .map(|c| ConvExtractor::declare(&mut layout, c, io.raster_channels(), io.raster_size));
        let dense_in = if spec.use_walls { io.wall_len } else { 0 } + io.pos_enc_len;
        let inp = dense_in + conv.as_ref().map_or(0, |c| c.out_len);
        let mut widths = spec.hidden.clone();
        widths.push(io.out_len());
        let stack = DenseStack::declare(&mut layout, "mlp", inp, &widths, true);
        Ok(Mlp {
            spec,
            layout,
            conv,
            stack,
        })
    }

    fn raw(&self, params: &ParamSet, input: &ModelInput) -> Result<Vec<f64>, LearnError> {
        let mut x = input.dense.clone();
        if let Some(conv) = &self.conv {
            let r = input.raster.as_ref().ok_or_else(missing_raster)?;
            x.extend(conv.infer(params, r)?);
        }
        self.stack.infer(params, x)
    }
}

pub(crate) fn missing_raster() -> LearnError {
    LearnError::InputMismatch("model has a conv extractor but the input carries no raster".into())
}

impl CsiModel for Mlp {
    fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    fn predict(&self, params: &ParamSet, input: &ModelInput) -> Result<Vec<f64>, LearnError> {
        Ok(head_map(&self.raw(params, input)?))
    }

    fn eval_loss(&self, params: &ParamSet, input: &ModelInput, target: &[f64]) -> Result<f64, LearnError> {
        smooth_l1(&self.predict(params, input)?, target)
    }

    fn loss_and_grad(
        &self,
        params: &ParamSet,
        input: &ModelInput,
        target: &[f64],
        _noise_seed: u64,
        grads: &mut ParamSet,
    ) -> Result<f64, LearnError> {
        let mut x = input.dense.clone();
        let conv_cache = match &self.conv {
            Some(conv) => {
                let r = input.raster.as_ref().ok_or_else(missing_raster)?;
                let (f, c) = conv.forward(params, r)?;
                x.extend(f);
                Some(c)
            }
            None => None,
        };
        let (raw, cache) = self.stack.forward(params, x)?;
        let pred = head_map(&raw);
        let loss = smooth_l1(&pred, target)?;
        let draw = head_backward(&raw, &smooth_l1_grad(&pred, target)?);
        let dx = self.stack.backward(params, &cache, draw, grads)?;
        if let (Some(conv), Some(cc)) = (&self.conv, conv_cache) {
            conv.backward(params, &cc, &dx[input.dense.len()..], grads)?;
        }
        Ok(loss)
    }
}
