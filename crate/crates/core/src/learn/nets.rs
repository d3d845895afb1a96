//! Building blocks shared by the model heads: a dense ReLU stack and the
//! raster conv extractor.

use super::layers::{
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, maxpool_backward, maxpool_forward,
    relu_backward, relu_forward,
};
use super::model::{ConvSpec, ParamLayout};
use super::tensor::{ParamSet, Tensor};
use super::LearnError;

/// Dense layers with ReLU after every layer except (optionally) the last.
#[derive(Debug, Clone)]
pub(crate) struct DenseStack {
    slots: Vec<(usize, usize)>,
    linear_last: bool,
    pub(crate) out_len: usize,
}

pub(crate) struct StackCache {
    inputs: Vec<Tensor>,
    pre: Vec<Tensor>,
}

impl DenseStack {
    /// `widths` lists every layer output; the last layer uses gain 1 when
    /// `linear_last` is set.
    pub(crate) fn declare(layout: &mut ParamLayout, name: &str, inp: usize, widths: &[usize], linear_last: bool) -> Self {
        let mut slots = Vec::with_capacity(widths.len());
        let mut fan_in = inp;
        for (i, &w) in widths.iter().enumerate() {
            let last = i + 1 == widths.len();
            let gain = if last && linear_last { 1.0 } else { 2.0 };
            slots.push(layout.dense(&format!("{name}.{i}"), fan_in, w, gain));
            fan_in = w;
        }
        DenseStack {
            slots,
            linear_last,
            out_len: fan_in,
        }
    }

    fn activated(&self, i: usize) -> bool {
        !(self.linear_last && i + 1 == self.slots.len())
    }

    pub(crate) fn forward(&self, params: &ParamSet, x: Vec<f64>) -> Result<(Vec<f64>, StackCache), LearnError> {
        let mut cache = StackCache {
            inputs: Vec::with_capacity(self.slots.len()),
            pre: Vec::with_capacity(self.slots.len()),
        };
        let mut h = Tensor::from_vec(x);
        for (i, &(w, b)) in self.slots.iter().enumerate() {
            let z = dense_forward(&h, params.get(w), params.get(b))?;
            let next = if self.activated(i) { relu_forward(&z) } else { z.clone() };
            cache.inputs.push(h);
            cache.pre.push(z);
            h = next;
        }
        Ok((h.into_data(), cache))
    }

    pub(crate) fn infer(&self, params: &ParamSet, x: Vec<f64>) -> Result<Vec<f64>, LearnError> {
        let mut h = Tensor::from_vec(x);
        for (i, &(w, b)) in self.slots.iter().enumerate() {
            let z = dense_forward(&h, params.get(w), params.get(b))?;
            h = if self.activated(i) { relu_forward(&z) } else { z };
        }
        Ok(h.into_data())
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub(crate) fn backward(
        &self,
        params: &ParamSet,
        cache: &StackCache,
        dout: Vec<f64>,
        grads: &mut ParamSet,
    ) -> Result<Vec<f64>, LearnError> {
        let mut g = Tensor::from_vec(dout);
        for i in (0..self.slots.len()).rev() {
            let (w, b) = self.slots[i];
            if self.activated(i) {
                g = relu_backward(&cache.pre[i], &g)?;
            }
            let d = dense_backward(&cache.inputs[i], params.get(w), &g)?;
            grads.accumulate(w, &d.dw);
            grads.accumulate(b, &d.db);
            g = d.dx;
        }
        Ok(g.into_data())
    }
}

/// `conv -> ReLU -> max-pool` blocks. The output concatenates the flattened
/// last block with the per-channel means of every earlier block.
#[derive(Debug, Clone)]
pub(crate) struct ConvExtractor {
    slots: Vec<(usize, usize)>,
    pool: usize,
    channels: Vec<usize>,
    pub(crate) out_len: usize,
}

struct BlockCache {
    input: Tensor,
    pre: Tensor,
    pool_shape: Vec<usize>,
    argmax: Vec<usize>,
    pooled_shape: Vec<usize>,
}

pub(crate) struct ExtractorCache {
    blocks: Vec<BlockCache>,
}

impl ConvExtractor {
    pub(crate) fn declare(layout: &mut ParamLayout, spec: &ConvSpec, c_in: usize, size: usize) -> Self {
        let mut slots = Vec::new();
        let mut c = c_in;
        let mut s = size;
        for (i, &co) in spec.channels.iter().enumerate() {
            slots.push(layout.conv(&format!("conv.{i}"), c, co, spec.kernel));
            c = co;
            s /= spec.pool;
        }
        let side: usize = spec.channels[..spec.channels.len() - 1].iter().sum();
        ConvExtractor {
            slots,
            pool: spec.pool,
            channels: spec.channels.clone(),
            out_len: c * s * s + side,
        }
    }

    fn emit(&self, pooled: &[Tensor]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.out_len);
        let last = pooled.last().expect("at least one conv block");
        out.extend_from_slice(last.data());
        for t in &pooled[..pooled.len() - 1] {
            let c = t.shape()[0];
            let plane = t.len() / c;
            for ch in 0..c {
                let s: f64 = t.data()[ch * plane..(ch + 1) * plane].iter().sum();
                out.push(s / plane as f64);
            }
        }
        out
    }

    pub(crate) fn forward(&self, params: &ParamSet, x: &Tensor) -> Result<(Vec<f64>, ExtractorCache), LearnError> {
        let mut blocks = Vec::with_capacity(self.slots.len());
        let mut pooled = Vec::with_capacity(self.slots.len());
        let mut h = x.clone();
        for &(w, b) in &self.slots {
            let pre = conv2d_forward(&h, params.get(w), params.get(b))?;
            let act = relu_forward(&pre);
            let p = maxpool_forward(&act, self.pool)?;
            blocks.push(BlockCache {
                input: h,
                pre,
                pool_shape: act.shape().to_vec(),
                argmax: p.argmax,
                pooled_shape: p.y.shape().to_vec(),
            });
            h = p.y.clone();
            pooled.push(p.y);
        }
        Ok((self.emit(&pooled), ExtractorCache { blocks }))
    }

    pub(crate) fn infer(&self, params: &ParamSet, x: &Tensor) -> Result<Vec<f64>, LearnError> {
        let mut pooled: Vec<Tensor> = Vec::with_capacity(self.slots.len());
        for &(w, b) in &self.slots {
            let input = pooled.last().unwrap_or(x);
            let pre = conv2d_forward(input, params.get(w), params.get(b))?;
            pooled.push(maxpool_forward(&relu_forward(&pre), self.pool)?.y);
        }
        Ok(self.emit(&pooled))
    }

    pub(crate) fn backward(
        &self,
        params: &ParamSet,
        cache: &ExtractorCache,
        dout: &[f64],
        grads: &mut ParamSet,
    ) -> Result<(), LearnError> {
        let n = self.slots.len();
        let last_len: usize = cache.blocks[n - 1].pooled_shape.iter().product();
        // Mean-pooled side outputs feed gradient back into earlier blocks.
        let mut side = Vec::with_capacity(n - 1);
        let mut off = last_len;
        for i in 0..n - 1 {
            side.push(&dout[off..off + self.channels[i]]);
            off += self.channels[i];
        }
        let mut g = Tensor::new(cache.blocks[n - 1].pooled_shape.clone(), dout[..last_len].to_vec());
        for i in (0..n).rev() {
            let blk = &cache.blocks[i];
            if i < n - 1 {
                let c = blk.pooled_shape[0];
                let plane = g.len() / c;
                let data = g.data_mut();
                for ch in 0..c {
                    let add = side[i][ch] / plane as f64;
                    data[ch * plane..(ch + 1) * plane].iter_mut().for_each(|v| *v += add);
                }
            }
            let dact = maxpool_backward(&blk.pool_shape, &blk.argmax, &g)?;
            let dpre = relu_backward(&blk.pre, &dact)?;
            let (w, b) = self.slots[i];
            let d = conv2d_backward(&blk.input, params.get(w), &dpre)?;
            grads.accumulate(w, &d.dw);
            grads.accumulate(b, &d.db);
            g = d.dx;
        }
        Ok(())
    }
}
