//! VAE regressor head: the encoder sees the full feature vector, the decoder
//! sees the latent code concatenated with the positional encoding.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::layers::{dense_backward, dense_forward};
use super::loss::{kl_divergence, kl_grad, smooth_l1, smooth_l1_grad};
use super::mlp::missing_raster;
use super::model::{head_backward, head_map, CsiModel, ModelInput, ModelSpec, ParamLayout};
use super::nets::{ConvExtractor, DenseStack};
use super::tensor::{ParamSet, Tensor};
use super::LearnError;

pub struct Vae {
    spec: ModelSpec,
    layout: ParamLayout,
    conv: Option<ConvExtractor>,
    encoder: DenseStack,
    mu: (usize, usize),
    logvar: (usize, usize),
    decoder: DenseStack,
}

/// Result of a stochastic forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct VaeForward {
    pub prediction: Vec<f64>,
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
}

impl Vae {
    pub fn new(spec: ModelSpec) -> Result<Self, LearnError> {
        spec.validate()?;
        if spec.latent_dim == 0 {
            return Err(LearnError::BadConfig("VAE latent_dim must be positive".into()));
        }
        let io = spec.io;
        let mut layout = ParamLayout::default();
        let conv = spec
            .conv
            .as_ref()
            .map(|c| ConvExtractor::declare(&mut layout, c, io.raster_channels(), io.raster_size));
        let dense_in = if spec.use_walls { io.wall_len } else { 0 } + io.pos_enc_len;
        let inp = dense_in + conv.as_ref().map_or(0, |c| c.out_len);
        let encoder = DenseStack::declare(&mut layout, "enc", inp, &spec.hidden, false);
        let lz = spec.latent_dim;
        let mu = layout.dense("enc.mu", encoder.out_len, lz, 1.0);
        let logvar = layout.dense("enc.logvar", encoder.out_len, lz, 1.0);
        let mut widths: Vec<usize> = spec.hidden.iter().rev().copied().collect();
        widths.push(io.out_len());
        let decoder = DenseStack::declare(&mut layout, "dec", lz + io.pos_enc_len, &widths, true);
        Ok(Vae {
            spec,
            layout,
            conv,
            encoder,
            mu,
            logvar,
            decoder,
        })
    }

    fn features(&self, params: &ParamSet, input: &ModelInput) -> Result<Vec<f64>, LearnError> {
        let mut x = input.dense.clone();
        if let Some(conv) = &self.conv {
            let r = input.raster.as_ref().ok_or_else(missing_raster)?;
            x.extend(conv.infer(params, r)?);
        }
        Ok(x)
    }

    fn heads(&self, params: &ParamSet, h: &Tensor) -> Result<(Vec<f64>, Vec<f64>), LearnError> {
        let mu = dense_forward(h, params.get(self.mu.0), params.get(self.mu.1))?.into_data();
        let lv = dense_forward(h, params.get(self.logvar.0), params.get(self.logvar.1))?.into_data();
        if let Some(i) = lv.iter().position(|v| !v.is_finite() || !v.exp().is_finite()) {
            return Err(LearnError::NonFiniteLogvar { index: i, value: lv[i] });
        }
        Ok((mu, lv))
    }

    fn decode_input(&self, z: &[f64], input: &ModelInput) -> Vec<f64> {
        let mut d = z.to_vec();
        d.extend_from_slice(&input.pos_enc);
        d
    }

    /// Stochastic forward pass with `z = mu + exp(logvar / 2) * xi`, `xi`
    /// drawn from `noise_seed`.
    pub fn forward(&self, params: &ParamSet, input: &ModelInput, noise_seed: u64) -> Result<VaeForward, LearnError> {
        let x = self.features(params, input)?;
        let h = Tensor::from_vec(self.encoder.infer(params, x)?);
        let (mu, logvar) = self.heads(params, &h)?;
        let xi = noise(noise_seed, mu.len());
        let z: Vec<f64> = (0..mu.len()).map(|i| mu[i] + (0.5 * logvar[i]).exp() * xi[i]).collect();
        let raw = self.decoder.infer(params, self.decode_input(&z, input))?;
        Ok(VaeForward {
            prediction: head_map(&raw),
            mu,
            logvar,
        })
    }

    /// Evaluation-mode pass (`z = mu`).
    pub fn forward_eval(&self, params: &ParamSet, input: &ModelInput) -> Result<VaeForward, LearnError> {
        let x = self.features(params, input)?;
        let h = Tensor::from_vec(self.encoder.infer(params, x)?);
        let (mu, logvar) = self.heads(params, &h)?;
        let raw = self.decoder.infer(params, self.decode_input(&mu, input))?;
        Ok(VaeForward {
            prediction: head_map(&raw),
            mu,
            logvar,
        })
    }

    fn objective(&self, f: &VaeForward, target: &[f64]) -> Result<f64, LearnError> {
        Ok(smooth_l1(&f.prediction, target)? + self.spec.kl_weight * kl_divergence(&f.mu, &f.logvar))
    }
}

fn noise(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

impl CsiModel for Vae {
    fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    fn predict(&self, params: &ParamSet, input: &ModelInput) -> Result<Vec<f64>, LearnError> {
        Ok(self.forward_eval(params, input)?.prediction)
    }

    fn eval_loss(&self, params: &ParamSet, input: &ModelInput, target: &[f64]) -> Result<f64, LearnError> {
        let f = self.forward_eval(params, input)?;
        self.objective(&f, target)
    }

    fn loss_and_grad(
        &self,
        params: &ParamSet,
        input: &ModelInput,
        target: &[f64],
        noise_seed: u64,
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
        let (h, enc_cache) = self.encoder.forward(params, x)?;
        let h = Tensor::from_vec(h);
        let (mu, logvar) = self.heads(params, &h)?;
        let xi = noise(noise_seed, mu.len());
        let sigma: Vec<f64> = logvar.iter().map(|lv| (0.5 * lv).exp()).collect();
        let z: Vec<f64> = (0..mu.len()).map(|i| mu[i] + sigma[i] * xi[i]).collect();
        let (raw, dec_cache) = self.decoder.forward(params, self.decode_input(&z, input))?;
        let pred = head_map(&raw);
        let beta = self.spec.kl_weight;
        let loss = smooth_l1(&pred, target)? + beta * kl_divergence(&mu, &logvar);

        let draw = head_backward(&raw, &smooth_l1_grad(&pred, target)?);
        let dzin = self.decoder.backward(params, &dec_cache, draw, grads)?;
        let (kmu, klv) = kl_grad(&mu, &logvar);
        let lz = mu.len();
        let dmu: Vec<f64> = (0..lz).map(|i| dzin[i] + beta * kmu[i]).collect();
        let dlv: Vec<f64> = (0..lz)
            .map(|i| dzin[i] * xi[i] * 0.5 * sigma[i] + beta * klv[i])
            .collect();
        let gmu = dense_backward(&h, params.get(self.mu.0), &Tensor::from_vec(dmu))?;
        let glv = dense_backward(&h, params.get(self.logvar.0), &Tensor::from_vec(dlv))?;
        grads.accumulate(self.mu.0, &gmu.dw);
        grads.accumulate(self.mu.1, &gmu.db);
        grads.accumulate(self.logvar.0, &glv.dw);
        grads.accumulate(self.logvar.1, &glv.db);
        let dh: Vec<f64> = gmu.dx.data().iter().zip(glv.dx.data()).map(|(a, b)| a + b).collect();
        let dx = self.encoder.backward(params, &enc_cache, dh, grads)?;
        if let (Some(conv), Some(cc)) = (&self.conv, conv_cache) {
            conv.backward(params, &cc, &dx[input.dense.len()..], grads)?;
        }
        Ok(loss)
    }
}
