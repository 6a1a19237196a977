//! The noise-prediction network: a conditional diffusion U-Net evaluated as
//! `eps_hat = f(x_t, t, condition)`, with the condition slice concatenated to
//! `x_t` as a second input channel.

mod layers;
mod scalar;
mod tensor;
mod unet;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use ndarray::{Array3, ArrayView3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{NoisePredictor, ScheduleConfig};
use crate::error::{Error, Result};

pub use layers::{ParamSpec, Params};
pub use scalar::Scalar;

use layers::{Init, Layout};
use tensor::Tensor;
use unet::UNet;

pub const CHECKPOINT_CONFIG: &str = "config.json";
pub const CHECKPOINT_WEIGHTS: &str = "weights.safetensors";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub level_channels: Vec<usize>,
    pub attention_levels: BTreeSet<usize>,
    pub attention_heads: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub timestep_embedding_dim: usize,
    pub res_blocks_per_level: usize,
    pub norm_groups: usize,
    /// Side length of the square input slices.
    pub image_side: usize,
}

impl DenoiserConfig {
    /// Nine levels, attention with 64 heads at the lowest resolution, 512x512 slices.
    pub fn paper() -> Self {
        DenoiserConfig {
            level_channels: vec![64, 128, 256, 256, 256, 256, 256, 256, 256],
            attention_levels: BTreeSet::from([8]),
            attention_heads: 64,
            in_channels: 2,
            out_channels: 1,
            timestep_embedding_dim: 4 * 64,
            res_blocks_per_level: 2,
            norm_groups: 32,
            image_side: 512,
        }
    }

    /// Desk-scale preset used throughout the tests: three levels on 32x32 slices.
    pub fn toy() -> Self {
        DenoiserConfig {
            level_channels: vec![32, 64, 128],
            attention_levels: BTreeSet::from([2]),
            attention_heads: 4,
            in_channels: 2,
            out_channels: 1,
            timestep_embedding_dim: 4 * 32,
            res_blocks_per_level: 1,
            norm_groups: 8,
            image_side: 32,
        }
    }

    pub fn with_image_side(mut self, side: usize) -> Self {
        self.image_side = side;
        self
    }

    pub fn levels(&self) -> usize {
        self.level_channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: String| Err(Error::Config(m));
        let levels = self.levels();
        if levels < 2 {
            return cfg_err(format!("need at least 2 levels, got {levels}"));
        }
        if self.level_channels.contains(&0) {
            return cfg_err("level channels must be positive".into());
        }
        if self.in_channels != 2 || self.out_channels != 1 {
            return cfg_err(format!(
                "expected 2 input channels (x_t + condition) and 1 output, got {} -> {}",
                self.in_channels, self.out_channels
            ));
        }
        if self.attention_heads == 0 || self.norm_groups == 0 || self.res_blocks_per_level == 0 {
            return cfg_err("heads, norm groups and res blocks per level must be positive".into());
        }
        if self.timestep_embedding_dim == 0 {
            return cfg_err("timestep embedding dim must be positive".into());
        }
        let factor = 1usize << (levels - 1);
        if self.image_side == 0 || self.image_side % factor != 0 {
            return cfg_err(format!(
                "input side {} is not divisible by 2^{} = {factor}",
                self.image_side,
                levels - 1
            ));
        }
        for &lvl in &self.attention_levels {
            let Some(&c) = self.level_channels.get(lvl) else {
                return cfg_err(format!("attention level {lvl} does not exist ({levels} levels)"));
            };
            if c % self.attention_heads != 0 {
                return cfg_err(format!(
                    "level {lvl} has {c} channels, not divisible by {} heads",
                    self.attention_heads
                ));
            }
        }
        if let Some(c) = self.level_channels.iter().find(|&&c| c % self.norm_groups != 0) {
            return cfg_err(format!("{c} channels not divisible by {} norm groups", self.norm_groups));
        }
        Ok(())
    }

    fn layout(&self) -> (UNet, Layout) {
        let mut layout = Layout::default();
        let net = UNet::new(self, &mut layout);
        (net, layout)
    }

    /// Names and shapes of every learnable tensor, in storage order.
    pub fn param_specs(&self) -> Result<Vec<ParamSpec>> {
        self.validate()?;
        Ok(self.layout().1.specs)
    }
}

/// Exact number of learnable parameters for a configuration.
pub fn param_count(config: &DenoiserConfig) -> Result<usize> {
    Ok(config.param_specs()?.iter().map(ParamSpec::numel).sum())
}

/// A configured network together with its weights.
pub struct Denoiser<T: Scalar = f32> {
    config: DenoiserConfig,
    specs: Vec<ParamSpec>,
    net: UNet,
    params: Params<T>,
}

impl<T: Scalar> std::fmt::Debug for Denoiser<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Denoiser")
            .field("config", &self.config)
            .field("params", &self.params.numel())
            .finish()
    }
}

/// Build a denoiser with deterministic initial weights.
pub fn build_denoiser(config: &DenoiserConfig, seed: u64) -> Result<Denoiser<f32>> {
    Denoiser::build(config, seed)
}

impl<T: Scalar> Denoiser<T> {
    pub fn build(config: &DenoiserConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (net, layout) = config.layout();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = layout
            .specs
            .iter()
            .map(|spec| match spec.init {
                Init::Zeros => vec![T::zero(); spec.numel()],
                Init::Ones => vec![T::one(); spec.numel()],
                Init::Uniform(b) => (0..spec.numel()).map(|_| T::of(rng.random_range(-b..b))).collect(),
            })
            .collect();
        Ok(Denoiser {
            config: config.clone(),
            specs: layout.specs,
            net,
            params: Params { values },
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn param_specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn params(&self) -> &Params<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params<T> {
        &mut self.params
    }

    pub fn zero_grads(&self) -> Params<T> {
        Params::zeros(&self.specs)
    }

    /// Same network and weights in another precision.
    pub fn to_precision<U: Scalar>(&self) -> Denoiser<U> {
        let (net, _) = self.config.layout();
        Denoiser {
            config: self.config.clone(),
            specs: self.specs.clone(),
            net,
            params: Params {
                values: self
                    .params
                    .values
                    .iter()
                    .map(|v| v.iter().map(|x| U::of(x.to_f64().unwrap_or(f64::NAN))).collect())
                    .collect(),
            },
        }
    }

    fn check_inputs(&self, x_t: &ArrayView3<'_, T>, ts: &[usize], condition: &ArrayView3<'_, T>) -> Result<()> {
        let (n, h, w) = x_t.dim();
        if condition.dim() != (n, h, w) {
            return Err(Error::ModelContract(format!(
                "x_t shape {:?} differs from condition shape {:?}",
                x_t.dim(),
                condition.dim()
            )));
        }
        let side = self.config.image_side;
        if h != side || w != side {
            return Err(Error::ModelContract(format!(
                "denoiser expects {side}x{side} slices, got {h}x{w}"
            )));
        }
        if ts.len() != n {
            return Err(Error::ModelContract(format!("{n} slices but {} timesteps", ts.len())));
        }
        if ts.contains(&0) {
            return Err(Error::ModelContract("timesteps are 1-based".into()));
        }
        Ok(())
    }

    fn input_tensor(x_t: &ArrayView3<'_, T>, condition: &ArrayView3<'_, T>) -> Tensor<T> {
        let (n, h, w) = x_t.dim();
        let plane = h * w;
        let mut input = Tensor::zeros(n, 2, h, w);
        for (i, (x, c)) in x_t.outer_iter().zip(condition.outer_iter()).enumerate() {
            let dst = input.sample_mut(i);
            for (d, v) in dst[..plane].iter_mut().zip(x.iter()) {
                *d = *v;
            }
            for (d, v) in dst[plane..].iter_mut().zip(c.iter()) {
                *d = *v;
            }
        }
        input
    }

    /// Predict the noise for a batch `(n, side, side)` with one timestep per item.
    pub fn denoise_batch(
        &self,
        x_t: ArrayView3<'_, T>,
        ts: &[usize],
        condition: ArrayView3<'_, T>,
    ) -> Result<Array3<T>> {
        self.check_inputs(&x_t, ts, &condition)?;
        let (n, h, w) = x_t.dim();
        let input = Self::input_tensor(&x_t, &condition);
        let (out, _) = self.net.forward(&self.params, input, ts);
        Array3::from_shape_vec((n, h, w), out.data).map_err(|e| Error::ModelContract(e.to_string()))
    }

    /// Mean squared noise-prediction error over the batch and its parameter gradients.
    pub fn loss_and_gradients(
        &self,
        x_t: ArrayView3<'_, T>,
        ts: &[usize],
        condition: ArrayView3<'_, T>,
        eps: ArrayView3<'_, T>,
    ) -> Result<(f64, Params<T>)> {
        self.check_inputs(&x_t, ts, &condition)?;
        if eps.dim() != x_t.dim() {
            return Err(Error::validation(format!(
                "noise shape {:?} differs from x_t shape {:?}",
                eps.dim(),
                x_t.dim()
            )));
        }
        let input = Self::input_tensor(&x_t, &condition);
        let (out, cache) = self.net.forward(&self.params, input, ts);
        let count = out.data.len() as f64;
        let scale = T::of(2.0 / count);
        let mut dy = out.zeros_like();
        let mut loss = 0.0;
        for ((d, &o), &e) in dy.data.iter_mut().zip(&out.data).zip(eps.iter()) {
            let diff = o - e;
            let df = diff.to_f64().unwrap_or(f64::NAN);
            loss += df * df;
            *d = diff * scale;
        }
        let mut grads = self.zero_grads();
        self.net.backward(&self.params, &mut grads, &cache, &dy);
        Ok((loss / count, grads))
    }
}

impl Denoiser<f32> {
    /// Predict the noise for one slice.
    pub fn denoise(
        &self,
        x_t: ndarray::ArrayView2<'_, f32>,
        t: usize,
        condition: ndarray::ArrayView2<'_, f32>,
    ) -> Result<ndarray::Array2<f32>> {
        let x = x_t.insert_axis(ndarray::Axis(0));
        let c = condition.insert_axis(ndarray::Axis(0));
        let out = self.denoise_batch(x, &[t], c)?;
        Ok(out.index_axis_move(ndarray::Axis(0), 0))
    }
}

impl NoisePredictor for Denoiser<f32> {
    fn predict_noise(
        &self,
        x_t: ArrayView3<'_, f32>,
        t: usize,
        condition: ArrayView3<'_, f32>,
    ) -> Result<Array3<f32>> {
        let ts = vec![t; x_t.dim().0];
        self.denoise_batch(x_t, &ts, condition)
    }
}

/// Contents of a checkpoint's `config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointConfig {
    pub denoiser: DenoiserConfig,
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub training: Option<serde_json::Value>,
}

pub fn save_checkpoint(dir: &Path, model: &Denoiser<f32>, config: &CheckpointConfig) -> Result<()> {
    if &config.denoiser != model.config() {
        return Err(Error::Config("checkpoint config does not describe this model".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let cfg_path = dir.join(CHECKPOINT_CONFIG);
    let text = serde_json::to_string_pretty(config).map_err(|e| Error::json(&cfg_path, e))?;

    let bytes: Vec<Vec<u8>> = model
        .params
        .values
        .iter()
        .map(|v| v.iter().flat_map(|x| x.to_le_bytes()).collect())
        .collect();
    let views = model
        .specs
        .iter()
        .zip(&bytes)
        .map(|(spec, b)| {
            safetensors::tensor::TensorView::new(safetensors::Dtype::F32, spec.shape.clone(), b)
                .map(|view| (spec.name.clone(), view))
        })
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::format(dir, e.to_string()))?;
    let weights_path = dir.join(CHECKPOINT_WEIGHTS);
    let blob = safetensors::serialize(views, None).map_err(|e| Error::format(&weights_path, e.to_string()))?;

    // Weights first so a readable config always has matching weights next to it.
    fs::write(&weights_path, blob).map_err(|e| Error::io(&weights_path, e))?;
    fs::write(&cfg_path, text + "\n").map_err(|e| Error::io(&cfg_path, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<(Denoiser<f32>, CheckpointConfig)> {
    let cfg_path = dir.join(CHECKPOINT_CONFIG);
    let text = fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
    let config: CheckpointConfig = serde_json::from_str(&text).map_err(|e| Error::json(&cfg_path, e))?;
    let mut model = Denoiser::<f32>::build(&config.denoiser, 0)?;

    let weights_path = dir.join(CHECKPOINT_WEIGHTS);
    let blob = fs::read(&weights_path).map_err(|e| Error::io(&weights_path, e))?;
    let tensors = safetensors::SafeTensors::deserialize(&blob)
        .map_err(|e| Error::format(&weights_path, e.to_string()))?;
    if tensors.len() != model.specs.len() {
        return Err(Error::format(
            &weights_path,
            format!("{} tensors stored, config implies {}", tensors.len(), model.specs.len()),
        ));
    }
    for (spec, values) in model.specs.iter().zip(model.params.values.iter_mut()) {
        let view = tensors
            .tensor(&spec.name)
            .map_err(|e| Error::format(&weights_path, format!("{}: {e}", spec.name)))?;
        if view.dtype() != safetensors::Dtype::F32 || view.shape() != spec.shape.as_slice() {
            return Err(Error::format(
                &weights_path,
                format!(
                    "{}: stored {:?} {:?}, expected F32 {:?}",
                    spec.name,
                    view.dtype(),
                    view.shape(),
                    spec.shape
                ),
            ));
        }
        for (dst, chunk) in values.iter_mut().zip(view.data().chunks_exact(4)) {
            *dst = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        }
    }
    Ok((model, config))
}
