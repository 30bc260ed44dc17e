//! The MLP and CNN image autoencoders whose 256-d middle activations the SAEs study.
//!
//! The middle activation ψ(x) is the encoder's last affine output before its
//! ReLU. The decoder consumes `relu(ψ)`, so splicing a replacement for ψ into
//! [`BaseAutoencoder::decode_from_middle`] reproduces the normal forward pass.

use std::fmt;
use std::path::Path;

use eqsae_numerics::{conv2d, conv_transpose2d, io as etns, linear, relu, AdamConfig, AdamState, ConvParams, Graph, Scalar, Tensor, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{rotate_image, LabeledImage, IMAGE_SIDE};
use crate::error::{Error, Result};
use crate::util::{read_json, write_json};

pub const MIDDLE_DIM: usize = 256;
const PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;
const INFER_CHUNK: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseKind {
    Mlp,
    Cnn,
}

impl BaseKind {
    pub const ALL: [BaseKind; 2] = [BaseKind::Mlp, BaseKind::Cnn];

    pub fn name(self) -> &'static str {
        match self {
            BaseKind::Mlp => "mlp",
            BaseKind::Cnn => "cnn",
        }
    }
}

impl fmt::Display for BaseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerOp {
    Linear,
    Conv2d,
    ConvTranspose2d,
}

/// One affine layer. Weights: `[out, in]` (linear), `[c_out, c_in, kh, kw]` (conv),
/// `[c_in, c_out, kh, kw]` (transposed conv). Every layer has a bias.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub op: LayerOp,
    pub weight_dims: Vec<usize>,
    pub bias_dims: Vec<usize>,
    pub stride: usize,
    pub pad: usize,
    pub out_pad: usize,
    /// Layers `0..encoder_layers` form the encoder.
    pub encoder: bool,
}

impl LayerSpec {
    fn new(name: &str, op: LayerOp, weight_dims: &[usize], bias: usize, conv: (usize, usize, usize), encoder: bool) -> Self {
        Self {
            name: name.into(),
            op,
            weight_dims: weight_dims.to_vec(),
            bias_dims: vec![bias],
            stride: conv.0,
            pad: conv.1,
            out_pad: conv.2,
            encoder,
        }
    }

    pub fn conv_params(&self) -> ConvParams {
        ConvParams::with_out_pad(self.stride, self.pad, self.out_pad)
    }

    /// Inputs summed into one output unit, as used by the fan-in initializer.
    /// Transposed convolutions follow the common `dims[1]·kh·kw` convention.
    pub fn fan_in(&self) -> usize {
        self.weight_dims[1..].iter().product()
    }
}

/// Layer list of `kind`, encoder first.
pub fn architecture(kind: BaseKind) -> Vec<LayerSpec> {
    use LayerOp::*;
    let dense = (1, 0, 0);
    match kind {
        BaseKind::Mlp => vec![
            LayerSpec::new("enc1", Linear, &[256, 4096], 256, dense, true),
            LayerSpec::new("enc2", Linear, &[256, 256], 256, dense, true),
            LayerSpec::new("dec1", Linear, &[256, 256], 256, dense, false),
            LayerSpec::new("dec2", Linear, &[4096, 256], 4096, dense, false),
        ],
        BaseKind::Cnn => vec![
            LayerSpec::new("enc1", Conv2d, &[16, 1, 3, 3], 16, (2, 1, 0), true),
            LayerSpec::new("enc2", Conv2d, &[32, 16, 3, 3], 32, (2, 1, 0), true),
            LayerSpec::new("enc3", Conv2d, &[256, 32, 16, 16], 256, (1, 0, 0), true),
            LayerSpec::new("dec1", ConvTranspose2d, &[256, 32, 16, 16], 32, (1, 0, 0), false),
            LayerSpec::new("dec2", ConvTranspose2d, &[32, 16, 3, 3], 16, (2, 1, 1), false),
            LayerSpec::new("dec3", ConvTranspose2d, &[16, 1, 3, 3], 1, (2, 1, 1), false),
        ],
    }
}

/// An autoencoder of Table-1 shape; `params` holds `[w₀, b₀, w₁, b₁, …]` in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseAutoencoder<T> {
    pub kind: BaseKind,
    pub seed: u64,
    pub layers: Vec<LayerSpec>,
    pub params: Vec<Tensor<T>>,
}

/// Fan-in uniform initialization, layers drawn in order from one seeded stream.
pub fn build_base<T: Scalar>(kind: BaseKind, seed: u64) -> BaseAutoencoder<T> {
    let layers = architecture(kind);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Vec::with_capacity(layers.len() * 2);
    for l in &layers {
        params.push(Tensor::fan_in_uniform(&l.weight_dims, l.fan_in(), &mut rng));
        params.push(Tensor::fan_in_uniform(&l.bias_dims, l.fan_in(), &mut rng));
    }
    BaseAutoencoder { kind, seed, layers, params }
}

fn apply_layer<T: Scalar>(l: &LayerSpec, x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(match l.op {
        LayerOp::Linear => linear(x, w, Some(b))?,
        LayerOp::Conv2d => conv2d(x, w, Some(b), l.conv_params())?,
        LayerOp::ConvTranspose2d => conv_transpose2d(x, w, Some(b), l.conv_params())?,
    })
}

fn graph_layer<T: Scalar>(g: &mut Graph<'_, T>, l: &LayerSpec, x: Var, w: Var, b: Var) -> Result<Var> {
    Ok(match l.op {
        LayerOp::Linear => g.linear(x, w, Some(b))?,
        LayerOp::Conv2d => g.conv2d(x, w, Some(b), l.conv_params())?,
        LayerOp::ConvTranspose2d => g.conv_transpose2d(x, w, Some(b), l.conv_params())?,
    })
}

/// Nodes of one recorded forward pass.
#[derive(Debug, Clone, Copy)]
pub struct BaseOutputs {
    /// `[batch, 256]`.
    pub middle: Var,
    /// Same shape as the model input.
    pub recon: Var,
}

/// Records the forward pass of an autoencoder of `kind` whose parameters are the
/// graph nodes `params` (`[w₀, b₀, …]`). `x` is `[batch, 4096]` (MLP) or
/// `[batch, 1, 64, 64]` (CNN).
pub fn forward_graph<T: Scalar>(kind: BaseKind, g: &mut Graph<'_, T>, params: &[Var], x: Var) -> Result<BaseOutputs> {
    let layers = architecture(kind);
    if params.len() != layers.len() * 2 {
        return Err(Error::Input(format!("{kind} expects {} parameter nodes, got {}", layers.len() * 2, params.len())));
    }
    let batch = g.value(x).dims()[0];
    let n_enc = layers.iter().filter(|l| l.encoder).count();
    let mut h = x;
    for (i, l) in layers[..n_enc].iter().enumerate() {
        if i > 0 {
            h = g.relu(h);
        }
        h = graph_layer(g, l, h, params[2 * i], params[2 * i + 1])?;
    }
    let middle = g.reshape(h, &[batch, MIDDLE_DIM])?;
    let recon = decode_graph(kind, g, params, middle)?;
    Ok(BaseOutputs { middle, recon })
}

/// Decoder half of [`forward_graph`], starting from a `[batch, 256]` middle node.
pub fn decode_graph<T: Scalar>(kind: BaseKind, g: &mut Graph<'_, T>, params: &[Var], middle: Var) -> Result<Var> {
    let layers = architecture(kind);
    let batch = g.value(middle).dims()[0];
    let n_enc = layers.iter().filter(|l| l.encoder).count();
    let mut h = match kind {
        BaseKind::Mlp => middle,
        BaseKind::Cnn => g.reshape(middle, &[batch, MIDDLE_DIM, 1, 1])?,
    };
    for (i, l) in layers.iter().enumerate().skip(n_enc) {
        h = g.relu(h);
        h = graph_layer(g, l, h, params[2 * i], params[2 * i + 1])?;
    }
    Ok(h)
}

impl<T: Scalar> BaseAutoencoder<T> {
    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    fn n_encoder(&self) -> usize {
        self.layers.iter().filter(|l| l.encoder).count()
    }

    /// Reshapes `[n, 1, 64, 64]` pixels into this model's input layout.
    pub fn input_layout(&self, pixels: Tensor<T>) -> Result<Tensor<T>> {
        let n = pixels.dims()[0];
        Ok(match self.kind {
            BaseKind::Mlp => pixels.reshape(&[n, PIXELS])?,
            BaseKind::Cnn => pixels.reshape(&[n, 1, IMAGE_SIDE, IMAGE_SIDE])?,
        })
    }

    fn encode_chunk(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let n = x.dims()[0];
        let mut h = self.input_layout(x.clone())?;
        for (i, l) in self.layers[..self.n_encoder()].iter().enumerate() {
            if i > 0 {
                h = relu(&h);
            }
            h = apply_layer(l, &h, &self.params[2 * i], &self.params[2 * i + 1])?;
        }
        Ok(h.reshape(&[n, MIDDLE_DIM])?)
    }

    fn decode_chunk(&self, middle: &Tensor<T>) -> Result<Tensor<T>> {
        let n = middle.dims()[0];
        let mut h = match self.kind {
            BaseKind::Mlp => middle.clone(),
            BaseKind::Cnn => middle.clone().reshape(&[n, MIDDLE_DIM, 1, 1])?,
        };
        for (i, l) in self.layers.iter().enumerate().skip(self.n_encoder()) {
            h = apply_layer(l, &relu(&h), &self.params[2 * i], &self.params[2 * i + 1])?;
        }
        Ok(h.reshape(&[n, 1, IMAGE_SIDE, IMAGE_SIDE])?)
    }

    /// ψ for `[n, 1, 64, 64]` pixels, `[n, 256]`.
    pub fn middle_activations(&self, pixels: &Tensor<T>) -> Result<Tensor<T>> {
        check_pixels(pixels)?;
        self.chunked(pixels, PIXELS, MIDDLE_DIM, |c| self.encode_chunk(c))
    }

    /// Runs the decoder (ReLU first) on `[n, 256]` middle activations; `[n, 1, 64, 64]`.
    pub fn decode_from_middle(&self, middle: &Tensor<T>) -> Result<Tensor<T>> {
        if middle.ndim() != 2 || middle.dims()[1] != MIDDLE_DIM {
            return Err(Error::Input(format!("middle activations must be [n, 256], got {:?}", middle.dims())));
        }
        self.chunked(middle, MIDDLE_DIM, PIXELS, |c| self.decode_chunk(c))
    }

    pub fn reconstruct(&self, pixels: &Tensor<T>) -> Result<Tensor<T>> {
        self.decode_from_middle(&self.middle_activations(pixels)?)
    }

    /// Applies `f` to fixed-size row chunks in parallel and concatenates in order.
    fn chunked(&self, x: &Tensor<T>, width: usize, out_width: usize, f: impl Fn(&Tensor<T>) -> Result<Tensor<T>> + Sync) -> Result<Tensor<T>> {
        let n = x.dims()[0];
        let parts: Vec<Tensor<T>> = x
            .data()
            .par_chunks(INFER_CHUNK * width)
            .map(|chunk| {
                let mut dims = x.dims().to_vec();
                dims[0] = chunk.len() / width;
                f(&Tensor::new(dims, chunk.to_vec())?)
            })
            .collect::<Result<_>>()?;
        let mut data = Vec::with_capacity(n * out_width);
        let mut dims = parts[0].dims().to_vec();
        for p in parts {
            data.extend(p.into_data());
        }
        dims[0] = n;
        Ok(Tensor::new(dims, data)?)
    }
}

fn check_pixels<T: Scalar>(pixels: &Tensor<T>) -> Result<()> {
    match pixels.dims() {
        [_, 1, h, w] if *h == IMAGE_SIDE && *w == IMAGE_SIDE => Ok(()),
        d => Err(Error::Input(format!("expected [n, 1, 64, 64] pixels, got {d:?}"))),
    }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseTrainConfig {
    pub epochs: usize,
    pub n_samples: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Draw a fresh random quarter-turn for every sample in every epoch.
    #[serde(default = "default_true")]
    pub rotate_each_epoch: bool,
}

fn default_true() -> bool {
    true
}

impl Default for BaseTrainConfig {
    fn default() -> Self {
        Self { epochs: 100, n_samples: 10_000, batch_size: 64, learning_rate: 1e-3, seed: 0, rotate_each_epoch: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseTrainReport {
    /// Mean per-pixel MSE of each epoch.
    pub loss_history: Vec<f64>,
}

/// Minimizes pixel MSE between input and reconstruction with Adam.
///
/// The data order is reshuffled every epoch from `config.seed`; with
/// `rotate_each_epoch` each sample is also turned by a freshly drawn power.
pub fn train_base<T: Scalar>(
    model: &mut BaseAutoencoder<T>,
    images: &[LabeledImage],
    config: &BaseTrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<BaseTrainReport> {
    if images.is_empty() || config.batch_size == 0 {
        return Err(Error::Input("training needs at least one image and a positive batch size".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let param_refs: Vec<&Tensor<T>> = model.params.iter().collect();
    let mut adam = AdamState::new(AdamConfig::with_learning_rate(config.learning_rate), &param_refs)?;
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let powers: Vec<usize> =
            order.iter().map(|_| if config.rotate_each_epoch { rng.gen_range(0..4) } else { 0 }).collect();
        let mut total = 0.0;
        for (b, (idx, pw)) in order.chunks(config.batch_size).zip(powers.chunks(config.batch_size)).enumerate() {
            let mut data = Vec::with_capacity(idx.len() * PIXELS);
            for (&i, &p) in idx.iter().zip(pw) {
                let px = if p == 0 { images[i].pixels.clone() } else { rotate_image(&images[i].pixels, p) };
                data.extend(px.data().iter().map(|&v| T::from_f64(v as f64)));
            }
            let x = model.input_layout(Tensor::new(vec![idx.len(), 1, IMAGE_SIDE, IMAGE_SIDE], data)?)?;
            let (loss, grads) = {
                let mut g = Graph::new();
                let vars: Vec<Var> = model.params.iter().map(|p| g.param(p)).collect();
                let xv = g.constant_owned(x);
                let out = forward_graph(model.kind, &mut g, &vars, xv)?;
                let loss = g.mse(out.recon, xv)?;
                let lv = g.value(loss).item().as_f64();
                if !lv.is_finite() {
                    return Err(Error::Diverged(format!("{} base model: loss {lv} at epoch {epoch}, batch {b}", model.kind)));
                }
                let mut grads = g.backward(loss)?;
                let gs: Vec<Tensor<T>> =
                    vars.iter().zip(&model.params).map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.dims()))).collect();
                (lv, gs)
            };
            let grad_refs: Vec<&Tensor<T>> = grads.iter().collect();
            let mut params: Vec<&mut Tensor<T>> = model.params.iter_mut().collect();
            adam.step(&mut params, &grad_refs)?;
            total += loss * idx.len() as f64;
        }
        let mean = total / images.len() as f64;
        on_epoch(epoch, mean);
        history.push(mean);
    }
    Ok(BaseTrainReport { loss_history: history })
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

pub const BASE_SCHEMA: &str = "eqsae-base/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseManifest {
    pub schema: String,
    pub kind: BaseKind,
    pub seed: u64,
    pub precision: String,
    pub layers: Vec<LayerSpec>,
    pub files: Vec<String>,
    pub config: Option<BaseTrainConfig>,
    pub report: Option<BaseTrainReport>,
}

pub(crate) fn save_tensor<T: Scalar>(path: &Path, t: &Tensor<T>) -> Result<()> {
    etns::save(path, t).map_err(|e| match e {
        eqsae_numerics::Error::Io(io) => Error::io(path, io),
        other => other.into(),
    })
}

pub(crate) fn load_tensor<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    etns::load(path).map_err(|e| match e {
        eqsae_numerics::Error::Io(io) => Error::io(path, io),
        other => other.into(),
    })
}

/// Writes one ETNS file per parameter plus `manifest.json` into `dir`.
pub fn save_base<T: Scalar>(
    dir: &Path,
    model: &BaseAutoencoder<T>,
    config: Option<&BaseTrainConfig>,
    report: Option<&BaseTrainReport>,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for (i, l) in model.layers.iter().enumerate() {
        for (j, part) in ["weight", "bias"].iter().enumerate() {
            let file = format!("{}.{part}.etns", l.name);
            save_tensor(&dir.join(&file), &model.params[2 * i + j])?;
            files.push(file);
        }
    }
    let manifest = BaseManifest {
        schema: BASE_SCHEMA.into(),
        kind: model.kind,
        seed: model.seed,
        precision: T::PRECISION.name().into(),
        layers: model.layers.clone(),
        files,
        config: config.copied(),
        report: report.cloned(),
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

pub fn load_base<T: Scalar>(dir: &Path) -> Result<(BaseAutoencoder<T>, BaseManifest)> {
    let manifest: BaseManifest = read_json(&dir.join("manifest.json"))?;
    if manifest.schema != BASE_SCHEMA {
        return Err(Error::Input(format!("unsupported base checkpoint schema {}", manifest.schema)));
    }
    if manifest.layers != architecture(manifest.kind) {
        return Err(Error::Input(format!("{}: layer list does not match the {} architecture", dir.display(), manifest.kind)));
    }
    let mut params = Vec::with_capacity(manifest.files.len());
    for (i, file) in manifest.files.iter().enumerate() {
        let t: Tensor<T> = load_tensor(&dir.join(file))?;
        let l = &manifest.layers[i / 2];
        let expected = if i % 2 == 0 { &l.weight_dims } else { &l.bias_dims };
        if t.dims() != expected.as_slice() {
            return Err(Error::Input(format!("{file}: dims {:?}, expected {expected:?}", t.dims())));
        }
        params.push(t);
    }
    let model = BaseAutoencoder { kind: manifest.kind, seed: manifest.seed, layers: manifest.layers.clone(), params };
    Ok((model, manifest))
}
