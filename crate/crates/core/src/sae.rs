//! TopK sparse autoencoders over 256-d middle activations.
//!
//! `z = TopK(E(ψ))`, `ψ̂ = W_D z + b_D`. The encoder `E` is one affine map
//! (regular, wide) or affine → ReLU → affine with a 512-wide hidden layer
//! (two-layer, invariant). The invariant variant is trained to map every
//! member of an orbit onto the canonical member's activation.

use std::fmt;
use std::path::Path;

use eqsae_numerics::{linear, relu, AdamConfig, AdamState, Graph, Scalar, Tensor, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::base_models::{load_tensor, save_tensor, BaseAutoencoder, MIDDLE_DIM};
use crate::dataset::{orbit_count, stack_pixels, LabeledImage, GROUP_ORDER};
use crate::equivariance::{equivariant_reconstruct_batch, TransformMatrix};
use crate::error::{Error, Result};
use crate::util::{read_json, write_json};

const INFER_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SaeVariant {
    Regular,
    Wide,
    TwoLayer,
    Invariant,
}

impl SaeVariant {
    pub const ALL: [SaeVariant; 4] = [SaeVariant::Regular, SaeVariant::Wide, SaeVariant::TwoLayer, SaeVariant::Invariant];

    pub fn name(self) -> &'static str {
        match self {
            SaeVariant::Regular => "regular",
            SaeVariant::Wide => "wide",
            SaeVariant::TwoLayer => "two_layer",
            SaeVariant::Invariant => "invariant",
        }
    }

    pub fn n_latents(self) -> usize {
        match self {
            SaeVariant::Wide => 8192,
            _ => 2048,
        }
    }

    pub fn hidden(self) -> Option<usize> {
        match self {
            SaeVariant::TwoLayer | SaeVariant::Invariant => Some(512),
            _ => None,
        }
    }

    /// Objective the variant is trained with.
    pub fn mode(self) -> TrainMode {
        match self {
            SaeVariant::Invariant => TrainMode::Invariance,
            _ => TrainMode::Reconstruction,
        }
    }
}

impl fmt::Display for SaeVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// `‖ψ(x̃) − ψ̂(x̃)‖²` over rotation-augmented inputs.
    Reconstruction,
    /// `‖ψ(x) − ψ̂(g^p x)‖²`, canonical target for every member of the orbit.
    Invariance,
}

/// Sizes of one SAE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SaeShape {
    pub d: usize,
    pub n_latents: usize,
    pub hidden: Option<usize>,
    pub k: usize,
}

impl SaeShape {
    pub fn of(variant: SaeVariant, k: usize) -> Self {
        Self { d: MIDDLE_DIM, n_latents: variant.n_latents(), hidden: variant.hidden(), k }
    }

    /// `(out, in)` of every affine map: encoder layer(s) then decoder.
    fn affine_dims(&self) -> Vec<(usize, usize)> {
        let mut v = match self.hidden {
            Some(h) => vec![(h, self.d), (self.n_latents, h)],
            None => vec![(self.n_latents, self.d)],
        };
        v.push((self.d, self.n_latents));
        v
    }
}

/// Parameters `[w, b, …]` in the order of encoder layer(s) then decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct SaeModel<T> {
    pub variant: SaeVariant,
    pub shape: SaeShape,
    pub seed: u64,
    pub params: Vec<Tensor<T>>,
}

impl<T: Scalar> SaeModel<T> {
    pub fn new(variant: SaeVariant, k: usize, seed: u64) -> Result<Self> {
        Self::with_shape(variant, SaeShape::of(variant, k), seed)
    }

    /// Fan-in uniform initialization for an arbitrary shape (tests use tiny ones).
    pub fn with_shape(variant: SaeVariant, shape: SaeShape, seed: u64) -> Result<Self> {
        if shape.k == 0 || shape.k > shape.n_latents {
            return Err(Error::Input(format!("K={} outside 1..={}", shape.k, shape.n_latents)));
        }
        if variant.hidden().is_some() != shape.hidden.is_some() {
            return Err(Error::Input(format!("{variant} SAE hidden layer mismatch")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        for (out, inp) in shape.affine_dims() {
            params.push(Tensor::fan_in_uniform(&[out, inp], inp, &mut rng));
            params.push(Tensor::fan_in_uniform(&[out], inp, &mut rng));
        }
        Ok(Self { variant, shape, seed, params })
    }

    pub fn k(&self) -> usize {
        self.shape.k
    }

    pub fn decoder_weight(&self) -> &Tensor<T> {
        &self.params[self.params.len() - 2]
    }

    pub fn decoder_bias(&self) -> &Tensor<T> {
        &self.params[self.params.len() - 1]
    }

    fn check_input(&self, x: &Tensor<T>, width: usize, what: &str) -> Result<()> {
        if x.ndim() != 2 || x.dims()[1] != width {
            return Err(Error::Input(format!("{what} must be [n, {width}], got {:?}", x.dims())));
        }
        Ok(())
    }

    /// Encoder output before TopK.
    fn pre_activation(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let p = &self.params;
        Ok(match self.shape.hidden {
            Some(_) => linear(&relu(&linear(x, &p[0], Some(&p[1]))?), &p[2], Some(&p[3]))?,
            None => linear(x, &p[0], Some(&p[1]))?,
        })
    }

    /// Latents `[n, n_latents]` with at most K nonzeros per row.
    pub fn encode(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x, self.shape.d, "SAE input")?;
        par_rows(x, |c| Ok(eqsae_numerics::topk(&self.pre_activation(c)?, self.shape.k)?))
    }

    pub fn decode(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(z, self.shape.n_latents, "latents")?;
        par_rows(z, |c| Ok(linear(c, self.decoder_weight(), Some(self.decoder_bias()))?))
    }

    pub fn reconstruct(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.decode(&self.encode(x)?)
    }
}

/// Applies `f` to fixed-size row blocks in parallel and stacks the results in order.
pub(crate) fn par_rows<T: Scalar>(x: &Tensor<T>, f: impl Fn(&Tensor<T>) -> Result<Tensor<T>> + Sync) -> Result<Tensor<T>> {
    let width = x.len() / x.dims()[0];
    let parts: Vec<Tensor<T>> = x
        .data()
        .par_chunks(INFER_CHUNK * width)
        .map(|c| f(&Tensor::new(vec![c.len() / width, width], c.to_vec())?))
        .collect::<Result<_>>()?;
    let out_width = parts[0].dims()[1];
    let mut data = Vec::with_capacity(x.dims()[0] * out_width);
    for p in parts {
        data.extend(p.into_data());
    }
    Ok(Tensor::new(vec![x.dims()[0], out_width], data)?)
}

/// Records `decode(TopK(E(x)))` with parameter nodes `params`.
pub fn forward_graph<T: Scalar>(shape: &SaeShape, g: &mut Graph<'_, T>, params: &[Var], x: Var) -> Result<Var> {
    let pre = match shape.hidden {
        Some(_) => {
            let h = g.linear(x, params[0], Some(params[1]))?;
            let h = g.relu(h);
            g.linear(h, params[2], Some(params[3]))?
        }
        None => g.linear(x, params[0], Some(params[1]))?,
    };
    let n = params.len();
    Ok(g.topk_linear(pre, shape.k, params[n - 2], Some(params[n - 1]))?)
}

/// Training objective `mse(decode(encode(x)), target)` as a graph node.
pub fn loss_graph<T: Scalar>(shape: &SaeShape, g: &mut Graph<'_, T>, params: &[Var], x: Var, target: Var) -> Result<Var> {
    let recon = forward_graph(shape, g, params, x)?;
    Ok(g.mse(recon, target)?)
}

/// Mean over rows of the latent L1 norm.
pub fn latent_l1<T: Scalar>(sae: &SaeModel<T>, activations: &Tensor<T>) -> Result<f64> {
    Ok(l1_of_latents(&sae.encode(activations)?))
}

pub fn l1_of_latents<T: Scalar>(z: &Tensor<T>) -> f64 {
    let n = z.dims()[0];
    z.data().iter().map(|v| v.as_f64().abs()).sum::<f64>() / n as f64
}

/// Latents that are never nonzero on `activations`.
pub fn dead_latents<T: Scalar>(sae: &SaeModel<T>, activations: &Tensor<T>) -> Result<Vec<usize>> {
    let z = sae.encode(activations)?;
    let n = sae.shape.n_latents;
    let mut alive = vec![false; n];
    for row in z.data().chunks(n) {
        for (a, v) in alive.iter_mut().zip(row) {
            *a |= !v.is_zero();
        }
    }
    Ok((0..n).filter(|&i| !alive[i]).collect())
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaeTrainConfig {
    pub epochs: usize,
    pub n_samples: usize,
    /// Activation vectors per step in reconstruction mode, orbits per step in invariance mode.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for SaeTrainConfig {
    fn default() -> Self {
        Self { epochs: 500, n_samples: 10_000, batch_size: 64, learning_rate: 1e-3, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaeTrainReport {
    pub mode: TrainMode,
    /// Mean per-element MSE of each epoch.
    pub loss_history: Vec<f64>,
}

/// Middle activations of orbit-grouped images as `[n_orbits, 4, 256]`, or
/// `[n, 1, 256]` when the images are not whole orbits.
pub fn activation_orbits<T: Scalar>(base: &BaseAutoencoder<T>, images: &[LabeledImage]) -> Result<Tensor<T>> {
    let pixels = stack_pixels(images).convert::<T>();
    let acts = base.middle_activations(&pixels)?;
    let group = if orbit_count(images).is_ok() { GROUP_ORDER } else { 1 };
    Ok(acts.reshape(&[images.len() / group, group, MIDDLE_DIM])?)
}

/// Trains `sae` on the frozen `base` model's activations of `images`.
pub fn train_sae<T: Scalar>(
    sae: &mut SaeModel<T>,
    base: &BaseAutoencoder<T>,
    images: &[LabeledImage],
    mode: TrainMode,
    config: &SaeTrainConfig,
    on_epoch: impl FnMut(usize, f64),
) -> Result<SaeTrainReport> {
    if mode == TrainMode::Invariance {
        orbit_count(images)?;
    }
    let orbits = activation_orbits(base, images)?;
    train_sae_on_orbits(sae, &orbits, mode, config, on_epoch)
}

/// Trains on precomputed activations `[n_orbits, group, 256]` (`group` = 4 for whole
/// orbits, with member `p` at index `p`; `group` = 1 for plain samples).
///
/// Reconstruction mode draws one random member per orbit per epoch, so each epoch
/// sees `n_orbits` rotation-augmented samples. Invariance mode feeds every member
/// of each orbit and targets member 0.
pub fn train_sae_on_orbits<T: Scalar>(
    sae: &mut SaeModel<T>,
    orbits: &Tensor<T>,
    mode: TrainMode,
    config: &SaeTrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<SaeTrainReport> {
    let [n_orbits, group, d] = match orbits.dims() {
        &[a, b, c] => [a, b, c],
        other => return Err(Error::Input(format!("activations must be [n_orbits, group, d], got {other:?}"))),
    };
    if d != sae.shape.d || !(group == 1 || group == GROUP_ORDER) {
        return Err(Error::Input(format!("activation block {:?} does not fit SAE width {}", orbits.dims(), sae.shape.d)));
    }
    if mode == TrainMode::Invariance && group != GROUP_ORDER {
        return Err(Error::Input("invariance training needs orbit-grouped activations (all four rotations)".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::Input("batch size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let refs: Vec<&Tensor<T>> = sae.params.iter().collect();
    let mut adam = AdamState::new(AdamConfig::with_learning_rate(config.learning_rate), &refs)?;
    let mut order: Vec<usize> = (0..n_orbits).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut count = 0usize;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let (x, t) = assemble_batch(orbits, chunk, mode, &mut rng)?;
            let rows = x.dims()[0];
            let (loss, grads) = sae_step_gradients(sae, &x, &t)?;
            if !loss.is_finite() {
                return Err(Error::Diverged(format!("{} SAE: loss {loss} at epoch {epoch}, batch {b}", sae.variant)));
            }
            let grad_refs: Vec<&Tensor<T>> = grads.iter().collect();
            let mut params: Vec<&mut Tensor<T>> = sae.params.iter_mut().collect();
            adam.step(&mut params, &grad_refs)?;
            total += loss * rows as f64;
            count += rows;
        }
        let mean = total / count as f64;
        on_epoch(epoch, mean);
        history.push(mean);
    }
    Ok(SaeTrainReport { mode, loss_history: history })
}

/// Inputs and targets `[rows, d]` for the orbits `chunk` of `[n_orbits, group, d]` activations.
pub fn assemble_batch<T: Scalar>(
    orbits: &Tensor<T>,
    chunk: &[usize],
    mode: TrainMode,
    rng: &mut impl Rng,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (group, d) = (orbits.dims()[1], orbits.dims()[2]);
    let vec_at = |o: usize, p: usize| &orbits.data()[(o * group + p) * d..(o * group + p + 1) * d];
    let (mut xs, mut ts) = (Vec::new(), Vec::new());
    match mode {
        TrainMode::Reconstruction => {
            for &o in chunk {
                let p = if group > 1 { rng.gen_range(0..group) } else { 0 };
                xs.extend_from_slice(vec_at(o, p));
            }
            ts.clone_from(&xs);
        }
        TrainMode::Invariance => {
            for &o in chunk {
                for p in 0..group {
                    xs.extend_from_slice(vec_at(o, p));
                    ts.extend_from_slice(vec_at(o, 0));
                }
            }
        }
    }
    let rows = xs.len() / d;
    Ok((Tensor::new(vec![rows, d], xs)?, Tensor::new(vec![rows, d], ts)?))
}

/// Loss and parameter gradients of one batch.
pub fn sae_step_gradients<T: Scalar>(sae: &SaeModel<T>, x: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Vec<Tensor<T>>)> {
    let mut g = Graph::new();
    let vars: Vec<Var> = sae.params.iter().map(|p| g.param(p)).collect();
    let xv = g.constant(x);
    let tv = g.constant(target);
    let loss = loss_graph(&sae.shape, &mut g, &vars, xv, tv)?;
    let lv = g.value(loss).item().as_f64();
    if !lv.is_finite() {
        return Ok((lv, Vec::new()));
    }
    let mut grads = g.backward(loss)?;
    let out = vars.iter().zip(&sae.params).map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.dims()))).collect();
    Ok((lv, out))
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Base-model pixel MSE after replacing ψ by the SAE reconstruction. With `m`,
/// the reconstruction goes through the equivariant path (`M^{p*}` applied).
pub fn splice_loss<T: Scalar>(
    base: &BaseAutoencoder<T>,
    sae: &SaeModel<T>,
    pixels: &Tensor<T>,
    m: Option<&TransformMatrix<T>>,
) -> Result<f64> {
    let acts = base.middle_activations(pixels)?;
    let recon = match m {
        Some(m) => equivariant_reconstruct_batch(sae, m, &acts)?.0,
        None => sae.reconstruct(&acts)?,
    };
    let images = base.decode_from_middle(&recon)?;
    Ok(eqsae_numerics::mse(&images, pixels)?.as_f64())
}

fn sparse_rows<T: Scalar>(z: &Tensor<T>) -> Vec<Vec<(usize, f64)>> {
    let n = z.dims()[1];
    z.data()
        .chunks(n)
        .map(|row| row.iter().enumerate().filter(|(_, v)| !v.is_zero()).map(|(i, v)| (i, v.as_f64())).collect())
        .collect()
}

fn sparse_distance(a: &[(usize, f64)], b: &[(usize, f64)]) -> f64 {
    let (mut i, mut j, mut s) = (0, 0, 0.0);
    while i < a.len() || j < b.len() {
        let d = match (a.get(i), b.get(j)) {
            (Some(&(ia, va)), Some(&(ib, vb))) if ia == ib => {
                i += 1;
                j += 1;
                va - vb
            }
            (Some(&(ia, va)), Some(&(ib, _))) if ia < ib => {
                i += 1;
                va
            }
            (Some(&(_, va)), None) => {
                i += 1;
                va
            }
            (_, Some(&(_, vb))) => {
                j += 1;
                vb
            }
            (None, None) => unreachable!(),
        };
        s += d * d;
    }
    s.sqrt()
}

/// Mean within-orbit pairwise latent distance over mean between-orbit pairwise
/// distance, for latents laid out orbit-major (`[n_orbits·4, n_latents]`).
pub fn orbit_spread_ratio<T: Scalar>(latents: &Tensor<T>) -> Result<f64> {
    let n = latents.dims()[0];
    if n % GROUP_ORDER != 0 || n < 2 * GROUP_ORDER {
        return Err(Error::Input(format!("{n} latent rows do not form at least two orbits")));
    }
    let rows = sparse_rows(latents);
    let (within, between): (Vec<(f64, usize)>, Vec<(f64, usize)>) = (0..n)
        .into_par_iter()
        .map(|i| {
            let (mut w, mut wn, mut b, mut bn) = (0.0, 0usize, 0.0, 0usize);
            for j in i + 1..n {
                let dist = sparse_distance(&rows[i], &rows[j]);
                if i / GROUP_ORDER == j / GROUP_ORDER {
                    w += dist;
                    wn += 1;
                } else {
                    b += dist;
                    bn += 1;
                }
            }
            ((w, wn), (b, bn))
        })
        .unzip();
    let sum = |v: &[(f64, usize)]| v.iter().fold((0.0, 0usize), |(s, c), &(a, n)| (s + a, c + n));
    let (w, wn) = sum(&within);
    let (b, bn) = sum(&between);
    if b == 0.0 {
        return Err(Error::Degenerate("all latents coincide across orbits".into()));
    }
    Ok((w / wn as f64) / (b / bn as f64))
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

pub const SAE_SCHEMA: &str = "eqsae-sae/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaeManifest {
    pub schema: String,
    pub variant: SaeVariant,
    pub shape: SaeShape,
    pub seed: u64,
    pub precision: String,
    pub files: Vec<String>,
    pub config: Option<SaeTrainConfig>,
    pub report: Option<SaeTrainReport>,
}

const PARAM_NAMES_ONE: [&str; 4] = ["enc.weight", "enc.bias", "dec.weight", "dec.bias"];
const PARAM_NAMES_TWO: [&str; 6] = ["enc1.weight", "enc1.bias", "enc2.weight", "enc2.bias", "dec.weight", "dec.bias"];

pub fn save_sae<T: Scalar>(
    dir: &Path,
    sae: &SaeModel<T>,
    config: Option<&SaeTrainConfig>,
    report: Option<&SaeTrainReport>,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let names: &[&str] = if sae.shape.hidden.is_some() { &PARAM_NAMES_TWO } else { &PARAM_NAMES_ONE };
    let mut files = Vec::new();
    for (name, p) in names.iter().zip(&sae.params) {
        let file = format!("{name}.etns");
        save_tensor(&dir.join(&file), p)?;
        files.push(file);
    }
    let manifest = SaeManifest {
        schema: SAE_SCHEMA.into(),
        variant: sae.variant,
        shape: sae.shape,
        seed: sae.seed,
        precision: T::PRECISION.name().into(),
        files,
        config: config.copied(),
        report: report.cloned(),
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

pub fn load_sae<T: Scalar>(dir: &Path) -> Result<(SaeModel<T>, SaeManifest)> {
    let manifest: SaeManifest = read_json(&dir.join("manifest.json"))?;
    if manifest.schema != SAE_SCHEMA {
        return Err(Error::Input(format!("unsupported SAE checkpoint schema {}", manifest.schema)));
    }
    let expected: Vec<Vec<usize>> =
        manifest.shape.affine_dims().into_iter().flat_map(|(o, i)| [vec![o, i], vec![o]]).collect();
    if expected.len() != manifest.files.len() {
        return Err(Error::Input(format!("{}: expected {} tensors", dir.display(), expected.len())));
    }
    let mut params = Vec::new();
    for (file, dims) in manifest.files.iter().zip(&expected) {
        let t: Tensor<T> = load_tensor(&dir.join(file))?;
        if t.dims() != dims.as_slice() {
            return Err(Error::Input(format!("{file}: dims {:?}, expected {dims:?}", t.dims())));
        }
        params.push(t);
    }
    let sae = SaeModel { variant: manifest.variant, shape: manifest.shape, seed: manifest.seed, params };
    Ok((sae, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use eqsae_numerics::GradCheck;

    fn tiny(variant: SaeVariant, k: usize) -> SaeShape {
        SaeShape { d: 6, n_latents: 12, hidden: variant.hidden().map(|_| 8), k }
    }

    #[test]
    fn variant_sizes() {
        let sizes: Vec<_> = SaeVariant::ALL.iter().map(|v| (v.n_latents(), v.hidden())).collect();
        assert_eq!(sizes, vec![(2048, None), (8192, None), (2048, Some(512)), (2048, Some(512))]);
        let m = SaeModel::<f32>::new(SaeVariant::Invariant, 16, 0).unwrap();
        let dims: Vec<&[usize]> = m.params.iter().map(|p| p.dims()).collect();
        assert_eq!(dims, vec![&[512, 256][..], &[512], &[2048, 512], &[2048], &[256, 2048], &[256]]);
        assert!(SaeModel::<f32>::new(SaeVariant::Regular, 0, 0).is_err());
    }

    #[test]
    fn l0_is_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for variant in SaeVariant::ALL {
            let m = SaeModel::<f64>::with_shape(variant, tiny(variant, 3), 2).unwrap();
            let x = Tensor::uniform(&[10, 6], 1.0, &mut rng);
            let z = m.encode(&x).unwrap();
            for row in z.data().chunks(12) {
                assert_eq!(row.iter().filter(|v| **v != 0.0).count(), 3);
            }
            assert_eq!(m.reconstruct(&x).unwrap().dims(), &[10, 6]);
        }
    }

    #[test]
    fn zero_input_zero_biases_give_zero_latents() {
        let mut m = SaeModel::<f64>::with_shape(SaeVariant::Regular, tiny(SaeVariant::Regular, 3), 0).unwrap();
        m.params[1] = Tensor::zeros(&[12]);
        let z = m.encode(&Tensor::zeros(&[2, 6])).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn decode_basis_vectors() {
        let m = SaeModel::<f64>::with_shape(SaeVariant::Regular, tiny(SaeVariant::Regular, 3), 5).unwrap();
        let zero = m.decode(&Tensor::zeros(&[1, 12])).unwrap();
        assert_eq!(zero.data(), m.decoder_bias().data());
        let mut e = Tensor::zeros(&[1, 12]);
        e.data_mut()[4] = 1.0;
        let col = m.decode(&e).unwrap();
        for r in 0..6 {
            assert_eq!(col.data()[r], m.decoder_weight().data()[r * 12 + 4] + m.decoder_bias().data()[r]);
        }
    }

    #[test]
    fn latent_l1_examples() {
        assert_eq!(l1_of_latents(&Tensor::<f64>::zeros(&[3, 4])), 0.0);
        let z = Tensor::new(vec![1, 4], vec![0.0, 2.0, 0.0, 0.0]).unwrap();
        assert_eq!(l1_of_latents(&z), 2.0);
    }

    #[test]
    fn identity_sae_has_zero_loss() {
        let shape = SaeShape { d: 3, n_latents: 6, hidden: None, k: 6 };
        let mut m = SaeModel::<f64>::with_shape(SaeVariant::Regular, shape, 0).unwrap();
        m.params[0] = Tensor::from_fn(&[6, 3], |i| {
            let (r, c) = (i / 3, i % 3);
            if r % 3 == c { if r < 3 { 1.0 } else { -1.0 } } else { 0.0 }
        });
        m.params[1] = Tensor::zeros(&[6]);
        m.params[2] = Tensor::from_fn(&[3, 6], |i| {
            let (r, c) = (i / 6, i % 6);
            if c % 3 == r { if c < 3 { 0.5 } else { -0.5 } } else { 0.0 }
        });
        m.params[3] = Tensor::zeros(&[3]);
        let x = Tensor::new(vec![2, 3], vec![0.3, -1.2, 2.0, 0.0, 4.0, -0.5]).unwrap();
        let (loss, _) = sae_step_gradients(&m, &x, &x).unwrap();
        assert!(loss.abs() < 1e-15);
    }

    #[test]
    fn objective_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for variant in [SaeVariant::Regular, SaeVariant::Invariant] {
            let shape = tiny(variant, 4);
            let m = SaeModel::<f64>::with_shape(variant, shape, 7).unwrap();
            let x = Tensor::uniform(&[8, 6], 1.0, &mut rng);
            let target = Tensor::uniform(&[8, 6], 1.0, &mut rng);
            let report = GradCheck::new(1e-6, 1e-6).run(
                |g, vars| {
                    let x = g.constant_owned(x.clone());
                    let t = g.constant_owned(target.clone());
                    loss_graph(&shape, g, vars, x, t).map_err(|e| match e {
                        Error::Numerics(n) => n,
                        other => eqsae_numerics::Error::Format(other.to_string()),
                    })
                },
                &m.params,
            );
            assert!(report.passed, "{variant}: {report:?}");
        }
    }

    #[test]
    fn invariance_mode_needs_orbits() {
        let mut m = SaeModel::<f64>::with_shape(SaeVariant::Invariant, tiny(SaeVariant::Invariant, 2), 0).unwrap();
        let flat = Tensor::zeros(&[5, 1, 6]);
        let cfg = SaeTrainConfig { epochs: 1, ..Default::default() };
        assert!(matches!(train_sae_on_orbits(&mut m, &flat, TrainMode::Invariance, &cfg, |_, _| {}), Err(Error::Input(_))));
    }

    #[test]
    fn invariance_batch_targets_canonical_member() {
        let orbits = Tensor::<f64>::from_fn(&[3, 4, 2], |i| i as f64);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (x, t) = assemble_batch(&orbits, &[1], TrainMode::Invariance, &mut rng).unwrap();
        assert_eq!(x.data(), &[8.0, 9.0, 10.0, 11.0, 12.0, 13.0, 14.0, 15.0]);
        assert_eq!(t.data(), &[8.0, 9.0, 8.0, 9.0, 8.0, 9.0, 8.0, 9.0]);
        let (x, t) = assemble_batch(&orbits, &[2, 0], TrainMode::Reconstruction, &mut rng).unwrap();
        assert_eq!(x, t);
        assert_eq!(x.dims(), &[2, 2]);
    }

    #[test]
    fn training_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let orbits: Tensor<f32> = Tensor::uniform(&[16, 4, 6], 1.0, &mut rng);
        let cfg = SaeTrainConfig { epochs: 10, batch_size: 4, learning_rate: 1e-2, seed: 8, ..Default::default() };
        let run = |mode| {
            let variant = if mode == TrainMode::Invariance { SaeVariant::Invariant } else { SaeVariant::Regular };
            let mut m = SaeModel::with_shape(variant, tiny(variant, 3), 1).unwrap();
            let r = train_sae_on_orbits(&mut m, &orbits, mode, &cfg, |_, _| {}).unwrap();
            (m, r)
        };
        for mode in [TrainMode::Reconstruction, TrainMode::Invariance] {
            let (a, ra) = run(mode);
            let (b, rb) = run(mode);
            assert_eq!(a, b);
            assert_eq!(ra, rb);
            assert!(ra.loss_history.last().unwrap() < &ra.loss_history[0]);
        }
    }

    #[test]
    fn spread_ratio_of_invariant_codes_is_zero() {
        let z = Tensor::<f64>::from_fn(&[12, 5], |i| if (i % 5) == (i / 5) / 4 { 1.0 + (i / 20) as f64 } else { 0.0 });
        assert_eq!(orbit_spread_ratio(&z).unwrap(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noisy: Tensor<f64> = Tensor::uniform(&[12, 5], 1.0, &mut rng);
        assert!(orbit_spread_ratio(&noisy).unwrap() > 0.3);
    }

    #[test]
    fn sparse_distance_matches_dense() {
        let a = vec![(0, 1.0), (3, 2.0)];
        let b = vec![(1, -1.0), (3, 0.5), (4, 2.0)];
        let dense = [1.0f64 - 0.0, 0.0 + 1.0, 0.0, 2.0 - 0.5, -2.0];
        let oracle = dense.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((sparse_distance(&a, &b) - oracle).abs() < 1e-15);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = SaeModel::<f32>::with_shape(SaeVariant::TwoLayer, tiny(SaeVariant::TwoLayer, 2), 3).unwrap();
        save_sae(dir.path(), &m, None, None).unwrap();
        assert_eq!(load_sae::<f32>(dir.path()).unwrap().0, m);
    }
}
