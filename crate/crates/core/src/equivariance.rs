//! The linear action `M` of one quarter turn on middle activations.
//!
//! `M` is fitted so that `M^p ψ(x) ≈ ψ(g^p x)`. Given an invariant SAE, whose
//! reconstruction of any orbit member is the canonical activation, applying
//! `M^p` recovers the activation of the rotated input.

use std::path::Path;

use eqsae_numerics::{linear, AdamConfig, AdamState, Graph, Scalar, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::base_models::{load_tensor, save_tensor, BaseAutoencoder};
use crate::dataset::{orbit_count, LabeledImage, GROUP_ORDER};
use crate::error::{Error, Result};
use crate::sae::{activation_orbits, par_rows, SaeModel};

/// Square `d×d` matrix acting on column activations: `ψ(g x) ≈ M ψ(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformMatrix<T> {
    pub m: Tensor<T>,
}

impl<T: Scalar> TransformMatrix<T> {
    pub fn identity(d: usize) -> Self {
        Self { m: Tensor::identity(d) }
    }

    pub fn new(m: Tensor<T>) -> Result<Self> {
        match m.dims() {
            [a, b] if a == b => Ok(Self { m }),
            d => Err(Error::Input(format!("transform matrix must be square, got {d:?}"))),
        }
    }

    pub fn dim(&self) -> usize {
        self.m.dims()[0]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_tensor(path, &self.m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::new(load_tensor(path)?)
    }
}

/// `M^p` applied to every row of `x` (`[n, d]`), by repeated multiplication.
pub fn predict_transformed<T: Scalar>(m: &TransformMatrix<T>, x: &Tensor<T>, p: usize) -> Result<Tensor<T>> {
    let mut y = x.clone();
    for _ in 0..p {
        y = linear(&y, &m.m, None)?;
    }
    Ok(y)
}

/// `1 − Σ‖pred − truth‖² / Σ‖truth − mean(truth)‖²`, the mean taken per dimension.
pub fn r_squared<T: Scalar>(predicted: &Tensor<T>, truth: &Tensor<T>) -> Result<f64> {
    if !predicted.same_dims(truth) || truth.ndim() != 2 {
        return Err(Error::Input(format!("r_squared: {:?} vs {:?}", predicted.dims(), truth.dims())));
    }
    let (n, d) = (truth.dims()[0], truth.dims()[1]);
    if n < 2 {
        return Err(Error::Input("r_squared needs at least two rows".into()));
    }
    let mut mean = vec![0.0f64; d];
    for row in truth.data().chunks(d) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v.as_f64();
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for (prow, trow) in predicted.data().chunks(d).zip(truth.data().chunks(d)) {
        for j in 0..d {
            let t = trow[j].as_f64();
            ss_res += (prow[j].as_f64() - t).powi(2);
            ss_tot += (t - mean[j]).powi(2);
        }
    }
    if ss_tot == 0.0 {
        return Err(Error::Degenerate("r_squared: truth has zero total variance".into()));
    }
    Ok(1.0 - ss_res / ss_tot)
}

// ---------------------------------------------------------------------------
// Fitting
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub epochs: usize,
    /// Orbits per step.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { epochs: 150, batch_size: 64, learning_rate: 1e-3, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// R² of `M^p ψ(x)` against `ψ(g^p x)` for p = 1, 2, 3, 4 (p = 4 targets ψ(x)).
    pub r2_per_power: [f64; 4],
    pub r2_mean: f64,
    pub r2_std: f64,
    /// Same statistics with `M = I`.
    pub identity_per_power: [f64; 4],
    pub identity_baseline_r2: f64,
    pub identity_baseline_std: f64,
    /// Means over the three non-trivial rotations p = 1, 2, 3 only.
    pub r2_mean_rotations: f64,
    pub identity_mean_rotations: f64,
    pub epochs: usize,
    pub n_eval_orbits: usize,
    /// Mean fitting loss of each epoch.
    pub loss_history: Vec<f64>,
}

fn check_orbits<T: Scalar>(orbits: &Tensor<T>) -> Result<(usize, usize)> {
    match orbits.dims() {
        &[n, g, d] if g == GROUP_ORDER => Ok((n, d)),
        other => Err(Error::Input(format!("M fitting needs orbit activations [n, 4, d], got {other:?}"))),
    }
}

/// Member `p` of every orbit, `[n, d]`.
pub fn orbit_member<T: Scalar>(orbits: &Tensor<T>, p: usize) -> Result<Tensor<T>> {
    let (n, d) = check_orbits(orbits)?;
    let mut data = Vec::with_capacity(n * d);
    for o in 0..n {
        let start = (o * GROUP_ORDER + p % GROUP_ORDER) * d;
        data.extend_from_slice(&orbits.data()[start..start + d]);
    }
    Ok(Tensor::new(vec![n, d], data)?)
}

/// Adam from `M = I` on `Σ_{p=1..4} mse(M^p ψ(x), ψ(g^p x))`, all powers of each orbit per step.
pub fn fit_m_on_orbits<T: Scalar>(
    orbits: &Tensor<T>,
    config: &FitConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<(TransformMatrix<T>, Vec<f64>)> {
    let (n, d) = check_orbits(orbits)?;
    if config.batch_size == 0 {
        return Err(Error::Input("batch size must be positive".into()));
    }
    let mut m = TransformMatrix::<T>::identity(d);
    let mut adam = AdamState::new(AdamConfig::with_learning_rate(config.learning_rate), &[&m.m])?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let members: Vec<Tensor<T>> = (0..GROUP_ORDER).map(|p| orbit_member(orbits, p)).collect::<Result<_>>()?;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<Tensor<T>> = members.iter().map(|t| t.select_rows(chunk)).collect();
            let (loss, grad) = {
                let mut g = Graph::new();
                let mv = g.param(&m.m);
                let mut h = g.constant(&batch[0]);
                let mut acc = None;
                for p in 1..=GROUP_ORDER {
                    h = g.linear(h, mv, None)?;
                    let target = g.constant(&batch[p % GROUP_ORDER]);
                    let term = g.mse(h, target)?;
                    acc = Some(match acc {
                        None => term,
                        Some(a) => g.add(a, term)?,
                    });
                }
                let loss = acc.expect("at least one power");
                let lv = g.value(loss).item().as_f64();
                if !lv.is_finite() {
                    return Err(Error::Diverged(format!("M fit: loss {lv} at epoch {epoch}, batch {b}")));
                }
                let mut grads = g.backward(loss)?;
                (lv, grads.take(mv).unwrap_or_else(|| Tensor::zeros(&[d, d])))
            };
            adam.step(&mut [&mut m.m], &[&grad])?;
            total += loss * chunk.len() as f64;
        }
        let mean = total / n as f64;
        on_epoch(epoch, mean);
        history.push(mean);
    }
    Ok((m, history))
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
    (mean, var.sqrt())
}

/// R² of `M` and of the identity on held-out orbit activations.
pub fn evaluate_fit<T: Scalar>(m: &TransformMatrix<T>, orbits: &Tensor<T>, loss_history: Vec<f64>) -> Result<FitReport> {
    let (n, _) = check_orbits(orbits)?;
    let canonical = orbit_member(orbits, 0)?;
    let identity = TransformMatrix::identity(m.dim());
    let mut learned = [0.0; 4];
    let mut ident = [0.0; 4];
    let mut pred = canonical.clone();
    for p in 1..=GROUP_ORDER {
        pred = predict_transformed(m, &pred, 1)?;
        let truth = orbit_member(orbits, p)?;
        learned[p - 1] = r_squared(&pred, &truth)?;
        ident[p - 1] = r_squared(&predict_transformed(&identity, &canonical, p)?, &truth)?;
    }
    let (r2_mean, r2_std) = mean_std(&learned);
    let (identity_baseline_r2, identity_baseline_std) = mean_std(&ident);
    Ok(FitReport {
        r2_per_power: learned,
        r2_mean,
        r2_std,
        identity_per_power: ident,
        identity_baseline_r2,
        identity_baseline_std,
        r2_mean_rotations: mean_std(&learned[..3]).0,
        identity_mean_rotations: mean_std(&ident[..3]).0,
        epochs: loss_history.len(),
        n_eval_orbits: n,
        loss_history,
    })
}

/// Fits `M` on the base model's activations of `train` orbits and reports R² on `eval` orbits.
pub fn fit_m<T: Scalar>(
    base: &BaseAutoencoder<T>,
    train: &[LabeledImage],
    eval: &[LabeledImage],
    config: &FitConfig,
    on_epoch: impl FnMut(usize, f64),
) -> Result<(TransformMatrix<T>, FitReport)> {
    orbit_count(train)?;
    orbit_count(eval)?;
    let (m, history) = fit_m_on_orbits(&activation_orbits(base, train)?, config, on_epoch)?;
    let report = evaluate_fit(&m, &activation_orbits(base, eval)?, history)?;
    Ok((m, report))
}

// ---------------------------------------------------------------------------
// Equivariant reconstruction
// ---------------------------------------------------------------------------

/// For each row `a`: `ĉ = decode(encode(a))`, `p* = argmin_p ‖a − M^p ĉ‖²` (smallest
/// p on ties), reconstruction `M^{p*} ĉ`.
pub fn equivariant_reconstruct_batch<T: Scalar>(
    sae: &SaeModel<T>,
    m: &TransformMatrix<T>,
    activations: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<u8>)> {
    let canonical = sae.reconstruct(activations)?;
    let p_star = infer_powers(m, activations, &canonical)?;
    Ok((apply_powers(m, &canonical, &p_star)?, p_star))
}

/// Single-vector form of [`equivariant_reconstruct_batch`].
pub fn equivariant_reconstruct<T: Scalar>(
    sae: &SaeModel<T>,
    m: &TransformMatrix<T>,
    activation: &Tensor<T>,
) -> Result<(Tensor<T>, u8)> {
    let d = activation.len();
    let (r, p) = equivariant_reconstruct_batch(sae, m, &activation.clone().reshape(&[1, d])?)?;
    Ok((r.reshape(&[d])?, p[0]))
}

/// Residual-argmin power for each row of `activations` given canonical reconstructions.
pub fn infer_powers<T: Scalar>(m: &TransformMatrix<T>, activations: &Tensor<T>, canonical: &Tensor<T>) -> Result<Vec<u8>> {
    if !activations.same_dims(canonical) {
        return Err(Error::Input(format!("{:?} vs {:?}", activations.dims(), canonical.dims())));
    }
    let n = activations.dims()[0];
    let d = m.dim();
    let mut best = vec![(f64::INFINITY, 0u8); n];
    let mut cur = canonical.clone();
    for p in 0..GROUP_ORDER {
        if p > 0 {
            cur = par_rows(&cur, |c| predict_transformed(m, c, 1))?;
        }
        for (i, (a, c)) in activations.data().chunks(d).zip(cur.data().chunks(d)).enumerate() {
            let r: f64 = a.iter().zip(c).map(|(&x, &y)| (x.as_f64() - y.as_f64()).powi(2)).sum();
            if r < best[i].0 {
                best[i] = (r, p as u8);
            }
        }
    }
    Ok(best.into_iter().map(|(_, p)| p).collect())
}

/// Row `i` of `x` mapped by `M^{powers[i]}`.
pub fn apply_powers<T: Scalar>(m: &TransformMatrix<T>, x: &Tensor<T>, powers: &[u8]) -> Result<Tensor<T>> {
    let d = m.dim();
    let mut out = x.clone();
    let mut cur = x.clone();
    for p in 1..GROUP_ORDER as u8 {
        cur = par_rows(&cur, |c| predict_transformed(m, c, 1))?;
        for (i, &pi) in powers.iter().enumerate() {
            if pi == p {
                out.data_mut()[i * d..(i + 1) * d].copy_from_slice(&cur.data()[i * d..(i + 1) * d]);
            }
        }
    }
    Ok(out)
}

/// Fraction of orbit members (`[n, 4, d]`) whose inferred power equals their true power.
pub fn power_inference_accuracy<T: Scalar>(sae: &SaeModel<T>, m: &TransformMatrix<T>, orbits: &Tensor<T>) -> Result<f64> {
    let (n, d) = check_orbits(orbits)?;
    let flat = orbits.clone().reshape(&[n * GROUP_ORDER, d])?;
    let (_, p) = equivariant_reconstruct_batch(sae, m, &flat)?;
    let hits = p.iter().enumerate().filter(|(i, &pi)| i % GROUP_ORDER == pi as usize).count();
    Ok(hits as f64 / p.len() as f64)
}

// ---------------------------------------------------------------------------
// Dictionary features
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureLabel {
    Invariant,
    Equivariant,
    Dead,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureClass {
    pub latent: usize,
    /// Cosine between `D_i` and `M D_i`; `None` for dead latents.
    pub similarity: Option<f64>,
    pub label: FeatureLabel,
}

/// Labels latent `i` invariant iff `cos(D_i, M D_i) > threshold`. Zero-norm columns and
/// the optional `dead` latents are labeled dead.
pub fn classify_dictionary_features<T: Scalar>(
    sae: &SaeModel<T>,
    m: &TransformMatrix<T>,
    threshold: f64,
    dead: Option<&[usize]>,
) -> Result<Vec<FeatureClass>> {
    let w = sae.decoder_weight();
    let (d, n) = (w.dims()[0], w.dims()[1]);
    if m.dim() != d {
        return Err(Error::Input(format!("M is {0}x{0}, dictionary columns have {d} entries", m.dim())));
    }
    // Columns of D are rows of Dᵀ, and rows of Dᵀ Mᵀ are M D_i.
    let dt = Tensor::from_fn(&[n, d], |i| w.data()[(i % d) * n + i / d]);
    let mdt = linear(&dt, &m.m, None)?;
    let mut is_dead = vec![false; n];
    for &i in dead.unwrap_or(&[]) {
        if i < n {
            is_dead[i] = true;
        }
    }
    Ok((0..n)
        .map(|i| {
            let (a, b) = (dt.row(i), mdt.row(i));
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x.as_f64() * y.as_f64()).sum();
            let na: f64 = a.iter().map(|x| x.as_f64().powi(2)).sum();
            let nb: f64 = b.iter().map(|x| x.as_f64().powi(2)).sum();
            if is_dead[i] || na == 0.0 || nb == 0.0 {
                return FeatureClass { latent: i, similarity: None, label: FeatureLabel::Dead };
            }
            let s = (dot / (na * nb).sqrt()).clamp(-1.0, 1.0);
            let label = if s > threshold { FeatureLabel::Invariant } else { FeatureLabel::Equivariant };
            FeatureClass { latent: i, similarity: Some(s), label }
        })
        .collect())
}

/// Counts of similarities in `bins` equal-width bins over `[-1, 1]`: `(lower, upper, count)`.
pub fn similarity_histogram(classes: &[FeatureClass], bins: usize) -> Vec<(f64, f64, usize)> {
    let width = 2.0 / bins as f64;
    let mut counts = vec![0usize; bins];
    for s in classes.iter().filter_map(|c| c.similarity) {
        let b = (((s + 1.0) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts.into_iter().enumerate().map(|(b, c)| (-1.0 + b as f64 * width, -1.0 + (b + 1) as f64 * width, c)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sae::{SaeShape, SaeVariant};

    fn two_pass_r2(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> f64 {
        let d = truth[0].len();
        let n = truth.len() as f64;
        let means: Vec<f64> = (0..d).map(|j| truth.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let res: f64 = pred.iter().zip(truth).flat_map(|(p, t)| p.iter().zip(t).map(|(a, b)| (a - b) * (a - b))).sum();
        let tot: f64 = truth.iter().flat_map(|t| t.iter().zip(&means).map(|(a, m)| (a - m) * (a - m))).sum();
        1.0 - res / tot
    }

    #[test]
    fn r_squared_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let truth: Tensor<f64> = Tensor::uniform(&[7, 3], 1.0, &mut rng);
        assert_eq!(r_squared(&truth, &truth).unwrap(), 1.0);
        let mean = Tensor::from_fn(&[7, 3], |i| (0..7).map(|r| truth.data()[r * 3 + i % 3]).sum::<f64>() / 7.0);
        assert!(r_squared(&mean, &truth).unwrap().abs() < 1e-12);
        let pred: Tensor<f64> = Tensor::uniform(&[7, 3], 1.0, &mut rng);
        let rows = |t: &Tensor<f64>| t.data().chunks(3).map(|c| c.to_vec()).collect::<Vec<_>>();
        let oracle = two_pass_r2(&rows(&pred), &rows(&truth));
        assert!((r_squared(&pred, &truth).unwrap() - oracle).abs() < 1e-10);
        assert!(r_squared(&pred, &Tensor::full(&[7, 3], 2.0)).is_err());
    }

    #[test]
    fn predict_powers() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = TransformMatrix::new(Tensor::<f64>::uniform(&[4, 4], 1.0, &mut rng)).unwrap();
        let x: Tensor<f64> = Tensor::uniform(&[3, 4], 1.0, &mut rng);
        assert_eq!(predict_transformed(&m, &x, 0).unwrap(), x);
        assert_eq!(predict_transformed(&TransformMatrix::identity(4), &x, 3).unwrap(), x);
        // M² via an explicit matrix square, then (M² x_i) per row.
        let a = m.m.data();
        let sq: Vec<f64> =
            (0..16).map(|ij| (0..4).map(|k| a[(ij / 4) * 4 + k] * a[k * 4 + ij % 4]).sum()).collect();
        let got = predict_transformed(&m, &x, 2).unwrap();
        for i in 0..3 {
            for r in 0..4 {
                let want: f64 = (0..4).map(|c| sq[r * 4 + c] * x.data()[i * 4 + c]).sum();
                assert!((got.data()[i * 4 + r] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn invariant_data_fits_at_step_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let canon: Tensor<f64> = Tensor::uniform(&[10, 5], 1.0, &mut rng);
        let orbits = Tensor::from_fn(&[10, 4, 5], |i| canon.data()[(i / 20) * 5 + i % 5]);
        let cfg = FitConfig { epochs: 1, batch_size: 10, ..Default::default() };
        let (m, hist) = fit_m_on_orbits(&orbits, &cfg, |_, _| {}).unwrap();
        assert_eq!(hist[0], 0.0);
        assert_eq!(m, TransformMatrix::identity(5));
    }

    #[test]
    fn fit_recovers_a_planted_rotation() {
        // Activations rotate by a known order-4 linear map; the fit should find it.
        let d = 4;
        let g = Tensor::<f64>::new(vec![d, d], vec![0., -1., 0., 0., 1., 0., 0., 0., 0., 0., 0., 1., 0., 0., 1., 0.]).unwrap();
        let gm = TransformMatrix::new(g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let canon: Tensor<f64> = Tensor::uniform(&[64, d], 1.0, &mut rng);
        let members: Vec<Tensor<f64>> = (0..4).map(|p| predict_transformed(&gm, &canon, p).unwrap()).collect();
        let orbits = Tensor::from_fn(&[64, 4, d], |i| members[(i / d) % 4].data()[(i / (4 * d)) * d + i % d]);
        let cfg = FitConfig { epochs: 300, batch_size: 16, learning_rate: 1e-2, seed: 1 };
        let (m, hist) = fit_m_on_orbits(&orbits, &cfg, |_, _| {}).unwrap();
        let report = evaluate_fit(&m, &orbits, hist).unwrap();
        assert!(report.r2_mean > 0.99, "{report:?}");
        assert!(report.r2_mean - report.identity_baseline_r2 > 0.3);
        assert!(report.loss_history.last().unwrap() < &report.loss_history[0]);
    }

    fn tiny_sae() -> SaeModel<f64> {
        SaeModel::with_shape(SaeVariant::Invariant, SaeShape { d: 4, n_latents: 6, hidden: Some(5), k: 2 }, 3).unwrap()
    }

    #[test]
    fn identity_m_degenerates_to_plain_reconstruction() {
        let sae = tiny_sae();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Tensor<f64> = Tensor::uniform(&[6, 4], 1.0, &mut rng);
        let (r, p) = equivariant_reconstruct_batch(&sae, &TransformMatrix::identity(4), &x).unwrap();
        assert_eq!(r, sae.reconstruct(&x).unwrap());
        assert!(p.iter().all(|&v| v == 0));
    }

    #[test]
    fn exact_power_is_recovered() {
        let m = TransformMatrix::new(
            Tensor::<f64>::new(vec![4, 4], vec![0., -1., 0., 0., 1., 0., 0., 0., 0., 0., 0., 1., 0., 0., 1., 0.]).unwrap(),
        )
        .unwrap();
        let canonical = Tensor::new(vec![1, 4], vec![0.7, -0.2, 0.4, 1.1]).unwrap();
        let target = predict_transformed(&m, &canonical, 2).unwrap();
        let p = infer_powers(&m, &target, &canonical).unwrap();
        assert_eq!(p, vec![2]);
        let moved = apply_powers(&m, &canonical, &p).unwrap();
        assert_eq!(moved, target);
    }

    #[test]
    fn classify_planted_directions() {
        let mut sae = tiny_sae();
        // Column 0 is fixed by M, column 1 is negated, column 2 is zero.
        let m = TransformMatrix::new(Tensor::<f64>::from_fn(&[4, 4], |i| match i {
            0 => 1.0,
            5 | 10 | 15 => -1.0,
            _ => 0.0,
        }))
        .unwrap();
        let mut w = Tensor::zeros(&[4, 6]);
        w.data_mut()[0] = 3.0; // D_0 = 3 e_0
        w.data_mut()[6 + 1] = 1.0; // D_1 = e_1 + 2 e_2
        w.data_mut()[12 + 1] = 2.0;
        for j in 3..6 {
            w.data_mut()[j] = 1.0;
            w.data_mut()[6 + j] = 1.0;
        }
        sae.params[4] = w;
        let c = classify_dictionary_features(&sae, &m, 0.9, Some(&[5])).unwrap();
        assert_eq!((c[0].similarity, c[0].label), (Some(1.0), FeatureLabel::Invariant));
        assert_eq!((c[1].similarity, c[1].label), (Some(-1.0), FeatureLabel::Equivariant));
        assert_eq!((c[2].similarity, c[2].label), (None, FeatureLabel::Dead));
        assert_eq!(c[3].similarity, Some(0.0));
        assert_eq!(c[5].label, FeatureLabel::Dead);
        let hist = similarity_histogram(&c, 4);
        assert_eq!(hist.iter().map(|h| h.2).collect::<Vec<_>>(), vec![1, 0, 2, 1]);
    }
}
