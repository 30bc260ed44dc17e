//! Binary probes over activations, truncated SAE latents and truncated SAE
//! reconstructions, scored by F1 over the 180 shape tasks.

use std::fmt;
use std::io::Write;
use std::path::Path;

use eqsae_numerics::{gemm, Scalar, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{ImageSpec, TaskFamily, TaskSpec, GROUP_ORDER};
use crate::equivariance::{apply_powers, TransformMatrix};
use crate::error::{Error, Result};
use crate::sae::{SaeModel, SaeVariant};
use crate::util::derive_seed;

pub const KNN_NEIGHBORS: usize = 16;
pub const KNN_VOTES: usize = 8;

/// `2·P·R / (P + R)`, 0 when both vanish.
pub fn f1_score(predictions: &[bool], labels: &[bool]) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    if tp == 0 {
        return 0.0;
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fn_) as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Features with a train/test split. Rows are samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeDataset {
    pub features: Tensor<f64>,
    pub labels: Vec<bool>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl ProbeDataset {
    pub fn new(features: Tensor<f64>, labels: Vec<bool>, train: Vec<usize>, test: Vec<usize>) -> Result<Self> {
        let n = features.dims()[0];
        if features.ndim() != 2 || labels.len() != n {
            return Err(Error::Input(format!("features {:?} vs {} labels", features.dims(), labels.len())));
        }
        let mut seen = vec![false; n];
        for &i in train.iter().chain(&test) {
            if i >= n || seen[i] {
                return Err(Error::Input(format!("split index {i} is out of range or repeated")));
            }
            seen[i] = true;
        }
        if test.is_empty() || train.is_empty() {
            return Err(Error::Degenerate("empty train or test split".into()));
        }
        Ok(Self { features, labels, train, test })
    }

    pub fn width(&self) -> usize {
        self.features.dims()[1]
    }

    fn rows(&self, idx: &[usize]) -> Tensor<f64> {
        self.features.select_rows(idx)
    }

    fn labels_of(&self, idx: &[usize]) -> Vec<bool> {
        idx.iter().map(|&i| self.labels[i]).collect()
    }

    fn test_f1(&self, predictions: &[bool]) -> f64 {
        f1_score(predictions, &self.labels_of(&self.test))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Probe {
    Knn,
    Logreg,
    Gbt,
}

impl Probe {
    pub const ALL: [Probe; 3] = [Probe::Knn, Probe::Logreg, Probe::Gbt];

    pub fn name(self) -> &'static str {
        match self {
            Probe::Knn => "knn",
            Probe::Logreg => "logreg",
            Probe::Gbt => "gbt",
        }
    }
}

impl fmt::Display for Probe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

// ---------------------------------------------------------------------------
// Truncation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TruncationSelection {
    /// Distinct latent indices, best score first.
    pub selected_indices: Vec<usize>,
}

/// Latent codes stored row-wise as `(index, value)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseLatents {
    pub n_latents: usize,
    pub rows: Vec<Vec<(u32, f32)>>,
}

impl SparseLatents {
    pub fn from_dense<T: Scalar>(z: &Tensor<T>) -> Self {
        let n_latents = z.dims()[1];
        let rows = z
            .data()
            .chunks(n_latents)
            .map(|r| r.iter().enumerate().filter(|(_, v)| !v.is_zero()).map(|(i, v)| (i as u32, v.as_f64() as f32)).collect())
            .collect();
        Self { n_latents, rows }
    }

    /// Encodes `activations` in blocks so the dense latent matrix never exists in full.
    pub fn encode(sae: &SaeModel<f32>, activations: &Tensor<f32>) -> Result<Self> {
        let d = activations.dims()[1];
        let blocks: Vec<Vec<Vec<(u32, f32)>>> = activations
            .data()
            .par_chunks(256 * d)
            .map(|c| Ok(SparseLatents::from_dense(&sae.encode(&Tensor::new(vec![c.len() / d, d], c.to_vec())?)?).rows))
            .collect::<Result<_>>()?;
        Ok(Self { n_latents: sae.shape.n_latents, rows: blocks.into_iter().flatten().collect() })
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self { n_latents: self.n_latents, rows: idx.iter().map(|&i| self.rows[i].clone()).collect() }
    }

    pub fn to_dense(&self) -> Tensor<f64> {
        let mut t = Tensor::zeros(&[self.rows.len(), self.n_latents]);
        for (r, row) in self.rows.iter().enumerate() {
            for &(i, v) in row {
                t.data_mut()[r * self.n_latents + i as usize] = v as f64;
            }
        }
        t
    }

    /// Values of the `selected` latents, `[n, L]`.
    pub fn gather(&self, selected: &[usize]) -> Tensor<f64> {
        let mut pos = vec![usize::MAX; self.n_latents];
        for (j, &i) in selected.iter().enumerate() {
            pos[i] = j;
        }
        let l = selected.len();
        let mut t = Tensor::zeros(&[self.rows.len(), l]);
        for (r, row) in self.rows.iter().enumerate() {
            for &(i, v) in row {
                let j = pos[i as usize];
                if j != usize::MAX {
                    t.data_mut()[r * l + j] = v as f64;
                }
            }
        }
        t
    }
}

fn rank_scores(scores: &[f64], l: usize) -> TruncationSelection {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(l.min(scores.len()));
    TruncationSelection { selected_indices: idx }
}

fn check_two_classes(labels: &[bool]) -> Result<(usize, usize)> {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Degenerate("training labels contain a single class".into()));
    }
    Ok((pos, neg))
}

/// Top `l` latents by `|mean(z_i | positive) − mean(z_i | negative)|` over the
/// given (training) rows; equal scores keep index order.
pub fn select_top_latents<T: Scalar>(latents: &Tensor<T>, labels: &[bool], l: usize) -> Result<TruncationSelection> {
    if latents.ndim() != 2 || latents.dims()[0] != labels.len() {
        return Err(Error::Input(format!("latents {:?} vs {} labels", latents.dims(), labels.len())));
    }
    let (pos, neg) = check_two_classes(labels)?;
    let n = latents.dims()[1];
    let (mut sp, mut sn) = (vec![0.0; n], vec![0.0; n]);
    for (row, &y) in latents.data().chunks(n).zip(labels) {
        let acc = if y { &mut sp } else { &mut sn };
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v.as_f64();
        }
    }
    let scores: Vec<f64> = sp.iter().zip(&sn).map(|(p, q)| (p / pos as f64 - q / neg as f64).abs()).collect();
    Ok(rank_scores(&scores, l))
}

/// [`select_top_latents`] over sparse training rows.
pub fn select_top_latents_sparse(latents: &SparseLatents, labels: &[bool], l: usize) -> Result<TruncationSelection> {
    if latents.rows.len() != labels.len() {
        return Err(Error::Input(format!("{} latent rows vs {} labels", latents.rows.len(), labels.len())));
    }
    let (pos, neg) = check_two_classes(labels)?;
    let (mut sp, mut sn) = (vec![0.0f64; latents.n_latents], vec![0.0f64; latents.n_latents]);
    for (row, &y) in latents.rows.iter().zip(labels) {
        let acc = if y { &mut sp } else { &mut sn };
        for &(i, v) in row {
            acc[i as usize] += v as f64;
        }
    }
    let scores: Vec<f64> = sp.iter().zip(&sn).map(|(p, q)| (p / pos as f64 - q / neg as f64).abs()).collect();
    Ok(rank_scores(&scores, l))
}

// ---------------------------------------------------------------------------
// kNN
// ---------------------------------------------------------------------------

/// Indices (into `train`) of the `k` nearest training rows of every test row,
/// nearest first, lower index first on equal distance.
pub fn knn_neighbors(train: &Tensor<f64>, test: &Tensor<f64>, k: usize) -> Result<Vec<Vec<usize>>> {
    let (ntr, f) = (train.dims()[0], train.dims()[1]);
    if test.dims()[1] != f {
        return Err(Error::Input(format!("train width {f} vs test width {}", test.dims()[1])));
    }
    if ntr < k {
        return Err(Error::Degenerate(format!("kNN needs at least {k} training rows, got {ntr}")));
    }
    let sq = |t: &Tensor<f64>| t.data().chunks(f).map(|r| r.iter().map(|v| v * v).sum::<f64>()).collect::<Vec<f64>>();
    let (ntrain, ntest) = (sq(train), sq(test));
    Ok(test
        .data()
        .par_chunks(256 * f)
        .enumerate()
        .flat_map_iter(|(block, rows)| {
            let m = rows.len() / f;
            let mut dots = vec![0.0; m * ntr];
            gemm(false, true, m, ntr, f, 1.0, rows, train.data(), 0.0, &mut dots);
            (0..m)
                .map(|r| {
                    let i = block * 256 + r;
                    let dist: Vec<f64> = (0..ntr).map(|j| ntest[i] + ntrain[j] - 2.0 * dots[r * ntr + j]).collect();
                    let by = |a: &usize, b: &usize| dist[*a].total_cmp(&dist[*b]).then(a.cmp(b));
                    let mut idx: Vec<usize> = (0..ntr).collect();
                    idx.select_nth_unstable_by(k - 1, by);
                    idx.truncate(k);
                    idx.sort_by(by);
                    idx
                })
                .collect::<Vec<_>>()
        })
        .collect())
}

fn knn_vote(neighbors: &[Vec<usize>], train_labels: &[bool]) -> Vec<bool> {
    neighbors.iter().map(|nb| nb.iter().filter(|&&j| train_labels[j]).count() >= KNN_VOTES).collect()
}

/// Positive iff at least 8 of the 16 nearest training rows are positive.
pub fn knn_probe(data: &ProbeDataset) -> Result<f64> {
    let neighbors = knn_neighbors(&data.rows(&data.train), &data.rows(&data.test), KNN_NEIGHBORS)?;
    Ok(data.test_f1(&knn_vote(&neighbors, &data.labels_of(&data.train))))
}

// ---------------------------------------------------------------------------
// Logistic regression
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogregParams {
    pub learning_rate: f64,
    pub l2: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for LogregParams {
    fn default() -> Self {
        Self { learning_rate: 1e-3, l2: 1e-4, epochs: 200, batch_size: 64 }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Mean cross-entropy of `sigmoid(w·x + b)` plus `l2/2·‖w‖²`, with its gradient in `(w, b)`.
pub fn logreg_objective(w: &[f64], b: f64, x: &[f64], y: &[bool], l2: f64) -> (f64, Vec<f64>, f64) {
    let mut gw = vec![0.0; w.len()];
    let (loss, gb) = logreg_objective_into(w, b, x, y, l2, &mut gw);
    (loss, gw, gb)
}

fn logreg_objective_into(w: &[f64], b: f64, x: &[f64], y: &[bool], l2: f64, gw: &mut [f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let mut loss = 0.0;
    let mut gb = 0.0;
    gw.iter_mut().for_each(|g| *g = 0.0);
    for (row, &yi) in x.chunks(w.len()).zip(y) {
        let z = row.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + b;
        // −log σ(z) = softplus(−z), −log(1 − σ(z)) = softplus(z)
        loss += if yi { softplus(-z) } else { softplus(z) };
        let r = (sigmoid(z) - if yi { 1.0 } else { 0.0 }) / n;
        for (g, v) in gw.iter_mut().zip(row) {
            *g += r * v;
        }
        gb += r;
    }
    loss = loss / n + 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>();
    for (g, v) in gw.iter_mut().zip(w) {
        *g += l2 * v;
    }
    (loss, gb)
}

/// Fitted logistic model `(w, b)` from mini-batch gradient descent.
pub fn logreg_fit(x: &Tensor<f64>, y: &[bool], params: &LogregParams, seed: u64) -> (Vec<f64>, f64) {
    let f = x.dims()[1];
    let mut w = vec![0.0; f];
    let mut b = 0.0;
    let mut order: Vec<usize> = (0..y.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xb = Vec::with_capacity(params.batch_size * f);
    let mut yb = Vec::with_capacity(params.batch_size);
    let mut gw = vec![0.0; f];
    for _ in 0..params.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(params.batch_size.max(1)) {
            xb.clear();
            yb.clear();
            for &i in chunk {
                xb.extend_from_slice(x.row(i));
                yb.push(y[i]);
            }
            let (_, gb) = logreg_objective_into(&w, b, &xb, &yb, params.l2, &mut gw);
            for (wi, g) in w.iter_mut().zip(&gw) {
                *wi -= params.learning_rate * g;
            }
            b -= params.learning_rate * gb;
        }
    }
    (w, b)
}

pub fn logreg_probe(data: &ProbeDataset, params: &LogregParams, seed: u64) -> Result<f64> {
    let (w, b) = logreg_fit(&data.rows(&data.train), &data.labels_of(&data.train), params, seed);
    let test = data.rows(&data.test);
    let pred: Vec<bool> =
        test.data().chunks(data.width()).map(|r| sigmoid(r.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>() + b) >= 0.5).collect();
    Ok(data.test_f1(&pred))
}

// ---------------------------------------------------------------------------
// Gradient-boosted trees
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GbtParams {
    pub rounds: usize,
    pub max_depth: usize,
    pub eta: f64,
    pub lambda: f64,
    /// Brute-force split search that re-sums every candidate partition.
    #[serde(default)]
    pub oracle: bool,
}

impl Default for GbtParams {
    fn default() -> Self {
        Self { rounds: 100, max_depth: 6, eta: 0.3, lambda: 1.0, oracle: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { value: f64 },
}

/// One regression tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut n = 0;
        loop {
            match self.nodes[n] {
                TreeNode::Leaf { value } => return value,
                TreeNode::Split { feature, threshold, left, right } => n = if row[feature] < threshold { left } else { right },
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GbtModel {
    pub trees: Vec<Tree>,
}

impl GbtModel {
    /// Margin (log-odds); classification threshold is 0.
    pub fn margin(&self, row: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(row)).sum()
    }
}

#[derive(Debug, Clone, Copy)]
struct SplitCandidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

fn score(g: f64, h: f64, lambda: f64) -> f64 {
    g * g / (h + lambda)
}

/// One feature's training values in ascending order with their row indices.
struct SortedColumn {
    rows: Vec<u32>,
    values: Vec<f64>,
}

/// Per-feature copies of the open rows, grouped by level slot and sorted by value
/// inside each slot, with each row's gradient pair alongside.
struct Partitioned {
    rows: Vec<Vec<u32>>,
    values: Vec<Vec<f64>>,
    grads: Vec<Vec<(f64, f64)>>,
    /// `[start, end)` of each slot, shared by every feature.
    bounds: Vec<(usize, usize)>,
    spare_rows: Vec<u32>,
    spare_values: Vec<f64>,
    spare_grads: Vec<(f64, f64)>,
}

impl Partitioned {
    fn new(columns: &[SortedColumn]) -> Self {
        let n = columns.first().map_or(0, |c| c.rows.len());
        Self {
            rows: columns.iter().map(|c| c.rows.clone()).collect(),
            values: columns.iter().map(|c| c.values.clone()).collect(),
            grads: columns.iter().map(|_| vec![(0.0, 0.0); n]).collect(),
            bounds: Vec::new(),
            spare_rows: vec![0; n],
            spare_values: vec![0.0; n],
            spare_grads: vec![(0.0, 0.0); n],
        }
    }

    /// Resets to all rows in one slot for a new tree.
    fn reset(&mut self, columns: &[SortedColumn], grad: &[(f64, f64)]) {
        for (((rows, values), grads), c) in self.rows.iter_mut().zip(&mut self.values).zip(&mut self.grads).zip(columns) {
            rows.clear();
            rows.extend_from_slice(&c.rows);
            values.clear();
            values.extend_from_slice(&c.values);
            grads.clear();
            grads.extend(c.rows.iter().map(|&r| grad[r as usize]));
        }
        self.bounds = vec![(0, grad.len())];
    }

    /// Best split of every slot by one ascending scan of each slot segment per feature.
    fn best_splits(&self, totals: &[(f64, f64)], lambda: f64) -> Vec<Option<SplitCandidate>> {
        let mut best: Vec<Option<SplitCandidate>> = vec![None; totals.len()];
        let mut best_children = vec![f64::NEG_INFINITY; totals.len()];
        for (feature, (values, grads)) in self.values.iter().zip(&self.grads).enumerate() {
            for (slot, &(start, end)) in self.bounds.iter().enumerate() {
                if end - start < 2 {
                    continue;
                }
                let (tg, th) = totals[slot];
                let mut top = best_children[slot];
                let mut pick = None;
                let (mut gl, mut hl) = (grads[start].0, grads[start].1);
                let mut prev = values[start];
                for (&v, &(g, h)) in values[start + 1..end].iter().zip(&grads[start + 1..end]) {
                    if v > prev {
                        // gl²/dl + gr²/dr compared as one fraction against the best so far
                        let (gr, dl, dr) = (tg - gl, hl + lambda, th - hl + lambda);
                        let num = gl * gl * dr + gr * gr * dl;
                        let den = dl * dr;
                        if num > top * den {
                            top = num / den;
                            pick = Some(0.5 * (prev + v));
                        }
                    }
                    gl += g;
                    hl += h;
                    prev = v;
                }
                if let Some(threshold) = pick {
                    best_children[slot] = top;
                    best[slot] = Some(SplitCandidate { gain: top - score(tg, th, lambda), feature, threshold });
                }
            }
        }
        best
    }

    /// Regroups every feature by the next level's slots (`usize::MAX` drops a row),
    /// keeping value order inside each slot.
    fn advance(&mut self, node_of: &[usize], n_slots: usize) {
        let mut counts = vec![0usize; n_slots];
        for &s in node_of.iter().filter(|&&s| s != usize::MAX) {
            counts[s] += 1;
        }
        let mut starts = Vec::with_capacity(n_slots);
        let mut total = 0;
        for &c in &counts {
            starts.push(total);
            total += c;
        }
        self.bounds = starts.iter().zip(&counts).map(|(&s, &c)| (s, s + c)).collect();
        for ((rows, values), grads) in self.rows.iter_mut().zip(&mut self.values).zip(&mut self.grads) {
            let mut next = starts.clone();
            let (r2, v2, g2) = (&mut self.spare_rows, &mut self.spare_values, &mut self.spare_grads);
            for ((&r, &v), &g) in rows.iter().zip(values.iter()).zip(grads.iter()) {
                let s = node_of[r as usize];
                if s == usize::MAX {
                    continue;
                }
                let at = next[s];
                next[s] += 1;
                r2[at] = r;
                v2[at] = v;
                g2[at] = g;
            }
            rows.truncate(total);
            values.truncate(total);
            grads.truncate(total);
            rows.copy_from_slice(&r2[..total]);
            values.copy_from_slice(&v2[..total]);
            grads.copy_from_slice(&g2[..total]);
        }
    }
}

/// Same contract as [`Partitioned::best_splits`], by enumerating every threshold and re-summing.
fn brute_splits(
    x: &[f64],
    f: usize,
    node_of: &[usize],
    totals: &[(f64, f64)],
    grad: &[(f64, f64)],
    lambda: f64,
) -> Vec<Option<SplitCandidate>> {
    let n = node_of.len();
    (0..totals.len())
        .map(|node| {
            let members: Vec<usize> = (0..n).filter(|&i| node_of[i] == node).collect();
            let mut best: Option<SplitCandidate> = None;
            for feature in 0..f {
                let mut values: Vec<f64> = members.iter().map(|&i| x[i * f + feature]).collect();
                values.sort_by(f64::total_cmp);
                values.dedup();
                for w in values.windows(2) {
                    let threshold = 0.5 * (w[0] + w[1]);
                    let (mut g_l, mut h_l, mut g_r, mut h_r) = (0.0, 0.0, 0.0, 0.0);
                    for &i in &members {
                        if x[i * f + feature] < threshold {
                            g_l += grad[i].0;
                            h_l += grad[i].1;
                        } else {
                            g_r += grad[i].0;
                            h_r += grad[i].1;
                        }
                    }
                    let gain = score(g_l, h_l, lambda) + score(g_r, h_r, lambda) - score(g_l + g_r, h_l + h_r, lambda);
                    if best.map_or(true, |b| gain > b.gain + 1e-9 * b.gain.abs().max(1.0)) {
                        best = Some(SplitCandidate { gain, feature, threshold });
                    }
                }
            }
            best
        })
        .collect()
}

/// Boosted trees on the logistic loss, grown level by level to `max_depth`.
pub fn gbt_fit(x: &Tensor<f64>, y: &[bool], params: &GbtParams) -> GbtModel {
    let (n, f) = (x.dims()[0], x.dims()[1]);
    let xd = x.data();
    let columns: Vec<SortedColumn> = if params.oracle {
        Vec::new()
    } else {
        (0..f)
            .map(|j| {
                let mut rows: Vec<u32> = (0..n as u32).collect();
                rows.sort_by(|&a, &b| xd[a as usize * f + j].total_cmp(&xd[b as usize * f + j]));
                let values = rows.iter().map(|&r| xd[r as usize * f + j]).collect();
                SortedColumn { rows, values }
            })
            .collect()
    };
    let mut parts = (!params.oracle).then(|| Partitioned::new(&columns));
    let mut margin = vec![0.0f64; n];
    let mut trees = Vec::with_capacity(params.rounds);
    for _ in 0..params.rounds {
        let grad: Vec<(f64, f64)> = margin
            .iter()
            .zip(y)
            .map(|(&m, &yi)| {
                let p = sigmoid(m);
                (p - if yi { 1.0 } else { 0.0 }, p * (1.0 - p))
            })
            .collect();
        let mut nodes = vec![TreeNode::Leaf { value: 0.0 }];
        // Open nodes of the current level, by tree index; node_of maps samples to level slots.
        let mut level: Vec<usize> = vec![0];
        let mut node_of = vec![0usize; n];
        let mut leaf_of = vec![0usize; n];
        if let Some(p) = &mut parts {
            p.reset(&columns, &grad);
        }
        for depth in 0..=params.max_depth {
            let mut totals = vec![(0.0, 0.0); level.len()];
            for i in 0..n {
                if node_of[i] != usize::MAX {
                    totals[node_of[i]].0 += grad[i].0;
                    totals[node_of[i]].1 += grad[i].1;
                }
            }
            let splits = if depth == params.max_depth {
                vec![None; level.len()]
            } else if let Some(p) = &parts {
                p.best_splits(&totals, params.lambda)
            } else {
                brute_splits(xd, f, &node_of, &totals, &grad, params.lambda)
            };
            let mut next_level = Vec::new();
            let mut slot_children = vec![None; level.len()];
            for (slot, (&tree_idx, split)) in level.iter().zip(&splits).enumerate() {
                match split {
                    Some(s) if s.gain > 0.0 => {
                        let (l, r) = (nodes.len(), nodes.len() + 1);
                        nodes.push(TreeNode::Leaf { value: 0.0 });
                        nodes.push(TreeNode::Leaf { value: 0.0 });
                        nodes[tree_idx] = TreeNode::Split { feature: s.feature, threshold: s.threshold, left: l, right: r };
                        slot_children[slot] = Some((next_level.len(), s.feature, s.threshold));
                        next_level.push(l);
                        next_level.push(r);
                    }
                    _ => {
                        let (g, h) = totals[slot];
                        nodes[tree_idx] = TreeNode::Leaf { value: -params.eta * g / (h + params.lambda) };
                    }
                }
            }
            for i in 0..n {
                let slot = node_of[i];
                if slot == usize::MAX {
                    continue;
                }
                match slot_children[slot] {
                    Some((base, feature, threshold)) => {
                        node_of[i] = if xd[i * f + feature] < threshold { base } else { base + 1 };
                    }
                    None => {
                        leaf_of[i] = level[slot];
                        node_of[i] = usize::MAX;
                    }
                }
            }
            if next_level.is_empty() {
                break;
            }
            if let Some(p) = &mut parts {
                p.advance(&node_of, next_level.len());
            }
            level = next_level;
        }
        for i in 0..n {
            if let TreeNode::Leaf { value } = nodes[leaf_of[i]] {
                margin[i] += value;
            }
        }
        trees.push(Tree { nodes });
    }
    GbtModel { trees }
}

pub fn gbt_probe(data: &ProbeDataset, params: &GbtParams) -> Result<f64> {
    let model = gbt_fit(&data.rows(&data.train), &data.labels_of(&data.train), params);
    let test = data.rows(&data.test);
    let pred: Vec<bool> = test.data().chunks(data.width()).map(|r| model.margin(r) > 0.0).collect();
    Ok(data.test_f1(&pred))
}

// ---------------------------------------------------------------------------
// Task suite
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    Activations,
    LatentsTruncated,
    ReconstructionTruncated,
}

impl Representation {
    pub fn name(self) -> &'static str {
        match self {
            Representation::Activations => "activations",
            Representation::LatentsTruncated => "latents_truncated",
            Representation::ReconstructionTruncated => "reconstruction_truncated",
        }
    }
}

/// One SAE's view of the probe images.
pub struct SaeFeatures<'a> {
    pub variant: SaeVariant,
    pub k: usize,
    pub latents: &'a SparseLatents,
    pub sae: &'a SaeModel<f32>,
    /// `M` and each sample's inferred power, applied after decoding truncated latents.
    pub transform: Option<(&'a TransformMatrix<f32>, &'a [u8])>,
}

pub struct SuiteInput<'a> {
    pub specs: &'a [ImageSpec],
    /// `[n, 256]` base activations, one row per spec.
    pub activations: &'a Tensor<f32>,
    pub saes: Vec<SaeFeatures<'a>>,
    pub tasks: &'a [TaskSpec],
    pub probes: &'a [Probe],
    pub trunc_lengths: &'a [usize],
    pub train: &'a [usize],
    pub test: &'a [usize],
    pub logreg: LogregParams,
    pub gbt: GbtParams,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub task: TaskSpec,
    pub representation: Representation,
    pub sae_variant: Option<SaeVariant>,
    pub k: Option<usize>,
    pub trunc_len: Option<usize>,
    pub probe: Probe,
    pub f1: f64,
    /// Highest F1 among the probes of this (task, representation) cell; first probe wins ties.
    pub best: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskFailure {
    pub task: TaskSpec,
    pub representation: Representation,
    pub sae_variant: Option<SaeVariant>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub family: TaskFamily,
    pub representation: Representation,
    pub sae_variant: Option<SaeVariant>,
    pub k: Option<usize>,
    pub trunc_len: Option<usize>,
    pub mean_best_f1: f64,
    pub n_tasks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteOutput {
    pub results: Vec<ProbeResult>,
    pub failures: Vec<TaskFailure>,
    pub aggregate: Vec<AggregateRow>,
}

/// Orbit-grouped split of `n_orbits·4` orbit-major samples: whole orbits go to the
/// test side, `test_fraction` of them (at least one, never all), chosen by a seeded shuffle.
pub fn orbit_split(n_orbits: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut orbits: Vec<usize> = (0..n_orbits).collect();
    orbits.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = (((n_orbits as f64) * test_fraction).round() as usize).clamp(1.min(n_orbits), n_orbits.saturating_sub(1).max(1));
    let mut test_orbits = orbits[..n_test].to_vec();
    let mut train_orbits = orbits[n_test..].to_vec();
    test_orbits.sort_unstable();
    train_orbits.sort_unstable();
    let expand = |os: &[usize]| os.iter().flat_map(|&o| (0..GROUP_ORDER).map(move |p| o * GROUP_ORDER + p)).collect();
    (expand(&train_orbits), expand(&test_orbits))
}

struct Cell<'a> {
    representation: Representation,
    sae: Option<&'a SaeFeatures<'a>>,
    trunc_len: Option<usize>,
}

/// Truncated-reconstruction features `[n, 256]`: decode of the masked latents, then `M^{p*}`.
fn truncated_reconstruction(s: &SaeFeatures<'_>, selected: &[usize]) -> Result<Tensor<f64>> {
    let w = s.sae.decoder_weight();
    let (d, nl) = (w.dims()[0], w.dims()[1]);
    let bias = s.sae.decoder_bias().data();
    let mut keep = vec![false; nl];
    for &i in selected {
        keep[i] = true;
    }
    let n = s.latents.rows.len();
    let mut out = Tensor::<f32>::zeros(&[n, d]);
    for (r, row) in s.latents.rows.iter().enumerate() {
        let dst = &mut out.data_mut()[r * d..(r + 1) * d];
        dst.copy_from_slice(bias);
        for &(i, v) in row.iter().filter(|(i, _)| keep[*i as usize]) {
            for (j, o) in dst.iter_mut().enumerate() {
                *o += v * w.data()[j * nl + i as usize];
            }
        }
    }
    if let Some((m, powers)) = s.transform {
        out = apply_powers(m, &out, powers)?;
    }
    Ok(out.convert())
}

fn run_cell(
    input: &SuiteInput<'_>,
    labels: &[bool],
    cell: &Cell<'_>,
    activations: &Tensor<f64>,
    act_neighbors: Option<&Vec<Vec<usize>>>,
    seed: u64,
) -> Result<Vec<(Probe, f64)>> {
    let train_labels: Vec<bool> = input.train.iter().map(|&i| labels[i]).collect();
    let features = match (cell.representation, cell.sae) {
        (Representation::Activations, _) => activations.clone(),
        (rep, Some(s)) => {
            let l = cell.trunc_len.expect("truncated cells carry a length");
            let selection = select_top_latents_sparse(&s.latents.subset(input.train), &train_labels, l)?;
            if rep == Representation::LatentsTruncated {
                s.latents.gather(&selection.selected_indices)
            } else {
                truncated_reconstruction(s, &selection.selected_indices)?
            }
        }
        (_, None) => return Err(Error::Input("SAE representation without an SAE".into())),
    };
    let data = ProbeDataset::new(features, labels.to_vec(), input.train.to_vec(), input.test.to_vec())?;
    let mut out = Vec::new();
    for &probe in input.probes {
        let f1 = match probe {
            Probe::Knn => match act_neighbors {
                Some(nb) => data.test_f1(&knn_vote(nb, &train_labels)),
                None => knn_probe(&data)?,
            },
            Probe::Logreg => logreg_probe(&data, &input.logreg, seed)?,
            Probe::Gbt => gbt_probe(&data, &input.gbt)?,
        };
        out.push((probe, f1));
    }
    Ok(out)
}

fn task_key(t: &TaskSpec) -> String {
    format!("{}-{}-{:?}-{:?}", t.family, t.shape, t.position, t.orientation)
}

/// Every task × representation cell, each probe, plus family means of the per-cell best F1.
pub fn run_task_suite(input: &SuiteInput<'_>) -> Result<SuiteOutput> {
    let n = input.specs.len();
    if input.activations.dims() != [n, input.activations.dims()[1]] {
        return Err(Error::Input("one activation row per spec is required".into()));
    }
    let activations = input.activations.convert::<f64>();
    let act_neighbors = if input.probes.contains(&Probe::Knn) {
        Some(knn_neighbors(&activations.select_rows(input.train), &activations.select_rows(input.test), KNN_NEIGHBORS)?)
    } else {
        None
    };
    let mut cells = vec![Cell { representation: Representation::Activations, sae: None, trunc_len: None }];
    for s in &input.saes {
        for &l in input.trunc_lengths {
            for representation in [Representation::LatentsTruncated, Representation::ReconstructionTruncated] {
                cells.push(Cell { representation, sae: Some(s), trunc_len: Some(l) });
            }
        }
    }

    let per_task: Vec<(Vec<ProbeResult>, Vec<TaskFailure>)> = input
        .tasks
        .par_iter()
        .map(|task| {
            let labels: Vec<bool> = input.specs.iter().map(|s| task.label(s)).collect();
            let seed = derive_seed(input.seed, &["probe", &task_key(task)]);
            let (mut results, mut failures) = (Vec::new(), Vec::new());
            for cell in &cells {
                let neighbors = if cell.representation == Representation::Activations { act_neighbors.as_ref() } else { None };
                match run_cell(input, &labels, cell, &activations, neighbors, seed) {
                    Ok(scores) => {
                        let best = scores.iter().enumerate().fold(0, |b, (i, s)| if s.1 > scores[b].1 { i } else { b });
                        for (i, (probe, f1)) in scores.into_iter().enumerate() {
                            results.push(ProbeResult {
                                task: *task,
                                representation: cell.representation,
                                sae_variant: cell.sae.map(|s| s.variant),
                                k: cell.sae.map(|s| s.k),
                                trunc_len: cell.trunc_len,
                                probe,
                                f1,
                                best: i == best,
                                seed,
                            });
                        }
                    }
                    Err(e) => failures.push(TaskFailure {
                        task: *task,
                        representation: cell.representation,
                        sae_variant: cell.sae.map(|s| s.variant),
                        message: e.to_string(),
                    }),
                }
            }
            (results, failures)
        })
        .collect();
    let (mut results, mut failures) = (Vec::new(), Vec::new());
    for (r, f) in per_task {
        results.extend(r);
        failures.extend(f);
    }
    let aggregate = aggregate(&results);
    Ok(SuiteOutput { results, failures, aggregate })
}

/// Mean best-probe F1 per task family and representation cell.
pub fn aggregate(results: &[ProbeResult]) -> Vec<AggregateRow> {
    let mut rows: Vec<AggregateRow> = Vec::new();
    for r in results.iter().filter(|r| r.best) {
        let key = (r.task.family, r.representation, r.sae_variant, r.k, r.trunc_len);
        match rows.iter_mut().find(|a| (a.family, a.representation, a.sae_variant, a.k, a.trunc_len) == key) {
            Some(a) => {
                a.mean_best_f1 += r.f1;
                a.n_tasks += 1;
            }
            None => rows.push(AggregateRow {
                family: key.0,
                representation: key.1,
                sae_variant: key.2,
                k: key.3,
                trunc_len: key.4,
                mean_best_f1: r.f1,
                n_tasks: 1,
            }),
        }
    }
    for a in &mut rows {
        a.mean_best_f1 /= a.n_tasks as f64;
    }
    rows.sort_by(|a, b| {
        (a.family, a.representation, a.sae_variant, a.k, a.trunc_len).cmp(&(b.family, b.representation, b.sae_variant, b.k, b.trunc_len))
    });
    rows
}

/// Mean over all tasks of the best F1 in the matching cells.
pub fn mean_best_f1(
    results: &[ProbeResult],
    representation: Representation,
    variant: Option<SaeVariant>,
    family: Option<TaskFamily>,
) -> Option<f64> {
    let v: Vec<f64> = results
        .iter()
        .filter(|r| r.best && r.representation == representation && r.sae_variant == variant)
        .filter(|r| family.map_or(true, |f| r.task.family == f))
        .map(|r| r.f1)
        .collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub const RESULTS_HEADER: [&str; 12] =
    ["task_family", "shape", "position", "orientation", "representation", "sae_variant", "K", "trunc_len", "probe", "f1", "best_flag", "seed"];

/// Writes one row per probe result.
pub fn write_results_csv(path: &Path, results: &[ProbeResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(RESULTS_HEADER).map_err(|e| csv_error(path, e))?;
    for r in results {
        w.write_record([
            r.task.family.to_string(),
            r.task.shape.to_string(),
            opt(r.task.position),
            opt(r.task.orientation),
            r.representation.name().to_string(),
            opt(r.sae_variant),
            opt(r.k),
            opt(r.trunc_len),
            r.probe.to_string(),
            format!("{:.6}", r.f1),
            (r.best as u8).to_string(),
            r.seed.to_string(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_aggregate_csv(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["task_family", "representation", "sae_variant", "K", "trunc_len", "mean_best_f1", "n_tasks"])
        .map_err(|e| csv_error(path, e))?;
    for a in rows {
        w.write_record([
            a.family.to_string(),
            a.representation.name().to_string(),
            opt(a.sae_variant),
            opt(a.k),
            opt(a.trunc_len),
            format!("{:.6}", a.mean_best_f1),
            a.n_tasks.to_string(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

/// Negative share of each task over `specs`, for the class-imbalance table.
pub fn negative_shares(specs: &[ImageSpec], tasks: &[TaskSpec]) -> Vec<(TaskSpec, f64)> {
    tasks
        .iter()
        .map(|t| (*t, specs.iter().filter(|s| !t.label(s)).count() as f64 / specs.len() as f64))
        .collect()
}

/// Writes `family,min,mean,max` negative shares.
pub fn write_imbalance_csv(path: &Path, shares: &[(TaskSpec, f64)]) -> Result<()> {
    let mut out = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::from("task_family,min_negative_share,mean_negative_share,max_negative_share\n");
    for fam in TaskFamily::ALL {
        let v: Vec<f64> = shares.iter().filter(|(t, _)| t.family == fam).map(|(_, s)| *s).collect();
        if v.is_empty() {
            continue;
        }
        let min = v.iter().copied().fold(f64::INFINITY, f64::min);
        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        text.push_str(&format!("{fam},{min:.4},{mean:.4},{max:.4}\n"));
    }
    out.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn dataset(features: Vec<f64>, width: usize, labels: Vec<bool>, train_frac: f64) -> ProbeDataset {
        let n = labels.len();
        let cut = (n as f64 * train_frac) as usize;
        // interleave so both splits see both classes
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(0));
        let (train, test) = idx.split_at(cut);
        ProbeDataset::new(Tensor::new(vec![n, width], features).unwrap(), labels, train.to_vec(), test.to_vec()).unwrap()
    }

    #[test]
    fn f1_examples() {
        assert_eq!(f1_score(&[true, false, true], &[true, false, true]), 1.0);
        assert_eq!(f1_score(&[false, false], &[true, false]), 0.0);
        let pred = [true, true, true, false];
        let lab = [true, true, false, true];
        assert_eq!(f1_score(&pred, &lab), 2.0 / 3.0);
    }

    #[test]
    fn selection_examples() {
        let latents = Tensor::<f64>::new(vec![4, 2], vec![1.0, 0.3, 1.0, 0.3, 0.0, 0.3, 0.0, 0.3]).unwrap();
        let labels = [true, true, false, false];
        assert_eq!(select_top_latents(&latents, &labels, 1).unwrap().selected_indices, vec![0]);
        let flat = Tensor::<f64>::full(&[4, 5], 0.5);
        assert_eq!(select_top_latents(&flat, &labels, 3).unwrap().selected_indices, vec![0, 1, 2]);
        // class means: positives (0.5, 1.0, 0.125), negatives (0, 0.125, 0)
        let crafted = Tensor::<f64>::new(vec![4, 3], vec![1.0, 1.0, 0.25, 0.0, 1.0, 0.0, 0.0, 0.25, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(select_top_latents(&crafted, &labels, 2).unwrap().selected_indices, vec![1, 0]);
        assert!(select_top_latents(&crafted, &[true; 4], 2).is_err());
        let sparse = SparseLatents::from_dense(&crafted);
        assert_eq!(select_top_latents_sparse(&sparse, &labels, 2).unwrap().selected_indices, vec![1, 0]);
        assert_eq!(sparse.to_dense(), crafted);
    }

    #[test]
    fn knn_examples() {
        // 16 positive training points at one spot, a test point on top of them
        let mut feats = vec![];
        let mut labels = vec![];
        for i in 0..16 {
            feats.extend([5.0 + 1e-3 * i as f64, 5.0]);
            labels.push(true);
        }
        for i in 0..16 {
            feats.extend([-5.0, -5.0 - 1e-3 * i as f64]);
            labels.push(false);
        }
        feats.extend([5.0, 5.0, -5.0, -5.0]);
        labels.extend([true, false]);
        let data = ProbeDataset::new(Tensor::new(vec![34, 2], feats.clone()).unwrap(), labels.clone(), (0..32).collect(), vec![32, 33]).unwrap();
        assert_eq!(knn_probe(&data).unwrap(), 1.0);

        let all_neg: Vec<bool> = (0..34).map(|i| i == 32).collect();
        let data = ProbeDataset::new(Tensor::new(vec![34, 2], feats).unwrap(), all_neg, (0..32).collect(), vec![32, 33]).unwrap();
        assert_eq!(knn_probe(&data).unwrap(), 0.0);
    }

    fn blobs(n: usize, seed: u64) -> (Vec<f64>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = Vec::new();
        let mut l = Vec::new();
        for i in 0..n {
            let pos = i % 2 == 0;
            let c = if pos { 4.0 } else { -4.0 };
            f.extend([c + rng.gen_range(-1.0..1.0), c + rng.gen_range(-1.0..1.0)]);
            l.push(pos);
        }
        (f, l)
    }

    #[test]
    fn separable_blobs() {
        let (f, l) = blobs(200, 1);
        let data = dataset(f, 2, l, 0.75);
        assert_eq!(knn_probe(&data).unwrap(), 1.0);
        assert_eq!(logreg_probe(&data, &LogregParams::default(), 3).unwrap(), 1.0);
        assert_eq!(gbt_probe(&data, &GbtParams::default()).unwrap(), 1.0);
    }

    #[test]
    fn logreg_one_dimensional() {
        let f: Vec<f64> = (0..80).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let l: Vec<bool> = (0..80).map(|i| i % 2 == 0).collect();
        assert_eq!(logreg_probe(&dataset(f, 1, l, 0.75), &LogregParams::default(), 0).unwrap(), 1.0);
    }

    #[test]
    fn logreg_constant_features_predict_constant() {
        let l: Vec<bool> = (0..40).map(|i| i % 3 == 0).collect();
        let data = dataset(vec![2.0; 40], 1, l, 0.5);
        let (w, b) = logreg_fit(&data.rows(&data.train), &data.labels_of(&data.train), &LogregParams::default(), 0);
        let p = sigmoid(2.0 * w[0] + b) >= 0.5;
        let f1 = logreg_probe(&data, &LogregParams::default(), 0).unwrap();
        let all: Vec<bool> = vec![p; data.test.len()];
        assert_eq!(f1, data.test_f1(&all));
    }

    #[test]
    fn logreg_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..30).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let y: Vec<bool> = (0..10).map(|i| i % 3 == 0).collect();
        let w: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b = 0.3;
        let l2 = 1e-1;
        let (_, gw, gb) = logreg_objective(&w, b, &x, &y, l2);
        let eps = 1e-6;
        for j in 0..3 {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[j] += eps;
            wm[j] -= eps;
            let num = (logreg_objective(&wp, b, &x, &y, l2).0 - logreg_objective(&wm, b, &x, &y, l2).0) / (2.0 * eps);
            assert!((num - gw[j]).abs() / num.abs().max(1e-3) < 1e-6, "w[{j}]: {num} vs {}", gw[j]);
        }
        let num = (logreg_objective(&w, b + eps, &x, &y, l2).0 - logreg_objective(&w, b - eps, &x, &y, l2).0) / (2.0 * eps);
        assert!((num - gb).abs() / num.abs().max(1e-3) < 1e-6);
    }

    #[test]
    fn gbt_threshold_and_constant() {
        let f: Vec<f64> = (0..60).map(|i| if i % 2 == 0 { 1.0 + i as f64 / 10.0 } else { -1.0 - i as f64 / 10.0 }).collect();
        let l: Vec<bool> = f.iter().map(|&v| v > 0.0).collect();
        assert_eq!(gbt_probe(&dataset(f.clone(), 1, l, 0.75), &GbtParams::default()).unwrap(), 1.0);
        let all = vec![true; 60];
        assert_eq!(gbt_probe(&dataset(f, 1, all, 0.75), &GbtParams::default()).unwrap(), 1.0);
    }

    fn xor(n: usize, seed: u64) -> (Vec<f64>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = Vec::new();
        let mut l = Vec::new();
        for _ in 0..n {
            let (a, b): (f64, f64) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            f.extend([a, b]);
            l.push((a > 0.0) != (b > 0.0));
        }
        (f, l)
    }

    #[test]
    fn gbt_xor_and_oracle_agreement() {
        let (f, l) = xor(400, 2);
        let data = dataset(f, 2, l, 0.75);
        assert!(gbt_probe(&data, &GbtParams::default()).unwrap() >= 0.95);
        let small = GbtParams { rounds: 10, max_depth: 2, ..Default::default() };
        let fast = gbt_fit(&data.rows(&data.train), &data.labels_of(&data.train), &small);
        let brute = gbt_fit(&data.rows(&data.train), &data.labels_of(&data.train), &GbtParams { oracle: true, ..small });
        assert_eq!(fast.trees.len(), brute.trees.len());
        for (a, b) in fast.trees.iter().zip(&brute.trees) {
            assert_eq!(a.nodes.len(), b.nodes.len());
            for (x, y) in a.nodes.iter().zip(&b.nodes) {
                match (x, y) {
                    (TreeNode::Split { feature: f1, threshold: t1, .. }, TreeNode::Split { feature: f2, threshold: t2, .. }) => {
                        assert_eq!(f1, f2);
                        assert_eq!(t1, t2);
                    }
                    (TreeNode::Leaf { value: v1 }, TreeNode::Leaf { value: v2 }) => assert!((v1 - v2).abs() < 1e-12),
                    _ => panic!("tree shapes differ"),
                }
            }
        }
    }

    #[test]
    fn orbit_split_keeps_orbits_together() {
        let (train, test) = orbit_split(16, 0.25, 3);
        assert_eq!(test.len(), 16);
        assert_eq!(train.len(), 48);
        for chunk in test.chunks(4) {
            assert!(chunk.iter().all(|&i| i / 4 == chunk[0] / 4));
        }
        assert_eq!(orbit_split(16, 0.25, 3), (train, test));
    }
}
