//! Embedding parameters, the sigmoid negative-sampling loss, the sine-based
//! loss with batch normalization, their analytic gradients and similarity
//! evaluation.
//!
//! The sine score normalizes the elementwise product of the two embedding
//! rows per dimension. During training the statistics of the current batch
//! are used (running statistics are updated with momentum 0.9); single-pair
//! evaluation uses the running statistics. Note the normalization
//! standardizes to zero mean and unit variance; it does not literally
//! produce a U(-1,1) variate.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Numerical floor inside the batch-norm denominator.
pub const BN_EPS: f64 = 1e-8;
/// Momentum for the running normalization statistics.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Sine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimilarityMode {
    /// Normalize with the statistics of the current batch.
    TrainBatch,
    /// Normalize with the running statistics.
    Inference,
}

/// Learnable and running state specific to the sine score.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SineParams {
    pub w_t: Vec<f64>,
    pub delta: f64,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    /// Number of batches folded into the running statistics.
    pub batches_seen: u64,
}

/// Shallow embedding tables: one center row and one context row per node.
#[derive(Debug, Clone)]
pub struct EmbeddingModel {
    pub node_count: usize,
    pub dim: usize,
    pub center: Vec<f64>,
    pub context: Vec<f64>,
    pub activation: Activation,
    pub sine: Option<SineParams>,
}

/// One positive pair plus its sampled negatives.
#[derive(Debug, Clone)]
pub struct BatchEntry {
    pub center: usize,
    pub context: usize,
    pub weight: f64,
    pub negatives: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct SampleBatch {
    pub entries: Vec<BatchEntry>,
}

/// Sparse parameter direction: rows only for ids touched by a batch.
#[derive(Debug, Clone, Default)]
pub struct SparseDelta {
    pub center: BTreeMap<usize, Vec<f64>>,
    pub context: BTreeMap<usize, Vec<f64>>,
    pub w_t: Option<Vec<f64>>,
}

impl SparseDelta {
    /// self += scale * other, materializing missing rows as zero.
    pub fn add_scaled(&mut self, other: &SparseDelta, scale: f64) {
        for (&row, values) in &other.center {
            let target = self.center.entry(row).or_insert_with(|| vec![0.0; values.len()]);
            for (t, v) in target.iter_mut().zip(values) {
                *t += scale * v;
            }
        }
        for (&row, values) in &other.context {
            let target = self.context.entry(row).or_insert_with(|| vec![0.0; values.len()]);
            for (t, v) in target.iter_mut().zip(values) {
                *t += scale * v;
            }
        }
        if let Some(w) = &other.w_t {
            let target = self.w_t.get_or_insert_with(|| vec![0.0; w.len()]);
            for (t, v) in target.iter_mut().zip(w) {
                *t += scale * v;
            }
        }
    }

    pub fn scale(&mut self, scale: f64) {
        for values in self.center.values_mut().chain(self.context.values_mut()) {
            for v in values {
                *v *= scale;
            }
        }
        if let Some(w) = &mut self.w_t {
            for v in w {
                *v *= scale;
            }
        }
    }

    pub fn dot(&self, other: &SparseDelta) -> f64 {
        let mut acc = 0.0;
        for (row, values) in &self.center {
            if let Some(o) = other.center.get(row) {
                acc += values.iter().zip(o).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        for (row, values) in &self.context {
            if let Some(o) = other.context.get(row) {
                acc += values.iter().zip(o).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        if let (Some(a), Some(b)) = (&self.w_t, &other.w_t) {
            acc += a.iter().zip(b).map(|(a, b)| a * b).sum::<f64>();
        }
        acc
    }

    pub fn norm_squared(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn cosine(&self, other: &SparseDelta) -> Option<f64> {
        let (a, b) = (self.norm(), other.norm());
        if a == 0.0 || b == 0.0 {
            return None;
        }
        Some(self.dot(other) / (a * b))
    }

    pub fn is_finite(&self) -> bool {
        self.center
            .values()
            .chain(self.context.values())
            .chain(self.w_t.iter())
            .all(|row| row.iter().all(|v| v.is_finite()))
    }
}

/// Batch gradients: sparse rows touched by the batch, the loss value, and
/// (sine) the batch normalization statistics for the running update.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub rows: SparseDelta,
    pub loss: f64,
    pub batch_stats: Option<(Vec<f64>, Vec<f64>)>,
}

/// Saved parameter rows used to undo a temporary perturbation exactly.
pub struct RowSnapshot {
    center: Vec<(usize, Vec<f64>)>,
    context: Vec<(usize, Vec<f64>)>,
    w_t: Option<Vec<f64>>,
}

/// Numerically stable log(1 + e^x).
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl EmbeddingModel {
    /// Fresh model: embedding entries uniform in [-0.5/dim, 0.5/dim] for
    /// the sigmoid score and [-1/sqrt(dim), 1/sqrt(dim)] for the sine
    /// score; W_T is uniform in [-0.25/sqrt(dim), 0.25/sqrt(dim)] and the
    /// running statistics start at mean 0, variance 1.
    ///
    /// The sine rows start wider because batch normalization makes the
    /// loss invariant to a global row scale while the row gradients scale
    /// inversely with it; rows near zero would blow the fixed-step
    /// updates past any descent regime. The projection starts small so
    /// every initial pre-activation lies inside the monotone basin of the
    /// sine; a wide projection puts half the pairs past the first peak,
    /// where the reversed gradients cancel instead of organizing the rows.
    pub fn init(
        node_count: usize,
        dim: usize,
        activation: Activation,
        delta: f64,
        seed: u64,
    ) -> Result<EmbeddingModel> {
        if dim < 1 {
            return Err(Error::Config("embedding dimension must be >= 1".into()));
        }
        if activation == Activation::Sine && !(delta > 0.0) {
            return Err(Error::Config(format!("sine delta must be > 0, got {delta}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = match activation {
            Activation::Sigmoid => 1.0 / dim as f64,
            Activation::Sine => 2.0 / (dim as f64).sqrt(),
        };
        let mut draw = |n: usize, half_width: f64| -> Vec<f64> {
            (0..n).map(|_| (rng.gen::<f64>() - 0.5) * 2.0 * half_width).collect()
        };
        let center = draw(node_count * dim, 0.5 * scale);
        let context = draw(node_count * dim, 0.5 * scale);
        let sine = match activation {
            Activation::Sigmoid => None,
            Activation::Sine => {
                let bound = 0.25 / (dim as f64).sqrt();
                Some(SineParams {
                    w_t: draw(dim, bound),
                    delta,
                    running_mean: vec![0.0; dim],
                    running_var: vec![1.0; dim],
                    batches_seen: 0,
                })
            }
        };
        Ok(EmbeddingModel { node_count, dim, center, context, activation, sine })
    }

    pub fn center_row(&self, node: usize) -> &[f64] {
        &self.center[node * self.dim..(node + 1) * self.dim]
    }

    pub fn context_row(&self, node: usize) -> &[f64] {
        &self.context[node * self.dim..(node + 1) * self.dim]
    }

    fn dot_rows(&self, center: usize, context: usize) -> f64 {
        self.center_row(center)
            .iter()
            .zip(self.context_row(context))
            .map(|(a, b)| a * b)
            .sum()
    }

    /// sigma(u'_j . u_i), the positive-pair score of the sigmoid loss.
    pub fn sigmoid_similarity(&self, center: usize, context: usize) -> f64 {
        sigmoid(self.dot_rows(center, context))
    }

    /// Sine positive score in (delta, 1 + delta). The negative score of the
    /// same pair is `1 + 2 delta - positive`.
    pub fn sine_similarity(&self, center: usize, context: usize, mode: SimilarityMode) -> f64 {
        let sp = self.sine.as_ref().expect("sine_similarity requires a sine model");
        let u = self.center_row(center);
        let v = self.context_row(context);
        let (mean, var): (Vec<f64>, Vec<f64>) = match mode {
            SimilarityMode::Inference => (sp.running_mean.clone(), sp.running_var.clone()),
            SimilarityMode::TrainBatch => {
                // Degenerate single-pair batch: its own product is the mean.
                let z: Vec<f64> = u.iter().zip(v).map(|(a, b)| a * b).collect();
                (z, vec![0.0; self.dim])
            }
        };
        let mut a = 0.0;
        for d in 0..self.dim {
            let z = u[d] * v[d];
            a += sp.w_t[d] * (z - mean[d]) / (var[d] + BN_EPS).sqrt();
        }
        0.5 * (1.0 + (PI / 2.0 * a).sin()) + sp.delta
    }

    /// Similarity under the model's own activation, inference mode.
    pub fn similarity(&self, center: usize, context: usize) -> f64 {
        match self.activation {
            Activation::Sigmoid => self.sigmoid_similarity(center, context),
            Activation::Sine => self.sine_similarity(center, context, SimilarityMode::Inference),
        }
    }

    /// Cosine of the context row of `context` and the center row of `center`.
    pub fn normalized_similarity(&self, center: usize, context: usize) -> Result<f64> {
        let u = self.center_row(center);
        let v = self.context_row(context);
        let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nu == 0.0 || nv == 0.0 {
            return Err(Error::UndefinedSimilarity(format!(
                "zero-norm row for pair ({center}, {context})"
            )));
        }
        Ok(u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / (nu * nv))
    }

    /// Negative-sampling loss of a batch. Pure in (model, batch): running
    /// statistics are never touched here.
    pub fn batch_loss(&self, batch: &SampleBatch) -> Result<f64> {
        Ok(self.forward_backward(batch, false)?.loss)
    }

    /// Analytic gradients of `batch_loss` for the touched rows (and W_T for
    /// sine models, whose gradients flow through the batch normalization of
    /// the current batch).
    pub fn batch_gradients(&self, batch: &SampleBatch) -> Result<Gradients> {
        self.forward_backward(batch, true)
    }

    /// Folds batch statistics into the running normalization statistics.
    pub fn update_running_stats(&mut self, mean: &[f64], var: &[f64]) {
        if let Some(sp) = &mut self.sine {
            for d in 0..mean.len() {
                sp.running_mean[d] = BN_MOMENTUM * sp.running_mean[d] + (1.0 - BN_MOMENTUM) * mean[d];
                sp.running_var[d] = BN_MOMENTUM * sp.running_var[d] + (1.0 - BN_MOMENTUM) * var[d];
            }
            sp.batches_seen += 1;
        }
    }

    /// theta += scale * delta for every row present in `delta`.
    pub fn apply_delta(&mut self, delta: &SparseDelta, scale: f64) {
        let dim = self.dim;
        for (&row, values) in &delta.center {
            let target = &mut self.center[row * dim..(row + 1) * dim];
            for (t, v) in target.iter_mut().zip(values) {
                *t += scale * v;
            }
        }
        for (&row, values) in &delta.context {
            let target = &mut self.context[row * dim..(row + 1) * dim];
            for (t, v) in target.iter_mut().zip(values) {
                *t += scale * v;
            }
        }
        if let Some(w) = &delta.w_t {
            if let Some(sp) = &mut self.sine {
                for (t, v) in sp.w_t.iter_mut().zip(w) {
                    *t += scale * v;
                }
            }
        }
    }

    /// Saves the rows named by `delta` so a temporary perturbation can be
    /// undone bit-exactly.
    pub fn snapshot_rows(&self, delta: &SparseDelta) -> RowSnapshot {
        RowSnapshot {
            center: delta.center.keys().map(|&r| (r, self.center_row(r).to_vec())).collect(),
            context: delta.context.keys().map(|&r| (r, self.context_row(r).to_vec())).collect(),
            w_t: delta.w_t.as_ref().and_then(|_| self.sine.as_ref().map(|sp| sp.w_t.clone())),
        }
    }

    pub fn restore_rows(&mut self, snapshot: RowSnapshot) {
        let dim = self.dim;
        for (row, values) in snapshot.center {
            self.center[row * dim..(row + 1) * dim].copy_from_slice(&values);
        }
        for (row, values) in snapshot.context {
            self.context[row * dim..(row + 1) * dim].copy_from_slice(&values);
        }
        if let (Some(w), Some(sp)) = (snapshot.w_t, self.sine.as_mut()) {
            sp.w_t.copy_from_slice(&w);
        }
    }

    fn forward_backward(&self, batch: &SampleBatch, want_grads: bool) -> Result<Gradients> {
        if batch.entries.is_empty() {
            return Err(Error::Domain("batch must be non-empty".into()));
        }
        match self.activation {
            Activation::Sigmoid => self.forward_backward_sigmoid(batch, want_grads),
            Activation::Sine => self.forward_backward_sine(batch, want_grads),
        }
    }

    fn forward_backward_sigmoid(&self, batch: &SampleBatch, want_grads: bool) -> Result<Gradients> {
        let dim = self.dim;
        let mut rows = SparseDelta::default();
        let mut loss = 0.0;

        let accumulate = |rows: &mut SparseDelta, center: usize, other: usize, coeff: f64| {
            if !want_grads || coeff == 0.0 {
                return;
            }
            let u = &self.center[center * dim..(center + 1) * dim];
            let v = &self.context[other * dim..(other + 1) * dim];
            let gc = rows.center.entry(center).or_insert_with(|| vec![0.0; dim]);
            for d in 0..dim {
                gc[d] += coeff * v[d];
            }
            let gx = rows.context.entry(other).or_insert_with(|| vec![0.0; dim]);
            for d in 0..dim {
                gx[d] += coeff * u[d];
            }
        };

        for entry in &batch.entries {
            let x = self.dot_rows(entry.center, entry.context);
            loss += entry.weight * softplus(-x);
            // d(-w log sigma(x))/dx = -w (1 - sigma(x))
            accumulate(&mut rows, entry.center, entry.context, -entry.weight * (1.0 - sigmoid(x)));
            for &neg in &entry.negatives {
                let xn = self.dot_rows(entry.center, neg);
                loss += entry.weight * softplus(xn);
                accumulate(&mut rows, entry.center, neg, entry.weight * sigmoid(xn));
            }
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at pair ({}, {})",
                    entry.center, entry.context
                )));
            }
        }
        Ok(Gradients { rows, loss, batch_stats: None })
    }

    fn forward_backward_sine(&self, batch: &SampleBatch, want_grads: bool) -> Result<Gradients> {
        let sp = self.sine.as_ref().ok_or_else(|| {
            Error::Config("sine loss requested on a model without sine parameters".into())
        })?;
        let dim = self.dim;

        // Scored pairs: the positive pair of each entry plus its negatives;
        // sign +1 scores T+ and -1 scores T-.
        struct Pair {
            center: usize,
            other: usize,
            sign: f64,
            weight: f64,
        }
        let mut pairs = Vec::new();
        for entry in &batch.entries {
            pairs.push(Pair {
                center: entry.center,
                other: entry.context,
                sign: 1.0,
                weight: entry.weight,
            });
            for &neg in &entry.negatives {
                pairs.push(Pair { center: entry.center, other: neg, sign: -1.0, weight: entry.weight });
            }
        }
        let m = pairs.len();

        let mut z = vec![0.0f64; m * dim];
        for (p, pair) in pairs.iter().enumerate() {
            let u = self.center_row(pair.center);
            let v = self.context_row(pair.other);
            for d in 0..dim {
                z[p * dim + d] = u[d] * v[d];
            }
        }

        // Batch statistics (biased variance, standard batch norm).
        let mut mean = vec![0.0f64; dim];
        for p in 0..m {
            for d in 0..dim {
                mean[d] += z[p * dim + d];
            }
        }
        for v in &mut mean {
            *v /= m as f64;
        }
        let mut var = vec![0.0f64; dim];
        for p in 0..m {
            for d in 0..dim {
                let c = z[p * dim + d] - mean[d];
                var[d] += c * c;
            }
        }
        for v in &mut var {
            *v /= m as f64;
        }
        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + BN_EPS).sqrt()).collect();

        let mut zhat = vec![0.0f64; m * dim];
        for p in 0..m {
            for d in 0..dim {
                zhat[p * dim + d] = (z[p * dim + d] - mean[d]) * inv_std[d];
            }
        }

        let mut loss = 0.0;
        let mut dl_da = vec![0.0f64; m];
        for (p, pair) in pairs.iter().enumerate() {
            let a: f64 = (0..dim).map(|d| sp.w_t[d] * zhat[p * dim + d]).sum();
            let arg = PI / 2.0 * a;
            let score = 0.5 * (1.0 + pair.sign * arg.sin()) + sp.delta;
            loss -= pair.weight * score.ln();
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at pair ({}, {})",
                    pair.center, pair.other
                )));
            }
            // d(-w log T)/da with T = (1 + sign sin(pi/2 a))/2 + delta.
            dl_da[p] = -pair.weight * pair.sign * (PI / 4.0) * arg.cos() / score;
        }

        if !want_grads {
            return Ok(Gradients {
                rows: SparseDelta::default(),
                loss,
                batch_stats: Some((mean, var)),
            });
        }

        // Backward through a = W_T . zhat.
        let mut w_t_grad = vec![0.0f64; dim];
        let mut ghat = vec![0.0f64; m * dim];
        for p in 0..m {
            for d in 0..dim {
                w_t_grad[d] += dl_da[p] * zhat[p * dim + d];
                ghat[p * dim + d] = dl_da[p] * sp.w_t[d];
            }
        }

        // Backward through the batch normalization of the current batch.
        let mut gsum = vec![0.0f64; dim];
        let mut gdot = vec![0.0f64; dim];
        for p in 0..m {
            for d in 0..dim {
                gsum[d] += ghat[p * dim + d];
                gdot[d] += ghat[p * dim + d] * zhat[p * dim + d];
            }
        }
        let mut rows = SparseDelta::default();
        let mf = m as f64;
        for (p, pair) in pairs.iter().enumerate() {
            let u = self.center_row(pair.center);
            let v = self.context_row(pair.other);
            let gc = rows.center.entry(pair.center).or_insert_with(|| vec![0.0; dim]);
            for d in 0..dim {
                let dz = inv_std[d]
                    * (ghat[p * dim + d] - gsum[d] / mf - zhat[p * dim + d] * gdot[d] / mf);
                gc[d] += dz * v[d];
            }
            let gx = rows.context.entry(pair.other).or_insert_with(|| vec![0.0; dim]);
            for d in 0..dim {
                let dz = inv_std[d]
                    * (ghat[p * dim + d] - gsum[d] / mf - zhat[p * dim + d] * gdot[d] / mf);
                gx[d] += dz * u[d];
            }
        }
        rows.w_t = Some(w_t_grad);

        Ok(Gradients { rows, loss, batch_stats: Some((mean, var)) })
    }

    /// Writes one matrix in the text format `N r` header then
    /// `label v_1 ... v_r` with 9 significant digits.
    pub fn write_matrix<W: Write>(&self, matrix: &[f64], labels: &[String], out: &mut W) -> Result<()> {
        writeln!(out, "{} {}", self.node_count, self.dim)?;
        for (node, label) in labels.iter().enumerate() {
            let row = &matrix[node * self.dim..(node + 1) * self.dim];
            let mut line = String::with_capacity(16 * self.dim);
            line.push_str(label);
            for v in row {
                line.push(' ');
                line.push_str(&format!("{v:.8e}"));
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    /// Sine parameters and running statistics as JSON.
    pub fn sine_params_json(&self) -> Option<String> {
        self.sine.as_ref().map(|sp| serde_json::to_string_pretty(sp).expect("serializable"))
    }
}

/// Parses the text embedding format back into (labels, matrix, dim).
pub fn read_matrix<R: BufRead>(reader: R) -> Result<(Vec<String>, Vec<f64>, usize)> {
    let mut lines = reader.lines();
    let header = lines.next().ok_or_else(|| Error::Parse {
        line: 1,
        message: "missing embedding header".into(),
    })??;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 2 {
        return Err(Error::Parse { line: 1, message: "header must be `N r`".into() });
    }
    let n: usize = parts[0].parse().map_err(|_| Error::Parse {
        line: 1,
        message: "invalid node count".into(),
    })?;
    let dim: usize = parts[1].parse().map_err(|_| Error::Parse {
        line: 1,
        message: "invalid dimension".into(),
    })?;
    let mut labels = Vec::with_capacity(n);
    let mut matrix = Vec::with_capacity(n * dim);
    for (idx, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let label = tokens.next().ok_or_else(|| Error::Parse {
            line: idx + 2,
            message: "empty row".into(),
        })?;
        labels.push(label.to_string());
        let mut count = 0;
        for tok in tokens {
            let v: f64 = tok.parse().map_err(|_| Error::Parse {
                line: idx + 2,
                message: format!("invalid value `{tok}`"),
            })?;
            matrix.push(v);
            count += 1;
        }
        if count != dim {
            return Err(Error::Parse {
                line: idx + 2,
                message: format!("expected {dim} values, got {count}"),
            });
        }
    }
    if labels.len() != n {
        return Err(Error::Parse {
            line: labels.len() + 1,
            message: format!("expected {n} rows, got {}", labels.len()),
        });
    }
    Ok((labels, matrix, dim))
}
